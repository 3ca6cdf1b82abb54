// SPDX-License-Identifier: Apache-2.0

//! External MPS solvers run as subprocesses, one private temp directory each.

use std::fs;
use std::process::{Command, Stdio};
use std::time::{Duration, Instant};

use super::mps::{export_mps, parse_solution, write_solution};
use super::{polish, SolveConfig, SolveResult, SolveStatus};
use crate::error::{Error, Result};
use crate::mip::model::MipModel;
use crate::scalar::Scalar;

/// Fallback for the solver command template.
pub const SOLVER_ENV: &str = "MIREDO_SOLVER_CMD";

const GRACE: Duration = Duration::from_secs(30);

pub fn resolve_command(cfg: &SolveConfig) -> Result<String> {
    cfg.external_command
        .clone()
        .or_else(|| std::env::var(SOLVER_ENV).ok())
        .filter(|c| !c.trim().is_empty())
        .ok_or_else(|| Error::Config(format!("external solver selected but no command given (flag or {SOLVER_ENV})")))
}

pub fn render_command(template: &str, mps: &str, sol: &str, time: u64, start: &str) -> Result<String> {
    if !template.contains("{mps}") || !template.contains("{sol}") {
        return Err(Error::Config("solver command must contain {mps} and {sol}".into()));
    }
    Ok(template.replace("{mps}", mps).replace("{sol}", sol).replace("{time}", &time.to_string()).replace("{start}", start))
}

pub fn solve_external<S: Scalar>(model: &MipModel<S>, cfg: &SolveConfig) -> Result<SolveResult<S>> {
    let start = Instant::now();
    let template = resolve_command(cfg)?;
    let dir = tempfile::Builder::new().prefix("cimmap-solve").tempdir().map_err(|e| Error::Io(e.to_string()))?;
    let doc = export_mps(model)?;
    let mps_path = dir.path().join("model.mps");
    let sol_path = dir.path().join("model.sol");
    let start_path = dir.path().join("start.sol");
    fs::write(&mps_path, &doc.text).map_err(|e| Error::Io(e.to_string()))?;
    fs::write(dir.path().join("names.txt"), &doc.table).map_err(|e| Error::Io(e.to_string()))?;
    if let Some(init) = &cfg.initial {
        model.check(init)?;
        fs::write(&start_path, write_solution(&doc, init)).map_err(|e| Error::Io(e.to_string()))?;
    }
    let cmd = render_command(
        &template,
        &mps_path.to_string_lossy(),
        &sol_path.to_string_lossy(),
        cfg.time_limit_s,
        &if cfg.initial.is_some() { start_path.to_string_lossy().into_owned() } else { String::new() },
    )?;
    log::debug!("external solver: {cmd}");
    let mut child = Command::new("sh")
        .arg("-c")
        .arg(&cmd)
        .stdin(Stdio::null())
        .stdout(Stdio::null())
        .stderr(Stdio::piped())
        .spawn()
        .map_err(|e| Error::Solver(format!("cannot start `{cmd}`: {e}")))?;
    let deadline = cfg.deadline_from(start) + GRACE;
    let mut killed = false;
    let exit = loop {
        match child.try_wait().map_err(|e| Error::Solver(e.to_string()))? {
            Some(status) => break status,
            None if Instant::now() >= deadline => {
                let _ = child.kill();
                killed = true;
                break child.wait().map_err(|e| Error::Solver(e.to_string()))?;
            }
            None => std::thread::sleep(Duration::from_millis(20)),
        }
    };
    let stderr = child.stderr.take().map(|mut s| {
        let mut buf = String::new();
        let _ = std::io::Read::read_to_string(&mut s, &mut buf);
        buf
    });
    let mut result = SolveResult::<S> {
        status: SolveStatus::Timeout,
        assignment: None,
        objective: None,
        bound: None,
        wall_time_s: 0.0,
        limit_reached: killed,
        nodes: 0,
        conflict: None,
    };
    if !sol_path.exists() {
        result.wall_time_s = start.elapsed().as_secs_f64();
        if killed {
            return Ok(result);
        }
        if !exit.success() {
            return Err(Error::Solver(format!("`{cmd}` exited with {exit}: {}", stderr.unwrap_or_default().lines().last().unwrap_or(""))));
        }
        return Err(Error::Solver("solver wrote no solution file".into()));
    }
    let text = fs::read_to_string(&sol_path).map_err(|e| Error::Io(e.to_string()))?;
    let parsed = parse_solution(&text, &doc, model)?;
    let status_word = parsed.status.clone().unwrap_or_else(|| "feasible".into());
    if status_word == "infeasible" {
        result.status = SolveStatus::Infeasible;
        result.wall_time_s = start.elapsed().as_secs_f64();
        return Ok(result);
    }
    let has_values = parsed.missing.len() < model.vars.len();
    if !has_values {
        result.status = if status_word == "optimal" { SolveStatus::Infeasible } else { SolveStatus::Timeout };
        result.wall_time_s = start.elapsed().as_secs_f64();
        return Ok(result);
    }
    // Solver values may carry tolerance noise; integers are recomputed exactly.
    let values = polish(model, &parsed.values)?;
    model.check(&values)?;
    result.objective = Some(model.objective_value(&values));
    result.assignment = Some(values);
    result.status = match status_word.as_str() {
        "optimal" if !killed => SolveStatus::Optimal,
        _ => SolveStatus::Feasible,
    };
    if result.status == SolveStatus::Optimal {
        result.bound = result.objective;
    } else {
        result.limit_reached = true;
    }
    result.wall_time_s = start.elapsed().as_secs_f64();
    Ok(result)
}
