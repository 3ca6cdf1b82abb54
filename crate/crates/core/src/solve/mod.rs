// SPDX-License-Identifier: Apache-2.0

//! Solving integer programs: the exact built-in search, MPS export, and an
//! adapter for external MPS solvers run as subprocesses.

pub mod builtin;
pub mod external;
pub mod mps;

use std::fmt;
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mip::model::{Assignment, MipModel, VarId, VarKind};
use crate::scalar::{ExactRatio, Scalar};

pub use external::SOLVER_ENV;
pub use mps::{export_mps, parse_solution, MpsDocument, ParsedSolution};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Backend {
    Builtin,
    External,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SolveConfig {
    pub backend: Backend,
    pub time_limit_s: u64,
    /// Command template with `{mps}`, `{sol}`, `{time}` and `{start}` placeholders.
    pub external_command: Option<String>,
    pub mip_gap: f64,
    /// Feasible starting point.
    pub initial: Option<Assignment>,
    pub node_limit: Option<u64>,
}

impl Default for SolveConfig {
    fn default() -> Self {
        SolveConfig { backend: Backend::Builtin, time_limit_s: 300, external_command: None, mip_gap: 0.0, initial: None, node_limit: None }
    }
}

impl SolveConfig {
    pub fn validate(&self) -> Result<()> {
        if self.time_limit_s < 1 {
            return Err(Error::Config("time limit must be at least 1 s".into()));
        }
        if self.mip_gap.is_nan() || self.mip_gap < 0.0 {
            return Err(Error::Config("mip gap must be non-negative".into()));
        }
        Ok(())
    }

    pub fn deadline_from(&self, start: Instant) -> Instant {
        start + Duration::from_secs(self.time_limit_s)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SolveStatus {
    Optimal,
    Feasible,
    Infeasible,
    Timeout,
}

impl fmt::Display for SolveStatus {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            SolveStatus::Optimal => "optimal",
            SolveStatus::Feasible => "feasible",
            SolveStatus::Infeasible => "infeasible",
            SolveStatus::Timeout => "timeout",
        })
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SolveResult<S> {
    pub status: SolveStatus,
    pub assignment: Option<Assignment>,
    pub objective: Option<S>,
    pub bound: Option<S>,
    pub wall_time_s: f64,
    /// The time or node limit stopped the search.
    pub limit_reached: bool,
    pub nodes: u64,
    /// Name of the row proven unsatisfiable, when infeasible.
    pub conflict: Option<String>,
}

impl<S: Scalar> SolveResult<S> {
    fn empty(status: SolveStatus, start: Instant) -> Self {
        SolveResult {
            status,
            assignment: None,
            objective: None,
            bound: None,
            wall_time_s: start.elapsed().as_secs_f64(),
            limit_reached: false,
            nodes: 0,
            conflict: None,
        }
    }

    pub fn has_solution(&self) -> bool {
        self.assignment.is_some()
    }
}

fn objective_scale<S: Scalar>(model: &MipModel<S>) -> i128 {
    model.objective.iter().fold(1i128, |acc, (_, c)| num_integer::Integer::lcm(&acc, c.to_exact().denom()))
}

/// Exact branch and bound.
pub fn solve_builtin<S: Scalar>(model: &MipModel<S>, cfg: &SolveConfig) -> Result<SolveResult<S>> {
    cfg.validate()?;
    let start = Instant::now();
    let compiled = match builtin::Compiled::new(model) {
        Ok(c) => c,
        Err(Error::Infeasible(msg)) => {
            let mut r = SolveResult::empty(SolveStatus::Infeasible, start);
            r.conflict = Some(msg);
            return Ok(r);
        }
        Err(e) => return Err(e),
    };
    let incumbent = match &cfg.initial {
        Some(a) => {
            model.check(a)?;
            Some(a.clone())
        }
        None => None,
    };
    let res = builtin::search(&compiled, &[], incumbent, Some(cfg.deadline_from(start)), cfg.node_limit);
    let scale = objective_scale(model);
    let to_s = |v: i128| S::from_exact(ExactRatio::new(v, scale));
    let mut out = SolveResult::empty(SolveStatus::Infeasible, start);
    out.nodes = res.nodes;
    out.bound = res.root_bound.map(to_s);
    match res.outcome {
        builtin::Outcome::Optimal => {
            out.status = SolveStatus::Optimal;
        }
        builtin::Outcome::Infeasible { constraint } => {
            out.conflict = constraint.map(|c| model.constraints[c].name.clone());
        }
        builtin::Outcome::Interrupted => {
            out.limit_reached = true;
            out.status = if res.best.is_some() { SolveStatus::Feasible } else { SolveStatus::Timeout };
        }
    }
    if let Some(best) = res.best {
        model.check(&best)?;
        out.objective = Some(model.objective_value(&best));
        if out.status == SolveStatus::Optimal {
            out.bound = out.objective;
        }
        out.assignment = Some(best);
    }
    out.wall_time_s = start.elapsed().as_secs_f64();
    Ok(out)
}

/// Best completion of the model with the given variables pinned.
pub fn complete<S: Scalar>(model: &MipModel<S>, fixings: &[(VarId, i64)], time_limit: Duration) -> Result<SolveResult<S>> {
    let start = Instant::now();
    let compiled = builtin::Compiled::new(model)?;
    let res = builtin::search(&compiled, fixings, None, Some(start + time_limit), None);
    let mut out = SolveResult::empty(SolveStatus::Infeasible, start);
    out.nodes = res.nodes;
    match res.outcome {
        builtin::Outcome::Optimal => out.status = SolveStatus::Optimal,
        builtin::Outcome::Infeasible { constraint } => out.conflict = constraint.map(|c| model.constraints[c].name.clone()),
        builtin::Outcome::Interrupted => {
            out.limit_reached = true;
            out.status = if res.best.is_some() { SolveStatus::Feasible } else { SolveStatus::Timeout };
        }
    }
    if let Some(best) = res.best {
        model.check(&best)?;
        out.objective = Some(model.objective_value(&best));
        out.assignment = Some(best);
    }
    out.wall_time_s = start.elapsed().as_secs_f64();
    Ok(out)
}

/// Keeps the binaries of `values` and recomputes every integer variable as
/// the least values the rows allow.
pub fn polish<S: Scalar>(model: &MipModel<S>, values: &[i64]) -> Result<Assignment> {
    if values.len() != model.vars.len() {
        return Err(Error::Parse(format!("{} values for {} variables", values.len(), model.vars.len())));
    }
    let fixings: Vec<(VarId, i64)> =
        model.vars.iter().enumerate().filter(|(_, v)| v.kind == VarKind::Binary).map(|(i, _)| (i, values[i].clamp(0, 1))).collect();
    let r = complete(model, &fixings, Duration::from_secs(30))?;
    match r.assignment {
        Some(a) => Ok(a),
        None => {
            let first = model.violations(values).into_iter().next().unwrap_or_else(|| "binary fixing".into());
            Err(Error::Violation { constraint: first })
        }
    }
}

/// Dispatches to the configured backend and re-checks whatever comes back.
pub fn solve<S: Scalar>(model: &MipModel<S>, cfg: &SolveConfig) -> Result<SolveResult<S>> {
    cfg.validate()?;
    let res = match cfg.backend {
        Backend::Builtin => solve_builtin(model, cfg)?,
        Backend::External => external::solve_external(model, cfg)?,
    };
    if let Some(a) = &res.assignment {
        model.check(a)?;
    }
    Ok(res)
}
