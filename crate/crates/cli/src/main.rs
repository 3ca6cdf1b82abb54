// SPDX-License-Identifier: Apache-2.0

//! `cimmap optimize` maps every layer of a workload onto an architecture and
//! writes a JSON report; `cimmap compare` sets two reports side by side.
//!
//! Exit status: 0 when every layer solved, 2 when some layer stopped at a
//! limit with an incumbent, 1 on any error.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};

use cimmap::report::{compare, run_workload, Mode, RunConfig, RunReport};
use cimmap::solve::{Backend, SolveConfig, SOLVER_ENV};
use cimmap::{ArchSpec, Error, Workload};

#[derive(Parser, Debug)]
#[command(name = "cimmap", version, about = "Dataflow mapping for compute-in-memory accelerators")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum SolverArg {
    Builtin,
    External,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Optimize every layer of a workload.
    Optimize(OptimizeArgs),
    /// Per-layer latency and EDP ratios of report B over report A.
    Compare {
        report_a: PathBuf,
        report_b: PathBuf,
        /// Print JSON instead of a table.
        #[arg(long)]
        json: bool,
    },
}

#[derive(clap::Args, Debug)]
struct OptimizeArgs {
    #[arg(long)]
    arch: PathBuf,
    #[arg(long)]
    workload: PathBuf,
    /// miredo, ws, exhaustive or heuristic.
    #[arg(long, default_value = "miredo")]
    mode: String,
    /// Comma-separated modes to run alongside for comparison.
    #[arg(long, value_delimiter = ',')]
    baseline: Vec<String>,
    #[arg(long, value_enum, default_value = "builtin")]
    solver: SolverArg,
    /// External solver template with {mps}, {sol}, and optionally {time} and {start}.
    #[arg(long, env = SOLVER_ENV)]
    solver_cmd: Option<String>,
    /// Per-program time limit in seconds.
    #[arg(long, default_value_t = 300)]
    time_limit: u64,
    /// Branch-and-bound node limit for the builtin solver.
    #[arg(long)]
    node_limit: Option<u64>,
    #[arg(long, default_value_t = 1)]
    jobs: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Random-search samples per layer.
    #[arg(long, default_value_t = 32)]
    samples: usize,
    #[arg(long, default_value = "report.json")]
    out: PathBuf,
    #[arg(long)]
    csv: Option<PathBuf>,
    /// Write each layer's per-slot latency table as CSV next to the report.
    #[arg(long)]
    trace: bool,
    /// Write every integer program as MPS into this directory.
    #[arg(long)]
    dump_mps: Option<PathBuf>,
}

fn write(path: &Path, text: &str) -> Result<(), Error> {
    std::fs::write(path, text).map_err(|e| Error::Io(format!("cannot write {}: {e}", path.display())))
}

fn optimize(a: OptimizeArgs) -> Result<ExitCode, Error> {
    let arch = ArchSpec::load(&a.arch)?;
    let workload = Workload::load(&a.workload)?;
    let mode: Mode = a.mode.parse()?;
    let baselines = a.baseline.iter().filter(|s| !s.trim().is_empty()).map(|s| s.parse()).collect::<Result<Vec<Mode>, _>>()?;
    let cfg = RunConfig {
        mode,
        baselines,
        solve: SolveConfig {
            backend: match a.solver {
                SolverArg::Builtin => Backend::Builtin,
                SolverArg::External => Backend::External,
            },
            time_limit_s: a.time_limit,
            external_command: a.solver_cmd,
            node_limit: a.node_limit,
            ..Default::default()
        },
        heuristic_samples: a.samples,
        seed: a.seed,
        jobs: a.jobs,
        dump_mps: a.dump_mps,
        ..Default::default()
    };
    let name = a.workload.file_stem().map_or("workload".into(), |s| s.to_string_lossy().into_owned());
    let report = run_workload(&workload, &name, &arch, &cfg)?;
    write(&a.out, &report.to_json())?;
    if let Some(csv) = &a.csv {
        write(csv, &report.to_csv())?;
    }
    if a.trace {
        let dir = a.out.with_extension("trace");
        std::fs::create_dir_all(&dir).map_err(|e| Error::Io(format!("cannot create {}: {e}", dir.display())))?;
        for l in &report.layers {
            write(&dir.join(format!("{}.csv", l.name)), &l.result.report.trace_csv())?;
        }
    }
    for l in &report.layers {
        let speed: Vec<String> = l.speedup.iter().map(|(b, s)| format!("{b} x{s:.3}")).collect();
        println!("{:<16} {:<10} {:>12} cycles  {}", l.name, l.result.status, l.result.latency, speed.join("  "));
    }
    let agg = &report.aggregate;
    println!("total {} cycles", agg.total_latency);
    for (b, t) in &agg.baselines {
        println!("speedup over {b}: {:.4}", t.speedup);
    }
    Ok(if report.any_limited() { ExitCode::from(2) } else { ExitCode::SUCCESS })
}

fn run(cli: Cli) -> Result<ExitCode, Error> {
    match cli.command {
        Command::Optimize(a) => optimize(a),
        Command::Compare { report_a, report_b, json } => {
            let load = |p: &Path| {
                let text = std::fs::read_to_string(p).map_err(|e| Error::Io(format!("cannot read {}: {e}", p.display())))?;
                RunReport::from_json(&text)
            };
            let c = compare(&load(&report_a)?, &load(&report_b)?)?;
            if json {
                println!("{}", serde_json::to_string_pretty(&c).expect("comparison serializes"));
            } else {
                print!("{}", c.to_table());
            }
            Ok(ExitCode::SUCCESS)
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    match run(cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(1)
        }
    }
}
