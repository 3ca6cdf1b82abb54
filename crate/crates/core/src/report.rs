// SPDX-License-Identifier: Apache-2.0

//! Per-layer optimization pipeline, the run report, and report comparison.
//!
//! A layer runs factorization, candidate enumeration, the weight-stationary
//! program and then the unconstrained program. Each program starts from the
//! best known mapping (random-search results and, for the unconstrained
//! program, the weight-stationary solution), whose latency also caps the
//! latency variables. Every returned mapping is re-evaluated by the
//! analytical evaluator and must agree with the program's prediction.

use std::collections::BTreeMap;
use std::fmt;
use std::path::PathBuf;
use std::str::FromStr;
use std::sync::Mutex;
use std::time::{Duration, Instant, SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};

use crate::arch::ArchSpec;
use crate::baselines::{exhaustive_best, heuristic_search, ws_constrained, ws_heuristic, ws_reload_rounds, BaselineConfig};
use crate::error::{Error, Result};
use crate::latency::{energy_edp, evaluate, LatencyReport};
use crate::mapping::{verify_mapping, Mapping, Problem};
use crate::mip::{build_model, latency_cap_for, BuildOptions, MappingModel, ObjectiveWeights};
use crate::solve::{complete, export_mps, solve, SolveConfig, SolveStatus};
use crate::workload::{FactorizationConfig, LayerShape, Operand, Workload};
use crate::Rational;

pub const SCHEMA_VERSION: u32 = 1;

const ENCODE_LIMIT: Duration = Duration::from_secs(60);

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    Miredo,
    Ws,
    Exhaustive,
    Heuristic,
}

impl Mode {
    pub fn name(self) -> &'static str {
        match self {
            Mode::Miredo => "miredo",
            Mode::Ws => "ws",
            Mode::Exhaustive => "exhaustive",
            Mode::Heuristic => "heuristic",
        }
    }
}

impl fmt::Display for Mode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Mode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "miredo" => Ok(Mode::Miredo),
            "ws" => Ok(Mode::Ws),
            "exhaustive" => Ok(Mode::Exhaustive),
            "heuristic" => Ok(Mode::Heuristic),
            other => Err(Error::Config(format!("unknown mode '{other}' (miredo, ws, exhaustive, heuristic)"))),
        }
    }
}

#[derive(Clone, Debug)]
pub struct RunConfig {
    pub mode: Mode,
    pub baselines: Vec<Mode>,
    pub solve: SolveConfig,
    pub weights: ObjectiveWeights<Rational>,
    pub factorization: FactorizationConfig<f64>,
    /// Random-search samples, both as a mode and for starting points.
    pub heuristic_samples: usize,
    pub seed: u64,
    pub space_cap: u128,
    pub jobs: usize,
    pub dump_mps: Option<PathBuf>,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            mode: Mode::Miredo,
            baselines: Vec::new(),
            solve: SolveConfig::default(),
            weights: ObjectiveWeights::default(),
            factorization: FactorizationConfig::default(),
            heuristic_samples: 32,
            seed: 0,
            space_cap: crate::baselines::DEFAULT_SPACE_CAP,
            jobs: 1,
            dump_mps: None,
        }
    }
}

impl RunConfig {
    pub fn validate(&self) -> Result<()> {
        self.solve.validate()?;
        self.weights.validate()?;
        self.factorization.validate()?;
        if self.jobs == 0 {
            return Err(Error::Config("jobs must be at least 1".into()));
        }
        self.baseline_config().validate()
    }

    fn baseline_config(&self) -> BaselineConfig {
        BaselineConfig { heuristic_samples: self.heuristic_samples, seed: self.seed, space_cap: self.space_cap, ..Default::default() }
    }
}

/// One mapper's outcome on one layer.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModeResult {
    pub mode: Mode,
    pub status: SolveStatus,
    pub latency: u64,
    pub operand_latency: BTreeMap<Operand, u64>,
    pub energy_pj: Option<f64>,
    pub edp: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub objective: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub bound: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub reload_rounds: Option<u64>,
    pub mapping: Mapping,
    pub report: LatencyReport,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SpaceStats {
    pub factors: Vec<String>,
    pub candidates: usize,
    /// Combinations the exhaustive mapper would walk.
    pub space_size: u128,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub model_vars: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub model_rows: Option<usize>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LayerResult {
    pub name: String,
    pub shape: LayerShape,
    pub space: SpaceStats,
    pub result: ModeResult,
    pub baselines: Vec<ModeResult>,
    /// Baseline latency over this layer's latency, by baseline name.
    pub speedup: BTreeMap<String, f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BaselineTotal {
    pub total_latency: u64,
    pub total_energy_pj: Option<f64>,
    pub edp: Option<f64>,
    pub speedup: f64,
}

/// Totals over layers run back to back: latencies and energies add, EDP is
/// total energy times total time.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Aggregate {
    pub total_latency: u64,
    pub total_energy_pj: Option<f64>,
    pub edp: Option<f64>,
    pub all_optimal: bool,
    pub baselines: BTreeMap<String, BaselineTotal>,
}

/// Run-dependent facts kept apart so reports can be compared byte for byte.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize, Default)]
pub struct Metadata {
    pub tool_version: String,
    pub started_unix_s: u64,
    pub wall_time_s: f64,
    pub layer_time_s: BTreeMap<String, f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub schema_version: u32,
    pub workload: String,
    pub mode: Mode,
    pub baselines: Vec<Mode>,
    pub layers: Vec<LayerResult>,
    pub aggregate: Aggregate,
    pub metadata: Metadata,
}

impl RunReport {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes") + "\n"
    }

    /// JSON without the metadata block.
    pub fn canonical_json(&self) -> String {
        let mut c = self.clone();
        c.metadata = Metadata::default();
        c.to_json()
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let r: RunReport = serde_json::from_str(text).map_err(|e| Error::Report(format!("invalid report: {e}")))?;
        if r.schema_version != SCHEMA_VERSION {
            return Err(Error::Report(format!("schema version {} (expected {SCHEMA_VERSION})", r.schema_version)));
        }
        Ok(r)
    }

    /// Some integer program stopped at a limit and returned its incumbent.
    pub fn any_limited(&self) -> bool {
        self.layers
            .iter()
            .flat_map(|l| std::iter::once(&l.result).chain(&l.baselines))
            .filter(|r| matches!(r.mode, Mode::Miredo | Mode::Ws))
            .any(|r| matches!(r.status, SolveStatus::Feasible | SolveStatus::Timeout))
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from("layer,mode,status,latency,energy_pj,edp");
        for b in &self.baselines {
            s.push_str(&format!(",{b}_latency,{b}_speedup"));
        }
        s.push('\n');
        let opt = |v: Option<f64>| v.map_or(String::new(), |x| format!("{x}"));
        for l in &self.layers {
            let r = &l.result;
            s.push_str(&format!("{},{},{},{},{},{}", l.name, r.mode, r.status, r.latency, opt(r.energy_pj), opt(r.edp)));
            for b in &self.baselines {
                let br = l.baselines.iter().find(|x| x.mode == *b);
                s.push_str(&format!(",{},{}", br.map_or(String::new(), |x| x.latency.to_string()), opt(l.speedup.get(b.name()).copied())));
            }
            s.push('\n');
        }
        s
    }
}

fn energy_of(report: &LatencyReport, arch: &ArchSpec) -> (Option<f64>, Option<f64>) {
    match energy_edp(report, arch) {
        Ok((e, d)) => (Some(e), Some(d)),
        Err(e) => {
            log::warn!("{e}; energy left unreported");
            (None, None)
        }
    }
}

fn mode_result(problem: &Problem, mode: Mode, status: SolveStatus, mapping: Mapping) -> Result<ModeResult> {
    let violations = verify_mapping(&mapping, problem);
    if let Some(v) = violations.first() {
        return Err(Error::Report(format!("{mode} mapping for {} fails the audit: {v}", problem.layer.name)));
    }
    let report = evaluate(&mapping, problem)?;
    if let Some(p) = &mapping.predicted {
        if p.latency != report.total_latency || p.operand_latency != report.operand_latency {
            return Err(Error::Report(format!(
                "{mode} on {}: program predicts {} cycles, evaluator {}",
                problem.layer.name, p.latency, report.total_latency
            )));
        }
    }
    let (energy_pj, edp) = energy_of(&report, &problem.arch);
    Ok(ModeResult {
        mode,
        status,
        latency: report.total_latency,
        operand_latency: report.operand_latency.clone(),
        energy_pj,
        edp,
        objective: mapping.predicted.as_ref().map(|p| p.objective),
        bound: None,
        reload_rounds: None,
        mapping,
        report,
    })
}

struct Stage {
    result: ModeResult,
    vars: usize,
    rows: usize,
}

/// Solves `mm` (built by `make` under a latency cap) from the best of `starts`.
fn mip_stage(
    problem: &Problem,
    cfg: &RunConfig,
    mode: Mode,
    starts: &[&Mapping],
    make: impl Fn(&BuildOptions<Rational>) -> Result<MappingModel<Rational>>,
) -> Result<Stage> {
    let known = starts.iter().filter_map(|m| evaluate(m, problem).ok().map(|r| r.total_latency)).min();
    let opts = BuildOptions { weights: cfg.weights, latency_cap: known.map(|k| latency_cap_for(problem, &cfg.weights, k)) };
    let mm = make(&opts)?;
    let mut initial: Option<(Vec<i64>, Rational)> = None;
    for m in starts {
        let fix = mm.structural_values(m)?;
        if let Some(a) = complete(&mm.model, &fix, ENCODE_LIMIT)?.assignment {
            let o = mm.model.objective_value(&a);
            if initial.as_ref().is_none_or(|(_, b)| o < *b) {
                initial = Some((a, o));
            }
        }
    }
    if let Some(dir) = &cfg.dump_mps {
        std::fs::create_dir_all(dir).map_err(|e| Error::Io(e.to_string()))?;
        let path = dir.join(format!("{}.{}.mps", problem.layer.name, mode));
        std::fs::write(&path, export_mps(&mm.model)?.text).map_err(|e| Error::Io(format!("{}: {e}", path.display())))?;
    }
    let mut sc = cfg.solve.clone();
    sc.initial = initial.map(|(a, _)| a);
    let r = solve(&mm.model, &sc)?;
    let Some(a) = &r.assignment else {
        return Err(Error::Solver(match r.status {
            SolveStatus::Infeasible => format!("{mode} program for {} is infeasible", problem.layer.name),
            _ => format!("{mode} program for {} found no mapping within the limits", problem.layer.name),
        }));
    };
    let mapping = mm.decode(a)?;
    let mut result = mode_result(problem, mode, r.status, mapping)?;
    result.bound = r.bound.map(crate::scalar::Scalar::to_f64_lossy);
    Ok(Stage { result, vars: mm.model.vars.len(), rows: mm.model.constraints.len() })
}

/// Runs the requested mode and baselines on one layer.
pub fn run_layer(layer: &LayerShape, arch: &ArchSpec, cfg: &RunConfig) -> Result<LayerResult> {
    let problem = Problem::factorize(layer.clone(), arch.clone(), &cfg.factorization)?;
    let bcfg = cfg.baseline_config();
    let mut wanted: Vec<Mode> = vec![cfg.mode];
    wanted.extend(cfg.baselines.iter().filter(|b| **b != cfg.mode));
    let mut done: BTreeMap<Mode, ModeResult> = BTreeMap::new();
    let mut model_size = None;

    let needs_ws = wanted.contains(&Mode::Ws) || wanted.contains(&Mode::Miredo);
    if needs_ws {
        let h = ws_heuristic(&problem, &bcfg)?;
        let base = |o: &BuildOptions<Rational>| build_model(&problem, o);
        let ws = mip_stage(&problem, cfg, Mode::Ws, &[&h.mapping], |o| ws_constrained(&base(o)?))?;
        let mut r = ws.result;
        r.reload_rounds = Some(ws_reload_rounds(&problem));
        done.insert(Mode::Ws, r);
        model_size = Some((ws.vars, ws.rows));
    }
    if wanted.contains(&Mode::Heuristic) || wanted.contains(&Mode::Miredo) {
        let h = heuristic_search(&problem, &bcfg)?;
        done.insert(Mode::Heuristic, mode_result(&problem, Mode::Heuristic, SolveStatus::Feasible, h.mapping)?);
    }
    if wanted.contains(&Mode::Miredo) {
        let starts = [&done[&Mode::Ws].mapping, &done[&Mode::Heuristic].mapping];
        let st = mip_stage(&problem, cfg, Mode::Miredo, &starts, |o| build_model(&problem, o))?;
        done.insert(Mode::Miredo, st.result);
        model_size = Some((st.vars, st.rows));
    }
    if wanted.contains(&Mode::Exhaustive) {
        let ex = exhaustive_best(&problem, cfg.space_cap)?;
        done.insert(Mode::Exhaustive, mode_result(&problem, Mode::Exhaustive, SolveStatus::Optimal, ex.best.mapping)?);
    }

    let result = done.remove(&cfg.mode).expect("primary mode ran");
    let baselines: Vec<ModeResult> = cfg.baselines.iter().map(|b| if *b == cfg.mode { result.clone() } else { done[b].clone() }).collect();
    let speedup = baselines.iter().map(|b| (b.mode.name().to_string(), b.latency as f64 / result.latency as f64)).collect();
    Ok(LayerResult {
        name: layer.name.clone(),
        shape: layer.clone(),
        space: SpaceStats {
            factors: problem.factors.all().iter().map(|f| format!("{}{}", f.dim, f.value)).collect(),
            candidates: problem.table.len(),
            space_size: crate::baselines::space_size(&problem),
            model_vars: model_size.map(|m| m.0),
            model_rows: model_size.map(|m| m.1),
        },
        result,
        baselines,
        speedup,
    })
}

fn shape_key(l: &LayerShape) -> LayerShape {
    let mut k = l.clone();
    k.name.clear();
    k
}

fn sum_opt(values: impl Iterator<Item = Option<f64>>) -> Option<f64> {
    values.sum()
}

fn aggregate(layers: &[LayerResult], baselines: &[Mode], clock_ns: f64) -> Aggregate {
    let total_latency: u64 = layers.iter().map(|l| l.result.latency).sum();
    let total_energy = sum_opt(layers.iter().map(|l| l.result.energy_pj));
    let edp_of = |e: Option<f64>, lat: u64| e.map(|e| e * 1e-12 * lat as f64 * clock_ns * 1e-9);
    let mut totals = BTreeMap::new();
    for (j, b) in baselines.iter().enumerate() {
        let lat: u64 = layers.iter().map(|l| l.baselines[j].latency).sum();
        let e = sum_opt(layers.iter().map(|l| l.baselines[j].energy_pj));
        totals.insert(
            b.name().to_string(),
            BaselineTotal { total_latency: lat, total_energy_pj: e, edp: edp_of(e, lat), speedup: lat as f64 / total_latency as f64 },
        );
    }
    Aggregate {
        total_latency,
        total_energy_pj: total_energy,
        edp: edp_of(total_energy, total_latency),
        all_optimal: layers.iter().all(|l| l.result.status == SolveStatus::Optimal),
        baselines: totals,
    }
}

/// One distinct shape's result and its solve time.
type Slot = Mutex<Option<(Result<LayerResult>, f64)>>;

/// Runs every layer; identical shapes are solved once.
pub fn run_workload(workload: &Workload, workload_name: &str, arch: &ArchSpec, cfg: &RunConfig) -> Result<RunReport> {
    cfg.validate()?;
    arch.validate()?;
    let start = Instant::now();
    let started = SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_secs()).unwrap_or(0);
    let mut distinct: Vec<LayerShape> = Vec::new();
    for l in &workload.layers {
        if !distinct.iter().any(|d| shape_key(d) == shape_key(l)) {
            distinct.push(l.clone());
        }
    }
    let slots: Vec<Slot> = distinct.iter().map(|_| Mutex::new(None)).collect();
    let next = Mutex::new(0usize);
    std::thread::scope(|s| {
        for _ in 0..cfg.jobs.min(distinct.len()) {
            s.spawn(|| loop {
                let i = {
                    let mut n = next.lock().expect("queue lock");
                    let i = *n;
                    *n += 1;
                    i
                };
                let Some(layer) = distinct.get(i) else { break };
                log::info!("layer {} ({}/{})", layer.name, i + 1, distinct.len());
                let t = Instant::now();
                let r = run_layer(layer, arch, cfg);
                *slots[i].lock().expect("slot lock") = Some((r, t.elapsed().as_secs_f64()));
            });
        }
    });
    let mut solved: Vec<(LayerShape, LayerResult)> = Vec::new();
    let mut times = BTreeMap::new();
    for (layer, slot) in distinct.iter().zip(slots) {
        let (r, t) = slot.into_inner().expect("slot lock").expect("every layer ran");
        let r = r.map_err(|e| match e {
            Error::Report(m) => Error::Report(m),
            other => Error::Report(format!("layer {}: {other}", layer.name)),
        })?;
        times.insert(layer.name.clone(), t);
        solved.push((shape_key(layer), r));
    }
    let layers: Vec<LayerResult> = workload
        .layers
        .iter()
        .map(|l| {
            let (_, r) = solved.iter().find(|(k, _)| *k == shape_key(l)).expect("shape solved");
            let mut r = r.clone();
            r.name = l.name.clone();
            r.shape = l.clone();
            r
        })
        .collect();
    let aggregate = aggregate(&layers, &cfg.baselines, arch.clock_period_ns);
    Ok(RunReport {
        schema_version: SCHEMA_VERSION,
        workload: workload_name.to_string(),
        mode: cfg.mode,
        baselines: cfg.baselines.clone(),
        layers,
        aggregate,
        metadata: Metadata {
            tool_version: env!("CARGO_PKG_VERSION").to_string(),
            started_unix_s: started,
            wall_time_s: start.elapsed().as_secs_f64(),
            layer_time_s: times,
        },
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ComparisonRow {
    pub layer: String,
    pub latency_a: u64,
    pub latency_b: u64,
    /// `latency_b / latency_a`: speedup of A over B.
    pub latency_ratio: f64,
    pub edp_ratio: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Comparison {
    pub rows: Vec<ComparisonRow>,
    pub geomean_latency_ratio: f64,
    pub geomean_edp_ratio: Option<f64>,
}

impl Comparison {
    pub fn to_table(&self) -> String {
        let mut s = format!("{:<16} {:>12} {:>12} {:>10} {:>10}\n", "layer", "latency_a", "latency_b", "lat_b/a", "edp_b/a");
        for r in &self.rows {
            let edp = r.edp_ratio.map_or("-".to_string(), |x| format!("{x:.4}"));
            s.push_str(&format!("{:<16} {:>12} {:>12} {:>10.4} {:>10}\n", r.layer, r.latency_a, r.latency_b, r.latency_ratio, edp));
        }
        let edp = self.geomean_edp_ratio.map_or("-".to_string(), |x| format!("{x:.4}"));
        s.push_str(&format!("{:<16} {:>12} {:>12} {:>10.4} {:>10}\n", "geomean", "", "", self.geomean_latency_ratio, edp));
        s
    }
}

fn geomean(v: impl Iterator<Item = f64>) -> f64 {
    let (sum, n) = v.fold((0.0, 0usize), |(s, n), x| (s + x.ln(), n + 1));
    if n == 0 {
        1.0
    } else {
        (sum / n as f64).exp()
    }
}

/// Per-layer ratios of report B over report A.
pub fn compare(a: &RunReport, b: &RunReport) -> Result<Comparison> {
    for i in 0..a.layers.len().max(b.layers.len()) {
        match (a.layers.get(i), b.layers.get(i)) {
            (Some(x), Some(y)) if x.name == y.name && x.shape == y.shape => {}
            (Some(x), _) => return Err(Error::Report(format!("workloads differ at layer {} ('{}')", i, x.name))),
            (None, Some(y)) => return Err(Error::Report(format!("workloads differ at layer {} ('{}')", i, y.name))),
            (None, None) => unreachable!(),
        }
    }
    let rows: Vec<ComparisonRow> = a
        .layers
        .iter()
        .zip(&b.layers)
        .map(|(x, y)| ComparisonRow {
            layer: x.name.clone(),
            latency_a: x.result.latency,
            latency_b: y.result.latency,
            latency_ratio: y.result.latency as f64 / x.result.latency as f64,
            edp_ratio: match (x.result.edp, y.result.edp) {
                (Some(ea), Some(eb)) if ea > 0.0 => Some(eb / ea),
                _ => None,
            },
        })
        .collect();
    let geomean_latency_ratio = geomean(rows.iter().map(|r| r.latency_ratio));
    let geomean_edp_ratio = rows.iter().map(|r| r.edp_ratio).collect::<Option<Vec<f64>>>().map(|v| geomean(v.into_iter()));
    Ok(Comparison { rows, geomean_latency_ratio, geomean_edp_ratio })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mapping::tests::toy_arch;

    fn toy_workload() -> Workload {
        Workload {
            layers: vec![
                LayerShape::conv("a", [1, 2, 3, 1, 1, 1, 1], 8).unwrap(),
                LayerShape::conv("b", [1, 2, 3, 1, 1, 1, 1], 8).unwrap(),
                LayerShape::conv("c", [1, 4, 2, 1, 1, 1, 1], 8).unwrap(),
            ],
        }
    }

    fn cfg(mode: Mode, baselines: Vec<Mode>) -> RunConfig {
        RunConfig {
            mode,
            baselines,
            heuristic_samples: 4,
            solve: SolveConfig { time_limit_s: 30, ..Default::default() },
            ..Default::default()
        }
    }

    #[test]
    fn mode_names_round_trip() {
        for m in [Mode::Miredo, Mode::Ws, Mode::Exhaustive, Mode::Heuristic] {
            assert_eq!(m.name().parse::<Mode>().unwrap(), m);
        }
        assert!("zigzag".parse::<Mode>().is_err());
    }

    #[test]
    fn toy_run_is_consistent_and_repeatable() {
        let arch = toy_arch(1 << 16);
        let c = cfg(Mode::Miredo, vec![Mode::Ws, Mode::Exhaustive]);
        let r = run_workload(&toy_workload(), "toy", &arch, &c).unwrap();
        assert_eq!(r.layers.len(), 3);
        assert_eq!(r.layers[0].result, r.layers[1].result);
        assert!(r.aggregate.all_optimal);
        for l in &r.layers {
            assert!(l.speedup["ws"] >= 1.0);
            // Locality weight only breaks ties among minimum-latency mappings.
            assert_eq!(l.result.latency, l.baselines[1].latency);
        }
        assert_eq!(r.aggregate.total_latency, r.layers.iter().map(|l| l.result.latency).sum::<u64>());
        let again = run_workload(&toy_workload(), "toy", &arch, &c).unwrap();
        assert_eq!(r.canonical_json(), again.canonical_json());
        let back = RunReport::from_json(&r.to_json()).unwrap();
        assert_eq!(back, r);
        assert!(!r.to_csv().is_empty());
    }

    #[test]
    fn compare_self_and_mismatch() {
        let arch = toy_arch(1 << 16);
        let r = run_workload(&toy_workload(), "toy", &arch, &cfg(Mode::Heuristic, vec![])).unwrap();
        let c = compare(&r, &r).unwrap();
        assert!(c.rows.iter().all(|x| x.latency_ratio == 1.0));
        assert_eq!(c.geomean_latency_ratio, 1.0);
        let mut other = r.clone();
        other.layers.pop();
        match compare(&r, &other) {
            Err(Error::Report(m)) => assert!(m.contains("'c'"), "{m}"),
            x => panic!("{x:?}"),
        }
    }
}
