// SPDX-License-Identifier: Apache-2.0

//! Seeded toy instances shared by the integration tests.

#![allow(dead_code)]

use std::path::PathBuf;
use std::time::Duration;

use cimmap::arch::{MacroSpec, MemoryLevel, SpatialAxis};
use cimmap::baselines::{heuristic_search, BaselineConfig};
use cimmap::mip::{build_model, latency_cap_for, BuildOptions, MappingModel, MipModel, ObjectiveWeights, Sense};
use cimmap::solve::{solve, SolveConfig, SolveResult, SolveStatus};
use cimmap::{ArchSpec, Dim, FactorSet, LayerShape, Mapping, Operand, Problem, Rational};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn level(id: usize, capacity_bits: u64, bus: u64, operands: Vec<Operand>, double: bool, bypass: bool) -> MemoryLevel {
    MemoryLevel {
        id,
        name: format!("L{id}"),
        capacity_bits,
        bus_width_bits: bus,
        operands,
        double_buffer_capable: double,
        bypassable: bypass,
        read_energy_pj: Some(1.0 + id as f64),
        write_energy_pj: Some(2.0 + id as f64),
    }
}

/// Two levels, one 4-wide axis for C.
pub fn toy_arch() -> ArchSpec {
    ArchSpec {
        levels: vec![level(0, 1 << 20, 8, Operand::ALL.to_vec(), true, false), level(1, 1 << 12, 16, Operand::ALL.to_vec(), false, false)],
        axes: vec![SpatialAxis { id: 0, name: "rows".into(), size: 4, allowed_dims: vec![Dim::C], attach_level: 1 }],
        macro_spec: MacroSpec { rows: 4, cols: 4, mvm_latency_cycles: 2, serial_bits: 1, mvm_energy_pj: Some(1.0) },
        clock_period_ns: 1.0,
    }
}

fn split(v: u64) -> Vec<u64> {
    match v {
        1 => vec![],
        4 => vec![2, 2],
        6 => vec![2, 3],
        p => vec![p],
    }
}

/// A layer whose dimensions factor into at most two factors each, over an
/// architecture of two or three levels and up to two spatial axes.
pub fn random_instance(seed: u64, max_factors: usize) -> Problem {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    loop {
        let nl = rng.gen_range(2..=3);
        let mut levels = vec![level(0, 1 << 24, *[8u64, 16].choose(&mut rng).unwrap(), Operand::ALL.to_vec(), rng.gen_bool(0.5), false)];
        for id in 1..nl {
            let ops = if id + 1 == nl && nl == 3 {
                let mut o = vec![Operand::W];
                if rng.gen_bool(0.5) {
                    o.insert(0, Operand::I);
                }
                if rng.gen_bool(0.5) {
                    o.push(Operand::O);
                }
                o.sort();
                o
            } else {
                Operand::ALL.to_vec()
            };
            let cap = *[64u64, 128, 256, 1024].choose(&mut rng).unwrap();
            let bus = *[8u64, 16, 32].choose(&mut rng).unwrap();
            levels.push(level(id, cap.max(bus), bus, ops, rng.gen_bool(0.5), rng.gen_bool(0.5)));
        }
        let n_axes = rng.gen_range(0..=2);
        let axes = (0..n_axes)
            .map(|id| {
                let mut dims = Dim::ALL.to_vec();
                dims.shuffle(&mut rng);
                dims.truncate(rng.gen_range(1..=3));
                dims.sort();
                SpatialAxis {
                    id,
                    name: format!("u{id}"),
                    size: *[2u64, 4].choose(&mut rng).unwrap(),
                    allowed_dims: dims,
                    attach_level: rng.gen_range(1..nl),
                }
            })
            .collect();
        let arch = ArchSpec {
            levels,
            axes,
            macro_spec: MacroSpec { rows: 4, cols: 4, mvm_latency_cycles: rng.gen_range(1..=4), serial_bits: 1, mvm_energy_pj: Some(0.5) },
            clock_period_ns: 1.0,
        };
        let pick = |rng: &mut ChaCha8Rng, opts: &[u64]| *opts.choose(rng).unwrap();
        let dims = [
            pick(&mut rng, &[1, 1, 2]),
            pick(&mut rng, &[1, 2, 3, 4, 6]),
            pick(&mut rng, &[1, 2, 3, 4]),
            pick(&mut rng, &[1, 2]),
            pick(&mut rng, &[1, 2]),
            pick(&mut rng, &[1, 2]),
            pick(&mut rng, &[1, 1, 2]),
        ];
        let lists: Vec<(Dim, Vec<u64>)> = Dim::ALL.iter().map(|d| (*d, split(dims[d.index()]))).collect();
        let count: usize = lists.iter().map(|(_, l)| l.len()).sum();
        if count == 0 || count > max_factors {
            continue;
        }
        let bits = *[4u32, 8].choose(&mut rng).unwrap();
        let layer = LayerShape::conv(format!("rand{seed}"), dims, bits).unwrap();
        return Problem::new(layer, arch, FactorSet::from_lists(&lists)).unwrap();
    }
}

pub fn toy_problem() -> Problem {
    let layer = LayerShape::conv("toy", [1, 2, 3, 1, 1, 1, 1], 8).unwrap();
    Problem::new(layer, toy_arch(), FactorSet::from_lists(&[(Dim::K, vec![2]), (Dim::C, vec![3])])).unwrap()
}

/// Latency-only MIP, capped by a quick heuristic mapping.
pub fn solve_latency_only(problem: &Problem, time_limit_s: u64) -> (MappingModel<Rational>, SolveResult<Rational>) {
    solve_weighted(problem, ObjectiveWeights::latency_only(), time_limit_s)
}

pub fn solve_weighted(
    problem: &Problem,
    weights: ObjectiveWeights<Rational>,
    time_limit_s: u64,
) -> (MappingModel<Rational>, SolveResult<Rational>) {
    let h = heuristic_search(problem, &BaselineConfig { heuristic_samples: 8, ..Default::default() }).unwrap();
    let cap = latency_cap_for(problem, &weights, h.report.total_latency);
    let mm = build_model(problem, &BuildOptions { weights, latency_cap: Some(cap) }).unwrap();
    let r = solve(&mm.model, &SolveConfig { time_limit_s, ..Default::default() }).unwrap();
    (mm, r)
}

pub fn decode_optimal(mm: &MappingModel<Rational>, r: &SolveResult<Rational>) -> Mapping {
    assert_eq!(r.status, SolveStatus::Optimal, "{r:?}");
    mm.decode(r.assignment.as_ref().unwrap()).unwrap()
}

pub const COMPLETE_LIMIT: Duration = Duration::from_secs(30);

pub fn one_binary_model() -> MipModel<Rational> {
    let mut m = MipModel::<Rational>::new("one");
    let x = m.add_binary("x");
    m.add_constraint("c", vec![(x, Rational::from_integer(1))], Sense::Ge, Rational::from_integer(1));
    m.set_objective(vec![(x, Rational::from_integer(1))]);
    m
}

/// Command template for the bundled HiGHS wrapper, if python3 can import highspy.
pub fn highs_command() -> Option<String> {
    let ok = std::process::Command::new("python3").args(["-c", "import highspy"]).output().map(|o| o.status.success()).unwrap_or(false);
    let script = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../tools/highs_solve.py");
    ok.then(|| format!("python3 {} {{mps}} {{sol}} {{time}} {{start}}", script.display()))
}

pub fn data_file(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../data").join(name)
}
