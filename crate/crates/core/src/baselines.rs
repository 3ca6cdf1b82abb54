// SPDX-License-Identifier: Apache-2.0

//! Reference mappers: exhaustive enumeration, a weight-stationary restriction
//! of the integer program, and a seeded random search with local moves.
//!
//! Weight stationary here means: weights are single buffered at every level,
//! and loops that index weights enclose every loop that does not, so a weight
//! tile stays in the macro while all input and output traffic for it streams
//! past. Each iteration of the innermost weight loop is one reload round;
//! when the weights outgrow the macro those rounds carry the reload stalls.

use std::collections::BTreeSet;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::enumeration::is_relevant;
use crate::error::{Error, Result};
use crate::latency::{evaluate, LatencyReport};
use crate::mapping::{verify_mapping, Mapping, MappingChoice, Problem};
use crate::mip::{MappingModel, Sense};
use crate::scalar::Scalar;
use crate::workload::{FactorRef, Operand};

pub const DEFAULT_SPACE_CAP: u128 = 1_000_000;

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BaselineMode {
    Exhaustive,
    Ws,
    Heuristic,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BaselineConfig {
    pub mode: BaselineMode,
    pub heuristic_samples: usize,
    pub seed: u64,
    pub space_cap: u128,
}

impl Default for BaselineConfig {
    fn default() -> Self {
        BaselineConfig { mode: BaselineMode::Heuristic, heuristic_samples: 200, seed: 0, space_cap: DEFAULT_SPACE_CAP }
    }
}

impl BaselineConfig {
    pub fn validate(&self) -> Result<()> {
        if self.heuristic_samples == 0 {
            return Err(Error::Config("heuristic samples must be at least 1".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Found {
    pub mapping: Mapping,
    pub report: LatencyReport,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ExhaustiveResult {
    pub best: Found,
    pub worst_latency: u64,
    /// Enumerated mappings that passed the audit.
    pub legal: u64,
    pub space_size: u128,
}

/// Every way of sending each factor to a spatial axis (or leaving it temporal).
fn spatial_assignments(problem: &Problem) -> Vec<Vec<Option<usize>>> {
    let factors = problem.factors.all();
    let axes = &problem.arch.axes;
    let mut out = Vec::new();
    let mut cur = Vec::with_capacity(factors.len());
    let mut prod = vec![1u64; axes.len()];
    fn rec(
        k: usize,
        factors: &[FactorRef],
        axes: &[crate::arch::SpatialAxis],
        cur: &mut Vec<Option<usize>>,
        prod: &mut Vec<u64>,
        out: &mut Vec<Vec<Option<usize>>>,
    ) {
        if k == factors.len() {
            out.push(cur.clone());
            return;
        }
        cur.push(None);
        rec(k + 1, factors, axes, cur, prod, out);
        cur.pop();
        for (u, a) in axes.iter().enumerate() {
            if a.allows(factors[k].dim) && prod[u] * factors[k].value <= a.size {
                prod[u] *= factors[k].value;
                cur.push(Some(u));
                rec(k + 1, factors, axes, cur, prod, out);
                cur.pop();
                prod[u] /= factors[k].value;
            }
        }
    }
    rec(0, &factors, axes, &mut cur, &mut prod, &mut out);
    out
}

/// Orders of `items` up to swapping factors of equal dimension and value.
fn distinct_orders(items: &[FactorRef]) -> Vec<Vec<FactorRef>> {
    let mut keys: Vec<(crate::workload::Dim, u64)> = items.iter().map(|f| (f.dim, f.value)).collect();
    keys.sort();
    keys.dedup();
    let mut pools: Vec<Vec<FactorRef>> = keys.iter().map(|k| items.iter().filter(|f| (f.dim, f.value) == *k).copied().collect()).collect();
    let mut out = Vec::new();
    let mut cur = Vec::with_capacity(items.len());
    let mut taken = vec![0usize; keys.len()];
    fn rec(pools: &mut [Vec<FactorRef>], taken: &mut [usize], cur: &mut Vec<FactorRef>, n: usize, out: &mut Vec<Vec<FactorRef>>) {
        if cur.len() == n {
            out.push(cur.clone());
            return;
        }
        for j in 0..pools.len() {
            if taken[j] < pools[j].len() {
                cur.push(pools[j][taken[j]]);
                taken[j] += 1;
                rec(pools, taken, cur, n, out);
                taken[j] -= 1;
                cur.pop();
            }
        }
    }
    rec(&mut pools, &mut taken, &mut cur, items.len(), &mut out);
    out
}

fn distinct_order_count(items: &[FactorRef]) -> u128 {
    let mut counts = std::collections::BTreeMap::new();
    for f in items {
        *counts.entry((f.dim, f.value)).or_insert(0u128) += 1;
    }
    let fact = |n: u128| (1..=n).product::<u128>();
    counts.values().fold(fact(items.len() as u128), |acc, c| acc / fact(*c))
}

/// Block-level sequences (outer to inner, non-decreasing) with a buffering choice.
fn block_options(problem: &Problem, op: Operand, k: usize) -> Vec<(Vec<usize>, BTreeSet<usize>)> {
    let levels = problem.arch.block_levels(op);
    let mut seqs = Vec::new();
    fn rec(levels: &[usize], from: usize, k: usize, cur: &mut Vec<usize>, out: &mut Vec<Vec<usize>>) {
        if cur.len() == k {
            out.push(cur.clone());
            return;
        }
        for j in from..levels.len() {
            cur.push(levels[j]);
            rec(levels, j, k, cur, out);
            cur.pop();
        }
    }
    rec(&levels, 0, k, &mut Vec::new(), &mut seqs);
    let mut out = Vec::new();
    for s in seqs {
        let capable: Vec<usize> =
            s.iter().copied().collect::<BTreeSet<_>>().into_iter().filter(|m| problem.arch.level(*m).double_buffer_capable).collect();
        for mask in 0u32..(1 << capable.len()) {
            let double = capable.iter().enumerate().filter(|(b, _)| mask >> b & 1 == 1).map(|(_, m)| *m).collect();
            out.push((s.clone(), double));
        }
    }
    out
}

fn block_option_count(problem: &Problem, op: Operand, k: usize) -> u128 {
    // Weighted compositions of k loops over the levels; a used capable level doubles the count.
    let levels = problem.arch.block_levels(op);
    let mut ways = vec![0u128; k + 1];
    ways[0] = 1;
    for m in levels {
        let w = if problem.arch.level(m).double_buffer_capable { 2 } else { 1 };
        let mut next = vec![0u128; k + 1];
        for (have, c) in ways.iter().enumerate() {
            if *c == 0 {
                continue;
            }
            next[have] += c;
            for add in 1..=k - have {
                next[have + add] = next[have + add].saturating_add(c.saturating_mul(w));
            }
        }
        ways = next;
    }
    ways[k]
}

/// Number of candidate combinations the exhaustive mapper walks.
pub fn space_size(problem: &Problem) -> u128 {
    let factors = problem.factors.all();
    spatial_assignments(problem)
        .iter()
        .map(|a| {
            let temporal: Vec<FactorRef> = factors.iter().zip(a).filter(|(_, u)| u.is_none()).map(|(f, _)| *f).collect();
            let k = temporal.len();
            Operand::ALL.iter().fold(distinct_order_count(&temporal), |acc, op| acc.saturating_mul(block_option_count(problem, *op, k)))
        })
        .fold(0u128, |a, b| a.saturating_add(b))
}

fn legal(problem: &Problem, choice: &MappingChoice) -> Option<Mapping> {
    let m = Mapping::from_choice(problem, choice).ok()?;
    verify_mapping(&m, problem).is_empty().then_some(m)
}

/// Calls `visit` on every legal mapping of the space, in enumeration order.
pub fn for_each_legal(problem: &Problem, cap: u128, mut visit: impl FnMut(Mapping) -> Result<()>) -> Result<u128> {
    let size = space_size(problem);
    if size > cap {
        return Err(Error::SpaceTooLarge { size, cap });
    }
    let factors = problem.factors.all();
    for assign in spatial_assignments(problem) {
        let spatial: Vec<(FactorRef, usize)> = factors.iter().zip(&assign).filter_map(|(f, u)| u.map(|u| (*f, u))).collect();
        let temporal: Vec<FactorRef> = factors.iter().zip(&assign).filter(|(_, u)| u.is_none()).map(|(f, _)| *f).collect();
        let k = temporal.len();
        let opts = Operand::ALL.map(|op| block_options(problem, op, k));
        for order in distinct_orders(&temporal) {
            for (li, di) in &opts[0] {
                for (lw, dw) in &opts[1] {
                    for (lo, dout) in &opts[2] {
                        let choice = MappingChoice {
                            order: order.clone(),
                            spatial: spatial.clone(),
                            block_level: [li.clone(), lw.clone(), lo.clone()],
                            double: [di.clone(), dw.clone(), dout.clone()],
                        };
                        if let Some(mapping) = legal(problem, &choice) {
                            visit(mapping)?;
                        }
                    }
                }
            }
        }
    }
    Ok(size)
}

/// Minimum-latency mapping by brute force; ties go to the first in enumeration order.
pub fn exhaustive_best(problem: &Problem, cap: u128) -> Result<ExhaustiveResult> {
    let mut best: Option<Found> = None;
    let mut worst = 0u64;
    let mut count = 0u64;
    let size = for_each_legal(problem, cap, |mapping| {
        let report = evaluate(&mapping, problem)?;
        count += 1;
        worst = worst.max(report.total_latency);
        if best.as_ref().is_none_or(|b| report.total_latency < b.report.total_latency) {
            best = Some(Found { mapping, report });
        }
        Ok(())
    })?;
    let best = best.ok_or_else(|| Error::Infeasible("no legal mapping in the enumerated space".into()))?;
    Ok(ExhaustiveResult { best, worst_latency: worst, legal: count, space_size: size })
}

/// Fewest macro reload rounds: weight bits over the capacity of the level
/// feeding the macro.
pub fn ws_reload_rounds(problem: &Problem) -> u64 {
    let t = problem.arch.terminal_level(Operand::W);
    problem.layer.tensor_bits(Operand::W).div_ceil(problem.arch.level(t).capacity_bits.max(1))
}

/// Adds the weight-stationary rows to a built model.
pub fn ws_constrained<S: Scalar>(mm: &MappingModel<S>) -> Result<MappingModel<S>> {
    let mut out = mm.clone();
    let ix = &out.index;
    let fixes: Vec<(String, usize)> =
        ix.dm.iter().filter(|((op, _), _)| *op == Operand::W).map(|((_, l), v)| (format!("ws.single[{l}]"), *v)).collect();
    let n = ix.factors.len();
    let mut rows = Vec::new();
    for i in 0..n.saturating_sub(1) {
        // relevant(i+1) - relevant(i) + PSIL[i] <= 1
        let mut t = Vec::new();
        for (k, f) in ix.factors.iter().enumerate() {
            if is_relevant(Operand::W, f.dim) {
                t.push((ix.xl[k][i + 1], S::one()));
                t.push((ix.xl[k][i], -S::one()));
            }
        }
        t.push((ix.psi_l[i], S::one()));
        rows.push((format!("ws.order[{i}]"), t));
    }
    for (name, v) in fixes {
        out.model.fix(name, v, 0);
    }
    for (name, t) in rows {
        out.model.add_constraint(name, t, Sense::Le, S::one());
    }
    Ok(out)
}

/// Rewrites a choice into its weight-stationary form.
fn make_ws(choice: &mut MappingChoice) {
    let (rel, irr): (Vec<FactorRef>, Vec<FactorRef>) = choice.order.iter().partition(|f| is_relevant(Operand::W, f.dim));
    choice.order = rel.into_iter().chain(irr).collect();
    choice.double[Operand::W.index()].clear();
}

pub fn is_weight_stationary(mapping: &Mapping) -> bool {
    let single = mapping.buffering.iter().all(|b| b.operand != Operand::W || !b.double);
    let mut seen_irrelevant = false;
    let mut ordered = true;
    for t in &mapping.temporal {
        if is_relevant(Operand::W, t.dim) {
            ordered &= !seen_irrelevant;
        } else {
            seen_irrelevant = true;
        }
    }
    single && ordered
}

fn random_choice(problem: &Problem, rng: &mut ChaCha8Rng, ws: bool) -> MappingChoice {
    let factors = problem.factors.all();
    let axes = &problem.arch.axes;
    let mut prod = vec![1u64; axes.len()];
    let mut idx: Vec<usize> = (0..factors.len()).collect();
    idx.shuffle(rng);
    let mut spatial = Vec::new();
    let mut order = Vec::new();
    for k in idx {
        let f = factors[k];
        let room: Vec<usize> = (0..axes.len()).filter(|u| axes[*u].allows(f.dim) && prod[*u] * f.value <= axes[*u].size).collect();
        if !room.is_empty() && rng.gen_bool(0.5) {
            let u = room[rng.gen_range(0..room.len())];
            prod[u] *= f.value;
            spatial.push((f, u));
        } else {
            order.push(f);
        }
    }
    spatial.sort_by_key(|(f, _)| (f.dim, f.index));
    let k = order.len();
    let block_level = Operand::ALL.map(|op| {
        let levels = problem.arch.block_levels(op);
        let mut v: Vec<usize> = (0..k).map(|_| levels[rng.gen_range(0..levels.len())]).collect();
        v.sort();
        v
    });
    let double = Operand::ALL.map(|op| {
        block_level[op.index()]
            .iter()
            .copied()
            .collect::<BTreeSet<_>>()
            .into_iter()
            .filter(|m| problem.arch.level(*m).double_buffer_capable && rng.gen_bool(0.5))
            .collect()
    });
    let mut c = MappingChoice { order, spatial, block_level, double };
    if ws {
        make_ws(&mut c);
    }
    c
}

/// Single-step moves: adjacent swaps, block-level changes, buffering flips,
/// and factor relocation between temporal slots and spatial axes.
fn neighbours(problem: &Problem, c: &MappingChoice, ws: bool) -> Vec<MappingChoice> {
    let arch = &problem.arch;
    let k = c.order.len();
    let mut out = Vec::new();
    for p in 0..k.saturating_sub(1) {
        let mut n = c.clone();
        n.order.swap(p, p + 1);
        out.push(n);
    }
    for op in Operand::ALL {
        let o = op.index();
        for p in 0..k {
            for l in arch.block_levels(op) {
                if l == c.block_level[o][p] {
                    continue;
                }
                let mut n = c.clone();
                for (q, v) in n.block_level[o].iter_mut().enumerate() {
                    if q < p {
                        *v = (*v).min(l);
                    } else if q > p {
                        *v = (*v).max(l);
                    } else {
                        *v = l;
                    }
                }
                let used: BTreeSet<usize> = n.block_level[o].iter().copied().collect();
                n.double[o].retain(|m| used.contains(m));
                out.push(n);
            }
        }
        let used: BTreeSet<usize> = c.block_level[o].iter().copied().collect();
        for m in used {
            if arch.level(m).double_buffer_capable && !(ws && op == Operand::W) {
                let mut n = c.clone();
                if !n.double[o].remove(&m) {
                    n.double[o].insert(m);
                }
                out.push(n);
            }
        }
    }
    let mut prod = vec![1u64; arch.axes.len()];
    for (f, u) in &c.spatial {
        prod[*u] *= f.value;
    }
    for p in 0..k {
        let f = c.order[p];
        for (u, a) in arch.axes.iter().enumerate() {
            if a.allows(f.dim) && prod[u] * f.value <= a.size {
                let mut n = c.clone();
                n.order.remove(p);
                for v in n.block_level.iter_mut() {
                    v.remove(p);
                }
                for o in 0..3 {
                    let used: BTreeSet<usize> = n.block_level[o].iter().copied().collect();
                    n.double[o].retain(|m| used.contains(m));
                }
                n.spatial.push((f, u));
                n.spatial.sort_by_key(|(f, _)| (f.dim, f.index));
                out.push(n);
            }
        }
    }
    for (j, (f, _)) in c.spatial.iter().enumerate() {
        let mut n = c.clone();
        n.spatial.remove(j);
        n.order.push(*f);
        for op in Operand::ALL {
            let deepest = *arch.block_levels(op).last().expect("block level");
            let v = &mut n.block_level[op.index()];
            let last = v.last().copied().unwrap_or(deepest);
            v.push(last);
        }
        out.push(n);
    }
    if ws {
        for n in out.iter_mut() {
            make_ws(n);
        }
    }
    out
}

fn climb(problem: &Problem, mut cur: MappingChoice, mut best: Found, ws: bool) -> Result<Found> {
    const MAX_ROUNDS: usize = 64;
    for _ in 0..MAX_ROUNDS {
        let mut improved = false;
        for n in neighbours(problem, &cur, ws) {
            if let Some(m) = legal(problem, &n) {
                let r = evaluate(&m, problem)?;
                if r.total_latency < best.report.total_latency {
                    best = Found { mapping: m, report: r };
                    cur = n;
                    improved = true;
                    break;
                }
            }
        }
        if !improved {
            break;
        }
    }
    Ok(best)
}

const ATTEMPTS_PER_SAMPLE: usize = 2000;

fn search(problem: &Problem, samples: usize, seed: u64, ws: bool) -> Result<Found> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut best: Option<Found> = None;
    for _ in 0..samples {
        let mut start = None;
        for _ in 0..ATTEMPTS_PER_SAMPLE {
            let c = random_choice(problem, &mut rng, ws);
            if let Some(m) = legal(problem, &c) {
                start = Some((c, m));
                break;
            }
        }
        let Some((c, m)) = start else { continue };
        let r = evaluate(&m, problem)?;
        let found = climb(problem, c, Found { mapping: m, report: r }, ws)?;
        if best.as_ref().is_none_or(|b| found.report.total_latency < b.report.total_latency) {
            best = Some(found);
        }
    }
    best.ok_or_else(|| Error::Infeasible(format!("no legal mapping found in {samples} samples")))
}

/// Seeded random sampling with greedy local improvement.
pub fn heuristic_search(problem: &Problem, cfg: &BaselineConfig) -> Result<Found> {
    cfg.validate()?;
    search(problem, cfg.heuristic_samples, cfg.seed, false)
}

/// [`heuristic_search`] restricted to weight-stationary mappings.
pub fn ws_heuristic(problem: &Problem, cfg: &BaselineConfig) -> Result<Found> {
    cfg.validate()?;
    search(problem, cfg.heuristic_samples, cfg.seed, true)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mapping::tests::toy_problem;
    use crate::workload::{Dim, FactorSet, LayerShape};

    #[test]
    fn orders_skip_equal_factors() {
        let p = {
            let layer = LayerShape::conv("t", [1, 4, 2, 1, 1, 1, 1], 8).unwrap();
            let f = FactorSet::from_lists(&[(Dim::K, vec![2, 2]), (Dim::C, vec![2])]);
            Problem::new(layer, crate::mapping::tests::toy_arch(1 << 16), f).unwrap()
        };
        let all = p.factors.all();
        assert_eq!(distinct_orders(&all).len(), 3);
        assert_eq!(distinct_order_count(&all), 3);
    }

    #[test]
    fn space_size_matches_enumeration() {
        let p = toy_problem(1 << 16);
        let factors = p.factors.all();
        let mut n = 0u128;
        for a in spatial_assignments(&p) {
            let t: Vec<FactorRef> = factors.iter().zip(&a).filter(|(_, u)| u.is_none()).map(|(f, _)| *f).collect();
            let per: u128 = Operand::ALL.iter().map(|op| block_options(&p, *op, t.len()).len() as u128).product();
            n += distinct_orders(&t).len() as u128 * per;
            for op in Operand::ALL {
                assert_eq!(block_options(&p, op, t.len()).len() as u128, block_option_count(&p, op, t.len()));
            }
        }
        assert_eq!(space_size(&p), n);
    }

    #[test]
    fn exhaustive_respects_cap() {
        let p = toy_problem(1 << 16);
        let size = space_size(&p);
        match exhaustive_best(&p, size - 1) {
            Err(Error::SpaceTooLarge { size: s, .. }) => assert_eq!(s, size),
            other => panic!("{other:?}"),
        }
        let r = exhaustive_best(&p, size).unwrap();
        assert_eq!(r.space_size, size);
        assert!(r.best.report.total_latency <= r.worst_latency);
        assert!(verify_mapping(&r.best.mapping, &p).is_empty());
    }

    #[test]
    fn empty_factor_set_has_one_mapping() {
        let layer = LayerShape::conv("one", [1, 1, 1, 1, 1, 1, 1], 8).unwrap();
        let p = Problem::new(layer, crate::mapping::tests::toy_arch(1 << 16), FactorSet::from_lists(&[])).unwrap();
        assert_eq!(space_size(&p), 1);
        let r = exhaustive_best(&p, DEFAULT_SPACE_CAP).unwrap();
        assert_eq!(r.legal, 1);
        assert_eq!(r.best.report.total_latency, p.arch.l_mvm());
    }

    #[test]
    fn heuristic_is_reproducible_and_monotone() {
        let p = toy_problem(1 << 16);
        let cfg = |n| BaselineConfig { heuristic_samples: n, seed: 3, ..Default::default() };
        let a = heuristic_search(&p, &cfg(5)).unwrap();
        let b = heuristic_search(&p, &cfg(5)).unwrap();
        assert_eq!(a, b);
        let mut last = u64::MAX;
        for n in [1, 2, 4, 8] {
            let r = heuristic_search(&p, &cfg(n)).unwrap();
            assert!(verify_mapping(&r.mapping, &p).is_empty());
            assert!(r.report.total_latency <= last);
            last = r.report.total_latency;
        }
        assert!(heuristic_search(&p, &cfg(0)).is_err());
    }

    #[test]
    fn ws_heuristic_yields_ws_mappings() {
        let p = toy_problem(1 << 16);
        let r = ws_heuristic(&p, &BaselineConfig { heuristic_samples: 4, ..Default::default() }).unwrap();
        assert!(is_weight_stationary(&r.mapping));
        assert!(verify_mapping(&r.mapping, &p).is_empty());
    }

    #[test]
    fn reload_rounds_follow_capacity() {
        let mut p = toy_problem(1 << 16);
        // 6 weights of 8 bits against a 24-bit terminal level.
        p.arch.levels[1].capacity_bits = 24;
        assert_eq!(ws_reload_rounds(&p), 2);
        p.arch.levels[1].capacity_bits = 48;
        assert_eq!(ws_reload_rounds(&p), 1);
    }
}
