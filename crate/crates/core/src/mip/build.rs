// SPDX-License-Identifier: Apache-2.0

//! Construction of the mapping program: placement and loop-block structure,
//! data sizes and capacities, the slot-by-slot latency recursion, and the
//! objective. Also decodes assignments back into [`Mapping`] values.

use std::collections::BTreeMap;

use super::gadgets::{self, BinExpr};
use super::model::{Literal, MipModel, Sense, VarId};
use crate::enumeration::{is_relevant, relevant_dims, scaled_log, LOG_SLACK};
use crate::error::{Error, Result};
use crate::mapping::{Buffering, DataSize, LoopBlock, Mapping, Prediction, Problem, SpatialLoop, TemporalLoop, Transfer};
use crate::scalar::Scalar;
use crate::workload::{Dim, FactorRef, Operand};

/// Weights of the objective `latency * Λ - locality * Σ m * Size`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ObjectiveWeights<S> {
    pub latency: S,
    pub locality: S,
}

impl<S: Scalar> Default for ObjectiveWeights<S> {
    fn default() -> Self {
        ObjectiveWeights { latency: S::one(), locality: S::from_ratio(1, 1_000_000) }
    }
}

impl<S: Scalar> ObjectiveWeights<S> {
    pub fn latency_only() -> Self {
        ObjectiveWeights { latency: S::one(), locality: S::zero() }
    }

    pub fn validate(&self) -> Result<()> {
        if self.latency <= S::zero() || self.locality < S::zero() {
            return Err(Error::Config("objective weights: latency weight must be positive, locality weight non-negative".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct BuildOptions<S> {
    pub weights: ObjectiveWeights<S>,
    /// Latency of a known mapping. Every latency variable of a solution at
    /// least as good is bounded by it, which keeps indicator big-Ms small.
    pub latency_cap: Option<u64>,
}

impl<S: Scalar> Default for BuildOptions<S> {
    fn default() -> Self {
        BuildOptions { weights: ObjectiveWeights::default(), latency_cap: None }
    }
}

/// Variable handles by role.
#[derive(Clone, Debug, Default)]
pub struct VarIndex {
    pub factors: Vec<FactorRef>,
    /// `[factor][slot]`.
    pub xl: Vec<Vec<VarId>>,
    /// `[factor][axis]`.
    pub xu: Vec<Vec<VarId>>,
    /// `[factor][operand][level]`.
    pub xm: Vec<[Vec<VarId>; 3]>,
    pub dm: BTreeMap<(Operand, usize), VarId>,
    pub psi_l: Vec<VarId>,
    pub xz: BTreeMap<(usize, Operand, usize), VarId>,
    pub psi_u: BTreeMap<(Operand, usize), VarId>,
    pub xn: BTreeMap<(Operand, usize, usize), VarId>,
    /// `[slot][loop-count index]`.
    pub vf: Vec<Vec<VarId>>,
    pub gate: BTreeMap<(usize, Operand, usize), VarId>,
    pub seen: BTreeMap<(usize, Operand, usize), VarId>,
    /// Transfer out of a level is triggered at this slot.
    pub fire: BTreeMap<(usize, Operand, usize), VarId>,
    pub fire_double: BTreeMap<(usize, Operand, usize), VarId>,
    pub transfer: BTreeMap<(usize, Operand), VarId>,
    pub double_transfer: BTreeMap<(usize, Operand), VarId>,
    pub single_transfer: BTreeMap<(usize, Operand), VarId>,
    pub bs: BTreeMap<(Operand, usize, Dim), VarId>,
    pub bt: BTreeMap<(Operand, usize, Dim), VarId>,
    pub vs: BTreeMap<(Operand, usize), Vec<VarId>>,
    pub zs: BTreeMap<(Operand, usize), Vec<VarId>>,
    pub vt: BTreeMap<(Operand, usize), Vec<VarId>>,
    pub size: BTreeMap<(Operand, usize), VarId>,
    pub dsize: BTreeMap<(Operand, usize), VarId>,
    pub tc: BTreeMap<(usize, Operand, usize), VarId>,
    pub t: BTreeMap<(usize, Operand), VarId>,
    pub amax: BTreeMap<(usize, Operand), VarId>,
    pub bmax: BTreeMap<(usize, Operand), VarId>,
    /// `[slot]`, including the boundary slot.
    pub l: Vec<VarId>,
    pub p: Vec<[VarId; 3]>,
    pub lambda: Option<VarId>,
}

impl VarIndex {
    /// Variables that determine a mapping; all others follow from them.
    pub fn structural(&self) -> Vec<VarId> {
        let mut v: Vec<VarId> = self.xl.iter().flatten().copied().collect();
        v.extend(self.xu.iter().flatten());
        v.extend(self.xm.iter().flat_map(|a| a.iter().flatten()));
        v.extend(self.dm.values());
        v
    }
}

/// The program for one layer together with its variable index.
#[derive(Clone, Debug)]
pub struct MappingModel<S> {
    pub model: MipModel<S>,
    pub index: VarIndex,
    pub problem: Problem,
}

fn op_list(arch_levels: &[usize]) -> String {
    arch_levels.iter().map(|m| m.to_string()).collect::<Vec<_>>().join(",")
}

fn checked_mul(a: u64, b: u64) -> Result<u64> {
    a.checked_mul(b).ok_or_else(|| Error::Build("latency bound overflows".into()))
}

fn ceil_div(a: u64, b: u64) -> u64 {
    a.div_ceil(b)
}

/// Placement, loop-block, path and buffering structure.
pub fn build_mapping_constraints<S: Scalar>(problem: &Problem) -> Result<MappingModel<S>> {
    let arch = &problem.arch;
    let factors = problem.factors.all();
    let nf = factors.len();
    let nl = arch.num_levels();
    let mut m = MipModel::<S>::new(format!("map_{}", problem.layer.name));
    let mut ix = VarIndex { factors: factors.clone(), ..Default::default() };
    let one = S::one;

    for f in &factors {
        ix.xl.push((0..nf).map(|i| m.add_binary(format!("XL[{},{},{}]", f.dim, f.index, i))).collect());
    }
    for f in &factors {
        ix.xu.push(arch.axes.iter().map(|a| m.add_binary(format!("XU[{},{},{}]", f.dim, f.index, a.id))).collect());
    }
    for f in &factors {
        ix.xm.push(Operand::ALL.map(|op| (0..nl).map(|l| m.add_binary(format!("XM[{},{},{},{}]", f.dim, f.index, op, l))).collect()));
    }
    for op in Operand::ALL {
        for l in arch.levels_for(op) {
            ix.dm.insert((op, l), m.add_binary(format!("DM[{op},{l}]")));
        }
    }
    ix.psi_l = (0..nf).map(|i| m.add_binary(format!("PSIL[{i}]"))).collect();
    for i in 0..nf {
        for op in Operand::ALL {
            for l in arch.levels_for(op) {
                ix.xz.insert((i, op, l), m.add_binary(format!("XZ[{i},{op},{l}]")));
            }
        }
    }
    for op in Operand::ALL {
        for l in arch.levels_for(op) {
            ix.psi_u.insert((op, l), m.add_binary(format!("PSIU[{op},{l}]")));
        }
    }
    for op in Operand::ALL {
        for (a, b) in arch.operand_path_candidates(op)? {
            ix.xn.insert((op, a, b), m.add_binary(format!("XN[{op},{a},{b}]")));
        }
    }

    // Each factor is placed exactly once, temporally or spatially.
    for (k, f) in factors.iter().enumerate() {
        let mut t: Vec<(VarId, S)> = ix.xl[k].iter().map(|v| (*v, one())).collect();
        t.extend(ix.xu[k].iter().map(|v| (*v, one())));
        m.add_constraint(format!("place.uniq[{},{}]", f.dim, f.index), t, Sense::Eq, one());
    }
    for (k, f) in factors.iter().enumerate() {
        for (u, axis) in arch.axes.iter().enumerate() {
            if !axis.allows(f.dim) {
                m.fix(format!("legal.cx[{},{},{}]", f.dim, f.index, u), ix.xu[k][u], 0);
            }
        }
    }
    for (u, axis) in arch.axes.iter().enumerate() {
        let t = factors.iter().enumerate().map(|(k, f)| (ix.xu[k][u], S::from_int(scaled_log(f.value)))).collect();
        m.add_constraint(format!("axis[{u}]"), t, Sense::Le, S::from_int(scaled_log(axis.size) + LOG_SLACK));
    }
    for (k, f) in factors.iter().enumerate() {
        for op in Operand::ALL {
            for l in 0..nl {
                if !arch.level(l).admits(op) {
                    m.fix(format!("legal.cm[{},{},{},{}]", f.dim, f.index, op, l), ix.xm[k][op.index()][l], 0);
                }
            }
            // A temporal factor joins exactly one block per operand.
            let mut t: Vec<(VarId, S)> = ix.xm[k][op.index()].iter().map(|v| (*v, one())).collect();
            t.extend(ix.xu[k].iter().map(|v| (*v, one())));
            m.add_constraint(format!("blk.assign[{},{},{}]", f.dim, f.index, op), t, Sense::Eq, one());
        }
    }

    for i in 0..nf {
        let mut t: Vec<(VarId, S)> = (0..nf).map(|k| (ix.xl[k][i], -one())).collect();
        t.push((ix.psi_l[i], one()));
        m.add_constraint(format!("psi.l[{i}]"), t, Sense::Eq, S::zero());
        if i + 1 < nf {
            m.add_constraint(format!("slot.suffix[{i}]"), vec![(ix.psi_l[i], one()), (ix.psi_l[i + 1], -one())], Sense::Le, S::zero());
        }
    }

    for op in Operand::ALL {
        let adm = arch.levels_for(op);
        for i in 0..nf {
            for &l in &adm {
                let z = ix.xz[&(i, op, l)];
                for (k, f) in factors.iter().enumerate() {
                    m.add_constraint(
                        format!("block.xz[{i},{op},{l},{},{}]", f.dim, f.index),
                        vec![(z, one()), (ix.xm[k][op.index()][l], -one()), (ix.xl[k][i], -one())],
                        Sense::Ge,
                        -one(),
                    );
                }
            }
            let mut t: Vec<(VarId, S)> = adm.iter().map(|l| (ix.xz[&(i, op, *l)], one())).collect();
            t.push((ix.psi_l[i], -one()));
            m.add_constraint(format!("xz.one[{i},{op}]"), t, Sense::Eq, S::zero());
        }
        // Outer slots sit in blocks at the same or an outer level.
        let blk = arch.block_levels(op);
        for i in 0..nf.saturating_sub(1) {
            for (j, &l) in blk.iter().enumerate() {
                let mut t: Vec<(VarId, S)> = Vec::new();
                for &l2 in &adm[..=j] {
                    t.push((ix.xz[&(i, op, l2)], one()));
                    t.push((ix.xz[&(i + 1, op, l2)], -one()));
                }
                t.push((ix.psi_l[i], -one()));
                m.add_constraint(format!("blk.mono[{i},{op},{l}]"), t, Sense::Ge, -one());
            }
        }
        for &l in &adm {
            let xs: Vec<VarId> = (0..nf).map(|k| ix.xm[k][op.index()][l]).collect();
            gadgets::or(&mut m, &format!("psiu[{op},{l}]"), ix.psi_u[&(op, l)], &xs);
        }
        let terminal = arch.terminal_level(op);
        for &l in &adm {
            let mut t: Vec<(VarId, S)> = ix.xn.iter().filter(|((o, a, _), _)| *o == op && *a == l).map(|(_, v)| (*v, one())).collect();
            t.push((ix.psi_u[&(op, l)], -one()));
            m.add_constraint(format!("path.out[{op},{l}]"), t, Sense::Eq, S::zero());
        }
        let pairs: Vec<(usize, usize)> = ix.xn.keys().filter(|k| k.0 == op).map(|k| (k.1, k.2)).collect();
        for &(a, b) in &pairs {
            for &mid in adm.iter().filter(|x| **x > a && **x < b) {
                let near = ix.xn[&(op, a, mid)];
                m.add_constraint(
                    format!("xn.bypass[{op},{a},{mid},{b}]"),
                    vec![(ix.psi_u[&(op, mid)], -one()), (near, one()), (ix.xn[&(op, a, b)], -one())],
                    Sense::Ge,
                    -one(),
                );
            }
            if b != terminal {
                m.add_constraint(
                    format!("xn.dest[{op},{a},{b}]"),
                    vec![(ix.xn[&(op, a, b)], one()), (ix.psi_u[&(op, b)], -one())],
                    Sense::Le,
                    S::zero(),
                );
            }
        }
        for &l in &adm {
            let d = ix.dm[&(op, l)];
            m.add_constraint(format!("dm.use[{op},{l}]"), vec![(d, one()), (ix.psi_u[&(op, l)], -one())], Sense::Le, S::zero());
            if !arch.level(l).double_buffer_capable {
                m.fix(format!("dm.cap[{op},{l}]"), d, 0);
            }
        }
        log::trace!("operand {op}: levels {}", op_list(&adm));
    }

    Ok(MappingModel { model: m, index: ix, problem: problem.clone() })
}

/// Log-domain tile bounds, candidate selection, sizes and capacities.
pub fn build_size_constraints<S: Scalar>(mm: &mut MappingModel<S>) -> Result<()> {
    let MappingModel { model: m, index: ix, problem } = mm;
    let arch = &problem.arch;
    let one = S::one;
    for op in Operand::ALL {
        let adm = arch.levels_for(op);
        let prec = problem.layer.precision(op) as u64;
        for l in arch.block_levels(op) {
            let rows = problem.table.candidates(l, op);
            if rows.is_empty() {
                return Err(Error::Infeasible(format!("no tile candidates for operand {op} at level {l}")));
            }
            for (tag, from) in [("S", l), ("T", l + 1)] {
                let sel: Vec<VarId> = (0..rows.len()).map(|r| m.add_binary(format!("V{tag}[{op},{l},{r}]"))).collect();
                gadgets::one_hot(m, &format!("v{}.one[{op},{l}]", tag.to_lowercase()), &sel);
                for &d in relevant_dims(op) {
                    let ub: i64 = problem.factors.of(d).iter().map(|f| scaled_log(*f)).sum();
                    let b = m.add_integer(format!("B{tag}[{op},{l},{d}]"), 0, ub);
                    let mut t: Vec<(VarId, S)> = vec![(b, one())];
                    for (k, f) in ix.factors.iter().enumerate().filter(|(_, f)| f.dim == d) {
                        let w = S::from_int(-scaled_log(f.value));
                        for &l2 in adm.iter().filter(|x| **x >= from) {
                            t.push((ix.xm[k][op.index()][l2], w));
                        }
                        for (u, axis) in arch.axes.iter().enumerate() {
                            if axis.covers(l) {
                                t.push((ix.xu[k][u], w));
                            }
                        }
                    }
                    m.add_constraint(format!("b{}[{op},{l},{d}]", tag.to_lowercase()), t, Sense::Eq, S::zero());
                    let mut link: Vec<(VarId, S)> =
                        sel.iter().zip(rows).map(|(v, row)| (*v, S::from_int(scaled_log(row.bounds[d.index()])))).collect();
                    link.push((b, -one()));
                    m.add_constraint(
                        format!("v{}.link[{op},{l},{d}]", tag.to_lowercase()),
                        link,
                        Sense::Range(S::from_int(-LOG_SLACK)),
                        S::from_int(LOG_SLACK),
                    );
                    if tag == "S" {
                        ix.bs.insert((op, l, d), b);
                    } else {
                        ix.bt.insert((op, l, d), b);
                    }
                }
                if tag == "S" {
                    ix.vs.insert((op, l), sel);
                } else {
                    ix.vt.insert((op, l), sel);
                }
            }

            let psi = ix.psi_u[&(op, l)];
            let sel = ix.vs[&(op, l)].clone();
            let mut zs = Vec::with_capacity(sel.len());
            for (r, v) in sel.iter().enumerate() {
                let z = m.add_binary(format!("ZS[{op},{l},{r}]"));
                gadgets::and(m, &format!("size.z[{op},{l},{r}]"), z, &BinExpr::var(*v), &BinExpr::var(psi));
                zs.push(z);
            }
            let max_bits = rows.iter().map(|r| r.elements * prec).max().unwrap_or(0);
            let size = m.add_integer(format!("SIZE[{op},{l}]"), 0, max_bits as i64);
            let mut t: Vec<(VarId, S)> = zs.iter().zip(rows).map(|(z, r)| (*z, S::from_int(-((r.elements * prec) as i64)))).collect();
            t.push((size, one()));
            m.add_constraint(format!("size[{op},{l}]"), t, Sense::Eq, S::zero());
            let dsize = m.add_integer(format!("DSIZE[{op},{l}]"), 0, max_bits as i64);
            gadgets::product_with_binary(m, &format!("dbl[{op},{l}]"), dsize, size, ix.dm[&(op, l)], max_bits as i64);
            ix.zs.insert((op, l), zs);
            ix.size.insert((op, l), size);
            ix.dsize.insert((op, l), dsize);
        }
    }
    for l in 0..arch.num_levels() {
        let t: Vec<(VarId, S)> = Operand::ALL
            .iter()
            .filter_map(|op| ix.size.get(&(*op, l)).map(|s| (*s, ix.dsize[&(*op, l)])))
            .flat_map(|(s, d)| [(s, one()), (d, one())])
            .collect();
        if !t.is_empty() {
            m.add_constraint(format!("cap[{l}]"), t, Sense::Le, S::from_int(arch.level(l).capacity_bits as i64));
        }
    }
    Ok(())
}

/// Upper bound on every latency quantity of the program.
pub fn latency_upper_bound(problem: &Problem, tmax_slot: u64) -> Result<u64> {
    let nf = problem.slot_count() as u64;
    let product = problem.factors.all().iter().try_fold(1u64, |acc, f| checked_mul(acc, f.value))?;
    let per = checked_mul(2 * tmax_slot, nf + 1)?
        .checked_add(problem.arch.l_mvm())
        .ok_or_else(|| Error::Build("latency bound overflows".into()))?;
    let u = checked_mul(per, product)?.checked_add(tmax_slot).ok_or_else(|| Error::Build("latency bound overflows".into()))?;
    if u > (1u64 << 52) {
        return Err(Error::Build(format!("latency bound {u} too large for exact coefficients; pass a latency cap")));
    }
    Ok(u)
}

/// Latency cap that keeps every solution whose objective is at least as good
/// as that of a known mapping with latency `known`. The locality term can
/// buy back at most `locality / latency * Σ m * capacity_m` cycles.
pub fn latency_cap_for<S: Scalar>(problem: &Problem, weights: &ObjectiveWeights<S>, known: u64) -> u64 {
    let arch = &problem.arch;
    let held: i128 = (1..arch.num_levels())
        .filter(|m| Operand::ALL.iter().any(|op| arch.block_levels(*op).contains(m)))
        .map(|m| m as i128 * arch.level(m).capacity_bits as i128)
        .sum();
    let slack = (weights.locality.to_exact() / weights.latency.to_exact()) * crate::scalar::ExactRatio::from_integer(held);
    known.saturating_add(slack.ceil().to_integer().clamp(0, u64::MAX as i128) as u64)
}

/// Transfer triggers, transfer cycles and the per-slot latency recursion.
pub fn build_latency_constraints<S: Scalar>(mm: &mut MappingModel<S>, latency_cap: Option<u64>) -> Result<()> {
    let MappingModel { model: m, index: ix, problem } = mm;
    let arch = &problem.arch;
    let nf = ix.factors.len();
    let one = S::one;
    let counts = problem.table.loop_counts.clone();
    let l_mvm = arch.l_mvm();

    // Per-slot transfer bound.
    let mut tmax: BTreeMap<(Operand, usize), u64> = BTreeMap::new();
    for op in Operand::ALL {
        let prec = problem.layer.precision(op) as u64;
        for l in arch.block_levels(op) {
            let bits = problem.table.candidates(l, op).iter().map(|r| r.elements * prec).max().unwrap_or(0);
            tmax.insert((op, l), ceil_div(bits, arch.level(l).bus_width_bits));
        }
    }
    let tmax_slot =
        Operand::ALL.iter().map(|op| tmax.iter().filter(|((o, _), _)| o == op).map(|(_, t)| *t).sum::<u64>()).max().unwrap_or(0);
    let structural = latency_upper_bound(problem, tmax_slot);
    let ub = match (latency_cap, structural) {
        (Some(cap), Ok(s)) => cap.min(s),
        (Some(cap), Err(_)) => cap,
        (None, s) => s?,
    };
    if ub < l_mvm {
        return Err(Error::Infeasible(format!("latency cap {ub} is below the macro latency {l_mvm}")));
    }
    let ub = ub as i64;

    ix.vf = (0..nf).map(|i| counts.iter().map(|v| m.add_binary(format!("VF[{i},{v}]"))).collect()).collect();
    ix.l = (0..=nf).map(|i| m.add_integer(format!("L[{i}]"), l_mvm as i64, ub)).collect();
    ix.p = (0..=nf).map(|i| Operand::ALL.map(|op| m.add_integer(format!("P[{i},{op}]"), l_mvm as i64, ub))).collect();
    m.fix("bound.l", ix.l[nf], l_mvm as i64);
    for op in Operand::ALL {
        m.fix(format!("bound.p[{op}]"), ix.p[nf][op.index()], l_mvm as i64);
    }

    for i in 0..nf {
        gadgets::one_hot(m, &format!("vf.one[{i}]"), &ix.vf[i]);
        let mut t: Vec<(VarId, S)> = ix.vf[i].iter().zip(&counts).map(|(v, c)| (*v, S::from_int(*c as i64))).collect();
        for (k, f) in ix.factors.iter().enumerate() {
            t.push((ix.xl[k][i], S::from_int(-(f.value as i64))));
        }
        t.push((ix.psi_l[i], one()));
        m.add_constraint(format!("vf.link[{i}]"), t, Sense::Eq, one());
    }

    for op in Operand::ALL {
        let adm = arch.levels_for(op);
        let blk = arch.block_levels(op);
        let rel: Vec<usize> = ix.factors.iter().enumerate().filter(|(_, f)| is_relevant(op, f.dim)).map(|(k, _)| k).collect();
        for i in 0..nf {
            for &l in &blk {
                let g = m.add_binary(format!("G[{i},{op},{l}]"));
                let s = m.add_binary(format!("S[{i},{op},{l}]"));
                ix.gate.insert((i, op, l), g);
                ix.seen.insert((i, op, l), s);
            }
        }
        for i in 0..nf {
            for &l in &blk {
                let relevant = BinExpr::sum(rel.iter().map(|k| ix.xl[*k][i]).collect());
                let within = BinExpr::sum(adm.iter().filter(|x| **x <= l).map(|x| ix.xz[&(i, op, *x)]).collect());
                gadgets::and(m, &format!("rel[{i},{op},{l}]"), ix.gate[&(i, op, l)], &relevant, &within);
                // S is the suffix-OR of G over slots i.. (inner side).
                let (s, g) = (ix.seen[&(i, op, l)], ix.gate[&(i, op, l)]);
                let inner = (i + 1 < nf).then(|| ix.seen[&(i + 1, op, l)]);
                m.add_constraint(format!("seen.g[{i},{op},{l}]"), vec![(s, one()), (g, -one())], Sense::Ge, S::zero());
                let mut t = vec![(s, one()), (g, -one())];
                if let Some(si) = inner {
                    m.add_constraint(format!("seen.in[{i},{op},{l}]"), vec![(s, one()), (si, -one())], Sense::Ge, S::zero());
                    t.push((si, -one()));
                }
                m.add_constraint(format!("seen.le[{i},{op},{l}]"), t, Sense::Le, S::zero());
                let fire = m.add_binary(format!("R[{i},{op},{l}]"));
                gadgets::and(m, &format!("fire[{i},{op},{l}]"), fire, &BinExpr::diff(s, inner), &BinExpr::var(ix.psi_u[&(op, l)]));
                let fd = m.add_binary(format!("RD[{i},{op},{l}]"));
                gadgets::and(m, &format!("fired[{i},{op},{l}]"), fd, &BinExpr::var(fire), &BinExpr::var(ix.dm[&(op, l)]));
                ix.fire.insert((i, op, l), fire);
                ix.fire_double.insert((i, op, l), fd);

                let tc = m.add_integer(format!("TC[{i},{op},{l}]"), 0, tmax[&(op, l)] as i64);
                let prec = problem.layer.precision(op) as u64;
                let mut t: Vec<(VarId, S)> = vec![(tc, S::from_int(arch.level(l).bus_width_bits as i64))];
                for (v, row) in ix.vt[&(op, l)].iter().zip(problem.table.candidates(l, op)) {
                    t.push((*v, S::from_int(-((row.elements * prec) as i64))));
                }
                m.add_indicator(format!("xfer.t[{i},{op},{l}]"), vec![Literal::pos(fire)], t, Sense::Ge, S::zero());
                ix.tc.insert((i, op, l), tc);
            }
            let slot_max: i64 = blk.iter().map(|l| tmax[&(op, *l)] as i64).sum();
            let t = m.add_integer(format!("T[{i},{op}]"), 0, slot_max.min(ub));
            let mut terms: Vec<(VarId, S)> = blk.iter().map(|l| (ix.tc[&(i, op, *l)], -one())).collect();
            terms.push((t, one()));
            m.add_constraint(format!("t.sum[{i},{op}]"), terms, Sense::Eq, S::zero());
            ix.t.insert((i, op), t);

            let e = m.add_binary(format!("E[{i},{op}]"));
            let dl = m.add_binary(format!("DL[{i},{op}]"));
            let rs = m.add_binary(format!("RS[{i},{op}]"));
            let fires: Vec<VarId> = blk.iter().map(|l| ix.fire[&(i, op, *l)]).collect();
            let doubles: Vec<VarId> = blk.iter().map(|l| ix.fire_double[&(i, op, *l)]).collect();
            gadgets::or(m, &format!("e[{i},{op}]"), e, &fires);
            gadgets::or(m, &format!("dl[{i},{op}]"), dl, &doubles);
            m.add_constraint(format!("rs[{i},{op}]"), vec![(rs, one()), (e, -one()), (dl, one())], Sense::Eq, S::zero());
            ix.transfer.insert((i, op), e);
            ix.double_transfer.insert((i, op), dl);
            ix.single_transfer.insert((i, op), rs);

            let a = m.add_integer(format!("A[{i},{op}]"), 0, ub);
            let b = m.add_integer(format!("BX[{i},{op}]"), 0, ub);
            gadgets::max_of(m, &format!("amax[{i},{op}]"), a, &[t, ix.p[i + 1][op.index()]]);
            gadgets::max_of(m, &format!("bmax[{i},{op}]"), b, &[t, ix.l[i]]);
            ix.amax.insert((i, op), a);
            ix.bmax.insert((i, op), b);
        }
    }

    for i in 0..nf {
        let (li, lo) = (ix.l[i], ix.l[i + 1]);
        let act = ix.psi_l[i];
        m.add_indicator(format!("idle.l[{i}]"), vec![Literal::neg(act)], vec![(li, one()), (lo, -one())], Sense::Eq, S::zero());
        m.add_constraint(format!("mono.l[{i}]"), vec![(li, one()), (lo, -one())], Sense::Ge, S::zero());
        if i + 1 < nf {
            for (v, c) in ix.vf[i + 1].iter().zip(&counts).filter(|(_, c)| **c >= 2) {
                m.add_indicator(
                    format!("crit[{i},{c}]"),
                    vec![Literal::pos(act), Literal::pos(*v)],
                    vec![(li, one()), (lo, S::from_int(-(*c as i64)))],
                    Sense::Ge,
                    S::zero(),
                );
            }
        }
        for op in Operand::ALL {
            let (p, pi) = (ix.p[i][op.index()], ix.p[i + 1][op.index()]);
            let t = ix.t[&(i, op)];
            let (e, dl, rs) = (ix.transfer[&(i, op)], ix.double_transfer[&(i, op)], ix.single_transfer[&(i, op)]);
            let (a, b) = (ix.amax[&(i, op)], ix.bmax[&(i, op)]);
            m.add_indicator(format!("idle.p[{i},{op}]"), vec![Literal::neg(act)], vec![(p, one()), (pi, -one())], Sense::Eq, S::zero());
            m.add_constraint(format!("mono.p[{i},{op}]"), vec![(p, one()), (pi, -one())], Sense::Ge, S::zero());
            if op == Operand::O {
                m.add_constraint(format!("floor.o[{i}]"), vec![(p, one()), (li, -one())], Sense::Ge, S::zero());
            }
            m.add_indicator(format!("comb.p[{i},{op}]"), vec![Literal::pos(act)], vec![(li, one()), (pi, -one())], Sense::Ge, S::zero());
            m.add_indicator(
                format!("comb.s[{i},{op}]"),
                vec![Literal::pos(rs)],
                vec![(li, one()), (t, -one()), (pi, -one())],
                Sense::Ge,
                S::zero(),
            );
            m.add_constraint(format!("comb.t[{i},{op}]"), vec![(li, one()), (t, -one())], Sense::Ge, S::zero());

            let vars = RowVars { p, l: li, p_inner: pi, t, transfer: e, double: dl, single: rs, max_tp: a, max_tl: b };
            buffer_rows(m, &format!("{i},{op}"), op, &vars, &ix.vf[i], &counts);
        }
    }
    Ok(())
}

/// Variables of one (slot, operand) pair that the buffering rows relate.
#[derive(Clone, Copy, Debug)]
pub struct RowVars {
    pub p: VarId,
    pub l: VarId,
    pub p_inner: VarId,
    pub t: VarId,
    pub transfer: VarId,
    pub double: VarId,
    pub single: VarId,
    /// `max(T, P_inner)`.
    pub max_tp: VarId,
    /// `max(T, L)`.
    pub max_tl: VarId,
}

/// Emits the per-row lower bounds on `P`, one set per loop-count candidate
/// `counts[k]` selected by `vf[k]`.
pub fn buffer_rows<S: Scalar>(m: &mut MipModel<S>, tag: &str, op: Operand, x: &RowVars, vf: &[VarId], counts: &[u64]) {
    let one = S::one;
    let RowVars { p, l: li, p_inner: pi, t, transfer: e, double: dl, single: rs, max_tp: a, max_tl: b } = *x;
    for (vf, c) in vf.iter().zip(counts).filter(|(_, c)| **c >= 2) {
        let v = *c as i64;
        let on = Literal::pos(*vf);
        let row = |sel: Literal| vec![on, sel];
        m.add_indicator(
            format!("row[{tag},none,{v}]"),
            row(Literal::neg(e)),
            vec![(p, one()), (li, S::from_int(-(v - 1))), (pi, -one())],
            Sense::Ge,
            S::zero(),
        );
        if op == Operand::O {
            m.add_indicator(
                format!("row[{tag},single,{v}]"),
                row(Literal::pos(rs)),
                vec![(p, one()), (li, S::from_int(-(v - 1))), (t, S::from_int(-2)), (pi, -one())],
                Sense::Ge,
                S::zero(),
            );
            m.add_indicator(
                format!("row[{tag},double,{v}]"),
                row(Literal::pos(dl)),
                vec![(p, one()), (li, S::from_int(-(v - 2))), (t, -one()), (b, -one()), (a, -one())],
                Sense::Ge,
                S::zero(),
            );
            m.add_indicator(
                format!("cut[{tag},{v}]"),
                vec![on],
                vec![(p, one()), (li, S::from_int(-(v - 1))), (pi, -one())],
                Sense::Ge,
                S::zero(),
            );
        } else {
            m.add_indicator(
                format!("row[{tag},single,{v}]"),
                row(Literal::pos(rs)),
                vec![(p, one()), (li, S::from_int(-(v - 2))), (t, S::from_int(-2)), (pi, -one())],
                Sense::Ge,
                S::zero(),
            );
            if v >= 3 {
                m.add_indicator(
                    format!("row[{tag},double,{v}]"),
                    row(Literal::pos(dl)),
                    vec![(p, one()), (li, S::from_int(-(v - 3))), (t, S::from_int(-2)), (a, -one())],
                    Sense::Ge,
                    S::zero(),
                );
            } else {
                m.add_indicator(
                    format!("row[{tag},double.clamp,{v}]"),
                    row(Literal::pos(dl)),
                    vec![(p, one()), (t, -one()), (pi, -one())],
                    Sense::Ge,
                    S::zero(),
                );
            }
            m.add_indicator(
                format!("row[{tag},double.bw,{v}]"),
                row(Literal::pos(dl)),
                vec![(p, one()), (t, S::from_int(-v))],
                Sense::Ge,
                S::zero(),
            );
            m.add_indicator(
                format!("cut[{tag},{v}]"),
                vec![on],
                vec![(p, one()), (li, S::from_int(-(v - 3).max(0))), (pi, -one())],
                Sense::Ge,
                S::zero(),
            );
        }
    }
}

/// `Λ >= P[0, λ]` and the weighted objective.
pub fn build_objective<S: Scalar>(mm: &mut MappingModel<S>, weights: &ObjectiveWeights<S>) -> Result<()> {
    weights.validate()?;
    let MappingModel { model: m, index: ix, .. } = mm;
    let ub = m.vars[ix.l[0]].ub.to_i64().unwrap_or(i64::MAX);
    let lmvm = m.vars[ix.l[0]].lb.to_i64().unwrap_or(0);
    let lam = m.add_integer("LAMBDA", lmvm, ub);
    for op in Operand::ALL {
        m.add_constraint(format!("lam[{op}]"), vec![(lam, S::one()), (ix.p[0][op.index()], -S::one())], Sense::Ge, S::zero());
    }
    let mut obj = vec![(lam, weights.latency)];
    if !weights.locality.is_zero() {
        for ((_, l), s) in &ix.size {
            if *l > 0 {
                obj.push((*s, -weights.locality * S::from_int(*l as i64)));
            }
        }
    }
    m.set_objective(obj);
    ix.lambda = Some(lam);
    Ok(())
}

pub fn build_model<S: Scalar>(problem: &Problem, opts: &BuildOptions<S>) -> Result<MappingModel<S>> {
    let mut mm = build_mapping_constraints(problem)?;
    build_size_constraints(&mut mm)?;
    build_latency_constraints(&mut mm, opts.latency_cap)?;
    build_objective(&mut mm, &opts.weights)?;
    log::debug!("{}", mm.model);
    Ok(mm)
}

impl<S: Scalar> MappingModel<S> {
    pub fn lambda(&self) -> VarId {
        self.index.lambda.expect("objective built")
    }

    /// Reads a mapping out of a feasible assignment.
    pub fn decode(&self, values: &[i64]) -> Result<Mapping> {
        self.model.check(values)?;
        let ix = &self.index;
        let arch = &self.problem.arch;
        let mut temporal = Vec::new();
        let mut spatial = Vec::new();
        for (k, f) in ix.factors.iter().enumerate() {
            for (i, v) in ix.xl[k].iter().enumerate() {
                if values[*v] == 1 {
                    temporal.push(TemporalLoop { slot: i, dim: f.dim, index: f.index, value: f.value });
                }
            }
            for (u, v) in ix.xu[k].iter().enumerate() {
                if values[*v] == 1 {
                    spatial.push(SpatialLoop { axis: u, dim: f.dim, index: f.index, value: f.value });
                }
            }
        }
        temporal.sort_by_key(|t| t.slot);
        let mut loop_blocks = Vec::new();
        let mut buffering = Vec::new();
        let mut sizes = Vec::new();
        for op in Operand::ALL {
            for l in arch.block_levels(op) {
                let loops: Vec<(Dim, usize)> = temporal
                    .iter()
                    .filter(|t| {
                        let k = ix.factors.iter().position(|f| f.dim == t.dim && f.index == t.index).expect("known factor");
                        values[ix.xm[k][op.index()][l]] == 1
                    })
                    .map(|t| (t.dim, t.index))
                    .collect();
                if values[ix.psi_u[&(op, l)]] == 1 {
                    loop_blocks.push(LoopBlock { operand: op, level: l, loops });
                    buffering.push(Buffering { operand: op, level: l, double: values[ix.dm[&(op, l)]] == 1 });
                    sizes.push(DataSize { operand: op, level: l, bits: values[ix.size[&(op, l)]] as u64 });
                }
            }
        }
        let paths =
            ix.xn.iter().filter(|(_, v)| values[**v] == 1).map(|((op, a, b), _)| Transfer { operand: *op, from: *a, to: *b }).collect();
        let operand_latency = Operand::ALL.iter().map(|op| (*op, values[ix.p[0][op.index()]] as u64)).collect();
        Ok(Mapping {
            slot_count: ix.factors.len(),
            temporal,
            spatial,
            loop_blocks,
            buffering,
            paths,
            sizes,
            predicted: Some(Prediction {
                operand_latency,
                latency: values[self.lambda()] as u64,
                objective: self.model.objective_value(values).to_f64_lossy(),
            }),
        })
    }

    /// Values of the structural variables that encode `mapping`.
    pub fn structural_values(&self, mapping: &Mapping) -> Result<Vec<(VarId, i64)>> {
        let ix = &self.index;
        let arch = &self.problem.arch;
        let pos = |d: Dim, i: usize| {
            ix.factors.iter().position(|f| f.dim == d && f.index == i).ok_or_else(|| Error::Structure(format!("unknown factor {d}{i}")))
        };
        let mut out: BTreeMap<VarId, i64> = ix.structural().into_iter().map(|v| (v, 0)).collect();
        for t in &mapping.temporal {
            let k = pos(t.dim, t.index)?;
            let v = ix.xl[k].get(t.slot).ok_or_else(|| Error::Structure(format!("slot {} out of range", t.slot)))?;
            out.insert(*v, 1);
        }
        for s in &mapping.spatial {
            let k = pos(s.dim, s.index)?;
            let v = ix.xu[k].get(s.axis).ok_or_else(|| Error::Structure(format!("unknown axis {}", s.axis)))?;
            out.insert(*v, 1);
        }
        for b in &mapping.loop_blocks {
            if b.level >= arch.num_levels() {
                return Err(Error::Structure(format!("unknown level {}", b.level)));
            }
            for (d, i) in &b.loops {
                out.insert(ix.xm[pos(*d, *i)?][b.operand.index()][b.level], 1);
            }
        }
        for b in mapping.buffering.iter().filter(|b| b.double) {
            let v = ix
                .dm
                .get(&(b.operand, b.level))
                .ok_or_else(|| Error::Structure(format!("level {} does not hold {}", b.level, b.operand)))?;
            out.insert(*v, 1);
        }
        Ok(out.into_iter().collect())
    }
}
