// SPDX-License-Identifier: Apache-2.0

//! Concrete dataflow mappings, the problem bundle they are defined against,
//! and a feasibility audit that works from the mapping alone.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::arch::ArchSpec;
use crate::enumeration::{is_relevant, CandidateTable, DEFAULT_CANDIDATE_CAP};
use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::workload::{Dim, FactorRef, FactorSet, FactorizationConfig, LayerShape, Operand};

/// Everything a mapping of one layer is defined against.
#[derive(Clone, Debug, PartialEq)]
pub struct Problem {
    pub layer: LayerShape,
    pub arch: ArchSpec,
    pub factors: FactorSet,
    pub table: CandidateTable,
}

impl Problem {
    pub fn new(layer: LayerShape, arch: ArchSpec, factors: FactorSet) -> Result<Self> {
        Self::with_cap(layer, arch, factors, DEFAULT_CANDIDATE_CAP)
    }

    pub fn with_cap(layer: LayerShape, arch: ArchSpec, factors: FactorSet, cap: usize) -> Result<Self> {
        arch.validate()?;
        factors.check_against(&layer)?;
        let table = CandidateTable::build(&layer, &factors, &arch, cap)?;
        Ok(Problem { layer, arch, factors, table })
    }

    pub fn factorize<S: Scalar>(layer: LayerShape, arch: ArchSpec, cfg: &FactorizationConfig<S>) -> Result<Self> {
        let factors = FactorSet::from_layer(&layer, cfg)?;
        Self::new(layer, arch, factors)
    }

    pub fn slot_count(&self) -> usize {
        self.factors.len()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct TemporalLoop {
    pub slot: usize,
    pub dim: Dim,
    pub index: usize,
    pub value: u64,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct SpatialLoop {
    pub axis: usize,
    pub dim: Dim,
    pub index: usize,
    pub value: u64,
}

/// Temporal loops `(dim, index)` owned by `operand` at `level`.
#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub struct LoopBlock {
    pub operand: Operand,
    pub level: usize,
    pub loops: Vec<(Dim, usize)>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Buffering {
    pub operand: Operand,
    pub level: usize,
    pub double: bool,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct Transfer {
    pub operand: Operand,
    pub from: usize,
    pub to: usize,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub struct DataSize {
    pub operand: Operand,
    pub level: usize,
    pub bits: u64,
}

/// Values the optimizer claims for this mapping.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Prediction {
    pub operand_latency: BTreeMap<Operand, u64>,
    pub latency: u64,
    pub objective: f64,
}

/// A complete dataflow for one layer. Temporal slots are numbered outer to
/// inner over `0..slot_count`; occupied slots form a suffix.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Mapping {
    pub slot_count: usize,
    pub temporal: Vec<TemporalLoop>,
    pub spatial: Vec<SpatialLoop>,
    pub loop_blocks: Vec<LoopBlock>,
    pub buffering: Vec<Buffering>,
    pub paths: Vec<Transfer>,
    pub sizes: Vec<DataSize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub predicted: Option<Prediction>,
}

/// Free choices that determine a mapping; everything else is derived.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct MappingChoice {
    /// Temporal factors, outermost first.
    pub order: Vec<FactorRef>,
    pub spatial: Vec<(FactorRef, usize)>,
    /// Per operand (by [`Operand::index`]), the block level of each entry of `order`.
    pub block_level: [Vec<usize>; 3],
    /// Per operand, the double-buffered levels.
    pub double: [BTreeSet<usize>; 3],
}

impl MappingChoice {
    /// Every temporal loop in the outermost block of each operand, single buffered.
    pub fn outermost(problem: &Problem, order: Vec<FactorRef>, spatial: Vec<(FactorRef, usize)>) -> Self {
        let block_level = Operand::ALL.map(|op| vec![problem.arch.block_levels(op)[0]; order.len()]);
        MappingChoice { order, spatial, block_level, double: Default::default() }
    }
}

/// Derived per-operand structure of a mapping.
#[derive(Clone, Debug, PartialEq)]
pub struct OperandView {
    /// Block level per slot; `None` for empty slots.
    pub slot_level: Vec<Option<usize>>,
    /// Levels owning at least one loop, outermost first.
    pub used: Vec<usize>,
    pub double: BTreeSet<usize>,
}

impl Mapping {
    pub fn from_choice(problem: &Problem, choice: &MappingChoice) -> Result<Mapping> {
        let n = problem.slot_count();
        let k = choice.order.len();
        if k > n {
            return Err(Error::Structure(format!("{k} temporal loops exceed {n} slots")));
        }
        let first = n - k;
        let temporal: Vec<TemporalLoop> = choice
            .order
            .iter()
            .enumerate()
            .map(|(p, f)| TemporalLoop { slot: first + p, dim: f.dim, index: f.index, value: f.value })
            .collect();
        let spatial: Vec<SpatialLoop> =
            choice.spatial.iter().map(|(f, u)| SpatialLoop { axis: *u, dim: f.dim, index: f.index, value: f.value }).collect();
        let mut loop_blocks = Vec::new();
        let mut buffering = Vec::new();
        for op in Operand::ALL {
            let levels = &choice.block_level[op.index()];
            if levels.len() != k {
                return Err(Error::Structure(format!("operand {op}: {} block levels for {k} loops", levels.len())));
            }
            let used: BTreeSet<usize> = levels.iter().copied().collect();
            for m in &used {
                let loops = choice.order.iter().zip(levels).filter(|(_, l)| *l == m).map(|(f, _)| (f.dim, f.index)).collect();
                loop_blocks.push(LoopBlock { operand: op, level: *m, loops });
                buffering.push(Buffering { operand: op, level: *m, double: choice.double[op.index()].contains(m) });
            }
        }
        let mut mapping =
            Mapping { slot_count: n, temporal, spatial, loop_blocks, buffering, paths: Vec::new(), sizes: Vec::new(), predicted: None };
        mapping.derive_paths_and_sizes(problem)?;
        Ok(mapping)
    }

    /// Recomputes `paths` and `sizes` from the loop blocks.
    pub fn derive_paths_and_sizes(&mut self, problem: &Problem) -> Result<()> {
        let mut paths = Vec::new();
        let mut sizes = Vec::new();
        for op in Operand::ALL {
            let view = self.operand_view(op, &problem.arch)?;
            let terminal = problem.arch.terminal_level(op);
            for (j, m) in view.used.iter().enumerate() {
                let to = view.used.get(j + 1).copied().unwrap_or(terminal);
                paths.push(Transfer { operand: op, from: *m, to });
                let bounds = self.tile_bounds(op, *m, &problem.arch, &view);
                let bits = problem.layer.tile_elements(op, &bounds) * problem.layer.precision(op) as u64;
                sizes.push(DataSize { operand: op, level: *m, bits });
            }
        }
        self.paths = paths;
        self.sizes = sizes;
        Ok(())
    }

    pub fn operand_view(&self, op: Operand, arch: &ArchSpec) -> Result<OperandView> {
        let mut level_of: BTreeMap<(Dim, usize), usize> = BTreeMap::new();
        for b in self.loop_blocks.iter().filter(|b| b.operand == op) {
            if b.level >= arch.num_levels() {
                return Err(Error::Structure(format!("operand {op}: unknown level {}", b.level)));
            }
            for l in &b.loops {
                if level_of.insert(*l, b.level).is_some() {
                    return Err(Error::Structure(format!("operand {op}: loop {}{} in two blocks", l.0, l.1)));
                }
            }
        }
        let mut slot_level = vec![None; self.slot_count];
        for t in &self.temporal {
            if t.slot >= self.slot_count {
                return Err(Error::Structure(format!("slot {} out of range", t.slot)));
            }
            let m = level_of
                .get(&(t.dim, t.index))
                .copied()
                .ok_or_else(|| Error::Structure(format!("operand {op}: loop {}{} has no block", t.dim, t.index)))?;
            slot_level[t.slot] = Some(m);
        }
        let used: BTreeSet<usize> = self.loop_blocks.iter().filter(|b| b.operand == op && !b.loops.is_empty()).map(|b| b.level).collect();
        let double = self.buffering.iter().filter(|b| b.operand == op && b.double).map(|b| b.level).collect();
        Ok(OperandView { slot_level, used: used.into_iter().collect(), double })
    }

    /// Loop values per slot; empty slots count 1.
    pub fn slot_counts(&self) -> Vec<u64> {
        let mut n = vec![1u64; self.slot_count];
        for t in &self.temporal {
            if t.slot < self.slot_count {
                n[t.slot] = t.value;
            }
        }
        n
    }

    pub fn temporal_at(&self, slot: usize) -> Option<&TemporalLoop> {
        self.temporal.iter().find(|t| t.slot == slot)
    }

    fn spatial_bounds(&self, arch: &ArchSpec, level: usize, bounds: &mut [u64; 7]) {
        for s in &self.spatial {
            if arch.axes.get(s.axis).is_some_and(|a| a.covers(level)) {
                bounds[s.dim.index()] *= s.value;
            }
        }
    }

    /// Tile of `op` resident at `level`: loops of blocks at or below it plus
    /// spatial loops of axes covering it.
    pub fn tile_bounds(&self, op: Operand, level: usize, arch: &ArchSpec, view: &OperandView) -> [u64; 7] {
        self.bounds_from(op, level, level, arch, view)
    }

    /// Tile of `op` moved out of `level` per transfer.
    pub fn transfer_bounds(&self, op: Operand, level: usize, arch: &ArchSpec, view: &OperandView) -> [u64; 7] {
        self.bounds_from(op, level + 1, level, arch, view)
    }

    fn bounds_from(&self, op: Operand, from: usize, axis_level: usize, arch: &ArchSpec, view: &OperandView) -> [u64; 7] {
        let mut bounds = [1u64; 7];
        for t in &self.temporal {
            if view.slot_level[t.slot].is_some_and(|m| m >= from) {
                bounds[t.dim.index()] *= t.value;
            }
        }
        self.spatial_bounds(arch, axis_level, &mut bounds);
        for d in Dim::ALL {
            if !is_relevant(op, d) {
                bounds[d.index()] = 1;
            }
        }
        bounds
    }

    /// Innermost slot whose loop is relevant to `op` and sits in a block at or
    /// above `level`: the slot whose iterations trigger transfers out of `level`.
    pub fn transfer_slot(&self, op: Operand, level: usize, view: &OperandView) -> Option<usize> {
        self.temporal.iter().filter(|t| is_relevant(op, t.dim) && view.slot_level[t.slot].is_some_and(|m| m <= level)).map(|t| t.slot).max()
    }

    pub fn size_of(&self, op: Operand, level: usize) -> u64 {
        self.sizes.iter().find(|s| s.operand == op && s.level == level).map_or(0, |s| s.bits)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("mapping serializes")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::Structure(e.to_string()))
    }

    /// Structural identity, ignoring the prediction.
    pub fn same_dataflow(&self, other: &Mapping) -> bool {
        let norm = |m: &Mapping| {
            let mut c = m.clone();
            c.predicted = None;
            c.temporal.sort();
            c.spatial.sort();
            c.loop_blocks.iter_mut().for_each(|b| b.loops.sort());
            c.loop_blocks.retain(|b| !b.loops.is_empty());
            c.loop_blocks.sort();
            c.buffering.sort();
            c.paths.sort();
            c.sizes.sort();
            c
        };
        norm(self) == norm(other)
    }
}

impl fmt::Display for Mapping {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let mut temporal = self.temporal.clone();
        temporal.sort();
        for t in &temporal {
            write!(f, "for {}{}[{}] ", t.dim, t.index, t.value)?;
        }
        for s in &self.spatial {
            write!(f, "par@{} {}{}[{}] ", s.axis, s.dim, s.index, s.value)?;
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Violation {
    pub rule: String,
    pub detail: String,
}

impl Violation {
    fn new(rule: &str, detail: impl Into<String>) -> Self {
        Violation { rule: rule.to_string(), detail: detail.into() }
    }
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}: {}", self.rule, self.detail)
    }
}

/// Audits a mapping without the integer model. Rules: `uniqueness`, `slots`,
/// `spatial`, `blocks`, `paths`, `buffering`, `sizes`, `capacity`, `candidates`.
pub fn verify_mapping(mapping: &Mapping, problem: &Problem) -> Vec<Violation> {
    let mut out = Vec::new();
    let arch = &problem.arch;
    let n = problem.slot_count();

    // Uniqueness of every factor across temporal and spatial loops.
    let expected: BTreeMap<(Dim, usize), u64> = problem.factors.all().into_iter().map(|f| ((f.dim, f.index), f.value)).collect();
    let mut seen: BTreeMap<(Dim, usize), usize> = BTreeMap::new();
    let placed =
        mapping.temporal.iter().map(|t| (t.dim, t.index, t.value)).chain(mapping.spatial.iter().map(|s| (s.dim, s.index, s.value)));
    for (d, i, v) in placed {
        match expected.get(&(d, i)) {
            None => out.push(Violation::new("uniqueness", format!("unknown factor {d}{i}"))),
            Some(e) if *e != v => out.push(Violation::new("uniqueness", format!("factor {d}{i} has value {v}, expected {e}"))),
            _ => {}
        }
        *seen.entry((d, i)).or_default() += 1;
    }
    for (d, i) in expected.keys() {
        match seen.get(&(*d, *i)).copied().unwrap_or(0) {
            1 => {}
            c => out.push(Violation::new("uniqueness", format!("factor {d}{i} placed {c} times"))),
        }
    }

    // Occupied slots form a suffix, one loop each.
    if mapping.slot_count != n {
        out.push(Violation::new("slots", format!("slot count {} differs from {n}", mapping.slot_count)));
    }
    let slots: BTreeSet<usize> = mapping.temporal.iter().map(|t| t.slot).collect();
    if slots.len() != mapping.temporal.len() {
        out.push(Violation::new("slots", "two loops share a slot"));
    }
    let k = mapping.temporal.len();
    if slots.iter().any(|s| *s >= n) || (k <= n && slots != (n - k..n).collect()) {
        out.push(Violation::new("slots", "occupied slots are not the innermost ones"));
    }

    // Spatial legality and axis capacity.
    let mut axis_product: BTreeMap<usize, u64> = BTreeMap::new();
    for s in &mapping.spatial {
        match arch.axes.get(s.axis) {
            None => out.push(Violation::new("spatial", format!("unknown axis {}", s.axis))),
            Some(a) => {
                if !a.allows(s.dim) {
                    out.push(Violation::new("spatial", format!("axis {} does not allow {}", a.name, s.dim)));
                }
                *axis_product.entry(s.axis).or_insert(1) *= s.value;
            }
        }
    }
    for (u, p) in &axis_product {
        if *p > arch.axes[*u].size {
            out.push(Violation::new("spatial", format!("axis {} unrolls {p} > {}", arch.axes[*u].name, arch.axes[*u].size)));
        }
    }
    if !out.is_empty() {
        return out;
    }

    let mut usage: BTreeMap<usize, u64> = BTreeMap::new();
    let mut derived = mapping.clone();
    if let Err(e) = derived.derive_paths_and_sizes(problem) {
        out.push(Violation::new("blocks", e.to_string()));
        return out;
    }
    for op in Operand::ALL {
        let view = match mapping.operand_view(op, arch) {
            Ok(v) => v,
            Err(e) => {
                out.push(Violation::new("blocks", e.to_string()));
                continue;
            }
        };
        let allowed = arch.block_levels(op);
        for m in &view.used {
            if !allowed.contains(m) {
                out.push(Violation::new("blocks", format!("operand {op} cannot own a block at level {m}")));
            }
        }
        let active: Vec<usize> = view.slot_level.iter().flatten().copied().collect();
        if active.windows(2).any(|w| w[0] > w[1]) {
            out.push(Violation::new("blocks", format!("operand {op}: blocks are not nested outer to inner")));
        }

        // One outgoing transfer per used level, to the next used level or the terminal.
        let candidates = arch.operand_path_candidates(op).unwrap_or_default();
        let mine: Vec<&Transfer> = mapping.paths.iter().filter(|p| p.operand == op).collect();
        let want: Vec<&Transfer> = derived.paths.iter().filter(|p| p.operand == op).collect();
        let mut a: Vec<Transfer> = mine.iter().map(|t| **t).collect();
        let mut b: Vec<Transfer> = want.iter().map(|t| **t).collect();
        a.sort();
        b.sort();
        if a != b {
            out.push(Violation::new("paths", format!("operand {op}: transfers {a:?} differ from {b:?}")));
        }
        for t in &b {
            if !candidates.contains(&(t.from, t.to)) {
                out.push(Violation::new(
                    "paths",
                    format!("operand {op}: transfer {}->{} skips a level that cannot be bypassed", t.from, t.to),
                ));
            }
        }

        for buf in mapping.buffering.iter().filter(|b| b.operand == op) {
            if buf.double && !view.used.contains(&buf.level) {
                out.push(Violation::new("buffering", format!("operand {op}: unused level {} double buffered", buf.level)));
            }
            if buf.double && !arch.levels.get(buf.level).is_some_and(|l| l.double_buffer_capable) {
                out.push(Violation::new("buffering", format!("level {} cannot double buffer", buf.level)));
            }
        }

        for m in &view.used {
            let recorded = mapping.size_of(op, *m);
            let actual = derived.size_of(op, *m);
            if recorded != actual {
                out.push(Violation::new("sizes", format!("operand {op} at level {m}: {recorded} bits recorded, {actual} actual")));
            }
            let factor = if view.double.contains(m) { 2 } else { 1 };
            *usage.entry(*m).or_default() += factor * actual;
            let stored = mapping.tile_bounds(op, *m, arch, &view);
            if problem.table.find(*m, op, &stored).is_none() {
                out.push(Violation::new("candidates", format!("operand {op} at level {m}: tile {stored:?} not enumerated")));
            }
            let moved = mapping.transfer_bounds(op, *m, arch, &view);
            if problem.table.find(*m, op, &moved).is_none() {
                out.push(Violation::new("candidates", format!("operand {op} at level {m}: transfer {moved:?} not enumerated")));
            }
        }
    }
    for (m, bits) in usage {
        if bits > arch.level(m).capacity_bits {
            out.push(Violation::new("capacity", format!("level {m} holds {bits} > {} bits", arch.level(m).capacity_bits)));
        }
    }
    out
}
