// SPDX-License-Identifier: Apache-2.0

//! Accelerator description: memory hierarchy, spatial axes, macro parameters.
//!
//! Level `0` is the outermost (off-chip) memory; larger indices are closer to
//! the macros. A spatial axis multiplies the data held at every level whose
//! index does not exceed its `attach_level`.

use std::collections::BTreeSet;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::workload::{Dim, Operand};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MemoryLevel {
    pub id: usize,
    pub name: String,
    pub capacity_bits: u64,
    pub bus_width_bits: u64,
    pub operands: Vec<Operand>,
    pub double_buffer_capable: bool,
    pub bypassable: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub read_energy_pj: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub write_energy_pj: Option<f64>,
}

impl MemoryLevel {
    pub fn admits(&self, op: Operand) -> bool {
        self.operands.contains(&op)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SpatialAxis {
    pub id: usize,
    pub name: String,
    pub size: u64,
    pub allowed_dims: Vec<Dim>,
    pub attach_level: usize,
}

impl SpatialAxis {
    pub fn allows(&self, d: Dim) -> bool {
        self.allowed_dims.contains(&d)
    }

    /// Whether factors unrolled on this axis count toward data held at `level`.
    pub fn covers(&self, level: usize) -> bool {
        self.attach_level >= level
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MacroSpec {
    pub rows: u64,
    pub cols: u64,
    pub mvm_latency_cycles: u64,
    pub serial_bits: u32,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mvm_energy_pj: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ArchSpec {
    pub levels: Vec<MemoryLevel>,
    pub axes: Vec<SpatialAxis>,
    #[serde(rename = "macro")]
    pub macro_spec: MacroSpec,
    #[serde(rename = "clock_ns")]
    pub clock_period_ns: f64,
}

const REFERENCE: &str = include_str!("../../../data/reference_arch.json");

impl ArchSpec {
    /// Parses and validates an architecture document.
    pub fn from_json(text: &str) -> Result<Self> {
        let mut arch: ArchSpec = serde_json::from_str(text).map_err(|e| Error::arch("document", e.to_string()))?;
        arch.levels.sort_by_key(|l| l.id);
        arch.axes.sort_by_key(|a| a.id);
        arch.validate()?;
        Ok(arch)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::Io(format!("cannot read architecture {}: {e}", path.display())))?;
        Self::from_json(&text)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("arch serializes")
    }

    /// The shipped multi-core reference configuration.
    pub fn reference() -> Self {
        Self::from_json(REFERENCE).expect("shipped reference architecture is valid")
    }

    pub fn validate(&self) -> Result<()> {
        if self.levels.is_empty() {
            return Err(Error::arch("levels", "at least one memory level is required"));
        }
        for (pos, level) in self.levels.iter().enumerate() {
            let field = |f: &str| format!("levels[{}].{}", level.id, f);
            if level.id != pos {
                return Err(Error::arch(field("id"), format!("level ids must be contiguous from 0, found {}", level.id)));
            }
            if level.capacity_bits == 0 {
                return Err(Error::arch(field("capacity_bits"), "capacity must be positive"));
            }
            if level.bus_width_bits == 0 {
                return Err(Error::arch(field("bus_width_bits"), "bus width must be positive"));
            }
            if level.capacity_bits < level.bus_width_bits {
                return Err(Error::arch(field("capacity_bits"), "capacity is smaller than the bus width"));
            }
            if level.operands.is_empty() {
                return Err(Error::arch(field("operands"), "a level must hold at least one operand"));
            }
            let distinct: BTreeSet<_> = level.operands.iter().collect();
            if distinct.len() != level.operands.len() {
                return Err(Error::arch(field("operands"), "duplicate operand"));
            }
            for (name, e) in [("read_energy_pj", level.read_energy_pj), ("write_energy_pj", level.write_energy_pj)] {
                if let Some(e) = e {
                    if !(e.is_finite() && e >= 0.0) {
                        return Err(Error::arch(field(name), "energy must be finite and non-negative"));
                    }
                }
            }
        }
        let top = &self.levels[0];
        if Operand::ALL.iter().any(|op| !top.admits(*op)) {
            return Err(Error::arch("levels[0].operands", "the outermost level must hold every operand"));
        }
        if top.bypassable {
            return Err(Error::arch("levels[0].bypassable", "the outermost level cannot be bypassed"));
        }
        for (pos, axis) in self.axes.iter().enumerate() {
            let field = |f: &str| format!("axes[{}].{}", axis.id, f);
            if axis.id != pos {
                return Err(Error::arch(field("id"), "axis ids must be contiguous from 0"));
            }
            if axis.size == 0 {
                return Err(Error::arch(field("size"), "axis size must be >= 1"));
            }
            if axis.allowed_dims.is_empty() {
                return Err(Error::arch(field("allowed_dims"), "an axis must allow at least one dimension"));
            }
            if axis.attach_level >= self.levels.len() {
                return Err(Error::arch(
                    field("attach_level"),
                    format!("references level {} but only {} levels exist", axis.attach_level, self.levels.len()),
                ));
            }
        }
        let m = &self.macro_spec;
        if m.rows == 0 || m.cols == 0 {
            return Err(Error::arch("macro.rows", "macro array must be non-empty"));
        }
        if m.mvm_latency_cycles == 0 {
            return Err(Error::arch("macro.mvm_latency_cycles", "MVM latency must be >= 1"));
        }
        if m.serial_bits == 0 {
            return Err(Error::arch("macro.serial_bits", "serial bits must be >= 1"));
        }
        if !(self.clock_period_ns.is_finite() && self.clock_period_ns > 0.0) {
            return Err(Error::arch("clock_ns", "clock period must be positive"));
        }
        Ok(())
    }

    pub fn num_levels(&self) -> usize {
        self.levels.len()
    }

    pub fn level(&self, m: usize) -> &MemoryLevel {
        &self.levels[m]
    }

    pub fn l_mvm(&self) -> u64 {
        self.macro_spec.mvm_latency_cycles
    }

    /// Levels holding `op`, outermost first.
    pub fn levels_for(&self, op: Operand) -> Vec<usize> {
        self.levels.iter().filter(|l| l.admits(op)).map(|l| l.id).collect()
    }

    /// Innermost level holding `op`; it feeds the macro and carries no loop block.
    pub fn terminal_level(&self, op: Operand) -> usize {
        *self.levels_for(op).last().expect("level 0 holds every operand")
    }

    /// Levels that may own a loop block for `op`.
    pub fn block_levels(&self, op: Operand) -> Vec<usize> {
        let terminal = self.terminal_level(op);
        self.levels_for(op).into_iter().filter(|m| *m != terminal).collect()
    }

    /// Candidate direct transfers `(m, m')`, `m < m'`, for operand `op`.
    ///
    /// Both endpoints hold `op`; every strictly intermediate level that also
    /// holds `op` must be bypassable. Levels not holding `op` are transparent.
    pub fn operand_path_candidates(&self, op: Operand) -> Result<Vec<(usize, usize)>> {
        let levels = self.levels_for(op);
        if levels.is_empty() {
            return Err(Error::Config(format!("operand {op} is held by no memory level")));
        }
        let mut out = Vec::new();
        for (a, &m) in levels.iter().enumerate() {
            for (b, &m2) in levels.iter().enumerate().skip(a + 1) {
                if levels[a + 1..b].iter().all(|mid| self.levels[*mid].bypassable) {
                    out.push((m, m2));
                }
            }
        }
        Ok(out)
    }
}
