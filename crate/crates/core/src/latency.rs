// SPDX-License-Identifier: Apache-2.0

//! Analytical latency, traffic and energy of a concrete mapping.
//!
//! Latency is computed bottom-up over the temporal slots, starting from the
//! macro MVM latency. At each occupied slot every operand picks one of five
//! processing rows (no transfer, single or double buffered, with inputs and
//! weights sharing rows and outputs using their own), and the slot period is
//! the larger of the inner loop's total time and each operand's local
//! transfer/processing combination.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::arch::ArchSpec;
use crate::error::{Error, Result};
use crate::mapping::{Mapping, Problem};
use crate::workload::Operand;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BufferRow {
    NoTransfer,
    SingleIw,
    SingleO,
    DoubleIw,
    DoubleO,
}

impl BufferRow {
    pub fn select(op: Operand, transfer: bool, double: bool) -> Self {
        match (transfer, double, op == Operand::O) {
            (false, _, _) => BufferRow::NoTransfer,
            (true, false, false) => BufferRow::SingleIw,
            (true, false, true) => BufferRow::SingleO,
            (true, true, false) => BufferRow::DoubleIw,
            (true, true, true) => BufferRow::DoubleO,
        }
    }
}

/// Operand-processing latency of one slot running `n` iterations of period
/// `l`, with `t` transfer cycles per iteration and inner latency `p`.
/// Rows subtracting more iterations than `n` provides are clamped.
pub fn row_latency(row: BufferRow, l: u64, n: u64, t: u64, p: u64) -> u64 {
    match row {
        BufferRow::NoTransfer => l * n.saturating_sub(1) + p,
        BufferRow::SingleIw if n >= 2 => l * (n - 2) + 2 * t + p,
        BufferRow::SingleIw => t + p,
        BufferRow::SingleO => l * n.saturating_sub(1) + 2 * t + p,
        BufferRow::DoubleIw if n >= 3 => (l * (n - 3) + 2 * t + t.max(p)).max(t * n),
        BufferRow::DoubleIw => (t * n).max(p + t),
        BufferRow::DoubleO if n >= 2 => l * (n - 2) + t + t.max(l) + t.max(p),
        BufferRow::DoubleO => t + t.max(p),
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SlotTrace {
    pub slot: usize,
    pub count: u64,
    pub period: u64,
    pub operand_latency: BTreeMap<Operand, u64>,
    pub transfer_cycles: BTreeMap<Operand, u64>,
    pub rows: BTreeMap<Operand, BufferRow>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LevelTraffic {
    pub operand: Operand,
    pub from: usize,
    pub to: usize,
    /// Slot whose iterations trigger the transfer; `None` for a one-time fill.
    pub slot: Option<usize>,
    pub transfers: u64,
    pub bits_per_transfer: u64,
    pub cycles_per_transfer: u64,
    pub double_buffered: bool,
}

impl LevelTraffic {
    pub fn bits_moved(&self) -> u128 {
        self.transfers as u128 * self.bits_per_transfer as u128
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LatencyReport {
    pub operand_latency: BTreeMap<Operand, u64>,
    pub total_latency: u64,
    /// Outer to inner, plus the boundary entry.
    pub slots: Vec<SlotTrace>,
    pub traffic: Vec<LevelTraffic>,
    pub mvm_count: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub energy_pj: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub edp: Option<f64>,
}

impl LatencyReport {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    /// Per-slot period table.
    pub fn trace_csv(&self) -> String {
        let mut s = String::from("slot,count,period,P_I,P_W,P_O,T_I,T_W,T_O,row_I,row_W,row_O\n");
        for t in &self.slots {
            let get = |m: &BTreeMap<Operand, u64>, op| m.get(&op).copied().unwrap_or(0);
            let row = |op| t.rows.get(&op).map_or("-".to_string(), |r| format!("{r:?}"));
            let _ = writeln!(
                s,
                "{},{},{},{},{},{},{},{},{},{},{},{}",
                t.slot,
                t.count,
                t.period,
                get(&t.operand_latency, Operand::I),
                get(&t.operand_latency, Operand::W),
                get(&t.operand_latency, Operand::O),
                get(&t.transfer_cycles, Operand::I),
                get(&t.transfer_cycles, Operand::W),
                get(&t.transfer_cycles, Operand::O),
                row(Operand::I),
                row(Operand::W),
                row(Operand::O)
            );
        }
        s
    }
}

fn check_structure(mapping: &Mapping, arch: &ArchSpec) -> Result<()> {
    for s in &mapping.spatial {
        if s.axis >= arch.axes.len() {
            return Err(Error::Structure(format!("unknown axis {}", s.axis)));
        }
    }
    for b in &mapping.loop_blocks {
        if b.level >= arch.num_levels() {
            return Err(Error::Structure(format!("unknown level {}", b.level)));
        }
    }
    for b in &mapping.buffering {
        if b.level >= arch.num_levels() {
            return Err(Error::Structure(format!("unknown level {}", b.level)));
        }
    }
    Ok(())
}

/// Latency and traffic of `mapping`.
pub fn evaluate(mapping: &Mapping, problem: &Problem) -> Result<LatencyReport> {
    let arch = &problem.arch;
    check_structure(mapping, arch)?;
    let n = mapping.slot_count;
    let counts = mapping.slot_counts();
    let l_mvm = arch.l_mvm();

    let mut cycles = vec![[0u64; 3]; n];
    let mut fires = vec![[false; 3]; n];
    let mut doubled = vec![[false; 3]; n];
    let mut traffic = Vec::new();
    for op in Operand::ALL {
        let view = mapping.operand_view(op, arch)?;
        let terminal = arch.terminal_level(op);
        let prec = problem.layer.precision(op) as u64;
        for (j, &m) in view.used.iter().enumerate() {
            let to = view.used.get(j + 1).copied().unwrap_or(terminal);
            let bounds = mapping.transfer_bounds(op, m, arch, &view);
            let bits = problem.layer.tile_elements(op, &bounds) * prec;
            let cyc = bits.div_ceil(arch.level(m).bus_width_bits);
            let slot = mapping.transfer_slot(op, m, &view);
            let double = view.double.contains(&m);
            let transfers = match slot {
                Some(r) => {
                    cycles[r][op.index()] += cyc;
                    fires[r][op.index()] = true;
                    doubled[r][op.index()] |= double;
                    counts[..=r].iter().product()
                }
                None => 1,
            };
            traffic.push(LevelTraffic {
                operand: op,
                from: m,
                to,
                slot,
                transfers,
                bits_per_transfer: bits,
                cycles_per_transfer: cyc,
                double_buffered: double,
            });
        }
    }

    let mut period = vec![l_mvm; n + 1];
    let mut lat = vec![[l_mvm; 3]; n + 1];
    let mut slots = Vec::with_capacity(n + 1);
    slots.push(SlotTrace {
        slot: n,
        count: 1,
        period: l_mvm,
        operand_latency: Operand::ALL.iter().map(|op| (*op, l_mvm)).collect(),
        transfer_cycles: BTreeMap::new(),
        rows: BTreeMap::new(),
    });
    for i in (0..n).rev() {
        if mapping.temporal_at(i).is_none() {
            period[i] = period[i + 1];
            lat[i] = lat[i + 1];
        } else {
            let inner_count = if i + 1 < n { counts[i + 1] } else { 1 };
            let mut l = period[i + 1] * inner_count;
            for op in Operand::ALL {
                let (t, p) = (cycles[i][op.index()], lat[i + 1][op.index()]);
                l = l.max(p).max(t);
                if fires[i][op.index()] && !doubled[i][op.index()] {
                    l = l.max(t + p);
                }
            }
            period[i] = l;
            for op in Operand::ALL {
                let row = BufferRow::select(op, fires[i][op.index()], doubled[i][op.index()]);
                lat[i][op.index()] = row_latency(row, l, counts[i], cycles[i][op.index()], lat[i + 1][op.index()]);
            }
        }
        slots.push(SlotTrace {
            slot: i,
            count: counts[i],
            period: period[i],
            operand_latency: Operand::ALL.iter().map(|op| (*op, lat[i][op.index()])).collect(),
            transfer_cycles: Operand::ALL.iter().map(|op| (*op, cycles[i][op.index()])).collect(),
            rows: if mapping.temporal_at(i).is_some() {
                Operand::ALL.iter().map(|op| (*op, BufferRow::select(*op, fires[i][op.index()], doubled[i][op.index()]))).collect()
            } else {
                BTreeMap::new()
            },
        });
    }
    slots.reverse();

    let operand_latency: BTreeMap<Operand, u64> = Operand::ALL.iter().map(|op| (*op, lat[0][op.index()])).collect();
    let total_latency = operand_latency.values().copied().max().unwrap_or(l_mvm);
    let w_terminal = arch.terminal_level(Operand::W);
    let replicas: u64 = mapping.spatial.iter().filter(|s| arch.axes[s.axis].attach_level < w_terminal).map(|s| s.value).product();
    let mvm_count = counts.iter().product::<u64>() * replicas;
    Ok(LatencyReport { operand_latency, total_latency, slots, traffic, mvm_count, energy_pj: None, edp: None })
}

/// Energy in pJ and energy-delay product in J*s. Every transfer reads its
/// source and writes its destination once per bus word.
pub fn energy_edp(report: &LatencyReport, arch: &ArchSpec) -> Result<(f64, f64)> {
    let missing = |what: String| Error::Config(format!("energy constant missing: {what}"));
    let mut pj = 0.0;
    for t in &report.traffic {
        // Outputs drain from the inner level back to the outer one.
        let (s, d) = if t.operand == Operand::O { (t.to, t.from) } else { (t.from, t.to) };
        let (src, dst) = (arch.level(s), arch.level(d));
        let read = src.read_energy_pj.ok_or_else(|| missing(format!("levels[{s}].read_energy_pj")))?;
        let write = dst.write_energy_pj.ok_or_else(|| missing(format!("levels[{d}].write_energy_pj")))?;
        let words_src = t.bits_per_transfer.div_ceil(src.bus_width_bits) as f64;
        let words_dst = t.bits_per_transfer.div_ceil(dst.bus_width_bits) as f64;
        pj += t.transfers as f64 * (words_src * read + words_dst * write);
    }
    let mvm = arch.macro_spec.mvm_energy_pj.ok_or_else(|| missing("macro.mvm_energy_pj".into()))?;
    pj += report.mvm_count as f64 * mvm;
    let seconds = report.total_latency as f64 * arch.clock_period_ns * 1e-9;
    Ok((pj, pj * 1e-12 * seconds))
}

/// [`evaluate`] plus energy figures.
pub fn evaluate_with_energy(mapping: &Mapping, problem: &Problem) -> Result<LatencyReport> {
    let mut r = evaluate(mapping, problem)?;
    let (e, edp) = energy_edp(&r, &problem.arch)?;
    r.energy_pj = Some(e);
    r.edp = Some(edp);
    Ok(r)
}
