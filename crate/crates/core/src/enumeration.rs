// SPDX-License-Identifier: Apache-2.0

//! Pre-enumerated tile candidates (data sizes and per-dimension bounds) and
//! loop-count domains consumed by the one-hot selections of the model.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;

use itertools::Itertools;
use serde::{Deserialize, Serialize};

use crate::arch::ArchSpec;
use crate::error::{Error, Result};
use crate::workload::{Dim, FactorSet, LayerShape, Operand};

/// Fixed-point scale of the natural logarithms used inside the model.
pub const LOG_SCALE: f64 = 1_000_000.0;
/// Two-sided slack, in scaled units, of the log-domain equalities.
pub const LOG_SLACK: i64 = 5;
pub const DEFAULT_CANDIDATE_CAP: usize = 4096;

pub fn scaled_log(v: u64) -> i64 {
    ((v as f64).ln() * LOG_SCALE).round() as i64
}

/// Loop dimensions whose factors change the tile of `op`. The input tile
/// spans `(oy-1)*stride+fy` rows, so both output and filter loops count.
pub fn relevant_dims(op: Operand) -> &'static [Dim] {
    match op {
        Operand::W => &[Dim::K, Dim::C, Dim::FY, Dim::FX],
        Operand::O => &[Dim::B, Dim::K, Dim::OY, Dim::OX],
        Operand::I => &[Dim::B, Dim::C, Dim::OY, Dim::OX, Dim::FY, Dim::FX],
    }
}

pub fn is_relevant(op: Operand, d: Dim) -> bool {
    relevant_dims(op).contains(&d)
}

#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct TileCandidate {
    pub elements: u64,
    /// Per-dimension bound, indexed by [`Dim::index`]; irrelevant dims are 1.
    pub bounds: [u64; 7],
}

/// Distinct products of all sub-multisets of `factors`, ascending.
pub fn subset_products(factors: &[u64]) -> Vec<u64> {
    let mut out = BTreeSet::new();
    out.insert(1u64);
    for f in factors {
        let next: Vec<u64> = out.iter().map(|p| p * f).collect();
        out.extend(next);
    }
    out.into_iter().collect()
}

/// Every tile of `op` reachable by some assignment of factors, deduplicated on
/// the bounds vector and sorted by element count.
pub fn enumerate_candidates(
    layer: &LayerShape,
    factors: &FactorSet,
    arch: &ArchSpec,
    op: Operand,
    level: usize,
    cap: usize,
) -> Result<Vec<TileCandidate>> {
    if level >= arch.num_levels() {
        return Err(Error::Build(format!("level {level} does not exist")));
    }
    let dims = relevant_dims(op);
    let per_dim: Vec<Vec<u64>> = dims.iter().map(|d| subset_products(factors.of(*d))).collect();
    let count: usize = per_dim.iter().map(|v| v.len()).product();
    if count > cap {
        return Err(Error::CandidateExplosion { operand: op.to_string(), level, count, cap });
    }
    let mut out: Vec<TileCandidate> = per_dim
        .iter()
        .multi_cartesian_product()
        .map(|combo| {
            let mut bounds = [1u64; 7];
            for (d, v) in dims.iter().zip(combo) {
                bounds[d.index()] = *v;
            }
            TileCandidate { elements: layer.tile_elements(op, &bounds), bounds }
        })
        .collect();
    if dims.is_empty() || out.is_empty() {
        out = vec![TileCandidate { elements: 1, bounds: [1; 7] }];
    }
    out.sort();
    out.dedup_by(|a, b| a.bounds == b.bounds);
    Ok(out)
}

/// Candidate rows per `(level, operand)` plus the loop-count domain.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CandidateTable {
    pub rows: BTreeMap<(usize, Operand), Vec<TileCandidate>>,
    /// Admissible temporal loop counts: 1 and every distinct factor value.
    pub loop_counts: Vec<u64>,
}

impl CandidateTable {
    pub fn build(layer: &LayerShape, factors: &FactorSet, arch: &ArchSpec, cap: usize) -> Result<Self> {
        let mut rows = BTreeMap::new();
        for op in Operand::ALL {
            for m in arch.block_levels(op) {
                rows.insert((m, op), enumerate_candidates(layer, factors, arch, op, m, cap)?);
            }
        }
        let mut counts: BTreeSet<u64> = factors.all().iter().map(|f| f.value).collect();
        counts.insert(1);
        let table = CandidateTable { rows, loop_counts: counts.into_iter().collect() };
        table.check_log_separation()?;
        Ok(table)
    }

    /// Total rows over every (level, operand) pair.
    pub fn len(&self) -> usize {
        self.rows.values().map(Vec::len).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn candidates(&self, level: usize, op: Operand) -> &[TileCandidate] {
        self.rows.get(&(level, op)).map(|v| v.as_slice()).unwrap_or(&[])
    }

    /// Index of the row with exactly these bounds.
    pub fn find(&self, level: usize, op: Operand, bounds: &[u64; 7]) -> Option<usize> {
        let mut key = [1u64; 7];
        for d in relevant_dims(op) {
            key[d.index()] = bounds[d.index()];
        }
        self.candidates(level, op).iter().position(|c| c.bounds == key)
    }

    /// Distinct bound values of one dimension must be separable in the
    /// scaled-log domain, or the two-sided log equality could match the wrong row.
    fn check_log_separation(&self) -> Result<()> {
        for ((m, op), rows) in &self.rows {
            for d in relevant_dims(*op) {
                let values: BTreeSet<u64> = rows.iter().map(|r| r.bounds[d.index()]).collect();
                for (a, b) in values.iter().tuple_windows() {
                    if scaled_log(*b) - scaled_log(*a) <= 4 * LOG_SLACK {
                        return Err(Error::Build(format!(
                            "bounds {a} and {b} of {d} at level {m} for {op} are not separable in the log domain"
                        )));
                    }
                }
            }
        }
        Ok(())
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from("level,operand,elements,B,K,C,OY,OX,FY,FX\n");
        for ((m, op), rows) in &self.rows {
            for r in rows {
                let b = r.bounds;
                let _ = writeln!(s, "{m},{op},{},{},{},{},{},{},{},{}", r.elements, b[0], b[1], b[2], b[3], b[4], b[5], b[6]);
            }
        }
        s
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn arch() -> ArchSpec {
        ArchSpec::reference()
    }

    #[test]
    fn relevant_dim_sets() {
        assert_eq!(relevant_dims(Operand::W), &[Dim::K, Dim::C, Dim::FY, Dim::FX]);
        assert_eq!(relevant_dims(Operand::O), &[Dim::B, Dim::K, Dim::OY, Dim::OX]);
        let l = LayerShape::conv("pw", [1, 1, 1, 7, 7, 1, 1], 8).unwrap();
        assert_eq!(l.input_extent_y(7, 1), 7);
    }

    #[test]
    fn weight_candidates_brute_force() {
        let layer = LayerShape::conv("t", [1, 2, 3, 1, 1, 1, 1], 8).unwrap();
        let f = FactorSet::from_lists(&[(Dim::K, vec![2]), (Dim::C, vec![3])]);
        let c = enumerate_candidates(&layer, &f, &arch(), Operand::W, 0, 4096).unwrap();
        let mut kc: Vec<(u64, u64, u64)> = c.iter().map(|t| (t.bounds[Dim::K.index()], t.bounds[Dim::C.index()], t.elements)).collect();
        kc.sort();
        assert_eq!(kc, vec![(1, 1, 1), (1, 3, 3), (2, 1, 2), (2, 3, 6)]);
        let elems: Vec<u64> = c.iter().map(|t| t.elements).collect();
        assert_eq!(elems, vec![1, 2, 3, 6]);
    }

    #[test]
    fn empty_factor_lists_single_candidate() {
        let layer = LayerShape::conv("u", [1; 7], 8).unwrap();
        let f = FactorSet::from_lists(&[]);
        for op in Operand::ALL {
            let c = enumerate_candidates(&layer, &f, &arch(), op, 0, 4096).unwrap();
            assert_eq!(c, vec![TileCandidate { elements: 1, bounds: [1; 7] }]);
        }
    }

    #[test]
    fn input_candidate_uses_halo() {
        let layer = LayerShape::conv("h", [1, 1, 1, 4, 1, 3, 1], 8).unwrap();
        let f = FactorSet::from_lists(&[(Dim::OY, vec![4]), (Dim::FY, vec![3])]);
        let c = enumerate_candidates(&layer, &f, &arch(), Operand::I, 0, 4096).unwrap();
        let full = c.iter().find(|t| t.bounds[Dim::OY.index()] == 4 && t.bounds[Dim::FY.index()] == 3).unwrap();
        // Rows 0..=5 are read by output rows 0..=3 under a 3-tap filter.
        let touched: BTreeSet<u64> = (0..4).flat_map(|oy| (0..3).map(move |fy| oy + fy)).collect();
        assert_eq!(full.elements, touched.len() as u64);
        assert_eq!(full.elements, 6);
    }

    #[test]
    fn cap_exceeded_is_reported() {
        let layer = LayerShape::conv("big", [1, 64, 64, 1, 1, 1, 1], 8).unwrap();
        let f = FactorSet::from_lists(&[(Dim::K, vec![2, 4, 8]), (Dim::C, vec![2, 4, 8])]);
        // Distinct subset products of {2,4,8}: 1,2,4,8,16,32,64.
        let err = enumerate_candidates(&layer, &f, &arch(), Operand::W, 0, 10).unwrap_err();
        assert!(matches!(err, Error::CandidateExplosion { count: 49, cap: 10, .. }));
    }

    #[test]
    fn log_consistency_of_candidates() {
        let layer = LayerShape::conv("l", [2, 12, 6, 4, 4, 3, 3], 8).unwrap();
        let f = FactorSet::from_lists(&[
            (Dim::B, vec![2]),
            (Dim::K, vec![3, 4]),
            (Dim::C, vec![2, 3]),
            (Dim::OY, vec![2, 2]),
            (Dim::OX, vec![4]),
            (Dim::FY, vec![3]),
            (Dim::FX, vec![3]),
        ]);
        for op in Operand::ALL {
            for c in enumerate_candidates(&layer, &f, &arch(), op, 1, 4096).unwrap() {
                let product: u64 = relevant_dims(op).iter().map(|d| c.bounds[d.index()]).product();
                let sum: f64 = relevant_dims(op).iter().map(|d| (c.bounds[d.index()] as f64).ln()).sum();
                assert!((sum - (product as f64).ln()).abs() < 1e-9);
                if op != Operand::I {
                    assert_eq!(product, c.elements);
                }
            }
        }
    }
}
