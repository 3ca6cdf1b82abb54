// SPDX-License-Identifier: Apache-2.0

//! Convolution layers as seven-deep loop nests and the reduction of each loop
//! bound to a compact list of tiling factors.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Loop dimension of a convolution.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Dim {
    B,
    K,
    C,
    OY,
    OX,
    FY,
    FX,
}

impl Dim {
    pub const ALL: [Dim; 7] = [Dim::B, Dim::K, Dim::C, Dim::OY, Dim::OX, Dim::FY, Dim::FX];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn name(self) -> &'static str {
        match self {
            Dim::B => "B",
            Dim::K => "K",
            Dim::C => "C",
            Dim::OY => "OY",
            Dim::OX => "OX",
            Dim::FY => "FY",
            Dim::FX => "FX",
        }
    }

    pub fn parse(s: &str) -> Option<Dim> {
        Dim::ALL.into_iter().find(|d| d.name().eq_ignore_ascii_case(s.trim()))
    }
}

impl fmt::Display for Dim {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Tensor operand: input feature map, weights, output feature map.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Operand {
    I,
    W,
    O,
}

impl Operand {
    pub const ALL: [Operand; 3] = [Operand::I, Operand::W, Operand::O];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn name(self) -> &'static str {
        match self {
            Operand::I => "I",
            Operand::W => "W",
            Operand::O => "O",
        }
    }

    pub fn parse(s: &str) -> Option<Operand> {
        Operand::ALL.into_iter().find(|o| o.name().eq_ignore_ascii_case(s.trim()))
    }
}

impl fmt::Display for Operand {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// One convolution layer. Matrix multiplications are expressed with
/// `FY = FX = OY = OX = 1`.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "LayerRecord", into = "LayerRecord")]
pub struct LayerShape {
    pub name: String,
    dims: [u64; 7],
    pub stride_y: u64,
    pub stride_x: u64,
    pub weight_precision: u32,
    pub activation_precision: u32,
    pub output_precision: u32,
}

impl LayerShape {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        name: impl Into<String>,
        dims: [u64; 7],
        stride_y: u64,
        stride_x: u64,
        weight_precision: u32,
        activation_precision: u32,
        output_precision: u32,
    ) -> Result<Self> {
        let layer = LayerShape { name: name.into(), dims, stride_y, stride_x, weight_precision, activation_precision, output_precision };
        layer.validate()?;
        Ok(layer)
    }

    /// Convenience constructor for a unit-stride layer with uniform precision.
    pub fn conv(name: impl Into<String>, dims: [u64; 7], bits: u32) -> Result<Self> {
        LayerShape::new(name, dims, 1, 1, bits, bits, bits)
    }

    fn validate(&self) -> Result<()> {
        for d in Dim::ALL {
            if self.dims[d.index()] == 0 {
                return Err(Error::Workload(format!("layer '{}': dimension {} must be >= 1", self.name, d)));
            }
        }
        if self.stride_y == 0 || self.stride_x == 0 {
            return Err(Error::Workload(format!("layer '{}': strides must be >= 1", self.name)));
        }
        for (field, bits) in [("w_bits", self.weight_precision), ("a_bits", self.activation_precision), ("o_bits", self.output_precision)] {
            if !(1..=64).contains(&bits) {
                return Err(Error::Workload(format!("layer '{}': {} must be in 1..=64, got {}", self.name, field, bits)));
            }
        }
        Ok(())
    }

    pub fn dim(&self, d: Dim) -> u64 {
        self.dims[d.index()]
    }

    pub fn dims(&self) -> [u64; 7] {
        self.dims
    }

    pub fn precision(&self, op: Operand) -> u32 {
        match op {
            Operand::I => self.activation_precision,
            Operand::W => self.weight_precision,
            Operand::O => self.output_precision,
        }
    }

    /// Input rows touched by `oy` output rows and `fy` filter rows.
    pub fn input_extent_y(&self, oy: u64, fy: u64) -> u64 {
        (oy - 1) * self.stride_y + fy
    }

    pub fn input_extent_x(&self, ox: u64, fx: u64) -> u64 {
        (ox - 1) * self.stride_x + fx
    }

    pub fn macs(&self) -> u64 {
        self.dims.iter().product()
    }

    /// Number of elements of `op` for a tile with the given per-dimension bounds.
    pub fn tile_elements(&self, op: Operand, bounds: &[u64; 7]) -> u64 {
        let b = |d: Dim| bounds[d.index()];
        match op {
            Operand::W => b(Dim::K) * b(Dim::C) * b(Dim::FY) * b(Dim::FX),
            Operand::O => b(Dim::B) * b(Dim::K) * b(Dim::OY) * b(Dim::OX),
            Operand::I => b(Dim::B) * b(Dim::C) * self.input_extent_y(b(Dim::OY), b(Dim::FY)) * self.input_extent_x(b(Dim::OX), b(Dim::FX)),
        }
    }

    pub fn tensor_bits(&self, op: Operand) -> u64 {
        self.tile_elements(op, &self.dims) * self.precision(op) as u64
    }
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
#[allow(non_snake_case)]
struct LayerRecord {
    name: String,
    B: u64,
    K: u64,
    C: u64,
    OY: u64,
    OX: u64,
    FY: u64,
    FX: u64,
    stride_y: u64,
    stride_x: u64,
    w_bits: u32,
    a_bits: u32,
    o_bits: u32,
}

impl TryFrom<LayerRecord> for LayerShape {
    type Error = Error;

    fn try_from(r: LayerRecord) -> Result<Self> {
        LayerShape::new(r.name, [r.B, r.K, r.C, r.OY, r.OX, r.FY, r.FX], r.stride_y, r.stride_x, r.w_bits, r.a_bits, r.o_bits)
    }
}

impl From<LayerShape> for LayerRecord {
    fn from(l: LayerShape) -> Self {
        let d = l.dims;
        LayerRecord {
            name: l.name,
            B: d[0],
            K: d[1],
            C: d[2],
            OY: d[3],
            OX: d[4],
            FY: d[5],
            FX: d[6],
            stride_y: l.stride_y,
            stride_x: l.stride_x,
            w_bits: l.weight_precision,
            a_bits: l.activation_precision,
            o_bits: l.output_precision,
        }
    }
}

/// A workload file: `{"layers": [...]}`.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Workload {
    pub layers: Vec<LayerShape>,
}

impl Workload {
    pub fn from_json(text: &str) -> Result<Self> {
        let w: Workload = serde_json::from_str(text).map_err(|e| Error::Workload(format!("invalid workload document: {e}")))?;
        if w.layers.is_empty() {
            return Err(Error::Workload("workload has no layers".into()));
        }
        let mut seen = BTreeSet::new();
        for l in &w.layers {
            if !seen.insert(l.name.as_str()) {
                return Err(Error::Workload(format!("duplicate layer name '{}'", l.name)));
            }
        }
        Ok(w)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::Io(format!("cannot read workload {}: {e}", path.display())))?;
        Self::from_json(&text)
    }
}

/// Parameters of the greedy factor-merging procedure.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FactorizationConfig<S = f64> {
    pub k_min: usize,
    pub alpha: S,
    /// Weights for 1-, 2- and 3-way partitions; strictly decreasing.
    pub flex_weights: [S; 3],
    /// Longest factor list `flex_score` accepts.
    pub max_flex_len: usize,
}

impl<S: Scalar> Default for FactorizationConfig<S> {
    fn default() -> Self {
        FactorizationConfig {
            k_min: 3,
            alpha: S::from_ratio(1, 20),
            flex_weights: [S::one(), S::from_ratio(1, 2), S::from_ratio(1, 4)],
            max_flex_len: 8,
        }
    }
}

impl<S: Scalar> FactorizationConfig<S> {
    pub fn validate(&self) -> Result<()> {
        if self.k_min < 1 {
            return Err(Error::Config("k_min must be >= 1".into()));
        }
        if self.alpha < S::zero() || self.alpha > S::one() {
            return Err(Error::Config(format!("alpha must lie in [0, 1], got {}", self.alpha)));
        }
        let [a, b, c] = self.flex_weights;
        if !(a > b && b > c && c > S::zero()) {
            return Err(Error::Config("flex weights must be positive and strictly decreasing".into()));
        }
        if self.max_flex_len < 1 {
            return Err(Error::Config("max_flex_len must be >= 1".into()));
        }
        Ok(())
    }
}

/// Ascending prime factorization; `1` yields an empty list.
pub fn prime_factors(mut n: u64) -> Vec<u64> {
    let mut out = Vec::new();
    let mut p = 2u64;
    while p * p <= n {
        while n.is_multiple_of(p) {
            out.push(p);
            n /= p;
        }
        p += if p == 2 { 1 } else { 2 };
    }
    if n > 1 {
        out.push(n);
    }
    out
}

/// Distinct sorted product tuples over all partitions of `factors` into
/// exactly 1, 2 and 3 non-empty blocks.
pub fn partition_product_sets(factors: &[u64]) -> [BTreeSet<Vec<u64>>; 3] {
    let mut sets: [BTreeSet<Vec<u64>>; 3] = Default::default();
    if factors.is_empty() {
        return sets;
    }
    // Restricted growth strings: element 0 opens block 0, every later element
    // joins an existing block or opens the next one.
    let n = factors.len();
    let mut labels = vec![0usize; n];
    fn rec(pos: usize, used: usize, labels: &mut [usize], factors: &[u64], sets: &mut [BTreeSet<Vec<u64>>; 3]) {
        if pos == labels.len() {
            let mut prods = vec![1u64; used];
            for (l, f) in labels.iter().zip(factors) {
                prods[*l] *= f;
            }
            prods.sort_unstable();
            sets[used - 1].insert(prods);
            return;
        }
        for l in 0..used.min(3) {
            labels[pos] = l;
            rec(pos + 1, used, labels, factors, sets);
        }
        if used < 3 {
            labels[pos] = used;
            rec(pos + 1, used + 1, labels, factors, sets);
        }
    }
    labels[0] = 0;
    rec(1, 1, &mut labels, factors, &mut sets);
    sets
}

/// Weighted count of distinct 1/2/3-way partition product tuples.
pub fn flex_score<S: Scalar>(factors: &[u64], weights: &[S; 3], max_len: usize) -> Result<S> {
    if factors.len() > max_len {
        return Err(Error::FactorListTooLong { len: factors.len(), cap: max_len });
    }
    let sets = partition_product_sets(factors);
    Ok(sets.iter().zip(weights).map(|(set, w)| *w * S::from_int(set.len() as i64)).sum())
}

/// One round of the greedy merge loop.
#[derive(Clone, Debug, PartialEq)]
pub struct MergeRound<S> {
    pub before: Vec<u64>,
    pub best: Vec<u64>,
    pub delta: S,
    pub accepted: bool,
}

/// Greedy reduction of `n`'s prime factors; see [`flexible_factorization_trace`].
pub fn flexible_factorization<S: Scalar>(n: u64, cfg: &FactorizationConfig<S>) -> Result<Vec<u64>> {
    Ok(flexible_factorization_trace(n, cfg)?.0)
}

/// Returns the final factor list together with every evaluated merge round.
///
/// Each round merges the pair with the smallest relative loss against the
/// score of the full prime list; ties go to the smaller merged factor, then
/// to the earliest index pair. The loop stops at `k_min` factors or at the
/// first round whose best loss exceeds `alpha`.
pub fn flexible_factorization_trace<S: Scalar>(n: u64, cfg: &FactorizationConfig<S>) -> Result<(Vec<u64>, Vec<MergeRound<S>>)> {
    let mut factors = prime_factors(n);
    let mut rounds = Vec::new();
    if factors.len() <= cfg.k_min {
        return Ok((factors, rounds));
    }
    // Long prime lists are pre-merged (smallest pair first) until FlexScore
    // can enumerate them.
    while factors.len() > cfg.max_flex_len {
        let merged = factors[0] * factors[1];
        factors.drain(0..2);
        factors.push(merged);
        factors.sort_unstable();
    }
    if factors.len() <= cfg.k_min {
        return Ok((factors, rounds));
    }
    let w = &cfg.flex_weights;
    let full = flex_score(&factors, w, cfg.max_flex_len)?;
    assert!(full > S::zero(), "a non-empty factor list always has a one-block partition");
    while factors.len() > cfg.k_min {
        let base = flex_score(&factors, w, cfg.max_flex_len)?;
        let mut best: Option<(S, u64, Vec<u64>)> = None;
        for i in 0..factors.len() {
            for j in i + 1..factors.len() {
                let product = factors[i] * factors[j];
                let mut merged: Vec<u64> = factors.iter().enumerate().filter(|(k, _)| *k != i && *k != j).map(|(_, f)| *f).collect();
                merged.push(product);
                merged.sort_unstable();
                let delta = (base - flex_score(&merged, w, cfg.max_flex_len)?) / full;
                let better = match &best {
                    None => true,
                    Some((bd, bp, _)) => delta < *bd || (delta == *bd && product < *bp),
                };
                if better {
                    best = Some((delta, product, merged));
                }
            }
        }
        let (delta, _, merged) = best.expect("at least two factors remain");
        let accepted = delta <= cfg.alpha;
        rounds.push(MergeRound { before: factors.clone(), best: merged.clone(), delta, accepted });
        if !accepted {
            break;
        }
        factors = merged;
    }
    Ok((factors, rounds))
}

/// One tiling factor of one loop dimension.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct FactorRef {
    pub dim: Dim,
    pub index: usize,
    pub value: u64,
}

/// Per-dimension tiling factors; an empty list stands for a unit bound.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct FactorSet {
    pub factors: BTreeMap<Dim, Vec<u64>>,
}

impl FactorSet {
    pub fn from_layer<S: Scalar>(layer: &LayerShape, cfg: &FactorizationConfig<S>) -> Result<Self> {
        cfg.validate()?;
        let mut factors = BTreeMap::new();
        for d in Dim::ALL {
            factors.insert(d, flexible_factorization(layer.dim(d), cfg)?);
        }
        Ok(FactorSet { factors })
    }

    /// Factor set built from explicit lists; dimensions not listed are unit.
    pub fn from_lists(lists: &[(Dim, Vec<u64>)]) -> Self {
        let mut factors: BTreeMap<Dim, Vec<u64>> = Dim::ALL.iter().map(|d| (*d, Vec::new())).collect();
        for (d, l) in lists {
            factors.insert(*d, l.clone());
        }
        FactorSet { factors }
    }

    pub fn of(&self, d: Dim) -> &[u64] {
        self.factors.get(&d).map(|v| v.as_slice()).unwrap_or(&[])
    }

    pub fn bound(&self, d: Dim) -> u64 {
        self.of(d).iter().product()
    }

    /// All factors in dimension order, then list order.
    pub fn all(&self) -> Vec<FactorRef> {
        Dim::ALL
            .iter()
            .flat_map(|d| self.of(*d).iter().enumerate().map(move |(index, value)| FactorRef { dim: *d, index, value: *value }))
            .collect()
    }

    pub fn len(&self) -> usize {
        self.factors.values().map(|v| v.len()).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Checks that every dimension's factors multiply to the layer bound.
    pub fn check_against(&self, layer: &LayerShape) -> Result<()> {
        for d in Dim::ALL {
            if self.of(d).iter().any(|f| *f < 2) {
                return Err(Error::Workload(format!("factor of {d} below 2")));
            }
            if self.bound(d) != layer.dim(d) {
                return Err(Error::Workload(format!("factors of {} multiply to {}, layer bound is {}", d, self.bound(d), layer.dim(d))));
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use num_rational::Ratio;

    type R = Ratio<i64>;

    fn weights() -> [R; 3] {
        [R::new(1, 1), R::new(1, 2), R::new(1, 4)]
    }

    #[test]
    fn prime_factor_examples() {
        assert_eq!(prime_factors(12), vec![2, 2, 3]);
        assert_eq!(prime_factors(1), Vec::<u64>::new());
        assert_eq!(prime_factors(224), vec![2, 2, 2, 2, 2, 7]);
        assert_eq!(prime_factors(97), vec![97]);
    }

    #[test]
    fn flex_score_examples() {
        assert_eq!(flex_score(&[2, 3], &weights(), 8).unwrap(), R::new(3, 2));
        assert_eq!(flex_score(&[2, 2, 3], &weights(), 8).unwrap(), R::new(9, 4));
        let w = [R::new(7, 3), R::new(1, 3), R::new(1, 5)];
        assert_eq!(flex_score(&[5], &w, 8).unwrap(), R::new(7, 3));
    }

    #[test]
    fn flex_score_rejects_long_lists() {
        let err = flex_score(&[2; 9], &weights(), 8).unwrap_err();
        assert!(matches!(err, Error::FactorListTooLong { len: 9, cap: 8 }));
    }

    #[test]
    fn flexible_factorization_short_lists_untouched() {
        let cfg = FactorizationConfig::<R>::default();
        assert_eq!(flexible_factorization(7, &cfg).unwrap(), vec![7]);
        assert_eq!(flexible_factorization(12, &cfg).unwrap(), vec![2, 2, 3]);
        assert_eq!(flexible_factorization(1, &cfg).unwrap(), Vec::<u64>::new());
    }

    #[test]
    fn flexible_factorization_64_golden() {
        // Trajectory frozen from an independent brute-force scorer (three
        // labelled boxes per element, exact fractions).
        let cfg = FactorizationConfig { k_min: 3, alpha: R::new(1, 1), flex_weights: weights(), max_flex_len: 8 };
        let (out, rounds) = flexible_factorization_trace(64, &cfg).unwrap();
        assert_eq!(out.iter().product::<u64>(), 64);
        assert_eq!(out.len(), 3);
        let lists: Vec<Vec<u64>> = rounds.iter().map(|r| r.best.clone()).collect();
        assert_eq!(lists, vec![vec![2, 2, 2, 2, 4], vec![2, 2, 4, 4], vec![2, 4, 8]]);
        let deltas: Vec<R> = rounds.iter().map(|r| r.delta).collect();
        assert_eq!(deltas, vec![R::new(0, 1), R::new(0, 1), R::new(2, 13)]);
        assert!(rounds.iter().all(|r| r.accepted));
        assert_eq!(out, vec![2, 4, 8]);

        // Default threshold rejects the third round.
        let cfg = FactorizationConfig::<R>::default();
        let (out, rounds) = flexible_factorization_trace(64, &cfg).unwrap();
        assert_eq!(out, vec![2, 2, 4, 4]);
        assert_eq!(rounds.len(), 3);
        assert!(!rounds[2].accepted);
    }

    #[test]
    fn layer_rejects_zero_dim_and_bad_precision() {
        assert!(LayerShape::conv("x", [1, 0, 1, 1, 1, 1, 1], 8).is_err());
        assert!(LayerShape::new("x", [1; 7], 1, 1, 0, 8, 8).is_err());
        assert!(LayerShape::new("x", [1; 7], 0, 1, 8, 8, 8).is_err());
        assert!(LayerShape::new("x", [1; 7], 1, 1, 65, 8, 8).is_err());
    }

    #[test]
    fn workload_json_field_names_and_unknown_rejection() {
        let doc = r#"{"layers":[{"name":"l0","B":1,"K":4,"C":3,"OY":2,"OX":2,"FY":3,"FX":3,
            "stride_y":1,"stride_x":1,"w_bits":8,"a_bits":8,"o_bits":16}]}"#;
        let w = Workload::from_json(doc).unwrap();
        assert_eq!(w.layers[0].dim(Dim::K), 4);
        assert_eq!(w.layers[0].precision(Operand::O), 16);
        let bad = doc.replace("\"o_bits\":16", "\"o_bits\":16,\"extra\":1");
        assert!(Workload::from_json(&bad).is_err());
        let round = serde_json::to_string(&w).unwrap();
        assert_eq!(Workload::from_json(&round).unwrap(), w);
    }

    #[test]
    fn input_extent_uses_stride_and_filter() {
        let l = LayerShape::new("s", [1, 1, 1, 8, 8, 3, 3], 2, 1, 8, 8, 8).unwrap();
        assert_eq!(l.input_extent_y(4, 3), 9);
        assert_eq!(l.input_extent_x(4, 3), 6);
        let one = LayerShape::conv("p", [1, 1, 1, 5, 5, 1, 1], 8).unwrap();
        assert_eq!(one.input_extent_y(5, 1), 5);
    }
}
