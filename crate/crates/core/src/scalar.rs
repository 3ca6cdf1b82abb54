// SPDX-License-Identifier: Apache-2.0

//! Numeric scalar abstraction shared by the factorization scores, the model
//! coefficients and the energy figures.
//!
//! Binary floats are supported for speed, and `Ratio` types for exact
//! arithmetic. Every scalar converts losslessly (or, for floats, by best
//! rational approximation) into [`ExactRatio`], which is what the exact solver
//! and the model checker operate on.

use std::fmt::{Debug, Display};
use std::iter::Sum;

use num_rational::Ratio;
use num_traits::{FromPrimitive, Num, Signed, ToPrimitive};

/// Exact rational used internally by the solver.
pub type ExactRatio = Ratio<i128>;

pub trait Scalar: Num + Signed + Copy + PartialOrd + Debug + Display + FromPrimitive + ToPrimitive + Sum + Send + Sync + 'static {
    /// `num / den`, exact where the representation allows it.
    fn from_ratio(num: i64, den: i64) -> Self;

    fn to_exact(self) -> ExactRatio;

    fn from_exact(value: ExactRatio) -> Self;

    fn from_int(v: i64) -> Self {
        Self::from_ratio(v, 1)
    }

    fn to_f64_lossy(self) -> f64 {
        self.to_f64().unwrap_or(f64::NAN)
    }

    fn max_of(self, other: Self) -> Self {
        if other > self {
            other
        } else {
            self
        }
    }
}

fn float_to_exact(v: f64) -> ExactRatio {
    if v == 0.0 {
        return ExactRatio::from_integer(0);
    }
    if v.fract() == 0.0 && v.abs() < 1e30 {
        return ExactRatio::from_integer(v as i128);
    }
    // Decimal-friendly approximation first: configuration values such as 0.05
    // or 1e-6 should map to their intended rationals.
    for den in [1i128, 10, 100, 1_000, 10_000, 100_000, 1_000_000, 10_000_000, 100_000_000, 1_000_000_000] {
        let num = (v * den as f64).round();
        if ((num / den as f64) - v).abs() <= f64::EPSILON * v.abs() * 4.0 {
            return ExactRatio::new(num as i128, den);
        }
    }
    ExactRatio::approximate_float(v).unwrap_or_else(|| ExactRatio::from_integer(v.round() as i128))
}

impl Scalar for f64 {
    fn from_ratio(num: i64, den: i64) -> Self {
        num as f64 / den as f64
    }
    fn to_exact(self) -> ExactRatio {
        float_to_exact(self)
    }
    fn from_exact(value: ExactRatio) -> Self {
        *value.numer() as f64 / *value.denom() as f64
    }
}

impl Scalar for f32 {
    fn from_ratio(num: i64, den: i64) -> Self {
        (num as f64 / den as f64) as f32
    }
    fn to_exact(self) -> ExactRatio {
        float_to_exact(self as f64)
    }
    fn from_exact(value: ExactRatio) -> Self {
        (*value.numer() as f64 / *value.denom() as f64) as f32
    }
}

impl Scalar for Ratio<i64> {
    fn from_ratio(num: i64, den: i64) -> Self {
        Ratio::new(num, den)
    }
    fn to_exact(self) -> ExactRatio {
        ExactRatio::new(*self.numer() as i128, *self.denom() as i128)
    }
    fn from_exact(value: ExactRatio) -> Self {
        match (i64::try_from(*value.numer()), i64::try_from(*value.denom())) {
            (Ok(n), Ok(d)) => Ratio::new(n, d),
            _ => {
                let f = *value.numer() as f64 / *value.denom() as f64;
                Ratio::approximate_float(f).expect("rational out of i64 range")
            }
        }
    }
}

impl Scalar for Ratio<i128> {
    fn from_ratio(num: i64, den: i64) -> Self {
        Ratio::new(num as i128, den as i128)
    }
    fn to_exact(self) -> ExactRatio {
        self
    }
    fn from_exact(value: ExactRatio) -> Self {
        value
    }
}

/// Parses a decimal or `a/b` string into a scalar.
pub fn parse_scalar<S: Scalar>(text: &str) -> Option<S> {
    let text = text.trim();
    if let Some((n, d)) = text.split_once('/') {
        let n: i64 = n.trim().parse().ok()?;
        let d: i64 = d.trim().parse().ok()?;
        if d == 0 {
            return None;
        }
        return Some(S::from_ratio(n, d));
    }
    let f: f64 = text.parse().ok()?;
    if !f.is_finite() {
        return None;
    }
    Some(S::from_exact(float_to_exact(f)))
}
