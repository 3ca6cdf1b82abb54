// SPDX-License-Identifier: Apache-2.0

//! Linearizations of boolean and max relations over binary expressions.

use super::model::{MipModel, Sense, VarId};
use crate::scalar::Scalar;

/// Binary-valued affine expression `constant + Σ vars` (coefficients 1).
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct BinExpr {
    pub vars: Vec<VarId>,
    pub negated: Vec<VarId>,
    pub constant: i64,
}

impl BinExpr {
    pub fn var(v: VarId) -> Self {
        BinExpr { vars: vec![v], ..Default::default() }
    }

    pub fn sum(vars: Vec<VarId>) -> Self {
        BinExpr { vars, ..Default::default() }
    }

    /// `a - b`.
    pub fn diff(a: VarId, b: Option<VarId>) -> Self {
        BinExpr { vars: vec![a], negated: b.into_iter().collect(), constant: 0 }
    }

    fn terms<S: Scalar>(&self, sign: i64) -> Vec<(VarId, S)> {
        self.vars.iter().map(|v| (*v, S::from_int(sign))).chain(self.negated.iter().map(|v| (*v, S::from_int(-sign)))).collect()
    }
}

/// `out = a AND b`: `out <= a`, `out <= b`, `out >= a + b - 1`.
pub fn and<S: Scalar>(m: &mut MipModel<S>, name: &str, out: VarId, a: &BinExpr, b: &BinExpr) {
    for (tag, e) in [("a", a), ("b", b)] {
        let mut t = e.terms::<S>(-1);
        t.push((out, S::one()));
        m.add_constraint(format!("{name}.le{tag}"), t, Sense::Le, S::from_int(e.constant));
    }
    let mut t = a.terms::<S>(-1);
    t.extend(b.terms::<S>(-1));
    t.push((out, S::one()));
    m.add_constraint(format!("{name}.ge"), t, Sense::Ge, S::from_int(a.constant + b.constant - 1));
}

/// `out = OR inputs`: `out >= x` for each, `out <= Σ x`.
pub fn or<S: Scalar>(m: &mut MipModel<S>, name: &str, out: VarId, inputs: &[VarId]) {
    for (j, x) in inputs.iter().enumerate() {
        m.add_constraint(format!("{name}.ge[{j}]"), vec![(out, S::one()), (*x, -S::one())], Sense::Ge, S::zero());
    }
    let mut t: Vec<(VarId, S)> = inputs.iter().map(|x| (*x, -S::one())).collect();
    t.push((out, S::one()));
    m.add_constraint(format!("{name}.le"), t, Sense::Le, S::zero());
}

/// `out >= x` for each input: equals the maximum whenever `out` is minimized.
pub fn max_of<S: Scalar>(m: &mut MipModel<S>, name: &str, out: VarId, inputs: &[VarId]) {
    for (j, x) in inputs.iter().enumerate() {
        m.add_constraint(format!("{name}[{j}]"), vec![(out, S::one()), (*x, -S::one())], Sense::Ge, S::zero());
    }
}

/// Exactly one of `vars` is set.
pub fn one_hot<S: Scalar>(m: &mut MipModel<S>, name: &str, vars: &[VarId]) {
    m.add_constraint(name, vars.iter().map(|v| (*v, S::one())).collect(), Sense::Eq, S::one());
}

/// `out = x * y` for binary `y` and `0 <= x <= cap`.
pub fn product_with_binary<S: Scalar>(m: &mut MipModel<S>, name: &str, out: VarId, x: VarId, y: VarId, cap: i64) {
    let c = S::from_int(cap);
    m.add_constraint(format!("{name}.lex"), vec![(out, S::one()), (x, -S::one())], Sense::Le, S::zero());
    m.add_constraint(format!("{name}.ley"), vec![(out, S::one()), (y, -c)], Sense::Le, S::zero());
    m.add_constraint(format!("{name}.ge"), vec![(out, S::one()), (x, -S::one()), (y, -c)], Sense::Ge, -c);
}
