// SPDX-License-Identifier: Apache-2.0

//! Solver-agnostic integer program: bounded integer variables, named linear
//! constraints (optionally gated by indicator literals) and a linear
//! objective to minimize.

use std::collections::HashMap;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::{ExactRatio, Scalar};

pub type VarId = usize;

/// Variable values; every variable of the model is integral.
pub type Assignment = Vec<i64>;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum VarKind {
    Binary,
    Integer,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Variable<S> {
    pub name: String,
    pub kind: VarKind,
    pub lb: S,
    pub ub: S,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Sense<S> {
    Le,
    Ge,
    Eq,
    /// `lo <= expr <= rhs`.
    Range(S),
}

/// `var == 1` when `positive`, `var == 0` otherwise.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Literal {
    pub var: VarId,
    pub positive: bool,
}

impl Literal {
    pub fn pos(var: VarId) -> Self {
        Literal { var, positive: true }
    }

    pub fn neg(var: VarId) -> Self {
        Literal { var, positive: false }
    }

    pub fn holds(&self, value: i64) -> bool {
        (value == 1) == self.positive
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Constraint<S> {
    pub name: String,
    pub terms: Vec<(VarId, S)>,
    pub sense: Sense<S>,
    pub rhs: S,
    /// The row is enforced only when every literal holds.
    pub indicators: Vec<Literal>,
}

impl<S: Scalar> Constraint<S> {
    fn activity(&self, values: &[i64]) -> ExactRatio {
        self.terms.iter().map(|(v, a)| a.to_exact() * ExactRatio::from_integer(values[*v] as i128)).sum()
    }

    pub fn is_enforced(&self, values: &[i64]) -> bool {
        self.indicators.iter().all(|l| l.holds(values[l.var]))
    }

    /// Whether the row holds under `values` (trivially so when not enforced).
    pub fn satisfied(&self, values: &[i64]) -> bool {
        if !self.is_enforced(values) {
            return true;
        }
        let act = self.activity(values);
        let rhs = self.rhs.to_exact();
        match self.sense {
            Sense::Le => act <= rhs,
            Sense::Ge => act >= rhs,
            Sense::Eq => act == rhs,
            Sense::Range(lo) => act >= lo.to_exact() && act <= rhs,
        }
    }
}

#[derive(Clone, Debug, Default)]
pub struct MipModel<S> {
    pub name: String,
    pub vars: Vec<Variable<S>>,
    pub constraints: Vec<Constraint<S>>,
    /// Minimized.
    pub objective: Vec<(VarId, S)>,
    index: HashMap<String, VarId>,
}

impl<S: Scalar> MipModel<S> {
    pub fn new(name: impl Into<String>) -> Self {
        MipModel { name: name.into(), vars: Vec::new(), constraints: Vec::new(), objective: Vec::new(), index: HashMap::new() }
    }

    fn push_var(&mut self, name: String, kind: VarKind, lb: S, ub: S) -> VarId {
        assert!(!self.index.contains_key(&name), "duplicate variable {name}");
        assert!(lb <= ub, "empty domain for {name}");
        let id = self.vars.len();
        self.index.insert(name.clone(), id);
        self.vars.push(Variable { name, kind, lb, ub });
        id
    }

    pub fn add_binary(&mut self, name: impl Into<String>) -> VarId {
        self.push_var(name.into(), VarKind::Binary, S::zero(), S::one())
    }

    pub fn add_integer(&mut self, name: impl Into<String>, lb: i64, ub: i64) -> VarId {
        self.push_var(name.into(), VarKind::Integer, S::from_int(lb), S::from_int(ub))
    }

    pub fn var_id(&self, name: &str) -> Option<VarId> {
        self.index.get(name).copied()
    }

    pub fn add_constraint(&mut self, name: impl Into<String>, terms: Vec<(VarId, S)>, sense: Sense<S>, rhs: S) -> usize {
        self.add_indicator(name, Vec::new(), terms, sense, rhs)
    }

    pub fn add_indicator(
        &mut self,
        name: impl Into<String>,
        indicators: Vec<Literal>,
        terms: Vec<(VarId, S)>,
        sense: Sense<S>,
        rhs: S,
    ) -> usize {
        for l in &indicators {
            assert_eq!(self.vars[l.var].kind, VarKind::Binary, "indicator on a non-binary variable");
        }
        let mut merged: Vec<(VarId, S)> = Vec::with_capacity(terms.len());
        for (v, a) in terms {
            if let Some(slot) = merged.iter_mut().find(|(w, _)| *w == v) {
                slot.1 = slot.1 + a;
            } else {
                merged.push((v, a));
            }
        }
        merged.retain(|(_, a)| !a.is_zero());
        self.constraints.push(Constraint { name: name.into(), terms: merged, sense, rhs, indicators });
        self.constraints.len() - 1
    }

    /// Pins `var` to `value` with a named equality row.
    pub fn fix(&mut self, name: impl Into<String>, var: VarId, value: i64) {
        self.add_constraint(name, vec![(var, S::one())], Sense::Eq, S::from_int(value));
    }

    pub fn set_objective(&mut self, terms: Vec<(VarId, S)>) {
        self.objective = terms;
    }

    pub fn num_vars(&self) -> usize {
        self.vars.len()
    }

    pub fn num_binaries(&self) -> usize {
        self.vars.iter().filter(|v| v.kind == VarKind::Binary).count()
    }

    pub fn objective_value(&self, values: &[i64]) -> S {
        S::from_exact(self.objective_exact(values))
    }

    pub fn objective_exact(&self, values: &[i64]) -> ExactRatio {
        self.objective.iter().map(|(v, c)| c.to_exact() * ExactRatio::from_integer(values[*v] as i128)).sum()
    }

    /// Names of every violated bound or row.
    pub fn violations(&self, values: &[i64]) -> Vec<String> {
        let mut out = Vec::new();
        if values.len() != self.vars.len() {
            out.push(format!("assignment has {} values for {} variables", values.len(), self.vars.len()));
            return out;
        }
        for (var, v) in self.vars.iter().zip(values) {
            let x = ExactRatio::from_integer(*v as i128);
            if x < var.lb.to_exact() || x > var.ub.to_exact() {
                out.push(format!("bound[{}]", var.name));
            }
        }
        for c in &self.constraints {
            if !c.satisfied(values) {
                out.push(c.name.clone());
            }
        }
        out
    }

    pub fn check(&self, values: &[i64]) -> Result<()> {
        match self.violations(values).into_iter().next() {
            None => Ok(()),
            Some(constraint) => Err(Error::Violation { constraint }),
        }
    }

    /// Smallest `M` such that the row holds for every value in the variable
    /// box once its indicators are released, for the `>=` part (`lower`) or
    /// the `<=` part of the row.
    pub fn big_m(&self, c: &Constraint<S>, lower: bool) -> ExactRatio {
        let (mut min_act, mut max_act) = (ExactRatio::from_integer(0), ExactRatio::from_integer(0));
        for (v, a) in &c.terms {
            let a = a.to_exact();
            let (lb, ub) = (self.vars[*v].lb.to_exact(), self.vars[*v].ub.to_exact());
            if a > ExactRatio::from_integer(0) {
                min_act += a * lb;
                max_act += a * ub;
            } else {
                min_act += a * ub;
                max_act += a * lb;
            }
        }
        let zero = ExactRatio::from_integer(0);
        if lower {
            let lo = match c.sense {
                Sense::Range(lo) => lo.to_exact(),
                _ => c.rhs.to_exact(),
            };
            (lo - min_act).max(zero)
        } else {
            (max_act - c.rhs.to_exact()).max(zero)
        }
    }
}

impl<S: Scalar> fmt::Display for MipModel<S> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}: {} variables ({} binary), {} constraints", self.name, self.vars.len(), self.num_binaries(), self.constraints.len())
    }
}

/// Builds term lists tersely: `terms(&[(x, 1), (y, -2)])`.
pub fn terms<S: Scalar>(pairs: &[(VarId, i64)]) -> Vec<(VarId, S)> {
    pairs.iter().map(|(v, a)| (*v, S::from_int(*a))).collect()
}
