// SPDX-License-Identifier: Apache-2.0

//! Exact depth-first branch and bound over integer programs with finite
//! bounds. Rows are scaled to integers; indicator rows are propagated
//! natively; one-hot groups tighten activity bounds.

use std::collections::VecDeque;
use std::time::Instant;

use num_integer::Integer;
use num_traits::One;

use crate::error::{Error, Result};
use crate::mip::model::{MipModel, Sense, VarKind};
use crate::scalar::{ExactRatio, Scalar};

/// `Σ a x >= rhs`, enforced when every literal holds.
#[derive(Clone, Debug)]
struct Row {
    terms: Vec<(usize, i128)>,
    rhs: i128,
    lits: Vec<(usize, bool)>,
    /// Contiguous ranges of `terms` whose variables are pairwise exclusive.
    segments: Vec<(usize, usize)>,
    /// Terms before this index are handled one by one.
    singles: usize,
    source: usize,
}

fn lcm_of_denoms<'a>(values: impl Iterator<Item = &'a ExactRatio>) -> i128 {
    values.fold(1i128, |acc, v| acc.lcm(v.denom()))
}

fn scale(v: &ExactRatio, by: i128) -> i128 {
    (v * ExactRatio::from_integer(by)).to_integer()
}

#[derive(Clone, Debug)]
pub(crate) struct Compiled {
    rows: Vec<Row>,
    pub(crate) binary: Vec<bool>,
    lb0: Vec<i128>,
    ub0: Vec<i128>,
    obj: Vec<(usize, i128)>,
    watch: Vec<Vec<usize>>,
}

impl Compiled {
    pub(crate) fn new<S: Scalar>(model: &MipModel<S>) -> Result<Self> {
        let n = model.vars.len();
        let mut rows = Vec::new();
        for (ci, c) in model.constraints.iter().enumerate() {
            let terms: Vec<(usize, ExactRatio)> = c.terms.iter().map(|(v, a)| (*v, a.to_exact())).collect();
            let rhs = c.rhs.to_exact();
            let lo = match c.sense {
                Sense::Range(lo) => Some(lo.to_exact()),
                _ => None,
            };
            let k = lcm_of_denoms(terms.iter().map(|t| &t.1).chain([&rhs]).chain(lo.iter()));
            let base: Vec<(usize, i128)> = terms.iter().map(|(v, a)| (*v, scale(a, k))).collect();
            let neg: Vec<(usize, i128)> = base.iter().map(|(v, a)| (*v, -a)).collect();
            let lits: Vec<(usize, bool)> = c.indicators.iter().map(|l| (l.var, l.positive)).collect();
            let mut push = |terms: Vec<(usize, i128)>, rhs: i128| {
                rows.push(Row { terms, rhs, lits: lits.clone(), segments: Vec::new(), singles: 0, source: ci });
            };
            match c.sense {
                Sense::Ge => push(base, scale(&rhs, k)),
                Sense::Le => push(neg, -scale(&rhs, k)),
                Sense::Eq => {
                    push(base, scale(&rhs, k));
                    push(neg, -scale(&rhs, k));
                }
                Sense::Range(_) => {
                    push(base, scale(&lo.expect("range"), k));
                    push(neg, -scale(&rhs, k));
                }
            }
        }
        let mut lb0 = Vec::with_capacity(n);
        let mut ub0 = Vec::with_capacity(n);
        for v in &model.vars {
            let (lb, ub) = (v.lb.to_exact(), v.ub.to_exact());
            lb0.push(lb.ceil().to_integer());
            ub0.push(ub.floor().to_integer());
        }
        let binary: Vec<bool> = model.vars.iter().map(|v| v.kind == VarKind::Binary).collect();
        let k = lcm_of_denoms(model.objective.iter().map(|(_, c)| c.to_exact()).collect::<Vec<_>>().iter());
        let obj = model.objective.iter().map(|(v, c)| (*v, scale(&c.to_exact(), k))).collect();

        // One-hot groups: equality rows `Σ x = 1` over binaries.
        let mut group_of: Vec<Option<usize>> = vec![None; n];
        let mut group_rows = std::collections::BTreeSet::new();
        let mut ngroups = 0;
        for (ci, c) in model.constraints.iter().enumerate() {
            let is_group = c.sense == Sense::Eq
                && c.indicators.is_empty()
                && c.terms.len() > 1
                && c.rhs.to_exact().is_one()
                && c.terms.iter().all(|(v, a)| a.to_exact().is_one() && binary[*v]);
            if is_group {
                for (v, _) in &c.terms {
                    group_of[*v].get_or_insert(ngroups);
                }
                group_rows.insert(ci);
                ngroups += 1;
            }
        }
        for row in rows.iter_mut() {
            if group_rows.contains(&row.source) {
                row.singles = row.terms.len();
                continue;
            }
            let key = |t: &(usize, i128)| group_of[t.0].map_or((0, 0), |g| (1, g + 1));
            row.terms.sort_by_key(|t| (key(t), t.0));
            let singles = row.terms.iter().take_while(|t| key(t).0 == 0).count();
            let mut segments = Vec::new();
            let mut j = singles;
            while j < row.terms.len() {
                let kj = key(&row.terms[j]);
                let mut e = j + 1;
                while e < row.terms.len() && key(&row.terms[e]) == kj {
                    e += 1;
                }
                segments.push((j, e));
                j = e;
            }
            row.singles = singles;
            row.segments = segments;
        }
        let mut watch = vec![Vec::new(); n];
        for (r, row) in rows.iter().enumerate() {
            for (v, _) in &row.terms {
                watch[*v].push(r);
            }
            for (v, _) in &row.lits {
                watch[*v].push(r);
            }
        }
        for w in watch.iter_mut() {
            w.dedup();
        }
        for (v, (lb, ub)) in lb0.iter().zip(&ub0).enumerate() {
            if lb > ub {
                return Err(Error::Infeasible(format!("empty domain for {}", model.vars[v].name)));
            }
        }
        Ok(Compiled { rows, binary, lb0, ub0, obj, watch })
    }
}

pub(crate) enum Propagation {
    Ok,
    Conflict(usize),
}

/// Search state over a compiled program.
pub(crate) struct Engine<'a> {
    c: &'a Compiled,
    pub(crate) lb: Vec<i128>,
    pub(crate) ub: Vec<i128>,
    trail: Vec<(usize, i128, i128)>,
    queue: VecDeque<usize>,
    queued: Vec<bool>,
}

impl<'a> Engine<'a> {
    pub(crate) fn new(c: &'a Compiled) -> Self {
        Engine { c, lb: c.lb0.clone(), ub: c.ub0.clone(), trail: Vec::new(), queue: VecDeque::new(), queued: vec![false; c.rows.len()] }
    }

    fn enqueue_var(&mut self, v: usize) {
        for &r in &self.c.watch[v] {
            if !self.queued[r] {
                self.queued[r] = true;
                self.queue.push_back(r);
            }
        }
    }

    fn enqueue_all(&mut self) {
        for r in 0..self.c.rows.len() {
            if !self.queued[r] {
                self.queued[r] = true;
                self.queue.push_back(r);
            }
        }
    }

    /// Tightens the domain of `v`; returns false when it becomes empty.
    pub(crate) fn set(&mut self, v: usize, lb: i128, ub: i128) -> bool {
        let (nl, nu) = (lb.max(self.lb[v]), ub.min(self.ub[v]));
        if nl == self.lb[v] && nu == self.ub[v] {
            return true;
        }
        self.trail.push((v, self.lb[v], self.ub[v]));
        self.lb[v] = nl;
        self.ub[v] = nu;
        self.enqueue_var(v);
        nl <= nu
    }

    fn undo(&mut self, len: usize) {
        while self.trail.len() > len {
            let (v, l, u) = self.trail.pop().expect("trail entry");
            self.lb[v] = l;
            self.ub[v] = u;
        }
        for r in self.queue.drain(..) {
            self.queued[r] = false;
        }
    }

    fn segment_max(&self, row: &Row, s: (usize, usize)) -> i128 {
        let terms = &row.terms[s.0..s.1];
        if let Some((_, a)) = terms.iter().find(|(v, _)| self.lb[*v] == 1) {
            return *a;
        }
        terms.iter().filter(|(v, _)| self.ub[*v] == 1).map(|(_, a)| *a).fold(0, i128::max)
    }

    fn max_activity(&self, row: &Row) -> i128 {
        let mut act = 0i128;
        for (v, a) in &row.terms[..row.singles] {
            act += if *a > 0 { a * self.ub[*v] } else { a * self.lb[*v] };
        }
        for s in &row.segments {
            act += self.segment_max(row, *s);
        }
        act
    }

    fn process(&mut self, r: usize) -> bool {
        let row = &self.c.rows[r];
        let mut open = None;
        let mut nopen = 0;
        for (v, pos) in &row.lits {
            if self.lb[*v] == self.ub[*v] {
                if (self.lb[*v] == 1) != *pos {
                    return true;
                }
            } else {
                nopen += 1;
                open = Some((*v, *pos));
            }
        }
        if nopen > 1 {
            return true;
        }
        let maxact = self.max_activity(row);
        if let Some((v, pos)) = open {
            if maxact < row.rhs {
                let val = if pos { 0 } else { 1 };
                return self.set(v, val, val);
            }
            return true;
        }
        if maxact < row.rhs {
            return false;
        }
        let need = row.rhs;
        for j in 0..row.singles {
            let (v, a) = row.terms[j];
            if self.lb[v] == self.ub[v] {
                continue;
            }
            if a > 0 {
                let rest = maxact - a * self.ub[v];
                let bound = Integer::div_ceil(&(need - rest), &a);
                if bound > self.lb[v] && !self.set(v, bound, i128::MAX) {
                    return false;
                }
            } else {
                let rest = maxact - a * self.lb[v];
                let bound = Integer::div_floor(&(need - rest), &a);
                if bound < self.ub[v] && !self.set(v, i128::MIN, bound) {
                    return false;
                }
            }
        }
        for s in row.segments.clone() {
            let row = &self.c.rows[r];
            let terms = &row.terms[s.0..s.1];
            if terms.iter().any(|(v, _)| self.lb[*v] == 1) {
                continue;
            }
            let smax = self.segment_max(row, s);
            let base = maxact - smax;
            let zero: Vec<usize> = terms.iter().filter(|(v, a)| self.lb[*v] < self.ub[*v] && base + *a < need).map(|(v, _)| *v).collect();
            for v in zero {
                if !self.set(v, 0, 0) {
                    return false;
                }
            }
        }
        true
    }

    pub(crate) fn propagate(&mut self) -> Propagation {
        while let Some(r) = self.queue.pop_front() {
            self.queued[r] = false;
            if !self.process(r) {
                for q in self.queue.drain(..) {
                    self.queued[q] = false;
                }
                return Propagation::Conflict(self.c.rows[r].source);
            }
        }
        Propagation::Ok
    }

    fn objective_bound(&self) -> i128 {
        self.c.obj.iter().map(|(v, c)| if *c > 0 { c * self.lb[*v] } else { c * self.ub[*v] }).sum()
    }

    fn objective_at_lb(&self) -> i128 {
        self.c.obj.iter().map(|(v, c)| c * self.lb[*v]).sum()
    }

    /// Whether setting every variable to its lower bound satisfies all rows.
    fn lb_point_feasible(&self) -> bool {
        self.c.rows.iter().all(|row| {
            if row.lits.iter().any(|(v, pos)| (self.lb[*v] == 1) != *pos) {
                return true;
            }
            let act: i128 = row.terms.iter().map(|(v, a)| a * self.lb[*v]).sum();
            act >= row.rhs
        })
    }

    fn lb_point_optimal(&self) -> bool {
        self.c.obj.iter().all(|(v, c)| *c >= 0 || self.lb[*v] == self.ub[*v])
    }
}

#[derive(Clone, Debug, PartialEq)]
pub(crate) enum Outcome {
    Optimal,
    Infeasible { constraint: Option<usize> },
    Interrupted,
}

pub(crate) struct SearchResult {
    pub(crate) outcome: Outcome,
    pub(crate) best: Option<Vec<i64>>,
    pub(crate) root_bound: Option<i128>,
    pub(crate) nodes: u64,
}

struct Frame {
    trail: usize,
    var: usize,
    alt: Option<(i128, i128)>,
    scan_from: usize,
}

/// Depth-first search; `incumbent` must be feasible when given.
pub(crate) fn search(
    c: &Compiled,
    fixings: &[(usize, i64)],
    incumbent: Option<Vec<i64>>,
    deadline: Option<Instant>,
    node_limit: Option<u64>,
) -> SearchResult {
    let mut e = Engine::new(c);
    let mut best_obj: Option<i128> = None;
    let mut best: Option<Vec<i64>> = None;
    if let Some(inc) = incumbent {
        best_obj = Some(c.obj.iter().map(|(v, k)| k * inc[*v] as i128).sum());
        best = Some(inc);
    }
    let mut nodes = 0u64;
    let mut conflict_row = None;
    let mut ok = fixings.iter().all(|(v, x)| e.set(*v, *x as i128, *x as i128));
    e.enqueue_all();
    if ok {
        match e.propagate() {
            Propagation::Ok => {}
            Propagation::Conflict(r) => {
                ok = false;
                conflict_row = Some(r);
            }
        }
    }
    let root_bound = ok.then(|| e.objective_bound());
    let mut frames: Vec<Frame> = Vec::new();
    let mut scan_from = 0usize;
    let mut first_failure: Option<usize> = conflict_row;
    'node: loop {
        if ok {
            nodes += 1;
            if nodes.is_multiple_of(256) && (deadline.is_some_and(|d| Instant::now() >= d) || node_limit.is_some_and(|l| nodes >= l)) {
                return SearchResult { outcome: Outcome::Interrupted, best, root_bound, nodes };
            }
            let pruned = best_obj.is_some_and(|b| e.objective_bound() >= b);
            if !pruned {
                let pick = (scan_from..c.binary.len()).find(|v| c.binary[*v] && e.lb[*v] < e.ub[*v]);
                let (var, first, second) = match pick {
                    Some(v) => (v, (0, 0), (1, 1)),
                    None => {
                        let open_int = (0..c.binary.len()).find(|v| e.lb[*v] < e.ub[*v]);
                        if e.lb_point_feasible() && (open_int.is_none() || e.lb_point_optimal()) {
                            let obj = e.objective_at_lb();
                            if best_obj.is_none_or(|b| obj < b) {
                                best_obj = Some(obj);
                                best = Some(e.lb.iter().map(|x| *x as i64).collect());
                            }
                            (usize::MAX, (0, 0), (0, 0))
                        } else if let Some(v) = open_int {
                            let mid = e.lb[v] + (e.ub[v] - e.lb[v]) / 2;
                            (v, (e.lb[v], mid), (mid + 1, e.ub[v]))
                        } else {
                            (usize::MAX, (0, 0), (0, 0))
                        }
                    }
                };
                if var != usize::MAX {
                    let next_scan = if c.binary[var] { var } else { c.binary.len() };
                    frames.push(Frame { trail: e.trail.len(), var, alt: Some(second), scan_from });
                    scan_from = next_scan;
                    ok = e.set(var, first.0, first.1) && matches!(e.propagate(), Propagation::Ok);
                    continue 'node;
                }
            }
        }
        loop {
            let Some(f) = frames.pop() else {
                let outcome = if best.is_some() { Outcome::Optimal } else { Outcome::Infeasible { constraint: first_failure.take() } };
                return SearchResult { outcome, best, root_bound, nodes };
            };
            e.undo(f.trail);
            if let Some(dom) = f.alt {
                frames.push(Frame { trail: f.trail, var: f.var, alt: None, scan_from: f.scan_from });
                scan_from = if c.binary[f.var] { f.var } else { c.binary.len() };
                ok = e.set(f.var, dom.0, dom.1) && matches!(e.propagate(), Propagation::Ok);
                continue 'node;
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mip::model::{terms, Literal, MipModel};

    fn run(m: &MipModel<f64>) -> SearchResult {
        let c = Compiled::new(m).unwrap();
        search(&c, &[], None, None, None)
    }

    #[test]
    fn one_hot_objective_index() {
        let mut m = MipModel::<f64>::new("oh");
        let xs: Vec<usize> = (0..3).map(|j| m.add_binary(format!("x{j}"))).collect();
        m.add_constraint("one", terms(&[(xs[0], 1), (xs[1], 1), (xs[2], 1)]), Sense::Eq, 1.0);
        m.set_objective(terms(&[(xs[1], 1), (xs[2], 2)]));
        let r = run(&m);
        assert_eq!(r.outcome, Outcome::Optimal);
        assert_eq!(r.best.unwrap(), vec![1, 0, 0]);
    }

    #[test]
    fn infeasible_names_a_row() {
        let mut m = MipModel::<f64>::new("inf");
        let x = m.add_integer("x", 0, 10);
        m.add_constraint("cap", terms(&[(x, 1)]), Sense::Le, 3.0);
        m.add_constraint("need", terms(&[(x, 1)]), Sense::Ge, 5.0);
        let r = run(&m);
        assert!(matches!(r.outcome, Outcome::Infeasible { constraint: Some(_) }));
    }

    #[test]
    fn indicators_and_integers() {
        // min y s.t. b=1 => y >= 7, b=0 => y >= 2x, x >= 4.
        let mut m = MipModel::<f64>::new("ind");
        let b = m.add_binary("b");
        let x = m.add_integer("x", 0, 10);
        let y = m.add_integer("y", 0, 100);
        m.add_indicator("on", vec![Literal::pos(b)], terms(&[(y, 1)]), Sense::Ge, 7.0);
        m.add_indicator("off", vec![Literal::neg(b)], terms(&[(y, 1), (x, -2)]), Sense::Ge, 0.0);
        m.add_constraint("x", terms(&[(x, 1)]), Sense::Ge, 4.0);
        m.set_objective(terms(&[(y, 1)]));
        let r = run(&m);
        assert_eq!(r.outcome, Outcome::Optimal);
        let a = r.best.unwrap();
        assert_eq!((a[b], a[y]), (1, 7));
    }

    #[test]
    fn negative_objective_on_integer_is_branched() {
        let mut m = MipModel::<f64>::new("neg");
        let x = m.add_integer("x", 0, 9);
        let y = m.add_integer("y", 0, 9);
        m.add_constraint("c", terms(&[(x, 2), (y, 3)]), Sense::Le, 12.0);
        m.set_objective(terms(&[(x, -1), (y, -1)]));
        let r = run(&m);
        let a = r.best.unwrap();
        assert_eq!(a[x] + a[y], 6);
    }

    #[test]
    fn rational_coefficients_scale_exactly() {
        let mut m = MipModel::<crate::Rational>::new("rat");
        let x = m.add_integer("x", 0, 10);
        m.add_constraint("c", vec![(x, crate::Rational::new(1, 3))], Sense::Ge, crate::Rational::new(4, 3));
        m.set_objective(vec![(x, crate::Rational::new(1, 2))]);
        let c = Compiled::new(&m).unwrap();
        let r = search(&c, &[], None, None, None);
        assert_eq!(r.best.unwrap(), vec![4]);
    }
}
