// SPDX-License-Identifier: Apache-2.0

//! Fixed-format MPS export and `name value` solution files.
//!
//! Column and row names are mangled to eight characters (`C0000012`,
//! `R0000345`); the mangling table maps them back. Indicator rows are written
//! in big-M form with `M` derived from the variable bounds of each row.

use std::collections::HashMap;
use std::fmt::Write as _;

use num_traits::{Signed, ToPrimitive, Zero};

use crate::error::{Error, Result};
use crate::mip::model::{Assignment, Constraint, MipModel, Sense, VarKind};
use crate::scalar::{ExactRatio, Scalar};

const NAME_LIMIT: usize = 10_000_000;

#[derive(Clone, Debug, PartialEq)]
pub struct MpsDocument {
    pub text: String,
    /// Mangled column name per variable.
    pub columns: Vec<String>,
    /// `mangled original` per line, columns first, then rows.
    pub table: String,
}

impl MpsDocument {
    pub fn column_index(&self) -> HashMap<&str, usize> {
        self.columns.iter().enumerate().map(|(i, c)| (c.as_str(), i)).collect()
    }
}

/// Writes `v` in at most 12 characters. Values that need rounding round
/// towards `+inf` when `up`, so relaxed big-M terms stay valid.
pub fn format_number(v: &ExactRatio, up: bool) -> String {
    if v.is_integer() {
        let s = v.to_integer().to_string();
        if s.len() <= 12 {
            return s;
        }
    }
    let f = v.to_f64().unwrap_or(0.0);
    let plain = format!("{f}");
    if plain.len() <= 12 && f.to_exact() == *v {
        return plain;
    }
    for digits in (1..=6).rev() {
        let s = format!("{f:.digits$e}");
        if s.len() > 12 {
            continue;
        }
        let parsed: f64 = s.parse().unwrap_or(f);
        if !up || parsed.to_exact() >= *v {
            return s;
        }
        let step = 10f64.powi(parsed.abs().log10().floor() as i32 - digits as i32);
        let bumped = format!("{:.digits$e}", parsed + step);
        if bumped.len() <= 12 {
            return bumped;
        }
    }
    format!("{f:e}")
}

#[derive(Clone, Debug)]
struct OutRow {
    kind: char,
    terms: Vec<(usize, ExactRatio)>,
    rhs: ExactRatio,
    range: Option<ExactRatio>,
    origin: String,
}

fn linearize<S: Scalar>(model: &MipModel<S>, c: &Constraint<S>, out: &mut Vec<OutRow>) {
    let terms: Vec<(usize, ExactRatio)> = c.terms.iter().map(|(v, a)| (*v, a.to_exact())).collect();
    let rhs = c.rhs.to_exact();
    if c.indicators.is_empty() {
        let (kind, range) = match c.sense {
            Sense::Le => ('L', None),
            Sense::Ge => ('G', None),
            Sense::Eq => ('E', None),
            Sense::Range(lo) => ('L', Some(rhs - lo.to_exact())),
        };
        out.push(OutRow { kind, terms, rhs, range, origin: c.name.clone() });
        return;
    }
    let mut part = |lower: bool, suffix: &str| {
        let m = model.big_m(c, lower);
        let mut t = terms.clone();
        let mut r = if lower {
            match c.sense {
                Sense::Range(lo) => lo.to_exact(),
                _ => rhs,
            }
        } else {
            rhs
        };
        // Released by M whenever some literal fails: lower part gets `- M (1 - lit)`.
        let sign = if lower { ExactRatio::from_integer(1) } else { ExactRatio::from_integer(-1) };
        for l in &c.indicators {
            if l.positive {
                t.push((l.var, -sign * m));
                r -= sign * m;
            } else {
                t.push((l.var, sign * m));
            }
        }
        out.push(OutRow { kind: if lower { 'G' } else { 'L' }, terms: t, rhs: r, range: None, origin: format!("{}{suffix}", c.name) });
    };
    match c.sense {
        Sense::Ge => part(true, ""),
        Sense::Le => part(false, ""),
        Sense::Eq | Sense::Range(_) => {
            part(true, ".lo");
            part(false, ".hi");
        }
    }
}

fn pad(s: &str) -> String {
    format!("{s:<8}")
}

pub fn export_mps<S: Scalar>(model: &MipModel<S>) -> Result<MpsDocument> {
    if model.vars.len() >= NAME_LIMIT {
        return Err(Error::Export(format!("{} columns exceed the 8-character name space", model.vars.len())));
    }
    let mut rows = Vec::new();
    for c in &model.constraints {
        linearize(model, c, &mut rows);
    }
    if rows.len() >= NAME_LIMIT {
        return Err(Error::Export(format!("{} rows exceed the 8-character name space", rows.len())));
    }
    let columns: Vec<String> = (0..model.vars.len()).map(|i| format!("C{i:07}")).collect();
    let row_names: Vec<String> = (0..rows.len()).map(|i| format!("R{i:07}")).collect();
    let mut seen = std::collections::HashSet::new();
    for n in columns.iter().chain(&row_names) {
        if n.len() > 8 || !seen.insert(n.as_str()) || n == "OBJ" {
            return Err(Error::Export(format!("name collision on {n}")));
        }
    }

    let mut by_col: Vec<Vec<(usize, ExactRatio)>> = vec![Vec::new(); model.vars.len()];
    for (r, row) in rows.iter().enumerate() {
        for (v, a) in &row.terms {
            if !a.is_zero() {
                by_col[*v].push((r, *a));
            }
        }
    }
    let mut obj: Vec<Option<ExactRatio>> = vec![None; model.vars.len()];
    for (v, c) in &model.objective {
        let c = c.to_exact();
        obj[*v] = Some(obj[*v].unwrap_or_default() + c);
    }

    let mut s = String::new();
    let name: String = model.name.chars().filter(|c| !c.is_whitespace()).take(8).collect();
    let _ = writeln!(s, "NAME          {}", if name.is_empty() { "MODEL".into() } else { name });
    s.push_str("ROWS\n N  OBJ\n");
    for (r, row) in rows.iter().enumerate() {
        let _ = writeln!(s, " {}  {}", row.kind, row_names[r]);
    }
    s.push_str("COLUMNS\n");
    let mut in_int = false;
    for (v, var) in model.vars.iter().enumerate() {
        let int = matches!(var.kind, VarKind::Binary | VarKind::Integer);
        if int && !in_int {
            s.push_str("    MARKER                 'MARKER'                 'INTORG'\n");
            in_int = true;
        }
        let mut entries: Vec<(String, ExactRatio)> = Vec::new();
        if let Some(c) = obj[v] {
            if !c.is_zero() {
                entries.push(("OBJ".into(), c));
            }
        }
        for (r, a) in &by_col[v] {
            entries.push((row_names[*r].clone(), *a));
        }
        if entries.is_empty() {
            entries.push(("OBJ".into(), ExactRatio::zero()));
        }
        for (row, a) in entries {
            let _ = writeln!(s, "    {}  {}  {}", pad(&columns[v]), pad(&row), format_number(&a, a.is_positive()));
        }
    }
    if in_int {
        s.push_str("    MARKER                 'MARKER'                 'INTEND'\n");
    }
    s.push_str("RHS\n");
    for (r, row) in rows.iter().enumerate() {
        if !row.rhs.is_zero() {
            let _ = writeln!(s, "    {}  {}  {}", pad("RHS"), pad(&row_names[r]), format_number(&row.rhs, false));
        }
    }
    if rows.iter().any(|r| r.range.is_some()) {
        s.push_str("RANGES\n");
        for (r, row) in rows.iter().enumerate() {
            if let Some(rg) = &row.range {
                let _ = writeln!(s, "    {}  {}  {}", pad("RNG"), pad(&row_names[r]), format_number(rg, false));
            }
        }
    }
    s.push_str("BOUNDS\n");
    for (v, var) in model.vars.iter().enumerate() {
        let (lb, ub) = (var.lb.to_exact(), var.ub.to_exact());
        let _ = writeln!(s, " LO {}  {}  {}", pad("BND"), pad(&columns[v]), format_number(&lb, false));
        let _ = writeln!(s, " UP {}  {}  {}", pad("BND"), pad(&columns[v]), format_number(&ub, false));
    }
    s.push_str("ENDATA\n");

    let mut table = String::new();
    for (v, var) in model.vars.iter().enumerate() {
        let _ = writeln!(table, "{} {}", columns[v], var.name);
    }
    for (r, row) in rows.iter().enumerate() {
        let _ = writeln!(table, "{} {}", row_names[r], row.origin);
    }
    Ok(MpsDocument { text: s, columns, table })
}

#[derive(Clone, Debug, PartialEq)]
pub struct ParsedSolution {
    pub values: Assignment,
    /// Solver status from a `# status <word>` line, if present.
    pub status: Option<String>,
    pub missing: Vec<String>,
}

/// Reads `name value` lines; names may be mangled or original. Missing
/// variables default to zero.
pub fn parse_solution<S: Scalar>(text: &str, doc: &MpsDocument, model: &MipModel<S>) -> Result<ParsedSolution> {
    let index = doc.column_index();
    let mut values: Vec<Option<i64>> = vec![None; model.vars.len()];
    let mut status = None;
    for (lineno, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        if let Some(rest) = line.strip_prefix('#') {
            let mut it = rest.split_whitespace();
            if it.next() == Some("status") {
                status = it.next().map(|s| s.to_lowercase());
            }
            continue;
        }
        let mut it = line.split_whitespace();
        let (Some(name), Some(value), None) = (it.next(), it.next(), it.next()) else {
            return Err(Error::Parse(format!("line {}: expected `name value`", lineno + 1)));
        };
        let v = index
            .get(name)
            .copied()
            .or_else(|| model.var_id(name))
            .ok_or_else(|| Error::Parse(format!("line {}: unknown variable {name}", lineno + 1)))?;
        let x: f64 = value.parse().map_err(|_| Error::Parse(format!("line {}: bad value {value}", lineno + 1)))?;
        if !x.is_finite() {
            return Err(Error::Parse(format!("line {}: non-finite value", lineno + 1)));
        }
        values[v] = Some(x.round() as i64);
    }
    let mut missing = Vec::new();
    let values = values
        .into_iter()
        .enumerate()
        .map(|(i, v)| {
            v.unwrap_or_else(|| {
                missing.push(model.vars[i].name.clone());
                0
            })
        })
        .collect();
    if !missing.is_empty() {
        log::warn!("solution omits {} variables (first: {}); they default to 0", missing.len(), missing[0]);
    }
    Ok(ParsedSolution { values, status, missing })
}

/// Solution file in the same `name value` format, with mangled names.
pub fn write_solution(doc: &MpsDocument, values: &[i64]) -> String {
    let mut s = String::new();
    for (c, v) in doc.columns.iter().zip(values) {
        let _ = writeln!(s, "{c} {v}");
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mip::model::{terms, Literal};

    #[test]
    fn numbers_fit_twelve_columns() {
        for v in [ExactRatio::from_integer(7), ExactRatio::new(1, 1_000_000), ExactRatio::from_integer(-123_456_789_012_345)] {
            assert!(format_number(&v, false).len() <= 12, "{v}");
        }
        assert_eq!(format_number(&ExactRatio::new(1, 1_000_000), false), "0.000001");
        assert_eq!(format_number(&ExactRatio::from_integer(-42), false), "-42");
        let big = ExactRatio::from_integer(123_456_789_012_345);
        let up: f64 = format_number(&big, true).parse().unwrap();
        assert!(up >= 123_456_789_012_345.0);
    }

    #[test]
    fn indicator_rows_become_big_m() {
        let mut m = MipModel::<f64>::new("bigm");
        let b = m.add_binary("b");
        let x = m.add_integer("x", 0, 10);
        m.add_indicator("ind", vec![Literal::pos(b)], terms(&[(x, 1)]), Sense::Ge, 5.0);
        let mut rows = Vec::new();
        linearize(&m, &m.constraints[0], &mut rows);
        // x - 5 b >= 0
        assert_eq!(rows.len(), 1);
        assert_eq!(rows[0].terms, vec![(x, ExactRatio::from_integer(1)), (b, ExactRatio::from_integer(-5))]);
        assert_eq!(rows[0].rhs, ExactRatio::from_integer(0));
        // Each released/enforced combination agrees with the indicator semantics.
        for bv in 0..2 {
            for xv in 0..=10 {
                let act = xv - 5 * bv;
                assert_eq!(act >= 0, bv == 0 || xv >= 5);
            }
        }
    }

    #[test]
    fn round_trip_names() {
        let mut m = MipModel::<f64>::new("rt");
        let b = m.add_binary("b");
        let x = m.add_integer("x", 0, 3);
        m.add_constraint("c", terms(&[(b, 1), (x, 1)]), Sense::Le, 3.0);
        let doc = export_mps(&m).unwrap();
        let sol = write_solution(&doc, &[1, 2]);
        let parsed = parse_solution(&sol, &doc, &m).unwrap();
        assert_eq!(parsed.values, vec![1, 2]);
        assert!(parse_solution("nope 1\n", &doc, &m).is_err());
        let partial = parse_solution("# status optimal\nC0000000 1\n", &doc, &m).unwrap();
        assert_eq!(partial.values, vec![1, 0]);
        assert_eq!(partial.missing, vec!["x".to_string()]);
        assert_eq!(partial.status.as_deref(), Some("optimal"));
    }
}
