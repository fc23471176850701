//! Plain-text dump and load of solver instances, for regression fixtures.
//!
//! ```text
//! steamgen-problem 1
//! vars <n>
//! hessian none | hessian followed by n rows
//! cost <n values>
//! eq <m>          followed by m rows "<n coefficients> | <rhs>"
//! le <m>          same layout
//! lower <n values>
//! upper <n values>
//! binaries <k> <indices>
//! ```
//!
//! Numbers use the shortest round-trip decimal form, so dump/load is exact.

use std::fmt::Write as _;

use nalgebra::{DMatrix, DVector};

use super::mip::MipProblem;
use super::problem::Problem;

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum DumpError {
    #[error("line {line}: {msg}")]
    Parse { line: usize, msg: String },
}

fn join(v: impl Iterator<Item = f64>) -> String {
    let mut s = String::new();
    for (i, x) in v.enumerate() {
        if i > 0 {
            s.push(' ');
        }
        write!(s, "{x}").unwrap();
    }
    s
}

pub fn dump_mip(mip: &MipProblem) -> String {
    let p = &mip.core;
    let n = p.num_vars();
    let mut s = String::from("steamgen-problem 1\n");
    writeln!(s, "vars {n}").unwrap();
    match &p.hessian {
        None => s.push_str("hessian none\n"),
        Some(h) => {
            s.push_str("hessian\n");
            for r in 0..n {
                writeln!(s, "{}", join(h.row(r).iter().copied())).unwrap();
            }
        }
    }
    writeln!(s, "cost {}", join(p.cost.iter().copied())).unwrap();
    for (tag, a, b) in [("eq", &p.a_eq, &p.b_eq), ("le", &p.a_in, &p.b_in)] {
        writeln!(s, "{tag} {}", a.nrows()).unwrap();
        for r in 0..a.nrows() {
            writeln!(s, "{} | {}", join(a.row(r).iter().copied()), b[r]).unwrap();
        }
    }
    writeln!(s, "lower {}", join(p.lower.iter().copied())).unwrap();
    writeln!(s, "upper {}", join(p.upper.iter().copied())).unwrap();
    let idx: Vec<String> = mip.binaries.iter().map(|b| b.to_string()).collect();
    writeln!(s, "binaries {} {}", mip.binaries.len(), idx.join(" ")).unwrap();
    s
}

pub fn dump_problem(problem: &Problem) -> String {
    dump_mip(&MipProblem { core: problem.clone(), binaries: Vec::new() })
}

struct Lines<'a> {
    it: std::iter::Enumerate<std::str::Lines<'a>>,
    line: usize,
}

impl<'a> Lines<'a> {
    fn next(&mut self) -> Result<&'a str, DumpError> {
        loop {
            let Some((i, l)) = self.it.next() else {
                return Err(self.err("unexpected end of input"));
            };
            self.line = i + 1;
            let l = l.trim();
            if !l.is_empty() && !l.starts_with('#') {
                return Ok(l);
            }
        }
    }

    fn err(&self, msg: &str) -> DumpError {
        DumpError::Parse { line: self.line, msg: msg.to_string() }
    }

    fn tagged(&mut self, tag: &str) -> Result<&'a str, DumpError> {
        let l = self.next()?;
        match l.strip_prefix(tag) {
            Some(rest) if rest.is_empty() || rest.starts_with(' ') => Ok(rest.trim()),
            _ => Err(self.err(&format!("expected '{tag}'"))),
        }
    }

    fn floats(&self, s: &str, n: usize) -> Result<Vec<f64>, DumpError> {
        let v: Result<Vec<f64>, _> = s.split_whitespace().map(str::parse::<f64>).collect();
        let v = v.map_err(|e| self.err(&e.to_string()))?;
        if v.len() != n {
            return Err(self.err(&format!("expected {n} numbers, found {}", v.len())));
        }
        Ok(v)
    }

    fn count(&self, s: &str) -> Result<usize, DumpError> {
        s.split_whitespace()
            .next()
            .and_then(|t| t.parse().ok())
            .ok_or_else(|| self.err("expected a count"))
    }
}

pub fn load_mip(text: &str) -> Result<MipProblem, DumpError> {
    let mut ls = Lines { it: text.lines().enumerate(), line: 0 };
    if ls.tagged("steamgen-problem")? != "1" {
        return Err(ls.err("unsupported format version"));
    }
    let rest = ls.tagged("vars")?;
    let n = ls.count(rest)?;
    let mut p = Problem::new(n);
    let h = ls.tagged("hessian")?;
    if h != "none" {
        let mut rows = Vec::with_capacity(n * n);
        for _ in 0..n {
            let l = ls.next()?;
            rows.extend(ls.floats(l, n)?);
        }
        p.hessian = Some(DMatrix::from_row_slice(n, n, &rows));
    }
    let rest = ls.tagged("cost")?;
    p.cost = DVector::from_vec(ls.floats(rest, n)?);
    for tag in ["eq", "le"] {
        let rest = ls.tagged(tag)?;
        let m = ls.count(rest)?;
        let mut a = Vec::with_capacity(m * n);
        let mut b = Vec::with_capacity(m);
        for _ in 0..m {
            let l = ls.next()?;
            let (coef, rhs) = l.split_once('|').ok_or_else(|| ls.err("missing '|'"))?;
            a.extend(ls.floats(coef, n)?);
            b.extend(ls.floats(rhs, 1)?);
        }
        let a = DMatrix::from_row_slice(m, n, &a);
        if tag == "eq" {
            p.a_eq = a;
            p.b_eq = DVector::from_vec(b);
        } else {
            p.a_in = a;
            p.b_in = DVector::from_vec(b);
        }
    }
    let rest = ls.tagged("lower")?;
    p.lower = DVector::from_vec(ls.floats(rest, n)?);
    let rest = ls.tagged("upper")?;
    p.upper = DVector::from_vec(ls.floats(rest, n)?);
    let rest = ls.tagged("binaries")?;
    let k = ls.count(rest)?;
    let binaries: Result<Vec<usize>, _> = rest.split_whitespace().skip(1).map(str::parse).collect();
    let binaries = binaries.map_err(|_| ls.err("bad binary index"))?;
    if binaries.len() != k || binaries.iter().any(|&j| j >= n) {
        return Err(ls.err("bad binary index list"));
    }
    Ok(MipProblem { core: p, binaries })
}

pub fn load_problem(text: &str) -> Result<Problem, DumpError> {
    load_mip(text).map(|m| m.core)
}
