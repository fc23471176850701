use nalgebra::{DMatrix, DVector};

use super::SolverError;

/// Dense optimization problem
///
/// ```text
///     minimize    1/2 x' H x + c' x
///     subject to  A_eq x  = b_eq
///                 A_in x <= b_in
///                 lb <= x <= ub
/// ```
///
/// `hessian == None` makes it an LP. Infinite bounds are allowed.
#[derive(Debug, Clone, PartialEq)]
pub struct Problem {
    pub hessian: Option<DMatrix<f64>>,
    pub cost: DVector<f64>,
    pub a_eq: DMatrix<f64>,
    pub b_eq: DVector<f64>,
    pub a_in: DMatrix<f64>,
    pub b_in: DVector<f64>,
    pub lower: DVector<f64>,
    pub upper: DVector<f64>,
}

impl Problem {
    /// Unconstrained problem in `n` variables with zero cost.
    pub fn new(n: usize) -> Self {
        Self {
            hessian: None,
            cost: DVector::zeros(n),
            a_eq: DMatrix::zeros(0, n),
            b_eq: DVector::zeros(0),
            a_in: DMatrix::zeros(0, n),
            b_in: DVector::zeros(0),
            lower: DVector::from_element(n, f64::NEG_INFINITY),
            upper: DVector::from_element(n, f64::INFINITY),
        }
    }

    pub fn num_vars(&self) -> usize {
        self.cost.len()
    }

    pub fn validate(&self) -> Result<(), SolverError> {
        let n = self.num_vars();
        let dims_ok = self.a_eq.ncols() == n
            && self.a_in.ncols() == n
            && self.a_eq.nrows() == self.b_eq.len()
            && self.a_in.nrows() == self.b_in.len()
            && self.lower.len() == n
            && self.upper.len() == n
            && self
                .hessian
                .as_ref()
                .map_or(true, |h| h.nrows() == n && h.ncols() == n);
        if !dims_ok {
            return Err(SolverError::Dimension);
        }
        if let Some(h) = &self.hessian {
            if (h - h.transpose()).amax() > 1e-9 * (1.0 + h.amax()) {
                return Err(SolverError::NotSymmetric);
            }
        }
        let finite = self.cost.iter().all(|v| v.is_finite())
            && self.a_eq.iter().all(|v| v.is_finite())
            && self.a_in.iter().all(|v| v.is_finite())
            && self.b_eq.iter().all(|v| v.is_finite())
            && self.b_in.iter().all(|v| v.is_finite());
        if !finite {
            return Err(SolverError::NonFinite);
        }
        Ok(())
    }

    pub fn objective(&self, x: &DVector<f64>) -> f64 {
        let lin = self.cost.dot(x);
        match &self.hessian {
            Some(h) => lin + 0.5 * x.dot(&(h * x)),
            None => lin,
        }
    }

    /// Largest constraint violation of `x` (equalities, inequalities, bounds).
    pub fn max_violation(&self, x: &DVector<f64>) -> f64 {
        let mut worst: f64 = 0.0;
        if self.a_eq.nrows() > 0 {
            worst = worst.max((&self.a_eq * x - &self.b_eq).amax());
        }
        if self.a_in.nrows() > 0 {
            let r = &self.a_in * x - &self.b_in;
            worst = worst.max(r.max().max(0.0));
        }
        for i in 0..x.len() {
            worst = worst.max(self.lower[i] - x[i]).max(x[i] - self.upper[i]);
        }
        worst
    }

    /// Replaces the equality block with `rows` (each `(coefficients, rhs)`).
    pub fn set_eq(&mut self, rows: &[(Vec<f64>, f64)]) {
        let (a, b) = stack_rows(self.num_vars(), rows);
        self.a_eq = a;
        self.b_eq = b;
    }

    /// Replaces the inequality block (`row . x <= rhs`) with `rows`.
    pub fn set_le(&mut self, rows: &[(Vec<f64>, f64)]) {
        let (a, b) = stack_rows(self.num_vars(), rows);
        self.a_in = a;
        self.b_in = b;
    }

    pub fn push_eq(&mut self, row: &[f64], rhs: f64) {
        push_row(&mut self.a_eq, &mut self.b_eq, row, rhs);
    }

    pub fn push_le(&mut self, row: &[f64], rhs: f64) {
        push_row(&mut self.a_in, &mut self.b_in, row, rhs);
    }

    pub fn push_ge(&mut self, row: &[f64], rhs: f64) {
        let neg: Vec<f64> = row.iter().map(|v| -v).collect();
        push_row(&mut self.a_in, &mut self.b_in, &neg, -rhs);
    }
}

fn stack_rows(n: usize, rows: &[(Vec<f64>, f64)]) -> (DMatrix<f64>, DVector<f64>) {
    for (r, _) in rows {
        assert_eq!(r.len(), n, "constraint row has wrong length");
    }
    let a = DMatrix::from_fn(rows.len(), n, |i, j| rows[i].0[j]);
    let b = DVector::from_iterator(rows.len(), rows.iter().map(|r| r.1));
    (a, b)
}

fn push_row(a: &mut DMatrix<f64>, b: &mut DVector<f64>, row: &[f64], rhs: f64) {
    assert_eq!(row.len(), a.ncols(), "constraint row has wrong length");
    let m = a.nrows();
    let taken = std::mem::replace(a, DMatrix::zeros(0, 0));
    let mut grown = taken.insert_row(m, 0.0);
    for (j, v) in row.iter().enumerate() {
        grown[(m, j)] = *v;
    }
    *a = grown;
    let tb = std::mem::replace(b, DVector::zeros(0));
    *b = tb.insert_row(m, rhs);
}

/// Termination status shared by the LP and QP solvers.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub enum Status {
    Optimal,
    Infeasible,
    Unbounded,
    MaxIter,
}

#[derive(Debug, Clone)]
pub struct Solution {
    pub x: DVector<f64>,
    pub objective: f64,
    pub status: Status,
    pub iterations: usize,
}

impl Solution {
    pub(crate) fn failed(n: usize, status: Status, iterations: usize) -> Self {
        Self {
            x: DVector::from_element(n, f64::NAN),
            objective: f64::NAN,
            status,
            iterations,
        }
    }

    pub fn is_optimal(&self) -> bool {
        self.status == Status::Optimal
    }
}
