//! Bounded-variable primal simplex on a dense tableau.
//!
//! The problem is shifted so every column lives in `[0, u]` (free columns
//! are split, upper-only columns are mirrored), inequality rows get a slack,
//! and phase one drives a set of artificial columns to zero. Artificials are
//! then pinned to `[0, 0]` so they can never re-enter the basis.

use nalgebra::{DMatrix, DVector};

use super::problem::{Problem, Solution, Status};
use super::tol::{DEGENERATE_SWITCH, SIMPLEX_MAX_PIVOTS, TOL};
use super::SolverError;

/// How one original variable is expressed in shifted columns:
/// `x = offset + sign * y[col] (- y[col2])`.
#[derive(Debug, Clone, Copy)]
struct ColumnMap {
    col: usize,
    sign: f64,
    offset: f64,
    split: Option<usize>,
}

struct Tableau {
    t: DMatrix<f64>,
    xb: Vec<f64>,
    basis: Vec<usize>,
    upper: Vec<f64>,
    at_upper: Vec<bool>,
    is_basic: Vec<bool>,
}

enum PhaseOutcome {
    Optimal,
    Unbounded,
    MaxIter,
}

impl Tableau {
    fn reduced_costs(&self, cost: &[f64]) -> Vec<f64> {
        let (m, n) = self.t.shape();
        let mut d = cost.to_vec();
        for i in 0..m {
            let cb = cost[self.basis[i]];
            if cb != 0.0 {
                for (j, dj) in d.iter_mut().enumerate().take(n) {
                    *dj -= cb * self.t[(i, j)];
                }
            }
        }
        d
    }

    fn pivot(&mut self, r: usize, j: usize, d: &mut [f64]) {
        let (m, n) = self.t.shape();
        let p = self.t[(r, j)];
        for c in 0..n {
            self.t[(r, c)] /= p;
        }
        self.t[(r, j)] = 1.0;
        for i in 0..m {
            if i == r {
                continue;
            }
            let f = self.t[(i, j)];
            if f != 0.0 {
                for c in 0..n {
                    let v = self.t[(r, c)];
                    if v != 0.0 {
                        self.t[(i, c)] -= f * v;
                    }
                }
                self.t[(i, j)] = 0.0;
            }
        }
        let f = d[j];
        if f != 0.0 {
            for c in 0..n {
                d[c] -= f * self.t[(r, c)];
            }
            d[j] = 0.0;
        }
    }

    fn run(&mut self, cost: &[f64], pivots: &mut usize) -> PhaseOutcome {
        let (m, n) = self.t.shape();
        let mut d = self.reduced_costs(cost);
        let mut degenerate_run = 0usize;
        loop {
            if *pivots >= SIMPLEX_MAX_PIVOTS {
                return PhaseOutcome::MaxIter;
            }
            let bland = degenerate_run >= DEGENERATE_SWITCH;
            // pricing
            let mut entering = None;
            let mut best = 0.0;
            for j in 0..n {
                if self.is_basic[j] || self.upper[j] <= 0.0 {
                    continue;
                }
                let score = if self.at_upper[j] { d[j] } else { -d[j] };
                if score > TOL.optimality {
                    if bland {
                        entering = Some(j);
                        break;
                    }
                    if score > best {
                        best = score;
                        entering = Some(j);
                    }
                }
            }
            let Some(j) = entering else {
                return PhaseOutcome::Optimal;
            };
            let sigma = if self.at_upper[j] { -1.0 } else { 1.0 };

            // ratio test
            let mut step = self.upper[j];
            let mut leave: Option<(usize, bool)> = None;
            let mut leave_mag = 0.0;
            for i in 0..m {
                let a = sigma * self.t[(i, j)];
                if a.abs() <= TOL.pivot {
                    continue;
                }
                let ub = self.upper[self.basis[i]];
                let (limit, to_upper) = if a > 0.0 {
                    (self.xb[i].max(0.0) / a, false)
                } else if ub.is_finite() {
                    ((ub - self.xb[i]).max(0.0) / (-a), true)
                } else {
                    continue;
                };
                let take = match leave {
                    None => limit <= step,
                    Some((li, _)) => {
                        if limit < step - 1e-12 {
                            true
                        } else if limit <= step + 1e-12 {
                            if bland {
                                self.basis[i] < self.basis[li]
                            } else {
                                a.abs() > leave_mag
                            }
                        } else {
                            false
                        }
                    }
                };
                if take {
                    step = step.min(limit);
                    leave = Some((i, to_upper));
                    leave_mag = a.abs();
                }
            }
            if step.is_infinite() {
                return PhaseOutcome::Unbounded;
            }
            *pivots += 1;
            if step < 1e-12 {
                degenerate_run += 1;
            } else {
                degenerate_run = 0;
            }
            for i in 0..m {
                self.xb[i] -= sigma * step * self.t[(i, j)];
            }
            match leave {
                Some((r, to_upper)) if step < self.upper[j] || self.upper[j].is_infinite() => {
                    let entering_value = if sigma > 0.0 {
                        step
                    } else {
                        self.upper[j] - step
                    };
                    let out = self.basis[r];
                    self.is_basic[out] = false;
                    self.at_upper[out] = to_upper;
                    self.pivot(r, j, &mut d);
                    self.basis[r] = j;
                    self.is_basic[j] = true;
                    self.at_upper[j] = false;
                    self.xb[r] = entering_value;
                }
                _ => {
                    // bound flip
                    self.at_upper[j] = !self.at_upper[j];
                }
            }
        }
    }
}

/// Solves an LP (the Hessian, if any, must be absent).
pub fn solve_lp(problem: &Problem) -> Result<Solution, SolverError> {
    problem.validate()?;
    if problem.hessian.is_some() {
        return Err(SolverError::NotLinear);
    }
    let n = problem.num_vars();
    for i in 0..n {
        if problem.lower[i] > problem.upper[i] {
            return Ok(Solution::failed(n, Status::Infeasible, 0));
        }
    }

    // column maps
    let mut maps = Vec::with_capacity(n);
    let mut col_upper = Vec::new();
    let mut col_cost = Vec::new();
    for i in 0..n {
        let (l, u, c) = (problem.lower[i], problem.upper[i], problem.cost[i]);
        if l.is_finite() {
            maps.push(ColumnMap { col: col_upper.len(), sign: 1.0, offset: l, split: None });
            col_upper.push(u - l);
            col_cost.push(c);
        } else if u.is_finite() {
            maps.push(ColumnMap { col: col_upper.len(), sign: -1.0, offset: u, split: None });
            col_upper.push(f64::INFINITY);
            col_cost.push(-c);
        } else {
            let k = col_upper.len();
            maps.push(ColumnMap { col: k, sign: 1.0, offset: 0.0, split: Some(k + 1) });
            col_upper.extend([f64::INFINITY, f64::INFINITY]);
            col_cost.extend([c, -c]);
        }
    }
    let n_struct = col_upper.len();
    let m_eq = problem.a_eq.nrows();
    let m_in = problem.a_in.nrows();
    let m = m_eq + m_in;

    let offset = DVector::from_iterator(n, maps.iter().map(|c| c.offset));
    let mut rows = DMatrix::zeros(m, n_struct);
    let mut rhs = vec![0.0; m];
    let fill = |rows: &mut DMatrix<f64>, r: usize, a: &DMatrix<f64>, src: usize| {
        for (i, cm) in maps.iter().enumerate() {
            let v = a[(src, i)];
            if v == 0.0 {
                continue;
            }
            rows[(r, cm.col)] += cm.sign * v;
            if let Some(k) = cm.split {
                rows[(r, k)] -= v;
            }
        }
    };
    for r in 0..m_eq {
        fill(&mut rows, r, &problem.a_eq, r);
        rhs[r] = problem.b_eq[r] - problem.a_eq.row(r).dot(&offset.transpose());
    }
    for r in 0..m_in {
        fill(&mut rows, m_eq + r, &problem.a_in, r);
        rhs[m_eq + r] = problem.b_in[r] - problem.a_in.row(r).dot(&offset.transpose());
    }

    // columns: structural | slacks (one per inequality) | artificials (as needed)
    let n_slack = m_in;
    let mut artificial_rows = Vec::new();
    for r in 0..m {
        let is_ineq = r >= m_eq;
        if !(is_ineq && rhs[r] >= 0.0) {
            artificial_rows.push(r);
        }
    }
    let n_art = artificial_rows.len();
    let n_tot = n_struct + n_slack + n_art;
    let mut t = DMatrix::zeros(m, n_tot);
    let mut basis = vec![0usize; m];
    let mut xb = vec![0.0; m];
    for r in 0..m {
        for c in 0..n_struct {
            t[(r, c)] = rows[(r, c)];
        }
        if r >= m_eq {
            t[(r, n_struct + r - m_eq)] = 1.0;
        }
    }
    let mut upper = col_upper.clone();
    upper.extend(std::iter::repeat(f64::INFINITY).take(n_slack));
    upper.extend(std::iter::repeat(f64::INFINITY).take(n_art));
    for r in 0..m {
        if r >= m_eq && rhs[r] >= 0.0 {
            basis[r] = n_struct + r - m_eq;
            xb[r] = rhs[r];
        }
    }
    for (a, &r) in artificial_rows.iter().enumerate() {
        let col = n_struct + n_slack + a;
        if rhs[r] < 0.0 {
            for c in 0..n_tot {
                t[(r, c)] = -t[(r, c)];
            }
        }
        t[(r, col)] = 1.0;
        basis[r] = col;
        xb[r] = rhs[r].abs();
    }
    let mut is_basic = vec![false; n_tot];
    for &b in &basis {
        is_basic[b] = true;
    }
    let mut tab = Tableau {
        t,
        xb,
        basis,
        upper,
        at_upper: vec![false; n_tot],
        is_basic,
    };

    let mut pivots = 0usize;
    if n_art > 0 {
        let mut phase1 = vec![0.0; n_tot];
        for a in 0..n_art {
            phase1[n_struct + n_slack + a] = 1.0;
        }
        match tab.run(&phase1, &mut pivots) {
            PhaseOutcome::MaxIter => return Ok(Solution::failed(n, Status::MaxIter, pivots)),
            PhaseOutcome::Unbounded => unreachable!("phase one is bounded below by zero"),
            PhaseOutcome::Optimal => {}
        }
        let infeas: f64 = (0..m)
            .filter(|&i| tab.basis[i] >= n_struct + n_slack)
            .map(|i| tab.xb[i])
            .sum();
        let scale = 1.0 + rhs.iter().fold(0.0f64, |a, v| a.max(v.abs()));
        if infeas > 1e-8 * scale {
            return Ok(Solution::failed(n, Status::Infeasible, pivots));
        }
        for a in 0..n_art {
            tab.upper[n_struct + n_slack + a] = 0.0;
        }
    }
    let mut phase2 = col_cost.clone();
    phase2.extend(std::iter::repeat(0.0).take(n_slack + n_art));
    match tab.run(&phase2, &mut pivots) {
        PhaseOutcome::MaxIter => return Ok(Solution::failed(n, Status::MaxIter, pivots)),
        PhaseOutcome::Unbounded => return Ok(Solution::failed(n, Status::Unbounded, pivots)),
        PhaseOutcome::Optimal => {}
    }

    let mut y = vec![0.0; n_tot];
    for j in 0..n_tot {
        if !tab.is_basic[j] && tab.at_upper[j] {
            y[j] = tab.upper[j];
        }
    }
    for (i, &b) in tab.basis.iter().enumerate() {
        y[b] = tab.xb[i];
    }
    let x = DVector::from_iterator(
        n,
        maps.iter().map(|cm| {
            let mut v = cm.offset + cm.sign * y[cm.col];
            if let Some(k) = cm.split {
                v -= y[k];
            }
            v
        }),
    );
    let objective = problem.objective(&x);
    Ok(Solution { x, objective, status: Status::Optimal, iterations: pivots })
}
