//! Dense convex QP via the Goldfarb-Idnani dual active-set method.
//!
//! Every constraint is written as `n' x >= b`. Starting from the
//! unconstrained minimizer, the most violated constraint is added at each
//! iteration while dual feasibility is maintained; the active set is kept
//! small, so the projected quantities are recomputed from scratch each time
//! rather than updated with rank-one factorizations.
//!
//! Positive semidefinite Hessians are handled by an outer proximal-point
//! loop, each inner problem being strictly convex.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};

use super::problem::{Problem, Solution, Status};
use super::tol::{QP_MAX_ITER, TOL};
use super::SolverError;

/// Detailed QP result, including multipliers and the KKT residual.
#[derive(Debug, Clone)]
pub struct QpSolution {
    pub solution: Solution,
    /// Multipliers of `a_eq` rows (sign convention: `H x + c = A_eq' y_eq - A_in' y_in ...`).
    pub eq_multipliers: DVector<f64>,
    /// Nonnegative multipliers of `a_in` rows.
    pub in_multipliers: DVector<f64>,
    /// Max of stationarity, primal violation and complementarity residuals.
    pub kkt_residual: f64,
}

struct Constraints {
    normals: DMatrix<f64>,
    rhs: DVector<f64>,
    is_eq: Vec<bool>,
    // (kind, index) back-reference: 0 eq, 1 ineq, 2 lower bound, 3 upper bound
    origin: Vec<(u8, usize)>,
}

fn gather(problem: &Problem) -> Constraints {
    let n = problem.num_vars();
    let mut cols: Vec<DVector<f64>> = Vec::new();
    let mut rhs = Vec::new();
    let mut is_eq = Vec::new();
    let mut origin = Vec::new();
    for r in 0..problem.a_eq.nrows() {
        cols.push(problem.a_eq.row(r).transpose());
        rhs.push(problem.b_eq[r]);
        is_eq.push(true);
        origin.push((0, r));
    }
    for r in 0..problem.a_in.nrows() {
        cols.push(-problem.a_in.row(r).transpose());
        rhs.push(-problem.b_in[r]);
        is_eq.push(false);
        origin.push((1, r));
    }
    for i in 0..n {
        if problem.lower[i].is_finite() {
            let mut e = DVector::zeros(n);
            e[i] = 1.0;
            cols.push(e);
            rhs.push(problem.lower[i]);
            is_eq.push(false);
            origin.push((2, i));
        }
        if problem.upper[i].is_finite() {
            let mut e = DVector::zeros(n);
            e[i] = -1.0;
            cols.push(e);
            rhs.push(-problem.upper[i]);
            is_eq.push(false);
            origin.push((3, i));
        }
    }
    let normals = if cols.is_empty() {
        DMatrix::zeros(n, 0)
    } else {
        DMatrix::from_columns(&cols)
    };
    Constraints { normals, rhs: DVector::from_vec(rhs), is_eq, origin }
}

enum Inner {
    Done { x: DVector<f64>, active: Vec<usize>, u: Vec<f64>, iterations: usize },
    Infeasible(usize),
    MaxIter(usize),
}

/// Goldfarb-Idnani for a strictly convex problem with factorized Hessian.
fn dual_active_set(chol: &Cholesky<f64, Dyn>, c: &DVector<f64>, cons: &Constraints) -> Inner {
    let m = cons.rhs.len();
    let ginv = chol.inverse();
    let mut x = -(&ginv * c);
    let mut active: Vec<usize> = Vec::new();
    let mut u: Vec<f64> = Vec::new();
    let mut in_active = vec![false; m];
    let norms: Vec<f64> = (0..m).map(|j| cons.normals.column(j).norm().max(1e-300)).collect();
    let mut eq_done = vec![false; m];
    let mut iterations = 0usize;

    loop {
        // choose the constraint to add: pending equalities first, then the most violated inequality
        let mut pick: Option<(usize, f64)> = None;
        for j in 0..m {
            if cons.is_eq[j] && !eq_done[j] {
                let s = cons.normals.column(j).dot(&x) - cons.rhs[j];
                pick = Some((j, s));
                break;
            }
        }
        if pick.is_none() {
            let mut worst = 0.0;
            for j in 0..m {
                if cons.is_eq[j] || in_active[j] {
                    continue;
                }
                let s = cons.normals.column(j).dot(&x) - cons.rhs[j];
                let scaled = s / norms[j];
                if scaled < -TOL.feasibility && scaled < worst {
                    worst = scaled;
                    pick = Some((j, s));
                }
            }
        }
        let Some((p, s0)) = pick else {
            return Inner::Done { x, active, u, iterations };
        };
        // equalities with positive residual are treated through the flipped normal
        let flip = if cons.is_eq[p] && s0 > 0.0 { -1.0 } else { 1.0 };
        let np = cons.normals.column(p) * flip;
        let rhs_p = cons.rhs[p] * flip;
        let mut u_plus = 0.0;

        loop {
            iterations += 1;
            if iterations > QP_MAX_ITER {
                return Inner::MaxIter(iterations);
            }
            let s = np.dot(&x) - rhs_p;
            // projected step: z = H n+, r = N* n+
            let (z, r) = if active.is_empty() {
                (&ginv * &np, DVector::zeros(0))
            } else {
                let nmat = DMatrix::from_columns(
                    &active.iter().map(|&j| cons.normals.column(j).into_owned()).collect::<Vec<_>>(),
                );
                let gn = &ginv * &nmat;
                let ngn = nmat.transpose() * &gn;
                let rhs = gn.transpose() * &np;
                let r = match ngn.clone().lu().solve(&rhs) {
                    Some(r) => r,
                    None => DVector::zeros(active.len()),
                };
                let z = &ginv * &np - &gn * &r;
                (z, r)
            };
            // dual step limit (only inequality multipliers must stay >= 0)
            let mut t1 = f64::INFINITY;
            let mut drop_at = None;
            for (k, &j) in active.iter().enumerate() {
                if cons.is_eq[j] {
                    continue;
                }
                if r[k] > TOL.dependence {
                    let ratio = u[k] / r[k];
                    if ratio < t1 {
                        t1 = ratio;
                        drop_at = Some(k);
                    }
                }
            }
            let zn = z.dot(&np);
            let z_small = z.norm() <= 1e-12 * (1.0 + np.norm()) || zn <= 1e-14;
            let t2 = if z_small { f64::INFINITY } else { -s / zn };

            if z_small && cons.is_eq[p] && s.abs() <= TOL.feasibility * (1.0 + rhs_p.abs()) {
                // redundant equality already satisfied
                eq_done[p] = true;
                break;
            }
            if t1.is_infinite() && t2.is_infinite() {
                return Inner::Infeasible(iterations);
            }
            if t2.is_infinite() {
                // partial step in dual space only
                for k in 0..active.len() {
                    u[k] -= t1 * r[k];
                }
                u_plus += t1;
                let k = drop_at.expect("finite t1 has a blocking constraint");
                in_active[active[k]] = false;
                active.remove(k);
                u.remove(k);
                continue;
            }
            let t = t1.min(t2);
            x += &z * t;
            for k in 0..active.len() {
                u[k] -= t * r[k];
            }
            u_plus += t;
            if t2 <= t1 {
                // full step: p joins the active set
                if cons.is_eq[p] {
                    eq_done[p] = true;
                }
                active.push(p);
                // store the multiplier for the original (unflipped) normal
                u.push(u_plus * flip);
                in_active[p] = true;
                break;
            }
            let k = drop_at.expect("partial step has a blocking constraint");
            in_active[active[k]] = false;
            active.remove(k);
            u.remove(k);
        }
    }
}

fn kkt_residual(problem: &Problem, cons: &Constraints, x: &DVector<f64>, lambda: &DVector<f64>) -> f64 {
    let h = problem.hessian.as_ref().expect("qp has a hessian");
    let grad = h * x + &problem.cost;
    let stat = (&grad - &cons.normals * lambda).amax();
    let mut comp: f64 = 0.0;
    for j in 0..lambda.len() {
        if !cons.is_eq[j] {
            let s = cons.normals.column(j).dot(x) - cons.rhs[j];
            comp = comp.max((lambda[j] * s).abs()).max(-lambda[j]);
        }
    }
    let scale = 1.0 + grad.amax().max(problem.cost.amax());
    (stat / scale).max(problem.max_violation(x)).max(comp / scale)
}

/// Solves a convex QP. The Hessian must be symmetric positive semidefinite;
/// this is validated by attempted Cholesky factorization (a proximal loop
/// takes over when only semidefiniteness holds).
pub fn solve_qp(problem: &Problem) -> Result<QpSolution, SolverError> {
    problem.validate()?;
    let n = problem.num_vars();
    let Some(h) = problem.hessian.as_ref() else {
        return Err(SolverError::NotQuadratic);
    };
    for i in 0..n {
        if problem.lower[i] > problem.upper[i] {
            return Ok(fail(problem, Status::Infeasible, 0));
        }
    }
    let cons = gather(problem);
    if let Some(chol) = h.clone().cholesky() {
        let inner = dual_active_set(&chol, &problem.cost, &cons);
        return Ok(finish(problem, &cons, inner));
    }
    // semidefinite: check there is no negative curvature first
    let eig = h.clone().symmetric_eigen();
    let min_eig = eig.eigenvalues.min();
    if min_eig < -1e-9 * (1.0 + h.amax()) {
        return Err(SolverError::NotConvex);
    }
    let rho = 1e-2 * (1.0 + h.amax());
    let reg = h + DMatrix::identity(n, n) * rho;
    let chol = reg.cholesky().ok_or(SolverError::NotConvex)?;
    let mut center = DVector::zeros(n);
    let mut total = 0usize;
    for _ in 0..2_000 {
        let c = &problem.cost - &center * rho;
        match dual_active_set(&chol, &c, &cons) {
            Inner::Done { x, active, u, iterations } => {
                total += iterations;
                let delta = (&x - &center).amax();
                center = x.clone();
                if delta <= 1e-11 * (1.0 + x.amax()) {
                    return Ok(finish(problem, &cons, Inner::Done { x, active, u, iterations: total }));
                }
            }
            Inner::Infeasible(it) => return Ok(fail(problem, Status::Infeasible, total + it)),
            Inner::MaxIter(it) => return Ok(fail(problem, Status::MaxIter, total + it)),
        }
    }
    Ok(fail(problem, Status::MaxIter, total))
}

fn fail(problem: &Problem, status: Status, iterations: usize) -> QpSolution {
    QpSolution {
        solution: Solution::failed(problem.num_vars(), status, iterations),
        eq_multipliers: DVector::zeros(problem.a_eq.nrows()),
        in_multipliers: DVector::zeros(problem.a_in.nrows()),
        kkt_residual: f64::INFINITY,
    }
}

fn finish(problem: &Problem, cons: &Constraints, inner: Inner) -> QpSolution {
    match inner {
        Inner::Infeasible(it) => fail(problem, Status::Infeasible, it),
        Inner::MaxIter(it) => fail(problem, Status::MaxIter, it),
        Inner::Done { x, active, u, iterations } => {
            let mut lambda = DVector::zeros(cons.rhs.len());
            for (k, &j) in active.iter().enumerate() {
                lambda[j] = u[k];
            }
            let kkt = kkt_residual(problem, cons, &x, &lambda);
            let mut eq_multipliers = DVector::zeros(problem.a_eq.nrows());
            let mut in_multipliers = DVector::zeros(problem.a_in.nrows());
            for (j, &(kind, idx)) in cons.origin.iter().enumerate() {
                match kind {
                    0 => eq_multipliers[idx] = lambda[j],
                    1 => in_multipliers[idx] = lambda[j],
                    _ => {}
                }
            }
            let objective = problem.objective(&x);
            QpSolution {
                solution: Solution { x, objective, status: Status::Optimal, iterations },
                eq_multipliers,
                in_multipliers,
                kkt_residual: kkt,
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn quad(h: &[f64], c: &[f64]) -> Problem {
        let n = c.len();
        let mut p = Problem::new(n);
        p.hessian = Some(DMatrix::from_row_slice(n, n, h));
        p.cost = DVector::from_row_slice(c);
        p
    }

    #[test]
    fn scalar_lower_bound() {
        // min x^2 s.t. x >= 1
        let mut p = quad(&[2.0], &[0.0]);
        p.push_ge(&[1.0], 1.0);
        let s = solve_qp(&p).unwrap();
        assert_eq!(s.solution.status, Status::Optimal);
        assert!((s.solution.x[0] - 1.0).abs() < 1e-12);
        assert!(s.kkt_residual < 1e-8);
    }

    #[test]
    fn contradictory_bounds_are_infeasible() {
        let mut p = quad(&[2.0], &[0.0]);
        p.push_ge(&[1.0], 1.0);
        p.push_le(&[1.0], 0.0);
        assert_eq!(solve_qp(&p).unwrap().solution.status, Status::Infeasible);
    }

    #[test]
    fn equality_with_positive_residual() {
        // min (x-3)^2 + (y-3)^2  s.t. x + y = 1 -> (0.5, 0.5)
        let mut p = quad(&[2.0, 0.0, 0.0, 2.0], &[-6.0, -6.0]);
        p.push_eq(&[1.0, 1.0], 1.0);
        let s = solve_qp(&p).unwrap();
        assert!((s.solution.x[0] - 0.5).abs() < 1e-12);
        assert!((s.eq_multipliers[0] + 5.0).abs() < 1e-10);
        assert!(s.kkt_residual < 1e-10);
    }

    #[test]
    fn semidefinite_hessian_uses_proximal_loop() {
        // min x^2 - y  s.t. y <= 2, x + y >= 3 -> x = 1, y = 2
        let mut p = quad(&[2.0, 0.0, 0.0, 0.0], &[0.0, -1.0]);
        p.upper[1] = 2.0;
        p.push_ge(&[1.0, 1.0], 3.0);
        let s = solve_qp(&p).unwrap();
        assert_eq!(s.solution.status, Status::Optimal);
        assert!((s.solution.x[0] - 1.0).abs() < 1e-8, "{}", s.solution.x);
        assert!((s.solution.x[1] - 2.0).abs() < 1e-8);
    }

    #[test]
    fn redundant_equalities_are_tolerated() {
        let mut p = quad(&[1.0, 0.0, 0.0, 1.0], &[0.0, 0.0]);
        p.push_eq(&[1.0, 1.0], 2.0);
        p.push_eq(&[2.0, 2.0], 4.0);
        let s = solve_qp(&p).unwrap();
        assert_eq!(s.solution.status, Status::Optimal);
        assert!((s.solution.x[0] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn rejects_indefinite_hessian() {
        let p = quad(&[1.0, 0.0, 0.0, -1.0], &[0.0, 0.0]);
        assert!(matches!(solve_qp(&p), Err(SolverError::NotConvex)));
    }
}
