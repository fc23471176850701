//! Changes of configuration.
//!
//! A new share vector `α*` is applied directly when the tube MPC built for it
//! is feasible at the current measurement. Otherwise the shares become
//! temporary decisions: the nominal state is pinned to the measurement, the
//! auxiliary feedback is dropped and `|α - α*|²` is added to the cost. The
//! resulting bilinear program is solved by alternating convex steps.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use super::{
    applied_interval, assemble_ensemble, rate_interval, unit_interval, EnsembleError, Interval,
    MlMeasurement, MpcSolution, TubeMPCProblem,
};
use crate::solvers::{
    solve_bilinear_alternating, solve_qp, BilinearOptions, BilinearProblem, BilinearStatus, Problem, Status,
};

const SHARE_TOL: f64 = 1e-9;

/// Points of the scan along the share segment.
const ALPHA_GRID: usize = 512;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TransitionOptions {
    /// Weight of `|α - α*|²` and the alternation limits.
    pub weight: f64,
    pub max_alternations: usize,
    pub tolerance: f64,
    pub max_halvings: usize,
    /// Fallback steps allowed before the transition is reported as stalled.
    pub max_steps: usize,
}

impl Default for TransitionOptions {
    fn default() -> Self {
        Self { weight: 1e4, max_alternations: 20, tolerance: 1e-6, max_halvings: 12, max_steps: 30 }
    }
}

impl TransitionOptions {
    fn bilinear(&self) -> BilinearOptions {
        BilinearOptions {
            weight: self.weight,
            max_alternations: self.max_alternations,
            tolerance: self.tolerance,
            max_halvings: self.max_halvings,
        }
    }
}

/// Tightening margins used while the shares move: the worst case of the
/// configurations on both ends of the transition.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TransitionMargins {
    pub o_u: (f64, f64),
    pub kz: (f64, f64),
}

impl TransitionMargins {
    pub fn of(problem: &TubeMPCProblem) -> Self {
        Self { o_u: problem.o_u, kz: problem.kz }
    }

    pub fn widen(self, other: Self) -> Self {
        let hull = |a: Interval, b: Interval| (a.0.min(b.0), a.1.max(b.1));
        Self { o_u: hull(self.o_u, other.o_u), kz: hull(self.kz, other.kz) }
    }
}

/// Relaxed program of one transition step.
///
/// Decision vector `[δũ(k..k+N-1), r̂, α]`, with `ũ(k-1) = ū(k-1)` and
/// `x̃(k) = x̄(k)`.
pub struct FallbackProblem<'a> {
    pub target: &'a TubeMPCProblem,
    pub meas: &'a MlMeasurement,
    pub r: f64,
    pub margins: TransitionMargins,
    /// Units that may carry load during the transition.
    pub on: Vec<bool>,
}

impl<'a> FallbackProblem<'a> {
    pub fn new(target: &'a TubeMPCProblem, meas: &'a MlMeasurement, r: f64, margins: TransitionMargins) -> Self {
        let on = target.ens.on.iter().zip(&meas.alpha_prev).map(|(&o, &a)| o || a > 0.0).collect();
        Self { target, meas, r, margins, on }
    }

    fn horizon(&self) -> usize {
        self.target.settings.horizon
    }

    fn alpha_prev(&self) -> DVector<f64> {
        DVector::from_column_slice(&self.meas.alpha_prev)
    }

    fn alpha_star(&self) -> DVector<f64> {
        DVector::from_column_slice(&self.target.ens.alpha)
    }

    /// QP in `[δũ, r̂]` for fixed shares.
    pub fn qp(&self, alpha: &[f64]) -> Result<Problem, EnsembleError> {
        let t = self.target;
        let ens = assemble_ensemble(&t.refs, alpha, &self.on)?;
        if ens.g_bar.abs() < 1e-12 {
            return Err(EnsembleError::SingularSteadyStateMap);
        }
        let (n, nn) = (ens.n(), self.horizon());
        let nv = nn + 1;
        let ir = nn;
        let lim = &t.limits;
        let mut er = DVector::zeros(nv);
        er[ir] = 1.0;

        // x̃(k+j) = X_j v + c_j, ũ(k+j) = U_j v + ū(k-1)
        let mut xs = vec![(DMatrix::zeros(n, nv), self.meas.x.clone())];
        let mut us = Vec::with_capacity(nn);
        let mut u_map = DVector::zeros(nv);
        for j in 0..nn {
            u_map[j] = 1.0;
            us.push(u_map.clone());
            let (xm, xc) = &xs[j];
            let next = (&ens.a_hat * xm + &ens.b_bar * u_map.transpose(), &ens.a_hat * xc + &ens.b_bar * self.meas.u_prev);
            xs.push(next);
        }

        let s = &t.settings;
        let mut q = DMatrix::identity(n + 1, n + 1) * s.q_dx;
        q[(n, n)] = s.q_eps;
        let mut hess = DMatrix::zeros(nv, nv);
        let mut cost = DVector::zeros(nv);
        for i in 0..nn {
            let (prev_m, prev_c) = if i == 0 {
                (DMatrix::zeros(n, nv), self.meas.x_prev.clone())
            } else {
                xs[i - 1].clone()
            };
            let (xm, xc) = &xs[i];
            let mut g = DMatrix::zeros(n + 1, nv);
            g.view_mut((0, 0), (n, nv)).copy_from(&(xm - &prev_m));
            g.view_mut((n, 0), (1, nv)).copy_from(&(&ens.c_hat * xm - er.transpose()));
            let mut c = DVector::zeros(n + 1);
            c.rows_mut(0, n).copy_from(&(xc - &prev_c));
            c[n] = (&ens.c_hat * xc)[(0, 0)] + ens.gamma_bar;
            hess += g.transpose() * &q * &g * 2.0;
            cost += g.transpose() * (&q * c) * 2.0;
            hess[(i, i)] += 2.0 * s.r_weight;
        }
        hess[(ir, ir)] += 2.0 * s.t_weight;
        cost[ir] -= 2.0 * s.t_weight * self.r;
        let mut p = Problem::new(nv);
        p.hessian = Some((&hess + hess.transpose()) * 0.5);
        p.cost = cost;

        let range = applied_interval(
            alpha,
            &self.on,
            lim,
            &t.refs_gain,
            &t.refs_gamma,
            &self.meas.alpha_prev,
            self.meas.u_prev,
        );
        if range.0 > range.1 {
            return Err(EnsembleError::QPInfeasible);
        }
        p.lower[0] = range.0 - self.meas.u_prev;
        p.upper[0] = range.1 - self.meas.u_prev;

        let u_tight = unit_interval(alpha, &self.on, lim, &t.refs_gain, &t.refs_gamma, self.margins.o_u);
        let du_tight = rate_interval(alpha, lim.du_max, self.margins.kz);
        if u_tight.0 > u_tight.1 || du_tight.0 > du_tight.1 {
            return Err(EnsembleError::QPInfeasible);
        }
        for i in 1..nn {
            p.push_le(us[i].as_slice(), u_tight.1 - self.meas.u_prev);
            p.push_ge(us[i].as_slice(), u_tight.0 - self.meas.u_prev);
            p.lower[i] = du_tight.0;
            p.upper[i] = du_tight.1;
        }

        // terminal steady state at ũ(k+N-1)
        let (sx, _) = ens.steady_state(ens.gamma_bar + 1.0)?;
        let (xm, xc) = &xs[nn - 1];
        for row in 0..n {
            let mut a = xm.row(row).transpose();
            a[ir] -= sx[row];
            p.push_eq(a.as_slice(), -sx[row] * ens.gamma_bar - xc[row]);
        }
        let mut a = us[nn - 1].clone();
        a[ir] -= 1.0 / ens.g_bar;
        p.push_eq(a.as_slice(), -ens.gamma_bar / ens.g_bar - self.meas.u_prev);
        Ok(p)
    }

    /// Whether the applied input `u` meets every unit limit under shares
    /// `alpha`.
    fn applied_ok(&self, alpha: &[f64], u: f64) -> bool {
        let t = self.target;
        let range = applied_interval(
            alpha,
            &self.on,
            &t.limits,
            &t.refs_gain,
            &t.refs_gamma,
            &self.meas.alpha_prev,
            self.meas.u_prev,
        );
        let tol = 1e-9 * (1.0 + u.abs());
        range.0 - tol <= u && u <= range.1 + tol
    }
}

impl BilinearProblem for FallbackProblem<'_> {
    fn solve_decision(&self, alpha: &DVector<f64>) -> Option<(DVector<f64>, f64)> {
        let p = self.qp(alpha.as_slice()).ok()?;
        let s = solve_qp(&p).ok()?;
        if s.solution.status != Status::Optimal {
            return None;
        }
        let v = s.solution.x;
        let cost = p.objective(&v) + self.target.settings.t_weight * self.r * self.r;
        let mut d = DVector::zeros(v.len() + alpha.len());
        d.rows_mut(0, v.len()).copy_from(&v);
        d.rows_mut(v.len(), alpha.len()).copy_from(alpha);
        Some((d, cost))
    }

    /// Furthest point toward `α*` on the segment from the previous shares
    /// at which the planned first move still meets the unit limits.
    fn solve_alpha(&self, decision: &DVector<f64>, alpha_star: &DVector<f64>, _weight: f64) -> Option<DVector<f64>> {
        let nv = self.horizon() + 1;
        let m = alpha_star.len();
        let current = decision.rows(nv, m).into_owned();
        let u = self.meas.u_prev + decision[0];
        let start = self.alpha_prev();
        let dir = alpha_star - &start;
        let len2 = dir.norm_squared();
        if len2 == 0.0 {
            return Some(alpha_star.clone());
        }
        let at = |theta: f64| &start + &dir * theta;
        if self.applied_ok(at(1.0).as_slice(), u) {
            return Some(alpha_star.clone());
        }
        // the feasible part of the segment need not be an interval when a
        // unit enters with a positive minimum draw, so scan from the target
        let ok = |theta: f64| self.applied_ok(at(theta).as_slice(), u);
        let Some(i) = (0..ALPHA_GRID).rev().find(|&i| ok(i as f64 / ALPHA_GRID as f64)) else {
            return Some(current);
        };
        let mut lo = i as f64 / ALPHA_GRID as f64;
        let mut hi = (i + 1) as f64 / ALPHA_GRID as f64;
        for _ in 0..50 {
            let mid = 0.5 * (lo + hi);
            if ok(mid) {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        let theta_current = ((&current - &start).dot(&dir) / len2).clamp(0.0, 1.0);
        if lo < theta_current && ok(theta_current) {
            return Some(current);
        }
        Some(at(lo))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum StepKind {
    /// Tube MPC with the target shares.
    Regular,
    /// Relaxed program with the shares as decisions.
    Fallback,
}

/// Result of one medium-level step.
#[derive(Debug, Clone, PartialEq)]
pub struct TransitionOutcome {
    pub kind: StepKind,
    /// Shares applied over the step and the total input.
    pub alpha: Vec<f64>,
    pub u: f64,
    pub r_hat: f64,
    pub solution: Option<MpcSolution>,
    pub alternations: usize,
    pub bilinear_status: Option<BilinearStatus>,
    /// Objective trace of the alternating solver.
    pub trace: Vec<f64>,
}

impl TransitionOutcome {
    pub fn distance_to(&self, alpha_star: &[f64]) -> f64 {
        self.alpha.iter().zip(alpha_star).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt()
    }
}

/// One step toward the target configuration of `target`.
pub fn handle_transition(
    target: &TubeMPCProblem,
    meas: &MlMeasurement,
    r: f64,
    margins: TransitionMargins,
    options: &TransitionOptions,
) -> Result<TransitionOutcome, EnsembleError> {
    match target.solve(meas, r) {
        Ok(sol) => {
            return Ok(TransitionOutcome {
                kind: StepKind::Regular,
                alpha: target.ens.alpha.clone(),
                u: sol.u,
                r_hat: sol.r_hat,
                solution: Some(sol),
                alternations: 0,
                bilinear_status: None,
                trace: Vec::new(),
            })
        }
        Err(EnsembleError::QPInfeasible) => {}
        Err(e) => return Err(e),
    }
    let fp = FallbackProblem::new(target, meas, r, margins);
    let start = fp.alpha_prev();
    if (start.sum() - 1.0).abs() > SHARE_TOL {
        return Err(EnsembleError::QPInfeasible);
    }
    let res = solve_bilinear_alternating(&fp, &start, &fp.alpha_star(), options.bilinear());
    let Some(d) = res.decision else {
        return Err(EnsembleError::QPInfeasible);
    };
    let nn = fp.horizon();
    Ok(TransitionOutcome {
        kind: StepKind::Fallback,
        alpha: res.alpha.iter().copied().collect(),
        u: meas.u_prev + d[0],
        r_hat: d[nn],
        solution: None,
        alternations: res.alternations,
        bilinear_status: Some(res.status),
        trace: res.trace,
    })
}

/// Medium-level controller: the tube MPC of the current configuration plus
/// the bookkeeping of configuration changes.
#[derive(Debug, Clone)]
pub struct MediumLevelController {
    pub problem: TubeMPCProblem,
    pub margins: TransitionMargins,
    pub options: TransitionOptions,
    /// Consecutive fallback steps of the ongoing transition.
    pub fallback_steps: usize,
}

/// Outcome of a controller step and the stall report, if any.
#[derive(Debug, Clone, PartialEq)]
pub struct MlStep {
    pub outcome: TransitionOutcome,
    /// `TransitionStalled` once the fallback has run longer than allowed.
    pub stalled: Option<String>,
}

impl MediumLevelController {
    pub fn new(problem: TubeMPCProblem, options: TransitionOptions) -> Self {
        let margins = TransitionMargins::of(&problem);
        Self { problem, margins, options, fallback_steps: 0 }
    }

    /// Switch to a new configuration; margins cover both until the switch
    /// completes.
    pub fn retarget(&mut self, problem: TubeMPCProblem) {
        self.margins = self.margins.widen(TransitionMargins::of(&problem));
        self.problem = problem;
        self.fallback_steps = 0;
    }

    pub fn in_transition(&self) -> bool {
        self.fallback_steps > 0
    }

    pub fn step(&mut self, meas: &MlMeasurement, r: f64) -> Result<MlStep, EnsembleError> {
        let outcome = handle_transition(&self.problem, meas, r, self.margins, &self.options)?;
        let mut stalled = None;
        match outcome.kind {
            StepKind::Regular => {
                self.fallback_steps = 0;
                self.margins = TransitionMargins::of(&self.problem);
            }
            StepKind::Fallback => {
                self.fallback_steps += 1;
                if self.fallback_steps > self.options.max_steps {
                    stalled = Some(EnsembleError::TransitionStalled(self.fallback_steps).to_string());
                }
            }
        }
        Ok(MlStep { outcome, stalled })
    }
}
