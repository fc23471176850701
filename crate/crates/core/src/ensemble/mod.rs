//! Medium-level control of the ensemble.
//!
//! Each identified unit model is replaced by a *reference* model sharing
//! `(Â, Ĉ)` with every other unit and keeping the unit's static gain and
//! offset. The reference models then add up to an ensemble model driven by
//! the total steam demand `ū`, with unit `i` receiving `α_i ū`. The ensemble
//! is tracked by a tube MPC in velocity form with an artificial reference
//! and a terminal steady-state constraint.
//!
//! Conventions: states are deviations from the affine offset, so a unit
//! output is `y = Ĉ x̂ + γ̂`; the ensemble output is the sum over ON units.
//! The velocity-form state is `ξ = [Δx̄; ȳ - r]`.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::polytope::{compute_rpi, template_directions, Polytope, PolytopeError, VertexSet};
use crate::solvers::{solve_qp, Problem, SolverError, Status};
use crate::sysid::{is_schur_stable, realize, AffineModel};

mod transition;
pub use transition::*;

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum EnsembleError {
    #[error("reference order ({nf_hat}, {nb_hat}) exceeds the unit order ({nf}, {nb})")]
    OrderMismatch { nf_hat: usize, nb_hat: usize, nf: usize, nb: usize },
    #[error("shared denominator is not Schur stable")]
    UnstableShared,
    #[error("sampled disturbance set is degenerate: {0}")]
    DegenerateHull(String),
    #[error("unit {0} has a positive share but is not active")]
    InconsistentShares(usize),
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    #[error("steady-state map is singular")]
    SingularSteadyStateMap,
    #[error("LQR iteration did not converge")]
    LqrNoConvergence,
    #[error("tightened constraint set is empty: {0}")]
    EmptyTightening(String),
    #[error("MPC problem is infeasible")]
    QPInfeasible,
    #[error("transition did not reach the target shares within {0} steps")]
    TransitionStalled(usize),
    #[error(transparent)]
    Polytope(#[from] PolytopeError),
    #[error(transparent)]
    Solver(#[from] SolverError),
}

/// Coefficients shared by every reference model: denominator `f̂` and the
/// trailing numerator terms `b̂_2..` (the leading term is unit specific).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SharedStructure {
    pub f_hat: Vec<f64>,
    pub b_tail: Vec<f64>,
}

impl SharedStructure {
    pub fn nf(&self) -> usize {
        self.f_hat.len()
    }

    pub fn nb(&self) -> usize {
        self.b_tail.len() + 1
    }

    pub fn order(&self) -> usize {
        self.nf() + self.nb() - 1
    }

    /// Averages the leading `nf_hat` denominator and `nb_hat - 1` trailing
    /// numerator coefficients over the units (zero-padded).
    pub fn average(models: &[AffineModel], nf_hat: usize, nb_hat: usize) -> Result<Self, EnsembleError> {
        if models.is_empty() || nf_hat == 0 || nb_hat == 0 {
            return Err(EnsembleError::Dimension("empty model list or zero order".into()));
        }
        let n = models.len() as f64;
        let avg = |pick: &dyn Fn(&AffineModel, usize) -> f64, len: usize| -> Vec<f64> {
            (0..len).map(|j| models.iter().map(|m| pick(m, j)).sum::<f64>() / n).collect()
        };
        let f_hat = avg(&|m, j| m.f.get(j).copied().unwrap_or(0.0), nf_hat);
        let b_tail = avg(&|m, j| m.b.get(j + 1).copied().unwrap_or(0.0), nb_hat - 1);
        let s = Self { f_hat, b_tail };
        if !is_schur_stable(&s.f_hat) {
            return Err(EnsembleError::UnstableShared);
        }
        Ok(s)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReferenceModel {
    pub a_hat: DMatrix<f64>,
    pub c_hat: DMatrix<f64>,
    pub b_hat: DVector<f64>,
    pub gamma_hat: f64,
    /// Selection of the unit state components kept by the reference state.
    pub beta: DMatrix<f64>,
    pub shared: SharedStructure,
    /// Static gain of the original unit model.
    pub g: f64,
}

/// Builds the reference model of one unit. The leading numerator term is
/// `b̂_1 = g (1 + Σ f̂) - Σ_{j>=2} b̂_j`, which gives the reference the
/// unit's static gain; the offset is the unit's.
pub fn build_reference_model(original: &AffineModel, shared: &SharedStructure) -> Result<ReferenceModel, EnsembleError> {
    let (nf, nb) = (original.nf(), original.nb());
    let (nf_hat, nb_hat) = (shared.nf(), shared.nb());
    if nf_hat > nf || nb_hat > nb || nf_hat == 0 {
        return Err(EnsembleError::OrderMismatch { nf_hat, nb_hat, nf, nb });
    }
    if !is_schur_stable(&shared.f_hat) {
        return Err(EnsembleError::UnstableShared);
    }
    let g = original.gain();
    let b1 = g * (1.0 + shared.f_hat.iter().sum::<f64>()) - shared.b_tail.iter().sum::<f64>();
    let mut b = vec![b1];
    b.extend_from_slice(&shared.b_tail);
    let ss = realize(&AffineModel { b, f: shared.f_hat.clone(), gamma: original.gamma, t_m: original.t_m });
    // output lags map to output lags, input lags to input lags
    let (n, n_hat) = (nf + nb - 1, shared.order());
    let mut beta = DMatrix::zeros(n_hat, n);
    for i in 0..nf_hat {
        beta[(i, i)] = 1.0;
    }
    for i in 0..nb_hat - 1 {
        beta[(nf_hat + i, nf + i)] = 1.0;
    }
    Ok(ReferenceModel { a_hat: ss.a, c_hat: ss.c, b_hat: ss.b, gamma_hat: original.gamma, beta, shared: shared.clone(), g })
}

impl ReferenceModel {
    pub fn n(&self) -> usize {
        self.a_hat.nrows()
    }

    /// `Ĉ (I - Â)^-1 B̂`.
    pub fn static_gain(&self) -> f64 {
        static_gain(&self.a_hat, &self.b_hat, &self.c_hat)
    }

    /// Reference state from measured lags: `y_lags = [y(k), y(k-1), ..]`
    /// (at least `nf` values), `u_lags = [u(k-1), u(k-2), ..]` (at least
    /// `nb - 1` values).
    pub fn state_from_lags(&self, y_lags: &[f64], u_lags: &[f64]) -> DVector<f64> {
        let (nf, nb) = (self.shared.nf(), self.shared.nb());
        let mut x = DVector::zeros(self.n());
        for i in 0..nf {
            x[i] = y_lags[i] - self.gamma_hat;
        }
        for i in 0..nb - 1 {
            x[nf + i] = u_lags[i];
        }
        x
    }

    /// One-step residual `β x(k+1) - Â β x(k) - B̂ u(k)` of the reference
    /// against the unit model.
    pub fn residual(&self, x_next: &DVector<f64>, x: &DVector<f64>, u: f64) -> DVector<f64> {
        &self.beta * x_next - &self.a_hat * (&self.beta * x) - &self.b_hat * u
    }
}

fn static_gain(a: &DMatrix<f64>, b: &DVector<f64>, c: &DMatrix<f64>) -> f64 {
    let n = a.nrows();
    match (DMatrix::identity(n, n) - a).lu().solve(b) {
        Some(x) => (c * x)[(0, 0)],
        None => f64::NAN,
    }
}

/// Settings of the disturbance sampling.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DisturbanceSampling {
    /// Input range of the unit.
    pub u_min: f64,
    pub u_max: f64,
    /// Largest input increment per step.
    pub du_max: f64,
    pub steps: usize,
    /// Scaling of the sampled hull about the origin.
    pub inflation: f64,
}

impl DisturbanceSampling {
    pub fn new(u_min: f64, u_max: f64, du_max: f64) -> Self {
        Self { u_min, u_max, du_max, steps: 20_000, inflation: 1.1 }
    }
}

/// Random-walk input with increments uniform in `[-du_max, du_max]`,
/// reflected into `[u_min, u_max]`; occasional holds let the unit settle.
pub fn sample_input<R: Rng>(rng: &mut R, s: &DisturbanceSampling, u0: f64) -> Vec<f64> {
    let mut u = Vec::with_capacity(s.steps);
    let mut level = u0.clamp(s.u_min, s.u_max);
    let mut hold = 0usize;
    for _ in 0..s.steps {
        if hold > 0 {
            hold -= 1;
        } else if rng.gen_bool(0.02) {
            hold = rng.gen_range(5..60);
        } else {
            level = (level + rng.gen_range(-s.du_max..=s.du_max)).clamp(s.u_min, s.u_max);
        }
        u.push(level);
    }
    u
}

/// Residual samples of the reference against the unit model along `u`,
/// starting from the unit steady state at `u[0]`.
pub fn residual_samples(original: &AffineModel, reference: &ReferenceModel, u: &[f64]) -> Vec<DVector<f64>> {
    let ss = realize(original);
    let mut x = ss.steady_state(u.first().copied().unwrap_or(0.0));
    let mut out = Vec::with_capacity(u.len());
    for &uk in u {
        let next = &ss.a * &x + &ss.b * uk;
        out.push(reference.residual(&next, &x, uk));
        x = next;
    }
    out
}

/// Disturbance set `W_i`: the hull of the residual samples along the
/// template directions, scaled by the inflation factor, with the origin.
pub fn quantify_disturbance<R: Rng>(
    original: &AffineModel,
    reference: &ReferenceModel,
    sampling: &DisturbanceSampling,
    rng: &mut R,
) -> Result<VertexSet, EnsembleError> {
    if !(sampling.u_max >= sampling.u_min) || !(sampling.du_max >= 0.0) || sampling.steps == 0 {
        return Err(EnsembleError::Dimension("invalid sampling settings".into()));
    }
    let u0 = rng.gen_range(sampling.u_min..=sampling.u_max);
    let u = sample_input(rng, sampling, u0);
    Ok(hull_of_samples(&residual_samples(original, reference, &u), reference.n(), sampling.inflation))
}

/// Extreme samples along the template directions, scaled about the origin.
pub fn hull_of_samples(samples: &[DVector<f64>], dim: usize, inflation: f64) -> VertexSet {
    let mut pts = vec![DVector::zeros(dim)];
    for v in template_directions(dim) {
        let best = samples.iter().max_by(|a, b| a.dot(&v).total_cmp(&b.dot(&v)));
        if let Some(p) = best {
            if p.dot(&v) > 0.0 {
                let q = p * inflation;
                if !pts.contains(&q) {
                    pts.push(q);
                }
            }
        }
    }
    VertexSet::new(pts)
}

/// Ensemble model for one configuration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnsembleModel {
    pub a_hat: DMatrix<f64>,
    pub c_hat: DMatrix<f64>,
    pub b_bar: DVector<f64>,
    pub gamma_bar: f64,
    pub g_bar: f64,
    pub alpha: Vec<f64>,
    pub on: Vec<bool>,
}

fn check_shares(alpha: &[f64], on: &[bool]) -> Result<(), EnsembleError> {
    if alpha.len() != on.len() {
        return Err(EnsembleError::Dimension(format!("{} shares for {} units", alpha.len(), on.len())));
    }
    for (i, (&a, &o)) in alpha.iter().zip(on).enumerate() {
        if a < 0.0 || (a > 0.0 && !o) {
            return Err(EnsembleError::InconsistentShares(i));
        }
    }
    let sum: f64 = alpha.iter().sum();
    if sum != 0.0 && (sum - 1.0).abs() > 1e-9 {
        return Err(EnsembleError::Dimension(format!("shares sum to {sum}")));
    }
    Ok(())
}

pub fn assemble_ensemble(refs: &[ReferenceModel], alpha: &[f64], on: &[bool]) -> Result<EnsembleModel, EnsembleError> {
    if refs.is_empty() || refs.len() != alpha.len() {
        return Err(EnsembleError::Dimension(format!("{} models for {} shares", refs.len(), alpha.len())));
    }
    check_shares(alpha, on)?;
    let n = refs[0].n();
    if refs.iter().any(|r| r.n() != n || r.a_hat != refs[0].a_hat) {
        return Err(EnsembleError::Dimension("reference models do not share Â".into()));
    }
    let mut b_bar = DVector::zeros(n);
    let (mut gamma_bar, mut g_bar) = (0.0, 0.0);
    for (i, r) in refs.iter().enumerate() {
        b_bar += &r.b_hat * alpha[i];
        g_bar += alpha[i] * r.g;
        if on[i] {
            gamma_bar += r.gamma_hat;
        }
    }
    Ok(EnsembleModel {
        a_hat: refs[0].a_hat.clone(),
        c_hat: refs[0].c_hat.clone(),
        b_bar,
        gamma_bar,
        g_bar,
        alpha: alpha.to_vec(),
        on: on.to_vec(),
    })
}

/// `W̄ = ⊕ W_i` over the active units (the origin if none).
pub fn ensemble_disturbance(ws: &[VertexSet], on: &[bool]) -> VertexSet {
    let dim = ws.first().map_or(0, |w| w.dim());
    ws.iter()
        .zip(on)
        .filter(|(_, &o)| o)
        .fold(VertexSet::new(vec![DVector::zeros(dim)]), |acc, (w, _)| acc.minkowski_sum(w))
}

impl EnsembleModel {
    pub fn n(&self) -> usize {
        self.a_hat.nrows()
    }

    /// `Ĉ (I - Â)^-1 B̄`.
    pub fn transfer_gain(&self) -> f64 {
        static_gain(&self.a_hat, &self.b_bar, &self.c_hat)
    }

    pub fn output(&self, x: &DVector<f64>) -> f64 {
        (&self.c_hat * x)[(0, 0)] + self.gamma_bar
    }

    /// `(x_ss, u_ss)` with `x_ss = Â x_ss + B̄ u_ss` and `Ĉ x_ss + γ̄ = y`.
    pub fn steady_state(&self, y: f64) -> Result<(DVector<f64>, f64), EnsembleError> {
        if self.g_bar.abs() < 1e-12 {
            return Err(EnsembleError::SingularSteadyStateMap);
        }
        let u = (y - self.gamma_bar) / self.g_bar;
        let n = self.n();
        let x = (DMatrix::identity(n, n) - &self.a_hat)
            .lu()
            .solve(&(&self.b_bar * u))
            .ok_or(EnsembleError::SingularSteadyStateMap)?;
        Ok((x, u))
    }
}

/// Velocity-form matrices `(𝒜, ℬ, ℋ)` for `ξ = [Δx̄; ε]`.
pub fn augment(ens: &EnsembleModel) -> (DMatrix<f64>, DVector<f64>, DMatrix<f64>) {
    let n = ens.n();
    let ca = &ens.c_hat * &ens.a_hat;
    let cb = (&ens.c_hat * &ens.b_bar)[(0, 0)];
    let mut aa = DMatrix::zeros(n + 1, n + 1);
    aa.view_mut((0, 0), (n, n)).copy_from(&ens.a_hat);
    aa.view_mut((n, 0), (1, n)).copy_from(&ca);
    aa[(n, n)] = 1.0;
    let mut bb = DVector::zeros(n + 1);
    bb.rows_mut(0, n).copy_from(&ens.b_bar);
    bb[n] = cb;
    let mut hh = DMatrix::zeros(n + 1, n);
    hh.view_mut((0, 0), (n, n)).fill_with_identity();
    hh.view_mut((n, 0), (1, n)).copy_from(&ens.c_hat);
    (aa, bb, hh)
}

/// Infinite-horizon LQR gain `K` (row) for `x+ = A x + B u`, `u = K x`,
/// by Riccati iteration.
pub fn lqr(a: &DMatrix<f64>, b: &DVector<f64>, q: &DMatrix<f64>, r: f64) -> Result<DMatrix<f64>, EnsembleError> {
    let mut p = q.clone();
    for _ in 0..100_000 {
        let bp = b.transpose() * &p;
        let s = r + (&bp * b)[(0, 0)];
        let k = -(&bp * a) / s;
        let next = q + a.transpose() * &p * a + a.transpose() * p.clone() * b * &k;
        let next = (&next + next.transpose()) * 0.5;
        let diff = (&next - &p).amax();
        p = next;
        if diff <= 1e-13 * (1.0 + p.amax()) {
            let bp = b.transpose() * &p;
            let s = r + (&bp * b)[(0, 0)];
            let k = -(bp * a) / s;
            return Ok(DMatrix::from_iterator(1, k.len(), k.iter().copied()));
        }
    }
    Err(EnsembleError::LqrNoConvergence)
}

pub fn spectral_radius(m: &DMatrix<f64>) -> f64 {
    m.complex_eigenvalues().iter().map(|z| z.norm()).fold(0.0, f64::max)
}

/// Local limits of one unit: steam draw `u` and quasi-steady-state gas
/// `g u + γ`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct UnitLimits {
    pub u_min: f64,
    pub u_max: f64,
    pub y_min: f64,
    pub y_max: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MpcSettings {
    pub horizon: usize,
    /// Weight `T` of `(r̂ - r)²`.
    pub t_weight: f64,
    /// Diagonal of `Q` on `Δx̄` (one value for every component).
    pub q_dx: f64,
    /// Diagonal of `Q` on the tracking error.
    pub q_eps: f64,
    /// `R` on `δũ`.
    pub r_weight: f64,
    /// Outer-approximation tolerance of the RPI set, relative to the size
    /// of the disturbance increment set.
    pub rpi_eps: f64,
}

impl Default for MpcSettings {
    fn default() -> Self {
        Self { horizon: 20, t_weight: 1.0e4, q_dx: 1.0, q_eps: 100.0, r_weight: 0.01, rpi_eps: 0.05 }
    }
}

/// Constraints of the whole ensemble.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnsembleLimits {
    pub units: Vec<UnitLimits>,
    /// Range `Ū` of the total steam demand.
    pub u_bar: (f64, f64),
    /// Per-unit rate bound `Δū`: `|u_i(k) - u_i(k-1)| <= Δū`.
    pub du_max: f64,
}

/// Measurement available to the medium level at step `k`.
#[derive(Debug, Clone, PartialEq)]
pub struct MlMeasurement {
    /// `x̄(k)` and `x̄(k-1)`.
    pub x: DVector<f64>,
    pub x_prev: DVector<f64>,
    /// `ȳ(k)`.
    pub y: f64,
    /// Applied `ū(k-1)` and the shares it was split with.
    pub u_prev: f64,
    pub alpha_prev: Vec<f64>,
}

/// Interval `[lo, hi]` with `lo > hi` meaning empty.
pub(crate) type Interval = (f64, f64);

pub(crate) fn intersect(a: Interval, b: Interval) -> Interval {
    (a.0.max(b.0), a.1.min(b.1))
}

/// Tube MPC for one configuration.
#[derive(Debug, Clone)]
pub struct TubeMPCProblem {
    pub refs: Vec<ReferenceModel>,
    pub ens: EnsembleModel,
    pub refs_gain: Vec<f64>,
    pub refs_gamma: Vec<f64>,
    pub limits: EnsembleLimits,
    pub settings: MpcSettings,
    pub aa: DMatrix<f64>,
    pub bb: DVector<f64>,
    pub hh: DMatrix<f64>,
    /// Feedback `Δū = δũ + K (ξ - ξ̃)`.
    pub k: DMatrix<f64>,
    pub phi: DMatrix<f64>,
    pub w_bar: VertexSet,
    pub z: Polytope,
    pub z_is_point: bool,
    /// Last row of `[[Â - I, B̄], [ĈÂ, ĈB̄]]^-1`.
    pub m_u: DMatrix<f64>,
    /// Range of `ū - ũ`: `(m_u + K) Z ⊕ (-m_u ℋ) W̄`.
    pub o_u: Interval,
    /// Range of `K Z`.
    pub kz: Interval,
    /// Tightened range of `ũ(j)` and `δũ(j)`, `j > k`.
    pub u_tight: Interval,
    pub du_tight: Interval,
}

/// Variable layout `[x̃(k-1), ũ(k-1), δũ(k..k+N-1), r̂]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MpcLayout {
    pub n: usize,
    pub horizon: usize,
}

impl MpcLayout {
    pub fn x_prev(&self) -> usize {
        0
    }
    pub fn u_prev(&self) -> usize {
        self.n
    }
    pub fn du(&self, i: usize) -> usize {
        self.n + 1 + i
    }
    pub fn r_hat(&self) -> usize {
        self.n + 1 + self.horizon
    }
    pub fn num_vars(&self) -> usize {
        self.n + self.horizon + 2
    }
}

/// Nominal trajectory as linear maps of the decision vector.
struct Trajectory {
    /// `x̃(k-1+j)`, `j = 0..=N+1`.
    x: Vec<DMatrix<f64>>,
    /// `ũ(k-1+j)`, `j = 0..=N`.
    u: Vec<DVector<f64>>,
}

fn trajectory(a: &DMatrix<f64>, b: &DVector<f64>, lay: MpcLayout) -> Trajectory {
    let (n, nv) = (lay.n, lay.num_vars());
    let mut x0 = DMatrix::zeros(n, nv);
    x0.view_mut((0, 0), (n, n)).fill_with_identity();
    let mut u0 = DVector::zeros(nv);
    u0[lay.u_prev()] = 1.0;
    let mut x = vec![x0];
    let mut u = vec![u0];
    for j in 0..=lay.horizon {
        let next = a * &x[j] + b * u[j].transpose();
        x.push(next);
        if j < lay.horizon {
            let mut un = u[j].clone();
            un[lay.du(j)] += 1.0;
            u.push(un);
        }
    }
    Trajectory { x, u }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MpcSolution {
    /// Applied `ū(k)` and `Δū(k) = ū(k) - ū(k-1)`.
    pub u: f64,
    pub delta_u: f64,
    pub r_hat: f64,
    /// `x̃(k-1), .., x̃(k+N)`.
    pub x_nom: Vec<DVector<f64>>,
    /// `ũ(k-1), .., ũ(k+N-1)`.
    pub u_nom: Vec<f64>,
    pub du_nom: Vec<f64>,
    /// `ξ̃(k)` (tracking part relative to `r̂`).
    pub xi_nom: DVector<f64>,
    /// Tube error `ξ(k) - ξ̃(k)`.
    pub tube_error: DVector<f64>,
    pub x_ss: DVector<f64>,
    pub u_ss: f64,
    pub cost: f64,
    pub decision: DVector<f64>,
}

pub(crate) fn unit_interval(problem_alpha: &[f64], on: &[bool], limits: &EnsembleLimits, gains: &[f64], gammas: &[f64], margin: Interval) -> Interval {
    // ũ with α_i (ũ + o) in U_i and g_i α_i (ũ + o) + γ_i in Y_i for all o in margin
    let mut out = (limits.u_bar.0 - margin.0, limits.u_bar.1 - margin.1);
    for i in 0..problem_alpha.len() {
        let a = problem_alpha[i];
        if !on[i] || a <= 0.0 {
            continue;
        }
        let l = &limits.units[i];
        out = intersect(out, (l.u_min / a - margin.0, l.u_max / a - margin.1));
        let ga = gains[i] * a;
        let y = ((l.y_min - gammas[i]) / ga, (l.y_max - gammas[i]) / ga);
        let y = if ga > 0.0 { y } else { (y.1, y.0) };
        out = intersect(out, (y.0 - margin.0, y.1 - margin.1));
    }
    out
}

pub(crate) fn rate_interval(alpha: &[f64], du_max: f64, margin: Interval) -> Interval {
    let mut out = (f64::NEG_INFINITY, f64::INFINITY);
    for &a in alpha {
        if a > 0.0 {
            out = intersect(out, (-du_max / a - margin.0, du_max / a - margin.1));
        }
    }
    out
}

/// Range of `ū(k)` for which every unit meets its limits and the rate
/// bound from `α_prev ū(k-1)`.
pub(crate) fn applied_interval(
    alpha: &[f64],
    on: &[bool],
    limits: &EnsembleLimits,
    gains: &[f64],
    gammas: &[f64],
    alpha_prev: &[f64],
    u_prev: f64,
) -> Interval {
    let mut out = unit_interval(alpha, on, limits, gains, gammas, (0.0, 0.0));
    for i in 0..alpha.len() {
        let prev = alpha_prev[i] * u_prev;
        if alpha[i] > 0.0 {
            out = intersect(out, ((prev - limits.du_max) / alpha[i], (prev + limits.du_max) / alpha[i]));
        } else if prev.abs() > limits.du_max * (1.0 + 1e-12) {
            return (1.0, -1.0);
        }
    }
    out
}

impl TubeMPCProblem {
    pub fn build(
        refs: &[ReferenceModel],
        ws: &[VertexSet],
        alpha: &[f64],
        on: &[bool],
        limits: &EnsembleLimits,
        settings: &MpcSettings,
    ) -> Result<Self, EnsembleError> {
        if ws.len() != refs.len() || limits.units.len() != refs.len() {
            return Err(EnsembleError::Dimension("per-unit data lengths differ".into()));
        }
        if settings.horizon < 2 {
            return Err(EnsembleError::Dimension("horizon must be at least 2".into()));
        }
        let ens = assemble_ensemble(refs, alpha, on)?;
        if ens.g_bar.abs() < 1e-12 {
            return Err(EnsembleError::SingularSteadyStateMap);
        }
        let n = ens.n();
        let (aa, bb, hh) = augment(&ens);
        let mut q = DMatrix::identity(n + 1, n + 1) * settings.q_dx;
        q[(n, n)] = settings.q_eps;
        let k = lqr(&aa, &bb, &q, settings.r_weight)?;
        let phi = &aa + &bb * &k;
        let w_bar = ensemble_disturbance(ws, on);
        let dw = w_bar.minkowski_sum(&w_bar.neg()).linear_image(&hh);
        let scale = (0..=n)
            .flat_map(|i| {
                let e = DVector::from_fn(n + 1, |j, _| if j == i { 1.0 } else { 0.0 });
                [dw.support(&e), dw.support(&(-e))]
            })
            .fold(0.0, f64::max);
        let z = compute_rpi(&phi, &dw, settings.rpi_eps * scale.max(f64::MIN_POSITIVE))?;
        let z_is_point = dw.points.iter().all(|p| p.amax() == 0.0);

        let mut m = DMatrix::zeros(n + 1, n + 1);
        m.view_mut((0, 0), (n, n)).copy_from(&(&ens.a_hat - DMatrix::identity(n, n)));
        m.view_mut((0, n), (n, 1)).copy_from(&ens.b_bar);
        m.view_mut((n, 0), (1, n)).copy_from(&(&ens.c_hat * &ens.a_hat));
        m[(n, n)] = (&ens.c_hat * &ens.b_bar)[(0, 0)];
        let m_inv = m.try_inverse().ok_or(EnsembleError::SingularSteadyStateMap)?;
        let m_u = m_inv.rows(n, 1).into_owned();
        let l = &m_u + &k;
        let range = |row: &DMatrix<f64>| -> Result<Interval, EnsembleError> {
            let v = row.transpose().column(0).into_owned();
            Ok((-z.support(&(-&v))?, z.support(&v)?))
        };
        let lz = range(&l)?;
        let kz = range(&k)?;
        let mh = (&m_u * &hh).transpose().column(0).into_owned();
        let wpart = (-w_bar.support(&mh), w_bar.support(&(-&mh)));
        let o_u = (lz.0 + wpart.0, lz.1 + wpart.1);

        let refs_gain: Vec<f64> = refs.iter().map(|r| r.g).collect();
        let refs_gamma: Vec<f64> = refs.iter().map(|r| r.gamma_hat).collect();
        let u_tight = unit_interval(alpha, on, limits, &refs_gain, &refs_gamma, o_u);
        let du_tight = rate_interval(alpha, limits.du_max, kz);
        if u_tight.0 > u_tight.1 {
            return Err(EnsembleError::EmptyTightening(format!("input range {u_tight:?}")));
        }
        if du_tight.0 > du_tight.1 {
            return Err(EnsembleError::EmptyTightening(format!("rate range {du_tight:?}")));
        }
        Ok(Self {
            refs: refs.to_vec(),
            ens,
            refs_gain,
            refs_gamma,
            limits: limits.clone(),
            settings: settings.clone(),
            aa,
            bb,
            hh,
            k,
            phi,
            w_bar,
            z,
            z_is_point,
            m_u,
            o_u,
            kz,
            u_tight,
            du_tight,
        })
    }

    pub fn layout(&self) -> MpcLayout {
        MpcLayout { n: self.ens.n(), horizon: self.settings.horizon }
    }

    /// Measured velocity-form state with the tracking part taken relative
    /// to the nominal output, `[Δx̄(k); ȳ(k) - γ̄]`.
    fn measured(&self, meas: &MlMeasurement) -> DVector<f64> {
        let n = self.ens.n();
        let mut e0 = DVector::zeros(n + 1);
        e0.rows_mut(0, n).copy_from(&(&meas.x - &meas.x_prev));
        e0[n] = meas.y - self.ens.gamma_bar;
        e0
    }

    /// The QP at step `k` and the affine map `(a, b)` of the applied input
    /// `ū(k) = a' v + b`.
    pub fn qp(&self, meas: &MlMeasurement, r: f64) -> Result<(Problem, DVector<f64>, f64), EnsembleError> {
        let lay = self.layout();
        let (n, nn, nv) = (lay.n, lay.horizon, lay.num_vars());
        if meas.x.len() != n || meas.x_prev.len() != n || meas.alpha_prev.len() != self.ens.alpha.len() {
            return Err(EnsembleError::Dimension("measurement size".into()));
        }
        let ens = &self.ens;
        let tr = trajectory(&ens.a_hat, &ens.b_bar, lay);
        let mut q = DMatrix::identity(n + 1, n + 1) * self.settings.q_dx;
        q[(n, n)] = self.settings.q_eps;
        let mut p = Problem::new(nv);
        let mut hess = DMatrix::zeros(nv, nv);
        let mut cost = DVector::zeros(nv);
        let mut er = DVector::zeros(nv);
        er[lay.r_hat()] = 1.0;
        for i in 0..nn {
            // ξ̃(k+i) = G v + c
            let mut g = DMatrix::zeros(n + 1, nv);
            g.view_mut((0, 0), (n, nv)).copy_from(&(&tr.x[i + 1] - &tr.x[i]));
            let cy = &ens.c_hat * &tr.x[i + 1];
            g.view_mut((n, 0), (1, nv)).copy_from(&(cy - er.transpose()));
            let mut c = DVector::zeros(n + 1);
            c[n] = ens.gamma_bar;
            hess += g.transpose() * &q * &g * 2.0;
            cost += g.transpose() * (&q * c) * 2.0;
            hess[(lay.du(i), lay.du(i))] += 2.0 * self.settings.r_weight;
        }
        hess[(lay.r_hat(), lay.r_hat())] += 2.0 * self.settings.t_weight;
        cost[lay.r_hat()] -= 2.0 * self.settings.t_weight * r;
        p.hessian = Some((&hess + hess.transpose()) * 0.5);
        p.cost = cost;

        // tube error e(v) = e0 - E v
        let e0 = self.measured(meas);
        let mut e_map = DMatrix::zeros(n + 1, nv);
        e_map.view_mut((0, 0), (n, nv)).copy_from(&(&tr.x[1] - &tr.x[0]));
        e_map.view_mut((n, 0), (1, nv)).copy_from(&(&ens.c_hat * &tr.x[1]));
        if self.z_is_point {
            for row in 0..=n {
                p.push_eq(e_map.row(row).transpose().as_slice(), e0[row]);
            }
        } else {
            let a = -(&self.z.h * &e_map);
            let b = &self.z.k - &self.z.h * &e0;
            for row in 0..a.nrows() {
                p.push_le(a.row(row).transpose().as_slice(), b[row]);
            }
        }

        // applied input, exact constraints
        let ke = (&self.k * &e_map).transpose().column(0).into_owned();
        let mut a_u = -ke;
        a_u[lay.du(0)] += 1.0;
        let b_u = meas.u_prev + (&self.k * &e0)[(0, 0)];
        let range = applied_interval(
            &ens.alpha,
            &ens.on,
            &self.limits,
            &self.refs_gain,
            &self.refs_gamma,
            &meas.alpha_prev,
            meas.u_prev,
        );
        if range.0 > range.1 {
            return Err(EnsembleError::QPInfeasible);
        }
        if range.1.is_finite() {
            p.push_le(a_u.as_slice(), range.1 - b_u);
        }
        if range.0.is_finite() {
            p.push_ge(a_u.as_slice(), range.0 - b_u);
        }

        // predictions, tightened
        for i in 1..nn {
            p.push_le(tr.u[i + 1].as_slice(), self.u_tight.1);
            p.push_ge(tr.u[i + 1].as_slice(), self.u_tight.0);
            p.lower[lay.du(i)] = self.du_tight.0;
            p.upper[lay.du(i)] = self.du_tight.1;
        }

        // terminal steady state x̃(k+N-1) = x_ss(r̂), ũ(k+N-1) = u_ss(r̂)
        let (sx, _) = ens.steady_state(ens.gamma_bar + 1.0)?;
        let xt = &tr.x[nn];
        for row in 0..n {
            let mut a = xt.row(row).transpose();
            a[lay.r_hat()] -= sx[row];
            p.push_eq(a.as_slice(), -sx[row] * ens.gamma_bar);
        }
        let mut a = tr.u[nn].clone();
        a[lay.r_hat()] -= 1.0 / ens.g_bar;
        p.push_eq(a.as_slice(), -ens.gamma_bar / ens.g_bar);
        Ok((p, a_u, b_u))
    }

    pub fn solve(&self, meas: &MlMeasurement, r: f64) -> Result<MpcSolution, EnsembleError> {
        let (p, a_u, b_u) = self.qp(meas, r)?;
        let s = solve_qp(&p)?;
        if s.solution.status != Status::Optimal {
            return Err(EnsembleError::QPInfeasible);
        }
        let v = s.solution.x;
        let cost = p.objective(&v) + self.settings.t_weight * r * r;
        let u = a_u.dot(&v) + b_u;
        Ok(self.unpack(meas, v, u, cost))
    }

    fn unpack(&self, meas: &MlMeasurement, v: DVector<f64>, u: f64, cost: f64) -> MpcSolution {
        let lay = self.layout();
        let (n, nn) = (lay.n, lay.horizon);
        let tr = trajectory(&self.ens.a_hat, &self.ens.b_bar, lay);
        let x_nom: Vec<DVector<f64>> = tr.x.iter().map(|m| m * &v).collect();
        let u_nom: Vec<f64> = tr.u.iter().map(|a| a.dot(&v)).collect();
        let du_nom: Vec<f64> = (0..nn).map(|i| v[lay.du(i)]).collect();
        let r_hat = v[lay.r_hat()];
        let mut xi_nom = DVector::zeros(n + 1);
        xi_nom.rows_mut(0, n).copy_from(&(&x_nom[1] - &x_nom[0]));
        xi_nom[n] = self.ens.output(&x_nom[1]) - r_hat;
        let mut tube_error = self.measured(meas);
        for i in 0..n {
            tube_error[i] -= xi_nom[i];
        }
        tube_error[n] -= (&self.ens.c_hat * &x_nom[1])[(0, 0)];
        let u_ss = (r_hat - self.ens.gamma_bar) / self.ens.g_bar;
        let x_ss = x_nom[nn].clone();
        MpcSolution {
            u,
            delta_u: u - meas.u_prev,
            r_hat,
            x_nom,
            u_nom,
            du_nom,
            xi_nom,
            tube_error,
            x_ss,
            u_ss,
            cost,
            decision: v,
        }
    }

    /// Decision vector of the previous solution shifted by one step and
    /// padded with `δũ = 0`.
    pub fn shifted_candidate(&self, prev: &MpcSolution) -> DVector<f64> {
        let lay = self.layout();
        let mut v = DVector::zeros(lay.num_vars());
        v.rows_mut(0, lay.n).copy_from(&prev.x_nom[1]);
        v[lay.u_prev()] = prev.u_nom[1];
        for i in 0..lay.horizon - 1 {
            v[lay.du(i)] = prev.du_nom[i + 1];
        }
        v[lay.r_hat()] = prev.r_hat;
        v
    }

    /// Largest constraint violation of `v` in the QP at the given
    /// measurement.
    pub fn candidate_violation(&self, meas: &MlMeasurement, r: f64, v: &DVector<f64>) -> Result<f64, EnsembleError> {
        match self.qp(meas, r) {
            Ok((p, _, _)) => Ok(p.max_violation(v)),
            Err(EnsembleError::QPInfeasible) => Ok(f64::INFINITY),
            Err(e) => Err(e),
        }
    }
}

/// Linear ensemble plant `x̄(k+1) = Â x̄(k) + B̄(α) ū(k) + w̄(k)` built from
/// the reference models, used as the medium-level test bench.
#[derive(Debug, Clone)]
pub struct LinearEnsemblePlant {
    pub refs: Vec<ReferenceModel>,
    pub on: Vec<bool>,
    pub x: DVector<f64>,
    pub x_prev: DVector<f64>,
    pub u_prev: f64,
    pub alpha_prev: Vec<f64>,
}

impl LinearEnsemblePlant {
    /// Plant at rest under `ū = u` split by `alpha`.
    pub fn at_steady_state(refs: &[ReferenceModel], on: &[bool], alpha: &[f64], u: f64) -> Result<Self, EnsembleError> {
        let ens = assemble_ensemble(refs, alpha, on)?;
        let n = ens.n();
        let x = (DMatrix::identity(n, n) - &ens.a_hat)
            .lu()
            .solve(&(&ens.b_bar * u))
            .ok_or(EnsembleError::SingularSteadyStateMap)?;
        Ok(Self { refs: refs.to_vec(), on: on.to_vec(), x_prev: x.clone(), x, u_prev: u, alpha_prev: alpha.to_vec() })
    }

    pub fn output(&self) -> f64 {
        let gamma: f64 = self.refs.iter().zip(&self.on).filter(|(_, &o)| o).map(|(r, _)| r.gamma_hat).sum();
        (&self.refs[0].c_hat * &self.x)[(0, 0)] + gamma
    }

    pub fn measurement(&self) -> MlMeasurement {
        MlMeasurement {
            x: self.x.clone(),
            x_prev: self.x_prev.clone(),
            y: self.output(),
            u_prev: self.u_prev,
            alpha_prev: self.alpha_prev.clone(),
        }
    }

    pub fn step(&mut self, u: f64, alpha: &[f64], w: &DVector<f64>) {
        let mut next = &self.refs[0].a_hat * &self.x + w;
        for (r, &a) in self.refs.iter().zip(alpha) {
            next += &r.b_hat * (a * u);
        }
        self.x_prev = std::mem::replace(&mut self.x, next);
        self.u_prev = u;
        self.alpha_prev = alpha.to_vec();
    }
}
