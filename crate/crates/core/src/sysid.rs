//! Affine input/output models of the closed-loop boilers at the medium
//! sampling period: data collection, output-error identification and the
//! canonical state-space realization.
//!
//! The model is
//!
//! ```text
//! y(k) = (b_1 z^-1 + ... + b_nb z^-nb) / (1 + f_1 z^-1 + ... + f_nf z^-nf) u(k) + γ
//! ```
//!
//! with realization state `[δy(k) .. δy(k-nf+1), u(k-1) .. u(k-nb+1)]`,
//! `δy = y - γ`.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::local_control::{ClosedLoopBoiler, LocalControlError};

/// Validation fit (normalized, 1 is perfect) a model needs before it is
/// accepted into the ensemble.
pub const MIN_VALIDATION_FIT: f64 = 0.9;

/// Candidate orders of the order sweep.
pub const ORDER_CANDIDATES: [usize; 3] = [1, 2, 3];

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum SysIdError {
    #[error("identified denominator is not Schur stable")]
    UnstableFit,
    #[error("regressor matrix is rank deficient (insufficient excitation)")]
    RankDeficient,
    #[error("static gain is zero")]
    ZeroGain,
    #[error("dataset too short: {len} samples for orders nb={nb}, nf={nf}")]
    TooShort { len: usize, nb: usize, nf: usize },
    #[error("validation fit {fit:.4} below {min}")]
    PoorFit { fit: f64, min: f64 },
    #[error("sampling period must be a positive multiple of the low-level period")]
    BadPeriod,
    #[error(transparent)]
    Simulation(#[from] LocalControlError),
}

/// Input/output record sampled every `t_m` seconds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dataset {
    pub u: Vec<f64>,
    pub y: Vec<f64>,
    pub t_m: f64,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.u.len()
    }

    pub fn is_empty(&self) -> bool {
        self.u.is_empty()
    }

    /// Splits at `at`, the second part keeping the sampling period.
    pub fn split(&self, at: usize) -> (Dataset, Dataset) {
        (
            Dataset { u: self.u[..at].to_vec(), y: self.y[..at].to_vec(), t_m: self.t_m },
            Dataset { u: self.u[at..].to_vec(), y: self.y[at..].to_vec(), t_m: self.t_m },
        )
    }
}

/// Multi-step excitation: each level held for `hold` seconds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepDesign {
    pub levels: Vec<f64>,
    pub hold: f64,
    pub t_m: f64,
}

impl StepDesign {
    pub fn samples(&self) -> usize {
        self.levels.len() * self.samples_per_level()
    }

    fn samples_per_level(&self) -> usize {
        (self.hold / self.t_m).round() as usize
    }
}

/// Drives the closed loop through `design` and samples `y(k) = q_g(k T_M)`
/// with `u(k)` the steam draw held over `[k T_M, (k+1) T_M)`.
pub fn excite_and_collect(boiler: &ClosedLoopBoiler, design: &StepDesign, h_f: f64) -> Result<Dataset, SysIdError> {
    let mu = design.t_m / boiler.tau;
    if !(mu >= 1.0) || (mu - mu.round()).abs() > 1e-9 {
        return Err(SysIdError::BadPeriod);
    }
    let mu = mu.round() as usize;
    let mut sys = boiler.clone();
    let mut data = Dataset { u: Vec::with_capacity(design.samples()), y: Vec::with_capacity(design.samples()), t_m: design.t_m };
    for &level in &design.levels {
        for _ in 0..design.samples_per_level() {
            data.y.push(sys.commanded_gas());
            data.u.push(level);
            for _ in 0..mu {
                sys.step(level, h_f)?;
            }
        }
    }
    Ok(data)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AffineModel {
    pub b: Vec<f64>,
    pub f: Vec<f64>,
    pub gamma: f64,
    pub t_m: f64,
}

/// Schur-Cohn test: all roots of `z^n + a_1 z^(n-1) + ... + a_n` inside the
/// open unit disc.
pub fn is_schur_stable(a: &[f64]) -> bool {
    let mut p: Vec<f64> = std::iter::once(1.0).chain(a.iter().copied()).collect();
    while p.len() > 1 {
        let n = p.len() - 1;
        let k = p[n] / p[0];
        if !k.is_finite() || k.abs() >= 1.0 {
            return false;
        }
        let next: Vec<f64> = (0..n).map(|i| (p[i] - k * p[n - i]) / (1.0 - k * k)).collect();
        p = next;
    }
    true
}

impl AffineModel {
    pub fn nb(&self) -> usize {
        self.b.len()
    }

    pub fn nf(&self) -> usize {
        self.f.len()
    }

    pub fn order(&self) -> usize {
        self.nf() + self.nb() - 1
    }

    /// `g = Σb / (1 + Σf)`.
    pub fn gain(&self) -> f64 {
        self.b.iter().sum::<f64>() / (1.0 + self.f.iter().sum::<f64>())
    }

    pub fn is_stable(&self) -> bool {
        is_schur_stable(&self.f)
    }

    pub fn validate(&self) -> Result<(), SysIdError> {
        if !self.is_stable() {
            return Err(SysIdError::UnstableFit);
        }
        if self.gain() == 0.0 || !self.gain().is_finite() {
            return Err(SysIdError::ZeroGain);
        }
        Ok(())
    }

    /// Output simulation. The first `max(nb, nf)` outputs are taken from
    /// `y_init`; later outputs are produced by the model alone.
    pub fn simulate(&self, u: &[f64], y_init: &[f64]) -> Vec<f64> {
        let n0 = self.nb().max(self.nf()).min(u.len());
        let mut dy: Vec<f64> = y_init[..n0].iter().map(|y| y - self.gamma).collect();
        for k in n0..u.len() {
            let mut v = 0.0;
            for (j, fj) in self.f.iter().enumerate() {
                v -= fj * dy[k - 1 - j];
            }
            for (j, bj) in self.b.iter().enumerate() {
                v += bj * u[k - 1 - j];
            }
            dy.push(v);
        }
        dy.into_iter().map(|d| d + self.gamma).collect()
    }

    /// Impulse response `h(1..=lags)` of the transfer function.
    pub fn impulse_response(&self, lags: usize) -> Vec<f64> {
        let mut u = vec![0.0; lags + 1];
        u[0] = 1.0;
        let mut h = vec![0.0; lags + 1];
        for k in 1..=lags {
            let mut v = 0.0;
            for (j, fj) in self.f.iter().enumerate() {
                if k > j + 1 {
                    v -= fj * h[k - 1 - j];
                }
            }
            for (j, bj) in self.b.iter().enumerate() {
                if k > j {
                    v += bj * u[k - 1 - j];
                }
            }
            h[k] = v;
        }
        h[1..].to_vec()
    }
}

/// Normalized fit `1 - |y - ŷ| / |y - mean(y)|`.
pub fn fit_metric(y: &[f64], y_hat: &[f64]) -> f64 {
    let mean = y.iter().sum::<f64>() / y.len() as f64;
    let num: f64 = y.iter().zip(y_hat).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
    let den: f64 = y.iter().map(|a| (a - mean).powi(2)).sum::<f64>().sqrt();
    if den == 0.0 {
        return if num == 0.0 { 1.0 } else { f64::NEG_INFINITY };
    }
    1.0 - num / den
}

fn unpack(theta: &DVector<f64>, nb: usize, nf: usize, t_m: f64) -> AffineModel {
    AffineModel {
        b: theta.rows(0, nb).iter().copied().collect(),
        f: theta.rows(nb, nf).iter().copied().collect(),
        gamma: theta[nb + nf],
        t_m,
    }
}

fn pack(m: &AffineModel) -> DVector<f64> {
    DVector::from_iterator(m.nb() + m.nf() + 1, m.b.iter().chain(m.f.iter()).copied().chain(std::iter::once(m.gamma)))
}

/// Equation-error least squares with an affine regressor column.
pub fn arx_least_squares(data: &Dataset, nb: usize, nf: usize) -> Result<AffineModel, SysIdError> {
    let n0 = nb.max(nf);
    let rows = data.len().saturating_sub(n0);
    let p = nb + nf + 1;
    if rows < p {
        return Err(SysIdError::TooShort { len: data.len(), nb, nf });
    }
    let mut phi = DMatrix::zeros(rows, p);
    let mut target = DVector::zeros(rows);
    for (r, k) in (n0..data.len()).enumerate() {
        for j in 0..nb {
            phi[(r, j)] = data.u[k - 1 - j];
        }
        for j in 0..nf {
            phi[(r, nb + j)] = -data.y[k - 1 - j];
        }
        phi[(r, p - 1)] = 1.0;
        target[r] = data.y[k];
    }
    // column scaling before the rank test
    let scale = DVector::from_iterator(p, (0..p).map(|j| phi.column(j).norm().max(1e-300)));
    for j in 0..p {
        let s = scale[j];
        phi.column_mut(j).scale_mut(1.0 / s);
    }
    let svd = phi.clone().svd(true, true);
    let smax = svd.singular_values.max();
    let smin = svd.singular_values.min();
    if smin <= 1e-10 * smax {
        return Err(SysIdError::RankDeficient);
    }
    let theta = svd.solve(&target, 0.0).map_err(|_| SysIdError::RankDeficient)?;
    let theta = theta.component_div(&scale);
    let mut model = unpack(&theta, nb, nf, data.t_m);
    // the regressor constant is γ (1 + Σf)
    model.gamma = theta[p - 1] / (1.0 + model.f.iter().sum::<f64>());
    Ok(model)
}

fn oe_residual(model: &AffineModel, data: &Dataset) -> DVector<f64> {
    let n0 = model.nb().max(model.nf());
    let y_hat = model.simulate(&data.u, &data.y);
    DVector::from_iterator(data.len() - n0, (n0..data.len()).map(|k| data.y[k] - y_hat[k]))
}

/// Identifies an affine model minimizing the simulation error. The
/// equation-error estimate initializes a Levenberg-Marquardt refinement
/// with central-difference Jacobians.
pub fn identify(data: &Dataset, nb: usize, nf: usize) -> Result<AffineModel, SysIdError> {
    assert!(nb >= 1 && nf >= 1, "orders start at 1");
    if data.len() <= 10 * (nb + nf) {
        return Err(SysIdError::TooShort { len: data.len(), nb, nf });
    }
    let init = arx_least_squares(data, nb, nf)?;
    if !init.is_stable() {
        return Err(SysIdError::UnstableFit);
    }
    let mut theta = pack(&init);
    let cost = |th: &DVector<f64>| -> f64 {
        let m = unpack(th, nb, nf, data.t_m);
        if !m.is_stable() {
            return f64::INFINITY;
        }
        let r = oe_residual(&m, data);
        let c = r.norm_squared();
        if c.is_finite() {
            c
        } else {
            f64::INFINITY
        }
    };
    let mut current = cost(&theta);
    let mut lambda = 1e-3;
    let p = theta.len();
    for _ in 0..200 {
        if current == 0.0 {
            break;
        }
        let r0 = oe_residual(&unpack(&theta, nb, nf, data.t_m), data);
        let mut jac = DMatrix::zeros(r0.len(), p);
        for j in 0..p {
            let h = 1e-6 * theta[j].abs().max(1e-3);
            let mut tp = theta.clone();
            tp[j] += h;
            let mut tm = theta.clone();
            tm[j] -= h;
            let rp = oe_residual(&unpack(&tp, nb, nf, data.t_m), data);
            let rm = oe_residual(&unpack(&tm, nb, nf, data.t_m), data);
            // residual is y - ŷ, so its Jacobian is the negated model sensitivity
            jac.set_column(j, &((rp - rm) / (2.0 * h)));
        }
        let jtj = jac.transpose() * &jac;
        let jtr = jac.transpose() * &r0;
        let mut improved = false;
        for _ in 0..30 {
            let mut lhs = jtj.clone();
            for i in 0..p {
                lhs[(i, i)] += lambda * jtj[(i, i)].max(1e-12);
            }
            let Some(step) = lhs.lu().solve(&(-&jtr)) else {
                lambda *= 4.0;
                continue;
            };
            let cand = &theta + &step;
            let c = cost(&cand);
            if c < current {
                let rel = (current - c) / current;
                theta = cand;
                current = c;
                lambda = (lambda / 3.0).max(1e-12);
                improved = rel > 1e-14;
                break;
            }
            lambda *= 4.0;
        }
        if !improved {
            break;
        }
    }
    let model = unpack(&theta, nb, nf, data.t_m);
    model.validate()?;
    Ok(model)
}

/// Order sweep over [`ORDER_CANDIDATES`]², scored by the validation fit.
/// Ties keep the lower total order.
pub fn select_orders(train: &Dataset, valid: &Dataset) -> Result<(AffineModel, f64), SysIdError> {
    let mut best: Option<(AffineModel, f64)> = None;
    let mut last_err = SysIdError::RankDeficient;
    for nf in ORDER_CANDIDATES {
        for nb in ORDER_CANDIDATES {
            match identify(train, nb, nf) {
                Ok(m) => {
                    let fit = validation_fit(&m, valid);
                    if best.as_ref().map_or(true, |(bm, bf)| fit > bf + 1e-9 || (fit > bf - 1e-9 && m.order() < bm.order())) {
                        best = Some((m, fit));
                    }
                }
                Err(e) => last_err = e,
            }
        }
    }
    let (m, fit) = best.ok_or(last_err)?;
    if fit < MIN_VALIDATION_FIT {
        return Err(SysIdError::PoorFit { fit, min: MIN_VALIDATION_FIT });
    }
    Ok((m, fit))
}

/// Simulation fit of `model` on held-out data.
pub fn validation_fit(model: &AffineModel, data: &Dataset) -> f64 {
    let y_hat = model.simulate(&data.u, &data.y);
    fit_metric(&data.y, &y_hat)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CanonicalSS {
    pub a: DMatrix<f64>,
    pub b: DVector<f64>,
    pub c: DMatrix<f64>,
    pub gamma: f64,
    pub nf: usize,
    pub nb: usize,
}

/// Canonical realization with `C = e_1'`.
pub fn realize(model: &AffineModel) -> CanonicalSS {
    let (nf, nb) = (model.nf(), model.nb());
    let n = nf + nb - 1;
    let mut a = DMatrix::zeros(n, n);
    for j in 0..nf {
        a[(0, j)] = -model.f[j];
    }
    for j in 1..nb {
        a[(0, nf + j - 1)] = model.b[j];
    }
    for i in 1..nf {
        a[(i, i - 1)] = 1.0;
    }
    // u-lag shift register: row nf holds u(k), rows below shift it
    for i in 1..nb.saturating_sub(1) {
        a[(nf + i, nf + i - 1)] = 1.0;
    }
    let mut b = DVector::zeros(n);
    b[0] = model.b[0];
    if nb >= 2 {
        b[nf] = 1.0;
    }
    let mut c = DMatrix::zeros(1, n);
    c[(0, 0)] = 1.0;
    CanonicalSS { a, b, c, gamma: model.gamma, nf, nb }
}

impl CanonicalSS {
    pub fn n(&self) -> usize {
        self.a.nrows()
    }

    /// `C (I - A)^-1 B`.
    pub fn dc_gain(&self) -> f64 {
        let n = self.n();
        let m = DMatrix::identity(n, n) - &self.a;
        let x = m.lu().solve(&self.b).expect("I - A is invertible for a stable model");
        (&self.c * x)[(0, 0)]
    }

    /// Steady state `(I - A)^-1 B u`.
    pub fn steady_state(&self, u: f64) -> DVector<f64> {
        let n = self.n();
        let m = DMatrix::identity(n, n) - &self.a;
        m.lu().solve(&(&self.b * u)).expect("I - A is invertible for a stable model")
    }

    /// Reads `(b, f)` back from the first rows of `A` and `B`.
    pub fn coefficients(&self) -> (Vec<f64>, Vec<f64>) {
        let f: Vec<f64> = (0..self.nf).map(|j| -self.a[(0, j)]).collect();
        let mut b = vec![self.b[0]];
        for j in 1..self.nb {
            b.push(self.a[(0, self.nf + j - 1)]);
        }
        (b, f)
    }

    /// Markov parameters `C A^(k-1) B`, `k = 1..=lags`.
    pub fn impulse_response(&self, lags: usize) -> Vec<f64> {
        let mut x = self.b.clone();
        let mut out = Vec::with_capacity(lags);
        for _ in 0..lags {
            out.push((&self.c * &x)[(0, 0)]);
            x = &self.a * x;
        }
        out
    }
}
