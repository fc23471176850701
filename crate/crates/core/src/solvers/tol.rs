//! Numerical tolerances shared by every solver in this crate.

/// Tolerance record. A single instance ([`TOL`]) is used throughout; the
/// fields are public so tests can reason about the exact thresholds.
#[derive(Debug, Clone, Copy)]
pub struct Tolerances {
    /// Primal feasibility (absolute, on constraint residuals).
    pub feasibility: f64,
    /// Reduced-cost threshold for simplex optimality.
    pub optimality: f64,
    /// Smallest pivot magnitude accepted by the simplex ratio test.
    pub pivot: f64,
    /// Distance from {0, 1} below which a relaxed binary counts as integral.
    pub integrality: f64,
    /// Relative threshold for linear dependence in active-set updates.
    pub dependence: f64,
    /// Target KKT residual for QP solutions.
    pub kkt: f64,
}

pub const TOL: Tolerances = Tolerances {
    feasibility: 1e-9,
    optimality: 1e-10,
    pivot: 1e-11,
    integrality: 1e-7,
    dependence: 1e-12,
    kkt: 1e-8,
};

/// Simplex pivots allowed per phase before giving up with `MaxIter`.
pub const SIMPLEX_MAX_PIVOTS: usize = 50_000;

/// Consecutive degenerate pivots after which the simplex switches from
/// Dantzig pricing to Bland's rule.
pub const DEGENERATE_SWITCH: usize = 64;

/// Active-set iterations allowed in the QP solver.
pub const QP_MAX_ITER: usize = 5_000;
