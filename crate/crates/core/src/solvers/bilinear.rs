//! Alternating minimization for problems bilinear in a share vector `α`
//! (on the unit simplex) and a decision vector.
//!
//! With `α` fixed the decision problem is a QP; with the decision fixed the
//! `α` problem is a QP on the simplex. The combined objective is the
//! decision cost plus `weight * |α - α*|²`, and every accepted step must
//! decrease it.

use nalgebra::DVector;

/// Sub-problem oracle supplied by the caller.
pub trait BilinearProblem {
    /// Optimal decision and its cost for fixed `α`; `None` if infeasible.
    fn solve_decision(&self, alpha: &DVector<f64>) -> Option<(DVector<f64>, f64)>;
    /// Minimizer over the simplex of `cost(α, decision) + weight |α - α*|²`
    /// for a fixed decision; `None` if the sub-problem has no solution.
    fn solve_alpha(&self, decision: &DVector<f64>, alpha_star: &DVector<f64>, weight: f64) -> Option<DVector<f64>>;
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub enum BilinearStatus {
    Converged,
    /// No sub-problem step improved the objective.
    Stalled,
    MaxIter,
    /// The decision problem at the starting `α` is infeasible.
    Infeasible,
}

#[derive(Debug, Clone, Copy)]
pub struct BilinearOptions {
    pub weight: f64,
    pub max_alternations: usize,
    pub tolerance: f64,
    pub max_halvings: usize,
}

impl Default for BilinearOptions {
    fn default() -> Self {
        Self { weight: 1.0, max_alternations: 20, tolerance: 1e-6, max_halvings: 12 }
    }
}

#[derive(Debug, Clone)]
pub struct BilinearResult {
    pub alpha: DVector<f64>,
    pub decision: Option<DVector<f64>>,
    pub objective: f64,
    /// Objective after the start and after each accepted alternation.
    pub trace: Vec<f64>,
    pub alternations: usize,
    pub status: BilinearStatus,
}

/// Euclidean projection onto `{a : a >= 0, sum a = 1}`.
pub fn project_simplex(v: &DVector<f64>) -> DVector<f64> {
    let n = v.len();
    if n == 0 {
        return v.clone();
    }
    let mut s: Vec<f64> = v.iter().copied().collect();
    s.sort_by(|a, b| b.total_cmp(a));
    let mut cum = 0.0;
    let mut theta = 0.0;
    for (k, &sk) in s.iter().enumerate() {
        cum += sk;
        let t = (cum - 1.0) / (k + 1) as f64;
        if sk - t > 0.0 {
            theta = t;
        }
    }
    let mut out = v.map(|x| (x - theta).max(0.0));
    // remove rounding drift so the sum is 1 to machine precision
    let total: f64 = out.sum();
    if total > 0.0 {
        let imax = out.imax();
        out[imax] += 1.0 - total;
    }
    out
}

fn penalty(alpha: &DVector<f64>, alpha_star: &DVector<f64>, weight: f64) -> f64 {
    weight * (alpha - alpha_star).norm_squared()
}

pub fn solve_bilinear_alternating<P: BilinearProblem + ?Sized>(
    problem: &P,
    alpha_start: &DVector<f64>,
    alpha_star: &DVector<f64>,
    options: BilinearOptions,
) -> BilinearResult {
    let mut alpha = alpha_start.clone();
    let Some((mut decision, cost)) = problem.solve_decision(&alpha) else {
        return BilinearResult {
            alpha,
            decision: None,
            objective: f64::INFINITY,
            trace: Vec::new(),
            alternations: 0,
            status: BilinearStatus::Infeasible,
        };
    };
    let mut obj = cost + penalty(&alpha, alpha_star, options.weight);
    let mut trace = vec![obj];
    let mut status = BilinearStatus::MaxIter;
    let mut alternations = 0;
    while alternations < options.max_alternations {
        alternations += 1;
        let Some(target) = problem.solve_alpha(&decision, alpha_star, options.weight) else {
            status = BilinearStatus::Stalled;
            break;
        };
        let target = project_simplex(&target);
        let dir = &target - &alpha;
        if dir.amax() <= options.tolerance {
            status = BilinearStatus::Converged;
            break;
        }
        let mut accepted = None;
        let mut t = 1.0;
        for _ in 0..=options.max_halvings {
            let cand = project_simplex(&(&alpha + &dir * t));
            if let Some((d, c)) = problem.solve_decision(&cand) {
                let o = c + penalty(&cand, alpha_star, options.weight);
                if o < obj {
                    accepted = Some((cand, d, o));
                    break;
                }
            }
            t *= 0.5;
        }
        let Some((cand, d, o)) = accepted else {
            status = BilinearStatus::Stalled;
            break;
        };
        let improvement = obj - o;
        let moved = (&cand - &alpha).amax();
        alpha = cand;
        decision = d;
        obj = o;
        trace.push(obj);
        if improvement <= options.tolerance * (1.0 + obj.abs()) || moved <= options.tolerance {
            status = BilinearStatus::Converged;
            break;
        }
    }
    BilinearResult { alpha, decision: Some(decision), objective: obj, trace, alternations, status }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn projection_lands_on_simplex() {
        let p = project_simplex(&DVector::from_vec(vec![0.9, 0.8, -0.3, 2.0]));
        assert!((p.sum() - 1.0).abs() < 1e-12);
        assert!(p.iter().all(|&v| v >= 0.0));
        assert_eq!(p, DVector::from_vec(vec![0.0, 0.0, 0.0, 1.0]));
        let q = project_simplex(&DVector::from_vec(vec![0.5, 0.5]));
        assert_eq!(q, DVector::from_vec(vec![0.5, 0.5]));
    }

    /// Decision problem: min_d (d - 1)² + (c'α) d², α step exact by gradient projection.
    struct Toy {
        c: DVector<f64>,
    }

    impl BilinearProblem for Toy {
        fn solve_decision(&self, alpha: &DVector<f64>) -> Option<(DVector<f64>, f64)> {
            let k = self.c.dot(alpha);
            let d = 1.0 / (1.0 + k);
            Some((DVector::from_element(1, d), (d - 1.0).powi(2) + k * d * d))
        }
        fn solve_alpha(&self, decision: &DVector<f64>, star: &DVector<f64>, w: f64) -> Option<DVector<f64>> {
            let d2 = decision[0] * decision[0];
            let mut a = star.clone();
            for _ in 0..200 {
                let g = &self.c * d2 + (&a - star) * (2.0 * w);
                a = project_simplex(&(&a - g * 0.1));
            }
            Some(a)
        }
    }

    #[test]
    fn starting_at_target_converges_in_one_alternation() {
        let toy = Toy { c: DVector::from_vec(vec![0.0, 0.0]) };
        let a = DVector::from_vec(vec![0.3, 0.7]);
        let r = solve_bilinear_alternating(&toy, &a, &a, BilinearOptions::default());
        assert_eq!(r.status, BilinearStatus::Converged);
        assert_eq!(r.alternations, 1);
    }

    #[test]
    fn trace_is_monotone() {
        let toy = Toy { c: DVector::from_vec(vec![1.0, 4.0, 2.0]) };
        let start = DVector::from_vec(vec![0.0, 1.0, 0.0]);
        let star = DVector::from_vec(vec![0.2, 0.5, 0.3]);
        let r = solve_bilinear_alternating(&toy, &start, &star, BilinearOptions::default());
        assert!(r.trace.len() >= 2);
        assert!(r.trace.windows(2).all(|w| w[1] <= w[0]));
        assert!((r.alpha.sum() - 1.0).abs() < 1e-12);
    }
}
