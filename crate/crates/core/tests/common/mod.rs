#![allow(dead_code)]

use nalgebra::DVector;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use steamgen::ensemble::*;
use steamgen::polytope::VertexSet;
use steamgen::sysid::AffineModel;

/// Second-order unit with poles `p1, p2`, static gain `g` and a 70/30 split
/// of the numerator.
pub fn unit(p1: f64, p2: f64, g: f64) -> AffineModel {
    let f = vec![-(p1 + p2), p1 * p2];
    let s = g * (1.0 + f[0] + f[1]);
    AffineModel { b: vec![0.7 * s, 0.3 * s], f, gamma: 0.002, t_m: 30.0 }
}

pub struct Bench {
    pub models: Vec<AffineModel>,
    pub refs: Vec<ReferenceModel>,
    pub ws: Vec<VertexSet>,
    pub limits: EnsembleLimits,
}

pub fn bench(models: Vec<AffineModel>, u_max: f64, y_factor: f64, u_bar: (f64, f64), du_max: f64, seed: u64) -> Bench {
    let shared = SharedStructure::average(&models, 2, 2).unwrap();
    let refs: Vec<_> = models.iter().map(|m| build_reference_model(m, &shared).unwrap()).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let sampling = DisturbanceSampling::new(0.1, u_max, du_max);
    let ws = models.iter().zip(&refs).map(|(m, r)| quantify_disturbance(m, r, &sampling, &mut rng).unwrap()).collect();
    let limits = EnsembleLimits {
        units: models
            .iter()
            .map(|m| UnitLimits { u_min: 0.1, u_max, y_min: 0.0, y_max: m.gain() * u_max * y_factor + m.gamma })
            .collect(),
        u_bar,
        du_max,
    };
    Bench { models, refs, ws, limits }
}

/// Three slightly different units sharing the load.
pub fn three_units() -> Bench {
    let models = vec![unit(0.6, 0.7, 0.06), unit(0.58, 0.72, 0.055), unit(0.62, 0.69, 0.065)];
    bench(models, 1.2, 1.1 / 1.2, (0.0, 3.6), 0.1, 1)
}

/// Two units with a slow rate limit, used for reallocations.
pub fn two_units() -> Bench {
    let models = vec![unit(0.6, 0.7, 0.06), unit(0.58, 0.72, 0.055)];
    bench(models, 1.5, 1.6 / 1.5, (0.0, 3.0), 0.05, 1)
}

/// Largest violation of the unit, total and rate limits by the applied
/// move `(α_prev, ū(k-1)) -> (α, ū(k))`; nonpositive when all hold.
pub fn applied_violation(b: &Bench, alpha: &[f64], alpha_prev: &[f64], u: f64, u_prev: f64) -> f64 {
    let l = &b.limits;
    let mut worst = (l.u_bar.0 - u).max(u - l.u_bar.1);
    for i in 0..alpha.len() {
        let ui = alpha[i] * u;
        worst = worst.max((ui - alpha_prev[i] * u_prev).abs() - l.du_max);
        if alpha[i] > 0.0 {
            let lim = &l.units[i];
            let yi = b.models[i].gain() * ui + b.models[i].gamma;
            worst = worst.max(lim.u_min - ui).max(ui - lim.u_max);
            worst = worst.max(lim.y_min - yi).max(yi - lim.y_max);
        }
    }
    worst
}

pub fn problem(b: &Bench, alpha: &[f64]) -> TubeMPCProblem {
    TubeMPCProblem::build(&b.refs, &b.ws, alpha, &vec![true; alpha.len()], &b.limits, &MpcSettings::default()).unwrap()
}

pub fn run_tracking(b: &Bench, alpha: &[f64], r_offset: f64, steps: usize) -> (TubeMPCProblem, Vec<(f64, f64)>, f64) {
    let p = problem(b, alpha);
    let mut plant = LinearEnsemblePlant::at_steady_state(&b.refs, &vec![true; alpha.len()], alpha, 1.5).unwrap();
    let r = plant.output() + r_offset;
    let zero = DVector::zeros(p.ens.n());
    let mut trace = Vec::new();
    for _ in 0..steps {
        let meas = plant.measurement();
        let sol = p.solve(&meas, r).unwrap();
        trace.push((meas.y - r, sol.r_hat));
        plant.step(sol.u, alpha, &zero);
    }
    (p, trace, r)
}

/// Fixed configuration under disturbances taken from the vertices of W̄,
/// with the target redrawn now and then, sometimes beyond reach.
pub fn robust_run(steps: usize, seed: u64) -> (usize, usize, f64, f64, f64) {
    let b = three_units();
    let alpha = [0.5, 0.3, 0.2];
    let p = problem(&b, &alpha);
    let mut plant = LinearEnsemblePlant::at_steady_state(&b.refs, &[true; 3], &alpha, 1.5).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let y_lo = p.ens.gamma_bar + p.ens.g_bar * p.u_tight.0;
    let y_hi = p.ens.gamma_bar + p.ens.g_bar * p.u_tight.1;
    let mut r = plant.output();
    let (mut violations, mut infeasible) = (0, 0);
    let (mut worst, mut worst_candidate, mut worst_tube) = (f64::NEG_INFINITY, 0.0f64, f64::NEG_INFINITY);
    let mut prev: Option<MpcSolution> = None;
    for k in 0..steps {
        if k % 150 == 0 {
            r = rng.gen_range(y_lo - 0.01..y_hi + 0.01);
        }
        let meas = plant.measurement();
        if let Some(s) = &prev {
            let v = p.shifted_candidate(s);
            worst_candidate = worst_candidate.max(p.candidate_violation(&meas, r, &v).unwrap());
        }
        let Ok(sol) = p.solve(&meas, r) else {
            infeasible += 1;
            break;
        };
        worst_tube = worst_tube.max(p.z.violation(&sol.tube_error));
        let v = applied_violation(&b, &alpha, &meas.alpha_prev, sol.u, meas.u_prev);
        worst = worst.max(v);
        if v > 1e-9 {
            violations += 1;
        }
        let w = p.w_bar.points[rng.gen_range(0..p.w_bar.points.len())].clone();
        plant.step(sol.u, &alpha, &w);
        prev = Some(sol);
    }
    (violations, infeasible, worst, worst_candidate, worst_tube)
}
