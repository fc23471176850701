//! Acceptance suite: one line per criterion on stdout, then a single verdict.

mod common;

use std::collections::HashMap;
use std::io::Write;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::PathBuf;
use std::sync::Arc;
use std::time::Instant;

use common::*;
use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use steamgen::boiler::*;
use steamgen::ensemble::*;
use steamgen::hybrid::*;
use steamgen::polytope::{compute_rpi, rpi_violation, VertexSet};
use steamgen::simctl::{bootstrap, load_config, run};
use steamgen::solvers::{solve_lp, MipOptions, MipStatus, Problem};
use steamgen::sysid::*;
use steamgen::uc::*;

type Verdict = Result<String, String>;

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

// 1
fn physics_fixed_points() -> Verdict {
    let pr = BoilerParams::illustrative();
    let mut worst_rest: f64 = 0.0;
    let mut worst_balance: f64 = 0.0;
    for &p in &[2.0, 5.0, 10.0, 15.0] {
        for &v_w in &[0.2, 0.5, 0.8] {
            let x = BoilerState { p, v_w };
            let zero = BoilerInputs { q_f: 0.0, q_g: 0.0, q_s: 0.0, h_f: 420.0 };
            let (dp, dv) = derivatives(&x, &zero, &pr).map_err(|e| e.to_string())?;
            let next = step(&x, &zero, &pr, 5.0).map_err(|e| e.to_string())?;
            worst_rest = worst_rest.max(dp.abs()).max(dv.abs()).max((next.p - p).abs()).max((next.v_w - v_w).abs());
            for &(q_s, q_f) in &[(0.3, 0.3), (1.0, 0.8), (1.2, 1.5)] {
                let q_g = balancing_gas_flow(&x, q_f, q_s, 420.0, &pr).map_err(|e| e.to_string())?;
                let (dp, _) = derivatives(&x, &BoilerInputs { q_f, q_g, q_s, h_f: 420.0 }, &pr).map_err(|e| e.to_string())?;
                worst_balance = worst_balance.max(dp.abs());
            }
        }
    }
    ensure(worst_rest <= 1e-12, || format!("zero-input drift {worst_rest:e}"))?;
    ensure(worst_balance < 1e-10, || format!("balanced |dp/dt| {worst_balance:e}"))?;
    Ok(format!("zero-input drift {worst_rest:e}, balanced |dp/dt| {worst_balance:e} bar/s"))
}

// 2
fn integrator_order() -> Verdict {
    let mut pr = BoilerParams::illustrative();
    pr.table = Arc::new(pr.table.chord());
    let x0 = BoilerState { p: 5.0, v_w: 0.5 };
    let u = BoilerInputs { q_f: 1.0, q_g: 0.1, q_s: 1.0, h_f: 420.0 };
    let run = |tau: f64| -> Result<BoilerState, String> {
        let mut x = x0;
        for _ in 0..(100.0 / tau).round() as usize {
            x = step(&x, &u, &pr, tau).map_err(|e| e.to_string())?;
        }
        Ok(x)
    };
    let tau = 10.0;
    let reference = run(tau / 64.0)?;
    let e1 = (run(tau)?.p - reference.p).abs();
    let e2 = (run(tau / 2.0)?.p - reference.p).abs();
    let ratio = e1 / e2;
    ensure((12.0..=20.0).contains(&ratio), || format!("error ratio {ratio}"))?;
    Ok(format!("error ratio {ratio:.3}"))
}

fn poly(poles: &[f64]) -> Vec<f64> {
    let mut c = vec![1.0];
    for &p in poles {
        let mut next = vec![0.0; c.len() + 1];
        for (j, &v) in c.iter().enumerate() {
            next[j] += v;
            next[j + 1] -= p * v;
        }
        c = next;
    }
    c[1..].to_vec()
}

fn random_model(rng: &mut ChaCha8Rng, nf: usize, nb: usize) -> AffineModel {
    let poles: Vec<f64> = (0..nf).map(|_| rng.gen_range(-0.9..0.9)).collect();
    AffineModel {
        b: (0..nb).map(|_| rng.gen_range(-1.0..1.0)).collect(),
        f: poly(&poles),
        gamma: rng.gen_range(-0.5..0.5),
        t_m: 30.0,
    }
}

/// Steady output under unit input, by iterating the state equation.
fn simulated_gain(a: &DMatrix<f64>, b: &DVector<f64>, c: &DMatrix<f64>) -> f64 {
    let mut x = DVector::zeros(a.nrows());
    for _ in 0..5000 {
        x = a * &x + b;
    }
    (c * x)[(0, 0)]
}

// 3
fn identification_oracle() -> Verdict {
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    let truth = AffineModel { b: vec![0.05, 0.02], f: vec![-1.1, 0.3], gamma: 0.004, t_m: 30.0 };
    let mut u = Vec::new();
    let mut level = 0.0;
    for k in 0..300 {
        if k % 12 == 0 {
            level = rng.gen_range(0.2..1.2);
        }
        u.push(level);
    }
    let y = truth.simulate(&u, &[truth.gamma + 0.01, truth.gamma + 0.012]);
    let m = identify(&Dataset { u, y, t_m: 30.0 }, 2, 2).map_err(|e| e.to_string())?;
    let coef_err = m
        .b
        .iter()
        .zip(&truth.b)
        .chain(m.f.iter().zip(&truth.f))
        .map(|(a, b)| (a - b).abs())
        .fold((m.gamma - truth.gamma).abs(), f64::max);
    ensure(coef_err < 1e-6, || format!("coefficient error {coef_err:e}"))?;
    let mut worst: f64 = 0.0;
    for _ in 0..100 {
        let (nf, nb) = (rng.gen_range(1..=3), rng.gen_range(1..=3));
        let m = random_model(&mut rng, nf, nb);
        let ss = realize(&m);
        let direct = m.b.iter().sum::<f64>() / (1.0 + m.f.iter().sum::<f64>());
        worst = worst.max((ss.dc_gain() - direct).abs() / (1.0 + direct.abs()));
    }
    ensure(worst <= 1e-10, || format!("realized gain error {worst:e}"))?;
    Ok(format!("coefficient error {coef_err:e}, realized gain error {worst:e} over 100 models"))
}

// 4
fn dha_mld_equivalence() -> Verdict {
    let generators = [
        HybridGenModel { chi_off_st: 2, chi_st_on: 1, chi_on_off: 3, g: 0.05, gamma_on: 0.002, gamma_st: 0.01, q_s_min: 0.3, q_s_max: 1.2 },
        HybridGenModel { chi_off_st: 0, chi_st_on: 2, chi_on_off: 1, g: 0.06, gamma_on: 0.0, gamma_st: 0.015, q_s_min: 0.2, q_s_max: 1.0 },
        HybridGenModel { chi_off_st: 4, chi_st_on: 0, chi_on_off: 0, g: 0.045, gamma_on: -0.001, gamma_st: 0.008, q_s_min: 0.0, q_s_max: 0.9 },
    ];
    let mut rng = ChaCha8Rng::seed_from_u64(404);
    let (mut mismatches, mut steps) = (0usize, 0usize);
    for m in &generators {
        let mld = to_mld(m).map_err(|e| e.to_string())?;
        for _ in 0..500 {
            let mode = [Mode::Off, Mode::St, Mode::On][rng.gen_range(0..3)];
            let start = HybridState { mode, chi: rng.gen_range(0..=m.cap()) };
            let (mut a, mut b) = (start, start);
            for _ in 0..40 {
                let beta = rng.gen_bool(0.4);
                let q_s = if a.mode == Mode::On { rng.gen_range(m.q_s_min..=m.q_s_max) } else { 0.0 };
                let (na, qa) = dha_step(m, a, beta, q_s).map_err(|e| e.to_string())?;
                match mld.step(b, beta, q_s).map_err(|e| e.to_string())? {
                    Some((nb, qb)) => {
                        if na != nb || qa != qb {
                            mismatches += 1;
                        }
                        b = nb;
                    }
                    None => {
                        mismatches += 1;
                        b = na;
                    }
                }
                a = na;
                steps += 1;
            }
        }
    }
    ensure(mismatches == 0, || format!("{mismatches} mismatches in {steps} steps"))?;
    Ok(format!("0 mismatches in {steps} steps over {} generators", generators.len()))
}

/// Cheapest dispatch of one period for a fixed set of ON units.
fn dispatch_cost(models: &[HybridGenModel], on: &[bool], demand: f64, costs: &UcCosts, t_h: f64) -> f64 {
    let n = models.len() + 2;
    let mut p = Problem::new(n);
    let mut row = vec![0.0; n];
    for (i, m) in models.iter().enumerate() {
        p.lower[i] = if on[i] { m.q_s_min } else { 0.0 };
        p.upper[i] = if on[i] { m.q_s_max } else { 0.0 };
        p.cost[i] = costs.c_gas * t_h * m.g;
        row[i] = 1.0;
    }
    let k = models.len();
    row[k] = -1.0;
    row[k + 1] = 1.0;
    p.push_eq(&row, demand);
    for j in [k, k + 1] {
        p.lower[j] = 0.0;
        p.cost[j] = costs.c_slack;
    }
    solve_lp(&p).unwrap().objective
}

/// Exhaustive search over every command sequence with an LP dispatch per
/// assignment.
fn enumerate(models: &[HybridGenModel], init: &[HybridState], demand: &DemandProfile, costs: &UcCosts) -> f64 {
    let (n_g, n_h) = (models.len(), demand.horizon());
    let mut cache: HashMap<(usize, Vec<bool>), f64> = HashMap::new();
    let mut best = f64::INFINITY;
    for code in 0u64..(1 << (n_g * n_h)) {
        let mut states = init.to_vec();
        let mut total = 0.0;
        for h in 0..n_h {
            let on: Vec<bool> = states.iter().map(|s| s.mode == Mode::On).collect();
            total += *cache
                .entry((h, on.clone()))
                .or_insert_with(|| dispatch_cost(models, &on, demand.forecast[h], costs, demand.t_h));
            for i in 0..n_g {
                let m = &models[i];
                let s = m.normalize(states[i]);
                total += costs.c_gas * demand.t_h * match s.mode {
                    Mode::On => m.gamma_on,
                    Mode::St => m.gamma_st,
                    Mode::Off => 0.0,
                };
                let beta = code >> (i * n_h + h) & 1 == 1;
                if s.mode == Mode::Off && m.guard(s, beta) {
                    total += costs.c_start;
                }
                let q = if s.mode == Mode::On { m.q_s_min } else { 0.0 };
                states[i] = dha_step(m, s, beta, q).unwrap().0;
            }
        }
        best = best.min(total);
    }
    best
}

// 5
fn uc_exactness() -> Verdict {
    let mut rng = ChaCha8Rng::seed_from_u64(77);
    let unit = |rng: &mut ChaCha8Rng| {
        let q_s_min = rng.gen_range(0.1..0.4);
        HybridGenModel {
            chi_off_st: rng.gen_range(0..=2),
            chi_st_on: rng.gen_range(0..=1),
            chi_on_off: rng.gen_range(0..=2),
            g: rng.gen_range(0.04..0.07),
            gamma_on: rng.gen_range(-0.002..0.005),
            gamma_st: rng.gen_range(0.005..0.02),
            q_s_min,
            q_s_max: q_s_min + rng.gen_range(0.5..1.0),
        }
    };
    let state = |rng: &mut ChaCha8Rng| HybridState {
        mode: [Mode::Off, Mode::St, Mode::On][rng.gen_range(0..3)],
        chi: rng.gen_range(0..3),
    };
    let exact = MipOptions { gap_tolerance: 1e-13, node_cap: 1_000_000 };
    let mut worst: f64 = 0.0;
    for draw in 0..20 {
        let models = vec![unit(&mut rng), unit(&mut rng)];
        let mlds: Vec<_> = models.iter().map(|m| to_mld(m).unwrap()).collect();
        let init = vec![state(&mut rng), state(&mut rng)];
        let demand = DemandProfile { forecast: (0..6).map(|_| rng.gen_range(0.0..2.2)).collect(), t_h: 3600.0 };
        let costs = UcCosts { c_gas: 0.4, c_start: rng.gen_range(0.0..80.0), c_slack: 1.0e3, allow_slack: true };
        let sol = solve_receding(&models, &mlds, &demand, &init, &costs, exact).map_err(|e| e.to_string())?;
        ensure(sol.diagnostics.status == MipStatus::Optimal, || format!("draw {draw}: {:?}", sol.diagnostics.status))?;
        let oracle = enumerate(&models, &init, &demand, &costs);
        let err = (sol.objective - oracle).abs();
        ensure(err <= 1e-8, || format!("draw {draw}: B&B {} vs enumeration {oracle}", sol.objective))?;
        worst = worst.max(err);
    }
    Ok(format!("max |B&B - enumeration| = {worst:e} over 20 draws"))
}

fn scenario_path() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../scenarios/three_boilers.json")
}

// 6
fn gain_consistency() -> Verdict {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let mut worst: f64 = 0.0;
    let mut check = |r: &ReferenceModel, g: f64| {
        let e = (r.static_gain() - g).abs().max((simulated_gain(&r.a_hat, &r.b_hat, &r.c_hat) - g).abs());
        worst = worst.max(e / (1.0 + g.abs()));
    };
    for _ in 0..100 {
        let (nf, nb) = (rng.gen_range(1..=3), rng.gen_range(1..=3));
        let m = random_model(&mut rng, nf, nb);
        let poles: Vec<f64> = (0..rng.gen_range(1..=nf)).map(|_| rng.gen_range(-0.9..0.9)).collect();
        let nb_hat = rng.gen_range(1..=nb);
        let shared = SharedStructure { f_hat: poly(&poles), b_tail: (1..nb_hat).map(|_| rng.gen_range(-0.5..0.5)).collect() };
        let r = build_reference_model(&m, &shared).map_err(|e| e.to_string())?;
        check(&r, m.gain());
    }
    let cfg = load_config(&scenario_path()).map_err(|e| e.to_string())?;
    let boot = bootstrap(&cfg, None).map_err(|e| e.to_string())?;
    for (r, m) in boot.refs.iter().zip(&boot.models) {
        check(r, m.gain());
    }
    let built = 100 + boot.refs.len();
    ensure(worst <= 1e-10, || format!("reference gain error {worst:e}"))?;

    let b = three_units();
    let mut worst_ens: f64 = 0.0;
    let mut draws = 0;
    while draws < 100 {
        let on: Vec<bool> = (0..3).map(|_| rng.gen_bool(0.7)).collect();
        if !on.iter().any(|&o| o) {
            continue;
        }
        let raw: Vec<f64> = on.iter().map(|&o| if o { rng.gen_range(0.0..1.0) } else { 0.0 }).collect();
        let s: f64 = raw.iter().sum();
        let alpha: Vec<f64> = raw.iter().map(|v| v / s).collect();
        let ens = assemble_ensemble(&b.refs, &alpha, &on).map_err(|e| e.to_string())?;
        let expect: f64 = alpha.iter().zip(&b.models).map(|(a, m)| a * m.gain()).sum();
        let sim = simulated_gain(&ens.a_hat, &ens.b_bar, &ens.c_hat);
        worst_ens = worst_ens.max((ens.g_bar - expect).abs()).max((sim - expect).abs());
        draws += 1;
    }
    ensure(worst_ens <= 1e-9, || format!("ensemble gain error {worst_ens:e}"))?;
    Ok(format!("reference gain error {worst:e} over {built} models, ensemble gain error {worst_ens:e} over 100 share vectors"))
}

// 7
fn rpi_validity() -> Verdict {
    let phi = DMatrix::from_element(1, 1, 0.5);
    let w = VertexSet::new(vec![DVector::from_element(1, -1.0), DVector::from_element(1, 1.0)]);
    let z = compute_rpi(&phi, &w, 0.05).map_err(|e| e.to_string())?;
    let (lo, hi) = z.as_interval().map_err(|e| e.to_string())?;
    ensure((-2.05..=-2.0).contains(&lo) && (2.0..=2.05).contains(&hi), || format!("scalar set [{lo}, {hi}]"))?;

    let b = three_units();
    let p = problem(&b, &[0.5, 0.3, 0.2]);
    let dw = p.w_bar.minkowski_sum(&p.w_bar.neg()).linear_image(&p.hh);
    let d = p.z.dim();
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    let (lo_box, hi_box): (Vec<f64>, Vec<f64>) = (0..d)
        .map(|i| {
            let e = DVector::from_fn(d, |j, _| if j == i { 1.0 } else { 0.0 });
            (-p.z.support(&-&e).unwrap(), p.z.support(&e).unwrap())
        })
        .unzip();
    let (mut checked, mut violations) = (0, 0);
    while checked < 10_000 {
        let x = if checked % 2 == 0 {
            let dir = DVector::from_fn(d, |_, _| rng.gen_range(-1.0..1.0));
            p.z.support_point(&dir).map_err(|e| e.to_string())?.1
        } else {
            let x = DVector::from_fn(d, |i, _| rng.gen_range(lo_box[i]..=hi_box[i]));
            if !p.z.contains(&x) {
                continue;
            }
            x
        };
        let w = &dw.points[rng.gen_range(0..dw.points.len())];
        if p.z.violation(&(&p.phi * &x + w)) > 1e-9 * (1.0 + p.z.k.amax()) {
            violations += 1;
        }
        checked += 1;
    }
    ensure(violations == 0, || format!("{violations} of {checked} samples left the set"))?;
    let lp = rpi_violation(&p.z, &p.phi, &dw).map_err(|e| e.to_string())?;
    Ok(format!("scalar set [{lo:.4}, {hi:.4}], 0 of {checked} samples left the {d}-dimensional set, LP residual {lp:e}"))
}

// 8
fn robust_constraints() -> Verdict {
    let (violations, infeasible, worst, _, _) = robust_run(10_000, 5);
    ensure(infeasible == 0, || format!("{infeasible} infeasible steps"))?;
    ensure(violations == 0, || format!("{violations} violating steps, worst excess {worst:e}"))?;
    Ok(format!("10000 steps, 0 violations, worst excess {worst:e}"))
}

// 9
fn offset_free_tracking() -> Verdict {
    let b = three_units();
    let horizon = MpcSettings::default().horizon;
    let (_, trace, r) = run_tracking(&b, &[0.5, 0.3, 0.2], 0.02, 5 * horizon + 1);
    let (eps, r_hat) = trace[5 * horizon];
    ensure(eps.abs() < 1e-6, || format!("|ε| = {:e} at step {}", eps.abs(), 5 * horizon))?;
    ensure((r_hat - r).abs() < 1e-6, || format!("|r̂ - r| = {:e}", (r_hat - r).abs()))?;
    Ok(format!("|ε| = {:e}, |r̂ - r| = {:e} at step {}", eps.abs(), (r_hat - r).abs(), 5 * horizon))
}

// 10
fn recursive_feasibility() -> Verdict {
    let (_, infeasible, _, candidate, _) = robust_run(1_000, 11);
    ensure(infeasible == 0, || format!("{infeasible} infeasible steps"))?;
    ensure(candidate <= 1e-7, || format!("shifted candidate violates by {candidate:e}"))?;
    Ok(format!("1000 steps, worst shifted-candidate violation {candidate:e}"))
}

// 11
fn transition_fallback() -> Verdict {
    let b = two_units();
    let (start, target) = ([0.8, 0.2], [0.3, 0.7]);
    let mut plant = LinearEnsemblePlant::at_steady_state(&b.refs, &[true; 2], &start, 1.5).map_err(|e| e.to_string())?;
    let r = plant.output();
    let zero = DVector::zeros(b.refs[0].n());
    let mut ctl = MediumLevelController::new(problem(&b, &start), TransitionOptions::default());
    for _ in 0..3 {
        let st = ctl.step(&plant.measurement(), r).map_err(|e| e.to_string())?;
        plant.step(st.outcome.u, &st.outcome.alpha, &zero);
    }
    ctl.retarget(problem(&b, &target));
    let mut dist = f64::INFINITY;
    let mut fallback = 0;
    for step in 0..30 {
        let meas = plant.measurement();
        let st = ctl.step(&meas, r).map_err(|e| e.to_string())?;
        let o = &st.outcome;
        let v = applied_violation(&b, &o.alpha, &meas.alpha_prev, o.u, meas.u_prev);
        ensure(v <= 1e-9, || format!("constraint excess {v:e} at step {step}"))?;
        let d = o.distance_to(&target);
        ensure(d < dist, || format!("distance {d} after {dist} at step {step}"))?;
        dist = d;
        plant.step(o.u, &o.alpha, &zero);
        match o.kind {
            StepKind::Fallback => fallback += 1,
            StepKind::Regular => {
                ensure(fallback > 0, || "no fallback was needed".into())?;
                ensure(dist == 0.0, || format!("final distance {dist}"))?;
                return Ok(format!("{fallback} fallback steps with strictly decreasing |α - α*|, then the target tube MPC"));
            }
        }
    }
    Err(format!("target not reached within 30 steps, distance {dist}"))
}

// 12
fn end_to_end_determinism() -> Verdict {
    let cfg = load_config(&scenario_path()).map_err(|e| e.to_string())?;
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let mut times = Vec::new();
    let mut flags = 0.0;
    for name in ["a", "b"] {
        let t = Instant::now();
        let log = run(&cfg, &dir.path().join(name), None).map_err(|e| e.to_string())?;
        times.push(t.elapsed().as_secs_f64());
        flags = ["viol_u_bar", "viol_unit", "viol_rate", "viol_y"]
            .iter()
            .map(|c| log.ml.series(c).unwrap().iter().sum::<f64>())
            .sum();
    }
    let mut bytes = 0;
    for f in ["plant.csv", "ml.csv", "hl.csv"] {
        let a = std::fs::read(dir.path().join("a").join(f)).map_err(|e| e.to_string())?;
        let b = std::fs::read(dir.path().join("b").join(f)).map_err(|e| e.to_string())?;
        ensure(a == b, || format!("{f} differs between runs"))?;
        bytes += a.len();
    }
    let worst = times.iter().cloned().fold(0.0, f64::max);
    ensure(worst < 600.0, || format!("scenario took {worst:.1} s"))?;
    Ok(format!("{bytes} identical CSV bytes, {worst:.1} s per run, {flags} constraint flags"))
}

#[test]
fn acceptance() {
    let criteria: [(&str, Option<f64>, fn() -> Verdict); 12] = [
        ("physics fixed points", Some(1.0), physics_fixed_points),
        ("integrator order", Some(10.0), integrator_order),
        ("identification oracle", Some(30.0), identification_oracle),
        ("DHA/MLD equivalence", Some(60.0), dha_mld_equivalence),
        ("UC exactness", Some(300.0), uc_exactness),
        ("gain consistency", None, gain_consistency),
        ("RPI validity", Some(60.0), rpi_validity),
        ("robust constraint satisfaction", Some(300.0), robust_constraints),
        ("offset-free tracking", None, offset_free_tracking),
        ("recursive feasibility", None, recursive_feasibility),
        ("transition fallback", None, transition_fallback),
        ("end-to-end determinism", Some(1200.0), end_to_end_determinism),
    ];
    let mut failed = Vec::new();
    let mut out = std::io::stdout();
    for (i, (name, budget, f)) in criteria.iter().enumerate() {
        let t = Instant::now();
        let verdict = catch_unwind(AssertUnwindSafe(f)).unwrap_or_else(|e| {
            let msg = e.downcast_ref::<String>().cloned().or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string()));
            Err(format!("panic: {}", msg.unwrap_or_default()))
        });
        let secs = t.elapsed().as_secs_f64();
        let verdict = match (verdict, budget) {
            (Ok(_), Some(b)) if secs > *b => Err(format!("runtime {secs:.1} s exceeds {b} s")),
            (v, _) => v,
        };
        let (tag, detail) = match &verdict {
            Ok(d) => ("PASS", d.clone()),
            Err(d) => ("FAIL", d.clone()),
        };
        writeln!(out, "[{tag}] {:>2}. {name}: {detail} ({secs:.2} s)", i + 1).unwrap();
        out.flush().unwrap();
        if verdict.is_err() {
            failed.push(i + 1);
        }
    }
    assert!(failed.is_empty(), "failed criteria: {failed:?}");
}
