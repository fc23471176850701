//! Bootstrap identification and the three-rate closed loop.

use std::collections::{BTreeMap, VecDeque};
use std::fs;
use std::path::{Path, PathBuf};

use nalgebra::DVector;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::config::{ConfigError, ScenarioConfig};
use super::log::{RunLog, Table, Value};
use crate::boiler::BoilerState;
use crate::ensemble::{
    build_reference_model, quantify_disturbance, DisturbanceSampling, EnsembleLimits, MediumLevelController,
    MlMeasurement, MpcSettings, ReferenceModel, SharedStructure, StepKind, TransitionOptions, TubeMPCProblem,
    UnitLimits,
};
use crate::hybrid::{dha_step, to_mld, HybridGenModel, HybridState, MLDModel, Mode};
use crate::local_control::{ClosedLoopBoiler, CompensatorConfig, PIConfig};
use crate::polytope::VertexSet;
use crate::solvers::MipOptions;
use crate::sysid::{excite_and_collect, identify, select_orders, validation_fit, AffineModel, StepDesign};
use crate::uc::{solve_receding, DemandProfile, UCSolution};

/// Tolerance of the logged constraint checks.
const FLAG_TOL: f64 = 1e-9;

#[derive(Debug, thiserror::Error)]
pub enum RunError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("{layer} failure at t = {t} s: {message}")]
    Runtime { layer: String, t: f64, message: String },
    #[error("cannot access {path}: {message}")]
    Io { path: String, message: String },
}

impl RunError {
    pub fn exit_code(&self) -> i32 {
        match self {
            RunError::Config(_) => 2,
            RunError::Runtime { .. } => 3,
            RunError::Io { .. } => 1,
        }
    }

    fn runtime(layer: &str, t: f64, message: impl ToString) -> Self {
        RunError::Runtime { layer: layer.into(), t, message: message.to_string() }
    }

    fn io(path: &Path, e: impl ToString) -> Self {
        RunError::Io { path: path.display().to_string(), message: e.to_string() }
    }
}

/// Machine-readable record written next to the log on failure.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FailureRecord {
    pub kind: String,
    pub exit_code: i32,
    pub layer: Option<String>,
    pub time: Option<f64>,
    pub message: String,
}

impl From<&RunError> for FailureRecord {
    fn from(e: &RunError) -> Self {
        let (kind, layer, time) = match e {
            RunError::Config(_) => ("config", None, None),
            RunError::Runtime { layer, t, .. } => ("runtime", Some(layer.clone()), Some(*t)),
            RunError::Io { .. } => ("io", None, None),
        };
        Self { kind: kind.into(), exit_code: e.exit_code(), layer, time, message: e.to_string() }
    }
}

/// Identified unit models and everything derived from them.
#[derive(Debug, Clone)]
pub struct Bootstrap {
    pub models: Vec<AffineModel>,
    pub fits: Vec<f64>,
    pub refs: Vec<ReferenceModel>,
    pub ws: Vec<VertexSet>,
    pub hybrids: Vec<HybridGenModel>,
    pub mlds: Vec<MLDModel>,
    pub limits: EnsembleLimits,
    /// Units whose model came from the cache.
    pub cached: Vec<bool>,
}

#[derive(Serialize, Deserialize)]
struct CacheEntry {
    key: String,
    model: AffineModel,
    fit: f64,
}

fn stream(seed: u64, id: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(id);
    rng
}

/// Regulated boiler of unit `i` before it is put at a steady state.
pub fn closed_loop(cfg: &ScenarioConfig, i: usize) -> Result<ClosedLoopBoiler, RunError> {
    let b = &cfg.boilers[i];
    let fail = |e: &dyn ToString| RunError::runtime("local", 0.0, format!("{}: {}", b.name, e.to_string()));
    let pi = PIConfig::tune(&b.params, b.pi.p_sp, b.v_w0, b.pi.zeta, b.pi.omega_n, b.pi.u_min, b.pi.u_max)
        .map_err(|e| fail(&e))?;
    ClosedLoopBoiler::new(
        BoilerState { p: b.pi.p_sp, v_w: b.v_w0 },
        pi,
        CompensatorConfig { gain: b.compensator_gain },
        b.params.clone(),
        cfg.timing.tau,
    )
    .map_err(|e| fail(&e))
}

/// Hash of everything the identification of unit `i` depends on.
pub fn cache_key(cfg: &ScenarioConfig, i: usize) -> String {
    let inputs = serde_json::json!({
        "unit": i,
        "boiler": cfg.boilers[i],
        "tau": cfg.timing.tau,
        "t_m": cfg.timing.t_m,
        "h_f": cfg.h_f,
        "identification": cfg.identification,
        "seed": cfg.seed,
    });
    hex::encode(Sha256::digest(inputs.to_string().as_bytes()))
}

/// Random multi-step excitation over the admissible draw range and order
/// selection on a two-thirds/one-third split.
pub fn identify_unit(cfg: &ScenarioConfig, i: usize) -> Result<(AffineModel, f64), RunError> {
    let b = &cfg.boilers[i];
    let mut rng = stream(cfg.seed, 2 * i as u64);
    let levels: Vec<f64> =
        (0..cfg.identification.levels).map(|_| rng.gen_range(b.hybrid.q_s_min..=b.hybrid.q_s_max)).collect();
    let fail = |e: &dyn ToString| RunError::runtime("bootstrap", 0.0, format!("{}: {}", b.name, e.to_string()));
    let boiler = closed_loop(cfg, i)?.at_steady_state(levels[0], cfg.h_f).map_err(|e| fail(&e))?;
    let design = StepDesign { levels, hold: cfg.identification.hold, t_m: cfg.timing.t_m };
    let data = excite_and_collect(&boiler, &design, cfg.h_f).map_err(|e| fail(&e))?;
    let (train, valid) = data.split(2 * data.len() / 3);
    match cfg.identification.orders {
        Some([nf, nb]) => {
            let m = identify(&train, nb, nf).map_err(|e| fail(&e))?;
            let fit = validation_fit(&m, &valid);
            Ok((m, fit))
        }
        None => select_orders(&train, &valid).map_err(|e| fail(&e)),
    }
}

fn cached_model(cfg: &ScenarioConfig, i: usize, dir: Option<&Path>) -> Result<(AffineModel, f64, bool), RunError> {
    let key = cache_key(cfg, i);
    let path = dir.map(|d| d.join(format!("ident-{key}.json")));
    if let Some(p) = &path {
        if let Ok(text) = fs::read_to_string(p) {
            if let Ok(e) = serde_json::from_str::<CacheEntry>(&text) {
                if e.key == key {
                    return Ok((e.model, e.fit, true));
                }
            }
        }
    }
    let (model, fit) = identify_unit(cfg, i)?;
    if let (Some(d), Some(p)) = (dir, &path) {
        fs::create_dir_all(d).map_err(|e| RunError::io(d, e))?;
        let entry = CacheEntry { key, model: model.clone(), fit };
        fs::write(p, serde_json::to_string_pretty(&entry).expect("cache entry serializes"))
            .map_err(|e| RunError::io(p, e))?;
    }
    Ok((model, fit, false))
}

/// Identification, reference models, disturbance sets and hybrid models of
/// every unit. Identified models are cached in `cache_dir` when given.
pub fn bootstrap(cfg: &ScenarioConfig, cache_dir: Option<&Path>) -> Result<Bootstrap, RunError> {
    cfg.validate()?;
    let mut models = Vec::new();
    let mut fits = Vec::new();
    let mut cached = Vec::new();
    for i in 0..cfg.boilers.len() {
        let (m, fit, hit) = cached_model(cfg, i, cache_dir)?;
        log::info!("{}: orders nf = {}, nb = {}, fit {:.4}, gain {:.5}", cfg.boilers[i].name, m.nf(), m.nb(), fit, m.gain());
        models.push(m);
        fits.push(fit);
        cached.push(hit);
    }
    let fail = |e: &dyn ToString| RunError::runtime("bootstrap", 0.0, e.to_string());
    let nf = models.iter().map(|m| m.nf()).min().unwrap_or(1);
    let nb = models.iter().map(|m| m.nb()).min().unwrap_or(1);
    let shared = SharedStructure::average(&models, nf, nb).map_err(|e| fail(&e))?;
    let mut refs = Vec::new();
    let mut ws = Vec::new();
    let mut hybrids = Vec::new();
    let mut mlds = Vec::new();
    let mut units = Vec::new();
    for (i, (m, b)) in models.iter().zip(&cfg.boilers).enumerate() {
        let r = build_reference_model(m, &shared).map_err(|e| fail(&e))?;
        let h = &b.hybrid;
        let sampling = DisturbanceSampling {
            u_min: h.q_s_min,
            u_max: h.q_s_max,
            du_max: cfg.ensemble.du_max,
            steps: cfg.ensemble.samples,
            inflation: cfg.ensemble.inflation,
        };
        let mut rng = stream(cfg.seed, 2 * i as u64 + 1);
        ws.push(quantify_disturbance(m, &r, &sampling, &mut rng).map_err(|e| fail(&e))?);
        let hybrid = HybridGenModel {
            chi_off_st: h.chi_off_st,
            chi_st_on: h.chi_st_on,
            chi_on_off: h.chi_on_off,
            g: r.g,
            gamma_on: r.gamma_hat,
            gamma_st: h.gamma_st,
            q_s_min: h.q_s_min + cfg.ensemble.backoff,
            q_s_max: h.q_s_max - cfg.ensemble.backoff,
        };
        mlds.push(to_mld(&hybrid).map_err(|e| fail(&e))?);
        let y_top = b.y_margin * (r.g * h.q_s_max + r.gamma_hat);
        units.push(UnitLimits { u_min: h.q_s_min, u_max: h.q_s_max, y_min: 0.0, y_max: y_top.min(b.pi.u_max) });
        hybrids.push(hybrid);
        refs.push(r);
    }
    let total: f64 = cfg.boilers.iter().map(|b| b.hybrid.q_s_max).sum();
    let limits = EnsembleLimits { units, u_bar: (0.0, total), du_max: cfg.ensemble.du_max };
    Ok(Bootstrap { models, fits, refs, ws, hybrids, mlds, limits, cached })
}

fn mpc_settings(cfg: &ScenarioConfig) -> MpcSettings {
    let w = &cfg.ensemble.weights;
    MpcSettings {
        horizon: cfg.timing.n_m,
        t_weight: w.t,
        q_dx: w.q_dx,
        q_eps: w.q_eps,
        r_weight: w.r,
        rpi_eps: cfg.ensemble.rpi_eps,
    }
}

/// Tube MPC problems keyed by configuration.
struct ProblemCache<'a> {
    boot: &'a Bootstrap,
    settings: MpcSettings,
    built: BTreeMap<(Vec<u64>, Vec<bool>), TubeMPCProblem>,
}

impl ProblemCache<'_> {
    fn get(&mut self, alpha: &[f64], on: &[bool], t: f64) -> Result<TubeMPCProblem, RunError> {
        let key = (alpha.iter().map(|a| a.to_bits()).collect(), on.to_vec());
        if let Some(p) = self.built.get(&key) {
            return Ok(p.clone());
        }
        let b = self.boot;
        let p = TubeMPCProblem::build(&b.refs, &b.ws, alpha, on, &b.limits, &self.settings)
            .map_err(|e| RunError::runtime("ml-design", t, e))?;
        self.built.insert(key, p.clone());
        Ok(p)
    }
}

/// Lag buffers of one unit, most recent first.
struct Lags {
    y: VecDeque<f64>,
    u: VecDeque<f64>,
}

impl Lags {
    fn steady(y: f64, u: f64, nf: usize, nb: usize) -> Self {
        Self { y: vec![y; nf + 1].into(), u: vec![u; nb].into() }
    }

    fn push(&mut self, y: f64, u: f64) {
        self.y.pop_back();
        self.y.push_front(y);
        self.u.pop_back();
        self.u.push_front(u);
    }

    /// States at `k` and `k - 1`.
    fn states(&self, r: &ReferenceModel) -> (DVector<f64>, DVector<f64>) {
        let y: Vec<f64> = self.y.iter().copied().collect();
        let u: Vec<f64> = self.u.iter().copied().collect();
        (r.state_from_lags(&y, &u), r.state_from_lags(&y[1..], &u[1..]))
    }
}

fn names(cfg: &ScenarioConfig, prefix: &str) -> Vec<String> {
    cfg.boilers.iter().map(|b| format!("{prefix}_{}", b.name)).collect()
}

fn new_log(cfg: &ScenarioConfig) -> RunLog {
    let per = |prefixes: &[&str]| prefixes.iter().flat_map(|p| names(cfg, p)).collect::<Vec<_>>();
    let plant = Table::new("plant", &["step", "k", "t"], per(&["p", "v_w", "q_f", "q_g", "q_s", "diverted"]));
    let mut ml_cols: Vec<String> = [
        "u_bar", "y_bar", "r", "r_hat", "eps", "tube", "tube_excess", "kind", "alternations", "feasible", "holds",
        "viol_u_bar", "viol_unit", "viol_rate", "viol_y",
    ]
    .iter()
    .map(|s| s.to_string())
    .collect();
    ml_cols.extend(per(&["alpha", "u"]));
    let ml = Table::new("ml", &["k", "h", "t"], ml_cols);
    let mut hl_cols: Vec<String> =
        ["status", "objective", "gap", "nodes", "slack", "r", "u_ss"].iter().map(|s| s.to_string()).collect();
    hl_cols.extend(per(&["mode", "chi", "alpha", "beta"]));
    let hl = Table::new("hl", &["h", "t"], hl_cols);
    RunLog { plant, ml, hl }
}

/// Constraint flags of an applied input: `[Ū, U_i, rate, Y_i]`.
fn violations(p: &TubeMPCProblem, alpha: &[f64], u: f64, alpha_prev: &[f64], u_prev: f64) -> [bool; 4] {
    let lim = &p.limits;
    let out = |v: f64, lo: f64, hi: f64| v < lo - FLAG_TOL * (1.0 + lo.abs()) || v > hi + FLAG_TOL * (1.0 + hi.abs());
    let mut flags = [out(u, lim.u_bar.0, lim.u_bar.1), false, false, false];
    for i in 0..alpha.len() {
        let ui = alpha[i] * u;
        let l = &lim.units[i];
        if alpha[i] > 0.0 {
            flags[1] |= out(ui, l.u_min, l.u_max);
            flags[3] |= out(p.refs_gain[i] * ui + p.refs_gamma[i], l.y_min, l.y_max);
        }
        flags[2] |= (ui - alpha_prev[i] * u_prev).abs() > lim.du_max * (1.0 + FLAG_TOL);
    }
    flags
}

fn status_name<T: std::fmt::Debug>(s: &T) -> String {
    format!("{s:?}").to_lowercase()
}

/// Closed loop over `until` seconds (the configured duration by default),
/// rounded up to whole high-level periods.
pub fn simulate(cfg: &ScenarioConfig, boot: &Bootstrap, until: Option<f64>) -> Result<RunLog, RunError> {
    cfg.validate()?;
    let tm = &cfg.timing;
    let (mu, plant_steps) = (tm.mu(), tm.plant_steps());
    let t_end = until.unwrap_or(cfg.duration);
    let n_hl = ((t_end / tm.t_h) - 1e-9).ceil().max(1.0) as usize;
    let n_units = cfg.boilers.len();
    let (nf, nb) = (boot.refs[0].shared.nf(), boot.refs[0].shared.nb());
    let mip = MipOptions { gap_tolerance: cfg.uc.gap_tolerance, node_cap: cfg.uc.node_cap };
    let solve_uc = |h: usize, states: &[HybridState]| -> Result<UCSolution, RunError> {
        let demand = DemandProfile { forecast: cfg.forecast(h), t_h: tm.t_h };
        solve_receding(&boot.hybrids, &boot.mlds, &demand, states, &cfg.costs, mip)
            .map_err(|e| RunError::runtime("hl", h as f64 * tm.t_h, e))
    };
    let mut log = new_log(cfg);
    let mut cache = ProblemCache { boot, settings: mpc_settings(cfg), built: BTreeMap::new() };

    let mut states: Vec<HybridState> = cfg.boilers.iter().map(|b| b.initial_state()).collect();
    let mut plan = solve_uc(0, &states)?;
    let mut alpha_prev = plan.alpha_at(0);
    let mut u_prev = plan.u_ss[0];
    let mut r = plan.r[0];
    let on_of = |plan: &UCSolution| plan.first_modes().iter().map(|&m| m == Mode::On).collect::<Vec<_>>();
    let mut ctl = MediumLevelController::new(
        cache.get(&alpha_prev, &on_of(&plan), 0.0)?,
        TransitionOptions { max_steps: cfg.ensemble.max_transition, ..TransitionOptions::default() },
    );
    let diverted_of = |states: &[HybridState]| -> Vec<f64> {
        states.iter().zip(&cfg.boilers).map(|(s, b)| if s.mode == Mode::St { b.hybrid.q_s_min } else { 0.0 }).collect()
    };
    let mut boilers = Vec::with_capacity(n_units);
    let mut lags = Vec::with_capacity(n_units);
    let diverted = diverted_of(&states);
    for i in 0..n_units {
        let draw = alpha_prev[i] * u_prev;
        let b = closed_loop(cfg, i)?
            .at_steady_state(draw + diverted[i], cfg.h_f)
            .map_err(|e| RunError::runtime("local", 0.0, e))?;
        lags.push(Lags::steady(b.commanded_gas(), draw, nf, nb));
        boilers.push(b);
    }

    let mut holds = 0usize;
    let mut plant_step = 0usize;
    for k in 0..n_hl * mu {
        let h = k / mu;
        let t = k as f64 * tm.t_m;
        if k % mu == 0 {
            if h > 0 {
                let beta = plan.first_beta();
                for i in 0..n_units {
                    let q_s = plan.plans[i].q_s[0];
                    states[i] = dha_step(&boot.hybrids[i], states[i], beta[i], q_s)
                        .map_err(|e| RunError::runtime("hl", t, e))?
                        .0;
                }
                plan = solve_uc(h, &states)?;
                r = plan.r[0];
                let (alpha, on) = (plan.alpha_at(0), on_of(&plan));
                if alpha != ctl.problem.ens.alpha || on != ctl.problem.ens.on {
                    ctl.retarget(cache.get(&alpha, &on, t)?);
                }
            }
            let d = &plan.diagnostics;
            let mut row: Vec<Value> = vec![h.into(), t.into(), status_name(&d.status).as_str().into()];
            row.extend([plan.objective.into(), d.gap.into(), d.nodes.into(), d.slack[0].into()]);
            row.extend([plan.r[0].into(), plan.u_ss[0].into()]);
            row.extend(plan.plans.iter().map(|p| p.modes[0].as_str().into()));
            row.extend(plan.plans.iter().map(|p| (p.chi[0] as usize).into()));
            row.extend(plan.plans.iter().map(|p| p.alpha[0].into()));
            row.extend(plan.plans.iter().map(|p| p.beta[0].into()));
            log.hl.push(row);
        }

        // medium level
        let carrying: Vec<bool> =
            ctl.problem.ens.on.iter().zip(&alpha_prev).map(|(&o, &a)| o || a > 0.0).collect();
        let n = boot.refs[0].n();
        let (mut x, mut x_prev, mut y) = (DVector::zeros(n), DVector::zeros(n), 0.0);
        for i in (0..n_units).filter(|&i| carrying[i]) {
            let (xi, xpi) = lags[i].states(&boot.refs[i]);
            x += xi;
            x_prev += xpi;
            y += lags[i].y[0];
        }
        let meas = MlMeasurement { x, x_prev, y, u_prev, alpha_prev: alpha_prev.clone() };
        let (u, alpha, kind, r_hat, alternations, tube) = match ctl.step(&meas, r) {
            Ok(st) => {
                if let Some(msg) = st.stalled {
                    return Err(RunError::runtime("ml", t, msg));
                }
                holds = 0;
                let o = st.outcome;
                let tube = o.solution.as_ref().map(|s| {
                    (s.tube_error.amax(), ctl.problem.z.violation(&s.tube_error).max(0.0))
                });
                let kind = match o.kind {
                    StepKind::Regular => "regular",
                    StepKind::Fallback => "fallback",
                };
                (o.u, o.alpha, kind, o.r_hat, o.alternations, tube)
            }
            Err(e) => {
                holds += 1;
                log::warn!("t = {t} s: medium level infeasible ({e}), holding the last input");
                if holds > cfg.ensemble.max_hold {
                    return Err(RunError::runtime("ml", t, format!("{e} for {holds} consecutive steps")));
                }
                (u_prev, alpha_prev.clone(), "hold", f64::NAN, 0, None)
            }
        };
        let flags = violations(&ctl.problem, &alpha, u, &alpha_prev, u_prev);
        let tube_cols: [Value; 2] = match tube {
            Some((a, b)) => [a.into(), b.into()],
            None => ["".into(), "".into()],
        };
        let mut row: Vec<Value> = vec![k.into(), h.into(), t.into(), u.into(), y.into(), r.into()];
        row.extend([r_hat.into(), (y - r_hat).into()]);
        row.extend(tube_cols);
        row.extend([kind.into(), alternations.into(), (kind != "hold").into(), holds.into()]);
        row.extend(flags.iter().map(|&f| f.into()));
        row.extend(alpha.iter().map(|&a| a.into()));
        row.extend(alpha.iter().map(|&a| (a * u).into()));
        log.ml.push(row);

        // low level
        let diverted = diverted_of(&states);
        let draws: Vec<f64> = alpha.iter().map(|a| a * u).collect();
        for s in 0..plant_steps {
            let ts = t + s as f64 * tm.tau;
            let mut cols: Vec<Vec<Value>> = vec![Vec::with_capacity(n_units); 6];
            for i in 0..n_units {
                let st = boilers[i].state;
                let rep = boilers[i]
                    .step(draws[i] + diverted[i], cfg.h_f)
                    .map_err(|e| RunError::runtime("local", ts, format!("{}: {e}", cfg.boilers[i].name)))?;
                for (c, v) in cols.iter_mut().zip([st.p, st.v_w, rep.q_f, rep.q_g, rep.q_s, diverted[i]]) {
                    c.push(v.into());
                }
            }
            let mut row: Vec<Value> = vec![plant_step.into(), k.into(), ts.into()];
            row.extend(cols.into_iter().flatten());
            log.plant.push(row);
            plant_step += 1;
        }
        for i in 0..n_units {
            lags[i].push(boilers[i].commanded_gas(), draws[i]);
        }
        u_prev = u;
        alpha_prev = alpha;
    }
    Ok(log)
}

fn write(path: &Path, text: &str) -> Result<(), RunError> {
    fs::write(path, text).map_err(|e| RunError::io(path, e))
}

/// Writes the CSV files of a selection into `dir`.
pub fn export_to_dir(log: &RunLog, selection: &[String], dir: &Path) -> Result<Vec<PathBuf>, RunError> {
    let files = log.export(selection)?;
    fs::create_dir_all(dir).map_err(|e| RunError::io(dir, e))?;
    let mut out = Vec::new();
    for (name, text) in files {
        let p = dir.join(name);
        write(&p, &text)?;
        out.push(p);
    }
    Ok(out)
}

/// Bootstrap (cached under `out_dir/cache`), closed loop and export of the
/// full log into `out_dir`. A failure record is written on error.
pub fn run(cfg: &ScenarioConfig, out_dir: &Path, until: Option<f64>) -> Result<RunLog, RunError> {
    let result = fs::create_dir_all(out_dir).map_err(|e| RunError::io(out_dir, e)).and_then(|_| {
        let boot = bootstrap(cfg, Some(&out_dir.join("cache")))?;
        let log = simulate(cfg, &boot, until)?;
        write(&out_dir.join("log.json"), &log.to_json())?;
        export_to_dir(&log, &[], out_dir)?;
        Ok(log)
    });
    if let Err(e) = &result {
        let record = serde_json::to_string_pretty(&FailureRecord::from(e)).expect("record serializes");
        let _ = fs::write(out_dir.join("failure.json"), record);
    } else {
        let _ = fs::remove_file(out_dir.join("failure.json"));
    }
    result
}

/// Reads and validates a configuration file.
pub fn load_config(path: &Path) -> Result<ScenarioConfig, RunError> {
    let text = fs::read_to_string(path).map_err(|e| RunError::io(path, e))?;
    Ok(ScenarioConfig::from_json(&text)?)
}
