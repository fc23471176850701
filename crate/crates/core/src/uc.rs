//! High-level unit commitment and economic dispatch over the MLD generator
//! models, solved in receding horizon as a mixed-integer linear program on
//! the local steam flows.

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use crate::hybrid::{dha_step, idx, HybridGenModel, HybridState, MLDModel, Mode};
use crate::solvers::{solve_mip, MipOptions, MipProblem, MipStatus, Problem, SolverError};

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum UcError {
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("unit commitment infeasible")]
    Infeasible,
    #[error("node budget exhausted without an incumbent")]
    SolverTimeout,
    #[error("relaxation failed")]
    RelaxationFailed,
    #[error("plan does not replay through the automaton: {0}")]
    Inconsistent(String),
    #[error(transparent)]
    Solver(#[from] SolverError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DemandProfile {
    /// Forecast total steam demand per high-level period, kg/s.
    pub forecast: Vec<f64>,
    /// High-level period, s.
    pub t_h: f64,
}

impl DemandProfile {
    pub fn horizon(&self) -> usize {
        self.forecast.len()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct UcCosts {
    /// Currency per kg of gas.
    pub c_gas: f64,
    /// Currency per start-up (OFF to ST).
    pub c_start: f64,
    /// Currency per (kg/s) of unmet or excess demand per period.
    pub c_slack: f64,
    /// With `false` the demand balance is a hard equality.
    pub allow_slack: bool,
}

impl Default for UcCosts {
    fn default() -> Self {
        Self { c_gas: 0.4, c_start: 50.0, c_slack: 1.0e4, allow_slack: true }
    }
}

/// Variable offsets of the UC program. Per generator and step the block
/// is `[x (4), u (2), δ (7), z (1)]`, followed by the terminal state.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct UcLayout {
    pub n_g: usize,
    pub n_h: usize,
}

const STEP: usize = idx::N_X + idx::N_U + idx::N_DELTA + idx::N_Z;

impl UcLayout {
    fn gen_block(&self) -> usize {
        self.n_h * STEP + idx::N_X
    }

    pub fn x(&self, i: usize, h: usize) -> usize {
        i * self.gen_block() + h * STEP
    }

    pub fn u(&self, i: usize, h: usize) -> usize {
        self.x(i, h) + idx::N_X
    }

    pub fn delta(&self, i: usize, h: usize) -> usize {
        self.u(i, h) + idx::N_U
    }

    pub fn z(&self, i: usize, h: usize) -> usize {
        self.delta(i, h) + idx::N_DELTA
    }

    pub fn slack_up(&self, h: usize) -> usize {
        self.n_g * self.gen_block() + 2 * h
    }

    pub fn slack_down(&self, h: usize) -> usize {
        self.slack_up(h) + 1
    }

    pub fn num_vars(&self) -> usize {
        self.n_g * self.gen_block() + 2 * self.n_h
    }
}

#[derive(Debug, Clone)]
pub struct UcInstance {
    pub mip: MipProblem,
    pub layout: UcLayout,
}

/// Builds the mixed-integer program for one high-level decision.
pub fn build_uc_mip(
    mlds: &[MLDModel],
    demand: &DemandProfile,
    initial: &[HybridState],
    costs: &UcCosts,
) -> Result<UcInstance, UcError> {
    let n_g = mlds.len();
    let n_h = demand.horizon();
    if initial.len() != n_g || n_g == 0 {
        return Err(UcError::DimensionMismatch(format!("{n_g} models, {} initial states", initial.len())));
    }
    if n_h == 0 || demand.forecast.iter().any(|d| !(*d >= 0.0)) || !(demand.t_h > 0.0) {
        return Err(UcError::DimensionMismatch("demand forecast must be nonempty and nonnegative".into()));
    }
    let lay = UcLayout { n_g, n_h };
    let n = lay.num_vars();
    let mut p = Problem::new(n);
    let mut binaries = Vec::new();

    for (i, mld) in mlds.iter().enumerate() {
        let cap = mld.cap as f64;
        let q_max = mld.e_x.column(idx::X_ON).iter().fold(0.0f64, |m, v| m.max(-v));
        for h in 0..=n_h {
            let x = lay.x(i, h);
            p.lower[x + idx::CHI] = 0.0;
            p.upper[x + idx::CHI] = cap;
            for k in idx::X_OFF..=idx::X_ON {
                p.lower[x + k] = 0.0;
                p.upper[x + k] = 1.0;
            }
            if h == n_h {
                break;
            }
            let u = lay.u(i, h);
            p.lower[u + idx::BETA] = 0.0;
            p.upper[u + idx::BETA] = 1.0;
            p.lower[u + idx::Q_S] = 0.0;
            p.upper[u + idx::Q_S] = q_max;
            binaries.push(u + idx::BETA);
            let d = lay.delta(i, h);
            for k in 0..idx::N_DELTA {
                p.lower[d + k] = 0.0;
                p.upper[d + k] = 1.0;
            }
            // threshold indicators stay continuous: with the dwell cuts, integral transitions fix the timing
            binaries.extend([d + idx::T_OS, d + idx::T_SO, d + idx::T_ON]);
            let z = lay.z(i, h);
            p.lower[z] = 0.0;
            p.upper[z] = cap;

            // inequality rows
            for r in 0..mld.num_rows() {
                let mut row = vec![0.0; n];
                for k in 0..idx::N_X {
                    row[x + k] = mld.e_x[(r, k)];
                }
                for k in 0..idx::N_U {
                    row[u + k] = mld.e_u[(r, k)];
                }
                for k in 0..idx::N_DELTA {
                    row[d + k] = mld.e_delta[(r, k)];
                }
                row[z] = mld.e_z[(r, 0)];
                p.push_le(&row, mld.e_aff[r]);
            }
            // dynamics
            let xn = lay.x(i, h + 1);
            for s in 0..idx::N_X {
                let mut row = vec![0.0; n];
                row[xn + s] = 1.0;
                for k in 0..idx::N_X {
                    row[x + k] -= mld.a[(s, k)];
                }
                for k in 0..idx::N_U {
                    row[u + k] -= mld.b_u[(s, k)];
                }
                for k in 0..idx::N_DELTA {
                    row[d + k] -= mld.b_delta[(s, k)];
                }
                row[z] -= mld.b_z[(s, 0)];
                p.push_eq(&row, 0.0);
            }
            // cost
            let w = costs.c_gas * demand.t_h;
            for k in 0..idx::N_X {
                p.cost[x + k] += w * mld.c[(0, k)];
            }
            for k in 0..idx::N_U {
                p.cost[u + k] += w * mld.d_u[(0, k)];
            }
            for k in 0..idx::N_DELTA {
                p.cost[d + k] += w * mld.d_delta[(0, k)];
            }
            p.cost[z] += w * mld.d_z[(0, 0)];
            p.cost[d + idx::T_OS] += costs.c_start;
        }

        // initial state and the indicators it determines
        let s0 = HybridState { mode: initial[i].mode, chi: initial[i].chi.min(mld.cap) };
        let x0 = MLDModel::encode_state(s0);
        let x = lay.x(i, 0);
        for k in 0..idx::N_X {
            p.lower[x + k] = x0[k];
            p.upper[x + k] = x0[k];
        }
        let d = lay.delta(i, 0);
        let [t_os, t_so, t_on] = mld.thresholds;
        for (k, th) in [(idx::D_OS, t_os), (idx::D_SO, t_so), (idx::D_ON, t_on), (idx::D_CAP, mld.cap)] {
            let v = if s0.chi >= th { 1.0 } else { 0.0 };
            p.lower[d + k] = v;
            p.upper[d + k] = v;
        }
        let so = if s0.mode == Mode::St && s0.chi >= t_so { 1.0 } else { 0.0 };
        p.lower[d + idx::T_SO] = so;
        p.upper[d + idx::T_SO] = so;
        if s0.mode != Mode::Off {
            p.upper[d + idx::T_OS] = 0.0;
        }
        if s0.mode != Mode::On {
            p.upper[d + idx::T_ON] = 0.0;
        }
        add_dwell_cuts(&mut p, &lay, i, mld, s0);
    }

    for h in 0..n_h {
        let mut row = vec![0.0; n];
        for i in 0..n_g {
            row[lay.u(i, h) + idx::Q_S] = 1.0;
        }
        let (su, sd) = (lay.slack_up(h), lay.slack_down(h));
        row[su] = -1.0;
        row[sd] = 1.0;
        p.push_eq(&row, demand.forecast[h]);
        p.lower[su] = 0.0;
        p.lower[sd] = 0.0;
        if !costs.allow_slack {
            p.upper[su] = 0.0;
            p.upper[sd] = 0.0;
        }
        p.cost[su] = costs.c_slack;
        p.cost[sd] = costs.c_slack;
    }

    Ok(UcInstance { mip: MipProblem { core: p, binaries }, layout: lay })
}

fn fix(p: &mut Problem, j: usize, v: f64) {
    p.lower[j] = v;
    p.upper[j] = v;
}

/// Dwell-time inequalities implied by the counter logic. They are redundant
/// for integer points and tighten the relaxation considerably.
///
/// Per mode with exit threshold θ and entering transition `t_in`, `t_out`:
/// a unit entering at `j` stays through `j + θ`, and cannot leave before
/// it has been in the mode for θ + 1 periods. Standby has no command, so
/// its exit is an exact delay of the entry.
fn add_dwell_cuts(p: &mut Problem, lay: &UcLayout, i: usize, mld: &MLDModel, s0: HybridState) {
    let n = lay.num_vars();
    let n_h = lay.n_h;
    let [th_os, th_so, th_on] = mld.thresholds.map(|t| t as usize);
    let chi0 = s0.chi as usize;
    // (mode state index, mode, threshold, entering transition, leaving transition)
    let modes = [
        (idx::X_OFF, Mode::Off, th_os, idx::T_ON, idx::T_OS),
        (idx::X_ST, Mode::St, th_so, idx::T_OS, idx::T_SO),
        (idx::X_ON, Mode::On, th_on, idx::T_SO, idx::T_ON),
    ];
    for (xk, mode, th, t_in, t_out) in modes {
        // earliest period at which the current mode can be left
        let first_exit = if s0.mode == mode { th.saturating_sub(chi0) } else { th + 1 };
        for h in 0..=n_h {
            if s0.mode == mode && h <= first_exit {
                fix(p, lay.x(i, h) + xk, 1.0);
            }
            if h < n_h && h < first_exit {
                fix(p, lay.delta(i, h) + t_out, 0.0);
            }
            // x(h) >= Σ_{j = h-θ..h, j >= 1} t_in(j - 1)
            let lo = h.saturating_sub(th).max(1);
            if lo <= h && h >= 1 {
                let mut row = vec![0.0; n];
                row[lay.x(i, h) + xk] = -1.0;
                for j in lo..=h {
                    row[lay.delta(i, j - 1) + t_in] = 1.0;
                }
                p.push_le(&row, 0.0);
            }
            if h < n_h {
                // t_out(h) <= x(h - j), j = 0..θ
                for j in 0..=th.min(h) {
                    let mut row = vec![0.0; n];
                    row[lay.delta(i, h) + t_out] = 1.0;
                    row[lay.x(i, h - j) + xk] = -1.0;
                    p.push_le(&row, 0.0);
                }
            }
        }
    }
    // standby lasts exactly θ_SO + 1 periods
    let fire = if s0.mode == Mode::St { Some(th_so.saturating_sub(chi0)) } else { None };
    for h in 0..n_h {
        if h > th_so {
            let mut row = vec![0.0; n];
            row[lay.delta(i, h) + idx::T_SO] = 1.0;
            row[lay.delta(i, h - th_so - 1) + idx::T_OS] = -1.0;
            p.push_eq(&row, 0.0);
        } else {
            fix(p, lay.delta(i, h) + idx::T_SO, if fire == Some(h) { 1.0 } else { 0.0 });
        }
    }
}

/// Plan of one generator over the horizon.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GeneratorPlan {
    pub modes: Vec<Mode>,
    pub chi: Vec<u32>,
    pub beta: Vec<bool>,
    pub q_s: Vec<f64>,
    pub q_g: Vec<f64>,
    pub alpha: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UcDiagnostics {
    pub status: MipStatus,
    pub nodes: usize,
    pub bound: f64,
    pub gap: f64,
    /// Signed demand mismatch `s⁺ - s⁻` per step, kg/s.
    pub slack: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UCSolution {
    pub plans: Vec<GeneratorPlan>,
    /// Ensemble steady-state input `Σ q_s,i` per step, kg/s.
    pub u_ss: Vec<f64>,
    /// Fuel reference for the medium level: gas of the ON units, kg/s.
    pub r: Vec<f64>,
    /// Gas of all units including standby, kg/s.
    pub total_gas: Vec<f64>,
    pub objective: f64,
    pub diagnostics: UcDiagnostics,
}

impl UCSolution {
    pub fn alpha_at(&self, h: usize) -> Vec<f64> {
        self.plans.iter().map(|p| p.alpha[h]).collect()
    }

    pub fn first_modes(&self) -> Vec<Mode> {
        self.plans.iter().map(|p| p.modes[0]).collect()
    }

    pub fn first_beta(&self) -> Vec<bool> {
        self.plans.iter().map(|p| p.beta[0]).collect()
    }
}

/// Sharing factors from local steam flows. Units that are ON share equally
/// when the total is zero; all zero when nothing is ON.
pub fn sharing_factors(q_s: &[f64], on: &[bool]) -> Vec<f64> {
    let total: f64 = q_s.iter().sum();
    if total > 0.0 {
        q_s.iter().map(|q| q / total).collect()
    } else {
        let n_on = on.iter().filter(|&&b| b).count();
        on.iter().map(|&b| if b && n_on > 0 { 1.0 / n_on as f64 } else { 0.0 }).collect()
    }
}

fn extract(
    inst: &UcInstance,
    models: &[HybridGenModel],
    initial: &[HybridState],
    x: &DVector<f64>,
    obj: f64,
    diag: UcDiagnostics,
) -> Result<UCSolution, UcError> {
    let lay = inst.layout;
    let mut plans = Vec::with_capacity(lay.n_g);
    for (i, m) in models.iter().enumerate() {
        let mut plan = GeneratorPlan { modes: vec![], chi: vec![], beta: vec![], q_s: vec![], q_g: vec![], alpha: vec![] };
        let mut s = m.normalize(initial[i]);
        for h in 0..lay.n_h {
            let u = lay.u(i, h);
            let d = lay.delta(i, h);
            // the command is only meaningful when a commanded transition fires
            let beta = x[d + idx::T_OS] + x[d + idx::T_ON] > 0.5;
            let q_s = if s.mode == Mode::On { x[u + idx::Q_S].clamp(m.q_s_min, m.q_s_max) } else { 0.0 };
            let (next, q_g) = dha_step(m, s, beta, q_s).map_err(|e| UcError::Inconsistent(e.to_string()))?;
            let planned = MLDModel::decode_state(&x.rows(lay.x(i, h + 1), idx::N_X).into_owned());
            if planned.mode != next.mode {
                return Err(UcError::Inconsistent(format!("generator {i} step {h}: plan {:?}, replay {:?}", planned.mode, next.mode)));
            }
            plan.modes.push(s.mode);
            plan.chi.push(s.chi);
            plan.beta.push(beta);
            plan.q_s.push(q_s);
            plan.q_g.push(q_g);
            s = next;
        }
        plans.push(plan);
    }
    let mut u_ss = vec![];
    let mut r = vec![];
    let mut total_gas = vec![];
    for h in 0..lay.n_h {
        let q: Vec<f64> = plans.iter().map(|p| p.q_s[h]).collect();
        let on: Vec<bool> = plans.iter().map(|p| p.modes[h] == Mode::On).collect();
        let alpha = sharing_factors(&q, &on);
        for (p, a) in plans.iter_mut().zip(alpha) {
            p.alpha.push(a);
        }
        u_ss.push(q.iter().sum());
        r.push(plans.iter().filter(|p| p.modes[h] == Mode::On).map(|p| p.q_g[h]).sum());
        total_gas.push(plans.iter().map(|p| p.q_g[h]).sum());
    }
    Ok(UCSolution { plans, u_ss, r, total_gas, objective: obj, diagnostics: diag })
}

/// Solves the UC program for the current high-level step. The whole
/// horizon plan is returned; the orchestrator applies the first step.
pub fn solve_receding(
    models: &[HybridGenModel],
    mlds: &[MLDModel],
    demand: &DemandProfile,
    states: &[HybridState],
    costs: &UcCosts,
    options: MipOptions,
) -> Result<UCSolution, UcError> {
    if models.len() != mlds.len() {
        return Err(UcError::DimensionMismatch("models and MLD encodings differ in count".into()));
    }
    let inst = build_uc_mip(mlds, demand, states, costs)?;
    let sol = solve_mip(&inst.mip, options)?;
    let x = match (sol.status, sol.x) {
        (_, Some(x)) => x,
        (MipStatus::Infeasible, None) => return Err(UcError::Infeasible),
        (MipStatus::NodeCapReached, None) => return Err(UcError::SolverTimeout),
        (_, None) => return Err(UcError::RelaxationFailed),
    };
    let lay = inst.layout;
    let slack = (0..lay.n_h).map(|h| x[lay.slack_up(h)] - x[lay.slack_down(h)]).collect();
    let diag = UcDiagnostics { status: sol.status, nodes: sol.nodes, bound: sol.bound, gap: sol.gap, slack };
    extract(&inst, models, states, &x, sol.objective, diag)
}
