//! High-level generator model: an OFF/ST/ON automaton with a dwell counter,
//! mode-dependent static fuel map, and its mixed logical dynamical (MLD)
//! encoding for mixed-integer optimization.

use std::fmt::Write as _;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::solvers::{solve_mip, MipOptions, MipProblem, MipStatus, Problem, SolverError};

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum HybridError {
    #[error("steam draw {q_s} kg/s not admissible in mode {mode:?}")]
    InvalidInput { mode: Mode, q_s: f64 },
    #[error("invalid hybrid model: {0}")]
    InvalidModel(String),
    #[error("big-M bounds too small: MLD and automaton disagree at chi = {chi}, mode {mode:?}, beta = {beta}")]
    BigMTooSmall { chi: u32, mode: Mode, beta: bool },
    #[error(transparent)]
    Solver(#[from] SolverError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Mode {
    Off,
    St,
    On,
}

impl Mode {
    pub fn as_str(self) -> &'static str {
        match self {
            Mode::Off => "OFF",
            Mode::St => "ST",
            Mode::On => "ON",
        }
    }

    fn one_hot(self) -> [f64; 3] {
        match self {
            Mode::Off => [1.0, 0.0, 0.0],
            Mode::St => [0.0, 1.0, 0.0],
            Mode::On => [0.0, 0.0, 1.0],
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct HybridState {
    pub mode: Mode,
    /// High-level periods spent in the current mode (saturating).
    pub chi: u32,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HybridGenModel {
    pub chi_off_st: u32,
    pub chi_st_on: u32,
    pub chi_on_off: u32,
    /// Static gain of the closed loop, (kg/s gas)/(kg/s steam).
    pub g: f64,
    pub gamma_on: f64,
    pub gamma_st: f64,
    pub q_s_min: f64,
    pub q_s_max: f64,
}

/// Tolerance on steam-draw admissibility.
const Q_TOL: f64 = 1e-9;

impl HybridGenModel {
    pub fn validate(&self) -> Result<(), HybridError> {
        let bad = |m: &str| Err(HybridError::InvalidModel(m.into()));
        if !(self.gamma_st >= 0.0) {
            return bad("gamma_ST must be nonnegative");
        }
        if !(self.q_s_min >= 0.0 && self.q_s_min <= self.q_s_max && self.q_s_max.is_finite()) {
            return bad("need 0 <= q_s_min <= q_s_max");
        }
        if !(self.g.is_finite() && self.gamma_on.is_finite()) {
            return bad("output map must be finite");
        }
        Ok(())
    }

    /// Counter saturation level. Guards only compare against thresholds, so
    /// any value at or above the largest threshold behaves identically.
    pub fn cap(&self) -> u32 {
        self.chi_off_st.max(self.chi_st_on).max(self.chi_on_off).max(1)
    }

    /// Fuel flow in `mode` at steam draw `q_s`.
    pub fn output(&self, mode: Mode, q_s: f64) -> f64 {
        match mode {
            Mode::On => self.g * q_s + self.gamma_on,
            Mode::St => self.gamma_st,
            Mode::Off => 0.0,
        }
    }

    pub fn check_input(&self, mode: Mode, q_s: f64) -> Result<(), HybridError> {
        let ok = match mode {
            Mode::On => q_s >= self.q_s_min - Q_TOL && q_s <= self.q_s_max + Q_TOL,
            _ => q_s.abs() <= Q_TOL,
        };
        if ok {
            Ok(())
        } else {
            Err(HybridError::InvalidInput { mode, q_s })
        }
    }

    /// Whether the guard of the current mode fires.
    pub fn guard(&self, state: HybridState, beta: bool) -> bool {
        match state.mode {
            Mode::Off => state.chi >= self.chi_off_st && beta,
            Mode::St => state.chi >= self.chi_st_on,
            Mode::On => state.chi >= self.chi_on_off && beta,
        }
    }

    /// Clamps an externally supplied counter to the saturation level.
    pub fn normalize(&self, state: HybridState) -> HybridState {
        HybridState { mode: state.mode, chi: state.chi.min(self.cap()) }
    }
}

/// One high-level period of the automaton. Returns the next state and the
/// fuel flow during the current period.
pub fn dha_step(model: &HybridGenModel, state: HybridState, beta: bool, q_s: f64) -> Result<(HybridState, f64), HybridError> {
    model.check_input(state.mode, q_s)?;
    let state = model.normalize(state);
    let q_g = model.output(state.mode, q_s);
    let next = if model.guard(state, beta) {
        let mode = match state.mode {
            Mode::Off => Mode::St,
            Mode::St => Mode::On,
            Mode::On => Mode::Off,
        };
        HybridState { mode, chi: 0 }
    } else {
        HybridState { mode: state.mode, chi: (state.chi + 1).min(model.cap()) }
    };
    Ok((next, q_g))
}

/// Indices into the MLD state vector.
pub mod idx {
    pub const CHI: usize = 0;
    pub const X_OFF: usize = 1;
    pub const X_ST: usize = 2;
    pub const X_ON: usize = 3;
    pub const BETA: usize = 0;
    pub const Q_S: usize = 1;
    /// `[chi >= chi_off_st]`
    pub const D_OS: usize = 0;
    /// `[chi >= chi_st_on]`
    pub const D_SO: usize = 1;
    /// `[chi >= chi_on_off]`
    pub const D_ON: usize = 2;
    /// `[chi >= cap]`
    pub const D_CAP: usize = 3;
    /// OFF -> ST transition
    pub const T_OS: usize = 4;
    /// ST -> ON transition
    pub const T_SO: usize = 5;
    /// ON -> OFF transition
    pub const T_ON: usize = 6;
    pub const N_X: usize = 4;
    pub const N_U: usize = 2;
    pub const N_DELTA: usize = 7;
    pub const N_Z: usize = 1;
}

/// `x+ = A x + B_u u + B_z z + B_δ δ`, `y = C x + D_u u + D_z z + D_δ δ`,
/// `E_x x + E_u u + E_z z + E_δ δ <= E_aff`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MLDModel {
    pub a: DMatrix<f64>,
    pub b_u: DMatrix<f64>,
    pub b_z: DMatrix<f64>,
    pub b_delta: DMatrix<f64>,
    pub c: DMatrix<f64>,
    pub d_u: DMatrix<f64>,
    pub d_z: DMatrix<f64>,
    pub d_delta: DMatrix<f64>,
    pub e_x: DMatrix<f64>,
    pub e_u: DMatrix<f64>,
    pub e_z: DMatrix<f64>,
    pub e_delta: DMatrix<f64>,
    pub e_aff: DVector<f64>,
    /// Big-M used for the counter reset product.
    pub big_m: f64,
    pub cap: u32,
    pub thresholds: [u32; 3],
}

struct Rows {
    ex: Vec<[f64; 4]>,
    eu: Vec<[f64; 2]>,
    ez: Vec<f64>,
    ed: Vec<[f64; 7]>,
    aff: Vec<f64>,
}

impl Rows {
    fn push(&mut self, ex: [f64; 4], eu: [f64; 2], ez: f64, ed: [f64; 7], aff: f64) {
        self.ex.push(ex);
        self.eu.push(eu);
        self.ez.push(ez);
        self.ed.push(ed);
        self.aff.push(aff);
    }
}

fn unit7(i: usize, v: f64) -> [f64; 7] {
    let mut a = [0.0; 7];
    a[i] = v;
    a
}

/// Big-M encoding of the automaton.
pub fn to_mld(model: &HybridGenModel) -> Result<MLDModel, HybridError> {
    model.validate()?;
    let mld = build_mld(model);
    mld.self_test(model)?;
    Ok(mld)
}

fn build_mld(model: &HybridGenModel) -> MLDModel {
    use idx::*;
    let cap = model.cap();
    let capf = cap as f64;
    let big_m = capf + 1.0;
    let mut rows = Rows { ex: vec![], eu: vec![], ez: vec![], ed: vec![], aff: vec![] };

    // counter range and one-hot modes
    rows.push([-1.0, 0.0, 0.0, 0.0], [0.0; 2], 0.0, [0.0; 7], 0.0);
    rows.push([1.0, 0.0, 0.0, 0.0], [0.0; 2], 0.0, [0.0; 7], capf);
    rows.push([0.0, 1.0, 1.0, 1.0], [0.0; 2], 0.0, [0.0; 7], 1.0);
    rows.push([0.0, -1.0, -1.0, -1.0], [0.0; 2], 0.0, [0.0; 7], -1.0);

    // threshold indicators: d = [chi >= θ]
    let thresholds = [(D_OS, model.chi_off_st), (D_SO, model.chi_st_on), (D_ON, model.chi_on_off), (D_CAP, cap)];
    for (d, theta) in thresholds {
        let th = theta as f64;
        // chi >= θ d
        rows.push([-1.0, 0.0, 0.0, 0.0], [0.0; 2], 0.0, unit7(d, th), 0.0);
        // chi <= θ - 1 + (cap - θ + 1) d
        rows.push([1.0, 0.0, 0.0, 0.0], [0.0; 2], 0.0, unit7(d, -(capf - th + 1.0)), th - 1.0);
    }

    // transitions as conjunctions
    let conj: [(usize, usize, Option<usize>, usize); 3] =
        [(T_OS, X_OFF, Some(BETA), D_OS), (T_SO, X_ST, None, D_SO), (T_ON, X_ON, Some(BETA), D_ON)];
    for (t, x, beta, d) in conj {
        let mut ex = [0.0; 4];
        ex[x] = -1.0;
        rows.push(ex, [0.0; 2], 0.0, unit7(t, 1.0), 0.0);
        let mut ed = unit7(t, 1.0);
        ed[d] = -1.0;
        rows.push([0.0; 4], [0.0; 2], 0.0, ed, 0.0);
        let mut ex_lo = [0.0; 4];
        ex_lo[x] = 1.0;
        let mut ed_lo = unit7(t, -1.0);
        ed_lo[d] = 1.0;
        let mut eu_lo = [0.0; 2];
        let mut n_terms = 2.0;
        if let Some(b) = beta {
            let mut eu = [0.0; 2];
            eu[b] = -1.0;
            rows.push([0.0; 4], eu, 0.0, unit7(t, 1.0), 0.0);
            eu_lo[b] = 1.0;
            n_terms = 3.0;
        }
        // t >= x + d (+ β) - (terms - 1)
        rows.push(ex_lo, eu_lo, 0.0, ed_lo, n_terms - 1.0);
    }

    // z = (1 - T)(chi + 1 - d_cap), T = t_OS + t_SO + t_ON
    let mut t_all = [0.0; 7];
    t_all[T_OS] = 1.0;
    t_all[T_SO] = 1.0;
    t_all[T_ON] = 1.0;
    // z <= chi + 1 - d_cap
    let mut ed = [0.0; 7];
    ed[D_CAP] = 1.0;
    rows.push([-1.0, 0.0, 0.0, 0.0], [0.0; 2], 1.0, ed, 1.0);
    // z >= chi + 1 - d_cap - M T
    let mut ed = t_all.map(|v| -v * big_m);
    ed[D_CAP] = -1.0;
    rows.push([1.0, 0.0, 0.0, 0.0], [0.0; 2], -1.0, ed, -1.0);
    // z <= M (1 - T)
    rows.push([0.0; 4], [0.0; 2], 1.0, t_all.map(|v| v * big_m), big_m);
    // z >= 0
    rows.push([0.0; 4], [0.0; 2], -1.0, [0.0; 7], 0.0);

    // steam draw only when ON
    rows.push([0.0, 0.0, 0.0, -model.q_s_max], [0.0, 1.0], 0.0, [0.0; 7], 0.0);
    rows.push([0.0, 0.0, 0.0, model.q_s_min], [0.0, -1.0], 0.0, [0.0; 7], 0.0);
    // β is a binary input
    rows.push([0.0; 4], [1.0, 0.0], 0.0, [0.0; 7], 1.0);
    rows.push([0.0; 4], [-1.0, 0.0], 0.0, [0.0; 7], 0.0);

    let m = rows.aff.len();
    let e_x = DMatrix::from_fn(m, N_X, |r, c| rows.ex[r][c]);
    let e_u = DMatrix::from_fn(m, N_U, |r, c| rows.eu[r][c]);
    let e_z = DMatrix::from_fn(m, N_Z, |r, _| rows.ez[r]);
    let e_delta = DMatrix::from_fn(m, N_DELTA, |r, c| rows.ed[r][c]);
    let e_aff = DVector::from_vec(rows.aff);

    let mut a = DMatrix::zeros(N_X, N_X);
    a[(X_OFF, X_OFF)] = 1.0;
    a[(X_ST, X_ST)] = 1.0;
    a[(X_ON, X_ON)] = 1.0;
    let b_u = DMatrix::zeros(N_X, N_U);
    let mut b_z = DMatrix::zeros(N_X, N_Z);
    b_z[(CHI, 0)] = 1.0;
    let mut b_delta = DMatrix::zeros(N_X, N_DELTA);
    b_delta[(X_OFF, T_OS)] = -1.0;
    b_delta[(X_OFF, T_ON)] = 1.0;
    b_delta[(X_ST, T_OS)] = 1.0;
    b_delta[(X_ST, T_SO)] = -1.0;
    b_delta[(X_ON, T_SO)] = 1.0;
    b_delta[(X_ON, T_ON)] = -1.0;

    let mut c = DMatrix::zeros(1, N_X);
    c[(0, X_ST)] = model.gamma_st;
    c[(0, X_ON)] = model.gamma_on;
    let mut d_u = DMatrix::zeros(1, N_U);
    d_u[(0, Q_S)] = model.g;

    MLDModel {
        a,
        b_u,
        b_z,
        b_delta,
        c,
        d_u,
        d_z: DMatrix::zeros(1, N_Z),
        d_delta: DMatrix::zeros(1, N_DELTA),
        e_x,
        e_u,
        e_z,
        e_delta,
        e_aff,
        big_m,
        cap,
        thresholds: [model.chi_off_st, model.chi_st_on, model.chi_on_off],
    }
}

/// Auxiliary variables of one MLD step.
#[derive(Debug, Clone, PartialEq)]
pub struct Completion {
    pub delta: DVector<f64>,
    pub z: DVector<f64>,
}

impl MLDModel {
    pub fn num_rows(&self) -> usize {
        self.e_aff.len()
    }

    pub fn encode_state(state: HybridState) -> DVector<f64> {
        let oh = state.mode.one_hot();
        DVector::from_vec(vec![state.chi as f64, oh[0], oh[1], oh[2]])
    }

    pub fn decode_state(x: &DVector<f64>) -> HybridState {
        let mode = if x[idx::X_ON] > 0.5 {
            Mode::On
        } else if x[idx::X_ST] > 0.5 {
            Mode::St
        } else {
            Mode::Off
        };
        HybridState { mode, chi: x[idx::CHI].round().max(0.0) as u32 }
    }

    fn completion_problem(&self, x: &DVector<f64>, u: &DVector<f64>, sign: f64) -> MipProblem {
        let nd = idx::N_DELTA;
        let n = nd + idx::N_Z;
        let mut p = Problem::new(n);
        for j in 0..nd {
            p.cost[j] = sign * (1.0 + j as f64);
            p.lower[j] = 0.0;
            p.upper[j] = 1.0;
        }
        p.cost[nd] = sign;
        let m = self.num_rows();
        let mut a = DMatrix::zeros(m, n);
        a.view_mut((0, 0), (m, nd)).copy_from(&self.e_delta);
        a.view_mut((0, nd), (m, idx::N_Z)).copy_from(&self.e_z);
        let rhs = &self.e_aff - &self.e_x * x - &self.e_u * u;
        p.a_in = a;
        p.b_in = rhs;
        MipProblem { core: p, binaries: (0..nd).collect() }
    }

    /// Solves the inequality system for `(δ, z)` given `(x, u)`. With
    /// `check_unique`, the system is also solved with the opposite objective
    /// and both completions must agree.
    pub fn complete(&self, x: &DVector<f64>, u: &DVector<f64>, check_unique: bool) -> Result<Option<Completion>, HybridError> {
        let first = solve_mip(&self.completion_problem(x, u, 1.0), MipOptions::default())?;
        if first.status != MipStatus::Optimal {
            return Ok(None);
        }
        let sol = first.x.expect("optimal MIP has a point");
        let c = Completion {
            delta: sol.rows(0, idx::N_DELTA).into_owned(),
            z: sol.rows(idx::N_DELTA, idx::N_Z).into_owned(),
        };
        if check_unique {
            let second = solve_mip(&self.completion_problem(x, u, -1.0), MipOptions::default())?;
            let other = second.x.expect("feasible system stays feasible");
            if (other - sol).amax() > 1e-7 {
                return Ok(None);
            }
        }
        Ok(Some(c))
    }

    pub fn next_state(&self, x: &DVector<f64>, u: &DVector<f64>, c: &Completion) -> DVector<f64> {
        &self.a * x + &self.b_u * u + &self.b_z * &c.z + &self.b_delta * &c.delta
    }

    pub fn output(&self, x: &DVector<f64>, u: &DVector<f64>, c: &Completion) -> f64 {
        (&self.c * x + &self.d_u * u + &self.d_z * &c.z + &self.d_delta * &c.delta)[(0, 0)]
    }

    /// One MLD step via the completion solver: `(next state, output)`, or
    /// `None` when the point is not admissible.
    pub fn step(&self, state: HybridState, beta: bool, q_s: f64) -> Result<Option<(HybridState, f64)>, HybridError> {
        let x = Self::encode_state(HybridState { mode: state.mode, chi: state.chi.min(self.cap) });
        let u = DVector::from_vec(vec![if beta { 1.0 } else { 0.0 }, q_s]);
        let Some(c) = self.complete(&x, &u, false)? else {
            return Ok(None);
        };
        let xn = self.next_state(&x, &u, &c);
        Ok(Some((Self::decode_state(&xn), self.output(&x, &u, &c))))
    }

    /// Exhaustive comparison against the automaton over every counter value,
    /// mode and command, at both steam-draw bounds when ON.
    pub fn self_test(&self, model: &HybridGenModel) -> Result<(), HybridError> {
        for chi in 0..=self.cap {
            for mode in [Mode::Off, Mode::St, Mode::On] {
                for beta in [false, true] {
                    let draws: &[f64] = if mode == Mode::On { &[model.q_s_min, model.q_s_max] } else { &[0.0] };
                    for &q_s in draws {
                        let s = HybridState { mode, chi };
                        let expected = dha_step(model, s, beta, q_s)?;
                        let x = Self::encode_state(s);
                        let u = DVector::from_vec(vec![if beta { 1.0 } else { 0.0 }, q_s]);
                        let ok = match self.complete(&x, &u, true)? {
                            Some(c) => {
                                let xn = self.next_state(&x, &u, &c);
                                Self::decode_state(&xn) == expected.0 && (self.output(&x, &u, &c) - expected.1).abs() < 1e-9
                            }
                            None => false,
                        };
                        if !ok {
                            return Err(HybridError::BigMTooSmall { chi, mode, beta });
                        }
                    }
                }
            }
        }
        Ok(())
    }

    /// Plain-text dump: for each matrix a `name rows cols` header followed by
    /// its rows.
    pub fn dump(&self) -> String {
        let mut s = String::new();
        let mats: [(&str, &DMatrix<f64>); 12] = [
            ("A", &self.a),
            ("B_u", &self.b_u),
            ("B_z", &self.b_z),
            ("B_delta", &self.b_delta),
            ("C", &self.c),
            ("D_u", &self.d_u),
            ("D_z", &self.d_z),
            ("D_delta", &self.d_delta),
            ("E_x", &self.e_x),
            ("E_u", &self.e_u),
            ("E_z", &self.e_z),
            ("E_delta", &self.e_delta),
        ];
        for (name, m) in mats {
            writeln!(s, "{name} {} {}", m.nrows(), m.ncols()).unwrap();
            for r in 0..m.nrows() {
                let row: Vec<String> = m.row(r).iter().map(|v| format!("{v}")).collect();
                writeln!(s, "{}", row.join(" ")).unwrap();
            }
        }
        writeln!(s, "E_aff {} 1", self.e_aff.len()).unwrap();
        for v in self.e_aff.iter() {
            writeln!(s, "{v}").unwrap();
        }
        s
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn model() -> HybridGenModel {
        HybridGenModel { chi_off_st: 2, chi_st_on: 1, chi_on_off: 3, g: 0.05, gamma_on: 0.002, gamma_st: 0.01, q_s_min: 0.3, q_s_max: 1.2 }
    }

    #[test]
    fn off_to_start_up_then_output() {
        let m = model();
        let (s, q) = dha_step(&m, HybridState { mode: Mode::Off, chi: 2 }, true, 0.0).unwrap();
        assert_eq!(s, HybridState { mode: Mode::St, chi: 0 });
        assert_eq!(q, 0.0);
        let (_, q) = dha_step(&m, s, false, 0.0).unwrap();
        assert_eq!(q, m.gamma_st);
    }

    #[test]
    fn rejects_draw_outside_production() {
        let m = model();
        assert!(dha_step(&m, HybridState { mode: Mode::St, chi: 0 }, false, 0.5).is_err());
    }

    #[test]
    fn mld_passes_self_test() {
        let m = model();
        let mld = to_mld(&m).unwrap();
        assert!(mld.dump().starts_with("A 4 4\n"));
    }
}
