//! Scenario configuration: JSON schema and validation.

use serde::{Deserialize, Serialize};

use crate::boiler::BoilerParams;
use crate::hybrid::{HybridState, Mode};
use crate::uc::UcCosts;

/// Relative tolerance of the integer period ratios.
const RATIO_TOL: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum ConfigError {
    #[error("line {line}, column {column}: {message}")]
    Parse { line: usize, column: usize, message: String },
    #[error("field `{field}`{}: {message}", line.map(|l| format!(" (line {l})")).unwrap_or_default())]
    Schema { field: String, line: Option<usize>, message: String },
}

impl ConfigError {
    pub(crate) fn parse(e: &serde_json::Error) -> Self {
        let text = e.to_string();
        let message = match text.rsplit_once(" at line ") {
            Some((m, _)) => m.to_string(),
            None => text,
        };
        ConfigError::Parse { line: e.line(), column: e.column(), message }
    }
}

fn schema<T>(field: impl Into<String>, message: impl Into<String>) -> Result<T, ConfigError> {
    Err(ConfigError::Schema { field: field.into(), line: None, message: message.into() })
}

/// Line of the first occurrence of the last key of a dotted field path.
fn locate(text: &str, field: &str) -> Option<usize> {
    let key = field.rsplit('.').next()?.split('[').next()?;
    let quoted = format!("\"{key}\"");
    text.lines().position(|l| l.contains(&quoted)).map(|i| i + 1)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Timing {
    /// Low-level period, s.
    pub tau: f64,
    /// Medium-level period, s.
    pub t_m: f64,
    /// High-level period, s.
    pub t_h: f64,
    /// Medium-level horizon, steps.
    pub n_m: usize,
    /// High-level horizon, steps.
    pub n_h: usize,
}

impl Default for Timing {
    fn default() -> Self {
        Self { tau: 5.0, t_m: 60.0, t_h: 1200.0, n_m: 20, n_h: 6 }
    }
}

impl Timing {
    /// Plant steps per medium-level step.
    pub fn plant_steps(&self) -> usize {
        (self.t_m / self.tau).round() as usize
    }

    /// Medium-level steps per high-level step, `μ`.
    pub fn mu(&self) -> usize {
        (self.t_h / self.t_m).round() as usize
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PiSpec {
    /// Pressure set-point, bar.
    pub p_sp: f64,
    pub zeta: f64,
    /// Natural frequency of the pressure loop, rad/s.
    pub omega_n: f64,
    /// Gas actuator range, kg/s.
    pub u_min: f64,
    pub u_max: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HybridSpec {
    pub chi_off_st: u32,
    pub chi_st_on: u32,
    pub chi_on_off: u32,
    /// Standby fuel flow, kg/s.
    pub gamma_st: f64,
    /// Admissible steam draw when ON, kg/s.
    pub q_s_min: f64,
    pub q_s_max: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BoilerSpec {
    pub name: String,
    pub params: BoilerParams,
    pub pi: PiSpec,
    #[serde(default = "one")]
    pub compensator_gain: f64,
    /// Initial water volume, m^3.
    pub v_w0: f64,
    pub hybrid: HybridSpec,
    pub initial_mode: Mode,
    #[serde(default)]
    pub initial_chi: u32,
    /// Upper fuel bound as a multiple of the fuel at `q_s_max`.
    #[serde(default = "y_margin")]
    pub y_margin: f64,
}

impl BoilerSpec {
    pub fn initial_state(&self) -> HybridState {
        HybridState { mode: self.initial_mode, chi: self.initial_chi }
    }
}

fn one() -> f64 {
    1.0
}

fn y_margin() -> f64 {
    1.1
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Identification {
    /// Number of random excitation levels per boiler.
    pub levels: usize,
    /// Hold time of each level, s.
    pub hold: f64,
    /// Fixed `[nf, nb]` for every unit; selected per unit when absent.
    #[serde(default)]
    pub orders: Option<[usize; 2]>,
}

impl Default for Identification {
    fn default() -> Self {
        Self { levels: 12, hold: 1200.0, orders: None }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Weights {
    pub t: f64,
    pub q_dx: f64,
    pub q_eps: f64,
    pub r: f64,
}

impl Default for Weights {
    fn default() -> Self {
        Self { t: 1e4, q_dx: 1.0, q_eps: 100.0, r: 0.01 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EnsembleSpec {
    /// Per-unit steam rate bound per medium-level step, kg/s.
    pub du_max: f64,
    #[serde(default)]
    pub weights: Weights,
    #[serde(default = "rpi_eps")]
    pub rpi_eps: f64,
    #[serde(default = "inflation")]
    pub inflation: f64,
    #[serde(default = "samples")]
    pub samples: usize,
    /// Consecutive infeasible steps tolerated by holding the last input.
    #[serde(default = "max_hold")]
    pub max_hold: usize,
    /// Fallback steps before a transition is reported as stalled.
    #[serde(default = "max_transition")]
    pub max_transition: usize,
    /// Distance of the planned steam draws from the unit draw limits, kg/s.
    #[serde(default = "backoff")]
    pub backoff: f64,
}

fn backoff() -> f64 {
    0.12
}

fn rpi_eps() -> f64 {
    0.05
}

fn inflation() -> f64 {
    1.1
}

fn samples() -> usize {
    20_000
}

fn max_hold() -> usize {
    5
}

fn max_transition() -> usize {
    30
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct UcSpec {
    pub gap_tolerance: f64,
    pub node_cap: usize,
}

impl Default for UcSpec {
    fn default() -> Self {
        Self { gap_tolerance: 1e-6, node_cap: 50_000 }
    }
}

/// Total steam demand.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum DemandSpec {
    /// `[start time s, value kg/s]` pairs; each value holds until the next start.
    Piecewise { steps: Vec<(f64, f64)> },
    /// One value per high-level period; the last value holds.
    Series { values: Vec<f64> },
}

impl DemandSpec {
    pub fn at(&self, t: f64, t_h: f64) -> f64 {
        match self {
            DemandSpec::Piecewise { steps } => {
                let mut v = steps[0].1;
                for &(start, value) in steps {
                    if start <= t + 1e-9 {
                        v = value;
                    }
                }
                v
            }
            DemandSpec::Series { values } => {
                let h = (t / t_h + 1e-9).floor() as usize;
                values[h.min(values.len() - 1)]
            }
        }
    }

    fn is_empty(&self) -> bool {
        match self {
            DemandSpec::Piecewise { steps } => steps.is_empty(),
            DemandSpec::Series { values } => values.is_empty(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    pub seed: u64,
    /// Simulated time, s.
    pub duration: f64,
    #[serde(default)]
    pub timing: Timing,
    /// Feed-water enthalpy, kJ/kg.
    pub h_f: f64,
    pub boilers: Vec<BoilerSpec>,
    #[serde(default)]
    pub identification: Identification,
    pub ensemble: EnsembleSpec,
    pub costs: UcCosts,
    #[serde(default)]
    pub uc: UcSpec,
    pub demand: DemandSpec,
}

fn integer_ratio(field: &str, num: f64, den: f64) -> Result<(), ConfigError> {
    let r = num / den;
    if !(r >= 1.0) || (r - r.round()).abs() > RATIO_TOL * r {
        return schema(field, format!("ratio {num} / {den} = {r} must be a positive integer"));
    }
    Ok(())
}

fn positive(field: &str, v: f64) -> Result<(), ConfigError> {
    if !(v > 0.0 && v.is_finite()) {
        return schema(field, format!("must be positive, got {v}"));
    }
    Ok(())
}

impl ScenarioConfig {
    /// Parses and validates a JSON document.
    pub fn from_json(text: &str) -> Result<Self, ConfigError> {
        let cfg: Self = serde_json::from_str(text)
            .map_err(|e| ConfigError::parse(&e))?;
        cfg.validate().map_err(|e| match e {
            ConfigError::Schema { line: None, message, field } => {
                ConfigError::Schema { line: locate(text, &field), field, message }
            }
            e => e,
        })?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let t = &self.timing;
        positive("timing.tau", t.tau)?;
        positive("timing.t_m", t.t_m)?;
        positive("timing.t_h", t.t_h)?;
        integer_ratio("timing.t_m", t.t_m, t.tau)?;
        integer_ratio("timing.t_h", t.t_h, t.t_m).or_else(|_| {
            schema("timing.t_h", format!("mu = t_h / t_m = {} must be a positive integer", t.t_h / t.t_m))
        })?;
        if t.n_m < 2 {
            return schema("timing.n_m", "horizon must be at least 2");
        }
        if t.n_h < 1 {
            return schema("timing.n_h", "horizon must be at least 1");
        }
        positive("duration", self.duration)?;
        positive("h_f", self.h_f)?;
        if self.boilers.is_empty() {
            return schema("boilers", "at least one boiler is required");
        }
        if !self.boilers.iter().any(|b| b.initial_mode == Mode::On) {
            return schema("boilers", "at least one boiler must start ON");
        }
        for (i, b) in self.boilers.iter().enumerate() {
            let f = |name: &str| format!("boilers[{i}].{name}");
            b.params.validate().or_else(|e| schema(f("params"), e.to_string()))?;
            positive(&f("pi.p_sp"), b.pi.p_sp)?;
            positive(&f("pi.zeta"), b.pi.zeta)?;
            positive(&f("pi.omega_n"), b.pi.omega_n)?;
            if !(b.pi.u_min >= 0.0 && b.pi.u_min < b.pi.u_max) {
                return schema(f("pi.u_max"), "need 0 <= u_min < u_max");
            }
            positive(&f("compensator_gain"), b.compensator_gain)?;
            if !(b.v_w0 > 0.0 && b.v_w0 < b.params.v_t) {
                return schema(f("v_w0"), "must lie in (0, v_t)");
            }
            let h = &b.hybrid;
            if !(h.q_s_min > 0.0 && h.q_s_min < h.q_s_max && h.q_s_max.is_finite()) {
                return schema(f("hybrid.q_s_max"), "need 0 < q_s_min < q_s_max");
            }
            if !(h.gamma_st >= 0.0) {
                return schema(f("hybrid.gamma_st"), "must be nonnegative");
            }
            if !(self.ensemble.backoff >= 0.0 && 2.0 * self.ensemble.backoff < h.q_s_max - h.q_s_min) {
                return schema("ensemble.backoff", format!("must be nonnegative and leave room in the draw range of boilers[{i}]"));
            }
            if self.ensemble.du_max <= h.q_s_min {
                return schema("ensemble.du_max", format!("must exceed boilers[{i}].hybrid.q_s_min so the unit can start and stop"));
            }
            if !(b.y_margin >= 1.0) {
                return schema(f("y_margin"), "must be at least 1");
            }
        }
        let id = &self.identification;
        if id.levels < 4 {
            return schema("identification.levels", "at least 4 levels are required");
        }
        integer_ratio("identification.hold", id.hold, t.t_m)?;
        if let Some([nf, nb]) = id.orders {
            if nf == 0 || nb == 0 {
                return schema("identification.orders", "orders must be positive");
            }
        }
        let e = &self.ensemble;
        positive("ensemble.du_max", e.du_max)?;
        positive("ensemble.rpi_eps", e.rpi_eps)?;
        if !(e.inflation >= 1.0) {
            return schema("ensemble.inflation", "must be at least 1");
        }
        if e.samples < 100 {
            return schema("ensemble.samples", "at least 100 samples are required");
        }
        let w = &e.weights;
        for (name, v) in [("t", w.t), ("q_dx", w.q_dx), ("q_eps", w.q_eps), ("r", w.r)] {
            positive(&format!("ensemble.weights.{name}"), v)?;
        }
        if !(self.costs.c_gas >= 0.0 && self.costs.c_start >= 0.0 && self.costs.c_slack >= 0.0) {
            return schema("costs", "costs must be nonnegative");
        }
        if !(self.uc.gap_tolerance >= 0.0) || self.uc.node_cap == 0 {
            return schema("uc", "need gap_tolerance >= 0 and node_cap > 0");
        }
        if self.demand.is_empty() {
            return schema("demand", "demand profile is empty");
        }
        let values: Vec<f64> = match &self.demand {
            DemandSpec::Piecewise { steps } => steps.iter().map(|s| s.1).collect(),
            DemandSpec::Series { values } => values.clone(),
        };
        if values.iter().any(|&v| !(v >= 0.0 && v.is_finite())) {
            return schema("demand", "values must be finite and nonnegative");
        }
        if let DemandSpec::Piecewise { steps } = &self.demand {
            if steps.windows(2).any(|w| w[1].0 <= w[0].0) {
                return schema("demand.steps", "start times must increase");
            }
        }
        Ok(())
    }

    /// Demand forecast for the `n_h` periods starting at high-level step `h`.
    pub fn forecast(&self, h: usize) -> Vec<f64> {
        let t_h = self.timing.t_h;
        (h..h + self.timing.n_h).map(|j| self.demand.at(j as f64 * t_h, t_h)).collect()
    }
}
