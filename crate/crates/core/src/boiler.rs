//! Lumped water-tube boiler: pressure and water-volume dynamics driven by
//! gas, feed-water and steam flows, with saturated-steam properties taken
//! from a shipped table.
//!
//! Units: bar, m^3, kg, kg/s, kJ, kJ/kg, K, s.

use std::str::FromStr;
use std::sync::{Arc, OnceLock};

use serde::{Deserialize, Serialize};

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum BoilerError {
    #[error("pressure {0} bar outside the property table")]
    PressureOutOfTable(f64),
    #[error("energy-capacity coefficient is not positive ({0})")]
    NonPositivePhi(f64),
    #[error("integration left the admissible region at p = {p} bar, V_w = {v_w} m^3")]
    IntegrationDiverged { p: f64, v_w: f64 },
    #[error("water volume {v_w} m^3 outside [0, {v_t}]")]
    VolumeOutOfRange { v_w: f64, v_t: f64 },
    #[error("invalid boiler parameters: {0}")]
    InvalidParams(String),
    #[error("property table line {line}: {msg}")]
    TableParse { line: usize, msg: String },
}

/// Energy of `1 bar * 1 m^3` in kJ.
pub const KJ_PER_BAR_M3: f64 = 100.0;

const COLUMNS: [&str; 11] = [
    "p_bar", "rho_w", "rho_s", "h_w", "h_s", "T_s", "d_rho_w", "d_rho_s", "d_h_w", "d_h_s", "d_T_s",
];

/// Saturation properties and their pressure derivatives at one pressure.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SatProps {
    pub rho_w: f64,
    pub rho_s: f64,
    pub h_w: f64,
    pub h_s: f64,
    pub t_s: f64,
    pub d_rho_w: f64,
    pub d_rho_s: f64,
    pub d_h_w: f64,
    pub d_h_s: f64,
    pub d_t_s: f64,
}

impl SatProps {
    fn from_row(r: &[f64; 10]) -> Self {
        Self {
            rho_w: r[0],
            rho_s: r[1],
            h_w: r[2],
            h_s: r[3],
            t_s: r[4],
            d_rho_w: r[5],
            d_rho_s: r[6],
            d_h_w: r[7],
            d_h_s: r[8],
            d_t_s: r[9],
        }
    }
}

/// Saturated water/steam table on a strictly increasing pressure grid.
#[derive(Debug, Clone, PartialEq)]
pub struct SaturationTable {
    pub pressure: Vec<f64>,
    /// Per grid point: rho_w, rho_s, h_w, h_s, T_s and the five derivatives.
    pub rows: Vec<[f64; 10]>,
}

impl FromStr for SaturationTable {
    type Err = BoilerError;

    fn from_str(text: &str) -> Result<Self, Self::Err> {
        let err = |line: usize, msg: &str| BoilerError::TableParse { line, msg: msg.to_string() };
        let mut header: Option<Vec<usize>> = None;
        let mut pressure = Vec::new();
        let mut rows = Vec::new();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let fields: Vec<&str> = line.split_whitespace().collect();
            let Some(order) = &header else {
                // map each expected column to its position in the file
                let mut order = Vec::with_capacity(COLUMNS.len());
                for c in COLUMNS {
                    let pos = fields.iter().position(|f| *f == c).ok_or_else(|| err(i + 1, &format!("missing column {c}")))?;
                    order.push(pos);
                }
                header = Some(order);
                continue;
            };
            let vals: Result<Vec<f64>, _> = fields.iter().map(|f| f.parse::<f64>()).collect();
            let vals = vals.map_err(|e| err(i + 1, &e.to_string()))?;
            if vals.len() < COLUMNS.len() {
                return Err(err(i + 1, "too few columns"));
            }
            pressure.push(vals[order[0]]);
            let mut row = [0.0; 10];
            for (k, slot) in row.iter_mut().enumerate() {
                *slot = vals[order[k + 1]];
            }
            rows.push(row);
        }
        let table = SaturationTable { pressure, rows };
        table.validate()?;
        Ok(table)
    }
}

impl SaturationTable {
    /// Table shipped with the crate (1 to 30 bar).
    pub fn shipped() -> Arc<SaturationTable> {
        static TABLE: OnceLock<Arc<SaturationTable>> = OnceLock::new();
        TABLE
            .get_or_init(|| {
                Arc::new(
                    include_str!("../data/saturated_steam.txt")
                        .parse()
                        .expect("shipped saturation table is valid"),
                )
            })
            .clone()
    }

    pub fn validate(&self) -> Result<(), BoilerError> {
        let bad = |msg: String| BoilerError::TableParse { line: 0, msg };
        if self.pressure.len() < 2 || self.pressure.len() != self.rows.len() {
            return Err(bad("need at least two grid points".into()));
        }
        if self.pressure.windows(2).any(|w| w[1] <= w[0]) {
            return Err(bad("pressure grid not strictly increasing".into()));
        }
        for (p, r) in self.pressure.iter().zip(&self.rows) {
            if r.iter().any(|v| !v.is_finite()) {
                return Err(bad(format!("non-finite entry at {p} bar")));
            }
            if r[0] <= r[1] {
                return Err(bad(format!("rho_w <= rho_s at {p} bar")));
            }
            if r[3] <= r[2] {
                return Err(bad(format!("h_s <= h_w at {p} bar")));
            }
        }
        Ok(())
    }

    pub fn p_min(&self) -> f64 {
        self.pressure[0]
    }

    pub fn p_max(&self) -> f64 {
        *self.pressure.last().unwrap()
    }

    /// Two-point table joining the end rows, with derivative columns set to
    /// the chord slopes. Properties are then affine in pressure, so the
    /// dynamics are smooth over the whole range.
    pub fn chord(&self) -> SaturationTable {
        let (a, b) = (self.rows[0], *self.rows.last().unwrap());
        let span = self.p_max() - self.p_min();
        let (mut ra, mut rb) = (a, b);
        for k in 0..5 {
            let slope = (b[k] - a[k]) / span;
            ra[k + 5] = slope;
            rb[k + 5] = slope;
        }
        SaturationTable { pressure: vec![self.p_min(), self.p_max()], rows: vec![ra, rb] }
    }

    /// Piecewise-linear interpolation of values and stored derivatives.
    pub fn eval(&self, p: f64) -> Result<SatProps, BoilerError> {
        if !(p >= self.p_min() && p <= self.p_max()) {
            return Err(BoilerError::PressureOutOfTable(p));
        }
        let n = self.pressure.len();
        let i = self.pressure.partition_point(|&q| q <= p).clamp(1, n - 1) - 1;
        let (p0, p1) = (self.pressure[i], self.pressure[i + 1]);
        let w = (p - p0) / (p1 - p0);
        let mut row = [0.0; 10];
        for (k, slot) in row.iter_mut().enumerate() {
            *slot = (1.0 - w) * self.rows[i][k] + w * self.rows[i + 1][k];
        }
        Ok(SatProps::from_row(&row))
    }
}

fn shipped_table() -> Arc<SaturationTable> {
    SaturationTable::shipped()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoilerParams {
    /// Burner efficiency.
    pub eta: f64,
    /// Gas low heat value, kJ/kg.
    pub lambda_h: f64,
    /// Total tube volume, m^3.
    pub v_t: f64,
    /// Metal mass, kg.
    pub m_t: f64,
    /// Metal specific heat, kJ/(kg K).
    pub c_p: f64,
    #[serde(skip, default = "shipped_table")]
    pub table: Arc<SaturationTable>,
}

impl BoilerParams {
    /// Illustrative mid-size water-tube unit.
    pub fn illustrative() -> Self {
        Self { eta: 0.9, lambda_h: 47_000.0, v_t: 1.0, m_t: 3_000.0, c_p: 0.5, table: SaturationTable::shipped() }
    }

    pub fn validate(&self) -> Result<(), BoilerError> {
        let positive = [("eta", self.eta), ("lambda_h", self.lambda_h), ("v_t", self.v_t), ("m_t", self.m_t), ("c_p", self.c_p)];
        for (name, v) in positive {
            if !(v > 0.0 && v.is_finite()) {
                return Err(BoilerError::InvalidParams(format!("{name} must be positive")));
            }
        }
        if self.eta > 1.0 {
            return Err(BoilerError::InvalidParams("eta must not exceed 1".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BoilerState {
    /// Pressure, bar.
    pub p: f64,
    /// Water volume, m^3.
    pub v_w: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BoilerInputs {
    pub q_f: f64,
    pub q_g: f64,
    pub q_s: f64,
    /// Feed-water enthalpy, kJ/kg.
    pub h_f: f64,
}

impl BoilerInputs {
    /// Net water accumulation `q_f - q_s`.
    pub fn q_w(&self) -> f64 {
        self.q_f - self.q_s
    }
}

fn check_state(state: &BoilerState, params: &BoilerParams) -> Result<SatProps, BoilerError> {
    let props = params.table.eval(state.p)?;
    if !(state.v_w >= 0.0 && state.v_w <= params.v_t) {
        return Err(BoilerError::VolumeOutOfRange { v_w: state.v_w, v_t: params.v_t });
    }
    Ok(props)
}

/// Energy-capacity coefficient, kJ/bar.
pub fn phi_from(props: &SatProps, state: &BoilerState, params: &BoilerParams) -> f64 {
    let v_w = state.v_w;
    let v_s = params.v_t - v_w;
    let s = props;
    v_s * (s.h_s * s.d_rho_s + s.rho_s * s.d_h_s)
        + v_w * (s.h_w * s.d_rho_w + s.rho_w * s.d_h_w)
        + params.v_t * KJ_PER_BAR_M3
        + params.m_t * params.c_p * s.d_t_s
        - (s.d_rho_w * v_w + s.d_rho_s * v_s) * (s.rho_w * s.h_w - s.rho_s * s.h_s) / (s.rho_w - s.rho_s)
}

pub fn eval_phi(state: &BoilerState, params: &BoilerParams) -> Result<f64, BoilerError> {
    let props = check_state(state, params)?;
    let phi = phi_from(&props, state, params);
    if !(phi > 0.0) {
        return Err(BoilerError::NonPositivePhi(phi));
    }
    Ok(phi)
}

/// `(dp/dt [bar/s], dV_w/dt [m^3/s])`.
pub fn derivatives(state: &BoilerState, inputs: &BoilerInputs, params: &BoilerParams) -> Result<(f64, f64), BoilerError> {
    let s = check_state(state, params)?;
    let phi = phi_from(&s, state, params);
    if !(phi > 0.0) {
        return Err(BoilerError::NonPositivePhi(phi));
    }
    let heat = params.eta * params.lambda_h * inputs.q_g + inputs.q_f * (inputs.h_f - s.h_w) - inputs.q_s * (s.h_s - s.h_w);
    let dp = heat / phi;
    let v_s = params.v_t - state.v_w;
    let dv = (s.d_rho_w * state.v_w + s.d_rho_s * v_s) / (s.rho_w - s.rho_s) * dp;
    Ok((dp, dv))
}

/// Classical RK4 step of length `tau` with inputs held constant.
pub fn step(state: &BoilerState, inputs: &BoilerInputs, params: &BoilerParams, tau: f64) -> Result<BoilerState, BoilerError> {
    assert!(tau > 0.0, "step length must be positive");
    let diverged = |s: &BoilerState| BoilerError::IntegrationDiverged { p: s.p, v_w: s.v_w };
    let eval = |s: &BoilerState| -> Result<(f64, f64), BoilerError> {
        derivatives(s, inputs, params).map_err(|e| match e {
            BoilerError::PressureOutOfTable(_) | BoilerError::VolumeOutOfRange { .. } => diverged(s),
            other => other,
        })
    };
    let at = |k: (f64, f64), h: f64| BoilerState { p: state.p + h * k.0, v_w: state.v_w + h * k.1 };
    let k1 = derivatives(state, inputs, params)?;
    let k2 = eval(&at(k1, 0.5 * tau))?;
    let k3 = eval(&at(k2, 0.5 * tau))?;
    let k4 = eval(&at(k3, tau))?;
    let next = BoilerState {
        p: state.p + tau / 6.0 * (k1.0 + 2.0 * k2.0 + 2.0 * k3.0 + k4.0),
        v_w: state.v_w + tau / 6.0 * (k1.1 + 2.0 * k2.1 + 2.0 * k3.1 + k4.1),
    };
    if check_state(&next, params).is_err() || !next.p.is_finite() {
        return Err(diverged(&next));
    }
    Ok(next)
}

/// Gas flow balancing the energy equation at `state` for the given flows.
pub fn balancing_gas_flow(state: &BoilerState, q_f: f64, q_s: f64, h_f: f64, params: &BoilerParams) -> Result<f64, BoilerError> {
    let s = params.table.eval(state.p)?;
    Ok((q_s * (s.h_s - s.h_w) - q_f * (h_f - s.h_w)) / (params.eta * params.lambda_h))
}
