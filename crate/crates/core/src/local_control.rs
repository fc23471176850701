//! Embedded low-level loop of one boiler: PI pressure regulator acting on
//! the gas flow and an open-loop feed-water compensator. Seen from above the
//! closed loop maps a steam draw `q_s` to a gas consumption `q_g`.

use serde::{Deserialize, Serialize};

use crate::boiler::{self, BoilerError, BoilerInputs, BoilerParams, BoilerState};

/// Relative pressure band `|p - p_sp| / p_sp` considered regulated.
pub const PRESSURE_BAND: f64 = 0.02;

/// Time after a steam-draw change within which the pressure must be back
/// inside [`PRESSURE_BAND`], s.
pub const TRANSIENT_WINDOW: f64 = 900.0;

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum LocalControlError {
    #[error(transparent)]
    Plant(#[from] BoilerError),
    #[error("no steady state reached for q_s = {q_s} kg/s")]
    NoSettling { q_s: f64 },
    #[error("invalid controller configuration: {0}")]
    InvalidConfig(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PIConfig {
    /// (kg/s)/bar
    pub k_p: f64,
    /// (kg/s)/(bar s)
    pub k_i: f64,
    /// Pressure set-point, bar.
    pub p_sp: f64,
    /// Gas-flow actuator limits, kg/s.
    pub u_min: f64,
    pub u_max: f64,
}

impl PIConfig {
    /// Pole placement on the pressure loop linearized at `p_sp`.
    ///
    /// Around the set-point `dp/dt ≈ a q_g + d` with `a = η λ_H / φ`; the PI
    /// then gives the characteristic polynomial `s² + a k_p s + a k_i`, matched
    /// to `s² + 2 ζ ω_n s + ω_n²`.
    pub fn tune(
        params: &BoilerParams,
        p_sp: f64,
        v_w: f64,
        zeta: f64,
        omega_n: f64,
        u_min: f64,
        u_max: f64,
    ) -> Result<Self, LocalControlError> {
        let phi = boiler::eval_phi(&BoilerState { p: p_sp, v_w }, params)?;
        let a = params.eta * params.lambda_h / phi;
        let cfg = Self { k_p: 2.0 * zeta * omega_n / a, k_i: omega_n * omega_n / a, p_sp, u_min, u_max };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), LocalControlError> {
        if !(self.k_p >= 0.0 && self.k_i >= 0.0) {
            return Err(LocalControlError::InvalidConfig("PI gains must be nonnegative".into()));
        }
        if !(self.u_min < self.u_max) || self.u_min < 0.0 {
            return Err(LocalControlError::InvalidConfig("need 0 <= u_min < u_max".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CompensatorConfig {
    /// Feed-water command per unit steam demand.
    pub gain: f64,
}

impl Default for CompensatorConfig {
    fn default() -> Self {
        Self { gain: 1.0 }
    }
}

/// Flows applied during one low-level step.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StepReport {
    pub q_g: f64,
    pub q_f: f64,
    pub q_s: f64,
    /// `q_f - q_s`.
    pub q_w: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ClosedLoopBoiler {
    pub state: BoilerState,
    /// PI integrator state, bar s.
    pub integral: f64,
    pub pi: PIConfig,
    pub compensator: CompensatorConfig,
    pub params: BoilerParams,
    /// Low-level period, s.
    pub tau: f64,
}

impl ClosedLoopBoiler {
    pub fn new(
        state: BoilerState,
        pi: PIConfig,
        compensator: CompensatorConfig,
        params: BoilerParams,
        tau: f64,
    ) -> Result<Self, LocalControlError> {
        pi.validate()?;
        params.validate()?;
        if compensator.gain <= 0.0 {
            return Err(LocalControlError::InvalidConfig("compensator gain must be positive".into()));
        }
        if !(tau > 0.0) {
            return Err(LocalControlError::InvalidConfig("tau must be positive".into()));
        }
        Ok(Self { state, integral: 0.0, pi, compensator, params, tau })
    }

    /// Pressure at set-point with the integrator preloaded for a steady draw `q_s`.
    pub fn at_steady_state(mut self, q_s: f64, h_f: f64) -> Result<Self, LocalControlError> {
        self.state.p = self.pi.p_sp;
        let q_f = self.compensator.gain * q_s;
        let q_g = boiler::balancing_gas_flow(&self.state, q_f, q_s, h_f, &self.params)?;
        self.integral = if self.pi.k_i > 0.0 { q_g / self.pi.k_i } else { 0.0 };
        Ok(self)
    }

    /// Saturated PI output and the unsaturated value, for the current state.
    fn pi_output(&self) -> (f64, f64, f64) {
        let e = self.pi.p_sp - self.state.p;
        let v = self.pi.k_p * e + self.pi.k_i * self.integral;
        (v.clamp(self.pi.u_min, self.pi.u_max), v, e)
    }

    /// Gas flow the regulator would command now.
    pub fn commanded_gas(&self) -> f64 {
        self.pi_output().0
    }

    /// One low-level period with steam draw `q_s` and feed-water enthalpy `h_f`.
    pub fn step(&mut self, q_s: f64, h_f: f64) -> Result<StepReport, LocalControlError> {
        assert!(q_s >= 0.0, "steam draw must be nonnegative");
        let q_f = self.compensator.gain * q_s;
        let (q_g, v, e) = self.pi_output();
        // conditional integration
        let winding_up = (v > self.pi.u_max && e > 0.0) || (v < self.pi.u_min && e < 0.0);
        let inputs = BoilerInputs { q_f, q_g, q_s, h_f };
        self.state = boiler::step(&self.state, &inputs, &self.params, self.tau)?;
        if !winding_up {
            self.integral += e * self.tau;
        }
        Ok(StepReport { q_g, q_f, q_s, q_w: inputs.q_w() })
    }

    pub fn pressure_error(&self) -> f64 {
        (self.state.p - self.pi.p_sp).abs() / self.pi.p_sp
    }
}

/// Functional form of [`ClosedLoopBoiler::step`].
pub fn cl_step(sys: &ClosedLoopBoiler, q_s: f64, h_f: f64) -> Result<(f64, ClosedLoopBoiler), LocalControlError> {
    let mut next = sys.clone();
    let r = next.step(q_s, h_f)?;
    Ok((r.q_g, next))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SettleOptions {
    /// Longest simulated time per grid point, s.
    pub horizon: f64,
    /// Window over which `q_g` must stay flat, s.
    pub window: f64,
    /// Relative `q_g` variation tolerated inside the window.
    pub tolerance: f64,
}

impl Default for SettleOptions {
    fn default() -> Self {
        Self { horizon: 20_000.0, window: 300.0, tolerance: 1e-6 }
    }
}

/// Steady-state `(q_s, q_g)` pairs of the closed loop along `grid`.
pub fn static_map(
    template: &ClosedLoopBoiler,
    grid: &[f64],
    h_f: f64,
    opts: SettleOptions,
) -> Result<Vec<(f64, f64)>, LocalControlError> {
    let window_steps = (opts.window / template.tau).ceil().max(1.0) as usize;
    let max_steps = (opts.horizon / template.tau).ceil() as usize;
    let mut sys = template.clone();
    let mut out = Vec::with_capacity(grid.len());
    for &q_s in grid {
        let mut history: Vec<f64> = Vec::with_capacity(max_steps);
        let mut settled = None;
        for _ in 0..max_steps {
            history.push(sys.step(q_s, h_f)?.q_g);
            if history.len() >= window_steps {
                let tail = &history[history.len() - window_steps..];
                let lo = tail.iter().copied().fold(f64::INFINITY, f64::min);
                let hi = tail.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                if hi - lo <= opts.tolerance * hi.abs().max(1e-9) && sys.pressure_error() < PRESSURE_BAND * 1e-3 {
                    settled = Some(*tail.last().unwrap());
                    break;
                }
            }
        }
        match settled {
            Some(q_g) => out.push((q_s, q_g)),
            None => return Err(LocalControlError::NoSettling { q_s }),
        }
    }
    Ok(out)
}

/// Least-squares affine fit `q_g ≈ g q_s + γ`, returning `(g, γ)`.
pub fn affine_fit(pairs: &[(f64, f64)]) -> (f64, f64) {
    let n = pairs.len() as f64;
    let mx = pairs.iter().map(|p| p.0).sum::<f64>() / n;
    let my = pairs.iter().map(|p| p.1).sum::<f64>() / n;
    let sxy: f64 = pairs.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let sxx: f64 = pairs.iter().map(|p| (p.0 - mx).powi(2)).sum();
    let g = if sxx > 0.0 { sxy / sxx } else { 0.0 };
    (g, my - g * mx)
}
