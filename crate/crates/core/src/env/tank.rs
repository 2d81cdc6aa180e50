use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Physical constants of the upper tank, its pump and its sensors.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TankParams {
    /// Pump speed time constant (s).
    pub tau_p: f64,
    /// Inflow time constant (s).
    pub tau_in: f64,
    /// Outflow time constant (s).
    pub tau_out: f64,
    /// Level sensor time constant (s).
    pub tau_m: f64,
    /// Tank radius (m).
    pub r_tank: f64,
    /// Drain pipe radius (m).
    pub r_pipe: f64,
    /// Outflow coefficient.
    pub f_c: f64,
    /// Inflow at 100 % pump speed (m^3/s).
    pub f_max: f64,
    pub gravity: f64,
    /// Control period (s).
    pub dt: f64,
    /// RK4 substeps per control period.
    pub substeps: usize,
    /// Variance of the additive Gaussian measurement noise (m^2).
    pub noise_variance: f64,
    /// Upper end of the nominal level range (m); used for binning and
    /// setpoint validation.
    pub level_max: f64,
}

impl Default for TankParams {
    fn default() -> Self {
        Self {
            tau_p: 2.0,
            tau_in: 5.0,
            tau_out: 10.0,
            tau_m: 1.0,
            r_tank: 0.25,
            r_pipe: 0.02,
            f_c: 0.6,
            f_max: 5e-3,
            gravity: 9.81,
            dt: 0.5,
            substeps: 5,
            noise_variance: 0.015,
            level_max: 1.0,
        }
    }
}

impl TankParams {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("tau_p", self.tau_p),
            ("tau_in", self.tau_in),
            ("tau_out", self.tau_out),
            ("tau_m", self.tau_m),
            ("r_tank", self.r_tank),
            ("r_pipe", self.r_pipe),
            ("f_max", self.f_max),
            ("gravity", self.gravity),
            ("dt", self.dt),
            ("level_max", self.level_max),
        ];
        for (name, v) in positive {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::Config(format!("tank.{name} must be positive, got {v}")));
            }
        }
        if !(self.f_c >= 0.0 && self.f_c.is_finite()) {
            return Err(Error::Config(format!("tank.f_c must be nonnegative, got {}", self.f_c)));
        }
        if !(self.noise_variance >= 0.0 && self.noise_variance.is_finite()) {
            return Err(Error::Config(format!(
                "tank.noise_variance must be nonnegative, got {}",
                self.noise_variance
            )));
        }
        if self.substeps == 0 {
            return Err(Error::Config("tank.substeps must be at least 1".into()));
        }
        Ok(())
    }

    /// Steady-state outflow through the drain at level `level`.
    pub fn drain_flow(&self, level: f64) -> f64 {
        PI * self.r_pipe.powi(2) * self.f_c * (2.0 * self.gravity * level.max(0.0)).sqrt()
    }

    pub fn tank_area(&self) -> f64 {
        PI * self.r_tank.powi(2)
    }

    /// Settled state holding `level`, with the pump speed that sustains it.
    pub fn equilibrium(&self, level: f64) -> Result<TankState> {
        if !(level >= 0.0 && level.is_finite()) {
            return Err(Error::InvalidArgument(format!("equilibrium level must be nonnegative, got {level}")));
        }
        let flow = self.drain_flow(level);
        let pump = 100.0 * flow / self.f_max;
        if pump > 100.0 {
            return Err(Error::InvalidArgument(format!(
                "level {level} m needs {pump:.1} % pump speed, above the maximum"
            )));
        }
        Ok(TankState {
            p: pump,
            fin: flow,
            fout: flow,
            l: level,
            m: level,
        })
    }
}

/// Pump speed (%), inflow and outflow (m^3/s), level and filtered sensor
/// level (m).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TankState {
    pub p: f64,
    pub fin: f64,
    pub fout: f64,
    pub l: f64,
    pub m: f64,
}

impl TankState {
    fn to_array(self) -> [f64; 5] {
        [self.p, self.fin, self.fout, self.l, self.m]
    }

    fn from_array(a: [f64; 5]) -> Self {
        Self {
            p: a[0],
            fin: a[1],
            fout: a[2],
            l: a[3],
            m: a[4],
        }
    }

    pub fn is_finite(&self) -> bool {
        self.to_array().iter().all(|v| v.is_finite())
    }
}

/// Right-hand side of the five first-order equations with the pump
/// setpoint held constant.
pub fn derivatives(params: &TankParams, s: &TankState, pump_setpoint: f64) -> TankState {
    TankState {
        p: (pump_setpoint - s.p) / params.tau_p,
        fin: (params.f_max * s.p / 100.0 - s.fin) / params.tau_in,
        fout: (params.drain_flow(s.l) - s.fout) / params.tau_out,
        l: (s.fin - s.fout) / params.tank_area(),
        m: (s.l - s.m) / params.tau_m,
    }
}

/// Advances one control period with classical RK4 on `substeps` equal
/// substeps. An empty tank stays empty and stops draining.
pub fn integrate(params: &TankParams, s: &TankState, pump_setpoint: f64) -> TankState {
    let h = params.dt / params.substeps as f64;
    let f = |x: [f64; 5]| derivatives(params, &TankState::from_array(x), pump_setpoint).to_array();
    let mut x = s.to_array();
    for _ in 0..params.substeps {
        let k1 = f(x);
        let k2 = f(axpy(x, 0.5 * h, k1));
        let k3 = f(axpy(x, 0.5 * h, k2));
        let k4 = f(axpy(x, h, k3));
        for i in 0..5 {
            x[i] += h / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]);
        }
        if x[3] < 0.0 {
            x[3] = 0.0;
            x[2] = 0.0;
        }
    }
    TankState::from_array(x)
}

fn axpy(x: [f64; 5], a: f64, k: [f64; 5]) -> [f64; 5] {
    std::array::from_fn(|i| x[i] + a * k[i])
}
