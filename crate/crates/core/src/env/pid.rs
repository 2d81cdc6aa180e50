use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PidGains {
    pub kp: f64,
    #[serde(default)]
    pub ki: f64,
    #[serde(default)]
    pub kd: f64,
}

/// Discrete PID on a fixed sample period.
///
/// [`Self::positional`] returns a clamped absolute output and holds the
/// integral while the output is saturated in the direction of the error.
/// [`Self::increment`] is the velocity form used for incremental control;
/// its limits are applied by whoever accumulates the increments.
#[derive(Debug, Clone, PartialEq)]
pub struct PidController {
    gains: PidGains,
    dt: f64,
    lower: f64,
    upper: f64,
    integral: f64,
    prev_error: f64,
    prev_prev_error: f64,
}

impl PidController {
    pub fn new(gains: PidGains, dt: f64, lower: f64, upper: f64) -> Result<Self> {
        if ![gains.kp, gains.ki, gains.kd].iter().all(|g| g.is_finite()) {
            return Err(Error::InvalidArgument("PID gains must be finite".into()));
        }
        if !(dt > 0.0) || !(lower < upper) {
            return Err(Error::InvalidArgument(format!(
                "PID needs a positive period and a nonempty range, got dt={dt}, [{lower}, {upper}]"
            )));
        }
        Ok(Self {
            gains,
            dt,
            lower,
            upper,
            integral: 0.0,
            prev_error: 0.0,
            prev_prev_error: 0.0,
        })
    }

    pub fn gains(&self) -> PidGains {
        self.gains
    }

    pub fn integral(&self) -> f64 {
        self.integral
    }

    /// Sets the integral term (in output units) and clears the error memory,
    /// e.g. to start at a known steady state.
    pub fn reset_to(&mut self, integral: f64) {
        self.integral = integral;
        self.prev_error = 0.0;
        self.prev_prev_error = 0.0;
    }

    pub fn positional(&mut self, error: f64) -> Result<f64> {
        if !error.is_finite() {
            return Err(Error::NonFinite("PID error"));
        }
        let g = self.gains;
        let derivative = (error - self.prev_error) / self.dt;
        let candidate = self.integral + g.ki * error * self.dt;
        let raw = g.kp * error + candidate + g.kd * derivative;
        let out = raw.clamp(self.lower, self.upper);
        let winding_up = (raw > self.upper && error > 0.0) || (raw < self.lower && error < 0.0);
        if !winding_up {
            self.integral = candidate;
        }
        self.prev_prev_error = self.prev_error;
        self.prev_error = error;
        Ok(out)
    }

    pub fn increment(&mut self, error: f64) -> Result<f64> {
        if !error.is_finite() {
            return Err(Error::NonFinite("PID error"));
        }
        let g = self.gains;
        let delta = g.kp * (error - self.prev_error)
            + g.ki * self.dt * error
            + g.kd * (error - 2.0 * self.prev_error + self.prev_prev_error) / self.dt;
        self.prev_prev_error = self.prev_error;
        self.prev_error = error;
        Ok(delta)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    fn pid(kp: f64, ki: f64, kd: f64) -> PidController {
        PidController::new(PidGains { kp, ki, kd }, 0.5, 0.0, 100.0).unwrap()
    }

    #[test]
    fn proportional_and_integral_terms() {
        let mut c = pid(2.0, 1.0, 0.0);
        c.reset_to(10.0);
        assert_abs_diff_eq!(c.positional(1.0).unwrap(), 2.0 + 10.0 + 0.5);
        assert_abs_diff_eq!(c.integral(), 10.5);
    }

    #[test]
    fn integral_holds_while_saturated() {
        let mut c = pid(1.0, 1.0, 0.0);
        c.reset_to(99.0);
        assert_eq!(c.positional(10.0).unwrap(), 100.0);
        assert_eq!(c.integral(), 99.0);
        // Errors pulling back out of saturation still integrate.
        c.positional(-1.0).unwrap();
        assert_abs_diff_eq!(c.integral(), 98.5);
    }

    #[test]
    fn rejects_bad_setup() {
        assert!(PidController::new(PidGains { kp: f64::NAN, ki: 0.0, kd: 0.0 }, 0.5, 0.0, 1.0).is_err());
        assert!(PidController::new(PidGains { kp: 1.0, ki: 0.0, kd: 0.0 }, 0.0, 0.0, 1.0).is_err());
        assert!(pid(1.0, 0.0, 0.0).positional(f64::INFINITY).is_err());
    }

    proptest! {
        #[test]
        fn increments_sum_to_the_unclamped_positional_output(
            errors in prop::collection::vec(-1.0f64..1.0, 1..100),
            kp in 0.0f64..5.0, ki in 0.0f64..2.0, kd in 0.0f64..1.0,
        ) {
            let gains = PidGains { kp, ki, kd };
            let mut pos = PidController::new(gains, 0.5, -1e9, 1e9).unwrap();
            let mut inc = PidController::new(gains, 0.5, -1e9, 1e9).unwrap();
            let mut acc = 0.0;
            for (k, e) in errors.iter().enumerate() {
                let p = pos.positional(*e).unwrap();
                acc += inc.increment(*e).unwrap();
                prop_assert!((acc - p).abs() < 1e-9 * (1.0 + k as f64), "{acc} vs {p}");
            }
        }
    }
}
