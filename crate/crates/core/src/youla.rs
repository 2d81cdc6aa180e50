//! Data-driven Youla-Kucera controller: a stable operator `Q` wrapped around
//! the Hankel internal model, plus the incremental composition used when the
//! controlled plant is itself a PID loop.

use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::behavior::HankelModel;
use crate::error::{ensure_finite, Error, Result};
use crate::lti::StateSpace;
use crate::stablenet::QParameter;

/// Signals available to `Q` at one step.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct QInput {
    /// Tracking error `e_t`.
    pub error: f64,
    /// Internal-model output `y_bar_L`.
    pub prediction: f64,
    /// `e_t + y_bar_L`.
    pub r_hat: f64,
}

/// A causal operator stepped once per control period.
pub trait QOperator {
    fn q_step(&mut self, input: &QInput) -> Result<f64>;

    /// Returns the operator to its zero state.
    fn reset(&mut self);

    /// Internal state, empty for static maps.
    fn state(&self) -> Vec<f64>;
}

impl QOperator for QParameter {
    fn q_step(&mut self, input: &QInput) -> Result<f64> {
        self.step(input.r_hat)
    }

    fn reset(&mut self) {
        QParameter::reset(self)
    }

    fn state(&self) -> Vec<f64> {
        QParameter::state(self).to_vec()
    }
}

impl QOperator for StateSpace {
    fn q_step(&mut self, input: &QInput) -> Result<f64> {
        self.step(input.r_hat)
    }

    fn reset(&mut self) {
        StateSpace::reset(self)
    }

    fn state(&self) -> Vec<f64> {
        StateSpace::state(self).to_vec()
    }
}

/// Everything computed during one controller step.
#[derive(Debug, Clone, PartialEq)]
pub struct YoulaStep {
    pub input: QInput,
    /// `Q` state before the step.
    pub q_state: Vec<f64>,
    /// Raw output of `Q`.
    pub q_output: f64,
    /// Value handed to the plant and recorded in the window.
    pub applied: f64,
}

/// Controller state: internal model, `Q`, and the rolling window of the
/// controller's own inputs paired with internal-model outputs.
#[derive(Debug, Clone)]
pub struct YoulaController<Q> {
    model: Arc<HankelModel>,
    q: Q,
    window_u: Vec<f64>,
    window_y: Vec<f64>,
    initial_u: Vec<f64>,
    initial_y: Vec<f64>,
}

impl<Q: QOperator> YoulaController<Q> {
    /// Controller with an all-zero initial window.
    pub fn new(model: Arc<HankelModel>, q: Q) -> Self {
        let l = model.order();
        Self::with_window(model, q, &vec![0.0; l], &vec![0.0; l]).expect("zero window has the model order")
    }

    /// Controller with a given initial window; `Q` is reset.
    pub fn with_window(model: Arc<HankelModel>, mut q: Q, u: &[f64], y: &[f64]) -> Result<Self> {
        let l = model.order();
        if u.len() != l || y.len() != l {
            return Err(Error::shape(
                "initial window",
                l,
                format!("{} inputs, {} outputs", u.len(), y.len()),
            ));
        }
        ensure_finite(u, "initial window")?;
        ensure_finite(y, "initial window")?;
        q.reset();
        Ok(Self {
            model,
            q,
            window_u: u.to_vec(),
            window_y: y.to_vec(),
            initial_u: u.to_vec(),
            initial_y: y.to_vec(),
        })
    }

    pub fn model(&self) -> &HankelModel {
        &self.model
    }

    pub fn q(&self) -> &Q {
        &self.q
    }

    pub fn q_mut(&mut self) -> &mut Q {
        &mut self.q
    }

    pub fn into_q(self) -> Q {
        self.q
    }

    pub fn window(&self) -> (&[f64], &[f64]) {
        (&self.window_u, &self.window_y)
    }

    /// Restores the initial window and resets `Q`.
    pub fn reset(&mut self) {
        self.window_u.copy_from_slice(&self.initial_u);
        self.window_y.copy_from_slice(&self.initial_y);
        self.q.reset();
    }

    /// Internal-model output and `Q` input for tracking error `e` without
    /// advancing anything.
    pub fn peek(&self, e: f64) -> Result<QInput> {
        if !e.is_finite() {
            return Err(Error::NonFinite("tracking error"));
        }
        let prediction = self.model.predict_fast(&self.window_u, &self.window_y)?;
        Ok(QInput {
            error: e,
            prediction,
            r_hat: e + prediction,
        })
    }

    /// One step of the data-driven loop: predict, feed `e + prediction` to
    /// `Q`, shift the window. Returns `Q`'s output.
    pub fn control_step(&mut self, e: f64) -> Result<f64> {
        Ok(self.control_step_perturbed(e, 0.0)?.applied)
    }

    /// As [`Self::control_step`], with `perturbation` added to `Q`'s output
    /// before it is applied and recorded in the window. `Q`'s own state
    /// advances on the unperturbed signal.
    pub fn control_step_perturbed(&mut self, e: f64, perturbation: f64) -> Result<YoulaStep> {
        if !perturbation.is_finite() {
            return Err(Error::NonFinite("control perturbation"));
        }
        let input = self.peek(e)?;
        let q_state = self.q.state();
        let q_output = self.q.q_step(&input)?;
        let applied = q_output + perturbation;
        if !applied.is_finite() {
            return Err(Error::NonFinite("control output"));
        }
        shift_in(&mut self.window_u, applied);
        shift_in(&mut self.window_y, input.prediction);
        Ok(YoulaStep {
            input,
            q_state,
            q_output,
            applied,
        })
    }
}

fn shift_in(window: &mut [f64], value: f64) {
    window.copy_within(1.., 0);
    if let Some(last) = window.last_mut() {
        *last = value;
    }
}

/// Actuator range for the composed input.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Limits {
    pub lower: f64,
    pub upper: f64,
}

impl Limits {
    pub fn new(lower: f64, upper: f64) -> Result<Self> {
        if !(lower < upper) {
            return Err(Error::InvalidArgument(format!("empty actuator range [{lower}, {upper}]")));
        }
        Ok(Self { lower, upper })
    }
}

/// `u = clamp(u_prev + du_q + du_pid)`; the flag reports whether the clamp
/// was active.
pub fn compose_incremental(du_q: f64, du_pid: f64, u_prev: f64, limits: Limits) -> (f64, bool) {
    let raw = u_prev + du_q + du_pid;
    let u = raw.clamp(limits.lower, limits.upper);
    (u, u != raw)
}

/// One row of the controller log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepLog {
    pub t: f64,
    pub e: f64,
    pub y_bar: f64,
    pub r_hat: f64,
    pub du_q: f64,
    pub du_pid: f64,
    pub u: f64,
    pub clamped: bool,
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::behavior::Trajectory;
    use crate::lti::{random_stable, YoulaControllerLti};
    use approx::assert_abs_diff_eq;
    use nalgebra::{DMatrix, DVector, RowDVector};
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use rand_distr::StandardNormal;

    fn model_of(plant: &StateSpace, l: usize, n: usize, rng: &mut ChaCha8Rng) -> Arc<HankelModel> {
        let u: Vec<f64> = (0..n).map(|_| rng.sample(StandardNormal)).collect();
        let y = plant.clone().simulate(&u, None).unwrap();
        Arc::new(HankelModel::new(&Trajectory::new(u, y, 1.0).unwrap(), l, 0.0).unwrap())
    }

    fn zero_q() -> StateSpace {
        StateSpace::new(
            DMatrix::from_element(1, 1, 0.3),
            DVector::from_element(1, 1.0),
            RowDVector::zeros(1),
            0.0,
        )
        .unwrap()
    }

    #[test]
    fn zero_window_zero_error_is_a_fixed_point() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let plant = random_stable(2, true, &mut rng);
        let model = model_of(&plant, 5, 100, &mut rng);
        let mut ctrl = YoulaController::new(model, random_stable(2, false, &mut rng));
        for _ in 0..200 {
            assert_eq!(ctrl.control_step(0.0).unwrap(), 0.0);
        }
        assert_eq!(ctrl.window(), (&[0.0; 5][..], &[0.0; 5][..]));
    }

    #[test]
    fn zero_q_ignores_the_error() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let plant = random_stable(2, true, &mut rng);
        let mut ctrl = YoulaController::new(model_of(&plant, 4, 100, &mut rng), zero_q());
        for _ in 0..50 {
            assert_eq!(ctrl.control_step(rng.sample(StandardNormal)).unwrap(), 0.0);
        }
    }

    #[test]
    fn short_window_is_rejected() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let plant = random_stable(2, true, &mut rng);
        let model = model_of(&plant, 4, 100, &mut rng);
        assert!(YoulaController::with_window(model, zero_q(), &[0.0; 3], &[0.0; 3]).is_err());
    }

    #[test]
    fn window_from_the_record_tail_predicts_the_next_sample() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut plant = random_stable(2, true, &mut rng);
        let u: Vec<f64> = (0..151).map(|_| rng.sample(StandardNormal)).collect();
        let y = plant.simulate(&u, Some(&[0.0, 0.0])).unwrap();
        let record = Trajectory::new(u[..150].to_vec(), y[..150].to_vec(), 1.0).unwrap();
        let model = Arc::new(HankelModel::new(&record, 5, 0.0).unwrap());
        let ctrl = YoulaController::with_window(model, zero_q(), &u[145..150], &y[145..150]).unwrap();
        assert_abs_diff_eq!(ctrl.peek(0.0).unwrap().prediction, y[150], epsilon = 1e-6);
    }

    #[test]
    fn matches_classical_realization_in_closed_loop() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for _ in 0..5 {
            let plant = random_stable(3, true, &mut rng);
            let q = random_stable(2, false, &mut rng);
            let mut data_driven = YoulaController::new(model_of(&plant, 6, 200, &mut rng), q.clone());
            let mut classical = YoulaControllerLti::new(plant.clone(), q).unwrap();
            let (mut plant_a, mut plant_b) = (plant.clone(), plant);
            for _ in 0..200 {
                let r: f64 = rng.sample(StandardNormal);
                let ea = r - plant_a.free_output();
                let eb = r - plant_b.free_output();
                let a = data_driven.control_step(ea).unwrap();
                let b = classical.yk_control_step(eb).unwrap();
                plant_a.step(a).unwrap();
                plant_b.step(b).unwrap();
                assert_abs_diff_eq!(a, b, epsilon = 1e-6);
            }
        }
    }

    #[test]
    fn matches_classical_realization_in_open_loop_to_relative_precision() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        for _ in 0..5 {
            let plant = random_stable(3, true, &mut rng);
            let q = random_stable(2, false, &mut rng);
            let mut data_driven = YoulaController::new(model_of(&plant, 6, 200, &mut rng), q.clone());
            let mut classical = YoulaControllerLti::new(plant, q).unwrap();
            for _ in 0..200 {
                let e: f64 = rng.sample(StandardNormal);
                let a = data_driven.control_step(e).unwrap();
                let b = classical.yk_control_step(e).unwrap();
                assert!((a - b).abs() <= 1e-6 * b.abs().max(1.0), "{a} vs {b}");
            }
        }
    }

    #[test]
    fn window_replays_own_history() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let plant = random_stable(2, true, &mut rng);
        let mut ctrl = YoulaController::new(model_of(&plant, 4, 100, &mut rng), random_stable(1, false, &mut rng));
        let mut history = Vec::new();
        for t in 0..30 {
            let e: f64 = rng.sample(StandardNormal);
            let noise = if t % 3 == 0 { 0.25 } else { 0.0 };
            let step = ctrl.control_step_perturbed(e, noise).unwrap();
            history.push((step.applied, step.input.prediction));
        }
        let tail = &history[history.len() - 4..];
        let (wu, wy) = ctrl.window();
        assert_eq!(wu, tail.iter().map(|p| p.0).collect::<Vec<_>>());
        assert_eq!(wy, tail.iter().map(|p| p.1).collect::<Vec<_>>());
        ctrl.reset();
        assert_eq!(ctrl.window(), (&[0.0; 4][..], &[0.0; 4][..]));
    }

    #[test]
    fn bounded_reference_gives_bounded_control() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        for _ in 0..5 {
            let mut plant = random_stable(3, true, &mut rng);
            let q = random_stable(2, false, &mut rng);
            // With an exact internal model the loop reduces to u = Q r, so the
            // l1 norm of Q's impulse response bounds |u| for |r| <= 1.
            let gain: f64 = q.impulse_response(5000).iter().map(|h| h.abs()).sum();
            let mut ctrl = YoulaController::new(model_of(&plant, 6, 200, &mut rng), q);
            for _ in 0..2000 {
                let r: f64 = rng.random_range(-1.0..=1.0);
                let u = ctrl.control_step(r - plant.free_output()).unwrap();
                plant.step(u).unwrap();
                assert!(u.is_finite() && u.abs() <= gain + 1e-6, "{u} vs {gain}");
            }
        }
    }

    #[test]
    fn rejects_non_finite_error() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let plant = random_stable(2, true, &mut rng);
        let mut ctrl = YoulaController::new(model_of(&plant, 3, 60, &mut rng), zero_q());
        assert!(matches!(ctrl.control_step(f64::NAN), Err(Error::NonFinite(_))));
    }

    #[test]
    fn composition_examples() {
        let lim = Limits::new(0.0, 100.0).unwrap();
        assert_eq!(compose_incremental(0.0, 0.0, 42.0, lim), (42.0, false));
        assert_eq!(compose_incremental(1.0, 2.0, 100.0, lim), (100.0, true));
        assert_eq!(compose_incremental(-5.0, -1.0, 3.0, lim), (0.0, true));
        assert!(Limits::new(1.0, 1.0).is_err());
    }

    proptest! {
        #[test]
        fn unsaturated_composition_is_a_running_sum(steps in prop::collection::vec((-1.0f64..1.0, -1.0f64..1.0), 1..200)) {
            let lim = Limits::new(-1e6, 1e6).unwrap();
            let (mut u, mut sum) = (0.0, 0.0);
            for (q, p) in steps {
                let (next, clamped) = compose_incremental(q, p, u, lim);
                prop_assert!(!clamped);
                u = next;
                sum += q + p;
                prop_assert!((u - sum).abs() < 1e-12);
            }
        }
    }
}
