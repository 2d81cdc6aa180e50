//! Oracle suites behind `ykrl verify` and the acceptance tests. Each suite
//! returns the largest error it observed next to its tolerance.

use std::fmt;
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::behavior::{HankelModel, Trajectory};
use crate::error::Result;
use crate::lti::{random_stable, StateSpace, YoulaControllerLti};
use crate::nn::{Activation, DenseNet, Parameterized, Tape, Tensor, Var};
use crate::stablenet::{LyapunovNet, QParameter, QParameterConfig, StableDynamics};
use crate::youla::YoulaController;

#[derive(Debug, Clone, PartialEq)]
pub struct SuiteReport {
    pub name: &'static str,
    pub cases: usize,
    pub max_error: f64,
    pub tolerance: f64,
    /// Whether `max_error == tolerance` still passes.
    pub inclusive: bool,
}

impl SuiteReport {
    fn new(name: &'static str, cases: usize, max_error: f64, tolerance: f64, inclusive: bool) -> Self {
        Self {
            name,
            cases,
            max_error,
            tolerance,
            inclusive,
        }
    }

    pub fn passed(&self) -> bool {
        if self.inclusive {
            self.max_error <= self.tolerance
        } else {
            self.max_error < self.tolerance
        }
    }
}

impl fmt::Display for SuiteReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{:<34} {} max {:.3e} {} {:.0e} ({} cases)",
            self.name,
            if self.passed() { "PASS" } else { "FAIL" },
            self.max_error,
            if self.inclusive { "<=" } else { "<" },
            self.tolerance,
            self.cases
        )
    }
}

/// Sizes of the default verification run.
#[derive(Debug, Clone, PartialEq)]
pub struct VerifySettings {
    pub seed: u64,
    /// Random systems for the data-driven model suites.
    pub systems: usize,
    /// Record length `N` of each identification experiment.
    pub samples: usize,
    /// Window length `L`.
    pub order: usize,
    /// Prediction windows across all systems.
    pub windows: usize,
    /// Plant and Q pairs of the equivalence suite.
    pub pairs: usize,
    pub steps: usize,
    /// Random weight draws of the stability suites.
    pub weight_draws: usize,
    /// Random states per weight draw.
    pub states: usize,
    pub gradient_draws: usize,
}

impl Default for VerifySettings {
    fn default() -> Self {
        Self {
            seed: 0,
            systems: 50,
            samples: 200,
            order: 10,
            windows: 1000,
            pairs: 20,
            steps: 200,
            weight_draws: 20,
            states: 10_000,
            gradient_draws: 5,
        }
    }
}

fn normal_vec<R: Rng + ?Sized>(rng: &mut R, n: usize, scale: f64) -> Vec<f64> {
    (0..n).map(|_| scale * rng.sample::<f64, _>(StandardNormal)).collect()
}

/// Scale spread over three decades so that both small and large states are
/// probed.
fn random_scale<R: Rng + ?Sized>(rng: &mut R) -> f64 {
    10f64.powf(rng.random_range(-2.0..1.0))
}

/// Identification record of `sys` from rest under Gaussian input.
pub fn identification_record<R: Rng + ?Sized>(sys: &StateSpace, samples: usize, rng: &mut R) -> Result<Trajectory> {
    let u = normal_vec(rng, samples, 1.0);
    let y = sys.clone().simulate(&u, None)?;
    Trajectory::new(u, y, 1.0)
}

/// Length-`l` window of `sys` from a random initial state and the true next
/// output.
fn oracle_window<R: Rng + ?Sized>(sys: &StateSpace, l: usize, rng: &mut R) -> Result<(Vec<f64>, Vec<f64>, f64)> {
    let mut sys = sys.clone();
    let x0 = normal_vec(rng, sys.order(), 1.0);
    let u = normal_vec(rng, l + 1, 1.0);
    let y = sys.simulate(&u, Some(&x0))?;
    Ok((u[..l].to_vec(), y[..l].to_vec(), y[l]))
}

fn random_system<R: Rng + ?Sized>(strictly_proper: bool, rng: &mut R) -> StateSpace {
    let order = rng.random_range(1..=3);
    random_stable(order, strictly_proper, rng)
}

/// Every length-`L` window of every random system's own record and of
/// fresh simulations from random states is explained by the Hankel
/// matrices; reports the largest residual.
pub fn fundamental_lemma(s: &VerifySettings) -> Result<SuiteReport> {
    let mut rng = ChaCha8Rng::seed_from_u64(s.seed);
    let mut worst: f64 = 0.0;
    let mut cases = 0;
    let l = s.order;
    for _ in 0..s.systems {
        let sys = random_system(false, &mut rng);
        let record = identification_record(&sys, s.samples, &mut rng)?;
        let model = HankelModel::new(&record, l, 0.0)?;
        let (u, y) = (record.inputs(), record.outputs());
        for k in 0..=record.len() - l {
            worst = worst.max(model.solve_alpha(&u[k..k + l], &y[k..k + l])?.1);
            cases += 1;
        }
        for _ in 0..20 {
            let (wu, wy, _) = oracle_window(&sys, l, &mut rng)?;
            worst = worst.max(model.solve_alpha(&wu, &wy)?.1);
            cases += 1;
        }
    }
    Ok(SuiteReport::new("fundamental-lemma residual", cases, worst, 1e-8, false))
}

/// Next-output prediction of fresh windows against the state-space oracle,
/// through both the coefficient solve and the precomputed predictor.
pub fn prediction(s: &VerifySettings) -> Result<SuiteReport> {
    let mut rng = ChaCha8Rng::seed_from_u64(s.seed.wrapping_add(1));
    let per_system = s.windows.div_ceil(s.systems.max(1));
    let mut worst: f64 = 0.0;
    let mut cases = 0;
    for _ in 0..s.systems {
        // Strictly proper, so the next output does not depend on the next input.
        let sys = random_system(true, &mut rng);
        let model = HankelModel::new(&identification_record(&sys, s.samples, &mut rng)?, s.order, 0.0)?;
        for _ in 0..per_system {
            let (u, y, next) = oracle_window(&sys, s.order, &mut rng)?;
            let slow = model.predict_next_output(&u, &y)?;
            let fast = model.predict_fast(&u, &y)?;
            worst = worst.max((slow - next).abs()).max((fast - next).abs());
            cases += 1;
        }
    }
    Ok(SuiteReport::new("internal-model prediction", cases, worst, 1e-6, false))
}

/// The data-driven controller and the classical realization
/// `C = Q (1 - P Q)^-1` driven in closed loop by the same random reference,
/// each with its own copy of the plant. Returns the largest control gap.
pub fn equivalence(s: &VerifySettings) -> Result<SuiteReport> {
    let mut rng = ChaCha8Rng::seed_from_u64(s.seed.wrapping_add(2));
    let mut worst: f64 = 0.0;
    for _ in 0..s.pairs {
        let plant = random_system(true, &mut rng);
        let q = random_system(false, &mut rng);
        let model = Arc::new(HankelModel::new(
            &identification_record(&plant, s.samples, &mut rng)?,
            s.order,
            0.0,
        )?);
        let mut data_driven = YoulaController::new(model, q.clone());
        let mut classical = YoulaControllerLti::new(plant.clone(), q)?;
        let (mut plant_a, mut plant_b) = (plant.clone(), plant);
        for _ in 0..s.steps {
            let r: f64 = rng.sample(StandardNormal);
            let a = data_driven.control_step(r - plant_a.free_output())?;
            let b = classical.yk_control_step(r - plant_b.free_output())?;
            plant_a.step(a)?;
            plant_b.step(b)?;
            worst = worst.max((a - b).abs());
        }
    }
    Ok(SuiteReport::new(
        "controller equivalence (closed loop)",
        s.pairs * s.steps,
        worst,
        1e-6,
        false,
    ))
}

/// The same comparison driven directly by a random error sequence, measured
/// relative to `max(|u|, 1)`: the open-loop map `e -> u` can be unstable, so
/// only relative agreement is meaningful.
pub fn equivalence_open_loop(s: &VerifySettings) -> Result<SuiteReport> {
    let mut rng = ChaCha8Rng::seed_from_u64(s.seed.wrapping_add(3));
    let mut worst: f64 = 0.0;
    for _ in 0..s.pairs {
        let plant = random_system(true, &mut rng);
        let q = random_system(false, &mut rng);
        let model = Arc::new(HankelModel::new(
            &identification_record(&plant, s.samples, &mut rng)?,
            s.order,
            0.0,
        )?);
        let mut data_driven = YoulaController::new(model, q.clone());
        let mut classical = YoulaControllerLti::new(plant, q)?;
        for _ in 0..s.steps {
            let e: f64 = rng.sample(StandardNormal);
            let a = data_driven.control_step(e)?;
            let b = classical.yk_control_step(e)?;
            worst = worst.max((a - b).abs() / b.abs().max(1.0));
        }
    }
    Ok(SuiteReport::new(
        "controller equivalence (open, rel.)",
        s.pairs * s.steps,
        worst,
        1e-6,
        false,
    ))
}

/// Adds `N(0, sigma^2)` to every parameter, spreading draws over weight
/// space.
pub fn perturb_weights<M: Parameterized, R: Rng + ?Sized>(model: &mut M, sigma: f64, rng: &mut R) {
    for p in model.params_mut() {
        for v in p.data_mut() {
            *v += sigma * rng.sample::<f64, _>(StandardNormal);
        }
    }
}

/// Largest `V(f(z)) - beta V(z)` over `states` random states.
pub fn decrease_violation<R: Rng + ?Sized>(dynamics: &StableDynamics, states: usize, rng: &mut R) -> Result<f64> {
    let lyap = dynamics.lyapunov();
    let mut worst = f64::NEG_INFINITY;
    for _ in 0..states {
        let scale = random_scale(rng);
        let z = normal_vec(rng, dynamics.dim(), scale);
        let next = dynamics.forward(&z)?;
        worst = worst.max(lyap.value(&next)? - dynamics.beta() * lyap.value(&z)?);
    }
    Ok(worst)
}

/// Decrease certificate of random Q parameters (and of any `extra`
/// dynamics, such as trained checkpoints).
pub fn decrease(s: &VerifySettings, extra: &[StableDynamics]) -> Result<SuiteReport> {
    let mut rng = ChaCha8Rng::seed_from_u64(s.seed.wrapping_add(4));
    let mut worst = f64::NEG_INFINITY;
    let mut draws: Vec<StableDynamics> = extra.to_vec();
    for k in 0..s.weight_draws {
        let mut q = QParameter::new(&QParameterConfig::default(), &mut rng)?.dynamics().clone();
        // Half of the draws leave the initialization far behind.
        if k % 2 == 1 {
            perturb_weights(&mut q, 0.5, &mut rng);
        }
        draws.push(q);
    }
    for d in &draws {
        worst = worst.max(decrease_violation(d, s.states, &mut rng)?);
    }
    Ok(SuiteReport::new(
        "lyapunov decrease",
        draws.len() * s.states,
        worst,
        1e-9,
        true,
    ))
}

/// `V(0) = 0`, the quadratic floor and midpoint convexity over random
/// networks.
pub fn lyapunov_structure(s: &VerifySettings) -> Result<Vec<SuiteReport>> {
    let mut rng = ChaCha8Rng::seed_from_u64(s.seed.wrapping_add(5));
    let (mut origin, mut floor, mut convexity) = (0.0f64, f64::NEG_INFINITY, f64::NEG_INFINITY);
    let nets = s.weight_draws.max(1);
    let per_net = s.states.div_ceil(nets);
    for k in 0..nets {
        let dim = 1 + k % 6;
        let mut v = LyapunovNet::new(dim, &[16, 16], 1e-3, &mut rng)?;
        if k % 2 == 1 {
            perturb_weights(&mut v, 0.5, &mut rng);
        }
        origin = origin.max(v.value(&vec![0.0; dim])?.abs());
        for _ in 0..per_net {
            let scale = random_scale(&mut rng);
            let a = normal_vec(&mut rng, dim, scale);
            let b = normal_vec(&mut rng, dim, scale);
            let (va, vb) = (v.value(&a)?, v.value(&b)?);
            let norm_sq: f64 = a.iter().map(|x| x * x).sum();
            floor = floor.max(v.eps() * norm_sq - va);
            let mid: Vec<f64> = a.iter().zip(&b).map(|(x, y)| 0.5 * (x + y)).collect();
            convexity = convexity.max(v.value(&mid)? - 0.5 * (va + vb));
        }
    }
    let cases = nets * per_net;
    Ok(vec![
        SuiteReport::new("lyapunov zero at origin", nets, origin, 0.0, true),
        SuiteReport::new("lyapunov quadratic floor", cases, floor, 0.0, true),
        SuiteReport::new("lyapunov midpoint convexity", cases, convexity, 1e-9, true),
    ])
}

/// Relative 2-norm gap between the tape gradient of `objective` with respect
/// to every parameter of `model` and central differences with step `h`.
pub fn gradient_error<M, F>(model: &M, h: f64, objective: F) -> Result<f64>
where
    M: Parameterized + Clone,
    F: Fn(&M, &mut Tape, &[Var]) -> Result<Var>,
{
    let eval = |m: &M| -> Result<f64> {
        let mut tape = Tape::new();
        let p = m.bind(&mut tape)?;
        let out = objective(m, &mut tape, &p)?;
        Ok(tape.scalar_value(out))
    };
    let mut tape = Tape::new();
    let params = model.bind(&mut tape)?;
    let out = objective(model, &mut tape, &params)?;
    let analytic = tape.backward(out, &Tensor::scalar(1.0))?.collect(&params);

    let (mut diff_sq, mut a_sq, mut n_sq) = (0.0, 0.0, 0.0);
    let mut probe = model.clone();
    for (i, grad) in analytic.iter().enumerate() {
        for j in 0..grad.len() {
            let original = probe.params()[i].data()[j];
            probe.params_mut()[i].data_mut()[j] = original + h;
            let plus = eval(&probe)?;
            probe.params_mut()[i].data_mut()[j] = original - h;
            let minus = eval(&probe)?;
            probe.params_mut()[i].data_mut()[j] = original;
            let numeric = (plus - minus) / (2.0 * h);
            let a = grad.data()[j];
            diff_sq += (a - numeric).powi(2);
            a_sq += a * a;
            n_sq += numeric * numeric;
        }
    }
    let scale = a_sq.sqrt().max(n_sq.sqrt());
    Ok(if scale == 0.0 { 0.0 } else { diff_sq.sqrt() / scale })
}

/// Weighted sum `w . x` on the tape, a generic scalar readout.
fn readout(tape: &mut Tape, x: Var, w: &[f64]) -> Result<Var> {
    let wv = tape.vector(w)?;
    tape.dot(x, wv)
}

/// Gradients of plain dense networks and of the Lyapunov network.
pub fn gradients_plain(s: &VerifySettings) -> Result<SuiteReport> {
    let mut rng = ChaCha8Rng::seed_from_u64(s.seed.wrapping_add(6));
    let mut worst: f64 = 0.0;
    for k in 0..s.gradient_draws {
        let act = [Activation::Tanh, Activation::Softplus, Activation::SmoothRelu][k % 3];
        let net = DenseNet::new(&[4, 12, 12, 2], &[act, act, Activation::Identity], &mut rng)?;
        let x = normal_vec(&mut rng, 4, 1.0);
        let w = normal_vec(&mut rng, 2, 1.0);
        worst = worst.max(gradient_error(&net, 1e-6, |n, tape, p| {
            let xv = tape.vector(&x)?;
            let out = n.forward_tape(tape, p, xv)?;
            readout(tape, out, &w)
        })?);

        let v = LyapunovNet::new(3, &[8, 8], 1e-3, &mut rng)?;
        let z = normal_vec(&mut rng, 3, 1.0);
        worst = worst.max(gradient_error(&v, 1e-6, |n, tape, p| {
            let zv = tape.vector(&z)?;
            n.value_tape(tape, p, zv)
        })?);
    }
    Ok(SuiteReport::new("gradients (plain nets)", 2 * s.gradient_draws, worst, 1e-4, false))
}

/// A state where the corrected dynamics scale the proposal down, at least
/// 5 % away from the switching surface.
fn state_on_scaled_branch<R: Rng + ?Sized>(d: &StableDynamics, rng: &mut R) -> Result<Option<Vec<f64>>> {
    for _ in 0..2000 {
        let scale = random_scale(rng);
        let z = normal_vec(rng, d.dim(), scale);
        let step = d.step_detail(&z)?;
        if step.proposal_value > 1.05 * d.beta() * step.value && step.value > 1e-6 {
            return Ok(Some(z));
        }
    }
    Ok(None)
}

/// Gradients through the corrected dynamics and the Q parameter's action,
/// evaluated where the scale factor is active.
pub fn gradients_scaled(s: &VerifySettings) -> Result<SuiteReport> {
    let mut rng = ChaCha8Rng::seed_from_u64(s.seed.wrapping_add(7));
    let mut worst: f64 = 0.0;
    let mut cases = 0;
    let cfg = QParameterConfig {
        state_dim: 3,
        hidden: 8,
        beta: 0.9,
        ..QParameterConfig::default()
    };
    let mut attempts = 0;
    while cases < 2 * s.gradient_draws && attempts < 100 * s.gradient_draws.max(1) {
        attempts += 1;
        let mut q = QParameter::new(&cfg, &mut rng)?;
        perturb_weights(&mut q, 0.3, &mut rng);
        let Some(z) = state_on_scaled_branch(q.dynamics(), &mut rng)? else {
            continue;
        };
        let w = normal_vec(&mut rng, 3, 1.0);
        let d = q.dynamics().clone();
        worst = worst.max(gradient_error(&d, 1e-6, |m, tape, p| {
            let zv = tape.vector(&z)?;
            let out = m.forward_tape(tape, p, zv)?;
            readout(tape, out, &w)
        })?);
        let (r_prev, r_hat): (f64, f64) = (rng.sample(StandardNormal), rng.sample(StandardNormal));
        worst = worst.max(gradient_error(&q, 1e-6, |m, tape, p| {
            let zv = tape.vector(&z)?;
            let rp = tape.scalar(r_prev)?;
            let r = tape.scalar(r_hat)?;
            m.unrolled_action_tape(tape, p, zv, rp, r)
        })?);
        cases += 2;
    }
    let worst = if cases == 0 { f64::INFINITY } else { worst };
    Ok(SuiteReport::new("gradients (through scaling)", cases, worst, 1e-3, false))
}

/// Every suite at the sizes in `s`.
pub fn run_all(s: &VerifySettings) -> Result<Vec<SuiteReport>> {
    let mut out = vec![
        fundamental_lemma(s)?,
        prediction(s)?,
        equivalence(s)?,
        equivalence_open_loop(s)?,
        decrease(s, &[])?,
    ];
    out.extend(lyapunov_structure(s)?);
    out.push(gradients_plain(s)?);
    out.push(gradients_scaled(s)?);
    Ok(out)
}
