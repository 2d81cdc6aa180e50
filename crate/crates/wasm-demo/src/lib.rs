//! Browser demo: three small interactive experiments on top of `ykrl`.
//!
//! - [`TankDemo::rollout`]: one tank episode under PID plus a randomly
//!   initialized stable Q parameter in the data-driven Youla loop.
//! - [`lyapunov_decay`]: the Lyapunov value along an autonomous trajectory of
//!   the stable dynamics next to the `beta^t` envelope and the raw proposal.
//! - [`hankel_prediction`]: one-step predictions of a Hankel model fitted on
//!   noisy data against the true outputs of a random linear system.
//!
//! The computations are plain functions so they can be tested natively;
//! the exported wrappers only convert errors.

use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use wasm_bindgen::prelude::*;
use ykrl::behavior::{HankelModel, Trajectory};
use ykrl::config::RunConfig;
use ykrl::env::{collect_excitation, TankEnv};
use ykrl::lti::random_stable;
use ykrl::nn::{Parameterized, Tensor};
use ykrl::rl::evaluate;
use ykrl::stablenet::{QParameter, QParameterConfig, StableDynamics};
use ykrl::youla::YoulaController;

fn js(e: ykrl::Error) -> JsError {
    JsError::new(&e.to_string())
}

fn normals(rng: &mut ChaCha8Rng, n: usize, scale: f64) -> Vec<f64> {
    (0..n).map(|_| scale * rng.sample::<f64, _>(StandardNormal)).collect()
}

#[wasm_bindgen]
pub struct TankRollout {
    time: Vec<f64>,
    setpoint: Vec<f64>,
    level: Vec<f64>,
    measurement: Vec<f64>,
    du_q: Vec<f64>,
    reward: f64,
}

#[wasm_bindgen]
impl TankRollout {
    #[wasm_bindgen(getter)]
    pub fn time(&self) -> Vec<f64> {
        self.time.clone()
    }
    #[wasm_bindgen(getter)]
    pub fn setpoint(&self) -> Vec<f64> {
        self.setpoint.clone()
    }
    #[wasm_bindgen(getter)]
    pub fn level(&self) -> Vec<f64> {
        self.level.clone()
    }
    #[wasm_bindgen(getter)]
    pub fn measurement(&self) -> Vec<f64> {
        self.measurement.clone()
    }
    #[wasm_bindgen(getter)]
    pub fn du_q(&self) -> Vec<f64> {
        self.du_q.clone()
    }
    /// Cumulative reward of the episode.
    #[wasm_bindgen(getter)]
    pub fn reward(&self) -> f64 {
        self.reward
    }
}

/// Tank plant with the internal model identified once at construction.
#[wasm_bindgen]
pub struct TankDemo {
    cfg: RunConfig,
    model: Arc<HankelModel>,
}

impl TankDemo {
    pub fn build() -> ykrl::Result<Self> {
        let cfg = RunConfig::default();
        let mut env = TankEnv::new(cfg.tank.clone(), &cfg.pid, cfg.excitation.level, None)?;
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.collect_seed);
        let traj = collect_excitation(&mut env, &cfg.excitation, cfg.hankel.order, &mut rng)?;
        let model = Arc::new(HankelModel::new(&traj, cfg.hankel.order, cfg.hankel.ridge)?);
        Ok(Self { cfg, model })
    }

    pub fn run(&self, io_scale: f64, feedthrough: f64, seed: u64, noise: bool) -> ykrl::Result<TankRollout> {
        let qcfg = QParameterConfig {
            io_scale,
            ..self.cfg.q.clone()
        };
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut q = QParameter::new(&qcfg, &mut rng)?;
        if let Some(d) = q.params_mut().pop() {
            *d = Tensor::scalar(feedthrough);
        }
        let schedule = &self.cfg.episode;
        let mut env = TankEnv::new(
            self.cfg.tank.clone(),
            &self.cfg.pid,
            schedule.level_a,
            noise.then_some(seed),
        )?;
        let mut controller = YoulaController::new(Arc::clone(&self.model), q);
        let out = evaluate(&mut env, &mut controller, schedule)?;
        let col = |f: fn(&ykrl::env::RolloutRecord) -> f64| out.records.iter().map(f).collect();
        Ok(TankRollout {
            time: col(|r| r.t),
            setpoint: col(|r| r.lsp),
            level: col(|r| r.l),
            measurement: col(|r| r.m),
            du_q: col(|r| r.du_q),
            reward: out.cumulative_reward,
        })
    }
}

#[wasm_bindgen]
impl TankDemo {
    #[wasm_bindgen(constructor)]
    pub fn new() -> Result<TankDemo, JsError> {
        Self::build().map_err(js)
    }

    /// `io_scale` sets the initial range of the Q input and output maps,
    /// `feedthrough` its direct term; `seed` draws the weights and the
    /// measurement noise.
    pub fn rollout(&self, io_scale: f64, feedthrough: f64, seed: u32, noise: bool) -> Result<TankRollout, JsError> {
        self.run(io_scale, feedthrough, u64::from(seed), noise).map_err(js)
    }
}

#[wasm_bindgen]
pub struct DecayTrace {
    value: Vec<f64>,
    envelope: Vec<f64>,
    proposal: Vec<f64>,
}

#[wasm_bindgen]
impl DecayTrace {
    /// `V(z_t)` along the corrected dynamics.
    #[wasm_bindgen(getter)]
    pub fn value(&self) -> Vec<f64> {
        self.value.clone()
    }
    /// `beta^t V(z_0)`.
    #[wasm_bindgen(getter)]
    pub fn envelope(&self) -> Vec<f64> {
        self.envelope.clone()
    }
    /// `V` along the uncorrected proposal network.
    #[wasm_bindgen(getter)]
    pub fn proposal(&self) -> Vec<f64> {
        self.proposal.clone()
    }
}

pub fn decay_trace(seed: u64, beta: f64, scale: f64, steps: usize) -> ykrl::Result<DecayTrace> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let q = QParameterConfig::default();
    let dynamics = StableDynamics::new(q.state_dim, q.hidden, beta, q.eps, &mut rng)?;
    let v = dynamics.lyapunov();
    let z0 = normals(&mut rng, q.state_dim, scale);
    let v0 = v.value(&z0)?;
    let (mut z, mut raw) = (z0.clone(), z0);
    let mut trace = DecayTrace {
        value: Vec::with_capacity(steps + 1),
        envelope: Vec::with_capacity(steps + 1),
        proposal: Vec::with_capacity(steps + 1),
    };
    for t in 0..=steps {
        trace.value.push(v.value(&z)?);
        trace.envelope.push(v0 * beta.powi(t as i32));
        trace.proposal.push(v.value(&raw).unwrap_or(f64::INFINITY));
        z = dynamics.forward(&z)?;
        if raw.iter().all(|x| x.is_finite()) {
            raw = dynamics.proposal(&raw).unwrap_or_else(|_| vec![f64::INFINITY; raw.len()]);
        }
    }
    Ok(trace)
}

/// Autonomous trajectory of a random stable dynamics network.
#[wasm_bindgen]
pub fn lyapunov_decay(seed: u32, beta: f64, scale: f64, steps: u32) -> Result<DecayTrace, JsError> {
    decay_trace(u64::from(seed), beta, scale, steps as usize).map_err(js)
}

#[wasm_bindgen]
pub struct PredictionTrace {
    truth: Vec<f64>,
    predicted: Vec<f64>,
    rms: f64,
}

#[wasm_bindgen]
impl PredictionTrace {
    #[wasm_bindgen(getter)]
    pub fn truth(&self) -> Vec<f64> {
        self.truth.clone()
    }
    #[wasm_bindgen(getter)]
    pub fn predicted(&self) -> Vec<f64> {
        self.predicted.clone()
    }
    #[wasm_bindgen(getter)]
    pub fn rms(&self) -> f64 {
        self.rms
    }
}

/// Record length of the identification experiment.
const RECORD: usize = 200;
/// Length of the validation sequence.
const VALIDATION: usize = 150;

pub fn prediction_trace(seed: u64, order: usize, noise_std: f64, ridge: f64) -> ykrl::Result<PredictionTrace> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = rng.random_range(1..=3);
    let sys = random_stable(n, true, &mut rng);
    let u = normals(&mut rng, RECORD, 1.0);
    let mut y = sys.clone().simulate(&u, None)?;
    for (yk, e) in y.iter_mut().zip(normals(&mut rng, RECORD, noise_std)) {
        *yk += e;
    }
    let model = HankelModel::new(&Trajectory::new(u, y, 1.0)?, order, ridge)?;

    let x0 = normals(&mut rng, sys.order(), 1.0);
    let u = normals(&mut rng, order + VALIDATION, 1.0);
    let y = sys.clone().simulate(&u, Some(&x0))?;
    let mut truth = Vec::with_capacity(VALIDATION);
    let mut predicted = Vec::with_capacity(VALIDATION);
    for k in order..order + VALIDATION {
        truth.push(y[k]);
        predicted.push(model.predict_fast(&u[k - order..k], &y[k - order..k])?);
    }
    let rms = (truth
        .iter()
        .zip(&predicted)
        .map(|(a, b)| (a - b).powi(2))
        .sum::<f64>()
        / VALIDATION as f64)
        .sqrt();
    Ok(PredictionTrace { truth, predicted, rms })
}

/// One-step predictions of a model of window `order` fitted on a record with
/// output noise of standard deviation `noise_std`.
#[wasm_bindgen]
pub fn hankel_prediction(seed: u32, order: u32, noise_std: f64, ridge: f64) -> Result<PredictionTrace, JsError> {
    prediction_trace(u64::from(seed), order as usize, noise_std, ridge).map_err(js)
}
