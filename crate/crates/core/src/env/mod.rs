//! Upper-tank level process under a fixed PID cascade: the level controller
//! emits flow-setpoint increments, the flow controller drives the pump, and
//! an external increment `du_q` is added on top.

mod pid;
mod tank;

use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::behavior::{HankelModel, Trajectory};
use crate::error::{Error, Result};
use crate::youla::{compose_incremental, Limits};

pub use pid::{PidController, PidGains};
pub use tank::{derivatives, integrate, TankParams, TankState};

/// `-0.1 |setpoint - measurement| - 0.01 du_q^2`.
pub fn reward(setpoint: f64, measurement: f64, du_q: f64) -> f64 {
    -0.1 * (setpoint - measurement).abs() - 0.01 * du_q * du_q
}

/// Gains of the fixed cascade. The level controller works in flow-setpoint
/// percent per metre; the flow controller maps percent flow error to
/// percent pump speed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PidConfig {
    pub level: PidGains,
    pub flow: PidGains,
}

impl Default for PidConfig {
    fn default() -> Self {
        Self {
            level: PidGains {
                kp: 40.0,
                ki: 0.4,
                kd: 0.0,
            },
            flow: PidGains {
                kp: 1.0,
                ki: 0.2,
                kd: 0.0,
            },
        }
    }
}

/// Setpoint profile of a training episode: start settled at `level_a`, hold
/// setpoint `level_b` until `switch_step`, then return to `level_a`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EpisodeSchedule {
    pub steps: usize,
    pub level_a: f64,
    pub level_b: f64,
    pub switch_step: usize,
}

impl Default for EpisodeSchedule {
    fn default() -> Self {
        Self {
            steps: 300,
            level_a: 0.5,
            level_b: 0.7,
            switch_step: 150,
        }
    }
}

impl EpisodeSchedule {
    pub fn setpoint(&self, step: usize) -> f64 {
        if step < self.switch_step {
            self.level_b
        } else {
            self.level_a
        }
    }

    pub fn validate(&self, params: &TankParams) -> Result<()> {
        for level in [self.level_a, self.level_b] {
            if !(level > 0.0 && level <= params.level_max) {
                return Err(Error::Config(format!(
                    "episode level {level} outside (0, {}]",
                    params.level_max
                )));
            }
        }
        if self.steps == 0 {
            return Err(Error::Config("episode.steps must be positive".into()));
        }
        Ok(())
    }
}

/// Result of one environment step.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EnvStep {
    pub setpoint: f64,
    pub state: TankState,
    /// Noisy level reading after the step.
    pub measurement: f64,
    pub du_q: f64,
    pub du_pid: f64,
    pub u: f64,
    pub clamped: bool,
    pub reward: f64,
}

/// One row of a rollout log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RolloutRecord {
    pub t: f64,
    pub lsp: f64,
    pub l: f64,
    pub m: f64,
    pub fin: f64,
    pub fout: f64,
    pub p: f64,
    pub du_q: f64,
    pub du_pid: f64,
    pub u: f64,
    pub reward: f64,
}

impl RolloutRecord {
    pub fn new(step_index: usize, dt: f64, s: &EnvStep) -> Self {
        Self {
            t: (step_index + 1) as f64 * dt,
            lsp: s.setpoint,
            l: s.state.l,
            m: s.measurement,
            fin: s.state.fin,
            fout: s.state.fout,
            p: s.state.p,
            du_q: s.du_q,
            du_pid: s.du_pid,
            u: s.u,
            reward: s.reward,
        }
    }
}

/// Simulated tank with its PID cascade and measurement noise.
///
/// The flow setpoint `u` is expressed in percent of `f_max` and limited to
/// `[0, 100]`; `du_q` and the level controller's output are increments of it.
#[derive(Debug, Clone)]
pub struct TankEnv {
    params: TankParams,
    level_pid: PidController,
    flow_pid: PidController,
    limits: Limits,
    state: TankState,
    u: f64,
    setpoint: f64,
    measurement: f64,
    noise: Option<Normal<f64>>,
    rng: ChaCha8Rng,
}

impl TankEnv {
    /// Builds an environment settled at `level`. `noise_seed = None` turns
    /// measurement noise off.
    pub fn new(params: TankParams, pid: &PidConfig, level: f64, noise_seed: Option<u64>) -> Result<Self> {
        params.validate()?;
        let level_pid = PidController::new(pid.level, params.dt, f64::NEG_INFINITY, f64::INFINITY)?;
        let flow_pid = PidController::new(pid.flow, params.dt, 0.0, 100.0)?;
        let noise = match noise_seed {
            Some(_) if params.noise_variance > 0.0 => Some(
                Normal::new(0.0, params.noise_variance.sqrt())
                    .map_err(|e| Error::Config(format!("noise distribution: {e}")))?,
            ),
            _ => None,
        };
        let state = params.equilibrium(level)?;
        let mut env = Self {
            level_pid,
            flow_pid,
            limits: Limits::new(0.0, 100.0)?,
            state,
            u: state.p,
            setpoint: level,
            measurement: level,
            noise,
            rng: ChaCha8Rng::seed_from_u64(noise_seed.unwrap_or(0)),
            params,
        };
        env.reset(level)?;
        Ok(env)
    }

    /// Settles the plant and controllers at `level` with that level as
    /// setpoint. The noise stream continues.
    pub fn reset(&mut self, level: f64) -> Result<()> {
        self.state = self.params.equilibrium(level)?;
        self.u = self.state.p;
        self.setpoint = level;
        self.level_pid.reset_to(0.0);
        self.flow_pid.reset_to(self.state.p);
        self.measurement = self.measure();
        Ok(())
    }

    /// Restarts the noise stream.
    pub fn reseed(&mut self, seed: u64) {
        self.rng = ChaCha8Rng::seed_from_u64(seed);
    }

    fn measure(&mut self) -> f64 {
        let noise = self.noise.map_or(0.0, |n| n.sample(&mut self.rng));
        self.state.m + noise
    }

    pub fn params(&self) -> &TankParams {
        &self.params
    }

    pub fn state(&self) -> &TankState {
        &self.state
    }

    pub fn measurement(&self) -> f64 {
        self.measurement
    }

    pub fn setpoint(&self) -> f64 {
        self.setpoint
    }

    pub fn set_setpoint(&mut self, level: f64) -> Result<()> {
        if !level.is_finite() {
            return Err(Error::NonFinite("level setpoint"));
        }
        self.setpoint = level;
        Ok(())
    }

    /// Flow setpoint in percent.
    pub fn flow_setpoint(&self) -> f64 {
        self.u
    }

    /// Tracking error seen by the controllers, `setpoint - measurement`.
    pub fn error(&self) -> f64 {
        self.setpoint - self.measurement
    }

    pub fn noise_enabled(&self) -> bool {
        self.noise.is_some()
    }

    /// Applies `du_q` together with the level controller's increment, runs
    /// the flow controller and integrates one control period.
    pub fn step(&mut self, du_q: f64) -> Result<EnvStep> {
        if !du_q.is_finite() {
            return Err(Error::NonFinite("external flow-setpoint increment"));
        }
        let du_pid = self.level_pid.increment(self.error())?;
        let (u, clamped) = compose_incremental(du_q, du_pid, self.u, self.limits);
        let flow_percent = 100.0 * self.state.fin / self.params.f_max;
        let pump_setpoint = self.flow_pid.positional(u - flow_percent)?;
        let next = integrate(&self.params, &self.state, pump_setpoint);
        if !next.is_finite() {
            return Err(Error::NonFinite("tank state"));
        }
        self.state = next;
        self.u = u;
        self.measurement = self.measure();
        Ok(EnvStep {
            setpoint: self.setpoint,
            state: self.state,
            measurement: self.measurement,
            du_q,
            du_pid,
            u,
            clamped,
            reward: reward(self.setpoint, self.measurement, du_q),
        })
    }
}

/// Pseudorandom binary excitation of the external increment around a fixed
/// operating level.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExcitationConfig {
    /// Record length `N`.
    pub samples: usize,
    /// Magnitude of `du_q` (percent per step).
    pub amplitude: f64,
    /// Number of steps each random sign is held.
    pub hold: usize,
    /// Operating level and setpoint during collection (m).
    pub level: f64,
    /// Keep measurement noise on while collecting. Off by default: the
    /// least-squares Hankel fit is biased by output noise.
    pub noise: bool,
}

impl Default for ExcitationConfig {
    fn default() -> Self {
        Self {
            samples: 2000,
            amplitude: 0.5,
            hold: 1,
            level: 0.5,
            noise: false,
        }
    }
}

/// Drives `env` with a binary sequence of `du_q` and records
/// `(du_q_t, measurement_t - level)`, where the measurement is taken before
/// the increment is applied. Fails unless the inputs are persistently
/// exciting of order `2 order + 1`.
pub fn collect_excitation<R: Rng + ?Sized>(
    env: &mut TankEnv,
    cfg: &ExcitationConfig,
    order: usize,
    rng: &mut R,
) -> Result<Trajectory> {
    if cfg.hold == 0 || !(cfg.amplitude >= 0.0 && cfg.amplitude.is_finite()) {
        return Err(Error::Config("excitation needs hold >= 1 and a finite nonnegative amplitude".into()));
    }
    let required = 2 * order + 1;
    if cfg.samples < 2 * required + 1 {
        return Err(Error::Config(format!(
            "excitation length {} too short for order {required}; need at least {}",
            cfg.samples,
            2 * required + 1
        )));
    }
    env.reset(cfg.level)?;
    let mut u = Vec::with_capacity(cfg.samples);
    let mut y = Vec::with_capacity(cfg.samples);
    let mut sign = 1.0;
    for k in 0..cfg.samples {
        if k % cfg.hold == 0 {
            sign = if rng.random::<bool>() { 1.0 } else { -1.0 };
        }
        let du = sign * cfg.amplitude;
        y.push(env.measurement() - cfg.level);
        u.push(du);
        env.step(du)?;
    }
    let traj = Trajectory::new(u, y, env.params().dt)?;
    let rank = crate::behavior::numerical_rank(&crate::behavior::build_hankel(
        &traj.inputs()[..traj.len() - 1],
        required,
    )?);
    if rank < required {
        return Err(Error::NotPersistentlyExciting { rank, required });
    }
    Ok(traj)
}

/// Free-run check of an internal model on its own record: drives the model
/// with the recorded inputs from a zero window and returns the root-mean-square
/// gap to the recorded outputs.
pub fn free_run_rms(model: &HankelModel, traj: &Trajectory) -> Result<f64> {
    let l = model.order();
    let mut wu = vec![0.0; l];
    let mut wy = vec![0.0; l];
    let mut sq = 0.0;
    for (&u, &y) in traj.inputs().iter().zip(traj.outputs()) {
        let pred = model.predict_fast(&wu, &wy)?;
        if !pred.is_finite() {
            return Err(Error::NonFinite("internal model free run"));
        }
        sq += (pred - y).powi(2);
        wu.copy_within(1.., 0);
        wy.copy_within(1.., 0);
        wu[l - 1] = u;
        wy[l - 1] = pred;
    }
    Ok((sq / traj.len() as f64).sqrt())
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    fn quiet_env(level: f64) -> TankEnv {
        TankEnv::new(TankParams::default(), &PidConfig::default(), level, None).unwrap()
    }

    #[test]
    fn reward_examples() {
        assert_eq!(reward(0.5, 0.5, 0.0), 0.0);
        assert_abs_diff_eq!(reward(1.0, 0.0, 0.0), -0.1, epsilon = 1e-15);
        assert_abs_diff_eq!(reward(0.3, 0.3, 2.0), -0.04, epsilon = 1e-15);
    }

    proptest! {
        #[test]
        fn reward_is_nonpositive_and_zero_only_at_rest(sp in -2.0f64..2.0, m in -2.0f64..2.0, du in -5.0f64..5.0) {
            let r = reward(sp, m, du);
            prop_assert!(r <= 0.0);
            prop_assert_eq!(r == 0.0, sp == m && du == 0.0);
        }
    }

    #[test]
    fn settled_loop_stays_put_without_noise() {
        let mut env = quiet_env(0.5);
        let start = *env.state();
        for _ in 0..100 {
            let s = env.step(0.0).unwrap();
            assert!((s.state.l - start.l).abs() < 1e-9);
            assert!((s.state.p - start.p).abs() < 1e-9);
            assert!(s.du_pid.abs() < 1e-9);
        }
    }

    #[test]
    fn pid_loop_tracks_a_setpoint_step() {
        let mut env = quiet_env(0.5);
        env.set_setpoint(0.7).unwrap();
        let steps = (600.0 / env.params().dt) as usize;
        let mut last = 0.0;
        for _ in 0..steps {
            last = env.step(0.0).unwrap().state.l;
        }
        assert!((last - 0.7).abs() < 0.02 * 0.2, "level {last}");
    }

    #[test]
    fn identical_seeds_give_identical_rollouts() {
        let run = |seed| {
            let mut env = TankEnv::new(TankParams::default(), &PidConfig::default(), 0.5, Some(seed)).unwrap();
            env.set_setpoint(0.6).unwrap();
            (0..200).map(|k| env.step(0.1 * (k % 7) as f64 - 0.3).unwrap().measurement).collect::<Vec<_>>()
        };
        assert_eq!(run(3), run(3));
        assert_ne!(run(3), run(4));
    }

    #[test]
    fn noise_has_the_configured_variance() {
        let mut env = TankEnv::new(TankParams::default(), &PidConfig::default(), 0.5, Some(11)).unwrap();
        let n = 20_000;
        let readings: Vec<f64> = (0..n).map(|_| env.measure() - env.state().m).collect();
        let mean = readings.iter().sum::<f64>() / n as f64;
        let var = readings.iter().map(|r| (r - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
        assert!(mean.abs() < 4.0 * (0.015f64 / n as f64).sqrt());
        assert!((var - 0.015).abs() < 0.015 * 0.05, "{var}");
    }

    #[test]
    fn rejects_non_finite_increment() {
        assert!(matches!(quiet_env(0.5).step(f64::NAN), Err(Error::NonFinite(_))));
    }

    #[test]
    fn zero_amplitude_excitation_fails_the_rank_check() {
        let mut env = quiet_env(0.5);
        let cfg = ExcitationConfig {
            samples: 400,
            amplitude: 0.0,
            ..ExcitationConfig::default()
        };
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert!(matches!(
            collect_excitation(&mut env, &cfg, 10, &mut rng),
            Err(Error::NotPersistentlyExciting { .. })
        ));
    }

    #[test]
    fn binary_excitation_passes_the_rank_check() {
        let mut env = quiet_env(0.5);
        let cfg = ExcitationConfig {
            samples: 400,
            ..ExcitationConfig::default()
        };
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let traj = collect_excitation(&mut env, &cfg, 10, &mut rng).unwrap();
        assert_eq!(traj.len(), 400);
        assert!(crate::behavior::is_persistently_exciting(&traj.inputs()[..399], 21).unwrap());
    }
}
