use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::{Actor, Transition};
use crate::error::{Error, Result};
use crate::nn::{Activation, AdamConfig, AdamState, DenseNet, Parameterized, Tape, Tensor, Var};

/// TD3 hyperparameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Td3Config {
    pub gamma: f64,
    /// Polyak factor of the target networks.
    pub tau: f64,
    pub batch_size: usize,
    pub buffer_capacity: usize,
    /// Standard deviation of the Gaussian exploration noise on `du_q`.
    pub exploration_std: f64,
    /// Standard deviation of the target-policy smoothing noise.
    pub target_noise_std: f64,
    /// Clip of the target-policy smoothing noise.
    pub target_noise_clip: f64,
    pub actor_lr: f64,
    pub critic_lr: f64,
    /// Critic updates per actor update.
    pub policy_delay: u64,
    /// Hidden width of both critic layers.
    pub critic_hidden: usize,
    /// Hidden width of the feedforward comparison actor.
    pub baseline_hidden: usize,
    /// Episodes of exploration before the first update.
    pub warmup_episodes: usize,
}

impl Default for Td3Config {
    fn default() -> Self {
        Self {
            gamma: 0.99,
            tau: 0.005,
            batch_size: 64,
            buffer_capacity: 100_000,
            exploration_std: 0.1,
            target_noise_std: 0.2,
            target_noise_clip: 0.5,
            actor_lr: 1e-3,
            critic_lr: 1e-3,
            policy_delay: 4,
            critic_hidden: 64,
            baseline_hidden: 64,
            warmup_episodes: 2,
        }
    }
}

impl Td3Config {
    pub fn validate(&self) -> Result<()> {
        let unit = [("gamma", self.gamma), ("tau", self.tau)];
        for (name, v) in unit {
            if !(0.0..=1.0).contains(&v) {
                return Err(Error::Config(format!("td3.{name} must lie in [0, 1], got {v}")));
            }
        }
        let nonneg = [
            ("exploration_std", self.exploration_std),
            ("target_noise_std", self.target_noise_std),
            ("target_noise_clip", self.target_noise_clip),
        ];
        for (name, v) in nonneg {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(Error::Config(format!("td3.{name} must be nonnegative, got {v}")));
            }
        }
        for (name, v) in [("actor_lr", self.actor_lr), ("critic_lr", self.critic_lr)] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::Config(format!("td3.{name} must be positive, got {v}")));
            }
        }
        if self.batch_size == 0 || self.buffer_capacity < self.batch_size {
            return Err(Error::Config(
                "td3 needs batch_size >= 1 and buffer_capacity >= batch_size".into(),
            ));
        }
        if self.policy_delay == 0 || self.critic_hidden == 0 || self.baseline_hidden == 0 {
            return Err(Error::Config("td3.policy_delay and hidden widths must be positive".into()));
        }
        Ok(())
    }

    fn adam(lr: f64) -> AdamConfig {
        AdamConfig {
            step_size: lr,
            ..AdamConfig::default()
        }
    }
}

/// State-action value network `Q(features, a)`.
#[derive(Debug, Clone)]
pub struct Critic {
    net: DenseNet,
}

impl Critic {
    pub fn new<R: Rng + ?Sized>(feature_dim: usize, hidden: usize, rng: &mut R) -> Result<Self> {
        let net = DenseNet::new(
            &[feature_dim + 1, hidden, hidden, 1],
            &[Activation::Softplus, Activation::Softplus, Activation::Identity],
            rng,
        )?;
        Ok(Self { net })
    }

    pub fn feature_dim(&self) -> usize {
        self.net.input_dim() - 1
    }

    pub fn value(&self, features: &[f64], action: f64) -> Result<f64> {
        let mut x = features.to_vec();
        x.push(action);
        Ok(self.net.forward(&x)?[0])
    }

    pub fn value_tape(&self, tape: &mut Tape, params: &[Var], features: Var, action: Var) -> Result<Var> {
        let x = tape.concat(features, action)?;
        let out = self.net.forward_tape(tape, params, x)?;
        tape.index(out, 0)
    }
}

impl Parameterized for Critic {
    fn params(&self) -> Vec<&Tensor> {
        self.net.params()
    }

    fn params_mut(&mut self) -> Vec<&mut Tensor> {
        self.net.params_mut()
    }

    fn param_names(&self) -> Vec<String> {
        self.net.param_names()
    }
}

/// Per-sample detail of one critic update.
#[derive(Debug, Clone, PartialEq)]
pub struct CriticReport {
    /// Mean squared Bellman error of each critic before the step.
    pub losses: [f64; 2],
    /// Bellman targets `r + gamma (1 - done) min(Q1', Q2')`.
    pub targets: Vec<f64>,
    /// Both target-critic values at the smoothed next action.
    pub target_values: Vec<[f64; 2]>,
    /// True when a non-finite gradient made the step a no-op.
    pub skipped: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ActorReport {
    /// `-mean Q(s, pi(s))` before the step.
    pub loss: f64,
    pub skipped: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct UpdateReport {
    pub critic: CriticReport,
    pub actor: Option<ActorReport>,
}

/// Twin-critic delayed deterministic policy gradient learner.
#[derive(Debug, Clone)]
pub struct Td3Agent<A> {
    cfg: Td3Config,
    actor: A,
    actor_target: A,
    critics: [Critic; 2],
    critic_targets: [Critic; 2],
    actor_opt: AdamState,
    critic_opts: [AdamState; 2],
    critic_updates: u64,
    actor_updates: u64,
    rng: ChaCha8Rng,
}

impl<A: Actor> Td3Agent<A> {
    /// `feature_dim` is the critic's observation width; `rng` initializes the
    /// critics and seeds the target-smoothing noise.
    pub fn new<R: Rng + ?Sized>(cfg: Td3Config, actor: A, feature_dim: usize, rng: &mut R) -> Result<Self> {
        cfg.validate()?;
        let critics = [
            Critic::new(feature_dim, cfg.critic_hidden, rng)?,
            Critic::new(feature_dim, cfg.critic_hidden, rng)?,
        ];
        let critic_opts = [
            AdamState::new(critics[0].params(), Td3Config::adam(cfg.critic_lr)),
            AdamState::new(critics[1].params(), Td3Config::adam(cfg.critic_lr)),
        ];
        let actor_opt = AdamState::new(actor.params(), Td3Config::adam(cfg.actor_lr));
        Ok(Self {
            actor_target: actor.clone(),
            critic_targets: critics.clone(),
            actor,
            critics,
            actor_opt,
            critic_opts,
            critic_updates: 0,
            actor_updates: 0,
            rng: ChaCha8Rng::seed_from_u64(rng.random()),
            cfg,
        })
    }

    pub fn config(&self) -> &Td3Config {
        &self.cfg
    }

    pub fn actor(&self) -> &A {
        &self.actor
    }

    pub fn actor_mut(&mut self) -> &mut A {
        &mut self.actor
    }

    pub fn actor_target(&self) -> &A {
        &self.actor_target
    }

    pub fn critics(&self) -> &[Critic; 2] {
        &self.critics
    }

    pub fn critic_targets(&self) -> &[Critic; 2] {
        &self.critic_targets
    }

    pub fn critic_updates(&self) -> u64 {
        self.critic_updates
    }

    pub fn actor_updates(&self) -> u64 {
        self.actor_updates
    }

    /// One critic step, followed every `policy_delay` critic steps by an
    /// actor step and a soft update of all target networks.
    pub fn update(&mut self, batch: &[&Transition]) -> Result<UpdateReport> {
        let critic = self.critic_update(batch)?;
        let actor = if self.critic_updates % self.cfg.policy_delay == 0 {
            let report = self.actor_update(batch)?;
            self.soft_update_targets();
            Some(report)
        } else {
            None
        };
        Ok(UpdateReport { critic, actor })
    }

    /// Smoothed target action `pi'(s') + clip(N(0, sigma^2), -c, c)`.
    fn target_action(&mut self, t: &Transition) -> Result<f64> {
        let a = self.actor_target.action(&t.next_obs)?;
        let noise = if self.cfg.target_noise_std > 0.0 {
            let n = Normal::new(0.0, self.cfg.target_noise_std)
                .map_err(|e| Error::InvalidArgument(format!("target noise: {e}")))?;
            n.sample(&mut self.rng)
                .clamp(-self.cfg.target_noise_clip, self.cfg.target_noise_clip)
        } else {
            0.0
        };
        Ok(a + noise)
    }

    pub fn critic_update(&mut self, batch: &[&Transition]) -> Result<CriticReport> {
        if batch.is_empty() {
            return Err(Error::InvalidArgument("empty batch".into()));
        }
        let mut targets = Vec::with_capacity(batch.len());
        let mut target_values = Vec::with_capacity(batch.len());
        for t in batch {
            let a_next = self.target_action(t)?;
            let feats = t.next_obs.features();
            let q1 = self.critic_targets[0].value(&feats, a_next)?;
            let q2 = self.critic_targets[1].value(&feats, a_next)?;
            let bootstrap = if t.terminal { 0.0 } else { self.cfg.gamma * q1.min(q2) };
            targets.push(t.reward + bootstrap);
            target_values.push([q1, q2]);
        }
        self.critic_updates += 1;
        if !targets.iter().all(|v| v.is_finite()) {
            log::warn!("non-finite Bellman target; skipping critic update {}", self.critic_updates);
            return Ok(CriticReport {
                losses: [f64::NAN; 2],
                targets,
                target_values,
                skipped: true,
            });
        }

        let mut losses = [0.0; 2];
        let mut grads = Vec::with_capacity(2);
        for (k, critic) in self.critics.iter().enumerate() {
            let mut tape = Tape::new();
            let params = critic.bind(&mut tape)?;
            let mut terms = Vec::with_capacity(batch.len());
            for (t, &y) in batch.iter().zip(&targets) {
                let s = tape.vector(&t.obs.features())?;
                let a = tape.scalar(t.action)?;
                let q = critic.value_tape(&mut tape, &params, s, a)?;
                let y = tape.scalar(y)?;
                let diff = tape.sub(q, y)?;
                terms.push(tape.mul(diff, diff)?);
            }
            let loss = tape.mean(&terms)?;
            losses[k] = tape.scalar_value(loss);
            grads.push(tape.backward(loss, &Tensor::scalar(1.0))?.collect(&params));
        }
        if !losses.iter().all(|l| l.is_finite()) || !grads.iter().flatten().all(|g| g.is_finite()) {
            log::warn!("non-finite critic gradient; skipping critic update {}", self.critic_updates);
            return Ok(CriticReport {
                losses,
                targets,
                target_values,
                skipped: true,
            });
        }
        for ((critic, opt), g) in self.critics.iter_mut().zip(&mut self.critic_opts).zip(&grads) {
            opt.step(critic.params_mut(), g)?;
        }
        Ok(CriticReport {
            losses,
            targets,
            target_values,
            skipped: false,
        })
    }

    /// Deterministic policy-gradient step against the first critic.
    pub fn actor_update(&mut self, batch: &[&Transition]) -> Result<ActorReport> {
        let critic = self.critics[0].clone();
        let mut tape = Tape::new();
        let params = critic.bind(&mut tape)?;
        self.actor_step(&mut tape, batch, |tape, s, a| critic.value_tape(tape, &params, s, a))
    }

    /// Actor step against an arbitrary differentiable critic
    /// `(tape, features, action) -> value`. Targets are left untouched.
    pub fn actor_update_with<F>(&mut self, batch: &[&Transition], critic: F) -> Result<ActorReport>
    where
        F: FnMut(&mut Tape, Var, Var) -> Result<Var>,
    {
        let mut tape = Tape::new();
        self.actor_step(&mut tape, batch, critic)
    }

    fn actor_step<F>(&mut self, tape: &mut Tape, batch: &[&Transition], mut critic: F) -> Result<ActorReport>
    where
        F: FnMut(&mut Tape, Var, Var) -> Result<Var>,
    {
        if batch.is_empty() {
            return Err(Error::InvalidArgument("empty batch".into()));
        }
        self.actor_updates += 1;
        let params = self.actor.bind(tape)?;
        let mut values = Vec::with_capacity(batch.len());
        for t in batch {
            let a = self.actor.action_tape(tape, &params, &t.obs)?;
            let s = tape.vector(&t.obs.features())?;
            values.push(critic(tape, s, a)?);
        }
        let mean = tape.mean(&values)?;
        let loss = tape.scale(mean, -1.0)?;
        let value = tape.scalar_value(loss);
        let grads = tape.backward(loss, &Tensor::scalar(1.0))?.collect(&params);
        if !value.is_finite() || !grads.iter().all(|g| g.is_finite()) {
            log::warn!("non-finite actor gradient; skipping actor update {}", self.actor_updates);
            return Ok(ActorReport {
                loss: value,
                skipped: true,
            });
        }
        self.actor_opt.step(self.actor.params_mut(), &grads)?;
        Ok(ActorReport {
            loss: value,
            skipped: false,
        })
    }

    pub fn soft_update_targets(&mut self) {
        let tau = self.cfg.tau;
        self.actor_target.soft_update_from(&self.actor, tau);
        for (target, source) in self.critic_targets.iter_mut().zip(&self.critics) {
            target.soft_update_from(source, tau);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rl::{FeedforwardActor, Observation};
    use crate::stablenet::{QParameter, QParameterConfig};
    use crate::youla::QInput;

    fn obs(e: f64, z: Vec<f64>) -> Observation {
        Observation {
            input: QInput {
                error: e,
                prediction: 0.0,
                r_hat: e,
            },
            z_prev: vec![0.0; z.len()],
            z,
            r_prev: 0.0,
        }
    }

    fn transition(e: f64, action: f64, reward: f64, terminal: bool) -> Transition {
        Transition {
            obs: obs(e, vec![0.1, -0.2, 0.0, 0.3]),
            action,
            reward,
            next_obs: obs(-e, vec![0.0, 0.1, 0.2, -0.1]),
            terminal,
        }
    }

    fn q_agent(cfg: Td3Config, seed: u64) -> Td3Agent<QParameter> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let q = QParameter::new(&QParameterConfig::default(), &mut rng).unwrap();
        Td3Agent::new(cfg, q, 7, &mut rng).unwrap()
    }

    #[test]
    fn target_takes_the_smaller_twin() {
        let mut agent = q_agent(Td3Config::default(), 0);
        // Make the two target critics clearly different.
        agent.critic_targets[1] = Critic::new(7, 64, &mut ChaCha8Rng::seed_from_u64(99)).unwrap();
        let batch_owned: Vec<Transition> = (0..16).map(|k| transition(0.1 * k as f64, 0.0, -0.5, false)).collect();
        let batch: Vec<&Transition> = batch_owned.iter().collect();
        let report = agent.critic_update(&batch).unwrap();
        for ((t, y), [q1, q2]) in batch.iter().zip(&report.targets).zip(&report.target_values) {
            assert_ne!(q1, q2);
            let expected = t.reward + 0.99 * q1.min(*q2);
            assert!((y - expected).abs() < 1e-12);
        }
    }

    #[test]
    fn zero_discount_and_terminal_targets_are_the_reward() {
        let cfg = Td3Config {
            gamma: 0.0,
            ..Td3Config::default()
        };
        let mut agent = q_agent(cfg, 1);
        let t = transition(0.2, 0.1, -0.37, false);
        let report = agent.critic_update(&[&t]).unwrap();
        assert_eq!(report.targets, vec![-0.37]);

        let mut agent = q_agent(Td3Config::default(), 1);
        let t = transition(0.2, 0.1, -0.37, true);
        let report = agent.critic_update(&[&t]).unwrap();
        assert_eq!(report.targets, vec![-0.37]);
    }

    #[test]
    fn single_terminal_transition_reaches_its_fixed_point() {
        let mut agent = q_agent(Td3Config::default(), 2);
        let t = transition(0.3, 0.05, -1.0, true);
        for _ in 0..2000 {
            agent.critic_update(&[&t]).unwrap();
        }
        for critic in agent.critics() {
            let q = critic.value(&t.obs.features(), t.action).unwrap();
            assert!((q + 1.0).abs() < 1e-2, "{q}");
        }
    }

    #[test]
    fn zero_discount_loss_vanishes_on_a_frozen_buffer() {
        let cfg = Td3Config {
            gamma: 0.0,
            ..Td3Config::default()
        };
        let mut agent = q_agent(cfg, 8);
        let owned: Vec<Transition> = (0..8).map(|k| transition(0.1 * k as f64, 0.02 * k as f64, -0.4, false)).collect();
        let batch: Vec<&Transition> = owned.iter().collect();
        let first = agent.critic_update(&batch).unwrap();
        assert!(first.targets.iter().all(|&y| y == -0.4));
        let mut last = first.clone();
        for _ in 0..1500 {
            last = agent.critic_update(&batch).unwrap();
        }
        for k in 0..2 {
            assert!(last.losses[k] < 1e-4 && last.losses[k] < 0.01 * first.losses[k], "{:?}", last.losses);
        }
    }

    #[test]
    fn constant_critic_gives_no_actor_gradient() {
        let mut agent = q_agent(Td3Config::default(), 3);
        let before: Vec<Tensor> = agent.actor().params().into_iter().cloned().collect();
        let t = transition(0.3, 0.0, -1.0, false);
        let report = agent
            .actor_update_with(&[&t], |tape, _, _| tape.scalar(4.2))
            .unwrap();
        assert!(!report.skipped);
        assert_eq!(report.loss, -4.2);
        for (b, a) in before.iter().zip(agent.actor().params()) {
            assert_eq!(b, a);
        }
    }

    #[test]
    fn action_shrinks_under_a_penalizing_critic() {
        let cfg = Td3Config {
            actor_lr: 1e-2,
            ..Td3Config::default()
        };
        let mut agent = q_agent(cfg, 4);
        *agent.actor_mut().params_mut().pop().unwrap() = Tensor::scalar(0.5);
        let batch_owned: Vec<Transition> = [-0.5, -0.2, 0.3, 0.6]
            .iter()
            .map(|&e| transition(e, 0.0, 0.0, false))
            .collect();
        let batch: Vec<&Transition> = batch_owned.iter().collect();
        let magnitude = |agent: &Td3Agent<QParameter>| -> f64 {
            batch
                .iter()
                .map(|t| Actor::action(agent.actor(), &t.obs).unwrap().powi(2))
                .sum()
        };
        let start = magnitude(&agent);
        for _ in 0..300 {
            agent
                .actor_update_with(&batch, |tape, _, a| {
                    let sq = tape.mul(a, a)?;
                    tape.scale(sq, -1.0)
                })
                .unwrap();
        }
        let end = magnitude(&agent);
        assert!(end < 0.01 * start, "{start} -> {end}");
        assert!(agent.actor().feedthrough().abs() < 0.05);
    }

    #[test]
    fn actor_updates_follow_the_policy_delay() {
        let mut agent = q_agent(Td3Config::default(), 5);
        let t = transition(0.1, 0.0, -0.1, false);
        let mut actor_steps = 0;
        for k in 1..=23u64 {
            let report = agent.update(&[&t]).unwrap();
            assert_eq!(report.actor.is_some(), k % 4 == 0);
            actor_steps += report.actor.is_some() as u64;
        }
        assert_eq!(actor_steps, 23 / 4);
        assert_eq!(agent.actor_updates(), 5);
        assert_eq!(agent.critic_updates(), 23);
    }

    #[test]
    fn targets_trail_the_online_networks() {
        let mut agent = q_agent(Td3Config::default(), 6);
        let t = transition(0.4, 0.2, -0.3, false);
        for _ in 0..40 {
            agent.update(&[&t]).unwrap();
        }
        let gap = |a: Vec<&Tensor>, b: Vec<&Tensor>| -> f64 {
            a.iter().zip(b).map(|(x, y)| x.zip_map(y, |p, q| (p - q).abs()).data().iter().sum::<f64>()).sum()
        };
        let moved = gap(agent.actor().params(), agent.actor_target().params());
        assert!(moved > 0.0);
        let mut fresh = q_agent(Td3Config::default(), 6);
        fresh.soft_update_targets();
        assert!(gap(fresh.actor().params(), fresh.actor_target().params()) < 1e-12);
    }

    #[test]
    fn feedforward_baseline_trains() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let actor = FeedforwardActor::new(16, &mut rng).unwrap();
        let mut agent = Td3Agent::new(Td3Config::default(), actor, 3, &mut rng).unwrap();
        let o = Observation {
            input: QInput {
                error: 0.1,
                prediction: 0.0,
                r_hat: 0.1,
            },
            z: vec![],
            z_prev: vec![],
            r_prev: 0.0,
        };
        let t = Transition {
            obs: o.clone(),
            action: 0.0,
            reward: -0.1,
            next_obs: o,
            terminal: false,
        };
        for _ in 0..8 {
            let r = agent.update(&[&t]).unwrap();
            assert!(!r.critic.skipped);
        }
        assert_eq!(agent.actor_updates(), 2);
    }

    #[test]
    fn invalid_configs_are_rejected() {
        for cfg in [
            Td3Config { gamma: 1.5, ..Td3Config::default() },
            Td3Config { batch_size: 0, ..Td3Config::default() },
            Td3Config { policy_delay: 0, ..Td3Config::default() },
            Td3Config { actor_lr: 0.0, ..Td3Config::default() },
        ] {
            assert!(cfg.validate().is_err());
        }
    }
}
