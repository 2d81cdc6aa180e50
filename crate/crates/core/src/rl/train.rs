use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use super::{Actor, FeedforwardActor, Observation, ReplayBuffer, Td3Agent, Transition};
use crate::behavior::HankelModel;
use crate::config::RunConfig;
use crate::env::{EpisodeSchedule, RolloutRecord, TankEnv};
use crate::error::{Error, Result};
use crate::nn::Checkpoint;
use crate::stablenet::QParameter;
use crate::youla::{StepLog, YoulaController};

/// One finished (or aborted) episode.
#[derive(Debug, Clone, PartialEq)]
pub struct EpisodeOutcome {
    pub cumulative_reward: f64,
    pub records: Vec<RolloutRecord>,
    pub logs: Vec<StepLog>,
    /// Reason the episode stopped early on a non-finite value.
    pub aborted: Option<String>,
}

/// Receives artifacts while a seed trains.
pub trait TrainObserver {
    fn episode(&mut self, _index: usize, _outcome: &EpisodeOutcome) -> Result<()> {
        Ok(())
    }

    fn checkpoint(&mut self, _index: usize, _checkpoint: &Checkpoint) -> Result<()> {
        Ok(())
    }

    fn evaluation(&mut self, _outcome: &EpisodeOutcome) -> Result<()> {
        Ok(())
    }
}

pub struct NoObserver;

impl TrainObserver for NoObserver {}

#[derive(Debug, Clone)]
pub struct SeedSummary {
    pub seed: u64,
    /// Cumulative training reward per episode.
    pub rewards: Vec<f64>,
    /// Indices of aborted episodes.
    pub aborted: Vec<usize>,
    /// Worst `V(f(z)) - beta V(z)` seen at any checkpoint; `None` for actors
    /// without a certificate.
    pub certificate_worst: Option<f64>,
    pub evaluation: EpisodeOutcome,
    pub final_checkpoint: Checkpoint,
}

/// Independent random stream `k` of `seed`.
fn stream(seed: u64, k: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(k);
    rng
}

/// Runs one episode from the settled start of `schedule`. `perturb` draws
/// the exploration added to `Q`'s output and `on_transition` sees every
/// transition together with the controller, e.g. to learn and resync its
/// parameters. A non-finite value ends the episode early and is reported
/// in [`EpisodeOutcome::aborted`].
pub fn run_episode<A, P, F>(
    env: &mut TankEnv,
    controller: &mut YoulaController<A>,
    schedule: &EpisodeSchedule,
    mut perturb: P,
    mut on_transition: F,
) -> Result<EpisodeOutcome>
where
    A: Actor,
    P: FnMut() -> f64,
    F: FnMut(Transition, &mut YoulaController<A>) -> Result<()>,
{
    env.reset(schedule.level_a)?;
    controller.reset();
    let dt = env.params().dt;
    let mut outcome = EpisodeOutcome {
        cumulative_reward: 0.0,
        records: Vec::with_capacity(schedule.steps),
        logs: Vec::with_capacity(schedule.steps),
        aborted: None,
    };
    let mut z_prev = controller.q().state();
    let mut r_prev = 0.0;
    for k in 0..schedule.steps {
        let result = (|| -> Result<()> {
            env.set_setpoint(schedule.setpoint(k))?;
            let e = env.error();
            let z = controller.q().state();
            let step = controller.control_step_perturbed(e, perturb())?;
            let env_step = env.step(step.applied)?;
            env.set_setpoint(schedule.setpoint(k + 1))?;
            let next_obs = Observation {
                input: controller.peek(env.error())?,
                z: controller.q().state(),
                z_prev: z.clone(),
                r_prev: step.input.r_hat,
            };
            let obs = Observation {
                input: step.input,
                z: z.clone(),
                z_prev: std::mem::replace(&mut z_prev, z),
                r_prev: std::mem::replace(&mut r_prev, step.input.r_hat),
            };
            outcome.cumulative_reward += env_step.reward;
            outcome.records.push(RolloutRecord::new(k, dt, &env_step));
            outcome.logs.push(StepLog {
                t: k as f64 * dt,
                e,
                y_bar: step.input.prediction,
                r_hat: step.input.r_hat,
                du_q: step.applied,
                du_pid: env_step.du_pid,
                u: env_step.u,
                clamped: env_step.clamped,
            });
            on_transition(
                Transition {
                    obs,
                    action: step.applied,
                    reward: env_step.reward,
                    next_obs,
                    terminal: false,
                },
                controller,
            )
        })();
        match result {
            Ok(()) => {}
            Err(Error::NonFinite(what)) => {
                log::warn!("episode aborted at step {k}: non-finite {what}");
                outcome.aborted = Some(format!("non-finite {what} at step {k}"));
                break;
            }
            Err(e) => return Err(e),
        }
    }
    Ok(outcome)
}

/// Exploration-free rollout of `controller`'s current policy.
pub fn evaluate<A: Actor>(
    env: &mut TankEnv,
    controller: &mut YoulaController<A>,
    schedule: &EpisodeSchedule,
) -> Result<EpisodeOutcome> {
    run_episode(env, controller, schedule, || 0.0, |_, _| Ok(()))
}

fn feature_dim(cfg: &RunConfig) -> usize {
    if cfg.baseline {
        3
    } else {
        3 + cfg.q.state_dim
    }
}

/// Trains one seed with the actor selected by `cfg.baseline`.
pub fn train_seed(
    cfg: &RunConfig,
    model: Arc<HankelModel>,
    seed: u64,
    observer: &mut dyn TrainObserver,
) -> Result<SeedSummary> {
    let mut init = stream(seed, 0);
    if cfg.baseline {
        let actor = FeedforwardActor::new(cfg.td3.baseline_hidden, &mut init)?;
        train_actor(cfg, model, actor, seed, &mut init, observer)
    } else {
        let actor = QParameter::new(&cfg.q, &mut init)?;
        train_actor(cfg, model, actor, seed, &mut init, observer)
    }
}

fn train_actor<A: Actor>(
    cfg: &RunConfig,
    model: Arc<HankelModel>,
    actor: A,
    seed: u64,
    init: &mut ChaCha8Rng,
    observer: &mut dyn TrainObserver,
) -> Result<SeedSummary> {
    cfg.validate()?;
    let mut agent = Td3Agent::new(cfg.td3.clone(), actor.clone(), feature_dim(cfg), init)?;
    let mut controller = YoulaController::new(model, actor);
    let noise_seed = cfg.noise.then(|| stream(seed, 1).random());
    let mut env = TankEnv::new(cfg.tank.clone(), &cfg.pid, cfg.episode.level_a, noise_seed)?;
    let mut explore_rng = stream(seed, 2);
    let mut replay_rng = stream(seed, 3);
    let mut cert_rng = stream(seed, 4);
    let exploration = Normal::new(0.0, cfg.td3.exploration_std)
        .map_err(|e| Error::Config(format!("exploration noise: {e}")))?;
    let mut buffer = ReplayBuffer::new(cfg.td3.buffer_capacity)?;

    let mut certificate_worst: Option<f64> = None;
    let mut check_certificate = |agent: &Td3Agent<A>, rng: &mut ChaCha8Rng| -> Result<()> {
        if let Some(v) = agent.actor().certificate_violation(cfg.certificate_samples, 1.0, rng)? {
            certificate_worst = Some(certificate_worst.map_or(v, |w| w.max(v)));
        }
        Ok(())
    };
    check_certificate(&agent, &mut cert_rng)?;

    let mut rewards = Vec::with_capacity(cfg.episodes);
    let mut aborted = Vec::new();
    for ep in 0..cfg.episodes {
        let learning = ep >= cfg.td3.warmup_episodes;
        let outcome = run_episode(
            &mut env,
            &mut controller,
            &cfg.episode,
            || exploration.sample(&mut explore_rng),
            |t, controller| {
                buffer.push(t)?;
                if learning && buffer.len() >= cfg.td3.batch_size {
                    let batch = buffer.sample(cfg.td3.batch_size, &mut replay_rng)?;
                    agent.update(&batch)?;
                    controller.q_mut().soft_update_from(agent.actor(), 1.0);
                }
                Ok(())
            },
        )?;
        log::info!("seed {seed} episode {ep}: reward {:.4}", outcome.cumulative_reward);
        if outcome.aborted.is_some() {
            aborted.push(ep);
        }
        rewards.push(outcome.cumulative_reward);
        observer.episode(ep, &outcome)?;
        if (ep + 1) % cfg.checkpoint_every == 0 && ep + 1 < cfg.episodes {
            check_certificate(&agent, &mut cert_rng)?;
            observer.checkpoint(ep + 1, &agent.actor().checkpoint())?;
        }
    }
    check_certificate(&agent, &mut cert_rng)?;
    let final_checkpoint = agent.actor().checkpoint();
    observer.checkpoint(cfg.episodes, &final_checkpoint)?;

    let mut eval_env = TankEnv::new(
        cfg.tank.clone(),
        &cfg.pid,
        cfg.episode.level_a,
        cfg.noise.then(|| stream(seed, 5).random()),
    )?;
    let evaluation = evaluate(&mut eval_env, &mut controller, &cfg.episode)?;
    observer.evaluation(&evaluation)?;

    Ok(SeedSummary {
        seed,
        rewards,
        aborted,
        certificate_worst,
        evaluation,
        final_checkpoint,
    })
}

/// Trains every seed of `cfg` on its own thread. Results come back in seed
/// order and do not depend on scheduling.
pub fn train_seeds<O, M>(cfg: &RunConfig, model: Arc<HankelModel>, make_observer: M) -> Result<Vec<SeedSummary>>
where
    O: TrainObserver,
    M: Fn(u64) -> Result<O> + Sync,
{
    std::thread::scope(|scope| {
        let handles: Vec<_> = cfg
            .seeds
            .iter()
            .map(|&seed| {
                let model = Arc::clone(&model);
                let make_observer = &make_observer;
                scope.spawn(move || {
                    let mut observer = make_observer(seed)?;
                    train_seed(cfg, model, seed, &mut observer)
                })
            })
            .collect();
        handles
            .into_iter()
            .map(|h| h.join().unwrap_or_else(|p| std::panic::resume_unwind(p)))
            .collect()
    })
}
