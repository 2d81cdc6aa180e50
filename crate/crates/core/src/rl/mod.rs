//! TD3 training of the Youla-Kucera policy: replay storage, the actor
//! abstraction over the stable Q parameter and its unconstrained baseline,
//! twin critics, and the per-seed training loop.

mod actor;
mod buffer;
mod td3;
mod train;

pub use actor::{Actor, FeedforwardActor};
pub use buffer::{Observation, ReplayBuffer, Transition};
pub use td3::{ActorReport, Critic, CriticReport, Td3Agent, Td3Config, UpdateReport};
pub use train::{
    evaluate, run_episode, train_seed, train_seeds, EpisodeOutcome, NoObserver, SeedSummary, TrainObserver,
};
