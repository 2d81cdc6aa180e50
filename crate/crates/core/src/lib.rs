//! Stabilizing reinforcement-learning control through a data-driven
//! Youla-Kučera parameterization.
//!
//! The crate is organized bottom-up:
//!
//! - [`nn`]: dense networks with a reverse-mode gradient tape and Adam.
//! - [`stablenet`]: input-convex Lyapunov network, the corrected stable
//!   dynamics and the control-affine Q parameter used as the policy.
//! - [`behavior`]: Hankel-matrix internal model built from input/output data.
//! - [`lti`]: exact linear-system oracles, including the classical
//!   Youla-Kučera controller.
//! - [`youla`]: the data-driven controller that wraps a stable Q operator
//!   around the Hankel model.
//! - [`env`]: two-tank level-control simulator with cascaded PID loops.
//! - [`rl`]: TD3 training of the Q parameter.
//! - [`config`], [`run`], [`verify`]: run configuration, run-directory
//!   artifacts and the oracle verification suites.

pub mod behavior;
pub mod config;
pub mod env;
pub mod error;
pub mod lti;
pub mod nn;
pub mod rl;
pub mod run;
pub mod stablenet;
pub mod verify;
pub mod youla;

pub use error::{Error, Result};
