//! Data-driven internal model: Hankel matrices of a recorded trajectory,
//! persistent-excitation checks and next-output prediction.

mod hankel;
mod model;
mod trajectory;

pub use hankel::{build_hankel, is_persistently_exciting, numerical_rank, RANK_TOLERANCE};
pub use model::{HankelModel, DEFAULT_RIDGE};
pub use trajectory::Trajectory;
