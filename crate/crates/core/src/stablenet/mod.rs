//! Stable-by-construction nonlinear operators: an input-convex Lyapunov
//! network, dynamics corrected to decrease it, and the control-affine Q
//! parameter built on top of them.

mod dynamics;
mod lyapunov;
mod qparam;

pub use dynamics::{StableDynamics, StableStep};
pub use lyapunov::LyapunovNet;
pub use qparam::{QParameter, QParameterConfig};
