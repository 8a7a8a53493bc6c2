//! Stochastic pendulum benchmark: plant model, swing-up demonstrations on a
//! reference pendulum and excitation data from the target pendulum.

pub mod data;
pub mod dynamics;
pub mod error;
pub mod plan;

pub use dynamics::{Integrator, Pendulum, PendulumParams, GRAVITY};
pub use error::{Error, Result};
