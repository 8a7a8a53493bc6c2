//! Discrete fully probabilistic design: learn a controller for a target
//! system by matching the closed-loop behaviour of a reference system.
//!
//! Pipeline: quantize trajectories ([`grid`]), estimate conditional pmfs
//! ([`estimator`]), run the backward recursion ([`engine`]) whose per-state
//! problems are solved by [`solver`], then execute the first-step policy
//! ([`runtime`]).

pub mod engine;
pub mod error;
pub mod estimator;
pub mod grid;
mod lp;
pub mod model_io;
pub mod prob;
pub mod runtime;
pub mod solver;
pub mod trajectory;

pub use error::{Error, Result};
