//! Point-mass pendulum with viscous friction and noisy acceleration.
//!
//! `x1` is the angle measured from the horizontal, so `(-π/2, 0)` hangs
//! down (stable) and `(π/2, 0)` stands upright (unstable). The model is
//!
//! ```text
//! m l² ẍ1 = τ − b·(180/π)·x2 − m g l cos(x1) + m l² η,   η ~ N(0, σ²)
//! ```
//!
//! with the friction coefficient `b` given per degree/s.

use dfpd_core::runtime::Plant;
use rand::RngCore;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};

pub const GRAVITY: f64 = 9.81;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Integrator {
    #[default]
    Euler,
    Rk4,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PendulumParams {
    /// Rod length, m.
    pub length: f64,
    /// Tip mass, kg.
    pub mass: f64,
    /// Viscous friction, N·m per deg/s.
    pub friction: f64,
    /// Variance of the additive acceleration noise, (rad/s²)².
    pub noise_variance: f64,
    /// Actuator limit, N·m. Commands are clamped to `±max_torque`.
    pub max_torque: f64,
    /// Integration / control period, s.
    pub dt: f64,
    pub integrator: Integrator,
}

impl PendulumParams {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("length", self.length),
            ("mass", self.mass),
            ("dt", self.dt),
            ("max_torque", self.max_torque),
        ];
        for (name, v) in positive {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::Params(format!("{name} must be positive, got {v}")));
            }
        }
        for (name, v) in [("friction", self.friction), ("noise_variance", self.noise_variance)] {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(Error::Params(format!("{name} must be non-negative, got {v}")));
            }
        }
        Ok(())
    }

    /// `m l²`.
    pub fn inertia(&self) -> f64 {
        self.mass * self.length * self.length
    }

    pub fn gravity_torque(&self, x1: f64) -> f64 {
        self.mass * GRAVITY * self.length * x1.cos()
    }

    pub fn friction_torque(&self, x2: f64) -> f64 {
        self.friction * x2.to_degrees()
    }

    /// Angular acceleration for a given torque and noise sample.
    pub fn acceleration(&self, state: [f64; 2], torque: f64, noise: f64) -> f64 {
        (torque - self.friction_torque(state[1]) - self.gravity_torque(state[0])) / self.inertia() + noise
    }

    /// Kinetic plus potential energy, zero potential at the horizontal.
    pub fn energy(&self, state: [f64; 2]) -> f64 {
        0.5 * self.inertia() * state[1] * state[1] + self.mass * GRAVITY * self.length * state[0].sin()
    }

    /// One deterministic step with a given noise sample; `torque` is clamped.
    pub fn step_with_noise(&self, state: [f64; 2], torque: f64, noise: f64) -> Result<[f64; 2]> {
        let tau = torque.clamp(-self.max_torque, self.max_torque);
        let h = self.dt;
        let f = |s: [f64; 2]| [s[1], self.acceleration(s, tau, noise)];
        let next = match self.integrator {
            Integrator::Euler => {
                let d = f(state);
                [state[0] + h * d[0], state[1] + h * d[1]]
            }
            Integrator::Rk4 => {
                let k1 = f(state);
                let k2 = f([state[0] + 0.5 * h * k1[0], state[1] + 0.5 * h * k1[1]]);
                let k3 = f([state[0] + 0.5 * h * k2[0], state[1] + 0.5 * h * k2[1]]);
                let k4 = f([state[0] + h * k3[0], state[1] + h * k3[1]]);
                [
                    state[0] + h / 6.0 * (k1[0] + 2.0 * k2[0] + 2.0 * k3[0] + k4[0]),
                    state[1] + h / 6.0 * (k1[1] + 2.0 * k2[1] + 2.0 * k3[1] + k4[1]),
                ]
            }
        };
        if next.iter().all(|x| x.is_finite()) {
            Ok(next)
        } else {
            Err(Error::Divergence { step: 1 })
        }
    }

    fn noise(&self) -> Normal<f64> {
        Normal::new(0.0, self.noise_variance.sqrt()).expect("validated variance")
    }

    /// One noisy step; the noise sample is drawn from `rng`.
    pub fn step(&self, state: [f64; 2], torque: f64, rng: &mut dyn RngCore) -> Result<[f64; 2]> {
        let eta = self.noise().sample(rng);
        self.step_with_noise(state, torque, eta)
    }
}

/// [`PendulumParams`] as a closed-loop plant.
#[derive(Debug, Clone, Copy)]
pub struct Pendulum {
    pub params: PendulumParams,
}

impl Pendulum {
    pub fn new(params: PendulumParams) -> Result<Self> {
        params.validate()?;
        Ok(Self { params })
    }
}

impl Plant for Pendulum {
    fn dt(&self) -> f64 {
        self.params.dt
    }

    fn step(&self, state: &[f64], torque: f64, rng: &mut dyn RngCore) -> dfpd_core::Result<Vec<f64>> {
        if state.len() != 2 {
            return Err(dfpd_core::Error::Dimension {
                expected: 2,
                actual: state.len(),
            });
        }
        match self.params.step([state[0], state[1]], torque, rng) {
            Ok(next) => Ok(next.to_vec()),
            Err(_) => Err(dfpd_core::Error::Divergence { step: 1 }),
        }
    }
}
