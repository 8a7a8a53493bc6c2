//! Closed-loop execution of a synthesized policy.

use rand::{Rng, RngCore};

use crate::error::{Error, Result};
use crate::estimator::PolicyModel;
use crate::grid::{denormalize_input, UniformGrid};
use crate::prob;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum SelectionMode {
    /// Most probable input; ties go to the lowest index.
    #[default]
    Argmax,
    /// Draw from the policy row.
    Sample,
}

/// A stationary policy together with the grids it was built on.
#[derive(Debug, Clone)]
pub struct Controller {
    policy: PolicyModel,
    state_grid: UniformGrid,
    input_grid: UniformGrid,
    max_torque: f64,
    mode: SelectionMode,
}

/// One control decision.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Action {
    pub state_index: usize,
    pub input_index: usize,
    /// Normalized input in `[-1, 1]`.
    pub u: f64,
    pub torque: f64,
}

impl Controller {
    pub fn new(
        policy: PolicyModel,
        state_grid: UniformGrid,
        input_grid: UniformGrid,
        max_torque: f64,
        mode: SelectionMode,
    ) -> Result<Self> {
        if policy.num_states() != state_grid.len() {
            return Err(Error::Dimension {
                expected: state_grid.len(),
                actual: policy.num_states(),
            });
        }
        if policy.num_inputs() != input_grid.len() || input_grid.dims() != 1 {
            return Err(Error::Dimension {
                expected: input_grid.len(),
                actual: policy.num_inputs(),
            });
        }
        if !(max_torque > 0.0 && max_torque.is_finite()) {
            return Err(Error::Config(format!("max torque must be positive, got {max_torque}")));
        }
        Ok(Self {
            policy,
            state_grid,
            input_grid,
            max_torque,
            mode,
        })
    }

    pub fn policy(&self) -> &PolicyModel {
        &self.policy
    }

    pub fn state_grid(&self) -> &UniformGrid {
        &self.state_grid
    }

    pub fn input_grid(&self) -> &UniformGrid {
        &self.input_grid
    }

    pub fn max_torque(&self) -> f64 {
        self.max_torque
    }

    pub fn mode(&self) -> SelectionMode {
        self.mode
    }

    /// Quantize, look up the row, select an input and map it to a torque.
    /// States outside the grid are clamped to the boundary cells.
    pub fn act<R: Rng + ?Sized>(&self, state: &[f64], rng: &mut R) -> Result<Action> {
        let state_index = self.state_grid.quantize(state)?;
        let row = self.policy.row(state_index);
        let input_index = match self.mode {
            SelectionMode::Argmax => prob::argmax(row),
            SelectionMode::Sample => prob::sample(row, rng)?,
        };
        let u = self.input_grid.center(input_index)?[0].clamp(-1.0, 1.0);
        Ok(Action {
            state_index,
            input_index,
            u,
            torque: denormalize_input(u, self.max_torque),
        })
    }
}

/// Something that advances a state under a torque.
pub trait Plant {
    fn dt(&self) -> f64;

    fn step(&self, state: &[f64], torque: f64, rng: &mut dyn RngCore) -> Result<Vec<f64>>;
}

#[derive(Debug, Clone, PartialEq)]
pub struct RolloutStep {
    pub t: f64,
    pub state: Vec<f64>,
    pub action: Action,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Rollout {
    pub steps: Vec<RolloutStep>,
    pub final_state: Vec<f64>,
}

/// Runs `steps` control cycles from `initial`. The same `rng` drives input
/// sampling and plant noise, so a fixed seed gives an identical rollout.
pub fn rollout<P: Plant + ?Sized>(
    controller: &Controller,
    plant: &P,
    initial: &[f64],
    steps: usize,
    rng: &mut dyn RngCore,
) -> Result<Rollout> {
    if steps == 0 {
        return Err(Error::Config("rollout needs at least one step".into()));
    }
    if initial.iter().any(|x| !x.is_finite()) {
        return Err(Error::Divergence { step: 0 });
    }
    let dt = plant.dt();
    let mut state = initial.to_vec();
    let mut out = Vec::with_capacity(steps);
    for k in 0..steps {
        let action = controller.act(&state, rng)?;
        let next = plant.step(&state, action.torque, rng)?;
        if next.iter().any(|x| !x.is_finite()) {
            return Err(Error::Divergence { step: k + 1 });
        }
        out.push(RolloutStep {
            t: k as f64 * dt,
            state: std::mem::replace(&mut state, next),
            action,
        });
    }
    Ok(Rollout {
        steps: out,
        final_state: state,
    })
}
