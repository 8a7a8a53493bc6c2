//! Pipeline configuration, read from a sectioned TOML file.
//!
//! Sections: `[grid]`, `[estimation]`, `[synthesis]`, `[simulation]` (with
//! `reference`, `target`, `demonstrations`, `excitation` and `evaluation`
//! subtables) and `[io]`. See `configs/` for annotated examples.

use std::path::{Path, PathBuf};

use dfpd_core::estimator::Offsets;
use dfpd_core::grid::UniformGrid;
use dfpd_core::solver::{inputs_within, make_bound_constraint, make_moment_constraint, ConstraintSet};
use dfpd_pendulum::data::{ExcitationConfig, PidGains, ReferenceConfig};
use dfpd_pendulum::{Integrator, PendulumParams};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{io_err, Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PipelineConfig {
    pub grid: GridConfig,
    #[serde(default)]
    pub estimation: EstimationConfig,
    pub synthesis: SynthesisConfig,
    pub simulation: SimulationConfig,
    #[serde(default)]
    pub io: IoConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridConfig {
    pub state_lower: Vec<f64>,
    pub state_upper: Vec<f64>,
    pub state_step: Vec<f64>,
    pub input_lower: f64,
    pub input_upper: f64,
    pub input_step: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EstimationConfig {
    /// Offset added to state counts; `None` means `1/m`.
    pub state_offset: Option<f64>,
    /// Drop demonstrations flagged as diverged in the data manifest.
    pub exclude_diverged: bool,
}

impl Default for EstimationConfig {
    fn default() -> Self {
        Self {
            state_offset: None,
            exclude_diverged: true,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum TransitionSource {
    #[default]
    Target,
    Reference,
}

impl TransitionSource {
    pub fn name(self) -> &'static str {
        match self {
            TransitionSource::Target => "target",
            TransitionSource::Reference => "reference",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum ConstraintConfig {
    /// Mass outside `|u| <= max_abs_input` is at most `epsilon`.
    Bound {
        max_abs_input: f64,
        #[serde(default)]
        epsilon: f64,
    },
    /// `E[u^order] <= bound`.
    Moment { order: u32, bound: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SynthesisConfig {
    pub horizon: usize,
    #[serde(default)]
    pub transitions: TransitionSource,
    #[serde(default)]
    pub constraints: Vec<ConstraintConfig>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum IntegratorName {
    #[default]
    Euler,
    Rk4,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SystemConfig {
    pub length: f64,
    pub mass: f64,
    pub friction: f64,
    pub noise_variance: f64,
    pub max_torque: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DemonstrationConfig {
    pub episodes: usize,
    pub one_point_fraction: f64,
    pub peak_velocity: [f64; 2],
    pub min_velocity: f64,
    pub hold_time: f64,
    pub kp: f64,
    pub kd: f64,
    pub ki: f64,
    pub divergence_threshold: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExcitationSection {
    pub episodes: usize,
    pub segment_duration: [f64; 2],
    pub max_duration: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum ModeName {
    #[default]
    Argmax,
    Sample,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvaluationConfig {
    pub rollouts: usize,
    pub duration: f64,
    pub initial_state: [f64; 2],
    /// Rollout `r` uses seed `seed + r`.
    pub seed: u64,
    #[serde(default)]
    pub mode: ModeName,
    /// Trailing window over which the stability test averages, s.
    pub settle_window: f64,
    pub position_tolerance: f64,
    pub velocity_tolerance: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimulationConfig {
    /// Data seed; the reference set uses `seed`, the excitation set `seed + 1`.
    pub seed: u64,
    pub dt: f64,
    #[serde(default)]
    pub integrator: IntegratorName,
    pub reference: SystemConfig,
    pub target: SystemConfig,
    pub demonstrations: DemonstrationConfig,
    pub excitation: ExcitationSection,
    pub evaluation: EvaluationConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct IoConfig {
    /// Relative paths are taken from the config file's directory.
    pub out_dir: PathBuf,
    pub reference_data: String,
    pub target_data: String,
    pub model: String,
    pub policy: String,
    /// Episodes exported one by one by `plot-data`.
    pub plot_episodes: usize,
}

impl Default for IoConfig {
    fn default() -> Self {
        Self {
            out_dir: PathBuf::from("out"),
            reference_data: "reference.csv".into(),
            target_data: "target.csv".into(),
            model: "model.txt".into(),
            policy: "policy.txt".into(),
            plot_episodes: 5,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum System {
    Target,
    Reference,
}

impl System {
    pub fn name(self) -> &'static str {
        match self {
            System::Target => "target",
            System::Reference => "reference",
        }
    }
}

fn check(cond: bool, msg: impl FnOnce() -> String) -> Result<()> {
    if cond {
        Ok(())
    } else {
        Err(Error::Config(msg()))
    }
}

impl PipelineConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(io_err(path))?;
        let cfg: Self = toml::from_str(&text).map_err(|source| Error::ConfigSyntax {
            path: path.to_path_buf(),
            source,
        })?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// SHA-256 of the canonical serialization, so comments and layout do
    /// not change the hash.
    pub fn hash(&self) -> String {
        let canonical = toml::to_string(self).expect("config serializes");
        hex::encode(Sha256::digest(canonical.as_bytes()))
    }

    pub fn validate(&self) -> Result<()> {
        let (sg, ig) = (self.state_grid()?, self.input_grid()?);
        check(sg.dims() == 2, || {
            format!("state grid must be 2-D, got {} axes", sg.dims())
        })?;
        check(self.grid.input_lower >= -1.0 && self.grid.input_upper <= 1.0, || {
            "input grid must lie within [-1, 1]".into()
        })?;
        self.offsets(sg.len(), ig.len())?;
        check(self.synthesis.horizon >= 1, || {
            "synthesis.horizon must be at least 1".into()
        })?;
        self.constraints(&ig)?;

        let sim = &self.simulation;
        for system in [System::Reference, System::Target] {
            self.params(system)
                .validate()
                .map_err(|e| Error::Config(format!("simulation.{}: {e}", system.name())))?;
        }
        let d = &sim.demonstrations;
        check((0.0..=1.0).contains(&d.one_point_fraction), || {
            "demonstrations.one_point_fraction must be in [0, 1]".into()
        })?;
        check(
            d.peak_velocity[0] > 0.0 && d.peak_velocity[1] >= d.peak_velocity[0],
            || "demonstrations.peak_velocity must be an increasing positive range".into(),
        )?;
        check(d.min_velocity > 0.0 && d.hold_time >= 0.0, || {
            "demonstrations.min_velocity must be positive and hold_time non-negative".into()
        })?;
        check(d.divergence_threshold > 0.0, || {
            "demonstrations.divergence_threshold must be positive".into()
        })?;
        let e = &sim.excitation;
        check(
            e.segment_duration[0] > 0.0 && e.segment_duration[1] >= e.segment_duration[0] && e.max_duration > 0.0,
            || "excitation durations must be positive and increasing".into(),
        )?;
        let v = &sim.evaluation;
        check(
            v.duration > 0.0 && v.settle_window > 0.0 && v.settle_window <= v.duration,
            || "evaluation needs 0 < settle_window <= duration".into(),
        )?;
        check(v.position_tolerance > 0.0 && v.velocity_tolerance > 0.0, || {
            "evaluation tolerances must be positive".into()
        })?;
        check(v.initial_state.iter().all(|x| x.is_finite()), || {
            "evaluation.initial_state must be finite".into()
        })?;
        let io = &self.io;
        for (key, name) in [
            ("reference_data", &io.reference_data),
            ("target_data", &io.target_data),
            ("model", &io.model),
            ("policy", &io.policy),
        ] {
            check(
                !name.is_empty() && Path::new(name).file_name().map(|f| f == name.as_str()).unwrap_or(false),
                || format!("io.{key} must be a plain file name, got {name:?}"),
            )?;
        }
        Ok(())
    }

    pub fn state_grid(&self) -> Result<UniformGrid> {
        let g = &self.grid;
        UniformGrid::new(&g.state_lower, &g.state_upper, &g.state_step).map_err(|e| Error::Config(format!("grid: {e}")))
    }

    pub fn input_grid(&self) -> Result<UniformGrid> {
        let g = &self.grid;
        UniformGrid::new(&[g.input_lower], &[g.input_upper], &[g.input_step])
            .map_err(|e| Error::Config(format!("grid: {e}")))
    }

    pub fn offsets(&self, num_states: usize, num_inputs: usize) -> Result<Offsets> {
        let result = match self.estimation.state_offset {
            Some(o) => Offsets::new(o, num_states, num_inputs),
            None => Ok(Offsets::default_for(num_states, num_inputs)),
        };
        result.map_err(|e| Error::Config(format!("estimation: {e}")))
    }

    pub fn constraints(&self, input_grid: &UniformGrid) -> Result<ConstraintSet> {
        let mut set = ConstraintSet::new();
        for c in &self.synthesis.constraints {
            let built = match *c {
                ConstraintConfig::Bound { max_abs_input, epsilon } => {
                    let allowed = inputs_within(input_grid, max_abs_input);
                    make_bound_constraint(input_grid.len(), &allowed, epsilon)
                }
                ConstraintConfig::Moment { order, bound } => make_moment_constraint(input_grid, order, bound),
            };
            set.push(built.map_err(|e| Error::Config(format!("synthesis.constraints: {e}")))?);
        }
        Ok(set)
    }

    pub fn params(&self, system: System) -> PendulumParams {
        let s = match system {
            System::Target => &self.simulation.target,
            System::Reference => &self.simulation.reference,
        };
        PendulumParams {
            length: s.length,
            mass: s.mass,
            friction: s.friction,
            noise_variance: s.noise_variance,
            max_torque: s.max_torque,
            dt: self.simulation.dt,
            integrator: match self.simulation.integrator {
                IntegratorName::Euler => Integrator::Euler,
                IntegratorName::Rk4 => Integrator::Rk4,
            },
        }
    }

    pub fn reference_config(&self) -> ReferenceConfig {
        let d = &self.simulation.demonstrations;
        ReferenceConfig {
            params: self.params(System::Reference),
            episodes: d.episodes,
            one_point_fraction: d.one_point_fraction,
            peak_velocity: (d.peak_velocity[0], d.peak_velocity[1]),
            min_velocity: d.min_velocity,
            hold_time: d.hold_time,
            gains: PidGains {
                kp: d.kp,
                kd: d.kd,
                ki: d.ki,
            },
            divergence_threshold: d.divergence_threshold,
            input_scale: None,
        }
    }

    /// Initial states are drawn from the state grid's box widened by half a
    /// cell, the region that quantizes without clamping.
    pub fn excitation_config(&self) -> Result<ExcitationConfig> {
        let g = self.state_grid()?;
        let e = &self.simulation.excitation;
        let half = |d: usize| 0.5 * g.step()[d];
        Ok(ExcitationConfig {
            params: self.params(System::Target),
            episodes: e.episodes,
            segment_duration: (e.segment_duration[0], e.segment_duration[1]),
            max_duration: e.max_duration,
            lower: [g.lower()[0] - half(0), g.lower()[1] - half(1)],
            upper: [g.upper()[0] + half(0), g.upper()[1] + half(1)],
        })
    }

    pub fn resolve_out_dir(&self, config_dir: &Path) -> PathBuf {
        if self.io.out_dir.is_absolute() {
            self.io.out_dir.clone()
        } else {
            config_dir.join(&self.io.out_dir)
        }
    }
}
