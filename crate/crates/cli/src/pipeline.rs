//! The pipeline stages behind the `dfpd` subcommands. Each stage reads its
//! inputs from the output directory, writes its artifacts there and leaves
//! a `<artifact>.manifest.toml` next to them with the seed, the config hash
//! and SHA-256 digests of the files involved.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::{Path, PathBuf};

use dfpd_core::engine::{synthesize_with_progress, Progress, SynthesisInputs};
use dfpd_core::estimator::{build_models, TransitionCounts};
use dfpd_core::grid::UniformGrid;
use dfpd_core::model_io::{ModelFile, PolicyFile};
use dfpd_core::runtime::{rollout, Controller, SelectionMode};
use dfpd_core::trajectory::{read_csv, triplets, write_csv, TrajectoryRecord};
use dfpd_pendulum::data::{cell_coverage, generate_reference_dataset, generate_target_excitation};
use dfpd_pendulum::Pendulum;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::config::{ModeName, PipelineConfig, System, TransitionSource};
use crate::error::{file_err, io_err, Error, Result};
use crate::plot;

/// Overrides the configured output directory (the `--out` flag wins over it).
pub const OUT_DIR_ENV: &str = "DFPD_OUT_DIR";
pub const DATA_MANIFEST: &str = "data.manifest.toml";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DemonstrationEntry {
    pub episode: u64,
    pub class: String,
    pub steps: usize,
    pub diverged: bool,
    pub rms_tracking_error: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RolloutMetrics {
    pub rollout: usize,
    pub seed: u64,
    /// Mean |x1 - goal| over the settle window (infinite if the run diverged).
    pub position_error: f64,
    pub velocity_error: f64,
    pub max_abs_torque: f64,
    pub diverged: bool,
    pub stabilized: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub command: String,
    pub config_hash: String,
    /// Data seed (the excitation set uses `seed + 1`) or first rollout seed.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    /// Which transition model stood in for the target (synthesis only).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub transitions: Option<String>,
    /// File name to SHA-256.
    #[serde(default)]
    pub inputs: BTreeMap<String, String>,
    #[serde(default)]
    pub outputs: BTreeMap<String, String>,
    #[serde(default)]
    pub values: BTreeMap<String, f64>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub demonstrations: Vec<DemonstrationEntry>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub rollouts: Vec<RolloutMetrics>,
}

impl Manifest {
    fn new(command: &str, config_hash: &str) -> Self {
        Self {
            command: command.into(),
            config_hash: config_hash.into(),
            seed: None,
            transitions: None,
            inputs: BTreeMap::new(),
            outputs: BTreeMap::new(),
            values: BTreeMap::new(),
            demonstrations: Vec::new(),
            rollouts: Vec::new(),
        }
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(io_err(path))?;
        toml::from_str(&text).map_err(|source| Error::ConfigSyntax {
            path: path.to_path_buf(),
            source,
        })
    }

    fn save(&self, path: &Path) -> Result<()> {
        let text = toml::to_string(self).map_err(|e| Error::Config(format!("manifest: {e}")))?;
        std::fs::write(path, text).map_err(io_err(path))
    }
}

pub fn sha256_file(path: &Path) -> Result<String> {
    let mut file = File::open(path).map_err(io_err(path))?;
    let mut hasher = Sha256::new();
    let mut buf = vec![0u8; 1 << 16];
    loop {
        let n = file.read(&mut buf).map_err(io_err(path))?;
        if n == 0 {
            break;
        }
        hasher.update(&buf[..n]);
    }
    Ok(hex::encode(hasher.finalize()))
}

fn file_name(path: &Path) -> String {
    path.file_name()
        .map(|n| n.to_string_lossy().into_owned())
        .unwrap_or_default()
}

fn manifest_path(artifact: &Path) -> PathBuf {
    let mut name = artifact.file_stem().unwrap_or_default().to_os_string();
    name.push(".manifest.toml");
    artifact.with_file_name(name)
}

fn write_records(path: &Path, records: &[TrajectoryRecord]) -> Result<()> {
    let file = File::create(path).map_err(io_err(path))?;
    let mut w = BufWriter::new(file);
    write_csv(&mut w, records).map_err(file_err(path))?;
    w.flush().map_err(io_err(path))
}

pub fn read_records(path: &Path) -> Result<Vec<TrajectoryRecord>> {
    let file = File::open(path).map_err(io_err(path))?;
    read_csv(BufReader::new(file)).map_err(file_err(path))
}

fn same_grid(what: &str, expected: &UniformGrid, found: &UniformGrid) -> Result<()> {
    let close = |a: &[f64], b: &[f64]| a.len() == b.len() && a.iter().zip(b).all(|(x, y)| (x - y).abs() <= 1e-9);
    if expected.counts() == found.counts()
        && close(expected.lower(), found.lower())
        && close(expected.upper(), found.upper())
    {
        Ok(())
    } else {
        Err(Error::Mismatch(format!(
            "{what} grid in file ({:?} cells) does not match the config ({:?} cells)",
            found.counts(),
            expected.counts()
        )))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DataSummary {
    pub reference_path: PathBuf,
    pub target_path: PathBuf,
    pub reference_records: usize,
    pub target_records: usize,
    pub diverged_demonstrations: usize,
    pub input_scale: f64,
    pub target_coverage: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EstimateSummary {
    pub model_path: PathBuf,
    pub reference_triplets: usize,
    pub target_triplets: usize,
    pub excluded_episodes: usize,
    pub reference_fallback_pairs: usize,
    pub target_fallback_pairs: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthesisSummary {
    pub policy_path: PathBuf,
    pub transitions: TransitionSource,
    pub horizon: usize,
    pub max_kkt_residual: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Evaluation {
    pub trajectory_path: PathBuf,
    pub system: System,
    pub rollouts: Vec<RolloutMetrics>,
}

impl Evaluation {
    pub fn successes(&self) -> usize {
        self.rollouts.iter().filter(|r| r.stabilized).count()
    }

    pub fn success_rate(&self) -> f64 {
        self.successes() as f64 / self.rollouts.len().max(1) as f64
    }

    pub fn max_abs_torque(&self) -> f64 {
        self.rollouts.iter().fold(0.0, |m, r| m.max(r.max_abs_torque))
    }
}

#[derive(Debug, Clone)]
pub struct Pipeline {
    config: PipelineConfig,
    config_hash: String,
    out_dir: PathBuf,
}

impl Pipeline {
    pub fn new(config: PipelineConfig, out_dir: PathBuf) -> Result<Self> {
        config.validate()?;
        Ok(Self {
            config_hash: config.hash(),
            config,
            out_dir,
        })
    }

    /// Output directory: `out` if given, else `$DFPD_OUT_DIR`, else the
    /// config's `io.out_dir` relative to the config file.
    pub fn from_config_file(path: &Path, out: Option<PathBuf>) -> Result<Self> {
        let config = PipelineConfig::load(path)?;
        let config_dir = path.parent().unwrap_or(Path::new("."));
        let out_dir = out
            .or_else(|| {
                std::env::var_os(OUT_DIR_ENV)
                    .filter(|v| !v.is_empty())
                    .map(PathBuf::from)
            })
            .unwrap_or_else(|| config.resolve_out_dir(config_dir));
        Self::new(config, out_dir)
    }

    pub fn config(&self) -> &PipelineConfig {
        &self.config
    }

    pub fn config_hash(&self) -> &str {
        &self.config_hash
    }

    pub fn out_dir(&self) -> &Path {
        &self.out_dir
    }

    pub fn path(&self, name: &str) -> PathBuf {
        self.out_dir.join(name)
    }

    fn ensure_out_dir(&self) -> Result<()> {
        std::fs::create_dir_all(&self.out_dir).map_err(io_err(&self.out_dir))
    }

    /// Writes the reference demonstrations and the target excitation set.
    pub fn generate_data(&self, seed: Option<u64>) -> Result<DataSummary> {
        self.ensure_out_dir()?;
        let seed = seed.unwrap_or(self.config.simulation.seed);
        let reference = generate_reference_dataset(&self.config.reference_config(), seed)?;
        let target = generate_target_excitation(&self.config.excitation_config()?, seed.wrapping_add(1))?;

        let reference_path = self.path(&self.config.io.reference_data);
        let target_path = self.path(&self.config.io.target_data);
        write_records(&reference_path, &reference.records)?;
        write_records(&target_path, &target.records)?;

        let coverage = if target.records.is_empty() {
            0.0
        } else {
            cell_coverage(&target.records, &self.config.state_grid()?)?
        };
        let mut manifest = Manifest::new("generate-data", &self.config_hash);
        manifest.seed = Some(seed);
        for p in [&reference_path, &target_path] {
            manifest.outputs.insert(file_name(p), sha256_file(p)?);
        }
        manifest.values.insert("input_scale".into(), reference.input_scale);
        manifest.values.insert("target_coverage".into(), coverage);
        manifest.demonstrations = reference
            .episodes
            .iter()
            .map(|e| DemonstrationEntry {
                episode: e.episode,
                class: e.class.map(|c| c.name()).unwrap_or("none").into(),
                steps: e.steps,
                diverged: e.diverged,
                rms_tracking_error: e.rms_tracking_error,
            })
            .collect();
        manifest.save(&self.path(DATA_MANIFEST))?;

        Ok(DataSummary {
            reference_records: reference.records.len(),
            target_records: target.records.len(),
            diverged_demonstrations: reference.episodes.iter().filter(|e| e.diverged).count(),
            input_scale: reference.input_scale,
            target_coverage: coverage,
            reference_path,
            target_path,
        })
    }

    /// Builds the reference and target models from the two datasets
    /// (defaults: the files written by [`Pipeline::generate_data`]).
    pub fn estimate(&self, reference: Option<&Path>, target: Option<&Path>) -> Result<EstimateSummary> {
        self.ensure_out_dir()?;
        let reference_path = reference
            .map(Path::to_path_buf)
            .unwrap_or_else(|| self.path(&self.config.io.reference_data));
        let target_path = target
            .map(Path::to_path_buf)
            .unwrap_or_else(|| self.path(&self.config.io.target_data));
        let (sg, ig) = (self.config.state_grid()?, self.config.input_grid()?);
        let (m, z) = (sg.len(), ig.len());

        let mut reference_records = read_records(&reference_path)?;
        let mut excluded = 0;
        let manifest_file = reference_path.with_file_name(DATA_MANIFEST);
        if self.config.estimation.exclude_diverged && manifest_file.exists() {
            let manifest = Manifest::load(&manifest_file)?;
            let drop: Vec<u64> = manifest
                .demonstrations
                .iter()
                .filter(|d| d.diverged)
                .map(|d| d.episode)
                .collect();
            excluded = drop.len();
            reference_records.retain(|r| !drop.contains(&r.episode));
        }
        let target_records = read_records(&target_path)?;

        let reference_triplets = triplets(&reference_records, &sg, &ig)?;
        let target_triplets = triplets(&target_records, &sg, &ig)?;
        let (nr, nt) = (reference_triplets.len(), target_triplets.len());
        let offsets = self.config.offsets(m, z)?;
        let (reference_transitions, reference_policy) =
            build_models(&TransitionCounts::from_triplets(m, z, reference_triplets)?, offsets)?;
        let (target_transitions, _) = build_models(&TransitionCounts::from_triplets(m, z, target_triplets)?, offsets)?;

        let summary = EstimateSummary {
            model_path: self.path(&self.config.io.model),
            reference_triplets: nr,
            target_triplets: nt,
            excluded_episodes: excluded,
            reference_fallback_pairs: reference_transitions.fallback_count(),
            target_fallback_pairs: target_transitions.fallback_count(),
        };
        let model = ModelFile {
            state_grid: sg,
            input_grid: ig,
            offsets,
            reference_policy,
            reference_transitions,
            target_transitions: Some(target_transitions),
        };
        let path = &summary.model_path;
        std::fs::write(path, model.to_text()).map_err(io_err(path))?;

        let mut manifest = Manifest::new("estimate", &self.config_hash);
        for p in [&reference_path, &target_path] {
            manifest.inputs.insert(file_name(p), sha256_file(p)?);
        }
        manifest.outputs.insert(file_name(path), sha256_file(path)?);
        manifest.values.insert("excluded_episodes".into(), excluded as f64);
        manifest.values.insert("reference_triplets".into(), nr as f64);
        manifest.values.insert("target_triplets".into(), nt as f64);
        manifest.save(&manifest_path(path))?;
        Ok(summary)
    }

    pub fn load_model(&self) -> Result<ModelFile> {
        let path = self.path(&self.config.io.model);
        let file = File::open(&path).map_err(io_err(&path))?;
        let model = ModelFile::load(BufReader::new(file)).map_err(file_err(&path))?;
        same_grid("state", &self.config.state_grid()?, &model.state_grid)?;
        same_grid("input", &self.config.input_grid()?, &model.input_grid)?;
        Ok(model)
    }

    /// Runs the backward recursion on the model file. `transitions`
    /// overrides `synthesis.transitions`; `output` overrides `io.policy`.
    pub fn synthesize<F: FnMut(Progress)>(
        &self,
        transitions: Option<TransitionSource>,
        output: Option<&Path>,
        progress: F,
    ) -> Result<SynthesisSummary> {
        self.ensure_out_dir()?;
        let source = transitions.unwrap_or(self.config.synthesis.transitions);
        let model = self.load_model()?;
        let target = match source {
            TransitionSource::Reference => &model.reference_transitions,
            TransitionSource::Target => model
                .target_transitions
                .as_ref()
                .ok_or_else(|| Error::Mismatch("model file has no target transitions".into()))?,
        };
        let constraints = self.config.constraints(&model.input_grid)?;
        let inputs = SynthesisInputs::new(
            target,
            &model.reference_transitions,
            &model.reference_policy,
            self.config.synthesis.horizon,
        )
        .with_constraints(constraints);
        let out = synthesize_with_progress(&inputs, progress)?;

        let path = output
            .map(Path::to_path_buf)
            .unwrap_or_else(|| self.path(&self.config.io.policy));
        let policy = PolicyFile {
            config_hash: self.config_hash.clone(),
            state_grid: model.state_grid,
            input_grid: model.input_grid,
            horizon: out.horizon,
            max_kkt_residual: out.max_kkt_residual,
            policy: out.policy,
            cost_table: out.cost_table,
        };
        std::fs::write(&path, policy.to_text()).map_err(io_err(&path))?;

        let model_path = self.path(&self.config.io.model);
        let mut manifest = Manifest::new("synthesize", &self.config_hash);
        manifest
            .inputs
            .insert(file_name(&model_path), sha256_file(&model_path)?);
        manifest.outputs.insert(file_name(&path), sha256_file(&path)?);
        manifest.values.insert("max_kkt_residual".into(), out.max_kkt_residual);
        manifest.values.insert("horizon".into(), out.horizon as f64);
        manifest.transitions = Some(source.name().into());
        manifest.save(&manifest_path(&path))?;

        Ok(SynthesisSummary {
            policy_path: path,
            transitions: source,
            horizon: out.horizon,
            max_kkt_residual: out.max_kkt_residual,
        })
    }

    pub fn load_policy(&self, path: &Path) -> Result<PolicyFile> {
        let file = File::open(path).map_err(io_err(path))?;
        let policy = PolicyFile::load(BufReader::new(file)).map_err(file_err(path))?;
        same_grid("state", &self.config.state_grid()?, &policy.state_grid)?;
        same_grid("input", &self.config.input_grid()?, &policy.input_grid)?;
        Ok(policy)
    }

    /// Closed-loop rollouts of a policy on one of the two plants. The
    /// normalized input is scaled by that plant's torque limit. Rollout `r`
    /// is seeded with `seed + r` (default `evaluation.seed`).
    pub fn simulate(&self, system: System, policy: Option<&Path>, seed: Option<u64>) -> Result<Evaluation> {
        self.ensure_out_dir()?;
        let policy_path = policy
            .map(Path::to_path_buf)
            .unwrap_or_else(|| self.path(&self.config.io.policy));
        let file = self.load_policy(&policy_path)?;
        let eval = &self.config.simulation.evaluation;
        let params = self.config.params(system);
        let mode = match eval.mode {
            ModeName::Argmax => SelectionMode::Argmax,
            ModeName::Sample => SelectionMode::Sample,
        };
        let controller = Controller::new(file.policy, file.state_grid, file.input_grid, params.max_torque, mode)?;
        let plant = Pendulum::new(params)?;
        let steps = (eval.duration / params.dt).round().max(1.0) as usize;
        let window = ((eval.settle_window / params.dt).round() as usize).clamp(1, steps);
        let base = seed.unwrap_or(eval.seed);
        let goal = dfpd_pendulum::plan::GOAL;

        let mut records = Vec::with_capacity(eval.rollouts * steps);
        let mut metrics = Vec::with_capacity(eval.rollouts);
        for r in 0..eval.rollouts {
            let seed = base.wrapping_add(r as u64);
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let result = rollout(&controller, &plant, &eval.initial_state, steps, &mut rng);
            let m = match result {
                Ok(run) => {
                    let tail = &run.steps[run.steps.len() - window..];
                    let n = tail.len() as f64;
                    let position_error = tail.iter().map(|s| (s.state[0] - goal[0]).abs()).sum::<f64>() / n;
                    let velocity_error = tail.iter().map(|s| (s.state[1] - goal[1]).abs()).sum::<f64>() / n;
                    let max_abs_torque = run.steps.iter().fold(0.0f64, |a, s| a.max(s.action.torque.abs()));
                    records.extend(run.steps.iter().map(|s| TrajectoryRecord {
                        episode: r as u64,
                        t: s.t,
                        x1: s.state[0],
                        x2: s.state[1],
                        u: s.action.u,
                        tau: s.action.torque,
                    }));
                    RolloutMetrics {
                        rollout: r,
                        seed,
                        position_error,
                        velocity_error,
                        max_abs_torque,
                        diverged: false,
                        stabilized: position_error < eval.position_tolerance
                            && velocity_error < eval.velocity_tolerance,
                    }
                }
                Err(dfpd_core::Error::Divergence { .. }) => RolloutMetrics {
                    rollout: r,
                    seed,
                    position_error: f64::INFINITY,
                    velocity_error: f64::INFINITY,
                    max_abs_torque: 0.0,
                    diverged: true,
                    stabilized: false,
                },
                Err(e) => return Err(e.into()),
            };
            metrics.push(m);
        }

        let stem = policy_path
            .file_stem()
            .unwrap_or_default()
            .to_string_lossy()
            .into_owned();
        let trajectory_path = self.path(&format!("{stem}_on_{}.csv", system.name()));
        write_records(&trajectory_path, &records)?;
        let evaluation = Evaluation {
            trajectory_path,
            system,
            rollouts: metrics,
        };

        let mut manifest = Manifest::new("simulate", &self.config_hash);
        manifest.seed = Some(base);
        manifest
            .inputs
            .insert(file_name(&policy_path), sha256_file(&policy_path)?);
        let tp = &evaluation.trajectory_path;
        manifest.outputs.insert(file_name(tp), sha256_file(tp)?);
        manifest.values.insert("success_rate".into(), evaluation.success_rate());
        manifest
            .values
            .insert("max_abs_torque".into(), evaluation.max_abs_torque());
        manifest.rollouts = evaluation.rollouts.clone();
        manifest.save(&manifest_path(tp))?;
        Ok(evaluation)
    }

    /// Writes `plots/<stem>_stats.csv` and `plots/<stem>_episodes.csv` for
    /// every input. Without inputs it uses the reference demonstrations and
    /// every `*_on_*.csv` rollout file in the output directory.
    pub fn plot_data(&self, inputs: &[PathBuf]) -> Result<Vec<PathBuf>> {
        let inputs = if inputs.is_empty() {
            self.default_plot_inputs()?
        } else {
            inputs.to_vec()
        };
        if inputs.is_empty() {
            return Err(Error::Config(format!(
                "no trajectory files to plot in {}",
                self.out_dir.display()
            )));
        }
        let plots = self.out_dir.join("plots");
        std::fs::create_dir_all(&plots).map_err(io_err(&plots))?;
        let dt = self.config.simulation.dt;
        let mut written = Vec::new();
        for input in &inputs {
            let records = read_records(input)?;
            if records.is_empty() {
                return Err(Error::EmptyInput(input.clone()));
            }
            let stem = input.file_stem().unwrap_or_default().to_string_lossy().into_owned();
            let stats_path = plots.join(format!("{stem}_stats.csv"));
            let file = File::create(&stats_path).map_err(io_err(&stats_path))?;
            plot::write_stats(BufWriter::new(file), &plot::aggregate(&records, dt)).map_err(io_err(&stats_path))?;
            let episodes_path = plots.join(format!("{stem}_episodes.csv"));
            let file = File::create(&episodes_path).map_err(io_err(&episodes_path))?;
            plot::write_episodes(BufWriter::new(file), &records, dt, self.config.io.plot_episodes)
                .map_err(io_err(&episodes_path))?;
            written.push(stats_path);
            written.push(episodes_path);
        }
        Ok(written)
    }

    fn default_plot_inputs(&self) -> Result<Vec<PathBuf>> {
        let mut found = Vec::new();
        let reference = self.path(&self.config.io.reference_data);
        if reference.exists() {
            found.push(reference);
        }
        let entries = match std::fs::read_dir(&self.out_dir) {
            Ok(entries) => entries,
            Err(_) => return Ok(found),
        };
        let mut rollouts: Vec<PathBuf> = entries
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| {
                let name = file_name(p);
                name.ends_with(".csv") && name.contains("_on_")
            })
            .collect();
        rollouts.sort();
        found.extend(rollouts);
        Ok(found)
    }
}
