use std::path::PathBuf;

use anyhow::Context as _;
use clap::{Args, Parser, Subcommand, ValueEnum};
use dfpd_cli::{Pipeline, System, TransitionSource};

#[derive(Debug, Parser)]
#[command(name = "dfpd", version, about = "Discrete fully probabilistic design pipeline")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Args)]
struct Common {
    /// Pipeline config (TOML).
    #[arg(long)]
    config: PathBuf,

    /// Seed override: data seed for generate-data, first rollout seed for simulate.
    #[arg(long)]
    seed: Option<u64>,

    /// Output directory (beats DFPD_OUT_DIR and io.out_dir).
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum Which {
    Target,
    Reference,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Simulate reference demonstrations and target excitation data.
    GenerateData {
        #[command(flatten)]
        common: Common,
    },
    /// Estimate transition models and the reference policy from the datasets.
    Estimate {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        reference: Option<PathBuf>,
        #[arg(long)]
        target: Option<PathBuf>,
    },
    /// Synthesize the randomized policy.
    Synthesize {
        #[command(flatten)]
        common: Common,
        /// Transition model used as the controlled system.
        #[arg(long, value_enum)]
        transitions: Option<Which>,
        /// Policy file to write (default: io.policy in the output directory).
        #[arg(long)]
        policy: Option<PathBuf>,
    },
    /// Run closed-loop rollouts of a policy.
    Simulate {
        #[command(flatten)]
        common: Common,
        #[arg(long, value_enum, default_value = "target")]
        system: Which,
        #[arg(long)]
        policy: Option<PathBuf>,
    },
    /// Aggregate trajectory files into plot-ready CSVs.
    PlotData {
        #[command(flatten)]
        common: Common,
        /// Trajectory CSVs (default: demonstrations and all rollout files).
        #[arg(long = "input")]
        inputs: Vec<PathBuf>,
    },
}

fn open(common: &Common) -> anyhow::Result<Pipeline> {
    Pipeline::from_config_file(&common.config, common.out.clone())
        .with_context(|| format!("loading {}", common.config.display()))
}

fn main() -> anyhow::Result<()> {
    let cli = Cli::parse();
    match cli.command {
        Command::GenerateData { common } => {
            let p = open(&common)?;
            let s = p.generate_data(common.seed)?;
            println!(
                "reference={} records={}",
                s.reference_path.display(),
                s.reference_records
            );
            println!("target={} records={}", s.target_path.display(), s.target_records);
            println!("input_scale={}", s.input_scale);
            println!("diverged_demonstrations={}", s.diverged_demonstrations);
            println!("target_coverage={:.4}", s.target_coverage);
        }
        Command::Estimate {
            common,
            reference,
            target,
        } => {
            let p = open(&common)?;
            let s = p.estimate(reference.as_deref(), target.as_deref())?;
            println!("model={}", s.model_path.display());
            println!(
                "reference_triplets={} target_triplets={}",
                s.reference_triplets, s.target_triplets
            );
            println!("excluded_episodes={}", s.excluded_episodes);
            println!(
                "uniform_rows reference={} target={}",
                s.reference_fallback_pairs, s.target_fallback_pairs
            );
        }
        Command::Synthesize {
            common,
            transitions,
            policy,
        } => {
            let p = open(&common)?;
            let source = transitions.map(|w| match w {
                Which::Target => TransitionSource::Target,
                Which::Reference => TransitionSource::Reference,
            });
            let s = p.synthesize(source, policy.as_deref(), |pr| {
                eprintln!(
                    "step {}/{} max_kkt_residual={:e}",
                    pr.step, pr.horizon, pr.max_kkt_residual
                );
            })?;
            println!("policy={}", s.policy_path.display());
            println!("transitions={} horizon={}", s.transitions.name(), s.horizon);
            println!("max_kkt_residual={:e}", s.max_kkt_residual);
        }
        Command::Simulate { common, system, policy } => {
            let p = open(&common)?;
            let system = match system {
                Which::Target => System::Target,
                Which::Reference => System::Reference,
            };
            let e = p.simulate(system, policy.as_deref(), common.seed)?;
            println!("trajectories={}", e.trajectory_path.display());
            println!("stabilized={}/{}", e.successes(), e.rollouts.len());
            println!("max_abs_torque={:.4}", e.max_abs_torque());
        }
        Command::PlotData { common, inputs } => {
            let p = open(&common)?;
            for path in p.plot_data(&inputs)? {
                println!("{}", path.display());
            }
        }
    }
    Ok(())
}
