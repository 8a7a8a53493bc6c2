use std::fs;
use std::io::BufReader;
use std::path::{Path, PathBuf};
use std::process::Command;

use dfpd_cli::pipeline::{read_records, Manifest, DATA_MANIFEST};
use dfpd_cli::{Error, Pipeline, PipelineConfig, System, TransitionSource};
use dfpd_core::model_io::{ModelFile, PolicyFile};
use dfpd_core::trajectory::HEADER;
use tempfile::TempDir;

fn shipped(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs").join(name)
}

fn shipped_text() -> String {
    fs::read_to_string(shipped("pendulum_swing_up.toml")).unwrap()
}

/// The shipped config with a smaller excitation budget.
fn small_config(extra: &[(&str, &str)]) -> PipelineConfig {
    let mut text = shipped_text().replace("episodes = 60000", "episodes = 3000");
    for (from, to) in extra {
        assert!(text.contains(from), "{from}");
        text = text.replace(from, to);
    }
    PipelineConfig::from_toml(&text).unwrap()
}

fn pipeline(dir: &TempDir, cfg: PipelineConfig) -> Pipeline {
    Pipeline::new(cfg, dir.path().to_path_buf()).unwrap()
}

fn dfpd() -> Command {
    let mut c = Command::new(env!("CARGO_BIN_EXE_dfpd"));
    c.env_remove("DFPD_OUT_DIR");
    c
}

#[test]
fn shipped_configs_load() {
    for name in ["pendulum_swing_up.toml", "pendulum_swing_up_constrained.toml"] {
        let cfg = PipelineConfig::load(&shipped(name)).unwrap();
        assert_eq!(cfg.simulation.demonstrations.episodes, 100);
        assert_eq!(cfg.synthesis.horizon, 10);
        assert_eq!(cfg.state_grid().unwrap().len(), 900);
        assert_eq!(cfg.input_grid().unwrap().len(), 40);
    }
}

#[test]
fn generate_data_is_deterministic() {
    let (a, b) = (TempDir::new().unwrap(), TempDir::new().unwrap());
    let sa = pipeline(&a, small_config(&[])).generate_data(None).unwrap();
    pipeline(&b, small_config(&[])).generate_data(None).unwrap();
    for name in ["reference.csv", "target.csv", DATA_MANIFEST] {
        assert_eq!(
            fs::read(a.path().join(name)).unwrap(),
            fs::read(b.path().join(name)).unwrap(),
            "{name}"
        );
    }
    let manifest = Manifest::load(&a.path().join(DATA_MANIFEST)).unwrap();
    assert_eq!(manifest.demonstrations.len(), 100);
    assert_eq!(
        manifest
            .demonstrations
            .iter()
            .filter(|d| d.class == "one-point")
            .count(),
        30
    );
    assert_eq!(manifest.seed, Some(1));
    assert_eq!(manifest.values["input_scale"], sa.input_scale);
    let episodes: std::collections::BTreeSet<u64> = read_records(&sa.reference_path)
        .unwrap()
        .iter()
        .map(|r| r.episode)
        .collect();
    assert_eq!(episodes.len(), 100);

    let c = TempDir::new().unwrap();
    pipeline(&c, small_config(&[])).generate_data(Some(2)).unwrap();
    assert_ne!(
        fs::read(a.path().join("reference.csv")).unwrap(),
        fs::read(c.path().join("reference.csv")).unwrap()
    );
}

#[test]
fn zero_episodes_give_header_only_files() {
    let dir = TempDir::new().unwrap();
    let cfg = small_config(&[("episodes = 100", "episodes = 0"), ("episodes = 3000", "episodes = 0")]);
    let s = pipeline(&dir, cfg).generate_data(None).unwrap();
    for p in [&s.reference_path, &s.target_path] {
        assert_eq!(fs::read_to_string(p).unwrap(), format!("{HEADER}\n"));
    }
}

#[test]
fn estimate_synthesize_and_simulate() {
    let dir = TempDir::new().unwrap();
    let p = pipeline(&dir, small_config(&[]));
    p.generate_data(None).unwrap();
    let est = p.estimate(None, None).unwrap();
    assert!(est.reference_fallback_pairs > 0);

    // every stored row sums to one, elided pairs reload as uniform, and the
    // file re-emits byte for byte
    let text = fs::read_to_string(&est.model_path).unwrap();
    let model = ModelFile::load(BufReader::new(text.as_bytes())).unwrap();
    assert_eq!(model.to_text(), text);
    let m = model.num_states();
    let target = model.target_transitions.as_ref().unwrap();
    for t in [&model.reference_transitions, target] {
        for i in 0..m {
            for h in 0..model.num_inputs() {
                assert!((t.row(i, h).sum(m) - 1.0).abs() <= 1e-9);
                if t.is_fallback(i, h) {
                    assert!(t.dense_row(i, h).iter().all(|&q| q == 1.0 / m as f64));
                }
            }
        }
    }
    let elided = text.lines().find(|l| l.starts_with("transitions reference")).unwrap();
    assert!(elided.ends_with(&format!("elided={}", est.reference_fallback_pairs)));
    for i in 0..m {
        assert!((model.reference_policy.row(i).iter().sum::<f64>() - 1.0).abs() <= 1e-9);
    }

    let mut steps = Vec::new();
    let s = p.synthesize(None, None, |pr| steps.push(pr.step)).unwrap();
    assert_eq!(steps.len(), 10);
    assert!(s.max_kkt_residual <= 1e-7);
    let policy = PolicyFile::load(BufReader::new(fs::File::open(&s.policy_path).unwrap())).unwrap();
    assert_eq!(policy.config_hash, p.config_hash());
    assert_eq!(policy.horizon, 10);

    let e = p.simulate(System::Target, None, Some(7)).unwrap();
    assert_eq!(e.rollouts.len(), 50);
    assert_eq!(e.rollouts[3].seed, 10);
    let records = read_records(&e.trajectory_path).unwrap();
    assert_eq!(records.len(), 50 * 1000);
    assert!(records.iter().all(|r| r.tau.abs() <= 11.5 + 1e-12));
    let again = p.simulate(System::Target, None, Some(7)).unwrap();
    assert_eq!(e, again);

    let plots = p.plot_data(&[]).unwrap();
    assert_eq!(plots.len(), 4);
    let stats = fs::read_to_string(dir.path().join("plots/policy_on_target_stats.csv")).unwrap();
    assert_eq!(stats.lines().count(), 1001);
}

#[test]
fn constrained_synthesis_keeps_mass_inside_the_band() {
    let dir = TempDir::new().unwrap();
    let p = pipeline(
        &dir,
        small_config(&[(
            "constraints = []",
            r#"constraints = [{ kind = "bound", max_abs_input = 0.5, epsilon = 0.0 }]"#,
        )]),
    );
    p.generate_data(None).unwrap();
    p.estimate(None, None).unwrap();
    let s = p.synthesize(None, None, |_| {}).unwrap();
    assert!(s.max_kkt_residual <= 1e-7);
    let policy = p.load_policy(&s.policy_path).unwrap();
    let ig = p.config().input_grid().unwrap();
    for row in policy.policy.rows() {
        let outside: f64 = row
            .iter()
            .enumerate()
            .filter(|(h, _)| ig.center(*h).unwrap()[0].abs() > 0.5)
            .map(|(_, q)| q)
            .sum();
        assert!(outside < 1e-7);
    }
    let e = p.simulate(System::Target, None, None).unwrap();
    assert!(e.max_abs_torque() <= 5.75);
}

#[test]
fn identical_systems_return_the_reference_policy() {
    let dir = TempDir::new().unwrap();
    let p = pipeline(&dir, small_config(&[]));
    p.generate_data(None).unwrap();
    p.estimate(None, None).unwrap();
    let s = p.synthesize(Some(TransitionSource::Reference), None, |_| {}).unwrap();
    let policy = p.load_policy(&s.policy_path).unwrap();
    let model = p.load_model().unwrap();
    assert!(policy.cost_table.d.iter().all(|&d| d.abs() <= 1e-12));
    for i in 0..model.num_states() {
        let tv: f64 = policy
            .policy
            .row(i)
            .iter()
            .zip(model.reference_policy.row(i))
            .map(|(a, b)| (a - b).abs())
            .sum::<f64>()
            / 2.0;
        assert!(tv <= 1e-9);
    }
}

#[test]
fn diverged_demonstrations_are_excluded() {
    let dir = TempDir::new().unwrap();
    // an impossible threshold flags every demonstration
    let p = pipeline(
        &dir,
        small_config(&[("divergence_threshold = 1.0", "divergence_threshold = 1e-9")]),
    );
    p.generate_data(None).unwrap();
    let est = p.estimate(None, None).unwrap();
    assert_eq!(est.excluded_episodes, 100);
    assert_eq!(est.reference_triplets, 0);
}

#[test]
fn mismatched_policy_grid_is_rejected() {
    let dir = TempDir::new().unwrap();
    let p = pipeline(&dir, small_config(&[]));
    p.generate_data(None).unwrap();
    p.estimate(None, None).unwrap();
    p.synthesize(None, None, |_| {}).unwrap();
    let coarse = pipeline(&dir, small_config(&[("input_step = 0.0513", "input_step = 0.1")]));
    assert!(matches!(
        coarse.simulate(System::Target, None, None),
        Err(Error::Mismatch(_))
    ));
    assert!(matches!(coarse.synthesize(None, None, |_| {}), Err(Error::Mismatch(_))));
}

#[test]
fn plot_data_rejects_empty_input() {
    let dir = TempDir::new().unwrap();
    let empty = dir.path().join("empty.csv");
    fs::write(&empty, format!("{HEADER}\n")).unwrap();
    let p = pipeline(&dir, small_config(&[]));
    assert!(matches!(p.plot_data(&[empty]), Err(Error::EmptyInput(_))));
}

#[test]
fn cli_runs_the_pipeline_and_honours_output_overrides() {
    let dir = TempDir::new().unwrap();
    let config = dir.path().join("small.toml");
    fs::write(
        &config,
        shipped_text()
            .replace("episodes = 60000", "episodes = 2000")
            .replace("../out/pendulum_swing_up", "configured"),
    )
    .unwrap();
    let env_out = dir.path().join("from_env");
    let flag_out = dir.path().join("from_flag");

    let out = dfpd()
        .args(["generate-data", "--config"])
        .arg(&config)
        .env("DFPD_OUT_DIR", &env_out)
        .output()
        .unwrap();
    assert!(out.status.success());
    assert!(env_out.join("reference.csv").exists());
    assert!(!dir.path().join("configured").exists());

    for cmd in ["generate-data", "estimate", "synthesize", "simulate", "plot-data"] {
        let out = dfpd()
            .args([cmd, "--config"])
            .arg(&config)
            .arg("--out")
            .arg(&flag_out)
            .env("DFPD_OUT_DIR", &env_out)
            .output()
            .unwrap();
        assert!(out.status.success(), "{cmd}: {}", String::from_utf8_lossy(&out.stderr));
    }
    assert!(flag_out.join("plots/policy_on_target_stats.csv").exists());
    assert!(!env_out.join("model.txt").exists());

    let out = dfpd()
        .args(["generate-data", "--config"])
        .arg(&config)
        .output()
        .unwrap();
    assert!(out.status.success());
    assert!(dir.path().join("configured/target.csv").exists());
}

#[test]
fn cli_reports_errors_on_stderr() {
    let dir = TempDir::new().unwrap();
    let out = dfpd()
        .args(["simulate", "--config"])
        .arg(shipped("pendulum_swing_up.toml"))
        .arg("--out")
        .arg(dir.path())
        .output()
        .unwrap();
    assert!(!out.status.success());
    let stderr = String::from_utf8_lossy(&out.stderr);
    assert!(stderr.contains("policy.txt"), "{stderr}");

    let bad = dir.path().join("bad.toml");
    fs::write(&bad, shipped_text().replace("horizon = 10", "horizon = 0")).unwrap();
    let out = dfpd().args(["estimate", "--config"]).arg(&bad).output().unwrap();
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("horizon"));

    let out = dfpd().args(["fly", "--config", "x"]).output().unwrap();
    assert!(!out.status.success());
}
