use std::process::Command;

use catgrad::bench::{self, BenchConfig, ModelConfig};
use catgrad::registry::EstimatorId;

#[test]
fn rloo_training_improves_the_elbo() {
    let config = BenchConfig { estimators: vec![EstimatorId::Rloo(2)], ..BenchConfig::default() };
    let (rows, evals, summary) = bench::train_one(&config, EstimatorId::Rloo(2)).unwrap();
    assert_eq!(rows.len(), 5000);
    assert!(summary.final_elbo > summary.initial_elbo, "{summary:?}");
    assert!(summary.final_bound > summary.initial_bound, "{summary:?}");
    assert!(rows.windows(2).all(|w| w[0].step < w[1].step));
    assert_eq!(evals.len(), 51);
    assert!(rows.iter().all(|r| r.wall_ms == 0));
}

#[test]
fn train_writes_the_documented_schema() {
    let dir = tempfile::tempdir().unwrap();
    let config = BenchConfig {
        steps: 20,
        eval_every: 10,
        estimators: vec![EstimatorId::DisarmTree, EstimatorId::Ars],
        ..BenchConfig::default()
    };
    bench::train(&config, dir.path()).unwrap();
    let text = std::fs::read_to_string(dir.path().join("train_disarm-tree.csv")).unwrap();
    assert_eq!(text.lines().next(), Some("step,elbo,grad_var_mean,f_evals,wall_ms"));
    assert_eq!(text.lines().count(), 21);
    let summary: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(dir.path().join("train_summary.json")).unwrap()).unwrap();
    assert!(summary["optimizer"].as_str().unwrap().starts_with("adam lr=0.001"));
    assert_eq!(summary["config"]["steps"], 20);

    bench::variance_replay(&config, dir.path()).unwrap();
    let text = std::fs::read_to_string(dir.path().join("replay.csv")).unwrap();
    assert_eq!(text.lines().next(), Some("step,estimator,grad_var_mean"));
    assert_eq!(text.lines().count(), 1 + 2 * config.replay_estimators.len());
}

#[test]
fn dataset_file_drives_training() {
    let dir = tempfile::tempdir().unwrap();
    let mut rng = catgrad::rng::stream(3, "test", "dataset", 0);
    let data = catgrad::toy::synth_data(&mut rng, 40, 8, 2).unwrap();
    let path = dir.path().join("data.bin");
    data.save(&path).unwrap();
    let mut config = BenchConfig {
        steps: 10,
        model: ModelConfig { data_dim: 8, ..ModelConfig::default() },
        ..BenchConfig::default()
    };
    config.data.path = Some(path);
    let (rows, _, _) = bench::train_one(&config, EstimatorId::DisarmIw).unwrap();
    assert_eq!(rows.len(), 10);
    config.model.data_dim = 9;
    assert!(bench::train_one(&config, EstimatorId::DisarmIw).is_err());
}

fn cli() -> Command {
    Command::new(env!("CARGO_BIN_EXE_catgrad"))
}

#[test]
fn cli_runs_each_command() {
    let dir = tempfile::tempdir().unwrap();
    let config = dir.path().join("bench.toml");
    std::fs::write(
        &config,
        "steps = 30\neval_every = 10\nestimators = [\"disarm-sb\", \"rloo-3\"]\nreplay_estimators = [\"rloo-2\", \"disarm-iw\"]\n\
         [verify]\ninstances = 3\nmc_instances = 1\nmc_draws = 2000\nrejection_samples = 500\nrejection_instances = 1\n",
    )
    .unwrap();
    let out = dir.path().join("out");
    for cmd in ["train", "variance-replay", "verify"] {
        let status = cli()
            .args([cmd, "--config", config.to_str().unwrap(), "--seed", "5", "--out-dir", out.to_str().unwrap()])
            .output()
            .unwrap();
        assert!(status.status.success(), "{cmd}: {}", String::from_utf8_lossy(&status.stdout));
    }
    for file in ["train_disarm-sb.csv", "eval_rloo-3.csv", "replay.csv", "verify.json"] {
        assert!(out.join(file).exists(), "{file}");
    }
    let report: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(out.join("verify.json")).unwrap()).unwrap();
    assert_eq!(report["pass"], true);
    assert_eq!(report["seed"], 5);
}

#[test]
fn cli_rejects_bad_configs() {
    let dir = tempfile::tempdir().unwrap();
    let config = dir.path().join("bad.toml");
    std::fs::write(&config, "estimators = [\"not-an-estimator\"]\n").unwrap();
    let out = cli().args(["train", "--config", config.to_str().unwrap()]).output().unwrap();
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("not-an-estimator"));
}

#[test]
fn shipped_config_matches_defaults() {
    let text = std::fs::read_to_string(concat!(env!("CARGO_MANIFEST_DIR"), "/../../configs/default.toml")).unwrap();
    assert_eq!(BenchConfig::from_toml(&text).unwrap(), BenchConfig::default());
}
