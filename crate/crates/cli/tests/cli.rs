use std::path::Path;
use std::process::Command;

use bridgelab::experiment::ExperimentConfig;
use bridgelab::pipeline::LabConfig;

fn bridgelab(args: &[&str]) -> std::process::Output {
    Command::new(env!("CARGO_BIN_EXE_bridgelab")).args(args).env_remove("BRIDGELAB_CACHE").output().unwrap()
}

fn smoke_config(dir: &Path) -> std::path::PathBuf {
    let lab = LabConfig::smoke();
    let cfg = ExperimentConfig {
        variants: vec!["full".into(), "monoreason".into()],
        seeds: vec![1],
        out: dir.join("out"),
        world: lab.world,
        models: lab.models,
        training: lab.training,
        ..ExperimentConfig::default()
    };
    let p = dir.join("smoke.toml");
    std::fs::write(&p, cfg.to_toml()).unwrap();
    p
}

#[test]
fn unknown_key_is_a_validation_failure() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("bad.toml");
    std::fs::write(&p, "version = 1\nlearning_rate = 0.1\n").unwrap();
    let out = bridgelab(&["run", "--config", p.to_str().unwrap(), "--out", dir.path().to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("learning_rate"));
}

#[test]
fn unknown_variant_is_a_validation_failure() {
    let dir = tempfile::tempdir().unwrap();
    let out = bridgelab(&["run", "--variants", "full,bogus", "--out", dir.path().to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2));
    assert_eq!(std::fs::read_dir(dir.path()).unwrap().count(), 0);
}

#[test]
fn missing_run_is_a_runtime_failure() {
    let dir = tempfile::tempdir().unwrap();
    let missing = dir.path().join("nope");
    let out = bridgelab(&["compare", "--baseline", missing.to_str().unwrap(), missing.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn smoke_run_sweep_and_compare() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = smoke_config(dir.path());
    let cfg = cfg.to_str().unwrap();
    let out = bridgelab(&["run", "--config", cfg]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let stdout = String::from_utf8_lossy(&out.stdout);
    let run_dir = stdout.lines().find_map(|l| l.strip_prefix("run directory: ")).unwrap().to_string();
    assert!(Path::new(&run_dir).join("metrics/full-seed1.json").exists());
    assert!(Path::new(&run_dir).starts_with(dir.path().join("out")));

    let out = bridgelab(&["compare", "--baseline", &run_dir, &run_dir]);
    assert!(out.status.success());
    let table = String::from_utf8_lossy(&out.stdout);
    assert!(table.lines().skip(1).all(|l| l.split(',').nth(3) == Some("0.0000")), "{table}");

    let out = bridgelab(&["sweep", "--config", cfg, "--axis", "mapping-variant", "--values", "linear,mlp2,mlp3"]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    assert_eq!(String::from_utf8_lossy(&out.stdout).lines().filter(|l| l.contains(",mean,")).count(), 3);

    let out = bridgelab(&["sweep", "--config", cfg, "--axis", "depth", "--values", "1"]);
    assert_eq!(out.status.code(), Some(2));

    let ck = Path::new(&run_dir).join("checkpoints/full-seed1.ckpt");
    let out = bridgelab(&["eval-only", "--config", cfg, "--checkpoint", ck.to_str().unwrap()]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let saved = std::fs::read_to_string(Path::new(&run_dir).join("metrics/full-seed1.json")).unwrap();
    assert_eq!(String::from_utf8_lossy(&out.stdout), saved);

    let out = bridgelab(&["gen-corpus", "--config", cfg]);
    assert!(out.status.success());
    assert!(dir.path().join("out/corpus/eval/en.tsv").exists());
}

#[test]
fn cache_override_from_the_environment() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = smoke_config(dir.path());
    let cache = dir.path().join("elsewhere");
    let out = Command::new(env!("CARGO_BIN_EXE_bridgelab"))
        .args(["run", "--config", cfg.to_str().unwrap(), "--variants", "monoreason"])
        .env("BRIDGELAB_CACHE", &cache)
        .output()
        .unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(std::fs::read_dir(&cache).unwrap().any(|e| e.unwrap().file_name().to_string_lossy().starts_with("base-")));
    assert!(!dir.path().join("out/cache").exists());
}

#[test]
fn gradcheck_passes() {
    let out = bridgelab(&["gradcheck", "--seeds", "1"]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stdout));
}
