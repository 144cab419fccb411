use std::path::Path;

use proptest::prelude::*;

use super::compare::{compare_records, render_compare};
use super::sweep::render_sweep;
use super::*;
use crate::evalkit::{aggregate_groups, LangAccuracy, MetricsRecord};
use crate::pipeline::LabConfig;

fn smoke(out: &Path, variants: &[&str], seeds: &[u64]) -> ExperimentConfig {
    let lab = LabConfig::smoke();
    ExperimentConfig {
        variants: variants.iter().map(|v| v.to_string()).collect(),
        seeds: seeds.to_vec(),
        out: out.to_path_buf(),
        world: lab.world,
        models: lab.models,
        training: lab.training,
        ..ExperimentConfig::default()
    }
}

fn record(variant: &str, seed: u64, accs: &[(&str, f64)], low: &[&str]) -> MetricsRecord {
    let langs = accs
        .iter()
        .map(|&(l, a)| LangAccuracy { lang: l.into(), correct: 0, count: 100, accuracy: a })
        .collect();
    let mut r = MetricsRecord::new(variant, seed, langs);
    aggregate_groups(&mut r, &low.iter().map(|s| s.to_string()).collect::<Vec<_>>()).unwrap();
    r
}

#[test]
fn default_config_round_trips_through_toml() {
    let cfg = ExperimentConfig::default();
    cfg.validate().unwrap();
    let back = ExperimentConfig::from_toml(&cfg.to_toml()).unwrap();
    assert_eq!(back, cfg);
    assert_eq!(back.fingerprint().unwrap(), cfg.fingerprint().unwrap());
}

#[test]
fn shipped_config_matches_the_defaults() {
    let text = include_str!("../../../../configs/default.toml");
    assert_eq!(ExperimentConfig::from_toml(text).unwrap(), ExperimentConfig::default());
}

#[test]
fn unknown_keys_are_errors() {
    let text = ExperimentConfig::default().to_toml().replacen("version = 1", "version = 1\nmomentum = 0.9", 1);
    let err = ExperimentConfig::from_toml(&text).unwrap_err();
    assert!(err.is_validation());
    assert!(err.to_string().contains("momentum"), "{err}");
}

#[test]
fn sections_may_be_omitted() {
    let cfg = ExperimentConfig::from_toml("version = 1\nseeds = [4]\n").unwrap();
    assert_eq!(cfg.seeds, vec![4]);
    assert_eq!(cfg.training, ExperimentConfig::default().training);
}

#[test]
fn validation_names_the_field() {
    let mut cfg = ExperimentConfig::default();
    cfg.variants.push("bogus".into());
    let err = cfg.validate().unwrap_err();
    assert!(err.is_validation() && err.to_string().contains("bogus"), "{err}");

    let mut cfg = ExperimentConfig::default();
    cfg.training.mapping.phi_trainable = true;
    let err = cfg.validate().unwrap_err();
    assert!(err.is_validation() && err.to_string().contains("mapping"), "{err}");

    for bad in [
        ExperimentConfig { version: 9, ..Default::default() },
        ExperimentConfig { seeds: vec![], ..Default::default() },
        ExperimentConfig { workers: 0, ..Default::default() },
    ] {
        assert!(bad.validate().unwrap_err().is_validation());
    }
}

#[test]
fn unknown_variant_fails_before_any_training() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = smoke(dir.path(), &["full", "nope"], &[1]);
    let err = run_experiment(&cfg, None).unwrap_err();
    assert!(err.is_validation());
    assert_eq!(std::fs::read_dir(dir.path()).unwrap().count(), 0);
}

#[test]
fn fingerprint_normalizes_and_tracks_content() {
    let a = ExperimentConfig::default();
    let mut b = a.clone();
    b.seeds = vec![3, 1, 2, 1];
    b.variants.reverse();
    b.out = "elsewhere".into();
    b.workers = 4;
    assert_eq!(a.fingerprint().unwrap(), b.fingerprint().unwrap());
    let mut c = a.clone();
    c.training.augmentation.epochs += 1;
    assert_ne!(a.fingerprint().unwrap(), c.fingerprint().unwrap());
    let mut d = a.clone();
    d.seeds.push(4);
    assert_ne!(a.fingerprint().unwrap(), d.fingerprint().unwrap());
}

#[test]
fn parallel_map_keeps_order() {
    let items: Vec<u64> = (0..37).collect();
    let out = parallel_map(&items, 4, |&x| Ok(x * x)).unwrap();
    assert_eq!(out, items.iter().map(|x| x * x).collect::<Vec<_>>());
    let err = parallel_map(&items, 3, |&x| if x == 5 { Err(ExperimentError::Validation("five".into())) } else { Ok(x) });
    assert!(err.is_err());
}

#[test]
fn sweep_axis_names() {
    for a in [SweepAxis::Stage2Size, SweepAxis::MappingVariant] {
        assert_eq!(a.name().parse::<SweepAxis>().unwrap(), a);
    }
    assert!("depth".parse::<SweepAxis>().is_err());
}

#[test]
fn sweep_table_has_a_mean_row_per_value() {
    let rows: Vec<SweepRow> = [(0, 1, 10.0), (0, 2, 20.0), (100, 1, 30.0), (100, 2, 50.0)]
        .iter()
        .map(|&(v, seed, a)| SweepRow {
            value: v.to_string(),
            seed,
            base_fingerprint: "fp".into(),
            record: record("full", seed, &[("en", a), ("l1", a)], &["l1"]),
        })
        .collect();
    let table = render_sweep(SweepAxis::Stage2Size, &["0".into(), "100".into()], &rows);
    let lines: Vec<&str> = table.lines().collect();
    assert_eq!(lines[0], "axis,value,seed,Lrl,Hrl,Avg");
    assert_eq!(lines[3], "stage2-size,0,mean,15.00,15.00,15.00");
    assert_eq!(lines[6], "stage2-size,100,mean,40.00,40.00,40.00");
}

#[test]
fn mismatched_language_sets_are_rejected() {
    let a = vec![record("full", 1, &[("en", 50.0), ("l1", 40.0)], &["l1"])];
    let b = vec![record("full", 1, &[("en", 50.0), ("l2", 40.0)], &["l2"])];
    assert!(matches!(compare_records(&a, &[("b".into(), b)]), Err(ExperimentError::Mismatch(_))));
}

proptest! {
    #[test]
    fn compare_is_antisymmetric(accs in proptest::collection::vec((0.0f64..100.0, 0.0f64..100.0), 6)) {
        let run = |off: usize| -> Vec<MetricsRecord> {
            (0..3u64)
                .map(|s| {
                    let (x, y) = accs[s as usize + off];
                    record("full", s, &[("en", x), ("l1", y)], &["l1"])
                })
                .collect()
        };
        let (a, b) = (run(0), run(3));
        let ab = compare_records(&a, &[("b".into(), b.clone())]).unwrap();
        let ba = compare_records(&b, &[("a".into(), a.clone())]).unwrap();
        prop_assert_eq!(ab.len(), ba.len());
        for (x, y) in ab.iter().zip(&ba) {
            prop_assert_eq!(x.delta, -y.delta);
            prop_assert_eq!((x.better, x.worse, x.tied), (y.worse, y.better, y.tied));
        }
        let aa = compare_records(&a, &[("a".into(), a.clone())]).unwrap();
        prop_assert!(aa.iter().all(|r| r.delta == 0.0 && r.tied == r.seeds));
    }
}

#[test]
fn smoke_run_is_deterministic_and_comparable() {
    let root = tempfile::tempdir().unwrap();
    let variants = ["full", "no_augmentation_stage", "monoreason"];
    let a = run_experiment(&smoke(&root.path().join("a"), &variants, &[1, 2]), None).unwrap();
    let b = run_experiment(&smoke(&root.path().join("b"), &variants, &[2, 1]), None).unwrap();
    assert_eq!(a.records.len(), 6);
    assert_eq!(a.fingerprint, b.fingerprint);
    for name in ["full-seed1", "no_augmentation_stage-seed2", "monoreason-seed1"] {
        let read = |d: &Path| std::fs::read(d.join("metrics").join(format!("{name}.json"))).unwrap();
        assert_eq!(read(&a.dir), read(&b.dir), "{name}");
    }
    assert!(a.freeze.iter().all(|f| f.checks.iter().all(|c| c.exact())));
    for file in ["config.toml", "run.json", "alignment.json", "freeze.json", "report/accuracy.csv"] {
        assert!(a.dir.join(file).exists(), "{file}");
    }
    let cfg_back = ExperimentConfig::load(&a.dir.join("config.toml")).unwrap();
    assert_eq!(cfg_back.fingerprint().unwrap(), a.fingerprint);

    let report = compare_runs(&a.dir, std::slice::from_ref(&b.dir)).unwrap();
    assert!(report.rows.iter().all(|r| r.delta == 0.0));
    assert_eq!(report.table, render_compare(&report.rows));

    let again = run_experiment(&smoke(&root.path().join("a"), &variants, &[1, 2]), None).unwrap();
    assert_eq!(again.records, a.records);

    let ck = a.dir.join("checkpoints").join("full-seed1.ckpt");
    let cfg = smoke(&root.path().join("a"), &variants, &[1]);
    let rec = eval_only(&cfg, &ck, crate::pipeline::Variant::Full, 1, None).unwrap();
    assert_eq!(rec, a.records[0]);
}

#[test]
fn stage2_sweep_at_zero_matches_no_augmentation() {
    let root = tempfile::tempdir().unwrap();
    let cfg = smoke(root.path(), &["no_augmentation_stage"], &[1]);
    let run = run_experiment(&cfg, None).unwrap();
    let report = sweep(&cfg, SweepAxis::Stage2Size, &["0".into(), "12".into()], None).unwrap();
    assert_eq!(report.rows.len(), 2);
    let mut at_zero = report.rows[0].record.clone();
    at_zero.variant = run.records[0].variant.clone();
    assert_eq!(at_zero, run.records[0]);
    assert!(report.rows.iter().all(|r| r.base_fingerprint == run.base_fingerprint));
    assert!(sweep(&cfg, SweepAxis::Stage2Size, &["100000".into()], None).unwrap_err().is_validation());
    let m = sweep(&cfg, SweepAxis::MappingVariant, &["linear".into(), "mlp3".into()], None).unwrap();
    assert_eq!(m.table.lines().count(), 1 + 2 * 2);
}

#[test]
fn run_dir_collision_is_an_error() {
    let root = tempfile::tempdir().unwrap();
    let cfg = smoke(root.path(), &["monoreason"], &[1]);
    let fp = cfg.fingerprint().unwrap();
    let dir = root.path().join(format!("run-{}", &fp[..16]));
    std::fs::create_dir_all(&dir).unwrap();
    std::fs::write(dir.join("run.json"), r#"{"fingerprint": "other"}"#).unwrap();
    assert!(matches!(run_experiment(&cfg, None), Err(ExperimentError::Collision(_))));
}

#[test]
fn gen_corpus_writes_every_set() {
    let root = tempfile::tempdir().unwrap();
    let cfg = smoke(root.path(), &["monoreason"], &[1]);
    let files = gen_corpus(&cfg, &root.path().join("corpus")).unwrap();
    assert!(files.iter().all(|p| p.exists()));
    let eval_en = root.path().join("corpus/eval/en.tsv");
    let parsed = crate::synthlang::parse_examples(&std::fs::read_to_string(eval_en).unwrap()).unwrap();
    assert_eq!(parsed.len(), cfg.world.quotas.eval);
}
