use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{cache, parallel_map, read, write, ExperimentConfig, ExperimentError};
use crate::evalkit::{export_report, AlignmentReport, MetricsRecord, ProbeLocation};
use crate::nets::load_checkpoint;
use crate::pipeline::eval::mapped_vectors;
use crate::pipeline::{sigma_from_checkpoint, FreezeCheck, Lab, RunOptions, Stage1, Variant, VariantSpec};
use crate::synthlang::{build_corpora, format_examples, World};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AlignmentEntry {
    /// `None` for probes that do not depend on σ.
    pub seed: Option<u64>,
    /// `frozen`, `sigma-init` or `mapping`.
    pub stage: String,
    pub report: AlignmentReport,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FreezeEntry {
    pub variant: String,
    pub seed: u64,
    pub checks: Vec<FreezeCheck>,
}

#[derive(Clone, Debug)]
pub struct RunSummary {
    pub dir: PathBuf,
    pub fingerprint: String,
    pub base_fingerprint: String,
    /// Seed-major, variants in canonical order.
    pub records: Vec<MetricsRecord>,
    pub alignment: Vec<AlignmentEntry>,
    pub freeze: Vec<FreezeEntry>,
}

#[derive(Serialize, Deserialize)]
struct RunInfo {
    fingerprint: String,
    base_fingerprint: String,
    variants: Vec<String>,
    seeds: Vec<u64>,
    base_report: crate::pipeline::BaseReport,
}

pub(crate) fn run_name(variant: Variant, seed: u64) -> String {
    format!("{}-seed{seed}", variant.name())
}

fn json<T: Serialize>(v: &T) -> String {
    serde_json::to_string_pretty(v).expect("serializes") + "\n"
}

/// Run directory for a config, refusing one that holds a different run.
fn claim_run_dir(cfg: &ExperimentConfig, fp: &str) -> Result<PathBuf, ExperimentError> {
    let dir = cfg.out.join(format!("run-{}", &fp[..16]));
    let info = dir.join("run.json");
    if info.exists() {
        let v: serde_json::Value =
            serde_json::from_str(&read(&info)?).map_err(|e| ExperimentError::Malformed(info.display().to_string(), e.to_string()))?;
        if v["fingerprint"] != fp {
            return Err(ExperimentError::Collision(format!("{} belongs to run {}", dir.display(), v["fingerprint"])));
        }
    }
    Ok(dir)
}

pub(crate) fn stage1_all(
    lab: &Lab,
    cache_root: &Path,
    seeds: &[u64],
    opts: &RunOptions,
    workers: usize,
) -> Result<Vec<Stage1>, ExperimentError> {
    parallel_map(seeds, workers, |&seed| cache::stage1(lab, cache_root, seed, opts))
}

/// Builds corpora, obtains the base models (from the cache when present),
/// runs every (variant, seed), evaluates, and writes the run directory.
/// `cache` defaults to `<out>/cache`.
pub fn run_experiment(cfg: &ExperimentConfig, cache: Option<&Path>) -> Result<RunSummary, ExperimentError> {
    cfg.validate()?;
    let cfg = cfg.normalized()?;
    let fp = cfg.fingerprint()?;
    let dir = claim_run_dir(&cfg, &fp)?;
    let cache_root = cache.map_or_else(|| cfg.out.join("cache"), Path::to_path_buf);
    let lab = Lab::new(cfg.lab(), Some(&cache_root))?;
    let opts = RunOptions::from_config(&lab.config);
    let variants = cfg.parsed_variants()?;

    let needs_stage1 = variants.iter().any(|&v| VariantSpec::of(v).mapping_stage);
    let stage1 = if needs_stage1 { stage1_all(&lab, &cache_root, &cfg.seeds, &opts, cfg.workers)? } else { Vec::new() };

    let jobs: Vec<(usize, Variant)> =
        (0..cfg.seeds.len()).flat_map(|i| variants.iter().map(move |&v| (i, v))).collect();
    let outcomes = parallel_map(&jobs, cfg.workers, |&(i, v)| {
        cache::outcome(&lab, &cache_root, v, cfg.seeds[i], &opts, stage1.get(i))
    })?;

    let mut records = Vec::new();
    let mut freeze = Vec::new();
    for (&(i, v), out) in jobs.iter().zip(&outcomes) {
        let seed = cfg.seeds[i];
        let name = run_name(v, seed);
        write(&dir.join("metrics").join(format!("{name}.json")), out.record.to_json())?;
        write(&dir.join("logs").join(format!("{name}.jsonl")), out.log.to_jsonl())?;
        if let Some(ck) = &out.checkpoint {
            cache::save_bridge(&dir.join("checkpoints").join(format!("{name}.ckpt")), ck)?;
        }
        records.push(out.record.clone());
        freeze.push(FreezeEntry { variant: v.name().into(), seed, checks: out.freeze.clone() });
    }

    let mut alignment = vec![
        AlignmentEntry { seed: None, stage: "frozen".into(), report: lab.alignment(ProbeLocation::EncoderLast, None)? },
        AlignmentEntry { seed: None, stage: "frozen".into(), report: lab.alignment(ProbeLocation::LlmEmbedding, None)? },
    ];
    for (s1, &seed) in stage1.iter().zip(&cfg.seeds) {
        let init = lab.sigma_init(seed, opts.mapping)?;
        alignment.push(AlignmentEntry {
            seed: Some(seed),
            stage: "sigma-init".into(),
            report: lab.alignment(ProbeLocation::MappingOutput, Some(&init))?,
        });
        alignment.push(AlignmentEntry {
            seed: Some(seed),
            stage: "mapping".into(),
            report: lab.alignment(ProbeLocation::MappingOutput, Some(&s1.sigma))?,
        });
        let name = format!("stage1-seed{seed}");
        cache::save_bridge(&dir.join("checkpoints").join(format!("{name}.ckpt")), &s1.checkpoint)?;
        write(&dir.join("logs").join(format!("{name}.jsonl")), s1.log.to_jsonl())?;
    }

    let reports: Vec<AlignmentReport> = alignment.iter().map(|a| a.report.clone()).collect();
    let mut pooled = Vec::new();
    if let Some(s1) = stage1.first() {
        for set in std::iter::once(&lab.data.pool_english).chain(&lab.data.pool_others) {
            pooled.push((set.lang.clone(), mapped_vectors(&s1.sigma, set)?));
        }
    }
    if !pooled.is_empty() {
        export_report(&records, &reports, &pooled, &dir.join("report"))?;
    }
    write(&dir.join("alignment.json"), json(&alignment))?;
    write(&dir.join("freeze.json"), json(&freeze))?;
    write(&dir.join("config.toml"), cfg.to_toml())?;
    let info = RunInfo {
        fingerprint: fp.clone(),
        base_fingerprint: lab.base.fingerprint.clone(),
        variants: cfg.variants.clone(),
        seeds: cfg.seeds.clone(),
        base_report: lab.base.report.clone(),
    };
    write(&dir.join("run.json"), json(&info))?;
    Ok(RunSummary { dir, fingerprint: fp, base_fingerprint: lab.base.fingerprint.clone(), records, alignment, freeze })
}

/// Evaluates a saved bridge checkpoint as `variant` would be evaluated.
pub fn eval_only(
    cfg: &ExperimentConfig,
    checkpoint: &Path,
    variant: Variant,
    seed: u64,
    cache: Option<&Path>,
) -> Result<MetricsRecord, ExperimentError> {
    cfg.validate()?;
    let spec = VariantSpec::of(variant);
    if !spec.uses_bridge() {
        return Err(ExperimentError::Validation(format!("{variant} has no bridge checkpoint to evaluate")));
    }
    let cache_root = cache.map_or_else(|| cfg.out.join("cache"), Path::to_path_buf);
    let lab = Lab::new(cfg.lab(), Some(&cache_root))?;
    let sigma = sigma_from_checkpoint(&load_checkpoint(checkpoint)?)?;
    Ok(lab.evaluate(variant, seed, &lab.base.lm, Some(&sigma), spec.eval_mode)?)
}

/// Writes every generated corpus of the configured world below `dir`.
pub fn gen_corpus(cfg: &ExperimentConfig, dir: &Path) -> Result<Vec<PathBuf>, ExperimentError> {
    cfg.validate()?;
    let world = World::new(&cfg.world)?;
    let bundle = build_corpora(&world)?;
    let mut files: Vec<(PathBuf, String)> = Vec::new();
    let docs: String = bundle.lm_pretrain.iter().map(|d| format!("{}\t{}\n", d.lang, d.tokens.join(" "))).collect();
    files.push((dir.join("lm_pretrain.tsv"), docs));
    files.push((dir.join("english_task.tsv"), format_examples(&bundle.english_task)));
    for (set, map) in [
        ("encoder_pairs", &bundle.encoder_pairs),
        ("mapping_pairs", &bundle.mapping_pairs),
        ("stage2", &bundle.stage2),
        ("eval", &bundle.eval),
    ] {
        for (lang, exs) in map {
            files.push((dir.join(set).join(format!("{lang}.tsv")), format_examples(exs)));
        }
    }
    let pool: String = bundle.pool.iter().map(|s| s.join(" ") + "\n").collect();
    files.push((dir.join("pool.txt"), pool));
    for (p, body) in &files {
        write(p, body)?;
    }
    Ok(files.into_iter().map(|(p, _)| p).collect())
}
