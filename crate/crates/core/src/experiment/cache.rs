//! Stage-1 bridges and variant outcomes stored under the cache root, keyed by
//! the fingerprint of everything that produced them.

use std::path::{Path, PathBuf};

use serde::Serialize;

use super::{read, write, ExperimentError};
use crate::evalkit::MetricsRecord;
use crate::nets::{load_checkpoint, save_checkpoint};
use crate::pipeline::{
    fingerprint, sigma_from_checkpoint, FreezeCheck, Lab, RunOptions, Stage1, TrainLog, Variant, VariantOutcome,
    VariantSpec,
};

#[derive(Serialize)]
struct Key<'a> {
    what: &'a str,
    base: &'a str,
    lab: &'a crate::pipeline::LabConfig,
    seed: u64,
    opts: &'a RunOptions,
    variant: Option<Variant>,
}

fn key(lab: &Lab, what: &str, seed: u64, opts: &RunOptions, variant: Option<Variant>) -> String {
    fingerprint(&Key { what, base: &lab.base.fingerprint, lab: &lab.config, seed, opts, variant })
}

/// Directory for `key`, refusing a directory that belongs to another key.
fn slot(root: &Path, what: &str, key: &str) -> Result<(PathBuf, bool), ExperimentError> {
    let dir = root.join(format!("{what}-{}", &key[..16]));
    let kp = dir.join("key");
    if !kp.exists() {
        return Ok((dir, false));
    }
    let stored = read(&kp)?;
    if stored.trim() != key {
        return Err(ExperimentError::Collision(format!("{} holds {}, wanted {key}", dir.display(), stored.trim())));
    }
    Ok((dir, true))
}

/// Writes into a scratch directory, then renames it into place.
fn commit(dir: &Path, key: &str, files: Vec<(&str, Vec<u8>)>) -> Result<(), ExperimentError> {
    let tmp = dir.with_extension("partial");
    let _ = std::fs::remove_dir_all(&tmp);
    for (name, body) in files {
        write(&tmp.join(name), body)?;
    }
    write(&tmp.join("key"), key)?;
    let _ = std::fs::remove_dir_all(dir);
    std::fs::rename(&tmp, dir).map_err(|e| ExperimentError::io(dir, e))
}

fn malformed(p: &Path, e: impl ToString) -> ExperimentError {
    ExperimentError::Malformed(p.display().to_string(), e.to_string())
}

fn load_log(p: &Path) -> Result<TrainLog, ExperimentError> {
    TrainLog::from_jsonl(&read(p)?).map_err(|e| malformed(p, e))
}

fn load_freeze(p: &Path) -> Result<Vec<FreezeCheck>, ExperimentError> {
    serde_json::from_str(&read(p)?).map_err(|e| malformed(p, e))
}

fn json<T: Serialize>(v: &T) -> Vec<u8> {
    (serde_json::to_string_pretty(v).expect("serializes") + "\n").into_bytes()
}

pub fn stage1(lab: &Lab, root: &Path, seed: u64, opts: &RunOptions) -> Result<Stage1, ExperimentError> {
    let k = key(lab, "stage1", seed, opts, None);
    let (dir, hit) = slot(root, "stage1", &k)?;
    if hit {
        let checkpoint = load_checkpoint(&dir.join("bridge.ckpt"))?;
        let sigma = sigma_from_checkpoint(&checkpoint)?;
        let freeze = load_freeze(&dir.join("freeze.json"))?.pop().ok_or_else(|| malformed(&dir, "no freeze check"))?;
        let log = load_log(&dir.join("log.jsonl"))?;
        return Ok(Stage1 { sigma, checkpoint, freeze, log });
    }
    let s1 = lab.run_stage1(seed, opts)?;
    commit(
        &dir,
        &k,
        vec![
            ("bridge.ckpt", s1.checkpoint.to_bytes()?),
            ("freeze.json", json(&[&s1.freeze])),
            ("log.jsonl", s1.log.to_jsonl().into_bytes()),
        ],
    )?;
    Ok(s1)
}

pub fn outcome(
    lab: &Lab,
    root: &Path,
    variant: Variant,
    seed: u64,
    opts: &RunOptions,
    stage1: Option<&Stage1>,
) -> Result<VariantOutcome, ExperimentError> {
    let k = key(lab, "outcome", seed, opts, Some(variant));
    let (dir, hit) = slot(root, "outcome", &k)?;
    if hit {
        let p = dir.join("record.json");
        let record: MetricsRecord = serde_json::from_str(&read(&p)?).map_err(|e| malformed(&p, e))?;
        let ck = dir.join("bridge.ckpt");
        let checkpoint = if ck.exists() { Some(load_checkpoint(&ck)?) } else { None };
        let freeze = load_freeze(&dir.join("freeze.json"))?;
        let log = load_log(&dir.join("log.jsonl"))?;
        return Ok(VariantOutcome { record, checkpoint, freeze, log });
    }
    let out = lab.run_variant(&VariantSpec::of(variant), seed, opts, stage1)?;
    let mut files = vec![
        ("record.json", out.record.to_json().into_bytes()),
        ("freeze.json", json(&out.freeze)),
        ("log.jsonl", out.log.to_jsonl().into_bytes()),
    ];
    if let Some(ck) = &out.checkpoint {
        files.push(("bridge.ckpt", ck.to_bytes()?));
    }
    commit(&dir, &k, files)?;
    Ok(out)
}

/// Writes a checkpoint file (used for run directories).
pub fn save_bridge(path: &Path, ck: &crate::nets::Checkpoint) -> Result<(), ExperimentError> {
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent).map_err(|e| ExperimentError::io(parent, e))?;
    }
    Ok(save_checkpoint(path, ck)?)
}
