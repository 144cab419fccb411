use std::collections::{BTreeMap, BTreeSet};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{read, ExperimentError};
use crate::evalkit::MetricsRecord;

/// Delta of one cell, `other − baseline`, averaged over shared seeds.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CompareRow {
    pub run: String,
    pub variant: String,
    /// A language code, or `Lrl`, `Hrl`, `Avg`.
    pub column: String,
    pub delta: f64,
    pub seeds: usize,
    pub better: usize,
    pub worse: usize,
    pub tied: usize,
}

#[derive(Clone, Debug)]
pub struct CompareReport {
    pub baseline: String,
    pub rows: Vec<CompareRow>,
    pub table: String,
}

/// Every metrics record of a run directory, sorted by (variant, seed).
pub fn load_run_records(dir: &Path) -> Result<Vec<MetricsRecord>, ExperimentError> {
    let mdir = dir.join("metrics");
    let entries = std::fs::read_dir(&mdir).map_err(|e| ExperimentError::io(&mdir, e))?;
    let mut records = Vec::new();
    for e in entries {
        let p = e.map_err(|e| ExperimentError::io(&mdir, e))?.path();
        if p.extension().is_some_and(|x| x == "json") {
            let r: MetricsRecord = serde_json::from_str(&read(&p)?)
                .map_err(|e| ExperimentError::Malformed(p.display().to_string(), e.to_string()))?;
            records.push(r);
        }
    }
    if records.is_empty() {
        return Err(ExperimentError::Mismatch(format!("{} holds no metrics", dir.display())));
    }
    records.sort_by(|a, b| (&a.variant, a.seed).cmp(&(&b.variant, b.seed)));
    Ok(records)
}

fn cells(r: &MetricsRecord) -> Vec<(String, Option<f64>)> {
    let mut out: Vec<(String, Option<f64>)> = r.languages.iter().map(|l| (l.lang.clone(), Some(l.accuracy))).collect();
    out.extend([("Lrl".to_string(), r.lrl), ("Hrl".to_string(), r.hrl), ("Avg".to_string(), r.avg)]);
    out
}

fn languages(records: &[MetricsRecord]) -> BTreeSet<String> {
    records.iter().flat_map(|r| r.languages.iter().map(|l| l.lang.clone())).collect()
}

fn label(dir: &Path) -> String {
    dir.file_name().map_or_else(|| dir.display().to_string(), |n| n.to_string_lossy().into_owned())
}

/// Record-level deltas; exposed for callers that hold records in memory.
pub fn compare_records(
    baseline: &[MetricsRecord],
    others: &[(String, Vec<MetricsRecord>)],
) -> Result<Vec<CompareRow>, ExperimentError> {
    let langs = languages(baseline);
    let index = |rs: &[MetricsRecord]| -> BTreeMap<(String, u64), MetricsRecord> {
        rs.iter().map(|r| ((r.variant.clone(), r.seed), r.clone())).collect()
    };
    let base = index(baseline);
    let mut rows = Vec::new();
    for (run, records) in others {
        let theirs = languages(records);
        if theirs != langs {
            return Err(ExperimentError::Mismatch(format!("{run} covers {theirs:?}, the baseline {langs:?}")));
        }
        let other = index(records);
        let variants: BTreeSet<&String> = base.keys().map(|(v, _)| v).collect();
        for variant in variants {
            let pairs: Vec<(&MetricsRecord, &MetricsRecord)> = base
                .iter()
                .filter(|((v, _), _)| v == variant)
                .filter_map(|(k, b)| other.get(k).map(|o| (b, o)))
                .collect();
            if pairs.is_empty() {
                continue;
            }
            for (c, (column, _)) in cells(pairs[0].0).into_iter().enumerate() {
                let deltas: Vec<f64> = pairs
                    .iter()
                    .filter_map(|(b, o)| match (cells(b)[c].1, cells(o)[c].1) {
                        (Some(x), Some(y)) => Some(y - x),
                        _ => None,
                    })
                    .collect();
                if deltas.is_empty() {
                    continue;
                }
                rows.push(CompareRow {
                    run: run.clone(),
                    variant: variant.clone(),
                    column,
                    delta: deltas.iter().sum::<f64>() / deltas.len() as f64,
                    seeds: deltas.len(),
                    better: deltas.iter().filter(|d| **d > 0.0).count(),
                    worse: deltas.iter().filter(|d| **d < 0.0).count(),
                    tied: deltas.iter().filter(|d| **d == 0.0).count(),
                });
            }
        }
    }
    Ok(rows)
}

pub fn render_compare(rows: &[CompareRow]) -> String {
    let mut out = String::from("run,variant,column,delta,seeds,better,worse,tied\n");
    for r in rows {
        out.push_str(&format!(
            "{},{},{},{:.4},{},{},{},{}\n",
            r.run, r.variant, r.column, r.delta, r.seeds, r.better, r.worse, r.tied
        ));
    }
    out
}

/// Deltas of each run in `others` against `baseline`, per variant and cell,
/// with per-seed sign counts.
pub fn compare_runs(baseline: &Path, others: &[PathBuf]) -> Result<CompareReport, ExperimentError> {
    let base = load_run_records(baseline)?;
    let mut loaded = Vec::new();
    for dir in others {
        loaded.push((label(dir), load_run_records(dir)?));
    }
    let rows = compare_records(&base, &loaded)?;
    let table = render_compare(&rows);
    Ok(CompareReport { baseline: label(baseline), rows, table })
}
