use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::run::stage1_all;
use super::{cache, parallel_map, write, ExperimentConfig, ExperimentError};
use crate::evalkit::MetricsRecord;
use crate::nets::MappingVariant;
use crate::pipeline::{fingerprint, Lab, RunOptions, Variant};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SweepAxis {
    /// Stage-2 examples per language.
    Stage2Size,
    MappingVariant,
}

impl SweepAxis {
    pub fn name(self) -> &'static str {
        match self {
            SweepAxis::Stage2Size => "stage2-size",
            SweepAxis::MappingVariant => "mapping-variant",
        }
    }
}

impl fmt::Display for SweepAxis {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for SweepAxis {
    type Err = ExperimentError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "stage2-size" => Ok(SweepAxis::Stage2Size),
            "mapping-variant" => Ok(SweepAxis::MappingVariant),
            _ => Err(ExperimentError::Validation(format!("sweep axis must be stage2-size or mapping-variant, got {s:?}"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub value: String,
    pub seed: u64,
    pub base_fingerprint: String,
    pub record: MetricsRecord,
}

#[derive(Clone, Debug)]
pub struct SweepReport {
    pub axis: SweepAxis,
    pub dir: PathBuf,
    pub rows: Vec<SweepRow>,
    /// `axis,value,seed,Lrl,Hrl,Avg`; seed `mean` rows average the seeds.
    pub table: String,
}

fn parse_values(cfg: &ExperimentConfig, axis: SweepAxis, values: &[String]) -> Result<Vec<RunOptions>, ExperimentError> {
    if values.is_empty() {
        return Err(ExperimentError::Validation(format!("{axis}: at least one value is required")));
    }
    let base = RunOptions::from_config(&cfg.lab());
    values
        .iter()
        .map(|v| match axis {
            SweepAxis::Stage2Size => {
                let n: usize = v.parse().map_err(|_| ExperimentError::Validation(format!("{axis}: {v:?} is not a size")))?;
                if n > cfg.world.quotas.stage2 {
                    return Err(ExperimentError::Validation(format!(
                        "{axis}: {n} exceeds the stage-2 quota of {}",
                        cfg.world.quotas.stage2
                    )));
                }
                Ok(RunOptions { stage2_size: n, ..base })
            }
            SweepAxis::MappingVariant => {
                let m = MappingVariant::ALL
                    .into_iter()
                    .find(|m| m.name() == v)
                    .ok_or_else(|| ExperimentError::Validation(format!("{axis}: unknown mapping variant {v:?}")))?;
                Ok(RunOptions { mapping: m, ..base })
            }
        })
        .collect()
}

fn cell(x: Option<f64>) -> String {
    x.map_or_else(String::new, |v| format!("{v:.2}"))
}

fn mean(xs: &[Option<f64>]) -> Option<f64> {
    let vals: Vec<f64> = xs.iter().flatten().copied().collect();
    (vals.len() == xs.len() && !vals.is_empty()).then(|| vals.iter().sum::<f64>() / vals.len() as f64)
}

pub fn render_sweep(axis: SweepAxis, values: &[String], rows: &[SweepRow]) -> String {
    let mut out = String::from("axis,value,seed,Lrl,Hrl,Avg\n");
    for v in values {
        let of: Vec<&SweepRow> = rows.iter().filter(|r| &r.value == v).collect();
        for r in &of {
            out.push_str(&format!("{axis},{v},{},{},{},{}\n", r.seed, cell(r.record.lrl), cell(r.record.hrl), cell(r.record.avg)));
        }
        let col = |f: fn(&MetricsRecord) -> Option<f64>| mean(&of.iter().map(|r| f(&r.record)).collect::<Vec<_>>());
        out.push_str(&format!(
            "{axis},{v},mean,{},{},{}\n",
            cell(col(|r| r.lrl)),
            cell(col(|r| r.hrl)),
            cell(col(|r| r.avg))
        ));
    }
    out
}

/// One full-variant run per axis value and seed. Every value shares the base
/// models; stage 1 is shared wherever the value leaves it unchanged.
pub fn sweep(
    cfg: &ExperimentConfig,
    axis: SweepAxis,
    values: &[String],
    cache: Option<&Path>,
) -> Result<SweepReport, ExperimentError> {
    cfg.validate()?;
    let cfg = cfg.normalized()?;
    let options = parse_values(&cfg, axis, values)?;
    let base_fps: Vec<String> = options
        .iter()
        .map(|o| {
            let mut lab = cfg.lab();
            lab.models.mapping = o.mapping;
            lab.base_fingerprint()
        })
        .collect();
    if base_fps.iter().any(|f| f != &base_fps[0]) {
        return Err(ExperimentError::Validation(format!("{axis}: values would need different base models")));
    }
    let cache_root = cache.map_or_else(|| cfg.out.join("cache"), Path::to_path_buf);
    let lab = Lab::new(cfg.lab(), Some(&cache_root))?;

    let mut rows = Vec::new();
    for (value, opts) in values.iter().zip(&options) {
        let stage1 = stage1_all(&lab, &cache_root, &cfg.seeds, opts, cfg.workers)?;
        let idx: Vec<usize> = (0..cfg.seeds.len()).collect();
        let outs = parallel_map(&idx, cfg.workers, |&i| {
            cache::outcome(&lab, &cache_root, Variant::Full, cfg.seeds[i], opts, stage1.get(i))
        })?;
        for (i, out) in outs.into_iter().enumerate() {
            rows.push(SweepRow {
                value: value.clone(),
                seed: cfg.seeds[i],
                base_fingerprint: lab.base.fingerprint.clone(),
                record: out.record,
            });
        }
    }

    let key = fingerprint(&serde_json::json!({ "run": cfg.fingerprint()?, "axis": axis, "values": values }));
    let dir = cfg.out.join(format!("sweep-{axis}-{}", &key[..16]));
    let table = render_sweep(axis, values, &rows);
    write(&dir.join("sweep.csv"), &table)?;
    write(&dir.join("rows.json"), serde_json::to_string_pretty(&rows).expect("serializes") + "\n")?;
    Ok(SweepReport { axis, dir, rows, table })
}
