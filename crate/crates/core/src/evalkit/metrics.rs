use std::collections::{BTreeMap, HashSet};

use serde::{Deserialize, Serialize};

use super::EvalError;
use crate::synthlang::{extract_for_kind, TaskExample};

pub const METRICS_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LangAccuracy {
    pub lang: String,
    pub correct: usize,
    pub count: usize,
    /// Percent, `100 * correct / count`.
    pub accuracy: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsRecord {
    pub version: u32,
    pub variant: String,
    pub seed: u64,
    /// Languages in config order.
    pub languages: Vec<LangAccuracy>,
    pub low_tier: Vec<String>,
    /// `None` when the group is empty (or before aggregation).
    pub lrl: Option<f64>,
    pub hrl: Option<f64>,
    pub avg: Option<f64>,
    /// Content-blind chance accuracy (percent) of each language's eval set.
    pub chance: BTreeMap<String, f64>,
}

impl MetricsRecord {
    pub fn new(variant: impl Into<String>, seed: u64, languages: Vec<LangAccuracy>) -> Self {
        Self {
            version: METRICS_VERSION,
            variant: variant.into(),
            seed,
            languages,
            low_tier: Vec::new(),
            lrl: None,
            hrl: None,
            avg: None,
            chance: BTreeMap::new(),
        }
    }

    pub fn accuracy(&self, lang: &str) -> Option<f64> {
        self.languages.iter().find(|l| l.lang == lang).map(|l| l.accuracy)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("metrics serialize") + "\n"
    }
}

/// Scores decoded strings against gold answers: the answer span after the
/// last marker (the whole string for label tasks), exact match.
pub fn score_language(lang: &str, examples: &[TaskExample], decoded: &[String]) -> Result<LangAccuracy, EvalError> {
    if decoded.len() != examples.len() {
        return Err(EvalError::DecoderOutput { got: decoded.len(), expected: examples.len() });
    }
    let correct = examples
        .iter()
        .zip(decoded)
        .filter(|(ex, d)| extract_for_kind(ex.kind, d).as_deref() == Some(ex.answer.as_str()))
        .count();
    let count = examples.len();
    let accuracy = if count == 0 { 0.0 } else { 100.0 * correct as f64 / count as f64 };
    Ok(LangAccuracy { lang: lang.to_string(), correct, count, accuracy })
}

/// Decodes every eval set with `decode` and scores it. Aggregates are left
/// unset; see [`aggregate_groups`].
pub fn eval_accuracy<F>(
    variant: &str,
    seed: u64,
    sets: &[(String, Vec<TaskExample>)],
    mut decode: F,
) -> Result<MetricsRecord, EvalError>
where
    F: FnMut(&str, &[TaskExample]) -> Result<Vec<String>, EvalError>,
{
    let mut langs = Vec::with_capacity(sets.len());
    for (lang, examples) in sets {
        let decoded = decode(lang, examples)?;
        langs.push(score_language(lang, examples, &decoded)?);
    }
    Ok(MetricsRecord::new(variant, seed, langs))
}

fn mean(xs: impl Iterator<Item = f64>) -> Option<f64> {
    let (s, n) = xs.fold((0.0, 0usize), |(s, n), x| (s + x, n + 1));
    (n > 0).then(|| s / n as f64)
}

/// Lrl over `low`, Hrl over every other language (English included), Avg
/// over all.
pub fn aggregate_groups(record: &mut MetricsRecord, low: &[String]) -> Result<(), EvalError> {
    let present: HashSet<&str> = record.languages.iter().map(|l| l.lang.as_str()).collect();
    if let Some(missing) = low.iter().find(|l| !present.contains(l.as_str())) {
        return Err(EvalError::MissingLanguage(missing.clone()));
    }
    let low_set: HashSet<&str> = low.iter().map(String::as_str).collect();
    let accs = || record.languages.iter();
    record.lrl = mean(accs().filter(|l| low_set.contains(l.lang.as_str())).map(|l| l.accuracy));
    record.hrl = mean(accs().filter(|l| !low_set.contains(l.lang.as_str())).map(|l| l.accuracy));
    record.avg = mean(accs().map(|l| l.accuracy));
    record.low_tier = record.languages.iter().map(|l| l.lang.clone()).filter(|l| low_set.contains(l.as_str())).collect();
    Ok(())
}
