use serde::{Deserialize, Serialize};

use super::EvalError;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ProbeLocation {
    EncoderLast,
    MappingOutput,
    LlmEmbedding,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LangAlignment {
    pub lang: String,
    /// Mean same-sentence cosine against the English pool.
    pub cosine: f64,
    pub recall_at_1: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AlignmentReport {
    pub location: ProbeLocation,
    pub pool_size: usize,
    pub languages: Vec<LangAlignment>,
}

impl AlignmentReport {
    pub fn get(&self, lang: &str) -> Option<&LangAlignment> {
        self.languages.iter().find(|l| l.lang == lang)
    }
}

fn norm(a: &[f64]) -> f64 {
    a.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// Cosine similarity; 0 when either vector is zero.
pub fn cosine(a: &[f64], b: &[f64]) -> f64 {
    let (na, nb) = (norm(a), norm(b));
    if na == 0.0 || nb == 0.0 {
        return 0.0;
    }
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    (dot / (na * nb)).clamp(-1.0, 1.0)
}

fn check_pools(lang: &str, queries: &[Vec<f64>], refs: &[Vec<f64>]) -> Result<(), EvalError> {
    if queries.len() != refs.len() {
        return Err(EvalError::PoolMismatch { lang: lang.into(), got: queries.len(), expected: refs.len() });
    }
    if refs.is_empty() {
        return Err(EvalError::Invalid("empty pool".into()));
    }
    let d = refs[0].len();
    if let Some(v) = queries.iter().chain(refs).find(|v| v.len() != d) {
        return Err(EvalError::Dim(format!("{lang}: expected {d}, got {}", v.len())));
    }
    Ok(())
}

/// Mean cosine over aligned pairs `(queries[i], refs[i])`.
pub fn mean_cosine(queries: &[Vec<f64>], refs: &[Vec<f64>]) -> Result<f64, EvalError> {
    check_pools("pool", queries, refs)?;
    Ok(queries.iter().zip(refs).map(|(q, r)| cosine(q, r)).sum::<f64>() / refs.len() as f64)
}

/// Fraction of queries whose most cosine-similar reference is the one with
/// the same index. Ties go to the lowest reference index.
pub fn recall_at_1(queries: &[Vec<f64>], refs: &[Vec<f64>]) -> Result<f64, EvalError> {
    check_pools("pool", queries, refs)?;
    let unit = |v: &Vec<f64>| {
        let n = norm(v);
        v.iter().map(|x| if n == 0.0 { 0.0 } else { x / n }).collect::<Vec<f64>>()
    };
    let refs: Vec<Vec<f64>> = refs.iter().map(unit).collect();
    let mut hits = 0;
    for (i, q) in queries.iter().enumerate() {
        let q = unit(q);
        let mut best = (0, f64::NEG_INFINITY);
        for (j, r) in refs.iter().enumerate() {
            let s: f64 = q.iter().zip(r).map(|(a, b)| a * b).sum();
            if s > best.1 {
                best = (j, s);
            }
        }
        hits += usize::from(best.0 == i);
    }
    Ok(hits as f64 / queries.len() as f64)
}

/// Alignment of each language's pooled vectors against the English pool.
pub fn rep_alignment(
    location: ProbeLocation,
    english: &[Vec<f64>],
    others: &[(String, Vec<Vec<f64>>)],
) -> Result<AlignmentReport, EvalError> {
    let mut languages = Vec::with_capacity(others.len());
    for (lang, vecs) in others {
        check_pools(lang, vecs, english)?;
        languages.push(LangAlignment {
            lang: lang.clone(),
            cosine: mean_cosine(vecs, english)?,
            recall_at_1: recall_at_1(vecs, english)?,
        });
    }
    Ok(AlignmentReport { location, pool_size: english.len(), languages })
}
