use std::collections::HashMap;

use serde::{Deserialize, Serialize};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TranslationScore {
    pub lang: String,
    pub token_f1: f64,
    pub exact_match: f64,
    pub count: usize,
}

/// Harmonic mean of clipped token precision and recall.
pub fn token_f1<S: AsRef<str>>(hyp: &[S], reference: &[S]) -> f64 {
    if hyp.is_empty() && reference.is_empty() {
        return 1.0;
    }
    let mut counts: HashMap<&str, usize> = HashMap::new();
    for t in reference {
        *counts.entry(t.as_ref()).or_default() += 1;
    }
    let mut overlap = 0;
    for t in hyp {
        if let Some(c) = counts.get_mut(t.as_ref()) {
            if *c > 0 {
                *c -= 1;
                overlap += 1;
            }
        }
    }
    if overlap == 0 {
        return 0.0;
    }
    let p = overlap as f64 / hyp.len() as f64;
    let r = overlap as f64 / reference.len() as f64;
    2.0 * p * r / (p + r)
}

/// Mean token-F1 and exact-match rate over `(hypothesis, reference)` pairs.
pub fn translation_scores(lang: &str, pairs: &[(Vec<String>, Vec<String>)]) -> TranslationScore {
    let n = pairs.len().max(1) as f64;
    TranslationScore {
        lang: lang.to_string(),
        token_f1: pairs.iter().map(|(h, r)| token_f1(h, r)).sum::<f64>() / n,
        exact_match: pairs.iter().filter(|(h, r)| h == r).count() as f64 / n,
        count: pairs.len(),
    }
}
