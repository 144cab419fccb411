use std::collections::HashMap;
use std::sync::OnceLock;

use serde::{Deserialize, Serialize};

use super::vocab::{content_words, invariant_tokens, CONTENT_SIZE};
use super::SynthError;
use crate::tensorcore::RngStream;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Tier {
    English,
    High,
    Low,
}

/// A synthetic language: a bijection over content words plus a surface tag.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SynthLanguage {
    pub code: String,
    pub tier: Tier,
    pub seed: u64,
    perm: Vec<usize>,
    inverse: Vec<usize>,
}

struct Tables {
    content: Vec<&'static str>,
    content_index: HashMap<&'static str, usize>,
    invariant: Vec<&'static str>,
}

fn tables() -> &'static Tables {
    static T: OnceLock<Tables> = OnceLock::new();
    T.get_or_init(|| {
        let content = content_words();
        let content_index = content.iter().enumerate().map(|(i, &w)| (w, i)).collect();
        Tables { content, content_index, invariant: invariant_tokens() }
    })
}

pub fn is_invariant(token: &str) -> bool {
    tables().invariant.contains(&token)
}

/// Index of an English content word.
pub fn content_index(token: &str) -> Option<usize> {
    tables().content_index.get(token).copied()
}

pub fn content_word(i: usize) -> &'static str {
    tables().content[i]
}

/// Deterministic language from `seed`; English is always the identity.
pub fn make_language(code: &str, seed: u64, tier: Tier) -> SynthLanguage {
    let perm = if tier == Tier::English {
        (0..CONTENT_SIZE).collect()
    } else {
        RngStream::new(seed).fork("language").permutation(CONTENT_SIZE)
    };
    let mut inverse = vec![0; CONTENT_SIZE];
    for (i, &p) in perm.iter().enumerate() {
        inverse[p] = i;
    }
    SynthLanguage { code: code.to_string(), tier, seed, perm, inverse }
}

impl SynthLanguage {
    pub fn permutation(&self) -> &[usize] {
        &self.perm
    }

    pub fn is_english(&self) -> bool {
        self.tier == Tier::English
    }

    /// Surface form of English content word `i` in this language.
    pub fn surface(&self, i: usize) -> String {
        let w = content_word(self.perm[i]);
        if self.is_english() {
            w.to_string()
        } else {
            format!("{w}_{}", self.code)
        }
    }

    /// All content surface forms of this language.
    pub fn surfaces(&self) -> Vec<String> {
        (0..CONTENT_SIZE).map(|i| self.surface(i)).collect()
    }

    /// English tokens to this language. Invariant tokens pass through.
    pub fn render<S: AsRef<str>>(&self, tokens_en: &[S]) -> Result<Vec<String>, SynthError> {
        tokens_en
            .iter()
            .map(|t| {
                let t = t.as_ref();
                if is_invariant(t) {
                    Ok(t.to_string())
                } else {
                    content_index(t).map(|i| self.surface(i)).ok_or_else(|| SynthError::UnknownToken(t.to_string()))
                }
            })
            .collect()
    }

    /// This language's tokens back to English.
    pub fn inverse_render<S: AsRef<str>>(&self, tokens: &[S]) -> Result<Vec<String>, SynthError> {
        tokens
            .iter()
            .map(|t| {
                let t = t.as_ref();
                if is_invariant(t) {
                    return Ok(t.to_string());
                }
                let word = if self.is_english() {
                    t
                } else {
                    t.strip_suffix(&format!("_{}", self.code)).ok_or_else(|| SynthError::UnknownToken(t.to_string()))?
                };
                let p = content_index(word).ok_or_else(|| SynthError::UnknownToken(t.to_string()))?;
                Ok(content_word(self.inverse[p]).to_string())
            })
            .collect()
    }
}
