//! Synthetic multilingual world: languages, task generators, corpora.

pub mod bilingual;
pub mod corpus;
pub mod lang;
pub mod tasks;
pub mod vocab;

#[cfg(test)]
mod tests;

pub use bilingual::{gen_bilingual_pair, gen_sentence};
pub use corpus::{
    build_corpora, english_source, format_examples, localize, parse_examples, translation_example, CorpusBundle,
    LanguageSpec, Quotas, TaskMix, TextDoc, World, WorldConfig,
};
pub use lang::{make_language, SynthLanguage, Tier};
pub use tasks::{chance_accuracy, gen_compare_example, gen_math_example, oracle, CompareConfig, TaskExample, TaskKind};
pub use vocab::Vocab;

#[derive(Debug, thiserror::Error)]
pub enum SynthError {
    #[error("token {0:?} is outside the shared vocabulary")]
    UnknownToken(String),
    #[error("unknown language {0:?}")]
    UnknownLanguage(String),
    #[error("invalid world config: {0}")]
    Config(String),
    #[error("could not fill quota for {set} in {lang}: generator capacity exhausted")]
    QuotaExceeded { set: String, lang: String },
    #[error("corpus parse error at {0}")]
    Parse(String),
    #[error("I/O on {0}: {1}")]
    Io(String, std::io::Error),
}

/// Text after the last `#### The answer is:` marker, trimmed.
pub fn extract_answer(decoded: &str) -> Option<String> {
    let marker = vocab::MARKER.join(" ");
    let at = decoded.rfind(&marker)?;
    let tail = decoded[at + marker.len()..].trim();
    (!tail.is_empty()).then(|| tail.to_string())
}

/// Answer of a decoded string for a task kind: the marker rule, except that
/// label-style tasks fall back to the whole string.
pub fn extract_for_kind(kind: TaskKind, decoded: &str) -> Option<String> {
    match kind {
        TaskKind::Compare => extract_answer(decoded).or_else(|| {
            let t = decoded.trim();
            (!t.is_empty()).then(|| t.to_string())
        }),
        TaskKind::Math => extract_answer(decoded),
        TaskKind::Translate => Some(decoded.trim().to_string()),
    }
}
