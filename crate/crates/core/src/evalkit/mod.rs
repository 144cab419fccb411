//! Accuracy, alignment and translation metrics, and report export.

pub mod alignment;
pub mod metrics;
pub mod report;
pub mod translation;

#[cfg(test)]
mod tests;

pub use alignment::{cosine, mean_cosine, recall_at_1, rep_alignment, AlignmentReport, LangAlignment, ProbeLocation};
pub use metrics::{aggregate_groups, eval_accuracy, score_language, LangAccuracy, MetricsRecord, METRICS_VERSION};
pub use report::{export_report, parse_table, pca_2d, render_table, TableRow};
pub use translation::{token_f1, translation_scores, TranslationScore};

#[derive(Debug, thiserror::Error)]
pub enum EvalError {
    #[error("language {0:?} missing from record")]
    MissingLanguage(String),
    #[error("pool size mismatch: {lang} has {got}, English has {expected}")]
    PoolMismatch { lang: String, got: usize, expected: usize },
    #[error("vector width mismatch: {0}")]
    Dim(String),
    #[error("{0}")]
    Invalid(String),
    #[error("decoder returned {got} outputs for {expected} examples")]
    DecoderOutput { got: usize, expected: usize },
    #[error("decoder failed: {0}")]
    Decoder(String),
    #[error("I/O on {0}: {1}")]
    Io(String, std::io::Error),
    #[error("table parse: {0}")]
    Parse(String),
}
