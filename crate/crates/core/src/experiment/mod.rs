//! Config-driven experiment runs, sweeps and run comparison.

pub mod cache;
pub mod compare;
pub mod config;
pub mod gradcheck;
pub mod run;
pub mod sweep;

#[cfg(test)]
mod tests;

use std::path::Path;

pub use compare::{compare_runs, load_run_records, CompareReport, CompareRow};
pub use config::{ExperimentConfig, CONFIG_VERSION};
pub use gradcheck::{gradcheck_suite, GradRow};
pub use run::{eval_only, gen_corpus, run_experiment, AlignmentEntry, FreezeEntry, RunSummary};
pub use sweep::{sweep, SweepAxis, SweepReport, SweepRow};

use crate::evalkit::EvalError;
use crate::nets::CheckpointError;
use crate::pipeline::PipelineError;
use crate::synthlang::SynthError;

/// Environment variable that overrides the cache directory.
pub const CACHE_ENV: &str = "BRIDGELAB_CACHE";

#[derive(Debug, thiserror::Error)]
pub enum ExperimentError {
    #[error("config parse error: {0}")]
    Parse(String),
    #[error("invalid config: {0}")]
    Validation(String),
    #[error("fingerprint collision: {0}")]
    Collision(String),
    #[error("runs are not comparable: {0}")]
    Mismatch(String),
    #[error("malformed {0}: {1}")]
    Malformed(String, String),
    #[error("I/O on {0}: {1}")]
    Io(String, std::io::Error),
    #[error(transparent)]
    Pipeline(#[from] PipelineError),
    #[error(transparent)]
    Eval(#[from] EvalError),
    #[error(transparent)]
    Checkpoint(#[from] CheckpointError),
    #[error(transparent)]
    Synth(#[from] SynthError),
}

impl ExperimentError {
    pub(crate) fn io(path: &Path, e: std::io::Error) -> Self {
        ExperimentError::Io(path.display().to_string(), e)
    }

    /// Whether the failure is a bad input rather than a failed computation.
    pub fn is_validation(&self) -> bool {
        matches!(
            self,
            ExperimentError::Parse(_)
                | ExperimentError::Validation(_)
                | ExperimentError::Pipeline(PipelineError::Config(_) | PipelineError::UnknownVariant(_))
        )
    }
}

pub(crate) fn write(path: &Path, body: impl AsRef<[u8]>) -> Result<(), ExperimentError> {
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent).map_err(|e| ExperimentError::io(parent, e))?;
    }
    std::fs::write(path, body).map_err(|e| ExperimentError::io(path, e))
}

pub(crate) fn read(path: &Path) -> Result<String, ExperimentError> {
    std::fs::read_to_string(path).map_err(|e| ExperimentError::io(path, e))
}

/// Maps `f` over `items` on up to `workers` threads; results keep input order.
pub(crate) fn parallel_map<T, R, F>(items: &[T], workers: usize, f: F) -> Result<Vec<R>, ExperimentError>
where
    T: Sync,
    R: Send,
    F: Fn(&T) -> Result<R, ExperimentError> + Sync,
{
    use std::sync::atomic::{AtomicUsize, Ordering};
    use std::sync::Mutex;

    if workers <= 1 || items.len() <= 1 {
        return items.iter().map(&f).collect();
    }
    let next = AtomicUsize::new(0);
    let slots: Mutex<Vec<Option<Result<R, ExperimentError>>>> = Mutex::new((0..items.len()).map(|_| None).collect());
    std::thread::scope(|s| {
        for _ in 0..workers.min(items.len()) {
            s.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::SeqCst);
                if i >= items.len() {
                    break;
                }
                let r = f(&items[i]);
                slots.lock().expect("worker poisoned")[i] = Some(r);
            });
        }
    });
    slots.into_inner().expect("worker poisoned").into_iter().map(|r| r.expect("every job ran")).collect()
}
