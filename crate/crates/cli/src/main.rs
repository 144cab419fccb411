use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use bridgelab::experiment::{
    compare_runs, eval_only, gen_corpus, gradcheck_suite, run_experiment, sweep, ExperimentConfig, ExperimentError,
    SweepAxis, CACHE_ENV,
};
use bridgelab::pipeline::Variant;
use clap::{Args, Parser, Subcommand};

const EXIT_RUNTIME: u8 = 1;
const EXIT_VALIDATION: u8 = 2;

#[derive(Parser)]
#[command(name = "bridgelab", version, about = "Bridge a frozen encoder into a frozen LM on a synthetic multilingual world")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// Experiment config (TOML). Defaults apply when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Comma-separated seeds, overriding the config.
    #[arg(long, value_delimiter = ',')]
    seeds: Option<Vec<u64>>,
    /// Comma-separated variants, overriding the config.
    #[arg(long, value_delimiter = ',')]
    variants: Option<Vec<String>>,
    /// Output root, overriding the config.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Concurrent (variant, seed) jobs.
    #[arg(long)]
    workers: Option<usize>,
    /// Cache directory for trained checkpoints (default: <out>/cache).
    #[arg(long, env = CACHE_ENV)]
    cache: Option<PathBuf>,
}

impl Common {
    fn config(&self) -> Result<ExperimentConfig> {
        let mut cfg = match &self.config {
            Some(p) => ExperimentConfig::load(p)?,
            None => ExperimentConfig::default(),
        };
        if let Some(s) = &self.seeds {
            cfg.seeds = s.clone();
        }
        if let Some(v) = &self.variants {
            cfg.variants = v.clone();
        }
        if let Some(o) = &self.out {
            cfg.out = o.clone();
        }
        if let Some(w) = self.workers {
            cfg.workers = w;
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

#[derive(Subcommand)]
enum Command {
    /// Train and evaluate every (variant, seed) of a config.
    Run {
        #[command(flatten)]
        common: Common,
    },
    /// One full-variant run per axis value.
    Sweep {
        #[command(flatten)]
        common: Common,
        /// stage2-size or mapping-variant.
        #[arg(long)]
        axis: String,
        /// Comma-separated axis values, e.g. 0,100,1000 or linear,mlp2,mlp3.
        #[arg(long, value_delimiter = ',', required = true)]
        values: Vec<String>,
    },
    /// Per-cell deltas of run directories against a baseline run.
    Compare {
        #[arg(long)]
        baseline: PathBuf,
        #[arg(required = true)]
        runs: Vec<PathBuf>,
        /// Also write the table to <out>/compare.csv.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Write the generated corpora of a config to <out>/corpus.
    GenCorpus {
        #[command(flatten)]
        common: Common,
    },
    /// Evaluate a saved bridge checkpoint.
    EvalOnly {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long, default_value = "full")]
        variant: String,
        #[arg(long, default_value_t = 1)]
        seed: u64,
    },
    /// Finite-difference check of every primitive and the composed loss.
    Gradcheck {
        #[arg(long, value_delimiter = ',', default_value = "1,2,3,4,5")]
        seeds: Vec<u64>,
        #[arg(long, default_value_t = 1e-3)]
        tolerance: f64,
    },
}

fn cache_of(common: &Common) -> Option<&Path> {
    common.cache.as_deref()
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match dispatch(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            let validation = e.chain().any(|c| c.downcast_ref::<ExperimentError>().is_some_and(ExperimentError::is_validation));
            ExitCode::from(if validation { EXIT_VALIDATION } else { EXIT_RUNTIME })
        }
    }
}

fn dispatch(command: Command) -> Result<()> {
    match command {
        Command::Run { common } => {
            let cfg = common.config()?;
            let summary = run_experiment(&cfg, cache_of(&common))?;
            for r in &summary.records {
                println!("{:<24} seed {:<3} lrl {:>6.2} hrl {:>6.2} avg {:>6.2}", r.variant, r.seed, opt(r.lrl), opt(r.hrl), opt(r.avg));
            }
            println!("run directory: {}", summary.dir.display());
        }
        Command::Sweep { common, axis, values } => {
            let cfg = common.config()?;
            let axis: SweepAxis = axis.parse()?;
            let report = sweep(&cfg, axis, &values, cache_of(&common))?;
            print!("{}", report.table);
            println!("sweep directory: {}", report.dir.display());
        }
        Command::Compare { baseline, runs, out } => {
            let report = compare_runs(&baseline, &runs)?;
            print!("{}", report.table);
            if let Some(dir) = out {
                std::fs::create_dir_all(&dir).with_context(|| format!("creating {}", dir.display()))?;
                let p = dir.join("compare.csv");
                std::fs::write(&p, &report.table).with_context(|| format!("writing {}", p.display()))?;
            }
        }
        Command::GenCorpus { common } => {
            let cfg = common.config()?;
            let files = gen_corpus(&cfg, &cfg.out.join("corpus"))?;
            println!("wrote {} files under {}", files.len(), cfg.out.join("corpus").display());
        }
        Command::EvalOnly { common, checkpoint, variant, seed } => {
            let cfg = common.config()?;
            let variant = Variant::parse(&variant).map_err(|e| ExperimentError::Validation(e.to_string()))?;
            let record = eval_only(&cfg, &checkpoint, variant, seed, cache_of(&common))?;
            print!("{}", record.to_json());
        }
        Command::Gradcheck { seeds, tolerance } => {
            let rows = gradcheck_suite(&seeds)?;
            let mut worst: f64 = 0.0;
            for r in &rows {
                println!("{:<28} seed {:<3} max rel error {:.3e} ({} coords)", r.case, r.seed, r.max_rel_error, r.coords);
                worst = worst.max(r.max_rel_error);
            }
            if worst >= tolerance {
                bail!("max relative error {worst:.3e} exceeds {tolerance:.0e}");
            }
            println!("all {} checks below {tolerance:.0e}", rows.len());
        }
    }
    Ok(())
}

fn opt(x: Option<f64>) -> f64 {
    x.unwrap_or(f64::NAN)
}
