//! Acceptance suite: one PASS/FAIL line per criterion.
//!
//! Set `ACCEPTANCE_STRICT=1` to turn any FAIL into a nonzero exit status.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::time::Instant;

use bridgelab::evalkit::{LangAlignment, MetricsRecord};
use bridgelab::experiment::{
    eval_only, gradcheck_suite, run_experiment, sweep, AlignmentEntry, ExperimentConfig, RunSummary, SweepAxis,
    SweepReport,
};
use bridgelab::nets::{
    compose_augmented, compose_replacement, special, BridgeParams, HiddenSeq, LmParams, MappingVariant, Role,
    SegmentKind, Space, TransformerDims,
};
use bridgelab::pipeline::{LabConfig, Variant, VariantSpec};
use bridgelab::synthlang::{gen_compare_example, gen_math_example, oracle, CompareConfig};
use bridgelab::tensorcore::{RngStream, Tensor};

type Verdict = Result<(bool, String), String>;

struct Line {
    id: usize,
    name: &'static str,
    pass: bool,
    secs: f64,
}

fn err<E: std::fmt::Display>(e: E) -> String {
    e.to_string()
}

/// Process CPU time, falling back to wall time off Linux.
fn cpu_seconds() -> Option<f64> {
    let stat = std::fs::read_to_string("/proc/self/stat").ok()?;
    let after = &stat[stat.rfind(')')? + 2..];
    let f: Vec<&str> = after.split_whitespace().collect();
    let ticks: f64 = f.get(11)?.parse::<f64>().ok()? + f.get(12)?.parse::<f64>().ok()?;
    Some(ticks / 100.0)
}

fn lrl(r: &MetricsRecord) -> f64 {
    r.lrl.unwrap_or(f64::NAN)
}

fn find(records: &[MetricsRecord], v: Variant, seed: u64) -> Result<&MetricsRecord, String> {
    records.iter().find(|r| r.variant == v.name() && r.seed == seed).ok_or_else(|| format!("no record for {v} seed {seed}"))
}

fn low_mean(langs: &[LangAlignment], low: &[String]) -> f64 {
    let xs: Vec<f64> = langs.iter().filter(|l| low.contains(&l.lang)).map(|l| l.recall_at_1).collect();
    xs.iter().sum::<f64>() / xs.len().max(1) as f64
}

fn criterion_1() -> Verdict {
    let t = Instant::now();
    let rows = gradcheck_suite(&[1, 2, 3, 4, 5]).map_err(err)?;
    let secs = t.elapsed().as_secs_f64();
    let worst = rows.iter().max_by(|a, b| a.max_rel_error.total_cmp(&b.max_rel_error)).ok_or("no checks ran")?;
    let losses = rows.iter().filter(|r| r.case.starts_with("loss-")).count();
    let pass = worst.max_rel_error < 1e-3 && secs < 60.0 && losses > 0;
    Ok((
        pass,
        format!(
            "{} checks ({losses} composed-loss), max rel error {:.2e} at {} seed {}, {secs:.1}s",
            rows.len(),
            worst.max_rel_error,
            worst.case,
            worst.seed
        ),
    ))
}

fn criterion_2(run: &RunSummary) -> Verdict {
    let mut bad = Vec::new();
    let mut checked = 0;
    for f in &run.freeze {
        let v = Variant::parse(&f.variant).map_err(err)?;
        if v == Variant::MultireasonSft {
            continue;
        }
        let spec = VariantSpec::of(v);
        if f.checks.len() != spec.bridge_stages() {
            bad.push(format!("{} seed {}: {} stage checks, expected {}", f.variant, f.seed, f.checks.len(), spec.bridge_stages()));
        }
        for c in &f.checks {
            checked += 1;
            if !(c.theta_max_abs_diff == 0.0 && c.phi_max_abs_diff == 0.0 && c.census_numel == c.sigma_numel) {
                bad.push(format!("{} seed {} {}: {c:?}", f.variant, f.seed, c.stage));
            }
        }
    }
    Ok((bad.is_empty() && checked > 0, if bad.is_empty() { format!("{checked} stage checks bitwise frozen, census = |σ|") } else { bad.join("; ") }))
}

fn criterion_3() -> Verdict {
    let t = Instant::now();
    let dims = TransformerDims { d_model: 96, layers: 1, heads: 4, ff_mult: 4, max_positions: 128 };
    let rng = RngStream::new(3);
    let lm = LmParams::init(dims, 300, &mut rng.fork("lm")).map_err(err)?;
    let sigma = BridgeParams::init(MappingVariant::Mlp2, 64, &lm, &mut rng.fork("sigma")).map_err(err)?;
    let bos = lm.embed(&[special::BOS]).map_err(err)?;
    let sep = sigma.sep_row().map_err(err)?.to_vec();
    let mut rng = rng.fork("cases");
    let d = 96;
    for case in 0..1000 {
        let l_x = 1 + rng.below(60);
        let l_t = 1 + rng.below(60);
        let xs: Vec<f32> = (0..l_x * d).map(|_| rng.normal() as f32).collect();
        let x = HiddenSeq::new(Tensor::new(vec![l_x, d], xs.clone()).map_err(err)?, Space::Llm, Role::Mapped).map_err(err)?;
        let ids: Vec<usize> = (0..l_t).map(|_| special::COUNT + rng.below(296)).collect();
        let t = lm.embed(&ids).map_err(err)?;
        let aug = compose_augmented(&x, &t, &sigma, &lm).map_err(err)?;
        let rep = compose_replacement(&x, &sigma, &lm).map_err(err)?;
        let fail = |m: &str| Err(format!("case {case} (l_x {l_x}, l_t {l_t}): {m}"));
        if aug.len() != 1 + l_x + 1 + l_t || aug.layout.len() != aug.len() {
            return fail("augmented length");
        }
        let order = [SegmentKind::Bos, SegmentKind::Mapped, SegmentKind::Sep, SegmentKind::Native];
        if aug.layout.kinds() != order || rep.layout.kinds() != order[..3] {
            return fail("segment order");
        }
        let v = aug.values.data();
        let same = |a: &[f32], b: &[f32]| a.len() == b.len() && a.iter().zip(b).all(|(p, q)| p.to_bits() == q.to_bits());
        let expect: Vec<f32> =
            [bos.values.data(), &xs[..], &sep[..], t.values.data()].concat();
        if !same(v, &expect) {
            return fail("segment contents");
        }
        if !same(&v[..(l_x + 2) * d], rep.values.data()) {
            return fail("replacement prefix differs from augmented prefix");
        }
    }
    let secs = t.elapsed().as_secs_f64();
    Ok((secs < 10.0, format!("1000 random (l_x, l_t) cases, bitwise prefix agreement, {secs:.2}s")))
}

fn criterion_4() -> Verdict {
    let t = Instant::now();
    let mut rng = RngStream::new(4);
    let cmp = CompareConfig::default();
    let mut wrong = 0;
    let n = 10_000;
    for i in 0..n {
        let ex = if i % 2 == 0 { gen_math_example(&mut rng, 1 + (i / 2 % 3) as u8) } else { gen_compare_example(&mut rng, &cmp) }
            .map_err(err)?;
        if oracle::answer(&ex).as_deref() != Some(ex.answer.as_str()) {
            wrong += 1;
        }
    }
    let secs = t.elapsed().as_secs_f64();
    Ok((wrong == 0 && secs < 30.0, format!("{n} math+compare examples, {wrong} oracle disagreements, {secs:.2}s")))
}

fn criterion_5(run: &RunSummary, seeds: &[u64], minutes: f64) -> Verdict {
    let mut margins = Vec::new();
    let mut hrl_wins = 0;
    for &s in seeds {
        let full = find(&run.records, Variant::Full, s)?;
        let mono = find(&run.records, Variant::Monoreason, s)?;
        let rep = find(&run.records, Variant::ReplacementOnly, s)?;
        margins.push(lrl(full) - lrl(mono));
        hrl_wins += usize::from(full.hrl > rep.hrl);
    }
    let every = margins.iter().all(|m| *m >= 15.0);
    let pass = every && hrl_wins * 3 >= 2 * seeds.len() && minutes <= 30.0;
    let m: Vec<String> = margins.iter().map(|m| format!("{m:+.1}")).collect();
    Ok((pass, format!("full−mono Lrl [{}], full>replacement Hrl in {hrl_wins}/{} seeds, {minutes:.1} CPU-min", m.join(", "), seeds.len())))
}

fn criterion_6(run: &RunSummary, seeds: &[u64]) -> Verdict {
    let (mut a, mut b, mut c) = (0, 0, 0);
    for &s in seeds {
        let full = find(&run.records, Variant::Full, s)?;
        a += usize::from(lrl(full) >= lrl(find(&run.records, Variant::NoMappingStage, s)?));
        let no_aug = find(&run.records, Variant::NoAugmentationStage, s)?;
        b += usize::from(full.avg >= no_aug.avg);
        c += usize::from(lrl(no_aug) >= lrl(find(&run.records, Variant::Monoreason, s)?));
    }
    let n = seeds.len();
    let pass = a * 3 >= 2 * n && b == n && c == n;
    Ok((pass, format!("full≥no_mapping Lrl {a}/{n} (need 2/3), full≥no_aug Avg {b}/{n} (need all), no_aug≥mono Lrl {c}/{n} (need all)")))
}

fn criterion_7(run: &RunSummary, cfg: &ExperimentConfig, cache: &Path) -> Verdict {
    let low: Vec<String> = cfg.world.languages.iter().filter(|l| l.tier == bridgelab::synthlang::Tier::Low).map(|l| l.code.clone()).collect();
    let pick = |stage: &str, seed: Option<u64>, loc: bridgelab::evalkit::ProbeLocation| -> Option<&AlignmentEntry> {
        run.alignment.iter().find(|a| a.stage == stage && a.seed == seed && a.report.location == loc)
    };
    use bridgelab::evalkit::ProbeLocation::*;
    let emb = pick("frozen", None, LlmEmbedding).ok_or("no LLM-embedding probe")?;
    let emb_low = low_mean(&emb.report.languages, &low);
    let (mut after, mut init) = (Vec::new(), Vec::new());
    for &s in &cfg.seeds {
        after.push(low_mean(&pick("mapping", Some(s), MappingOutput).ok_or("no mapped probe")?.report.languages, &low));
        init.push(low_mean(&pick("sigma-init", Some(s), MappingOutput).ok_or("no σ-init probe")?.report.languages, &low));
    }
    let pool = emb.report.pool_size;

    // Recompute from the saved stage-1 checkpoints and time it.
    let lab = bridgelab::pipeline::Lab::new(cfg.lab(), Some(cache)).map_err(err)?;
    let t = Instant::now();
    let mut reproduced = true;
    for (&s, &a) in cfg.seeds.iter().zip(&after) {
        let ck = bridgelab::nets::load_checkpoint(&run.dir.join("checkpoints").join(format!("stage1-seed{s}.ckpt"))).map_err(err)?;
        let sigma = bridgelab::pipeline::sigma_from_checkpoint(&ck).map_err(err)?;
        let r = lab.alignment(MappingOutput, Some(&sigma)).map_err(err)?;
        reproduced &= low_mean(&r.languages, &low) == a;
    }
    let r = lab.alignment(LlmEmbedding, None).map_err(err)?;
    reproduced &= low_mean(&r.languages, &low) == emb_low;
    let secs = t.elapsed().as_secs_f64();

    let fmt = |xs: &[f64]| xs.iter().map(|x| format!("{x:.3}")).collect::<Vec<_>>().join(", ");
    let pass = pool == 200
        && after.iter().all(|x| *x >= 0.80)
        && init.iter().all(|x| *x <= 0.10)
        && emb_low <= 0.10
        && reproduced
        && secs < 60.0;
    Ok((
        pass,
        format!(
            "pool {pool}; low-tier mapped R@1 after stage 1 [{}] (need ≥0.80), at σ-init [{}] (need ≤0.10), LLM-embedding {emb_low:.3} (need ≤0.10; σ-independent, so it holds at every stage); probes from checkpoints {secs:.1}s{}",
            fmt(&after),
            fmt(&init),
            if reproduced { "" } else { ", NOT reproduced from checkpoints" }
        ),
    ))
}

fn criterion_8(report: &SweepReport, run: &RunSummary, seeds: &[u64]) -> Verdict {
    let at = |v: &str, s: u64| -> Result<&MetricsRecord, String> {
        report.rows.iter().find(|r| r.value == v && r.seed == s).map(|r| &r.record).ok_or_else(|| format!("no row {v}/{s}"))
    };
    let (mut hi, mut lo, mut zero_ok) = (0, 0, true);
    let mut cells = Vec::new();
    for &s in seeds {
        let (z, h, k) = (lrl(at("0", s)?), lrl(at("100", s)?), lrl(at("1000", s)?));
        cells.push(format!("seed {s}: {z:.1}/{h:.1}/{k:.1}"));
        hi += usize::from(k >= h);
        lo += usize::from(h >= z);
        let mut zero = at("0", s)?.clone();
        let no_aug = find(&run.records, Variant::NoAugmentationStage, s)?;
        zero.variant = no_aug.variant.clone();
        zero_ok &= &zero == no_aug;
    }
    let n = seeds.len();
    let pass = hi * 3 >= 2 * n && lo * 3 >= 2 * n;
    Ok((
        pass,
        format!(
            "Lrl at 0/100/1000 [{}]; 1000≥100 in {hi}/{n}, 100≥0 in {lo}/{n}; size 0 {} no_augmentation_stage",
            cells.join("; "),
            if zero_ok { "reproduces" } else { "DIFFERS from" }
        ),
    ))
}

fn criterion_9(report: &SweepReport) -> Verdict {
    let values: Vec<&str> = report.table.lines().filter(|l| l.contains(",mean,")).map(|l| l.split(',').nth(1).unwrap_or("")).collect();
    let pass = values == ["linear", "mlp2", "mlp3"] && report.table.starts_with("axis,value,seed,Lrl,Hrl,Avg");
    let means: Vec<&str> = report.table.lines().filter(|l| l.contains(",mean,")).collect();
    Ok((pass, format!("table {}: {}", report.dir.join("sweep.csv").display(), means.join(" | "))))
}

fn smoke(out: &Path) -> ExperimentConfig {
    let lab = LabConfig::smoke();
    ExperimentConfig {
        seeds: vec![1, 2],
        out: out.to_path_buf(),
        world: lab.world,
        models: lab.models,
        training: lab.training,
        ..ExperimentConfig::default()
    }
}

fn metrics_files(dir: &Path) -> Result<BTreeMap<String, Vec<u8>>, String> {
    let mut out = BTreeMap::new();
    for e in std::fs::read_dir(dir.join("metrics")).map_err(err)? {
        let p = e.map_err(err)?.path();
        out.insert(p.file_name().unwrap().to_string_lossy().into_owned(), std::fs::read(&p).map_err(err)?);
    }
    Ok(out)
}

fn criterion_10(root: &Path, run: &RunSummary, cfg: &ExperimentConfig, cache: &Path) -> Verdict {
    let a = run_experiment(&smoke(&root.join("det-a")), None).map_err(err)?;
    let b = run_experiment(&smoke(&root.join("det-b")), None).map_err(err)?;
    let (fa, fb) = (metrics_files(&a.dir)?, metrics_files(&b.dir)?);
    let identical = !fa.is_empty() && fa == fb;

    let mut round_trips = 0;
    let mut mismatches = Vec::new();
    for r in run.records.iter().filter(|r| r.seed == cfg.seeds[0]) {
        let v = Variant::parse(&r.variant).map_err(err)?;
        if !VariantSpec::of(v).uses_bridge() {
            continue;
        }
        let ck = run.dir.join("checkpoints").join(format!("{}-seed{}.ckpt", r.variant, r.seed));
        let back = eval_only(cfg, &ck, v, r.seed, Some(cache)).map_err(err)?;
        round_trips += 1;
        if back.to_json() != r.to_json() {
            mismatches.push(r.variant.clone());
        }
    }
    let pass = identical && round_trips > 0 && mismatches.is_empty();
    Ok((
        pass,
        format!(
            "{} metrics files {} across independent runs; {round_trips} checkpoint round trips, {} mismatched",
            fa.len(),
            if identical { "byte-identical" } else { "DIFFER" },
            mismatches.len()
        ),
    ))
}

fn record(lines: &mut Vec<Line>, id: usize, name: &'static str, f: impl FnOnce() -> Verdict) {
    let t = Instant::now();
    let (pass, detail) = match f() {
        Ok(v) => v,
        Err(e) => (false, format!("error: {e}")),
    };
    let secs = t.elapsed().as_secs_f64();
    println!("criterion {id:>2} [{}] {name}: {detail} ({secs:.1}s)", if pass { "PASS" } else { "FAIL" });
    lines.push(Line { id, name, pass, secs });
}

fn main() {
    let root = PathBuf::from(env!("CARGO_TARGET_TMPDIR")).join("acceptance");
    let _ = std::fs::remove_dir_all(&root);
    let cache = root.join("cache");
    let cfg = ExperimentConfig { out: root.join("runs"), ..ExperimentConfig::default() };
    let seeds = cfg.seeds.clone();
    let mut lines = Vec::new();

    record(&mut lines, 1, "gradient fidelity", criterion_1);
    record(&mut lines, 3, "composition laws", criterion_3);
    record(&mut lines, 4, "oracle agreement", criterion_4);

    let cpu0 = cpu_seconds();
    let wall = Instant::now();
    let run = run_experiment(&cfg, Some(&cache));
    let minutes = match (cpu0, cpu_seconds()) {
        (Some(a), Some(b)) => (b - a) / 60.0,
        _ => wall.elapsed().as_secs_f64() / 60.0,
    };
    match &run {
        Ok(run) => {
            for r in &run.records {
                println!(
                    "  {:<24} seed {} Lrl {:>6.2} Hrl {:>6.2} Avg {:>6.2}",
                    r.variant,
                    r.seed,
                    lrl(r),
                    r.hrl.unwrap_or(f64::NAN),
                    r.avg.unwrap_or(f64::NAN)
                );
            }
            record(&mut lines, 2, "freezing exactness", || criterion_2(run));
            record(&mut lines, 5, "directional main result", || criterion_5(run, &seeds, minutes));
            record(&mut lines, 6, "ablation ordering", || criterion_6(run, &seeds));
            record(&mut lines, 7, "alignment reproduction", || criterion_7(run, &cfg, &cache));
            let sizes = ["0", "100", "1000"].map(String::from);
            record(&mut lines, 8, "data-size sweep trend", || {
                let report = sweep(&cfg, SweepAxis::Stage2Size, &sizes, Some(&cache)).map_err(err)?;
                print!("{}", report.table);
                criterion_8(&report, run, &seeds)
            });
            record(&mut lines, 9, "mapping-variant sweep", || {
                let one = ExperimentConfig { seeds: vec![seeds[0]], ..cfg.clone() };
                let values = ["linear", "mlp2", "mlp3"].map(String::from);
                let report = sweep(&one, SweepAxis::MappingVariant, &values, Some(&cache)).map_err(err)?;
                print!("{}", report.table);
                criterion_9(&report)
            });
            record(&mut lines, 10, "determinism and persistence", || criterion_10(&root, run, &cfg, &cache));
        }
        Err(e) => {
            for (id, name) in [
                (2, "freezing exactness"),
                (5, "directional main result"),
                (6, "ablation ordering"),
                (7, "alignment reproduction"),
                (8, "data-size sweep trend"),
                (9, "mapping-variant sweep"),
                (10, "determinism and persistence"),
            ] {
                record(&mut lines, id, name, || Err(format!("main run failed: {e}")));
            }
        }
    }

    lines.sort_by_key(|l| l.id);
    let passed = lines.iter().filter(|l| l.pass).count();
    println!("\nacceptance summary: {passed}/{} criteria pass", lines.len());
    for l in &lines {
        println!("  {:>2} {} {} ({:.1}s)", l.id, if l.pass { "PASS" } else { "FAIL" }, l.name, l.secs);
    }
    if std::env::var("ACCEPTANCE_STRICT").is_ok_and(|v| v == "1") && passed < lines.len() {
        std::process::exit(1);
    }
}
