//! World configuration, corpus construction and the line-delimited format.

use std::collections::{BTreeMap, HashSet};
use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::bilingual::gen_sentence;
use super::lang::{make_language, SynthLanguage, Tier};
use super::tasks::{gen_compare_example, gen_math_example, math_shape, CompareConfig, TaskExample, TaskKind};
use super::vocab::{invariant_tokens, Vocab};
use super::SynthError;
use crate::tensorcore::RngStream;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LanguageSpec {
    pub code: String,
    pub tier: Tier,
}

/// Sizes of every generated set.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Quotas {
    /// Plain English sentences in the LM pretraining corpus.
    pub lm_english: usize,
    /// High-tier plain sentences per high-tier language, as a fraction of `lm_english`.
    pub lm_high_fraction: f64,
    /// `high | english` translation documents per high-tier language.
    pub lm_translation: usize,
    /// `english | english` echo documents.
    pub lm_echo: usize,
    /// Arithmetic statement documents (`a op b = c`).
    pub lm_arithmetic: usize,
    pub english_task: usize,
    /// Encoder translation pairs per language (English included as echo).
    pub encoder_pairs: usize,
    /// Mapping-stage bilingual pairs per non-English language.
    pub mapping_pairs: usize,
    /// Query-translation task examples per language.
    pub stage2: usize,
    /// Evaluation examples per language.
    pub eval: usize,
    /// Parallel sentences in the alignment pool.
    pub pool: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TaskMix {
    pub math_fraction: f64,
    pub difficulty: u8,
    pub compare: CompareConfig,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WorldConfig {
    pub seed: u64,
    pub languages: Vec<LanguageSpec>,
    pub quotas: Quotas,
    pub tasks: TaskMix,
}

impl Default for WorldConfig {
    fn default() -> Self {
        let lang = |code: &str, tier| LanguageSpec { code: code.into(), tier };
        Self {
            seed: 7,
            languages: vec![
                lang("en", Tier::English),
                lang("h1", Tier::High),
                lang("h2", Tier::High),
                lang("h3", Tier::High),
                lang("l1", Tier::Low),
                lang("l2", Tier::Low),
                lang("l3", Tier::Low),
            ],
            quotas: Quotas {
                lm_english: 6000,
                lm_high_fraction: 0.1,
                lm_translation: 600,
                lm_echo: 1000,
                lm_arithmetic: 3000,
                english_task: 6000,
                encoder_pairs: 1500,
                mapping_pairs: 1000,
                stage2: 1000,
                eval: 100,
                pool: 200,
            },
            tasks: TaskMix { math_fraction: 0.6, difficulty: 1, compare: CompareConfig::default() },
        }
    }
}

impl WorldConfig {
    pub fn validate(&self) -> Result<(), SynthError> {
        let err = |m: String| Err(SynthError::Config(m));
        let english: Vec<_> = self.languages.iter().filter(|l| l.tier == Tier::English).collect();
        if english.len() != 1 {
            return err(format!("exactly one english language required, found {}", english.len()));
        }
        let mut seen = HashSet::new();
        for l in &self.languages {
            if l.code.is_empty() || !l.code.chars().all(|c| c.is_ascii_alphanumeric()) {
                return err(format!("language code {:?} must be nonempty ascii alphanumeric", l.code));
            }
            if !seen.insert(&l.code) {
                return err(format!("duplicate language code {}", l.code));
            }
        }
        if !(0.0..=1.0).contains(&self.quotas.lm_high_fraction) {
            return err("quotas.lm_high_fraction must lie in [0, 1]".into());
        }
        if !(0.0..=1.0).contains(&self.tasks.math_fraction) {
            return err("tasks.math_fraction must lie in [0, 1]".into());
        }
        if self.quotas.eval == 0 || self.quotas.pool == 0 {
            return err("quotas.eval and quotas.pool must be positive".into());
        }
        math_shape(self.tasks.difficulty)?;
        self.tasks.compare.validate()
    }

    pub fn english_code(&self) -> &str {
        &self.languages.iter().find(|l| l.tier == Tier::English).expect("validated").code
    }
}

/// Languages and the two vocabularies derived from a config.
#[derive(Clone, Debug)]
pub struct World {
    pub config: WorldConfig,
    pub languages: Vec<SynthLanguage>,
    pub enc_vocab: Vocab,
    pub lm_vocab: Vocab,
}

impl World {
    pub fn new(config: &WorldConfig) -> Result<Self, SynthError> {
        config.validate()?;
        let root = RngStream::new(config.seed);
        let languages: Vec<SynthLanguage> = config
            .languages
            .iter()
            .map(|l| make_language(&l.code, root.fork("lang").fork(&l.code).next_u64(), l.tier))
            .collect();
        let mut enc_vocab = Vocab::new();
        let mut lm_vocab = Vocab::new();
        for t in invariant_tokens() {
            enc_vocab.push(t);
            lm_vocab.push(t);
        }
        for lang in &languages {
            for s in lang.surfaces() {
                enc_vocab.push(&s);
                if lang.tier != Tier::Low {
                    lm_vocab.push(&s);
                }
            }
        }
        Ok(Self { config: config.clone(), languages, enc_vocab, lm_vocab })
    }

    pub fn language(&self, code: &str) -> Result<&SynthLanguage, SynthError> {
        self.languages.iter().find(|l| l.code == code).ok_or_else(|| SynthError::UnknownLanguage(code.to_string()))
    }

    pub fn english(&self) -> &SynthLanguage {
        self.languages.iter().find(|l| l.is_english()).expect("validated world has english")
    }

    pub fn codes(&self) -> Vec<String> {
        self.languages.iter().map(|l| l.code.clone()).collect()
    }

    pub fn low_codes(&self) -> Vec<String> {
        self.languages.iter().filter(|l| l.tier == Tier::Low).map(|l| l.code.clone()).collect()
    }

    /// Ids of `tokens` for the encoder. Every surface form is covered.
    pub fn enc_ids<S: AsRef<str>>(&self, tokens: &[S]) -> Result<Vec<usize>, SynthError> {
        self.enc_vocab.encode(tokens).map_err(SynthError::UnknownToken)
    }

    /// Ids of `tokens` for the LM; unknown surface forms become `UNK`.
    pub fn lm_ids<S: AsRef<str>>(&self, tokens: &[S]) -> Vec<usize> {
        self.lm_vocab.encode_lossy(tokens)
    }
}

/// A raw LM pretraining document.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TextDoc {
    pub lang: String,
    pub tokens: Vec<String>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct CorpusBundle {
    pub lm_pretrain: Vec<TextDoc>,
    /// `L -> English` pairs for every language.
    pub encoder_pairs: BTreeMap<String, Vec<TaskExample>>,
    pub english_task: Vec<TaskExample>,
    /// Mapping-stage bilingual pairs for non-English languages.
    pub mapping_pairs: BTreeMap<String, Vec<TaskExample>>,
    /// Query-translation task sets per language.
    pub stage2: BTreeMap<String, Vec<TaskExample>>,
    pub eval: BTreeMap<String, Vec<TaskExample>>,
    /// English sentences of the parallel alignment pool.
    pub pool: Vec<Vec<String>>,
}

const MAX_ATTEMPTS: usize = 1000;

/// Share of encoder pretraining pairs that translate task queries rather than
/// general sentences; the mapping stage sees general sentences only.
const ENCODER_QUERY_SHARE: f64 = 0.5;

fn key(tokens: &[String]) -> String {
    tokens.join(" ")
}

struct Gen<'a> {
    world: &'a World,
    root: RngStream,
    reserved: HashSet<String>,
}

impl Gen<'_> {
    fn task_en(&self, rng: &mut RngStream) -> Result<TaskExample, SynthError> {
        let t = &self.world.config.tasks;
        if rng.bernoulli(t.math_fraction) {
            gen_math_example(rng, t.difficulty)
        } else {
            gen_compare_example(rng, &t.compare)
        }
    }

    /// Draws example `i` of a set, rejecting reserved English sources.
    fn draw<T>(
        &self,
        set: &str,
        lang: &str,
        i: usize,
        mut make: impl FnMut(&mut RngStream) -> Result<(Vec<String>, T), SynthError>,
    ) -> Result<(Vec<String>, T), SynthError> {
        for attempt in 0..MAX_ATTEMPTS {
            let mut rng = self.root.fork(&format!("{set}/{lang}/{i}/{attempt}"));
            let (en, out) = make(&mut rng)?;
            if !self.reserved.contains(&key(&en)) {
                return Ok((en, out));
            }
        }
        Err(SynthError::QuotaExceeded { set: set.to_string(), lang: lang.to_string() })
    }

    fn task_set(&self, set: &str, lang: &SynthLanguage, n: usize) -> Result<Vec<TaskExample>, SynthError> {
        (0..n)
            .map(|i| {
                let (_, ex) = self.draw(set, &lang.code, i, |rng| {
                    let en = self.task_en(rng)?;
                    Ok((en.source.clone(), en))
                })?;
                localize(&ex, lang)
            })
            .collect()
    }

    /// Translation pairs; `query_share` of them translate task queries.
    fn pair_set(&self, set: &str, lang: &SynthLanguage, n: usize, query_share: f64) -> Result<Vec<TaskExample>, SynthError> {
        (0..n)
            .map(|i| {
                let (en, _) = self.draw(set, &lang.code, i, |rng| {
                    let en = if rng.bernoulli(query_share) { self.task_en(rng)?.source } else { gen_sentence(rng) };
                    Ok((en, ()))
                })?;
                translation_example(lang, &en)
            })
            .collect()
    }
}

/// The English task example re-expressed with its query in `lang`.
pub fn localize(ex: &TaskExample, lang: &SynthLanguage) -> Result<TaskExample, SynthError> {
    Ok(TaskExample { lang: lang.code.clone(), source: lang.render(&ex.source)?, ..ex.clone() })
}

pub fn translation_example(lang: &SynthLanguage, en: &[String]) -> Result<TaskExample, SynthError> {
    Ok(TaskExample {
        lang: lang.code.clone(),
        kind: TaskKind::Translate,
        source: lang.render(en)?,
        target: en.to_vec(),
        answer: key(en),
    })
}

fn arithmetic_doc(rng: &mut RngStream, difficulty: u8) -> Result<Vec<String>, SynthError> {
    let ex = gen_math_example(rng, difficulty)?;
    let marker = ex.target.iter().position(|t| t == "####").unwrap_or(ex.target.len());
    Ok(ex.target[..marker].to_vec())
}

/// Every corpus of the lab; a pure function of the config.
pub fn build_corpora(world: &World) -> Result<CorpusBundle, SynthError> {
    let cfg = &world.config;
    let q = &cfg.quotas;
    let root = RngStream::new(cfg.seed).fork("corpora");
    let mut gen = Gen { world, root: root.clone(), reserved: HashSet::new() };
    let english = world.english();

    // Held-out material first; every training set rejects its English sources.
    let pool: Vec<Vec<String>> = {
        let mut seen = HashSet::new();
        let mut out = Vec::new();
        for i in 0..q.pool {
            let (en, _) = gen.draw("pool", "all", i, |rng| Ok((gen_sentence(rng), ())))?;
            if seen.insert(key(&en)) {
                out.push(en);
            } else {
                let (en, _) = gen.draw("pool-retry", "all", i, |rng| Ok((gen_sentence(rng), ())))?;
                if !seen.insert(key(&en)) {
                    return Err(SynthError::QuotaExceeded { set: "pool".into(), lang: "all".into() });
                }
                out.push(en);
            }
        }
        out
    };
    let mut eval = BTreeMap::new();
    for lang in &world.languages {
        eval.insert(lang.code.clone(), gen.task_set("eval", lang, q.eval)?);
    }
    for e in eval.values().flatten() {
        gen.reserved.insert(key(&english_source(world, e)?));
    }
    gen.reserved.extend(pool.iter().map(|s| key(s)));

    let mut lm_pretrain = Vec::new();
    for i in 0..q.lm_english {
        let (en, _) = gen.draw("lm-en", &english.code, i, |rng| Ok((gen_sentence(rng), ())))?;
        lm_pretrain.push(TextDoc { lang: english.code.clone(), tokens: en });
    }
    let n_high = (q.lm_english as f64 * q.lm_high_fraction).round() as usize;
    for lang in world.languages.iter().filter(|l| l.tier == Tier::High) {
        for i in 0..n_high {
            let (en, _) = gen.draw("lm-high", &lang.code, i, |rng| Ok((gen_sentence(rng), ())))?;
            lm_pretrain.push(TextDoc { lang: lang.code.clone(), tokens: lang.render(&en)? });
        }
        for i in 0..q.lm_translation {
            let (en, _) = gen.draw("lm-translation", &lang.code, i, |rng| Ok((gen_sentence(rng), ())))?;
            let mut doc = lang.render(&en)?;
            doc.push("|".into());
            doc.extend(en);
            lm_pretrain.push(TextDoc { lang: lang.code.clone(), tokens: doc });
        }
    }
    for i in 0..q.lm_echo {
        let (en, _) = gen.draw("lm-echo", &english.code, i, |rng| Ok((gen_sentence(rng), ())))?;
        let mut doc = en.clone();
        doc.push("|".into());
        doc.extend(en);
        lm_pretrain.push(TextDoc { lang: english.code.clone(), tokens: doc });
    }
    for i in 0..q.lm_arithmetic {
        let mut rng = root.fork(&format!("lm-arith/{i}"));
        lm_pretrain.push(TextDoc { lang: english.code.clone(), tokens: arithmetic_doc(&mut rng, cfg.tasks.difficulty)? });
    }

    let english_task = gen.task_set("english-task", english, q.english_task)?;
    let mut encoder_pairs = BTreeMap::new();
    let mut mapping_pairs = BTreeMap::new();
    let mut stage2 = BTreeMap::new();
    for lang in &world.languages {
        encoder_pairs.insert(lang.code.clone(), gen.pair_set("encoder", lang, q.encoder_pairs, ENCODER_QUERY_SHARE)?);
        if !lang.is_english() {
            mapping_pairs.insert(lang.code.clone(), gen.pair_set("mapping", lang, q.mapping_pairs, 0.0)?);
        }
        stage2.insert(lang.code.clone(), gen.task_set("stage2", lang, q.stage2)?);
    }
    Ok(CorpusBundle { lm_pretrain, encoder_pairs, english_task, mapping_pairs, stage2, eval, pool })
}

/// The English rendering of an example's query.
pub fn english_source(world: &World, ex: &TaskExample) -> Result<Vec<String>, SynthError> {
    world.language(&ex.lang)?.inverse_render(&ex.source)
}

impl CorpusBundle {
    /// Every training example's English source, for disjointness checks.
    pub fn training_sources(&self, world: &World) -> Result<HashSet<String>, SynthError> {
        let mut out = HashSet::new();
        for d in &self.lm_pretrain {
            let lang = world.language(&d.lang)?;
            // Translation and echo documents hold two sentences; one may be English.
            for part in d.tokens.split(|t| t == "|") {
                let en = lang.inverse_render(part).or_else(|_| world.english().inverse_render(part))?;
                out.insert(key(&en));
            }
        }
        let sets = [&self.encoder_pairs, &self.mapping_pairs, &self.stage2];
        for ex in self.english_task.iter().chain(sets.iter().flat_map(|m| m.values().flatten())) {
            out.insert(key(&english_source(world, ex)?));
        }
        Ok(out)
    }

    /// Writes one `.tsv` file per corpus plus `manifest.json`.
    pub fn write(&self, world: &World, dir: &Path) -> Result<(), SynthError> {
        std::fs::create_dir_all(dir).map_err(|e| SynthError::Io(dir.display().to_string(), e))?;
        let write = |name: &str, body: String| {
            let p = dir.join(name);
            std::fs::write(&p, body).map_err(|e| SynthError::Io(p.display().to_string(), e))
        };
        let mut lm = String::new();
        for d in &self.lm_pretrain {
            writeln!(lm, "{}\ttext\t{}\t", d.lang, d.tokens.join(" ")).expect("string write");
        }
        write("lm_pretrain.tsv", lm)?;
        write("english_task.tsv", format_examples(&self.english_task))?;
        for (name, set) in [("encoder_pairs", &self.encoder_pairs), ("mapping_pairs", &self.mapping_pairs), ("stage2", &self.stage2), ("eval", &self.eval)] {
            let all: Vec<TaskExample> = set.values().flatten().cloned().collect();
            write(&format!("{name}.tsv"), format_examples(&all))?;
        }
        let pool: String = self.pool.iter().map(|s| format!("{}\n", s.join(" "))).collect();
        write("pool.txt", pool)?;
        let counts = |m: &BTreeMap<String, Vec<TaskExample>>| -> BTreeMap<String, usize> {
            m.iter().map(|(k, v)| (k.clone(), v.len())).collect()
        };
        let manifest = serde_json::json!({
            "format": "lang<TAB>kind<TAB>source tokens<TAB>target tokens",
            "world_seed": world.config.seed,
            "config": world.config,
            "counts": {
                "lm_pretrain": self.lm_pretrain.len(),
                "english_task": self.english_task.len(),
                "encoder_pairs": counts(&self.encoder_pairs),
                "mapping_pairs": counts(&self.mapping_pairs),
                "stage2": counts(&self.stage2),
                "eval": counts(&self.eval),
                "pool": self.pool.len(),
            },
        });
        write("manifest.json", serde_json::to_string_pretty(&manifest).expect("json") + "\n")
    }
}

/// `lang \t kind \t source \t target`, one example per line.
pub fn format_examples(examples: &[TaskExample]) -> String {
    let mut out = String::new();
    for e in examples {
        writeln!(out, "{}\t{}\t{}\t{}", e.lang, e.kind, e.source.join(" "), e.target.join(" ")).expect("string write");
    }
    out
}

/// Inverse of [`format_examples`]; answers are re-derived from targets.
pub fn parse_examples(text: &str) -> Result<Vec<TaskExample>, SynthError> {
    text.lines()
        .enumerate()
        .map(|(n, line)| {
            let f: Vec<&str> = line.split('\t').collect();
            let bad = || SynthError::Parse(format!("line {}: {line:?}", n + 1));
            if f.len() != 4 {
                return Err(bad());
            }
            let kind = TaskKind::parse(f[1]).ok_or_else(bad)?;
            let split = |s: &str| s.split(' ').filter(|t| !t.is_empty()).map(String::from).collect::<Vec<_>>();
            let target = split(f[3]);
            let answer = match kind {
                TaskKind::Translate => target.join(" "),
                _ => super::extract_for_kind(kind, &target.join(" ")).ok_or_else(bad)?,
            };
            Ok(TaskExample { lang: f[0].to_string(), kind, source: split(f[2]), target, answer })
        })
        .collect()
}
