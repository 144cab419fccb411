//! Base models, per-seed bridge runs and variant evaluation.

use std::collections::{BTreeMap, BTreeSet};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::config::{InputMode, ModelConfig, StageConfig, TrainingConfig, Variant, VariantSpec};
use super::data::{self, BridgeItem, LmItem};
use super::eval::{self, PoolSet};
use super::train::{self, BridgeStageReport, TrainLog};
use super::PipelineError;
use crate::evalkit::{aggregate_groups, score_language, AlignmentReport, MetricsRecord, ProbeLocation, TranslationScore};
use crate::nets::{
    composed_loss, load_checkpoint, save_checkpoint, BridgeParams, Checkpoint, EncoderParams, LmParams, MappingVariant,
    Prefix, Provenance, TrainItem, TransformerDims, Translator,
};
use crate::synthlang::{build_corpora, chance_accuracy, CorpusBundle, Quotas, TaskExample, World, WorldConfig};
use crate::tensorcore::{Graph, ParamStore, RngStream};

/// Bumped whenever training code changes what a fingerprint produces.
const CODE_VERSION: u32 = 4;

/// Everything that determines the trained models.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
#[derive(Default)]
pub struct LabConfig {
    pub world: WorldConfig,
    pub models: ModelConfig,
    pub training: TrainingConfig,
}


impl LabConfig {
    /// A lab small enough to train end to end in seconds.
    pub fn smoke() -> Self {
        let mut cfg = Self::default();
        cfg.world.quotas = Quotas {
            lm_english: 200,
            lm_high_fraction: 0.1,
            lm_translation: 30,
            lm_echo: 30,
            lm_arithmetic: 30,
            english_task: 120,
            encoder_pairs: 40,
            mapping_pairs: 40,
            stage2: 24,
            eval: 12,
            pool: 16,
        };
        let dims = TransformerDims { d_model: 16, layers: 1, heads: 2, ff_mult: 2, max_positions: 128 };
        cfg.models = ModelConfig { encoder: dims.clone(), lm: dims.clone(), translator: dims, mapping: MappingVariant::Mlp2 };
        let t = &mut cfg.training;
        for s in [
            &mut t.lm_pretrain,
            &mut t.task_finetune,
            &mut t.encoder_pretrain,
            &mut t.mapping,
            &mut t.augmentation,
            &mut t.multireason_sft,
        ] {
            s.epochs = 1;
        }
        cfg
    }

    pub fn validate(&self) -> Result<(), PipelineError> {
        self.world.validate()?;
        self.models.validate()?;
        self.training.validate()
    }

    /// Fingerprint of the inputs of the base models (LM pretraining and
    /// fine-tune, encoder pretraining). Bridge-stage settings do not enter.
    pub fn base_fingerprint(&self) -> String {
        let w = &self.world;
        let q = &w.quotas;
        let t = &self.training;
        let m = &self.models;
        fingerprint(&serde_json::json!({
            "code": CODE_VERSION,
            "world": {
                "seed": w.seed,
                "languages": w.languages,
                "tasks": w.tasks,
                "quotas": [q.lm_english, q.lm_translation, q.lm_echo, q.lm_arithmetic, q.english_task,
                           q.encoder_pairs, q.eval, q.pool],
                "lm_high_fraction": q.lm_high_fraction,
            },
            "models": { "encoder": m.encoder, "lm": m.lm, "translator": m.translator },
            "training": {
                "lm_pretrain": t.lm_pretrain,
                "task_finetune": t.task_finetune,
                "prefix_fraction": t.finetune_prefix_fraction,
                "rehearsal": t.finetune_rehearsal,
                "encoder_pretrain": t.encoder_pretrain,
            },
        }))
    }
}

/// SHA-256 of the canonical (key-sorted, compact) JSON of `value`.
pub fn fingerprint<S: Serialize>(value: &S) -> String {
    let v = serde_json::to_value(value).expect("fingerprint input serializes");
    let bytes = serde_json::to_vec(&v).expect("json value serializes");
    Sha256::digest(&bytes).iter().map(|b| format!("{b:02x}")).collect()
}

/// Diagnostics recorded while the base models are built.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BaseReport {
    pub lm_ppl_initial: f64,
    pub lm_ppl_final: f64,
    pub lm_ppl_english_text: f64,
    pub lm_ppl_low_text: f64,
    pub finetune_loss_first: f64,
    pub finetune_loss_last: f64,
    pub english_accuracy_before_finetune: f64,
    pub english_accuracy_after_finetune: f64,
    pub encoder_cosine_init: f64,
    pub encoder_cosine_trained: f64,
    pub translator_exact_match: f64,
}

#[derive(Clone, Debug)]
pub struct BaseModels {
    pub fingerprint: String,
    /// φ after pretraining, before the task fine-tune.
    pub lm_pretrained: LmParams,
    /// The task-tuned, frozen φ every bridge variant builds on.
    pub lm: LmParams,
    pub encoder: EncoderParams,
    pub translator: Translator,
    pub report: BaseReport,
    pub log: TrainLog,
}

fn dims_meta(dims: &TransformerDims, vocab: usize) -> serde_json::Value {
    serde_json::json!({ "dims": dims, "vocab": vocab })
}

fn meta_dims(ck: &Checkpoint) -> Result<(TransformerDims, usize), PipelineError> {
    let dims = serde_json::from_value(ck.meta["dims"].clone())
        .map_err(|e| PipelineError::Cache(format!("checkpoint meta dims: {e}")))?;
    let vocab = ck.meta["vocab"].as_u64().ok_or_else(|| PipelineError::Cache("checkpoint meta vocab".into()))?;
    Ok((dims, vocab as usize))
}

fn stage_provenance(base_fp: &str, stages: &[&str]) -> Vec<Provenance> {
    stages
        .iter()
        .map(|s| Provenance { stage: s.to_string(), fingerprint: fingerprint(&(base_fp, s)) })
        .collect()
}

/// Mean per-token NLL of plain items under φ.
pub fn mean_nll(lm: &LmParams, items: &[LmItem]) -> Result<f64, PipelineError> {
    let mut total = 0.0;
    let mut count = 0usize;
    for chunk in items.chunks(64) {
        let train: Vec<TrainItem> = chunk
            .iter()
            .map(|it| TrainItem { prefix: Prefix { mapped: None, native: &it.native }, target: &it.target })
            .collect();
        let n: usize = chunk.iter().map(|it| it.target.len()).sum();
        let mut g = Graph::inference();
        let loss = composed_loss(&mut g, lm, None, &train)?;
        total += g.scalar(loss) as f64 * n as f64;
        count += n;
    }
    Ok(total / count.max(1) as f64)
}

/// Percent of examples whose decoded answer matches, for plain inputs.
fn plain_accuracy(world: &World, lm: &LmParams, examples: &[TaskExample]) -> Result<f64, PipelineError> {
    let items: Vec<BridgeItem> = data::plain_task_items(world, examples)
        .into_iter()
        .map(|it| BridgeItem { x: crate::tensorcore::Tensor::zeros(vec![1, 1]), native: it.native, target: it.target })
        .collect();
    let decoded = eval::decode_items(world, lm, None, &items, InputMode::Plain)?;
    let strings: Vec<String> = decoded.iter().map(|t| t.join(" ")).collect();
    Ok(score_language("", examples, &strings)?.accuracy)
}

impl BaseModels {
    fn cache_dir(root: &Path, fp: &str) -> PathBuf {
        root.join(format!("base-{}", &fp[..16]))
    }

    /// Loads the base models from `cache` when present, else trains and
    /// (with a cache) stores them.
    pub fn obtain(
        cfg: &LabConfig,
        world: &World,
        bundle: &CorpusBundle,
        cache: Option<&Path>,
    ) -> Result<Self, PipelineError> {
        let fp = cfg.base_fingerprint();
        if let Some(root) = cache {
            let dir = Self::cache_dir(root, &fp);
            if dir.join("base.json").exists() {
                return Self::load(&dir, &fp);
            }
        }
        let base = Self::train(cfg, world, bundle, fp)?;
        if let Some(root) = cache {
            base.save(&Self::cache_dir(root, &base.fingerprint))?;
        }
        Ok(base)
    }

    pub fn train(cfg: &LabConfig, world: &World, bundle: &CorpusBundle, fp: String) -> Result<Self, PipelineError> {
        let t = &cfg.training;
        let root = RngStream::new(cfg.world.seed).fork("base");
        let mut log = TrainLog::default();

        let lm_items = data::lm_pretrain_items(world, &bundle.lm_pretrain);
        let lm0 = LmParams::init(cfg.models.lm.clone(), world.lm_vocab.len(), &mut root.fork("lm-init"))?;
        let lm_ppl_initial = mean_nll(&lm0, &lm_items[..lm_items.len().min(512)])?.exp();
        let lm_pretrained = train::pretrain_lm(lm0, &lm_items, &t.lm_pretrain, &mut stage_rng(&root, &t.lm_pretrain), &mut log)?;
        let lm_ppl_final = mean_nll(&lm_pretrained, &lm_items[..lm_items.len().min(512)])?.exp();

        let english = world.english();
        let low = world.low_codes();
        let pool_docs = |code: &str| -> Result<Vec<LmItem>, PipelineError> {
            let lang = world.language(code)?;
            let docs = bundle
                .pool
                .iter()
                .map(|s| Ok(crate::synthlang::TextDoc { lang: code.to_string(), tokens: lang.render(s)? }))
                .collect::<Result<Vec<_>, PipelineError>>()?;
            Ok(data::lm_pretrain_items(world, &docs))
        };
        let lm_ppl_english_text = mean_nll(&lm_pretrained, &pool_docs(&english.code)?)?.exp();
        let mut low_nll = 0.0;
        for code in &low {
            low_nll += mean_nll(&lm_pretrained, &pool_docs(code)?)?;
        }
        let lm_ppl_low_text = (low_nll / low.len().max(1) as f64).exp();

        let en_eval = &bundle.eval[&english.code];
        let english_accuracy_before_finetune = plain_accuracy(world, &lm_pretrained, en_eval)?;
        let mut ft_rng = stage_rng(&root, &t.task_finetune);
        let mut ft_items = data::finetune_items(world, &bundle.english_task, t.finetune_prefix_fraction, &mut ft_rng.fork("format"));
        ft_items.extend(data::rehearsal_items(world, &bundle.lm_pretrain, t.finetune_rehearsal, &mut ft_rng.fork("rehearsal")));
        let mut ft_log = TrainLog::default();
        let lm = train::finetune_lm("task-finetune", lm_pretrained.clone(), &ft_items, &t.task_finetune, &mut ft_rng, &mut ft_log)?;
        let ft_epochs = ft_log.epoch_means("task-finetune");
        let ft_steps = ft_log.stage("task-finetune");
        let head = ft_steps.len().clamp(1, 20);
        let finetune_loss_first = ft_steps[..head].iter().map(|&x| x as f64).sum::<f64>() / head as f64;
        let finetune_loss_last = *ft_epochs.last().unwrap_or(&f64::NAN);
        log.extend(ft_log);
        let english_accuracy_after_finetune = plain_accuracy(world, &lm, en_eval)?;

        let pairs: Vec<TaskExample> = bundle.encoder_pairs.values().flatten().cloned().collect();
        let enc_pairs = data::encoder_pairs(world, &pairs)?;
        let enc0 = EncoderParams::init(cfg.models.encoder.clone(), world.enc_vocab.len(), &mut root.fork("enc-init"))?;
        let dec0 = Translator::init(cfg.models.translator.clone(), world.enc_vocab.len(), &mut root.fork("dec-init"))?;
        let probe = probe_pairs(world, bundle)?;
        let encoder_cosine_init = encoder_pair_cosine(world, &enc0, &probe)?;
        let (encoder, translator) =
            train::pretrain_encoder(enc0, dec0, &enc_pairs, &t.encoder_pretrain, &mut stage_rng(&root, &t.encoder_pretrain), &mut log)?;
        let encoder_cosine_trained = encoder_pair_cosine(world, &encoder, &probe)?;
        let translator_exact_match = translator_em(world, &encoder, &translator, &probe)?;

        let report = BaseReport {
            lm_ppl_initial,
            lm_ppl_final,
            lm_ppl_english_text,
            lm_ppl_low_text,
            finetune_loss_first,
            finetune_loss_last,
            english_accuracy_before_finetune,
            english_accuracy_after_finetune,
            encoder_cosine_init,
            encoder_cosine_trained,
            translator_exact_match,
        };
        Ok(Self { fingerprint: fp, lm_pretrained, lm, encoder, translator, report, log })
    }

    fn checkpoints(&self) -> Vec<(&'static str, Checkpoint)> {
        let fp = &self.fingerprint;
        let mk = |kind: &str, stages: &[&str], store: &ParamStore, meta| {
            let prov = stage_provenance(fp, stages);
            let mut ck = Checkpoint::new(kind, prov.last().expect("stage").fingerprint.clone(), store.clone());
            ck.provenance = prov;
            ck.meta = meta;
            ck
        };
        vec![
            ("lm_pretrain.ckpt", mk("lm", &["lm-pretrain"], &self.lm_pretrained.store, dims_meta(&self.lm.dims, self.lm.vocab))),
            ("lm.ckpt", mk("lm", &["lm-pretrain", "task-finetune"], &self.lm.store, dims_meta(&self.lm.dims, self.lm.vocab))),
            (
                "encoder.ckpt",
                mk("encoder", &["encoder-pretrain"], &self.encoder.store, dims_meta(&self.encoder.dims, self.encoder.vocab)),
            ),
            (
                "translator.ckpt",
                mk("translator", &["encoder-pretrain"], &self.translator.store, dims_meta(&self.translator.dims, self.translator.vocab)),
            ),
        ]
    }

    /// Provenance of the frozen LM every bridge run builds on.
    pub fn lm_provenance(&self) -> Vec<Provenance> {
        stage_provenance(&self.fingerprint, &["lm-pretrain", "task-finetune", "encoder-pretrain"])
    }

    pub fn save(&self, dir: &Path) -> Result<(), PipelineError> {
        std::fs::create_dir_all(dir).map_err(|e| PipelineError::io(dir, e))?;
        for (name, ck) in self.checkpoints() {
            save_checkpoint(&dir.join(name), &ck)?;
        }
        let p = dir.join("train_log.jsonl");
        std::fs::write(&p, self.log.to_jsonl()).map_err(|e| PipelineError::io(&p, e))?;
        let body = serde_json::to_string_pretty(&serde_json::json!({ "fingerprint": self.fingerprint, "report": self.report }))
            .expect("report serializes");
        let p = dir.join("base.json");
        std::fs::write(&p, body + "\n").map_err(|e| PipelineError::io(&p, e))
    }

    pub fn load(dir: &Path, fp: &str) -> Result<Self, PipelineError> {
        let p = dir.join("base.json");
        let text = std::fs::read_to_string(&p).map_err(|e| PipelineError::io(&p, e))?;
        let v: serde_json::Value = serde_json::from_str(&text).map_err(|e| PipelineError::Cache(e.to_string()))?;
        if v["fingerprint"] != fp {
            return Err(PipelineError::Cache(format!("{} holds fingerprint {}, expected {fp}", dir.display(), v["fingerprint"])));
        }
        let report = serde_json::from_value(v["report"].clone()).map_err(|e| PipelineError::Cache(e.to_string()))?;
        let load = |name: &str| -> Result<(Checkpoint, TransformerDims, usize), PipelineError> {
            let ck = load_checkpoint(&dir.join(name))?;
            let (dims, vocab) = meta_dims(&ck)?;
            Ok((ck, dims, vocab))
        };
        let (c, dims, vocab) = load("lm_pretrain.ckpt")?;
        let lm_pretrained = LmParams { dims, vocab, store: c.params };
        let (c, dims, vocab) = load("lm.ckpt")?;
        let lm = LmParams { dims, vocab, store: c.params };
        let (c, dims, vocab) = load("encoder.ckpt")?;
        let encoder = EncoderParams { dims, vocab, store: c.params };
        let (c, dims, vocab) = load("translator.ckpt")?;
        let translator = Translator { dims, vocab, store: c.params };
        Ok(Self { fingerprint: fp.to_string(), lm_pretrained, lm, encoder, translator, report, log: TrainLog::default() })
    }
}

fn stage_rng(root: &RngStream, cfg: &StageConfig) -> RngStream {
    root.fork(cfg.kind.name()).fork_index("seed", cfg.seed)
}

/// Held-out parallel pool sentences `(lang sentence, English sentence)` for
/// every non-English language.
fn probe_pairs(world: &World, bundle: &CorpusBundle) -> Result<Vec<(Vec<String>, Vec<String>)>, PipelineError> {
    let mut out = Vec::new();
    for lang in world.languages.iter().filter(|l| !l.is_english()) {
        for s in bundle.pool.iter().take(50) {
            out.push((lang.render(s)?, s.clone()));
        }
    }
    Ok(out)
}

fn encoder_pair_cosine(world: &World, enc: &EncoderParams, pairs: &[(Vec<String>, Vec<String>)]) -> Result<f64, PipelineError> {
    let src: Vec<&[String]> = pairs.iter().map(|p| p.0.as_slice()).collect();
    let en: Vec<&[String]> = pairs.iter().map(|p| p.1.as_slice()).collect();
    let a = data::encode_all(world, enc, &src)?;
    let b = data::encode_all(world, enc, &en)?;
    let pool = |t: &crate::tensorcore::Tensor| -> Result<Vec<f64>, PipelineError> {
        Ok(crate::nets::HiddenSeq::new(t.clone(), crate::nets::Space::Encoder, crate::nets::Role::X)?.mean_pool())
    };
    let mut total = 0.0;
    for (x, y) in a.iter().zip(&b) {
        total += crate::evalkit::cosine(&pool(x)?, &pool(y)?);
    }
    Ok(total / pairs.len().max(1) as f64)
}

fn translator_em(
    world: &World,
    enc: &EncoderParams,
    dec: &Translator,
    pairs: &[(Vec<String>, Vec<String>)],
) -> Result<f64, PipelineError> {
    let mut hits = 0;
    for chunk in pairs.chunks(64) {
        let src: Vec<Vec<usize>> = chunk.iter().map(|p| world.enc_ids(&p.0)).collect::<Result<_, _>>()?;
        let refs: Vec<&[usize]> = src.iter().map(Vec::as_slice).collect();
        for (out, (_, en)) in dec.translate(enc, &refs, 40)?.iter().zip(chunk) {
            let end = out.iter().position(|&t| t == crate::nets::special::EOS).unwrap_or(out.len());
            let toks: Vec<&str> = out[..end].iter().map(|&i| world.enc_vocab.token(i).unwrap_or("<bad>")).collect();
            hits += usize::from(toks == en.iter().map(String::as_str).collect::<Vec<_>>());
        }
    }
    Ok(hits as f64 / pairs.len().max(1) as f64)
}

/// Model inputs derived once per lab: frozen-encoder states for every set.
pub struct LabData {
    pub mapping: Vec<BridgeItem>,
    pub stage2: Vec<(String, Vec<BridgeItem>)>,
    pub stage2_examples: Vec<(String, Vec<TaskExample>)>,
    pub eval: Vec<(String, Vec<BridgeItem>)>,
    pub eval_examples: Vec<(String, Vec<TaskExample>)>,
    pub pool_english: PoolSet,
    pub pool_others: Vec<PoolSet>,
}

pub struct Lab {
    pub config: LabConfig,
    pub world: World,
    pub bundle: CorpusBundle,
    pub base: BaseModels,
    pub data: LabData,
}

impl Lab {
    pub fn new(config: LabConfig, cache: Option<&Path>) -> Result<Self, PipelineError> {
        config.validate()?;
        let world = World::new(&config.world)?;
        let bundle = build_corpora(&world)?;
        let base = BaseModels::obtain(&config, &world, &bundle, cache)?;
        let data = Self::prepare(&world, &bundle, &base.encoder)?;
        Ok(Self { config, world, bundle, base, data })
    }

    fn prepare(world: &World, bundle: &CorpusBundle, enc: &EncoderParams) -> Result<LabData, PipelineError> {
        let mut mapping = Vec::new();
        for code in world.codes() {
            if let Some(pairs) = bundle.mapping_pairs.get(&code) {
                mapping.extend(data::bridge_task_items(world, enc, pairs)?);
            }
        }
        let by_lang = |m: &BTreeMap<String, Vec<TaskExample>>| -> Result<_, PipelineError> {
            let mut items = Vec::new();
            let mut examples = Vec::new();
            for code in world.codes() {
                let exs = m.get(&code).cloned().unwrap_or_default();
                items.push((code.clone(), data::bridge_task_items(world, enc, &exs)?));
                examples.push((code, exs));
            }
            Ok((items, examples))
        };
        let (stage2, stage2_examples) = by_lang(&bundle.stage2)?;
        let (eval, eval_examples) = by_lang(&bundle.eval)?;
        let pool_set = |lang: &crate::synthlang::SynthLanguage| -> Result<PoolSet, PipelineError> {
            let sents = bundle.pool.iter().map(|s| lang.render(s)).collect::<Result<Vec<_>, _>>()?;
            let refs: Vec<&[String]> = sents.iter().map(Vec::as_slice).collect();
            let xs = data::encode_all(world, enc, &refs)?;
            let items = xs
                .into_iter()
                .zip(&sents)
                .zip(&bundle.pool)
                .map(|((x, s), en)| BridgeItem { x, native: world.lm_ids(s), target: world.lm_ids(en) })
                .collect();
            Ok(PoolSet { lang: lang.code.clone(), items })
        };
        let pool_english = pool_set(world.english())?;
        let pool_others =
            world.languages.iter().filter(|l| !l.is_english()).map(pool_set).collect::<Result<Vec<_>, _>>()?;
        Ok(LabData { mapping, stage2, stage2_examples, eval, eval_examples, pool_english, pool_others })
    }

    /// Fresh σ for a run seed.
    pub fn sigma_init(&self, seed: u64, mapping: MappingVariant) -> Result<BridgeParams, PipelineError> {
        let mut rng = RngStream::new(seed).fork("sigma-init");
        Ok(BridgeParams::init(mapping, self.base.encoder.dims.d_model, &self.base.lm, &mut rng)?)
    }

    /// Stage-2 items: the first `size` examples of every language, mixed.
    pub fn stage2_items(&self, size: usize) -> Result<Vec<BridgeItem>, PipelineError> {
        let mut out = Vec::new();
        for (code, items) in &self.data.stage2 {
            if items.len() < size {
                return Err(PipelineError::Config(format!(
                    "stage-2 size {size} exceeds the {} generated examples of {code}",
                    items.len()
                )));
            }
            out.extend(items[..size].iter().cloned());
        }
        Ok(out)
    }

    pub fn evaluate(
        &self,
        variant: Variant,
        seed: u64,
        lm: &LmParams,
        sigma: Option<&BridgeParams>,
        mode: InputMode,
    ) -> Result<MetricsRecord, PipelineError> {
        let mut langs = Vec::new();
        let mut chance = BTreeMap::new();
        let tasks = &self.config.world.tasks;
        for ((code, items), (_, examples)) in self.data.eval.iter().zip(&self.data.eval_examples) {
            let decoded = eval::decode_items(&self.world, lm, sigma, items, mode)?;
            let strings: Vec<String> = decoded.iter().map(|t| t.join(" ")).collect();
            langs.push(score_language(code, examples, &strings)?);
            let mut c = 0.0;
            for ex in examples {
                c += chance_accuracy(ex.kind, tasks.difficulty, &tasks.compare)?;
            }
            chance.insert(code.clone(), 100.0 * c / examples.len().max(1) as f64);
        }
        let mut record = MetricsRecord::new(variant.name(), seed, langs);
        record.chance = chance;
        aggregate_groups(&mut record, &self.world.low_codes())?;
        Ok(record)
    }

    pub fn alignment(&self, location: ProbeLocation, sigma: Option<&BridgeParams>) -> Result<AlignmentReport, PipelineError> {
        eval::alignment(location, &self.base.lm, sigma, &self.data.pool_english, &self.data.pool_others)
    }

    pub fn translation_probe(&self, sigma: &BridgeParams) -> Result<Vec<TranslationScore>, PipelineError> {
        eval::translation_probe(&self.world, &self.base.lm, sigma, &self.bundle.pool, &self.data.pool_others)
    }
}

/// Result of one guarded bridge stage.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FreezeCheck {
    pub stage: String,
    pub theta_max_abs_diff: f64,
    pub phi_max_abs_diff: f64,
    pub census: Vec<String>,
    pub census_numel: usize,
    pub sigma_numel: usize,
}

impl FreezeCheck {
    pub fn exact(&self) -> bool {
        self.theta_max_abs_diff == 0.0 && self.phi_max_abs_diff == 0.0 && self.census_numel == self.sigma_numel
    }
}

fn guarded_bridge_stage(
    stage: &str,
    theta: &EncoderParams,
    phi: &LmParams,
    sigma: &mut BridgeParams,
    items: &[BridgeItem],
    mode: InputMode,
    cfg: &StageConfig,
    rng: &mut RngStream,
    log: &mut TrainLog,
) -> Result<FreezeCheck, PipelineError> {
    let theta0 = theta.store.clone();
    let phi0 = phi.store.clone();
    let report: BridgeStageReport = train::train_bridge(stage, phi, sigma, items, mode, cfg, rng, log)?;
    let check = FreezeCheck {
        stage: stage.to_string(),
        theta_max_abs_diff: theta.store.max_abs_diff(&theta0),
        phi_max_abs_diff: phi.store.max_abs_diff(&phi0),
        census: report.census.names.clone(),
        census_numel: report.census.numel,
        sigma_numel: sigma.store.numel(),
    };
    if !theta.store.bit_eq(&theta0) || !phi.store.bit_eq(&phi0) {
        return Err(PipelineError::FreezingLeak(format!("{stage}: frozen parameters changed")));
    }
    let expected: BTreeSet<&str> = sigma.store.iter().map(|p| p.name.as_str()).collect();
    let seen: BTreeSet<&str> = report.census.names.iter().map(String::as_str).collect();
    if report.steps > 0 && (expected != seen || check.census_numel != check.sigma_numel) {
        return Err(PipelineError::FreezingLeak(format!("{stage}: optimizer saw {seen:?}, bridge has {expected:?}")));
    }
    sigma.store.set_trainable(false);
    Ok(check)
}

/// Stage 1: σ learns to make the frozen LM reproduce English from mapped
/// states alone (replacement input).
pub fn train_mapping_stage(
    theta: &EncoderParams,
    phi: &LmParams,
    mut sigma: BridgeParams,
    pairs: &[BridgeItem],
    cfg: &StageConfig,
    rng: &mut RngStream,
    log: &mut TrainLog,
) -> Result<(BridgeParams, FreezeCheck), PipelineError> {
    if pairs.is_empty() {
        return Err(PipelineError::EmptyData("mapping".into()));
    }
    let check = guarded_bridge_stage("mapping", theta, phi, &mut sigma, pairs, InputMode::Replacement, cfg, rng, log)?;
    Ok((sigma, check))
}

/// Stage 2: σ continues on task data with the composed input `mode`. With no
/// data, σ is returned unchanged.
pub fn train_augmentation_stage(
    theta: &EncoderParams,
    phi: &LmParams,
    mut sigma: BridgeParams,
    items: &[BridgeItem],
    mode: InputMode,
    cfg: &StageConfig,
    rng: &mut RngStream,
    log: &mut TrainLog,
) -> Result<(BridgeParams, Option<FreezeCheck>), PipelineError> {
    if items.is_empty() {
        return Ok((sigma, None));
    }
    let check = guarded_bridge_stage("augmentation", theta, phi, &mut sigma, items, mode, cfg, rng, log)?;
    Ok((sigma, Some(check)))
}

/// Options that vary between runs sharing one lab.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct RunOptions {
    pub stage2_size: usize,
    pub mapping: MappingVariant,
}

impl RunOptions {
    pub fn from_config(cfg: &LabConfig) -> Self {
        Self { stage2_size: cfg.world.quotas.stage2, mapping: cfg.models.mapping }
    }
}

/// Bridge checkpoint after stage 1, shared by the variants of one seed.
#[derive(Clone, Debug)]
pub struct Stage1 {
    pub sigma: BridgeParams,
    pub checkpoint: Checkpoint,
    pub freeze: FreezeCheck,
    pub log: TrainLog,
}

#[derive(Clone, Debug)]
pub struct VariantOutcome {
    pub record: MetricsRecord,
    /// Final bridge checkpoint (bridge variants only).
    pub checkpoint: Option<Checkpoint>,
    pub freeze: Vec<FreezeCheck>,
    pub log: TrainLog,
}

fn bridge_checkpoint(
    sigma: &BridgeParams,
    mut provenance: Vec<Provenance>,
    stage: &str,
    key: &serde_json::Value,
) -> Checkpoint {
    let parent = provenance.last().map(|p| p.fingerprint.clone()).unwrap_or_default();
    let fp = fingerprint(&serde_json::json!({ "parent": parent, "stage": stage, "key": key }));
    provenance.push(Provenance { stage: stage.to_string(), fingerprint: fp.clone() });
    let mut ck = Checkpoint::new("bridge", fp, sigma.store.clone());
    ck.provenance = provenance;
    ck.meta = serde_json::json!({ "variant": sigma.variant, "d_in": sigma.d_in, "d_out": sigma.d_out });
    ck
}

/// Rebuilds σ from a bridge checkpoint.
pub fn sigma_from_checkpoint(ck: &Checkpoint) -> Result<BridgeParams, PipelineError> {
    let bad = |m: &str| PipelineError::Cache(format!("bridge checkpoint: {m}"));
    let variant = serde_json::from_value(ck.meta["variant"].clone()).map_err(|_| bad("variant"))?;
    let d_in = ck.meta["d_in"].as_u64().ok_or_else(|| bad("d_in"))? as usize;
    let d_out = ck.meta["d_out"].as_u64().ok_or_else(|| bad("d_out"))? as usize;
    Ok(BridgeParams { variant, d_in, d_out, store: ck.params.clone() })
}

impl Lab {
    fn seed_rng(&self, seed: u64, cfg: &StageConfig) -> RngStream {
        stage_rng(&RngStream::new(seed).fork("run"), cfg)
    }

    pub fn run_stage1(&self, seed: u64, opts: &RunOptions) -> Result<Stage1, PipelineError> {
        let cfg = &self.config.training.mapping;
        let mut log = TrainLog::default();
        let sigma0 = self.sigma_init(seed, opts.mapping)?;
        let (sigma, freeze) = train_mapping_stage(
            &self.base.encoder,
            &self.base.lm,
            sigma0,
            &self.data.mapping,
            cfg,
            &mut self.seed_rng(seed, cfg),
            &mut log,
        )?;
        let key = serde_json::json!({ "seed": seed, "mapping": opts.mapping, "cfg": cfg });
        let checkpoint = bridge_checkpoint(&sigma, self.base.lm_provenance(), "mapping", &key);
        Ok(Stage1 { sigma, checkpoint, freeze, log })
    }

    /// Runs the stages `spec` prescribes and evaluates. Bridge variants that
    /// start from stage 1 take it from `stage1`.
    pub fn run_variant(
        &self,
        spec: &VariantSpec,
        seed: u64,
        opts: &RunOptions,
        stage1: Option<&Stage1>,
    ) -> Result<VariantOutcome, PipelineError> {
        let base = &self.base;
        let mut log = TrainLog::default();
        let mut freeze = Vec::new();
        if !spec.uses_bridge() {
            let lm = if spec.sft {
                let cfg = &self.config.training.multireason_sft;
                let examples: Vec<TaskExample> =
                    self.data.stage2_examples.iter().flat_map(|(_, e)| e[..opts.stage2_size.min(e.len())].to_vec()).collect();
                let items = data::plain_task_items(&self.world, &examples);
                train::finetune_lm("multireason-sft", base.lm.clone(), &items, cfg, &mut self.seed_rng(seed, cfg), &mut log)?
            } else {
                base.lm.clone()
            };
            let record = self.evaluate(spec.variant, seed, &lm, None, InputMode::Plain)?;
            return Ok(VariantOutcome { record, checkpoint: None, freeze, log });
        }

        let (mut sigma, mut ck) = if spec.mapping_stage {
            let s1 = stage1.ok_or_else(|| PipelineError::MissingCheckpoint(format!("{}: stage-1 bridge", spec.variant)))?;
            if !s1.checkpoint.has_stage("mapping") {
                return Err(PipelineError::MissingCheckpoint("stage-1 checkpoint lacks mapping provenance".into()));
            }
            freeze.push(s1.freeze.clone());
            (s1.sigma.clone(), Some(s1.checkpoint.clone()))
        } else {
            (self.sigma_init(seed, opts.mapping)?, None)
        };
        if let Some(mode) = spec.augmentation_stage {
            let cfg = &self.config.training.augmentation;
            let items = self.stage2_items(opts.stage2_size)?;
            let (s, check) = train_augmentation_stage(
                &base.encoder,
                &base.lm,
                sigma,
                &items,
                mode,
                cfg,
                &mut self.seed_rng(seed, cfg),
                &mut log,
            )?;
            sigma = s;
            if let Some(check) = check {
                freeze.push(check);
                let parent = match &ck {
                    Some(c) => c.provenance.clone(),
                    None => base.lm_provenance(),
                };
                let key = serde_json::json!({
                    "seed": seed, "mapping": opts.mapping, "cfg": cfg, "mode": mode, "size": opts.stage2_size,
                });
                ck = Some(bridge_checkpoint(&sigma, parent, "augmentation", &key));
            }
        }
        let record = self.evaluate(spec.variant, seed, &base.lm, Some(&sigma), spec.eval_mode)?;
        Ok(VariantOutcome { record, checkpoint: ck, freeze, log })
    }
}
