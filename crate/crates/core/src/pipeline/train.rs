//! Training loops for every stage.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use super::config::{InputMode, StageConfig, StageKind};
use super::data::{BridgeItem, LmItem};
use super::PipelineError;
use crate::nets::{composed_loss, BridgeParams, BridgeRows, EncoderParams, LmParams, Prefix, TrainItem, Translator};
use crate::tensorcore::{AdamHyper, AdamState, Graph, RngStream, Segment, Tensor};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LogRecord {
    pub stage: String,
    pub epoch: usize,
    pub step: usize,
    pub loss: f32,
}

/// Per-step training losses, in order.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct TrainLog {
    pub records: Vec<LogRecord>,
}

impl TrainLog {
    pub fn stage(&self, stage: &str) -> Vec<f32> {
        self.records.iter().filter(|r| r.stage == stage).map(|r| r.loss).collect()
    }

    /// Mean loss of each epoch of `stage`.
    pub fn epoch_means(&self, stage: &str) -> Vec<f64> {
        let mut out: Vec<(f64, usize)> = Vec::new();
        for r in self.records.iter().filter(|r| r.stage == stage) {
            if out.len() <= r.epoch {
                out.resize(r.epoch + 1, (0.0, 0));
            }
            out[r.epoch].0 += r.loss as f64;
            out[r.epoch].1 += 1;
        }
        out.into_iter().map(|(s, n)| s / n.max(1) as f64).collect()
    }

    pub fn to_jsonl(&self) -> String {
        self.records.iter().map(|r| serde_json::to_string(r).expect("log serialize") + "\n").collect()
    }

    pub fn from_jsonl(text: &str) -> Result<Self, serde_json::Error> {
        let records = text.lines().filter(|l| !l.trim().is_empty()).map(serde_json::from_str).collect::<Result<_, _>>()?;
        Ok(Self { records })
    }

    pub fn extend(&mut self, other: TrainLog) {
        self.records.extend(other.records);
    }
}

fn epoch_batches(n: usize, batch: usize, rng: &mut RngStream) -> Vec<Vec<usize>> {
    let mut order: Vec<usize> = (0..n).collect();
    rng.shuffle(&mut order);
    order.chunks(batch).map(<[usize]>::to_vec).collect()
}

fn check_kind(cfg: &StageConfig, kinds: &[StageKind]) -> Result<(), PipelineError> {
    if !kinds.contains(&cfg.kind) {
        return Err(PipelineError::Config(format!("stage of kind {} used where {kinds:?} expected", cfg.kind)));
    }
    cfg.validate(cfg.kind.name())
}

fn check_loss(stage: &str, step: usize, loss: f32) -> Result<(), PipelineError> {
    if !loss.is_finite() {
        return Err(PipelineError::Diverged { stage: stage.to_string(), step, loss });
    }
    Ok(())
}

/// Full-parameter LM training on plain items, in place.
fn train_lm(
    stage: &str,
    lm: &mut LmParams,
    items: &[LmItem],
    cfg: &StageConfig,
    rng: &mut RngStream,
    log: &mut TrainLog,
) -> Result<(), PipelineError> {
    if items.is_empty() {
        return Err(PipelineError::EmptyData(stage.to_string()));
    }
    lm.store.set_trainable(true);
    let hyper = AdamHyper::with_lr(cfg.lr);
    let mut adam = AdamState::new();
    let mut step = 0;
    for epoch in 0..cfg.epochs {
        for batch in epoch_batches(items.len(), cfg.batch_size, rng) {
            let train: Vec<TrainItem> = batch
                .iter()
                .map(|&i| TrainItem { prefix: Prefix { mapped: None, native: &items[i].native }, target: &items[i].target })
                .collect();
            let mut g = Graph::new();
            let loss = composed_loss(&mut g, lm, None, &train)?;
            let value = g.scalar(loss);
            check_loss(stage, step, value)?;
            let grads = g.backward(loss)?;
            adam.step(&mut [&mut lm.store], &grads, &hyper)?;
            log.records.push(LogRecord { stage: stage.to_string(), epoch, step, loss: value });
            step += 1;
        }
    }
    lm.store.set_trainable(false);
    Ok(())
}

/// Causal next-token pretraining; returns φ frozen.
pub fn pretrain_lm(
    mut lm: LmParams,
    items: &[LmItem],
    cfg: &StageConfig,
    rng: &mut RngStream,
    log: &mut TrainLog,
) -> Result<LmParams, PipelineError> {
    check_kind(cfg, &[StageKind::LmPretrain])?;
    train_lm(StageKind::LmPretrain.name(), &mut lm, items, cfg, rng, log)?;
    Ok(lm)
}

/// Full-parameter task fine-tune of φ; returns φ frozen.
pub fn finetune_lm(
    stage: &str,
    mut lm: LmParams,
    items: &[LmItem],
    cfg: &StageConfig,
    rng: &mut RngStream,
    log: &mut TrainLog,
) -> Result<LmParams, PipelineError> {
    check_kind(cfg, &[StageKind::TaskFinetune])?;
    if !cfg.phi_trainable {
        return Err(PipelineError::Config(format!("{stage}: fine-tuning needs phi_trainable")));
    }
    train_lm(stage, &mut lm, items, cfg, rng, log)?;
    Ok(lm)
}

/// Trains encoder and throwaway decoder on translation pairs; returns both,
/// the encoder frozen.
pub fn pretrain_encoder(
    mut enc: EncoderParams,
    mut dec: Translator,
    pairs: &[(Vec<usize>, Vec<usize>)],
    cfg: &StageConfig,
    rng: &mut RngStream,
    log: &mut TrainLog,
) -> Result<(EncoderParams, Translator), PipelineError> {
    check_kind(cfg, &[StageKind::EncoderPretrain])?;
    if pairs.is_empty() {
        return Err(PipelineError::EmptyData("encoder-pretrain".into()));
    }
    enc.store.set_trainable(true);
    dec.store.set_trainable(true);
    let hyper = AdamHyper::with_lr(cfg.lr);
    let mut adam = AdamState::new();
    let stage = StageKind::EncoderPretrain.name();
    let mut step = 0;
    for epoch in 0..cfg.epochs {
        for batch in epoch_batches(pairs.len(), cfg.batch_size, rng) {
            let b: Vec<(&[usize], &[usize])> = batch.iter().map(|&i| (&pairs[i].0[..], &pairs[i].1[..])).collect();
            let mut g = Graph::new();
            let loss = dec.loss(&mut g, &enc, &b)?;
            let value = g.scalar(loss);
            check_loss(stage, step, value)?;
            let grads = g.backward(loss)?;
            adam.step(&mut [&mut enc.store, &mut dec.store], &grads, &hyper)?;
            log.records.push(LogRecord { stage: stage.to_string(), epoch, step, loss: value });
            step += 1;
        }
    }
    enc.store.set_trainable(false);
    dec.store.set_trainable(false);
    Ok((enc, dec))
}

/// Optimizer-visible parameters of a bridge stage.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Census {
    pub names: Vec<String>,
    pub numel: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct BridgeStageReport {
    pub steps: usize,
    pub census: Census,
}

/// Mean target NLL of one bridge batch, built on `g`.
pub(crate) fn bridge_batch_loss(
    g: &mut Graph,
    lm: &LmParams,
    sigma: &BridgeParams,
    items: &[&BridgeItem],
    mode: InputMode,
) -> Result<crate::tensorcore::Var, PipelineError> {
    let d1 = sigma.d_in;
    let total: usize = items.iter().map(|it| it.x.rows()).sum();
    let mut rows = Vec::with_capacity(total * d1);
    let mut segs = Vec::with_capacity(items.len());
    for it in items {
        segs.push(Segment::new(rows.len() / d1, it.x.rows()));
        rows.extend_from_slice(it.x.data());
    }
    let x = g.constant(Tensor::new(vec![total, d1], rows)?);
    let mapped = sigma.map(g, x)?;
    let sep = sigma.sep(g)?;
    let train: Vec<TrainItem> = items
        .iter()
        .zip(&segs)
        .map(|(it, &seg)| {
            let native: &[usize] = if mode == InputMode::Augmented { &it.native } else { &[] };
            TrainItem { prefix: Prefix { mapped: Some(seg), native }, target: &it.target }
        })
        .collect();
    Ok(composed_loss(g, lm, Some(BridgeRows { mapped, sep }), &train)?)
}

/// Trains σ alone against the frozen LM. θ does not enter the graph (its
/// states are precomputed in `items`); φ enters with every parameter frozen.
pub fn train_bridge(
    stage: &str,
    lm: &LmParams,
    sigma: &mut BridgeParams,
    items: &[BridgeItem],
    mode: InputMode,
    cfg: &StageConfig,
    rng: &mut RngStream,
    log: &mut TrainLog,
) -> Result<BridgeStageReport, PipelineError> {
    check_kind(cfg, &[StageKind::Mapping, StageKind::Augmentation])?;
    if mode == InputMode::Plain {
        return Err(PipelineError::Config(format!("{stage}: bridge stages need a composed input mode")));
    }
    if lm.store.trainable_numel() != 0 {
        return Err(PipelineError::FreezingLeak(format!("{stage}: LM has trainable parameters")));
    }
    sigma.store.set_trainable(true);
    let expected: BTreeSet<String> = sigma.store.iter().map(|p| p.name.clone()).collect();
    let hyper = AdamHyper::with_lr(cfg.lr);
    let mut adam = AdamState::new();
    let mut step = 0;
    for epoch in 0..cfg.epochs {
        for batch in epoch_batches(items.len(), cfg.batch_size, rng) {
            let refs: Vec<&BridgeItem> = batch.iter().map(|&i| &items[i]).collect();
            let mut g = Graph::new();
            let loss = bridge_batch_loss(&mut g, lm, sigma, &refs, mode)?;
            let value = g.scalar(loss);
            check_loss(stage, step, value)?;
            let grads = g.backward(loss)?;
            if let Some(name) = grads.keys().find(|k| !expected.contains(*k)) {
                return Err(PipelineError::FreezingLeak(format!("{stage}: gradient reached `{name}`")));
            }
            adam.step(&mut [&mut sigma.store], &grads, &hyper)?;
            log.records.push(LogRecord { stage: stage.to_string(), epoch, step, loss: value });
            step += 1;
        }
    }
    let names: Vec<String> = adam.visible_params().map(String::from).collect();
    let numel = names.iter().map(|n| sigma.store.get(n).map(|p| p.tensor.len())).sum::<Result<usize, _>>()?;
    Ok(BridgeStageReport { steps: step, census: Census { names, numel } })
}
