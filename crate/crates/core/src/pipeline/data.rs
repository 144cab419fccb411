//! Corpora as id-level training items.

use super::PipelineError;
use crate::nets::{special, EncoderParams};
use crate::synthlang::{tasks::is_content, TaskExample, TextDoc, World};
use crate::tensorcore::{RngStream, Tensor};

/// LM input `[bos; native]` followed by `target`.
#[derive(Clone, Debug, PartialEq)]
pub struct LmItem {
    pub native: Vec<usize>,
    pub target: Vec<usize>,
}

/// One bridge-stage example: encoder states of the query, the LM's own ids
/// of the query, and the target ids (ending in `EOS`).
#[derive(Clone, Debug)]
pub struct BridgeItem {
    pub x: Tensor,
    pub native: Vec<usize>,
    pub target: Vec<usize>,
}

fn with_eos(mut ids: Vec<usize>) -> Vec<usize> {
    ids.push(special::EOS);
    ids
}

pub fn lm_pretrain_items(world: &World, docs: &[TextDoc]) -> Vec<LmItem> {
    docs.iter().map(|d| LmItem { native: Vec::new(), target: with_eos(world.lm_ids(&d.tokens)) }).collect()
}

/// Task examples in the plain format `[bos; q] -> y`.
pub fn plain_task_items(world: &World, examples: &[TaskExample]) -> Vec<LmItem> {
    examples
        .iter()
        .map(|ex| LmItem { native: world.lm_ids(&ex.source), target: with_eos(world.lm_ids(&ex.target)) })
        .collect()
}

/// English task items where a `fraction` of examples read `q₁ | q₂`: two
/// copies of `q`, each hiding its content words behind `UNK` at a rate drawn
/// independently from {0, 1/4, 1/2, 3/4, 1}.
pub fn finetune_items(world: &World, examples: &[TaskExample], fraction: f64, rng: &mut RngStream) -> Vec<LmItem> {
    let bar = world.lm_vocab.id("|").expect("separator is an invariant token");
    examples
        .iter()
        .map(|ex| {
            let q = world.lm_ids(&ex.source);
            let target = with_eos(world.lm_ids(&ex.target));
            if !rng.bernoulli(fraction) {
                return LmItem { native: q, target };
            }
            let masked = |rng: &mut RngStream| -> Vec<usize> {
                let rate = rng.below(5) as f64 / 4.0;
                ex.source
                    .iter()
                    .zip(&q)
                    .map(|(tok, &id)| if is_content(tok) && rng.bernoulli(rate) { special::UNK } else { id })
                    .collect()
            };
            let mut native = masked(rng);
            native.push(bar);
            native.extend(masked(rng));
            LmItem { native, target }
        })
        .collect()
}

/// Replay items from the pretraining corpus: each `a | b` document, kept with
/// probability `fraction`, as input `a |` with target `b`.
pub fn rehearsal_items(world: &World, docs: &[TextDoc], fraction: f64, rng: &mut RngStream) -> Vec<LmItem> {
    docs.iter()
        .filter_map(|d| {
            let bar = d.tokens.iter().position(|t| t == "|")?;
            rng.bernoulli(fraction).then(|| LmItem {
                native: world.lm_ids(&d.tokens[..=bar]),
                target: with_eos(world.lm_ids(&d.tokens[bar + 1..])),
            })
        })
        .collect()
}

/// `(source ids, target ids + EOS)` pairs in the encoder vocabulary.
pub fn encoder_pairs(world: &World, examples: &[TaskExample]) -> Result<Vec<(Vec<usize>, Vec<usize>)>, PipelineError> {
    examples.iter().map(|ex| Ok((world.enc_ids(&ex.source)?, with_eos(world.enc_ids(&ex.target)?)))).collect()
}

const ENCODE_BATCH: usize = 64;

/// Frozen-encoder states of each token sequence.
pub fn encode_all(world: &World, enc: &EncoderParams, sources: &[&[String]]) -> Result<Vec<Tensor>, PipelineError> {
    let ids: Vec<Vec<usize>> = sources.iter().map(|s| world.enc_ids(s)).collect::<Result<_, _>>()?;
    let mut out = Vec::with_capacity(ids.len());
    for chunk in ids.chunks(ENCODE_BATCH) {
        let refs: Vec<&[usize]> = chunk.iter().map(Vec::as_slice).collect();
        out.extend(enc.encode_batch(&refs)?.into_iter().map(|h| h.values));
    }
    Ok(out)
}

/// Bridge items for task examples: target is the task target.
pub fn bridge_task_items(world: &World, enc: &EncoderParams, examples: &[TaskExample]) -> Result<Vec<BridgeItem>, PipelineError> {
    let sources: Vec<&[String]> = examples.iter().map(|e| e.source.as_slice()).collect();
    let xs = encode_all(world, enc, &sources)?;
    Ok(examples
        .iter()
        .zip(xs)
        .map(|(ex, x)| BridgeItem { x, native: world.lm_ids(&ex.source), target: with_eos(world.lm_ids(&ex.target)) })
        .collect())
}
