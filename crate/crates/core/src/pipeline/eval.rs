//! Decoding-based evaluation and representation probes.

use super::config::InputMode;
use super::data::BridgeItem;
use super::PipelineError;
use crate::evalkit::{rep_alignment, translation_scores, AlignmentReport, ProbeLocation, TranslationScore};
use crate::nets::{compose_augmented, compose_replacement, greedy_decode_batch, special, BridgeParams, HiddenSeq, LmParams, Role, Space};
use crate::synthlang::World;
use crate::tensorcore::Tensor;

/// Longest answer the decoder may produce.
pub const MAX_NEW: usize = 40;

const DECODE_BATCH: usize = 128;

fn encoder_seq(x: &Tensor) -> Result<HiddenSeq, PipelineError> {
    Ok(HiddenSeq::new(x.clone(), Space::Encoder, Role::X)?)
}

/// The embedded LM prefix of one item.
pub fn prefix_for(
    lm: &LmParams,
    sigma: Option<&BridgeParams>,
    item: &BridgeItem,
    mode: InputMode,
) -> Result<Tensor, PipelineError> {
    let bridge = || sigma.ok_or_else(|| PipelineError::Config(format!("{mode:?} input needs a bridge")));
    Ok(match mode {
        InputMode::Plain => {
            let mut ids = vec![special::BOS];
            ids.extend(&item.native);
            lm.embed(&ids)?.values
        }
        InputMode::Augmented => {
            let s = bridge()?;
            let mapped = s.map_states(&encoder_seq(&item.x)?)?;
            compose_augmented(&mapped, &lm.embed(&item.native)?, s, lm)?.values
        }
        InputMode::Replacement => {
            let s = bridge()?;
            let mapped = s.map_states(&encoder_seq(&item.x)?)?;
            compose_replacement(&mapped, s, lm)?.values
        }
    })
}

/// Greedy decoding of every item; outputs are token strings with the
/// terminating `EOS` removed.
pub fn decode_items(
    world: &World,
    lm: &LmParams,
    sigma: Option<&BridgeParams>,
    items: &[BridgeItem],
    mode: InputMode,
) -> Result<Vec<Vec<String>>, PipelineError> {
    let mut out = Vec::with_capacity(items.len());
    for chunk in items.chunks(DECODE_BATCH) {
        let prefixes: Vec<Tensor> = chunk.iter().map(|it| prefix_for(lm, sigma, it, mode)).collect::<Result<_, _>>()?;
        let refs: Vec<&Tensor> = prefixes.iter().collect();
        for ids in greedy_decode_batch(lm, &refs, MAX_NEW)? {
            let end = ids.iter().position(|&t| t == special::EOS).unwrap_or(ids.len());
            out.push(ids[..end].iter().map(|&i| world.lm_vocab.token(i).unwrap_or("<bad>").to_string()).collect());
        }
    }
    Ok(out)
}

/// Mean-pooled vectors of a sentence set at one probe location.
pub fn pooled(seqs: &[HiddenSeq]) -> Vec<Vec<f64>> {
    seqs.iter().map(HiddenSeq::mean_pool).collect()
}

/// Pool sentences of one language as model inputs.
#[derive(Clone, Debug)]
pub struct PoolSet {
    pub lang: String,
    pub items: Vec<BridgeItem>,
}

/// LLM-embedding vectors of a pool set.
pub fn llm_embedding_vectors(lm: &LmParams, set: &PoolSet) -> Result<Vec<Vec<f64>>, PipelineError> {
    set.items.iter().map(|it| Ok(lm.embed(&it.native)?.mean_pool())).collect()
}

pub fn encoder_vectors(set: &PoolSet) -> Result<Vec<Vec<f64>>, PipelineError> {
    set.items.iter().map(|it| Ok(encoder_seq(&it.x)?.mean_pool())).collect()
}

pub fn mapped_vectors(sigma: &BridgeParams, set: &PoolSet) -> Result<Vec<Vec<f64>>, PipelineError> {
    set.items.iter().map(|it| Ok(sigma.map_states(&encoder_seq(&it.x)?)?.mean_pool())).collect()
}

/// Alignment of every non-English pool against English, both sides taken at
/// the same probe location.
pub fn alignment(
    location: ProbeLocation,
    lm: &LmParams,
    sigma: Option<&BridgeParams>,
    english: &PoolSet,
    others: &[PoolSet],
) -> Result<AlignmentReport, PipelineError> {
    let at = |set: &PoolSet| -> Result<Vec<Vec<f64>>, PipelineError> {
        match location {
            ProbeLocation::EncoderLast => encoder_vectors(set),
            ProbeLocation::LlmEmbedding => llm_embedding_vectors(lm, set),
            ProbeLocation::MappingOutput => {
                mapped_vectors(sigma.ok_or_else(|| PipelineError::Config("mapping probe needs σ".into()))?, set)
            }
        }
    };
    let reference = at(english)?;
    let vecs = others.iter().map(|set| Ok((set.lang.clone(), at(set)?))).collect::<Result<Vec<_>, PipelineError>>()?;
    Ok(rep_alignment(location, &reference, &vecs)?)
}

/// Replacement-mode decoding of each pool sentence back to English.
pub fn translation_probe(
    world: &World,
    lm: &LmParams,
    sigma: &BridgeParams,
    english: &[Vec<String>],
    others: &[PoolSet],
) -> Result<Vec<TranslationScore>, PipelineError> {
    others
        .iter()
        .map(|set| {
            let hyps = decode_items(world, lm, Some(sigma), &set.items, InputMode::Replacement)?;
            let pairs: Vec<(Vec<String>, Vec<String>)> = hyps.into_iter().zip(english.iter().cloned()).collect();
            Ok(translation_scores(&set.lang, &pairs))
        })
        .collect()
}
