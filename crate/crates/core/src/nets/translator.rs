//! Throwaway decoder used only to pretrain the encoder on translation.

use super::blocks::{self, AttnInputs, INIT_STD};
use super::compose::argmax;
use super::{check_ids, special, EncoderParams, NetError, Result, TransformerDims};
use crate::tensorcore::{Graph, ParamStore, Real, RngStream, Segment, Var};

#[derive(Clone, Debug)]
pub struct Translator<T: Real = f32> {
    pub dims: TransformerDims,
    pub vocab: usize,
    pub store: ParamStore<T>,
}

impl Translator<f32> {
    pub fn init(dims: TransformerDims, vocab: usize, rng: &mut RngStream) -> Result<Self> {
        dims.validate("translator").map_err(NetError::Config)?;
        let d = dims.d_model;
        let mut store = ParamStore::new();
        store.add_normal(rng, "tdec.tok_emb", vec![vocab, d], INIT_STD)?;
        store.add_normal(rng, "tdec.pos_emb", vec![dims.max_positions, d], INIT_STD)?;
        for l in 0..dims.layers {
            blocks::add_block(&mut store, rng, &format!("tdec.l{l}"), d, dims.ff_hidden(), true)?;
        }
        blocks::add_layer_norm(&mut store, "tdec.ln_f", d)?;
        blocks::add_linear(&mut store, rng, "tdec.head", d, vocab, INIT_STD)?;
        Ok(Self { dims, vocab, store })
    }

    /// Greedy translation; outputs end at `EOS` (included) or `max_new`.
    pub fn translate(&self, enc: &EncoderParams, srcs: &[&[usize]], max_new: usize) -> Result<Vec<Vec<usize>>> {
        let mut outputs: Vec<Vec<usize>> = vec![Vec::new(); srcs.len()];
        let mut active: Vec<usize> = (0..srcs.len()).collect();
        for _ in 0..max_new.min(self.dims.max_positions) {
            if active.is_empty() {
                break;
            }
            let mut g = Graph::inference();
            let batch_src: Vec<&[usize]> = active.iter().map(|&i| srcs[i]).collect();
            let inputs: Vec<Vec<usize>> = active
                .iter()
                .map(|&i| std::iter::once(special::BOS).chain(outputs[i].iter().copied()).collect())
                .collect();
            let (h, segs) = self.decode_states(&mut g, enc, &batch_src, &inputs)?;
            let last: Vec<usize> = segs.iter().map(|s| s.end() - 1).collect();
            let logits = self.head(&mut g, h, last)?;
            let lv = g.value(logits);
            for (r, &i) in active.iter().enumerate() {
                outputs[i].push(argmax(lv.row(r)));
            }
            active.retain(|&i| outputs[i].last() != Some(&special::EOS));
        }
        Ok(outputs)
    }
}

impl<T: Real> Translator<T> {
    /// Teacher-forced mean NLL of each target given its source. Targets
    /// should end with `EOS`.
    pub fn loss(&self, g: &mut Graph<T>, enc: &EncoderParams<T>, pairs: &[(&[usize], &[usize])]) -> Result<Var> {
        let srcs: Vec<&[usize]> = pairs.iter().map(|p| p.0).collect();
        let mut inputs = Vec::with_capacity(pairs.len());
        let mut targets = Vec::new();
        for (_, tgt) in pairs {
            if tgt.is_empty() {
                return Err(NetError::Empty("target"));
            }
            check_ids(tgt, self.vocab)?;
            inputs.push(std::iter::once(special::BOS).chain(tgt[..tgt.len() - 1].iter().copied()).collect::<Vec<_>>());
            targets.extend_from_slice(tgt);
        }
        let (h, segs) = self.decode_states(g, enc, &srcs, &inputs)?;
        let rows = segs.iter().flat_map(|s| s.start..s.end()).collect();
        let logits = self.head(g, h, rows)?;
        Ok(g.cross_entropy(logits, targets)?)
    }

    fn decode_states(
        &self,
        g: &mut Graph<T>,
        enc: &EncoderParams<T>,
        srcs: &[&[usize]],
        inputs: &[Vec<usize>],
    ) -> Result<(Var, Vec<Segment>)> {
        let (ctx, k_segments) = enc.forward(g, srcs)?;
        let mask: Vec<bool> = srcs.iter().flat_map(|s| s.iter().map(|&t| t == special::PAD)).collect();
        let lens: Vec<usize> = inputs.iter().map(Vec::len).collect();
        if let Some(&len) = lens.iter().find(|&&l| l > self.dims.max_positions) {
            return Err(NetError::TooLong { len, max: self.dims.max_positions });
        }
        let segments = Segment::pack(&lens);
        let ids: Vec<usize> = inputs.iter().flatten().copied().collect();
        check_ids(&ids, self.vocab)?;
        let p = &self.store;
        let tok = g.param(p.get("tdec.tok_emb")?);
        let pos = g.param(p.get("tdec.pos_emb")?);
        let x = g.gather_rows(tok, ids)?;
        let pe = g.gather_rows(pos, blocks::positions(&segments))?;
        let mut x = g.add(x, pe)?;
        let self_layout =
            AttnInputs { q_segments: segments.clone(), k_segments: segments.clone(), causal: true, key_mask: None };
        let cross = AttnInputs {
            q_segments: segments.clone(),
            k_segments,
            causal: false,
            key_mask: mask.iter().any(|&m| m).then_some(mask),
        };
        for l in 0..self.dims.layers {
            x = blocks::block(g, p, &format!("tdec.l{l}"), self.dims.heads, x, &self_layout, Some((ctx, &cross)))?;
        }
        Ok((x, segments))
    }

    fn head(&self, g: &mut Graph<T>, h: Var, rows: Vec<usize>) -> Result<Var> {
        let x = g.gather_rows(h, rows)?;
        let x = blocks::layer_norm(g, &self.store, "tdec.ln_f", x)?;
        Ok(blocks::linear(g, &self.store, "tdec.head", x)?)
    }
}
