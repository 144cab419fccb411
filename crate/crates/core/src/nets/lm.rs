use super::blocks::{self, AttnInputs, INIT_STD};
use super::compose::{HiddenSeq, Role, Space};
use super::{check_ids, NetError, Result, TransformerDims};
use crate::tensorcore::{Graph, ParamStore, Real, RngStream, Segment, Tensor, Var};

/// Causal decoder-only language model (φ).
#[derive(Clone, Debug)]
pub struct LmParams<T: Real = f32> {
    pub dims: TransformerDims,
    pub vocab: usize,
    pub store: ParamStore<T>,
}

impl LmParams<f32> {
    pub fn init(dims: TransformerDims, vocab: usize, rng: &mut RngStream) -> Result<Self> {
        dims.validate("lm").map_err(NetError::Config)?;
        let d = dims.d_model;
        let mut store = ParamStore::new();
        store.add_normal(rng, "lm.tok_emb", vec![vocab, d], INIT_STD)?;
        store.add_normal(rng, "lm.pos_emb", vec![dims.max_positions, d], INIT_STD)?;
        for l in 0..dims.layers {
            blocks::add_block(&mut store, rng, &format!("lm.l{l}"), d, dims.ff_hidden(), false)?;
        }
        blocks::add_layer_norm(&mut store, "lm.ln_f", d)?;
        blocks::add_linear(&mut store, rng, "lm.head", d, vocab, INIT_STD)?;
        Ok(Self { dims, vocab, store })
    }

    /// Embedding-table lookup, no contextualization.
    pub fn embed(&self, ids: &[usize]) -> Result<HiddenSeq> {
        if ids.is_empty() {
            return Err(NetError::Empty("query"));
        }
        check_ids(ids, self.vocab)?;
        let table = &self.store.get("lm.tok_emb")?.tensor;
        let d = self.dims.d_model;
        let mut data = Vec::with_capacity(ids.len() * d);
        for &id in ids {
            data.extend_from_slice(table.row(id));
        }
        HiddenSeq::new(Tensor::new(vec![ids.len(), d], data)?, Space::Llm, Role::Native)
    }

    pub fn embedding_row(&self, id: usize) -> Result<&[f32]> {
        check_ids(&[id], self.vocab)?;
        Ok(self.store.get("lm.tok_emb")?.tensor.row(id))
    }
}

impl<T: Real> LmParams<T> {
    pub fn cast<U: Real>(&self) -> LmParams<U> {
        LmParams { dims: self.dims.clone(), vocab: self.vocab, store: self.store.cast() }
    }

    pub fn d_model(&self) -> usize {
        self.dims.d_model
    }

    /// Runs the decoder over sequences whose rows are gathered from `source`.
    ///
    /// `seqs[i]` lists row indices of `source`; each sequence gets positions
    /// `0..len` and causal attention. Logits are produced only for the packed
    /// rows listed in `out_rows`.
    pub(crate) fn logits(&self, g: &mut Graph<T>, source: Var, seqs: &[Vec<usize>], out_rows: Vec<usize>) -> Result<Var> {
        let lens: Vec<usize> = seqs.iter().map(Vec::len).collect();
        if let Some(&len) = lens.iter().find(|&&l| l > self.dims.max_positions) {
            return Err(NetError::TooLong { len, max: self.dims.max_positions });
        }
        let segments = Segment::pack(&lens);
        let p = &self.store;
        let ids: Vec<usize> = seqs.iter().flatten().copied().collect();
        let x = g.gather_rows(source, ids)?;
        let pos = g.param(p.get("lm.pos_emb")?);
        let pe = g.gather_rows(pos, blocks::positions(&segments))?;
        let mut x = g.add(x, pe)?;
        let layout = AttnInputs { q_segments: segments.clone(), k_segments: segments, causal: true, key_mask: None };
        for l in 0..self.dims.layers {
            x = blocks::block(g, p, &format!("lm.l{l}"), self.dims.heads, x, &layout, None)?;
        }
        let x = g.gather_rows(x, out_rows)?;
        let x = blocks::layer_norm(g, p, "lm.ln_f", x)?;
        Ok(blocks::linear(g, p, "lm.head", x)?)
    }

    pub(crate) fn token_table(&self, g: &mut Graph<T>) -> Result<Var> {
        Ok(g.param(self.store.get("lm.tok_emb")?))
    }
}
