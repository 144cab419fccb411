use super::blocks::{self, AttnInputs, INIT_STD};
use super::compose::{HiddenSeq, Role, Space};
use super::{check_ids, special, NetError, Result, TransformerDims};
use crate::tensorcore::{Graph, ParamStore, Real, RngStream, Segment, Var};

/// Positional table init scale. Kept below the token scale so that an
/// untrained encoder does not map unrelated sentences of equal length to
/// similar pooled vectors.
const POS_STD: f64 = 0.005;

/// Bidirectional transformer encoder (θ).
#[derive(Clone, Debug)]
pub struct EncoderParams<T: Real = f32> {
    pub dims: TransformerDims,
    pub vocab: usize,
    pub store: ParamStore<T>,
}

impl EncoderParams<f32> {
    pub fn init(dims: TransformerDims, vocab: usize, rng: &mut RngStream) -> Result<Self> {
        dims.validate("encoder").map_err(NetError::Config)?;
        let d = dims.d_model;
        let mut store = ParamStore::new();
        store.add_normal(rng, "enc.tok_emb", vec![vocab, d], INIT_STD)?;
        store.add_normal(rng, "enc.pos_emb", vec![dims.max_positions, d], POS_STD)?;
        for l in 0..dims.layers {
            blocks::add_block(&mut store, rng, &format!("enc.l{l}"), d, dims.ff_hidden(), false)?;
        }
        blocks::add_layer_norm(&mut store, "enc.ln_f", d)?;
        Ok(Self { dims, vocab, store })
    }

    /// Last-layer states for one query.
    pub fn encode(&self, q: &[usize]) -> Result<HiddenSeq> {
        Ok(self.encode_batch(&[q])?.pop().expect("one sequence in, one out"))
    }

    /// Last-layer states for a batch; `PAD` tokens are masked out as keys.
    pub fn encode_batch(&self, seqs: &[&[usize]]) -> Result<Vec<HiddenSeq>> {
        let mut g = Graph::inference();
        let (out, segments) = self.forward(&mut g, seqs)?;
        let values = g.value(out);
        segments
            .iter()
            .map(|s| {
                let rows = values.data()[s.start * self.dims.d_model..s.end() * self.dims.d_model].to_vec();
                let t = crate::tensorcore::Tensor::new(vec![s.len, self.dims.d_model], rows)?;
                HiddenSeq::new(t, Space::Encoder, Role::X)
            })
            .collect()
    }
}

impl<T: Real> EncoderParams<T> {
    pub fn cast<U: Real>(&self) -> EncoderParams<U> {
        EncoderParams { dims: self.dims.clone(), vocab: self.vocab, store: self.store.cast() }
    }

    pub fn validate_query(&self, q: &[usize]) -> Result<()> {
        if q.is_empty() {
            return Err(NetError::Empty("query"));
        }
        if q.len() > self.dims.max_positions {
            return Err(NetError::TooLong { len: q.len(), max: self.dims.max_positions });
        }
        check_ids(q, self.vocab)
    }

    /// Records the encoder on `g`; returns stacked states and their segments.
    pub fn forward(&self, g: &mut Graph<T>, seqs: &[&[usize]]) -> Result<(Var, Vec<Segment>)> {
        if seqs.is_empty() {
            return Err(NetError::Empty("batch"));
        }
        for q in seqs {
            self.validate_query(q)?;
        }
        let lens: Vec<usize> = seqs.iter().map(|q| q.len()).collect();
        let segments = Segment::pack(&lens);
        let ids: Vec<usize> = seqs.iter().flat_map(|q| q.iter().copied()).collect();
        let mask: Vec<bool> = ids.iter().map(|&t| t == special::PAD).collect();
        let p = &self.store;
        let tok = g.param(p.get("enc.tok_emb")?);
        let pos = g.param(p.get("enc.pos_emb")?);
        let x = g.gather_rows(tok, ids)?;
        let pe = g.gather_rows(pos, blocks::positions(&segments))?;
        let mut x = g.add(x, pe)?;
        let layout = AttnInputs {
            q_segments: segments.clone(),
            k_segments: segments.clone(),
            causal: false,
            key_mask: mask.iter().any(|&m| m).then_some(mask),
        };
        for l in 0..self.dims.layers {
            x = blocks::block(g, p, &format!("enc.l{l}"), self.dims.heads, x, &layout, None)?;
        }
        let out = blocks::layer_norm(g, p, "enc.ln_f", x)?;
        Ok((out, segments))
    }
}
