//! Shared transformer building blocks.
//!
//! All blocks are pre-LayerNorm and operate on ragged row-stacked batches
//! described by [`Segment`]s.

use crate::tensorcore::{
    AttentionSpec, Graph, Nonlinearity, ParamStore, Primitive, Real, RngStream, Segment, TensorError, Var,
};

pub(crate) const INIT_STD: f64 = 0.02;

pub(crate) fn add_linear(
    store: &mut ParamStore,
    rng: &mut RngStream,
    name: &str,
    d_in: usize,
    d_out: usize,
    std: f64,
) -> Result<(), TensorError> {
    store.add_normal(rng, &format!("{name}.w"), vec![d_in, d_out], std)?;
    store.add_const(&format!("{name}.b"), vec![d_out], 0.0)
}

pub(crate) fn add_layer_norm(store: &mut ParamStore, name: &str, d: usize) -> Result<(), TensorError> {
    store.add_const(&format!("{name}.g"), vec![d], 1.0)?;
    store.add_const(&format!("{name}.b"), vec![d], 0.0)
}

pub(crate) fn linear<T: Real>(g: &mut Graph<T>, p: &ParamStore<T>, name: &str, x: Var) -> Result<Var, TensorError> {
    let w = g.param(p.get(&format!("{name}.w"))?);
    let b = g.param(p.get(&format!("{name}.b"))?);
    g.linear(x, w, Some(b))
}

pub(crate) fn layer_norm<T: Real>(g: &mut Graph<T>, p: &ParamStore<T>, name: &str, x: Var) -> Result<Var, TensorError> {
    let gamma = g.param(p.get(&format!("{name}.g"))?);
    let beta = g.param(p.get(&format!("{name}.b"))?);
    g.layer_norm(x, gamma, beta)
}

/// Parameters of one attention sub-layer (`q`, `k`, `v`, `o` projections).
pub(crate) fn add_attention(store: &mut ParamStore, rng: &mut RngStream, name: &str, d: usize) -> Result<(), TensorError> {
    for proj in ["q", "k", "v", "o"] {
        add_linear(store, rng, &format!("{name}.{proj}"), d, d, INIT_STD)?;
    }
    Ok(())
}

pub(crate) fn add_ffn(store: &mut ParamStore, rng: &mut RngStream, name: &str, d: usize, hidden: usize) -> Result<(), TensorError> {
    add_linear(store, rng, &format!("{name}.up"), d, hidden, INIT_STD)?;
    add_linear(store, rng, &format!("{name}.down"), hidden, d, INIT_STD)
}

pub(crate) struct AttnInputs {
    pub q_segments: Vec<Segment>,
    pub k_segments: Vec<Segment>,
    pub causal: bool,
    pub key_mask: Option<Vec<bool>>,
}

/// Multi-head attention from `x` (queries) onto `ctx` (keys/values).
pub(crate) fn attention<T: Real>(
    g: &mut Graph<T>,
    p: &ParamStore<T>,
    name: &str,
    heads: usize,
    x: Var,
    ctx: Var,
    layout: &AttnInputs,
) -> Result<Var, TensorError> {
    let q = linear(g, p, &format!("{name}.q"), x)?;
    let k = linear(g, p, &format!("{name}.k"), ctx)?;
    let v = linear(g, p, &format!("{name}.v"), ctx)?;
    let spec = AttentionSpec {
        heads,
        q_segments: layout.q_segments.clone(),
        k_segments: layout.k_segments.clone(),
        causal: layout.causal,
        key_mask: layout.key_mask.clone(),
    };
    let a = g.apply(Primitive::Attention(spec), &[q, k, v])?;
    linear(g, p, &format!("{name}.o"), a)
}

pub(crate) fn ffn<T: Real>(g: &mut Graph<T>, p: &ParamStore<T>, name: &str, x: Var) -> Result<Var, TensorError> {
    let h = linear(g, p, &format!("{name}.up"), x)?;
    let h = g.activation(h, Nonlinearity::Gelu)?;
    linear(g, p, &format!("{name}.down"), h)
}

/// `x + attn(ln1(x))`, optional cross-attention, then `+ ffn(ln2(.))`.
#[allow(clippy::too_many_arguments)]
pub(crate) fn block<T: Real>(
    g: &mut Graph<T>,
    p: &ParamStore<T>,
    name: &str,
    heads: usize,
    x: Var,
    self_layout: &AttnInputs,
    cross: Option<(Var, &AttnInputs)>,
) -> Result<Var, TensorError> {
    let h = layer_norm(g, p, &format!("{name}.ln1"), x)?;
    let a = attention(g, p, &format!("{name}.attn"), heads, h, h, self_layout)?;
    let mut x = g.add(x, a)?;
    if let Some((ctx, layout)) = cross {
        let h = layer_norm(g, p, &format!("{name}.lnx"), x)?;
        let a = attention(g, p, &format!("{name}.xattn"), heads, h, ctx, layout)?;
        x = g.add(x, a)?;
    }
    let h = layer_norm(g, p, &format!("{name}.ln2"), x)?;
    let f = ffn(g, p, &format!("{name}.ffn"), h)?;
    g.add(x, f)
}

pub(crate) fn add_block(
    store: &mut ParamStore,
    rng: &mut RngStream,
    name: &str,
    d: usize,
    ff_hidden: usize,
    cross: bool,
) -> Result<(), TensorError> {
    add_layer_norm(store, &format!("{name}.ln1"), d)?;
    add_attention(store, rng, &format!("{name}.attn"), d)?;
    if cross {
        add_layer_norm(store, &format!("{name}.lnx"), d)?;
        add_attention(store, rng, &format!("{name}.xattn"), d)?;
    }
    add_layer_norm(store, &format!("{name}.ln2"), d)?;
    add_ffn(store, rng, &format!("{name}.ffn"), d, ff_hidden)
}

/// Row positions `0..len` for every segment, concatenated.
pub(crate) fn positions(segments: &[Segment]) -> Vec<usize> {
    segments.iter().flat_map(|s| 0..s.len).collect()
}
