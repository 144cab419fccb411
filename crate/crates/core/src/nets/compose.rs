//! Soft-prefix composition and the LM objectives over it.
//!
//! Every LM input is built by one row gather from a source matrix
//! `[token table; sep; mapped rows]`, so token rows, the boundary vector and
//! mapped states all receive gradients through the same path.

use serde::{Deserialize, Serialize};

use super::{check_ids, special, BridgeParams, LmParams, NetError, Result};
use crate::tensorcore::{Graph, Real, Segment, Tensor, Var};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Space {
    Encoder,
    Llm,
}

/// `X` are encoder states, `Mapped` is X̃, `Native` is the LM's own embedding T.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Role {
    X,
    Mapped,
    Native,
}

#[derive(Clone, Debug, PartialEq)]
pub struct HiddenSeq {
    pub values: Tensor,
    pub space: Space,
    pub role: Role,
    pub lang: Option<usize>,
    pub source_len: usize,
}

impl HiddenSeq {
    pub fn new(values: Tensor, space: Space, role: Role) -> Result<Self> {
        let want = if role == Role::X { Space::Encoder } else { Space::Llm };
        if space != want {
            return Err(NetError::WrongTag { expected: format!("{role:?} in {want:?} space"), got: format!("{space:?}") });
        }
        if values.shape().len() != 2 || values.rows() == 0 {
            return Err(NetError::Empty("hidden sequence"));
        }
        let source_len = values.rows();
        Ok(Self { values, space, role, lang: None, source_len })
    }

    pub fn with_lang(mut self, lang: usize) -> Self {
        self.lang = Some(lang);
        self
    }

    pub fn len(&self) -> usize {
        self.values.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn dim(&self) -> usize {
        self.values.cols()
    }

    pub(crate) fn tag(&self) -> String {
        format!("{:?} in {:?} space", self.role, self.space)
    }

    /// Mean over positions.
    pub fn mean_pool(&self) -> Vec<f64> {
        let mut out = vec![0f64; self.dim()];
        for r in 0..self.len() {
            for (o, &v) in out.iter_mut().zip(self.values.row(r)) {
                *o += v as f64;
            }
        }
        let n = self.len() as f64;
        out.iter_mut().for_each(|o| *o /= n);
        out
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Mode {
    Augmented,
    Replacement,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum SegmentKind {
    Bos,
    Mapped,
    Sep,
    Native,
}

/// Ordered segment boundaries of a composed sequence.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Layout {
    pub parts: Vec<(SegmentKind, Segment)>,
}

impl Layout {
    pub fn augmented(l_x: usize, l_t: usize) -> Self {
        Self::build(&[(SegmentKind::Bos, 1), (SegmentKind::Mapped, l_x), (SegmentKind::Sep, 1), (SegmentKind::Native, l_t)])
    }

    pub fn replacement(l_x: usize) -> Self {
        Self::build(&[(SegmentKind::Bos, 1), (SegmentKind::Mapped, l_x), (SegmentKind::Sep, 1)])
    }

    fn build(spec: &[(SegmentKind, usize)]) -> Self {
        let mut start = 0;
        let parts = spec
            .iter()
            .map(|&(k, len)| {
                let s = Segment::new(start, len);
                start += len;
                (k, s)
            })
            .collect();
        Self { parts }
    }

    pub fn len(&self) -> usize {
        self.parts.iter().map(|(_, s)| s.len).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn kinds(&self) -> Vec<SegmentKind> {
        self.parts.iter().map(|(k, _)| *k).collect()
    }

    pub fn get(&self, kind: SegmentKind) -> Option<Segment> {
        self.parts.iter().find(|(k, _)| *k == kind).map(|(_, s)| *s)
    }
}

/// Embedded LM input: `[bos; X̃; sep]`, optionally followed by `T`.
#[derive(Clone, Debug, PartialEq)]
pub struct ComposedSequence {
    pub values: Tensor,
    pub layout: Layout,
    pub mode: Mode,
}

impl ComposedSequence {
    pub fn len(&self) -> usize {
        self.values.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

fn expect_role(h: &HiddenSeq, role: Role, d: usize) -> Result<()> {
    if h.role != role || h.space != Space::Llm {
        return Err(NetError::WrongTag { expected: format!("{role:?} in Llm space"), got: h.tag() });
    }
    if h.dim() != d {
        return Err(NetError::Dim(format!("expected width {d}, got {}", h.dim())));
    }
    Ok(())
}

fn compose(x_mapped: &HiddenSeq, native: Option<&HiddenSeq>, sigma: &BridgeParams, phi: &LmParams) -> Result<ComposedSequence> {
    let d = phi.d_model();
    expect_role(x_mapped, Role::Mapped, d)?;
    if let Some(t) = native {
        expect_role(t, Role::Native, d)?;
    }
    if sigma.d_out != d {
        return Err(NetError::Dim(format!("bridge emits width {}, lm expects {d}", sigma.d_out)));
    }
    let (layout, mode) = match native {
        Some(t) => (Layout::augmented(x_mapped.len(), t.len()), Mode::Augmented),
        None => (Layout::replacement(x_mapped.len()), Mode::Replacement),
    };
    let len = layout.len();
    if len > phi.dims.max_positions {
        return Err(NetError::TooLong { len, max: phi.dims.max_positions });
    }
    let mut data = Vec::with_capacity(len * d);
    data.extend_from_slice(phi.embedding_row(special::BOS)?);
    data.extend_from_slice(x_mapped.values.data());
    data.extend_from_slice(sigma.sep_row()?);
    if let Some(t) = native {
        data.extend_from_slice(t.values.data());
    }
    Ok(ComposedSequence { values: Tensor::new(vec![len, d], data)?, layout, mode })
}

/// `[bos; X̃; sep; T]`.
pub fn compose_augmented(
    x_mapped: &HiddenSeq,
    t: &HiddenSeq,
    sigma: &BridgeParams,
    phi: &LmParams,
) -> Result<ComposedSequence> {
    compose(x_mapped, Some(t), sigma, phi)
}

/// `[bos; X̃; sep]`.
pub fn compose_replacement(x_mapped: &HiddenSeq, sigma: &BridgeParams, phi: &LmParams) -> Result<ComposedSequence> {
    compose(x_mapped, None, sigma, phi)
}

/// Teacher-forced mean NLL of `y` after a materialized prefix.
pub fn lm_loss(prefix: &ComposedSequence, y: &[usize], phi: &LmParams) -> Result<f32> {
    if y.is_empty() {
        return Err(NetError::Empty("target"));
    }
    check_ids(y, phi.vocab)?;
    let lp = prefix.len();
    if lp + y.len() > phi.dims.max_positions {
        return Err(NetError::TooLong { len: lp + y.len(), max: phi.dims.max_positions });
    }
    let mut g = Graph::inference();
    let table = phi.token_table(&mut g)?;
    let rows = g.constant(prefix.values.clone());
    let source = g.concat_rows(&[table, rows])?;
    let v = phi.vocab;
    let mut seq: Vec<usize> = (v..v + lp).collect();
    seq.extend_from_slice(&y[..y.len() - 1]);
    let out_rows = (lp - 1..lp - 1 + y.len()).collect();
    let logits = phi.logits(&mut g, source, &[seq], out_rows)?;
    let loss = g.cross_entropy(logits, y.to_vec())?;
    Ok(g.scalar(loss))
}

/// Prefix of one training item. With `mapped` set the item reads
/// `[bos; X̃; sep; native]` (replacement when `native` is empty); without it
/// the item is a plain LM input `[bos; native]`.
#[derive(Clone, Copy, Debug)]
pub struct Prefix<'a> {
    pub mapped: Option<Segment>,
    pub native: &'a [usize],
}

#[derive(Clone, Copy, Debug)]
pub struct TrainItem<'a> {
    pub prefix: Prefix<'a>,
    pub target: &'a [usize],
}

/// Graph handles for the bridge-side rows of the source matrix.
#[derive(Clone, Copy, Debug)]
pub struct BridgeRows {
    /// Stacked X̃ rows referenced by [`Prefix::mapped`].
    pub mapped: Var,
    pub sep: Var,
}

/// Mean NLL over all target tokens of a ragged batch.
pub fn composed_loss<T: Real>(
    g: &mut Graph<T>,
    phi: &LmParams<T>,
    bridge: Option<BridgeRows>,
    items: &[TrainItem],
) -> Result<Var> {
    if items.is_empty() {
        return Err(NetError::Empty("batch"));
    }
    let v = phi.vocab;
    let table = phi.token_table(g)?;
    let (source, mapped_rows) = match bridge {
        Some(b) => {
            let n = g.value(b.mapped).rows();
            if g.value(b.mapped).cols() != phi.d_model() {
                return Err(NetError::Dim(format!("mapped width {} vs lm {}", g.value(b.mapped).cols(), phi.d_model())));
            }
            (g.concat_rows(&[table, b.sep, b.mapped])?, n)
        }
        None => (table, 0),
    };
    let mut seqs = Vec::with_capacity(items.len());
    let mut out_rows = Vec::new();
    let mut targets = Vec::new();
    let mut offset = 0;
    for item in items {
        if item.target.is_empty() {
            return Err(NetError::Empty("target"));
        }
        check_ids(item.prefix.native, v)?;
        check_ids(item.target, v)?;
        let mut seq = vec![special::BOS];
        if let Some(seg) = item.prefix.mapped {
            if bridge.is_none() {
                return Err(NetError::Config("mapped prefix without bridge rows".into()));
            }
            if seg.len == 0 || seg.end() > mapped_rows {
                return Err(NetError::Dim(format!("mapped segment {seg:?} outside {mapped_rows} rows")));
            }
            seq.extend(v + 1 + seg.start..v + 1 + seg.end());
            seq.push(v);
        }
        seq.extend_from_slice(item.prefix.native);
        let lp = seq.len();
        let m = item.target.len();
        if lp + m > phi.dims.max_positions {
            return Err(NetError::TooLong { len: lp + m, max: phi.dims.max_positions });
        }
        seq.extend_from_slice(&item.target[..m - 1]);
        out_rows.extend(offset + lp - 1..offset + lp - 1 + m);
        targets.extend_from_slice(item.target);
        offset += seq.len();
        seqs.push(seq);
    }
    let logits = phi.logits(g, source, &seqs, out_rows)?;
    Ok(g.cross_entropy(logits, targets)?)
}

/// Greedy decoding from one composed prefix.
pub fn greedy_decode(prefix: &ComposedSequence, phi: &LmParams, max_new: usize) -> Result<Vec<usize>> {
    Ok(greedy_decode_batch(phi, &[&prefix.values], max_new)?.pop().expect("one prefix"))
}

/// Greedy decoding of a batch of embedded prefixes (`len × d2` each).
///
/// Each output ends at the first `EOS` (included), at `max_new` tokens, or
/// when the LM's position limit is reached. Ties go to the lowest token id.
pub fn greedy_decode_batch(phi: &LmParams, prefixes: &[&Tensor], max_new: usize) -> Result<Vec<Vec<usize>>> {
    let d = phi.d_model();
    let v = phi.vocab;
    let max_pos = phi.dims.max_positions;
    let mut base = Vec::with_capacity(prefixes.len());
    let mut rows = Vec::new();
    for p in prefixes {
        if p.shape().len() != 2 || p.rows() == 0 || p.cols() != d {
            return Err(NetError::Dim(format!("prefix shape {:?}, lm width {d}", p.shape())));
        }
        if p.rows() > max_pos {
            return Err(NetError::TooLong { len: p.rows(), max: max_pos });
        }
        let start = v + rows.len() / d;
        base.push((start..start + p.rows()).collect::<Vec<_>>());
        rows.extend_from_slice(p.data());
    }
    let prefix_rows = Tensor::new(vec![rows.len() / d, d], rows)?;
    let mut outputs: Vec<Vec<usize>> = vec![Vec::new(); prefixes.len()];
    let mut active: Vec<usize> = (0..prefixes.len()).collect();
    for _ in 0..max_new {
        active.retain(|&i| base[i].len() + outputs[i].len() < max_pos);
        if active.is_empty() {
            break;
        }
        let mut g = Graph::inference();
        let table = phi.token_table(&mut g)?;
        let pr = g.constant(prefix_rows.clone());
        let source = g.concat_rows(&[table, pr])?;
        let mut seqs = Vec::with_capacity(active.len());
        let mut out_rows = Vec::with_capacity(active.len());
        let mut offset = 0;
        for &i in &active {
            let mut s = base[i].clone();
            s.extend_from_slice(&outputs[i]);
            offset += s.len();
            out_rows.push(offset - 1);
            seqs.push(s);
        }
        let logits = phi.logits(&mut g, source, &seqs, out_rows)?;
        let lv = g.value(logits);
        for (r, &i) in active.iter().enumerate() {
            outputs[i].push(argmax(lv.row(r)));
        }
        active.retain(|&i| outputs[i].last() != Some(&special::EOS));
    }
    Ok(outputs)
}

/// Index of the largest value; the lowest index wins ties.
pub fn argmax(row: &[f32]) -> usize {
    let mut best = 0;
    for (i, &x) in row.iter().enumerate() {
        if x > row[best] {
            best = i;
        }
    }
    best
}
