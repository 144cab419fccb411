//! Fused multi-head scaled dot-product attention over ragged batches.
//!
//! Queries of segment `i` attend only to keys of segment `i`, so a batch of
//! variable-length sequences is stacked row-wise without padding.

use super::graph::Segment;
use super::{Real, Tensor, TensorError};

#[derive(Clone, Debug, PartialEq)]
pub struct AttentionSpec {
    pub heads: usize,
    pub q_segments: Vec<Segment>,
    pub k_segments: Vec<Segment>,
    /// Query `j` of a segment sees keys `0..=j + (klen - qlen)`.
    pub causal: bool,
    /// `true` marks a key row that no query may attend to.
    pub key_mask: Option<Vec<bool>>,
}

impl AttentionSpec {
    pub fn self_attention(heads: usize, segments: Vec<Segment>, causal: bool) -> Self {
        Self { heads, q_segments: segments.clone(), k_segments: segments, causal, key_mask: None }
    }

    fn validate<T: Real>(&self, q: &Tensor<T>, k: &Tensor<T>, v: &Tensor<T>) -> Result<(), TensorError> {
        let err = |detail: String| TensorError::ShapeMismatch { primitive: "attention", detail };
        let d = q.cols();
        if k.cols() != d || v.cols() != d {
            return Err(err(format!("widths q={} k={} v={}", d, k.cols(), v.cols())));
        }
        if k.rows() != v.rows() {
            return Err(err(format!("key rows {} vs value rows {}", k.rows(), v.rows())));
        }
        if self.heads == 0 || !d.is_multiple_of(self.heads) {
            return Err(err(format!("width {d} not divisible by {} heads", self.heads)));
        }
        if self.q_segments.len() != self.k_segments.len() {
            return Err(err(format!("{} query segments vs {} key segments", self.q_segments.len(), self.k_segments.len())));
        }
        for (qs, ks) in self.q_segments.iter().zip(&self.k_segments) {
            if qs.end() > q.rows() || ks.end() > k.rows() {
                return Err(err(format!("segment {qs:?}/{ks:?} out of range")));
            }
            if self.causal && qs.len > ks.len {
                return Err(err(format!("causal segment has {} queries for {} keys", qs.len, ks.len)));
            }
        }
        if let Some(mask) = &self.key_mask {
            if mask.len() != k.rows() {
                return Err(err(format!("key mask of {} for {} keys", mask.len(), k.rows())));
            }
        }
        Ok(())
    }

    fn allowed(&self, qs: &Segment, ks: &Segment, i: usize, j: usize) -> bool {
        if self.causal && j > i + (ks.len - qs.len) {
            return false;
        }
        !self.key_mask.as_ref().is_some_and(|m| m[ks.start + j])
    }
}

pub(crate) fn attention_forward<T: Real>(
    spec: &AttentionSpec,
    q: &Tensor<T>,
    k: &Tensor<T>,
    v: &Tensor<T>,
    keep: bool,
) -> Result<(Tensor<T>, Vec<T>), TensorError> {
    spec.validate(q, k, v)?;
    let d = q.cols();
    let dh = d / spec.heads;
    let scale = T::lit(1.0 / (dh as f64).sqrt());
    let mut out = vec![T::zero(); q.rows() * d];
    let mut probs = Vec::new();
    let mut scores = Vec::new();
    for (qs, ks) in spec.q_segments.iter().zip(&spec.k_segments) {
        let (lq, lk) = (qs.len, ks.len);
        if lq == 0 {
            continue;
        }
        for h in 0..spec.heads {
            let q_off = qs.start * d + h * dh;
            let k_off = ks.start * d + h * dh;
            scores.clear();
            scores.resize(lq * lk, T::zero());
            T::gemm(lq, dh, lk, scale, &q.data()[q_off..], d as isize, 1, &k.data()[k_off..], 1, d as isize, T::zero(), &mut scores, lk as isize, 1);
            for i in 0..lq {
                let row = &mut scores[i * lk..(i + 1) * lk];
                let mut max = f64::NEG_INFINITY;
                for (j, s) in row.iter().enumerate() {
                    if spec.allowed(qs, ks, i, j) {
                        max = max.max(s.as_f64());
                    }
                }
                if max == f64::NEG_INFINITY {
                    row.iter_mut().for_each(|s| *s = T::zero());
                    continue;
                }
                let mut sum = 0.0f64;
                let mut ex = vec![0.0f64; lk];
                for (j, s) in row.iter().enumerate() {
                    if spec.allowed(qs, ks, i, j) {
                        ex[j] = (s.as_f64() - max).exp();
                        sum += ex[j];
                    }
                }
                for (s, e) in row.iter_mut().zip(ex) {
                    *s = T::lit(e / sum);
                }
            }
            T::gemm(lq, lk, dh, T::one(), &scores, lk as isize, 1, &v.data()[k_off..], d as isize, 1, T::zero(), &mut out[q_off..], d as isize, 1);
            if keep {
                probs.extend_from_slice(&scores);
            }
        }
    }
    Ok((Tensor::new(vec![q.rows(), d], out)?, probs))
}

type Grads3<T> = (Option<Vec<T>>, Option<Vec<T>>, Option<Vec<T>>);

pub(crate) fn attention_backward<T: Real>(
    spec: &AttentionSpec,
    q: &Tensor<T>,
    k: &Tensor<T>,
    v: &Tensor<T>,
    probs: &[T],
    g: &[T],
    needs: &[bool],
) -> Grads3<T> {
    let d = q.cols();
    let dh = d / spec.heads;
    let scale = T::lit(1.0 / (dh as f64).sqrt());
    let mut dq = needs[0].then(|| vec![T::zero(); q.len()]);
    let mut dk = needs[1].then(|| vec![T::zero(); k.len()]);
    let mut dv = needs[2].then(|| vec![T::zero(); v.len()]);
    let mut dp = Vec::new();
    let mut off = 0;
    for (qs, ks) in spec.q_segments.iter().zip(&spec.k_segments) {
        let (lq, lk) = (qs.len, ks.len);
        if lq == 0 {
            continue;
        }
        for h in 0..spec.heads {
            let p = &probs[off..off + lq * lk];
            off += lq * lk;
            let q_off = qs.start * d + h * dh;
            let k_off = ks.start * d + h * dh;
            let go = &g[q_off..];
            if let Some(dv) = dv.as_mut() {
                T::gemm(lk, lq, dh, T::one(), p, 1, lk as isize, go, d as isize, 1, T::one(), &mut dv[k_off..], d as isize, 1);
            }
            if dq.is_none() && dk.is_none() {
                continue;
            }
            dp.clear();
            dp.resize(lq * lk, T::zero());
            T::gemm(lq, dh, lk, T::one(), go, d as isize, 1, &v.data()[k_off..], 1, d as isize, T::zero(), &mut dp, lk as isize, 1);
            for i in 0..lq {
                let pr = &p[i * lk..(i + 1) * lk];
                let dr = &mut dp[i * lk..(i + 1) * lk];
                let dot: f64 = pr.iter().zip(dr.iter()).map(|(a, b)| a.as_f64() * b.as_f64()).sum();
                for (x, &pv) in dr.iter_mut().zip(pr) {
                    *x = T::lit(pv.as_f64() * (x.as_f64() - dot));
                }
            }
            if let Some(dq) = dq.as_mut() {
                T::gemm(lq, lk, dh, scale, &dp, lk as isize, 1, &k.data()[k_off..], d as isize, 1, T::one(), &mut dq[q_off..], d as isize, 1);
            }
            if let Some(dk) = dk.as_mut() {
                T::gemm(lk, lq, dh, scale, &dp, 1, lk as isize, &q.data()[q_off..], d as isize, 1, T::one(), &mut dk[k_off..], d as isize, 1);
            }
        }
    }
    (dq, dk, dv)
}
