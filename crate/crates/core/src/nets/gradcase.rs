//! End-to-end gradient-check case for the bridge objectives.

use super::bridge::BridgeParams;
use super::compose::{composed_loss, BridgeRows, HiddenSeq, Mode, Prefix, TrainItem};
use super::{special, EncoderParams, LmParams, MappingVariant, NetError, TransformerDims};
use crate::tensorcore::{
    grad_check, GradCheckConfig, GradCheckReport, Graph, ParamStore, Real, RngStream, Segment, Var,
};

/// Small frozen encoder and LM with a trainable bridge, evaluated on a random
/// ragged batch in either composition mode.
pub struct ComposedLossCase {
    mode: Mode,
    enc: EncoderParams,
    lm: LmParams,
    variant: MappingVariant,
    d_in: usize,
    queries: Vec<Vec<usize>>,
    natives: Vec<Vec<usize>>,
    targets: Vec<Vec<usize>>,
}

const ENC_VOCAB: usize = 23;
const LM_VOCAB: usize = 19;

impl ComposedLossCase {
    pub fn new(mode: Mode, variant: MappingVariant, seed: u64) -> Result<(Self, ParamStore), NetError> {
        let root = RngStream::new(seed).fork("composed-grad-case");
        let enc_dims = TransformerDims { d_model: 12, layers: 2, heads: 2, ff_mult: 2, max_positions: 16 };
        let lm_dims = TransformerDims { d_model: 16, layers: 2, heads: 2, ff_mult: 2, max_positions: 32 };
        let mut enc = EncoderParams::init(enc_dims, ENC_VOCAB, &mut root.fork("enc"))?;
        let mut lm = LmParams::init(lm_dims, LM_VOCAB, &mut root.fork("lm"))?;
        enc.store.set_trainable(false);
        lm.store.set_trainable(false);
        let mut bridge = BridgeParams::init(variant, enc.dims.d_model, &lm, &mut root.fork("bridge"))?;
        let mut data = root.fork("data");
        let draw = |lo: usize, hi: usize, n: usize, rng: &mut RngStream| -> Vec<usize> {
            (0..n).map(|_| lo + rng.below(hi - lo)).collect()
        };
        let mut queries = Vec::new();
        let mut natives = Vec::new();
        let mut targets = Vec::new();
        for len in [3usize, 5, 2] {
            queries.push(draw(special::COUNT, ENC_VOCAB, len, &mut data));
            natives.push(draw(special::COUNT, LM_VOCAB, len, &mut data));
            let m = 2 + data.below(3);
            targets.push(draw(special::COUNT, LM_VOCAB, m, &mut data));
        }
        let srcs: Vec<&[usize]> = queries.iter().map(Vec::as_slice).collect();
        let x = enc.encode_batch(&srcs)?;
        reshape_bridge(&mut bridge, &x, &mut root.fork("reshape"))?;
        let variant_p = bridge.variant;
        let d_in = bridge.d_in;
        let mut store = ParamStore::new();
        for p in enc.store.iter().chain(lm.store.iter()).chain(bridge.store.iter()) {
            store.insert(p.clone())?;
        }
        Ok((Self { mode, enc, lm, variant: variant_p, d_in, queries, natives, targets }, store))
    }
}

/// Distance kept between every ReLU pre-activation and the kink at zero, so
/// finite differences never straddle it.
const KINK_MARGIN: f64 = 0.05;

/// Re-draws bridge weights and `sep` at unit scale and shifts hidden biases until no
/// hidden pre-activation on this batch lies within the kink margin.
fn reshape_bridge(bridge: &mut BridgeParams, x: &[HiddenSeq], rng: &mut RngStream) -> Result<(), NetError> {
    let layers = bridge.layers();
    let mut h: Vec<Vec<f64>> = x
        .iter()
        .flat_map(|s| (0..s.len()).map(move |r| s.values.row(r).iter().map(|&v| v as f64).collect()))
        .collect();
    for i in 0..layers {
        let w = bridge.store.get_mut(&format!("bridge.map.{i}.w"))?;
        let (din, dout) = (w.tensor.rows(), w.tensor.cols());
        let std = 1.0 / (din as f64).sqrt();
        w.tensor.data_mut().iter_mut().for_each(|v| *v = (std * rng.normal()) as f32);
        let w: Vec<f64> = w.tensor.data().iter().map(|&v| v as f64).collect();
        let b = bridge.store.get_mut(&format!("bridge.map.{i}.b"))?;
        b.tensor.data_mut().iter_mut().for_each(|v| *v = (0.3 * rng.normal()) as f32);
        let z = |row: &[f64], j: usize, bias: f32| -> f64 {
            row.iter().enumerate().map(|(k, &v)| v * w[k * dout + j]).sum::<f64>() + bias as f64
        };
        if i + 1 < layers {
            for j in 0..dout {
                while h.iter().any(|row| z(row, j, b.tensor.data()[j]).abs() < KINK_MARGIN) {
                    b.tensor.data_mut()[j] += KINK_MARGIN as f32;
                }
            }
        }
        let bias: Vec<f32> = b.tensor.data().to_vec();
        h = h
            .iter()
            .map(|row| {
                (0..dout)
                    .map(|j| {
                        let v = z(row, j, bias[j]);
                        if i + 1 < layers { v.max(0.0) } else { v }
                    })
                    .collect()
            })
            .collect();
        let _ = din;
    }
    let sep = bridge.store.get_mut(super::bridge::SEP_NAME)?;
    sep.tensor.data_mut().iter_mut().for_each(|v| *v = rng.normal() as f32);
    Ok(())
}

fn pick<T: Real>(all: &ParamStore<T>, prefix: &str) -> Result<ParamStore<T>, NetError> {
    let mut out = ParamStore::new();
    for p in all.iter().filter(|p| p.name.starts_with(prefix)) {
        out.insert(p.clone())?;
    }
    Ok(out)
}

impl crate::tensorcore::LossBuilder for ComposedLossCase {
    type Error = NetError;

    fn build<T: Real>(&self, g: &mut Graph<T>, params: &ParamStore<T>) -> Result<Var, NetError> {
        let enc = EncoderParams { dims: self.enc.dims.clone(), vocab: self.enc.vocab, store: pick(params, "enc.")? };
        let lm = LmParams { dims: self.lm.dims.clone(), vocab: self.lm.vocab, store: pick(params, "lm.")? };
        let bridge = BridgeParams { variant: self.variant, d_in: self.d_in, d_out: lm.d_model(), store: pick(params, "bridge.")? };
        let srcs: Vec<&[usize]> = self.queries.iter().map(Vec::as_slice).collect();
        let (x, segments) = enc.forward(g, &srcs)?;
        let mapped = bridge.map(g, x)?;
        let sep = bridge.sep(g)?;
        let items: Vec<TrainItem> = segments
            .iter()
            .zip(&self.natives)
            .zip(&self.targets)
            .map(|((s, t), y): ((&Segment, _), _)| TrainItem {
                prefix: Prefix {
                    mapped: Some(*s),
                    native: if self.mode == Mode::Augmented { t.as_slice() } else { &[] },
                },
                target: y.as_slice(),
            })
            .collect();
        composed_loss(g, &lm, Some(BridgeRows { mapped, sep }), &items)
    }
}

/// Grad-checks the composed objective for one mode and seed.
pub fn check_composed_loss(mode: Mode, variant: MappingVariant, seed: u64) -> Result<GradCheckReport, NetError> {
    let (case, store) = ComposedLossCase::new(mode, variant, seed)?;
    grad_check(&case, &store, &GradCheckConfig { eps: 1e-3, coords_per_param: 24, seed })
}
