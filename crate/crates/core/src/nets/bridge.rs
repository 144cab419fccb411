use super::blocks::{self, INIT_STD};
use super::compose::{HiddenSeq, Role, Space};
use super::{mapping_hidden, LmParams, MappingVariant, NetError, Result};
use crate::tensorcore::{Graph, Nonlinearity, ParamStore, Real, RngStream, Tensor, Var};

pub const SEP_NAME: &str = "bridge.sep";

/// Mapping layer plus the boundary vector (σ).
#[derive(Clone, Debug)]
pub struct BridgeParams<T: Real = f32> {
    pub variant: MappingVariant,
    pub d_in: usize,
    pub d_out: usize,
    pub store: ParamStore<T>,
}

impl BridgeParams<f32> {
    /// Fresh σ. `sep` starts at the mean embedding row of `lm` plus noise.
    pub fn init(variant: MappingVariant, d_in: usize, lm: &LmParams, rng: &mut RngStream) -> Result<Self> {
        let d_out = lm.d_model();
        if d_in == 0 {
            return Err(NetError::Config("bridge input width must be positive".into()));
        }
        let mut store = ParamStore::new();
        let widths = layer_widths(variant, d_in, d_out);
        for (i, w) in widths.windows(2).enumerate() {
            blocks::add_linear(&mut store, rng, &format!("bridge.map.{i}"), w[0], w[1], INIT_STD)?;
        }
        let table = &lm.store.get("lm.tok_emb")?.tensor;
        let mut mean = vec![0f64; d_out];
        for r in 0..table.rows() {
            for (m, &v) in mean.iter_mut().zip(table.row(r)) {
                *m += v as f64;
            }
        }
        let n = table.rows() as f64;
        let sep: Vec<f32> = mean.iter().map(|m| (m / n + INIT_STD * rng.normal()) as f32).collect();
        store.insert(crate::tensorcore::Parameter::new(SEP_NAME, Tensor::new(vec![1, d_out], sep)?, true))?;
        Ok(Self { variant, d_in, d_out, store })
    }

    /// Per-position mapping of encoder states into LM space.
    pub fn map_states(&self, x: &HiddenSeq) -> Result<HiddenSeq> {
        if x.space != Space::Encoder || x.role != Role::X {
            return Err(NetError::WrongTag { expected: "encoder-space X".into(), got: x.tag() });
        }
        if x.dim() != self.d_in {
            return Err(NetError::Dim(format!("bridge expects width {}, got {}", self.d_in, x.dim())));
        }
        let mut g = Graph::inference();
        let input = g.constant(x.values.clone());
        let out = self.map(&mut g, input)?;
        HiddenSeq::new(g.value(out).clone(), Space::Llm, Role::Mapped)
    }

    pub fn sep_row(&self) -> Result<&[f32]> {
        Ok(self.store.get(SEP_NAME)?.tensor.data())
    }
}

impl<T: Real> BridgeParams<T> {
    pub fn cast<U: Real>(&self) -> BridgeParams<U> {
        BridgeParams { variant: self.variant, d_in: self.d_in, d_out: self.d_out, store: self.store.cast() }
    }

    pub fn layers(&self) -> usize {
        layer_widths(self.variant, self.d_in, self.d_out).len() - 1
    }

    /// Records the mapping of stacked rows `x` (`n × d_in`) on `g`.
    pub fn map(&self, g: &mut Graph<T>, x: Var) -> Result<Var> {
        let layers = self.layers();
        let mut h = x;
        for i in 0..layers {
            h = blocks::linear(g, &self.store, &format!("bridge.map.{i}"), h)?;
            if i + 1 < layers {
                h = g.activation(h, Nonlinearity::Relu)?;
            }
        }
        Ok(h)
    }

    pub fn sep(&self, g: &mut Graph<T>) -> Result<Var> {
        Ok(g.param(self.store.get(SEP_NAME)?))
    }
}

fn layer_widths(variant: MappingVariant, d_in: usize, d_out: usize) -> Vec<usize> {
    let h = mapping_hidden(d_in, d_out);
    match variant {
        MappingVariant::Linear => vec![d_in, d_out],
        MappingVariant::Mlp2 => vec![d_in, h, d_out],
        MappingVariant::Mlp3 => vec![d_in, h, h, d_out],
    }
}
