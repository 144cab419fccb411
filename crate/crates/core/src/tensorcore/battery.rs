//! Randomized per-primitive gradient-check cases.
//!
//! Each case builds small random inputs for one primitive and reduces its
//! output to a scalar with a fixed random weighting, so every output element
//! contributes a distinct sensitivity.

use super::{
    grad_check, AttentionSpec, GradCheckConfig, GradCheckReport, Graph, LossBuilder, Nonlinearity, ParamStore,
    Primitive, PrimitiveKind, Real, RngStream, Segment, TensorError, Var,
};

pub struct PrimitiveCase {
    pub kind: PrimitiveKind,
    seed: u64,
    targets: Vec<usize>,
    ids: Vec<usize>,
    mask: Vec<bool>,
}

const ROWS: usize = 5;
const COLS: usize = 8;

impl PrimitiveCase {
    pub fn new(kind: PrimitiveKind, seed: u64) -> (Self, ParamStore) {
        let mut rng = RngStream::new(seed).fork(kind.name());
        let mut store = ParamStore::new();
        let add = |store: &mut ParamStore, rng: &mut RngStream, name: &str, shape: Vec<usize>| {
            store.add_normal(rng, name, shape, 1.0).expect("fresh names");
        };
        add(&mut store, &mut rng, "a", vec![ROWS, COLS]);
        match kind {
            PrimitiveKind::MatMul => add(&mut store, &mut rng, "b", vec![COLS, 6]),
            PrimitiveKind::Add | PrimitiveKind::Mul => {
                add(&mut store, &mut rng, "b", vec![ROWS, COLS]);
                add(&mut store, &mut rng, "bias", vec![COLS]);
            }
            PrimitiveKind::Concat => add(&mut store, &mut rng, "b", vec![3, COLS]),
            PrimitiveKind::LayerNorm => {
                add(&mut store, &mut rng, "gamma", vec![COLS]);
                add(&mut store, &mut rng, "beta", vec![COLS]);
            }
            PrimitiveKind::Attention => {
                add(&mut store, &mut rng, "k", vec![ROWS, COLS]);
                add(&mut store, &mut rng, "v", vec![ROWS, COLS]);
            }
            _ => {}
        }
        let w_rows = match kind {
            PrimitiveKind::Concat => ROWS + 3,
            PrimitiveKind::GatherRows => 4,
            PrimitiveKind::MeanPool => 2,
            _ => ROWS,
        };
        let w_cols = if kind == PrimitiveKind::MatMul { 6 } else { COLS };
        let mut w = ParamStore::<f32>::new();
        w.add_normal(&mut rng, "w", vec![w_rows, w_cols], 1.0).expect("fresh");
        let mut wp = w.get("w").expect("just added").clone();
        wp.trainable = false;
        store.insert(wp).expect("fresh");
        let targets = (0..ROWS).map(|_| rng.below(COLS)).collect();
        let ids = vec![2, 0, 4, 2];
        let mask = (0..ROWS * COLS).map(|_| rng.bernoulli(0.3)).collect();
        (Self { kind, seed, targets, ids, mask }, store)
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }
}

impl LossBuilder for PrimitiveCase {
    type Error = TensorError;

    fn build<T: Real>(&self, g: &mut Graph<T>, p: &ParamStore<T>) -> Result<Var, TensorError> {
        let a = g.param(p.get("a")?);
        let out = match self.kind {
            PrimitiveKind::MatMul => {
                let b = g.param(p.get("b")?);
                g.matmul(a, b)?
            }
            PrimitiveKind::Add | PrimitiveKind::Mul => {
                let b = g.param(p.get("b")?);
                let bias = g.param(p.get("bias")?);
                let prim = if self.kind == PrimitiveKind::Add { Primitive::Add } else { Primitive::Mul };
                let y = g.apply(prim.clone(), &[a, b])?;
                g.apply(prim, &[y, bias])?
            }
            PrimitiveKind::Scale => g.scale(a, -1.7)?,
            PrimitiveKind::Concat => {
                let b = g.param(p.get("b")?);
                g.concat_rows(&[a, b])?
            }
            PrimitiveKind::GatherRows => g.gather_rows(a, self.ids.clone())?,
            PrimitiveKind::Softmax => g.apply(Primitive::Softmax, &[a])?,
            PrimitiveKind::LogSoftmax => g.apply(Primitive::LogSoftmax, &[a])?,
            PrimitiveKind::LayerNorm => {
                let gamma = g.param(p.get("gamma")?);
                let beta = g.param(p.get("beta")?);
                g.layer_norm(a, gamma, beta)?
            }
            PrimitiveKind::Activation => {
                let t = g.activation(a, Nonlinearity::Gelu)?;
                g.activation(t, Nonlinearity::Tanh)?
            }
            PrimitiveKind::MaskedFill => g.apply(Primitive::MaskedFill { mask: self.mask.clone(), value: 0.25 }, &[a])?,
            PrimitiveKind::MeanPool => {
                g.apply(Primitive::MeanPool { segments: vec![Segment::new(0, 2), Segment::new(2, 3)] }, &[a])?
            }
            PrimitiveKind::Attention => {
                let k = g.param(p.get("k")?);
                let v = g.param(p.get("v")?);
                let spec = AttentionSpec {
                    heads: 2,
                    q_segments: vec![Segment::new(0, 2), Segment::new(2, 3)],
                    k_segments: vec![Segment::new(0, 2), Segment::new(2, 3)],
                    causal: true,
                    key_mask: Some(vec![false, false, false, true, false]),
                };
                g.apply(Primitive::Attention(spec), &[a, k, v])?
            }
            PrimitiveKind::CrossEntropy => return g.cross_entropy(a, self.targets.clone()),
            PrimitiveKind::Sum => return g.apply(Primitive::Sum, &[a]),
            PrimitiveKind::Mean => return g.apply(Primitive::Mean, &[a]),
        };
        let w = g.param(p.get("w")?);
        let weighted = g.mul(out, w)?;
        g.apply(Primitive::Sum, &[weighted])
    }
}

/// Grad-checks one primitive at one seed.
pub fn check_primitive(kind: PrimitiveKind, seed: u64, eps: f64) -> Result<GradCheckReport, TensorError> {
    let (case, store) = PrimitiveCase::new(kind, seed);
    grad_check(&case, &store, &GradCheckConfig { eps, coords_per_param: 64, seed })
}
