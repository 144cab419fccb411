use std::collections::BTreeMap;

use super::{Gradients, ParamStore, TensorError};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AdamHyper {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl AdamHyper {
    pub fn with_lr(lr: f64) -> Self {
        Self { lr, ..Self::default() }
    }
}

impl Default for AdamHyper {
    fn default() -> Self {
        Self { lr: 1e-3, beta1: 0.9, beta2: 0.999, eps: 1e-8 }
    }
}

#[derive(Clone, Debug)]
struct Moments {
    m: Vec<f32>,
    v: Vec<f32>,
}

/// Bias-corrected Adam with per-parameter moment buffers.
#[derive(Clone, Debug, Default)]
pub struct AdamState {
    moments: BTreeMap<String, Moments>,
    t: u64,
}

impl AdamState {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn steps(&self) -> u64 {
        self.t
    }

    /// Names of parameters the optimizer has touched so far.
    pub fn visible_params(&self) -> impl Iterator<Item = &str> {
        self.moments.keys().map(String::as_str)
    }

    /// Applies one update to every trainable parameter present in `grads`.
    ///
    /// A gradient for a frozen or unknown parameter is rejected before any
    /// parameter is touched.
    pub fn step(
        &mut self,
        params: &mut [&mut ParamStore],
        grads: &Gradients,
        hyper: &AdamHyper,
    ) -> Result<(), TensorError> {
        if !(hyper.lr > 0.0 && hyper.beta1 > 0.0 && hyper.beta2 > 0.0 && hyper.eps > 0.0) {
            return Err(TensorError::Invalid(format!("adam hyperparameters must be positive: {hyper:?}")));
        }
        for (name, g) in grads {
            let p = params
                .iter()
                .find_map(|s| s.get(name).ok())
                .ok_or_else(|| TensorError::UnknownParameter(name.clone()))?;
            if !p.trainable {
                return Err(TensorError::FrozenGradient(name.clone()));
            }
            if p.tensor.shape() != g.shape() {
                return Err(TensorError::ShapeMismatch {
                    primitive: "adam",
                    detail: format!("`{name}` is {:?}, gradient is {:?}", p.tensor.shape(), g.shape()),
                });
            }
            if !g.all_finite() {
                return Err(TensorError::NonFiniteGradient(name.clone()));
            }
        }
        self.t += 1;
        let t = self.t as i32;
        let bc1 = 1.0 - hyper.beta1.powi(t);
        let bc2 = 1.0 - hyper.beta2.powi(t);
        let (b1, b2) = (hyper.beta1 as f32, hyper.beta2 as f32);
        let step = (hyper.lr / bc1) as f32;
        let inv_bc2 = (1.0 / bc2) as f32;
        let eps = hyper.eps as f32;
        for (name, g) in grads {
            let p = params.iter_mut().find_map(|s| s.get_mut(name).ok()).expect("validated above");
            let n = g.len();
            let mo = self
                .moments
                .entry(name.clone())
                .or_insert_with(|| Moments { m: vec![0.0; n], v: vec![0.0; n] });
            for (((w, &gi), m), v) in p.tensor.data_mut().iter_mut().zip(g.data()).zip(&mut mo.m).zip(&mut mo.v) {
                *m = b1 * *m + (1.0 - b1) * gi;
                *v = b2 * *v + (1.0 - b2) * gi * gi;
                *w -= step * *m / ((*v * inv_bc2).sqrt() + eps);
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensorcore::{Graph, Parameter, Tensor};

    fn store(w: f32, trainable: bool) -> ParamStore {
        let mut s = ParamStore::new();
        s.insert(Parameter::new("w", Tensor::scalar(w), trainable)).unwrap();
        s
    }

    #[test]
    fn first_step_is_sign_scaled() {
        let mut s = store(1.0, true);
        let mut grads = Gradients::new();
        grads.insert("w".into(), Tensor::scalar(0.5));
        let mut adam = AdamState::new();
        let hyper = AdamHyper::with_lr(0.01);
        adam.step(&mut [&mut s], &grads, &hyper).unwrap();
        let expected = 1.0 - 0.01 * 0.5 / (0.5 + 1e-8);
        assert!((s.get("w").unwrap().tensor.data()[0] as f64 - expected).abs() < 1e-6);
        assert_eq!(adam.steps(), 1);
    }

    #[test]
    fn converges_on_convex_quadratic() {
        let mut s = store(0.0, true);
        let mut adam = AdamState::new();
        let hyper = AdamHyper::with_lr(0.1);
        for _ in 0..500 {
            let mut g = Graph::<f32>::new();
            let w = g.param(s.get("w").unwrap());
            let c = g.constant(Tensor::scalar(-3.0));
            let d = g.add(w, c).unwrap();
            let sq = g.mul(d, d).unwrap();
            let loss = g.apply(crate::tensorcore::Primitive::Sum, &[sq]).unwrap();
            let grads = g.backward(loss).unwrap();
            adam.step(&mut [&mut s], &grads, &hyper).unwrap();
        }
        let w = s.get("w").unwrap().tensor.data()[0];
        assert!((w - 3.0).abs() < 0.01, "w = {w}");
    }

    #[test]
    fn frozen_gradient_is_rejected_and_nothing_moves() {
        let mut s = store(2.0, false);
        let mut grads = Gradients::new();
        grads.insert("w".into(), Tensor::scalar(1.0));
        let mut adam = AdamState::new();
        let err = adam.step(&mut [&mut s], &grads, &AdamHyper::default()).unwrap_err();
        assert!(matches!(err, TensorError::FrozenGradient(_)));
        assert_eq!(s.get("w").unwrap().tensor.data()[0].to_bits(), 2.0f32.to_bits());
        assert_eq!(adam.steps(), 0);
    }
}
