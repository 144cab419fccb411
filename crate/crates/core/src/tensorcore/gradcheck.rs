//! Central-difference gradient checking.
//!
//! The analytic gradient comes from the `f32` tape, i.e. the path training
//! uses. The finite-difference oracle re-evaluates the same builder in `f64`
//! so that rounding noise in the loss does not swamp the quotient.

use super::{Graph, ParamStore, Real, RngStream, TensorError, Var};

/// Deterministic constructor of a scalar loss over a parameter store.
pub trait LossBuilder {
    type Error: From<TensorError>;

    fn build<T: Real>(&self, g: &mut Graph<T>, params: &ParamStore<T>) -> Result<Var, Self::Error>;
}

#[derive(Clone, Copy, Debug)]
pub struct GradCheckConfig {
    pub eps: f64,
    /// Coordinates sampled per trainable parameter (all of them if fewer).
    pub coords_per_param: usize,
    pub seed: u64,
}

impl Default for GradCheckConfig {
    fn default() -> Self {
        Self { eps: 1e-3, coords_per_param: 16, seed: 0 }
    }
}

#[derive(Clone, Debug, Default)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    pub coords_checked: usize,
    pub worst: Option<(String, usize)>,
    /// Analytic and numeric derivative at the worst coordinate.
    pub worst_values: (f64, f64),
}

pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-8)
}

fn eval<T: Real, B: LossBuilder>(builder: &B, params: &ParamStore<T>) -> Result<f64, B::Error> {
    let mut g = Graph::<T>::new();
    let loss = builder.build(&mut g, params)?;
    if !g.value(loss).is_scalar() {
        return Err(TensorError::NonScalarLoss(g.value(loss).shape().to_vec()).into());
    }
    Ok(g.scalar(loss).as_f64())
}

/// Max relative error between analytic and central-difference gradients over
/// sampled coordinates of every trainable parameter.
pub fn grad_check<B: LossBuilder>(
    builder: &B,
    params: &ParamStore<f32>,
    cfg: &GradCheckConfig,
) -> Result<GradCheckReport, B::Error> {
    if !(cfg.eps > 0.0) {
        return Err(TensorError::Invalid(format!("eps must be positive, got {}", cfg.eps)).into());
    }
    let first = eval(builder, params)?;
    let second = eval(builder, params)?;
    if first.to_bits() != second.to_bits() {
        return Err(TensorError::NonDeterministic(format!("loss {first} then {second} at identical inputs")).into());
    }

    let mut g = Graph::<f32>::new();
    let loss = builder.build(&mut g, params)?;
    let grads = g.backward(loss)?;

    let mut wide = params.cast::<f64>();
    let mut rng = RngStream::new(cfg.seed);
    let mut report = GradCheckReport::default();
    let names: Vec<String> = params.iter().filter(|p| p.trainable).map(|p| p.name.clone()).collect();
    for name in names {
        let n = params.get(&name)?.tensor.len();
        let coords: Vec<usize> = if n <= cfg.coords_per_param {
            (0..n).collect()
        } else {
            let mut p = rng.permutation(n);
            p.truncate(cfg.coords_per_param);
            p
        };
        for c in coords {
            let analytic = grads.get(&name).map_or(0.0, |t| t.data()[c] as f64);
            let orig = wide.get(&name)?.tensor.data()[c];
            wide.get_mut(&name)?.tensor.data_mut()[c] = orig + cfg.eps;
            let plus = eval(builder, &wide)?;
            wide.get_mut(&name)?.tensor.data_mut()[c] = orig - cfg.eps;
            let minus = eval(builder, &wide)?;
            wide.get_mut(&name)?.tensor.data_mut()[c] = orig;
            let numeric = (plus - minus) / (2.0 * cfg.eps);
            let err = relative_error(analytic, numeric);
            report.coords_checked += 1;
            if report.worst.is_none() || err > report.max_rel_error {
                report.max_rel_error = err;
                report.worst = Some((name.clone(), c));
                report.worst_values = (analytic, numeric);
            }
        }
    }
    Ok(report)
}
