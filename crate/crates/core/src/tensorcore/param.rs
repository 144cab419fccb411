use std::collections::BTreeMap;

use super::{Real, RngStream, Tensor, TensorError};

/// A named tensor with a trainable flag.
#[derive(Clone, Debug, PartialEq)]
pub struct Parameter<T: Real = f32> {
    pub name: String,
    pub tensor: Tensor<T>,
    pub trainable: bool,
}

impl<T: Real> Parameter<T> {
    pub fn new(name: impl Into<String>, tensor: Tensor<T>, trainable: bool) -> Self {
        Self { name: name.into(), tensor, trainable }
    }

    pub fn cast<U: Real>(&self) -> Parameter<U> {
        Parameter { name: self.name.clone(), tensor: self.tensor.cast(), trainable: self.trainable }
    }
}

/// Ordered collection of uniquely named parameters.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ParamStore<T: Real = f32> {
    params: Vec<Parameter<T>>,
    index: BTreeMap<String, usize>,
}

impl<T: Real> ParamStore<T> {
    pub fn new() -> Self {
        Self { params: Vec::new(), index: BTreeMap::new() }
    }

    pub fn insert(&mut self, param: Parameter<T>) -> Result<(), TensorError> {
        if self.index.contains_key(&param.name) {
            return Err(TensorError::DuplicateParameter(param.name));
        }
        self.index.insert(param.name.clone(), self.params.len());
        self.params.push(param);
        Ok(())
    }

    pub fn get(&self, name: &str) -> Result<&Parameter<T>, TensorError> {
        self.index
            .get(name)
            .map(|&i| &self.params[i])
            .ok_or_else(|| TensorError::UnknownParameter(name.to_string()))
    }

    pub fn get_mut(&mut self, name: &str) -> Result<&mut Parameter<T>, TensorError> {
        match self.index.get(name) {
            Some(&i) => Ok(&mut self.params[i]),
            None => Err(TensorError::UnknownParameter(name.to_string())),
        }
    }

    pub fn contains(&self, name: &str) -> bool {
        self.index.contains_key(name)
    }

    pub fn iter(&self) -> impl Iterator<Item = &Parameter<T>> {
        self.params.iter()
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = &mut Parameter<T>> {
        self.params.iter_mut()
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn set_trainable(&mut self, trainable: bool) {
        for p in &mut self.params {
            p.trainable = trainable;
        }
    }

    /// Total number of scalar entries across all parameters.
    pub fn numel(&self) -> usize {
        self.params.iter().map(|p| p.tensor.len()).sum()
    }

    pub fn trainable_numel(&self) -> usize {
        self.params.iter().filter(|p| p.trainable).map(|p| p.tensor.len()).sum()
    }

    pub fn cast<U: Real>(&self) -> ParamStore<U> {
        ParamStore { params: self.params.iter().map(Parameter::cast).collect(), index: self.index.clone() }
    }

    /// Adds a normally initialized parameter.
    pub fn add_normal(
        &mut self,
        rng: &mut RngStream,
        name: &str,
        shape: Vec<usize>,
        std: f64,
    ) -> Result<(), TensorError> {
        let n: usize = shape.iter().product();
        let data = (0..n).map(|_| T::lit(rng.normal() * std)).collect();
        self.insert(Parameter::new(name, Tensor::new(shape, data)?, true))
    }

    pub fn add_const(&mut self, name: &str, shape: Vec<usize>, value: f64) -> Result<(), TensorError> {
        self.insert(Parameter::new(name, Tensor::full(shape, T::lit(value)), true))
    }
}

impl ParamStore<f32> {
    /// Bitwise comparison of every parameter payload and flag.
    pub fn bit_eq(&self, other: &Self) -> bool {
        self.params.len() == other.params.len()
            && self.params.iter().zip(&other.params).all(|(a, b)| {
                a.name == b.name && a.trainable == b.trainable && a.tensor.bit_eq(&b.tensor)
            })
    }

    /// `max |a - b|` across all payloads; infinite if the layouts differ.
    pub fn max_abs_diff(&self, other: &Self) -> f64 {
        if self.params.len() != other.params.len() {
            return f64::INFINITY;
        }
        self.params
            .iter()
            .zip(&other.params)
            .map(|(a, b)| {
                if a.name != b.name {
                    f64::INFINITY
                } else {
                    a.tensor.max_abs_diff(&b.tensor).unwrap_or(f64::INFINITY)
                }
            })
            .fold(0.0, f64::max)
    }
}
