use std::collections::BTreeMap;

use rand::Rng as _;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::Tensor;
use crate::error::{Error, Result};
use crate::seed::Rng;

/// Gradients keyed by parameter name.
pub type Gradients = BTreeMap<String, Tensor>;

/// One trainable tensor with its Adam moments.
#[derive(Debug, Clone, PartialEq)]
pub struct Parameter {
    pub value: Tensor,
    pub m: Tensor,
    pub v: Tensor,
    pub step: u64,
}

impl Parameter {
    fn new(value: Tensor) -> Self {
        let shape = value.shape().to_vec();
        Self {
            value,
            m: Tensor::zeros(&shape),
            v: Tensor::zeros(&shape),
            step: 0,
        }
    }
}

/// Named parameters, iterated in name order.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ParameterStore {
    params: BTreeMap<String, Parameter>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl AdamConfig {
    pub fn with_lr(lr: f64) -> Self {
        Self {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

impl ParameterStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, name: &str, value: Tensor) -> Result<()> {
        if self.params.contains_key(name) {
            return Err(Error::Config(format!("duplicate parameter `{name}`")));
        }
        self.params.insert(name.to_string(), Parameter::new(value));
        Ok(())
    }

    /// Uniform in `[-1/√fan_in, 1/√fan_in]`.
    pub fn insert_uniform(&mut self, name: &str, shape: &[usize], fan_in: usize, rng: &mut Rng) -> Result<()> {
        let bound = 1.0 / (fan_in.max(1) as f64).sqrt();
        let n: usize = shape.iter().product();
        let data = (0..n).map(|_| rng.random_range(-bound..=bound)).collect();
        self.insert(name, Tensor::new(shape.to_vec(), data)?)
    }

    pub fn insert_zeros(&mut self, name: &str, shape: &[usize]) -> Result<()> {
        self.insert(name, Tensor::zeros(shape))
    }

    pub fn get(&self, name: &str) -> &Tensor {
        &self
            .params
            .get(name)
            .unwrap_or_else(|| panic!("unknown parameter `{name}`"))
            .value
    }

    pub fn try_get(&self, name: &str) -> Option<&Tensor> {
        self.params.get(name).map(|p| &p.value)
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Tensor> {
        self.params.get_mut(name).map(|p| &mut p.value)
    }

    /// Replaces a value, keeping the shape.
    pub fn set(&mut self, name: &str, value: Tensor) -> Result<()> {
        let p = self
            .params
            .get_mut(name)
            .ok_or_else(|| Error::Config(format!("unknown parameter `{name}`")))?;
        if p.value.shape() != value.shape() {
            return Err(Error::ShapeMismatch(format!(
                "parameter `{name}` has shape {:?}, got {:?}",
                p.value.shape(),
                value.shape()
            )));
        }
        p.value = value;
        Ok(())
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.params.keys().map(String::as_str)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor)> {
        self.params.iter().map(|(k, p)| (k.as_str(), &p.value))
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    /// Total number of scalar parameters.
    pub fn num_scalars(&self) -> usize {
        self.params.values().map(|p| p.value.len()).sum()
    }

    /// Clears Adam moments and step counters.
    pub fn reset_optimizer(&mut self) {
        for p in self.params.values_mut() {
            *p = Parameter::new(p.value.clone());
        }
    }

    /// Zero gradients for every parameter.
    pub fn zero_grads(&self) -> Gradients {
        self.params
            .iter()
            .map(|(k, p)| (k.clone(), Tensor::zeros(p.value.shape())))
            .collect()
    }

    /// SHA-256 over names, shapes and the bit patterns of all values.
    pub fn checksum(&self) -> String {
        let mut hasher = Sha256::new();
        for (name, p) in &self.params {
            hasher.update(name.as_bytes());
            for d in p.value.shape() {
                hasher.update((*d as u64).to_le_bytes());
            }
            for v in p.value.data() {
                hasher.update(v.to_bits().to_le_bytes());
            }
        }
        hex::encode(hasher.finalize())
    }

    /// All values flattened in name order.
    pub fn flatten(&self) -> Vec<f64> {
        self.params
            .values()
            .flat_map(|p| p.value.data().iter().copied())
            .collect()
    }

    /// Inverse of [`flatten`](Self::flatten).
    pub fn unflatten(&mut self, flat: &[f64]) -> Result<()> {
        if flat.len() != self.num_scalars() {
            return Err(Error::length("flat parameters", self.num_scalars(), flat.len()));
        }
        let mut offset = 0;
        for p in self.params.values_mut() {
            let n = p.value.len();
            p.value.data_mut().copy_from_slice(&flat[offset..offset + n]);
            offset += n;
        }
        Ok(())
    }
}

/// Flattens gradients in the same order as [`ParameterStore::flatten`].
pub fn flatten_grads(store: &ParameterStore, grads: &Gradients) -> Result<Vec<f64>> {
    let mut out = Vec::with_capacity(store.num_scalars());
    for name in store.names() {
        let g = grads
            .get(name)
            .ok_or_else(|| Error::MissingGradient(name.to_string()))?;
        out.extend_from_slice(g.data());
    }
    Ok(out)
}

/// Global L2 norm of all gradients.
pub fn global_norm(grads: &Gradients) -> f64 {
    grads.values().map(Tensor::sum_sq).sum::<f64>().sqrt()
}

/// Rescales gradients so their global norm is at most `max_norm`.
pub fn clip_global_norm(grads: &mut Gradients, max_norm: f64) -> f64 {
    let norm = global_norm(grads);
    if norm > max_norm && norm > 0.0 {
        let k = max_norm / norm;
        grads.values_mut().for_each(|g| g.scale(k));
    }
    norm
}

/// Bias-corrected Adam update of every parameter in `store`, in name order.
pub fn adam_step(store: &mut ParameterStore, grads: &Gradients, cfg: &AdamConfig) -> Result<()> {
    for (name, p) in &store.params {
        let g = grads
            .get(name)
            .ok_or_else(|| Error::MissingGradient(name.clone()))?;
        if g.shape() != p.value.shape() {
            return Err(Error::ShapeMismatch(format!(
                "gradient for `{name}` has shape {:?}, parameter {:?}",
                g.shape(),
                p.value.shape()
            )));
        }
        g.check_finite(&format!("gradient of `{name}`"))?;
    }
    for (name, p) in store.params.iter_mut() {
        let g = &grads[name];
        p.step += 1;
        let bc1 = 1.0 - cfg.beta1.powi(p.step as i32);
        let bc2 = 1.0 - cfg.beta2.powi(p.step as i32);
        let (values, m, v) = (p.value.data_mut(), p.m.data_mut(), p.v.data_mut());
        for i in 0..values.len() {
            let gi = g.data()[i];
            m[i] = cfg.beta1 * m[i] + (1.0 - cfg.beta1) * gi;
            v[i] = cfg.beta2 * v[i] + (1.0 - cfg.beta2) * gi * gi;
            let m_hat = m[i] / bc1;
            let v_hat = v[i] / bc2;
            values[i] -= cfg.lr * m_hat / (v_hat.sqrt() + cfg.eps);
        }
    }
    Ok(())
}
