use serde::{Deserialize, Serialize};

use super::Tensor;
use crate::error::{bail, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct ParamId(pub usize);

/// A trainable tensor and its gradient accumulator. Complex parameters keep
/// their re and im parts as independent real coordinates.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Parameter {
    pub name: String,
    pub value: Tensor,
    #[serde(skip)]
    grad: Option<Tensor>,
}

impl Parameter {
    pub fn grad(&self) -> Tensor {
        self.grad.clone().unwrap_or_else(|| Tensor::zeros_like(&self.value))
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ParamStore {
    params: Vec<Parameter>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, name: impl Into<String>, value: Tensor) -> ParamId {
        let grad = Some(Tensor::zeros_like(&value));
        self.params.push(Parameter { name: name.into(), value, grad });
        ParamId(self.params.len() - 1)
    }

    pub fn get(&self, id: ParamId) -> &Parameter {
        &self.params[id.0]
    }

    pub fn value(&self, id: ParamId) -> &Tensor {
        &self.params[id.0].value
    }

    pub fn value_mut(&mut self, id: ParamId) -> &mut Tensor {
        &mut self.params[id.0].value
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (ParamId, &Parameter)> {
        self.params.iter().enumerate().map(|(i, p)| (ParamId(i), p))
    }

    pub fn find(&self, name: &str) -> Option<ParamId> {
        self.params.iter().position(|p| p.name == name).map(ParamId)
    }

    pub fn num_scalars(&self) -> usize {
        self.params.iter().map(|p| p.value.num_scalars()).sum()
    }

    pub fn accumulate(&mut self, grads: &ParamGrads) {
        for (id, g) in &grads.0 {
            let p = &mut self.params[id.0];
            p.grad.get_or_insert_with(|| Tensor::zeros_like(&p.value)).add_assign(g);
        }
    }

    pub fn zero_grad(&mut self) {
        for p in &mut self.params {
            match &mut p.grad {
                Some(g) => g.fill_zero(),
                None => p.grad = Some(Tensor::zeros_like(&p.value)),
            }
        }
    }

    /// Flattened real view of all parameter values.
    pub fn flat_values(&self) -> Vec<f64> {
        self.params.iter().flat_map(|p| p.value.scalars().copied().collect::<Vec<_>>()).collect()
    }

    pub fn set_flat_values(&mut self, values: &[f64]) {
        assert_eq!(values.len(), self.num_scalars());
        let mut offset = 0;
        for p in &mut self.params {
            let n = p.value.num_scalars();
            p.value.set_scalars(&values[offset..offset + n]);
            offset += n;
        }
    }

    pub fn flat_grads(&self) -> Vec<f64> {
        self.params.iter().flat_map(|p| p.grad().scalars().copied().collect::<Vec<_>>()).collect()
    }

    /// Copies values from a store with identical layout.
    pub fn load_values(&mut self, other: &ParamStore) -> Result<()> {
        if other.params.len() != self.params.len() {
            bail!(InvalidInput, "parameter count {} != {}", other.params.len(), self.params.len());
        }
        for (dst, src) in self.params.iter_mut().zip(&other.params) {
            if dst.name != src.name || dst.value.shape() != src.value.shape()
                || dst.value.is_complex() != src.value.is_complex()
            {
                bail!(InvalidInput, "parameter `{}` does not match `{}`", dst.name, src.name);
            }
            dst.value = src.value.clone();
        }
        Ok(())
    }
}

/// Parameter gradients extracted from a tape.
#[derive(Debug, Clone, Default)]
pub struct ParamGrads(pub Vec<(ParamId, Tensor)>);

/// Adam hyperparameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl AdamConfig {
    pub fn with_lr(lr: f64) -> Self {
        Self { lr, beta1: 0.9, beta2: 0.999, eps: 1e-8 }
    }
}

/// First/second moment estimates for a flat run of scalars.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct AdamState {
    pub step: u64,
    pub m: Vec<f64>,
    pub v: Vec<f64>,
}

/// One Adam update over independent real coordinates.
pub fn adam_step(values: &mut [f64], grads: &[f64], state: &mut AdamState, cfg: &AdamConfig) -> Result<()> {
    if values.len() != grads.len() {
        bail!(Dimension, "{} values but {} gradients", values.len(), grads.len());
    }
    if !(cfg.lr > 0.0) {
        bail!(InvalidArgument, "learning rate must be positive, got {}", cfg.lr);
    }
    if let Some(i) = grads.iter().position(|g| !g.is_finite()) {
        bail!(Numeric, "non-finite gradient at coordinate {i}");
    }
    if state.m.is_empty() {
        state.m = vec![0.0; values.len()];
        state.v = vec![0.0; values.len()];
    }
    state.step += 1;
    let bc1 = 1.0 - cfg.beta1.powi(state.step as i32);
    let bc2 = 1.0 - cfg.beta2.powi(state.step as i32);
    for i in 0..values.len() {
        let g = grads[i];
        state.m[i] = cfg.beta1 * state.m[i] + (1.0 - cfg.beta1) * g;
        state.v[i] = cfg.beta2 * state.v[i] + (1.0 - cfg.beta2) * g * g;
        let m_hat = state.m[i] / bc1;
        let v_hat = state.v[i] / bc2;
        values[i] -= cfg.lr * m_hat / (v_hat.sqrt() + cfg.eps);
    }
    Ok(())
}

/// Adam over a whole [`ParamStore`].
#[derive(Debug, Clone)]
pub struct Adam {
    pub config: AdamConfig,
    state: AdamState,
}

impl Adam {
    pub fn new(config: AdamConfig) -> Self {
        Self { config, state: AdamState::default() }
    }

    pub fn steps(&self) -> u64 {
        self.state.step
    }

    /// Applies the accumulated gradients and zeroes them. A non-finite
    /// gradient aborts before any parameter is touched.
    pub fn step(&mut self, store: &mut ParamStore) -> Result<()> {
        let grads = store.flat_grads();
        let mut values = store.flat_values();
        adam_step(&mut values, &grads, &mut self.state, &self.config)?;
        store.set_flat_values(&values);
        store.zero_grad();
        Ok(())
    }
}
