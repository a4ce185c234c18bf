//! Named trainable parameters and the adaptive-moment optimizer.

use std::collections::BTreeMap;

use rand::Rng;

use crate::error::{Error, Result};
use crate::tensor::{Real, Tensor};

const BETA1: f64 = 0.9;
const BETA2: f64 = 0.999;
const ADAM_EPS: f64 = 1e-8;

/// Per-parameter optimizer state.
#[derive(Debug, Clone, PartialEq)]
pub struct OptimizerState<F: Real> {
    m: Vec<F>,
    v: Vec<F>,
    step_count: u64,
}

impl<F: Real> OptimizerState<F> {
    pub fn fresh(len: usize) -> Self {
        OptimizerState { m: vec![F::zero(); len], v: vec![F::zero(); len], step_count: 0 }
    }

    pub fn from_parts(m: Vec<F>, v: Vec<F>, step_count: u64) -> Self {
        OptimizerState { m, v, step_count }
    }

    pub fn first_moment(&self) -> &[F] {
        &self.m
    }

    pub fn second_moment(&self) -> &[F] {
        &self.v
    }

    pub fn step_count(&self) -> u64 {
        self.step_count
    }
}

/// Name → tensor map holding every trainable parameter.
///
/// Iteration order is always lexicographic by name, which makes updates,
/// checkpoints, and gradient reports deterministic.
#[derive(Debug, Clone, Default)]
pub struct ParameterStore<F: Real> {
    params: BTreeMap<String, (Tensor<F>, OptimizerState<F>)>,
}

impl<F: Real> ParameterStore<F> {
    pub fn new() -> Self {
        ParameterStore { params: BTreeMap::new() }
    }

    pub fn insert(&mut self, name: &str, tensor: Tensor<F>) -> Result<()> {
        let state = OptimizerState::fresh(tensor.len());
        self.insert_with_state(name, tensor, state)
    }

    pub fn insert_with_state(
        &mut self,
        name: &str,
        tensor: Tensor<F>,
        state: OptimizerState<F>,
    ) -> Result<()> {
        if state.m.len() != tensor.len() || state.v.len() != tensor.len() {
            return Err(Error::shape("optimizer state", tensor.len(), state.m.len()));
        }
        if self.params.contains_key(name) {
            return Err(Error::Config(format!("duplicate parameter `{name}`")));
        }
        self.params.insert(name.to_string(), (tensor, state));
        Ok(())
    }

    pub fn get(&self, name: &str) -> Option<&Tensor<F>> {
        self.params.get(name).map(|(t, _)| t)
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Tensor<F>> {
        self.params.get_mut(name).map(|(t, _)| t)
    }

    pub fn optimizer_state(&self, name: &str) -> Option<&OptimizerState<F>> {
        self.params.get(name).map(|(_, s)| s)
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    /// Total number of scalar parameters.
    pub fn scalar_count(&self) -> usize {
        self.params.values().map(|(t, _)| t.len()).sum()
    }

    /// Parameters in lexicographic name order.
    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor<F>)> {
        self.params.iter().map(|(n, (t, _))| (n.as_str(), t))
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.params.keys().map(|s| s.as_str())
    }

    pub fn zero_grads(&mut self) {
        for (t, _) in self.params.values_mut() {
            t.zero_grad();
        }
    }

    /// One adaptive-moment update over every parameter with the standard
    /// moment coefficients (0.9 / 0.999) and bias correction. A parameter
    /// without an accumulated gradient is treated as having zero gradient.
    pub fn adam_step(&mut self, lr: F) -> Result<()> {
        let beta1 = F::from_f64(BETA1);
        let beta2 = F::from_f64(BETA2);
        let eps = F::from_f64(ADAM_EPS);
        for (name, (tensor, state)) in self.params.iter_mut() {
            if let Some(grad) = tensor.grad() {
                if grad.iter().any(|g| !g.is_finite()) {
                    return Err(Error::NanGradient { param: name.clone() });
                }
            }
            state.step_count += 1;
            let t = state.step_count as i32;
            let bc1 = F::one() - beta1.powi(t);
            let bc2 = F::one() - beta2.powi(t);
            let zero = F::zero();
            let grad = tensor.grad().map(|g| g.to_vec());
            let data = tensor.data_mut();
            for i in 0..data.len() {
                let g = grad.as_ref().map_or(zero, |g| g[i]);
                state.m[i] = beta1 * state.m[i] + (F::one() - beta1) * g;
                state.v[i] = beta2 * state.v[i] + (F::one() - beta2) * g * g;
                let m_hat = state.m[i] / bc1;
                let v_hat = state.v[i] / bc2;
                data[i] = data[i] - lr * m_hat / (v_hat.sqrt() + eps);
            }
        }
        Ok(())
    }
}

/// Weight matrix initialized uniformly in `[−a, a]` with `a = 1/√fan_in`.
pub fn init_matrix<F: Real, R: Rng>(rng: &mut R, rows: usize, cols: usize) -> Tensor<F> {
    let a = 1.0 / (cols as f64).sqrt();
    uniform(rng, vec![rows, cols], a)
}

/// Zero-initialized bias vector.
pub fn init_bias<F: Real>(len: usize) -> Tensor<F> {
    Tensor::zeros(vec![len])
}

/// Embedding table initialized uniformly in `[−0.1, 0.1]`.
pub fn init_embedding<F: Real, R: Rng>(rng: &mut R, rows: usize, cols: usize) -> Tensor<F> {
    uniform(rng, vec![rows, cols], 0.1)
}

fn uniform<F: Real, R: Rng>(rng: &mut R, shape: Vec<usize>, a: f64) -> Tensor<F> {
    let n: usize = shape.iter().product();
    let data: Vec<F> = (0..n).map(|_| F::from_f64(rng.random_range(-a..a))).collect();
    Tensor::new(shape, data).expect("shape/data agree")
}
