use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::{Gradients, ParameterStore, TensorKind};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OptimizerConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub learning_rate: f64,
    pub epsilon: f64,
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        Self {
            beta1: 0.5,
            beta2: 0.999,
            learning_rate: 1e-4,
            epsilon: 1e-8,
        }
    }
}

impl OptimizerConfig {
    pub fn validate(&self) -> Result<()> {
        let ok = self.beta1 > 0.0
            && self.beta1 < 1.0
            && self.beta2 > 0.0
            && self.beta2 < 1.0
            && self.learning_rate > 0.0
            && self.epsilon > 0.0;
        if ok {
            Ok(())
        } else {
            Err(Error::Config(format!("invalid optimizer settings {self:?}")))
        }
    }
}

/// First and second moment estimates for every trainable tensor.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub step: u64,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
}

impl AdamState {
    pub fn new(store: &ParameterStore) -> Self {
        let zeros = Gradients::zeros_like(store).values;
        Self {
            step: 0,
            m: zeros.clone(),
            v: zeros,
        }
    }
}

/// One bias-corrected Adam update of every trainable tensor in `store`.
pub fn adam_step(
    store: &mut ParameterStore,
    grads: &Gradients,
    state: &mut AdamState,
    cfg: &OptimizerConfig,
) -> Result<()> {
    if store.is_frozen() {
        return Err(Error::FrozenStore);
    }
    if grads.values.len() != store.len() || state.m.len() != store.len() {
        return Err(Error::ShapeMismatch(format!(
            "{} gradients / {} moments for {} tensors",
            grads.values.len(),
            state.m.len(),
            store.len()
        )));
    }
    for (i, e) in store.entries().iter().enumerate() {
        let expect = if e.kind == TensorKind::Param { e.tensor.data.len() } else { 0 };
        if grads.values[i].len() != expect {
            return Err(Error::ShapeMismatch(format!(
                "gradient for {:?} has {} values, expected {expect}",
                e.name,
                grads.values[i].len()
            )));
        }
    }
    state.step += 1;
    let t = state.step as i32;
    let bc1 = 1.0 - cfg.beta1.powi(t);
    let bc2 = 1.0 - cfg.beta2.powi(t);
    for i in 0..store.len() {
        if grads.values[i].is_empty() {
            continue;
        }
        let w = store.data_mut(i)?;
        let (m, v) = (&mut state.m[i], &mut state.v[i]);
        for (((wj, &g), mj), vj) in w.iter_mut().zip(&grads.values[i]).zip(m.iter_mut()).zip(v.iter_mut()) {
            *mj = cfg.beta1 * *mj + (1.0 - cfg.beta1) * g;
            *vj = cfg.beta2 * *vj + (1.0 - cfg.beta2) * g * g;
            let mhat = *mj / bc1;
            let vhat = *vj / bc2;
            *wj -= cfg.learning_rate * mhat / (vhat.sqrt() + cfg.epsilon);
        }
    }
    Ok(())
}
