//! Adam with bias correction over a path-keyed parameter store.

use std::collections::BTreeMap;

use crate::error::{Error, Result};
use crate::model::params::ParameterStore;
use crate::numerics::graph::Gradients;
use crate::numerics::tensor::Tensor;
use crate::training::TrainConfig;

/// First/second moment accumulators plus the step counter.
#[derive(Debug, Clone, Default)]
pub struct AdamState {
    step: u64,
    m: BTreeMap<String, Tensor>,
    v: BTreeMap<String, Tensor>,
}

impl AdamState {
    pub fn new() -> Self {
        AdamState::default()
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }
}

/// One Adam update, in sorted parameter-path order.
pub fn optimizer_step(
    params: &mut ParameterStore,
    grads: &Gradients,
    state: &mut AdamState,
    lr: f64,
    config: &TrainConfig,
) -> Result<()> {
    state.step += 1;
    let t = state.step as i32;
    let bc1 = 1.0 - config.adam_beta1.powi(t);
    let bc2 = 1.0 - config.adam_beta2.powi(t);

    let paths: Vec<String> = params.tensors().keys().cloned().collect();
    for path in &paths {
        let g = grads
            .get(path)
            .ok_or_else(|| Error::Contract(format!("missing gradient for {path}")))?;
        let p = params.get_mut(path)?;
        if g.shape() != p.shape() {
            return Err(Error::Contract(format!(
                "gradient shape {:?} != parameter shape {:?} for {path}",
                g.shape(),
                p.shape()
            )));
        }
        let m = state
            .m
            .entry(path.clone())
            .or_insert_with(|| Tensor::zeros(p.shape().to_vec()));
        let v = state
            .v
            .entry(path.clone())
            .or_insert_with(|| Tensor::zeros(p.shape().to_vec()));
        let (b1, b2, eps) = (config.adam_beta1, config.adam_beta2, config.adam_eps);
        for i in 0..p.len() {
            let gi = g.data()[i];
            let mi = b1 * m.data()[i] + (1.0 - b1) * gi;
            let vi = b2 * v.data()[i] + (1.0 - b2) * gi * gi;
            m.data_mut()[i] = mi;
            v.data_mut()[i] = vi;
            let m_hat = mi / bc1;
            let v_hat = vi / bc2;
            p.data_mut()[i] -= lr * m_hat / (v_hat.sqrt() + eps);
        }
    }
    Ok(())
}
