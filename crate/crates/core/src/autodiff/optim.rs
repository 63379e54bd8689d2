use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl AdamConfig {
    pub fn with_lr(lr: f64) -> Self {
        AdamConfig {
            lr,
            ..Default::default()
        }
    }
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// Per-parameter Adam moments. Moments are created lazily on the first step.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct OptimizerState {
    pub first_moment: BTreeMap<String, Tensor>,
    pub second_moment: BTreeMap<String, Tensor>,
    pub step: u64,
}

/// One bias-corrected Adam update of every parameter in `params`.
///
/// A parameter without an entry in `grads` is treated as having a zero
/// gradient; a gradient for an unknown parameter is an error.
pub fn adam_step(
    params: &mut BTreeMap<String, Tensor>,
    grads: &BTreeMap<String, Tensor>,
    state: &mut OptimizerState,
    cfg: &AdamConfig,
) -> Result<()> {
    if !(cfg.lr > 0.0) {
        return Err(Error::InvalidArgument(format!("adam lr must be > 0, got {}", cfg.lr)));
    }
    for (name, g) in grads {
        let p = params
            .get(name)
            .ok_or_else(|| Error::InvalidArgument(format!("gradient for unknown parameter `{name}`")))?;
        p.ensure_same_shape(g, "adam_step")?;
    }

    state.step += 1;
    let step = state.step as i32;
    let bias1 = 1.0 - cfg.beta1.powi(step);
    let bias2 = 1.0 - cfg.beta2.powi(step);

    for (name, p) in params.iter_mut() {
        let m = state
            .first_moment
            .entry(name.clone())
            .or_insert_with(|| Tensor::zeros(p.shape()));
        let v = state
            .second_moment
            .entry(name.clone())
            .or_insert_with(|| Tensor::zeros(p.shape()));
        let Some(g) = grads.get(name) else {
            // zero gradient: moments decay, update is still applied
            for ((pv, mv), vv) in p.data_mut().iter_mut().zip(m.data_mut()).zip(v.data_mut()) {
                *mv *= cfg.beta1;
                *vv *= cfg.beta2;
                *pv -= cfg.lr * (*mv / bias1) / ((*vv / bias2).sqrt() + cfg.eps);
            }
            continue;
        };
        for (((pv, mv), vv), &gv) in p
            .data_mut()
            .iter_mut()
            .zip(m.data_mut())
            .zip(v.data_mut())
            .zip(g.data())
        {
            *mv = cfg.beta1 * *mv + (1.0 - cfg.beta1) * gv;
            *vv = cfg.beta2 * *vv + (1.0 - cfg.beta2) * gv * gv;
            *pv -= cfg.lr * (*mv / bias1) / ((*vv / bias2).sqrt() + cfg.eps);
        }
        p.check_finite("adam_step")?;
    }
    Ok(())
}
