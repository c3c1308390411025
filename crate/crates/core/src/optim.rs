//! Adam with bias correction.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::params::ParameterSet;

#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self { lr: 2e-4, beta1: 0.9, beta2: 0.999, eps: 1e-8 }
    }
}

/// First and second moments per parameter array, plus the step count.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub m: Vec<Vec<f32>>,
    pub v: Vec<Vec<f32>>,
    pub step: u64,
}

impl AdamState {
    pub fn new(params: &ParameterSet<f32>) -> Self {
        let zeros = || params.iter().map(|(_, _, p)| vec![0.0; p.len()]).collect();
        Self { m: zeros(), v: zeros(), step: 0 }
    }

    fn check(&self, params: &ParameterSet<f32>) -> Result<()> {
        let ok = self.m.len() == params.len()
            && self.v.len() == params.len()
            && params.iter().zip(self.m.iter().zip(&self.v)).all(|((_, _, p), (m, v))| p.len() == m.len() && p.len() == v.len());
        if ok {
            Ok(())
        } else {
            Err(Error::ShapeMismatch { expected: "moments matching parameters".into(), found: "different layout".into() })
        }
    }
}

/// One Adam update of `params` in place.
pub fn adam_step(params: &mut ParameterSet<f32>, grads: &ParameterSet<f32>, state: &mut AdamState, cfg: &AdamConfig) -> Result<()> {
    params.check_layout(grads)?;
    state.check(params)?;
    if let Some((name, _, _)) = grads.iter().find(|(_, _, g)| g.iter().any(|v| !v.is_finite())) {
        return Err(Error::NonFinite { context: format!("gradient of `{name}`") });
    }
    state.step += 1;
    let k = state.step as i32;
    let (b1, b2) = (cfg.beta1 as f32, cfg.beta2 as f32);
    let bc1 = (1.0 - libm::pow(cfg.beta1, k as f64)) as f32;
    let bc2 = (1.0 - libm::pow(cfg.beta2, k as f64)) as f32;
    let (lr, eps) = (cfg.lr as f32, cfg.eps as f32);
    for (i, id) in params.ids().collect::<Vec<_>>().into_iter().enumerate() {
        let g = grads.values(id);
        let (m, v) = (&mut state.m[i], &mut state.v[i]);
        for (((p, &g), m), v) in params.values_mut(id).iter_mut().zip(g).zip(m.iter_mut()).zip(v.iter_mut()) {
            *m = b1 * *m + (1.0 - b1) * g;
            *v = b2 * *v + (1.0 - b2) * g * g;
            let m_hat = *m / bc1;
            let v_hat = *v / bc2;
            *p -= lr * m_hat / (libm::sqrtf(v_hat) + eps);
        }
    }
    Ok(())
}
