//! Adam with bias correction, conventional defaults.

use crate::error::{Error, Result};
use crate::nn::{Mlp, MlpGrads};
use serde::{Deserialize, Serialize};

pub const DEFAULT_LR: f64 = 1e-3;
pub const DEFAULT_BETA1: f64 = 0.9;
pub const DEFAULT_BETA2: f64 = 0.999;
pub const DEFAULT_EPS: f64 = 1e-8;

/// First/second moment accumulators shaped like the parameters they update.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AdamState {
    m: MlpGrads,
    v: MlpGrads,
    pub step: usize,
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl AdamState {
    pub fn new(params: &Mlp, lr: f64) -> AdamState {
        AdamState {
            m: MlpGrads::zeros_like(params),
            v: MlpGrads::zeros_like(params),
            step: 0,
            lr,
            beta1: DEFAULT_BETA1,
            beta2: DEFAULT_BETA2,
            eps: DEFAULT_EPS,
        }
    }

    /// One Adam update. Rejects non-finite gradients so the caller can abort
    /// with its iteration index.
    pub fn step(&mut self, params: &mut Mlp, grads: &MlpGrads) -> Result<()> {
        if !grads.is_finite() {
            return Err(Error::NanLoss {
                iteration: self.step,
                term: "gradient".into(),
            });
        }
        self.step += 1;
        let t = self.step as i32;
        let bc1 = 1.0 - self.beta1.powi(t);
        let bc2 = 1.0 - self.beta2.powi(t);
        for l in 0..params.weights.len() {
            update(
                params.weights[l].as_slice_mut().unwrap(),
                grads.weights[l].as_slice().unwrap(),
                self.m.weights[l].as_slice_mut().unwrap(),
                self.v.weights[l].as_slice_mut().unwrap(),
                self.lr,
                self.beta1,
                self.beta2,
                self.eps,
                bc1,
                bc2,
            );
            update(
                params.biases[l].as_slice_mut().unwrap(),
                grads.biases[l].as_slice().unwrap(),
                self.m.biases[l].as_slice_mut().unwrap(),
                self.v.biases[l].as_slice_mut().unwrap(),
                self.lr,
                self.beta1,
                self.beta2,
                self.eps,
                bc1,
                bc2,
            );
        }
        Ok(())
    }
}

#[allow(clippy::too_many_arguments)]
fn update(
    p: &mut [f64],
    g: &[f64],
    m: &mut [f64],
    v: &mut [f64],
    lr: f64,
    b1: f64,
    b2: f64,
    eps: f64,
    bc1: f64,
    bc2: f64,
) {
    for i in 0..p.len() {
        m[i] = b1 * m[i] + (1.0 - b1) * g[i];
        v[i] = b2 * v[i] + (1.0 - b2) * g[i] * g[i];
        let mhat = m[i] / bc1;
        let vhat = v[i] / bc2;
        p[i] -= lr * mhat / (vhat.sqrt() + eps);
    }
}
