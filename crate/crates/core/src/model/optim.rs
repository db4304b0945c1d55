use crate::error::{Error, Result};
use crate::ndgraph::Tensor;

use super::encoder::Encoder;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
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

/// Adaptive-moment optimizer with bias correction; moments are kept in the
/// parameter order of the encoder.
#[derive(Clone, Debug, PartialEq)]
pub struct Adam {
    pub cfg: AdamConfig,
    pub m: Vec<Tensor<f32>>,
    pub v: Vec<Tensor<f32>>,
}

impl Adam {
    pub fn new(enc: &Encoder, cfg: AdamConfig) -> Self {
        let zeros = || enc.params.iter().map(|(_, t)| Tensor::zeros(t.shape())).collect();
        Adam {
            cfg,
            m: zeros(),
            v: zeros(),
        }
    }

    /// Applies update number `t` (1-based) with learning rate `lr`.
    pub fn step(&mut self, enc: &mut Encoder, grads: &[Vec<f64>], t: u64, lr: f64) -> Result<()> {
        if grads.len() != enc.params.len() {
            return Err(Error::dim("adam", "gradient count differs from parameter count"));
        }
        let AdamConfig { beta1, beta2, eps, .. } = self.cfg;
        let bc1 = 1.0 - beta1.powi(t as i32);
        let bc2 = 1.0 - beta2.powi(t as i32);
        for (k, ((_, p), grad)) in enc.params.iter_mut().zip(grads).enumerate() {
            let (m, v) = (self.m[k].data_mut(), self.v[k].data_mut());
            for (i, (w, &gi)) in p.data_mut().iter_mut().zip(grad).enumerate() {
                let mi = beta1 * m[i] as f64 + (1.0 - beta1) * gi;
                let vi = beta2 * v[i] as f64 + (1.0 - beta2) * gi * gi;
                m[i] = mi as f32;
                v[i] = vi as f32;
                let upd = lr * (mi / bc1) / ((vi / bc2).sqrt() + eps);
                *w = (*w as f64 - upd) as f32;
            }
        }
        Ok(())
    }
}
