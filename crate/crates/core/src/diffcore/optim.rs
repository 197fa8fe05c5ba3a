use serde::{Deserialize, Serialize};

use super::mlp::{MlpNet, NetGrads};
use super::tensor::Tensor;
use crate::error::{Error, Result};

/// Adaptive-moment optimizer with bias correction (Kingma & Ba defaults).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MomentOptimizer {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    step: u64,
    #[serde(skip)]
    first: Vec<Tensor>,
    #[serde(skip)]
    second: Vec<Tensor>,
}

impl MomentOptimizer {
    pub fn new(net: &MlpNet, lr: f64) -> Self {
        let zeros: Vec<Tensor> = net.params().map(|p| Tensor::zeros(p.shape())).collect();
        Self {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            step: 0,
            first: zeros.clone(),
            second: zeros,
        }
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    pub fn moments(&self) -> (&[Tensor], &[Tensor]) {
        (&self.first, &self.second)
    }

    /// Restore persisted state; shapes must mirror `net`.
    pub fn restore(&mut self, step: u64, first: Vec<Tensor>, second: Vec<Tensor>) -> Result<()> {
        if first.len() != self.first.len() || second.len() != self.second.len() {
            return Err(Error::shape("optimizer state tensor count"));
        }
        for ((a, b), c) in self.first.iter().zip(&first).zip(&second) {
            if a.len() != b.len() || a.len() != c.len() {
                return Err(Error::shape("optimizer state tensor size"));
            }
        }
        self.first = first
            .into_iter()
            .zip(&self.first)
            .map(|(t, like)| Tensor::new(like.shape().to_vec(), t.into_data()))
            .collect::<Result<_>>()?;
        self.second = second
            .into_iter()
            .zip(&self.second)
            .map(|(t, like)| Tensor::new(like.shape().to_vec(), t.into_data()))
            .collect::<Result<_>>()?;
        self.step = step;
        Ok(())
    }

    /// Apply one update to `net` in place.
    pub fn step(&mut self, net: &mut MlpNet, grads: &NetGrads) -> Result<()> {
        if grads.tensors.len() != self.first.len() {
            return Err(Error::shape(format!(
                "optimizer tracks {} tensors, got {} gradients",
                self.first.len(),
                grads.tensors.len()
            )));
        }
        for ((p, g), m) in net.params().zip(&grads.tensors).zip(&self.first) {
            if p.shape() != g.shape() || p.shape() != m.shape() {
                return Err(Error::shape(format!(
                    "parameter {:?} vs gradient {:?}",
                    p.shape(),
                    g.shape()
                )));
            }
        }
        self.step += 1;
        let t = self.step as f64;
        let bc1 = 1.0 - self.beta1.powf(t);
        let bc2 = 1.0 - self.beta2.powf(t);
        let (b1, b2, lr, eps) = (self.beta1, self.beta2, self.lr, self.eps);
        for (((p, g), m), v) in net
            .params_mut()
            .zip(&grads.tensors)
            .zip(self.first.iter_mut())
            .zip(self.second.iter_mut())
        {
            for (((pv, &gv), mv), vv) in p
                .data_mut()
                .iter_mut()
                .zip(g.data())
                .zip(m.data_mut())
                .zip(v.data_mut())
            {
                *mv = b1 * *mv + (1.0 - b1) * gv;
                *vv = b2 * *vv + (1.0 - b2) * gv * gv;
                let m_hat = *mv / bc1;
                let v_hat = *vv / bc2;
                *pv -= lr * m_hat / (v_hat.sqrt() + eps);
            }
        }
        Ok(())
    }
}
