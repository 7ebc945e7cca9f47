use ndarray::{Array2, Zip};
use serde::{Deserialize, Serialize};

use super::tape::Tensor;
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OptimKind {
    Sgd,
    Adam { beta1: f64, beta2: f64, eps: f64 },
}

impl OptimKind {
    pub fn adam() -> Self {
        OptimKind::Adam { beta1: 0.9, beta2: 0.999, eps: 1e-8 }
    }
}

#[derive(Clone, Debug)]
pub struct OptimState {
    pub lr: f64,
    pub kind: OptimKind,
    first: Vec<Tensor>,
    second: Vec<Tensor>,
    pub step: u64,
}

impl OptimState {
    pub fn new(kind: OptimKind, lr: f64) -> Result<Self> {
        if !(lr > 0.0) || !lr.is_finite() {
            return Err(Error::InvalidConfig(format!("learning rate must be positive, got {lr}")));
        }
        Ok(OptimState { lr, kind, first: Vec::new(), second: Vec::new(), step: 0 })
    }

    pub fn sgd(lr: f64) -> Result<Self> {
        Self::new(OptimKind::Sgd, lr)
    }

    pub fn adam(lr: f64) -> Result<Self> {
        Self::new(OptimKind::adam(), lr)
    }

    /// Applies one update in place. `params` and `grads` pair up by position
    /// and must keep the same order and shapes across calls.
    pub fn apply(&mut self, params: &mut [&mut Tensor], grads: &[Tensor]) -> Result<()> {
        if params.len() != grads.len() {
            return Err(Error::ShapeMismatch(format!("{} parameter tensors, {} gradients", params.len(), grads.len())));
        }
        for (i, (p, g)) in params.iter().zip(grads).enumerate() {
            if p.dim() != g.dim() {
                return Err(Error::ShapeMismatch(format!(
                    "tensor {i}: parameter {:?} vs gradient {:?}",
                    p.dim(),
                    g.dim()
                )));
            }
        }
        self.step += 1;
        match self.kind {
            OptimKind::Sgd => {
                for (p, g) in params.iter_mut().zip(grads) {
                    p.scaled_add(-self.lr, g);
                }
            }
            OptimKind::Adam { beta1, beta2, eps } => {
                if self.first.len() != params.len() {
                    self.first = grads.iter().map(|g| Array2::zeros(g.dim())).collect();
                    self.second = self.first.clone();
                }
                let t = self.step as i32;
                let c1 = 1.0 - beta1.powi(t);
                let c2 = 1.0 - beta2.powi(t);
                let lr = self.lr;
                for (((p, g), m), v) in params.iter_mut().zip(grads).zip(&mut self.first).zip(&mut self.second) {
                    Zip::from(&mut **p).and(g).and(m).and(v).for_each(|p, &g, m, v| {
                        *m = beta1 * *m + (1.0 - beta1) * g;
                        *v = beta2 * *v + (1.0 - beta2) * g * g;
                        *p -= lr * (*m / c1) / ((*v / c2).sqrt() + eps);
                    });
                }
            }
        }
        Ok(())
    }
}
