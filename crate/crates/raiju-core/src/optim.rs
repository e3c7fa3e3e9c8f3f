//! Parameter update rules: adaptive-moment estimation (the default) and
//! plain gradient descent.

use std::fmt;
use std::str::FromStr;

use crate::nn::{GradSet, ParamSet};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OptimizerKind {
    Adam,
    Sgd,
}

impl fmt::Display for OptimizerKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            OptimizerKind::Adam => write!(f, "adam"),
            OptimizerKind::Sgd => write!(f, "sgd"),
        }
    }
}

impl FromStr for OptimizerKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "adam" => Ok(OptimizerKind::Adam),
            "sgd" => Ok(OptimizerKind::Sgd),
            other => Err(format!(
                "unknown optimizer {other:?} (expected adam or sgd)"
            )),
        }
    }
}

/// Per-parameter first/second moment accumulators plus the step counter.
#[derive(Debug, Clone, PartialEq)]
pub struct OptimizerState {
    pub kind: OptimizerKind,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub step: u64,
    pub m: GradSet,
    pub v: GradSet,
}

impl OptimizerState {
    pub fn new(kind: OptimizerKind, params: &ParamSet) -> Self {
        OptimizerState {
            kind,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            step: 0,
            m: GradSet::zeros_like(params),
            v: GradSet::zeros_like(params),
        }
    }

    /// Applies one update in place and advances the step counter.
    pub fn apply(&mut self, params: &mut ParamSet, grads: &GradSet, lr: f64) {
        assert_eq!(
            params.dims(),
            grads.dims(),
            "parameter/gradient shape mismatch"
        );
        assert_eq!(
            self.m.dims(),
            params.dims(),
            "optimizer state shape mismatch"
        );
        self.step += 1;
        match self.kind {
            OptimizerKind::Sgd => {
                for (p, g) in params.tensors_mut().into_iter().zip(grads.tensors()) {
                    for (pi, gi) in p.iter_mut().zip(g) {
                        *pi -= lr * gi;
                    }
                }
            }
            OptimizerKind::Adam => {
                let bc1 = 1.0 - self.beta1.powi(self.step as i32);
                let bc2 = 1.0 - self.beta2.powi(self.step as i32);
                let params_t = params.tensors_mut();
                let m_t = self.m.tensors_mut();
                let v_t = self.v.tensors_mut();
                for ((p, g), (m, v)) in params_t
                    .into_iter()
                    .zip(grads.tensors())
                    .zip(m_t.into_iter().zip(v_t))
                {
                    for (((pi, gi), mi), vi) in
                        p.iter_mut().zip(g).zip(m.iter_mut()).zip(v.iter_mut())
                    {
                        *mi = self.beta1 * *mi + (1.0 - self.beta1) * gi;
                        *vi = self.beta2 * *vi + (1.0 - self.beta2) * gi * gi;
                        let m_hat = *mi / bc1;
                        let v_hat = *vi / bc2;
                        *pi -= lr * m_hat / (v_hat.sqrt() + self.eps);
                    }
                }
            }
        }
    }
}
