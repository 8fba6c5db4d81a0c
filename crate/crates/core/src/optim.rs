//! First-order optimizers with global gradient-norm clipping.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scorers::l2_norm;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum GradStrategy {
    #[serde(alias = "sgd", alias = "SGD")]
    Sgd,
    #[serde(alias = "ada_grad", alias = "adagrad", alias = "Adagrad", alias = "Ada Grad")]
    AdaGrad,
}

const ADAGRAD_EPS: f64 = 1e-10;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Optimizer {
    pub strategy: GradStrategy,
    pub learning_rate: f64,
    /// Gradients with a larger L2 norm are rescaled to this norm (0: off).
    pub max_gradient_norm: f64,
    /// Coefficient of `0.5 * ||theta||^2` added to the loss.
    pub l2_loss: f64,
    accumulator: Vec<f64>,
}

impl Optimizer {
    pub fn new(strategy: GradStrategy, learning_rate: f64, max_gradient_norm: f64, l2_loss: f64) -> Self {
        Self {
            strategy,
            learning_rate,
            max_gradient_norm,
            l2_loss,
            accumulator: Vec::new(),
        }
    }

    pub fn sgd(learning_rate: f64) -> Self {
        Self::new(GradStrategy::Sgd, learning_rate, 0.0, 0.0)
    }

    /// Applies one descent step in place. `grad` is consumed as scratch.
    pub fn step(&mut self, params: &mut [f64], mut grad: Vec<f64>) -> Result<()> {
        if grad.len() != params.len() {
            return Err(Error::DimensionMismatch {
                expected: params.len(),
                actual: grad.len(),
            });
        }
        if self.l2_loss > 0.0 {
            for (g, p) in grad.iter_mut().zip(params.iter()) {
                *g += self.l2_loss * p;
            }
        }
        if grad.iter().any(|g| !g.is_finite()) {
            return Err(Error::Numerical("non-finite gradient".into()));
        }
        if self.max_gradient_norm > 0.0 {
            let norm = l2_norm(&grad);
            if norm > self.max_gradient_norm {
                let scale = self.max_gradient_norm / norm;
                grad.iter_mut().for_each(|g| *g *= scale);
            }
        }
        match self.strategy {
            GradStrategy::Sgd => {
                for (p, g) in params.iter_mut().zip(&grad) {
                    *p -= self.learning_rate * g;
                }
            }
            GradStrategy::AdaGrad => {
                if self.accumulator.len() != params.len() {
                    self.accumulator = vec![0.0; params.len()];
                }
                for ((p, g), acc) in params.iter_mut().zip(&grad).zip(self.accumulator.iter_mut()) {
                    *acc += g * g;
                    *p -= self.learning_rate * g / (acc.sqrt() + ADAGRAD_EPS);
                }
            }
        }
        Ok(())
    }
}
