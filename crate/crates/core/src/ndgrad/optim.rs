//! First-order optimizers: Adam (bias-corrected) and Adagrad.

use super::tensor::Tensor;
use crate::scalar::Scalar;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OptimizerKind {
    Adam,
    Adagrad,
}

/// Hyperparameters of one training run. Learning rates are kept as `f64`
/// in configs and converted at the update site.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrainConfig {
    pub optimizer: OptimizerKind,
    pub learning_rate: f64,
    pub epochs: usize,
    pub batch_size: usize,
    /// Cap on optimizer steps per epoch; `None` sweeps the full dataset.
    pub batches_per_epoch: Option<usize>,
}

impl TrainConfig {
    pub fn new(optimizer: OptimizerKind, learning_rate: f64, epochs: usize, batch_size: usize) -> Self {
        TrainConfig {
            optimizer,
            learning_rate,
            epochs,
            batch_size,
            batches_per_epoch: None,
        }
    }
}

const ADAM_BETA1: f64 = 0.9;
const ADAM_BETA2: f64 = 0.999;
const ADAM_EPS: f64 = 1e-8;
const ADAGRAD_EPS: f64 = 1e-10;

/// Per-parameter moment buffers plus a step counter. Buffers are laid out
/// to match the parameter list passed to [`Optimizer::step`].
#[derive(Debug, Clone)]
pub struct Optimizer<F> {
    kind: OptimizerKind,
    learning_rate: f64,
    step_count: u64,
    first_moment: Vec<Vec<F>>,
    second_moment: Vec<Vec<F>>,
}

impl<F: Scalar> Optimizer<F> {
    pub fn new(kind: OptimizerKind, learning_rate: f64, param_sizes: &[usize]) -> Self {
        assert!(learning_rate > 0.0, "learning rate must be positive");
        let first_moment = param_sizes.iter().map(|&n| vec![F::zero(); n]).collect();
        let second_moment = param_sizes.iter().map(|&n| vec![F::zero(); n]).collect();
        Optimizer {
            kind,
            learning_rate,
            step_count: 0,
            first_moment,
            second_moment,
        }
    }

    pub fn step_count(&self) -> u64 {
        self.step_count
    }

    /// Apply one update from the gradients stored on the parameters.
    pub fn step(&mut self, params: &mut [&mut Tensor<F>]) {
        assert_eq!(params.len(), self.second_moment.len());
        self.step_count += 1;
        let lr = F::cast(self.learning_rate);
        match self.kind {
            OptimizerKind::Adam => {
                let b1 = F::cast(ADAM_BETA1);
                let b2 = F::cast(ADAM_BETA2);
                let eps = F::cast(ADAM_EPS);
                let bc1 = F::cast(1.0 - ADAM_BETA1.powi(self.step_count as i32));
                let bc2 = F::cast(1.0 - ADAM_BETA2.powi(self.step_count as i32));
                for (idx, p) in params.iter_mut().enumerate() {
                    let Some(grad) = p.grad().map(<[F]>::to_vec) else {
                        continue;
                    };
                    let m = &mut self.first_moment[idx];
                    let v = &mut self.second_moment[idx];
                    let data = p.data_mut();
                    for i in 0..data.len() {
                        let g = grad[i];
                        m[i] = b1 * m[i] + (F::one() - b1) * g;
                        v[i] = b2 * v[i] + (F::one() - b2) * g * g;
                        let m_hat = m[i] / bc1;
                        let v_hat = v[i] / bc2;
                        data[i] -= lr * m_hat / (v_hat.sqrt() + eps);
                    }
                }
            }
            OptimizerKind::Adagrad => {
                let eps = F::cast(ADAGRAD_EPS);
                for (idx, p) in params.iter_mut().enumerate() {
                    let Some(grad) = p.grad().map(<[F]>::to_vec) else {
                        continue;
                    };
                    let acc = &mut self.second_moment[idx];
                    let data = p.data_mut();
                    for i in 0..data.len() {
                        let g = grad[i];
                        acc[i] += g * g;
                        data[i] -= lr * g / (acc[i].sqrt() + eps);
                    }
                }
            }
        }
    }
}
