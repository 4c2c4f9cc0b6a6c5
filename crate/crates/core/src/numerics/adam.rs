//! Adaptive-moment optimizer with bias correction.

use thiserror::Error;

use crate::numerics::Tensor;
use crate::Scalar;

#[derive(Debug, Error)]
pub enum AdamError {
    #[error("parameter {index} has no gradient buffer")]
    MissingGrad { index: usize },
    #[error("parameter count changed: optimizer state holds {state}, step got {given}")]
    ParamCountMismatch { state: usize, given: usize },
}

/// Optimizer state. Moment buffers are allocated on the first step and must
/// line up with the same parameter list on every later step.
pub struct Adam<S: Scalar = f64> {
    lr: S,
    beta1: S,
    beta2: S,
    eps: S,
    step: u64,
    first_moment: Vec<Vec<S>>,
    second_moment: Vec<Vec<S>>,
}

impl<S: Scalar> Adam<S> {
    pub fn new(lr: S) -> Self {
        Adam {
            lr,
            beta1: S::of(0.9),
            beta2: S::of(0.999),
            eps: S::of(1e-8),
            step: 0,
            first_moment: Vec::new(),
            second_moment: Vec::new(),
        }
    }

    pub fn steps_taken(&self) -> u64 {
        self.step
    }

    /// One in-place update from accumulated gradients; clears them after.
    pub fn step(&mut self, params: &mut [&mut Tensor<S>]) -> Result<(), AdamError> {
        if self.first_moment.is_empty() {
            self.first_moment = params.iter().map(|p| vec![S::zero(); p.numel()]).collect();
            self.second_moment = self.first_moment.clone();
        } else if self.first_moment.len() != params.len() {
            return Err(AdamError::ParamCountMismatch {
                state: self.first_moment.len(),
                given: params.len(),
            });
        }
        self.step += 1;
        let t = self.step as i32;
        let bias1 = S::one() - self.beta1.powi(t);
        let bias2 = S::one() - self.beta2.powi(t);
        let one = S::one();

        for (index, param) in params.iter_mut().enumerate() {
            if param.grad().is_none() {
                return Err(AdamError::MissingGrad { index });
            }
            let m = &mut self.first_moment[index];
            let v = &mut self.second_moment[index];
            {
                let grad = param.grad().unwrap().to_vec();
                let values = param.values_mut();
                for i in 0..values.len() {
                    let g = grad[i];
                    m[i] = self.beta1 * m[i] + (one - self.beta1) * g;
                    v[i] = self.beta2 * v[i] + (one - self.beta2) * g * g;
                    let m_hat = m[i] / bias1;
                    let v_hat = v[i] / bias2;
                    values[i] = values[i] - self.lr * m_hat / (v_hat.sqrt() + self.eps);
                }
            }
            param.zero_grad();
        }
        Ok(())
    }
}
