//! Adam with decoupled weight decay, and the warmup-then-linear-decay
//! learning-rate schedule used for encoder pretraining.

use super::{Scalar, Tensor, TensorError};

#[derive(Debug, Clone, Copy)]
pub struct AdamConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    /// Decoupled weight-decay coefficient applied as `θ ← θ − lr·λ·θ`,
    /// independent of the gradient term.
    pub weight_decay: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            learning_rate: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 0.01,
        }
    }
}

/// Per-parameter first/second moment state, aligned with the parameter list
/// it was created for.
pub struct AdamState<T: Scalar> {
    pub step: u64,
    pub config: AdamConfig,
    first_moment: Vec<Vec<T>>,
    second_moment: Vec<Vec<T>>,
}

impl<T: Scalar> AdamState<T> {
    pub fn new(params: &[Tensor<T>], config: AdamConfig) -> Self {
        AdamState {
            step: 0,
            config,
            first_moment: params.iter().map(|p| vec![T::zero(); p.numel()]).collect(),
            second_moment: params.iter().map(|p| vec![T::zero(); p.numel()]).collect(),
        }
    }

    /// One optimizer step at learning rate `lr_now` (typically from a
    /// schedule). Parameters without an accumulated gradient are treated
    /// as having zero gradient: moments decay and weight decay applies.
    pub fn step(&mut self, params: &[Tensor<T>], lr_now: f64) -> Result<(), TensorError> {
        if params.len() != self.first_moment.len() {
            return Err(TensorError::Invalid {
                op: "adam_step",
                msg: format!(
                    "state built for {} parameters, got {}",
                    self.first_moment.len(),
                    params.len()
                ),
            });
        }
        self.step += 1;
        let b1 = T::from_f64c(self.config.beta1);
        let b2 = T::from_f64c(self.config.beta2);
        let eps = T::from_f64c(self.config.eps);
        let lr = T::from_f64c(lr_now);
        let wd = T::from_f64c(self.config.weight_decay);
        let bias1 = T::from_f64c(1.0 - self.config.beta1.powi(self.step as i32));
        let bias2 = T::from_f64c(1.0 - self.config.beta2.powi(self.step as i32));
        let one = T::one();

        for (idx, param) in params.iter().enumerate() {
            let grad = param.grad();
            let zero_grad;
            let g: &[T] = match &grad {
                Some(g) => {
                    if g.len() != param.numel() {
                        return Err(TensorError::Invalid {
                            op: "adam_step",
                            msg: format!(
                                "gradient length {} does not match parameter size {}",
                                g.len(),
                                param.numel()
                            ),
                        });
                    }
                    g
                }
                None => {
                    zero_grad = vec![T::zero(); param.numel()];
                    &zero_grad
                }
            };
            let m = &mut self.first_moment[idx];
            let v = &mut self.second_moment[idx];
            let mut theta = param.to_vec();
            for i in 0..theta.len() {
                m[i] = b1 * m[i] + (one - b1) * g[i];
                v[i] = b2 * v[i] + (one - b2) * g[i] * g[i];
                let m_hat = m[i] / bias1;
                let v_hat = v[i] / bias2;
                // Decoupled decay, then the Adam update.
                theta[i] = theta[i] - lr * wd * theta[i];
                theta[i] = theta[i] - lr * m_hat / (v_hat.sqrt() + eps);
            }
            param.set_data(&theta);
        }
        Ok(())
    }
}

/// Linear warmup from zero to `peak_lr`, then linear decay back to zero.
#[derive(Debug, Clone, Copy)]
pub struct WarmupLinearSchedule {
    pub warmup_steps: u64,
    pub total_steps: u64,
    pub peak_lr: f64,
}

impl WarmupLinearSchedule {
    pub fn new(warmup_steps: u64, total_steps: u64, peak_lr: f64) -> Result<Self, TensorError> {
        if total_steps <= warmup_steps {
            return Err(TensorError::Invalid {
                op: "schedule",
                msg: format!("total_steps {total_steps} must exceed warmup_steps {warmup_steps}"),
            });
        }
        Ok(WarmupLinearSchedule {
            warmup_steps,
            total_steps,
            peak_lr,
        })
    }

    /// Learning rate at `step ∈ [0, total_steps]`.
    pub fn lr(&self, step: u64) -> Result<f64, TensorError> {
        if step > self.total_steps {
            return Err(TensorError::Invalid {
                op: "schedule",
                msg: format!("step {step} past total_steps {}", self.total_steps),
            });
        }
        if step < self.warmup_steps {
            return Ok(self.peak_lr * step as f64 / self.warmup_steps as f64);
        }
        let decay_span = (self.total_steps - self.warmup_steps) as f64;
        Ok(self.peak_lr * (self.total_steps - step) as f64 / decay_span)
    }
}
