use serde::{Deserialize, Serialize};

use super::Tensor;
use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub base_lr: f64,
    #[serde(default = "default_beta1")]
    pub beta1: f64,
    #[serde(default = "default_beta2")]
    pub beta2: f64,
    #[serde(default = "default_eps")]
    pub eps: f64,
    /// Horizon of the linear decay; the learning rate reaches zero here.
    pub total_steps: usize,
}

fn default_beta1() -> f64 {
    0.9
}
fn default_beta2() -> f64 {
    0.999
}
fn default_eps() -> f64 {
    1e-8
}

impl AdamConfig {
    pub fn new(base_lr: f64, total_steps: usize) -> Self {
        Self {
            base_lr,
            beta1: default_beta1(),
            beta2: default_beta2(),
            eps: default_eps(),
            total_steps,
        }
    }
}

/// Adam with bias correction and `lr(step) = base_lr · max(0, 1 − step/total)`.
#[derive(Clone, Debug)]
pub struct Adam {
    pub config: AdamConfig,
    first_moment: Vec<Vec<f64>>,
    second_moment: Vec<Vec<f64>>,
    step_count: usize,
}

impl Adam {
    pub fn new<'t>(config: AdamConfig, params: impl IntoIterator<Item = &'t Tensor>) -> Self {
        let zeros: Vec<Vec<f64>> = params.into_iter().map(|p| vec![0.0; p.numel()]).collect();
        Self {
            config,
            first_moment: zeros.clone(),
            second_moment: zeros,
            step_count: 0,
        }
    }

    pub fn step_count(&self) -> usize {
        self.step_count
    }

    pub fn effective_lr(&self, step: usize) -> f64 {
        let frac = step as f64 / self.config.total_steps as f64;
        self.config.base_lr * (1.0 - frac).max(0.0)
    }

    /// Applies one update from each parameter's accumulated `grad` (a missing
    /// gradient counts as zero) and clears the accumulators.
    pub fn step<'t>(
        &mut self,
        params: impl IntoIterator<Item = (String, &'t mut Tensor)>,
    ) -> Result<()> {
        if self.step_count >= self.config.total_steps {
            return Err(Error::contract(format!(
                "adam step {} beyond the decay horizon of {} steps",
                self.step_count, self.config.total_steps
            )));
        }
        let params: Vec<(String, &mut Tensor)> = params.into_iter().collect();
        if params.len() != self.first_moment.len() {
            return Err(Error::contract(format!(
                "adam tracks {} parameters, got {}",
                self.first_moment.len(),
                params.len()
            )));
        }
        for (name, p) in &params {
            if let Some(g) = &p.grad {
                if let Some(i) = g.iter().position(|v| !v.is_finite()) {
                    return Err(Error::Training {
                        param: name.clone(),
                        message: format!("non-finite gradient at element {i}"),
                    });
                }
            }
        }
        let AdamConfig {
            beta1, beta2, eps, ..
        } = self.config;
        let lr = self.effective_lr(self.step_count);
        let t = (self.step_count + 1) as i32;
        let bc1 = 1.0 - beta1.powi(t);
        let bc2 = 1.0 - beta2.powi(t);
        for ((_, p), (m, v)) in params.into_iter().zip(
            self.first_moment
                .iter_mut()
                .zip(self.second_moment.iter_mut()),
        ) {
            let grad = p.grad.take();
            let zeros;
            let g = match &grad {
                Some(g) => g.as_slice(),
                None => {
                    zeros = vec![0.0; m.len()];
                    &zeros
                }
            };
            for (((w, gi), mi), vi) in p
                .data_mut()
                .iter_mut()
                .zip(g)
                .zip(m.iter_mut())
                .zip(v.iter_mut())
            {
                *mi = beta1 * *mi + (1.0 - beta1) * gi;
                *vi = beta2 * *vi + (1.0 - beta2) * gi * gi;
                let mhat = *mi / bc1;
                let vhat = *vi / bc2;
                *w -= lr * mhat / (vhat.sqrt() + eps);
            }
        }
        self.step_count += 1;
        Ok(())
    }
}
