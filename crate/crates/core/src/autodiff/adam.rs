use super::{GraphError, Tensor};
use ndarray::{ArrayD, Zip};
use serde::{Deserialize, Serialize};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self { lr: 1e-3, beta1: 0.9, beta2: 0.999, eps: 1e-8 }
    }
}

/// Adam moments for an ordered list of parameters.
#[derive(Clone, Debug, PartialEq)]
pub struct AdamState {
    pub config: AdamConfig,
    pub first_moment: Vec<ArrayD<f64>>,
    pub second_moment: Vec<ArrayD<f64>>,
    pub step_count: u64,
}

impl AdamState {
    pub fn new(params: &[&Tensor], config: AdamConfig) -> Self {
        let zeros = |t: &&Tensor| ArrayD::zeros(t.data.raw_dim());
        Self {
            config,
            first_moment: params.iter().map(zeros).collect(),
            second_moment: params.iter().map(zeros).collect(),
            step_count: 0,
        }
    }

    pub fn set_lr(&mut self, lr: f64) {
        self.config.lr = lr;
    }

    /// One bias-corrected update. `grads[i]` belongs to `params[i]`;
    /// frozen parameters (`requires_grad == false`) or missing gradients
    /// are left untouched.
    pub fn step(&mut self, params: &mut [&mut Tensor], grads: &[Option<ArrayD<f64>>]) -> Result<(), GraphError> {
        if params.len() != self.first_moment.len() || grads.len() != params.len() {
            return Err(GraphError::Shape {
                op: "adam",
                detail: format!("{} params, {} grads, {} moments", params.len(), grads.len(), self.first_moment.len()),
            });
        }
        self.step_count += 1;
        let AdamConfig { lr, beta1, beta2, eps } = self.config;
        let t = self.step_count as i32;
        let c1 = 1.0 - beta1.powi(t);
        let c2 = 1.0 - beta2.powi(t);
        for (i, p) in params.iter_mut().enumerate() {
            let Some(g) = &grads[i] else { continue };
            if !p.requires_grad {
                continue;
            }
            if g.shape() != p.data.shape() {
                return Err(GraphError::Shape {
                    op: "adam",
                    detail: format!("param {i}: {:?} vs grad {:?}", p.data.shape(), g.shape()),
                });
            }
            Zip::from(&mut p.data)
                .and(&mut self.first_moment[i])
                .and(&mut self.second_moment[i])
                .and(g)
                .for_each(|w, m, v, &gi| {
                    *m = beta1 * *m + (1.0 - beta1) * gi;
                    *v = beta2 * *v + (1.0 - beta2) * gi * gi;
                    *w -= lr * (*m / c1) / ((*v / c2).sqrt() + eps);
                });
            if !p.is_finite() {
                return Err(GraphError::NonFinite { op: "adam" });
            }
        }
        Ok(())
    }
}
