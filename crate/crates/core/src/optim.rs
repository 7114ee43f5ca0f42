//! AdamW with decoupled weight decay.
//!
//! ```text
//! m ← β1 m + (1 - β1) g
//! v ← β2 v + (1 - β2) g²
//! m̂ = m / (1 - β1^t),  v̂ = v / (1 - β2^t)
//! θ ← θ - lr (m̂ / (√v̂ + ε) + λ θ)
//! ```
//!
//! Moments are kept in `f64`; parameters round to their storage type once
//! per step.

use serde::{Deserialize, Serialize};

use crate::error::{EsnError, Result};
use crate::head::{HeadGrads, OutputHead, Scalar};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AdamWConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub weight_decay: f64,
    /// Apply weight decay to the output bias as well as `A` and `B`.
    pub decay_bias: bool,
}

impl Default for AdamWConfig {
    fn default() -> Self {
        Self {
            learning_rate: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            weight_decay: 1e-2,
            decay_bias: true,
        }
    }
}

impl AdamWConfig {
    pub fn validate(&self) -> Result<()> {
        let ok = self.learning_rate.is_finite()
            && self.learning_rate > 0.0
            && (0.0..1.0).contains(&self.beta1)
            && (0.0..1.0).contains(&self.beta2)
            && self.epsilon.is_finite()
            && self.epsilon > 0.0
            && self.weight_decay.is_finite()
            && self.weight_decay >= 0.0;
        if ok {
            Ok(())
        } else {
            Err(EsnError::invalid(format!("invalid optimizer settings {self:?}")))
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum HeadTensor {
    A,
    B,
    Bias,
}

impl HeadTensor {
    pub const ALL: [HeadTensor; 3] = [HeadTensor::A, HeadTensor::B, HeadTensor::Bias];

    pub fn name(self) -> &'static str {
        match self {
            HeadTensor::A => "a_mat",
            HeadTensor::B => "b_mat",
            HeadTensor::Bias => "bias",
        }
    }
}

/// First and second moments for `(A, B, bias)`, in that order.
#[derive(Debug, Clone, PartialEq)]
pub struct OptimizerState {
    pub config: AdamWConfig,
    pub step_count: u64,
    pub first_moment: [Vec<f64>; 3],
    pub second_moment: [Vec<f64>; 3],
}

impl OptimizerState {
    pub fn new<T: Scalar>(config: AdamWConfig, head: &OutputHead<T>) -> Self {
        let zeros = || {
            [
                vec![0.0; head.a_mat.len()],
                vec![0.0; head.b_mat.len()],
                vec![0.0; head.bias.len()],
            ]
        };
        Self {
            config,
            step_count: 0,
            first_moment: zeros(),
            second_moment: zeros(),
        }
    }

    /// One AdamW update of every head tensor. Gradients are checked before
    /// anything is modified.
    pub fn step<T: Scalar>(&mut self, head: &mut OutputHead<T>, grads: &HeadGrads) -> Result<()> {
        let grad_tensors = [&grads.a_mat, &grads.b_mat, &grads.bias];
        for (tensor, g) in HeadTensor::ALL.iter().zip(grad_tensors) {
            if g.iter().any(|x| !x.is_finite()) {
                return Err(EsnError::NonFiniteGradient { tensor: tensor.name() });
            }
        }
        let shapes_ok = grads.a_mat.len() == head.a_mat.len()
            && grads.b_mat.len() == head.b_mat.len()
            && grads.bias.len() == head.bias.len()
            && self.first_moment[0].len() == head.a_mat.len()
            && self.first_moment[1].len() == head.b_mat.len()
            && self.first_moment[2].len() == head.bias.len();
        if !shapes_ok {
            return Err(EsnError::invalid("gradient, moment and parameter shapes disagree"));
        }

        self.step_count += 1;
        let c = self.config;
        let t = self.step_count as i32;
        let bias1 = 1.0 - c.beta1.powi(t);
        let bias2 = 1.0 - c.beta2.powi(t);
        let params = [&mut head.a_mat, &mut head.b_mat, &mut head.bias];
        for (k, (theta, g)) in params.into_iter().zip(grad_tensors).enumerate() {
            let decay = if k == 2 && !c.decay_bias { 0.0 } else { c.weight_decay };
            let (m, v) = (&mut self.first_moment[k], &mut self.second_moment[k]);
            for i in 0..theta.len() {
                m[i] = c.beta1 * m[i] + (1.0 - c.beta1) * g[i];
                v[i] = c.beta2 * v[i] + (1.0 - c.beta2) * g[i] * g[i];
                let m_hat = m[i] / bias1;
                let v_hat = v[i] / bias2;
                let old = theta[i].to_f64();
                theta[i] = T::from_f64(old - c.learning_rate * (m_hat / (v_hat.sqrt() + c.epsilon) + decay * old));
            }
        }
        Ok(())
    }
}
