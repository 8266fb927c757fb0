//! Adam with L2 weight decay and a cosine-annealing learning rate with warm restarts.

use alloc::vec::Vec;

#[allow(unused_imports)]
use num_traits::Float;
use serde::{Deserialize, Serialize};

use crate::equivariant::LearnerParams;
use crate::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    /// Coefficient of the L2 penalty added to each gradient.
    pub weight_decay: f64,
    /// Length of every cosine cycle, in optimizer steps; 0 disables the schedule.
    pub restart: u64,
    pub min_lr: f64,
    /// Rescale the full gradient to at most this Euclidean norm; 0 disables clipping.
    pub max_grad_norm: f64,
    /// Round parameters and moments to single precision after each update so
    /// that single-precision checkpoints resume bit-exactly.
    pub round_to_f32: bool,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            lr: 2e-4,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 1e-3,
            restart: 1000,
            min_lr: 0.0,
            max_grad_norm: 0.0,
            round_to_f32: true,
        }
    }
}

impl AdamConfig {
    /// Learning rate for the update that follows `step` completed updates.
    pub fn lr_at(&self, step: u64) -> f64 {
        if self.restart == 0 {
            return self.lr;
        }
        let t = (step % self.restart) as f64 / self.restart as f64;
        self.min_lr + 0.5 * (self.lr - self.min_lr) * (1.0 + (core::f64::consts::PI * t).cos())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Adam {
    pub config: AdamConfig,
    pub first_moment: Vec<Vec<f64>>,
    pub second_moment: Vec<Vec<f64>>,
    /// Completed updates.
    pub step: u64,
}

fn round32(x: f64) -> f64 {
    x as f32 as f64
}

impl Adam {
    pub fn new(config: AdamConfig, params: &LearnerParams) -> Self {
        Adam { config, first_moment: params.zeros_like(), second_moment: params.zeros_like(), step: 0 }
    }

    /// Applies one update in place and returns the learning rate used.
    pub fn update(&mut self, params: &mut LearnerParams, grads: &[Vec<f64>]) -> Result<f64> {
        if grads.len() != params.tensors.len() {
            return Err(Error::SizeMismatch { expected: params.tensors.len(), found: grads.len() });
        }
        let c = &self.config;
        let lr = c.lr_at(self.step);
        let t = (self.step + 1) as i32;
        let bc1 = 1.0 - c.beta1.powi(t);
        let bc2 = 1.0 - c.beta2.powi(t);
        let norm = grads.iter().flatten().map(|g| g * g).sum::<f64>().sqrt();
        let clip = if c.max_grad_norm > 0.0 && norm > c.max_grad_norm { c.max_grad_norm / norm } else { 1.0 };
        for (k, tensor) in params.tensors.iter_mut().enumerate() {
            if grads[k].len() != tensor.data.len() {
                return Err(Error::SizeMismatch { expected: tensor.data.len(), found: grads[k].len() });
            }
            let (m, v) = (&mut self.first_moment[k], &mut self.second_moment[k]);
            for (i, x) in tensor.data.iter_mut().enumerate() {
                let g = clip * grads[k][i] + c.weight_decay * *x;
                m[i] = c.beta1 * m[i] + (1.0 - c.beta1) * g;
                v[i] = c.beta2 * v[i] + (1.0 - c.beta2) * g * g;
                *x -= lr * (m[i] / bc1) / ((v[i] / bc2).sqrt() + c.eps);
                if c.round_to_f32 {
                    *x = round32(*x);
                    m[i] = round32(m[i]);
                    v[i] = round32(v[i]);
                }
            }
        }
        self.step += 1;
        Ok(lr)
    }
}
