//! Learner configuration and the shared parameter set.

use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::elements::MAX_ELEMENT;
use crate::molgraph::DEFAULT_ADJACENCY_ORDER;
use crate::{Error, Result};
#[allow(unused_imports)]
use num_traits::Float;

/// Bond classes used for edge types: non-bonded plus the four bond orders.
pub const BOND_CLASSES: usize = 5;
/// Width of the noise-level feature vector used for diffusion conditioning.
pub const SIGMA_FEATURES: usize = 16;

/// What the per-molecule conditioning row encodes.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ConditioningKind {
    /// Learned embedding of the boosting step index.
    Step,
    /// Fourier features of the noise level.
    Sigma,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LearnerConfig {
    /// Scalar (type-0) channels.
    pub scalar_channels: usize,
    /// Vector (type-1) channels; must not exceed `scalar_channels`.
    pub vector_channels: usize,
    pub blocks: usize,
    pub rbf_count: usize,
    /// Radial cutoff in Å.
    pub cutoff: f64,
    /// Hop order of the attention neighbourhood.
    pub adjacency_order: u8,
    /// Size of the step embedding table.
    pub steps: usize,
    pub conditioning: ConditioningKind,
    /// Uniform init range of the output head relative to its fan-in bound.
    pub head_init_scale: f64,
}

impl Default for LearnerConfig {
    fn default() -> Self {
        LearnerConfig {
            scalar_channels: 32,
            vector_channels: 16,
            blocks: 4,
            rbf_count: 16,
            cutoff: 10.0,
            adjacency_order: DEFAULT_ADJACENCY_ORDER,
            steps: 5,
            conditioning: ConditioningKind::Step,
            head_init_scale: 0.0,
        }
    }
}

impl LearnerConfig {
    pub fn validate(&self) -> Result<()> {
        if self.scalar_channels == 0 || self.vector_channels == 0 {
            return Err(Error::Invalid("channel widths must be positive".into()));
        }
        if self.vector_channels > self.scalar_channels {
            return Err(Error::Invalid("vector_channels must not exceed scalar_channels".into()));
        }
        if self.rbf_count < 2 || !(self.cutoff > 0.0) {
            return Err(Error::Invalid("radial basis needs at least 2 functions and a positive cutoff".into()));
        }
        if self.adjacency_order == 0 {
            return Err(Error::Invalid("adjacency order must be at least 1".into()));
        }
        if self.conditioning == ConditioningKind::Step && self.steps == 0 {
            return Err(Error::Invalid("step table needs at least one row".into()));
        }
        Ok(())
    }

    /// Radial weights consumed by a depth-wise tensor product with `p` scalar and `q` vector inputs.
    pub(crate) fn dtp_weights(p: usize, q: usize) -> usize {
        p + 4 * q
    }

    pub(crate) fn radial_outputs(&self) -> usize {
        let (d0, d1) = (self.scalar_channels, self.vector_channels);
        Self::dtp_weights(d0, d1) + Self::dtp_weights(d0 + d1, d1)
    }

    /// Names and shapes of every tensor, in storage order.
    pub fn layout(&self) -> Vec<(String, usize, usize)> {
        let (d0, d1) = (self.scalar_channels, self.vector_channels);
        let h = self.adjacency_order as usize;
        let mut out: Vec<(String, usize, usize)> = Vec::new();
        let mut push = |name: String, r: usize, c: usize| out.push((name, r, c));
        push("atom_embed".into(), MAX_ELEMENT as usize + 1, d0);
        push("edge_embed".into(), BOND_CLASSES * h, d0);
        match self.conditioning {
            ConditioningKind::Step => push("step_embed".into(), self.steps, d0),
            ConditioningKind::Sigma => {
                push("sigma_w".into(), SIGMA_FEATURES, d0);
                push("sigma_b".into(), 1, d0);
            }
        }
        for b in 0..self.blocks {
            let p = |s: &str| format!("b{b}.{s}");
            push(p("ln1_g"), 1, d0);
            push(p("ln1_b"), 1, d0);
            push(p("ln1_v"), 1, d1);
            push(p("msg_w"), 3 * d0, d0);
            push(p("msg_b"), 1, d0);
            push(p("vmsg_dst"), d1, d1);
            push(p("vmsg_src"), d1, d1);
            push(p("rad_w1"), self.rbf_count, d0);
            push(p("rad_b1"), 1, d0);
            push(p("rad_w2"), d0, self.radial_outputs());
            push(p("rad_b2"), 1, self.radial_outputs());
            push(p("att"), d0 + d1, 1);
            push(p("gate_w"), d0 + d1, d1);
            push(p("gate_b"), 1, d1);
            push(p("out_w"), d0 + 2 * d1, d0);
            push(p("out_b"), 1, d0);
            push(p("out_v"), d1, d1);
            push(p("ln2_g"), 1, d0);
            push(p("ln2_b"), 1, d0);
            push(p("ln2_v"), 1, d1);
            push(p("ffn_w1"), d0, 2 * d0);
            push(p("ffn_b1"), 1, 2 * d0);
            push(p("ffn_w2"), 2 * d0, d0);
            push(p("ffn_b2"), 1, d0);
            push(p("ffn_gw"), d0, d1);
            push(p("ffn_gb"), 1, d1);
            push(p("ffn_v1"), d1, d1);
            push(p("ffn_v2"), d1, d1);
        }
        push("head".into(), d1, 1);
        out
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ParamTensor {
    pub name: String,
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f64>,
}

/// The single parameter set shared by every boosting step.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LearnerParams {
    pub config: LearnerConfig,
    pub tensors: Vec<ParamTensor>,
}

impl LearnerParams {
    /// All tensors zero.
    pub fn zeros(config: &LearnerConfig) -> Result<Self> {
        config.validate()?;
        let tensors = config
            .layout()
            .into_iter()
            .map(|(name, rows, cols)| ParamTensor { name, rows, cols, data: alloc::vec![0.0; rows * cols] })
            .collect();
        Ok(LearnerParams { config: config.clone(), tensors })
    }

    /// Random initialization: Glorot-uniform weights, unit norm gains, zero
    /// biases, radial output bias of one so tensor-product paths start open.
    pub fn init<R: Rng + ?Sized>(config: &LearnerConfig, rng: &mut R) -> Result<Self> {
        let mut p = Self::zeros(config)?;
        for t in &mut p.tensors {
            let base = t.name.rsplit('.').next().unwrap_or(&t.name);
            let fill = match base {
                "ln1_g" | "ln2_g" | "ln1_v" | "ln2_v" | "rad_b2" => Some(1.0),
                s if s.ends_with("_b") || s.ends_with("_b1") || s.ends_with("_b2") || s == "ffn_gb" => Some(0.0),
                _ => None,
            };
            match fill {
                Some(v) => t.data.iter_mut().for_each(|x| *x = v),
                None => {
                    let (fan_in, fan_out) = match base {
                        "atom_embed" | "edge_embed" | "step_embed" => (1, 1),
                        _ => (t.rows, t.cols),
                    };
                    let mut bound = (6.0 / (fan_in + fan_out) as f64).sqrt();
                    if base == "head" {
                        bound *= config.head_init_scale;
                    }
                    t.data.iter_mut().for_each(|x| *x = rng.random_range(-bound..=bound));
                }
            }
        }
        Ok(p)
    }

    pub fn param_count(&self) -> usize {
        self.tensors.iter().map(|t| t.data.len()).sum()
    }

    pub fn index(&self, name: &str) -> Option<usize> {
        self.tensors.iter().position(|t| t.name == name)
    }

    pub fn tensor(&self, name: &str) -> Option<&ParamTensor> {
        self.tensors.iter().find(|t| t.name == name)
    }

    pub fn tensor_mut(&mut self, name: &str) -> Option<&mut ParamTensor> {
        self.tensors.iter_mut().find(|t| t.name == name)
    }

    /// Zeroes the output head so the learner predicts no displacement.
    pub fn zero_head(&mut self) {
        if let Some(t) = self.tensor_mut("head") {
            t.data.iter_mut().for_each(|x| *x = 0.0);
        }
    }

    /// Rounds every value to the nearest single-precision float.
    pub fn round_to_f32(&mut self) {
        self.tensors.iter_mut().flat_map(|t| t.data.iter_mut()).for_each(|x| *x = *x as f32 as f64);
    }

    pub fn is_finite(&self) -> bool {
        self.tensors.iter().all(|t| t.data.iter().all(|x| x.is_finite()))
    }

    /// Same shapes as `self`, all zero.
    pub fn zeros_like(&self) -> Vec<Vec<f64>> {
        self.tensors.iter().map(|t| alloc::vec![0.0; t.data.len()]).collect()
    }

    /// Checks that tensor names and shapes match the configured layout.
    pub fn check_layout(&self) -> Result<()> {
        self.config.validate()?;
        let layout = self.config.layout();
        if layout.len() != self.tensors.len() {
            return Err(Error::SizeMismatch { expected: layout.len(), found: self.tensors.len() });
        }
        for ((name, r, c), t) in layout.iter().zip(&self.tensors) {
            if *name != t.name || *r != t.rows || *c != t.cols || t.data.len() != r * c {
                return Err(Error::Invalid(format!("tensor {} does not match the configured layout", t.name)));
            }
        }
        Ok(())
    }
}
