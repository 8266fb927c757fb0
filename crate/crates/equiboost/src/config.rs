//! Training configuration file and its `EQB_*` environment overrides.

use std::path::Path;

use equiboost_core::boost::BoostConfig;
use equiboost_core::edm::NoiseSchedule;
use equiboost_core::equivariant::{ConditioningKind, LearnerConfig};
use equiboost_core::losses::LossWeights;
use equiboost_core::optim::AdamConfig;
use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

use crate::error::{read_to_string, AppError, AppResult, ParseError};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ModelKind {
    #[default]
    Boost,
    Edm,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Scheduler {
    #[default]
    Cosine,
    Constant,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub model: ModelKind,
    /// Boosting steps.
    #[serde(rename = "M")]
    pub steps: usize,
    pub lr: f64,
    pub weight_decay: f64,
    pub scheduler: Scheduler,
    /// Cosine cycle length in optimizer steps.
    pub restart: u64,
    pub min_lr: f64,
    /// 0 disables clipping.
    pub max_grad_norm: f64,
    /// CRS initialization for training noise; RS when false.
    pub crs: bool,
    pub randomize_depth: bool,
    pub detach: bool,
    pub epochs: usize,
    pub batch_size: usize,
    /// Checkpoint period in optimizer steps; 0 writes only the final checkpoint.
    pub checkpoint_every: u64,
    pub seed: u64,
    pub learner: LearnerConfig,
    pub loss_weights: LossWeights,
    pub edm: NoiseSchedule,
}

impl Default for TrainConfig {
    fn default() -> Self {
        let adam = AdamConfig::default();
        TrainConfig {
            model: ModelKind::Boost,
            steps: 5,
            lr: adam.lr,
            weight_decay: adam.weight_decay,
            scheduler: Scheduler::Cosine,
            restart: adam.restart,
            min_lr: adam.min_lr,
            max_grad_norm: adam.max_grad_norm,
            crs: true,
            randomize_depth: true,
            detach: false,
            epochs: 1,
            batch_size: 4,
            checkpoint_every: 100,
            seed: 0,
            learner: LearnerConfig::default(),
            loss_weights: LossWeights::default(),
            edm: NoiseSchedule::default(),
        }
    }
}

/// Parses an override value as JSON, falling back to a bare string.
fn env_value(raw: &str) -> Value {
    serde_json::from_str(raw).unwrap_or_else(|_| Value::String(raw.to_string()))
}

impl TrainConfig {
    /// Reads the optional config file, then applies `EQB_<KEY>` overrides for
    /// top-level keys (`EQB_M`, `EQB_LR`, `EQB_BATCH_SIZE`, ...).
    pub fn load<I>(path: Option<&Path>, env: I) -> AppResult<Self>
    where
        I: IntoIterator<Item = (String, String)>,
    {
        let (mut root, origin) = match path {
            Some(p) => {
                let text = read_to_string(p, "config file")?;
                let v: Value = serde_json::from_str(&text)
                    .map_err(|e| AppError::parse(p, ParseError::new(e.line(), e.to_string())))?;
                (v, p.display().to_string())
            }
            None => (Value::Object(Map::new()), "defaults".to_string()),
        };
        let obj = root
            .as_object_mut()
            .ok_or_else(|| AppError::Input(format!("{origin}: config must be a JSON object")))?;
        let keys = match serde_json::to_value(TrainConfig::default()) {
            Ok(Value::Object(m)) => m,
            _ => unreachable!("config serializes to an object"),
        };
        for (name, raw) in env {
            let Some(suffix) = name.strip_prefix("EQB_") else { continue };
            if let Some(key) = keys.keys().find(|k| k.to_ascii_uppercase() == suffix) {
                obj.insert(key.clone(), env_value(&raw));
            }
        }
        let config: TrainConfig =
            serde_json::from_value(root).map_err(|e| AppError::Input(format!("{origin}: {e}")))?;
        config.validate()?;
        Ok(config)
    }

    pub fn validate(&self) -> AppResult<()> {
        let bad = |m: &str| Err(AppError::Input(format!("invalid config: {m}")));
        if self.steps == 0 {
            return bad("M must be at least 1");
        }
        if self.batch_size == 0 {
            return bad("batch_size must be at least 1");
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) || self.weight_decay < 0.0 || self.max_grad_norm < 0.0 {
            return bad("lr must be positive; weight_decay and max_grad_norm non-negative");
        }
        self.learner_config().validate()?;
        if self.model == ModelKind::Edm {
            self.edm.validate()?;
        }
        Ok(())
    }

    /// Learner layout for this run: step table sized to `M`, conditioning set by the model.
    pub fn learner_config(&self) -> LearnerConfig {
        let mut c = self.learner.clone();
        match self.model {
            ModelKind::Boost => {
                c.steps = self.steps;
                c.conditioning = ConditioningKind::Step;
            }
            ModelKind::Edm => c.conditioning = ConditioningKind::Sigma,
        }
        c
    }

    pub fn adam_config(&self) -> AdamConfig {
        AdamConfig {
            lr: self.lr,
            weight_decay: self.weight_decay,
            restart: match self.scheduler {
                Scheduler::Cosine => self.restart,
                Scheduler::Constant => 0,
            },
            min_lr: self.min_lr,
            max_grad_norm: self.max_grad_norm,
            ..AdamConfig::default()
        }
    }

    pub fn boost_config(&self) -> BoostConfig {
        BoostConfig {
            steps: self.steps,
            randomize_depth: self.randomize_depth,
            detach: self.detach,
            loss_weights: self.loss_weights,
        }
    }
}
