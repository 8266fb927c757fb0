//! Training loop over a dataset, with checkpoints that resume bit-exactly.

use std::fs::OpenOptions;
use std::io::Write;
use std::path::{Path, PathBuf};

use equiboost_core::boost::{apply_gradients, compute_gradients, draw_depth, StepGradients, TrainBatch, TrainSample};
use equiboost_core::edm::{draw_training_example, edm_compute_gradients};
use equiboost_core::equivariant::LearnerParams;
use equiboost_core::losses::LossBreakdown;
use equiboost_core::optim::Adam;
use equiboost_core::sampler::{initial_conformation, GeometryTable, InitKind};
use equiboost_core::Error as CoreError;
use rand::seq::index;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;

use crate::checkpoint::{Checkpoint, RngState, TrainProgress};
use crate::config::{ModelKind, TrainConfig};
use crate::error::{AppError, AppResult};
use crate::store::{Dataset, MoleculeDir};

/// A molecule that could not be loaded for training.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Skipped {
    pub molecule: String,
    pub reason: String,
}

fn load_sample(m: &MoleculeDir, adjacency_order: u8) -> AppResult<TrainSample> {
    let g = m.graph()?;
    let refs = MoleculeDir::read_ensemble(&m.truth_files()?, &g)?;
    if refs.is_empty() {
        return Err(AppError::Input("no reference conformations".into()));
    }
    Ok(TrainSample::new(g, refs, adjacency_order)?)
}

/// Loads every molecule with a graph and references; the rest are reported.
pub fn load_training_set(ds: &Dataset, adjacency_order: u8) -> (Vec<(String, TrainSample)>, Vec<Skipped>) {
    let loaded: Vec<_> = ds.molecules.par_iter().map(|m| (m.name.clone(), load_sample(m, adjacency_order))).collect();
    let mut samples = Vec::new();
    let mut skipped = Vec::new();
    for (name, r) in loaded {
        match r {
            Ok(s) => samples.push((name, s)),
            Err(e) => skipped.push(Skipped { molecule: name, reason: e.to_string() }),
        }
    }
    (samples, skipped)
}

/// One line of the JSON-lines training log.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct StepLog {
    pub iteration: u64,
    pub molecules: Vec<String>,
    /// Batch mean of each loss term; null when a step diverged.
    pub loss: LossBreakdown,
    /// Unroll depth drawn for boosting.
    #[serde(rename = "M_train", skip_serializing_if = "Option::is_none")]
    pub depth: Option<usize>,
    /// Noise level per batch entry for the diffusion model.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub sigma: Option<Vec<f64>>,
    pub lr: f64,
    pub updated: bool,
}

fn splitmix(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9e37_79b9_7f4a_7c15);
    x = (x ^ (x >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    x ^ (x >> 31)
}

/// Independent stream for batch entry `slot` of iteration `iteration`.
fn entry_rng(seed: u64, iteration: u64, slot: usize) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(splitmix(splitmix(seed ^ splitmix(iteration)) ^ slot as u64))
}

fn mean_loss(losses: &[LossBreakdown]) -> LossBreakdown {
    let n = losses.len() as f64;
    let sum = |f: fn(&LossBreakdown) -> f64| losses.iter().map(f).sum::<f64>() / n;
    LossBreakdown {
        pirmsd: sum(|l| l.pirmsd),
        bond_length: sum(|l| l.bond_length),
        bond_angle: sum(|l| l.bond_angle),
        dihedral: sum(|l| l.dihedral),
        edist: sum(|l| l.edist),
        total: sum(|l| l.total),
    }
}

/// Batch mean of per-entry gradients, accumulated in batch order.
fn mean_grads(parts: &[StepGradients], like: &LearnerParams) -> Vec<Vec<f64>> {
    let mut acc = like.zeros_like();
    for p in parts {
        for (a, g) in acc.iter_mut().zip(&p.grads) {
            a.iter_mut().zip(g).for_each(|(a, g)| *a += g);
        }
    }
    let n = parts.len() as f64;
    acc.iter_mut().flatten().for_each(|a| *a /= n);
    acc
}

pub struct Trainer {
    pub config: TrainConfig,
    pub names: Vec<String>,
    samples: Vec<TrainSample>,
    pub params: LearnerParams,
    pub optimizer: Adam,
    rng: ChaCha8Rng,
    /// Completed iterations, including skipped updates.
    pub iteration: u64,
    table: GeometryTable,
}

impl Trainer {
    /// Fresh parameters drawn from the config seed.
    pub fn new(config: TrainConfig, samples: Vec<(String, TrainSample)>, table: GeometryTable) -> AppResult<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let mut params = LearnerParams::init(&config.learner_config(), &mut rng)?;
        params.round_to_f32();
        let optimizer = Adam::new(config.adam_config(), &params);
        Self::assemble(config, samples, table, params, optimizer, rng, 0)
    }

    /// Continues from a checkpoint written by [`Trainer::checkpoint`]. The run
    /// length and checkpoint period come from `config`; everything else from
    /// the checkpoint.
    pub fn resume(
        config: &TrainConfig,
        samples: Vec<(String, TrainSample)>,
        table: GeometryTable,
        ckpt: Checkpoint,
    ) -> AppResult<Self> {
        let progress = ckpt
            .progress
            .ok_or_else(|| AppError::Input("checkpoint has no training state to resume from".into()))?;
        let optimizer =
            ckpt.optimizer.ok_or_else(|| AppError::Input("checkpoint has no optimizer state".into()))?;
        let mut stored = progress.config;
        stored.epochs = config.epochs;
        stored.checkpoint_every = config.checkpoint_every;
        if ckpt.params.config != stored.learner_config() {
            return Err(AppError::Input("checkpoint learner does not match its training config".into()));
        }
        let rng = progress.rng.restore().map_err(|m| AppError::Input(format!("checkpoint: {m}")))?;
        Self::assemble(stored, samples, table, ckpt.params, optimizer, rng, progress.iteration)
    }

    fn assemble(
        config: TrainConfig,
        samples: Vec<(String, TrainSample)>,
        table: GeometryTable,
        params: LearnerParams,
        optimizer: Adam,
        rng: ChaCha8Rng,
        iteration: u64,
    ) -> AppResult<Self> {
        if config.model == ModelKind::Boost {
            config.boost_config().validate(&params)?;
        }
        let (names, samples) = samples.into_iter().unzip();
        Ok(Trainer { config, names, samples, params, optimizer, rng, iteration, table })
    }

    pub fn iterations_per_epoch(&self) -> u64 {
        self.samples.len().div_ceil(self.config.batch_size) as u64
    }

    pub fn total_iterations(&self) -> u64 {
        self.config.epochs as u64 * self.iterations_per_epoch()
    }

    pub fn is_done(&self) -> bool {
        self.iteration >= self.total_iterations()
    }

    pub fn checkpoint(&self) -> Checkpoint {
        Checkpoint {
            params: self.params.clone(),
            optimizer: Some(self.optimizer.clone()),
            progress: Some(TrainProgress {
                iteration: self.iteration,
                rng: RngState::capture(&self.rng),
                config: self.config.clone(),
            }),
        }
    }

    /// One optimizer iteration on a random batch. Gradients are computed in
    /// parallel and reduced in batch order.
    pub fn step(&mut self) -> AppResult<StepLog> {
        if self.samples.is_empty() {
            return Err(AppError::Input("no trainable molecules".into()));
        }
        let depth = match self.config.model {
            ModelKind::Boost => Some(draw_depth(&self.config.boost_config(), &mut self.rng)),
            ModelKind::Edm => None,
        };
        let k = self.config.batch_size.min(self.samples.len());
        let batch = index::sample(&mut self.rng, self.samples.len(), k).into_vec();
        let (seed, iteration) = (self.config.seed, self.iteration);
        let init = if self.config.crs { InitKind::Crs } else { InitKind::Rs };
        let boost = self.config.boost_config();
        let this = &*self;
        let results: Vec<equiboost_core::Result<(StepGradients, Option<f64>)>> = batch
            .par_iter()
            .enumerate()
            .map(|(slot, &i)| {
                let mut rng = entry_rng(seed, iteration, slot);
                let s = &this.samples[i];
                match depth {
                    Some(d) => {
                        let (noise, _) = initial_conformation(&s.graph, init, &this.table, &mut rng)?;
                        let b = TrainBatch::new(s, noise.into_coords())?;
                        Ok((compute_gradients(&b, &this.params, &boost, d)?, None))
                    }
                    None => {
                        let (target, sigma, noise) = draw_training_example(s, &this.config.edm, &mut rng)?;
                        let mut g = edm_compute_gradients(s, &this.params, &boost.loss_weights, target, sigma, &noise)?;
                        let w = this.config.edm.weight(sigma);
                        g.grads.iter_mut().flatten().for_each(|x| *x *= w);
                        Ok((g, Some(sigma)))
                    }
                }
            })
            .collect();
        let molecules = batch.iter().map(|&i| self.names[i].clone()).collect();
        self.iteration += 1;
        let mut parts = Vec::with_capacity(results.len());
        let mut sigmas = Vec::new();
        let mut diverged = false;
        for r in results {
            match r {
                Ok((g, s)) => {
                    sigmas.extend(s);
                    parts.push(g);
                }
                Err(CoreError::NonFinite { .. }) => diverged = true,
                Err(e) => return Err(e.into()),
            }
        }
        let sigma = depth.is_none().then_some(sigmas);
        let lr_now = self.optimizer.config.lr_at(self.optimizer.step);
        if diverged {
            return Ok(StepLog { iteration, molecules, loss: LossBreakdown::nan(), depth, sigma, lr: lr_now, updated: false });
        }
        let loss = mean_loss(&parts.iter().map(|p| p.loss).collect::<Vec<_>>());
        let grads = mean_grads(&parts, &self.params);
        // Depth 1 stands in for the diffusion model so only finiteness gates the update.
        let report = apply_gradients(loss, depth.unwrap_or(1), &grads, &mut self.params, &mut self.optimizer)?;
        Ok(StepLog { iteration, molecules, loss, depth, sigma, lr: report.lr, updated: report.updated })
    }
}

/// Paths written by [`run`].
#[derive(Clone, Debug, PartialEq)]
pub struct RunOutput {
    pub model: PathBuf,
    pub log: PathBuf,
    pub iterations: u64,
}

/// Trains to the configured length, appending to `out/train.jsonl` and
/// writing `out/model.ckpt` plus numbered snapshots every `checkpoint_every`
/// iterations. With zero epochs only the initial checkpoint is written.
pub fn run<F: FnMut(&StepLog)>(trainer: &mut Trainer, out: &Path, mut on_step: F) -> AppResult<RunOutput> {
    std::fs::create_dir_all(out).map_err(|e| AppError::io(out.display(), e))?;
    let model = out.join("model.ckpt");
    let log_path = out.join("train.jsonl");
    let mut log = OpenOptions::new()
        .create(true)
        .append(true)
        .open(&log_path)
        .map_err(|e| AppError::io(log_path.display(), e))?;
    let start = trainer.iteration;
    if start == 0 {
        trainer.checkpoint().save(&model)?;
    }
    while !trainer.is_done() {
        let entry = trainer.step()?;
        let mut line = serde_json::to_string(&entry).expect("log entry serializes");
        line.push('\n');
        log.write_all(line.as_bytes()).map_err(|e| AppError::io(log_path.display(), e))?;
        on_step(&entry);
        let every = trainer.config.checkpoint_every;
        if every > 0 && trainer.iteration.is_multiple_of(every) {
            let ck = trainer.checkpoint();
            ck.save(&out.join(format!("checkpoint-{:07}.ckpt", trainer.iteration)))?;
            ck.save(&model)?;
        }
    }
    if trainer.iteration != start {
        trainer.checkpoint().save(&model)?;
    }
    Ok(RunOutput { model, log: log_path, iterations: trainer.iteration - start })
}
