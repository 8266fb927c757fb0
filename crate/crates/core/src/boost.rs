//! Boosting recursion `C^{m+1} = C^m + γ(G, C^m, m)` with one shared learner,
//! randomized training depth and optimal reference selection.

use alloc::vec::Vec;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::equivariant::{
    coords_tensor, learner_on_tape, load_params, param_gradients, tape::Tape, tensor_points, Conditioning,
    LearnerGraph, LearnerParams,
};
use crate::geometry::{aligned_rmsd, build_zmatrix_plan, Point, ZMatrixPlan};
use crate::losses::{total_loss, total_loss_grad, LossBreakdown, LossWeights};
use crate::molgraph::MolGraph;
use crate::optim::Adam;
use crate::real::Real;
use crate::symmetry::{find_symmetric_substructures, SymmetryScheme};
use crate::{Conformation, Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BoostConfig {
    /// Number of learner applications at inference.
    pub steps: usize,
    /// Draw the training depth uniformly from `0..steps`; otherwise always unroll `steps`.
    pub randomize_depth: bool,
    /// Cut the gradient between consecutive steps of the unroll.
    pub detach: bool,
    pub loss_weights: LossWeights,
}

impl Default for BoostConfig {
    fn default() -> Self {
        BoostConfig { steps: 5, randomize_depth: true, detach: false, loss_weights: LossWeights::default() }
    }
}

impl BoostConfig {
    pub fn validate(&self, params: &LearnerParams) -> Result<()> {
        if self.steps == 0 {
            return Err(Error::Invalid("boosting needs at least one step".into()));
        }
        if self.steps > params.config.steps {
            return Err(Error::StepOutOfRange { step: self.steps - 1, steps: params.config.steps });
        }
        Ok(())
    }
}

/// Result of an instrumented inference run.
#[derive(Clone, Debug, PartialEq)]
pub struct BoostTrace {
    pub output: Vec<Point>,
    /// Displacement added at each step.
    pub deltas: Vec<Vec<Point>>,
    pub learner_calls: usize,
}

/// Runs `steps` boosting steps from `c_noise` in precision `F`.
pub fn boost_infer_traced<F: Real>(
    graph: &LearnerGraph,
    c_noise: &[Point],
    params: &LearnerParams,
    steps: usize,
) -> Result<BoostTrace> {
    if c_noise.len() != graph.n_atoms {
        return Err(Error::SizeMismatch { expected: graph.n_atoms, found: c_noise.len() });
    }
    if steps == 0 {
        return Err(Error::Invalid("boosting needs at least one step".into()));
    }
    let mut tape = Tape::<F>::new();
    let pv = load_params(&mut tape, params);
    let mut current: Vec<Point> = c_noise.to_vec();
    let mut deltas = Vec::with_capacity(steps);
    for m in 0..steps {
        // Each step gets its own coordinate leaf; parameters stay on the tape.
        let c = tape.leaf(coords_tensor(&current));
        let trace = learner_on_tape(&mut tape, params, &pv, graph, c, Conditioning::Step(m))?;
        let delta = tensor_points(tape.value(trace.delta));
        for (p, d) in current.iter_mut().zip(&delta) {
            for k in 0..3 {
                p[k] += d[k];
            }
        }
        if current.iter().flatten().any(|x| !x.is_finite()) {
            return Err(Error::NonFinite { step: m });
        }
        deltas.push(delta);
    }
    Ok(BoostTrace { output: current, learner_calls: deltas.len(), deltas })
}

pub fn boost_infer<F: Real>(
    graph: &LearnerGraph,
    c_noise: &[Point],
    params: &LearnerParams,
    steps: usize,
) -> Result<Vec<Point>> {
    Ok(boost_infer_traced::<F>(graph, c_noise, params, steps)?.output)
}

/// Index of the reference with the lowest superposed RMSD to `c_noise`; ties keep the first.
pub fn optimal_mapping(c_noise: &[Point], refs: &[Conformation]) -> Result<usize> {
    if refs.is_empty() {
        return Err(Error::Empty("reference ensemble"));
    }
    let mut best = (0, f64::INFINITY);
    for (k, r) in refs.iter().enumerate() {
        let d = aligned_rmsd(r, c_noise)?;
        if d < best.1 {
            best = (k, d);
        }
    }
    Ok(best.0)
}

/// A molecule with its reference ensemble and the derived structures the loss needs.
#[derive(Clone, Debug)]
pub struct TrainSample {
    pub graph: MolGraph,
    pub learner_graph: LearnerGraph,
    pub refs: Vec<Conformation>,
    pub schemes: Vec<SymmetryScheme>,
    pub plan: ZMatrixPlan,
}

impl TrainSample {
    pub fn new(graph: MolGraph, refs: Vec<Conformation>, adjacency_order: u8) -> Result<Self> {
        if refs.is_empty() {
            return Err(Error::Empty("reference ensemble"));
        }
        for r in &refs {
            if r.len() != graph.n_atoms() {
                return Err(Error::SizeMismatch { expected: graph.n_atoms(), found: r.len() });
            }
        }
        let learner_graph = LearnerGraph::new(&graph, adjacency_order)?;
        let schemes = find_symmetric_substructures(&graph);
        let plan = build_zmatrix_plan(&graph);
        Ok(TrainSample { graph, learner_graph, refs, schemes, plan })
    }
}

/// One training example: a noisy start and the reference it is mapped to.
#[derive(Clone, Debug)]
pub struct TrainBatch<'a> {
    pub sample: &'a TrainSample,
    pub noise: Vec<Point>,
    pub target: usize,
}

impl<'a> TrainBatch<'a> {
    /// Pairs `noise` with its optimal reference.
    pub fn new(sample: &'a TrainSample, noise: Vec<Point>) -> Result<Self> {
        let target = optimal_mapping(&noise, &sample.refs)?;
        Ok(TrainBatch { sample, noise, target })
    }
}

/// Loss and parameter gradients for a fixed unroll depth.
#[derive(Clone, Debug)]
pub struct StepGradients {
    pub loss: LossBreakdown,
    pub grads: Vec<Vec<f64>>,
    pub depth: usize,
    pub output: Vec<Point>,
}

/// Unrolls `depth` steps with full reverse-mode differentiation through the
/// unroll and returns the loss against the batch target.
pub fn compute_gradients(
    batch: &TrainBatch<'_>,
    params: &LearnerParams,
    config: &BoostConfig,
    depth: usize,
) -> Result<StepGradients> {
    let s = batch.sample;
    let mut tape = Tape::<f64>::new();
    let pv = load_params(&mut tape, params);
    let mut c = tape.leaf(coords_tensor(&batch.noise));
    for m in 0..depth {
        let trace = learner_on_tape(&mut tape, params, &pv, &s.learner_graph, c, Conditioning::Step(m))?;
        let next = tape.add(c, trace.delta);
        c = if config.detach { tape.leaf(tape.value(next).clone()) } else { next };
        if tape.value(c).data.iter().any(|x| !x.is_finite()) {
            return Err(Error::NonFinite { step: m });
        }
    }
    let output = tensor_points(tape.value(c));
    let reference = &s.refs[batch.target];
    let (loss, g) = total_loss_grad(&s.graph, reference, &output, &s.schemes, &s.plan, &config.loss_weights)?;
    let grads = if depth == 0 || !loss.total.is_finite() {
        params.zeros_like()
    } else {
        let gt = tape.backward(c, coords_tensor(&g));
        param_gradients(&gt, &pv, params)
    };
    Ok(StepGradients { loss, grads, depth, output })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StepReport {
    pub loss: LossBreakdown,
    pub depth: usize,
    pub lr: f64,
    /// False when the step was skipped: zero depth or non-finite loss.
    pub updated: bool,
}

/// Draws the unroll depth for one training step.
pub fn draw_depth<R: Rng + ?Sized>(config: &BoostConfig, rng: &mut R) -> usize {
    if config.randomize_depth {
        rng.random_range(0..config.steps)
    } else {
        config.steps
    }
}

/// One optimizer step on a single batch.
pub fn train_step<R: Rng + ?Sized>(
    batch: &TrainBatch<'_>,
    params: &mut LearnerParams,
    optimizer: &mut Adam,
    config: &BoostConfig,
    rng: &mut R,
) -> Result<StepReport> {
    config.validate(params)?;
    let depth = draw_depth(config, rng);
    let sg = match compute_gradients(batch, params, config, depth) {
        Ok(sg) => sg,
        Err(Error::NonFinite { .. }) => {
            let lr = optimizer.config.lr_at(optimizer.step);
            return Ok(StepReport { loss: LossBreakdown::nan(), depth, lr, updated: false });
        }
        Err(e) => return Err(e),
    };
    apply_gradients(sg.loss, depth, &sg.grads, params, optimizer)
}

/// Applies already-accumulated gradients, skipping zero-depth and non-finite steps.
pub fn apply_gradients(
    loss: LossBreakdown,
    depth: usize,
    grads: &[Vec<f64>],
    params: &mut LearnerParams,
    optimizer: &mut Adam,
) -> Result<StepReport> {
    let finite = loss.total.is_finite() && grads.iter().flatten().all(|g| g.is_finite());
    if depth == 0 || !finite {
        return Ok(StepReport { loss, depth, lr: optimizer.config.lr_at(optimizer.step), updated: false });
    }
    let lr = optimizer.update(params, grads)?;
    Ok(StepReport { loss, depth, lr, updated: true })
}

/// Loss of `steps`-step inference from `c_noise` against its optimal reference.
pub fn eval_loss(
    sample: &TrainSample,
    c_noise: &[Point],
    params: &LearnerParams,
    steps: usize,
    weights: &LossWeights,
) -> Result<LossBreakdown> {
    let target = optimal_mapping(c_noise, &sample.refs)?;
    let out = if steps == 0 {
        c_noise.to_vec()
    } else {
        boost_infer::<f64>(&sample.learner_graph, c_noise, params, steps)?
    };
    total_loss(&sample.graph, &sample.refs[target], &out, &sample.schemes, &sample.plan, weights)
}
