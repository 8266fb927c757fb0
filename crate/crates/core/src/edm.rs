//! Diffusion baseline: denoiser training across noise levels and the
//! deterministic Heun sampler.

use alloc::format;
use alloc::vec::Vec;
use core::marker::PhantomData;

#[allow(unused_imports)]
use num_traits::Float;
use rand::Rng;
use rand_distr::{Distribution, Normal, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::boost::{StepGradients, TrainSample};
use crate::equivariant::tape::Tape;
use crate::equivariant::{
    coords_tensor, forward, learner_on_tape, load_params, param_gradients, tensor_points, Conditioning,
    ConditioningKind, LearnerGraph, LearnerParams,
};
use crate::error::{Error, Result};
use crate::geometry::Point;
use crate::losses::{total_loss_grad, LossBreakdown, LossWeights};
use crate::optim::Adam;
use crate::real::Real;

/// Noise levels for training and sampling, in Å.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct NoiseSchedule {
    pub sigma_min: f64,
    pub sigma_max: f64,
    /// Exponent of the power interpolation between `sigma_max` and `sigma_min`.
    pub rho: f64,
    /// Sampling timesteps T.
    pub steps: usize,
    /// Mean of ln σ for training.
    pub ln_sigma_mean: f64,
    /// Standard deviation of ln σ for training.
    pub ln_sigma_std: f64,
}

impl Default for NoiseSchedule {
    fn default() -> Self {
        NoiseSchedule { sigma_min: 0.002, sigma_max: 10.0, rho: 7.0, steps: 18, ln_sigma_mean: -1.2, ln_sigma_std: 1.2 }
    }
}

impl NoiseSchedule {
    pub fn validate(&self) -> Result<()> {
        let finite = [self.sigma_min, self.sigma_max, self.rho, self.ln_sigma_mean, self.ln_sigma_std]
            .iter()
            .all(|v| v.is_finite());
        if !finite {
            return Err(Error::Schedule("parameters must be finite".into()));
        }
        if !(self.sigma_min > 0.0 && self.sigma_min < self.sigma_max) {
            return Err(Error::Schedule(format!(
                "need 0 < sigma_min < sigma_max, got {} and {}",
                self.sigma_min, self.sigma_max
            )));
        }
        if self.rho <= 0.0 {
            return Err(Error::Schedule("rho must be positive".into()));
        }
        if self.steps == 0 {
            return Err(Error::Schedule("need at least one timestep".into()));
        }
        if self.ln_sigma_std < 0.0 {
            return Err(Error::Schedule("ln sigma std must be non-negative".into()));
        }
        Ok(())
    }

    /// Levels `t_0 > t_1 > … > t_{T-1} > t_T = 0`, with `t_0 = sigma_max` and
    /// `t_{T-1} = sigma_min` when T ≥ 2.
    pub fn levels(&self) -> Result<Vec<f64>> {
        self.validate()?;
        let t = self.steps;
        let inv = 1.0 / self.rho;
        let (hi, lo) = (self.sigma_max.powf(inv), self.sigma_min.powf(inv));
        let mut out = Vec::with_capacity(t + 1);
        for i in 0..t {
            let level = if i == 0 {
                self.sigma_max
            } else if i == t - 1 {
                self.sigma_min
            } else {
                (hi + i as f64 / (t - 1) as f64 * (lo - hi)).powf(self.rho)
            };
            out.push(level);
        }
        out.push(0.0);
        Ok(out)
    }

    /// Draws a training noise level: log-normal, clamped to `[sigma_min, sigma_max]`.
    pub fn sample_sigma<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        let z: f64 = StandardNormal.sample(rng);
        (self.ln_sigma_mean + self.ln_sigma_std * z).exp().clamp(self.sigma_min, self.sigma_max)
    }

    /// Loss weight per noise level.
    pub fn weight(&self, _sigma: f64) -> f64 {
        1.0
    }
}

/// Clean-conformation estimate `f(C, t)`.
pub trait Denoiser {
    fn denoise(&self, coords: &[Point], sigma: f64) -> Result<Vec<Point>>;
}

impl<F: Fn(&[Point], f64) -> Result<Vec<Point>>> Denoiser for F {
    fn denoise(&self, coords: &[Point], sigma: f64) -> Result<Vec<Point>> {
        self(coords, sigma)
    }
}

/// The equivariant learner as a denoiser: `C + learner(C, σ)`.
pub struct LearnerDenoiser<'a, F> {
    graph: &'a LearnerGraph,
    params: &'a LearnerParams,
    precision: PhantomData<F>,
}

impl<'a, F: Real> LearnerDenoiser<'a, F> {
    pub fn new(graph: &'a LearnerGraph, params: &'a LearnerParams) -> Result<Self> {
        if params.config.conditioning != ConditioningKind::Sigma {
            return Err(Error::Invalid("denoiser needs a sigma-conditioned learner".into()));
        }
        Ok(LearnerDenoiser { graph, params, precision: PhantomData })
    }
}

impl<F: Real> Denoiser for LearnerDenoiser<'_, F> {
    fn denoise(&self, coords: &[Point], sigma: f64) -> Result<Vec<Point>> {
        let delta = forward::<F>(self.graph, coords, Conditioning::Sigma(sigma), self.params)?;
        Ok(coords.iter().zip(&delta).map(|(c, d)| [c[0] + d[0], c[1] + d[1], c[2] + d[2]]).collect())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct EdmSample {
    pub output: Vec<Point>,
    /// States `C_0 … C_T`.
    pub trajectory: Vec<Vec<Point>>,
    pub denoiser_calls: usize,
    pub corrector_steps: usize,
}

fn slope(c: &[Point], d: &[Point], t: f64) -> Vec<Point> {
    c.iter().zip(d).map(|(c, d)| [(c[0] - d[0]) / t, (c[1] - d[1]) / t, (c[2] - d[2]) / t]).collect()
}

fn step(c: &[Point], slope: &[Point], h: f64) -> Vec<Point> {
    c.iter().zip(slope).map(|(c, s)| [c[0] + h * s[0], c[1] + h * s[1], c[2] + h * s[2]]).collect()
}

/// Heun integration of the probability-flow ODE from `c0` at level `t_0`.
pub fn edm_sample_from<D: Denoiser + ?Sized>(c0: &[Point], denoiser: &D, schedule: &NoiseSchedule) -> Result<EdmSample> {
    let t = schedule.levels()?;
    let mut c = c0.to_vec();
    let mut trajectory = Vec::with_capacity(t.len());
    trajectory.push(c.clone());
    let (mut calls, mut corrector_steps) = (0, 0);
    for i in 0..schedule.steps {
        let (ti, tn) = (t[i], t[i + 1]);
        if ti <= 0.0 {
            return Err(Error::Schedule(format!("level {i} is zero before the final step")));
        }
        let d = denoiser.denoise(&c, ti)?;
        calls += 1;
        let next = if tn > 0.0 {
            let slope_i = slope(&c, &d, ti);
            let predicted = step(&c, &slope_i, tn - ti);
            let d_next = denoiser.denoise(&predicted, tn)?;
            calls += 1;
            corrector_steps += 1;
            let slope_next = slope(&predicted, &d_next, tn);
            let mean: Vec<Point> = slope_i
                .iter()
                .zip(&slope_next)
                .map(|(a, b)| [0.5 * (a[0] + b[0]), 0.5 * (a[1] + b[1]), 0.5 * (a[2] + b[2])])
                .collect();
            step(&c, &mean, tn - ti)
        } else {
            // Euler step to t = 0: C + (0 - t)(C - D)/t = D.
            d
        };
        if next.iter().flatten().any(|x| !x.is_finite()) {
            return Err(Error::NonFinite { step: i });
        }
        c = next;
        trajectory.push(c.clone());
    }
    Ok(EdmSample { output: c, trajectory, denoiser_calls: calls, corrector_steps })
}

/// Samples `C_0 ~ N(0, σ_max² I)` and integrates it to `t = 0`.
pub fn edm_sample<D: Denoiser + ?Sized, R: Rng + ?Sized>(
    n_atoms: usize,
    denoiser: &D,
    schedule: &NoiseSchedule,
    rng: &mut R,
) -> Result<EdmSample> {
    schedule.validate()?;
    let c0 = scaled_noise(n_atoms, schedule.sigma_max, rng)?;
    edm_sample_from(&c0, denoiser, schedule)
}

fn scaled_noise<R: Rng + ?Sized>(n: usize, sigma: f64, rng: &mut R) -> Result<Vec<Point>> {
    let normal = Normal::new(0.0, sigma).map_err(|e| Error::Schedule(format!("{e}")))?;
    Ok((0..n).map(|_| [normal.sample(rng), normal.sample(rng), normal.sample(rng)]).collect())
}

/// Loss of `C̃ + f(C̃, σ)` against reference `target`, with parameter gradients.
pub fn edm_compute_gradients(
    sample: &TrainSample,
    params: &LearnerParams,
    weights: &LossWeights,
    target: usize,
    sigma: f64,
    noise: &[Point],
) -> Result<StepGradients> {
    let reference = sample.refs.get(target).ok_or(Error::Invalid(format!("no reference {target}")))?;
    if noise.len() != reference.len() {
        return Err(Error::SizeMismatch { expected: reference.len(), found: noise.len() });
    }
    let perturbed: Vec<Point> = reference
        .iter()
        .zip(noise)
        .map(|(c, n)| [c[0] + n[0], c[1] + n[1], c[2] + n[2]])
        .collect();
    let mut tape = Tape::<f64>::new();
    let pv = load_params(&mut tape, params);
    let c = tape.leaf(coords_tensor(&perturbed));
    let trace = learner_on_tape(&mut tape, params, &pv, &sample.learner_graph, c, Conditioning::Sigma(sigma))?;
    let out_var = tape.add(c, trace.delta);
    let output = tensor_points(tape.value(out_var));
    if output.iter().flatten().any(|x| !x.is_finite()) {
        return Err(Error::NonFinite { step: 0 });
    }
    let (loss, g) = total_loss_grad(&sample.graph, reference, &output, &sample.schemes, &sample.plan, weights)?;
    let grads = if loss.total.is_finite() {
        let gt = tape.backward(out_var, coords_tensor(&g));
        param_gradients(&gt, &pv, params)
    } else {
        params.zeros_like()
    };
    Ok(StepGradients { loss, grads, depth: 1, output })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EdmReport {
    pub loss: LossBreakdown,
    pub sigma: f64,
    pub target: usize,
    pub lr: f64,
    pub updated: bool,
}

/// Draws a reference index, a noise level `σ ~ p(σ)` and noise `n ~ N(0, σ² I)`.
pub fn draw_training_example<R: Rng + ?Sized>(
    sample: &TrainSample,
    schedule: &NoiseSchedule,
    rng: &mut R,
) -> Result<(usize, f64, Vec<Point>)> {
    schedule.validate()?;
    if sample.refs.is_empty() {
        return Err(Error::Empty("reference conformations"));
    }
    let target = rng.random_range(0..sample.refs.len());
    let sigma = schedule.sample_sigma(rng);
    let noise = scaled_noise(sample.graph.n_atoms(), sigma, rng)?;
    Ok((target, sigma, noise))
}

/// One denoiser training step on a random reference and noise level.
pub fn edm_train_step<R: Rng + ?Sized>(
    sample: &TrainSample,
    params: &mut LearnerParams,
    optimizer: &mut Adam,
    schedule: &NoiseSchedule,
    weights: &LossWeights,
    rng: &mut R,
) -> Result<EdmReport> {
    let (target, sigma, noise) = draw_training_example(sample, schedule, rng)?;
    let skipped = |loss, optimizer: &Adam| EdmReport {
        loss,
        sigma,
        target,
        lr: optimizer.config.lr_at(optimizer.step),
        updated: false,
    };
    let mut sg = match edm_compute_gradients(sample, params, weights, target, sigma, &noise) {
        Ok(sg) => sg,
        Err(Error::NonFinite { .. }) => return Ok(skipped(LossBreakdown::nan(), optimizer)),
        Err(e) => return Err(e),
    };
    let finite = sg.loss.total.is_finite() && sg.grads.iter().flatten().all(|g| g.is_finite());
    if !finite {
        return Ok(skipped(sg.loss, optimizer));
    }
    let w = schedule.weight(sigma);
    sg.grads.iter_mut().flatten().for_each(|g| *g *= w);
    let lr = optimizer.update(params, &sg.grads)?;
    Ok(EdmReport { loss: sg.loss, sigma, target, lr, updated: true })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::equivariant::LearnerConfig;
    use crate::geometry::{mat_vec, random_rotation, Conformation};
    use crate::losses::total_loss;
    use crate::molgraph::{AtomSpec, Bond, BondOrder, MolGraph};
    use crate::optim::AdamConfig;
    use alloc::vec;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn chain() -> MolGraph {
        let atoms = vec![AtomSpec::new(6), AtomSpec::new(6), AtomSpec::new(8), AtomSpec::new(6), AtomSpec::new(7)];
        let bonds = [(0, 1), (1, 2), (2, 3), (3, 4)].map(|(i, j)| Bond { i, j, order: BondOrder::Single }).to_vec();
        MolGraph::new(atoms, bonds).unwrap()
    }

    fn reference() -> Vec<Point> {
        vec![[0.0, 0.0, 0.0], [1.5, 0.1, 0.0], [2.1, 1.4, 0.2], [3.5, 1.5, -0.3], [4.1, 2.8, 0.1]]
    }

    fn sigma_config() -> LearnerConfig {
        LearnerConfig {
            scalar_channels: 8,
            vector_channels: 4,
            blocks: 2,
            conditioning: ConditioningKind::Sigma,
            head_init_scale: 1.0,
            ..Default::default()
        }
    }

    fn schedule(steps: usize) -> NoiseSchedule {
        NoiseSchedule { steps, ..Default::default() }
    }

    #[test]
    fn levels_are_decreasing_to_zero() {
        let t = schedule(10).levels().unwrap();
        assert_eq!(t.len(), 11);
        assert_eq!((t[0], t[9]), (10.0, 0.002));
        assert_eq!(t[10], 0.0);
        assert!(t.windows(2).all(|w| w[0] > w[1]));
        assert_eq!(schedule(1).levels().unwrap(), vec![10.0, 0.0]);
    }

    #[test]
    fn invalid_schedules_rejected() {
        assert!(schedule(0).levels().is_err());
        assert!(NoiseSchedule { sigma_min: 20.0, ..Default::default() }.validate().is_err());
        assert!(NoiseSchedule { sigma_min: 0.0, ..Default::default() }.validate().is_err());
        assert!(NoiseSchedule { rho: f64::NAN, ..Default::default() }.validate().is_err());
    }

    #[test]
    fn training_sigma_distribution() {
        let s = NoiseSchedule::default();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let draws: Vec<f64> = (0..20_000).map(|_| s.sample_sigma(&mut rng)).collect();
        assert!(draws.iter().all(|&x| (s.sigma_min..=s.sigma_max).contains(&x)));
        let mean_ln = draws.iter().map(|x| x.ln()).sum::<f64>() / draws.len() as f64;
        assert!((mean_ln + 1.2).abs() < 0.05, "mean ln sigma {mean_ln}");
    }

    #[test]
    fn constant_oracle_two_steps() {
        let target = reference();
        let oracle = |_: &[Point], _: f64| Ok(target.clone());
        let s = schedule(2);
        let t = s.levels().unwrap();
        let c0: Vec<Point> = vec![[3.0, -1.0, 2.0]; 5];
        let out = edm_sample_from(&c0, &oracle, &s).unwrap();
        // C_1 = C* + (t_1 / t_0)(C_0 - C*): the corrector slope equals the predictor slope.
        for (k, p) in out.trajectory[1].iter().enumerate() {
            for a in 0..3 {
                let expect = target[k][a] + t[1] / t[0] * (c0[k][a] - target[k][a]);
                assert!((p[a] - expect).abs() < 1e-9);
            }
        }
        assert_eq!(out.output, target);
    }

    #[test]
    fn constant_oracle_ten_steps() {
        let target = reference();
        let oracle = |_: &[Point], _: f64| Ok(target.clone());
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let out = edm_sample(5, &oracle, &schedule(10), &mut rng).unwrap();
        for (a, b) in out.output.iter().zip(&target) {
            for k in 0..3 {
                assert!((a[k] - b[k]).abs() < 1e-8);
            }
        }
        assert_eq!(out.corrector_steps, 9);
        assert_eq!(out.denoiser_calls, 19);
    }

    #[test]
    fn single_step_returns_denoiser_output() {
        let shift = |c: &[Point], t: f64| Ok(c.iter().map(|p| [p[0] * 0.5 + t, p[1] - 1.0, p[2]]).collect());
        let c0 = reference();
        let out = edm_sample_from(&c0, &shift, &schedule(1)).unwrap();
        assert_eq!(out.output, shift(&c0, 10.0).unwrap());
        assert_eq!(out.corrector_steps, 0);
    }

    #[test]
    fn sampler_is_deterministic_and_equivariant() {
        let g = chain();
        let lg = LearnerGraph::new(&g, 3).unwrap();
        let params = LearnerParams::init(&sigma_config(), &mut ChaCha8Rng::seed_from_u64(3)).unwrap();
        let den = LearnerDenoiser::<f64>::new(&lg, &params).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let s = schedule(6);
        let c0 = scaled_noise(5, 10.0, &mut rng).unwrap();
        let a = edm_sample_from(&c0, &den, &s).unwrap();
        let b = edm_sample_from(&c0, &den, &s).unwrap();
        assert_eq!(a, b);
        let rot = random_rotation(&mut rng);
        let rc0: Vec<Point> = c0.iter().map(|p| mat_vec(&rot, *p)).collect();
        let rotated = edm_sample_from(&rc0, &den, &s).unwrap();
        for (p, q) in a.output.iter().zip(&rotated.output) {
            let rp = mat_vec(&rot, *p);
            for k in 0..3 {
                assert!((rp[k] - q[k]).abs() < 1e-5);
            }
        }
    }

    #[test]
    fn denoiser_needs_sigma_conditioning() {
        let g = chain();
        let lg = LearnerGraph::new(&g, 3).unwrap();
        let params = LearnerParams::zeros(&LearnerConfig::default()).unwrap();
        assert!(LearnerDenoiser::<f64>::new(&lg, &params).is_err());
    }

    fn train_sample() -> TrainSample {
        TrainSample::new(chain(), vec![Conformation::new(reference()).unwrap()], 3).unwrap()
    }

    #[test]
    fn zero_noise_zero_head_loss_vanishes() {
        let sample = train_sample();
        let mut params = LearnerParams::init(&sigma_config(), &mut ChaCha8Rng::seed_from_u64(5)).unwrap();
        params.zero_head();
        let noise = vec![[1e-9, -1e-9, 0.0]; 5];
        let sg = edm_compute_gradients(&sample, &params, &LossWeights::default(), 0, 0.002, &noise).unwrap();
        assert!(sg.loss.total < 1e-12, "{}", sg.loss.total);
    }

    #[test]
    fn zero_head_loss_at_sigma_max_matches_pure_noise() {
        // Monte-Carlo estimate of the loss of a pure-noise conformation against C.
        let sample = train_sample();
        let mut params = LearnerParams::init(&sigma_config(), &mut ChaCha8Rng::seed_from_u64(6)).unwrap();
        params.zero_head();
        let weights = LossWeights::default();
        let reference = Conformation::new(reference()).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let (mut edm, mut oracle) = (0.0, 0.0);
        let draws = 1000;
        for _ in 0..draws {
            let noise = scaled_noise(5, 10.0, &mut rng).unwrap();
            edm += edm_compute_gradients(&sample, &params, &weights, 0, 10.0, &noise).unwrap().loss.total;
            let pure = scaled_noise(5, 10.0, &mut rng).unwrap();
            oracle += total_loss(&sample.graph, &reference, &pure, &sample.schemes, &sample.plan, &weights)
                .unwrap()
                .total;
        }
        let (edm, oracle) = (edm / draws as f64, oracle / draws as f64);
        assert!((edm - oracle).abs() / oracle < 0.1, "edm {edm} oracle {oracle}");
    }

    #[test]
    fn gradients_match_finite_differences() {
        let sample = train_sample();
        let params = LearnerParams::init(&sigma_config(), &mut ChaCha8Rng::seed_from_u64(8)).unwrap();
        let weights = LossWeights::default();
        let noise = scaled_noise(5, 0.3, &mut ChaCha8Rng::seed_from_u64(9)).unwrap();
        let sg = edm_compute_gradients(&sample, &params, &weights, 0, 0.3, &noise).unwrap();
        let h = 1e-6;
        let mut checked = 0;
        for (ti, t) in params.tensors.iter().enumerate() {
            for j in [0, t.data.len() / 2, t.data.len() - 1] {
                let mut p = params.clone();
                p.tensors[ti].data[j] += h;
                let up = edm_compute_gradients(&sample, &p, &weights, 0, 0.3, &noise).unwrap().loss.total;
                p.tensors[ti].data[j] -= 2.0 * h;
                let down = edm_compute_gradients(&sample, &p, &weights, 0, 0.3, &noise).unwrap().loss.total;
                let fd = (up - down) / (2.0 * h);
                let an = sg.grads[ti][j];
                assert!((fd - an).abs() <= 1e-4 * (1.0 + fd.abs().max(an.abs())), "{} [{j}]: fd {fd} an {an}", t.name);
                checked += 1;
            }
        }
        assert!(checked > 0);
    }

    #[test]
    fn train_step_is_reproducible() {
        let sample = train_sample();
        let run = || {
            let mut params = LearnerParams::init(&sigma_config(), &mut ChaCha8Rng::seed_from_u64(10)).unwrap();
            let mut opt = Adam::new(AdamConfig::default(), &params);
            let mut rng = ChaCha8Rng::seed_from_u64(11);
            let reports: Vec<_> = (0..3)
                .map(|_| {
                    edm_train_step(&sample, &mut params, &mut opt, &NoiseSchedule::default(), &LossWeights::default(), &mut rng)
                        .unwrap()
                })
                .collect();
            (reports, params)
        };
        let (a, pa) = run();
        let (b, pb) = run();
        assert_eq!(a, b);
        assert_eq!(pa, pb);
        assert!(a.iter().all(|r| r.updated));
    }
}
