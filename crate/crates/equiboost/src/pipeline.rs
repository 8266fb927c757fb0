//! Ensemble generation and evaluation over a store.

use equiboost_core::boost::{boost_infer_traced, BoostConfig};
use equiboost_core::edm::{edm_sample, LearnerDenoiser, NoiseSchedule};
use equiboost_core::equivariant::{ConditioningKind, LearnerGraph, LearnerParams};
use equiboost_core::metrics::{aggregate, molecule_seed, pair_rmsd, EnsembleEval};
use equiboost_core::sampler::{initial_conformation, GeometryTable, InitKind};
use equiboost_core::symmetry::find_symmetric_substructures;
use equiboost_core::{Conformation, MolGraph};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::error::{AppError, AppResult};
use crate::store::{results_csv, to_json_bytes, Dataset, EvalFile, GenMeta, MoleculeDir, ResultRow, SummaryFile};
use crate::fsutil::write_atomic;

/// A loaded model with the hash of the checkpoint file it came from.
#[derive(Clone, Debug)]
pub struct Model {
    pub params: LearnerParams,
    pub checkpoint_sha256: String,
    /// Sampling schedule for sigma-conditioned models.
    pub schedule: NoiseSchedule,
}

#[derive(Clone, Debug)]
pub struct GenerateOptions {
    pub init: InitKind,
    /// Boosting steps; `None` uses every step the model was trained with.
    pub steps: Option<usize>,
    /// Conformers per reference conformer.
    pub gen_factor: usize,
    /// Fixed ensemble size instead of `gen_factor × T`.
    pub count: Option<usize>,
    pub seed: u64,
    pub table: GeometryTable,
}

impl Default for GenerateOptions {
    fn default() -> Self {
        GenerateOptions { init: InitKind::Crs, steps: None, gen_factor: 2, count: None, seed: 0, table: GeometryTable::builtin() }
    }
}

/// Generated conformers and how many learner evaluations each took.
#[derive(Clone, Debug)]
pub struct Generated {
    pub conformations: Vec<Conformation>,
    pub learner_calls: Vec<usize>,
    pub fallbacks: usize,
    pub steps: usize,
}

fn init_name(kind: InitKind) -> &'static str {
    match kind {
        InitKind::Rs => "rs",
        InitKind::Crs => "crs",
    }
}

/// Draws `count` conformers for one graph. Initializations come from `rng`
/// in order; the learner runs in parallel.
pub fn generate_conformers(
    g: &MolGraph,
    model: &Model,
    opts: &GenerateOptions,
    count: usize,
    rng: &mut ChaCha8Rng,
) -> AppResult<Generated> {
    let params = &model.params;
    let lg = LearnerGraph::new(g, params.config.adjacency_order)?;
    if params.config.conditioning == ConditioningKind::Sigma {
        let mut schedule = model.schedule.clone();
        if let Some(t) = opts.steps {
            schedule.steps = t;
        }
        let den = LearnerDenoiser::<f64>::new(&lg, params)?;
        let mut out = Generated { conformations: Vec::new(), learner_calls: Vec::new(), fallbacks: 0, steps: schedule.steps };
        for _ in 0..count {
            let s = edm_sample(g.n_atoms(), &den, &schedule, rng)?;
            out.conformations.push(Conformation::new(s.output)?);
            out.learner_calls.push(s.denoiser_calls);
        }
        return Ok(out);
    }
    let steps = opts.steps.unwrap_or(params.config.steps);
    BoostConfig { steps, ..Default::default() }.validate(params)?;
    let mut inits = Vec::with_capacity(count);
    let mut fallbacks = 0;
    for _ in 0..count {
        let (c, fell_back) = initial_conformation(g, opts.init, &opts.table, rng)?;
        fallbacks += fell_back as usize;
        inits.push(c);
    }
    let traces: Vec<_> = inits
        .par_iter()
        .map(|c| boost_infer_traced::<f64>(&lg, c.coords(), params, steps))
        .collect::<Result<_, _>>()?;
    let learner_calls = traces.iter().map(|t| t.learner_calls).collect();
    let conformations = traces.into_iter().map(|t| Conformation::new(t.output)).collect::<Result<_, _>>()?;
    Ok(Generated { conformations, learner_calls, fallbacks, steps })
}

/// Writes `gen/` for one molecule and returns its metadata.
pub fn generate_molecule(m: &MoleculeDir, model: &Model, opts: &GenerateOptions) -> AppResult<GenMeta> {
    let g = m.graph()?;
    let n_truth = match opts.count {
        Some(_) => m.truth_files().map(|f| f.len()).unwrap_or(0),
        None => m.truth_files()?.len(),
    };
    let count = opts.count.unwrap_or(opts.gen_factor * n_truth);
    if count == 0 {
        return Err(AppError::Input(format!("{}: no reference conformations to size the ensemble", m.name)));
    }
    let mseed = molecule_seed(opts.seed, &m.name);
    let mut rng = ChaCha8Rng::seed_from_u64(mseed);
    let out = generate_conformers(&g, model, opts, count, &mut rng)?;
    let sigma = model.params.config.conditioning == ConditioningKind::Sigma;
    let (model_name, init) = if sigma { ("edm", "gaussian") } else { ("boost", init_name(opts.init)) };
    let meta = GenMeta {
        model: model_name.into(),
        init: init.into(),
        steps: out.steps,
        seed: opts.seed,
        molecule_seed: mseed,
        checkpoint_sha256: model.checkpoint_sha256.clone(),
        count,
        n_truth,
        learner_calls: out.learner_calls,
        crs_fallbacks: out.fallbacks,
    };
    let confs: Vec<(Conformation, String)> = out
        .conformations
        .into_iter()
        .enumerate()
        .map(|(k, c)| (c, format!("{} conformer {k} model={model_name} init={init} M={} seed={}", m.name, out.steps, opts.seed)))
        .collect();
    m.write_gen(&g, &confs, &meta)?;
    Ok(meta)
}

/// Pairwise RMSD matrix (`n_gen × n_truth`, row-major), computed in parallel over pairs.
pub fn rmsd_matrix_parallel(
    gen: &[Conformation],
    truth: &[Conformation],
    schemes: &[equiboost_core::SymmetryScheme],
    naive: bool,
) -> AppResult<Vec<f64>> {
    let t = truth.len();
    (0..gen.len() * t)
        .into_par_iter()
        .map(|idx| pair_rmsd(&gen[idx / t], &truth[idx % t], schemes, naive))
        .collect::<Result<Vec<f64>, _>>()
        .map_err(AppError::from)
}

#[derive(Clone, Copy, Debug)]
pub struct EvalOptions {
    pub threshold: f64,
    pub naive_rmsd: bool,
}

fn evaluate_one(m: &MoleculeDir, opts: EvalOptions) -> AppResult<EnsembleEval> {
    let g = m.graph()?;
    let truth = MoleculeDir::read_ensemble(&m.truth_files()?, &g)?;
    let gen = MoleculeDir::read_ensemble(&m.gen_files()?, &g)?;
    if truth.is_empty() || gen.is_empty() {
        return Err(AppError::Input("empty ensemble".into()));
    }
    let schemes = find_symmetric_substructures(&g);
    let matrix = rmsd_matrix_parallel(&gen, &truth, &schemes, opts.naive_rmsd)?;
    Ok(EnsembleEval::from_matrix(matrix, gen.len(), truth.len(), opts.threshold)?)
}

#[derive(Clone, Debug)]
pub struct EvalReport {
    pub rows: Vec<ResultRow>,
    pub summary: Option<SummaryFile>,
}

/// Evaluates every molecule in the store. Every `gen/` directory must exist
/// before anything is written. Molecules that fail to evaluate get a failure
/// row and no `eval.json`.
pub fn evaluate_store(ds: &Dataset, opts: EvalOptions) -> AppResult<EvalReport> {
    if let Some(m) = ds.molecules.iter().find(|m| !m.gen_dir().is_dir()) {
        return Err(AppError::missing("generated ensemble", &m.gen_dir()));
    }
    let results: Vec<AppResult<EnsembleEval>> = ds.molecules.par_iter().map(|m| evaluate_one(m, opts)).collect();
    let mut rows = Vec::with_capacity(results.len());
    for (m, r) in ds.molecules.iter().zip(&results) {
        match r {
            Ok(e) => {
                m.write_eval(&EvalFile { eval: e.clone(), naive_rmsd: opts.naive_rmsd })?;
                rows.push(ResultRow::ok(&m.name, e));
            }
            Err(err) => {
                let stale = m.eval_path();
                if stale.exists() {
                    std::fs::remove_file(&stale).map_err(|e| AppError::io(stale.display(), e))?;
                }
                rows.push(ResultRow::failed(&m.name, &err.to_string()));
            }
        }
    }
    write_atomic(&ds.results_path(), &results_csv(&rows)?)?;
    let summary = aggregate(results.iter().map(|r| r.as_ref().ok()))
        .ok()
        .map(|aggregate| SummaryFile { aggregate, threshold: opts.threshold });
    match &summary {
        Some(s) => write_atomic(&ds.summary_path(), &to_json_bytes(s))?,
        None => {
            let _ = std::fs::remove_file(ds.summary_path());
        }
    }
    Ok(EvalReport { rows, summary })
}
