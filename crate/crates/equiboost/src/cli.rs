//! Command-line surface.

use std::ffi::OsString;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use equiboost_core::geometry::aligned_rmsd;
use equiboost_core::losses::pirmsd;
use equiboost_core::metrics::QM9_THRESHOLD;
use equiboost_core::sampler::{GeometryTable, InitKind};
use equiboost_core::symmetry::find_symmetric_substructures;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::checkpoint::Checkpoint;
use crate::config::TrainConfig;
use crate::error::{read_to_string, AppError, AppResult};
use crate::fsutil::{replace_dir, write_atomic};
use crate::graph_io::read_graph;
use crate::pipeline::{evaluate_store, generate_conformers, generate_molecule, EvalOptions, GenerateOptions, Model};
use crate::store::{to_json_bytes, Dataset};
use crate::train::{load_training_set, run, Trainer};
use crate::xyz::{format_xyz, read_conformation};

#[derive(Parser, Debug)]
#[command(name = "equiboost", version, about = "Equivariant boosting for molecular conformer generation")]
pub struct Cli {
    /// Worker threads; 0 uses one per core.
    #[arg(long, global = true, env = "EQB_THREADS", default_value_t = 0)]
    pub threads: usize,
    /// Seed for every random draw of the run.
    #[arg(long, global = true, env = "EQB_SEED")]
    pub seed: Option<u64>,
    /// Training config file (JSON).
    #[arg(long, global = true, env = "EQB_CONFIG")]
    pub config: Option<PathBuf>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Generate 2T conformers per molecule into gen/.
    Generate(GenerateArgs),
    /// Score gen/ against truth/ and write eval.json, results.csv and summary.json.
    Eval(EvalArgs),
    /// Train a model on a store of reference ensembles.
    Train(TrainArgs),
    /// Symmetry-corrected RMSD between two conformations of one graph.
    Pirmsd(PirmsdArgs),
    /// Print the detected symmetric substructures of a graph as JSON.
    Symmetry(SymmetryArgs),
    /// Sample conformations with a diffusion checkpoint.
    EdmSample(EdmSampleArgs),
}

#[derive(Args, Debug)]
pub struct GenerateArgs {
    /// Store root or single molecule directory.
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long, default_value = "crs", value_parser = parse_init)]
    pub init: InitKind,
    /// Boosting steps (diffusion timesteps for sigma-conditioned models).
    #[arg(long = "steps", short = 'M')]
    pub steps: Option<usize>,
    /// Generated conformers per reference conformer.
    #[arg(long, default_value_t = 2)]
    pub gen_factor: usize,
    /// Fixed number of conformers per molecule.
    #[arg(long)]
    pub count: Option<usize>,
    /// Bond-length table (JSON map "A-B-order" to Å).
    #[arg(long)]
    pub geometry_table: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct EvalArgs {
    #[arg(long)]
    pub data: PathBuf,
    /// Coverage threshold in Å.
    #[arg(long, default_value_t = QM9_THRESHOLD)]
    pub threshold: f64,
    /// Use plain aligned RMSD instead of the symmetry-corrected value.
    #[arg(long)]
    pub naive_rmsd: bool,
}

#[derive(Args, Debug)]
pub struct TrainArgs {
    #[arg(long)]
    pub data: PathBuf,
    /// Output directory for checkpoints and the log.
    #[arg(long)]
    pub out: PathBuf,
    /// Continue from a checkpoint written by a previous run.
    #[arg(long)]
    pub resume: Option<PathBuf>,
    /// Total epochs, counted from the start of the first run.
    #[arg(long)]
    pub epochs: Option<usize>,
    /// Bond-length table (JSON map "A-B-order" to Å).
    #[arg(long)]
    pub geometry_table: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct PirmsdArgs {
    #[arg(long)]
    pub graph: PathBuf,
    /// Reference conformation.
    pub a: PathBuf,
    /// Conformation relabelled and aligned onto `a`.
    pub b: PathBuf,
}

#[derive(Args, Debug)]
pub struct SymmetryArgs {
    #[arg(long)]
    pub graph: PathBuf,
}

#[derive(Args, Debug)]
pub struct EdmSampleArgs {
    #[arg(long)]
    pub graph: PathBuf,
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 1)]
    pub count: usize,
    /// Sampling timesteps T.
    #[arg(long)]
    pub steps: Option<usize>,
}

fn parse_init(s: &str) -> Result<InitKind, String> {
    s.parse().map_err(|e: equiboost_core::Error| e.to_string())
}

fn load_table(path: Option<&Path>) -> AppResult<GeometryTable> {
    match path {
        None => Ok(GeometryTable::builtin()),
        Some(p) => {
            let text = read_to_string(p, "geometry table")?;
            GeometryTable::from_json(&text).map_err(|e| AppError::Input(format!("{}: {e}", p.display())))
        }
    }
}

fn load_model(path: &Path) -> AppResult<Model> {
    let (ck, sha) = Checkpoint::load(path)?;
    let schedule = ck.progress.map(|p| p.config.edm).unwrap_or_default();
    Ok(Model { params: ck.params, checkpoint_sha256: sha, schedule })
}

fn env_vars() -> Vec<(String, String)> {
    std::env::vars().collect()
}

fn cmd_generate(cli: &Cli, a: &GenerateArgs) -> AppResult<()> {
    let model = load_model(&a.checkpoint)?;
    let ds = Dataset::open(&a.data)?;
    let opts = GenerateOptions {
        init: a.init,
        steps: a.steps,
        gen_factor: a.gen_factor,
        count: a.count,
        seed: cli.seed.unwrap_or(0),
        table: load_table(a.geometry_table.as_deref())?,
    };
    let mut first_err = None;
    for m in &ds.molecules {
        match generate_molecule(m, &model, &opts) {
            Ok(meta) => eprintln!(
                "{}: {} conformers, M={}, {} learner calls",
                m.name,
                meta.count,
                meta.steps,
                meta.learner_calls.iter().sum::<usize>()
            ),
            Err(e) => {
                eprintln!("{}: generation failed: {e}", m.name);
                first_err.get_or_insert(e);
            }
        }
    }
    first_err.map_or(Ok(()), Err)
}

fn cmd_eval(a: &EvalArgs) -> AppResult<()> {
    if a.threshold.is_nan() || a.threshold < 0.0 {
        return Err(AppError::Input("threshold must be non-negative".into()));
    }
    let ds = Dataset::open(&a.data)?;
    let report = evaluate_store(&ds, EvalOptions { threshold: a.threshold, naive_rmsd: a.naive_rmsd })?;
    for r in &report.rows {
        match (r.cov_r, r.amr_r, r.cov_p, r.amr_p) {
            (Some(cr), Some(ar), Some(cp), Some(ap)) => {
                eprintln!("{}: COV-R {cr:.1} AMR-R {ar:.4} COV-P {cp:.1} AMR-P {ap:.4}", r.molecule)
            }
            _ => eprintln!("{}: {}", r.molecule, r.status),
        }
    }
    match report.summary {
        Some(s) => {
            let g = &s.aggregate;
            eprintln!(
                "{} evaluated, {} failed; mean COV-R {:.1} AMR-R {:.4} COV-P {:.1} AMR-P {:.4}",
                g.evaluated, g.failures, g.cov_r.mean, g.amr_r.mean, g.cov_p.mean, g.amr_p.mean
            );
            Ok(())
        }
        None => Err(AppError::Input("no molecule could be evaluated".into())),
    }
}

fn cmd_train(cli: &Cli, a: &TrainArgs) -> AppResult<()> {
    let mut config = TrainConfig::load(cli.config.as_deref(), env_vars())?;
    if let Some(seed) = cli.seed {
        config.seed = seed;
    }
    if let Some(e) = a.epochs {
        config.epochs = e;
    }
    let table = load_table(a.geometry_table.as_deref())?;
    let ds = Dataset::open(&a.data)?;
    let resume = a.resume.as_deref().map(Checkpoint::load).transpose()?;
    let order = match &resume {
        Some((ck, _)) => ck.params.config.adjacency_order,
        None => config.learner.adjacency_order,
    };
    let (samples, skipped) = load_training_set(&ds, order);
    for s in &skipped {
        eprintln!("{}", serde_json::to_string(&serde_json::json!({"skipped": s})).expect("serializes"));
    }
    if samples.is_empty() {
        return Err(AppError::Input(format!("{}: no usable molecules", a.data.display())));
    }
    let mut trainer = match resume {
        Some((ck, _)) => Trainer::resume(&config, samples, table, ck)?,
        None => Trainer::new(config, samples, table)?,
    };
    let total = trainer.total_iterations();
    let report_every = (total / 20).max(1);
    let out = run(&mut trainer, &a.out, |s| {
        if s.iteration % report_every == 0 || s.iteration + 1 == total {
            eprintln!("iteration {}/{total}: loss {:.4} lr {:.2e}", s.iteration + 1, s.loss.total, s.lr);
        }
    })?;
    eprintln!("{} iterations; model written to {}", out.iterations, out.model.display());
    Ok(())
}

fn cmd_pirmsd(a: &PirmsdArgs) -> AppResult<String> {
    let g = read_graph(&a.graph)?;
    let ca = read_conformation(&a.a, &g)?;
    let cb = read_conformation(&a.b, &g)?;
    let schemes = find_symmetric_substructures(&g);
    let p = pirmsd(ca.coords(), cb.coords(), &schemes)?;
    let naive = aligned_rmsd(ca.coords(), cb.coords())?;
    let perm: Vec<String> = p.permutation.iter().map(usize::to_string).collect();
    Ok(format!("pirmsd {:.6}\nnaive_rmsd {naive:.6}\npermutation {}\n", p.value, perm.join(" ")))
}

fn cmd_symmetry(a: &SymmetryArgs) -> AppResult<String> {
    let g = read_graph(&a.graph)?;
    let schemes = find_symmetric_substructures(&g);
    Ok(String::from_utf8(to_json_bytes(&schemes)).expect("JSON is UTF-8"))
}

fn cmd_edm_sample(cli: &Cli, a: &EdmSampleArgs) -> AppResult<()> {
    let model = load_model(&a.checkpoint)?;
    if model.params.config.conditioning != equiboost_core::equivariant::ConditioningKind::Sigma {
        return Err(AppError::Input(format!("{}: not a diffusion checkpoint", a.checkpoint.display())));
    }
    let g = read_graph(&a.graph)?;
    let seed = cli.seed.unwrap_or(0);
    let opts = GenerateOptions { steps: a.steps, seed, ..Default::default() };
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let out = generate_conformers(&g, &model, &opts, a.count, &mut rng)?;
    let elements: Vec<u8> = g.atoms().iter().map(|x| x.element).collect();
    let meta = serde_json::json!({
        "model": "edm",
        "T": out.steps,
        "seed": seed,
        "count": a.count,
        "checkpoint_sha256": model.checkpoint_sha256,
        "denoiser_calls": out.learner_calls,
    });
    replace_dir(&a.out, |dir| {
        for (k, c) in out.conformations.iter().enumerate() {
            let comment = format!("edm sample {k} T={} seed={seed}", out.steps);
            write_atomic(&dir.join(format!("{k:03}.xyz")), format_xyz(&elements, c.coords(), &comment).as_bytes())?;
        }
        write_atomic(&dir.join("meta.json"), &to_json_bytes(&meta))
    })?;
    eprintln!("{} samples written to {}", a.count, a.out.display());
    Ok(())
}

/// Runs a parsed command; text for standard output is returned.
pub fn execute(cli: &Cli) -> AppResult<String> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(cli.threads)
        .build()
        .map_err(|e| AppError::Input(format!("thread pool: {e}")))?;
    pool.install(|| match &cli.command {
        Command::Generate(a) => cmd_generate(cli, a).map(|_| String::new()),
        Command::Eval(a) => cmd_eval(a).map(|_| String::new()),
        Command::Train(a) => cmd_train(cli, a).map(|_| String::new()),
        Command::Pirmsd(a) => cmd_pirmsd(a),
        Command::Symmetry(a) => cmd_symmetry(a),
        Command::EdmSample(a) => cmd_edm_sample(cli, a).map(|_| String::new()),
    })
}

/// Parses arguments, runs the command and returns the process exit code:
/// 0 success, 2 missing artifact, 3 input error, 4 numerical failure.
pub fn main_with<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 3 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    match execute(&cli) {
        Ok(out) => {
            print!("{out}");
            0
        }
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}
