//! Ensemble metrics: coverage and average minimum RMSD in both the recall
//! (truth-centred) and precision (generation-centred) directions.

use alloc::string::String;
use alloc::vec::Vec;

use rand::{Rng, SeedableRng};
use serde::{Deserialize, Serialize};

use crate::boost::boost_infer;
use crate::equivariant::{LearnerGraph, LearnerParams};
use crate::error::{Error, Result};
use crate::geometry::{aligned_rmsd, Conformation};
use crate::losses::pirmsd;
use crate::molgraph::MolGraph;
use crate::sampler::{initial_conformation, GeometryTable, InitKind};
use crate::symmetry::SymmetryScheme;

/// Coverage threshold for small molecules (Å).
pub const QM9_THRESHOLD: f64 = 0.5;
/// Coverage threshold for drug-like molecules (Å).
pub const DRUGS_THRESHOLD: f64 = 0.75;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EnsembleEval {
    /// Percent of truths with a generated conformer closer than the threshold.
    pub cov_r: f64,
    pub amr_r: f64,
    /// Percent of generated conformers closer than the threshold to some truth.
    pub cov_p: f64,
    pub amr_p: f64,
    pub threshold: f64,
    pub n_gen: usize,
    pub n_truth: usize,
    /// Row-major `n_gen × n_truth` RMSD matrix.
    pub matrix: Vec<f64>,
}

impl EnsembleEval {
    pub fn from_matrix(matrix: Vec<f64>, n_gen: usize, n_truth: usize, threshold: f64) -> Result<Self> {
        if n_gen == 0 {
            return Err(Error::Empty("generated ensemble"));
        }
        if n_truth == 0 {
            return Err(Error::Empty("reference ensemble"));
        }
        if matrix.len() != n_gen * n_truth {
            return Err(Error::SizeMismatch { expected: n_gen * n_truth, found: matrix.len() });
        }
        if threshold.is_nan() || threshold < 0.0 {
            return Err(Error::Invalid("coverage threshold must be non-negative".into()));
        }
        let at = |k: usize, t: usize| matrix[k * n_truth + t];
        let truth_min: Vec<f64> = (0..n_truth).map(|t| (0..n_gen).map(|k| at(k, t)).fold(f64::INFINITY, f64::min)).collect();
        let gen_min: Vec<f64> = (0..n_gen).map(|k| (0..n_truth).map(|t| at(k, t)).fold(f64::INFINITY, f64::min)).collect();
        let coverage = |mins: &[f64]| 100.0 * mins.iter().filter(|&&m| m < threshold).count() as f64 / mins.len() as f64;
        let mean = |mins: &[f64]| mins.iter().sum::<f64>() / mins.len() as f64;
        Ok(EnsembleEval {
            cov_r: coverage(&truth_min),
            amr_r: mean(&truth_min),
            cov_p: coverage(&gen_min),
            amr_p: mean(&gen_min),
            threshold,
            n_gen,
            n_truth,
            matrix,
        })
    }

    pub fn entry(&self, k: usize, t: usize) -> f64 {
        self.matrix[k * self.n_truth + t]
    }
}

/// RMSD between a generated conformer and a truth, symmetry-corrected unless `naive`.
pub fn pair_rmsd(gen: &Conformation, truth: &Conformation, schemes: &[SymmetryScheme], naive: bool) -> Result<f64> {
    if naive {
        aligned_rmsd(truth, gen)
    } else {
        Ok(pirmsd(truth, gen, schemes)?.value)
    }
}

pub fn rmsd_matrix(
    gen: &[Conformation],
    truth: &[Conformation],
    schemes: &[SymmetryScheme],
    naive: bool,
) -> Result<Vec<f64>> {
    let mut out = Vec::with_capacity(gen.len() * truth.len());
    for g in gen {
        for t in truth {
            out.push(pair_rmsd(g, t, schemes, naive)?);
        }
    }
    Ok(out)
}

pub fn evaluate(
    gen: &[Conformation],
    truth: &[Conformation],
    schemes: &[SymmetryScheme],
    threshold: f64,
    naive: bool,
) -> Result<EnsembleEval> {
    if gen.is_empty() {
        return Err(Error::Empty("generated ensemble"));
    }
    if truth.is_empty() {
        return Err(Error::Empty("reference ensemble"));
    }
    let matrix = rmsd_matrix(gen, truth, schemes, naive)?;
    EnsembleEval::from_matrix(matrix, gen.len(), truth.len(), threshold)
}

/// Lower median: for an even count, the smaller of the two middle values.
pub fn lower_median(values: &[f64]) -> Option<f64> {
    if values.is_empty() {
        return None;
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    Some(v[(v.len() - 1) / 2])
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub mean: f64,
    pub med: f64,
}

impl Summary {
    /// Sums in sorted order so the result does not depend on input order.
    fn of(values: &[f64]) -> Self {
        let mut v = values.to_vec();
        v.sort_by(f64::total_cmp);
        let mean = v.iter().sum::<f64>() / v.len() as f64;
        Summary { mean, med: v[(v.len() - 1) / 2] }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Aggregate {
    pub cov_r: Summary,
    pub amr_r: Summary,
    pub cov_p: Summary,
    pub amr_p: Summary,
    pub evaluated: usize,
    pub failures: usize,
}

/// Mean and lower median of each metric over the molecules that evaluated.
pub fn aggregate<'a, I>(evals: I) -> Result<Aggregate>
where
    I: IntoIterator<Item = Option<&'a EnsembleEval>>,
{
    let mut ok = Vec::new();
    let mut failures = 0;
    for e in evals {
        match e {
            Some(e) => ok.push(e),
            None => failures += 1,
        }
    }
    if ok.is_empty() {
        return Err(Error::Empty("evaluated molecules"));
    }
    let pick = |f: fn(&EnsembleEval) -> f64| Summary::of(&ok.iter().map(|e| f(e)).collect::<Vec<_>>());
    Ok(Aggregate {
        cov_r: pick(|e| e.cov_r),
        amr_r: pick(|e| e.amr_r),
        cov_p: pick(|e| e.cov_p),
        amr_p: pick(|e| e.amr_p),
        evaluated: ok.len(),
        failures,
    })
}

#[derive(Clone, Debug)]
pub struct BenchmarkMolecule {
    pub name: String,
    pub graph: MolGraph,
    pub truth: Vec<Conformation>,
    pub schemes: Vec<SymmetryScheme>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BenchmarkConfig {
    pub init: InitKind,
    /// Boosting steps applied to each initialization; 0 evaluates the initializations.
    pub steps: usize,
    pub threshold: f64,
    /// Generated conformers per reference conformer.
    pub gen_factor: usize,
    pub naive_rmsd: bool,
    pub seed: u64,
}

impl Default for BenchmarkConfig {
    fn default() -> Self {
        BenchmarkConfig { init: InitKind::Crs, steps: 5, threshold: QM9_THRESHOLD, gen_factor: 2, naive_rmsd: false, seed: 0 }
    }
}

/// FNV-1a, used to key per-molecule random streams by name.
fn name_hash(name: &str) -> u64 {
    name.bytes().fold(0xcbf2_9ce4_8422_2325, |h, b| (h ^ b as u64).wrapping_mul(0x0100_0000_01b3))
}

/// Seed of the random stream for one molecule, independent of dataset order.
pub fn molecule_seed(seed: u64, name: &str) -> u64 {
    seed ^ name_hash(name).rotate_left(17)
}

/// Generates `gen_factor × T` conformers from fresh initializations.
pub fn generate_ensemble<R: Rng + ?Sized>(
    graph: &MolGraph,
    n_truth: usize,
    params: &LearnerParams,
    config: &BenchmarkConfig,
    table: &GeometryTable,
    rng: &mut R,
) -> Result<Vec<Conformation>> {
    let k = config.gen_factor.max(1) * n_truth;
    let lg = LearnerGraph::new(graph, params.config.adjacency_order)?;
    let mut out = Vec::with_capacity(k);
    for _ in 0..k {
        let (init, _) = initial_conformation(graph, config.init, table, rng)?;
        let c = if config.steps == 0 {
            init
        } else {
            Conformation::new(boost_infer::<f64>(&lg, init.coords(), params, config.steps)?)?
        };
        out.push(c);
    }
    Ok(out)
}

pub fn evaluate_molecule<R: Rng + SeedableRng>(
    mol: &BenchmarkMolecule,
    params: &LearnerParams,
    config: &BenchmarkConfig,
    table: &GeometryTable,
) -> Result<EnsembleEval> {
    let mut rng = R::seed_from_u64(molecule_seed(config.seed, &mol.name));
    let gen = generate_ensemble(&mol.graph, mol.truth.len(), params, config, table, &mut rng)?;
    evaluate(&gen, &mol.truth, &mol.schemes, config.threshold, config.naive_rmsd)
}

#[derive(Clone, Debug)]
pub struct BenchmarkReport {
    pub per_molecule: Vec<(String, Option<EnsembleEval>)>,
    pub aggregate: Aggregate,
}

/// Evaluates every molecule; failures are recorded and excluded from the aggregates.
pub fn benchmark<R: Rng + SeedableRng>(
    molecules: &[BenchmarkMolecule],
    params: &LearnerParams,
    config: &BenchmarkConfig,
    table: &GeometryTable,
) -> Result<BenchmarkReport> {
    let per_molecule: Vec<(String, Option<EnsembleEval>)> = molecules
        .iter()
        .map(|m| (m.name.clone(), evaluate_molecule::<R>(m, params, config, table).ok()))
        .collect();
    let aggregate = aggregate(per_molecule.iter().map(|(_, e)| e.as_ref()))?;
    Ok(BenchmarkReport { per_molecule, aggregate })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::equivariant::LearnerConfig;
    use crate::geometry::{random_rotation, Point};
    use crate::molgraph::{AtomSpec, Bond, BondOrder};
    use crate::symmetry::find_symmetric_substructures;
    use alloc::vec;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, StandardNormal};

    fn noisy(base: &[Point], sigma: f64, rng: &mut ChaCha8Rng) -> Conformation {
        Conformation::new(
            base.iter()
                .map(|p| {
                    let mut q = *p;
                    for v in &mut q {
                        *v += sigma * { let z: f64 = StandardNormal.sample(rng); z };
                    }
                    q
                })
                .collect(),
        )
        .unwrap()
    }

    fn cloud(n: usize, rng: &mut ChaCha8Rng) -> Vec<Point> {
        (0..n).map(|_| [0, 1, 2].map(|_| { let z: f64 = StandardNormal.sample(rng); 1.5 * z })).collect()
    }

    #[test]
    fn self_evaluation_is_perfect() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let truth: Vec<_> = (0..3).map(|_| Conformation::new(cloud(6, &mut rng)).unwrap()).collect();
        let e = evaluate(&truth, &truth, &[], QM9_THRESHOLD, false).unwrap();
        assert_eq!((e.cov_r, e.cov_p), (100.0, 100.0));
        assert_eq!((e.amr_r, e.amr_p), (0.0, 0.0));
    }

    #[test]
    fn hand_placed_matrix() {
        // Truth minima 0.1 and 0.9 over a 4 x 2 matrix.
        let m = vec![0.1, 1.2, 0.4, 0.9, 2.0, 1.5, 0.7, 3.0];
        let e = EnsembleEval::from_matrix(m, 4, 2, 0.5).unwrap();
        assert_eq!(e.cov_r, 50.0);
        assert!((e.amr_r - 0.5).abs() < 1e-12);
        // Generation minima 0.1, 0.4, 1.5, 0.7.
        assert_eq!(e.cov_p, 50.0);
        assert!((e.amr_p - 0.675).abs() < 1e-12);
    }

    #[test]
    fn coverage_is_strict() {
        let e = EnsembleEval::from_matrix(vec![0.5], 1, 1, 0.5).unwrap();
        assert_eq!(e.cov_r, 0.0);
    }

    #[test]
    fn infinite_threshold_saturates() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let gen: Vec<_> = (0..4).map(|_| Conformation::new(cloud(5, &mut rng)).unwrap()).collect();
        let truth: Vec<_> = (0..2).map(|_| Conformation::new(cloud(5, &mut rng)).unwrap()).collect();
        let e = evaluate(&gen, &truth, &[], f64::INFINITY, false).unwrap();
        assert_eq!((e.cov_r, e.cov_p), (100.0, 100.0));
    }

    #[test]
    fn empty_inputs_rejected() {
        let c = Conformation::new(vec![[0.0; 3], [1.0, 0.0, 0.0]]).unwrap();
        assert!(evaluate(&[], core::slice::from_ref(&c), &[], 0.5, false).is_err());
        assert!(evaluate(&[c], &[], &[], 0.5, false).is_err());
        assert!(EnsembleEval::from_matrix(vec![1.0; 3], 2, 2, 0.5).is_err());
    }

    #[test]
    fn matches_brute_force() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..10 {
            let base = cloud(7, &mut rng);
            let gen: Vec<_> = (0..5).map(|_| noisy(&base, 0.4, &mut rng)).collect();
            let truth: Vec<_> = (0..3).map(|_| noisy(&base, 0.4, &mut rng)).collect();
            let e = evaluate(&gen, &truth, &[], 0.5, true).unwrap();
            let mut covered = 0;
            let mut amr = 0.0;
            for t in &truth {
                let best = gen.iter().map(|g| aligned_rmsd(t, g).unwrap()).fold(f64::INFINITY, f64::min);
                covered += (best < 0.5) as usize;
                amr += best / 3.0;
            }
            assert!((e.cov_r - 100.0 * covered as f64 / 3.0).abs() < 1e-9);
            assert!((e.amr_r - amr).abs() < 1e-9);
        }
    }

    #[test]
    fn rigid_motion_does_not_change_metrics() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let base = cloud(6, &mut rng);
        let gen: Vec<_> = (0..4).map(|_| noisy(&base, 0.3, &mut rng)).collect();
        let truth: Vec<_> = (0..2).map(|_| noisy(&base, 0.3, &mut rng)).collect();
        let moved: Vec<_> = gen.iter().map(|c| c.transformed(&random_rotation(&mut rng), [1.0, -2.0, 3.0])).collect();
        let a = evaluate(&gen, &truth, &[], 0.5, false).unwrap();
        let b = evaluate(&moved, &truth, &[], 0.5, false).unwrap();
        assert!((a.amr_r - b.amr_r).abs() < 1e-9 && (a.amr_p - b.amr_p).abs() < 1e-9);
    }

    #[test]
    fn lower_median_picks_smaller_middle() {
        assert_eq!(lower_median(&[4.0, 1.0, 3.0, 2.0]), Some(2.0));
        assert_eq!(lower_median(&[5.0, 1.0, 3.0]), Some(3.0));
        assert_eq!(lower_median(&[]), None);
    }

    fn sample_eval(v: f64) -> EnsembleEval {
        EnsembleEval::from_matrix(vec![v, v + 1.0], 2, 1, 0.5).unwrap()
    }

    #[test]
    fn aggregate_counts_failures() {
        let a = sample_eval(0.2);
        let b = sample_eval(0.8);
        let agg = aggregate([Some(&a), None, Some(&b)]).unwrap();
        assert_eq!((agg.evaluated, agg.failures), (2, 1));
        assert!((agg.amr_r.mean - 0.5).abs() < 1e-12);
        assert_eq!(agg.amr_r.med, 0.2);
        assert!(aggregate([None]).is_err());
        let single = aggregate([Some(&a)]).unwrap();
        assert_eq!(single.amr_p.mean, a.amr_p);
        assert_eq!(single.cov_r.med, a.cov_r);
    }

    fn branched() -> MolGraph {
        // Isopentane-like heavy-atom skeleton with one rotatable bond.
        let atoms = vec![AtomSpec::new(6); 5];
        let bonds = [(0, 1), (1, 2), (1, 3), (3, 4)]
            .map(|(i, j)| Bond { i, j, order: BondOrder::Single })
            .to_vec();
        MolGraph::new(atoms, bonds).unwrap()
    }

    #[test]
    fn zero_head_crs_reflects_torsion_mismatch() {
        let g = branched();
        let table = GeometryTable::builtin();
        let params = LearnerParams::zeros(&LearnerConfig::default()).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let truth: Vec<_> = (0..2)
            .map(|_| crate::sampler::constrained_random_sample(&g, &table, &mut rng).unwrap().conformation)
            .collect();
        let mol = BenchmarkMolecule { name: "isopentane".into(), schemes: find_symmetric_substructures(&g), graph: g, truth };
        let config = BenchmarkConfig { steps: 1, ..Default::default() };
        let e = evaluate_molecule::<ChaCha8Rng>(&mol, &params, &config, &table).unwrap();
        assert_eq!(e.n_gen, 4);
        assert!(e.amr_p > 0.0);
    }

    #[test]
    fn benchmark_is_order_independent() {
        let table = GeometryTable::builtin();
        let params = LearnerParams::zeros(&LearnerConfig::default()).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let mols: Vec<_> = ["a", "b", "c"]
            .iter()
            .map(|name| {
                let g = branched();
                let truth = vec![crate::sampler::constrained_random_sample(&g, &table, &mut rng).unwrap().conformation];
                BenchmarkMolecule { name: (*name).into(), schemes: find_symmetric_substructures(&g), graph: g, truth }
            })
            .collect();
        let config = BenchmarkConfig { steps: 0, ..Default::default() };
        let fwd = benchmark::<ChaCha8Rng>(&mols, &params, &config, &table).unwrap();
        let rev: Vec<_> = mols.iter().rev().cloned().collect();
        let bwd = benchmark::<ChaCha8Rng>(&rev, &params, &config, &table).unwrap();
        assert_eq!(fwd.aggregate, bwd.aggregate);
    }

    #[test]
    fn symmetric_rmsd_never_exceeds_naive() {
        let g = branched();
        let schemes = find_symmetric_substructures(&g);
        let table = GeometryTable::builtin();
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let draw = |rng: &mut ChaCha8Rng| crate::sampler::constrained_random_sample(&g, &table, rng).unwrap().conformation;
        let gen: Vec<_> = (0..4).map(|_| draw(&mut rng)).collect();
        let truth: Vec<_> = (0..2).map(|_| draw(&mut rng)).collect();
        let sym = evaluate(&gen, &truth, &schemes, 0.5, false).unwrap();
        let naive = evaluate(&gen, &truth, &schemes, 0.5, true).unwrap();
        assert!(sym.amr_r <= naive.amr_r + 1e-12 && sym.amr_p <= naive.amr_p + 1e-12);
    }
}
