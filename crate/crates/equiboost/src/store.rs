//! On-disk ensemble store.
//!
//! ```text
//! root/
//!   <molecule>/graph.json        (or graph.mol)
//!   <molecule>/truth/*.xyz
//!   <molecule>/gen/*.xyz, gen/meta.json
//!   <molecule>/eval.json
//!   results.csv, summary.json
//! ```
//!
//! A directory that itself holds `graph.json` is a one-molecule store.

use std::fs;
use std::path::{Path, PathBuf};

use equiboost_core::metrics::{Aggregate, EnsembleEval};
use equiboost_core::{Conformation, MolGraph};
use serde::{Deserialize, Serialize};

use crate::error::{AppError, AppResult};
use crate::fsutil::{replace_dir, write_atomic};
use crate::graph_io::read_graph;
use crate::xyz::{format_xyz, read_conformation};

const GRAPH_FILES: [&str; 2] = ["graph.json", "graph.mol"];

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct MoleculeDir {
    pub name: String,
    pub path: PathBuf,
}

fn graph_file(dir: &Path) -> Option<PathBuf> {
    GRAPH_FILES.iter().map(|f| dir.join(f)).find(|p| p.is_file())
}

fn xyz_files(dir: &Path) -> AppResult<Vec<PathBuf>> {
    let entries = fs::read_dir(dir).map_err(|e| match e.kind() {
        std::io::ErrorKind::NotFound => AppError::missing("directory", dir),
        _ => AppError::io(dir.display(), e),
    })?;
    let mut files = Vec::new();
    for entry in entries {
        let p = entry.map_err(|e| AppError::io(dir.display(), e))?.path();
        if p.extension().is_some_and(|x| x == "xyz") {
            files.push(p);
        }
    }
    files.sort();
    Ok(files)
}

/// Generation metadata written next to the generated conformers.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GenMeta {
    pub model: String,
    pub init: String,
    #[serde(rename = "M")]
    pub steps: usize,
    pub seed: u64,
    pub molecule_seed: u64,
    pub checkpoint_sha256: String,
    pub count: usize,
    pub n_truth: usize,
    /// Learner evaluations per generated conformer.
    pub learner_calls: Vec<usize>,
    /// Conformers whose CRS initialization fell back to RS.
    pub crs_fallbacks: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalFile {
    #[serde(flatten)]
    pub eval: EnsembleEval,
    pub naive_rmsd: bool,
}

impl MoleculeDir {
    pub fn graph_path(&self) -> AppResult<PathBuf> {
        graph_file(&self.path).ok_or_else(|| AppError::missing("graph file", &self.path.join("graph.json")))
    }

    pub fn graph(&self) -> AppResult<MolGraph> {
        read_graph(&self.graph_path()?)
    }

    pub fn truth_dir(&self) -> PathBuf {
        self.path.join("truth")
    }

    pub fn gen_dir(&self) -> PathBuf {
        self.path.join("gen")
    }

    pub fn eval_path(&self) -> PathBuf {
        self.path.join("eval.json")
    }

    pub fn truth_files(&self) -> AppResult<Vec<PathBuf>> {
        xyz_files(&self.truth_dir())
    }

    pub fn gen_files(&self) -> AppResult<Vec<PathBuf>> {
        xyz_files(&self.gen_dir())
    }

    /// Conformers in a subdirectory, each checked against `g`.
    pub fn read_ensemble(files: &[PathBuf], g: &MolGraph) -> AppResult<Vec<Conformation>> {
        files.iter().map(|p| read_conformation(p, g)).collect()
    }

    /// Replaces `gen/` with the given conformers and metadata.
    pub fn write_gen(&self, g: &MolGraph, confs: &[(Conformation, String)], meta: &GenMeta) -> AppResult<()> {
        let elements: Vec<u8> = g.atoms().iter().map(|a| a.element).collect();
        let width = confs.len().saturating_sub(1).to_string().len().max(3);
        replace_dir(&self.gen_dir(), |dir| {
            for (k, (c, comment)) in confs.iter().enumerate() {
                let text = format_xyz(&elements, c.coords(), comment);
                write_atomic(&dir.join(format!("{k:0width$}.xyz")), text.as_bytes())?;
            }
            write_atomic(&dir.join("meta.json"), &to_json_bytes(meta))
        })
    }

    pub fn write_eval(&self, eval: &EvalFile) -> AppResult<()> {
        write_atomic(&self.eval_path(), &to_json_bytes(eval))
    }
}

/// Pretty JSON with a trailing newline.
pub fn to_json_bytes<T: Serialize>(value: &T) -> Vec<u8> {
    let mut v = serde_json::to_vec_pretty(value).expect("value serializes");
    v.push(b'\n');
    v
}

#[derive(Clone, Debug)]
pub struct Dataset {
    pub root: PathBuf,
    pub molecules: Vec<MoleculeDir>,
}

impl Dataset {
    pub fn open(root: &Path) -> AppResult<Self> {
        if !root.is_dir() {
            return Err(AppError::missing("dataset directory", root));
        }
        if graph_file(root).is_some() {
            let name = root
                .canonicalize()
                .ok()
                .and_then(|p| p.file_name().map(|s| s.to_string_lossy().into_owned()))
                .unwrap_or_else(|| "molecule".into());
            return Ok(Dataset { root: root.to_path_buf(), molecules: vec![MoleculeDir { name, path: root.to_path_buf() }] });
        }
        let mut molecules = Vec::new();
        for entry in fs::read_dir(root).map_err(|e| AppError::io(root.display(), e))? {
            let p = entry.map_err(|e| AppError::io(root.display(), e))?.path();
            if p.is_dir() && graph_file(&p).is_some() {
                let name = p.file_name().unwrap().to_string_lossy().into_owned();
                molecules.push(MoleculeDir { name, path: p });
            }
        }
        if molecules.is_empty() {
            return Err(AppError::Input(format!("{}: no molecule directories with a graph file", root.display())));
        }
        molecules.sort_by(|a, b| a.name.cmp(&b.name));
        Ok(Dataset { root: root.to_path_buf(), molecules })
    }

    pub fn results_path(&self) -> PathBuf {
        self.root.join("results.csv")
    }

    pub fn summary_path(&self) -> PathBuf {
        self.root.join("summary.json")
    }
}

/// One row of `results.csv`; metric columns are empty for failed molecules.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ResultRow {
    pub molecule: String,
    pub status: String,
    pub cov_r: Option<f64>,
    pub amr_r: Option<f64>,
    pub cov_p: Option<f64>,
    pub amr_p: Option<f64>,
    pub n_gen: Option<usize>,
    pub n_truth: Option<usize>,
}

impl ResultRow {
    pub fn ok(molecule: &str, e: &EnsembleEval) -> Self {
        ResultRow {
            molecule: molecule.into(),
            status: "ok".into(),
            cov_r: Some(e.cov_r),
            amr_r: Some(e.amr_r),
            cov_p: Some(e.cov_p),
            amr_p: Some(e.amr_p),
            n_gen: Some(e.n_gen),
            n_truth: Some(e.n_truth),
        }
    }

    pub fn failed(molecule: &str, reason: &str) -> Self {
        ResultRow {
            molecule: molecule.into(),
            status: format!("failed: {reason}"),
            cov_r: None,
            amr_r: None,
            cov_p: None,
            amr_p: None,
            n_gen: None,
            n_truth: None,
        }
    }
}

pub fn results_csv(rows: &[ResultRow]) -> AppResult<Vec<u8>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    for r in rows {
        w.serialize(r).map_err(|e| AppError::Input(format!("results table: {e}")))?;
    }
    w.into_inner().map_err(|e| AppError::Input(format!("results table: {e}")))
}

/// Column layout of the benchmark tables: mean and median of each metric.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SummaryFile {
    #[serde(flatten)]
    pub aggregate: Aggregate,
    pub threshold: f64,
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph_io::graph_to_json;

    #[test]
    fn opens_single_and_multi_molecule_stores() {
        let dir = tempfile::tempdir().unwrap();
        let g = crate::testutil::chain(3);
        for name in ["b", "a"] {
            let m = dir.path().join(name);
            fs::create_dir_all(&m).unwrap();
            fs::write(m.join("graph.json"), graph_to_json(&g)).unwrap();
        }
        fs::create_dir(dir.path().join("not-a-molecule")).unwrap();
        let ds = Dataset::open(dir.path()).unwrap();
        let names: Vec<_> = ds.molecules.iter().map(|m| m.name.as_str()).collect();
        assert_eq!(names, ["a", "b"]);
        let single = Dataset::open(&dir.path().join("a")).unwrap();
        assert_eq!(single.molecules.len(), 1);
        assert_eq!(single.molecules[0].graph().unwrap(), g);
        assert_eq!(Dataset::open(&dir.path().join("zzz")).unwrap_err().exit_code(), 2);
    }

    #[test]
    fn gen_round_trip_and_mismatch_detection() {
        let dir = tempfile::tempdir().unwrap();
        let g = crate::testutil::chain(3);
        let m = MoleculeDir { name: "m".into(), path: dir.path().to_path_buf() };
        let c = Conformation::new(vec![[0.0, 0.0, 0.0], [1.5, 0.0, 0.0], [2.0, 1.4, 0.0]]).unwrap();
        let meta = GenMeta {
            model: "boost".into(),
            init: "crs".into(),
            steps: 5,
            seed: 1,
            molecule_seed: 2,
            checkpoint_sha256: "00".into(),
            count: 2,
            n_truth: 1,
            learner_calls: vec![5, 5],
            crs_fallbacks: 0,
        };
        m.write_gen(&g, &[(c.clone(), "a".into()), (c.clone(), "b".into())], &meta).unwrap();
        let files = m.gen_files().unwrap();
        assert_eq!(files.len(), 2);
        assert!(files[0].ends_with("000.xyz"));
        assert_eq!(MoleculeDir::read_ensemble(&files, &g).unwrap()[1], c);
        assert!(MoleculeDir::read_ensemble(&files, &crate::testutil::chain(4)).is_err());
        let back: GenMeta = serde_json::from_slice(&fs::read(m.gen_dir().join("meta.json")).unwrap()).unwrap();
        assert_eq!(back, meta);
    }

    #[test]
    fn csv_leaves_failed_metrics_empty() {
        let e = EnsembleEval::from_matrix(vec![0.1, 0.9], 2, 1, 0.5).unwrap();
        let text = String::from_utf8(results_csv(&[ResultRow::ok("a", &e), ResultRow::failed("b", "bad")]).unwrap()).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines[0], "molecule,status,cov_r,amr_r,cov_p,amr_p,n_gen,n_truth");
        assert_eq!(lines[1], "a,ok,100.0,0.1,50.0,0.5,2,1");
        assert_eq!(lines[2], "b,failed: bad,,,,,,");
    }
}
