#![allow(dead_code, clippy::needless_range_loop)]

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use equiboost::checkpoint::Checkpoint;
use equiboost::graph_io::graph_to_json;
use equiboost::xyz::format_xyz;
use equiboost_core::equivariant::{LearnerConfig, LearnerParams};
use equiboost_core::geometry::Point;
use equiboost_core::molgraph::Bond;
use equiboost_core::sampler::{initial_conformation, GeometryTable, InitKind};
use equiboost_core::{AtomSpec, BondOrder, MolGraph};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn graph(elements: &[u8], bonds: &[(usize, usize, u8)]) -> MolGraph {
    let atoms = elements.iter().map(|&e| AtomSpec::new(e)).collect();
    let bonds = bonds.iter().map(|&(i, j, o)| Bond { i, j, order: BondOrder::from_code(o).unwrap() }).collect();
    MolGraph::new(atoms, bonds).unwrap()
}

pub fn butane() -> MolGraph {
    graph(&[6, 6, 6, 6], &[(0, 1, 1), (1, 2, 1), (2, 3, 1)])
}

/// Random connected graph: a random tree of degree at most 4 plus up to
/// `extra` ring-closing single bonds, elements drawn from C, N, O.
pub fn random_graph(rng: &mut ChaCha8Rng, n: usize, extra: usize) -> MolGraph {
    let mut bonds: Vec<(usize, usize, u8)> = Vec::new();
    let mut degree = vec![0usize; n];
    for i in 1..n {
        let open: Vec<usize> = (0..i).filter(|&j| degree[j] < 4).collect();
        let j = open[rng.random_range(0..open.len())];
        let order = if rng.random_bool(0.15) { 2 } else { 1 };
        bonds.push((j, i, order));
        degree[i] += 1;
        degree[j] += 1;
    }
    for _ in 0..extra {
        let (a, b) = (rng.random_range(0..n), rng.random_range(0..n));
        let exists = bonds.iter().any(|&(i, j, _)| (i, j) == (a, b) || (j, i) == (a, b));
        if a != b && !exists && degree[a] < 4 && degree[b] < 4 {
            bonds.push((a.min(b), a.max(b), 1));
            degree[a] += 1;
            degree[b] += 1;
        }
    }
    let elements: Vec<u8> = (0..n).map(|_| [6, 6, 6, 7, 8][rng.random_range(0..5)]).collect();
    graph(&elements, &bonds)
}

pub fn gaussian_cloud(rng: &mut ChaCha8Rng, n: usize, scale: f64) -> Vec<Point> {
    use rand_distr::{Distribution, StandardNormal};
    (0..n)
        .map(|_| {
            let mut p = [0.0; 3];
            for v in &mut p {
                let z: f64 = StandardNormal.sample(rng);
                *v = scale * z;
            }
            p
        })
        .collect()
}

/// Eigenvalues of a symmetric 4×4 matrix by cyclic Jacobi rotations.
pub fn symmetric_eigenvalues4(mut a: [[f64; 4]; 4]) -> [f64; 4] {
    for _ in 0..100 {
        let off: f64 = (0..4).flat_map(|i| (0..4).filter(move |&j| j != i).map(move |j| (i, j))).map(|(i, j)| a[i][j] * a[i][j]).sum();
        if off < 1e-30 {
            break;
        }
        for p in 0..4 {
            for q in p + 1..4 {
                if a[p][q].abs() < 1e-300 {
                    continue;
                }
                let theta = (a[q][q] - a[p][p]) / (2.0 * a[p][q]);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let t = if theta == 0.0 { 1.0 } else { t };
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                for k in 0..4 {
                    let (akp, akq) = (a[k][p], a[k][q]);
                    a[k][p] = c * akp - s * akq;
                    a[k][q] = s * akp + c * akq;
                }
                for k in 0..4 {
                    let (apk, aqk) = (a[p][k], a[q][k]);
                    a[p][k] = c * apk - s * aqk;
                    a[q][k] = s * apk + c * aqk;
                }
            }
        }
    }
    [a[0][0], a[1][1], a[2][2], a[3][3]]
}

/// Superposed RMSD by the quaternion eigenvalue method.
pub fn quaternion_rmsd(a: &[Point], b: &[Point]) -> f64 {
    let n = a.len() as f64;
    let centre = |p: &[Point]| {
        let mut c = [0.0; 3];
        for q in p {
            for k in 0..3 {
                c[k] += q[k] / n;
            }
        }
        p.iter().map(|q| [q[0] - c[0], q[1] - c[1], q[2] - c[2]]).collect::<Vec<Point>>()
    };
    let (x, y) = (centre(a), centre(b));
    let mut s = [[0.0; 3]; 3];
    let mut e = 0.0;
    for (p, q) in x.iter().zip(&y) {
        for i in 0..3 {
            e += p[i] * p[i] + q[i] * q[i];
            for j in 0..3 {
                s[i][j] += p[i] * q[j];
            }
        }
    }
    let [[sxx, sxy, sxz], [syx, syy, syz], [szx, szy, szz]] = s;
    let k = [
        [sxx + syy + szz, syz - szy, szx - sxz, sxy - syx],
        [syz - szy, sxx - syy - szz, sxy + syx, szx + sxz],
        [szx - sxz, sxy + syx, -sxx + syy - szz, syz + szy],
        [sxy - syx, szx + sxz, syz + szy, -sxx - syy + szz],
    ];
    let lmax = symmetric_eigenvalues4(k).into_iter().fold(f64::NEG_INFINITY, f64::max);
    ((e - 2.0 * lmax).max(0.0) / n).sqrt()
}

/// Dihedral angle a-b-c-d in (-π, π].
pub fn dihedral(a: Point, b: Point, c: Point, d: Point) -> f64 {
    let sub = |u: Point, v: Point| [u[0] - v[0], u[1] - v[1], u[2] - v[2]];
    let cross = |u: Point, v: Point| [u[1] * v[2] - u[2] * v[1], u[2] * v[0] - u[0] * v[2], u[0] * v[1] - u[1] * v[0]];
    let dot = |u: Point, v: Point| u[0] * v[0] + u[1] * v[1] + u[2] * v[2];
    let (b1, b2, b3) = (sub(b, a), sub(c, b), sub(d, c));
    let (n1, n2) = (cross(b1, b2), cross(b2, b3));
    let m = cross(n1, b2);
    let len = dot(b2, b2).sqrt();
    (dot(m, n2) / len).atan2(dot(n1, n2))
}

pub fn distance(a: Point, b: Point) -> f64 {
    ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2) + (a[2] - b[2]).powi(2)).sqrt()
}

pub fn angle(a: Point, v: Point, c: Point) -> f64 {
    let u = [a[0] - v[0], a[1] - v[1], a[2] - v[2]];
    let w = [c[0] - v[0], c[1] - v[1], c[2] - v[2]];
    let d = u[0] * w[0] + u[1] * w[1] + u[2] * w[2];
    (d / (distance(a, v) * distance(c, v))).clamp(-1.0, 1.0).acos()
}

/// Small learner used by command-line fixtures.
pub fn small_learner() -> LearnerConfig {
    LearnerConfig { scalar_channels: 8, vector_channels: 4, blocks: 2, rbf_count: 8, head_init_scale: 1.0, ..Default::default() }
}

pub fn write_checkpoint(path: &Path, config: &LearnerConfig, seed: u64) {
    let mut params = LearnerParams::init(config, &mut ChaCha8Rng::seed_from_u64(seed)).unwrap();
    params.round_to_f32();
    Checkpoint { params, optimizer: None, progress: None }.save(path).unwrap();
}

/// Writes `root/<name>/graph.json` and `truth_count` CRS conformers under `truth/`.
pub fn write_molecule(root: &Path, name: &str, g: &MolGraph, truth_count: usize, seed: u64) -> PathBuf {
    let dir = root.join(name);
    fs::create_dir_all(dir.join("truth")).unwrap();
    fs::write(dir.join("graph.json"), graph_to_json(g)).unwrap();
    let elements: Vec<u8> = g.atoms().iter().map(|a| a.element).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for t in 0..truth_count {
        let (c, _) = initial_conformation(g, InitKind::Crs, &GeometryTable::builtin(), &mut rng).unwrap();
        fs::write(dir.join("truth").join(format!("{t:03}.xyz")), format_xyz(&elements, c.coords(), "truth")).unwrap();
    }
    dir
}

/// A three-molecule store.
pub fn write_store(root: &Path) {
    write_molecule(root, "butane", &butane(), 3, 1);
    write_molecule(root, "ethanolamine", &graph(&[6, 6, 8, 7], &[(0, 1, 1), (1, 2, 1), (0, 3, 1)]), 2, 2);
    write_molecule(root, "isobutanol", &graph(&[6, 6, 6, 6, 8], &[(0, 1, 1), (0, 2, 1), (0, 3, 1), (3, 4, 1)]), 2, 3);
}

pub fn run(args: &[&str]) -> Output {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_equiboost"));
    for (k, _) in std::env::vars() {
        if k.starts_with("EQB_") {
            cmd.env_remove(k);
        }
    }
    cmd.args(args).output().expect("binary runs")
}

pub fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

pub fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

/// Every file under `dir`, keyed by relative path.
pub fn snapshot(dir: &Path) -> BTreeMap<String, Vec<u8>> {
    fn walk(base: &Path, dir: &Path, out: &mut BTreeMap<String, Vec<u8>>) {
        for entry in fs::read_dir(dir).unwrap() {
            let p = entry.unwrap().path();
            if p.is_dir() {
                walk(base, &p, out);
            } else {
                let rel = p.strip_prefix(base).unwrap().to_string_lossy().into_owned();
                out.insert(rel, fs::read(&p).unwrap());
            }
        }
    }
    let mut out = BTreeMap::new();
    walk(dir, dir, &mut out);
    out
}

pub fn copy_dir(from: &Path, to: &Path) {
    fs::create_dir_all(to).unwrap();
    for entry in fs::read_dir(from).unwrap() {
        let p = entry.unwrap().path();
        let target = to.join(p.file_name().unwrap());
        if p.is_dir() {
            copy_dir(&p, &target);
        } else {
            fs::copy(&p, &target).unwrap();
        }
    }
}
