use alloc::collections::VecDeque;
use alloc::vec;
use alloc::vec::Vec;
use core::f64::consts::PI;

use serde::{Deserialize, Serialize};

use super::{add, cross, dot, norm, scale, sub, Point};
use crate::molgraph::MolGraph;
use crate::{Error, Result};
#[allow(unused_imports)]
use num_traits::Float;

/// Below this sine an angle or dihedral frame counts as collinear.
const COLLINEAR_SIN: f64 = 1e-6;

/// One row of a Z-matrix: `atom` is placed relative to up to three earlier atoms.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ZEntry {
    pub atom: usize,
    pub bond_ref: Option<usize>,
    pub angle_ref: Option<usize>,
    pub dihedral_ref: Option<usize>,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ZMatrixPlan {
    pub entries: Vec<ZEntry>,
}

impl ZMatrixPlan {
    pub fn n_atoms(&self) -> usize {
        self.entries.len()
    }

    pub fn bonds(&self) -> impl Iterator<Item = [usize; 2]> + '_ {
        self.entries.iter().filter_map(|e| Some([e.atom, e.bond_ref?]))
    }

    pub fn angles(&self) -> impl Iterator<Item = [usize; 3]> + '_ {
        self.entries.iter().filter_map(|e| Some([e.atom, e.bond_ref?, e.angle_ref?]))
    }

    pub fn dihedrals(&self) -> impl Iterator<Item = [usize; 4]> + '_ {
        self.entries.iter().filter_map(|e| Some([e.atom, e.bond_ref?, e.angle_ref?, e.dihedral_ref?]))
    }

    /// Builds Cartesian coordinates from per-entry values, listed in the same
    /// order as [`Self::bonds`], [`Self::angles`] and [`Self::dihedrals`].
    pub fn reconstruct(&self, lengths: &[f64], angles: &[f64], dihedrals: &[f64]) -> Result<Vec<Point>> {
        let n = self.entries.len();
        let counts = (self.bonds().count(), self.angles().count(), self.dihedrals().count());
        if lengths.len() != counts.0 {
            return Err(Error::SizeMismatch { expected: counts.0, found: lengths.len() });
        }
        if angles.len() != counts.1 {
            return Err(Error::SizeMismatch { expected: counts.1, found: angles.len() });
        }
        if dihedrals.len() != counts.2 {
            return Err(Error::SizeMismatch { expected: counts.2, found: dihedrals.len() });
        }
        let mut pos = vec![[0.0; 3]; n];
        let (mut bi, mut ai, mut di) = (0, 0, 0);
        for e in &self.entries {
            let Some(p) = e.bond_ref else {
                continue;
            };
            let length = lengths[bi];
            bi += 1;
            pos[e.atom] = match e.angle_ref {
                None => add(pos[p], [length, 0.0, 0.0]),
                Some(q) => {
                    let theta = angles[ai];
                    ai += 1;
                    match e.dihedral_ref {
                        None => place_atom(pos[p], pos[q], add(pos[q], [0.0, 1.0, 0.0]), length, theta, 0.0),
                        Some(d) => {
                            let phi = dihedrals[di];
                            di += 1;
                            place_atom(pos[p], pos[q], pos[d], length, theta, phi)
                        }
                    }
                }
            };
        }
        Ok(pos)
    }
}

/// BFS spanning-tree Z-matrix rooted at atom 0, neighbours visited in index order.
pub fn build_zmatrix_plan(g: &MolGraph) -> ZMatrixPlan {
    let n = g.n_atoms();
    let mut parent = vec![usize::MAX; n];
    let mut placed = vec![false; n];
    let mut order = Vec::with_capacity(n);
    let mut queue = VecDeque::from([0usize]);
    placed[0] = true;
    while let Some(a) = queue.pop_front() {
        order.push(a);
        for &(b, _) in g.neighbors(a) {
            if !placed[b] {
                placed[b] = true;
                parent[b] = a;
                queue.push_back(b);
            }
        }
    }

    let mut rank = vec![usize::MAX; n];
    let mut entries = Vec::with_capacity(n);
    for (k, &a) in order.iter().enumerate() {
        rank[a] = k;
        let earlier = |x: usize| rank[x] < k;
        let mut entry = ZEntry { atom: a, bond_ref: None, angle_ref: None, dihedral_ref: None };
        if k >= 1 {
            let p = parent[a];
            entry.bond_ref = Some(p);
            if k >= 2 {
                let gp = Some(parent[p]).filter(|&x| x != usize::MAX).or_else(|| {
                    g.neighbors(p).iter().map(|&(x, _)| x).find(|&x| x != a && earlier(x))
                });
                let gp = gp.or_else(|| order[..k].iter().copied().find(|&x| x != p)).expect("two atoms placed");
                entry.angle_ref = Some(gp);
                if k >= 3 {
                    let excluded = |x: usize| x == a || x == p || x == gp;
                    let d = Some(parent[gp])
                        .filter(|&x| x != usize::MAX && !excluded(x))
                        .or_else(|| g.neighbors(gp).iter().map(|&(x, _)| x).find(|&x| earlier(x) && !excluded(x)))
                        .or_else(|| g.neighbors(p).iter().map(|&(x, _)| x).find(|&x| earlier(x) && !excluded(x)))
                        .or_else(|| order[..k].iter().copied().find(|&x| !excluded(x)))
                        .expect("three atoms placed");
                    entry.dihedral_ref = Some(d);
                }
            }
        }
        entries.push(entry);
    }
    ZMatrixPlan { entries }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct BondEntry {
    pub atoms: [usize; 2],
    pub value: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AngleEntry {
    /// `[a, vertex, c]`.
    pub atoms: [usize; 3],
    pub value: f64,
    pub degenerate: bool,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct DihedralEntry {
    pub atoms: [usize; 4],
    pub value: f64,
    pub degenerate: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct InternalCoords {
    pub bond_lengths: Vec<BondEntry>,
    pub bond_angles: Vec<AngleEntry>,
    pub dihedrals: Vec<DihedralEntry>,
    /// Row-major `n × n` all-pairs distances.
    pub dist_matrix: Vec<f64>,
    pub n: usize,
}

impl InternalCoords {
    pub fn dist(&self, i: usize, j: usize) -> f64 {
        self.dist_matrix[i * self.n + j]
    }
}

pub fn to_internal(g: &MolGraph, coords: &[Point], plan: &ZMatrixPlan) -> Result<InternalCoords> {
    let n = coords.len();
    if g.n_atoms() != n {
        return Err(Error::SizeMismatch { expected: g.n_atoms(), found: n });
    }
    if plan.n_atoms() != n {
        return Err(Error::SizeMismatch { expected: plan.n_atoms(), found: n });
    }
    let bond_lengths = plan
        .bonds()
        .map(|[a, b]| BondEntry { atoms: [a, b], value: norm(sub(coords[a], coords[b])) })
        .collect();
    let bond_angles = plan
        .angles()
        .map(|[a, p, q]| {
            let (value, degenerate) = angle(coords[a], coords[p], coords[q]);
            AngleEntry { atoms: [a, p, q], value, degenerate }
        })
        .collect();
    let dihedrals = plan
        .dihedrals()
        .map(|t| {
            let (value, degenerate) = dihedral(coords[t[0]], coords[t[1]], coords[t[2]], coords[t[3]]);
            DihedralEntry { atoms: t, value, degenerate }
        })
        .collect();
    Ok(InternalCoords { bond_lengths, bond_angles, dihedrals, dist_matrix: distance_matrix(coords), n })
}

pub fn distance_matrix(coords: &[Point]) -> Vec<f64> {
    let n = coords.len();
    let mut d = vec![0.0; n * n];
    for i in 0..n {
        for j in i + 1..n {
            let v = norm(sub(coords[i], coords[j]));
            d[i * n + j] = v;
            d[j * n + i] = v;
        }
    }
    d
}

/// Angle at `vertex` between `a` and `c`, in `[0, π]`, with a collinearity flag.
pub fn angle(a: Point, vertex: Point, c: Point) -> (f64, bool) {
    let u = sub(a, vertex);
    let v = sub(c, vertex);
    let s = norm(cross(u, v));
    let value = s.atan2(dot(u, v));
    let scale_uv = norm(u) * norm(v);
    (value, scale_uv == 0.0 || s < COLLINEAR_SIN * scale_uv)
}

/// Gradient of [`angle`] with respect to `a`, `vertex` and `c`.
pub fn angle_grad(a: Point, vertex: Point, c: Point) -> [Point; 3] {
    let u = sub(a, vertex);
    let v = sub(c, vertex);
    let (lu, lv) = (norm(u), norm(v));
    let (uh, vh) = (scale(u, 1.0 / lu), scale(v, 1.0 / lv));
    let cos = dot(uh, vh).clamp(-1.0, 1.0);
    let sin = (1.0 - cos * cos).sqrt().max(f64::MIN_POSITIVE);
    let ga = scale(sub(scale(uh, cos), vh), 1.0 / (lu * sin));
    let gc = scale(sub(scale(vh, cos), uh), 1.0 / (lv * sin));
    [ga, scale(add(ga, gc), -1.0), gc]
}

/// IUPAC dihedral of `a-b-c-d` in `(−π, π]`, with a collinearity flag.
pub fn dihedral(a: Point, b: Point, c: Point, d: Point) -> (f64, bool) {
    let b1 = sub(b, a);
    let b2 = sub(c, b);
    let b3 = sub(d, c);
    let n1 = cross(b1, b2);
    let n2 = cross(b2, b3);
    let l2 = norm(b2);
    let degenerate = l2 == 0.0
        || norm(n1) < COLLINEAR_SIN * norm(b1) * l2
        || norm(n2) < COLLINEAR_SIN * norm(b3) * l2;
    if l2 == 0.0 {
        return (0.0, true);
    }
    let mut phi = dot(cross(n1, n2), scale(b2, 1.0 / l2)).atan2(dot(n1, n2));
    if phi <= -PI {
        phi = PI;
    }
    (phi, degenerate)
}

/// Gradient of [`dihedral`] with respect to its four points.
pub fn dihedral_grad(a: Point, b: Point, c: Point, d: Point) -> [Point; 4] {
    let f = sub(a, b);
    let g = sub(b, c);
    let h = sub(d, c);
    let fa = cross(f, g);
    let fb = cross(h, g);
    let lg = norm(g);
    let a2 = dot(fa, fa).max(f64::MIN_POSITIVE);
    let b2 = dot(fb, fb).max(f64::MIN_POSITIVE);
    let ga = scale(fa, -lg / a2);
    let gd = scale(fb, lg / b2);
    let fg = dot(f, g) / (a2 * lg);
    let hg = dot(h, g) / (b2 * lg);
    let gb = add(scale(ga, -1.0), sub(scale(fa, fg), scale(fb, hg)));
    let gc = add(scale(gd, -1.0), sub(scale(fb, hg), scale(fa, fg)));
    [ga, gb, gc, gd]
}

/// Places a new atom bonded to `p` at distance `length`, with angle `theta`
/// at `p` towards `q` and dihedral `phi` about `p-q` relative to `d`.
pub fn place_atom(p: Point, q: Point, d: Point, length: f64, theta: f64, phi: f64) -> Point {
    let bc = sub(p, q);
    let lbc = norm(bc);
    let bc = if lbc > 0.0 { scale(bc, 1.0 / lbc) } else { [1.0, 0.0, 0.0] };
    let mut n = cross(sub(q, d), bc);
    if norm(n) < 1e-10 {
        n = any_perpendicular(bc);
    }
    let n = scale(n, 1.0 / norm(n));
    let m = cross(n, bc);
    let (st, ct) = theta.sin_cos();
    let (sp, cp) = phi.sin_cos();
    let local = [-length * ct, length * st * cp, length * st * sp];
    add(p, add(scale(bc, local[0]), add(scale(m, local[1]), scale(n, local[2]))))
}

fn any_perpendicular(v: Point) -> Point {
    let axis = if v[0].abs() < 0.9 { [1.0, 0.0, 0.0] } else { [0.0, 1.0, 0.0] };
    cross(v, axis)
}
