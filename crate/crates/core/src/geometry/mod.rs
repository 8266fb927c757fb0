//! Geometric kernels: conformations, RMSD, rigid alignment and internal coordinates.

mod internal;
mod kabsch;

use alloc::vec::Vec;
use core::ops::Deref;


pub use internal::{
    angle, angle_grad, build_zmatrix_plan, dihedral, dihedral_grad, distance_matrix, place_atom,
    to_internal, AngleEntry, BondEntry, DihedralEntry, InternalCoords, ZEntry, ZMatrixPlan,
};
pub use kabsch::{kabsch_align, Alignment};

use crate::{Error, Result};
#[allow(unused_imports)]
use num_traits::Float;

pub type Point = [f64; 3];

#[inline]
pub fn sub(a: Point, b: Point) -> Point {
    [a[0] - b[0], a[1] - b[1], a[2] - b[2]]
}

#[inline]
pub fn add(a: Point, b: Point) -> Point {
    [a[0] + b[0], a[1] + b[1], a[2] + b[2]]
}

#[inline]
pub fn scale(a: Point, s: f64) -> Point {
    [a[0] * s, a[1] * s, a[2] * s]
}

#[inline]
pub fn dot(a: Point, b: Point) -> f64 {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
}

#[inline]
pub fn cross(a: Point, b: Point) -> Point {
    [a[1] * b[2] - a[2] * b[1], a[2] * b[0] - a[0] * b[2], a[0] * b[1] - a[1] * b[0]]
}

#[inline]
pub fn norm(a: Point) -> f64 {
    dot(a, a).sqrt()
}

#[inline]
pub fn mat_vec(m: &[[f64; 3]; 3], v: Point) -> Point {
    [dot(m[0], v), dot(m[1], v), dot(m[2], v)]
}

pub fn centroid(points: &[Point]) -> Point {
    let n = points.len().max(1) as f64;
    let s = points.iter().fold([0.0; 3], |acc, &p| add(acc, p));
    scale(s, 1.0 / n)
}

/// Cartesian coordinates of one molecule, in Å.
#[derive(Clone, Debug, PartialEq)]
pub struct Conformation {
    coords: Vec<Point>,
}

impl Conformation {
    pub fn new(coords: Vec<Point>) -> Result<Self> {
        if coords.len() < 2 {
            return Err(Error::Invalid("a conformation needs at least 2 atoms".into()));
        }
        if coords.iter().flatten().any(|x| !x.is_finite()) {
            return Err(Error::NonFinite { step: 0 });
        }
        Ok(Conformation { coords })
    }

    pub fn coords(&self) -> &[Point] {
        &self.coords
    }

    pub fn into_coords(self) -> Vec<Point> {
        self.coords
    }

    /// Rigid motion `x -> R x + t`.
    pub fn transformed(&self, rotation: &[[f64; 3]; 3], translation: Point) -> Conformation {
        Conformation {
            coords: self.coords.iter().map(|&p| add(mat_vec(rotation, p), translation)).collect(),
        }
    }

    /// Atom `i` of the result is atom `perm[i]` of `self`.
    pub fn relabeled(&self, perm: &[usize]) -> Conformation {
        Conformation { coords: perm.iter().map(|&p| self.coords[p]).collect() }
    }

    pub fn centered(&self) -> Conformation {
        let c = centroid(&self.coords);
        Conformation { coords: self.coords.iter().map(|&p| sub(p, c)).collect() }
    }
}

impl Deref for Conformation {
    type Target = [Point];

    fn deref(&self) -> &[Point] {
        &self.coords
    }
}

/// Root-mean-square deviation of two already-aligned point sets.
pub fn rmsd(a: &[Point], b: &[Point]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::SizeMismatch { expected: a.len(), found: b.len() });
    }
    if a.is_empty() {
        return Err(Error::Empty("point set"));
    }
    let ss: f64 = a.iter().zip(b).map(|(&p, &q)| {
        let d = sub(p, q);
        dot(d, d)
    }).sum();
    Ok((ss / a.len() as f64).sqrt())
}

/// RMSD after optimal rigid superposition of `mov` onto `reference`.
pub fn aligned_rmsd(reference: &[Point], mov: &[Point]) -> Result<f64> {
    let al = kabsch_align(reference, mov)?;
    rmsd(reference, &al.aligned)
}

/// Rotation matrix about a unit axis by `theta` radians (Rodrigues).
pub fn axis_angle(axis: Point, theta: f64) -> [[f64; 3]; 3] {
    let n = norm(axis);
    let [x, y, z] = scale(axis, 1.0 / n);
    let (s, c) = theta.sin_cos();
    let t = 1.0 - c;
    [
        [t * x * x + c, t * x * y - s * z, t * x * z + s * y],
        [t * x * y + s * z, t * y * y + c, t * y * z - s * x],
        [t * x * z - s * y, t * y * z + s * x, t * z * z + c],
    ]
}

/// Uniformly distributed random rotation from a random unit quaternion.
pub fn random_rotation<R: rand::Rng + ?Sized>(rng: &mut R) -> [[f64; 3]; 3] {
    use rand_distr::{Distribution, StandardNormal};
    let mut q = [0.0f64; 4];
    loop {
        for v in &mut q {
            *v = StandardNormal.sample(rng);
        }
        let n = q.iter().map(|v| v * v).sum::<f64>().sqrt();
        if n > 1e-8 {
            q.iter_mut().for_each(|v| *v /= n);
            break;
        }
    }
    let [w, x, y, z] = q;
    [
        [1.0 - 2.0 * (y * y + z * z), 2.0 * (x * y - w * z), 2.0 * (x * z + w * y)],
        [2.0 * (x * y + w * z), 1.0 - 2.0 * (x * x + z * z), 2.0 * (y * z - w * x)],
        [2.0 * (x * z - w * y), 2.0 * (y * z + w * x), 1.0 - 2.0 * (x * x + y * y)],
    ]
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rmsd_basics() {
        let a = [[0.0, 0.0, 0.0], [1.0, 2.0, 3.0]];
        assert_eq!(rmsd(&a, &a).unwrap(), 0.0);
        assert_eq!(rmsd(&[[0.0; 3]], &[[3.0, 4.0, 0.0]]).unwrap(), 5.0);
        let p = [[0.0; 3]; 3];
        let q = [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]];
        assert_eq!(rmsd(&p, &q).unwrap(), 1.0);
        assert!(matches!(rmsd(&p, &q[..2]), Err(Error::SizeMismatch { .. })));
    }

    #[test]
    fn conformation_rejects_bad_input() {
        assert!(Conformation::new(alloc::vec![[0.0; 3]]).is_err());
        assert!(Conformation::new(alloc::vec![[0.0; 3], [f64::NAN, 0.0, 0.0]]).is_err());
    }

    #[test]
    fn random_rotation_is_proper() {
        use rand::SeedableRng;
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(1);
        for _ in 0..20 {
            let r = random_rotation(&mut rng);
            let m = nalgebra::Matrix3::from_fn(|i, j| r[i][j]);
            assert!((m.determinant() - 1.0).abs() < 1e-12);
            assert!((m * m.transpose() - nalgebra::Matrix3::identity()).norm() < 1e-12);
        }
    }
}
