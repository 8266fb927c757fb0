use alloc::format;
use alloc::vec::Vec;

use nalgebra::Matrix3;

use super::{add, centroid, dot, mat_vec, sub, Point};
use crate::{Error, Result};
#[allow(unused_imports)]
use num_traits::Float;

/// Spread below which a point set is treated as collapsed to its centroid.
const DEGENERATE_SPREAD: f64 = 1e-20;

/// Result of superposing a mobile point set onto a reference.
#[derive(Clone, Debug, PartialEq)]
pub struct Alignment {
    /// `rotation * mov + translation`.
    pub aligned: Vec<Point>,
    /// Proper rotation, row-major.
    pub rotation: [[f64; 3]; 3],
    pub translation: Point,
    /// Set when either input has zero spread and the identity rotation was used.
    pub identity_fallback: bool,
}

/// Kabsch superposition of `mov` onto `reference`, restricted to proper rotations.
pub fn kabsch_align(reference: &[Point], mov: &[Point]) -> Result<Alignment> {
    if reference.len() != mov.len() {
        return Err(Error::SizeMismatch { expected: reference.len(), found: mov.len() });
    }
    if reference.len() < 2 {
        return Err(Error::Alignment(format!("need at least 2 points, got {}", reference.len())));
    }
    if reference.iter().chain(mov).flatten().any(|x| !x.is_finite()) {
        return Err(Error::Alignment("non-finite coordinates".into()));
    }
    if reference == mov {
        let identity = [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]];
        return Ok(Alignment { aligned: mov.to_vec(), rotation: identity, translation: [0.0; 3], identity_fallback: false });
    }
    let c_ref = centroid(reference);
    let c_mov = centroid(mov);

    let mut h = Matrix3::<f64>::zeros();
    let (mut spread_ref, mut spread_mov) = (0.0, 0.0);
    for (&r, &m) in reference.iter().zip(mov) {
        let p = sub(m, c_mov);
        let q = sub(r, c_ref);
        spread_ref += dot(q, q);
        spread_mov += dot(p, p);
        for i in 0..3 {
            for j in 0..3 {
                h[(i, j)] += p[i] * q[j];
            }
        }
    }

    let identity_fallback = spread_ref < DEGENERATE_SPREAD || spread_mov < DEGENERATE_SPREAD;
    let rot = if identity_fallback {
        Matrix3::identity()
    } else {
        let svd = h.svd(true, true);
        let (u, v_t) = match (svd.u, svd.v_t) {
            (Some(u), Some(v_t)) => (u, v_t),
            _ => return Err(Error::Alignment("SVD did not converge".into())),
        };
        let v = v_t.transpose();
        let mut r = v * u.transpose();
        if r.determinant() < 0.0 {
            // Flip the direction belonging to the smallest singular value.
            let (smallest, _) = svd
                .singular_values
                .iter()
                .enumerate()
                .fold((0, f64::INFINITY), |acc, (i, &s)| if s < acc.1 { (i, s) } else { acc });
            let mut v_fixed = v;
            for row in 0..3 {
                v_fixed[(row, smallest)] = -v_fixed[(row, smallest)];
            }
            r = v_fixed * u.transpose();
        }
        r
    };

    let rotation = [
        [rot[(0, 0)], rot[(0, 1)], rot[(0, 2)]],
        [rot[(1, 0)], rot[(1, 1)], rot[(1, 2)]],
        [rot[(2, 0)], rot[(2, 1)], rot[(2, 2)]],
    ];
    let translation = sub(c_ref, mat_vec(&rotation, c_mov));
    let aligned = mov.iter().map(|&p| add(mat_vec(&rotation, p), translation)).collect();
    Ok(Alignment { aligned, rotation, translation, identity_fallback })
}
