//! Real spherical harmonics with component normalization (`Σ_m Y_lm² = 2l + 1`).

use alloc::vec;
use alloc::vec::Vec;

use crate::geometry::{norm, scale, Point};
use crate::{Error, Result};
#[allow(unused_imports)]
use num_traits::Float;

/// Highest degree the learner couples.
pub const L_MAX: usize = 2;

const SQRT3: f64 = 1.732_050_807_568_877_2;
const SQRT5: f64 = 2.236_067_977_499_79;
const SQRT15: f64 = 3.872_983_346_207_417;

/// Harmonic blocks of degree `0..=l_max` for the direction of `r`.
///
/// Degree 1 is returned in Cartesian order `(x, y, z)`; degree 2 in the order
/// `m = -2..=2`, i.e. `xy, yz, 3z² − 1, xz, x² − y²` up to constants.
pub fn spherical_harmonics(r: Point, l_max: usize) -> Result<Vec<Vec<f64>>> {
    if l_max > L_MAX {
        return Err(Error::Invalid(alloc::format!("degree {l_max} above supported maximum {L_MAX}")));
    }
    let len = norm(r);
    if len == 0.0 || !len.is_finite() {
        return Err(Error::ZeroLength);
    }
    let [x, y, z] = scale(r, 1.0 / len);
    let mut out = vec![vec![1.0]];
    if l_max >= 1 {
        out.push(vec![SQRT3 * x, SQRT3 * y, SQRT3 * z]);
    }
    if l_max >= 2 {
        out.push(vec![
            SQRT15 * x * y,
            SQRT15 * y * z,
            0.5 * SQRT5 * (2.0 * z * z - x * x - y * y),
            SQRT15 * x * z,
            0.5 * SQRT15 * (x * x - y * y),
        ]);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{mat_vec, random_rotation};
    use core::f64::consts::PI;
    use rand::SeedableRng;

    fn factorial(n: usize) -> f64 {
        (1..=n).map(|k| k as f64).product()
    }

    /// Associated Legendre function without the Condon–Shortley phase, by the
    /// standard upward recurrence.
    fn legendre(l: usize, m: usize, x: f64) -> f64 {
        let mut pmm = 1.0;
        let somx2 = (1.0 - x * x).sqrt();
        for k in 0..m {
            pmm *= (2 * k + 1) as f64 * somx2;
        }
        if l == m {
            return pmm;
        }
        let mut pmmp1 = x * (2 * m + 1) as f64 * pmm;
        for ll in m + 2..=l {
            let next = (x * (2 * ll - 1) as f64 * pmmp1 - (ll + m - 1) as f64 * pmm) / (ll - m) as f64;
            pmm = pmmp1;
            pmmp1 = next;
        }
        pmmp1
    }

    /// Orthonormal real harmonic scaled by sqrt(4π), from polar angles.
    fn oracle(l: usize, m: i32, r: Point) -> f64 {
        let rr = norm(r);
        let theta = (r[2] / rr).acos();
        let phi = r[1].atan2(r[0]);
        let am = m.unsigned_abs() as usize;
        let k = ((2 * l + 1) as f64 / (4.0 * PI) * factorial(l - am) / factorial(l + am)).sqrt();
        let p = legendre(l, am, theta.cos());
        let y = match m {
            0 => k * p,
            m if m > 0 => 2f64.sqrt() * k * p * (am as f64 * phi).cos(),
            _ => 2f64.sqrt() * k * p * (am as f64 * phi).sin(),
        };
        y * (4.0 * PI).sqrt()
    }

    #[test]
    fn z_axis_degree_one() {
        let y = spherical_harmonics([0.0, 0.0, 1.0], 1).unwrap();
        assert_eq!(y[0], vec![1.0]);
        assert_eq!(y[1][0], 0.0);
        assert_eq!(y[1][1], 0.0);
        assert!(y[1][2] > 0.0);
    }

    #[test]
    fn degree_two_diagonal_matches_legendre_oracle() {
        let r = [1.0 / 3f64.sqrt(); 3];
        let y = spherical_harmonics(r, 2).unwrap();
        for (k, m) in (-2..=2).enumerate() {
            assert!((y[2][k] - oracle(2, m, r)).abs() < 1e-12, "m = {m}");
        }
        // Closed form at (1,1,1)/√3: √15/3 for the cross terms, 0 for the others.
        let c = 15f64.sqrt() / 3.0;
        let expect = [c, c, 0.0, c, 0.0];
        for k in 0..5 {
            assert!((y[2][k] - expect[k]).abs() < 1e-12);
        }
    }

    #[test]
    fn random_directions_match_oracle_and_norm() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(40);
        for _ in 0..50 {
            let r = mat_vec(&random_rotation(&mut rng), [0.3, -1.2, 0.8]);
            let y = spherical_harmonics(r, 2).unwrap();
            // Degree one in Cartesian order corresponds to m = 1, -1, 0.
            for (k, m) in [1, -1, 0].into_iter().enumerate() {
                assert!((y[1][k] - oracle(1, m, r)).abs() < 1e-12);
            }
            for (k, m) in (-2..=2).enumerate() {
                assert!((y[2][k] - oracle(2, m, r)).abs() < 1e-12);
            }
            for (l, block) in y.iter().enumerate() {
                let s: f64 = block.iter().map(|v| v * v).sum();
                assert!((s - (2 * l + 1) as f64).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn degree_one_rotates_with_direction() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(41);
        let rot = random_rotation(&mut rng);
        let r = [0.2, 0.5, -0.9];
        let a = spherical_harmonics(mat_vec(&rot, r), 1).unwrap();
        let b = spherical_harmonics(r, 1).unwrap();
        let rb = mat_vec(&rot, [b[1][0], b[1][1], b[1][2]]);
        for k in 0..3 {
            assert!((a[1][k] - rb[k]).abs() < 1e-12);
        }
    }

    #[test]
    fn zero_vector_is_rejected() {
        assert!(matches!(spherical_harmonics([0.0; 3], 2), Err(Error::ZeroLength)));
        assert!(spherical_harmonics([1.0, 0.0, 0.0], 3).is_err());
    }
}
