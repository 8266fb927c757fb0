//! Training objective: symmetry-aware RMSD plus internal-coordinate terms.

use alloc::vec;
use alloc::vec::Vec;
use core::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::geometry::{
    add, angle_grad, dihedral_grad, dot, kabsch_align, mat_vec, rmsd, scale, sub, to_internal, InternalCoords,
    Point, ZMatrixPlan,
};
use crate::hungarian;
use crate::molgraph::MolGraph;
use crate::symmetry::{SwapGroup, SymmetryScheme};
use crate::{Error, Result};
#[allow(unused_imports)]
use num_traits::Float;

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub pirmsd: f64,
    pub bond_length: f64,
    pub bond_angle: f64,
    pub dihedral: f64,
    pub edist: f64,
    pub total: f64,
}

impl LossBreakdown {
    /// Every term NaN, reported for skipped steps.
    pub fn nan() -> Self {
        let nan = f64::NAN;
        LossBreakdown { pirmsd: nan, bond_length: nan, bond_angle: nan, dihedral: nan, edist: nan, total: nan }
    }
}

/// Per-term multipliers for the combined loss; all 1.0 by default.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LossWeights {
    pub pirmsd: f64,
    pub bond_length: f64,
    pub bond_angle: f64,
    pub dihedral: f64,
    pub edist: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        LossWeights { pirmsd: 1.0, bond_length: 1.0, bond_angle: 1.0, dihedral: 1.0, edist: 1.0 }
    }
}

/// Internal-coordinate loss components.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct IcTerms {
    pub bond_length: f64,
    pub bond_angle: f64,
    pub dihedral: f64,
    pub edist: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct PiRmsd {
    pub value: f64,
    /// `relabeled[i] = gen[permutation[i]]`.
    pub permutation: Vec<usize>,
    /// Final superposition of the relabelled `gen` onto the reference.
    pub rotation: [[f64; 3]; 3],
    pub aligned: Vec<Point>,
}

fn check_pair(reference: &[Point], gen: &[Point]) -> Result<()> {
    if reference.len() != gen.len() {
        return Err(Error::SizeMismatch { expected: reference.len(), found: gen.len() });
    }
    Ok(())
}

/// Symmetry-corrected RMSD: greedy Hungarian matching of swap-group tuples by
/// centroid distance, largest groups first, followed by a fresh superposition.
pub fn pirmsd(reference: &[Point], gen: &[Point], schemes: &[SymmetryScheme]) -> Result<PiRmsd> {
    check_pair(reference, gen)?;
    let n = reference.len();
    for s in schemes {
        s.check_size(n)?;
    }
    let first = kabsch_align(reference, gen)?;
    let naive = rmsd(reference, &first.aligned)?;
    let identity: Vec<usize> = (0..n).collect();

    let mut groups: Vec<&SwapGroup> = schemes.iter().flat_map(|s| &s.swap_groups).collect();
    if groups.is_empty() {
        return Ok(PiRmsd { value: naive, permutation: identity, rotation: first.rotation, aligned: first.aligned });
    }
    groups.sort_by_key(|g| core::cmp::Reverse(g.atom_count()));
    let frame = matching_frame(reference, gen, &groups)?.unwrap_or_else(|| first.aligned.clone());

    let mut perm = identity.clone();
    for group in groups {
        let tuple_centroid = |pts: &[Point], t: &[usize], map: &[usize]| {
            let s = t.iter().fold([0.0; 3], |acc, &i| add(acc, pts[map[i]]));
            scale(s, 1.0 / t.len() as f64)
        };
        let m = group.tuples.len();
        let ref_c: Vec<Point> = group.tuples.iter().map(|t| tuple_centroid(reference, t, &identity)).collect();
        let gen_c: Vec<Point> = group.tuples.iter().map(|t| tuple_centroid(&frame, t, &perm)).collect();
        let mut cost = vec![0.0; m * m];
        for a in 0..m {
            for b in 0..m {
                let d = sub(ref_c[a], gen_c[b]);
                cost[a * m + b] = dot(d, d).sqrt();
            }
        }
        let assign = hungarian::solve(&cost, m);
        let sigma = group.relabeling(n, &assign);
        perm = sigma.iter().map(|&s| perm[s]).collect();
    }

    let relabeled: Vec<Point> = perm.iter().map(|&p| gen[p]).collect();
    let second = kabsch_align(reference, &relabeled)?;
    let value = rmsd(reference, &second.aligned)?;
    if value <= naive {
        Ok(PiRmsd { value, permutation: perm, rotation: second.rotation, aligned: second.aligned })
    } else {
        Ok(PiRmsd { value: naive, permutation: identity, rotation: first.rotation, aligned: first.aligned })
    }
}

/// `gen` superposed on the atoms that no swap group can move, when those atoms
/// span a plane. Swapped atoms then cannot drag the frame towards a wrong labelling.
fn matching_frame(reference: &[Point], gen: &[Point], groups: &[&SwapGroup]) -> Result<Option<Vec<Point>>> {
    let mut movable = vec![false; reference.len()];
    for g in groups {
        g.tuples.iter().flatten().for_each(|&a| movable[a] = true);
    }
    let fixed: Vec<usize> = (0..reference.len()).filter(|&i| !movable[i]).collect();
    if fixed.len() < 3 {
        return Ok(None);
    }
    let r: Vec<Point> = fixed.iter().map(|&i| reference[i]).collect();
    let spans_plane = r.iter().any(|&p| {
        r.iter().any(|&q| {
            let (u, v) = (sub(p, r[0]), sub(q, r[0]));
            let c = crate::geometry::cross(u, v);
            dot(c, c).sqrt() > 1e-3 * (dot(u, u) * dot(v, v)).sqrt().max(1e-12)
        })
    });
    if !spans_plane {
        return Ok(None);
    }
    let m: Vec<Point> = fixed.iter().map(|&i| gen[i]).collect();
    let al = kabsch_align(&r, &m)?;
    Ok(Some(gen.iter().map(|&p| add(mat_vec(&al.rotation, p), al.translation)).collect()))
}

/// Gradient of the superposed RMSD with respect to the unaligned relabelled
/// coordinates, with the rotation taken as fixed.
fn rmsd_grad(reference: &[Point], aligned: &[Point], rotation: &[[f64; 3]; 3], value: f64) -> Vec<Point> {
    let n = reference.len() as f64;
    if value <= 0.0 {
        return vec![[0.0; 3]; reference.len()];
    }
    let rt = transpose(rotation);
    aligned
        .iter()
        .zip(reference)
        .map(|(&a, &r)| scale(mat_vec(&rt, sub(a, r)), 1.0 / (n * value)))
        .collect()
}

fn transpose(m: &[[f64; 3]; 3]) -> [[f64; 3]; 3] {
    core::array::from_fn(|i| core::array::from_fn(|j| m[j][i]))
}

/// Absolute dihedral error folded onto `[0, π]`.
pub fn wrapped_dihedral_error(gen: f64, reference: f64) -> f64 {
    let ae = (gen - reference).abs();
    if ae > PI {
        2.0 * PI - ae
    } else {
        ae
    }
}

/// Loss terms; when `grad` is given, accumulates the weighted gradient into it.
fn ic_terms(
    refc: &InternalCoords,
    genc: &InternalCoords,
    w: &LossWeights,
    grad: Option<(&[Point], &mut [Point])>,
) -> IcTerms {
    let mut t = IcTerms::default();
    let mut grad = grad;
    for (r, g) in refc.bond_lengths.iter().zip(&genc.bond_lengths) {
        let d = g.value - r.value;
        t.bond_length += d * d;
        if let Some((pts, out)) = grad.as_mut() {
            let [a, b] = g.atoms;
            if g.value > 0.0 {
                let u = scale(sub(pts[a], pts[b]), w.bond_length * 2.0 * d / g.value);
                out[a] = add(out[a], u);
                out[b] = sub(out[b], u);
            }
        }
    }
    for (r, g) in refc.bond_angles.iter().zip(&genc.bond_angles) {
        if r.degenerate || g.degenerate {
            continue;
        }
        let d = g.value - r.value;
        t.bond_angle += d * d;
        if let Some((pts, out)) = grad.as_mut() {
            let [a, v, c] = g.atoms;
            let gr = angle_grad(pts[a], pts[v], pts[c]);
            for (k, &i) in [a, v, c].iter().enumerate() {
                out[i] = add(out[i], scale(gr[k], w.bond_angle * 2.0 * d));
            }
        }
    }
    for (r, g) in refc.dihedrals.iter().zip(&genc.dihedrals) {
        if r.degenerate || g.degenerate {
            continue;
        }
        let e = wrapped_dihedral_error(g.value, r.value);
        t.dihedral += e * e;
        if let Some((pts, out)) = grad.as_mut() {
            let d = g.value - r.value;
            let de = if d.abs() > PI { -d.signum() } else { d.signum() };
            let [a, b, c, dd] = g.atoms;
            let gr = dihedral_grad(pts[a], pts[b], pts[c], pts[dd]);
            for (k, &i) in [a, b, c, dd].iter().enumerate() {
                out[i] = add(out[i], scale(gr[k], w.dihedral * 2.0 * e * de));
            }
        }
    }
    let n = refc.n;
    let nn = (n * n) as f64;
    for i in 0..n {
        for j in 0..n {
            let d = genc.dist(i, j) - refc.dist(i, j);
            t.edist += d * d;
            if i < j {
                if let Some((pts, out)) = grad.as_mut() {
                    let dij = genc.dist(i, j);
                    if dij > 0.0 {
                        let u = scale(sub(pts[i], pts[j]), w.edist * 4.0 * d / (nn * dij));
                        out[i] = add(out[i], u);
                        out[j] = sub(out[j], u);
                    }
                }
            }
        }
    }
    t.edist /= nn;
    t
}

/// Internal-coordinate loss of `gen` against `reference` over the entries of `plan`.
pub fn ic_loss(g: &MolGraph, reference: &[Point], gen: &[Point], plan: &ZMatrixPlan) -> Result<IcTerms> {
    check_pair(reference, gen)?;
    let refc = to_internal(g, reference, plan)?;
    let genc = to_internal(g, gen, plan)?;
    Ok(ic_terms(&refc, &genc, &LossWeights::default(), None))
}

/// [`ic_loss`] together with the gradient of the `weights`-weighted sum of its
/// terms with respect to `gen`.
pub fn ic_loss_grad(
    g: &MolGraph,
    reference: &[Point],
    gen: &[Point],
    plan: &ZMatrixPlan,
    weights: &LossWeights,
) -> Result<(IcTerms, Vec<Point>)> {
    check_pair(reference, gen)?;
    let refc = to_internal(g, reference, plan)?;
    let genc = to_internal(g, gen, plan)?;
    let mut grad = vec![[0.0; 3]; gen.len()];
    let t = ic_terms(&refc, &genc, weights, Some((gen, &mut grad)));
    Ok((t, grad))
}

fn combine(pirmsd: f64, ic: IcTerms, w: &LossWeights) -> LossBreakdown {
    LossBreakdown {
        pirmsd,
        bond_length: ic.bond_length,
        bond_angle: ic.bond_angle,
        dihedral: ic.dihedral,
        edist: ic.edist,
        total: w.pirmsd * pirmsd
            + w.bond_length * ic.bond_length
            + w.bond_angle * ic.bond_angle
            + w.dihedral * ic.dihedral
            + w.edist * ic.edist,
    }
}

/// Combined objective. The internal-coordinate terms are evaluated on `gen`
/// after the symmetry relabelling chosen by [`pirmsd`].
pub fn total_loss(
    g: &MolGraph,
    reference: &[Point],
    gen: &[Point],
    schemes: &[SymmetryScheme],
    plan: &ZMatrixPlan,
    weights: &LossWeights,
) -> Result<LossBreakdown> {
    let pr = pirmsd(reference, gen, schemes)?;
    let relabeled: Vec<Point> = pr.permutation.iter().map(|&p| gen[p]).collect();
    let ic = ic_loss(g, reference, &relabeled, plan)?;
    Ok(combine(pr.value, ic, weights))
}

/// [`total_loss`] and its gradient with respect to `gen`, holding the
/// superposition rotation and symmetry relabelling fixed.
pub fn total_loss_grad(
    g: &MolGraph,
    reference: &[Point],
    gen: &[Point],
    schemes: &[SymmetryScheme],
    plan: &ZMatrixPlan,
    weights: &LossWeights,
) -> Result<(LossBreakdown, Vec<Point>)> {
    let pr = pirmsd(reference, gen, schemes)?;
    let relabeled: Vec<Point> = pr.permutation.iter().map(|&p| gen[p]).collect();
    let (ic, ic_grad) = ic_loss_grad(g, reference, &relabeled, plan, weights)?;
    let rg = rmsd_grad(reference, &pr.aligned, &pr.rotation, pr.value);
    let mut grad = vec![[0.0; 3]; gen.len()];
    for (i, &p) in pr.permutation.iter().enumerate() {
        grad[p] = add(scale(rg[i], weights.pirmsd), ic_grad[i]);
    }
    Ok((combine(pr.value, ic, weights), grad))
}
