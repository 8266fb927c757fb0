//! Initial conformations: random sampling (RS) and constrained random
//! sampling (CRS) from an idealized-geometry table.

use alloc::collections::BTreeMap;
use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;
use core::f64::consts::PI;

#[allow(unused_imports)]
use num_traits::Float;
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::elements;
use crate::error::{Error, Result};
use crate::geometry::{
    add, axis_angle, build_zmatrix_plan, centroid, cross, dihedral, dot, mat_vec, norm, scale, sub,
    Conformation, Point, ZMatrixPlan,
};
use crate::molgraph::{BondOrder, MolGraph};

/// Built-in bond-length table in Å, keyed `"A-B-order"` with the lighter element first.
pub const BUILTIN_TABLE_JSON: &str = include_str!("../data/geometry_table.json");

/// Largest ring handled by the planar polygon template.
pub const MAX_TEMPLATE_RING: usize = 6;

/// Bond lengths by element pair and bond order.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct GeometryTable {
    lengths: BTreeMap<String, f64>,
}

fn order_tag(order: BondOrder) -> &'static str {
    match order {
        BondOrder::Single => "1",
        BondOrder::Double => "2",
        BondOrder::Triple => "3",
        BondOrder::Aromatic => "ar",
    }
}

impl GeometryTable {
    pub fn builtin() -> Self {
        Self::from_json(BUILTIN_TABLE_JSON).expect("built-in geometry table parses")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let lengths: BTreeMap<String, f64> =
            serde_json::from_str(text).map_err(|e| Error::Invalid(format!("geometry table: {e}")))?;
        Self::from_map(lengths)
    }

    pub fn from_map(lengths: BTreeMap<String, f64>) -> Result<Self> {
        if let Some((k, v)) = lengths.iter().find(|(_, v)| !(v.is_finite() && **v > 0.0)) {
            return Err(Error::Invalid(format!("geometry table entry {k} has invalid length {v}")));
        }
        Ok(GeometryTable { lengths })
    }

    pub fn entries(&self) -> &BTreeMap<String, f64> {
        &self.lengths
    }

    /// Canonical key: lighter element first.
    pub fn key(a: u8, b: u8, order: BondOrder) -> String {
        let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
        format!("{}-{}-{}", symbol(lo), symbol(hi), order_tag(order))
    }

    /// Looks up the canonical key, then the reversed pair.
    pub fn bond_length(&self, a: u8, b: u8, order: BondOrder) -> Result<f64> {
        let key = Self::key(a, b, order);
        let reversed = format!("{}-{}-{}", symbol(a.max(b)), symbol(a.min(b)), order_tag(order));
        self.lengths
            .get(&key)
            .or_else(|| self.lengths.get(&reversed))
            .copied()
            .ok_or(Error::MissingTableEntry(key))
    }
}

fn symbol(z: u8) -> String {
    elements::symbol(z).map(String::from).unwrap_or_else(|| format!("Z{z}"))
}

/// Ideal bond angle at an atom with the given steric coordination number.
pub fn ideal_angle(coordination: u8) -> f64 {
    match coordination {
        0..=2 => PI,
        3 => 2.0 * PI / 3.0,
        _ => (-1.0f64 / 3.0).acos(),
    }
}

/// Half of the angle between two exocyclic substituents on a ring atom.
fn exo_half_angle() -> f64 {
    0.5 * ideal_angle(4)
}

/// One randomized rotatable-bond torsion, measured as the dihedral `atoms[0..4]`.
#[derive(Clone, Debug, PartialEq)]
pub struct Torsion {
    pub bond: usize,
    pub atoms: [usize; 4],
    pub value: f64,
}

/// Intrinsic coordinates used by CRS plus the drawn torsions.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct CrsState {
    /// Target length per graph bond (ring bonds carry the ring template length).
    pub bond_lengths: Vec<f64>,
    /// Rings placed as planar regular polygons, as atom cycles.
    pub ring_templates: Vec<Vec<usize>>,
    pub torsions: Vec<Torsion>,
}

#[derive(Clone, Debug)]
pub struct CrsSample {
    pub conformation: Conformation,
    pub state: CrsState,
    /// Set when the graph was outside the template set and RS was used instead.
    pub fallback: bool,
}

/// I.i.d. standard-normal coordinates.
pub fn random_sample<R: Rng + ?Sized>(n_atoms: usize, rng: &mut R) -> Result<Conformation> {
    let coords = (0..n_atoms)
        .map(|_| {
            let mut p = [0.0; 3];
            for v in &mut p {
                *v = StandardNormal.sample(rng);
            }
            p
        })
        .collect();
    Conformation::new(coords)
}

/// Initialization scheme for boosting and evaluation.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum InitKind {
    Rs,
    #[default]
    Crs,
}

impl core::str::FromStr for InitKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "rs" => Ok(InitKind::Rs),
            "crs" => Ok(InitKind::Crs),
            other => Err(Error::Invalid(format!("unknown init scheme {other:?}, expected rs or crs"))),
        }
    }
}

/// Draws a starting conformation; the flag reports a CRS fallback to RS.
pub fn initial_conformation<R: Rng + ?Sized>(
    g: &MolGraph,
    kind: InitKind,
    table: &GeometryTable,
    rng: &mut R,
) -> Result<(Conformation, bool)> {
    match kind {
        InitKind::Rs => Ok((random_sample(g.n_atoms(), rng)?, false)),
        InitKind::Crs => {
            let s = constrained_random_sample(g, table, rng)?;
            Ok((s.conformation, s.fallback))
        }
    }
}

fn wrap_angle(x: f64) -> f64 {
    let mut y = x % (2.0 * PI);
    if y <= -PI {
        y += 2.0 * PI;
    } else if y > PI {
        y -= 2.0 * PI;
    }
    y
}

fn unit(v: Point) -> Point {
    scale(v, 1.0 / norm(v))
}

fn perpendicular(v: Point) -> Point {
    let trial = if v[0].abs() < 0.9 { [1.0, 0.0, 0.0] } else { [0.0, 1.0, 0.0] };
    unit(cross(v, trial))
}

/// Torsion drawn uniformly from (−π, π].
fn draw_torsion<R: Rng + ?Sized>(rng: &mut R) -> f64 {
    let t = rng.random_range(-PI..PI);
    if t <= -PI {
        PI
    } else {
        t
    }
}

struct Builder<'a> {
    g: &'a MolGraph,
    plan: ZMatrixPlan,
    pos: Vec<Option<Point>>,
    ring_of: Vec<Option<usize>>,
    rings: Vec<Vec<usize>>,
    ring_len: Vec<f64>,
    ring_placed: Vec<bool>,
    bond_len: Vec<f64>,
}

impl Builder<'_> {
    fn at(&self, i: usize) -> Point {
        self.pos[i].expect("atom placed")
    }

    fn length_to(&self, p: usize, c: usize) -> f64 {
        let (_, b) = *self.g.neighbors(p).iter().find(|&&(x, _)| x == c).expect("bonded");
        self.bond_len[b]
    }

    /// Lays out ring `r` as a regular polygon through the already placed `entry`.
    fn place_ring(&mut self, r: usize, entry: usize, parent: Option<usize>) -> Vec<usize> {
        let cycle = self.rings[r].clone();
        let k = cycle.len();
        let e = self.at(entry);
        let (w, n) = match parent {
            None => ([1.0, 0.0, 0.0], [0.0, 0.0, 1.0]),
            Some(q) => {
                let eq = unit(sub(self.at(q), e));
                let m = perpendicular(eq);
                if self.g.degree(entry) - 2 >= 2 {
                    let a = exo_half_angle();
                    let w = add(scale(eq, -a.cos()), scale(m, a.sin()));
                    let n = add(scale(eq, a.sin()), scale(m, a.cos()));
                    (w, n)
                } else {
                    (scale(eq, -1.0), m)
                }
            }
        };
        let v = cross(n, w);
        let radius = self.ring_len[r] / (2.0 * (PI / k as f64).sin());
        let center = add(e, scale(w, radius));
        let start = cycle.iter().position(|&a| a == entry).expect("entry on ring");
        let mut placed = Vec::with_capacity(k - 1);
        for i in 1..k {
            let atom = cycle[(start + i) % k];
            let phase = 2.0 * PI * i as f64 / k as f64;
            let p = add(center, scale(add(scale(w, -phase.cos()), scale(v, phase.sin())), radius));
            self.pos[atom] = Some(p);
            placed.push(atom);
        }
        self.ring_placed[r] = true;
        placed
    }

    /// Exocyclic bond directions at ring atom `a`, from the placed ring neighbours.
    fn exo_slots(&self, a: usize, r: usize) -> Vec<Point> {
        let pa = self.at(a);
        let ring = &self.rings[r];
        let k = ring.len();
        let i = ring.iter().position(|&x| x == a).expect("atom on ring");
        let u1 = unit(sub(self.at(ring[(i + k - 1) % k]), pa));
        let u2 = unit(sub(self.at(ring[(i + 1) % k]), pa));
        let w = unit(add(u1, u2));
        let n = unit(cross(u1, u2));
        match self.g.degree(a) - 2 {
            0 => Vec::new(),
            1 => vec![scale(w, -1.0)],
            _ => {
                let h = exo_half_angle();
                vec![
                    add(scale(w, -h.cos()), scale(n, h.sin())),
                    add(scale(w, -h.cos()), scale(n, -h.sin())),
                ]
            }
        }
    }

    /// Bond directions around a non-ring atom with `slots` neighbours, the
    /// first of which points along `first`.
    fn tree_slots(&self, a: usize, first: Point) -> Vec<Point> {
        let coordination = (self.g.coordination(a) as usize).max(self.g.degree(a)).max(2);
        let theta = ideal_angle(coordination as u8);
        let x = perpendicular(first);
        let y = cross(first, x);
        let spread = (coordination - 1) as f64;
        (0..coordination - 1)
            .map(|j| {
                let phi = 2.0 * PI * j as f64 / spread;
                add(scale(first, theta.cos()), scale(add(scale(x, phi.cos()), scale(y, phi.sin())), theta.sin()))
            })
            .collect()
    }

    /// Places every unplaced neighbour of `p`, returning the atoms placed.
    fn place_children(&mut self, p: usize, parent: Option<usize>) -> Vec<usize> {
        let mut placed = Vec::new();
        if let Some(r) = self.ring_of[p] {
            if !self.ring_placed[r] {
                placed.extend(self.place_ring(r, p, parent));
            }
        }
        let pending: Vec<usize> = self
            .g
            .neighbors(p)
            .iter()
            .map(|&(x, _)| x)
            .filter(|&x| self.pos[x].is_none())
            .collect();
        if pending.is_empty() {
            return placed;
        }
        let pp = self.at(p);
        let mut slots = match self.ring_of[p] {
            Some(r) => self.exo_slots(p, r),
            None => match parent {
                Some(q) => self.tree_slots(p, unit(sub(self.at(q), pp))),
                None => {
                    let first = [1.0, 0.0, 0.0];
                    let mut s = vec![first];
                    s.extend(self.tree_slots(p, first));
                    s
                }
            },
        };
        // Drop slots already taken by placed exocyclic neighbours.
        if self.ring_of[p].is_some() {
            for &(x, _) in self.g.neighbors(p) {
                let Some(px) = self.pos[x] else { continue };
                if self.ring_of[x] == self.ring_of[p] {
                    continue;
                }
                let dir = unit(sub(px, pp));
                if let Some((best, _)) = slots
                    .iter()
                    .enumerate()
                    .map(|(i, s)| (i, dot(*s, dir)))
                    .max_by(|a, b| a.1.total_cmp(&b.1))
                {
                    slots.remove(best);
                }
            }
        }
        for (c, dir) in pending.into_iter().zip(slots) {
            let len = self.length_to(p, c);
            self.pos[c] = Some(add(pp, scale(dir, len)));
            placed.push(c);
        }
        placed
    }

    /// Rotates `atoms` about the axis `q -> p` so that the dihedral
    /// `(c, p, q, d)` becomes `target`.
    fn set_dihedral(&mut self, atoms: &[usize], [c, p, q, d]: [usize; 4], target: f64) {
        let (pc, pp, pq, pd) = (self.at(c), self.at(p), self.at(q), self.at(d));
        let (current, degenerate) = dihedral(pc, pp, pq, pd);
        let axis = sub(pp, pq);
        let delta = if degenerate { target } else { wrap_angle(target - current) };
        let rotate = |this: &mut Self, angle: f64| {
            let rot = axis_angle(axis, angle);
            for &a in atoms {
                let x = this.at(a);
                this.pos[a] = Some(add(pp, mat_vec(&rot, sub(x, pp))));
            }
        };
        rotate(self, delta);
        if !degenerate {
            let (now, _) = dihedral(self.at(c), pp, pq, pd);
            if wrap_angle(now - target).abs() > 1e-6 {
                rotate(self, -2.0 * delta);
            }
        }
    }
}

/// Constrained random sample: idealized bond lengths, angles and ring
/// templates with uniformly random torsions about rotatable bonds.
pub fn constrained_random_sample<R: Rng + ?Sized>(
    g: &MolGraph,
    table: &GeometryTable,
    rng: &mut R,
) -> Result<CrsSample> {
    let n = g.n_atoms();
    let mut bond_len = Vec::with_capacity(g.bonds().len());
    for bond in g.bonds() {
        bond_len.push(table.bond_length(g.element(bond.i), g.element(bond.j), bond.order)?);
    }

    let mut ring_of = vec![None; n];
    let mut rings = Vec::new();
    let mut ring_len = Vec::new();
    let mut templated = true;
    for system in g.ring_systems() {
        let cycle = match system.cycle {
            Some(c) if c.len() == system.atoms.len() && (3..=MAX_TEMPLATE_RING).contains(&c.len()) => c,
            _ => {
                templated = false;
                break;
            }
        };
        let mean = system.bonds.iter().map(|&b| bond_len[b]).sum::<f64>() / system.bonds.len() as f64;
        for &b in &system.bonds {
            bond_len[b] = mean;
        }
        for &a in &cycle {
            ring_of[a] = Some(rings.len());
        }
        rings.push(cycle);
        ring_len.push(mean);
    }
    let too_crowded = (0..n).any(|a| g.degree(a) > 4);
    if !templated || too_crowded {
        let conformation = random_sample(n, rng)?.centered();
        return Ok(CrsSample { conformation, state: CrsState::default(), fallback: true });
    }

    let rotatable = g.rotatable_bonds();
    let plan = build_zmatrix_plan(g);
    let n_rings = rings.len();
    let mut b = Builder {
        g,
        plan,
        pos: vec![None; n],
        ring_of,
        rings,
        ring_len,
        ring_placed: vec![false; n_rings],
        bond_len,
    };

    let root = b.plan.entries[0].atom;
    b.pos[root] = Some([0.0; 3]);
    let mut torsions = Vec::new();
    for k in 0..n {
        let entry = b.plan.entries[k];
        let p = entry.atom;
        let parent = entry.bond_ref;
        let placed = b.place_children(p, parent);
        let Some(q) = parent else { continue };
        let entering_ring = b.ring_of[p].is_some() && b.ring_of[p] != b.ring_of[q];
        if b.ring_of[p].is_some() && !entering_ring {
            continue;
        }
        let Some(first) = b.plan.entries[k + 1..].iter().find(|e| e.bond_ref == Some(p)) else {
            continue;
        };
        let Some(d) = first.dihedral_ref else { continue };
        let (_, bond) = *g.neighbors(p).iter().find(|&&(x, _)| x == q).expect("parent bonded");
        let atoms = [first.atom, p, q, d];
        let target = if rotatable.contains(&bond) {
            let t = draw_torsion(rng);
            torsions.push(Torsion { bond, atoms, value: t });
            t
        } else {
            PI
        };
        b.set_dihedral(&placed, atoms, target);
    }

    let coords: Vec<Point> = b.pos.iter().map(|p| p.expect("all atoms placed")).collect();
    let c = centroid(&coords);
    let coords = coords.into_iter().map(|p| sub(p, c)).collect();
    let state = CrsState { bond_lengths: b.bond_len, ring_templates: b.rings, torsions };
    Ok(CrsSample { conformation: Conformation::new(coords)?, state, fallback: false })
}
