//! Molecular graphs: atoms, typed bonds, higher-order adjacency and ring perception.

use alloc::collections::VecDeque;
use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::elements::MAX_ELEMENT;
use crate::{Error, Result};
#[allow(unused_imports)]
use num_traits::Float;

/// Default neighbourhood order used for attention edges.
pub const DEFAULT_ADJACENCY_ORDER: u8 = 3;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum BondOrder {
    Single,
    Double,
    Triple,
    Aromatic,
}

impl BondOrder {
    /// Integer tag used by the JSON graph format: 1, 2, 3, and 4 for aromatic.
    pub fn from_code(code: u8) -> Option<Self> {
        match code {
            1 => Some(BondOrder::Single),
            2 => Some(BondOrder::Double),
            3 => Some(BondOrder::Triple),
            4 => Some(BondOrder::Aromatic),
            _ => None,
        }
    }

    pub fn code(self) -> u8 {
        match self {
            BondOrder::Single => 1,
            BondOrder::Double => 2,
            BondOrder::Triple => 3,
            BondOrder::Aromatic => 4,
        }
    }

    /// Number of pi bonds this bond contributes to each endpoint's hybridization.
    fn pi_count(self) -> u8 {
        match self {
            BondOrder::Single => 0,
            BondOrder::Double | BondOrder::Aromatic => 1,
            BondOrder::Triple => 2,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct AtomSpec {
    /// Atomic number.
    pub element: u8,
    /// Steric coordination number used by the geometry builder (2 linear,
    /// 3 trigonal, 4 tetrahedral). Zero means "derive from the bonds".
    pub idealized_valence: u8,
}

impl AtomSpec {
    pub fn new(element: u8) -> Self {
        AtomSpec { element, idealized_valence: 0 }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Bond {
    pub i: usize,
    pub j: usize,
    pub order: BondOrder,
}

/// A connected molecular graph. Immutable after construction.
#[derive(Clone, Debug, PartialEq)]
pub struct MolGraph {
    atoms: Vec<AtomSpec>,
    bonds: Vec<Bond>,
    /// Per atom: (neighbour, bond index), sorted by neighbour.
    neighbors: Vec<Vec<(usize, usize)>>,
    adjacency_order: u8,
}

impl MolGraph {
    pub fn new(atoms: Vec<AtomSpec>, bonds: Vec<Bond>) -> Result<Self> {
        Self::with_order(atoms, bonds, DEFAULT_ADJACENCY_ORDER)
    }

    pub fn with_order(mut atoms: Vec<AtomSpec>, bonds: Vec<Bond>, adjacency_order: u8) -> Result<Self> {
        let n = atoms.len();
        if n < 2 {
            return Err(Error::Structure(format!("need at least 2 atoms, got {n}")));
        }
        if adjacency_order == 0 {
            return Err(Error::Structure("adjacency order must be at least 1".into()));
        }
        for (idx, a) in atoms.iter().enumerate() {
            if a.element == 0 || a.element > MAX_ELEMENT {
                return Err(Error::Structure(format!(
                    "atom {idx}: unsupported element {}",
                    a.element
                )));
            }
        }
        let mut neighbors = vec![Vec::new(); n];
        for (b, bond) in bonds.iter().enumerate() {
            if bond.i >= n || bond.j >= n {
                return Err(Error::Structure(format!(
                    "bond {b} ({}, {}) references an atom outside 0..{n}",
                    bond.i, bond.j
                )));
            }
            if bond.i == bond.j {
                return Err(Error::Structure(format!("bond {b} is a self-loop on atom {}", bond.i)));
            }
            if neighbors[bond.i].iter().any(|&(k, _)| k == bond.j) {
                return Err(Error::Structure(format!(
                    "duplicate bond between atoms {} and {}",
                    bond.i, bond.j
                )));
            }
            neighbors[bond.i].push((bond.j, b));
            neighbors[bond.j].push((bond.i, b));
        }
        for list in &mut neighbors {
            list.sort_unstable();
        }

        let mut g = MolGraph { atoms: Vec::new(), bonds, neighbors, adjacency_order };
        if let Some(unreached) = g.bfs_distances(0).iter().position(|d| d.is_none()) {
            return Err(Error::Structure(format!(
                "graph is disconnected: atom {unreached} is unreachable from atom 0"
            )));
        }
        for (i, a) in atoms.iter_mut().enumerate() {
            if a.idealized_valence == 0 {
                a.idealized_valence = g.derived_coordination(i);
            }
        }
        g.atoms = atoms;
        Ok(g)
    }

    fn derived_coordination(&self, i: usize) -> u8 {
        let mut pi = 0u8;
        let mut aromatic = false;
        for &(_, b) in &self.neighbors[i] {
            let order = self.bonds[b].order;
            if order == BondOrder::Aromatic {
                aromatic = true;
            } else {
                pi += order.pi_count();
            }
        }
        if aromatic {
            pi = pi.max(1);
        }
        let coord = 4u8.saturating_sub(pi).max(2);
        coord.max(self.neighbors[i].len().min(u8::MAX as usize) as u8)
    }

    pub fn n_atoms(&self) -> usize {
        self.atoms.len()
    }

    pub fn atoms(&self) -> &[AtomSpec] {
        &self.atoms
    }

    pub fn bonds(&self) -> &[Bond] {
        &self.bonds
    }

    pub fn element(&self, i: usize) -> u8 {
        self.atoms[i].element
    }

    pub fn coordination(&self, i: usize) -> u8 {
        self.atoms[i].idealized_valence
    }

    pub fn adjacency_order(&self) -> u8 {
        self.adjacency_order
    }

    /// Neighbours of `i` with the index of the connecting bond, sorted by neighbour.
    pub fn neighbors(&self, i: usize) -> &[(usize, usize)] {
        &self.neighbors[i]
    }

    pub fn degree(&self, i: usize) -> usize {
        self.neighbors[i].len()
    }

    pub fn bond_between(&self, i: usize, j: usize) -> Option<&Bond> {
        self.neighbors[i]
            .iter()
            .find(|&&(k, _)| k == j)
            .map(|&(_, b)| &self.bonds[b])
    }

    /// Sorted bond orders of the bonds incident to `i`.
    pub fn bond_order_multiset(&self, i: usize) -> Vec<BondOrder> {
        let mut v: Vec<BondOrder> = self.neighbors[i].iter().map(|&(_, b)| self.bonds[b].order).collect();
        v.sort_unstable();
        v
    }

    /// Shortest-path bond distances from `src` (None when unreachable).
    pub fn bfs_distances(&self, src: usize) -> Vec<Option<usize>> {
        let mut dist = vec![None; self.neighbors.len()];
        let mut queue = VecDeque::new();
        dist[src] = Some(0);
        queue.push_back(src);
        while let Some(u) = queue.pop_front() {
            let du = dist[u].unwrap_or(0);
            for &(v, _) in &self.neighbors[u] {
                if dist[v].is_none() {
                    dist[v] = Some(du + 1);
                    queue.push_back(v);
                }
            }
        }
        dist
    }

    /// Higher-order adjacency at this graph's configured order.
    pub fn higher_order(&self) -> HigherOrderAdjacency {
        // The graph is connected by construction, so this cannot fail.
        build_higher_order(self, self.adjacency_order).unwrap_or_else(|_| HigherOrderAdjacency {
            n: self.n_atoms(),
            order: self.adjacency_order,
            labels: vec![0; self.n_atoms() * self.n_atoms()],
        })
    }

    /// Per bond: true when the bond is a bridge (not part of any ring).
    pub fn bridges(&self) -> Vec<bool> {
        let n = self.n_atoms();
        let mut disc = vec![usize::MAX; n];
        let mut low = vec![0usize; n];
        let mut is_bridge = vec![false; self.bonds.len()];
        let mut timer = 0usize;
        // Iterative DFS: (node, parent bond, next neighbour position)
        let mut stack: Vec<(usize, usize, usize)> = Vec::new();
        for root in 0..n {
            if disc[root] != usize::MAX {
                continue;
            }
            disc[root] = timer;
            low[root] = timer;
            timer += 1;
            stack.push((root, usize::MAX, 0));
            while let Some(&mut (u, pb, ref mut pos)) = stack.last_mut() {
                if *pos < self.neighbors[u].len() {
                    let (v, b) = self.neighbors[u][*pos];
                    *pos += 1;
                    if b == pb {
                        continue;
                    }
                    if disc[v] == usize::MAX {
                        disc[v] = timer;
                        low[v] = timer;
                        timer += 1;
                        stack.push((v, b, 0));
                    } else {
                        low[u] = low[u].min(disc[v]);
                    }
                } else {
                    stack.pop();
                    if let Some(&(p, _, _)) = stack.last() {
                        low[p] = low[p].min(low[u]);
                        if low[u] > disc[p] {
                            is_bridge[pb] = true;
                        }
                    }
                }
            }
        }
        is_bridge
    }

    /// Connected components of the ring-bond subgraph.
    pub fn ring_systems(&self) -> Vec<RingSystem> {
        let bridges = self.bridges();
        let n = self.n_atoms();
        let mut seen = vec![false; n];
        let mut systems = Vec::new();
        for start in 0..n {
            if seen[start] || !self.neighbors[start].iter().any(|&(_, b)| !bridges[b]) {
                continue;
            }
            let mut atoms = Vec::new();
            let mut bonds = Vec::new();
            let mut queue = VecDeque::from([start]);
            seen[start] = true;
            while let Some(u) = queue.pop_front() {
                atoms.push(u);
                for &(v, b) in &self.neighbors[u] {
                    if bridges[b] {
                        continue;
                    }
                    if u < v {
                        bonds.push(b);
                    }
                    if !seen[v] {
                        seen[v] = true;
                        queue.push_back(v);
                    }
                }
            }
            atoms.sort_unstable();
            bonds.sort_unstable();
            let cycle = if atoms.len() == bonds.len() { Some(self.walk_cycle(&atoms, &bridges)) } else { None };
            systems.push(RingSystem { atoms, bonds, cycle });
        }
        systems
    }

    fn walk_cycle(&self, atoms: &[usize], bridges: &[bool]) -> Vec<usize> {
        let start = atoms[0];
        let mut order = vec![start];
        let mut prev = usize::MAX;
        let mut cur = start;
        loop {
            let next = self.neighbors[cur]
                .iter()
                .filter(|&&(v, b)| !bridges[b] && v != prev)
                .map(|&(v, _)| v)
                .next();
            match next {
                Some(v) if v != start => {
                    order.push(v);
                    prev = cur;
                    cur = v;
                }
                _ => break,
            }
            if order.len() > atoms.len() {
                break;
            }
        }
        order
    }

    /// Rotatable bond: non-ring single bond whose endpoints both have degree ≥ 2.
    pub fn rotatable_bonds(&self) -> Vec<usize> {
        let bridges = self.bridges();
        self.bonds
            .iter()
            .enumerate()
            .filter(|(b, bond)| {
                bond.order == BondOrder::Single
                    && bridges[*b]
                    && self.degree(bond.i) >= 2
                    && self.degree(bond.j) >= 2
            })
            .map(|(b, _)| b)
            .collect()
    }

    /// Relabel atoms: new atom `k` is old atom `perm[k]`.
    pub fn permuted(&self, perm: &[usize]) -> Result<MolGraph> {
        let n = self.n_atoms();
        if perm.len() != n {
            return Err(Error::SizeMismatch { expected: n, found: perm.len() });
        }
        let mut inverse = vec![usize::MAX; n];
        for (new, &old) in perm.iter().enumerate() {
            if old >= n || inverse[old] != usize::MAX {
                return Err(Error::Invalid(format!("not a permutation of 0..{n}")));
            }
            inverse[old] = new;
        }
        let atoms = perm.iter().map(|&old| self.atoms[old]).collect();
        let bonds = self
            .bonds
            .iter()
            .map(|b| Bond { i: inverse[b.i], j: inverse[b.j], order: b.order })
            .collect();
        MolGraph::with_order(atoms, bonds, self.adjacency_order)
    }
}

/// A connected set of ring bonds. `cycle` holds the atoms in ring order when
/// the system is a single simple ring; fused or bridged systems have `None`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct RingSystem {
    pub atoms: Vec<usize>,
    pub bonds: Vec<usize>,
    pub cycle: Option<Vec<usize>>,
}

/// Hop-count labels for every ordered atom pair within graph distance `order`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct HigherOrderAdjacency {
    n: usize,
    order: u8,
    /// Dense n×n, 0 = no label.
    labels: Vec<u8>,
}

impl HigherOrderAdjacency {
    pub fn n_atoms(&self) -> usize {
        self.n
    }

    pub fn order(&self) -> u8 {
        self.order
    }

    pub fn label(&self, i: usize, j: usize) -> Option<u8> {
        match self.labels[i * self.n + j] {
            0 => None,
            k => Some(k),
        }
    }

    /// Ordered pairs `(i, j, hops)` with `i != j`, row-major.
    pub fn pairs(&self) -> impl Iterator<Item = (usize, usize, u8)> + '_ {
        let n = self.n;
        self.labels
            .iter()
            .enumerate()
            .filter(|(_, &k)| k > 0)
            .map(move |(idx, &k)| (idx / n, idx % n, k))
    }

    /// Number of labelled neighbours of atom `i`.
    pub fn neighbor_count(&self, i: usize) -> usize {
        self.labels[i * self.n..(i + 1) * self.n].iter().filter(|&&k| k > 0).count()
    }
}

/// Label every pair at shortest-path distance `d <= h` with `d`.
pub fn build_higher_order(g: &MolGraph, h: u8) -> Result<HigherOrderAdjacency> {
    if h == 0 {
        return Err(Error::Structure("adjacency order must be at least 1".into()));
    }
    let n = g.n_atoms();
    let mut labels = vec![0u8; n * n];
    for src in 0..n {
        for (dst, d) in g.bfs_distances(src).into_iter().enumerate() {
            match d {
                None => {
                    return Err(Error::Structure(format!(
                        "graph is disconnected: no path between atoms {src} and {dst}"
                    )))
                }
                Some(d) if d >= 1 && d <= h as usize => labels[src * n + dst] = d as u8,
                Some(_) => {}
            }
        }
    }
    Ok(HigherOrderAdjacency { n, order: h, labels })
}

#[cfg(test)]
pub(crate) mod fixtures {
    use super::*;

    pub fn graph(elements: &[u8], bonds: &[(usize, usize, u8)]) -> MolGraph {
        MolGraph::new(
            elements.iter().map(|&e| AtomSpec::new(e)).collect(),
            bonds
                .iter()
                .map(|&(i, j, o)| Bond { i, j, order: BondOrder::from_code(o).unwrap() })
                .collect(),
        )
        .unwrap()
    }

    pub fn chain(n: usize) -> MolGraph {
        let bonds: Vec<_> = (0..n - 1).map(|i| (i, i + 1, 1)).collect();
        graph(&vec![6; n], &bonds)
    }

    pub fn ring(n: usize, order: u8) -> MolGraph {
        let bonds: Vec<_> = (0..n).map(|i| (i, (i + 1) % n, order)).collect();
        graph(&vec![6; n], &bonds)
    }
}

#[cfg(test)]
mod tests {
    use super::fixtures::*;
    use super::*;

    #[test]
    fn path_labels() {
        let g = chain(4);
        let adj = build_higher_order(&g, 3).unwrap();
        assert_eq!(adj.label(0, 3), Some(3));
        assert_eq!(adj.label(0, 2), Some(2));
        assert_eq!(adj.label(0, 1), Some(1));
        assert_eq!(adj.label(3, 0), Some(3));
        assert_eq!(adj.label(0, 0), None);
        let adj2 = build_higher_order(&g, 2).unwrap();
        assert_eq!(adj2.label(0, 3), None);
    }

    #[test]
    fn six_ring_opposite_atoms() {
        let g = ring(6, 4);
        let adj = build_higher_order(&g, 3).unwrap();
        // BFS distances on C6: 1, 2, 3, 2, 1 from atom 0.
        assert_eq!(adj.label(0, 3), Some(3));
        assert_eq!(adj.label(1, 4), Some(3));
        assert_eq!(adj.label(0, 4), Some(2));
        assert_eq!(adj.label(0, 5), Some(1));
    }

    #[test]
    fn order_one_is_bond_adjacency() {
        let g = graph(&[6, 6, 8, 7, 6], &[(0, 1, 1), (1, 2, 2), (1, 3, 1), (3, 4, 1)]);
        let adj = build_higher_order(&g, 1).unwrap();
        for i in 0..5 {
            for j in 0..5 {
                assert_eq!(adj.label(i, j).is_some(), g.bond_between(i, j).is_some());
            }
        }
    }

    #[test]
    fn rejects_bad_graphs() {
        let atoms = vec![AtomSpec::new(6); 3];
        let b = |i, j| Bond { i, j, order: BondOrder::Single };
        assert!(matches!(MolGraph::new(atoms.clone(), vec![b(0, 1)]), Err(Error::Structure(_))));
        assert!(MolGraph::new(atoms.clone(), vec![b(0, 1), b(1, 0), b(1, 2)]).is_err());
        assert!(MolGraph::new(atoms.clone(), vec![b(0, 0), b(1, 2)]).is_err());
        assert!(MolGraph::new(atoms.clone(), vec![b(0, 5), b(1, 2)]).is_err());
        assert!(MolGraph::new(vec![AtomSpec::new(99), AtomSpec::new(6)], vec![b(0, 1)]).is_err());
        assert!(MolGraph::new(atoms, vec![b(0, 1), b(1, 2)]).is_ok());
    }

    #[test]
    fn rings_and_rotatable_bonds() {
        // Toluene-like heavy atoms: ring 0..5 plus methyl 6 on atom 0, ethyl tail 7-8 on atom 3.
        let g = graph(
            &[6; 9],
            &[(0, 1, 4), (1, 2, 4), (2, 3, 4), (3, 4, 4), (4, 5, 4), (5, 0, 4), (0, 6, 1), (3, 7, 1), (7, 8, 1)],
        );
        let systems = g.ring_systems();
        assert_eq!(systems.len(), 1);
        let cyc = systems[0].cycle.as_ref().unwrap();
        assert_eq!(cyc.len(), 6);
        for w in 0..6 {
            assert!(g.bond_between(cyc[w], cyc[(w + 1) % 6]).is_some());
        }
        // 0-6 has a terminal atom, ring bonds are aromatic; only 3-7 qualifies.
        let rot = g.rotatable_bonds();
        assert_eq!(rot.len(), 1);
        let b = g.bonds()[rot[0]];
        assert_eq!((b.i, b.j), (3, 7));
        assert_eq!(g.coordination(0), 3);
        assert_eq!(g.coordination(7), 4);
    }

    #[test]
    fn fused_rings_have_no_simple_cycle() {
        // Naphthalene skeleton.
        let g = graph(
            &[6; 10],
            &[(0, 1, 4), (1, 2, 4), (2, 3, 4), (3, 4, 4), (4, 5, 4), (5, 0, 4), (4, 6, 4), (6, 7, 4), (7, 8, 4), (8, 9, 4), (9, 5, 4)],
        );
        let systems = g.ring_systems();
        assert_eq!(systems.len(), 1);
        assert!(systems[0].cycle.is_none());
    }

    #[test]
    fn permuted_graph_is_relabelled() {
        let g = graph(&[6, 8, 7], &[(0, 1, 2), (0, 2, 1)]);
        let p = g.permuted(&[2, 0, 1]).unwrap();
        assert_eq!(p.element(0), 7);
        assert_eq!(p.element(1), 6);
        assert_eq!(p.bond_between(1, 2).unwrap().order, BondOrder::Double);
    }
}
