//! Detection of symmetric substructures: exchangeable branches at a shared
//! anchor atom, and mirror flips of isolated rings.
//!
//! Detection is heuristic. Every reported group is verified to be a graph
//! automorphism, but the groups found may generate only a subgroup of the
//! full automorphism group. Branch symmetry is detected one level deep at
//! every anchor; symmetric groups nested inside exchangeable branches are
//! reported as independent groups rather than as a wreath product.

use alloc::collections::{BTreeSet, VecDeque};
use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::molgraph::MolGraph;
use crate::{Error, Result};
#[allow(unused_imports)]
use num_traits::Float;

/// Number of colour-refinement rounds used to distinguish atoms.
const REFINEMENT_ROUNDS: usize = 3;

/// Equal-length atom-index tuples that may be permuted among themselves.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SwapGroup {
    pub tuples: Vec<Vec<usize>>,
}

impl SwapGroup {
    pub fn atom_count(&self) -> usize {
        self.tuples.iter().map(Vec::len).sum()
    }

    /// Atom relabelling where tuple `a` receives the atoms of tuple `assign[a]`:
    /// `perm[tuples[a][k]] = tuples[assign[a]][k]`, identity elsewhere.
    pub fn relabeling(&self, n_atoms: usize, assign: &[usize]) -> Vec<usize> {
        let mut perm: Vec<usize> = (0..n_atoms).collect();
        for (a, &b) in assign.iter().enumerate() {
            for (k, &atom) in self.tuples[a].iter().enumerate() {
                perm[atom] = self.tuples[b][k];
            }
        }
        perm
    }

    fn check_shape(&self, n_atoms: usize) -> Result<()> {
        if self.tuples.len() < 2 {
            return Err(Error::Scheme("a swap group needs at least two tuples".into()));
        }
        let len = self.tuples[0].len();
        let mut seen = BTreeSet::new();
        for t in &self.tuples {
            if t.len() != len || t.is_empty() {
                return Err(Error::Scheme("tuples in a group must have equal, nonzero length".into()));
            }
            for &a in t {
                if a >= n_atoms {
                    return Err(Error::Scheme(format!("atom {a} outside 0..{n_atoms}")));
                }
                if !seen.insert(a) {
                    return Err(Error::Scheme(format!("atom {a} appears twice in one group")));
                }
            }
        }
        Ok(())
    }
}

/// A set of swap groups detected for one symmetric substructure.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SymmetryScheme {
    pub swap_groups: Vec<SwapGroup>,
}

impl SymmetryScheme {
    /// Check the structural invariants against a conformation size only.
    pub fn check_size(&self, n_atoms: usize) -> Result<()> {
        self.swap_groups.iter().try_for_each(|g| g.check_shape(n_atoms))
    }

    /// Full check: shapes, matching atom types, and every tuple exchange is an automorphism.
    pub fn validate(&self, g: &MolGraph) -> Result<()> {
        let n = g.n_atoms();
        for group in &self.swap_groups {
            group.check_shape(n)?;
            for t in &group.tuples[1..] {
                for (k, &a) in t.iter().enumerate() {
                    if g.element(a) != g.element(group.tuples[0][k]) {
                        return Err(Error::Scheme(format!("atom {a} has a different element")));
                    }
                }
            }
            for b in 1..group.tuples.len() {
                let mut assign: Vec<usize> = (0..group.tuples.len()).collect();
                assign.swap(0, b);
                if !is_automorphism(g, &group.relabeling(n, &assign)) {
                    return Err(Error::Scheme("tuple exchange is not a graph automorphism".into()));
                }
            }
        }
        Ok(())
    }
}

/// True when relabelling atom `x` to `perm[x]` preserves elements and typed bonds.
pub fn is_automorphism(g: &MolGraph, perm: &[usize]) -> bool {
    let n = g.n_atoms();
    if perm.len() != n {
        return false;
    }
    let mut hit = vec![false; n];
    for &p in perm {
        if p >= n || hit[p] {
            return false;
        }
        hit[p] = true;
    }
    (0..n).all(|i| g.element(perm[i]) == g.element(i))
        && g.bonds().iter().all(|b| {
            g.bond_between(perm[b.i], perm[b.j]).is_some_and(|img| img.order == b.order)
        })
}

/// Atom colours from (element, incident bond-order multiset), refined by
/// neighbourhood signatures for a fixed number of rounds.
pub fn atom_colors(g: &MolGraph) -> Vec<usize> {
    let n = g.n_atoms();
    let initial: Vec<(u8, Vec<u8>)> = (0..n)
        .map(|i| (g.element(i), g.bond_order_multiset(i).iter().map(|o| o.code()).collect()))
        .collect();
    let mut colors = canonical_ranks(&initial);
    for _ in 0..REFINEMENT_ROUNDS {
        let sigs: Vec<(usize, Vec<(u8, usize)>)> = (0..n)
            .map(|i| {
                let mut nb: Vec<(u8, usize)> = g
                    .neighbors(i)
                    .iter()
                    .map(|&(j, b)| (g.bonds()[b].order.code(), colors[j]))
                    .collect();
                nb.sort_unstable();
                (colors[i], nb)
            })
            .collect();
        let next = canonical_ranks(&sigs);
        let stable = next == colors;
        colors = next;
        if stable {
            break;
        }
    }
    colors
}

fn canonical_ranks<T: Ord + Clone>(items: &[T]) -> Vec<usize> {
    let mut uniq: Vec<T> = items.to_vec();
    uniq.sort();
    uniq.dedup();
    items.iter().map(|x| uniq.binary_search(x).unwrap_or(0)).collect()
}

/// Find all swap groups of the graph. Deterministic for a fixed atom order.
pub fn find_symmetric_substructures(g: &MolGraph) -> Vec<SymmetryScheme> {
    let colors = atom_colors(g);
    let mut groups: Vec<SwapGroup> = Vec::new();
    let mut seen_perms: Vec<Vec<usize>> = Vec::new();
    let mut push = |group: SwapGroup, groups: &mut Vec<SwapGroup>| {
        let mut assign: Vec<usize> = (0..group.tuples.len()).collect();
        assign.swap(0, 1);
        let key = group.relabeling(g.n_atoms(), &assign);
        if group.tuples.len() == 2 && seen_perms.contains(&key) {
            return;
        }
        seen_perms.push(key);
        groups.push(group);
    };
    for group in ring_flip_groups(g, &colors) {
        push(group, &mut groups);
    }
    for group in branch_groups(g, &colors) {
        push(group, &mut groups);
    }
    groups
        .into_iter()
        .filter(|grp| {
            let scheme = SymmetryScheme { swap_groups: vec![grp.clone()] };
            scheme.validate(g).is_ok()
        })
        .map(|grp| SymmetryScheme { swap_groups: vec![grp] })
        .collect()
}

/// Atoms reachable from `root` without entering any atom in `blocked`, BFS order.
fn reachable(g: &MolGraph, root: usize, blocked: &[bool]) -> Vec<usize> {
    let mut seen = vec![false; g.n_atoms()];
    let mut order = Vec::new();
    let mut queue = VecDeque::from([root]);
    seen[root] = true;
    while let Some(u) = queue.pop_front() {
        order.push(u);
        for &(v, _) in g.neighbors(u) {
            if !seen[v] && !blocked[v] {
                seen[v] = true;
                queue.push_back(v);
            }
        }
    }
    order
}

/// Depth-first search for a bond- and colour-preserving bijection between two
/// atom sets (as induced subgraphs) that sends `root_a` to `root_b`.
/// Returns the image of each atom of `set_a` in `set_a`'s BFS order.
fn match_rooted(
    g: &MolGraph,
    colors: &[usize],
    set_a: &[usize],
    root_a: usize,
    set_b: &[usize],
    root_b: usize,
) -> Option<Vec<(usize, usize)>> {
    if set_a.len() != set_b.len() || colors[root_a] != colors[root_b] {
        return None;
    }
    let n = g.n_atoms();
    let mut in_a = vec![false; n];
    let mut in_b = vec![false; n];
    set_a.iter().for_each(|&x| in_a[x] = true);
    set_b.iter().for_each(|&x| in_b[x] = true);
    // BFS order of set_a, each atom with an earlier neighbour as anchor.
    let mut order: Vec<(usize, usize)> = vec![(root_a, usize::MAX)];
    let mut placed = vec![false; n];
    placed[root_a] = true;
    let mut head = 0;
    while head < order.len() {
        let u = order[head].0;
        head += 1;
        for &(v, _) in g.neighbors(u) {
            if in_a[v] && !placed[v] {
                placed[v] = true;
                order.push((v, u));
            }
        }
    }
    if order.len() != set_a.len() {
        return None;
    }
    let mut map = vec![usize::MAX; n];
    let mut used = vec![false; n];
    map[root_a] = root_b;
    used[root_b] = true;
    if extend(g, colors, &order, 1, &in_b, &mut map, &mut used) {
        Some(order.iter().map(|&(x, _)| (x, map[x])).collect())
    } else {
        None
    }
}

fn extend(
    g: &MolGraph,
    colors: &[usize],
    order: &[(usize, usize)],
    depth: usize,
    in_b: &[bool],
    map: &mut [usize],
    used: &mut [bool],
) -> bool {
    if depth == order.len() {
        return true;
    }
    let (x, parent) = order[depth];
    let anchor_img = map[parent];
    let candidates: Vec<usize> = g.neighbors(anchor_img).iter().map(|&(y, _)| y).collect();
    for y in candidates {
        if !in_b[y] || used[y] || colors[y] != colors[x] {
            continue;
        }
        // Every bond between x and an already-mapped atom must have a matching image, and vice versa.
        let consistent = order[..depth].iter().all(|&(w, _)| {
            let here = g.bond_between(x, w).map(|b| b.order);
            let there = g.bond_between(y, map[w]).map(|b| b.order);
            here == there
        });
        if !consistent {
            continue;
        }
        map[x] = y;
        used[y] = true;
        if extend(g, colors, order, depth + 1, in_b, map, used) {
            return true;
        }
        map[x] = usize::MAX;
        used[y] = false;
    }
    false
}

fn branch_groups(g: &MolGraph, colors: &[usize]) -> Vec<SwapGroup> {
    let n = g.n_atoms();
    let bridges = g.bridges();
    let mut out = Vec::new();
    for anchor in 0..n {
        let mut blocked = vec![false; n];
        blocked[anchor] = true;
        let branches: Vec<(usize, usize, Vec<usize>)> = g
            .neighbors(anchor)
            .iter()
            .filter(|&&(_, b)| bridges[b])
            .map(|&(root, b)| (root, b, reachable(g, root, &blocked)))
            .collect();
        let mut taken = vec![false; branches.len()];
        for first in 0..branches.len() {
            if taken[first] {
                continue;
            }
            let (root_a, bond_a, ref atoms_a) = branches[first];
            let mut tuples = vec![atoms_a.clone()];
            for other in first + 1..branches.len() {
                if taken[other] {
                    continue;
                }
                let (root_b, bond_b, ref atoms_b) = branches[other];
                if g.bonds()[bond_a].order != g.bonds()[bond_b].order {
                    continue;
                }
                if let Some(pairs) = match_rooted(g, colors, atoms_a, root_a, atoms_b, root_b) {
                    taken[other] = true;
                    tuples.push(pairs.iter().map(|&(_, y)| y).collect());
                }
            }
            if tuples.len() >= 2 {
                out.push(SwapGroup { tuples });
            }
        }
    }
    out
}

fn ring_flip_groups(g: &MolGraph, colors: &[usize]) -> Vec<SwapGroup> {
    let n = g.n_atoms();
    let mut out = Vec::new();
    for system in g.ring_systems() {
        let Some(cycle) = system.cycle else { continue };
        let len = cycle.len();
        let mut in_ring = vec![false; n];
        cycle.iter().for_each(|&a| in_ring[a] = true);
        // Substituent set hanging off each ring atom; skip rings whose
        // substituents reconnect to a second ring atom.
        let mut hangs: Vec<Vec<usize>> = vec![Vec::new(); len];
        let mut owner = vec![usize::MAX; n];
        let mut ok = true;
        for (pos, &r) in cycle.iter().enumerate() {
            for &(v, _) in g.neighbors(r) {
                if in_ring[v] || owner[v] != usize::MAX {
                    if !in_ring[v] && owner[v] != pos {
                        ok = false;
                    }
                    continue;
                }
                for x in reachable(g, v, &in_ring) {
                    if owner[x] != usize::MAX && owner[x] != pos {
                        ok = false;
                    }
                    owner[x] = pos;
                    hangs[pos].push(x);
                }
            }
        }
        if !ok {
            continue;
        }
        for k in 0..len {
            let mirror = |i: usize| (k + len - i % len) % len;
            let ring_ok = (0..len).all(|i| {
                let (a, b) = (cycle[i], cycle[(i + 1) % len]);
                let (ma, mb) = (cycle[mirror(i)], cycle[mirror(i + 1)]);
                colors[a] == colors[ma]
                    && g.bond_between(a, b).map(|x| x.order) == g.bond_between(ma, mb).map(|x| x.order)
            });
            if !ring_ok {
                continue;
            }
            let mut perm: Vec<usize> = (0..n).collect();
            let mut side_one: Vec<usize> = Vec::new();
            let mut valid = true;
            for i in 0..len {
                let m = mirror(i);
                if m == i {
                    continue;
                }
                let side = (2 * i + 2 * len - k) % (2 * len);
                let mut set_a = vec![cycle[i]];
                set_a.extend(&hangs[i]);
                let mut set_b = vec![cycle[m]];
                set_b.extend(&hangs[m]);
                match match_rooted(g, colors, &set_a, cycle[i], &set_b, cycle[m]) {
                    Some(pairs) => {
                        for &(x, y) in &pairs {
                            perm[x] = y;
                        }
                        if side > 0 && side < len {
                            side_one.extend(pairs.iter().map(|&(x, _)| x));
                        }
                    }
                    None => {
                        valid = false;
                        break;
                    }
                }
            }
            if !valid || side_one.is_empty() || !is_automorphism(g, &perm) {
                continue;
            }
            let image: Vec<usize> = side_one.iter().map(|&x| perm[x]).collect();
            out.push(SwapGroup { tuples: vec![side_one, image] });
        }
    }
    out
}
