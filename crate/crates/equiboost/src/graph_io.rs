//! Molecule graph files: the JSON schema and a minimal V2000 connection table.

use std::path::Path;

use equiboost_core::elements;
use equiboost_core::geometry::Point;
use equiboost_core::molgraph::{Bond, DEFAULT_ADJACENCY_ORDER};
use equiboost_core::{AtomSpec, BondOrder, MolGraph};
use serde::{Deserialize, Serialize};

use crate::error::{read_to_string, AppError, AppResult, ParseError};

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct AtomEntry {
    element: u8,
    #[serde(default, skip_serializing_if = "is_zero")]
    idealized_valence: u8,
}

fn is_zero(v: &u8) -> bool {
    *v == 0
}

#[derive(Serialize, Deserialize)]
struct GraphFile {
    atoms: Vec<AtomEntry>,
    bonds: Vec<(usize, usize, u8)>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    adjacency_order: Option<u8>,
}

fn line_of(text: &str, byte: usize) -> usize {
    text[..byte.min(text.len())].bytes().filter(|&b| b == b'\n').count() + 1
}

fn build(atoms: Vec<AtomSpec>, bonds: Vec<Bond>, order: u8) -> Result<MolGraph, ParseError> {
    MolGraph::with_order(atoms, bonds, order).map_err(|e| ParseError::new(0, e.to_string()))
}

pub fn parse_graph_json(text: &str) -> Result<MolGraph, ParseError> {
    let file: GraphFile = serde_json::from_str(text).map_err(|e| ParseError::new(e.line(), e.to_string()))?;
    let locate = |needle: &str| text.find(needle).map(|b| line_of(text, b)).unwrap_or(0);
    let mut atoms = Vec::with_capacity(file.atoms.len());
    for (i, a) in file.atoms.iter().enumerate() {
        if elements::symbol(a.element).is_none() {
            return Err(ParseError::new(locate("\"atoms\""), format!("atom {i}: unsupported element {}", a.element)));
        }
        atoms.push(AtomSpec { element: a.element, idealized_valence: a.idealized_valence });
    }
    let mut bonds = Vec::with_capacity(file.bonds.len());
    for (k, &(i, j, code)) in file.bonds.iter().enumerate() {
        let order = BondOrder::from_code(code)
            .ok_or_else(|| ParseError::new(locate("\"bonds\""), format!("bond {k}: unknown bond order {code}")))?;
        bonds.push(Bond { i, j, order });
    }
    build(atoms, bonds, file.adjacency_order.unwrap_or(DEFAULT_ADJACENCY_ORDER))
}

fn field(line: &str, range: std::ops::Range<usize>) -> &str {
    line.get(range.start..range.end.min(line.len())).unwrap_or("").trim()
}

/// Two leading integers of a V2000 line, read from fixed 3-character columns
/// when they parse there, otherwise from whitespace-separated tokens.
fn two_ints(line: &str) -> Option<(usize, usize)> {
    let fixed = (field(line, 0..3).parse().ok(), field(line, 3..6).parse().ok());
    if let (Some(a), Some(b)) = fixed {
        return Some((a, b));
    }
    let mut it = line.split_whitespace();
    Some((it.next()?.parse().ok()?, it.next()?.parse().ok()?))
}

/// V2000 subset: header, counts line, atom block, bond block. Bond type 4 is aromatic.
pub fn parse_v2000(text: &str) -> Result<(MolGraph, Vec<Point>), ParseError> {
    let lines: Vec<&str> = text.lines().collect();
    let counts = lines.get(3).ok_or_else(|| ParseError::new(lines.len() + 1, "missing counts line"))?;
    let (n_atoms, n_bonds) = two_ints(counts).ok_or_else(|| ParseError::new(4, "malformed counts line"))?;
    let mut atoms = Vec::with_capacity(n_atoms);
    let mut coords = Vec::with_capacity(n_atoms);
    for k in 0..n_atoms {
        let ln = 5 + k;
        let line = lines.get(ln - 1).ok_or_else(|| ParseError::new(ln, "unexpected end of atom block"))?;
        let tok: Vec<&str> = line.split_whitespace().collect();
        if tok.len() < 4 {
            return Err(ParseError::new(ln, "expected `x y z symbol`"));
        }
        let mut p = [0.0; 3];
        for (d, v) in p.iter_mut().enumerate() {
            *v = tok[d].parse().map_err(|_| ParseError::new(ln, format!("bad coordinate {:?}", tok[d])))?;
        }
        let z = elements::atomic_number(tok[3]).ok_or_else(|| ParseError::new(ln, format!("unknown element {:?}", tok[3])))?;
        atoms.push(AtomSpec::new(z));
        coords.push(p);
    }
    let mut bonds = Vec::with_capacity(n_bonds);
    for k in 0..n_bonds {
        let ln = 5 + n_atoms + k;
        let line = lines.get(ln - 1).ok_or_else(|| ParseError::new(ln, "unexpected end of bond block"))?;
        let (a, b) = two_ints(line).ok_or_else(|| ParseError::new(ln, "malformed bond line"))?;
        let code: u8 = {
            let fixed = field(line, 6..9);
            let tok = if fixed.is_empty() { line.split_whitespace().nth(2).unwrap_or("") } else { fixed };
            tok.parse().map_err(|_| ParseError::new(ln, format!("bad bond type {tok:?}")))?
        };
        let order = BondOrder::from_code(code).ok_or_else(|| ParseError::new(ln, format!("unsupported bond type {code}")))?;
        if a == 0 || b == 0 || a > n_atoms || b > n_atoms {
            return Err(ParseError::new(ln, format!("bond atom index outside 1..={n_atoms}")));
        }
        bonds.push(Bond { i: a - 1, j: b - 1, order });
    }
    Ok((build(atoms, bonds, DEFAULT_ADJACENCY_ORDER)?, coords))
}

/// JSON when the first non-blank character is `{`, V2000 otherwise.
pub fn parse_graph(text: &str) -> Result<MolGraph, ParseError> {
    if text.trim_start().starts_with('{') {
        parse_graph_json(text)
    } else {
        parse_v2000(text).map(|(g, _)| g)
    }
}

pub fn graph_to_json(g: &MolGraph) -> String {
    let file = GraphFile {
        atoms: g
            .atoms()
            .iter()
            .map(|a| AtomEntry { element: a.element, idealized_valence: a.idealized_valence })
            .collect(),
        bonds: g.bonds().iter().map(|b| (b.i, b.j, b.order.code())).collect(),
        adjacency_order: (g.adjacency_order() != DEFAULT_ADJACENCY_ORDER).then_some(g.adjacency_order()),
    };
    let mut s = serde_json::to_string(&file).expect("graph serializes");
    s.push('\n');
    s
}

pub fn read_graph(path: &Path) -> AppResult<MolGraph> {
    let text = read_to_string(path, "graph file")?;
    parse_graph(&text).map_err(|e| AppError::parse(path, e))
}
