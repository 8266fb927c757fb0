//! XYZ coordinate files: atom count, comment line, then `symbol x y z` rows.

use std::fmt::Write as _;
use std::path::Path;

use equiboost_core::elements;
use equiboost_core::geometry::Point;
use equiboost_core::{Conformation, MolGraph};

use crate::error::{read_to_string, AppError, AppResult, ParseError};
use crate::fsutil::write_atomic;

#[derive(Clone, Debug, PartialEq)]
pub struct XyzFrame {
    pub comment: String,
    pub elements: Vec<u8>,
    pub coords: Vec<Point>,
}

impl XyzFrame {
    /// Checks atom count and element order against a graph.
    pub fn check_against(&self, g: &MolGraph) -> Result<(), String> {
        if self.coords.len() != g.n_atoms() {
            return Err(format!("{} atoms in file, graph has {}", self.coords.len(), g.n_atoms()));
        }
        if let Some(i) = (0..g.n_atoms()).find(|&i| self.elements[i] != g.element(i)) {
            return Err(format!(
                "atom {i} is {} in file but {} in graph",
                elements::symbol(self.elements[i]).unwrap_or("?"),
                elements::symbol(g.element(i)).unwrap_or("?")
            ));
        }
        Ok(())
    }

    pub fn conformation(&self) -> equiboost_core::Result<Conformation> {
        Conformation::new(self.coords.clone())
    }
}

pub fn parse_xyz(text: &str) -> Result<XyzFrame, ParseError> {
    let mut lines = text.lines().enumerate().map(|(i, l)| (i + 1, l));
    let (ln, first) = lines.next().ok_or_else(|| ParseError::new(1, "empty file"))?;
    let n: usize = first
        .trim()
        .parse()
        .map_err(|_| ParseError::new(ln, format!("expected atom count, found {:?}", first.trim())))?;
    let comment = lines.next().map(|(_, l)| l.to_string()).unwrap_or_default();
    let mut elements = Vec::with_capacity(n);
    let mut coords = Vec::with_capacity(n);
    for (ln, line) in lines.by_ref() {
        if coords.len() == n {
            if line.trim().is_empty() {
                continue;
            }
            return Err(ParseError::new(ln, format!("more than {n} atom rows")));
        }
        let fields: Vec<&str> = line.split_whitespace().collect();
        if fields.len() < 4 {
            return Err(ParseError::new(ln, "expected `symbol x y z`"));
        }
        let z = elements::atomic_number(fields[0])
            .or_else(|| fields[0].parse::<u8>().ok().filter(|&z| elements::symbol(z).is_some()))
            .ok_or_else(|| ParseError::new(ln, format!("unknown element {:?}", fields[0])))?;
        let mut p = [0.0; 3];
        for (k, v) in p.iter_mut().enumerate() {
            *v = fields[k + 1]
                .parse()
                .ok()
                .filter(|x: &f64| x.is_finite())
                .ok_or_else(|| ParseError::new(ln, format!("bad coordinate {:?}", fields[k + 1])))?;
        }
        elements.push(z);
        coords.push(p);
    }
    if coords.len() != n {
        return Err(ParseError::new(0, format!("expected {n} atom rows, found {}", coords.len())));
    }
    Ok(XyzFrame { comment, elements, coords })
}

/// Six decimal places, one atom per line.
pub fn format_xyz(elements: &[u8], coords: &[Point], comment: &str) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "{}", coords.len());
    let _ = writeln!(out, "{}", comment.replace('\n', " "));
    for (&z, p) in elements.iter().zip(coords) {
        let sym = elements::symbol(z).unwrap_or("X");
        let _ = writeln!(out, "{sym:<2} {:>14.6} {:>14.6} {:>14.6}", p[0], p[1], p[2]);
    }
    out
}

pub fn read_xyz(path: &Path) -> AppResult<XyzFrame> {
    let text = read_to_string(path, "coordinate file")?;
    parse_xyz(&text).map_err(|e| AppError::parse(path, e))
}

/// Reads an XYZ file and checks it against `g`.
pub fn read_conformation(path: &Path, g: &MolGraph) -> AppResult<Conformation> {
    let frame = read_xyz(path)?;
    frame.check_against(g).map_err(|m| AppError::Input(format!("{}: {m}", path.display())))?;
    Ok(frame.conformation()?)
}

pub fn write_xyz(path: &Path, elements: &[u8], coords: &[Point], comment: &str) -> AppResult<()> {
    write_atomic(path, format_xyz(elements, coords, comment).as_bytes())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip_at_six_decimals() {
        let coords = vec![[0.1234564, -1.0, 2.5], [3.0, 4.0, -0.0000004]];
        let text = format_xyz(&[6, 8], &coords, "two atoms");
        let frame = parse_xyz(&text).unwrap();
        assert_eq!(frame.elements, vec![6, 8]);
        assert_eq!(frame.comment, "two atoms");
        assert_eq!(frame.coords[0][0], 0.123456);
        assert!(text.contains("      0.123456"));
    }

    #[test]
    fn errors_carry_line_numbers() {
        assert_eq!(parse_xyz("two\n").unwrap_err().line, 1);
        let err = parse_xyz("2\nc\nC 0 0 0\nC 0 zero 0\n").unwrap_err();
        assert_eq!(err.line, 4);
        assert_eq!(parse_xyz("1\nc\nQq 0 0 0\n").unwrap_err().line, 3);
        assert!(parse_xyz("3\nc\nC 0 0 0\n").is_err());
        assert_eq!(parse_xyz("1\nc\nC 0 0 0\nC 1 1 1\n").unwrap_err().line, 4);
    }

    #[test]
    fn accepts_atomic_numbers_and_case() {
        let f = parse_xyz("2\n\n6 0 0 0\ncl 1 0 0\n\n").unwrap();
        assert_eq!(f.elements, vec![6, 17]);
    }
}
