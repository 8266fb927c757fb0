//! Element symbols for the supported range (H through Br).

pub const MAX_ELEMENT: u8 = 35;

const SYMBOLS: [&str; 36] = [
    "X", "H", "He", "Li", "Be", "B", "C", "N", "O", "F", "Ne", "Na", "Mg", "Al", "Si", "P", "S",
    "Cl", "Ar", "K", "Ca", "Sc", "Ti", "V", "Cr", "Mn", "Fe", "Co", "Ni", "Cu", "Zn", "Ga", "Ge",
    "As", "Se", "Br",
];

pub fn symbol(z: u8) -> Option<&'static str> {
    if z == 0 || z > MAX_ELEMENT {
        return None;
    }
    Some(SYMBOLS[z as usize])
}

/// Case-insensitive lookup of an element symbol.
pub fn atomic_number(sym: &str) -> Option<u8> {
    let sym = sym.trim();
    SYMBOLS
        .iter()
        .enumerate()
        .skip(1)
        .find(|(_, s)| s.eq_ignore_ascii_case(sym))
        .map(|(z, _)| z as u8)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip_symbols() {
        for z in 1..=MAX_ELEMENT {
            assert_eq!(atomic_number(symbol(z).unwrap()), Some(z));
        }
        assert_eq!(atomic_number("cl"), Some(17));
        assert_eq!(symbol(36), None);
        assert_eq!(atomic_number("Xx"), None);
    }
}
