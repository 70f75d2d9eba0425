use std::collections::BTreeMap;

use super::{Atom, Bond, BondOrder, ChemError, Element, MolGraph};

struct ParsedAtom {
    element: Element,
    aromatic: bool,
    bracket_h: Option<u8>,
}

struct ParsedBond {
    i: usize,
    j: usize,
    symbol: Option<u8>,
    pos: usize,
}

struct RingOpen {
    atom: usize,
    symbol: Option<u8>,
}

/// Removes stereochemistry marks (`/`, `\`, `@`) from a SMILES string.
pub fn strip_stereo(text: &str) -> String {
    text.chars().filter(|c| !matches!(c, '/' | '\\' | '@')).collect()
}

/// Parses the supported SMILES subset into a connected graph.
///
/// Aromatic atoms keep their aromatic bonds; hydrogen counts are derived by
/// finding a Kekulé assignment, so inputs that cannot be kekulized fail here.
pub fn parse_smiles(text: &str) -> Result<MolGraph, ChemError> {
    let bytes = text.as_bytes();
    let mut atoms: Vec<ParsedAtom> = Vec::new();
    let mut bonds: Vec<ParsedBond> = Vec::new();
    let mut rings: BTreeMap<u32, RingOpen> = BTreeMap::new();
    let mut branches: Vec<usize> = Vec::new();
    let mut prev: Option<usize> = None;
    let mut pending: Option<(u8, usize)> = None;
    let mut pos = 0;

    let syntax = |pos: usize, msg: &str| ChemError::Syntax {
        pos,
        msg: msg.to_string(),
    };

    while pos < bytes.len() {
        let c = bytes[pos];
        match c {
            b'C' | b'N' | b'O' | b'F' | b'c' | b'n' | b'o' | b'B' | b'S' | b'P' | b'I' | b'b'
            | b's' | b'p' | b'*' => {
                let (atom, len) = organic_atom(bytes, pos)?;
                let idx = atoms.len();
                atoms.push(atom);
                if let Some(p) = prev {
                    bonds.push(ParsedBond {
                        i: p,
                        j: idx,
                        symbol: pending.map(|(s, _)| s),
                        pos,
                    });
                } else if let Some((_, bp)) = pending {
                    return Err(syntax(bp, "bond without a preceding atom"));
                }
                pending = None;
                prev = Some(idx);
                pos += len;
            }
            b'[' => {
                let (atom, len) = bracket_atom(bytes, pos)?;
                let idx = atoms.len();
                atoms.push(atom);
                if let Some(p) = prev {
                    bonds.push(ParsedBond {
                        i: p,
                        j: idx,
                        symbol: pending.map(|(s, _)| s),
                        pos,
                    });
                } else if let Some((_, bp)) = pending {
                    return Err(syntax(bp, "bond without a preceding atom"));
                }
                pending = None;
                prev = Some(idx);
                pos += len;
            }
            b'-' | b'=' | b'#' | b':' => {
                if pending.is_some() {
                    return Err(syntax(pos, "two consecutive bond symbols"));
                }
                if prev.is_none() {
                    return Err(syntax(pos, "bond without a preceding atom"));
                }
                pending = Some((c, pos));
                pos += 1;
            }
            b'/' | b'\\' => return Err(ChemError::Stereo { pos, token: c as char }),
            b'.' => return Err(ChemError::Disconnected { pos }),
            b'(' => {
                let p = prev.ok_or_else(|| syntax(pos, "branch without a preceding atom"))?;
                if pending.is_some() {
                    return Err(syntax(pos, "bond symbol before branch"));
                }
                branches.push(p);
                pos += 1;
            }
            b')' => {
                if pending.is_some() {
                    return Err(syntax(pos, "dangling bond at end of branch"));
                }
                prev = Some(branches.pop().ok_or_else(|| syntax(pos, "unbalanced `)`"))?);
                pos += 1;
            }
            b'0'..=b'9' | b'%' => {
                let (label, len) = if c == b'%' {
                    let digits = bytes.get(pos + 1..pos + 3).unwrap_or(&[]);
                    if digits.len() != 2 || !digits.iter().all(u8::is_ascii_digit) {
                        return Err(syntax(pos, "`%` must be followed by two digits"));
                    }
                    (((digits[0] - b'0') * 10 + (digits[1] - b'0')) as u32, 3)
                } else {
                    ((c - b'0') as u32, 1)
                };
                let here = prev.ok_or_else(|| syntax(pos, "ring closure without an atom"))?;
                let symbol = pending.take().map(|(s, _)| s);
                match rings.remove(&label) {
                    Some(open) => {
                        let symbol = match (open.symbol, symbol) {
                            (Some(a), Some(b)) if a != b => {
                                return Err(syntax(pos, "conflicting ring-closure bond symbols"))
                            }
                            (a, b) => a.or(b),
                        };
                        bonds.push(ParsedBond {
                            i: open.atom,
                            j: here,
                            symbol,
                            pos,
                        });
                    }
                    None => {
                        rings.insert(label, RingOpen { atom: here, symbol });
                    }
                }
                pos += len;
            }
            _ => return Err(syntax(pos, &format!("unexpected character `{}`", c as char))),
        }
    }

    if let Some((_, bp)) = pending {
        return Err(syntax(bp, "dangling bond at end of input"));
    }
    if !branches.is_empty() {
        return Err(syntax(bytes.len(), "unclosed `(`"));
    }
    if let Some((&label, _)) = rings.iter().next() {
        return Err(ChemError::UnmatchedRing { label });
    }
    if atoms.is_empty() {
        return Err(syntax(0, "empty SMILES"));
    }
    build_graph(atoms, bonds)
}

fn organic_atom(bytes: &[u8], pos: usize) -> Result<(ParsedAtom, usize), ChemError> {
    let c = bytes[pos];
    let next = bytes.get(pos + 1).copied();
    let unsupported = |symbol: &str| ChemError::UnsupportedElement {
        pos,
        symbol: symbol.to_string(),
    };
    let (element, aromatic) = match c {
        b'C' if next == Some(b'l') => return Err(unsupported("Cl")),
        b'B' if next == Some(b'r') => return Err(unsupported("Br")),
        b'C' => (Element::C, false),
        b'N' => (Element::N, false),
        b'O' => (Element::O, false),
        b'F' => (Element::F, false),
        b'c' => (Element::C, true),
        b'n' => (Element::N, true),
        b'o' => (Element::O, true),
        other => return Err(unsupported(&(other as char).to_string())),
    };
    Ok((
        ParsedAtom {
            element,
            aromatic,
            bracket_h: None,
        },
        1,
    ))
}

fn bracket_atom(bytes: &[u8], start: usize) -> Result<(ParsedAtom, usize), ChemError> {
    let mut pos = start + 1;
    let syntax = |pos: usize, msg: &str| ChemError::Syntax {
        pos,
        msg: msg.to_string(),
    };
    if bytes.get(pos).is_some_and(u8::is_ascii_digit) {
        return Err(ChemError::Isotope { pos });
    }
    let sym_start = pos;
    match bytes.get(pos) {
        Some(c) if c.is_ascii_uppercase() => {
            pos += 1;
            // Two-letter symbols like Cl, Si; a following `H` is a hydrogen count.
            if bytes.get(pos).is_some_and(|c| c.is_ascii_lowercase()) {
                pos += 1;
            }
        }
        Some(c) if c.is_ascii_lowercase() => {
            pos += 1;
            if bytes[sym_start] == b's' && bytes.get(pos) == Some(&b'e')
                || bytes[sym_start] == b'a' && bytes.get(pos) == Some(&b's')
            {
                pos += 1;
            }
        }
        _ => return Err(syntax(pos, "expected an element symbol")),
    }
    let symbol = std::str::from_utf8(&bytes[sym_start..pos]).unwrap_or("?");
    let (element, aromatic) = match symbol {
        "c" => (Element::C, true),
        "n" => (Element::N, true),
        "o" => (Element::O, true),
        s => match Element::from_symbol(s) {
            Some(e) => (e, false),
            None => {
                return Err(ChemError::UnsupportedElement {
                    pos: sym_start,
                    symbol: s.to_string(),
                })
            }
        },
    };
    if bytes.get(pos) == Some(&b'@') {
        return Err(ChemError::Stereo { pos, token: '@' });
    }
    let mut hcount = 0u8;
    if bytes.get(pos) == Some(&b'H') {
        pos += 1;
        hcount = 1;
        if let Some(d) = bytes.get(pos).filter(|c| c.is_ascii_digit()) {
            hcount = d - b'0';
            pos += 1;
        }
    }
    match bytes.get(pos) {
        Some(b'+') | Some(b'-') => return Err(ChemError::Charge { pos }),
        Some(b']') => {}
        Some(b':') => return Err(syntax(pos, "atom classes are not supported")),
        Some(_) => return Err(syntax(pos, "unexpected character in bracket atom")),
        None => return Err(syntax(pos, "unterminated bracket atom")),
    }
    pos += 1;
    Ok((
        ParsedAtom {
            element,
            aromatic,
            bracket_h: Some(hcount),
        },
        pos - start,
    ))
}

fn build_graph(atoms: Vec<ParsedAtom>, parsed: Vec<ParsedBond>) -> Result<MolGraph, ChemError> {
    let n = atoms.len();
    let mut bonds: Vec<Bond> = Vec::with_capacity(parsed.len());
    for pb in &parsed {
        if pb.i == pb.j {
            return Err(ChemError::Syntax {
                pos: pb.pos,
                msg: "ring closure onto the same atom".into(),
            });
        }
        let both_aromatic = atoms[pb.i].aromatic && atoms[pb.j].aromatic;
        let order = match pb.symbol {
            None if both_aromatic => BondOrder::Aromatic,
            None | Some(b'-') => BondOrder::Single,
            Some(b'=') => BondOrder::Double,
            Some(b'#') => BondOrder::Triple,
            Some(_) if both_aromatic => BondOrder::Aromatic,
            Some(_) => {
                return Err(ChemError::Syntax {
                    pos: pb.pos,
                    msg: "aromatic bond between non-aromatic atoms".into(),
                })
            }
        };
        let (i, j) = (pb.i.min(pb.j), pb.i.max(pb.j));
        if bonds.iter().any(|b| b.i == i && b.j == j) {
            return Err(ChemError::Syntax {
                pos: pb.pos,
                msg: "duplicate bond".into(),
            });
        }
        bonds.push(Bond { i, j, order });
    }

    // Hydrogen counts: aliphatic atoms are saturated; aromatic atoms take one
    // pi bond from the ring when their valence leaves room for it.
    let mut graph_atoms = Vec::with_capacity(n);
    for (a, pa) in atoms.iter().enumerate() {
        let max = pa.element.max_valence() as i32;
        let mut base = 0i32;
        let mut aromatic_bonds = 0;
        for b in bonds.iter().filter(|b| b.touches(a)) {
            match b.order.integer() {
                Some(o) => base += o as i32,
                None => {
                    base += 1;
                    aromatic_bonds += 1;
                }
            }
        }
        let valence_err = ChemError::Valence {
            atom: a,
            element: pa.element,
        };
        let explicit_h = pa.bracket_h.unwrap_or(0) as i32;
        let rem = max - base - explicit_h;
        if rem < 0 {
            return Err(valence_err);
        }
        let hydrogens = if aromatic_bonds == 0 {
            // Hydrogens are implicit everywhere: brackets only constrain valence.
            max - base
        } else if pa.bracket_h.is_some() {
            // A bracket aromatic atom with room left takes a ring pi bond.
            if rem >= 1 {
                max - base - 1
            } else {
                explicit_h
            }
        } else if rem >= 1 {
            rem - 1
        } else {
            0
        };
        graph_atoms.push(Atom {
            element: pa.element,
            hydrogens: hydrogens as u8,
        });
    }
    let g = MolGraph::from_parts(graph_atoms, bonds);
    if !g.is_connected() {
        return Err(ChemError::NotConnected);
    }
    // Fails on aromatic systems without a consistent alternating assignment.
    super::kekulize(&g)?;
    g.validate()?;
    Ok(g)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::chem::write_canonical_smiles;

    #[test]
    fn single_carbon() {
        let g = parse_smiles("C").unwrap();
        assert_eq!(g.atom_count(), 1);
        assert_eq!(g.bonds().len(), 0);
        assert_eq!(g.hydrogens(0), 4);
    }

    #[test]
    fn benzene_is_a_six_ring_of_aromatic_bonds() {
        let g = parse_smiles("c1ccccc1").unwrap();
        assert_eq!(g.atom_count(), 6);
        assert_eq!(g.bonds().len(), 6);
        assert!(g.bonds().iter().all(|b| b.order == BondOrder::Aromatic));
        assert!(g.ring_atoms().iter().all(|&r| r));
        assert!((0..6).all(|a| g.hydrogens(a) == 1));
    }

    #[test]
    fn caffeine_counts() {
        let g = parse_smiles("CN1C=NC2=C1C(=O)N(C(=O)N2C)C").unwrap();
        assert_eq!(g.atom_count(), 14);
        assert_eq!(g.bonds().len(), 15);
        // Cyclomatic number = rings for a connected graph.
        assert_eq!(g.bonds().len() + 1 - g.atom_count(), 2);
    }

    #[test]
    fn pyrrole_hydrogen_placement() {
        let g = parse_smiles("c1cc[nH]c1").unwrap();
        assert_eq!(g.hydrogens(3), 1);
        assert!(!g.needs_pi(3));
        assert!((0..5).filter(|&a| a != 3).all(|a| g.needs_pi(a)));
    }

    #[test]
    fn error_kinds() {
        assert!(matches!(parse_smiles("C(C"), Err(ChemError::Syntax { .. })));
        assert!(matches!(parse_smiles("C)C"), Err(ChemError::Syntax { pos: 1, .. })));
        assert!(matches!(parse_smiles("CCl"), Err(ChemError::UnsupportedElement { pos: 1, .. })));
        assert!(matches!(parse_smiles("CS"), Err(ChemError::UnsupportedElement { .. })));
        assert!(matches!(parse_smiles("[Na]"), Err(ChemError::UnsupportedElement { .. })));
        assert!(matches!(parse_smiles("C(F)(F)(F)(F)F"), Err(ChemError::Valence { atom: 0, .. })));
        assert!(matches!(parse_smiles("O=O=O"), Err(ChemError::Valence { .. })));
        assert_eq!(parse_smiles("C1CC"), Err(ChemError::UnmatchedRing { label: 1 }));
        assert_eq!(parse_smiles("C.C"), Err(ChemError::Disconnected { pos: 1 }));
        assert!(matches!(parse_smiles("[NH4+]"), Err(ChemError::Charge { .. })));
        assert!(matches!(parse_smiles("[13C]"), Err(ChemError::Isotope { .. })));
        assert!(matches!(parse_smiles("F/C=C/F"), Err(ChemError::Stereo { pos: 1, .. })));
        assert!(matches!(parse_smiles("[C@H](F)(O)N"), Err(ChemError::Stereo { .. })));
        assert!(matches!(parse_smiles(""), Err(ChemError::Syntax { pos: 0, .. })));
        assert!(matches!(parse_smiles("C1CCCC1="), Err(ChemError::Syntax { .. })));
        assert_eq!(parse_smiles("c1cccc1"), Err(ChemError::NotKekulizable));
    }

    #[test]
    fn ring_bond_symbols_and_percent_labels() {
        let a = parse_smiles("C=1CCCCC1").unwrap();
        let b = parse_smiles("C1CCCCC=1").unwrap();
        let c = parse_smiles("C%12CCCCC=%12").unwrap();
        assert_eq!(write_canonical_smiles(&a), write_canonical_smiles(&b));
        assert_eq!(write_canonical_smiles(&a), write_canonical_smiles(&c));
        assert!(parse_smiles("C=1CCCCC#1").is_err());
    }

    #[test]
    fn strip_stereo_removes_marks() {
        assert_eq!(strip_stereo("F/C=C\\F"), "FC=CF");
        assert_eq!(strip_stereo("[C@@H](F)(O)N"), "[CH](F)(O)N");
        assert!(parse_smiles(&strip_stereo("[C@@H](F)(O)N")).is_ok());
    }

    #[test]
    fn bracket_atoms() {
        let g = parse_smiles("[CH4]").unwrap();
        assert_eq!(g.hydrogens(0), 4);
        let h2 = parse_smiles("[H][H]").unwrap();
        assert_eq!(h2.atom_count(), 2);
        assert!(parse_smiles("[OH3]").is_err());
    }
}
