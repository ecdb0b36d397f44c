//! Restricted SMILES: kekulized organic-subset atoms `C N O F`, branches,
//! ring closures and explicit `-`, `=`, `#` bonds. The grammar is documented
//! in `docs/smiles-grammar.md`.

use std::collections::BTreeMap;

use thiserror::Error;

use super::{Atom, Bond, BondOrder, Element, GraphError, MolecularGraph};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum SmilesError {
    #[error("syntax error at position {position}: {message}")]
    Syntax { position: usize, message: String },
    #[error("unsupported element `{symbol}` at position {position}")]
    UnsupportedElement { position: usize, symbol: String },
    #[error("ring closure {label} opened at position {position} is never closed")]
    UnmatchedRingClosure { label: u32, position: usize },
    #[error("invalid molecule: {0}")]
    Graph(#[from] GraphError),
}

fn syntax(position: usize, message: impl Into<String>) -> SmilesError {
    SmilesError::Syntax {
        position,
        message: message.into(),
    }
}

struct OpenRing {
    atom: usize,
    order: Option<BondOrder>,
    position: usize,
}

/// Parses a restricted SMILES string into a validated graph.
pub fn parse_smiles(text: &str) -> Result<MolecularGraph, SmilesError> {
    let bytes = text.as_bytes();
    let mut atoms: Vec<Atom> = Vec::new();
    let mut bonds: Vec<Bond> = Vec::new();
    let mut branches: Vec<usize> = Vec::new();
    let mut rings: BTreeMap<u32, OpenRing> = BTreeMap::new();
    let mut prev: Option<usize> = None;
    let mut pending: Option<(BondOrder, usize)> = None;
    // Set right after '(' so that "()" is rejected.
    let mut branch_empty = false;

    let mut pos = 0;
    while pos < bytes.len() {
        let c = bytes[pos];
        match c {
            b'C' | b'N' | b'O' | b'F' => {
                if c == b'C' && matches!(bytes.get(pos + 1), Some(b'l')) {
                    return Err(SmilesError::UnsupportedElement {
                        position: pos,
                        symbol: "Cl".into(),
                    });
                }
                let element = Element::from_symbol(&(c as char).to_string()).expect("organic subset");
                let idx = atoms.len();
                atoms.push(Atom::new(element));
                if let Some(p) = prev {
                    let order = pending.take().map_or(BondOrder::Single, |(o, _)| o);
                    bonds.push(Bond { a: p, b: idx, order });
                } else if let Some((_, at)) = pending {
                    return Err(syntax(at, "bond without a preceding atom"));
                }
                prev = Some(idx);
                branch_empty = false;
                pos += 1;
            }
            b'-' | b'=' | b'#' => {
                if prev.is_none() {
                    return Err(syntax(pos, "bond without a preceding atom"));
                }
                if pending.is_some() {
                    return Err(syntax(pos, "two consecutive bond symbols"));
                }
                let order = match c {
                    b'-' => BondOrder::Single,
                    b'=' => BondOrder::Double,
                    _ => BondOrder::Triple,
                };
                pending = Some((order, pos));
                pos += 1;
            }
            b'(' => {
                let Some(p) = prev else {
                    return Err(syntax(pos, "branch without a preceding atom"));
                };
                if pending.is_some() {
                    return Err(syntax(pos, "bond symbol before branch"));
                }
                branches.push(p);
                branch_empty = true;
                pos += 1;
            }
            b')' => {
                if branch_empty {
                    return Err(syntax(pos, "empty branch"));
                }
                if pending.is_some() {
                    return Err(syntax(pos, "dangling bond at end of branch"));
                }
                let Some(p) = branches.pop() else {
                    return Err(syntax(pos, "unbalanced ')'"));
                };
                prev = Some(p);
                pos += 1;
            }
            b'1'..=b'9' | b'%' => {
                let start = pos;
                let label = if c == b'%' {
                    let digits = bytes.get(pos + 1..pos + 3).filter(|d| d.iter().all(u8::is_ascii_digit));
                    let Some(d) = digits else {
                        return Err(syntax(pos, "'%' must be followed by two digits"));
                    };
                    pos += 3;
                    u32::from(d[0] - b'0') * 10 + u32::from(d[1] - b'0')
                } else {
                    pos += 1;
                    u32::from(c - b'0')
                };
                let Some(p) = prev else {
                    return Err(syntax(start, "ring closure without a preceding atom"));
                };
                if branch_empty {
                    return Err(syntax(start, "ring closure at start of branch"));
                }
                let order = pending.take().map(|(o, _)| o);
                match rings.remove(&label) {
                    Some(open) => {
                        let order = match (open.order, order) {
                            (Some(x), Some(y)) if x != y => {
                                return Err(syntax(start, format!("conflicting bond orders for ring closure {label}")));
                            }
                            (x, y) => x.or(y).unwrap_or(BondOrder::Single),
                        };
                        bonds.push(Bond {
                            a: open.atom,
                            b: p,
                            order,
                        });
                    }
                    None => {
                        rings.insert(
                            label,
                            OpenRing {
                                atom: p,
                                order,
                                position: start,
                            },
                        );
                    }
                }
            }
            b'0' => return Err(syntax(pos, "ring closure label 0 is not supported")),
            b'[' => {
                return Err(SmilesError::UnsupportedElement {
                    position: pos,
                    symbol: "[...]".into(),
                })
            }
            b'.' => return Err(syntax(pos, "disconnected fragments are not supported")),
            c if c.is_ascii_alphabetic() => {
                let end = if c.is_ascii_uppercase() && bytes.get(pos + 1).is_some_and(u8::is_ascii_lowercase) {
                    pos + 2
                } else {
                    pos + 1
                };
                return Err(SmilesError::UnsupportedElement {
                    position: pos,
                    symbol: text[pos..end].to_string(),
                });
            }
            _ => {
                let ch = text[pos..].chars().next().unwrap_or('?');
                return Err(syntax(pos, format!("unexpected character `{ch}`")));
            }
        }
    }
    if atoms.is_empty() {
        return Err(syntax(0, "empty SMILES"));
    }
    if let Some((_, at)) = pending {
        return Err(syntax(at, "dangling bond at end of input"));
    }
    if !branches.is_empty() {
        return Err(syntax(bytes.len(), "unclosed branch"));
    }
    if let Some((&label, open)) = rings.iter().next() {
        return Err(SmilesError::UnmatchedRingClosure {
            label,
            position: open.position,
        });
    }
    Ok(MolecularGraph::new(atoms, bonds)?)
}

/// Canonical SMILES for `g`: isomorphic graphs yield identical strings.
pub fn write_smiles(g: &MolecularGraph) -> String {
    g.canonical_smiles().to_string()
}

/// Writes `g` by depth-first traversal from rank 0, visiting neighbors in rank order.
pub(crate) fn write_with_ranks(g: &MolecularGraph, ranks: &[usize]) -> String {
    let n = g.atom_count();
    let start = ranks.iter().position(|&r| r == 0).expect("rank 0 exists");
    let sorted_neighbors: Vec<Vec<(usize, BondOrder)>> = (0..n)
        .map(|i| {
            let mut nb = g.neighbors(i).to_vec();
            nb.sort_by_key(|&(j, _)| ranks[j]);
            nb
        })
        .collect();

    // Pass 1: spanning tree and ring-closure bonds.
    let mut visited = vec![false; n];
    let mut children: Vec<Vec<(usize, BondOrder)>> = vec![Vec::new(); n];
    // opener -> [(closer, order)] in discovery order
    let mut openings: Vec<Vec<(usize, BondOrder)>> = vec![Vec::new(); n];
    let mut closings: Vec<Vec<usize>> = vec![Vec::new(); n];
    let mut stack = vec![(start, usize::MAX, 0usize)];
    visited[start] = true;
    while let Some((u, parent, next)) = stack.pop() {
        if next >= sorted_neighbors[u].len() {
            continue;
        }
        stack.push((u, parent, next + 1));
        let (v, order) = sorted_neighbors[u][next];
        if v == parent {
            continue;
        }
        if !visited[v] {
            visited[v] = true;
            children[u].push((v, order));
            stack.push((v, u, 0));
        } else if !closings[v].contains(&u) && !openings[u].iter().any(|&(x, _)| x == v) {
            // v is an ancestor still on the stack; the bond closes a ring at u.
            openings[v].push((u, order));
            closings[u].push(v);
        }
    }

    // Pass 2: emission.
    let mut out = String::new();
    let mut in_use: Vec<bool> = Vec::new();
    let mut label_of: BTreeMap<(usize, usize), usize> = BTreeMap::new();
    emit(
        start,
        &children,
        &openings,
        &closings,
        g,
        &mut in_use,
        &mut label_of,
        &mut out,
    );
    out
}

#[allow(clippy::too_many_arguments)]
fn emit(
    u: usize,
    children: &[Vec<(usize, BondOrder)>],
    openings: &[Vec<(usize, BondOrder)>],
    closings: &[Vec<usize>],
    g: &MolecularGraph,
    in_use: &mut Vec<bool>,
    label_of: &mut BTreeMap<(usize, usize), usize>,
    out: &mut String,
) {
    out.push_str(g.element(u).symbol());
    let mut released = Vec::new();
    for &opener in &closings[u] {
        let label = label_of.remove(&(opener, u)).expect("ring opened before close");
        push_label(out, label);
        released.push(label);
    }
    for &(closer, order) in &openings[u] {
        let label = match in_use.iter().position(|&b| !b) {
            Some(free) => free,
            None => {
                in_use.push(false);
                in_use.len() - 1
            }
        };
        in_use[label] = true;
        label_of.insert((u, closer), label);
        out.push_str(order.smiles_symbol());
        push_label(out, label);
    }
    for label in released {
        in_use[label] = false;
    }
    let kids = &children[u];
    for (k, &(v, order)) in kids.iter().enumerate() {
        let last = k + 1 == kids.len();
        if !last {
            out.push('(');
        }
        out.push_str(order.smiles_symbol());
        emit(v, children, openings, closings, g, in_use, label_of, out);
        if !last {
            out.push(')');
        }
    }
}

fn push_label(out: &mut String, slot: usize) {
    let label = slot + 1;
    if label < 10 {
        out.push(char::from(b'0' + label as u8));
    } else {
        out.push_str(&format!("%{label:02}"));
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn single_atom() {
        let g = parse_smiles("C").unwrap();
        assert_eq!(g.atom_count(), 1);
        assert_eq!(g.bond_count(), 0);
        assert_eq!(write_smiles(&g), "C");
    }

    #[test]
    fn kekule_benzene() {
        let g = parse_smiles("C1=CC=CC=C1").unwrap();
        assert_eq!(g.atom_count(), 6);
        assert_eq!(g.bond_count(), 6);
        // ring walk 0-1-2-3-4-5-0
        let orders: Vec<u8> = (0..6)
            .map(|i| g.bond_between(i, (i + 1) % 6).unwrap().value())
            .collect();
        assert_eq!(orders, vec![2, 1, 2, 1, 2, 1]);
    }

    #[test]
    fn valence_violation() {
        assert!(matches!(
            parse_smiles("O(C)(C)C"),
            Err(SmilesError::Graph(GraphError::ValenceExceeded {
                element: Element::O,
                bonds: 3,
                ..
            }))
        ));
    }

    #[test]
    fn errors_report_positions() {
        assert_eq!(
            parse_smiles("CC(=O"),
            Err(SmilesError::Syntax {
                position: 5,
                message: "unclosed branch".into()
            })
        );
        assert!(matches!(
            parse_smiles("C1CC"),
            Err(SmilesError::UnmatchedRingClosure { label: 1, position: 1 })
        ));
        assert!(matches!(
            parse_smiles("CCl"),
            Err(SmilesError::UnsupportedElement { position: 1, .. })
        ));
        assert!(matches!(
            parse_smiles("c1ccccc1"),
            Err(SmilesError::UnsupportedElement { position: 0, .. })
        ));
        assert!(matches!(parse_smiles("CS"), Err(SmilesError::UnsupportedElement { position: 1, .. })));
        assert!(matches!(parse_smiles("[NH4+]"), Err(SmilesError::UnsupportedElement { .. })));
        assert!(matches!(parse_smiles("C=(C)C"), Err(SmilesError::Syntax { position: 2, .. })));
        assert!(matches!(parse_smiles("C()"), Err(SmilesError::Syntax { position: 2, .. })));
        assert!(matches!(parse_smiles("C.C"), Err(SmilesError::Syntax { position: 1, .. })));
        assert!(matches!(parse_smiles("=C"), Err(SmilesError::Syntax { position: 0, .. })));
        assert!(matches!(parse_smiles("CC="), Err(SmilesError::Syntax { position: 2, .. })));
        assert!(matches!(parse_smiles(""), Err(SmilesError::Syntax { .. })));
        assert!(matches!(parse_smiles("C11"), Err(SmilesError::Graph(GraphError::SelfLoop { .. }))));
        assert!(matches!(
            parse_smiles("C12CC12"),
            Err(SmilesError::Graph(GraphError::DuplicateBond { .. }))
        ));
        assert!(matches!(parse_smiles("C=1CC-1"), Err(SmilesError::Syntax { .. })));
    }

    #[test]
    fn ring_bond_symbol_on_either_side() {
        let a = parse_smiles("C=1CCC1").unwrap();
        let b = parse_smiles("C1CCC=1").unwrap();
        assert_eq!(a.canonical_smiles(), b.canonical_smiles());
        assert_eq!(a.bond_between(0, 3), Some(BondOrder::Double));
    }

    #[test]
    fn two_digit_ring_labels() {
        let a = parse_smiles("C%12CC%12").unwrap();
        assert_eq!(a.canonical_smiles(), parse_smiles("C1CC1").unwrap().canonical_smiles());
    }

    #[test]
    fn isomorphic_encodings_agree() {
        assert_eq!(
            write_smiles(&parse_smiles("CCO").unwrap()),
            write_smiles(&parse_smiles("OCC").unwrap())
        );
    }

    #[test]
    fn benzene_from_every_start_atom() {
        let rotations = [
            "C1=CC=CC=C1",
            "C=1C=CC=CC=1",
            "C1C=CC=CC=1",
            "C=1C=CC=CC1",
            "C1=CC=CC=C1",
            "C(C=C1)=CC=C1",
        ];
        let reference = write_smiles(&parse_smiles(rotations[0]).unwrap());
        for r in rotations {
            assert_eq!(write_smiles(&parse_smiles(r).unwrap()), reference, "{r}");
        }
        // and by explicit relabeling of all six rotations
        let g = parse_smiles("C1=CC=CC=C1").unwrap();
        for shift in 0..6 {
            let perm: Vec<usize> = (0..6).map(|i| (i + shift) % 6).collect();
            assert_eq!(write_smiles(&g.permuted(&perm)), reference);
        }
    }

    #[test]
    fn writer_output_parses_back() {
        for s in ["CC(=O)O", "C1CC2CCC1C2", "N#CC(F)(F)F", "C1CC1C1CCC1", "O=C1C=CC(=O)C=C1"] {
            let g = parse_smiles(s).unwrap();
            let written = write_smiles(&g);
            let back = parse_smiles(&written).unwrap();
            assert_eq!(back.canonical_smiles(), written, "{s}");
        }
    }
}
