//! Molecular graphs over a small heavy-atom alphabet.
//!
//! Hydrogens are always implicit: the difference between an atom's maximum
//! valence and the sum of its incident bond orders is its hydrogen count.
//! Every [`MolecularGraph`] is validated on construction and immutable
//! afterwards, so downstream code can rely on the invariants:
//!
//! - at least one atom, connected
//! - no self-loops, no duplicate bonds, bonds stored with `a < b`
//! - incident bond-order sum never exceeds the element's maximum valence
//!
//! The submodules provide the restricted SMILES reader/writer, canonical
//! ordering, Morgan fingerprints and Murcko-style scaffolds.

mod canon;
mod fingerprint;
mod scaffold;
mod smiles;

use std::collections::VecDeque;
use std::fmt;
use std::sync::OnceLock;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use fingerprint::{
    morgan_fingerprint, tanimoto_distance, Fingerprint, FingerprintError, DEFAULT_FINGERPRINT_BITS,
    DEFAULT_FINGERPRINT_RADIUS,
};
pub use scaffold::{murcko_scaffold, ACYCLIC_SCAFFOLD};
pub use smiles::{parse_smiles, write_smiles, SmilesError};

/// Width of a node feature row: one-hot element, atomic weight, formal charge.
pub const NODE_FEATURES: usize = Element::ALL.len() + 2;
/// Width of an edge feature row: one-hot bond order.
pub const EDGE_FEATURES: usize = BondOrder::ALL.len();

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Element {
    C,
    N,
    O,
    F,
}

impl Element {
    pub const ALL: [Element; 4] = [Element::C, Element::N, Element::O, Element::F];

    pub fn symbol(self) -> &'static str {
        match self {
            Element::C => "C",
            Element::N => "N",
            Element::O => "O",
            Element::F => "F",
        }
    }

    pub fn from_symbol(symbol: &str) -> Option<Self> {
        Element::ALL.into_iter().find(|e| e.symbol() == symbol)
    }

    pub fn max_valence(self) -> u8 {
        match self {
            Element::C => 4,
            Element::N => 3,
            Element::O => 2,
            Element::F => 1,
        }
    }

    /// Standard atomic weight in g/mol.
    pub fn atomic_weight(self) -> f64 {
        match self {
            Element::C => 12.011,
            Element::N => 14.007,
            Element::O => 15.999,
            Element::F => 18.998,
        }
    }

    /// Position in [`Element::ALL`], used for one-hot encodings.
    pub fn index(self) -> usize {
        self as usize
    }
}

impl fmt::Display for Element {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.symbol())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum BondOrder {
    Single = 1,
    Double = 2,
    Triple = 3,
}

impl BondOrder {
    pub const ALL: [BondOrder; 3] = [BondOrder::Single, BondOrder::Double, BondOrder::Triple];

    pub fn value(self) -> u8 {
        self as u8
    }

    pub fn from_value(order: u8) -> Option<Self> {
        match order {
            1 => Some(BondOrder::Single),
            2 => Some(BondOrder::Double),
            3 => Some(BondOrder::Triple),
            _ => None,
        }
    }

    pub fn index(self) -> usize {
        self as usize - 1
    }

    /// SMILES bond symbol; single bonds are written implicitly.
    pub fn smiles_symbol(self) -> &'static str {
        match self {
            BondOrder::Single => "",
            BondOrder::Double => "=",
            BondOrder::Triple => "#",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Atom {
    pub element: Element,
    /// Always zero for the supported chemistry; kept so feature rows carry a charge column.
    pub charge: i8,
}

impl Atom {
    pub fn new(element: Element) -> Self {
        Atom { element, charge: 0 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Bond {
    pub a: usize,
    pub b: usize,
    pub order: BondOrder,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum GraphError {
    #[error("graph has no atoms")]
    Empty,
    #[error("bond references atom {atom} but graph has {atoms} atoms")]
    AtomOutOfRange { atom: usize, atoms: usize },
    #[error("self-loop on atom {atom}")]
    SelfLoop { atom: usize },
    #[error("duplicate bond between atoms {a} and {b}")]
    DuplicateBond { a: usize, b: usize },
    #[error("atom {atom} ({element}) has bond-order sum {bonds}, exceeding valence {max}")]
    ValenceExceeded {
        atom: usize,
        element: Element,
        bonds: u8,
        max: u8,
    },
    #[error("charged atoms are not supported (atom {atom} has charge {charge})")]
    Charged { atom: usize, charge: i8 },
    #[error("graph is not connected")]
    Disconnected,
}

/// A validated, connected molecular graph with implicit hydrogens.
#[derive(Clone)]
pub struct MolecularGraph {
    atoms: Vec<Atom>,
    bonds: Vec<Bond>,
    adjacency: Vec<Vec<(usize, BondOrder)>>,
    canonical: OnceLock<canon::Canonical>,
}

impl MolecularGraph {
    /// Validates and builds a graph. Bond endpoints may be given in either order.
    pub fn new(atoms: Vec<Atom>, bonds: Vec<Bond>) -> Result<Self, GraphError> {
        if atoms.is_empty() {
            return Err(GraphError::Empty);
        }
        for (i, atom) in atoms.iter().enumerate() {
            if atom.charge != 0 {
                return Err(GraphError::Charged {
                    atom: i,
                    charge: atom.charge,
                });
            }
        }
        let n = atoms.len();
        let mut adjacency: Vec<Vec<(usize, BondOrder)>> = vec![Vec::new(); n];
        let mut normalized = Vec::with_capacity(bonds.len());
        for bond in bonds {
            let (a, b) = if bond.a <= bond.b {
                (bond.a, bond.b)
            } else {
                (bond.b, bond.a)
            };
            if b >= n {
                return Err(GraphError::AtomOutOfRange { atom: b, atoms: n });
            }
            if a == b {
                return Err(GraphError::SelfLoop { atom: a });
            }
            if adjacency[a].iter().any(|&(x, _)| x == b) {
                return Err(GraphError::DuplicateBond { a, b });
            }
            adjacency[a].push((b, bond.order));
            adjacency[b].push((a, bond.order));
            normalized.push(Bond {
                a,
                b,
                order: bond.order,
            });
        }
        for (i, atom) in atoms.iter().enumerate() {
            let used: u8 = adjacency[i].iter().map(|&(_, o)| o.value()).sum();
            let max = atom.element.max_valence();
            if used > max {
                return Err(GraphError::ValenceExceeded {
                    atom: i,
                    element: atom.element,
                    bonds: used,
                    max,
                });
            }
        }
        for list in &mut adjacency {
            list.sort_unstable();
        }
        let graph = MolecularGraph {
            atoms,
            bonds: normalized,
            adjacency,
            canonical: OnceLock::new(),
        };
        if !graph.is_connected_without(None) {
            return Err(GraphError::Disconnected);
        }
        Ok(graph)
    }

    /// Single heavy atom with implicit hydrogens.
    pub fn single_atom(element: Element) -> Self {
        MolecularGraph::new(vec![Atom::new(element)], Vec::new())
            .expect("single atom is always valid")
    }

    pub fn atom_count(&self) -> usize {
        self.atoms.len()
    }

    pub fn bond_count(&self) -> usize {
        self.bonds.len()
    }

    pub fn atoms(&self) -> &[Atom] {
        &self.atoms
    }

    pub fn bonds(&self) -> &[Bond] {
        &self.bonds
    }

    pub fn element(&self, atom: usize) -> Element {
        self.atoms[atom].element
    }

    /// Neighbors of `atom` with the connecting bond order, sorted by neighbor index.
    pub fn neighbors(&self, atom: usize) -> &[(usize, BondOrder)] {
        &self.adjacency[atom]
    }

    pub fn degree(&self, atom: usize) -> usize {
        self.adjacency[atom].len()
    }

    pub fn bond_order_sum(&self, atom: usize) -> u8 {
        self.adjacency[atom].iter().map(|&(_, o)| o.value()).sum()
    }

    /// Remaining valence, filled by implicit hydrogens.
    pub fn implicit_hydrogens(&self, atom: usize) -> u8 {
        self.atoms[atom].element.max_valence() - self.bond_order_sum(atom)
    }

    pub fn bond_between(&self, a: usize, b: usize) -> Option<BondOrder> {
        self.adjacency[a]
            .iter()
            .find(|&&(x, _)| x == b)
            .map(|&(_, o)| o)
    }

    /// Node feature rows: `[one-hot element | atomic weight | formal charge]`.
    pub fn node_features(&self) -> Vec<[f64; NODE_FEATURES]> {
        self.atoms
            .iter()
            .map(|atom| {
                let mut row = [0.0; NODE_FEATURES];
                row[atom.element.index()] = 1.0;
                row[Element::ALL.len()] = atom.element.atomic_weight();
                row[Element::ALL.len() + 1] = f64::from(atom.charge);
                row
            })
            .collect()
    }

    /// Edge feature rows (one-hot bond order), aligned with [`MolecularGraph::bonds`].
    pub fn edge_features(&self) -> Vec<[f64; EDGE_FEATURES]> {
        self.bonds
            .iter()
            .map(|bond| {
                let mut row = [0.0; EDGE_FEATURES];
                row[bond.order.index()] = 1.0;
                row
            })
            .collect()
    }

    /// Relabels atoms so that old atom `i` becomes new atom `perm[i]`.
    pub fn permuted(&self, perm: &[usize]) -> MolecularGraph {
        assert_eq!(perm.len(), self.atom_count(), "permutation length");
        let mut atoms = vec![Atom::new(Element::C); self.atom_count()];
        for (old, &new) in perm.iter().enumerate() {
            atoms[new] = self.atoms[old];
        }
        let bonds = self
            .bonds
            .iter()
            .map(|b| Bond {
                a: perm[b.a],
                b: perm[b.b],
                order: b.order,
            })
            .collect();
        MolecularGraph::new(atoms, bonds).expect("relabeling preserves validity")
    }

    /// Induced subgraph on `keep` (in the given order). Fails if the result is disconnected.
    pub fn induced_subgraph(&self, keep: &[usize]) -> Result<MolecularGraph, GraphError> {
        let mut remap = vec![usize::MAX; self.atom_count()];
        for (new, &old) in keep.iter().enumerate() {
            remap[old] = new;
        }
        let atoms = keep.iter().map(|&i| self.atoms[i]).collect();
        let bonds = self
            .bonds
            .iter()
            .filter(|b| remap[b.a] != usize::MAX && remap[b.b] != usize::MAX)
            .map(|b| Bond {
                a: remap[b.a],
                b: remap[b.b],
                order: b.order,
            })
            .collect();
        MolecularGraph::new(atoms, bonds)
    }

    /// True when the bond `a-b` lies on a cycle, i.e. removing it keeps the graph connected.
    pub fn is_ring_bond(&self, a: usize, b: usize) -> bool {
        self.bond_between(a, b).is_some() && self.is_connected_without(Some((a, b)))
    }

    /// Per-atom ring membership.
    pub fn ring_atoms(&self) -> Vec<bool> {
        let mut in_ring = vec![false; self.atom_count()];
        for bond in &self.bonds {
            if self.is_ring_bond(bond.a, bond.b) {
                in_ring[bond.a] = true;
                in_ring[bond.b] = true;
            }
        }
        in_ring
    }

    /// Canonical SMILES; identical for all isomorphic graphs.
    pub fn canonical_smiles(&self) -> &str {
        &self.canonical().smiles
    }

    /// Atom indices in canonical order: `canonical_order()[r]` is the atom of rank `r`.
    pub fn canonical_order(&self) -> &[usize] {
        &self.canonical().order
    }

    fn canonical(&self) -> &canon::Canonical {
        self.canonical.get_or_init(|| canon::canonicalize(self))
    }

    fn is_connected_without(&self, skip: Option<(usize, usize)>) -> bool {
        let n = self.atom_count();
        let mut seen = vec![false; n];
        let mut queue = VecDeque::from([0usize]);
        seen[0] = true;
        let mut count = 1;
        while let Some(u) = queue.pop_front() {
            for &(v, _) in &self.adjacency[u] {
                if let Some((a, b)) = skip {
                    if (u == a && v == b) || (u == b && v == a) {
                        continue;
                    }
                }
                if !seen[v] {
                    seen[v] = true;
                    count += 1;
                    queue.push_back(v);
                }
            }
        }
        count == n
    }
}

impl PartialEq for MolecularGraph {
    /// Structural equality of the labeled graph (not isomorphism; compare
    /// [`MolecularGraph::canonical_smiles`] for that).
    fn eq(&self, other: &Self) -> bool {
        self.atoms == other.atoms && {
            let mut x = self.bonds.clone();
            let mut y = other.bonds.clone();
            x.sort_unstable();
            y.sort_unstable();
            x == y
        }
    }
}

impl Eq for MolecularGraph {}

impl fmt::Debug for MolecularGraph {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("MolecularGraph")
            .field("smiles", &write_smiles(self))
            .field("atoms", &self.atoms.len())
            .field("bonds", &self.bonds.len())
            .finish()
    }
}

impl fmt::Display for MolecularGraph {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.canonical_smiles())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn carbon_chain(n: usize) -> MolecularGraph {
        let atoms = vec![Atom::new(Element::C); n];
        let bonds = (1..n)
            .map(|i| Bond {
                a: i - 1,
                b: i,
                order: BondOrder::Single,
            })
            .collect();
        MolecularGraph::new(atoms, bonds).unwrap()
    }

    #[test]
    fn implicit_hydrogens_fill_valence() {
        let propane = carbon_chain(3);
        assert_eq!(propane.implicit_hydrogens(0), 3);
        assert_eq!(propane.implicit_hydrogens(1), 2);
    }

    #[test]
    fn rejects_invalid_graphs() {
        let c = Atom::new(Element::C);
        let single = |a, b| Bond {
            a,
            b,
            order: BondOrder::Single,
        };
        assert_eq!(MolecularGraph::new(vec![], vec![]), Err(GraphError::Empty));
        assert_eq!(
            MolecularGraph::new(vec![c], vec![single(0, 0)]),
            Err(GraphError::SelfLoop { atom: 0 })
        );
        assert_eq!(
            MolecularGraph::new(vec![c, c], vec![single(0, 1), single(1, 0)]),
            Err(GraphError::DuplicateBond { a: 0, b: 1 })
        );
        assert_eq!(
            MolecularGraph::new(vec![c, c], vec![]),
            Err(GraphError::Disconnected)
        );
        let f = Atom::new(Element::F);
        assert!(matches!(
            MolecularGraph::new(vec![f, f, f], vec![single(0, 1), single(1, 2)]),
            Err(GraphError::ValenceExceeded { atom: 1, .. })
        ));
        let charged = Atom {
            element: Element::N,
            charge: 1,
        };
        assert!(matches!(
            MolecularGraph::new(vec![charged], vec![]),
            Err(GraphError::Charged { .. })
        ));
    }

    #[test]
    fn feature_rows() {
        let g = parse_smiles("C=O").unwrap();
        let nodes = g.node_features();
        assert_eq!(nodes[0], [1.0, 0.0, 0.0, 0.0, 12.011, 0.0]);
        assert_eq!(nodes[1], [0.0, 0.0, 1.0, 0.0, 15.999, 0.0]);
        assert_eq!(g.edge_features(), vec![[0.0, 1.0, 0.0]]);
    }

    #[test]
    fn ring_membership() {
        let g = parse_smiles("CC1CC1").unwrap();
        assert_eq!(g.ring_atoms(), vec![false, true, true, true]);
        assert!(!g.is_ring_bond(0, 1));
        assert!(g.is_ring_bond(1, 2));
    }
}
