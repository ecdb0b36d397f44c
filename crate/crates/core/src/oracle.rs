//! Deterministic ground-truth property: an additive, Crippen-style logP over
//! a reduced atom typing, plus synthetic dataset generation by random edit
//! walks.
//!
//! Atom classes depend only on the atom's element, its bonded neighbors and
//! its implicit hydrogen count:
//!
//! | class | definition |
//! |---|---|
//! | C1 | sp3 carbon, no N/O/F neighbor, at least 2 H |
//! | C2 | sp3 carbon, no N/O/F neighbor, at most 1 H |
//! | C3 | sp3 carbon with an N/O/F neighbor, at least 2 H |
//! | C4 | sp3 carbon with an N/O/F neighbor, at most 1 H |
//! | C5 | carbon with a double or triple bond to N/O |
//! | C6 | carbon with a C=C double bond (and no multiple bond to N/O) |
//! | C7 | carbon with a C#C triple bond (and no multiple bond to N/O) |
//! | N1 / N2 / N3 | singly bonded nitrogen with ≥2 / 1 / 0 H |
//! | N4 | nitrogen with a double bond |
//! | N5 | nitrogen with a triple bond |
//! | O1 / O2 | singly bonded oxygen with ≥1 / 0 H |
//! | O3 | oxygen double-bonded to carbon |
//! | O4 | oxygen double-bonded to N or O |
//! | F1 | fluorine |
//!
//! Every implicit hydrogen adds the `H` contribution. Constants ship in
//! `data/atom_contributions.v1.txt`.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::str::FromStr;
use std::sync::OnceLock;

use rand::Rng;
use thiserror::Error;

use crate::counterfactual::{valid_edits, EditGrammar, EditKind};
use crate::molgraph::{parse_smiles, BondOrder, Element, MolecularGraph};

const BUILTIN_TABLE: &str = include_str!("../data/atom_contributions.v1.txt");

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum AtomClass {
    C1,
    C2,
    C3,
    C4,
    C5,
    C6,
    C7,
    N1,
    N2,
    N3,
    N4,
    N5,
    O1,
    O2,
    O3,
    O4,
    F1,
}

impl AtomClass {
    pub const ALL: [AtomClass; 17] = [
        AtomClass::C1,
        AtomClass::C2,
        AtomClass::C3,
        AtomClass::C4,
        AtomClass::C5,
        AtomClass::C6,
        AtomClass::C7,
        AtomClass::N1,
        AtomClass::N2,
        AtomClass::N3,
        AtomClass::N4,
        AtomClass::N5,
        AtomClass::O1,
        AtomClass::O2,
        AtomClass::O3,
        AtomClass::O4,
        AtomClass::F1,
    ];

    pub fn name(self) -> &'static str {
        match self {
            AtomClass::C1 => "C1",
            AtomClass::C2 => "C2",
            AtomClass::C3 => "C3",
            AtomClass::C4 => "C4",
            AtomClass::C5 => "C5",
            AtomClass::C6 => "C6",
            AtomClass::C7 => "C7",
            AtomClass::N1 => "N1",
            AtomClass::N2 => "N2",
            AtomClass::N3 => "N3",
            AtomClass::N4 => "N4",
            AtomClass::N5 => "N5",
            AtomClass::O1 => "O1",
            AtomClass::O2 => "O2",
            AtomClass::O3 => "O3",
            AtomClass::O4 => "O4",
            AtomClass::F1 => "F1",
        }
    }
}

impl fmt::Display for AtomClass {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for AtomClass {
    type Err = ();

    fn from_str(s: &str) -> Result<Self, ()> {
        AtomClass::ALL.into_iter().find(|c| c.name() == s).ok_or(())
    }
}

/// Types atom `i` of `g`.
pub fn classify(g: &MolecularGraph, i: usize) -> AtomClass {
    let hetero = |e: Element| e != Element::C;
    let nbrs = g.neighbors(i);
    let h = g.implicit_hydrogens(i);
    let has_order = |o: BondOrder| nbrs.iter().any(|&(_, x)| x == o);
    match g.element(i) {
        Element::C => {
            let multiple_to_hetero = nbrs
                .iter()
                .any(|&(j, o)| o != BondOrder::Single && hetero(g.element(j)));
            if multiple_to_hetero {
                AtomClass::C5
            } else if has_order(BondOrder::Triple) {
                AtomClass::C7
            } else if has_order(BondOrder::Double) {
                AtomClass::C6
            } else {
                let hetero_nbr = nbrs.iter().any(|&(j, _)| hetero(g.element(j)));
                match (hetero_nbr, h >= 2) {
                    (false, true) => AtomClass::C1,
                    (false, false) => AtomClass::C2,
                    (true, true) => AtomClass::C3,
                    (true, false) => AtomClass::C4,
                }
            }
        }
        Element::N => {
            if has_order(BondOrder::Triple) {
                AtomClass::N5
            } else if has_order(BondOrder::Double) {
                AtomClass::N4
            } else {
                match h {
                    0 => AtomClass::N3,
                    1 => AtomClass::N2,
                    _ => AtomClass::N1,
                }
            }
        }
        Element::O => match nbrs.iter().find(|&&(_, o)| o == BondOrder::Double) {
            Some(&(j, _)) if g.element(j) == Element::C => AtomClass::O3,
            Some(_) => AtomClass::O4,
            None if h >= 1 => AtomClass::O1,
            None => AtomClass::O2,
        },
        Element::F => AtomClass::F1,
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum TableError {
    #[error("line {line}: expected `class contribution`")]
    Malformed { line: usize },
    #[error("line {line}: unknown atom class `{name}`")]
    UnknownClass { line: usize, name: String },
    #[error("line {line}: `{name}` listed twice")]
    Duplicate { line: usize, name: String },
    #[error("line {line}: contribution is not a finite number")]
    BadValue { line: usize },
    #[error("table is missing class `{0}`")]
    Missing(String),
}

/// Per-class contributions plus the per-hydrogen contribution.
#[derive(Debug, Clone, PartialEq)]
pub struct ContributionTable {
    classes: BTreeMap<AtomClass, f64>,
    hydrogen: f64,
}

impl ContributionTable {
    /// The versioned table shipped with the crate.
    pub fn builtin() -> &'static ContributionTable {
        static TABLE: OnceLock<ContributionTable> = OnceLock::new();
        TABLE.get_or_init(|| ContributionTable::parse(BUILTIN_TABLE).expect("builtin table is valid"))
    }

    pub fn parse(text: &str) -> Result<Self, TableError> {
        let mut classes = BTreeMap::new();
        let mut hydrogen = None;
        for (idx, raw) in text.lines().enumerate() {
            let line = idx + 1;
            let content = raw.split('#').next().unwrap_or("").trim();
            if content.is_empty() {
                continue;
            }
            let mut fields = content.split_whitespace();
            let (Some(name), Some(value), None) = (fields.next(), fields.next(), fields.next()) else {
                return Err(TableError::Malformed { line });
            };
            let value: f64 = value
                .parse()
                .ok()
                .filter(|v: &f64| v.is_finite())
                .ok_or(TableError::BadValue { line })?;
            let duplicate = || TableError::Duplicate {
                line,
                name: name.to_string(),
            };
            if name == "H" {
                if hydrogen.replace(value).is_some() {
                    return Err(duplicate());
                }
                continue;
            }
            let class: AtomClass = name.parse().map_err(|_| TableError::UnknownClass {
                line,
                name: name.to_string(),
            })?;
            if classes.insert(class, value).is_some() {
                return Err(duplicate());
            }
        }
        for class in AtomClass::ALL {
            if !classes.contains_key(&class) {
                return Err(TableError::Missing(class.name().to_string()));
            }
        }
        Ok(ContributionTable {
            classes,
            hydrogen: hydrogen.ok_or_else(|| TableError::Missing("H".into()))?,
        })
    }

    pub fn class_contribution(&self, class: AtomClass) -> f64 {
        self.classes[&class]
    }

    pub fn hydrogen_contribution(&self) -> f64 {
        self.hydrogen
    }

    /// Contribution of atom `i` including its implicit hydrogens.
    pub fn atom_contribution(&self, g: &MolecularGraph, i: usize) -> f64 {
        self.class_contribution(classify(g, i)) + f64::from(g.implicit_hydrogens(i)) * self.hydrogen
    }

    /// Additive logP. Atoms are summed in canonical order so relabeled graphs
    /// give bit-identical values.
    pub fn logp(&self, g: &MolecularGraph) -> f64 {
        g.canonical_order()
            .iter()
            .map(|&i| self.atom_contribution(g, i))
            .sum()
    }
}

/// Additive logP under the builtin table.
pub fn crippen_logp(g: &MolecularGraph) -> f64 {
    ContributionTable::builtin().logp(g)
}

/// A graph with its oracle label.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledSample {
    pub graph: MolecularGraph,
    pub y: f64,
}

impl LabeledSample {
    /// Labels `graph` with the oracle.
    pub fn from_graph(graph: MolecularGraph) -> Self {
        let y = crippen_logp(&graph);
        LabeledSample { graph, y }
    }

    pub fn smiles(&self) -> &str {
        self.graph.canonical_smiles()
    }
}

/// Seed molecules for dataset synthesis.
pub fn default_seeds() -> Vec<MolecularGraph> {
    [
        "C",
        "CCO",
        "CC(=O)O",
        "CC(N)=O",
        "C1=CC=CC=C1",
        "C1=CC=NC=C1",
        "C1CCCCC1",
        "CC(=O)OC",
        "CCCCCCCCO",
        "CCN(CC)CC",
        "OCC1OC(O)C(O)C(O)C1O",
        "FC(F)(F)C1=CC=CC=C1",
        "CC(=O)NC1=CC=C(O)C=C1",
        "C1=CC=C2C=CC=CC2=C1",
        "C1=CC=C(C=C1)C1=CC=CC=C1",
        "CC(=O)OC1=CC=CC=C1C(=O)O",
        "CC(C)CC1=CC=C(C=C1)C(C)C(=O)O",
    ]
    .iter()
    .map(|s| parse_smiles(s).expect("seed SMILES are valid"))
    .collect()
}

/// Random walk of `steps` valid single edits. Each step picks an edit kind
/// uniformly among kinds that currently have a valid edit, then an edit of
/// that kind uniformly. Stops early if no edit is possible.
pub fn random_molecule<R: Rng + ?Sized>(seed: &MolecularGraph, steps: usize, rng: &mut R) -> MolecularGraph {
    let grammar = EditGrammar::default();
    let mut current = seed.clone();
    for _ in 0..steps {
        let mut by_kind: BTreeMap<EditKind, Vec<_>> = BTreeMap::new();
        for op in valid_edits(&current, &grammar) {
            by_kind.entry(op.kind()).or_default().push(op);
        }
        if by_kind.is_empty() {
            break;
        }
        let kinds: Vec<_> = by_kind.values().collect();
        let ops = kinds[rng.random_range(0..kinds.len())];
        let op = &ops[rng.random_range(0..ops.len())];
        current = op.apply(&current).expect("valid_edits only yields applicable edits");
    }
    current
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum DatasetError {
    #[error("no seed molecules given")]
    NoSeeds,
    #[error("only {found} of {requested} unique molecules after {attempts} attempts")]
    InsufficientDiversity {
        requested: usize,
        found: usize,
        attempts: usize,
    },
}

/// `n` unique (by canonical SMILES) oracle-labeled molecules from random
/// walks of `0..=max_steps` edits starting at a uniformly chosen seed.
pub fn generate_dataset<R: Rng + ?Sized>(
    seeds: &[MolecularGraph],
    n: usize,
    max_steps: usize,
    rng: &mut R,
) -> Result<Vec<LabeledSample>, DatasetError> {
    if seeds.is_empty() {
        return Err(DatasetError::NoSeeds);
    }
    let max_attempts = 100 * n + 1000;
    let mut seen = BTreeSet::new();
    let mut out = Vec::with_capacity(n);
    let mut attempts = 0;
    while out.len() < n {
        if attempts == max_attempts {
            return Err(DatasetError::InsufficientDiversity {
                requested: n,
                found: out.len(),
                attempts,
            });
        }
        attempts += 1;
        let seed = &seeds[rng.random_range(0..seeds.len())];
        let steps = rng.random_range(0..=max_steps);
        let graph = random_molecule(seed, steps, rng);
        if seen.insert(graph.canonical_smiles().to_string()) {
            out.push(LabeledSample::from_graph(graph));
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::counterfactual::enumerate_1_edit;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn table() -> &'static ContributionTable {
        ContributionTable::builtin()
    }

    #[test]
    fn builtin_table_is_pinned() {
        let t = table();
        let expected = [
            (AtomClass::C1, 0.1441),
            (AtomClass::C2, 0.0),
            (AtomClass::C3, -0.2035),
            (AtomClass::C4, -0.2051),
            (AtomClass::C5, -0.2783),
            (AtomClass::C6, 0.1551),
            (AtomClass::C7, 0.0017),
            (AtomClass::N1, -1.0190),
            (AtomClass::N2, -0.7096),
            (AtomClass::N3, -0.3187),
            (AtomClass::N4, -0.4806),
            (AtomClass::N5, -0.3239),
            (AtomClass::O1, -0.2893),
            (AtomClass::O2, -0.0684),
            (AtomClass::O3, -0.1526),
            (AtomClass::O4, 0.1129),
            (AtomClass::F1, 0.4202),
        ];
        for (class, value) in expected {
            assert_eq!(t.class_contribution(class).to_bits(), f64::to_bits(value), "{class}");
        }
        assert_eq!(t.hydrogen_contribution().to_bits(), 0.1230f64.to_bits());
    }

    #[test]
    fn table_parse_errors() {
        assert!(matches!(ContributionTable::parse("C1"), Err(TableError::Malformed { line: 1 })));
        assert!(matches!(
            ContributionTable::parse("X9 1.0"),
            Err(TableError::UnknownClass { .. })
        ));
        assert!(matches!(ContributionTable::parse("H 1\nH 2"), Err(TableError::Duplicate { line: 2, .. })));
        assert!(matches!(ContributionTable::parse("H inf"), Err(TableError::BadValue { line: 1 })));
        assert!(matches!(ContributionTable::parse("H 1"), Err(TableError::Missing(_))));
    }

    #[test]
    fn single_atom_value() {
        let methane = MolecularGraph::single_atom(Element::C);
        assert_eq!(crippen_logp(&methane), 0.1441 + 4.0 * 0.1230);
    }

    #[test]
    fn ethane_minus_methane() {
        let methane = crippen_logp(&parse_smiles("C").unwrap());
        let ethane = crippen_logp(&parse_smiles("CC").unwrap());
        let diff = ethane - methane;
        assert!((diff - (0.1441 + 2.0 * 0.1230)).abs() < 1e-12);
    }

    #[test]
    fn classification_examples() {
        let g = parse_smiles("CC(=O)OCC#N").unwrap();
        let classes: Vec<_> = (0..g.atom_count()).map(|i| classify(&g, i)).collect();
        use AtomClass::*;
        assert_eq!(classes, vec![C1, C5, O3, O2, C3, C5, N5]);
        let g = parse_smiles("NC(F)C=CC#CN=O").unwrap();
        let classes: Vec<_> = (0..g.atom_count()).map(|i| classify(&g, i)).collect();
        assert_eq!(classes, vec![N1, C4, F1, C6, C6, C7, C7, N4, O4]);
    }

    #[test]
    fn relabeled_benzene_identical() {
        let g = parse_smiles("C1=CC=CC=C1").unwrap();
        let perm = vec![4, 2, 0, 5, 1, 3];
        assert_eq!(crippen_logp(&g).to_bits(), crippen_logp(&g.permuted(&perm)).to_bits());
    }

    #[test]
    fn random_walk_basics() {
        let methane = MolecularGraph::single_atom(Element::C);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        assert_eq!(random_molecule(&methane, 0, &mut rng), methane);
        let a = random_molecule(&methane, 6, &mut ChaCha8Rng::seed_from_u64(9));
        let b = random_molecule(&methane, 6, &mut ChaCha8Rng::seed_from_u64(9));
        assert_eq!(a, b);
        let neighbors: BTreeSet<String> = enumerate_1_edit(&methane)
            .iter()
            .map(|g| g.canonical_smiles().to_string())
            .collect();
        for seed in 0..40 {
            let one = random_molecule(&methane, 1, &mut ChaCha8Rng::seed_from_u64(seed));
            assert!(neighbors.contains(one.canonical_smiles()));
        }
    }

    #[test]
    fn dataset_single_methane() {
        let methane = MolecularGraph::single_atom(Element::C);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let data = generate_dataset(std::slice::from_ref(&methane), 1, 0, &mut rng).unwrap();
        assert_eq!(data.len(), 1);
        assert_eq!(data[0].graph.canonical_smiles(), "C");
        assert_eq!(data[0].y, crippen_logp(&methane));
    }

    #[test]
    fn dataset_diversity_error() {
        let methane = MolecularGraph::single_atom(Element::C);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        assert!(matches!(
            generate_dataset(&[methane], 2, 0, &mut rng),
            Err(DatasetError::InsufficientDiversity { requested: 2, found: 1, .. })
        ));
        assert_eq!(generate_dataset(&[], 2, 0, &mut rng), Err(DatasetError::NoSeeds));
    }

    #[test]
    fn dataset_deterministic_and_consistent() {
        let seeds = default_seeds();
        let a = generate_dataset(&seeds, 500, 8, &mut ChaCha8Rng::seed_from_u64(11)).unwrap();
        let b = generate_dataset(&seeds, 500, 8, &mut ChaCha8Rng::seed_from_u64(11)).unwrap();
        let keys = |d: &[LabeledSample]| d.iter().map(|s| s.smiles().to_string()).collect::<Vec<_>>();
        assert_eq!(keys(&a), keys(&b));
        assert_eq!(keys(&a).into_iter().collect::<BTreeSet<_>>().len(), 500);
        for s in &a {
            assert_eq!(s.y.to_bits(), crippen_logp(&s.graph).to_bits());
        }
    }
}
