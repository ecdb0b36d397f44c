//! Counterfactual candidates by complete enumeration of single graph edits,
//! ranking by prediction divergence, and uncertainty filtering.
//!
//! The edit grammar has six kinds: add an atom with a bond to an existing
//! atom, delete a leaf atom, add a bond between two unbonded atoms, delete a
//! ring bond, change a bond's order, substitute an atom's element. An edit is
//! valid when the result satisfies every [`MolecularGraph`] invariant.

use std::cmp::Ordering;
use std::collections::{BTreeMap, BTreeSet};
use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::metrics::{self, EvalRecord};
use crate::molgraph::{Atom, Bond, BondOrder, Element, GraphError, MolecularGraph};
use crate::oracle::LabeledSample;

pub const DEFAULT_TOP_K: usize = 10;
pub const DEFAULT_CANDIDATE_CAP: usize = 100_000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EditKind {
    AddAtomWithBond,
    DeleteLeafAtom,
    AddBond,
    DeleteBond,
    ChangeBondOrder,
    SubstituteAtom,
}

impl EditKind {
    pub const ALL: [EditKind; 6] = [
        EditKind::AddAtomWithBond,
        EditKind::DeleteLeafAtom,
        EditKind::AddBond,
        EditKind::DeleteBond,
        EditKind::ChangeBondOrder,
        EditKind::SubstituteAtom,
    ];
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum EditOp {
    AddAtomWithBond {
        anchor: usize,
        element: Element,
        order: BondOrder,
    },
    DeleteLeafAtom {
        atom: usize,
    },
    AddBond {
        a: usize,
        b: usize,
        order: BondOrder,
    },
    DeleteBond {
        a: usize,
        b: usize,
    },
    ChangeBondOrder {
        a: usize,
        b: usize,
        order: BondOrder,
    },
    SubstituteAtom {
        atom: usize,
        element: Element,
    },
}

impl EditOp {
    pub fn kind(&self) -> EditKind {
        match self {
            EditOp::AddAtomWithBond { .. } => EditKind::AddAtomWithBond,
            EditOp::DeleteLeafAtom { .. } => EditKind::DeleteLeafAtom,
            EditOp::AddBond { .. } => EditKind::AddBond,
            EditOp::DeleteBond { .. } => EditKind::DeleteBond,
            EditOp::ChangeBondOrder { .. } => EditKind::ChangeBondOrder,
            EditOp::SubstituteAtom { .. } => EditKind::SubstituteAtom,
        }
    }

    /// Applies the edit literally; the graph constructor rejects invalid results.
    pub fn apply(&self, g: &MolecularGraph) -> Result<MolecularGraph, GraphError> {
        let mut atoms = g.atoms().to_vec();
        let mut bonds = g.bonds().to_vec();
        match *self {
            EditOp::AddAtomWithBond { anchor, element, order } => {
                atoms.push(Atom::new(element));
                bonds.push(Bond {
                    a: anchor,
                    b: atoms.len() - 1,
                    order,
                });
            }
            EditOp::DeleteLeafAtom { atom } => {
                if g.degree(atom) != 1 {
                    return Err(GraphError::Disconnected);
                }
                atoms.remove(atom);
                bonds.retain(|b| b.a != atom && b.b != atom);
                for b in &mut bonds {
                    if b.a > atom {
                        b.a -= 1;
                    }
                    if b.b > atom {
                        b.b -= 1;
                    }
                }
            }
            EditOp::AddBond { a, b, order } => bonds.push(Bond { a, b, order }),
            EditOp::DeleteBond { a, b } => {
                bonds.retain(|x| !((x.a == a && x.b == b) || (x.a == b && x.b == a)));
            }
            EditOp::ChangeBondOrder { a, b, order } => {
                for x in &mut bonds {
                    if (x.a == a && x.b == b) || (x.a == b && x.b == a) {
                        x.order = order;
                    }
                }
            }
            EditOp::SubstituteAtom { atom, element } => atoms[atom].element = element,
        }
        MolecularGraph::new(atoms, bonds)
    }
}

/// Which edits are considered: element alphabet, bond orders and enabled kinds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EditGrammar {
    pub elements: Vec<Element>,
    pub orders: Vec<BondOrder>,
    pub kinds: BTreeSet<EditKind>,
}

impl Default for EditGrammar {
    fn default() -> Self {
        EditGrammar {
            elements: Element::ALL.to_vec(),
            orders: BondOrder::ALL.to_vec(),
            kinds: EditKind::ALL.into_iter().collect(),
        }
    }
}

/// Every edit of `g` under `grammar` whose result is a valid graph.
pub fn valid_edits(g: &MolecularGraph, grammar: &EditGrammar) -> Vec<EditOp> {
    let n = g.atom_count();
    let free = |i: usize| g.implicit_hydrogens(i);
    let enabled = |k: EditKind| grammar.kinds.contains(&k);
    let mut ops = Vec::new();

    if enabled(EditKind::AddAtomWithBond) {
        for anchor in 0..n {
            for &element in &grammar.elements {
                for &order in &grammar.orders {
                    if order.value() <= free(anchor) && order.value() <= element.max_valence() {
                        ops.push(EditOp::AddAtomWithBond { anchor, element, order });
                    }
                }
            }
        }
    }
    if enabled(EditKind::DeleteLeafAtom) {
        for atom in (0..n).filter(|&i| g.degree(i) == 1) {
            ops.push(EditOp::DeleteLeafAtom { atom });
        }
    }
    if enabled(EditKind::AddBond) {
        for a in 0..n {
            for b in a + 1..n {
                if g.bond_between(a, b).is_some() {
                    continue;
                }
                for &order in &grammar.orders {
                    if order.value() <= free(a) && order.value() <= free(b) {
                        ops.push(EditOp::AddBond { a, b, order });
                    }
                }
            }
        }
    }
    for bond in g.bonds() {
        let (a, b) = (bond.a, bond.b);
        if enabled(EditKind::DeleteBond) && g.is_ring_bond(a, b) {
            ops.push(EditOp::DeleteBond { a, b });
        }
        if enabled(EditKind::ChangeBondOrder) {
            for &order in &grammar.orders {
                if order == bond.order {
                    continue;
                }
                let extra = order.value().saturating_sub(bond.order.value());
                if extra <= free(a) && extra <= free(b) {
                    ops.push(EditOp::ChangeBondOrder { a, b, order });
                }
            }
        }
    }
    if enabled(EditKind::SubstituteAtom) {
        for atom in 0..n {
            for &element in &grammar.elements {
                if element != g.element(atom) && g.bond_order_sum(atom) <= element.max_valence() {
                    ops.push(EditOp::SubstituteAtom { atom, element });
                }
            }
        }
    }
    ops
}

/// All distinct graphs one valid edit away from `g`, in canonical-SMILES order.
pub fn enumerate_1_edit(g: &MolecularGraph) -> Vec<MolecularGraph> {
    enumerate_1_edit_with(g, &EditGrammar::default())
}

pub fn enumerate_1_edit_with(g: &MolecularGraph, grammar: &EditGrammar) -> Vec<MolecularGraph> {
    let own = g.canonical_smiles();
    let mut unique: BTreeMap<String, MolecularGraph> = BTreeMap::new();
    for op in valid_edits(g, grammar) {
        let next = op.apply(g).expect("valid_edits only yields applicable edits");
        let key = next.canonical_smiles();
        if key != own && !unique.contains_key(key) {
            unique.insert(key.to_string(), next);
        }
    }
    unique.into_values().collect()
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum CounterfactualError {
    #[error("k must be at least 1")]
    ZeroEdits,
    #[error("k-edit neighborhood exceeds the cap of {cap} candidates")]
    TooManyCandidates { cap: usize },
    #[error("no candidates to rank")]
    NoCandidates,
    #[error("record {index} has no calibrated uncertainty")]
    MissingUncertainty { index: usize },
}

/// Graphs reachable in `1..=k` edits (breadth-first), excluding `g`, in canonical-SMILES order.
pub fn enumerate_k_edit(g: &MolecularGraph, k: usize, cap: usize) -> Result<Vec<MolecularGraph>, CounterfactualError> {
    if k == 0 {
        return Err(CounterfactualError::ZeroEdits);
    }
    let mut seen: BTreeSet<String> = BTreeSet::from([g.canonical_smiles().to_string()]);
    let mut found: BTreeMap<String, MolecularGraph> = BTreeMap::new();
    let mut frontier = vec![g.clone()];
    for _ in 0..k {
        let mut next = Vec::new();
        for f in &frontier {
            for cand in enumerate_1_edit(f) {
                if seen.insert(cand.canonical_smiles().to_string()) {
                    found.insert(cand.canonical_smiles().to_string(), cand.clone());
                    next.push(cand);
                    if found.len() > cap {
                        return Err(CounterfactualError::TooManyCandidates { cap });
                    }
                }
            }
        }
        frontier = next;
    }
    Ok(found.into_values().collect())
}

/// How candidates are selected by divergence.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RankingMode {
    /// Largest `|ŷ' - ŷ|` first.
    #[default]
    Absolute,
    /// Only candidates predicted above the original, largest increase first.
    Increasing,
    /// Only candidates predicted below the original, largest decrease first.
    Decreasing,
}

/// One counterfactual explanation and, once available, its labels.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CounterfactualRecord {
    pub original_smiles: String,
    pub original_y: f64,
    pub original_y_hat: f64,
    #[serde(default)]
    pub original_sigma2: Option<f64>,
    pub perturbed_smiles: String,
    pub y_hat_prime: f64,
    pub divergence: f64,
    /// Calibrated uncertainty of the perturbed graph.
    #[serde(default)]
    pub sigma2_prime: Option<f64>,
    /// Uncertainty of the perturbed graph before calibration.
    #[serde(default)]
    pub sigma2_prime_raw: Option<f64>,
    #[serde(default)]
    pub y_prime: Option<f64>,
    #[serde(default)]
    pub truthful: Option<bool>,
    #[serde(skip)]
    pub perturbed_graph: Option<MolecularGraph>,
}

impl CounterfactualRecord {
    /// Attaches the oracle label of the perturbed graph and the resulting truthfulness bit.
    pub fn label(&mut self, y_prime: f64) {
        self.y_prime = Some(y_prime);
        let original = EvalRecord::new(self.original_y, self.original_y_hat, 0.0);
        let counterfactual = EvalRecord::new(y_prime, self.y_hat_prime, 0.0);
        self.truthful = Some(metrics::truthful(&original, &counterfactual));
    }
}

/// Predicts `original` and every candidate, orders candidates by divergence
/// (ties by canonical SMILES) and keeps the first `top_k`.
pub fn rank_counterfactuals<E, P>(
    predict: P,
    original: &LabeledSample,
    candidates: &[MolecularGraph],
    top_k: usize,
    mode: RankingMode,
) -> Result<Vec<CounterfactualRecord>, E>
where
    P: Fn(&MolecularGraph) -> Result<f64, E>,
    E: From<CounterfactualError>,
{
    if candidates.is_empty() {
        return Err(CounterfactualError::NoCandidates.into());
    }
    let y_hat = predict(&original.graph)?;
    let mut scored = Vec::with_capacity(candidates.len());
    for cand in candidates {
        let y_hat_prime = predict(cand)?;
        let keep = match mode {
            RankingMode::Absolute => true,
            RankingMode::Increasing => y_hat_prime > y_hat,
            RankingMode::Decreasing => y_hat_prime < y_hat,
        };
        if keep {
            scored.push((cand, y_hat_prime, (y_hat_prime - y_hat).abs()));
        }
    }
    scored.sort_by(|x, y| {
        y.2.partial_cmp(&x.2)
            .unwrap_or(Ordering::Equal)
            .then_with(|| x.0.canonical_smiles().cmp(y.0.canonical_smiles()))
    });
    Ok(scored
        .into_iter()
        .take(top_k)
        .map(|(cand, y_hat_prime, divergence)| CounterfactualRecord {
            original_smiles: original.smiles().to_string(),
            original_y: original.y,
            original_y_hat: y_hat,
            original_sigma2: None,
            perturbed_smiles: cand.canonical_smiles().to_string(),
            y_hat_prime,
            divergence,
            sigma2_prime: None,
            sigma2_prime_raw: None,
            y_prime: None,
            truthful: None,
            perturbed_graph: Some(cand.clone()),
        })
        .collect())
}

/// Keeps records with calibrated `σ²' ≤ xi`, preserving order.
pub fn filter_by_uncertainty(
    records: &[CounterfactualRecord],
    xi: f64,
) -> Result<Vec<CounterfactualRecord>, CounterfactualError> {
    let mut kept = Vec::new();
    for (index, record) in records.iter().enumerate() {
        let sigma2 = record
            .sigma2_prime
            .ok_or(CounterfactualError::MissingUncertainty { index })?;
        if sigma2 <= xi {
            kept.push(record.clone());
        }
    }
    Ok(kept)
}

/// Writes one JSON object per line.
pub fn write_jsonl<W: Write>(records: &[CounterfactualRecord], mut out: W) -> std::io::Result<()> {
    for r in records {
        serde_json::to_writer(&mut out, r)?;
        out.write_all(b"\n")?;
    }
    Ok(())
}

pub fn read_jsonl<R: BufRead>(input: R) -> std::io::Result<Vec<CounterfactualRecord>> {
    let mut out = Vec::new();
    for line in input.lines() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(&line)?);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::molgraph::parse_smiles;

    fn smiles_set(gs: &[MolecularGraph]) -> BTreeSet<String> {
        gs.iter().map(|g| g.canonical_smiles().to_string()).collect()
    }

    #[test]
    fn methane_has_twelve_neighbors() {
        let methane = MolecularGraph::single_atom(Element::C);
        let n = enumerate_1_edit(&methane);
        assert_eq!(n.len(), 12);
        let expected: BTreeSet<String> = [
            "CC", "CN", "CO", "CF", "C=C", "C=N", "C=O", "C#C", "C#N", "N", "O", "F",
        ]
        .iter()
        .map(|s| parse_smiles(s).unwrap().canonical_smiles().to_string())
        .collect();
        assert_eq!(smiles_set(&n), expected);
    }

    #[test]
    fn fluorine_has_seven_neighbors() {
        let f = MolecularGraph::single_atom(Element::F);
        assert_eq!(enumerate_1_edit(&f).len(), 7);
    }

    #[test]
    fn neighbors_exclude_the_original() {
        let g = parse_smiles("CC1=CC=CC=C1O").unwrap();
        let n = enumerate_1_edit(&g);
        assert!(!n.is_empty());
        assert!(n.iter().all(|x| x.canonical_smiles() != g.canonical_smiles()));
        let keys: Vec<_> = n.iter().map(|x| x.canonical_smiles()).collect();
        assert!(keys.windows(2).all(|w| w[0] < w[1]));
    }

    #[test]
    fn k_edit_contains_one_edit() {
        let methane = MolecularGraph::single_atom(Element::C);
        let one = enumerate_k_edit(&methane, 1, DEFAULT_CANDIDATE_CAP).unwrap();
        assert_eq!(smiles_set(&one), smiles_set(&enumerate_1_edit(&methane)));
        let two = enumerate_k_edit(&methane, 2, DEFAULT_CANDIDATE_CAP).unwrap();
        assert!(two.len() >= one.len());
        assert!(smiles_set(&one).is_subset(&smiles_set(&two)));
        assert!(!smiles_set(&two).contains("C"));
        assert_eq!(
            enumerate_k_edit(&methane, 2, 20),
            Err(CounterfactualError::TooManyCandidates { cap: 20 })
        );
        assert_eq!(enumerate_k_edit(&methane, 0, 20), Err(CounterfactualError::ZeroEdits));
    }

    fn stub_predict(g: &MolecularGraph) -> Result<f64, CounterfactualError> {
        // prediction = number of atoms
        Ok(g.atom_count() as f64)
    }

    #[test]
    fn ranking_sorts_by_divergence() {
        let original = LabeledSample::from_graph(parse_smiles("CC").unwrap());
        let cands: Vec<_> = ["CCC", "CCCCC", "CCCC", "C"]
            .iter()
            .map(|s| parse_smiles(s).unwrap())
            .collect();
        let ranked = rank_counterfactuals(stub_predict, &original, &cands, 10, RankingMode::Absolute).unwrap();
        let divs: Vec<f64> = ranked.iter().map(|r| r.divergence).collect();
        assert_eq!(divs, vec![3.0, 2.0, 1.0, 1.0]);
        // tie at divergence 1 broken by canonical SMILES
        assert_eq!(ranked[2].perturbed_smiles, "C");
        assert_eq!(ranked[3].perturbed_smiles, "CCC");

        let top2 = rank_counterfactuals(stub_predict, &original, &cands, 2, RankingMode::Absolute).unwrap();
        assert_eq!(top2.len(), 2);
        let inc = rank_counterfactuals(stub_predict, &original, &cands, 10, RankingMode::Increasing).unwrap();
        assert_eq!(inc.len(), 3);
        let dec = rank_counterfactuals(stub_predict, &original, &cands, 10, RankingMode::Decreasing).unwrap();
        assert_eq!(dec.len(), 1);
        assert!(rank_counterfactuals(stub_predict, &original, &[], 10, RankingMode::Absolute).is_err());
    }

    #[test]
    fn zero_divergence_ranks_last() {
        let original = LabeledSample::from_graph(parse_smiles("CC").unwrap());
        let cands: Vec<_> = ["CO", "CCC"].iter().map(|s| parse_smiles(s).unwrap()).collect();
        let ranked = rank_counterfactuals(stub_predict, &original, &cands, 10, RankingMode::Absolute).unwrap();
        assert_eq!(ranked.last().unwrap().divergence, 0.0);
        assert_eq!(ranked.last().unwrap().perturbed_smiles, "CO");
    }

    fn record(sigma2: Option<f64>) -> CounterfactualRecord {
        CounterfactualRecord {
            original_smiles: "C".into(),
            original_y: 0.0,
            original_y_hat: 0.0,
            original_sigma2: None,
            perturbed_smiles: "CC".into(),
            y_hat_prime: 1.0,
            divergence: 1.0,
            sigma2_prime: sigma2,
            sigma2_prime_raw: None,
            y_prime: None,
            truthful: None,
            perturbed_graph: None,
        }
    }

    #[test]
    fn filtering() {
        let recs = vec![record(Some(0.1)), record(Some(0.5))];
        assert_eq!(filter_by_uncertainty(&recs, f64::INFINITY).unwrap().len(), 2);
        assert!(filter_by_uncertainty(&recs, 0.05).unwrap().is_empty());
        let kept = filter_by_uncertainty(&recs, 0.3).unwrap();
        assert_eq!(kept.len(), 1);
        assert_eq!(kept[0].sigma2_prime, Some(0.1));
        assert_eq!(kept_inclusive(&recs), 1);
        assert_eq!(
            filter_by_uncertainty(&[record(None)], 1.0),
            Err(CounterfactualError::MissingUncertainty { index: 0 })
        );
    }

    fn kept_inclusive(recs: &[CounterfactualRecord]) -> usize {
        filter_by_uncertainty(recs, 0.1).unwrap().len()
    }

    #[test]
    fn labeling_sets_truthfulness() {
        let mut r = record(Some(0.1));
        r.original_y = 0.0;
        r.original_y_hat = 0.1;
        r.y_hat_prime = 1.05;
        r.label(1.0);
        assert_eq!(r.truthful, Some(true));
    }

    #[test]
    fn jsonl_roundtrip() {
        let mut r = record(Some(0.25));
        r.label(0.75);
        let mut buf = Vec::new();
        write_jsonl(&[r.clone(), record(None)], &mut buf).unwrap();
        let back = read_jsonl(&buf[..]).unwrap();
        assert_eq!(back, vec![r, record(None)]);
    }
}
