//! Canonical atom ordering.
//!
//! Atom classes are refined Morgan-style (each round splits classes by the
//! sorted multiset of `(neighbor class, bond order)`) until the partition is
//! stable. Remaining ties are broken by individualizing each member of the
//! first non-trivial class in turn and refining again; every branch is
//! explored and the labeling with the lexicographically smallest encoding of
//! the relabeled graph wins. The chosen labeling therefore depends only on the
//! isomorphism class, so relabeled inputs produce identical orders (up to
//! automorphism) and identical SMILES.

use super::{smiles, MolecularGraph};

#[derive(Debug, Clone)]
pub(crate) struct Canonical {
    /// `order[r]` is the atom with canonical rank `r`.
    pub order: Vec<usize>,
    pub smiles: String,
}

pub(crate) fn canonicalize(g: &MolecularGraph) -> Canonical {
    let initial = initial_classes(g);
    let mut best: Option<(Vec<u32>, Vec<usize>)> = None;
    search(g, refine(g, initial), &mut best);
    let (_, ranks) = best.expect("search visits at least one leaf");
    let mut order = vec![0; ranks.len()];
    for (atom, &rank) in ranks.iter().enumerate() {
        order[rank] = atom;
    }
    let smiles = smiles::write_with_ranks(g, &ranks);
    Canonical { order, smiles }
}

fn initial_classes(g: &MolecularGraph) -> Vec<usize> {
    let keys: Vec<(usize, usize, u8, i8)> = (0..g.atom_count())
        .map(|i| {
            (
                g.element(i).index(),
                g.degree(i),
                g.implicit_hydrogens(i),
                g.atoms()[i].charge,
            )
        })
        .collect();
    dense_ranks(&keys)
}

/// Maps keys to dense ranks `0..k` following the keys' sort order.
fn dense_ranks<K: Ord + Clone>(keys: &[K]) -> Vec<usize> {
    let mut sorted = keys.to_vec();
    sorted.sort();
    sorted.dedup();
    keys.iter()
        .map(|k| sorted.binary_search(k).expect("key present"))
        .collect()
}

fn class_count(classes: &[usize]) -> usize {
    classes.iter().copied().max().map_or(0, |m| m + 1)
}

fn refine(g: &MolecularGraph, mut classes: Vec<usize>) -> Vec<usize> {
    loop {
        let before = class_count(&classes);
        let signatures: Vec<(usize, Vec<(usize, u8)>)> = (0..g.atom_count())
            .map(|i| {
                let mut around: Vec<(usize, u8)> = g
                    .neighbors(i)
                    .iter()
                    .map(|&(j, o)| (classes[j], o.value()))
                    .collect();
                around.sort_unstable();
                (classes[i], around)
            })
            .collect();
        classes = dense_ranks(&signatures);
        if class_count(&classes) == before {
            return classes;
        }
    }
}

fn search(g: &MolecularGraph, classes: Vec<usize>, best: &mut Option<(Vec<u32>, Vec<usize>)>) {
    let n = classes.len();
    let mut sizes = vec![0usize; n];
    for &c in &classes {
        sizes[c] += 1;
    }
    let Some(target) = (0..n).find(|&c| sizes[c] > 1) else {
        let key = encode(g, &classes);
        if best.as_ref().is_none_or(|(k, _)| key < *k) {
            *best = Some((key, classes));
        }
        return;
    };
    for v in (0..n).filter(|&i| classes[i] == target) {
        let keys: Vec<(usize, bool)> = (0..n).map(|i| (classes[i], i != v)).collect();
        search(g, refine(g, dense_ranks(&keys)), best);
    }
}

/// Encoding of the graph relabeled by `ranks`: atom codes by rank, then sorted edges.
fn encode(g: &MolecularGraph, ranks: &[usize]) -> Vec<u32> {
    let n = ranks.len();
    let mut key = vec![0u32; n];
    for (atom, &rank) in ranks.iter().enumerate() {
        key[rank] = g.element(atom).index() as u32;
    }
    let mut edges: Vec<(u32, u32, u32)> = g
        .bonds()
        .iter()
        .map(|b| {
            let (x, y) = (ranks[b.a] as u32, ranks[b.b] as u32);
            (x.min(y), x.max(y), u32::from(b.order.value()))
        })
        .collect();
    edges.sort_unstable();
    key.reserve(edges.len() * 3);
    for (x, y, o) in edges {
        key.extend([x, y, o]);
    }
    key
}
