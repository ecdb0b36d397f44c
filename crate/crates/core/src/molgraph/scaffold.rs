use super::MolecularGraph;

/// Scaffold key shared by all molecules without rings.
pub const ACYCLIC_SCAFFOLD: &str = "ACYCLIC";

/// Murcko-style scaffold key: repeatedly strip degree-1 atoms outside rings
/// until nothing changes, then return the canonical SMILES of what is left.
/// Ring systems and the linkers between them survive the pruning.
pub fn murcko_scaffold(g: &MolecularGraph) -> String {
    let in_ring = g.ring_atoms();
    if !in_ring.iter().any(|&r| r) {
        return ACYCLIC_SCAFFOLD.to_string();
    }
    let n = g.atom_count();
    let mut alive = vec![true; n];
    let mut degree: Vec<usize> = (0..n).map(|i| g.degree(i)).collect();
    loop {
        let leaves: Vec<usize> = (0..n)
            .filter(|&i| alive[i] && !in_ring[i] && degree[i] <= 1)
            .collect();
        if leaves.is_empty() {
            break;
        }
        for i in leaves {
            alive[i] = false;
            for &(j, _) in g.neighbors(i) {
                if alive[j] {
                    degree[j] -= 1;
                }
            }
        }
    }
    let keep: Vec<usize> = (0..n).filter(|&i| alive[i]).collect();
    g.induced_subgraph(&keep)
        .expect("leaf pruning keeps the scaffold connected")
        .canonical_smiles()
        .to_string()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::molgraph::parse_smiles;

    fn scaffold(s: &str) -> String {
        murcko_scaffold(&parse_smiles(s).unwrap())
    }

    #[test]
    fn benzene_is_its_own_scaffold() {
        let benzene = parse_smiles("C1=CC=CC=C1").unwrap();
        assert_eq!(scaffold("C1=CC=CC=C1"), benzene.canonical_smiles());
    }

    #[test]
    fn ethylbenzene_reduces_to_benzene() {
        assert_eq!(scaffold("CCC1=CC=CC=C1"), scaffold("C1=CC=CC=C1"));
    }

    #[test]
    fn acyclic() {
        assert_eq!(scaffold("CCC"), ACYCLIC_SCAFFOLD);
        assert_eq!(scaffold("C"), ACYCLIC_SCAFFOLD);
    }

    #[test]
    fn linker_between_rings_is_kept() {
        let s = scaffold("C1CC1CCC1CC1C(F)F");
        assert_eq!(s, parse_smiles("C1CC1CCC1CC1").unwrap().canonical_smiles());
    }
}
