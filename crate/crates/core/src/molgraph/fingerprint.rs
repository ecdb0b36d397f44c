use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::MolecularGraph;

pub const DEFAULT_FINGERPRINT_BITS: usize = 1024;
pub const DEFAULT_FINGERPRINT_RADIUS: usize = 2;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum FingerprintError {
    #[error("fingerprint lengths differ: {0} vs {1}")]
    LengthMismatch(usize, usize),
}

/// Fixed-length bit vector of hashed circular atom environments.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Fingerprint {
    words: Vec<u64>,
    nbits: usize,
    radius: usize,
}

impl Fingerprint {
    pub fn empty(nbits: usize, radius: usize) -> Self {
        Fingerprint {
            words: vec![0; nbits.div_ceil(64)],
            nbits,
            radius,
        }
    }

    pub fn len(&self) -> usize {
        self.nbits
    }

    pub fn is_empty(&self) -> bool {
        self.nbits == 0
    }

    pub fn radius(&self) -> usize {
        self.radius
    }

    pub fn set(&mut self, bit: usize) {
        self.words[bit / 64] |= 1 << (bit % 64);
    }

    pub fn get(&self, bit: usize) -> bool {
        self.words[bit / 64] >> (bit % 64) & 1 == 1
    }

    pub fn count_ones(&self) -> u32 {
        self.words.iter().map(|w| w.count_ones()).sum()
    }

    pub fn ones(&self) -> impl Iterator<Item = usize> + '_ {
        (0..self.nbits).filter(|&b| self.get(b))
    }
}

// 64-bit FNV-1a over little-endian words; stable across platforms and releases.
fn fnv1a(words: &[u64]) -> u64 {
    let mut hash: u64 = 0xcbf2_9ce4_8422_2325;
    for w in words {
        for byte in w.to_le_bytes() {
            hash ^= u64::from(byte);
            hash = hash.wrapping_mul(0x0100_0000_01b3);
        }
    }
    hash
}

/// Morgan (ECFP-like) fingerprint: every atom environment of radius `0..=radius`
/// is hashed and folded into `nbits` bits.
pub fn morgan_fingerprint(g: &MolecularGraph, radius: usize, nbits: usize) -> Fingerprint {
    assert!(nbits >= 64, "fingerprints need at least 64 bits");
    let mut fp = Fingerprint::empty(nbits, radius);
    let in_ring = g.ring_atoms();
    let mut ids: Vec<u64> = (0..g.atom_count())
        .map(|i| {
            fnv1a(&[
                g.element(i).index() as u64,
                g.degree(i) as u64,
                u64::from(g.implicit_hydrogens(i)),
                g.atoms()[i].charge as u64,
                u64::from(in_ring[i]),
            ])
        })
        .collect();
    for &id in &ids {
        fp.set((id % nbits as u64) as usize);
    }
    for round in 1..=radius {
        ids = (0..g.atom_count())
            .map(|i| {
                let mut around: Vec<(u64, u64)> = g
                    .neighbors(i)
                    .iter()
                    .map(|&(j, o)| (u64::from(o.value()), ids[j]))
                    .collect();
                around.sort_unstable();
                let mut words = vec![round as u64, ids[i]];
                for (o, id) in around {
                    words.push(o);
                    words.push(id);
                }
                fnv1a(&words)
            })
            .collect();
        for &id in &ids {
            fp.set((id % nbits as u64) as usize);
        }
    }
    fp
}

/// Jaccard distance `1 - |A ∩ B| / |A ∪ B|`; zero when both are empty.
pub fn tanimoto_distance(a: &Fingerprint, b: &Fingerprint) -> Result<f64, FingerprintError> {
    if a.nbits != b.nbits {
        return Err(FingerprintError::LengthMismatch(a.nbits, b.nbits));
    }
    let (mut inter, mut union) = (0u32, 0u32);
    for (x, y) in a.words.iter().zip(&b.words) {
        inter += (x & y).count_ones();
        union += (x | y).count_ones();
    }
    if union == 0 {
        return Ok(0.0);
    }
    Ok(1.0 - f64::from(inter) / f64::from(union))
}
