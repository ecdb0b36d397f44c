//! Train / calibration / test partitions: random, scaffold-grouped and target-tail.

use std::collections::BTreeMap;

use cfuq_core::molgraph::murcko_scaffold;
use cfuq_core::oracle::LabeledSample;
use rand::seq::SliceRandom;
use rand::Rng;

use crate::config::{SplitConfig, SplitKind, Tails};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum SplitError {
    #[error("dataset of {n} samples is too small for fractions {fractions:?}")]
    TooSmall { n: usize, fractions: [f64; 3] },
    #[error("no scaffold group fits into a test set of {target} samples ({groups} groups)")]
    TooFewScaffolds { target: usize, groups: usize },
}

/// Indices into the dataset for each partition.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Split {
    pub train: Vec<usize>,
    pub calibration: Vec<usize>,
    pub test: Vec<usize>,
}

fn quota(fraction: f64, n: usize) -> usize {
    (fraction * n as f64).round() as usize
}

/// Partitions `data` according to `cfg`. Every index lands in exactly one partition.
pub fn split<R: Rng + ?Sized>(
    data: &[LabeledSample],
    cfg: &SplitConfig,
    rng: &mut R,
) -> Result<Split, SplitError> {
    let n = data.len();
    let n_test = quota(cfg.fractions[2], n);
    let n_cal = quota(cfg.fractions[1], n);
    let too_small = || SplitError::TooSmall {
        n,
        fractions: cfg.fractions,
    };
    if n_test == 0 || n_cal == 0 || n_test + n_cal >= n {
        return Err(too_small());
    }
    let (test, rest) = match cfg.kind {
        SplitKind::Iid => {
            let mut idx: Vec<usize> = (0..n).collect();
            idx.shuffle(rng);
            let rest = idx.split_off(n_test);
            (idx, rest)
        }
        SplitKind::OodStruct => scaffold_test_set(data, n_test, rng)?,
        SplitKind::OodValue => value_test_set(data, n_test, cfg.tails),
    };
    let mut rest = rest;
    rest.shuffle(rng);
    let train = rest.split_off(n_cal.min(rest.len()));
    if train.is_empty() || rest.is_empty() {
        return Err(too_small());
    }
    Ok(Split {
        train,
        calibration: rest,
        test,
    })
}

/// Whole scaffold groups go to the test set, largest first (ties in random
/// order), skipping groups that would overshoot the quota.
fn scaffold_test_set<R: Rng + ?Sized>(
    data: &[LabeledSample],
    n_test: usize,
    rng: &mut R,
) -> Result<(Vec<usize>, Vec<usize>), SplitError> {
    let mut groups: BTreeMap<String, Vec<usize>> = BTreeMap::new();
    for (i, s) in data.iter().enumerate() {
        groups.entry(murcko_scaffold(&s.graph)).or_default().push(i);
    }
    let mut groups: Vec<Vec<usize>> = groups.into_values().collect();
    let n_groups = groups.len();
    groups.shuffle(rng);
    groups.sort_by_key(|g| std::cmp::Reverse(g.len()));
    let mut test = Vec::new();
    let mut rest = Vec::new();
    for g in groups {
        if test.len() + g.len() <= n_test {
            test.extend(g);
        } else {
            rest.extend(g);
        }
    }
    // a test set that takes every group would leave nothing to train on
    if test.is_empty() || rest.is_empty() {
        return Err(SplitError::TooFewScaffolds {
            target: n_test,
            groups: n_groups,
        });
    }
    test.sort_unstable();
    rest.sort_unstable();
    Ok((test, rest))
}

/// Extreme targets form the test set: the top and/or bottom of the sorted labels.
fn value_test_set(data: &[LabeledSample], n_test: usize, tails: Tails) -> (Vec<usize>, Vec<usize>) {
    let mut order: Vec<usize> = (0..data.len()).collect();
    order.sort_by(|&a, &b| data[a].y.total_cmp(&data[b].y).then(a.cmp(&b)));
    let (lower, upper) = match tails {
        Tails::Both => (n_test / 2, n_test - n_test / 2),
        Tails::Upper => (0, n_test),
        Tails::Lower => (n_test, 0),
    };
    let n = order.len();
    let mut test: Vec<usize> = order[..lower].to_vec();
    test.extend_from_slice(&order[n - upper..]);
    let rest = order[lower..n - upper].to_vec();
    (test, rest)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::DatasetConfig;
    use crate::data::load_dataset;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn data(n: usize) -> Vec<LabeledSample> {
        let cfg = DatasetConfig {
            size: n,
            max_steps: 10,
            ..DatasetConfig::default()
        };
        load_dataset(&cfg, 11).unwrap()
    }

    fn check_partition(s: &Split, n: usize) {
        let mut all: Vec<usize> = s.train.iter().chain(&s.calibration).chain(&s.test).copied().collect();
        all.sort_unstable();
        assert_eq!(all, (0..n).collect::<Vec<_>>());
    }

    #[test]
    fn iid_sizes() {
        let d = data(100);
        let s = split(&d, &SplitConfig::default(), &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
        assert_eq!((s.train.len(), s.calibration.len(), s.test.len()), (80, 10, 10));
        check_partition(&s, 100);
        let again = split(&d, &SplitConfig::default(), &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
        assert_eq!(s, again);
    }

    #[test]
    fn scaffold_split_has_no_leakage() {
        let d = data(300);
        let cfg = SplitConfig {
            kind: SplitKind::OodStruct,
            ..SplitConfig::default()
        };
        let s = split(&d, &cfg, &mut ChaCha8Rng::seed_from_u64(2)).unwrap();
        check_partition(&s, 300);
        assert!(!s.test.is_empty() && s.test.len() <= 30);
        let key = |i: &usize| murcko_scaffold(&d[*i].graph);
        let test_keys: std::collections::BTreeSet<String> = s.test.iter().map(key).collect();
        assert!(s.train.iter().chain(&s.calibration).all(|i| !test_keys.contains(&key(i))));
    }

    #[test]
    fn value_split_takes_tails() {
        let d = data(200);
        for tails in [Tails::Both, Tails::Upper, Tails::Lower] {
            let cfg = SplitConfig {
                kind: SplitKind::OodValue,
                tails,
                ..SplitConfig::default()
            };
            let s = split(&d, &cfg, &mut ChaCha8Rng::seed_from_u64(3)).unwrap();
            check_partition(&s, 200);
            assert_eq!(s.test.len(), 20);
            let inner: Vec<f64> = s.train.iter().chain(&s.calibration).map(|&i| d[i].y).collect();
            let lo = inner.iter().copied().fold(f64::INFINITY, f64::min);
            let hi = inner.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            for &i in &s.test {
                assert!(d[i].y >= hi || d[i].y <= lo, "{tails:?}");
            }
        }
    }

    #[test]
    fn rejects_tiny_datasets() {
        let d = data(12);
        let cfg = SplitConfig {
            fractions: [0.9, 0.08, 0.02],
            ..SplitConfig::default()
        };
        assert!(matches!(
            split(&d, &cfg, &mut ChaCha8Rng::seed_from_u64(0)),
            Err(SplitError::TooSmall { .. })
        ));
    }
}
