//! Uncertainty estimators built on the regressors in [`crate::model`].
//!
//! Every estimator maps a graph to a prediction `ŷ` and a raw uncertainty
//! `σ² ≥ 0`. Ensembles and SWAG derive `σ²` from the spread of several
//! parameter vectors, mean-variance estimation from a learned variance head,
//! and trust scores from the distance to the nearest training element.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::{
    self, ModelError, PreparedGraph, Regressor, RegressorConfig, TrainConfig, TrainError,
};
use crate::molgraph::{
    morgan_fingerprint, tanimoto_distance, Fingerprint, MolecularGraph,
    DEFAULT_FINGERPRINT_BITS, DEFAULT_FINGERPRINT_RADIUS,
};
use crate::oracle::LabeledSample;

const CHECKPOINT_FORMAT: &str = "cfuq-estimator";
const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EstimatorKind {
    Random,
    De,
    Mve,
    DeMve,
    Swag,
    TsTanimoto,
    TsEuclidean,
}

impl EstimatorKind {
    pub const ALL: [EstimatorKind; 7] = [
        EstimatorKind::Random,
        EstimatorKind::De,
        EstimatorKind::Mve,
        EstimatorKind::DeMve,
        EstimatorKind::Swag,
        EstimatorKind::TsTanimoto,
        EstimatorKind::TsEuclidean,
    ];

    pub fn name(self) -> &'static str {
        match self {
            EstimatorKind::Random => "random",
            EstimatorKind::De => "de",
            EstimatorKind::Mve => "mve",
            EstimatorKind::DeMve => "de_mve",
            EstimatorKind::Swag => "swag",
            EstimatorKind::TsTanimoto => "ts_tanimoto",
            EstimatorKind::TsEuclidean => "ts_euclidean",
        }
    }

    /// Whether the estimator reuses a separately trained MSE model for `ŷ`.
    pub fn uses_base_model(self) -> bool {
        matches!(
            self,
            EstimatorKind::Random | EstimatorKind::TsTanimoto | EstimatorKind::TsEuclidean
        )
    }
}

impl std::fmt::Display for EstimatorKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for EstimatorKind {
    type Err = UqError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        EstimatorKind::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| UqError::InvalidConfig(format!("unknown estimator {s:?}")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct EstimatorConfig {
    pub kind: EstimatorKind,
    pub ensemble_size: usize,
    /// Number of final epochs that contribute a weight snapshot.
    pub swag_window: usize,
    /// Weight vectors drawn from the fitted posterior.
    pub swag_samples: usize,
}

impl EstimatorConfig {
    pub fn new(kind: EstimatorKind) -> Self {
        EstimatorConfig {
            kind,
            ensemble_size: 3,
            swag_window: 25,
            swag_samples: 50,
        }
    }

    pub fn validate(&self, tc: &TrainConfig) -> Result<(), UqError> {
        match self.kind {
            EstimatorKind::De | EstimatorKind::DeMve if self.ensemble_size < 2 => Err(
                UqError::InvalidConfig("ensemble_size must be at least 2".into()),
            ),
            EstimatorKind::Swag if self.swag_window < 2 || self.swag_window > tc.epochs => {
                Err(UqError::InvalidConfig(format!(
                    "swag_window must be in [2, epochs = {}], got {}",
                    tc.epochs, self.swag_window
                )))
            }
            EstimatorKind::Swag if self.swag_samples < 2 => Err(UqError::InvalidConfig(
                "swag_samples must be at least 2".into(),
            )),
            _ => Ok(()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum UqError {
    #[error("training set is empty")]
    EmptyTrainSet,
    #[error("reference set is empty")]
    EmptySet,
    #[error("invalid estimator config: {0}")]
    InvalidConfig(String),
    #[error(transparent)]
    Train(#[from] TrainError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error("estimator checkpoint: {0}")]
    Checkpoint(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct UncertainPrediction {
    pub y_hat: f64,
    pub sigma2_raw: f64,
    /// Filled in once a calibration map has been applied.
    pub sigma2_calibrated: Option<f64>,
}

/// Gaussian over weights from a window of training snapshots: mean `μ`,
/// diagonal variance and the deviations `θ_k − μ` of every snapshot.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SwagPosterior {
    pub mean: Vec<f64>,
    pub diag: Vec<f64>,
    pub deviations: Vec<Vec<f64>>,
}

impl SwagPosterior {
    pub fn from_snapshots(snapshots: &[Vec<f64>]) -> Self {
        assert!(!snapshots.is_empty(), "at least one snapshot");
        let k = snapshots.len() as f64;
        let dim = snapshots[0].len();
        let mut mean = vec![0.0; dim];
        let mut sq = vec![0.0; dim];
        for s in snapshots {
            for ((m, q), v) in mean.iter_mut().zip(&mut sq).zip(s) {
                *m += v / k;
                *q += v * v / k;
            }
        }
        let diag = mean.iter().zip(&sq).map(|(m, q)| (q - m * m).max(0.0)).collect();
        let deviations = snapshots
            .iter()
            .map(|s| s.iter().zip(&mean).map(|(v, m)| v - m).collect())
            .collect();
        SwagPosterior {
            mean,
            diag,
            deviations,
        }
    }

    /// `μ + (1/√2) diag^{1/2} z₁ + (1/√(2(K−1))) D z₂` with standard normal `z₁`, `z₂`.
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> Vec<f64> {
        let mut theta = self.mean.clone();
        for (t, d) in theta.iter_mut().zip(&self.diag) {
            let z: f64 = StandardNormal.sample(rng);
            *t += std::f64::consts::FRAC_1_SQRT_2 * d.sqrt() * z;
        }
        let k = self.deviations.len();
        if k > 1 {
            let scale = 1.0 / (2.0 * (k - 1) as f64).sqrt();
            for dev in &self.deviations {
                let z: f64 = StandardNormal.sample(rng);
                for (t, d) in theta.iter_mut().zip(dev) {
                    *t += scale * z * d;
                }
            }
        }
        theta
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "fitted", rename_all = "snake_case")]
enum Fitted {
    Random { base: Regressor, seed: u64 },
    Ensemble { members: Vec<Regressor> },
    Mve { model: Regressor },
    Swag { posterior: SwagPosterior, samples: Vec<Regressor> },
    TsTanimoto { base: Regressor, fingerprints: Vec<Fingerprint> },
    TsEuclidean { base: Regressor, embeddings: Vec<Vec<f64>> },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FittedEstimator {
    config: EstimatorConfig,
    fitted: Fitted,
}

#[derive(Serialize, Deserialize)]
struct EstimatorCheckpoint {
    format: String,
    version: u32,
    estimator: FittedEstimator,
}

fn fnv1a(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for &b in bytes {
        h ^= u64::from(b);
        h = h.wrapping_mul(0x0100_0000_01b3);
    }
    h
}

fn fingerprint(g: &MolecularGraph) -> Fingerprint {
    morgan_fingerprint(g, DEFAULT_FINGERPRINT_RADIUS, DEFAULT_FINGERPRINT_BITS)
}

fn euclidean(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt()
}

fn mean_and_population_variance(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    (mean, var)
}

fn bootstrap<'a, R: Rng + ?Sized>(
    graphs: &'a [PreparedGraph],
    ys: &[f64],
    rng: &mut R,
) -> (Vec<&'a PreparedGraph>, Vec<f64>) {
    let n = graphs.len();
    (0..n)
        .map(|_| {
            let i = rng.random_range(0..n);
            (&graphs[i], ys[i])
        })
        .unzip()
}

/// Trains the MSE model that random and trust-score estimators use for `ŷ`.
pub fn train_base_model<R: Rng + ?Sized>(
    train: &[LabeledSample],
    rc: RegressorConfig,
    tc: &TrainConfig,
    rng: &mut R,
) -> Result<Regressor, UqError> {
    if train.is_empty() {
        return Err(UqError::EmptyTrainSet);
    }
    let rc = RegressorConfig {
        variance_head: false,
        ..rc
    };
    Ok(model::train_mse(train, rc, tc, rng)?)
}

/// Fits an estimator, training a base model first when the kind needs one.
pub fn fit<R: Rng + ?Sized>(
    config: &EstimatorConfig,
    train: &[LabeledSample],
    rc: RegressorConfig,
    tc: &TrainConfig,
    rng: &mut R,
) -> Result<FittedEstimator, UqError> {
    let base = if config.kind.uses_base_model() {
        Some(train_base_model(train, rc, tc, rng)?)
    } else {
        None
    };
    fit_with_base(config, train, rc, tc, base, rng)
}

/// Fits an estimator. `base` supplies `ŷ` for random and trust-score kinds
/// and is ignored by the others; it is required for those kinds.
pub fn fit_with_base<R: Rng + ?Sized>(
    config: &EstimatorConfig,
    train: &[LabeledSample],
    rc: RegressorConfig,
    tc: &TrainConfig,
    base: Option<Regressor>,
    rng: &mut R,
) -> Result<FittedEstimator, UqError> {
    if train.is_empty() {
        return Err(UqError::EmptyTrainSet);
    }
    config.validate(tc)?;
    let need_base = || {
        base.clone()
            .ok_or_else(|| UqError::InvalidConfig(format!("{} needs a base model", config.kind)))
    };
    let graphs: Vec<PreparedGraph> = train.iter().map(|s| PreparedGraph::new(&s.graph)).collect();
    let ys: Vec<f64> = train.iter().map(|s| s.y).collect();
    let mse_rc = RegressorConfig {
        variance_head: false,
        ..rc
    };
    let mve_rc = RegressorConfig {
        variance_head: true,
        ..rc
    };
    let mse_tc = TrainConfig { mve: None, ..*tc };
    let mve_tc = TrainConfig {
        mve: Some(tc.mve.unwrap_or_default()),
        ..*tc
    };
    let fitted = match config.kind {
        EstimatorKind::Random => Fitted::Random {
            base: need_base()?,
            seed: rng.random(),
        },
        EstimatorKind::De | EstimatorKind::DeMve => {
            let (mrc, mtc) = if config.kind == EstimatorKind::De {
                (mse_rc, mse_tc)
            } else {
                (mve_rc, mve_tc)
            };
            let mut members = Vec::with_capacity(config.ensemble_size);
            for m in 0..config.ensemble_size {
                let (g, y) = bootstrap(&graphs, &ys, rng);
                log::debug!("training ensemble member {}/{}", m + 1, config.ensemble_size);
                members.push(model::train(&g, &y, mrc, &mtc, rng, &mut |_, _| {})?);
            }
            Fitted::Ensemble { members }
        }
        EstimatorKind::Mve => {
            let refs: Vec<&PreparedGraph> = graphs.iter().collect();
            Fitted::Mve {
                model: model::train(&refs, &ys, mve_rc, &mve_tc, rng, &mut |_, _| {})?,
            }
        }
        EstimatorKind::Swag => {
            let refs: Vec<&PreparedGraph> = graphs.iter().collect();
            let first = tc.epochs - config.swag_window;
            let mut snapshots = Vec::with_capacity(config.swag_window);
            model::train(&refs, &ys, mse_rc, &mse_tc, rng, &mut |epoch, m| {
                if epoch >= first {
                    snapshots.push(m.params().to_vec());
                }
            })?;
            let posterior = SwagPosterior::from_snapshots(&snapshots);
            let samples = (0..config.swag_samples)
                .map(|_| Regressor::from_params(mse_rc, posterior.sample(rng)))
                .collect::<Result<Vec<_>, _>>()?;
            Fitted::Swag { posterior, samples }
        }
        EstimatorKind::TsTanimoto => Fitted::TsTanimoto {
            base: need_base()?,
            fingerprints: train.iter().map(|s| fingerprint(&s.graph)).collect(),
        },
        EstimatorKind::TsEuclidean => {
            let base = need_base()?;
            let embeddings = graphs.iter().map(|g| base.predict_prepared(g).embedding).collect();
            Fitted::TsEuclidean { base, embeddings }
        }
    };
    Ok(FittedEstimator {
        config: *config,
        fitted,
    })
}

impl FittedEstimator {
    pub fn config(&self) -> &EstimatorConfig {
        &self.config
    }

    pub fn kind(&self) -> EstimatorKind {
        self.config.kind
    }

    /// Ensemble members, the MVE model, SWAG weight samples or the base model.
    pub fn models(&self) -> Vec<&Regressor> {
        match &self.fitted {
            Fitted::Random { base, .. }
            | Fitted::TsTanimoto { base, .. }
            | Fitted::TsEuclidean { base, .. } => vec![base],
            Fitted::Ensemble { members } => members.iter().collect(),
            Fitted::Mve { model } => vec![model],
            Fitted::Swag { samples, .. } => samples.iter().collect(),
        }
    }

    pub fn swag_posterior(&self) -> Option<&SwagPosterior> {
        match &self.fitted {
            Fitted::Swag { posterior, .. } => Some(posterior),
            _ => None,
        }
    }

    /// Number of stored reference elements for trust-score estimators.
    pub fn reference_count(&self) -> Option<usize> {
        match &self.fitted {
            Fitted::TsTanimoto { fingerprints, .. } => Some(fingerprints.len()),
            Fitted::TsEuclidean { embeddings, .. } => Some(embeddings.len()),
            _ => None,
        }
    }

    /// Prediction and raw uncertainty. The random baseline derives its value
    /// from its seed and the canonical SMILES, so repeated queries agree.
    pub fn predict(&self, g: &MolecularGraph) -> UncertainPrediction {
        let pg = PreparedGraph::new(g);
        let (y_hat, sigma2_raw) = match &self.fitted {
            Fitted::Random { base, seed } => {
                let h = fnv1a(g.canonical_smiles().as_bytes());
                let mut rng = ChaCha8Rng::seed_from_u64(seed ^ h);
                (base.predict_prepared(&pg).y_hat, rng.random::<f64>())
            }
            Fitted::Ensemble { members } => {
                let preds: Vec<_> = members.iter().map(|m| m.predict_prepared(&pg)).collect();
                let ys: Vec<f64> = preds.iter().map(|p| p.y_hat).collect();
                let (mean, var) = mean_and_population_variance(&ys);
                match self.config.kind {
                    EstimatorKind::DeMve => {
                        let mve = preds.iter().map(|p| p.sigma2.expect("variance head")).sum::<f64>()
                            / preds.len() as f64;
                        (mean, 0.5 * (var + mve))
                    }
                    _ => (mean, var),
                }
            }
            Fitted::Mve { model } => {
                let p = model.predict_prepared(&pg);
                (p.y_hat, p.sigma2.expect("variance head"))
            }
            Fitted::Swag { samples, .. } => {
                let ys: Vec<f64> = samples.iter().map(|m| m.predict_prepared(&pg).y_hat).collect();
                mean_and_population_variance(&ys)
            }
            Fitted::TsTanimoto { base, fingerprints } => {
                let fp = fingerprint(g);
                let d = nearest_distance(&fp, fingerprints, |a, b| {
                    tanimoto_distance(a, b).expect("fingerprints share a length")
                });
                (base.predict_prepared(&pg).y_hat, d)
            }
            Fitted::TsEuclidean { base, embeddings } => {
                let p = base.predict_prepared(&pg);
                let d = nearest_distance(&p.embedding, embeddings, |a, b| euclidean(a, b));
                (p.y_hat, d)
            }
        };
        UncertainPrediction {
            y_hat,
            sigma2_raw,
            sigma2_calibrated: None,
        }
    }

    pub fn predict_all(&self, graphs: &[MolecularGraph]) -> Vec<UncertainPrediction> {
        graphs.iter().map(|g| self.predict(g)).collect()
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(&EstimatorCheckpoint {
            format: CHECKPOINT_FORMAT.into(),
            version: CHECKPOINT_VERSION,
            estimator: self.clone(),
        })
        .expect("estimator serialization")
    }

    pub fn from_json(s: &str) -> Result<Self, UqError> {
        let ck: EstimatorCheckpoint =
            serde_json::from_str(s).map_err(|e| UqError::Checkpoint(e.to_string()))?;
        if ck.format != CHECKPOINT_FORMAT || ck.version != CHECKPOINT_VERSION {
            return Err(UqError::Checkpoint(format!(
                "unsupported checkpoint {} v{}",
                ck.format, ck.version
            )));
        }
        Ok(ck.estimator)
    }
}

/// Smallest `dist(x, r)` over `reference`; `+∞` for an empty set.
pub fn nearest_distance<T: ?Sized, U>(x: &T, reference: &[U], dist: impl Fn(&T, &U) -> f64) -> f64 {
    reference.iter().map(|r| dist(x, r)).fold(f64::INFINITY, f64::min)
}

/// Trust score for classification: distance to the nearest element of the
/// same class over distance to the nearest element of another class. A zero
/// denominator yields `+∞`.
pub fn trust_score_classification<T: ?Sized, U>(
    x: &T,
    same_class: &[U],
    other_class: &[U],
    dist: impl Fn(&T, &U) -> f64,
) -> Result<f64, UqError> {
    if same_class.is_empty() || other_class.is_empty() {
        return Err(UqError::EmptySet);
    }
    let num = nearest_distance(x, same_class, &dist);
    let den = nearest_distance(x, other_class, &dist);
    if den == 0.0 {
        log::warn!("trust score denominator is zero; returning +inf");
        return Ok(f64::INFINITY);
    }
    Ok(num / den)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::Architecture;
    use crate::molgraph::parse_smiles;

    fn data() -> Vec<LabeledSample> {
        ["C", "CC", "CCO", "CCN", "C1CC1", "CC=O", "CF", "CCCC"]
            .iter()
            .map(|s| LabeledSample::from_graph(parse_smiles(s).unwrap()))
            .collect()
    }

    fn rc() -> RegressorConfig {
        RegressorConfig {
            architecture: Architecture::Gcn,
            layers: 2,
            hidden_dim: 6,
            variance_head: false,
        }
    }

    fn tc() -> TrainConfig {
        TrainConfig {
            epochs: 6,
            batch_size: 4,
            ..TrainConfig::default()
        }
    }

    fn fit_kind(kind: EstimatorKind) -> FittedEstimator {
        let mut cfg = EstimatorConfig::new(kind);
        cfg.swag_window = 4;
        cfg.swag_samples = 5;
        let tc = TrainConfig {
            mve: Some(model::MveConfig {
                beta: 0.5,
                warmup_epochs: 2,
            }),
            ..tc()
        };
        fit(&cfg, &data(), rc(), &tc, &mut ChaCha8Rng::seed_from_u64(21)).unwrap()
    }

    #[test]
    fn kind_names_parse() {
        for k in EstimatorKind::ALL {
            assert_eq!(k.name().parse::<EstimatorKind>().unwrap(), k);
        }
        assert!("ensemble".parse::<EstimatorKind>().is_err());
    }

    #[test]
    fn de_members_differ_and_mean_is_exact() {
        let est = fit_kind(EstimatorKind::De);
        let members = est.models();
        assert_eq!(members.len(), 3);
        assert_ne!(members[0].params(), members[1].params());
        assert_ne!(members[1].params(), members[2].params());
        let g = parse_smiles("CCCO").unwrap();
        let p = est.predict(&g);
        let ys: Vec<f64> = members.iter().map(|m| m.predict(&g).y_hat).collect();
        assert!((p.y_hat - ys.iter().sum::<f64>() / 3.0).abs() < 1e-12);
        assert!(p.sigma2_raw > 0.0);
    }

    #[test]
    fn identical_members_give_zero_variance() {
        let mut est = fit_kind(EstimatorKind::De);
        if let Fitted::Ensemble { members } = &mut est.fitted {
            let first = members[0].clone();
            members.iter_mut().for_each(|m| *m = first.clone());
        }
        assert_eq!(est.predict(&parse_smiles("CCC").unwrap()).sigma2_raw, 0.0);
    }

    #[test]
    fn de_mve_combines_both_terms() {
        let est = fit_kind(EstimatorKind::DeMve);
        let g = parse_smiles("CCN").unwrap();
        let preds: Vec<_> = est.models().iter().map(|m| m.predict(&g)).collect();
        let ys: Vec<f64> = preds.iter().map(|p| p.y_hat).collect();
        let (_, var) = mean_and_population_variance(&ys);
        let mve = preds.iter().map(|p| p.sigma2.unwrap()).sum::<f64>() / 3.0;
        assert!((est.predict(&g).sigma2_raw - 0.5 * (var + mve)).abs() < 1e-12);
    }

    #[test]
    fn swag_collects_window_and_draws_samples() {
        let est = fit_kind(EstimatorKind::Swag);
        let post = est.swag_posterior().unwrap();
        assert_eq!(post.deviations.len(), 4);
        assert!(post.diag.iter().all(|&d| d >= 0.0));
        assert_eq!(est.models().len(), 5);
        let zero = SwagPosterior {
            mean: vec![1.0, 2.0],
            diag: vec![0.0, 0.0],
            deviations: vec![vec![0.0, 0.0]; 3],
        };
        assert_eq!(zero.sample(&mut ChaCha8Rng::seed_from_u64(1)), vec![1.0, 2.0]);
    }

    #[test]
    fn trust_scores_vanish_on_training_elements() {
        for kind in [EstimatorKind::TsTanimoto, EstimatorKind::TsEuclidean] {
            let est = fit_kind(kind);
            assert_eq!(est.reference_count(), Some(8));
            for s in data() {
                assert_eq!(est.predict(&s.graph).sigma2_raw, 0.0);
            }
        }
    }

    #[test]
    fn random_baseline_is_repeatable_and_in_unit_interval() {
        let est = fit_kind(EstimatorKind::Random);
        let g = parse_smiles("CCOC").unwrap();
        let a = est.predict(&g);
        assert_eq!(a, est.predict(&g.permuted(&[3, 2, 1, 0])));
        assert!((0.0..1.0).contains(&a.sigma2_raw));
    }

    #[test]
    fn checkpoints_round_trip() {
        for kind in EstimatorKind::ALL {
            let est = fit_kind(kind);
            let back = FittedEstimator::from_json(&est.to_json()).unwrap();
            assert_eq!(est, back);
            let g = parse_smiles("CC(C)O").unwrap();
            assert_eq!(est.predict(&g), back.predict(&g));
        }
    }

    #[test]
    fn config_validation() {
        let mut cfg = EstimatorConfig::new(EstimatorKind::De);
        cfg.ensemble_size = 1;
        assert!(cfg.validate(&tc()).is_err());
        let cfg = EstimatorConfig::new(EstimatorKind::Swag);
        assert!(cfg.validate(&tc()).is_err());
        let err = fit_with_base(
            &EstimatorConfig::new(EstimatorKind::Random),
            &data(),
            rc(),
            &tc(),
            None,
            &mut ChaCha8Rng::seed_from_u64(0),
        );
        assert!(matches!(err, Err(UqError::InvalidConfig(_))));
    }

    #[test]
    fn trust_score_examples() {
        let d = |a: &f64, b: &f64| (a - b).abs();
        assert_eq!(trust_score_classification(&0.0, &[1.0], &[2.0], d).unwrap(), 0.5);
        assert_eq!(trust_score_classification(&0.0, &[0.0, 3.0], &[2.0], d).unwrap(), 0.0);
        assert_eq!(trust_score_classification(&0.0, &[1.0], &[-1.0], d).unwrap(), 1.0);
        assert_eq!(trust_score_classification(&0.0, &[1.0], &[0.0], d).unwrap(), f64::INFINITY);
        assert_eq!(trust_score_classification(&0.0, &[], &[0.0], d), Err(UqError::EmptySet));
    }
}
