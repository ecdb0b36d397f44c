//! The repetition loop: split, fit, calibrate, predict, evaluate.
//!
//! Metrics are computed by [`evaluate`] from the persisted prediction rows
//! and counterfactual records alone, so a report can be rebuilt from its
//! artifacts.

use cfuq_core::calibrate::{CalibrationError, IsotonicCalibrator};
use cfuq_core::counterfactual::{
    enumerate_1_edit, rank_counterfactuals, CounterfactualError, CounterfactualRecord, RankingMode,
};
use cfuq_core::metrics::{
    pearson_rho, r_squared, relative_truthfulness, retention_threshold, rll, uer_curve, Accumulator,
    EvalRecord, MetricsError, Retention, UerCurve,
};
use cfuq_core::model::Regressor;
use cfuq_core::molgraph::MolecularGraph;
use cfuq_core::oracle::{crippen_logp, LabeledSample};
use cfuq_core::uq::{self, EstimatorKind, FittedEstimator, UncertainPrediction, UqError};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::config::{CounterfactualConfig, ExperimentConfig};
use crate::data::{repetition_seed, stage_rng};
use crate::split::{split, Split, SplitError};

pub const PREDICTION_SCHEMA: &str = "cfuq.prediction.v1";

#[derive(Debug, Error)]
pub enum RunError {
    #[error("split: {0}")]
    Split(#[from] SplitError),
    #[error("estimator: {0}")]
    Uq(#[from] UqError),
    #[error("calibration: {0}")]
    Calibration(#[from] CalibrationError),
    #[error("counterfactuals: {0}")]
    Counterfactual(#[from] CounterfactualError),
    #[error("metrics: {0}")]
    Metrics(#[from] MetricsError),
}

/// Anything that predicts a value and a raw uncertainty for a graph.
pub trait UncertaintyModel {
    fn predict(&self, g: &MolecularGraph) -> UncertainPrediction;
}

impl UncertaintyModel for FittedEstimator {
    fn predict(&self, g: &MolecularGraph) -> UncertainPrediction {
        FittedEstimator::predict(self, g)
    }
}

/// One test-set prediction as written to `test_predictions.jsonl`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictionRow {
    pub schema: String,
    pub smiles: String,
    pub y: f64,
    pub y_hat: f64,
    pub sigma2_raw: f64,
    pub sigma2_cal: f64,
}

impl PredictionRow {
    fn raw(&self) -> EvalRecord {
        EvalRecord::new(self.y, self.y_hat, self.sigma2_raw)
    }
}

/// Everything a single (repetition, estimator) run produces.
#[derive(Debug, Clone)]
pub struct RunOutput {
    pub calibrator: IsotonicCalibrator,
    pub test: Vec<PredictionRow>,
    pub counterfactuals: Option<Vec<CounterfactualRecord>>,
    pub metrics: RunMetrics,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunMetrics {
    pub n_test: usize,
    pub r2: Option<f64>,
    /// Pearson correlation between `|ŷ - y|` and raw `σ²`.
    pub rho: Option<f64>,
    pub uer_auc_mean: f64,
    pub uer_auc_max: f64,
    pub uer_auc_mean_clamped: f64,
    pub uer_auc_max_clamped: f64,
    /// Same curves computed on calibrated `σ²`.
    pub rho_calibrated: Option<f64>,
    pub uer_auc_mean_calibrated: f64,
    /// Relative log likelihood with variance `(π/2)·c²` for calibrated value `c`.
    pub rll: Option<f64>,
    pub counterfactual: Option<CounterfactualMetrics>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CounterfactualMetrics {
    pub n_originals: usize,
    pub n_counterfactuals: usize,
    /// Correlation and error reduction on the counterfactuals, against oracle labels.
    pub rho: Option<f64>,
    pub uer_auc_mean: f64,
    /// Calibrated test-set threshold keeping the configured retention fraction.
    pub xi: Retention,
    pub retained: usize,
    pub truthfulness_initial: f64,
    pub truthfulness_filtered: Option<f64>,
    pub truthfulness_gain: Option<f64>,
    /// Strictest sweep point: raw threshold over the counterfactuals keeping
    /// the configured sweep fraction.
    pub sweep: Retention,
    pub truthfulness_at_sweep: f64,
}

/// Calibrated uncertainty on the `|error|` scale; isotonic targets are
/// absolute errors, so the Gaussian variance is `(π/2)·c²`.
pub fn variance_from_calibrated(c: f64) -> f64 {
    std::f64::consts::FRAC_PI_2 * c * c
}

/// Fits the isotonic map on the calibration set.
pub fn calibrate<M: UncertaintyModel + ?Sized>(
    model: &M,
    calibration: &[LabeledSample],
) -> Result<IsotonicCalibrator, CalibrationError> {
    let (raw, errs): (Vec<f64>, Vec<f64>) = calibration
        .iter()
        .map(|s| {
            let p = model.predict(&s.graph);
            (p.sigma2_raw, (p.y_hat - s.y).abs())
        })
        .unzip();
    IsotonicCalibrator::fit(&raw, &errs)
}

pub fn predict_rows<M: UncertaintyModel + ?Sized>(
    model: &M,
    calibrator: &IsotonicCalibrator,
    samples: &[LabeledSample],
) -> Vec<PredictionRow> {
    samples
        .iter()
        .map(|s| {
            let p = model.predict(&s.graph);
            PredictionRow {
                schema: PREDICTION_SCHEMA.into(),
                smiles: s.smiles().to_string(),
                y: s.y,
                y_hat: p.y_hat,
                sigma2_raw: p.sigma2_raw,
                sigma2_cal: calibrator.apply(p.sigma2_raw),
            }
        })
        .collect()
}

/// Top-`top_k` one-edit counterfactuals of every original, with uncertainties
/// and oracle labels attached. Originals without any valid edit are skipped.
pub fn counterfactual_stage<M: UncertaintyModel + ?Sized>(
    model: &M,
    calibrator: &IsotonicCalibrator,
    originals: &[LabeledSample],
    top_k: usize,
) -> Result<Vec<CounterfactualRecord>, CounterfactualError> {
    let mut out = Vec::new();
    for original in originals {
        let candidates = enumerate_1_edit(&original.graph);
        if candidates.is_empty() {
            log::warn!("{} has no valid one-edit neighbor", original.smiles());
            continue;
        }
        let predictions: std::collections::HashMap<&str, UncertainPrediction> = candidates
            .iter()
            .map(|c| (c.canonical_smiles(), model.predict(c)))
            .collect();
        let own = model.predict(&original.graph);
        let lookup = |g: &MolecularGraph| -> Result<f64, CounterfactualError> {
            Ok(predictions
                .get(g.canonical_smiles())
                .map_or(own.y_hat, |p| p.y_hat))
        };
        let mut ranked = rank_counterfactuals(lookup, original, &candidates, top_k, RankingMode::Absolute)?;
        for r in &mut ranked {
            let p = &predictions[r.perturbed_smiles.as_str()];
            r.original_sigma2 = Some(calibrator.apply(own.sigma2_raw));
            r.sigma2_prime = Some(calibrator.apply(p.sigma2_raw));
            r.sigma2_prime_raw = Some(p.sigma2_raw);
            let graph = r.perturbed_graph.as_ref().expect("ranked records carry their graph");
            r.label(crippen_logp(graph));
        }
        out.extend(ranked);
    }
    Ok(out)
}

fn fraction_truthful(records: &[&CounterfactualRecord]) -> Result<f64, MetricsError> {
    let bits: Vec<bool> = records
        .iter()
        .map(|r| r.truthful.ok_or(MetricsError::InvalidValue))
        .collect::<Result<_, _>>()?;
    relative_truthfulness(&bits)
}

fn cf_eval(r: &CounterfactualRecord) -> Result<EvalRecord, MetricsError> {
    match (r.y_prime, r.sigma2_prime_raw) {
        (Some(y), Some(s)) => Ok(EvalRecord::new(y, r.y_hat_prime, s)),
        _ => Err(MetricsError::InvalidValue),
    }
}

/// Metrics of one run from its test rows and (optional) labeled counterfactuals.
pub fn evaluate(
    test: &[PredictionRow],
    counterfactuals: Option<&[CounterfactualRecord]>,
    cf: &CounterfactualConfig,
) -> Result<RunMetrics, MetricsError> {
    if test.is_empty() {
        return Err(MetricsError::Empty);
    }
    let raw: Vec<EvalRecord> = test.iter().map(PredictionRow::raw).collect();
    let cal: Vec<EvalRecord> = test
        .iter()
        .map(|r| EvalRecord::new(r.y, r.y_hat, r.sigma2_cal))
        .collect();
    let errors: Vec<f64> = raw.iter().map(EvalRecord::abs_error).collect();
    let sig = |v: &[EvalRecord]| v.iter().map(|r| r.sigma2).collect::<Vec<_>>();
    let ys: Vec<f64> = test.iter().map(|r| r.y).collect();
    let y_hats: Vec<f64> = test.iter().map(|r| r.y_hat).collect();
    let mean_curve = uer_curve(&raw, Accumulator::Mean)?;
    let max_curve = uer_curve(&raw, Accumulator::Max)?;
    let variances: Vec<EvalRecord> = test
        .iter()
        .map(|r| EvalRecord::new(r.y, r.y_hat, variance_from_calibrated(r.sigma2_cal)))
        .collect();
    let counterfactual = match counterfactuals {
        Some(records) => Some(counterfactual_metrics(test, records, cf)?),
        None => None,
    };
    Ok(RunMetrics {
        n_test: test.len(),
        r2: r_squared(&ys, &y_hats).ok(),
        rho: pearson_rho(&errors, &sig(&raw)).ok(),
        uer_auc_mean: mean_curve.auc_raw,
        uer_auc_max: max_curve.auc_raw,
        uer_auc_mean_clamped: mean_curve.auc,
        uer_auc_max_clamped: max_curve.auc,
        rho_calibrated: pearson_rho(&errors, &sig(&cal)).ok(),
        uer_auc_mean_calibrated: uer_curve(&cal, Accumulator::Mean)?.auc_raw,
        rll: rll(&variances).ok(),
        counterfactual,
    })
}

fn counterfactual_metrics(
    test: &[PredictionRow],
    records: &[CounterfactualRecord],
    cf: &CounterfactualConfig,
) -> Result<CounterfactualMetrics, MetricsError> {
    if records.is_empty() {
        return Err(MetricsError::Empty);
    }
    let evals: Vec<EvalRecord> = records.iter().map(cf_eval).collect::<Result<_, _>>()?;
    let errors: Vec<f64> = evals.iter().map(EvalRecord::abs_error).collect();
    let raw: Vec<f64> = evals.iter().map(|r| r.sigma2).collect();
    let xi = retention_threshold(&test.iter().map(|r| r.sigma2_cal).collect::<Vec<_>>(), cf.retention)?;
    let all: Vec<&CounterfactualRecord> = records.iter().collect();
    let mut kept = Vec::new();
    for r in records {
        if r.sigma2_prime.ok_or(MetricsError::InvalidValue)? <= xi.xi {
            kept.push(r);
        }
    }
    let initial = fraction_truthful(&all)?;
    let filtered = if kept.is_empty() {
        None
    } else {
        Some(fraction_truthful(&kept)?)
    };
    let sweep = retention_threshold(&raw, cf.sweep_retention)?;
    let swept: Vec<&CounterfactualRecord> = records
        .iter()
        .zip(&raw)
        .filter(|(_, &s)| s <= sweep.xi)
        .map(|(r, _)| r)
        .collect();
    let n_originals = {
        let mut names: Vec<&str> = records.iter().map(|r| r.original_smiles.as_str()).collect();
        names.sort_unstable();
        names.dedup();
        names.len()
    };
    Ok(CounterfactualMetrics {
        n_originals,
        n_counterfactuals: records.len(),
        rho: pearson_rho(&errors, &raw).ok(),
        uer_auc_mean: uer_curve(&evals, Accumulator::Mean)?.auc_raw,
        xi,
        retained: kept.len(),
        truthfulness_initial: initial,
        truthfulness_filtered: filtered,
        truthfulness_gain: filtered.map(|f| f - initial),
        sweep,
        truthfulness_at_sweep: fraction_truthful(&swept)?,
    })
}

/// UER curves (mean and max accumulators) over the raw test uncertainties.
pub fn test_curves(test: &[PredictionRow]) -> Result<[UerCurve; 2], MetricsError> {
    let raw: Vec<EvalRecord> = test.iter().map(PredictionRow::raw).collect();
    Ok([uer_curve(&raw, Accumulator::Mean)?, uer_curve(&raw, Accumulator::Max)?])
}

/// One point of the descending-threshold truthfulness sweep.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SweepPoint {
    /// Raw threshold divided by the largest raw counterfactual uncertainty.
    pub xi: f64,
    pub threshold: f64,
    pub retained_fraction: f64,
    pub truthfulness: f64,
}

/// Truthfulness of the counterfactuals with raw `σ²' ≤ t`, for every distinct
/// `t` from the largest down.
pub fn truthfulness_sweep(records: &[CounterfactualRecord]) -> Result<Vec<SweepPoint>, MetricsError> {
    let mut pairs: Vec<(f64, bool)> = records
        .iter()
        .map(|r| match (r.sigma2_prime_raw, r.truthful) {
            (Some(s), Some(t)) => Ok((s, t)),
            _ => Err(MetricsError::InvalidValue),
        })
        .collect::<Result<_, _>>()?;
    if pairs.is_empty() {
        return Err(MetricsError::Empty);
    }
    pairs.sort_by(|a, b| a.0.total_cmp(&b.0));
    let n = pairs.len();
    let max = pairs[n - 1].0;
    let mut out = Vec::new();
    let mut truthful_prefix = 0;
    let mut i = 0;
    while i < n {
        let t = pairs[i].0;
        while i < n && pairs[i].0 == t {
            truthful_prefix += usize::from(pairs[i].1);
            i += 1;
        }
        out.push(SweepPoint {
            xi: if max > 0.0 { t / max } else { 1.0 },
            threshold: t,
            retained_fraction: i as f64 / n as f64,
            truthfulness: truthful_prefix as f64 / i as f64,
        });
    }
    out.reverse();
    Ok(out)
}

/// Runs one estimator on one repetition's partitions.
pub fn run_single<M: UncertaintyModel + ?Sized>(
    model: &M,
    calibration: &[LabeledSample],
    test: &[LabeledSample],
    cf: &CounterfactualConfig,
) -> Result<RunOutput, RunError> {
    let calibrator = calibrate(model, calibration)?;
    let rows = predict_rows(model, &calibrator, test);
    let counterfactuals = if cf.enabled {
        let n = cf.n_originals.min(test.len());
        Some(counterfactual_stage(model, &calibrator, &test[..n], cf.top_k)?)
    } else {
        None
    };
    let metrics = evaluate(&rows, counterfactuals.as_deref(), cf)?;
    Ok(RunOutput {
        calibrator,
        test: rows,
        counterfactuals,
        metrics,
    })
}

pub struct RepetitionPartitions {
    pub split: Split,
    pub train: Vec<LabeledSample>,
    pub calibration: Vec<LabeledSample>,
    pub test: Vec<LabeledSample>,
}

pub fn partition(data: &[LabeledSample], cfg: &ExperimentConfig, rep_seed: u64) -> Result<RepetitionPartitions, SplitError> {
    let s = split(data, &cfg.split, &mut stage_rng(rep_seed, "split"))?;
    let take = |idx: &[usize]| idx.iter().map(|&i| data[i].clone()).collect::<Vec<_>>();
    Ok(RepetitionPartitions {
        train: take(&s.train),
        calibration: take(&s.calibration),
        test: take(&s.test),
        split: s,
    })
}

/// Result of one (repetition, estimator) pair; `output` is the error message on failure.
pub struct RunResult {
    pub repetition: usize,
    pub seed: u64,
    pub estimator: EstimatorKind,
    pub sizes: Option<[usize; 3]>,
    pub output: Result<RunOutput, String>,
}

/// Fits every configured estimator on every repetition. Failures are
/// recorded per run; the remaining runs continue.
pub fn run_repetitions(
    cfg: &ExperimentConfig,
    data: &[LabeledSample],
    mut on_result: impl FnMut(&RunResult),
) -> Vec<RunResult> {
    let mut results = Vec::new();
    let rc = cfg.model.regressor();
    for rep in 0..cfg.repetitions {
        let seed = repetition_seed(cfg.seed, rep);
        let mut push = |estimator, sizes, output| {
            let r = RunResult {
                repetition: rep,
                seed,
                estimator,
                sizes,
                output,
            };
            on_result(&r);
            results.push(r);
        };
        let parts = match partition(data, cfg, seed) {
            Ok(p) => p,
            Err(e) => {
                for &kind in &cfg.estimators {
                    push(kind, None, Err(RunError::from(e.clone()).to_string()));
                }
                continue;
            }
        };
        let sizes = Some([parts.train.len(), parts.calibration.len(), parts.test.len()]);
        let mut base: Option<Result<Regressor, String>> = None;
        for &kind in &cfg.estimators {
            log::info!("repetition {rep}: fitting {kind}");
            let base_model = if kind.uses_base_model() {
                let b = base.get_or_insert_with(|| {
                    uq::train_base_model(&parts.train, rc, &cfg.training, &mut stage_rng(seed, "base"))
                        .map_err(|e| RunError::from(e).to_string())
                });
                match b {
                    Ok(m) => Some(m.clone()),
                    Err(e) => {
                        push(kind, sizes, Err(e.clone()));
                        continue;
                    }
                }
            } else {
                None
            };
            let output = uq::fit_with_base(
                &cfg.estimator_config(kind),
                &parts.train,
                rc,
                &cfg.training,
                base_model,
                &mut stage_rng(seed, kind.name()),
            )
            .map_err(RunError::from)
            .and_then(|est| run_single(&est, &parts.calibration, &parts.test, &cfg.counterfactual))
            .map_err(|e| e.to_string());
            push(kind, sizes, output);
        }
    }
    results
}

#[cfg(test)]
mod tests {
    use super::*;
    use cfuq_core::molgraph::parse_smiles;

    fn row(y: f64, y_hat: f64, s: f64) -> PredictionRow {
        PredictionRow {
            schema: PREDICTION_SCHEMA.into(),
            smiles: "C".into(),
            y,
            y_hat,
            sigma2_raw: s,
            sigma2_cal: s,
        }
    }

    fn cf_record(s: f64, truthful: bool) -> CounterfactualRecord {
        CounterfactualRecord {
            original_smiles: "C".into(),
            original_y: 0.0,
            original_y_hat: 0.0,
            original_sigma2: Some(0.0),
            perturbed_smiles: "CC".into(),
            y_hat_prime: 1.0,
            divergence: 1.0,
            sigma2_prime: Some(s),
            sigma2_prime_raw: Some(s),
            y_prime: Some(if truthful { 1.0 } else { 0.5 }),
            truthful: Some(truthful),
            perturbed_graph: None,
        }
    }

    #[test]
    fn sweep_is_monotone_in_retention() {
        let recs: Vec<_> = [(0.1, true), (0.4, false), (0.4, true), (0.9, false)]
            .iter()
            .map(|&(s, t)| cf_record(s, t))
            .collect();
        let sweep = truthfulness_sweep(&recs).unwrap();
        assert_eq!(sweep.len(), 3);
        assert_eq!(sweep[0].retained_fraction, 1.0);
        assert_eq!(sweep[0].xi, 1.0);
        assert_eq!(sweep[0].truthfulness, 0.5);
        assert!((sweep[1].truthfulness - 2.0 / 3.0).abs() < 1e-12);
        assert_eq!(sweep[2].truthfulness, 1.0);
        assert!(sweep.windows(2).all(|w| w[0].retained_fraction >= w[1].retained_fraction));
    }

    #[test]
    fn evaluate_reports_gain_against_filtered_set() {
        let test: Vec<_> = (0..10).map(|i| row(0.0, 0.1 * f64::from(i), 0.1 * f64::from(i))).collect();
        let recs = vec![cf_record(0.05, true), cf_record(0.5, false)];
        let cf = CounterfactualConfig {
            enabled: true,
            ..CounterfactualConfig::default()
        };
        let m = evaluate(&test, Some(&recs), &cf).unwrap();
        let c = m.counterfactual.unwrap();
        // 20% of 10 test rows keeps the two lowest, so xi = 0.1
        assert_eq!(c.xi.xi, 0.1);
        assert_eq!(c.retained, 1);
        assert_eq!(c.truthfulness_initial, 0.5);
        assert_eq!(c.truthfulness_gain, Some(0.5));
        assert!((m.uer_auc_mean - m.uer_auc_mean_clamped).abs() < 1e-12);
        assert!(m.rho.unwrap() > 0.99);
    }

    struct Oracle;

    impl UncertaintyModel for Oracle {
        fn predict(&self, g: &MolecularGraph) -> UncertainPrediction {
            UncertainPrediction {
                y_hat: crippen_logp(g),
                sigma2_raw: g.atom_count() as f64,
                sigma2_calibrated: None,
            }
        }
    }

    #[test]
    fn oracle_counterfactuals_are_truthful() {
        let samples: Vec<_> = ["CCO", "C1=CC=CC=C1", "CC(=O)N", "CCCC", "OCCN"]
            .iter()
            .map(|s| LabeledSample::from_graph(parse_smiles(s).unwrap()))
            .collect();
        let cf = CounterfactualConfig {
            enabled: true,
            n_originals: 5,
            ..CounterfactualConfig::default()
        };
        let out = run_single(&Oracle, &samples, &samples, &cf).unwrap();
        let c = out.metrics.counterfactual.unwrap();
        assert_eq!(c.truthfulness_initial, 1.0);
        assert_eq!(c.truthfulness_gain.unwrap_or(0.0), 0.0);
        assert_eq!(c.n_originals, 5);
        assert_eq!(c.n_counterfactuals, 50);
    }
}
