//! Evaluation metrics: accuracy, uncertainty quality and counterfactual truthfulness.
//!
//! The uncertainty error reduction (UER) curve filters elements whose
//! normalized uncertainty `σ²/σ²_max` exceeds a threshold `ξ` and tracks how
//! much an accumulated error (mean, max or median) drops relative to the full
//! set. Thresholds are inclusive so `ξ = 1` always keeps every element, and
//! the accumulated error of an empty selection is 0. The curve is evaluated on
//! its exact breakpoints, so the area under it is computed without
//! discretization error.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Floor applied to variances inside [`rll`] so that exact predictions do not produce `log 0`.
pub const VARIANCE_FLOOR: f64 = 1e-8;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum MetricsError {
    #[error("no records")]
    Empty,
    #[error("input lengths differ: {0} vs {1}")]
    LengthMismatch(usize, usize),
    #[error("need at least {needed} values, got {got}")]
    TooShort { needed: usize, got: usize },
    #[error("input is constant; the statistic is undefined")]
    Constant,
    #[error("variance must be positive, got {0}")]
    NonPositiveVariance(f64),
    #[error("non-finite or negative value in input")]
    InvalidValue,
    #[error("retention fraction must be in (0, 1], got {0}")]
    InvalidFraction(f64),
    #[error("relative log likelihood is undefined: every error equals the RMSE")]
    UndefinedRll,
}

/// Ground truth, prediction and predicted uncertainty for one element.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EvalRecord {
    pub y: f64,
    pub y_hat: f64,
    pub sigma2: f64,
}

impl EvalRecord {
    pub fn new(y: f64, y_hat: f64, sigma2: f64) -> Self {
        EvalRecord { y, y_hat, sigma2 }
    }

    pub fn abs_error(&self) -> f64 {
        (self.y - self.y_hat).abs()
    }
}

/// Function folding a set of absolute errors into one number.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Accumulator {
    Mean,
    Max,
    Median,
}

impl Accumulator {
    /// Accumulated value of `values`; 0 for an empty set.
    pub fn apply(self, values: &[f64]) -> f64 {
        if values.is_empty() {
            return 0.0;
        }
        match self {
            Accumulator::Mean => values.iter().sum::<f64>() / values.len() as f64,
            Accumulator::Max => values.iter().copied().fold(f64::NEG_INFINITY, f64::max),
            Accumulator::Median => {
                let mut v = values.to_vec();
                v.sort_by(f64::total_cmp);
                median_of_sorted(&v)
            }
        }
    }
}

fn median_of_sorted(v: &[f64]) -> f64 {
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UerCurve {
    pub accumulator: Accumulator,
    /// Ascending thresholds in `[0, 1]`: 0, every distinct normalized uncertainty, 1.
    pub grid: Vec<f64>,
    /// Accumulated error of the elements retained at each threshold.
    pub gamma: Vec<f64>,
    /// Relative error reduction, clamped to `[0, 1]`.
    pub delta_rel: Vec<f64>,
    /// Relative error reduction before clamping.
    pub delta_rel_raw: Vec<f64>,
    /// Area under `delta_rel` (clamped curve); in `[0, 1]`.
    pub auc: f64,
    /// Area under `delta_rel_raw`.
    pub auc_raw: f64,
    /// Grid points whose raw reduction fell outside `[0, 1]`.
    pub out_of_range: usize,
    /// Set when all uncertainties are equal and the curve is all-or-nothing.
    pub degenerate: bool,
}

impl UerCurve {
    /// Clamped relative reduction at an arbitrary threshold (step interpolation).
    pub fn delta_at(&self, xi: f64) -> f64 {
        let idx = self.grid.partition_point(|&g| g <= xi).saturating_sub(1);
        self.delta_rel[idx]
    }

    /// Unclamped counterpart of [`UerCurve::delta_at`].
    pub fn delta_raw_at(&self, xi: f64) -> f64 {
        let idx = self.grid.partition_point(|&g| g <= xi).saturating_sub(1);
        self.delta_rel_raw[idx]
    }
}

/// Exact uncertainty error reduction curve and its area.
pub fn uer_curve(records: &[EvalRecord], accumulator: Accumulator) -> Result<UerCurve, MetricsError> {
    if records.is_empty() {
        return Err(MetricsError::Empty);
    }
    if records
        .iter()
        .any(|r| !(r.sigma2.is_finite() && r.sigma2 >= 0.0 && r.y.is_finite() && r.y_hat.is_finite()))
    {
        return Err(MetricsError::InvalidValue);
    }
    let sigma_max = records.iter().map(|r| r.sigma2).fold(0.0, f64::max);
    let first = records[0].sigma2;
    let degenerate = records.iter().all(|r| r.sigma2 == first);
    let normalized: Vec<f64> = records
        .iter()
        .map(|r| if sigma_max > 0.0 { r.sigma2 / sigma_max } else { 0.0 })
        .collect();
    let mut order: Vec<usize> = (0..records.len()).collect();
    order.sort_by(|&a, &b| normalized[a].total_cmp(&normalized[b]));

    let mut grid = vec![0.0];
    for &i in &order {
        if normalized[i] > *grid.last().expect("non-empty") {
            grid.push(normalized[i]);
        }
    }
    if *grid.last().expect("non-empty") < 1.0 {
        grid.push(1.0);
    }

    let mut gamma = Vec::with_capacity(grid.len());
    let mut retained: Vec<f64> = Vec::with_capacity(records.len());
    let mut sorted_retained: Vec<f64> = Vec::new();
    let (mut sum, mut max) = (0.0, 0.0f64);
    let mut next = 0;
    for &xi in &grid {
        while next < order.len() && normalized[order[next]] <= xi {
            let e = records[order[next]].abs_error();
            retained.push(e);
            sum += e;
            max = max.max(e);
            if accumulator == Accumulator::Median {
                let pos = sorted_retained.partition_point(|&x| x < e);
                sorted_retained.insert(pos, e);
            }
            next += 1;
        }
        let value = if retained.is_empty() {
            0.0
        } else {
            match accumulator {
                Accumulator::Mean => sum / retained.len() as f64,
                Accumulator::Max => max,
                Accumulator::Median => median_of_sorted(&sorted_retained),
            }
        };
        gamma.push(value);
    }

    let full = *gamma.last().expect("grid ends at 1");
    let peak = gamma.iter().copied().fold(0.0, f64::max);
    let delta_rel_raw: Vec<f64> = gamma
        .iter()
        .map(|&g| if peak > 0.0 { (full - g) / peak } else { 0.0 })
        .collect();
    let out_of_range = delta_rel_raw.iter().filter(|&&d| !(0.0..=1.0).contains(&d)).count();
    let delta_rel: Vec<f64> = delta_rel_raw.iter().map(|d| d.clamp(0.0, 1.0)).collect();
    let area = |values: &[f64]| -> f64 {
        grid.windows(2)
            .zip(values)
            .map(|(w, &d)| d * (w[1] - w[0]))
            .sum()
    };
    let auc = area(&delta_rel);
    let auc_raw = area(&delta_rel_raw);
    if out_of_range > 0 {
        log::debug!("UER curve: {out_of_range} grid points outside [0, 1] were clamped");
    }
    Ok(UerCurve {
        accumulator,
        grid,
        gamma,
        delta_rel,
        delta_rel_raw,
        auc,
        auc_raw,
        out_of_range,
        degenerate,
    })
}

fn check_pair(a: &[f64], b: &[f64], needed: usize) -> Result<(), MetricsError> {
    if a.len() != b.len() {
        return Err(MetricsError::LengthMismatch(a.len(), b.len()));
    }
    if a.len() < needed {
        return Err(MetricsError::TooShort {
            needed,
            got: a.len(),
        });
    }
    if a.iter().chain(b).any(|v| !v.is_finite()) {
        return Err(MetricsError::InvalidValue);
    }
    Ok(())
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

/// Pearson product-moment correlation.
pub fn pearson_rho(errors: &[f64], sigmas: &[f64]) -> Result<f64, MetricsError> {
    check_pair(errors, sigmas, 2)?;
    let (me, ms) = (mean(errors), mean(sigmas));
    let (mut cov, mut ve, mut vs) = (0.0, 0.0, 0.0);
    for (&e, &s) in errors.iter().zip(sigmas) {
        cov += (e - me) * (s - ms);
        ve += (e - me) * (e - me);
        vs += (s - ms) * (s - ms);
    }
    if ve == 0.0 || vs == 0.0 {
        return Err(MetricsError::Constant);
    }
    Ok((cov / (ve.sqrt() * vs.sqrt())).clamp(-1.0, 1.0))
}

/// Gaussian negative log likelihood `½(Δy²/σ² + log 2πσ²)`.
pub fn nll(delta_y: f64, variance: f64) -> Result<f64, MetricsError> {
    if !(variance > 0.0) || !variance.is_finite() {
        return Err(MetricsError::NonPositiveVariance(variance));
    }
    Ok(0.5 * (delta_y * delta_y / variance + (2.0 * PI * variance).ln()))
}

/// Relative log likelihood: 0 for the constant-RMSE variance, 1 for the
/// per-sample ideal variance `Δy²`. `sigma2` is read as a variance and both
/// it and `Δy²` are floored at [`VARIANCE_FLOOR`].
pub fn rll(records: &[EvalRecord]) -> Result<f64, MetricsError> {
    if records.is_empty() {
        return Err(MetricsError::Empty);
    }
    let mse = records.iter().map(|r| (r.y - r.y_hat).powi(2)).sum::<f64>() / records.len() as f64;
    let baseline_var = mse.max(VARIANCE_FLOOR);
    let (mut num, mut den) = (0.0, 0.0);
    for r in records {
        let dy = r.y_hat - r.y;
        let baseline = nll(dy, baseline_var)?;
        num += nll(dy, r.sigma2.max(VARIANCE_FLOOR))? - baseline;
        den += nll(dy, (dy * dy).max(VARIANCE_FLOOR))? - baseline;
    }
    if den == 0.0 {
        return Err(MetricsError::UndefinedRll);
    }
    Ok(num / den)
}

/// True when the closed error intervals `[y ± ε]` of the two records are
/// disjoint. Touching endpoints count as overlap.
pub fn truthful(original: &EvalRecord, counterfactual: &EvalRecord) -> bool {
    let (e, e2) = (original.abs_error(), counterfactual.abs_error());
    let (lo1, hi1) = (original.y - e, original.y + e);
    let (lo2, hi2) = (counterfactual.y - e2, counterfactual.y + e2);
    hi1 < lo2 || hi2 < lo1
}

/// Fraction of truthful counterfactuals.
pub fn relative_truthfulness(bits: &[bool]) -> Result<f64, MetricsError> {
    if bits.is_empty() {
        return Err(MetricsError::Empty);
    }
    Ok(bits.iter().filter(|&&b| b).count() as f64 / bits.len() as f64)
}

/// Threshold that keeps the `⌈fraction·n⌉` lowest uncertainties.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Retention {
    pub xi: f64,
    /// `⌈fraction·n⌉`
    pub requested: usize,
    /// Elements with `σ² ≤ xi`; exceeds `requested` when ties straddle the threshold.
    pub retained: usize,
    pub ties: bool,
}

pub fn retention_threshold(sigmas: &[f64], fraction: f64) -> Result<Retention, MetricsError> {
    if sigmas.is_empty() {
        return Err(MetricsError::Empty);
    }
    if !(fraction > 0.0 && fraction <= 1.0) {
        return Err(MetricsError::InvalidFraction(fraction));
    }
    if sigmas.iter().any(|s| !s.is_finite()) {
        return Err(MetricsError::InvalidValue);
    }
    let n = sigmas.len();
    // The epsilon absorbs representation error such as 0.2 * 10 = 2.0000000000000004.
    let requested = ((fraction * n as f64 - 1e-9).ceil() as usize).clamp(1, n);
    let mut sorted = sigmas.to_vec();
    sorted.sort_by(f64::total_cmp);
    let xi = sorted[requested - 1];
    let retained = sorted.partition_point(|&s| s <= xi);
    Ok(Retention {
        xi,
        requested,
        retained,
        ties: retained > requested,
    })
}

/// Coefficient of determination `1 - SS_res / SS_tot`.
pub fn r_squared(ys: &[f64], y_hats: &[f64]) -> Result<f64, MetricsError> {
    check_pair(ys, y_hats, 2)?;
    let m = mean(ys);
    let ss_tot: f64 = ys.iter().map(|y| (y - m).powi(2)).sum();
    if ss_tot == 0.0 {
        return Err(MetricsError::Constant);
    }
    let ss_res: f64 = ys.iter().zip(y_hats).map(|(y, p)| (y - p).powi(2)).sum();
    Ok(1.0 - ss_res / ss_tot)
}

/// Mean and sample standard deviation (0 for a single value).
pub fn mean_std(values: &[f64]) -> (f64, f64) {
    if values.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let m = mean(values);
    if values.len() < 2 {
        return (m, 0.0);
    }
    let var = values.iter().map(|v| (v - m).powi(2)).sum::<f64>() / (values.len() - 1) as f64;
    (m, var.sqrt())
}
