//! Isotonic calibration of uncertainty scores.
//!
//! A monotone non-decreasing map from raw uncertainty to expected absolute
//! error is fitted on held-out data with the pool-adjacent-violators
//! algorithm. Between fitted points the map is linear; outside the fitted
//! range it is constant.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};
use thiserror::Error;

const TEXT_HEADER: &str = "# isotonic calibration v1: raw_uncertainty calibrated_value";

#[derive(Debug, Clone, PartialEq, Error)]
pub enum CalibrationError {
    #[error("need at least 2 calibration pairs, got {0}")]
    TooFewPairs(usize),
    #[error("input lengths differ: {0} vs {1}")]
    LengthMismatch(usize, usize),
    #[error("calibration pair {0} has a non-finite value or negative error")]
    InvalidPair(usize),
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
}

/// Weighted least-squares monotone non-decreasing fit of `values`.
///
/// Panics if the slices have different lengths.
pub fn pava(values: &[f64], weights: &[f64]) -> Vec<f64> {
    assert_eq!(values.len(), weights.len());
    // blocks of (mean, weight, length)
    let mut blocks: Vec<(f64, f64, usize)> = Vec::with_capacity(values.len());
    for (&v, &w) in values.iter().zip(weights) {
        blocks.push((v, w, 1));
        while blocks.len() > 1 {
            let (m2, w2, l2) = blocks[blocks.len() - 1];
            let (m1, w1, l1) = blocks[blocks.len() - 2];
            if m1 <= m2 {
                break;
            }
            blocks.pop();
            let w = w1 + w2;
            *blocks.last_mut().expect("two blocks") = ((m1 * w1 + m2 * w2) / w, w, l1 + l2);
        }
    }
    blocks
        .into_iter()
        .flat_map(|(m, _, l)| std::iter::repeat_n(m, l))
        .collect()
}

/// Fitted monotone map from raw uncertainty to calibrated value.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IsotonicCalibrator {
    breakpoints: Vec<f64>,
    values: Vec<f64>,
}

impl IsotonicCalibrator {
    /// Fit on pairs of raw uncertainty and observed absolute error. Equal raw
    /// values are pooled before fitting.
    pub fn fit(raw: &[f64], abs_errors: &[f64]) -> Result<Self, CalibrationError> {
        if raw.len() != abs_errors.len() {
            return Err(CalibrationError::LengthMismatch(raw.len(), abs_errors.len()));
        }
        if raw.len() < 2 {
            return Err(CalibrationError::TooFewPairs(raw.len()));
        }
        for (i, (&x, &e)) in raw.iter().zip(abs_errors).enumerate() {
            if !x.is_finite() || !e.is_finite() || e < 0.0 {
                return Err(CalibrationError::InvalidPair(i));
            }
        }
        let mut pairs: Vec<(f64, f64)> = raw.iter().copied().zip(abs_errors.iter().copied()).collect();
        pairs.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.total_cmp(&b.1)));

        let mut xs: Vec<f64> = Vec::new();
        let mut means: Vec<f64> = Vec::new();
        let mut weights: Vec<f64> = Vec::new();
        let mut i = 0;
        while i < pairs.len() {
            let x = pairs[i].0;
            let mut j = i;
            let mut sum = 0.0;
            while j < pairs.len() && pairs[j].0 == x {
                sum += pairs[j].1;
                j += 1;
            }
            xs.push(x);
            means.push(sum / (j - i) as f64);
            weights.push((j - i) as f64);
            i = j;
        }
        if xs.len() < 2 {
            log::warn!("calibration set has a single distinct raw value; using a constant map");
        }
        let values = pava(&means, &weights);
        Ok(IsotonicCalibrator {
            breakpoints: xs,
            values,
        })
    }

    pub fn breakpoints(&self) -> &[f64] {
        &self.breakpoints
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn apply(&self, x: f64) -> f64 {
        let xs = &self.breakpoints;
        let ys = &self.values;
        let last = xs.len() - 1;
        if x.is_nan() {
            return x;
        }
        if x <= xs[0] {
            return ys[0];
        }
        if x >= xs[last] {
            return ys[last];
        }
        let hi = xs.partition_point(|&b| b <= x);
        let lo = hi - 1;
        let t = (x - xs[lo]) / (xs[hi] - xs[lo]);
        ys[lo] + t * (ys[hi] - ys[lo])
    }

    pub fn apply_all(&self, xs: &[f64]) -> Vec<f64> {
        xs.iter().map(|&x| self.apply(x)).collect()
    }

    /// Two whitespace-separated columns, one breakpoint per line.
    pub fn to_text(&self) -> String {
        let mut out = String::from(TEXT_HEADER);
        out.push('\n');
        for (x, y) in self.breakpoints.iter().zip(&self.values) {
            writeln!(out, "{x:e} {y:e}").expect("writing to a String");
        }
        out
    }

    pub fn from_text(text: &str) -> Result<Self, CalibrationError> {
        let mut breakpoints = Vec::new();
        let mut values = Vec::new();
        for (idx, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let parse_err = |message: &str| CalibrationError::Parse {
                line: idx + 1,
                message: message.to_string(),
            };
            let cols: Vec<&str> = line.split_whitespace().collect();
            if cols.len() != 2 {
                return Err(parse_err("expected two columns"));
            }
            let x: f64 = cols[0].parse().map_err(|_| parse_err("bad raw value"))?;
            let y: f64 = cols[1].parse().map_err(|_| parse_err("bad calibrated value"))?;
            if !x.is_finite() || !y.is_finite() {
                return Err(parse_err("non-finite value"));
            }
            if breakpoints.last().is_some_and(|&p| p >= x) {
                return Err(parse_err("raw values must be strictly increasing"));
            }
            if values.last().is_some_and(|&p| p > y) {
                return Err(parse_err("calibrated values must be non-decreasing"));
            }
            breakpoints.push(x);
            values.push(y);
        }
        if breakpoints.is_empty() {
            return Err(CalibrationError::TooFewPairs(0));
        }
        Ok(IsotonicCalibrator {
            breakpoints,
            values,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn pava_pools_violators() {
        assert_eq!(pava(&[1.0, 3.0, 2.0, 4.0], &[1.0; 4]), vec![1.0, 2.5, 2.5, 4.0]);
        assert_eq!(pava(&[3.0, 2.0, 1.0], &[1.0; 3]), vec![2.0; 3]);
        assert_eq!(pava(&[3.0, 1.0], &[3.0, 1.0]), vec![2.5, 2.5]);
    }

    #[test]
    fn interpolates_and_clamps() {
        let c = IsotonicCalibrator::fit(&[0.0, 1.0, 2.0], &[0.0, 1.0, 3.0]).unwrap();
        assert_eq!(c.apply(-5.0), 0.0);
        assert_eq!(c.apply(0.5), 0.5);
        assert_eq!(c.apply(1.5), 2.0);
        assert_eq!(c.apply(10.0), 3.0);
    }

    #[test]
    fn ties_are_pooled() {
        let c = IsotonicCalibrator::fit(&[1.0, 1.0, 2.0], &[0.0, 2.0, 0.5]).unwrap();
        assert_eq!(c.breakpoints(), &[1.0, 2.0]);
        // pooled tie mean 1.0 with weight 2 against 0.5 with weight 1
        let v = 2.5 / 3.0;
        assert_eq!(c.values(), &[v, v]);
    }

    #[test]
    fn constant_input_gives_constant_map() {
        let c = IsotonicCalibrator::fit(&[0.3, 0.3, 0.3], &[1.0, 2.0, 3.0]).unwrap();
        assert_eq!(c.apply(0.0), 2.0);
        assert_eq!(c.apply(1.0), 2.0);
    }

    #[test]
    fn rejects_bad_input() {
        assert_eq!(IsotonicCalibrator::fit(&[1.0], &[1.0]), Err(CalibrationError::TooFewPairs(1)));
        assert_eq!(
            IsotonicCalibrator::fit(&[1.0, 2.0], &[1.0, -1.0]),
            Err(CalibrationError::InvalidPair(1))
        );
        assert!(IsotonicCalibrator::fit(&[1.0, f64::NAN], &[1.0, 1.0]).is_err());
        assert!(IsotonicCalibrator::fit(&[1.0, 2.0], &[1.0]).is_err());
    }

    #[test]
    fn text_round_trip_is_exact() {
        let raw = [0.1, 0.7, 0.2, 1e-7, 3.3];
        let err = [0.3, 0.1, 0.9, 0.0, 2.0 / 3.0];
        let c = IsotonicCalibrator::fit(&raw, &err).unwrap();
        let back = IsotonicCalibrator::from_text(&c.to_text()).unwrap();
        assert_eq!(c, back);
        assert!(IsotonicCalibrator::from_text("1 2\n0.5 3\n").is_err());
        assert!(IsotonicCalibrator::from_text("1 2 3\n").is_err());
        assert!(IsotonicCalibrator::from_text("# only a comment\n").is_err());
    }
}
