//! Report assembly, artifact layout and recomputation from artifacts.
//!
//! ```text
//! <out>/report.json
//! <out>/dataset.jsonl
//! <out>/runs/rep<r>/<estimator>/{test_predictions.jsonl, counterfactuals.jsonl,
//!                                calibration.txt, uer_curve.csv, truthfulness_curve.csv}
//! <out>/curves/<estimator>_uer.csv, <estimator>_truthfulness.csv
//! ```

use std::collections::BTreeMap;
use std::fs::{self, File};
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use cfuq_core::counterfactual::{self, CounterfactualRecord};
use cfuq_core::metrics::{mean_std, MetricsError, UerCurve};
use cfuq_core::oracle::LabeledSample;
use cfuq_core::uq::EstimatorKind;
use serde::{Deserialize, Serialize};
use serde_json::Value;
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::config::ExperimentConfig;
use crate::data::{dataset_seed, repetition_seed, write_jsonl, DataError};
use crate::experiment::{
    evaluate, test_curves, truthfulness_sweep, PredictionRow, RunMetrics, RunOutput, RunResult,
};

pub const REPORT_SCHEMA: &str = "cfuq.report.v1";
/// Points of the fixed threshold grid used for averaged curves.
pub const CURVE_POINTS: usize = 101;

#[derive(Debug, Error)]
pub enum ReportError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("{path}: {message}")]
    Format { path: PathBuf, message: String },
    #[error(transparent)]
    Data(#[from] DataError),
    #[error("metrics: {0}")]
    Metrics(#[from] MetricsError),
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> ReportError + '_ {
    move |source| ReportError::Io {
        path: path.to_path_buf(),
        source,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub version: String,
    pub config_hash: String,
    pub master_seed: u64,
    pub dataset_seed: u64,
    pub repetition_seeds: Vec<u64>,
    pub dataset_size: usize,
    /// SHA-256 of `dataset.jsonl`.
    pub dataset_hash: String,
    pub config: ExperimentConfig,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitSizes {
    pub train: usize,
    pub calibration: usize,
    pub test: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RunStatus {
    Ok,
    Failed,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunEntry {
    pub repetition: usize,
    pub seed: u64,
    pub estimator: EstimatorKind,
    pub status: RunStatus,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub error: Option<String>,
    pub sizes: Option<SplitSizes>,
    /// Artifact directory relative to the output directory.
    pub artifacts: Option<String>,
    pub metrics: Option<RunMetrics>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Stat {
    pub mean: f64,
    pub std: f64,
    /// Runs that produced the value.
    pub n: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Aggregate {
    pub runs: usize,
    pub failed: usize,
    /// Mean and sample standard deviation per metric, keyed by dotted path.
    pub metrics: BTreeMap<String, Stat>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentReport {
    pub schema: String,
    pub name: String,
    pub provenance: Provenance,
    pub runs: Vec<RunEntry>,
    pub aggregates: BTreeMap<String, Aggregate>,
}

impl ExperimentReport {
    pub fn aggregate(&self, kind: EstimatorKind) -> Option<&Aggregate> {
        self.aggregates.get(kind.name())
    }

    /// Mean of `metric` over the successful runs of `kind`.
    pub fn mean(&self, kind: EstimatorKind, metric: &str) -> Option<f64> {
        self.aggregate(kind)?.metrics.get(metric).map(|s| s.mean)
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("report serialization");
        s.push('\n');
        s
    }
}

fn flatten(prefix: &str, v: &Value, out: &mut BTreeMap<String, f64>) {
    match v {
        Value::Number(n) => {
            if let Some(x) = n.as_f64() {
                out.insert(prefix.to_string(), x);
            }
        }
        Value::Object(map) => {
            for (k, child) in map {
                let key = if prefix.is_empty() { k.clone() } else { format!("{prefix}.{k}") };
                flatten(&key, child, out);
            }
        }
        _ => {}
    }
}

/// Per-metric mean and standard deviation over successful runs, grouped by estimator.
pub fn aggregate(runs: &[RunEntry]) -> BTreeMap<String, Aggregate> {
    let mut grouped: BTreeMap<String, (usize, usize, BTreeMap<String, Vec<f64>>)> = BTreeMap::new();
    for run in runs {
        let entry = grouped.entry(run.estimator.name().to_string()).or_default();
        entry.0 += 1;
        match &run.metrics {
            Some(m) if run.status == RunStatus::Ok => {
                let mut flat = BTreeMap::new();
                flatten("", &serde_json::to_value(m).expect("metrics serialization"), &mut flat);
                for (k, x) in flat {
                    entry.2.entry(k).or_default().push(x);
                }
            }
            _ => entry.1 += 1,
        }
    }
    grouped
        .into_iter()
        .map(|(name, (runs, failed, values))| {
            let metrics = values
                .into_iter()
                .map(|(k, xs)| {
                    let (mean, std) = mean_std(&xs);
                    (k, Stat { mean, std, n: xs.len() })
                })
                .collect();
            (name, Aggregate { runs, failed, metrics })
        })
        .collect()
}

fn run_dir(repetition: usize, kind: EstimatorKind) -> String {
    format!("runs/rep{repetition}/{}", kind.name())
}

fn sha256_file(path: &Path) -> Result<String, ReportError> {
    let bytes = fs::read(path).map_err(io_err(path))?;
    Ok(hex::encode(Sha256::digest(&bytes)))
}

fn csv_writer(path: &Path) -> Result<csv::Writer<File>, ReportError> {
    csv::Writer::from_path(path).map_err(|e| ReportError::Format {
        path: path.to_path_buf(),
        message: e.to_string(),
    })
}

fn csv_err(path: &Path) -> impl Fn(csv::Error) -> ReportError + '_ {
    move |e| ReportError::Format {
        path: path.to_path_buf(),
        message: e.to_string(),
    }
}

fn write_lines<T: Serialize>(rows: &[T], path: &Path) -> Result<(), ReportError> {
    let mut out = BufWriter::new(File::create(path).map_err(io_err(path))?);
    for r in rows {
        let line = serde_json::to_string(r).expect("row serialization");
        writeln!(out, "{line}").map_err(io_err(path))?;
    }
    out.flush().map_err(io_err(path))
}

pub fn read_predictions(path: &Path) -> Result<Vec<PredictionRow>, ReportError> {
    let file = File::open(path).map_err(io_err(path))?;
    let mut rows = Vec::new();
    for line in BufReader::new(file).lines() {
        let line = line.map_err(io_err(path))?;
        if line.trim().is_empty() {
            continue;
        }
        rows.push(serde_json::from_str(&line).map_err(|e| ReportError::Format {
            path: path.to_path_buf(),
            message: e.to_string(),
        })?);
    }
    Ok(rows)
}

fn write_uer_csv(curves: &[UerCurve], path: &Path) -> Result<(), ReportError> {
    let mut w = csv_writer(path)?;
    let e = csv_err(path);
    w.write_record(["accumulator", "xi", "gamma", "delta_rel", "delta_rel_raw"]).map_err(&e)?;
    for c in curves {
        let acc = format!("{:?}", c.accumulator).to_lowercase();
        for i in 0..c.grid.len() {
            w.write_record([
                acc.clone(),
                c.grid[i].to_string(),
                c.gamma[i].to_string(),
                c.delta_rel[i].to_string(),
                c.delta_rel_raw[i].to_string(),
            ])
            .map_err(&e)?;
        }
    }
    w.flush().map_err(io_err(path))
}

/// Sweep rows plus one `xi20` row: the calibrated test-set threshold
/// expressed as the largest raw uncertainty it retains.
fn write_truthfulness_csv(records: &[CounterfactualRecord], m: &RunMetrics, path: &Path) -> Result<(), ReportError> {
    let sweep = truthfulness_sweep(records)?;
    let mut w = csv_writer(path)?;
    let e = csv_err(path);
    w.write_record(["marker", "xi", "threshold", "retained_fraction", "truthfulness"]).map_err(&e)?;
    for p in &sweep {
        w.write_record([
            String::new(),
            p.xi.to_string(),
            p.threshold.to_string(),
            p.retained_fraction.to_string(),
            p.truthfulness.to_string(),
        ])
        .map_err(&e)?;
    }
    let cf = m.counterfactual.as_ref();
    if let (Some(cf), Some(tr)) = (cf, cf.and_then(|c| c.truthfulness_filtered)) {
        let max = records.iter().filter_map(|r| r.sigma2_prime_raw).fold(0.0, f64::max);
        let t = records
            .iter()
            .filter(|r| r.sigma2_prime.is_some_and(|s| s <= cf.xi.xi))
            .filter_map(|r| r.sigma2_prime_raw)
            .fold(f64::NEG_INFINITY, f64::max);
        w.write_record([
            "xi20".to_string(),
            (if max > 0.0 { t / max } else { 1.0 }).to_string(),
            t.to_string(),
            (cf.retained as f64 / records.len() as f64).to_string(),
            tr.to_string(),
        ])
        .map_err(&e)?;
    }
    w.flush().map_err(io_err(path))
}

fn write_run(out_dir: &Path, rel: &str, output: &RunOutput) -> Result<(), ReportError> {
    let dir = out_dir.join(rel);
    fs::create_dir_all(&dir).map_err(io_err(&dir))?;
    write_lines(&output.test, &dir.join("test_predictions.jsonl"))?;
    let cal_path = dir.join("calibration.txt");
    fs::write(&cal_path, output.calibrator.to_text()).map_err(io_err(&cal_path))?;
    write_uer_csv(&test_curves(&output.test)?, &dir.join("uer_curve.csv"))?;
    if let Some(cfs) = &output.counterfactuals {
        let path = dir.join("counterfactuals.jsonl");
        let file = File::create(&path).map_err(io_err(&path))?;
        let mut w = BufWriter::new(file);
        counterfactual::write_jsonl(cfs, &mut w).map_err(io_err(&path))?;
        w.flush().map_err(io_err(&path))?;
        write_truthfulness_csv(cfs, &output.metrics, &dir.join("truthfulness_curve.csv"))?;
    }
    Ok(())
}

fn fixed_grid() -> impl Iterator<Item = f64> {
    (0..CURVE_POINTS).map(|i| i as f64 / (CURVE_POINTS - 1) as f64)
}

/// Averaged UER and truthfulness curves per estimator on a fixed threshold grid.
fn write_average_curves(out_dir: &Path, kind: EstimatorKind, runs: &[&RunOutput]) -> Result<(), ReportError> {
    let dir = out_dir.join("curves");
    fs::create_dir_all(&dir).map_err(io_err(&dir))?;
    let curves: Vec<[UerCurve; 2]> = runs.iter().map(|r| test_curves(&r.test)).collect::<Result<_, _>>()?;
    let path = dir.join(format!("{}_uer.csv", kind.name()));
    let mut w = csv_writer(&path)?;
    let e = csv_err(&path);
    w.write_record(["accumulator", "xi", "delta_rel_raw_mean", "delta_rel_raw_std", "runs"]).map_err(&e)?;
    for (a, acc) in ["mean", "max"].iter().enumerate() {
        for xi in fixed_grid() {
            let vals: Vec<f64> = curves.iter().map(|c| c[a].delta_raw_at(xi)).collect();
            let (m, s) = mean_std(&vals);
            w.write_record([acc.to_string(), xi.to_string(), m.to_string(), s.to_string(), vals.len().to_string()])
                .map_err(&e)?;
        }
    }
    w.flush().map_err(io_err(&path))?;

    let cf_runs: Vec<&Vec<CounterfactualRecord>> = runs.iter().filter_map(|r| r.counterfactuals.as_ref()).collect();
    if cf_runs.is_empty() {
        return Ok(());
    }
    let path = dir.join(format!("{}_truthfulness.csv", kind.name()));
    let mut w = csv_writer(&path)?;
    let e = csv_err(&path);
    w.write_record(["xi", "retained_fraction", "truthfulness", "runs"]).map_err(&e)?;
    for xi in fixed_grid() {
        let mut retained = Vec::new();
        let mut truth = Vec::new();
        for recs in &cf_runs {
            let max = recs.iter().filter_map(|r| r.sigma2_prime_raw).fold(0.0, f64::max);
            let kept: Vec<&CounterfactualRecord> = recs
                .iter()
                .filter(|r| {
                    let s = r.sigma2_prime_raw.unwrap_or(f64::INFINITY);
                    (if max > 0.0 { s / max } else { 0.0 }) <= xi
                })
                .collect();
            retained.push(kept.len() as f64 / recs.len().max(1) as f64);
            if !kept.is_empty() {
                let t = kept.iter().filter(|r| r.truthful == Some(true)).count();
                truth.push(t as f64 / kept.len() as f64);
            }
        }
        let tr = if truth.is_empty() { String::new() } else { mean_std(&truth).0.to_string() };
        w.write_record([xi.to_string(), mean_std(&retained).0.to_string(), tr, truth.len().to_string()])
            .map_err(&e)?;
    }
    w.flush().map_err(io_err(&path))
}

/// Writes every artifact and `report.json`; returns the report.
pub fn write_report(
    out_dir: &Path,
    cfg: &ExperimentConfig,
    data: &[LabeledSample],
    results: &[RunResult],
) -> Result<ExperimentReport, ReportError> {
    fs::create_dir_all(out_dir).map_err(io_err(out_dir))?;
    let dataset_path = out_dir.join("dataset.jsonl");
    write_jsonl(data, &dataset_path)?;
    let mut runs = Vec::with_capacity(results.len());
    for r in results {
        let sizes = r.sizes.map(|[train, calibration, test]| SplitSizes {
            train,
            calibration,
            test,
        });
        let entry = match &r.output {
            Ok(output) => {
                let rel = run_dir(r.repetition, r.estimator);
                write_run(out_dir, &rel, output)?;
                RunEntry {
                    repetition: r.repetition,
                    seed: r.seed,
                    estimator: r.estimator,
                    status: RunStatus::Ok,
                    error: None,
                    sizes,
                    artifacts: Some(rel),
                    metrics: Some(output.metrics.clone()),
                }
            }
            Err(message) => RunEntry {
                repetition: r.repetition,
                seed: r.seed,
                estimator: r.estimator,
                status: RunStatus::Failed,
                error: Some(message.clone()),
                sizes,
                artifacts: None,
                metrics: None,
            },
        };
        runs.push(entry);
    }
    for &kind in &cfg.estimators {
        let outputs: Vec<&RunOutput> = results
            .iter()
            .filter(|r| r.estimator == kind)
            .filter_map(|r| r.output.as_ref().ok())
            .collect();
        if !outputs.is_empty() {
            write_average_curves(out_dir, kind, &outputs)?;
        }
    }
    let report = ExperimentReport {
        schema: REPORT_SCHEMA.into(),
        name: cfg.name.clone(),
        provenance: Provenance {
            version: env!("CARGO_PKG_VERSION").into(),
            config_hash: cfg.hash(),
            master_seed: cfg.seed,
            dataset_seed: dataset_seed(cfg.seed),
            repetition_seeds: (0..cfg.repetitions).map(|r| repetition_seed(cfg.seed, r)).collect(),
            dataset_size: data.len(),
            dataset_hash: sha256_file(&dataset_path)?,
            config: cfg.clone(),
        },
        aggregates: aggregate(&runs),
        runs,
    };
    let path = out_dir.join("report.json");
    fs::write(&path, report.to_json()).map_err(io_err(&path))?;
    Ok(report)
}

pub fn read_report(path: &Path) -> Result<ExperimentReport, ReportError> {
    let text = fs::read_to_string(path).map_err(io_err(path))?;
    serde_json::from_str(&text).map_err(|e| ReportError::Format {
        path: path.to_path_buf(),
        message: e.to_string(),
    })
}

/// Rebuilds the report in `out_dir` from its JSONL artifacts alone.
pub fn recompute(out_dir: &Path) -> Result<ExperimentReport, ReportError> {
    let mut report = read_report(&out_dir.join("report.json"))?;
    let cf_cfg = report.provenance.config.counterfactual.clone();
    for run in &mut report.runs {
        let Some(rel) = &run.artifacts else { continue };
        let dir = out_dir.join(rel);
        let rows = read_predictions(&dir.join("test_predictions.jsonl"))?;
        let cfs = if cf_cfg.enabled {
            let path = dir.join("counterfactuals.jsonl");
            let file = File::open(&path).map_err(io_err(&path))?;
            Some(counterfactual::read_jsonl(BufReader::new(file)).map_err(io_err(&path))?)
        } else {
            None
        };
        run.metrics = Some(evaluate(&rows, cfs.as_deref(), &cf_cfg)?);
    }
    report.aggregates = aggregate(&report.runs);
    Ok(report)
}
