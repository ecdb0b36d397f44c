use std::path::Path;

use cfuq::config::ExperimentConfig;
use cfuq::report::{read_report, recompute, RunStatus};
use cfuq::run_experiment;
use cfuq_core::uq::EstimatorKind;

fn small_config() -> ExperimentConfig {
    let path = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs/smoke.toml");
    let mut cfg = ExperimentConfig::load(&path).unwrap();
    cfg.repetitions = 1;
    cfg.estimators = vec![EstimatorKind::Random, EstimatorKind::DeMve];
    cfg
}

#[test]
fn report_recomputes_from_artifacts() {
    let dir = tempfile::tempdir().unwrap();
    let report = run_experiment(&small_config(), dir.path()).unwrap();
    assert_eq!(report.runs.len(), 2);
    assert!(report.runs.iter().all(|r| r.status == RunStatus::Ok));
    assert_eq!(read_report(&dir.path().join("report.json")).unwrap(), report);
    assert_eq!(recompute(dir.path()).unwrap(), report);
}

#[test]
fn truthfulness_curve_is_well_formed() {
    let dir = tempfile::tempdir().unwrap();
    let report = run_experiment(&small_config(), dir.path()).unwrap();
    let run = report.runs.iter().find(|r| r.estimator == EstimatorKind::DeMve).unwrap();
    let path = dir.path().join(run.artifacts.as_ref().unwrap()).join("truthfulness_curve.csv");
    let mut reader = csv::Reader::from_path(&path).unwrap();
    let rows: Vec<csv::StringRecord> = reader.records().map(Result::unwrap).collect();
    let num = |r: &csv::StringRecord, i: usize| r[i].parse::<f64>().unwrap();

    let sweep: Vec<_> = rows.iter().filter(|r| r[0].is_empty()).collect();
    assert!(!sweep.is_empty());
    assert_eq!(num(sweep[0], 1), 1.0);
    assert_eq!(num(sweep[0], 3), 1.0);
    for w in sweep.windows(2) {
        // thresholds descend, so retention can only shrink
        assert!(num(w[1], 2) < num(w[0], 2));
        assert!(num(w[1], 1) <= num(w[0], 1));
        assert!(num(w[1], 3) <= num(w[0], 3));
    }
    for r in &sweep {
        let t = num(r, 4);
        assert!((0.0..=1.0).contains(&t));
    }

    let cf = run.metrics.as_ref().unwrap().counterfactual.as_ref().unwrap();
    let marker: Vec<_> = rows.iter().filter(|r| &r[0] == "xi20").collect();
    match cf.truthfulness_filtered {
        Some(filtered) => {
            assert_eq!(marker.len(), 1);
            assert_eq!(num(marker[0], 4), filtered);
            assert_eq!(num(marker[0], 3), cf.retained as f64 / cf.n_counterfactuals as f64);
            let gain = cf.truthfulness_gain.unwrap();
            assert!((filtered - cf.truthfulness_initial - gain).abs() < 1e-12);
        }
        None => assert!(marker.is_empty()),
    }
}

#[test]
fn rejects_unknown_config_keys() {
    let err = ExperimentConfig::from_toml("seed = 1\nrepetitons = 2\n");
    assert!(err.is_err());
}
