//! Experiment configuration: a TOML file plus command-line overrides.

use std::path::{Path, PathBuf};

use cfuq_core::model::{Architecture, RegressorConfig, TrainConfig};
use cfuq_core::uq::{EstimatorConfig, EstimatorKind};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("reading {path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("parsing config: {0}")]
    Parse(#[from] toml::de::Error),
    #[error("invalid config: {0}")]
    Invalid(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DatasetSource {
    /// Random edit walks from built-in seed molecules, labeled by the oracle.
    Synthetic,
    /// JSONL rows `{"smiles": ..., "y": ...}`.
    Jsonl,
    /// One SMILES per line, labeled by the oracle.
    Smiles,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DatasetConfig {
    pub source: DatasetSource,
    pub size: usize,
    pub max_steps: usize,
    pub path: Option<PathBuf>,
}

impl Default for DatasetConfig {
    fn default() -> Self {
        DatasetConfig {
            source: DatasetSource::Synthetic,
            size: 2000,
            max_steps: 12,
            path: None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SplitKind {
    Iid,
    OodStruct,
    OodValue,
}

impl std::str::FromStr for SplitKind {
    type Err = ConfigError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "iid" => Ok(SplitKind::Iid),
            "ood_struct" => Ok(SplitKind::OodStruct),
            "ood_value" => Ok(SplitKind::OodValue),
            _ => Err(ConfigError::Invalid(format!("unknown split {s:?}"))),
        }
    }
}

/// Which end(s) of the target distribution form the value-based test set.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Tails {
    Both,
    Upper,
    Lower,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SplitConfig {
    pub kind: SplitKind,
    /// `(train, calibration, test)`
    pub fractions: [f64; 3],
    pub tails: Tails,
}

impl Default for SplitConfig {
    fn default() -> Self {
        SplitConfig {
            kind: SplitKind::Iid,
            fractions: [0.8, 0.1, 0.1],
            tails: Tails::Both,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    pub architecture: Architecture,
    pub layers: usize,
    pub hidden_dim: usize,
}

impl Default for ModelConfig {
    fn default() -> Self {
        let d = RegressorConfig::default();
        ModelConfig {
            architecture: d.architecture,
            layers: d.layers,
            hidden_dim: d.hidden_dim,
        }
    }
}

impl ModelConfig {
    pub fn regressor(&self) -> RegressorConfig {
        RegressorConfig {
            architecture: self.architecture,
            layers: self.layers,
            hidden_dim: self.hidden_dim,
            variance_head: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EstimatorParams {
    pub ensemble_size: usize,
    pub swag_window: usize,
    pub swag_samples: usize,
}

impl Default for EstimatorParams {
    fn default() -> Self {
        let d = EstimatorConfig::new(EstimatorKind::De);
        EstimatorParams {
            ensemble_size: d.ensemble_size,
            swag_window: d.swag_window,
            swag_samples: d.swag_samples,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CounterfactualConfig {
    pub enabled: bool,
    /// Test molecules (in test-set order) that receive counterfactuals.
    pub n_originals: usize,
    pub top_k: usize,
    /// Fraction of the test set kept by the filtering threshold.
    pub retention: f64,
    /// Fraction of counterfactuals kept at the strictest reported sweep point.
    pub sweep_retention: f64,
}

impl Default for CounterfactualConfig {
    fn default() -> Self {
        CounterfactualConfig {
            enabled: false,
            n_originals: 50,
            top_k: cfuq_core::counterfactual::DEFAULT_TOP_K,
            retention: 0.2,
            sweep_retention: 0.05,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub name: String,
    pub seed: u64,
    pub repetitions: usize,
    pub estimators: Vec<EstimatorKind>,
    pub dataset: DatasetConfig,
    pub split: SplitConfig,
    pub model: ModelConfig,
    pub training: TrainConfig,
    pub estimator: EstimatorParams,
    pub counterfactual: CounterfactualConfig,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            name: "experiment".into(),
            seed: 0,
            repetitions: 3,
            estimators: vec![EstimatorKind::Random, EstimatorKind::DeMve],
            dataset: DatasetConfig::default(),
            split: SplitConfig::default(),
            model: ModelConfig::default(),
            training: TrainConfig::default(),
            estimator: EstimatorParams::default(),
            counterfactual: CounterfactualConfig::default(),
        }
    }
}

/// Values given on the command line that replace config entries.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub repetitions: Option<usize>,
    pub estimators: Option<Vec<EstimatorKind>>,
    pub architecture: Option<Architecture>,
    pub split: Option<SplitKind>,
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self, ConfigError> {
        let cfg: ExperimentConfig = toml::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        let mut cfg = Self::from_toml(&text)?;
        // relative dataset paths are resolved against the config file
        if let (Some(p), Some(dir)) = (&cfg.dataset.path, path.parent()) {
            if p.is_relative() {
                cfg.dataset.path = Some(dir.join(p));
            }
        }
        Ok(cfg)
    }

    pub fn apply(&mut self, o: &Overrides) -> Result<(), ConfigError> {
        if let Some(s) = o.seed {
            self.seed = s;
        }
        if let Some(r) = o.repetitions {
            self.repetitions = r;
        }
        if let Some(e) = &o.estimators {
            self.estimators = e.clone();
        }
        if let Some(a) = o.architecture {
            self.model.architecture = a;
        }
        if let Some(s) = o.split {
            self.split.kind = s;
        }
        self.validate()
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let bad = |m: String| Err(ConfigError::Invalid(m));
        if self.repetitions == 0 {
            return bad("repetitions must be at least 1".into());
        }
        if self.estimators.is_empty() {
            return bad("at least one estimator is required".into());
        }
        let f = self.split.fractions;
        if f.iter().any(|&x| !(x > 0.0)) || ((f[0] + f[1] + f[2]) - 1.0).abs() > 1e-9 {
            return bad(format!("split fractions must be positive and sum to 1, got {f:?}"));
        }
        if self.dataset.source == DatasetSource::Synthetic && self.dataset.size < 10 {
            return bad("synthetic dataset size must be at least 10".into());
        }
        if self.dataset.source != DatasetSource::Synthetic && self.dataset.path.is_none() {
            return bad("dataset.path is required for file sources".into());
        }
        let cf = &self.counterfactual;
        if cf.enabled {
            if cf.n_originals == 0 || cf.top_k == 0 {
                return bad("counterfactual n_originals and top_k must be positive".into());
            }
            for r in [cf.retention, cf.sweep_retention] {
                if !(r > 0.0 && r <= 1.0) {
                    return bad(format!("retention fractions must be in (0, 1], got {r}"));
                }
            }
        }
        self.model
            .regressor()
            .validate()
            .map_err(|e| ConfigError::Invalid(e.to_string()))?;
        self.training
            .validate()
            .map_err(|e| ConfigError::Invalid(e.to_string()))?;
        for &kind in &self.estimators {
            self.estimator_config(kind)
                .validate(&self.training)
                .map_err(|e| ConfigError::Invalid(e.to_string()))?;
        }
        Ok(())
    }

    pub fn estimator_config(&self, kind: EstimatorKind) -> EstimatorConfig {
        EstimatorConfig {
            kind,
            ensemble_size: self.estimator.ensemble_size,
            swag_window: self.estimator.swag_window,
            swag_samples: self.estimator.swag_samples,
        }
    }

    /// SHA-256 of the canonical JSON form of the effective config.
    pub fn hash(&self) -> String {
        let json = serde_json::to_string(self).expect("config serialization");
        hex::encode(Sha256::digest(json.as_bytes()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_are_valid() {
        let cfg = ExperimentConfig::from_toml("").unwrap();
        assert_eq!(cfg, ExperimentConfig::default());
        assert_eq!(cfg.training.epochs, 200);
        assert_eq!(cfg.counterfactual.n_originals, 50);
    }

    #[test]
    fn parses_nested_sections() {
        let cfg = ExperimentConfig::from_toml(
            r#"
            name = "x"
            estimators = ["de", "swag"]
            [split]
            kind = "ood_value"
            fractions = [0.7, 0.2, 0.1]
            tails = "upper"
            [model]
            architecture = "gatv2lite"
            [training]
            epochs = 40
            [training.mve]
            beta = 1.0
            warmup_epochs = 5
            [estimator]
            swag_window = 10
            "#,
        )
        .unwrap();
        assert_eq!(cfg.estimators, vec![EstimatorKind::De, EstimatorKind::Swag]);
        assert_eq!(cfg.split.kind, SplitKind::OodValue);
        assert_eq!(cfg.split.tails, Tails::Upper);
        assert_eq!(cfg.model.architecture, Architecture::Gatv2lite);
        assert_eq!(cfg.training.mve.unwrap().beta, 1.0);
    }

    #[test]
    fn rejects_bad_values() {
        assert!(ExperimentConfig::from_toml("[split]\nfractions = [0.5, 0.5, 0.5]").is_err());
        assert!(ExperimentConfig::from_toml("repetitions = 0").is_err());
        assert!(ExperimentConfig::from_toml("unknown_key = 1").is_err());
        assert!(ExperimentConfig::from_toml("estimators = [\"swag\"]\n[training]\nepochs = 10").is_err());
        assert!(ExperimentConfig::from_toml("[dataset]\nsource = \"jsonl\"").is_err());
    }

    #[test]
    fn overrides_and_hash() {
        let mut cfg = ExperimentConfig::default();
        let h0 = cfg.hash();
        assert_eq!(h0, ExperimentConfig::default().hash());
        cfg.apply(&Overrides {
            seed: Some(9),
            split: Some(SplitKind::OodStruct),
            ..Overrides::default()
        })
        .unwrap();
        assert_eq!(cfg.seed, 9);
        assert_eq!(cfg.split.kind, SplitKind::OodStruct);
        assert_ne!(cfg.hash(), h0);
        assert_eq!(cfg.hash().len(), 64);
    }
}
