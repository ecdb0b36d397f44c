use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::{ModelError, PreparedGraph, Regressor, RegressorConfig};
use crate::oracle::LabeledSample;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MveConfig {
    /// Exponent of the stop-gradient weight `σ^{2β}`.
    pub beta: f64,
    /// Leading epochs trained with plain MSE on the mean head.
    pub warmup_epochs: usize,
}

impl Default for MveConfig {
    fn default() -> Self {
        MveConfig {
            beta: 0.5,
            warmup_epochs: 20,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub epochs: usize,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub grad_clip_norm: f64,
    pub momentum: f64,
    pub mve: Option<MveConfig>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 200,
            learning_rate: 0.01,
            batch_size: 32,
            grad_clip_norm: 5.0,
            momentum: 0.9,
            mve: None,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), TrainError> {
        let bad = |m: &str| Err(TrainError::InvalidConfig(m.to_string()));
        if !(self.learning_rate > 0.0) || !self.learning_rate.is_finite() {
            return bad("learning_rate must be positive");
        }
        if self.batch_size == 0 {
            return bad("batch_size must be positive");
        }
        if !(self.grad_clip_norm > 0.0) {
            return bad("grad_clip_norm must be positive");
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return bad("momentum must be in [0, 1)");
        }
        if let Some(m) = self.mve {
            if !(m.beta >= 0.0) {
                return bad("mve.beta must be non-negative");
            }
            if self.epochs > 0 && m.warmup_epochs >= self.epochs {
                return bad("mve.warmup_epochs must be smaller than epochs");
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum TrainError {
    #[error("training set is empty")]
    EmptyDataset,
    #[error("non-finite loss in epoch {epoch}")]
    NonFiniteLoss { epoch: usize },
    #[error("invalid training config: {0}")]
    InvalidConfig(String),
    #[error(transparent)]
    Model(#[from] ModelError),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum LossKind {
    Mse,
    /// β-weighted Gaussian likelihood; the weight `σ^{2β}` is treated as a constant.
    Mve { beta: f64 },
}

/// `(1/N) Σ (y − ŷ)²`
pub fn mse_loss(ys: &[f64], y_hats: &[f64]) -> f64 {
    assert_eq!(ys.len(), y_hats.len());
    ys.iter().zip(y_hats).map(|(y, p)| (y - p).powi(2)).sum::<f64>() / ys.len() as f64
}

/// `(1/N) Σ σ^{2β}/2 · ((y − ŷ)²/σ² + ln σ²)`
pub fn mve_loss(ys: &[f64], y_hats: &[f64], sigma2: &[f64], beta: f64) -> f64 {
    assert!(ys.len() == y_hats.len() && ys.len() == sigma2.len());
    let total: f64 = ys
        .iter()
        .zip(y_hats)
        .zip(sigma2)
        .map(|((y, p), s)| 0.5 * s.powf(beta) * ((y - p).powi(2) / s + s.ln()))
        .sum();
    total / ys.len() as f64
}

/// Mean loss over `batch` with its gradient added into `grad`.
pub fn loss_and_gradient(
    model: &Regressor,
    batch: &[(&PreparedGraph, f64)],
    loss: LossKind,
    grad: &mut [f64],
) -> Result<f64, TrainError> {
    if batch.is_empty() {
        return Err(TrainError::EmptyDataset);
    }
    if matches!(loss, LossKind::Mve { .. }) && !model.config().variance_head {
        return Err(TrainError::InvalidConfig(
            "variance loss needs a regressor with a variance head".into(),
        ));
    }
    let scale = 1.0 / batch.len() as f64;
    let mut total = 0.0;
    for &(g, y) in batch {
        match loss {
            LossKind::Mse => {
                let (pred, cache) = model.forward(g);
                let r = pred.y_hat - y;
                total += r * r;
                model.backward(g, &cache, 2.0 * r * scale, 0.0, grad);
            }
            LossKind::Mve { beta } => {
                let (pred, cache) = model.forward(g);
                let s2 = pred.sigma2.expect("variance head present");
                let w = s2.powf(beta);
                let r = pred.y_hat - y;
                total += 0.5 * w * (r * r / s2 + s2.ln());
                let dy = w * r / s2 * scale;
                let ds2 = 0.5 * w * (1.0 / s2 - r * r / (s2 * s2)) * scale;
                model.backward(g, &cache, dy, ds2, grad);
            }
        }
    }
    Ok(total * scale)
}

/// Mini-batch SGD with momentum and gradient-norm clipping.
///
/// `on_epoch` runs after every completed epoch with the epoch index and the
/// current model. With `tc.mve` set the model must have a variance head; the
/// first `warmup_epochs` epochs then fit the mean head with MSE.
pub fn train<R: Rng + ?Sized>(
    graphs: &[&PreparedGraph],
    ys: &[f64],
    rc: RegressorConfig,
    tc: &TrainConfig,
    rng: &mut R,
    on_epoch: &mut dyn FnMut(usize, &Regressor),
) -> Result<Regressor, TrainError> {
    assert_eq!(graphs.len(), ys.len(), "one label per graph");
    if graphs.is_empty() {
        return Err(TrainError::EmptyDataset);
    }
    tc.validate()?;
    if tc.mve.is_some() && !rc.variance_head {
        return Err(TrainError::InvalidConfig(
            "variance training needs variance_head = true".into(),
        ));
    }
    let mut model = Regressor::init(rc, rng)?;
    let n_params = model.params().len();
    let mut velocity = vec![0.0; n_params];
    let mut grad = vec![0.0; n_params];
    let mut order: Vec<usize> = (0..graphs.len()).collect();
    let mut batch = Vec::with_capacity(tc.batch_size);
    for epoch in 0..tc.epochs {
        let loss = match tc.mve {
            Some(m) if epoch >= m.warmup_epochs => LossKind::Mve { beta: m.beta },
            _ => LossKind::Mse,
        };
        order.shuffle(rng);
        let mut epoch_loss = 0.0;
        for chunk in order.chunks(tc.batch_size) {
            batch.clear();
            batch.extend(chunk.iter().map(|&i| (graphs[i], ys[i])));
            grad.iter_mut().for_each(|g| *g = 0.0);
            let l = loss_and_gradient(&model, &batch, loss, &mut grad)?;
            if !l.is_finite() {
                return Err(TrainError::NonFiniteLoss { epoch });
            }
            epoch_loss += l * chunk.len() as f64;
            let norm = grad.iter().map(|g| g * g).sum::<f64>().sqrt();
            let clip = if norm > tc.grad_clip_norm {
                tc.grad_clip_norm / norm
            } else {
                1.0
            };
            let params = model.params_mut();
            for ((p, v), g) in params.iter_mut().zip(&mut velocity).zip(&grad) {
                *v = tc.momentum * *v + clip * g;
                *p -= tc.learning_rate * *v;
            }
            if params.iter().any(|p| !p.is_finite()) {
                return Err(TrainError::NonFiniteLoss { epoch });
            }
        }
        log::trace!("epoch {epoch}: loss {:.6}", epoch_loss / graphs.len() as f64);
        on_epoch(epoch, &model);
    }
    Ok(model)
}

fn prepare(samples: &[LabeledSample]) -> (Vec<PreparedGraph>, Vec<f64>) {
    (
        samples.iter().map(|s| PreparedGraph::new(&s.graph)).collect(),
        samples.iter().map(|s| s.y).collect(),
    )
}

/// Trains the mean head with MSE.
pub fn train_mse<R: Rng + ?Sized>(
    samples: &[LabeledSample],
    rc: RegressorConfig,
    tc: &TrainConfig,
    rng: &mut R,
) -> Result<Regressor, TrainError> {
    let tc = TrainConfig { mve: None, ..*tc };
    let (graphs, ys) = prepare(samples);
    let refs: Vec<&PreparedGraph> = graphs.iter().collect();
    train(&refs, &ys, rc, &tc, rng, &mut |_, _| {})
}

/// Trains mean and variance heads with the β-weighted likelihood after an MSE warm-up.
pub fn train_mve<R: Rng + ?Sized>(
    samples: &[LabeledSample],
    rc: RegressorConfig,
    tc: &TrainConfig,
    rng: &mut R,
) -> Result<Regressor, TrainError> {
    if tc.mve.is_none() {
        return Err(TrainError::InvalidConfig("mve settings missing".into()));
    }
    let rc = RegressorConfig {
        variance_head: true,
        ..rc
    };
    let (graphs, ys) = prepare(samples);
    let refs: Vec<&PreparedGraph> = graphs.iter().collect();
    train(&refs, &ys, rc, tc, rng, &mut |_, _| {})
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::Architecture;
    use crate::molgraph::parse_smiles;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn sample(s: &str) -> LabeledSample {
        LabeledSample::from_graph(parse_smiles(s).unwrap())
    }

    fn small(arch: Architecture) -> RegressorConfig {
        RegressorConfig {
            architecture: arch,
            layers: 2,
            hidden_dim: 8,
            variance_head: false,
        }
    }

    #[test]
    fn mve_loss_reduces_to_half_mse() {
        let ys = [0.0, 1.0, 2.5];
        let ps = [0.5, 1.5, 1.0];
        let l = mve_loss(&ys, &ps, &[1.0; 3], 0.0);
        assert!((l - 0.5 * mse_loss(&ys, &ps)).abs() < 1e-15);
    }

    #[test]
    fn zero_epochs_returns_initialization() {
        let tc = TrainConfig {
            epochs: 0,
            ..TrainConfig::default()
        };
        let rc = small(Architecture::Gcn);
        let trained = train_mse(&[sample("CCO")], rc, &tc, &mut ChaCha8Rng::seed_from_u64(5)).unwrap();
        let init = Regressor::init(rc, &mut ChaCha8Rng::seed_from_u64(5)).unwrap();
        assert_eq!(trained, init);
    }

    #[test]
    fn memorizes_single_sample() {
        let s = sample("CC(=O)O");
        let tc = TrainConfig {
            epochs: 300,
            batch_size: 1,
            ..TrainConfig::default()
        };
        for arch in Architecture::ALL {
            let m = train_mse(&[s.clone()], small(arch), &tc, &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
            let err = (m.predict(&s.graph).y_hat - s.y).powi(2);
            assert!(err < 1e-4, "{arch:?}: {err}");
        }
    }

    #[test]
    fn training_is_deterministic() {
        let data: Vec<LabeledSample> = ["C", "CC", "CCO", "CCN", "C1CC1"].iter().map(|s| sample(s)).collect();
        let tc = TrainConfig {
            epochs: 5,
            batch_size: 2,
            mve: Some(MveConfig {
                beta: 0.5,
                warmup_epochs: 2,
            }),
            ..TrainConfig::default()
        };
        let a = train_mve(&data, small(Architecture::Gatv2lite), &tc, &mut ChaCha8Rng::seed_from_u64(3)).unwrap();
        let b = train_mve(&data, small(Architecture::Gatv2lite), &tc, &mut ChaCha8Rng::seed_from_u64(3)).unwrap();
        assert_eq!(a.to_json(), b.to_json());
        for s in &data {
            let v = a.predict(&s.graph).sigma2.unwrap();
            assert!(v > 0.0 && v.is_finite());
        }
    }

    #[test]
    fn config_validation() {
        let mut tc = TrainConfig::default();
        assert!(tc.validate().is_ok());
        tc.mve = Some(MveConfig {
            beta: 0.5,
            warmup_epochs: 200,
        });
        assert!(tc.validate().is_err());
        let bad = TrainConfig {
            learning_rate: 0.0,
            ..TrainConfig::default()
        };
        assert!(bad.validate().is_err());
        let needs_head = train(
            &[],
            &[],
            small(Architecture::Gin),
            &TrainConfig::default(),
            &mut ChaCha8Rng::seed_from_u64(0),
            &mut |_, _| {},
        );
        assert_eq!(needs_head, Err(TrainError::EmptyDataset));
    }
}
