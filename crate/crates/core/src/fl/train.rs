use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::model::Scratch;
use super::{FlError, LabeledDataset, ModelLayout, ParamVector};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    /// Weight of the compute-energy term in the reported loss.
    pub energy_penalty: f64,
    pub seed: u64,
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), FlError> {
        if self.batch_size == 0 {
            return Err(FlError::Config("batch_size must be at least 1".into()));
        }
        if !(self.learning_rate >= 0.0) || !self.learning_rate.is_finite() {
            return Err(FlError::Config(format!(
                "learning rate {} is not a finite non-negative number",
                self.learning_rate
            )));
        }
        if !(self.energy_penalty >= 0.0) {
            return Err(FlError::Config("energy_penalty must be >= 0".into()));
        }
        Ok(())
    }

    pub fn with_seed(self, seed: u64) -> Self {
        Self { seed, ..self }
    }

    pub fn with_epochs(self, epochs: usize) -> Self {
        Self { epochs, ..self }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Evaluation {
    pub accuracy: f64,
    pub mean_loss: f64,
}

/// Class probabilities of `model` on one feature vector.
pub fn predict(layout: &ModelLayout, model: &ParamVector, features: &[f64]) -> Result<Vec<f64>, FlError> {
    layout.check(model)?;
    if features.len() != layout.feature_dim {
        return Err(FlError::Config(format!(
            "feature vector has {} values, layout expects {}",
            features.len(),
            layout.feature_dim
        )));
    }
    let mut scratch = Scratch::default();
    Ok(layout.probabilities(model.as_slice(), features, &mut scratch))
}

/// Mean cross-entropy plus `energy_penalty * compute_energy`.
///
/// The penalty is constant in the parameters, so it shifts the reported
/// value without changing any gradient.
pub fn local_loss(
    layout: &ModelLayout,
    model: &ParamVector,
    data: &LabeledDataset,
    compute_energy: f64,
    energy_penalty: f64,
) -> Result<f64, FlError> {
    layout.check(model)?;
    if data.is_empty() {
        return Err(FlError::EmptyDataset);
    }
    let all: Vec<usize> = (0..data.len()).collect();
    Ok(layout.batch_loss(model, data, &all) + energy_penalty * compute_energy)
}

/// Mini-batch SGD on the cross-entropy term for `cfg.epochs` epochs.
///
/// Batch order comes from a seeded Fisher-Yates shuffle per epoch, so the
/// result is a pure function of its inputs.
pub fn train_local(
    layout: &ModelLayout,
    start: &ParamVector,
    data: &LabeledDataset,
    cfg: &TrainConfig,
) -> Result<ParamVector, FlError> {
    cfg.validate()?;
    layout.check(start)?;
    if data.is_empty() {
        return Err(FlError::EmptyDataset);
    }
    let mut params = start.clone();
    if cfg.epochs == 0 {
        return Ok(params);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut order: Vec<usize> = (0..data.len()).collect();
    let mut grad = vec![0.0; params.dim()];
    let mut scratch = Scratch::default();
    let mut batch_index = 0usize;
    for epoch in 0..cfg.epochs {
        order.shuffle(&mut rng);
        for batch in order.chunks(cfg.batch_size) {
            grad.iter_mut().for_each(|g| *g = 0.0);
            let weight = 1.0 / batch.len() as f64;
            for &i in batch {
                layout.accumulate_gradient(
                    params.as_slice(),
                    data.features(i),
                    data.label(i),
                    weight,
                    &mut grad,
                    &mut scratch,
                );
            }
            if grad.iter().any(|g| !g.is_finite()) {
                return Err(FlError::NonFiniteGradient {
                    epoch,
                    batch: batch_index,
                });
            }
            for (p, g) in params.as_mut_slice().iter_mut().zip(&grad) {
                *p -= cfg.learning_rate * g;
            }
            batch_index += 1;
        }
    }
    Ok(params)
}

/// Argmax accuracy (ties toward the lowest class index) and mean cross-entropy.
pub fn evaluate(layout: &ModelLayout, model: &ParamVector, data: &LabeledDataset) -> Result<Evaluation, FlError> {
    layout.check(model)?;
    if data.is_empty() {
        return Err(FlError::EmptyDataset);
    }
    let mut scratch = Scratch::default();
    let mut correct = 0usize;
    let mut loss = 0.0;
    for i in 0..data.len() {
        let p = layout.probabilities(model.as_slice(), data.features(i), &mut scratch);
        let label = data.label(i);
        let mut best = 0;
        for (c, &v) in p.iter().enumerate() {
            if v > p[best] {
                best = c;
            }
        }
        if best == label {
            correct += 1;
        }
        loss += -p[label].max(f64::MIN_POSITIVE).ln();
    }
    Ok(Evaluation {
        accuracy: correct as f64 / data.len() as f64,
        mean_loss: loss / data.len() as f64,
    })
}
