use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::{FlError, ParamVector};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum ModelKind {
    /// Multinomial logistic regression: `W[class][feature]` then `b[class]`.
    Logistic,
    /// One tanh hidden layer: `W1[hidden][feature]`, `b1`, `W2[class][hidden]`, `b2`.
    Mlp { hidden: usize },
}

/// Maps a flat [`ParamVector`] onto a predictor for a given input shape.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelLayout {
    pub feature_dim: usize,
    pub class_count: usize,
    pub kind: ModelKind,
}

/// Scratch buffers reused across samples.
#[derive(Default)]
pub(crate) struct Scratch {
    hidden: Vec<f64>,
    logits: Vec<f64>,
    delta_hidden: Vec<f64>,
}

impl ModelLayout {
    pub fn logistic(feature_dim: usize, class_count: usize) -> Self {
        Self {
            feature_dim,
            class_count,
            kind: ModelKind::Logistic,
        }
    }

    pub fn param_count(&self) -> usize {
        let (d, k) = (self.feature_dim, self.class_count);
        match self.kind {
            ModelKind::Logistic => k * d + k,
            ModelKind::Mlp { hidden } => hidden * d + hidden + k * hidden + k,
        }
    }

    pub fn check(&self, model: &ParamVector) -> Result<(), FlError> {
        if model.dim() != self.param_count() {
            return Err(FlError::Config(format!(
                "model has {} parameters, layout expects {}",
                model.dim(),
                self.param_count()
            )));
        }
        Ok(())
    }

    /// Initial parameters. Logistic models start at zero; the MLP needs
    /// random weights to break symmetry.
    pub fn init(&self, seed: u64) -> ParamVector {
        match self.kind {
            ModelKind::Logistic => ParamVector::zeros(self.param_count()),
            ModelKind::Mlp { hidden } => {
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                let mut values = vec![0.0; self.param_count()];
                let d = self.feature_dim;
                let k = self.class_count;
                let w1 = Normal::new(0.0, (1.0 / d as f64).sqrt()).unwrap();
                let w2 = Normal::new(0.0, (1.0 / hidden as f64).sqrt()).unwrap();
                for v in &mut values[..hidden * d] {
                    *v = w1.sample(&mut rng);
                }
                let w2_start = hidden * d + hidden;
                for v in &mut values[w2_start..w2_start + k * hidden] {
                    *v = w2.sample(&mut rng);
                }
                ParamVector::from_vec(values)
            }
        }
    }

    pub(crate) fn logits_into(&self, params: &[f64], x: &[f64], scratch: &mut Scratch) {
        let (d, k) = (self.feature_dim, self.class_count);
        scratch.logits.resize(k, 0.0);
        match self.kind {
            ModelKind::Logistic => {
                let (w, b) = params.split_at(k * d);
                for c in 0..k {
                    scratch.logits[c] = b[c] + dot(&w[c * d..(c + 1) * d], x);
                }
            }
            ModelKind::Mlp { hidden } => {
                let (w1, rest) = params.split_at(hidden * d);
                let (b1, rest) = rest.split_at(hidden);
                let (w2, b2) = rest.split_at(k * hidden);
                scratch.hidden.resize(hidden, 0.0);
                for h in 0..hidden {
                    scratch.hidden[h] = (b1[h] + dot(&w1[h * d..(h + 1) * d], x)).tanh();
                }
                for c in 0..k {
                    scratch.logits[c] = b2[c] + dot(&w2[c * hidden..(c + 1) * hidden], &scratch.hidden);
                }
            }
        }
    }

    /// Cross-entropy of one sample; turns `scratch.logits` into probabilities.
    fn softmax_loss(scratch: &mut Scratch, label: usize) -> f64 {
        let logits = &mut scratch.logits;
        let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let shifted_label = logits[label] - max;
        let mut sum = 0.0;
        for z in logits.iter_mut() {
            *z = (*z - max).exp();
            sum += *z;
        }
        for z in logits.iter_mut() {
            *z /= sum;
        }
        sum.ln() - shifted_label
    }

    /// Class probabilities for one sample.
    pub(crate) fn probabilities(&self, params: &[f64], x: &[f64], scratch: &mut Scratch) -> Vec<f64> {
        self.logits_into(params, x, scratch);
        Self::softmax_loss(scratch, 0);
        scratch.logits.clone()
    }

    /// Loss of one sample, with its gradient accumulated into `grad` scaled by `weight`.
    pub(crate) fn accumulate_gradient(
        &self,
        params: &[f64],
        x: &[f64],
        label: usize,
        weight: f64,
        grad: &mut [f64],
        scratch: &mut Scratch,
    ) -> f64 {
        let (d, k) = (self.feature_dim, self.class_count);
        self.logits_into(params, x, scratch);
        let loss = Self::softmax_loss(scratch, label);
        // logits now hold p; dL/dz = p - onehot
        scratch.logits[label] -= 1.0;
        match self.kind {
            ModelKind::Logistic => {
                let (gw, gb) = grad.split_at_mut(k * d);
                for c in 0..k {
                    let coef = weight * scratch.logits[c];
                    if coef != 0.0 {
                        axpy(coef, x, &mut gw[c * d..(c + 1) * d]);
                    }
                    gb[c] += coef;
                }
            }
            ModelKind::Mlp { hidden } => {
                let w2 = &params[hidden * d + hidden..hidden * d + hidden + k * hidden];
                let (gw1, rest) = grad.split_at_mut(hidden * d);
                let (gb1, rest) = rest.split_at_mut(hidden);
                let (gw2, gb2) = rest.split_at_mut(k * hidden);
                scratch.delta_hidden.clear();
                scratch.delta_hidden.resize(hidden, 0.0);
                for c in 0..k {
                    let coef = weight * scratch.logits[c];
                    axpy(coef, &scratch.hidden, &mut gw2[c * hidden..(c + 1) * hidden]);
                    gb2[c] += coef;
                    axpy(coef, &w2[c * hidden..(c + 1) * hidden], &mut scratch.delta_hidden);
                }
                for h in 0..hidden {
                    let a = scratch.hidden[h];
                    let delta = scratch.delta_hidden[h] * (1.0 - a * a);
                    if delta != 0.0 {
                        axpy(delta, x, &mut gw1[h * d..(h + 1) * d]);
                    }
                    gb1[h] += delta;
                }
            }
        }
        loss
    }

    /// Mean cross-entropy over `indices` and its gradient (written into `grad`).
    pub fn batch_loss_and_gradient(
        &self,
        params: &ParamVector,
        data: &super::LabeledDataset,
        indices: &[usize],
        grad: &mut [f64],
    ) -> f64 {
        let mut scratch = Scratch::default();
        grad.iter_mut().for_each(|g| *g = 0.0);
        let weight = 1.0 / indices.len() as f64;
        let mut loss = 0.0;
        for &i in indices {
            loss += self.accumulate_gradient(
                params.as_slice(),
                data.features(i),
                data.label(i),
                weight,
                grad,
                &mut scratch,
            );
        }
        loss * weight
    }

    /// Mean cross-entropy over `indices`, without gradients.
    pub fn batch_loss(&self, params: &ParamVector, data: &super::LabeledDataset, indices: &[usize]) -> f64 {
        let mut scratch = Scratch::default();
        let mut loss = 0.0;
        for &i in indices {
            self.logits_into(params.as_slice(), data.features(i), &mut scratch);
            loss += Self::softmax_loss(&mut scratch, data.label(i));
        }
        loss / indices.len() as f64
    }
}

#[inline]
fn dot(a: &[f64], b: &[f64]) -> f64 {
    let n = a.len().min(b.len());
    let (a, b) = (&a[..n], &b[..n]);
    let mut acc = [0.0f64; 4];
    let chunks = n / 4;
    for i in 0..chunks {
        let j = i * 4;
        acc[0] += a[j] * b[j];
        acc[1] += a[j + 1] * b[j + 1];
        acc[2] += a[j + 2] * b[j + 2];
        acc[3] += a[j + 3] * b[j + 3];
    }
    let mut tail = 0.0;
    for j in chunks * 4..n {
        tail += a[j] * b[j];
    }
    (acc[0] + acc[1]) + (acc[2] + acc[3]) + tail
}

#[inline]
fn axpy(alpha: f64, x: &[f64], y: &mut [f64]) {
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += alpha * xi;
    }
}
