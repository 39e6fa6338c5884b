use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::LabeledDataset;

/// Seeded isotropic Gaussian blobs.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BlobSpec {
    pub classes: usize,
    pub dim: usize,
    pub per_class: usize,
    /// Standard deviation of each sample around its class center.
    pub spread: f64,
    /// Standard deviation of the class centers around the origin.
    #[serde(default = "default_center_scale")]
    pub center_scale: f64,
    pub seed: u64,
}

fn default_center_scale() -> f64 {
    1.0
}

/// Samples are interleaved by class (`i % classes`), so any index-order
/// prefix is close to balanced.
pub fn generate_blobs(spec: &BlobSpec) -> LabeledDataset {
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let center = Normal::new(0.0, spec.center_scale).expect("finite center scale");
    let noise = Normal::new(0.0, spec.spread).expect("finite spread");
    let centers: Vec<Vec<f64>> = (0..spec.classes)
        .map(|_| (0..spec.dim).map(|_| center.sample(&mut rng)).collect())
        .collect();
    let n = spec.classes * spec.per_class;
    let mut features = Vec::with_capacity(n * spec.dim);
    let mut labels = Vec::with_capacity(n);
    for i in 0..n {
        let label = i % spec.classes;
        features.extend(centers[label].iter().map(|c| c + noise.sample(&mut rng)));
        labels.push(label);
    }
    LabeledDataset::new(spec.dim, spec.classes, features, labels).expect("consistent blob shape")
}
