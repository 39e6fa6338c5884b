use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::FlError;

/// Labeled samples with a fixed feature dimension, stored row-major.
#[derive(Clone, Debug, PartialEq)]
pub struct LabeledDataset {
    feature_dim: usize,
    class_count: usize,
    features: Vec<f64>,
    labels: Vec<usize>,
}

impl LabeledDataset {
    pub fn new(
        feature_dim: usize,
        class_count: usize,
        features: Vec<f64>,
        labels: Vec<usize>,
    ) -> Result<Self, FlError> {
        if feature_dim == 0 || class_count == 0 {
            return Err(FlError::Config("feature_dim and class_count must be positive".into()));
        }
        if features.len() != labels.len() * feature_dim {
            return Err(FlError::Config(format!(
                "{} feature values do not fit {} samples of dimension {}",
                features.len(),
                labels.len(),
                feature_dim
            )));
        }
        if let Some(&bad) = labels.iter().find(|&&l| l >= class_count) {
            return Err(FlError::Config(format!(
                "label {bad} out of range for {class_count} classes"
            )));
        }
        Ok(Self {
            feature_dim,
            class_count,
            features,
            labels,
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn feature_dim(&self) -> usize {
        self.feature_dim
    }

    pub fn class_count(&self) -> usize {
        self.class_count
    }

    pub fn features(&self, index: usize) -> &[f64] {
        let start = index * self.feature_dim;
        &self.features[start..start + self.feature_dim]
    }

    pub fn label(&self, index: usize) -> usize {
        self.labels[index]
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn histogram(&self) -> Vec<usize> {
        let mut counts = vec![0; self.class_count];
        for &l in &self.labels {
            counts[l] += 1;
        }
        counts
    }

    pub fn subset(&self, indices: &[usize]) -> LabeledDataset {
        let mut features = Vec::with_capacity(indices.len() * self.feature_dim);
        let mut labels = Vec::with_capacity(indices.len());
        for &i in indices {
            features.extend_from_slice(self.features(i));
            labels.push(self.labels[i]);
        }
        LabeledDataset {
            feature_dim: self.feature_dim,
            class_count: self.class_count,
            features,
            labels,
        }
    }

    /// Splits by index order: the first `at` samples and the rest.
    pub fn split_at(&self, at: usize) -> (LabeledDataset, LabeledDataset) {
        let at = at.min(self.len());
        let head: Vec<usize> = (0..at).collect();
        let tail: Vec<usize> = (at..self.len()).collect();
        (self.subset(&head), self.subset(&tail))
    }

    /// Index-order split with `train_fraction` of the samples in the first part.
    pub fn train_test_split(&self, train_fraction: f64) -> (LabeledDataset, LabeledDataset) {
        let at = (self.len() as f64 * train_fraction).round() as usize;
        self.split_at(at)
    }

    pub fn take(&self, count: usize) -> LabeledDataset {
        self.split_at(count).0
    }

    pub fn map_labels(&self, f: impl Fn(usize) -> usize) -> LabeledDataset {
        let mut out = self.clone();
        for l in &mut out.labels {
            *l = f(*l);
            debug_assert!(*l < self.class_count);
        }
        out
    }

    /// Concatenates datasets that share feature dimension and class count.
    pub fn concat<'a>(parts: impl IntoIterator<Item = &'a LabeledDataset>) -> Option<LabeledDataset> {
        let mut iter = parts.into_iter();
        let mut out = iter.next()?.clone();
        for part in iter {
            debug_assert_eq!(part.feature_dim, out.feature_dim);
            out.features.extend_from_slice(&part.features);
            out.labels.extend_from_slice(&part.labels);
        }
        Some(out)
    }
}

/// Labels held by `orbit` when `orbits` orbits share `class_count` classes and
/// each orbit holds `labels_per_orbit` consecutive labels (mod class count).
pub fn orbit_labels(orbit: usize, orbits: usize, class_count: usize, labels_per_orbit: usize) -> Vec<usize> {
    let start = orbit * class_count / orbits;
    (0..labels_per_orbit.min(class_count))
        .map(|j| (start + j) % class_count)
        .collect()
}

/// Sample indices for a per-orbit label-shard partition.
///
/// Satellites are numbered orbit-major (`satellite / per_orbit` is the orbit).
/// Sizes are `per_satellite` when given, otherwise the full dataset divided
/// evenly (sizes differ by at most one).
pub fn partition_indices(
    full: &LabeledDataset,
    satellites: usize,
    orbits: usize,
    labels_per_orbit: usize,
    per_satellite: Option<usize>,
    seed: u64,
) -> Result<Vec<Vec<usize>>, FlError> {
    if satellites == 0 || orbits == 0 || !satellites.is_multiple_of(orbits) {
        return Err(FlError::Partition(format!(
            "{satellites} satellites cannot be split evenly over {orbits} orbits"
        )));
    }
    if labels_per_orbit == 0 {
        return Err(FlError::Partition("labels_per_orbit must be at least 1".into()));
    }
    let k = full.class_count();
    let per_orbit = satellites / orbits;

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut pools: Vec<Vec<usize>> = vec![Vec::new(); k];
    for (i, &l) in full.labels().iter().enumerate() {
        pools[l].push(i);
    }
    for pool in &mut pools {
        pool.shuffle(&mut rng);
    }

    let sizes: Vec<usize> = match per_satellite {
        Some(n) => vec![n; satellites],
        None => {
            let base = full.len() / satellites;
            let extra = full.len() % satellites;
            (0..satellites).map(|s| base + usize::from(s < extra)).collect()
        }
    };

    let mut out = Vec::with_capacity(satellites);
    for (s, &size) in sizes.iter().enumerate() {
        let orbit = s / per_orbit;
        let labels = orbit_labels(orbit, orbits, k, labels_per_orbit);
        let lpo = labels.len();
        let base = size / lpo;
        let rem = size % lpo;
        let slot = s % per_orbit;
        let mut indices = Vec::with_capacity(size);
        for (j, &label) in labels.iter().enumerate() {
            let quota = base + usize::from((j + lpo - slot % lpo) % lpo < rem);
            let pool = &mut pools[label];
            if pool.len() < quota {
                return Err(FlError::Partition(format!(
                    "label {label} exhausted: satellite {s} needs {quota}, {} left",
                    pool.len()
                )));
            }
            indices.extend(pool.drain(pool.len() - quota..));
        }
        indices.sort_unstable();
        out.push(indices);
    }
    Ok(out)
}

/// Non-IID partition of `full` across satellites, one dataset per satellite.
pub fn partition_non_iid(
    full: &LabeledDataset,
    satellites: usize,
    orbits: usize,
    labels_per_orbit: usize,
    per_satellite: Option<usize>,
    seed: u64,
) -> Result<Vec<LabeledDataset>, FlError> {
    Ok(
        partition_indices(full, satellites, orbits, labels_per_orbit, per_satellite, seed)?
            .iter()
            .map(|idx| full.subset(idx))
            .collect(),
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::HashSet;

    fn balanced(per_class: usize, k: usize) -> LabeledDataset {
        let labels: Vec<usize> = (0..per_class * k).map(|i| i % k).collect();
        let features = labels.iter().map(|&l| l as f64).collect();
        LabeledDataset::new(1, k, features, labels).unwrap()
    }

    #[test]
    fn rejects_out_of_range_label() {
        assert!(LabeledDataset::new(1, 2, vec![0.0], vec![2]).is_err());
    }

    #[test]
    fn histogram_sums_to_size() {
        let d = balanced(7, 3);
        assert_eq!(d.histogram(), vec![7, 7, 7]);
        assert_eq!(d.histogram().iter().sum::<usize>(), d.len());
    }

    #[test]
    fn single_orbit_covers_all_labels() {
        let d = balanced(20, 10);
        let parts = partition_non_iid(&d, 5, 1, 10, None, 1).unwrap();
        for p in &parts {
            assert!(p.histogram().iter().all(|&c| c > 0));
        }
    }

    #[test]
    fn ten_orbits_hold_adjacent_label_pairs() {
        let d = balanced(100, 10);
        let parts = partition_non_iid(&d, 50, 10, 2, None, 3).unwrap();
        for (s, p) in parts.iter().enumerate() {
            let orbit = s / 5;
            let allowed: HashSet<usize> = [orbit, (orbit + 1) % 10].into();
            assert!(p.labels().iter().all(|l| allowed.contains(l)), "satellite {s}");
        }
    }

    #[test]
    fn sizes_for_two_hundred_satellites() {
        let d = balanced(6000, 10);
        let parts = partition_indices(&d, 200, 20, 2, None, 9).unwrap();
        assert_eq!(parts.len(), 200);
        assert!(parts.iter().all(|p| p.len() == 300));
    }

    #[test]
    fn uneven_total_differs_by_at_most_one() {
        let d = balanced(103, 2);
        let parts = partition_indices(&d, 4, 1, 2, None, 0).unwrap();
        let min = parts.iter().map(Vec::len).min().unwrap();
        let max = parts.iter().map(Vec::len).max().unwrap();
        assert!(max - min <= 1);
    }

    #[test]
    fn partitions_are_disjoint() {
        let d = balanced(60, 10);
        let parts = partition_indices(&d, 20, 10, 2, None, 5).unwrap();
        let mut seen = HashSet::new();
        for p in &parts {
            for &i in p {
                assert!(seen.insert(i), "index {i} reused");
            }
        }
    }

    #[test]
    fn exhausted_label_is_an_error() {
        let d = balanced(10, 10);
        let err = partition_indices(&d, 10, 10, 2, Some(50), 0).unwrap_err();
        assert!(matches!(err, FlError::Partition(_)));
    }

    #[test]
    fn orbits_must_divide_satellites() {
        let d = balanced(10, 10);
        assert!(partition_indices(&d, 7, 2, 2, None, 0).is_err());
    }
}
