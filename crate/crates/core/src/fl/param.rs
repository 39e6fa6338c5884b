use serde::{Deserialize, Serialize};

/// Flat real-valued model parameters.
///
/// Every model in a run shares one dimension; the layout of the values is
/// owned by [`ModelLayout`](super::ModelLayout).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ParamVector(Vec<f64>);

impl ParamVector {
    pub fn zeros(dim: usize) -> Self {
        Self(vec![0.0; dim])
    }

    pub fn from_vec(values: Vec<f64>) -> Self {
        Self(values)
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.0
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.0
    }

    pub fn dot(&self, other: &ParamVector) -> f64 {
        self.0.iter().zip(&other.0).map(|(a, b)| a * b).sum()
    }

    pub fn norm(&self) -> f64 {
        self.dot(self).sqrt()
    }

    pub fn is_finite(&self) -> bool {
        self.0.iter().all(|v| v.is_finite())
    }

    pub fn scaled(&self, factor: f64) -> Self {
        Self(self.0.iter().map(|v| v * factor).collect())
    }

    pub fn negated(&self) -> Self {
        Self(self.0.iter().map(|v| -v).collect())
    }

    /// `self += factor * other`
    pub fn add_scaled(&mut self, factor: f64, other: &ParamVector) {
        debug_assert_eq!(self.dim(), other.dim());
        for (a, b) in self.0.iter_mut().zip(&other.0) {
            *a += factor * b;
        }
    }

    /// Weighted mean of `(weight, vector)` pairs. Returns `None` when the
    /// input is empty or the total weight is not positive.
    pub fn weighted_mean<'a, I>(items: I) -> Option<ParamVector>
    where
        I: IntoIterator<Item = (f64, &'a ParamVector)>,
    {
        let mut acc: Option<ParamVector> = None;
        let mut total = 0.0;
        for (weight, vector) in items {
            let sum = acc.get_or_insert_with(|| ParamVector::zeros(vector.dim()));
            sum.add_scaled(weight, vector);
            total += weight;
        }
        let sum = acc?;
        if !(total > 0.0) || !total.is_finite() {
            return None;
        }
        Some(sum.scaled(1.0 / total))
    }

    /// Canonical big-endian byte encoding, used for digests.
    pub fn to_be_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(4 + self.0.len() * 8);
        out.extend_from_slice(&(self.0.len() as u32).to_be_bytes());
        for v in &self.0 {
            out.extend_from_slice(&v.to_bits().to_be_bytes());
        }
        out
    }
}

impl From<Vec<f64>> for ParamVector {
    fn from(values: Vec<f64>) -> Self {
        Self(values)
    }
}
