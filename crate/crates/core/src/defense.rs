//! Miner-side poisoning defense: similarity profile, density grouping,
//! weighted group aggregation and accuracy scoring.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::constellation::SatId;
use crate::fl::{evaluate, train_local, FlError, LabeledDataset, ModelLayout, ParamVector, TrainConfig};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum DefenseError {
    #[error("cosine similarity undefined for a zero-norm vector")]
    ZeroNorm,
    #[error("dimension mismatch: {0} vs {1}")]
    Dimension(usize, usize),
    #[error("empty group")]
    EmptyGroup,
    #[error("group weights sum to {0}")]
    ZeroWeight(f64),
    #[error(transparent)]
    Fl(#[from] FlError),
}

/// Slack on neighborhood comparisons so grid values one `eps` apart stay neighbors.
pub const NEIGHBOR_SLACK: f64 = 1e-12;

/// Fraction of a miner's data used for fine-tuning; the rest scores.
pub const FINE_TUNE_FRACTION: f64 = 0.8;

pub fn cosine_similarity(w: &ParamVector, prev: &ParamVector) -> Result<f64, DefenseError> {
    if w.dim() != prev.dim() {
        return Err(DefenseError::Dimension(w.dim(), prev.dim()));
    }
    let (a, b) = (w.norm(), prev.norm());
    if a == 0.0 || b == 0.0 {
        return Err(DefenseError::ZeroNorm);
    }
    Ok((w.dot(prev) / (a * b)).clamp(-1.0, 1.0))
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct SimilarityProfile {
    pub entries: BTreeMap<SatId, f64>,
}

impl SimilarityProfile {
    /// Profile against `prev`; zero-norm submissions land in the second set.
    pub fn compute<'a>(
        models: impl IntoIterator<Item = (SatId, &'a ParamVector)>,
        prev: &ParamVector,
    ) -> Result<(Self, BTreeSet<SatId>), DefenseError> {
        let mut entries = BTreeMap::new();
        let mut degenerate = BTreeSet::new();
        for (id, w) in models {
            match cosine_similarity(w, prev) {
                Ok(t) => {
                    entries.insert(id, t);
                }
                Err(DefenseError::ZeroNorm) => {
                    degenerate.insert(id);
                }
                Err(e) => return Err(e),
            }
        }
        Ok((Self { entries }, degenerate))
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct DbscanParams {
    pub eps: f64,
    pub min_pts: usize,
}

impl Default for DbscanParams {
    fn default() -> Self {
        Self { eps: 0.05, min_pts: 2 }
    }
}

/// Groups (at most two after capping) and unassigned noise points.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Grouping {
    pub groups: Vec<BTreeSet<SatId>>,
    pub noise: BTreeSet<SatId>,
}

pub const MAX_GROUPS: usize = 2;

fn sorted_points(profile: &SimilarityProfile) -> Vec<(f64, SatId)> {
    let mut pts: Vec<(f64, SatId)> = profile.entries.iter().map(|(&id, &t)| (t, id)).collect();
    pts.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
    pts
}

/// Merges the pair of clusters with the closest mean value until at most
/// `cap` remain. Ties go to the lowest index pair.
fn merge_to_cap(mut clusters: Vec<Vec<usize>>, values: &[f64], cap: usize) -> Vec<Vec<usize>> {
    while clusters.len() > cap {
        let means: Vec<f64> = clusters
            .iter()
            .map(|c| c.iter().map(|&i| values[i]).sum::<f64>() / c.len() as f64)
            .collect();
        let mut best = (f64::INFINITY, 0, 1);
        for i in 0..clusters.len() {
            for j in i + 1..clusters.len() {
                let d = (means[i] - means[j]).abs();
                if d < best.0 {
                    best = (d, i, j);
                }
            }
        }
        let absorbed = clusters.remove(best.2);
        clusters[best.1].extend(absorbed);
    }
    clusters
}

/// One-dimensional DBSCAN over similarity values, capped at two groups.
///
/// Neighborhoods include the point itself. Points are scanned in ascending
/// value order (ids break ties) and a border point joins the first cluster
/// that reaches it.
pub fn group_models(profile: &SimilarityProfile, params: DbscanParams) -> Grouping {
    let pts = sorted_points(profile);
    let n = pts.len();
    let values: Vec<f64> = pts.iter().map(|p| p.0).collect();
    let neighbors = |i: usize| -> Vec<usize> {
        (0..n)
            .filter(|&j| (values[j] - values[i]).abs() <= params.eps + NEIGHBOR_SLACK)
            .collect()
    };
    let is_core: Vec<bool> = (0..n).map(|i| neighbors(i).len() >= params.min_pts).collect();
    let mut label: Vec<Option<usize>> = vec![None; n];
    let mut clusters: Vec<Vec<usize>> = Vec::new();
    for start in 0..n {
        if label[start].is_some() || !is_core[start] {
            continue;
        }
        let c = clusters.len();
        let mut members = vec![start];
        label[start] = Some(c);
        let mut queue = vec![start];
        while let Some(p) = queue.pop() {
            if !is_core[p] {
                continue;
            }
            for q in neighbors(p) {
                if label[q].is_none() {
                    label[q] = Some(c);
                    members.push(q);
                    queue.push(q);
                }
            }
        }
        clusters.push(members);
    }
    let clusters = merge_to_cap(clusters, &values, MAX_GROUPS);
    Grouping {
        groups: clusters
            .into_iter()
            .map(|c| c.into_iter().map(|i| pts[i].1).collect())
            .collect(),
        noise: (0..n).filter(|&i| label[i].is_none()).map(|i| pts[i].1).collect(),
    }
}

/// Exact two-means of the similarity values: the contiguous split of the
/// sorted values with the least within-group squared error (lowest split
/// index on ties). Identical values always form one group.
pub fn kmeans_two(profile: &SimilarityProfile) -> Grouping {
    let pts = sorted_points(profile);
    let ids = |range: &[(f64, SatId)]| range.iter().map(|p| p.1).collect::<BTreeSet<_>>();
    if pts.len() < 2 || pts.first().map(|p| p.0) == pts.last().map(|p| p.0) {
        let groups = if pts.is_empty() { vec![] } else { vec![ids(&pts)] };
        return Grouping {
            groups,
            noise: BTreeSet::new(),
        };
    }
    let sse = |part: &[(f64, SatId)]| {
        let m = part.iter().map(|p| p.0).sum::<f64>() / part.len() as f64;
        part.iter().map(|p| (p.0 - m).powi(2)).sum::<f64>()
    };
    let mut best = (f64::INFINITY, 1);
    for split in 1..pts.len() {
        // splitting between equal values would separate identical points
        if pts[split - 1].0 == pts[split].0 {
            continue;
        }
        let cost = sse(&pts[..split]) + sse(&pts[split..]);
        if cost < best.0 {
            best = (cost, split);
        }
    }
    Grouping {
        groups: vec![ids(&pts[..best.1]), ids(&pts[best.1..])],
        noise: BTreeSet::new(),
    }
}

/// eFL filter: keeps submissions with similarity at least `theta_min`.
pub fn threshold_filter(profile: &SimilarityProfile, theta_min: f64) -> (BTreeSet<SatId>, BTreeSet<SatId>) {
    let mut kept = BTreeSet::new();
    let mut dropped = BTreeSet::new();
    for (&id, &t) in &profile.entries {
        if t >= theta_min {
            kept.insert(id);
        } else {
            dropped.insert(id);
        }
    }
    (kept, dropped)
}

/// Weighted mean of members' models with weight `rate * samples`.
pub fn aggregate_group(
    members: &BTreeSet<SatId>,
    models: &BTreeMap<SatId, ParamVector>,
    weights: &BTreeMap<SatId, (f64, usize)>,
) -> Result<ParamVector, DefenseError> {
    if members.is_empty() {
        return Err(DefenseError::EmptyGroup);
    }
    let total: f64 = members.iter().map(|id| weights[id].0 * weights[id].1 as f64).sum();
    if !(total > 0.0) {
        return Err(DefenseError::ZeroWeight(total));
    }
    if members.len() == 1 {
        return Ok(models[members.iter().next().unwrap()].clone());
    }
    ParamVector::weighted_mean(
        members
            .iter()
            .map(|id| (weights[id].0 * weights[id].1 as f64, &models[id])),
    )
    .ok_or(DefenseError::EmptyGroup)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelGroup {
    pub members: BTreeSet<SatId>,
    pub aggregate: ParamVector,
    pub score: f64,
}

/// Score of a candidate model on `data`: fine-tune `epochs` epochs on the
/// first part, then accuracy on the held-out tail. Returns accuracy and loss.
pub fn holdout_score(
    layout: &ModelLayout,
    model: &ParamVector,
    data: &LabeledDataset,
    train: &TrainConfig,
    epochs: usize,
) -> Result<(f64, f64), DefenseError> {
    let (fit, held) = data.train_test_split(FINE_TUNE_FRACTION);
    let (fit, held) = if held.is_empty() || fit.is_empty() {
        (data.clone(), data.clone())
    } else {
        (fit, held)
    };
    let tuned = if epochs > 0 {
        train_local(layout, model, &fit, &train.with_epochs(epochs))?
    } else {
        model.clone()
    };
    let e = evaluate(layout, &tuned, &held)?;
    Ok((e.accuracy, e.mean_loss))
}

/// Accuracy and loss on `data` after fine-tuning `epochs` epochs on all of it.
pub fn fine_tuned_score(
    layout: &ModelLayout,
    model: &ParamVector,
    data: &LabeledDataset,
    train: &TrainConfig,
    epochs: usize,
) -> Result<(f64, f64), DefenseError> {
    let tuned = if epochs > 0 {
        train_local(layout, model, data, &train.with_epochs(epochs))?
    } else {
        model.clone()
    };
    let e = evaluate(layout, &tuned, data)?;
    Ok((e.accuracy, e.mean_loss))
}

/// Scores every group and picks the best.
///
/// Ties go to the larger group, then to the lower smallest member id.
/// The chosen index refers to the returned vector; the chosen group's
/// aggregate is the original one, not the fine-tuned copy.
pub fn score_groups(
    layout: &ModelLayout,
    groups: Vec<(BTreeSet<SatId>, ParamVector)>,
    miner_data: &LabeledDataset,
    train: &TrainConfig,
    tau: usize,
) -> Result<(Vec<ModelGroup>, usize), DefenseError> {
    if groups.is_empty() {
        return Err(DefenseError::EmptyGroup);
    }
    let mut scored = Vec::with_capacity(groups.len());
    for (members, aggregate) in groups {
        let (score, _) = holdout_score(layout, &aggregate, miner_data, train, tau / 2)?;
        scored.push(ModelGroup {
            members,
            aggregate,
            score,
        });
    }
    let chosen = choose_group(&scored);
    Ok((scored, chosen))
}

pub fn choose_group(groups: &[ModelGroup]) -> usize {
    let mut best = 0;
    for (i, g) in groups.iter().enumerate().skip(1) {
        let b = &groups[best];
        let better = g.score > b.score
            || (g.score == b.score
                && (g.members.len() > b.members.len()
                    || (g.members.len() == b.members.len() && g.members.first() < b.members.first())));
        if better {
            best = i;
        }
    }
    best
}

/// Submitters outside the chosen group, noise and degenerate models included.
pub fn suspects_from_choice(submitters: &BTreeSet<SatId>, chosen: Option<&BTreeSet<SatId>>) -> BTreeSet<SatId> {
    match chosen {
        Some(c) => submitters.difference(c).copied().collect(),
        None => submitters.clone(),
    }
}

/// One miner's defense outcome for one round, kept for the JSON trace.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MinerTrace {
    pub miner: SatId,
    pub groups: Vec<GroupTrace>,
    pub chosen: Option<usize>,
    pub suspects: BTreeSet<SatId>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GroupTrace {
    pub members: BTreeSet<SatId>,
    pub score: f64,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ClusterDefenseTrace {
    pub cluster: u32,
    pub similarity: BTreeMap<SatId, f64>,
    pub degenerate: BTreeSet<SatId>,
    pub noise: BTreeSet<SatId>,
    pub miners: Vec<MinerTrace>,
}

#[cfg(test)]
mod tests {
    use super::*;

    fn profile(values: &[f64]) -> SimilarityProfile {
        SimilarityProfile {
            entries: values.iter().enumerate().map(|(i, &v)| (i as SatId, v)).collect(),
        }
    }

    fn pv(v: &[f64]) -> ParamVector {
        ParamVector::from_vec(v.to_vec())
    }

    #[test]
    fn cosine_examples() {
        let w = pv(&[0.3, -2.0, 1.0]);
        assert!((cosine_similarity(&w, &w).unwrap() - 1.0).abs() < 1e-15);
        assert_eq!(cosine_similarity(&pv(&[1.0, 0.0]), &pv(&[0.0, 1.0])).unwrap(), 0.0);
        let t = cosine_similarity(&pv(&[1.0, 1.0]), &pv(&[1.0, 0.0])).unwrap();
        assert!((t - 0.5f64.sqrt()).abs() < 1e-12);
        assert_eq!(
            cosine_similarity(&pv(&[0.0, 0.0]), &pv(&[1.0, 0.0])),
            Err(DefenseError::ZeroNorm)
        );
    }

    #[test]
    fn dbscan_two_dense_groups() {
        let g = group_models(&profile(&[0.95, 0.96, 0.94, 0.20, 0.21]), DbscanParams::default());
        assert_eq!(g.groups.len(), 2);
        assert_eq!(g.groups[0], BTreeSet::from([3, 4]));
        assert_eq!(g.groups[1], BTreeSet::from([0, 1, 2]));
        assert!(g.noise.is_empty());
    }

    #[test]
    fn identical_values_form_one_group() {
        let g = group_models(&profile(&[0.5; 6]), DbscanParams::default());
        assert_eq!(g.groups, vec![(0..6).collect::<BTreeSet<_>>()]);
    }

    #[test]
    fn lone_point_is_noise() {
        let g = group_models(&profile(&[0.3]), DbscanParams::default());
        assert!(g.groups.is_empty());
        assert_eq!(g.noise, BTreeSet::from([0]));
    }

    #[test]
    fn three_clusters_merge_closest_means() {
        let g = group_models(&profile(&[0.0, 0.01, 0.5, 0.51, 0.6, 0.61]), DbscanParams::default());
        assert_eq!(g.groups.len(), 2);
        assert_eq!(g.groups[0], BTreeSet::from([0, 1]));
        assert_eq!(g.groups[1], BTreeSet::from([2, 3, 4, 5]));
    }

    #[test]
    fn kmeans_two_separates_sign() {
        let g = kmeans_two(&profile(&[1.0, 1.0, -1.0]));
        assert_eq!(g.groups, vec![BTreeSet::from([2]), BTreeSet::from([0, 1])]);
    }

    #[test]
    fn threshold_keeps_at_or_above() {
        let (kept, dropped) = threshold_filter(&profile(&[0.9, 0.5, 0.49, -1.0]), 0.5);
        assert_eq!(kept, BTreeSet::from([0, 1]));
        assert_eq!(dropped, BTreeSet::from([2, 3]));
    }

    #[test]
    fn aggregate_examples() {
        let models = BTreeMap::from([(1, pv(&[1.0, 1.0])), (2, pv(&[3.0, 3.0]))]);
        let weights = BTreeMap::from([(1, (1.0, 1)), (2, (3.0, 1))]);
        let both = aggregate_group(&BTreeSet::from([1, 2]), &models, &weights).unwrap();
        assert!((both.as_slice()[0] - 2.5).abs() < 1e-15);
        let single = aggregate_group(&BTreeSet::from([2]), &models, &weights).unwrap();
        assert_eq!(single, models[&2]);
        let zero = BTreeMap::from([(1, (0.0, 1)), (2, (0.0, 1))]);
        assert!(matches!(
            aggregate_group(&BTreeSet::from([1, 2]), &models, &zero),
            Err(DefenseError::ZeroWeight(_))
        ));
    }

    #[test]
    fn ties_prefer_larger_then_lower_id() {
        let g = |m: &[SatId], s: f64| ModelGroup {
            members: m.iter().copied().collect(),
            aggregate: pv(&[0.0]),
            score: s,
        };
        assert_eq!(choose_group(&[g(&[9], 0.5), g(&[1, 2, 3], 0.5)]), 1);
        assert_eq!(choose_group(&[g(&[4, 5], 0.5), g(&[1, 7], 0.5)]), 1);
        assert_eq!(choose_group(&[g(&[1, 2, 3], 0.4), g(&[9], 0.5)]), 1);
    }

    #[test]
    fn suspects_are_set_difference() {
        let all: BTreeSet<SatId> = (0..5).collect();
        assert!(suspects_from_choice(&all, Some(&all)).is_empty());
        let four: BTreeSet<SatId> = (0..4).collect();
        assert_eq!(suspects_from_choice(&all, Some(&four)), BTreeSet::from([4]));
    }
}
