//! Scripted adversaries for learner, miner and head roles.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::str::FromStr;

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::constellation::{ClusterId, Role, SatId};
use crate::fl::{LabeledDataset, ParamVector};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum AttackError {
    #[error("invalid round set {0:?}")]
    Rounds(String),
    #[error("invalid attack spec: {0}")]
    Spec(String),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AttackKind {
    LabelFlip,
    SignFlip,
    StaleModel,
    DishonestMinerVote,
    DishonestHeadVote,
}

impl AttackKind {
    pub fn target_role(self) -> Role {
        match self {
            AttackKind::LabelFlip | AttackKind::SignFlip | AttackKind::StaleModel => Role::Learner,
            AttackKind::DishonestMinerVote => Role::Miner,
            AttackKind::DishonestHeadVote => Role::Head,
        }
    }
}

/// Inclusive round ranges written as `"5-15,25-50"`; single rounds as `"7"`.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub struct RoundSet(Vec<(u32, u32)>);

impl RoundSet {
    pub fn new(mut ranges: Vec<(u32, u32)>) -> Result<Self, AttackError> {
        if ranges.is_empty() || ranges.iter().any(|&(a, b)| a > b) {
            return Err(AttackError::Rounds(format!("{ranges:?}")));
        }
        ranges.sort_unstable();
        Ok(Self(ranges))
    }

    pub fn contains(&self, round: u32) -> bool {
        self.0.iter().any(|&(a, b)| (a..=b).contains(&round))
    }

    pub fn ranges(&self) -> &[(u32, u32)] {
        &self.0
    }
}

impl FromStr for RoundSet {
    type Err = AttackError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let bad = || AttackError::Rounds(s.to_string());
        let mut ranges = Vec::new();
        for part in s.split(',').map(str::trim).filter(|p| !p.is_empty()) {
            let (a, b) = match part.split_once('-') {
                Some((a, b)) => (a.trim(), b.trim()),
                None => (part, part),
            };
            ranges.push((a.parse().map_err(|_| bad())?, b.parse().map_err(|_| bad())?));
        }
        RoundSet::new(ranges).map_err(|_| bad())
    }
}

impl fmt::Display for RoundSet {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let parts: Vec<String> = self
            .0
            .iter()
            .map(|&(a, b)| if a == b { a.to_string() } else { format!("{a}-{b}") })
            .collect();
        f.write_str(&parts.join(","))
    }
}

impl TryFrom<String> for RoundSet {
    type Error = AttackError;

    fn try_from(s: String) -> Result<Self, Self::Error> {
        s.parse()
    }
}

impl From<RoundSet> for String {
    fn from(r: RoundSet) -> String {
        r.to_string()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AttackSpec {
    pub kind: AttackKind,
    pub malicious_fraction: f64,
    pub active_rounds: RoundSet,
    pub seed: u64,
}

impl AttackSpec {
    pub fn validate(&self) -> Result<(), AttackError> {
        if !(0.0..1.0).contains(&self.malicious_fraction) {
            return Err(AttackError::Spec(format!(
                "malicious_fraction {} outside [0, 1)",
                self.malicious_fraction
            )));
        }
        if self.kind.target_role() != Role::Learner && self.malicious_fraction >= 0.5 {
            return Err(AttackError::Spec(format!(
                "{:?} needs an honest majority, got fraction {}",
                self.kind, self.malicious_fraction
            )));
        }
        Ok(())
    }

    pub fn is_active(&self, round: u32) -> bool {
        self.active_rounds.contains(round)
    }
}

/// Seeded sample of attackers among `candidates`, which hold the satellites
/// in the targeted role.
///
/// Learner attacks draw `floor(fraction * total)` attackers (capped at the
/// candidate count); vote attacks draw `floor(fraction * candidates)` so the
/// committee keeps its honest majority.
pub fn select_malicious(candidates: &BTreeSet<SatId>, total: usize, spec: &AttackSpec) -> BTreeSet<SatId> {
    let base = if spec.kind.target_role() == Role::Learner {
        total
    } else {
        candidates.len()
    };
    let count = ((spec.malicious_fraction * base as f64 + 1e-9).floor() as usize).min(candidates.len());
    let pool: Vec<SatId> = candidates.iter().copied().collect();
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    sample(&mut rng, pool.len(), count)
        .into_iter()
        .map(|i| pool[i])
        .collect()
}

pub fn flip_label(label: usize, class_count: usize) -> usize {
    class_count - 1 - label
}

pub fn label_flipped(data: &LabeledDataset) -> LabeledDataset {
    let k = data.class_count();
    data.map_labels(|y| flip_label(y, k))
}

/// Model-level corruption applied after honest training (or, for label flip,
/// training on flipped labels).
pub fn corrupt_local_model(kind: AttackKind, trained: ParamVector, previous_global: &ParamVector) -> ParamVector {
    match kind {
        AttackKind::SignFlip => trained.negated(),
        AttackKind::StaleModel => previous_global.clone(),
        _ => trained,
    }
}

/// Dishonest miner: the lowest-scoring choice other than the honest one.
/// With a single candidate the honest vote is the only option.
pub fn corrupt_vote(honest: usize, scores: &[f64]) -> usize {
    let mut pick = honest;
    for (i, &s) in scores.iter().enumerate() {
        if i != honest && (pick == honest || s < scores[pick]) {
            pick = i;
        }
    }
    pick
}

/// Dishonest head: every approval inverted.
pub fn corrupt_ballot(approvals: &BTreeMap<ClusterId, bool>) -> BTreeMap<ClusterId, bool> {
    approvals.iter().map(|(&c, &a)| (c, !a)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn spec(kind: AttackKind, fraction: f64) -> AttackSpec {
        AttackSpec {
            kind,
            malicious_fraction: fraction,
            active_rounds: "5-15,25-50".parse().unwrap(),
            seed: 3,
        }
    }

    #[test]
    fn round_set_parsing() {
        let r: RoundSet = "25-50, 5-15".parse().unwrap();
        assert!(r.contains(5) && r.contains(15) && r.contains(30));
        assert!(!r.contains(4) && !r.contains(16) && !r.contains(51));
        assert_eq!(r.to_string(), "5-15,25-50");
        assert!("".parse::<RoundSet>().is_err());
        assert!("9-3".parse::<RoundSet>().is_err());
        assert!("7".parse::<RoundSet>().unwrap().contains(7));
    }

    #[test]
    fn selection_counts_and_determinism() {
        let all: BTreeSet<SatId> = (0..200).collect();
        assert!(select_malicious(&all, 200, &spec(AttackKind::LabelFlip, 0.0)).is_empty());
        let a = select_malicious(&all, 200, &spec(AttackKind::LabelFlip, 0.2));
        assert_eq!(a.len(), 40);
        assert_eq!(a, select_malicious(&all, 200, &spec(AttackKind::LabelFlip, 0.2)));
        let miners: BTreeSet<SatId> = (0..10).collect();
        assert_eq!(
            select_malicious(&miners, 50, &spec(AttackKind::DishonestMinerVote, 0.2)).len(),
            2
        );
    }

    #[test]
    fn vote_kinds_need_honest_majority() {
        assert!(spec(AttackKind::DishonestHeadVote, 0.5).validate().is_err());
        assert!(spec(AttackKind::LabelFlip, 0.6).validate().is_ok());
        assert!(spec(AttackKind::LabelFlip, 1.0).validate().is_err());
    }

    #[test]
    fn model_corruptions() {
        let w = ParamVector::from_vec(vec![1.0, -2.0]);
        let prev = ParamVector::from_vec(vec![0.5, 0.5]);
        assert_eq!(
            corrupt_local_model(AttackKind::SignFlip, w.clone(), &prev).as_slice(),
            &[-1.0, 2.0]
        );
        assert_eq!(corrupt_local_model(AttackKind::StaleModel, w.clone(), &prev), prev);
        assert_eq!(corrupt_local_model(AttackKind::LabelFlip, w.clone(), &prev), w);
        assert_eq!(flip_label(0, 10), 9);
        assert_eq!(flip_label(9, 10), 0);
    }

    #[test]
    fn dishonest_votes() {
        assert_eq!(corrupt_vote(0, &[0.9]), 0);
        assert_eq!(corrupt_vote(0, &[0.9, 0.3]), 1);
        assert_eq!(corrupt_vote(1, &[0.2, 0.9, 0.5]), 0);
        let b = corrupt_ballot(&BTreeMap::from([(1, true), (2, false)]));
        assert_eq!(b, BTreeMap::from([(1, false), (2, true)]));
    }
}
