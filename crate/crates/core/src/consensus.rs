//! Intra-cluster vote tally, inter-cluster score verification, global
//! aggregation and reputation settlement.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::constellation::{ClusterId, SatId};
use crate::fl::ParamVector;
use crate::ledger::Digest;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ConsensusError {
    #[error("no accepted cluster model this round")]
    RoundFailure,
    #[error("accuracy weights sum to zero")]
    ZeroWeight,
}

/// Identity of a vote target: the digest of the aggregate's canonical bytes.
pub fn choice_id(model: &ParamVector) -> Digest {
    Digest::of(&model.to_be_bytes())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MinerVote {
    pub miner: SatId,
    /// `None` when the miner found no group to vote for.
    pub choice: Option<Digest>,
    pub score: f64,
    pub suspects: BTreeSet<SatId>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Tally {
    pub winner: Option<Digest>,
    pub counts: BTreeMap<Digest, usize>,
    pub dissenters: BTreeSet<SatId>,
}

/// Plurality over choices; ties go to the higher mean score, then the lower
/// digest. Abstentions count for nothing and are not dissent.
pub fn tally_cluster(votes: &[MinerVote]) -> Tally {
    let mut counts: BTreeMap<Digest, usize> = BTreeMap::new();
    let mut score_sums: BTreeMap<Digest, f64> = BTreeMap::new();
    for v in votes {
        if let Some(c) = v.choice {
            *counts.entry(c).or_default() += 1;
            *score_sums.entry(c).or_default() += v.score;
        }
    }
    let mut winner: Option<(Digest, usize, f64)> = None;
    for (&c, &n) in &counts {
        let mean = score_sums[&c] / n as f64;
        let better = match winner {
            None => true,
            Some((_, wn, wm)) => n > wn || (n == wn && mean > wm),
        };
        if better {
            winner = Some((c, n, mean));
        }
    }
    let winner = winner.map(|w| w.0);
    let dissenters = match winner {
        Some(w) => votes
            .iter()
            .filter(|v| v.choice.is_some_and(|c| c != w))
            .map(|v| v.miner)
            .collect(),
        None => BTreeSet::new(),
    };
    Tally {
        winner,
        counts,
        dissenters,
    }
}

/// Approve iff the two scores differ by strictly less than `sigma`.
pub fn head_verify(e_self: f64, e_claim: f64, sigma: f64) -> bool {
    (e_self - e_claim).abs() < sigma
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HeadBallot {
    pub head: SatId,
    pub cluster: ClusterId,
    pub approvals: BTreeMap<ClusterId, bool>,
    pub scores: BTreeMap<ClusterId, f64>,
}

/// Acceptance per candidate cluster: a strict majority of the peer heads
/// (every ballot except the candidate's own head) must approve. A lone
/// cluster has no peers and is accepted.
pub fn decide_acceptance(ballots: &[HeadBallot], candidates: &BTreeSet<ClusterId>) -> BTreeMap<ClusterId, bool> {
    candidates
        .iter()
        .map(|&c| {
            let peers: Vec<&HeadBallot> = ballots.iter().filter(|b| b.cluster != c).collect();
            let yes = peers
                .iter()
                .filter(|b| b.approvals.get(&c).copied().unwrap_or(false))
                .count();
            (c, peers.is_empty() || 2 * yes > peers.len())
        })
        .collect()
}

/// Heads whose every approval matches the collective outcome.
pub fn honest_heads(ballots: &[HeadBallot], outcome: &BTreeMap<ClusterId, bool>) -> BTreeSet<SatId> {
    ballots
        .iter()
        .filter(|b| b.approvals.iter().all(|(c, a)| outcome.get(c) == Some(a)))
        .map(|b| b.head)
        .collect()
}

/// Accuracy-weighted mean of accepted cluster models.
pub fn aggregate_global(accepted: &[(ClusterId, &ParamVector, f64)]) -> Result<ParamVector, ConsensusError> {
    if accepted.is_empty() {
        return Err(ConsensusError::RoundFailure);
    }
    if accepted.iter().map(|a| a.2).sum::<f64>() <= 0.0 {
        return Err(ConsensusError::ZeroWeight);
    }
    ParamVector::weighted_mean(accepted.iter().map(|&(_, w, e)| (e, w))).ok_or(ConsensusError::RoundFailure)
}

/// Mean of per-cluster losses scaled by accuracy weights normalized to sum
/// to the cluster count. Falls back to a plain mean when every weight is zero.
pub fn global_loss(entries: &[(f64, f64)]) -> f64 {
    if entries.is_empty() {
        return f64::NAN;
    }
    let c = entries.len() as f64;
    let total: f64 = entries.iter().map(|e| e.1).sum();
    if total <= 0.0 {
        return entries.iter().map(|e| e.0).sum::<f64>() / c;
    }
    entries.iter().map(|&(l, w)| (w * c / total) * l).sum::<f64>() / c
}

/// Per-cluster facts the settlement needs.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClusterOutcome {
    pub cluster: ClusterId,
    pub head: SatId,
    /// The head's list: learners outside the winning group plus dissenting miners.
    pub head_suspects: BTreeSet<SatId>,
    /// Learners whose models form the cluster model.
    pub contributors: BTreeSet<SatId>,
    pub accepted: bool,
    /// Every satellite that took part in the cluster this round.
    pub participants: BTreeSet<SatId>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Settlement {
    pub suspects: BTreeSet<SatId>,
    pub deltas: BTreeMap<SatId, f64>,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReputationRule {
    pub reward: f64,
    pub penalty: f64,
}

impl Default for ReputationRule {
    fn default() -> Self {
        Self {
            reward: 1.0,
            penalty: 3.0,
        }
    }
}

/// Round suspect list and reputation deltas.
///
/// Suspects are the union of honest heads' lists, dishonest heads, and the
/// contributors of rejected clusters or of clusters led by a dishonest head.
/// Each suspect loses `penalty` once; every other participant gains `reward`.
pub fn settle_round(outcomes: &[ClusterOutcome], honest: &BTreeSet<SatId>, rule: ReputationRule) -> Settlement {
    let mut suspects = BTreeSet::new();
    for o in outcomes {
        let head_honest = honest.contains(&o.head);
        if head_honest {
            suspects.extend(&o.head_suspects);
        } else {
            suspects.insert(o.head);
        }
        if !o.accepted || !head_honest {
            suspects.extend(&o.contributors);
        }
    }
    let mut deltas = BTreeMap::new();
    for o in outcomes {
        for &id in &o.participants {
            deltas.insert(
                id,
                if suspects.contains(&id) {
                    -rule.penalty
                } else {
                    rule.reward
                },
            );
        }
    }
    Settlement { suspects, deltas }
}
