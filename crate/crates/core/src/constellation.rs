//! Constellation geometry, data-center clustering and reputation-driven roles.

use std::collections::{BTreeMap, BTreeSet};

use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const EARTH_RADIUS_M: f64 = 6_371_000.0;

pub type SatId = u32;
pub type ClusterId = u32;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ConstellationError {
    #[error("configuration error: {0}")]
    Config(String),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Role {
    Head,
    Miner,
    Learner,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Satellite {
    pub id: SatId,
    pub orbit_index: u32,
    pub phase_index: u32,
    /// Earth-centered position in meters.
    pub position: [f64; 3],
    pub cpu_freq_hz: f64,
    pub tx_power_w: f64,
    pub reputation: f64,
    pub role: Role,
}

impl Satellite {
    pub fn distance_to(&self, other: &Satellite) -> f64 {
        distance(&self.position, &other.position)
    }
}

pub fn distance(a: &[f64; 3], b: &[f64; 3]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt()
}

/// Shape and hardware of a constellation.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ConstellationConfig {
    pub orbits: u32,
    pub sats_per_orbit: u32,
    pub altitude_m: f64,
    pub inclination_deg: f64,
    /// Walker phasing factor: orbit `o` is shifted by `2 pi F o / (orbits * per_orbit)`.
    pub phasing: u32,
    pub cpu_freq_min_hz: f64,
    pub cpu_freq_max_hz: f64,
    pub tx_power_w: f64,
    pub initial_reputation: f64,
}

impl Default for ConstellationConfig {
    fn default() -> Self {
        Self {
            orbits: 20,
            sats_per_orbit: 10,
            altitude_m: 550_000.0,
            inclination_deg: 53.0,
            phasing: 1,
            cpu_freq_min_hz: 1e9,
            cpu_freq_max_hz: 5e9,
            tx_power_w: 5.0,
            initial_reputation: 10.0,
        }
    }
}

impl ConstellationConfig {
    pub fn satellite_count(&self) -> usize {
        (self.orbits * self.sats_per_orbit) as usize
    }
}

/// Circular orbits with evenly spaced ascending nodes and in-plane phases.
///
/// Ids are orbit-major. CPU frequencies are drawn uniformly from the configured
/// range; every satellite starts as a learner with the initial reputation.
pub fn build_constellation(cfg: &ConstellationConfig, seed: u64) -> Result<Vec<Satellite>, ConstellationError> {
    if cfg.orbits == 0 || cfg.sats_per_orbit == 0 {
        return Err(ConstellationError::Config(
            "need at least one orbit and one satellite per orbit".into(),
        ));
    }
    if !(cfg.cpu_freq_min_hz > 0.0 && cfg.cpu_freq_min_hz <= cfg.cpu_freq_max_hz) || !(cfg.tx_power_w > 0.0) {
        return Err(ConstellationError::Config(
            "cpu frequency range and tx power must be positive".into(),
        ));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let radius = EARTH_RADIUS_M + cfg.altitude_m;
    let inc = cfg.inclination_deg.to_radians();
    let mut out = Vec::with_capacity(cfg.satellite_count());
    for o in 0..cfg.orbits {
        let raan = std::f64::consts::TAU * o as f64 / cfg.orbits as f64;
        for k in 0..cfg.sats_per_orbit {
            let total = cfg.satellite_count() as f64;
            let u = std::f64::consts::TAU * (k as f64 / cfg.sats_per_orbit as f64 + (cfg.phasing * o) as f64 / total);
            let position = [
                radius * (raan.cos() * u.cos() - raan.sin() * u.sin() * inc.cos()),
                radius * (raan.sin() * u.cos() + raan.cos() * u.sin() * inc.cos()),
                radius * (u.sin() * inc.sin()),
            ];
            let cpu_freq_hz = if cfg.cpu_freq_max_hz > cfg.cpu_freq_min_hz {
                rng.gen_range(cfg.cpu_freq_min_hz..=cfg.cpu_freq_max_hz)
            } else {
                cfg.cpu_freq_min_hz
            };
            out.push(Satellite {
                id: o * cfg.sats_per_orbit + k,
                orbit_index: o,
                phase_index: k,
                position,
                cpu_freq_hz,
                tx_power_w: cfg.tx_power_w,
                reputation: cfg.initial_reputation,
                role: Role::Learner,
            });
        }
    }
    Ok(out)
}

/// Clustering feature: unit position followed by the L1-normalized label histogram.
pub fn clustering_feature(position: &[f64; 3], histogram: &[usize]) -> Vec<f64> {
    let norm = position.iter().map(|v| v * v).sum::<f64>().sqrt();
    let total: usize = histogram.iter().sum();
    let mut f: Vec<f64> = position
        .iter()
        .map(|v| if norm > 0.0 { v / norm } else { 0.0 })
        .collect();
    f.extend(
        histogram
            .iter()
            .map(|&c| if total > 0 { c as f64 / total as f64 } else { 0.0 }),
    );
    f
}

const KMEANS_MAX_ITERS: usize = 50;

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum()
}

/// Lloyd's k-means with seeded distinct-point initialization.
///
/// Returns one cluster index per point; every cluster is nonempty. An empty
/// cluster is re-seeded from the point farthest from its centroid.
pub fn kmeans(points: &[Vec<f64>], k: usize, seed: u64) -> Result<Vec<usize>, ConstellationError> {
    if k == 0 || points.len() < k {
        return Err(ConstellationError::Config(format!(
            "cannot form {k} clusters from {} points",
            points.len()
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut init: Vec<usize> = sample(&mut rng, points.len(), k).into_vec();
    init.sort_unstable();
    let mut centroids: Vec<Vec<f64>> = init.iter().map(|&i| points[i].clone()).collect();
    let mut assign = vec![usize::MAX; points.len()];
    for _ in 0..KMEANS_MAX_ITERS {
        let mut changed = false;
        for (i, p) in points.iter().enumerate() {
            let best = (0..k)
                .min_by(|&a, &b| sq_dist(p, &centroids[a]).total_cmp(&sq_dist(p, &centroids[b])))
                .unwrap();
            if assign[i] != best {
                assign[i] = best;
                changed = true;
            }
        }
        reseed_empty(points, &mut assign, &centroids, k);
        let next = centroids_of(points, &assign, k);
        if !changed {
            break;
        }
        centroids = next;
    }
    reseed_empty(points, &mut assign, &centroids, k);
    Ok(assign)
}

fn centroids_of(points: &[Vec<f64>], assign: &[usize], k: usize) -> Vec<Vec<f64>> {
    let dim = points[0].len();
    let mut sums = vec![vec![0.0; dim]; k];
    let mut counts = vec![0usize; k];
    for (p, &c) in points.iter().zip(assign) {
        counts[c] += 1;
        for (s, v) in sums[c].iter_mut().zip(p) {
            *s += v;
        }
    }
    for (s, &n) in sums.iter_mut().zip(&counts) {
        if n > 0 {
            s.iter_mut().for_each(|v| *v /= n as f64);
        }
    }
    sums
}

fn reseed_empty(points: &[Vec<f64>], assign: &mut [usize], centroids: &[Vec<f64>], k: usize) {
    loop {
        let mut counts = vec![0usize; k];
        for &c in assign.iter() {
            counts[c] += 1;
        }
        let Some(empty) = counts.iter().position(|&n| n == 0) else {
            return;
        };
        // farthest point from its own centroid, taken from a cluster that can spare it
        let donor = (0..points.len())
            .filter(|&i| counts[assign[i]] > 1)
            .max_by(|&a, &b| {
                sq_dist(&points[a], &centroids[assign[a]])
                    .total_cmp(&sq_dist(&points[b], &centroids[assign[b]]))
                    .then(b.cmp(&a))
            })
            .expect("k <= point count guarantees a donor");
        assign[donor] = empty;
    }
}

/// Groups satellites for the data center by position and label mix.
///
/// `histograms[i]` is the label histogram of `satellites[i]`. Deterministic
/// given `seed`; groups are returned in ascending order of their smallest id.
pub fn cluster_satellites(
    satellites: &[Satellite],
    histograms: &[Vec<usize>],
    cluster_count: usize,
    seed: u64,
) -> Result<Vec<Vec<SatId>>, ConstellationError> {
    if cluster_count < 2 {
        return Err(ConstellationError::Config("need at least 2 clusters".into()));
    }
    if satellites.len() < 3 * cluster_count {
        return Err(ConstellationError::Config(format!(
            "{} satellites cannot fill {cluster_count} clusters of at least 3",
            satellites.len()
        )));
    }
    let features: Vec<Vec<f64>> = satellites
        .iter()
        .zip(histograms)
        .map(|(s, h)| clustering_feature(&s.position, h))
        .collect();
    let assign = kmeans(&features, cluster_count, seed)?;
    let mut groups: Vec<Vec<SatId>> = vec![Vec::new(); cluster_count];
    for (s, &c) in satellites.iter().zip(&assign) {
        groups[c].push(s.id);
    }
    groups.iter_mut().for_each(|g| g.sort_unstable());
    groups.sort_by_key(|g| g[0]);
    Ok(groups)
}

/// Moves points into clusters smaller than `min_size`, taking from clusters
/// above the minimum the member closest to the receiving cluster's centroid.
pub fn enforce_min_cluster_size(groups: &mut [Vec<SatId>], satellites: &BTreeMap<SatId, &Satellite>, min_size: usize) {
    loop {
        let Some(small) = (0..groups.len()).find(|&g| groups[g].len() < min_size) else {
            return;
        };
        let anchor = centroid(groups[small].iter().map(|id| satellites[id].position));
        let mut best: Option<(f64, usize, usize)> = None;
        for (g, members) in groups.iter().enumerate() {
            if g == small || members.len() <= min_size {
                continue;
            }
            for (pos, id) in members.iter().enumerate() {
                let d = distance(&satellites[id].position, &anchor);
                if best.is_none_or(|(bd, _, _)| d < bd) {
                    best = Some((d, g, pos));
                }
            }
        }
        let Some((_, g, pos)) = best else {
            return;
        };
        let id = groups[g].remove(pos);
        groups[small].push(id);
        groups[small].sort_unstable();
    }
}

fn centroid(points: impl Iterator<Item = [f64; 3]>) -> [f64; 3] {
    let mut sum = [0.0; 3];
    let mut n = 0.0;
    for p in points {
        for i in 0..3 {
            sum[i] += p[i];
        }
        n += 1.0;
    }
    if n > 0.0 {
        sum.iter_mut().for_each(|v| *v /= n);
    }
    sum
}

/// Role split of one cluster for one round.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Cluster {
    pub id: ClusterId,
    pub head: SatId,
    pub miners: BTreeSet<SatId>,
    pub learners: BTreeSet<SatId>,
    pub learner_to_miner: BTreeMap<SatId, SatId>,
}

impl Cluster {
    pub fn members(&self) -> impl Iterator<Item = SatId> + '_ {
        std::iter::once(self.head)
            .chain(self.miners.iter().copied())
            .chain(self.learners.iter().copied())
    }

    pub fn role_of(&self, id: SatId) -> Option<Role> {
        if id == self.head {
            Some(Role::Head)
        } else if self.miners.contains(&id) {
            Some(Role::Miner)
        } else if self.learners.contains(&id) {
            Some(Role::Learner)
        } else {
            None
        }
    }
}

/// Number of miners drawn from `others` non-head members.
pub fn miner_count(others: usize, miner_fraction: f64) -> usize {
    // shave float noise so 0.2 * 5 stays 1
    (miner_fraction * others as f64 - 1e-9).ceil().max(0.0) as usize
}

/// Assigns head, miners and learners within one cluster by reputation.
///
/// The incumbent head keeps its role when it is still a member. Otherwise the
/// highest-reputation member leads. Ties keep the order of `members`, so the
/// caller decides how equal reputations rotate. The next
/// `ceil(miner_fraction * (n - 1))` members become miners and each learner
/// attaches to its nearest miner (ties to the lowest miner id).
pub fn assign_roles(
    cluster_id: ClusterId,
    members: &[&Satellite],
    miner_fraction: f64,
    incumbent_head: Option<SatId>,
) -> Result<Cluster, ConstellationError> {
    if members.len() < 3 {
        return Err(ConstellationError::Config(format!(
            "cluster {cluster_id} has {} eligible members, need 3",
            members.len()
        )));
    }
    if !(miner_fraction > 0.0 && miner_fraction < 1.0) {
        return Err(ConstellationError::Config(format!(
            "miner fraction {miner_fraction} outside (0, 1)"
        )));
    }
    let mut ranked: Vec<&Satellite> = members.to_vec();
    ranked.sort_by(|a, b| b.reputation.total_cmp(&a.reputation));
    if let Some(pos) = incumbent_head.and_then(|h| ranked.iter().position(|s| s.id == h)) {
        let head = ranked.remove(pos);
        ranked.insert(0, head);
    }
    let head = ranked[0];
    let others = &ranked[1..];
    let m = miner_count(others.len(), miner_fraction);
    if m < 1 || m >= others.len() {
        return Err(ConstellationError::Config(format!(
            "cluster {cluster_id}: {m} miners out of {} leaves no learner or no miner",
            others.len()
        )));
    }
    let (miners, learners) = others.split_at(m);
    let mut learner_to_miner = BTreeMap::new();
    for l in learners {
        let nearest = miners
            .iter()
            .min_by(|a, b| l.distance_to(a).total_cmp(&l.distance_to(b)).then(a.id.cmp(&b.id)))
            .expect("at least one miner");
        learner_to_miner.insert(l.id, nearest.id);
    }
    Ok(Cluster {
        id: cluster_id,
        head: head.id,
        miners: miners.iter().map(|s| s.id).collect(),
        learners: learners.iter().map(|s| s.id).collect(),
        learner_to_miner,
    })
}

/// `max(0, reputation + delta)`.
pub fn apply_reputation_delta(satellite: &mut Satellite, delta: f64) -> f64 {
    satellite.reputation = (satellite.reputation + delta).max(0.0);
    satellite.reputation
}

/// Satellites with zero reputation are removed from role assignment.
pub fn is_eligible(satellite: &Satellite) -> bool {
    satellite.reputation > 0.0
}

/// JSON-serializable view of the constellation and its clusters.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConstellationSnapshot {
    pub satellites: Vec<Satellite>,
    pub cluster_members: Vec<Vec<SatId>>,
    pub clusters: Vec<Cluster>,
}
