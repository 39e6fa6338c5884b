use std::collections::{BTreeMap, BTreeSet};

use super::config::{DatasetSource, GlobalLossMode, Method, ScenarioConfig};
use super::report::{ClusterTally, RoundReport, RoundTrace};
use super::SimError;
use crate::attacks::{
    corrupt_ballot, corrupt_local_model, corrupt_vote, label_flipped, select_malicious, AttackKind, AttackSpec,
};
use crate::channel::{
    eval_energy, ground_link_snr, link_snr, rate, round_energy, train_energy, tx_energy, ClusterTraffic,
    EnergyBreakdown, Hop, RoundTraffic, Workload,
};
use crate::consensus::{
    aggregate_global, choice_id, decide_acceptance, global_loss, head_verify, honest_heads, settle_round,
    tally_cluster, ClusterOutcome, HeadBallot, MinerVote, ReputationRule,
};
use crate::constellation::{
    apply_reputation_delta, assign_roles, build_constellation, cluster_satellites, enforce_min_cluster_size,
    is_eligible, Cluster, ClusterId, ConstellationSnapshot, Role, SatId, Satellite,
};
use crate::defense::{
    aggregate_group, fine_tuned_score, group_models, kmeans_two, score_groups, suspects_from_choice, threshold_filter,
    ClusterDefenseTrace, GroupTrace, Grouping, MinerTrace, SimilarityProfile, FINE_TUNE_FRACTION,
};
use crate::fl::mnist::{load_idx_pair, locate_idx_pair};
use crate::fl::synthetic::generate_blobs;
use crate::fl::{
    evaluate, local_loss, partition_non_iid, train_local, LabeledDataset, ModelLayout, ParamVector, TrainConfig,
};
use crate::ledger::{ChainSet, Digest, HmacSigner, KeyRegistry, ModelRecord, Payload, RoundArtifacts, Transaction};

/// Smallest cluster that can hold a head, a miner and a learner.
pub const MIN_CLUSTER_SIZE: usize = 3;

/// Deterministic sub-seed for one purpose within a run.
pub fn derive_seed(base: u64, parts: &[u64]) -> u64 {
    let mut bytes = base.to_be_bytes().to_vec();
    for p in parts {
        bytes.extend_from_slice(&p.to_be_bytes());
    }
    let d = Digest::of(&bytes);
    u64::from_be_bytes(d.0[..8].try_into().unwrap())
}

const TAG_PARTITION: u64 = 1;
const TAG_CLUSTER: u64 = 2;
const TAG_KEYS: u64 = 3;
const TAG_TRAIN: u64 = 4;
const TAG_SCORE: u64 = 5;
const TAG_VERIFY: u64 = 6;
const TAG_INIT: u64 = 7;
const TAG_ROLES: u64 = 8;

/// Loads the configured dataset and splits it by index into train and test.
pub fn load_dataset(cfg: &ScenarioConfig) -> Result<(LabeledDataset, LabeledDataset), SimError> {
    let full = match &cfg.dataset.source {
        DatasetSource::Mnist { path, limit } => {
            let dir = cfg.resolve_path(path);
            let (images, labels) = locate_idx_pair(&dir)?;
            load_idx_pair(&images, &labels, *limit)?
        }
        DatasetSource::Synthetic(spec) => generate_blobs(spec),
    };
    Ok(full.train_test_split(cfg.dataset.train_fraction))
}

/// Round-synchronous protocol state for one scenario.
pub struct Simulation {
    pub cfg: ScenarioConfig,
    pub layout: ModelLayout,
    pub satellites: Vec<Satellite>,
    pub data: Vec<LabeledDataset>,
    pub test: LabeledDataset,
    pub cluster_members: Vec<Vec<SatId>>,
    /// Current role split per cluster; `None` when too few members are eligible.
    pub clusters: Vec<Option<Cluster>>,
    pub global: ParamVector,
    pub round: u32,
    pub malicious: BTreeSet<SatId>,
    pub chains: ChainSet,
    pub registry: KeyRegistry,
    pub traces: Vec<RoundTrace>,
    /// Energy of the initial ground-to-satellite model upload, kept out of round totals.
    pub sgl_setup_energy: f64,
    last_suspects: BTreeSet<SatId>,
}

struct LocalResult {
    id: SatId,
    model: ParamVector,
    loss: f64,
}

/// Per-cluster intermediate results of the in-cluster stage.
struct ClusterStage {
    cluster: Cluster,
    models: BTreeMap<SatId, ParamVector>,
    groups: Vec<(BTreeSet<SatId>, ParamVector)>,
    trace: ClusterDefenseTrace,
    votes: Vec<MinerVote>,
    winner: Option<usize>,
    head_suspects: BTreeSet<SatId>,
}

impl Simulation {
    pub fn new(cfg: ScenarioConfig) -> Result<Self, SimError> {
        cfg.validate()?;
        let (train, test) = load_dataset(&cfg)?;
        let layout = ModelLayout {
            feature_dim: train.feature_dim(),
            class_count: train.class_count(),
            kind: cfg.training.model,
        };
        let satellites = build_constellation(&cfg.constellation, cfg.seed)?;
        let n = satellites.len();
        let data = partition_non_iid(
            &train,
            n,
            cfg.constellation.orbits as usize,
            cfg.dataset.labels_per_orbit,
            cfg.dataset.samples_per_satellite,
            derive_seed(cfg.seed, &[TAG_PARTITION]),
        )?;
        let histograms: Vec<Vec<usize>> = data.iter().map(LabeledDataset::histogram).collect();
        let mut cluster_members = cluster_satellites(
            &satellites,
            &histograms,
            cfg.protocol.clusters,
            derive_seed(cfg.seed, &[TAG_CLUSTER]),
        )?;
        {
            let by_id: BTreeMap<SatId, &Satellite> = satellites.iter().map(|s| (s.id, s)).collect();
            enforce_min_cluster_size(&mut cluster_members, &by_id, MIN_CLUSTER_SIZE);
        }
        let registry = KeyRegistry::issue(satellites.iter().map(|s| s.id), derive_seed(cfg.seed, &[TAG_KEYS]));
        let global = layout.init(derive_seed(cfg.seed, &[TAG_INIT]));

        let ground_rate = rate(
            ground_link_snr(cfg.constellation.altitude_m, &cfg.physics)?,
            cfg.protocol.ground_tx_power_w,
            &cfg.physics,
        );
        let bits = cfg.physics.model_bits(layout.param_count());
        let sgl_setup_energy = n as f64 * tx_energy(cfg.protocol.ground_tx_power_w, bits, ground_rate)?;

        let mut sim = Simulation {
            layout,
            data,
            test,
            cluster_members,
            clusters: Vec::new(),
            global,
            round: 0,
            malicious: BTreeSet::new(),
            chains: ChainSet::default(),
            registry,
            traces: Vec::new(),
            sgl_setup_energy,
            last_suspects: BTreeSet::new(),
            satellites,
            cfg,
        };
        sim.assign_all_roles()?;
        if let Some(spec) = sim.active_attack() {
            let role = spec.kind.target_role();
            let candidates: BTreeSet<SatId> = sim.satellites.iter().filter(|s| s.role == role).map(|s| s.id).collect();
            sim.malicious = select_malicious(&candidates, n, spec);
        }
        Ok(sim)
    }

    fn active_attack(&self) -> Option<&AttackSpec> {
        self.cfg.attack.as_ref().filter(|_| self.cfg.method.attacked())
    }

    fn attacking(&self, id: SatId, role: Role, round: u32) -> Option<AttackKind> {
        let spec = self.active_attack()?;
        (spec.is_active(round) && spec.kind.target_role() == role && self.malicious.contains(&id)).then_some(spec.kind)
    }

    fn sat(&self, id: SatId) -> &Satellite {
        &self.satellites[id as usize]
    }

    /// Reassigns roles from current reputations; honest incumbents keep leading.
    fn assign_all_roles(&mut self) -> Result<(), SimError> {
        let mut clusters = Vec::with_capacity(self.cluster_members.len());
        for (c, members) in self.cluster_members.iter().enumerate() {
            let mut eligible: Vec<&Satellite> = members
                .iter()
                .map(|&id| &self.satellites[id as usize])
                .filter(|s| is_eligible(s))
                .collect();
            // equal reputations rotate through a per-round seeded order
            eligible.sort_by_key(|s| derive_seed(self.cfg.seed, &[TAG_ROLES, self.round as u64, s.id as u64]));
            let incumbent = self
                .clusters
                .get(c)
                .and_then(|x| x.as_ref())
                .map(|cl| cl.head)
                .filter(|h| !self.last_suspects.contains(h));
            let cluster = if eligible.len() >= MIN_CLUSTER_SIZE {
                Some(assign_roles(
                    c as ClusterId,
                    &eligible,
                    self.cfg.protocol.miner_fraction,
                    incumbent,
                )?)
            } else {
                None
            };
            clusters.push(cluster);
        }
        for s in &mut self.satellites {
            s.role = Role::Learner;
        }
        for cl in clusters.iter().flatten() {
            self.satellites[cl.head as usize].role = Role::Head;
            for &m in &cl.miners {
                self.satellites[m as usize].role = Role::Miner;
            }
        }
        self.clusters = clusters;
        Ok(())
    }

    pub fn snapshot(&self) -> ConstellationSnapshot {
        ConstellationSnapshot {
            satellites: self.satellites.clone(),
            cluster_members: self.cluster_members.clone(),
            clusters: self.clusters.iter().flatten().cloned().collect(),
        }
    }

    fn model_bits(&self) -> f64 {
        self.cfg.physics.model_bits(self.layout.param_count())
    }

    fn hop(&self, from: SatId, to: SatId) -> Result<Hop, SimError> {
        let a = self.sat(from);
        let b = self.sat(to);
        let gamma = link_snr(a.distance_to(b), &self.cfg.physics)?;
        Ok(Hop {
            power_w: a.tx_power_w,
            bits: self.model_bits(),
            rate_bps: rate(gamma, a.tx_power_w, &self.cfg.physics),
        })
    }

    fn workload(&self, id: SatId, epochs: usize) -> Workload {
        Workload {
            freq_hz: self.sat(id).cpu_freq_hz,
            epochs,
            samples: self.accounted_samples(id),
        }
    }

    fn accounted_samples(&self, id: SatId) -> usize {
        self.cfg
            .dataset
            .accounted_samples
            .unwrap_or(self.data[id as usize].len())
    }

    fn train_time(&self, id: SatId) -> f64 {
        let w = self.workload(id, self.cfg.training.epochs);
        train_energy(w.freq_hz, w.epochs, w.samples, &self.cfg.physics).0
    }

    fn eval_time(&self, id: SatId) -> f64 {
        self.train_time(id) / 2.0
    }

    /// Traffic, workloads and modeled latency of one round under the current
    /// roles. `with_model` lists the clusters whose head forwards a model.
    pub fn round_traffic(&self, with_model: &BTreeSet<ClusterId>) -> Result<(RoundTraffic, f64), SimError> {
        let tau = self.cfg.training.epochs;
        let protocol = self.cfg.method.uses_protocol();
        let active: Vec<&Cluster> = self.clusters.iter().flatten().collect();
        let mut traffic = RoundTraffic::default();
        let mut intra_latency: f64 = 0.0;
        for cl in &active {
            let mut ct = ClusterTraffic::default();
            let mut t_head = 0.0f64;
            let mut t_relay = 0.0f64;
            for &m in &cl.miners {
                let h = self.hop(cl.head, m)?;
                t_head = t_head.max(h.duration());
                ct.distribution.push(h);
            }
            for (&l, &m) in &cl.learner_to_miner {
                let h = self.hop(m, l)?;
                t_relay = t_relay.max(h.duration());
                ct.distribution.push(h);
            }
            let mut t_train = 0.0f64;
            let mut t_up = 0.0f64;
            let t_after;
            for (&l, &m) in &cl.learner_to_miner {
                ct.training.push(self.workload(l, tau));
                t_train = t_train.max(self.train_time(l));
                let h = self.hop(l, m)?;
                t_up = t_up.max(h.duration());
                ct.intra_tx.push(h);
            }
            if protocol {
                // each miner forwards every model it received to the other miners
                let mut t_fwd = 0.0f64;
                for &m in &cl.miners {
                    let received = cl.learner_to_miner.values().filter(|&&x| x == m).count();
                    let mut t_m = 0.0;
                    for &other in cl.miners.iter().filter(|&&o| o != m) {
                        let h = self.hop(m, other)?;
                        for _ in 0..received {
                            t_m += h.duration();
                            ct.intra_tx.push(h);
                        }
                    }
                    t_fwd = t_fwd.max(t_m);
                }
                let mut t_eval = 0.0f64;
                let mut t_submit = 0.0f64;
                for &m in &cl.miners {
                    ct.evaluation.push(self.workload(m, tau));
                    t_eval = t_eval.max(self.eval_time(m));
                    let h = self.hop(m, cl.head)?;
                    t_submit = t_submit.max(h.duration());
                    ct.intra_tx.push(h);
                }
                t_after = t_fwd + t_eval + t_submit;
            } else {
                // head and miners train too; miners relay learner models and their own
                for &m in std::iter::once(&cl.head).chain(cl.miners.iter()) {
                    ct.training.push(self.workload(m, tau));
                    t_train = t_train.max(self.train_time(m));
                }
                let mut t_relay_up = 0.0f64;
                for &m in &cl.miners {
                    let received = cl.learner_to_miner.values().filter(|&&x| x == m).count();
                    let h = self.hop(m, cl.head)?;
                    for _ in 0..=received {
                        ct.intra_tx.push(h);
                    }
                    t_relay_up = t_relay_up.max(h.duration() * (received + 1) as f64);
                }
                t_after = t_relay_up;
            }
            intra_latency = intra_latency.max(t_head + t_relay + t_train + t_up + t_after);
            traffic.clusters.push(ct);
        }
        let mut t_inter = 0.0f64;
        for a in &active {
            if protocol && !with_model.contains(&a.id) {
                continue;
            }
            for b in active.iter().filter(|b| b.id != a.id) {
                let h = self.hop(a.head, b.head)?;
                t_inter = t_inter.max(h.duration());
                traffic.inter_tx.push(h);
            }
        }
        let mut t_verify = 0.0f64;
        if protocol {
            for a in &active {
                traffic.head_verification.push(self.workload(a.head, tau));
                t_verify = t_verify.max(self.eval_time(a.head));
            }
        }
        Ok((traffic, intra_latency + t_inter + t_verify))
    }

    /// Energy and latency of a round under the current roles, assuming every
    /// active cluster produces a model.
    pub fn energy_plan(&self) -> Result<(EnergyBreakdown, f64), SimError> {
        let all: BTreeSet<ClusterId> = self.clusters.iter().flatten().map(|c| c.id).collect();
        let (traffic, latency) = self.round_traffic(&all)?;
        Ok((round_energy(&traffic, &self.cfg.physics)?, latency))
    }

    fn train_cfg(&self, seed: u64) -> TrainConfig {
        self.cfg.training.train_config(seed)
    }

    fn train_locals(&self, round: u32, trainers: &[(SatId, Role)]) -> Result<Vec<LocalResult>, SimError> {
        let results = self
            .cfg
            .execution
            .map(trainers, |&(id, role)| -> Result<LocalResult, SimError> {
                let attack = self.attacking(id, role, round);
                let own = &self.data[id as usize];
                let flipped;
                let data = if attack == Some(AttackKind::LabelFlip) {
                    flipped = label_flipped(own);
                    &flipped
                } else {
                    own
                };
                let cfg = self.train_cfg(derive_seed(self.cfg.seed, &[TAG_TRAIN, round as u64, id as u64]));
                let trained = train_local(&self.layout, &self.global, data, &cfg)?;
                let model = match attack {
                    Some(kind) => corrupt_local_model(kind, trained, &self.global),
                    None => trained,
                };
                let w = self.workload(id, cfg.epochs);
                let e_cmp = train_energy(w.freq_hz, w.epochs, w.samples, &self.cfg.physics).1;
                let loss = local_loss(&self.layout, &model, own, e_cmp, cfg.energy_penalty)?;
                Ok(LocalResult { id, model, loss })
            });
        results.into_iter().collect()
    }

    fn group_submissions(
        &self,
        models: &BTreeMap<SatId, ParamVector>,
    ) -> Result<(Grouping, ClusterDefenseTrace), SimError> {
        let mut trace = ClusterDefenseTrace::default();
        if self.global.norm() == 0.0 {
            // no reference direction yet: every nonzero model forms one group
            let (nonzero, zero): (BTreeSet<SatId>, BTreeSet<SatId>) =
                models.keys().copied().partition(|id| models[id].norm() > 0.0);
            trace.degenerate = zero;
            let groups = if nonzero.is_empty() { vec![] } else { vec![nonzero] };
            return Ok((
                Grouping {
                    groups,
                    noise: BTreeSet::new(),
                },
                trace,
            ));
        }
        let (profile, degenerate): (SimilarityProfile, BTreeSet<SatId>) =
            SimilarityProfile::compute(models.iter().map(|(&id, w)| (id, w)), &self.global)?;
        let grouping = match self.cfg.method {
            Method::SbflLeoKmeans => kmeans_two(&profile),
            Method::Efl => {
                let (kept, dropped) = threshold_filter(&profile, self.cfg.protocol.theta_min);
                Grouping {
                    groups: if kept.is_empty() { vec![] } else { vec![kept] },
                    noise: dropped,
                }
            }
            _ => group_models(&profile, self.cfg.protocol.dbscan),
        };
        trace.similarity = profile.entries;
        trace.degenerate = degenerate;
        trace.noise = grouping.noise.clone();
        Ok((grouping, trace))
    }

    fn in_cluster_stage(
        &self,
        round: u32,
        cluster: &Cluster,
        locals: &BTreeMap<SatId, LocalResult>,
    ) -> Result<ClusterStage, SimError> {
        let tau = self.cfg.training.epochs;
        let models: BTreeMap<SatId, ParamVector> = cluster
            .learners
            .iter()
            .map(|id| (*id, locals[id].model.clone()))
            .collect();
        let (grouping, mut trace) = self.group_submissions(&models)?;
        trace.cluster = cluster.id;
        let mut weights = BTreeMap::new();
        for (&l, &m) in &cluster.learner_to_miner {
            weights.insert(l, (self.hop(l, m)?.rate_bps, self.data[l as usize].len()));
        }
        let mut groups = Vec::new();
        for members in grouping.groups {
            let agg = aggregate_group(&members, &models, &weights)?;
            groups.push((members, agg));
        }
        let submitters: BTreeSet<SatId> = models.keys().copied().collect();
        let miners: Vec<SatId> = cluster.miners.iter().copied().collect();
        let scored = self
            .cfg
            .execution
            .map(&miners, |&m| -> Result<(MinerVote, MinerTrace), SimError> {
                if groups.is_empty() {
                    let vote = MinerVote {
                        miner: m,
                        choice: None,
                        score: 0.0,
                        suspects: submitters.clone(),
                    };
                    let trace = MinerTrace {
                        miner: m,
                        groups: vec![],
                        chosen: None,
                        suspects: submitters.clone(),
                    };
                    return Ok((vote, trace));
                }
                let cfg = self.train_cfg(derive_seed(self.cfg.seed, &[TAG_SCORE, round as u64, m as u64]));
                let (scored, honest) = score_groups(&self.layout, groups.clone(), &self.data[m as usize], &cfg, tau)?;
                let scores: Vec<f64> = scored.iter().map(|g| g.score).collect();
                let pick = match self.attacking(m, Role::Miner, round) {
                    Some(AttackKind::DishonestMinerVote) => corrupt_vote(honest, &scores),
                    _ => honest,
                };
                let suspects = suspects_from_choice(&submitters, Some(&scored[pick].members));
                let vote = MinerVote {
                    miner: m,
                    choice: Some(choice_id(&scored[pick].aggregate)),
                    score: scores[pick],
                    suspects: suspects.clone(),
                };
                let trace = MinerTrace {
                    miner: m,
                    groups: scored
                        .iter()
                        .map(|g| GroupTrace {
                            members: g.members.clone(),
                            score: g.score,
                        })
                        .collect(),
                    chosen: Some(pick),
                    suspects,
                };
                Ok((vote, trace))
            });
        let mut votes = Vec::new();
        for r in scored {
            let (v, t) = r?;
            votes.push(v);
            trace.miners.push(t);
        }
        let tally = tally_cluster(&votes);
        let winner = tally
            .winner
            .and_then(|d| groups.iter().position(|(_, agg)| choice_id(agg) == d));
        let mut head_suspects = match winner {
            Some(w) => suspects_from_choice(&submitters, Some(&groups[w].0)),
            None => BTreeSet::new(),
        };
        head_suspects.extend(&tally.dissenters);
        Ok(ClusterStage {
            cluster: cluster.clone(),
            models,
            groups,
            trace,
            votes,
            winner,
            head_suspects,
        })
    }

    /// Executes one round and advances the state.
    pub fn run_round(&mut self) -> Result<RoundReport, SimError> {
        if self.round > 0 {
            self.assign_all_roles()?;
        }
        let round = self.round + 1;
        let report = if self.cfg.method.uses_protocol() {
            self.protocol_round(round)?
        } else {
            self.fedavg_round(round)?
        };
        self.round = round;
        Ok(report)
    }

    fn attackers_this_round(&self, round: u32) -> Vec<SatId> {
        let Some(spec) = self.active_attack() else {
            return vec![];
        };
        let role = spec.kind.target_role();
        self.clusters
            .iter()
            .flatten()
            .flat_map(|c| c.members().collect::<Vec<_>>())
            .filter(|&id| self.sat(id).role == role && self.attacking(id, role, round).is_some())
            .collect::<BTreeSet<_>>()
            .into_iter()
            .collect()
    }

    fn fedavg_round(&mut self, round: u32) -> Result<RoundReport, SimError> {
        let active: Vec<Cluster> = self.clusters.iter().flatten().cloned().collect();
        let trainers: Vec<(SatId, Role)> = active
            .iter()
            .flat_map(|c| c.members().map(|id| (id, Role::Learner)).collect::<Vec<_>>())
            .collect();
        let locals = self.train_locals(round, &trainers)?;
        let global =
            ParamVector::weighted_mean(locals.iter().map(|r| (self.data[r.id as usize].len() as f64, &r.model)))
                .unwrap_or_else(|| self.global.clone());
        let mean_local_loss = locals.iter().map(|r| r.loss).sum::<f64>() / locals.len().max(1) as f64;
        let (traffic, latency) = self.round_traffic(&BTreeSet::new())?;
        let energy = round_energy(&traffic, &self.cfg.physics)?;
        let attackers = self.attackers_this_round(round);
        self.global = global;
        let e = evaluate(&self.layout, &self.global, &self.test)?;
        Ok(RoundReport {
            round,
            accuracy: e.accuracy,
            test_loss: e.mean_loss,
            global_loss: e.mean_loss,
            mean_local_loss,
            energy,
            head_verify_uniform: 0.0,
            latency_s: latency,
            suspects: vec![],
            attackers,
            accepted_clusters: active.iter().map(|c| c.id).collect(),
            failed: false,
            tallies: vec![],
        })
    }

    fn holdout(&self, id: SatId) -> LabeledDataset {
        let d = &self.data[id as usize];
        let (_, held) = d.train_test_split(FINE_TUNE_FRACTION);
        if held.is_empty() {
            d.clone()
        } else {
            held
        }
    }

    fn protocol_round(&mut self, round: u32) -> Result<RoundReport, SimError> {
        let tau = self.cfg.training.epochs;
        let sigma = self.cfg.protocol.sigma;
        let active: Vec<Cluster> = self.clusters.iter().flatten().cloned().collect();

        // learner training
        let trainers: Vec<(SatId, Role)> = active
            .iter()
            .flat_map(|c| c.learners.iter().map(|&l| (l, Role::Learner)).collect::<Vec<_>>())
            .collect();
        let locals: BTreeMap<SatId, LocalResult> = self
            .train_locals(round, &trainers)?
            .into_iter()
            .map(|r| (r.id, r))
            .collect();
        let mean_local_loss = locals.values().map(|r| r.loss).sum::<f64>() / locals.len().max(1) as f64;

        // miner defense and voting, head tally
        let mut stages = Vec::with_capacity(active.len());
        for cl in &active {
            stages.push(self.in_cluster_stage(round, cl, &locals)?);
        }
        let candidates: BTreeMap<ClusterId, (SatId, ParamVector)> = stages
            .iter()
            .filter_map(|s| {
                s.winner
                    .map(|w| (s.cluster.id, (s.cluster.head, s.groups[w].1.clone())))
            })
            .collect();

        // inter-cluster verification: every head scores every cluster model
        let pairs: Vec<(SatId, ClusterId)> = active
            .iter()
            .flat_map(|a| candidates.keys().map(|&c| (a.head, c)).collect::<Vec<_>>())
            .collect();
        let measured = self.cfg.execution.map(&pairs, |&(h, c)| -> Result<f64, SimError> {
            let cfg = self.train_cfg(derive_seed(
                self.cfg.seed,
                &[TAG_VERIFY, round as u64, h as u64, c as u64],
            ));
            Ok(fine_tuned_score(&self.layout, &candidates[&c].1, &self.data[h as usize], &cfg, tau / 2)?.0)
        });
        let mut score_of: BTreeMap<(SatId, ClusterId), f64> = BTreeMap::new();
        for (&p, m) in pairs.iter().zip(measured) {
            score_of.insert(p, m?);
        }
        let claimed: BTreeMap<ClusterId, f64> = candidates.iter().map(|(&c, (h, _))| (c, score_of[&(*h, c)])).collect();
        let ballots: Vec<HeadBallot> = active
            .iter()
            .map(|a| {
                let mut approvals = BTreeMap::new();
                let mut scores = BTreeMap::new();
                for &c in candidates.keys() {
                    let e = score_of[&(a.head, c)];
                    scores.insert(c, e);
                    if c != a.id {
                        approvals.insert(c, head_verify(e, claimed[&c], sigma));
                    }
                }
                if self.attacking(a.head, Role::Head, round) == Some(AttackKind::DishonestHeadVote) {
                    approvals = corrupt_ballot(&approvals);
                }
                HeadBallot {
                    head: a.head,
                    cluster: a.id,
                    approvals,
                    scores,
                }
            })
            .collect();
        let candidate_ids: BTreeSet<ClusterId> = candidates.keys().copied().collect();
        let outcome = decide_acceptance(&ballots, &candidate_ids);
        let honest = honest_heads(&ballots, &outcome);

        // global aggregation over accepted clusters with honest heads
        let aggregated: Vec<ClusterId> = candidates
            .iter()
            .filter(|(c, (h, _))| outcome[*c] && honest.contains(h))
            .map(|(&c, _)| c)
            .collect();
        let inputs: Vec<(ClusterId, &ParamVector, f64)> =
            aggregated.iter().map(|c| (*c, &candidates[c].1, claimed[c])).collect();
        let (new_global, failed) = match aggregate_global(&inputs) {
            Ok(w) => (w, false),
            Err(_) => (self.global.clone(), true),
        };

        // global loss on the aggregating heads' held-out slices
        let loss_heads: Vec<(SatId, f64)> = if aggregated.is_empty() {
            active.iter().map(|a| (a.head, 1.0)).collect()
        } else {
            aggregated.iter().map(|c| (candidates[c].0, claimed[c])).collect()
        };
        let g_loss = match self.cfg.protocol.global_loss {
            GlobalLossMode::Weighted => {
                let mut entries = Vec::new();
                for &(h, e) in &loss_heads {
                    entries.push((evaluate(&self.layout, &new_global, &self.holdout(h))?.mean_loss, e));
                }
                global_loss(&entries)
            }
            GlobalLossMode::Pooled => {
                let slices: Vec<LabeledDataset> = loss_heads.iter().map(|&(h, _)| self.holdout(h)).collect();
                match LabeledDataset::concat(&slices) {
                    Some(pooled) => evaluate(&self.layout, &new_global, &pooled)?.mean_loss,
                    None => f64::NAN,
                }
            }
        };

        // settlement
        let outcomes: Vec<ClusterOutcome> = stages
            .iter()
            .map(|s| ClusterOutcome {
                cluster: s.cluster.id,
                head: s.cluster.head,
                head_suspects: s.head_suspects.clone(),
                contributors: s.winner.map(|w| s.groups[w].0.clone()).unwrap_or_default(),
                accepted: outcome.get(&s.cluster.id).copied().unwrap_or(true),
                participants: s.cluster.members().collect(),
            })
            .collect();
        let rule = ReputationRule {
            reward: self.cfg.protocol.reputation_reward,
            penalty: self.cfg.protocol.reputation_penalty,
        };
        let settlement = settle_round(&outcomes, &honest, rule);

        // energy
        let (traffic, latency) = self.round_traffic(&candidate_ids)?;
        let energy = round_energy(&traffic, &self.cfg.physics)?;
        let head_verify_uniform = if active.is_empty() {
            0.0
        } else {
            let k = active.len() as f64;
            let f = active.iter().map(|a| self.sat(a.head).cpu_freq_hz).sum::<f64>() / k;
            let d = active.iter().map(|a| self.accounted_samples(a.head)).sum::<usize>() as f64 / k;
            k * eval_energy(f, tau, d.round() as usize, &self.cfg.physics)
        };

        // ledger
        self.append_ledger(
            round,
            &stages,
            &candidates,
            &claimed,
            &ballots,
            &honest,
            &new_global,
            &aggregated,
            &settlement.suspects,
            g_loss,
            failed,
            &settlement.deltas,
        )?;

        // reputation and next-round head persistence
        for (&id, &d) in &settlement.deltas {
            apply_reputation_delta(&mut self.satellites[id as usize], d);
        }
        self.last_suspects = settlement.suspects.clone();
        let attackers = self.attackers_this_round(round);
        let tallies = stages
            .iter()
            .map(|s| {
                let t = tally_cluster(&s.votes);
                ClusterTally {
                    cluster: s.cluster.id,
                    head: s.cluster.head,
                    winner: t.winner,
                    counts: t.counts,
                    dissenters: t.dissenters,
                    accepted: outcome.get(&s.cluster.id).copied(),
                }
            })
            .collect();
        self.traces.push(RoundTrace {
            round,
            clusters: stages.into_iter().map(|s| s.trace).collect(),
        });
        self.global = new_global;
        let e = evaluate(&self.layout, &self.global, &self.test)?;
        Ok(RoundReport {
            round,
            accuracy: e.accuracy,
            test_loss: e.mean_loss,
            global_loss: g_loss,
            mean_local_loss,
            energy,
            head_verify_uniform,
            latency_s: latency,
            suspects: settlement.suspects.into_iter().collect(),
            attackers,
            accepted_clusters: aggregated,
            failed,
            tallies,
        })
    }

    fn record(&self, model: &ParamVector) -> ModelRecord {
        if self.cfg.protocol.embed_models {
            ModelRecord::Full(model.clone())
        } else {
            ModelRecord::Digest(choice_id(model))
        }
    }

    #[allow(clippy::too_many_arguments)]
    fn append_ledger(
        &mut self,
        round: u32,
        stages: &[ClusterStage],
        candidates: &BTreeMap<ClusterId, (SatId, ParamVector)>,
        claimed: &BTreeMap<ClusterId, f64>,
        ballots: &[HeadBallot],
        honest: &BTreeSet<SatId>,
        global: &ParamVector,
        aggregated: &[ClusterId],
        suspects: &BTreeSet<SatId>,
        g_loss: f64,
        failed: bool,
        deltas: &BTreeMap<SatId, f64>,
    ) -> Result<(), SimError> {
        let signer = HmacSigner {
            registry: &self.registry,
        };
        let r = round as u64;
        let mut art = RoundArtifacts {
            round: r,
            ..Default::default()
        };
        for s in stages {
            let c = s.cluster.id;
            let mut txs = Vec::new();
            for (&l, w) in &s.models {
                let p = Payload::LocalModel {
                    cluster: c,
                    model: self.record(w),
                    samples: self.data[l as usize].len() as u64,
                };
                txs.push(Transaction::new(&p, l, r, &signer)?);
            }
            for v in &s.votes {
                let p = Payload::MinerVote {
                    cluster: c,
                    choice: v.choice,
                    score: v.score,
                    suspects: v.suspects.iter().copied().collect(),
                };
                txs.push(Transaction::new(&p, v.miner, r, &signer)?);
            }
            let producer = s.cluster.miners.iter().next().copied().unwrap_or(s.cluster.head);
            art.side.insert(c, (producer, txs));
        }
        let heads: Vec<SatId> = stages.iter().map(|s| s.cluster.head).collect();
        for s in stages {
            if let Some((h, w)) = candidates.get(&s.cluster.id) {
                let p = Payload::ClusterModel {
                    cluster: s.cluster.id,
                    model: self.record(w),
                    score: claimed[&s.cluster.id],
                    suspects: s.head_suspects.iter().copied().collect(),
                };
                art.model_txs.push(Transaction::new(&p, *h, r, &signer)?);
            }
        }
        for b in ballots {
            let p = Payload::HeadBallot {
                cluster: b.cluster,
                approvals: b.approvals.iter().map(|(&c, &a)| (c, a)).collect(),
                scores: b.scores.iter().map(|(&c, &e)| (c, e)).collect(),
            };
            art.model_txs.push(Transaction::new(&p, b.head, r, &signer)?);
        }
        let honest_sorted: Vec<SatId> = heads.iter().copied().filter(|h| honest.contains(h)).collect();
        let pool = if honest_sorted.is_empty() {
            heads.clone()
        } else {
            honest_sorted
        };
        let model_producer = pool
            .iter()
            .copied()
            .max_by(|a, b| {
                self.sat(*a)
                    .reputation
                    .total_cmp(&self.sat(*b).reputation)
                    .then(b.cmp(a))
            })
            .unwrap_or(0);
        let reputation_producer = pool.iter().copied().min().unwrap_or(0);
        let p = Payload::GlobalModel {
            model: self.record(global),
            accepted: aggregated.to_vec(),
            suspects: suspects.iter().copied().collect(),
            global_loss: g_loss,
            failed,
        };
        art.model_txs.push(Transaction::new(&p, model_producer, r, &signer)?);
        art.model_producer = model_producer;
        let p = Payload::ReputationUpdate {
            deltas: deltas.iter().map(|(&id, &d)| (id, d)).collect(),
            reputations: deltas
                .iter()
                .map(|(&id, &d)| (id, (self.sat(id).reputation + d).max(0.0)))
                .collect(),
        };
        art.reputation_txs
            .push(Transaction::new(&p, reputation_producer, r, &signer)?);
        art.reputation_producer = reputation_producer;
        self.chains.append_round(art, &signer)?;
        Ok(())
    }
}
