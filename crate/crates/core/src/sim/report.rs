use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::path::Path;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use super::config::{Method, ScenarioConfig};
use super::state::Simulation;
use super::SimError;
use crate::channel::EnergyBreakdown;
use crate::constellation::{ClusterId, SatId};
use crate::defense::ClusterDefenseTrace;
use crate::ledger::{dump_chains, Digest};

/// Per-cluster vote outcome of one round.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClusterTally {
    pub cluster: ClusterId,
    pub head: SatId,
    pub winner: Option<Digest>,
    pub counts: BTreeMap<Digest, usize>,
    pub dissenters: BTreeSet<SatId>,
    /// `None` when the cluster produced no model.
    pub accepted: Option<bool>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RoundTrace {
    pub round: u32,
    pub clusters: Vec<ClusterDefenseTrace>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RoundReport {
    pub round: u32,
    pub accuracy: f64,
    pub test_loss: f64,
    pub global_loss: f64,
    pub mean_local_loss: f64,
    pub energy: EnergyBreakdown,
    /// Head verification energy with every head at the mean frequency and data size.
    pub head_verify_uniform: f64,
    /// Modeled wall time of the round on the constellation.
    pub latency_s: f64,
    pub suspects: Vec<SatId>,
    pub attackers: Vec<SatId>,
    pub accepted_clusters: Vec<ClusterId>,
    pub failed: bool,
    pub tallies: Vec<ClusterTally>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunOutput {
    pub name: String,
    pub method: Method,
    pub seed: u64,
    pub rounds: Vec<RoundReport>,
    pub sgl_setup_energy: f64,
}

impl RunOutput {
    pub fn accuracies(&self) -> Vec<f64> {
        self.rounds.iter().map(|r| r.accuracy).collect()
    }

    pub fn final_accuracy(&self) -> f64 {
        self.rounds.last().map_or(f64::NAN, |r| r.accuracy)
    }

    /// First round whose test accuracy is at least `target`.
    pub fn rounds_to(&self, target: f64) -> Option<u32> {
        self.rounds.iter().find(|r| r.accuracy >= target).map(|r| r.round)
    }

    pub fn total_energy(&self) -> f64 {
        self.rounds.iter().map(|r| r.energy.total).sum()
    }

    /// Lowest accuracy over rounds in `[from, to]`.
    pub fn min_accuracy_in(&self, from: u32, to: u32) -> Option<f64> {
        self.rounds
            .iter()
            .filter(|r| (from..=to).contains(&r.round))
            .map(|r| r.accuracy)
            .reduce(f64::min)
    }
}

/// Runs every configured round, stopping early once the target is reached.
pub fn run_scenario(cfg: &ScenarioConfig) -> Result<(Simulation, RunOutput), SimError> {
    let mut sim = Simulation::new(cfg.clone())?;
    let mut rounds = Vec::with_capacity(cfg.rounds as usize);
    for _ in 0..cfg.rounds {
        let r = sim.run_round()?;
        let done = cfg.target_accuracy.is_some_and(|t| r.accuracy >= t);
        rounds.push(r);
        if done {
            break;
        }
    }
    let out = RunOutput {
        name: cfg.name.clone(),
        method: cfg.method,
        seed: cfg.seed,
        rounds,
        sgl_setup_energy: sim.sgl_setup_energy,
    };
    Ok((sim, out))
}

#[derive(Serialize)]
struct CsvRow {
    round: u32,
    accuracy: f64,
    test_loss: f64,
    global_loss: f64,
    mean_local_loss: f64,
    energy_total: f64,
    energy_distribution: f64,
    energy_training: f64,
    energy_evaluation: f64,
    energy_intra_tx: f64,
    energy_inter_tx: f64,
    energy_head_verify: f64,
    head_verify_uniform: f64,
    suspects: usize,
    attackers: usize,
    accepted_clusters: usize,
    failed: bool,
    latency_s: f64,
}

pub fn metrics_csv(out: &RunOutput) -> Result<String, SimError> {
    let mut w = csv::Writer::from_writer(Vec::new());
    for r in &out.rounds {
        let e = &r.energy;
        w.serialize(CsvRow {
            round: r.round,
            accuracy: r.accuracy,
            test_loss: r.test_loss,
            global_loss: r.global_loss,
            mean_local_loss: r.mean_local_loss,
            energy_total: e.total,
            energy_distribution: e.distribution,
            energy_training: e.training,
            energy_evaluation: e.evaluation,
            energy_intra_tx: e.intra_tx,
            energy_inter_tx: e.inter_tx,
            energy_head_verify: e.head_verify,
            head_verify_uniform: r.head_verify_uniform,
            suspects: r.suspects.len(),
            attackers: r.attackers.len(),
            accepted_clusters: r.accepted_clusters.len(),
            failed: r.failed,
            latency_s: r.latency_s,
        })
        .map_err(|e| SimError::Io(e.to_string()))?;
    }
    let bytes = w.into_inner().map_err(|e| SimError::Io(e.to_string()))?;
    String::from_utf8(bytes).map_err(|e| SimError::Io(e.to_string()))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), SimError> {
    fs::write(path, serde_json::to_vec_pretty(value)?)?;
    Ok(())
}

#[derive(Serialize)]
struct Manifest<'a> {
    name: &'a str,
    method: Method,
    seed: u64,
    rounds_run: usize,
    satellites: usize,
    clusters: usize,
    parameters: usize,
    version: &'static str,
    files: Vec<&'static str>,
}

/// Writes metrics, snapshots, the config and, for protocol methods, the chain dump.
pub fn write_run(sim: &Simulation, out: &RunOutput, dir: &Path, wall_seconds: f64) -> Result<(), SimError> {
    fs::create_dir_all(dir)?;
    fs::write(dir.join("metrics.csv"), metrics_csv(out)?)?;
    write_json(&dir.join("metrics.json"), out)?;
    fs::write(dir.join("config.toml"), sim.cfg.to_toml_string())?;
    write_json(&dir.join("constellation.json"), &sim.snapshot())?;
    write_json(&dir.join("defense_trace.json"), &sim.traces)?;
    write_json(&dir.join("final_model.json"), &sim.global)?;
    write_json(
        &dir.join("timing.json"),
        &serde_json::json!({ "wall_seconds": wall_seconds, "execution": sim.cfg.execution }),
    )?;
    let mut files = vec![
        "metrics.csv",
        "metrics.json",
        "config.toml",
        "constellation.json",
        "defense_trace.json",
        "final_model.json",
        "timing.json",
    ];
    if sim.cfg.method.uses_protocol() {
        dump_chains(&sim.chains, &sim.registry, &dir.join("chain"))?;
        files.push("chain/index.json");
    }
    let manifest = Manifest {
        name: &sim.cfg.name,
        method: sim.cfg.method,
        seed: sim.cfg.seed,
        rounds_run: out.rounds.len(),
        satellites: sim.satellites.len(),
        clusters: sim.cluster_members.len(),
        parameters: sim.layout.param_count(),
        version: env!("CARGO_PKG_VERSION"),
        files,
    };
    write_json(&dir.join("manifest.json"), &manifest)
}

/// Runs a scenario, writes its artifacts and returns the output with the
/// measured wall time.
pub fn run_to_dir(cfg: &ScenarioConfig, dir: &Path) -> Result<(RunOutput, f64), SimError> {
    let start = Instant::now();
    let (sim, out) = run_scenario(cfg)?;
    let wall = start.elapsed().as_secs_f64();
    write_run(&sim, &out, dir, wall)?;
    Ok((out, wall))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub satellites: usize,
    pub orbits: u32,
    pub sbfl: EnergyBreakdown,
    pub fedavg: EnergyBreakdown,
    pub ratio: f64,
    pub sbfl_latency_s: f64,
    pub fedavg_latency_s: f64,
}

/// One-round energy of SBFL_LEO against FEDAVG at each constellation size,
/// keeping satellites per orbit fixed.
pub fn sweep(cfg: &ScenarioConfig, sizes: &[usize]) -> Result<Vec<SweepRow>, SimError> {
    let per_orbit = cfg.constellation.sats_per_orbit as usize;
    let mut rows = Vec::with_capacity(sizes.len());
    for &n in sizes {
        if n == 0 || n % per_orbit != 0 {
            return Err(SimError::Config(format!(
                "{n} satellites is not a multiple of {per_orbit} per orbit"
            )));
        }
        let mut base = cfg.clone();
        base.constellation.orbits = (n / per_orbit) as u32;
        base.name = format!("{}-{n}", cfg.name);
        let plan = |m: Method| -> Result<(EnergyBreakdown, f64), SimError> {
            Simulation::new(base.with_method(m))?.energy_plan()
        };
        let (sbfl, sbfl_latency_s) = plan(Method::SbflLeo)?;
        let (fedavg, fedavg_latency_s) = plan(Method::FedAvg)?;
        rows.push(SweepRow {
            satellites: n,
            orbits: base.constellation.orbits,
            ratio: sbfl.total / fedavg.total,
            sbfl,
            fedavg,
            sbfl_latency_s,
            fedavg_latency_s,
        });
    }
    Ok(rows)
}

pub fn sweep_csv(rows: &[SweepRow]) -> String {
    let mut s = String::from("satellites,orbits,sbfl_energy,fedavg_energy,ratio,sbfl_seconds,fedavg_seconds\n");
    for r in rows {
        s.push_str(&format!(
            "{},{},{},{},{},{},{}\n",
            r.satellites, r.orbits, r.sbfl.total, r.fedavg.total, r.ratio, r.sbfl_latency_s, r.fedavg_latency_s
        ));
    }
    s
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CompareRow {
    pub name: String,
    pub method: Method,
    pub seed: u64,
    pub rounds_run: usize,
    pub final_accuracy: f64,
    pub best_accuracy: f64,
    pub min_accuracy: f64,
    pub total_energy: f64,
    pub mean_latency_s: f64,
    pub suspects_flagged: usize,
    pub failed_rounds: usize,
}

impl CompareRow {
    pub fn from_output(out: &RunOutput) -> Self {
        let acc = out.accuracies();
        let n = out.rounds.len().max(1) as f64;
        Self {
            name: out.name.clone(),
            method: out.method,
            seed: out.seed,
            rounds_run: out.rounds.len(),
            final_accuracy: out.final_accuracy(),
            best_accuracy: acc.iter().copied().fold(f64::NAN, f64::max),
            min_accuracy: acc.iter().copied().fold(f64::NAN, f64::min),
            total_energy: out.total_energy(),
            mean_latency_s: out.rounds.iter().map(|r| r.latency_s).sum::<f64>() / n,
            suspects_flagged: out.rounds.iter().map(|r| r.suspects.len()).sum(),
            failed_rounds: out.rounds.iter().filter(|r| r.failed).count(),
        }
    }
}

/// Runs each scenario and summarizes them side by side.
pub fn compare(cfgs: &[ScenarioConfig]) -> Result<Vec<(CompareRow, RunOutput)>, SimError> {
    cfgs.iter()
        .map(|c| {
            let (_, out) = run_scenario(c)?;
            Ok((CompareRow::from_output(&out), out))
        })
        .collect()
}

pub fn compare_csv(rows: &[CompareRow]) -> Result<String, SimError> {
    let mut w = csv::Writer::from_writer(Vec::new());
    for r in rows {
        w.serialize(r).map_err(|e| SimError::Io(e.to_string()))?;
    }
    let bytes = w.into_inner().map_err(|e| SimError::Io(e.to_string()))?;
    String::from_utf8(bytes).map_err(|e| SimError::Io(e.to_string()))
}
