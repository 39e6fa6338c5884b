use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::SimError;
use crate::attacks::AttackSpec;
use crate::channel::PhysicsConstants;
use crate::constellation::ConstellationConfig;
use crate::defense::DbscanParams;
use crate::exec::Execution;
use crate::fl::synthetic::BlobSpec;
use crate::fl::{ModelKind, TrainConfig};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Method {
    #[serde(rename = "SBFL_LEO")]
    SbflLeo,
    #[serde(rename = "SBFL_LEO_KMEANS")]
    SbflLeoKmeans,
    #[serde(rename = "EFL")]
    Efl,
    #[serde(rename = "FEDAVG")]
    FedAvg,
    #[serde(rename = "FEDAVG_WITH_M")]
    FedAvgWithM,
}

impl Method {
    pub const ALL: [Method; 5] = [
        Method::SbflLeo,
        Method::SbflLeoKmeans,
        Method::Efl,
        Method::FedAvg,
        Method::FedAvgWithM,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Method::SbflLeo => "SBFL_LEO",
            Method::SbflLeoKmeans => "SBFL_LEO_KMEANS",
            Method::Efl => "EFL",
            Method::FedAvg => "FEDAVG",
            Method::FedAvgWithM => "FEDAVG_WITH_M",
        }
    }

    /// Role-based pipeline with defense, voting and ledger.
    pub fn uses_protocol(self) -> bool {
        !matches!(self, Method::FedAvg | Method::FedAvgWithM)
    }

    /// Whether a configured attack is applied.
    pub fn attacked(self) -> bool {
        self != Method::FedAvg
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Method {
    type Err = SimError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Method::ALL
            .into_iter()
            .find(|m| m.name().eq_ignore_ascii_case(s))
            .ok_or_else(|| SimError::Config(format!("unknown method {s}")))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainingSection {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub energy_penalty: f64,
    pub model: ModelKind,
}

impl Default for TrainingSection {
    fn default() -> Self {
        Self {
            epochs: 20,
            batch_size: 64,
            learning_rate: 0.1,
            energy_penalty: 0.0,
            model: ModelKind::Logistic,
        }
    }
}

impl TrainingSection {
    pub fn train_config(&self, seed: u64) -> TrainConfig {
        TrainConfig {
            epochs: self.epochs,
            batch_size: self.batch_size,
            learning_rate: self.learning_rate,
            energy_penalty: self.energy_penalty,
            seed,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GlobalLossMode {
    /// Accuracy-weighted mean of per-cluster held-out losses.
    Weighted,
    /// One evaluation over the pooled held-out slices.
    Pooled,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ProtocolSection {
    pub clusters: usize,
    pub miner_fraction: f64,
    pub sigma: f64,
    pub dbscan: DbscanParams,
    /// eFL similarity threshold.
    pub theta_min: f64,
    pub reputation_reward: f64,
    pub reputation_penalty: f64,
    pub global_loss: GlobalLossMode,
    /// Store full model vectors on chain; otherwise only their digests.
    pub embed_models: bool,
    /// Transmit power of the data center for the initial ground uplink.
    pub ground_tx_power_w: f64,
}

impl Default for ProtocolSection {
    fn default() -> Self {
        Self {
            clusters: 5,
            miner_fraction: 0.2,
            sigma: 0.05,
            dbscan: DbscanParams::default(),
            theta_min: 0.5,
            reputation_reward: 1.0,
            reputation_penalty: 3.0,
            global_loss: GlobalLossMode::Weighted,
            embed_models: true,
            ground_tx_power_w: 5.0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "source", rename_all = "snake_case", deny_unknown_fields)]
pub enum DatasetSource {
    /// IDX image/label pair; `path` is a directory, relative to the config file.
    Mnist {
        path: PathBuf,
        #[serde(default)]
        limit: Option<usize>,
    },
    Synthetic(BlobSpec),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DatasetSection {
    #[serde(flatten)]
    pub source: DatasetSource,
    #[serde(default = "default_train_fraction")]
    pub train_fraction: f64,
    #[serde(default = "default_labels_per_orbit")]
    pub labels_per_orbit: usize,
    /// Samples per satellite; the training set divided evenly when absent.
    #[serde(default)]
    pub samples_per_satellite: Option<usize>,
    /// Samples charged per satellite in energy and latency accounting; the
    /// actual local dataset size when absent.
    #[serde(default)]
    pub accounted_samples: Option<usize>,
}

fn default_train_fraction() -> f64 {
    0.8
}

fn default_labels_per_orbit() -> usize {
    2
}

impl Default for DatasetSection {
    fn default() -> Self {
        Self {
            source: DatasetSource::Mnist {
                path: PathBuf::from("data/mnist-5k"),
                limit: None,
            },
            train_fraction: default_train_fraction(),
            labels_per_orbit: default_labels_per_orbit(),
            samples_per_satellite: None,
            accounted_samples: None,
        }
    }
}

/// Full experiment description.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    #[serde(default = "default_name")]
    pub name: String,
    pub method: Method,
    #[serde(default = "default_rounds")]
    pub rounds: u32,
    /// Stop once test accuracy reaches this value.
    #[serde(default)]
    pub target_accuracy: Option<f64>,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub execution: Execution,
    #[serde(default)]
    pub constellation: ConstellationConfig,
    #[serde(default)]
    pub physics: PhysicsConstants,
    #[serde(default)]
    pub training: TrainingSection,
    #[serde(default)]
    pub protocol: ProtocolSection,
    #[serde(default)]
    pub dataset: DatasetSection,
    #[serde(default)]
    pub attack: Option<AttackSpec>,
    /// Directory that relative dataset paths resolve against.
    #[serde(skip)]
    pub base_dir: PathBuf,
}

fn default_name() -> String {
    "scenario".into()
}

fn default_rounds() -> u32 {
    60
}

impl ScenarioConfig {
    pub fn from_toml_str(text: &str) -> Result<Self, SimError> {
        let cfg: ScenarioConfig = toml::from_str(text).map_err(|e| SimError::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, SimError> {
        let text = std::fs::read_to_string(path).map_err(|e| SimError::Io(format!("{}: {e}", path.display())))?;
        let mut cfg = Self::from_toml_str(&text)?;
        cfg.base_dir = path.parent().map(Path::to_path_buf).unwrap_or_default();
        Ok(cfg)
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn with_method(&self, method: Method) -> Self {
        Self { method, ..self.clone() }
    }

    pub fn with_seed(&self, seed: u64) -> Self {
        let mut c = self.clone();
        c.seed = seed;
        if let Some(a) = c.attack.as_mut() {
            a.seed = seed;
        }
        c
    }

    pub fn resolve_path(&self, p: &Path) -> PathBuf {
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            self.base_dir.join(p)
        }
    }

    pub fn validate(&self) -> Result<(), SimError> {
        let bad = |m: String| Err(SimError::Config(m));
        let c = &self.constellation;
        if c.orbits == 0 || c.sats_per_orbit == 0 {
            return bad("constellation needs orbits and satellites".into());
        }
        let n = c.satellite_count();
        let p = &self.protocol;
        if p.clusters == 0 || n < 3 * p.clusters {
            return bad(format!(
                "{n} satellites cannot form {} clusters of at least 3",
                p.clusters
            ));
        }
        if !(p.miner_fraction > 0.0 && p.miner_fraction < 1.0) {
            return bad(format!("miner_fraction {} outside (0, 1)", p.miner_fraction));
        }
        if !(p.sigma > 0.0) || !(p.dbscan.eps > 0.0) || p.dbscan.min_pts == 0 {
            return bad("sigma and eps must be positive, min_pts at least 1".into());
        }
        if !(self.dataset.train_fraction > 0.0 && self.dataset.train_fraction < 1.0) {
            return bad(format!("train_fraction {} outside (0, 1)", self.dataset.train_fraction));
        }
        if self.training.batch_size == 0 || !(self.training.learning_rate > 0.0) {
            return bad("batch_size and learning_rate must be positive".into());
        }
        if let Some(t) = self.target_accuracy {
            if !(0.0..=1.0).contains(&t) {
                return bad(format!("target_accuracy {t} outside [0, 1]"));
            }
        }
        self.physics.validate().map_err(|e| SimError::Config(e.to_string()))?;
        if let Some(a) = &self.attack {
            a.validate().map_err(|e| SimError::Config(e.to_string()))?;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = r#"
method = "SBFL_LEO"
rounds = 3
seed = 9

[constellation]
orbits = 4
sats_per_orbit = 3

[protocol]
clusters = 2

[dataset]
source = "synthetic"
classes = 4
dim = 5
per_class = 30
spread = 0.5
seed = 1

[attack]
kind = "label_flip"
malicious_fraction = 0.2
active_rounds = "2-3"
seed = 4
"#;

    #[test]
    fn minimal_config_fills_defaults() {
        let cfg = ScenarioConfig::from_toml_str(MINIMAL).unwrap();
        assert_eq!(cfg.method, Method::SbflLeo);
        assert_eq!(cfg.constellation.altitude_m, 550_000.0);
        assert_eq!(cfg.training.epochs, 20);
        assert_eq!(cfg.protocol.sigma, 0.05);
        assert!(matches!(cfg.dataset.source, DatasetSource::Synthetic(_)));
        assert!(cfg.attack.as_ref().unwrap().is_active(3));
    }

    #[test]
    fn toml_round_trip() {
        let cfg = ScenarioConfig::from_toml_str(MINIMAL).unwrap();
        let again = ScenarioConfig::from_toml_str(&cfg.to_toml_string()).unwrap();
        assert_eq!(cfg, again);
    }

    #[test]
    fn rejects_unknown_keys_and_bad_counts() {
        assert!(ScenarioConfig::from_toml_str(&format!("bogus = 1\n{MINIMAL}")).is_err());
        assert!(ScenarioConfig::from_toml_str(&format!("{MINIMAL}\nbogus = 1\n")).is_err());
        let crowded = MINIMAL.replace("sats_per_orbit = 3", "sats_per_orbit = 1");
        assert!(ScenarioConfig::from_toml_str(&crowded).is_err());
    }

    #[test]
    fn method_names_parse() {
        for m in Method::ALL {
            assert_eq!(m.name().parse::<Method>().unwrap(), m);
        }
        assert!("fedprox".parse::<Method>().is_err());
    }
}
