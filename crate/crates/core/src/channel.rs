//! Link budget, achievable rate and per-round energy accounting.

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ChannelError {
    #[error("distance must be positive, got {0} m")]
    NonPositiveDistance(f64),
    #[error("rate must be positive, got {0} bit/s")]
    NonPositiveRate(f64),
    #[error("invalid physics constants: {0}")]
    Config(String),
}

/// How the signal-to-noise ratio of a link is obtained.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "snake_case")]
pub enum SnrMode {
    /// Every link uses the same configured SNR.
    Fixed { gamma: f64 },
    /// SNR from free-space path loss and antenna gains.
    Geometric,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PhysicsConstants {
    pub speed_of_light: f64,
    pub carrier_hz: f64,
    pub bandwidth_hz: f64,
    pub noise_psd: f64,
    pub gain_tx: f64,
    pub gain_rx: f64,
    /// Linear atmospheric loss factor of the ground link, in (0, 1].
    pub atmospheric_loss: f64,
    /// Hardware energy coefficient (J per cycle per Hz^2).
    pub hw_coefficient: f64,
    pub cycles_per_sample: f64,
    pub snr: SnrMode,
    /// When false the rate uses `log2(1 + gamma)`, treating gamma as already
    /// including transmit power.
    pub snr_scales_with_power: bool,
    pub bits_per_param: u32,
}

impl Default for PhysicsConstants {
    fn default() -> Self {
        Self {
            speed_of_light: 3e8,
            carrier_hz: 20e9,
            bandwidth_hz: 20e6,
            noise_psd: 1e-15,
            gain_tx: 1e3,
            gain_rx: 1e3,
            atmospheric_loss: 1.0,
            hw_coefficient: 1e-28,
            cycles_per_sample: 1e5,
            snr: SnrMode::Fixed { gamma: 1e3 },
            snr_scales_with_power: true,
            bits_per_param: 64,
        }
    }
}

impl PhysicsConstants {
    pub fn validate(&self) -> Result<(), ChannelError> {
        let positive = [
            ("speed_of_light", self.speed_of_light),
            ("carrier_hz", self.carrier_hz),
            ("bandwidth_hz", self.bandwidth_hz),
            ("noise_psd", self.noise_psd),
            ("gain_tx", self.gain_tx),
            ("gain_rx", self.gain_rx),
            ("hw_coefficient", self.hw_coefficient),
            ("cycles_per_sample", self.cycles_per_sample),
        ];
        for (name, v) in positive {
            if !(v > 0.0) || !v.is_finite() {
                return Err(ChannelError::Config(format!("{name} must be positive, got {v}")));
            }
        }
        if !(self.atmospheric_loss > 0.0 && self.atmospheric_loss <= 1.0) {
            return Err(ChannelError::Config(format!(
                "atmospheric_loss {} outside (0, 1]",
                self.atmospheric_loss
            )));
        }
        if let SnrMode::Fixed { gamma } = self.snr {
            if !(gamma > 0.0) {
                return Err(ChannelError::Config(format!(
                    "fixed gamma must be positive, got {gamma}"
                )));
            }
        }
        Ok(())
    }

    /// Model size in bits for `params` parameters.
    pub fn model_bits(&self, params: usize) -> f64 {
        params as f64 * self.bits_per_param as f64
    }
}

/// Free-space path loss factor `(c / (4 pi d f_c))^2`.
pub fn path_loss(distance_m: f64, c: &PhysicsConstants) -> Result<f64, ChannelError> {
    if !(distance_m > 0.0) {
        return Err(ChannelError::NonPositiveDistance(distance_m));
    }
    Ok((c.speed_of_light / (4.0 * std::f64::consts::PI * distance_m * c.carrier_hz)).powi(2))
}

/// Inter-satellite link SNR from geometry.
pub fn snr_isl(distance_m: f64, c: &PhysicsConstants) -> Result<f64, ChannelError> {
    Ok(c.gain_tx * c.gain_rx * path_loss(distance_m, c)? / c.noise_psd)
}

/// Ground-to-satellite link SNR, including the atmospheric loss factor.
pub fn snr_sgl(distance_m: f64, c: &PhysicsConstants) -> Result<f64, ChannelError> {
    Ok(snr_isl(distance_m, c)? * c.atmospheric_loss)
}

/// SNR of an inter-satellite link under the configured mode.
pub fn link_snr(distance_m: f64, c: &PhysicsConstants) -> Result<f64, ChannelError> {
    match c.snr {
        SnrMode::Fixed { gamma } => Ok(gamma),
        SnrMode::Geometric => snr_isl(distance_m, c),
    }
}

/// SNR of the ground link under the configured mode.
pub fn ground_link_snr(distance_m: f64, c: &PhysicsConstants) -> Result<f64, ChannelError> {
    match c.snr {
        SnrMode::Fixed { gamma } => Ok(gamma * c.atmospheric_loss),
        SnrMode::Geometric => snr_sgl(distance_m, c),
    }
}

/// Achievable rate `B log2(1 + gamma P)` in bit/s.
pub fn rate(gamma: f64, power_w: f64, c: &PhysicsConstants) -> f64 {
    let effective = if c.snr_scales_with_power {
        gamma * power_w
    } else {
        gamma
    };
    c.bandwidth_hz * (1.0 + effective).log2()
}

/// Energy of one transmission: `P * bits / R`.
pub fn tx_energy(power_w: f64, bits: f64, rate_bps: f64) -> Result<f64, ChannelError> {
    if !(rate_bps > 0.0) {
        return Err(ChannelError::NonPositiveRate(rate_bps));
    }
    Ok(power_w * bits / rate_bps)
}

/// Time and energy of local training: `T = tau phi D / f`, `E = eps0 f^3 T`.
pub fn train_energy(freq_hz: f64, epochs: usize, samples: usize, c: &PhysicsConstants) -> (f64, f64) {
    let cycles = epochs as f64 * c.cycles_per_sample * samples as f64;
    let time = cycles / freq_hz;
    (time, c.hw_coefficient * freq_hz.powi(3) * time)
}

/// Energy of a half-length evaluation pass: `tau eps0 f^2 phi D / 2`.
pub fn eval_energy(freq_hz: f64, epochs: usize, samples: usize, c: &PhysicsConstants) -> f64 {
    epochs as f64 * c.hw_coefficient * freq_hz.powi(2) * c.cycles_per_sample * samples as f64 / 2.0
}

/// One transmission of a payload over a link.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Hop {
    pub power_w: f64,
    pub bits: f64,
    pub rate_bps: f64,
}

impl Hop {
    pub fn energy(&self) -> Result<f64, ChannelError> {
        tx_energy(self.power_w, self.bits, self.rate_bps)
    }

    pub fn duration(&self) -> f64 {
        self.bits / self.rate_bps
    }
}

/// Compute work of one satellite.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Workload {
    pub freq_hz: f64,
    pub epochs: usize,
    pub samples: usize,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ClusterTraffic {
    /// Head to miners and miners to their learners.
    pub distribution: Vec<Hop>,
    pub training: Vec<Workload>,
    pub evaluation: Vec<Workload>,
    /// Learner uploads, miner forwarding and miner-to-head submissions.
    pub intra_tx: Vec<Hop>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct RoundTraffic {
    pub clusters: Vec<ClusterTraffic>,
    /// Head-to-head model exchange.
    pub inter_tx: Vec<Hop>,
    /// One verification pass per head.
    pub head_verification: Vec<Workload>,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct EnergyBreakdown {
    pub distribution: f64,
    pub training: f64,
    pub evaluation: f64,
    pub intra_tx: f64,
    pub inter_tx: f64,
    pub head_verify: f64,
    pub total: f64,
}

impl EnergyBreakdown {
    pub fn parts_sum(&self) -> f64 {
        self.distribution + self.training + self.evaluation + self.intra_tx + self.inter_tx + self.head_verify
    }
}

fn hops_energy(hops: &[Hop]) -> Result<f64, ChannelError> {
    hops.iter().map(Hop::energy).sum()
}

/// Per-round energy: cluster distribution and in-cluster work, head exchange
/// and one verification pass per head.
pub fn round_energy(traffic: &RoundTraffic, c: &PhysicsConstants) -> Result<EnergyBreakdown, ChannelError> {
    let mut e = EnergyBreakdown::default();
    for cluster in &traffic.clusters {
        e.distribution += hops_energy(&cluster.distribution)?;
        e.intra_tx += hops_energy(&cluster.intra_tx)?;
        e.training += cluster
            .training
            .iter()
            .map(|w| train_energy(w.freq_hz, w.epochs, w.samples, c).1)
            .sum::<f64>();
        e.evaluation += cluster
            .evaluation
            .iter()
            .map(|w| eval_energy(w.freq_hz, w.epochs, w.samples, c))
            .sum::<f64>();
    }
    e.inter_tx = hops_energy(&traffic.inter_tx)?;
    e.head_verify = traffic
        .head_verification
        .iter()
        .map(|w| eval_energy(w.freq_hz, w.epochs, w.samples, c))
        .sum();
    // empty float sums are -0.0
    for v in [
        &mut e.distribution,
        &mut e.training,
        &mut e.evaluation,
        &mut e.intra_tx,
        &mut e.inter_tx,
        &mut e.head_verify,
    ] {
        *v += 0.0;
    }
    e.total = e.parts_sum();
    Ok(e)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rel(a: f64, b: f64) -> f64 {
        ((a - b) / b).abs()
    }

    #[test]
    fn path_loss_inverse_square_and_domain() {
        let c = PhysicsConstants::default();
        let a = path_loss(1e6, &c).unwrap();
        let b = path_loss(2e6, &c).unwrap();
        assert!(rel(b, a / 4.0) < 1e-12);
        assert_eq!(path_loss(0.0, &c), Err(ChannelError::NonPositiveDistance(0.0)));
        assert!(path_loss(-1.0, &c).is_err());
    }

    #[test]
    fn ground_link_scales_with_atmospheric_loss() {
        let mut c = PhysicsConstants::default();
        assert_eq!(snr_sgl(7e5, &c).unwrap(), snr_isl(7e5, &c).unwrap());
        c.atmospheric_loss = 0.5;
        assert!(rel(snr_sgl(7e5, &c).unwrap(), snr_isl(7e5, &c).unwrap() / 2.0) < 1e-15);
    }

    #[test]
    fn fixed_mode_returns_configured_gamma() {
        let c = PhysicsConstants::default();
        assert_eq!(link_snr(123.0, &c).unwrap(), 1e3);
    }

    #[test]
    fn rate_limits_and_monotonicity() {
        let c = PhysicsConstants::default();
        assert!(rate(1e3, 1e-15, &c) < 1e-4);
        assert!(rate(1e3, 2.0, &c) < rate(1e3, 3.0, &c));
        let gamma_only = PhysicsConstants {
            snr_scales_with_power: false,
            ..c.clone()
        };
        assert!(rel(rate(1e3, 5.0, &gamma_only), 2e7 * 1001f64.log2()) < 1e-12);
    }

    #[test]
    fn tx_energy_domain() {
        assert_eq!(tx_energy(5.0, 0.0, 1.0).unwrap(), 0.0);
        assert!(tx_energy(5.0, 1.0, 0.0).is_err());
    }

    #[test]
    fn zero_work_costs_nothing() {
        let c = PhysicsConstants::default();
        assert_eq!(train_energy(5e9, 0, 300, &c), (0.0, 0.0));
        assert_eq!(eval_energy(5e9, 20, 0, &c), 0.0);
    }

    #[test]
    fn training_energy_is_quadratic_in_frequency() {
        let c = PhysicsConstants::default();
        let (_, e1) = train_energy(1e9, 20, 300, &c);
        let (_, e2) = train_energy(2e9, 20, 300, &c);
        assert!(rel(e2, 4.0 * e1) < 1e-12);
    }

    #[test]
    fn validation_rejects_bad_loss_factor() {
        let c = PhysicsConstants {
            atmospheric_loss: 1.5,
            ..Default::default()
        };
        assert!(c.validate().is_err());
        assert!(PhysicsConstants::default().validate().is_ok());
    }
}
