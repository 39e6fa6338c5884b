mod common;

use common::rel_close;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use sbfl_leo::channel::*;

fn consts() -> PhysicsConstants {
    PhysicsConstants::default()
}

#[test]
fn path_loss_at_1000_km() {
    let c = consts();
    let oracle = (3e8 / (4.0 * std::f64::consts::PI * 1e6 * 20e9)).powi(2);
    let got = path_loss(1e6, &c).unwrap();
    assert!(rel_close(got, oracle, 1e-12), "{got} vs {oracle}");
    // the published figure carries four significant digits
    assert!(rel_close(got, 1.4245e-18, 5e-4), "{got}");
}

#[test]
fn rate_at_reference_snr() {
    let c = consts();
    let oracle = 2e7 * 5001f64.ln() / 2f64.ln();
    let got = rate(1e3, 5.0, &c);
    assert!(rel_close(got, oracle, 1e-12));
    assert!(rel_close(got, 2.4576e8, 1e-4), "{got}");
}

#[test]
fn transmission_energy_of_one_megabit() {
    let got = tx_energy(5.0, 1e6, 2.4576e8).unwrap();
    assert!(rel_close(got, 5.0 * 1e6 / 2.4576e8, 1e-12));
    assert!(rel_close(got, 2.0345e-2, 1e-4));
    assert!(tx_energy(5.0, 1e6, 0.0).is_err());
}

#[test]
fn training_and_evaluation_energy_at_5_ghz() {
    let c = consts();
    let (t, e) = train_energy(5e9, 20, 300, &c);
    assert!(rel_close(t, 20.0 * 1e5 * 300.0 / 5e9, 1e-12));
    assert!(rel_close(e, 1.5, 1e-9), "{e}");
    assert!(rel_close(eval_energy(5e9, 20, 300, &c), 0.75, 1e-9));
}

#[test]
fn snr_chain_is_consistent() {
    let c = consts();
    let d = 2e6;
    let isl = snr_isl(d, &c).unwrap();
    assert!(rel_close(isl, 1e6 * path_loss(d, &c).unwrap() / 1e-15, 1e-12));
    let mut lossy = c.clone();
    lossy.atmospheric_loss = 0.5;
    assert!(rel_close(snr_sgl(d, &lossy).unwrap(), 0.5 * isl, 1e-12));
    assert!(path_loss(0.0, &c).is_err());
}

#[test]
fn random_evaluation_is_half_of_training() {
    let c = consts();
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for _ in 0..1000 {
        let f = rng.gen_range(1e8..6e9);
        let tau = rng.gen_range(1..60);
        let d = rng.gen_range(1..5000);
        let (_, train) = train_energy(f, tau, d, &c);
        let eval = eval_energy(f, tau, d, &c);
        assert!(rel_close(eval, train / 2.0, 1e-9), "f={f} tau={tau} d={d}");
    }
}

#[test]
fn round_energy_sums_its_parts() {
    let c = consts();
    let hop = Hop {
        power_w: 5.0,
        bits: 1e6,
        rate_bps: 2.4576e8,
    };
    let w = Workload {
        freq_hz: 5e9,
        epochs: 20,
        samples: 300,
    };
    let traffic = RoundTraffic {
        clusters: vec![ClusterTraffic {
            distribution: vec![hop; 3],
            training: vec![w; 2],
            evaluation: vec![w],
            intra_tx: vec![hop; 4],
        }],
        inter_tx: vec![hop; 2],
        head_verification: vec![w],
    };
    let e = round_energy(&traffic, &c).unwrap();
    let h = 5.0 * 1e6 / 2.4576e8;
    assert!(rel_close(e.distribution, 3.0 * h, 1e-12));
    assert!(rel_close(e.intra_tx, 4.0 * h, 1e-12));
    assert!(rel_close(e.inter_tx, 2.0 * h, 1e-12));
    assert!(rel_close(e.training, 3.0, 1e-9));
    assert!(rel_close(e.evaluation, 0.75, 1e-9));
    assert!(rel_close(e.head_verify, 0.75, 1e-9));
    assert!(rel_close(e.total, 9.0 * h + 4.5, 1e-12));
}
