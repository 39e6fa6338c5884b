//! Walker-delta geometry checked against an independent rotation-matrix
//! construction and against shell invariants.

use sbfl_leo::constellation::{build_constellation, ConstellationConfig, EARTH_RADIUS_M};

type M3 = [[f64; 3]; 3];

fn rot_z(a: f64) -> M3 {
    [[a.cos(), -a.sin(), 0.0], [a.sin(), a.cos(), 0.0], [0.0, 0.0, 1.0]]
}

fn rot_x(a: f64) -> M3 {
    [[1.0, 0.0, 0.0], [0.0, a.cos(), -a.sin()], [0.0, a.sin(), a.cos()]]
}

fn mul(a: &M3, b: &M3) -> M3 {
    let mut out = [[0.0; 3]; 3];
    for i in 0..3 {
        for j in 0..3 {
            out[i][j] = (0..3).map(|k| a[i][k] * b[k][j]).sum();
        }
    }
    out
}

fn apply(m: &M3, v: [f64; 3]) -> [f64; 3] {
    [0, 1, 2].map(|i| (0..3).map(|k| m[i][k] * v[k]).sum())
}

fn oracle_position(cfg: &ConstellationConfig, o: u32, k: u32) -> [f64; 3] {
    let r = EARTH_RADIUS_M + cfg.altitude_m;
    let total = (cfg.orbits * cfg.sats_per_orbit) as f64;
    let raan = std::f64::consts::TAU * o as f64 / cfg.orbits as f64;
    let u = std::f64::consts::TAU * (k as f64 / cfg.sats_per_orbit as f64 + (cfg.phasing * o) as f64 / total);
    let m = mul(&rot_z(raan), &rot_x(cfg.inclination_deg.to_radians()));
    apply(&m, [r * u.cos(), r * u.sin(), 0.0])
}

fn dist(a: [f64; 3], b: [f64; 3]) -> f64 {
    (0..3).map(|i| (a[i] - b[i]).powi(2)).sum::<f64>().sqrt()
}

#[test]
fn two_shells_match_the_rotation_oracle() {
    let shells = [
        ConstellationConfig::default(),
        ConstellationConfig {
            orbits: 6,
            sats_per_orbit: 8,
            altitude_m: 1_200_000.0,
            inclination_deg: 87.9,
            phasing: 1,
            ..ConstellationConfig::default()
        },
    ];
    for cfg in &shells {
        let sats = build_constellation(cfg, 7).unwrap();
        let r = EARTH_RADIUS_M + cfg.altitude_m;
        assert_eq!(sats.len(), cfg.satellite_count());
        for s in &sats {
            let want = oracle_position(cfg, s.orbit_index, s.phase_index);
            assert!(
                dist(s.position, want) < 1e-6,
                "sat {} off by {}",
                s.id,
                dist(s.position, want)
            );
            assert!((dist(s.position, [0.0; 3]) - r).abs() < 1e-6);
            assert!((cfg.cpu_freq_min_hz..=cfg.cpu_freq_max_hz).contains(&s.cpu_freq_hz));
        }
        // in-plane neighbours sit one chord apart
        let chord = 2.0 * r * (std::f64::consts::PI / cfg.sats_per_orbit as f64).sin();
        for o in 0..cfg.orbits {
            for k in 0..cfg.sats_per_orbit {
                let a = &sats[(o * cfg.sats_per_orbit + k) as usize];
                let b = &sats[(o * cfg.sats_per_orbit + (k + 1) % cfg.sats_per_orbit) as usize];
                assert!((a.distance_to(b) - chord).abs() < 1e-6);
            }
        }
        // no two satellites share a position
        for i in 0..sats.len() {
            for j in i + 1..sats.len() {
                assert!(sats[i].distance_to(&sats[j]) > 1.0, "{i} and {j} collide");
            }
        }
    }
}
