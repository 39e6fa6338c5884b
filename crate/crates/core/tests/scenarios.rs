//! End-to-end behaviour on small synthetic constellations.

use sbfl_leo::fl::evaluate;
use sbfl_leo::sim::{run_scenario, Method, ScenarioConfig, Simulation};

fn toy(extra: &str) -> ScenarioConfig {
    ScenarioConfig::from_toml_str(&format!(
        r#"
method = "SBFL_LEO"
rounds = 2
seed = 3

[constellation]
orbits = 4
sats_per_orbit = 5

[training]
epochs = 2
batch_size = 16
learning_rate = 0.005

[protocol]
clusters = 2

[dataset]
source = "synthetic"
classes = 3
dim = 4
per_class = 900
spread = 0.6
center_scale = 1.0
seed = 3
labels_per_orbit = 3
samples_per_satellite = 100
{extra}
"#
    ))
    .unwrap()
}

#[test]
fn zero_rounds_report_nothing() {
    let mut cfg = toy("");
    cfg.rounds = 0;
    let (sim, out) = run_scenario(&cfg).unwrap();
    assert!(out.rounds.is_empty());
    let fresh = Simulation::new(cfg).unwrap();
    assert_eq!(sim.global, fresh.global);
    assert!(sim.chains.model.is_empty());
}

#[test]
fn honest_rounds_improve_and_flag_no_one() {
    for method in [Method::SbflLeo, Method::Efl, Method::FedAvg] {
        let (_, out) = run_scenario(&toy("").with_method(method)).unwrap();
        let initial = Simulation::new(toy("").with_method(method)).unwrap();
        let start = evaluate(&initial.layout, &initial.global, &initial.test)
            .unwrap()
            .accuracy;
        let acc = out.accuracies();
        assert!(start < acc[0] && acc[0] < acc[1], "{method}: {start} {acc:?}");
        for r in &out.rounds {
            assert!(r.suspects.is_empty(), "{method} round {}: {:?}", r.round, r.suspects);
            assert!(r.attackers.is_empty());
        }
    }
}

#[test]
fn fedavg_charges_no_evaluation() {
    let (_, out) = run_scenario(&toy("").with_method(Method::FedAvg)).unwrap();
    for r in &out.rounds {
        assert_eq!(r.energy.evaluation, 0.0);
        assert_eq!(r.energy.head_verify, 0.0);
        assert!(r.energy.training > 0.0);
    }
    let (_, sbfl) = run_scenario(&toy("")).unwrap();
    assert!(sbfl.rounds.iter().all(|r| r.energy.evaluation > 0.0));
}

#[test]
fn threshold_filter_admits_stale_models() {
    let attack = r#"
[attack]
kind = "stale_model"
malicious_fraction = 0.25
active_rounds = "2"
seed = 3
"#;
    let cfg = toy(attack).with_method(Method::Efl);
    let (_, out) = run_scenario(&cfg).unwrap();
    let r2 = &out.rounds[1];
    assert!(!r2.attackers.is_empty());
    assert!(r2.attackers.iter().all(|a| !r2.suspects.contains(a)), "{r2:?}");

    // a stale submission is the previous global model, so its similarity is exactly 1
    let (sim, _) = run_scenario(&cfg).unwrap();
    let trace = &sim.traces[1];
    for a in &r2.attackers {
        let theta = trace.clusters.iter().find_map(|c| c.similarity.get(a)).unwrap();
        assert_eq!(*theta, 1.0);
    }
}
