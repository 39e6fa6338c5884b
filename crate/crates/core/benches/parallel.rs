use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use sbfl_leo::exec::Execution;
use sbfl_leo::fl::synthetic::{generate_blobs, BlobSpec};
use sbfl_leo::fl::{partition_non_iid, train_local, ModelLayout, TrainConfig};
use sbfl_leo::sim::{ScenarioConfig, Simulation};

const SCENARIO: &str = r#"
method = "SBFL_LEO"
rounds = 1
seed = 3

[constellation]
orbits = 8
sats_per_orbit = 5

[training]
epochs = 5

[dataset]
source = "synthetic"
classes = 10
dim = 32
per_class = 200
spread = 0.8
seed = 3
samples_per_satellite = 24
"#;

fn local_training(c: &mut Criterion) {
    let full = generate_blobs(&BlobSpec {
        classes: 10,
        dim: 64,
        per_class: 400,
        spread: 0.8,
        center_scale: 1.0,
        seed: 1,
    });
    let parts = partition_non_iid(&full, 40, 8, 2, Some(60), 1).unwrap();
    let layout = ModelLayout::logistic(64, 10);
    let start = layout.init(0);
    let cfg = TrainConfig {
        epochs: 5,
        batch_size: 32,
        learning_rate: 0.1,
        energy_penalty: 0.0,
        seed: 7,
    };
    let mut group = c.benchmark_group("local_training_40_satellites");
    for exec in [Execution::Sequential, Execution::Parallel] {
        group.bench_with_input(BenchmarkId::from_parameter(format!("{exec:?}")), &exec, |b, &exec| {
            b.iter(|| exec.map(&parts, |d| train_local(&layout, &start, d, &cfg).unwrap()))
        });
    }
    group.finish();
}

fn protocol_round(c: &mut Criterion) {
    let base = ScenarioConfig::from_toml_str(SCENARIO).unwrap();
    let mut group = c.benchmark_group("protocol_round");
    group.sample_size(10);
    for exec in [Execution::Sequential, Execution::Parallel] {
        let mut cfg = base.clone();
        cfg.execution = exec;
        group.bench_with_input(BenchmarkId::from_parameter(format!("{exec:?}")), &cfg, |b, cfg| {
            b.iter(|| Simulation::new(cfg.clone()).unwrap().run_round().unwrap())
        });
    }
    group.finish();
}

criterion_group!(benches, local_training, protocol_round);
criterion_main!(benches);
