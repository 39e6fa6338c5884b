mod common;

use sbfl_leo::fl::synthetic::{generate_blobs, BlobSpec};
use sbfl_leo::fl::{ModelKind, ModelLayout};

/// Central finite differences against the analytic gradient on 50 random
/// instances of both model kinds.
#[test]
fn analytic_gradient_matches_finite_differences() {
    let worst = common::worst_gradient_error(50, 21);
    assert!(worst < 1e-4, "{worst}");
}

#[test]
fn returned_loss_matches_batch_loss() {
    let data = generate_blobs(&BlobSpec {
        classes: 3,
        dim: 4,
        per_class: 10,
        spread: 0.5,
        center_scale: 1.0,
        seed: 2,
    });
    let layout = ModelLayout {
        feature_dim: 4,
        class_count: 3,
        kind: ModelKind::Mlp { hidden: 4 },
    };
    let params = layout.init(3);
    let idx: Vec<usize> = (0..data.len()).collect();
    let mut grad = vec![0.0; layout.param_count()];
    let l = layout.batch_loss_and_gradient(&params, &data, &idx, &mut grad);
    assert!((l - layout.batch_loss(&params, &data, &idx)).abs() < 1e-12);
}
