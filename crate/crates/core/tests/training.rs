mod common;

use common::{desk, mean_pair_cosine, utility_drift};
use embmark_core::embedding::Side;
use embmark_core::linalg::DenseMatrix;
use embmark_core::transform::{
    apply_transform, invert_transform, train_transform_observed, TrainConfig,
};

#[test]
fn desk_training_orthogonality_and_trigger_gain() {
    let setup = desk(0);
    let w = &setup.transform;
    let ids = setup.triggers.ids();
    let original = setup.encoder().embed_pairs(&setup.triggers.pairs).unwrap();
    let served = apply_transform(w, &original).unwrap();
    let gain = mean_pair_cosine(&served, &ids) - mean_pair_cosine(&original, &ids);
    // recomputable residual
    let residual = w.w.orthogonality_residual();
    assert!((residual - w.orthogonality_residual).abs() <= 1e-12);
    assert!(gain >= 0.2, "trigger gain {gain}");
    assert!(residual <= 0.05 * 8.0, "residual {residual}");
}

#[test]
fn trained_singular_values_near_one() {
    let sv = desk(0).transform.singular_values();
    assert!(
        sv.iter().all(|s| *s > 0.5 && *s < 1.5),
        "singular values span [{:e}, {}]",
        sv[sv.len() - 1],
        sv[0]
    );
}

#[test]
fn checkpoints_stay_near_orthogonal() {
    let setup = desk(1);
    let space = setup.encoder().embed_pairs(&setup.triggers.pairs).unwrap();
    let cfg = &setup.config.train;
    let marks = [0, cfg.epochs / 4, cfg.epochs / 2, cfg.epochs];
    let mut report = Vec::new();
    train_transform_observed(
        &space.side_matrix(Side::Image),
        &space.side_matrix(Side::Text),
        cfg,
        |epoch, w, _| {
            if marks.contains(&epoch) {
                let sv = w.singular_values();
                report.push((epoch, sv[sv.len() - 1], sv[0]));
            }
        },
    )
    .unwrap();
    assert_eq!(report.len(), 4);
    for (epoch, lo, hi) in &report {
        assert!(
            *lo > 0.5 && *hi < 1.5,
            "epoch {epoch}: singular values in [{lo:e}, {hi}]; all {report:?}"
        );
    }
}

#[test]
fn training_reduces_the_objective() {
    for seed in 0..3 {
        let w = &desk(seed).transform;
        assert!(w.final_loss.unwrap() < w.initial_loss.unwrap());
    }
}

#[test]
fn trained_transform_inverts_to_1e8() {
    let w = &desk(0).transform;
    let inv = invert_transform(w).unwrap();
    let err = inv
        .matmul(&w.w)
        .unwrap()
        .max_abs_diff(&DenseMatrix::identity(w.dim()));
    assert!(err <= 1e-8, "max entry error {err:e}");
}

#[test]
fn benign_utility_is_preserved() {
    let setup = desk(0);
    let original = setup.encoder().embed_pairs(&setup.benign).unwrap();
    let served = apply_transform(&setup.transform, &original).unwrap();
    let drift = utility_drift(&original, &served);
    assert!(drift <= 0.02, "mean |Δcos| over benign pairs {drift}");
}

#[test]
fn random_baseline_drifts_further_from_orthogonal() {
    let setup = desk(2);
    let space = setup.encoder().embed_pairs(&setup.triggers.pairs).unwrap();
    let cfg = TrainConfig {
        retraction_enabled: false,
        ..setup.config.train.clone()
    };
    let random = embmark_core::transform::train_transform(
        &space.side_matrix(Side::Image),
        &space.side_matrix(Side::Text),
        &cfg,
    )
    .unwrap();
    assert!(!random.retraction_enabled);
    assert!(random.orthogonality_residual > setup.transform.orthogonality_residual);
}
