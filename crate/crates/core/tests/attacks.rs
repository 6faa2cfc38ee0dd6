mod common;

use common::{desk, mean_pair_cosine};
use embmark_core::attack::{
    evaluate_attack, extract_from_victim, run_scenario, surrogate_service, AttackKind,
    AttackScenario,
};
use embmark_core::transform::apply_transform;
use embmark_core::verify::Verdict;

#[test]
fn direct_copy_reports_the_injected_gain() {
    let setup = desk(0);
    let victim = setup.victim();
    let r = run_scenario(
        &AttackScenario::new(AttackKind::DirectCopy, 0),
        &victim,
        None,
    )
    .unwrap();
    // oracle: statistics computed straight from the served and original spaces
    let ids = setup.triggers.ids();
    let original = setup.encoder().embed_pairs(&setup.triggers.pairs).unwrap();
    let served = apply_transform(&setup.transform, &original).unwrap();
    let gain = mean_pair_cosine(&served, &ids) - mean_pair_cosine(&original, &ids);
    assert!((r.report.delta_cos - gain).abs() < 1e-12);
    assert!(r.report.c_avg.unwrap() >= 0.999);
    assert_eq!(r.coverage, 1.0);
    assert!(r.mse_curve.is_empty());
}

#[test]
fn shift_matches_identity_on_trigger_statistics() {
    let setup = desk(1);
    let victim = setup.victim();
    let scenario = AttackScenario::new(AttackKind::Extraction, 1);
    let ex = extract_from_victim(&victim, &scenario).unwrap();
    let id = evaluate_attack(AttackKind::Identity, &victim, Some(&ex), None).unwrap();
    let sh = evaluate_attack(AttackKind::ExtractionThenShift, &victim, Some(&ex), None).unwrap();
    assert!((id.report.delta_cos - sh.report.delta_cos).abs() <= 1e-12);
    assert!((id.report.delta_l2 - sh.report.delta_l2).abs() <= 1e-12);
    assert!((id.report.ks_statistic - sh.report.ks_statistic).abs() <= 1e-12);
    // the distribution check does not survive the shift
    assert_ne!(id.report.c_avg, sh.report.c_avg);
    assert!(sh.report.c_avg.unwrap() < 0.4);

    // extraction inherits the watermark
    assert!(id.report.delta_cos > 0.0);
    assert!(id.report.p_value < 5e-3);
    assert_eq!(id.report.verdict, Verdict::Infringing);
    let log = &ex.model.training_log;
    assert!(log.iter().all(|m| m.is_finite()));
    assert!(log.last().unwrap() <= &log[0]);

    let served = surrogate_service(&ex.model, &victim.encoder, &setup.triggers.pairs).unwrap();
    assert_eq!(served.pair_ids(), setup.triggers.ids().as_slice());
}

#[test]
fn tiny_duplicate_set_is_flagged() {
    let setup = desk(2);
    let mut scenario = AttackScenario::new(AttackKind::Extraction, 2);
    scenario.duplicate_set_size = 64;
    scenario.surrogate.epochs = 500;
    let r = run_scenario(&scenario, &setup.victim(), None).unwrap();
    assert!(r.low_coverage, "coverage {}", r.coverage);
    assert!(r.notes.iter().any(|n| n.contains("low trigger coverage")));
    assert_eq!(r.mse_curve.len(), 501);
}
