//! Acceptance suite on the desk configuration. Prints one PASS/FAIL line per
//! criterion and exits non-zero if any criterion fails.

use std::panic::{catch_unwind, AssertUnwindSafe};
use std::time::Instant;

use embmark_core::attack::{
    dimension_shift, evaluate_attack, extract_from_victim, AttackKind, AttackScenario, Extraction,
};
use embmark_core::embedding::{EmbeddingSpace, Side};
use embmark_core::io::{decode_embf, decode_wmt1, encode_embf, encode_wmt1};
use embmark_core::ks::{ks_p_value, ks_statistic, ks_two_sample};
use embmark_core::linalg::DenseMatrix;
use embmark_core::pipeline::{build_setup, train_on_triggers, SetupConfig, WatermarkSetup};
use embmark_core::rng::{mix, SeededRng};
use embmark_core::transform::{
    grad_align, invert_transform, loss_align, TrainConfig, TransformMatrix,
};
use embmark_core::verify::{pair_stats, score_matrix, StatSource, StatSubset, UserRegistry};
use embmark_core::Verdict;
use embmark_eaas::service::{start, user_seed, KeyEntry, KeyStore, ServiceConfig};
use embmark_eaas::wire::{EmbedItem, EmbedRequest};

/// Seeds of the five direct-copy setups; the first three also run extraction.
const SEEDS: [u64; 5] = [0, 1, 2, 3, 4];
const EXTRACTION_SEEDS: usize = 3;
const USERS: usize = 32;

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: String) -> Outcome {
    Outcome { pass, detail }
}

struct Ctx {
    setups: Vec<WatermarkSetup>,
    extractions: Vec<Extraction>,
}

fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

/// Mean |cos(Wv, Wt) - cos(v, t)| over the benign pairs.
fn utility_drift(setup: &WatermarkSetup) -> f64 {
    let ids = setup.benign_ids();
    let before = setup.encoder().embed_pairs(&setup.benign).unwrap();
    let after = setup.victim().serve(&setup.benign).unwrap();
    let b = pair_stats(&before, &ids, StatSource::Original, StatSubset::Benign).unwrap();
    let a = pair_stats(&after, &ids, StatSource::Stealer, StatSubset::Benign).unwrap();
    mean(
        &a.cosines
            .iter()
            .zip(&b.cosines)
            .map(|(x, y)| (x - y).abs())
            .collect::<Vec<_>>(),
    )
}

fn direct_copy(setup: &WatermarkSetup) -> embmark_core::VerificationReport {
    evaluate_attack(AttackKind::DirectCopy, &setup.victim(), None, None)
        .unwrap()
        .report
}

fn c1_orthogonality(ctx: &Ctx) -> Outcome {
    let w = &ctx.setups[0].transform;
    let d = w.dim() as f64;
    let residual = w.w.orthogonality_residual();
    let sv = w.singular_values();
    let (lo, hi) = sv
        .iter()
        .fold((f64::INFINITY, 0.0f64), |(l, h), &s| (l.min(s), h.max(s)));
    let pass = residual <= 0.05 * d.sqrt() && lo > 0.5 && hi < 1.5;
    outcome(
        pass,
        format!("residual={residual:.4} (<= {:.4}), singular values in [{lo:.3e}, {hi:.3e}] (want (0.5, 1.5))", 0.05 * d.sqrt()),
    )
}

fn c2_utility(ctx: &Ctx) -> Outcome {
    let drift = utility_drift(&ctx.setups[0]);
    outcome(
        drift <= 0.02,
        format!(
            "mean benign |dcos|={drift:.4} (<= 0.02) over {} pairs",
            ctx.setups[0].benign.len()
        ),
    )
}

fn c3_direct_copy(ctx: &Ctx) -> Outcome {
    let mut pass = true;
    let mut parts = Vec::new();
    for (seed, setup) in SEEDS.iter().zip(&ctx.setups) {
        let r = direct_copy(setup);
        let c = r.c_avg.unwrap();
        let ok = r.delta_cos >= 0.2
            && (-0.1..=0.05).contains(&r.delta_l2)
            && r.p_value < 5e-3
            && c >= 0.999;
        pass &= ok;
        parts.push(format!(
            "seed {seed}: dcos={:.4} dl2={:.4} p={:.2e} c_avg={c:.6}{}",
            r.delta_cos,
            r.delta_l2,
            r.p_value,
            if ok { "" } else { " x" }
        ));
    }
    outcome(pass, parts.join("; "))
}

fn c4_gradient() -> Outcome {
    let mut rng = SeededRng::new(mix(0xacce, 4));
    let mut worst = 0.0f64;
    let h = 1e-6;
    for _ in 0..20 {
        let d = rng.range_inclusive(2, 8);
        let m = rng.range_inclusive(2, 5);
        let gauss = |rng: &mut SeededRng, r: usize, c: usize| {
            DenseMatrix::from_row_major(r, c, rng.gaussian_vec(r * c, 1.0)).unwrap()
        };
        let w = gauss(&mut rng, d, d);
        let v = gauss(&mut rng, d, m);
        let t = gauss(&mut rng, d, m);
        let analytic = grad_align(&w, &v, &t).unwrap();
        let mut num = 0.0;
        let mut den = 0.0;
        for i in 0..d {
            for j in 0..d {
                let mut plus = w.clone();
                plus.set(i, j, w.get(i, j) + h);
                let mut minus = w.clone();
                minus.set(i, j, w.get(i, j) - h);
                let fd = (loss_align(&plus, &v, &t).unwrap() - loss_align(&minus, &v, &t).unwrap())
                    / (2.0 * h);
                num += (analytic.get(i, j) - fd).powi(2);
                den += fd.powi(2);
            }
        }
        worst = worst.max(num.sqrt() / den.sqrt().max(1e-300));
    }
    outcome(
        worst <= 1e-5,
        format!("worst relative error {worst:.2e} over 20 instances (<= 1e-5)"),
    )
}

/// Largest gap between the two empirical CDFs, evaluated at every sample point.
fn brute_force_d(a: &[f64], b: &[f64]) -> f64 {
    let cdf = |s: &[f64], x: f64| s.iter().filter(|&&v| v <= x).count() as f64 / s.len() as f64;
    a.iter()
        .chain(b)
        .map(|&x| (cdf(a, x) - cdf(b, x)).abs())
        .fold(0.0, f64::max)
}

fn c5_ks() -> Outcome {
    let grid: Vec<f64> = (0..=10).map(|k| k as f64 / 10.0).collect();
    let mut rng = SeededRng::new(mix(0xacce, 5));
    let mut checked = 0;
    let mut mismatches = 0;
    for n in 2..=8 {
        for m in 2..=8 {
            for _ in 0..40 {
                let a: Vec<f64> = (0..n).map(|_| grid[rng.below(grid.len())]).collect();
                let b: Vec<f64> = (0..m).map(|_| grid[rng.below(grid.len())]).collect();
                let got = ks_statistic(&a, &b).unwrap();
                if got != brute_force_d(&a, &b) || ks_two_sample(&a, &b).unwrap().statistic != got {
                    mismatches += 1;
                }
                checked += 1;
            }
        }
    }
    let mut monotone = true;
    for (n, m) in [(2, 2), (3, 8), (8, 8), (128, 128), (1024, 1024)] {
        let mut prev = f64::INFINITY;
        for k in 0..=1000 {
            let p = ks_p_value(k as f64 / 1000.0, n, m);
            if p > prev {
                monotone = false;
            }
            prev = p;
        }
    }
    outcome(
        mismatches == 0 && monotone,
        format!(
            "{mismatches} mismatches in {checked} grid sample pairs; p monotone in D: {monotone}"
        ),
    )
}

fn c6_invariance(ctx: &Ctx) -> Outcome {
    let setup = &ctx.setups[0];
    let ex = &ctx.extractions[0];
    let victim = setup.victim();
    let identity = evaluate_attack(AttackKind::Identity, &victim, Some(ex), None)
        .unwrap()
        .report;
    let shifted = evaluate_attack(AttackKind::ExtractionThenShift, &victim, Some(ex), None)
        .unwrap()
        .report;
    let report_gap = [
        (identity.delta_cos - shifted.delta_cos).abs(),
        (identity.delta_l2 - shifted.delta_l2).abs(),
        (identity.ks_statistic - shifted.ks_statistic).abs(),
    ]
    .into_iter()
    .fold(0.0, f64::max);

    let space =
        embmark_core::attack::suspect_space(AttackKind::Identity, &victim, Some(ex)).unwrap();
    let moved = dimension_shift(&space).unwrap();
    let ids = space.pair_ids().to_vec();
    let a = pair_stats(&space, &ids, StatSource::Stealer, StatSubset::Trigger).unwrap();
    let b = pair_stats(&moved, &ids, StatSource::Stealer, StatSubset::Trigger).unwrap();
    let pair_gap = a
        .cosines
        .iter()
        .zip(&b.cosines)
        .chain(a.l2s.iter().zip(&b.l2s))
        .map(|(x, y)| (x - y).abs())
        .fold(0.0, f64::max);
    outcome(
        report_gap <= 1e-12 && pair_gap <= 1e-15,
        format!(
            "max |identity - shift| over (dcos, dl2, D) = {report_gap:.1e} (<= 1e-12); per-pair max gap {pair_gap:.1e} over {} pairs (<= 1e-15)",
            ids.len()
        ),
    )
}

fn c7_extraction(ctx: &Ctx) -> Outcome {
    let mut pass = true;
    let mut parts = Vec::new();
    for (k, (setup, ex)) in ctx.setups.iter().zip(&ctx.extractions).enumerate() {
        let r = evaluate_attack(AttackKind::Extraction, &setup.victim(), Some(ex), None)
            .unwrap()
            .report;
        let c = r.c_avg.unwrap();
        let ok = r.delta_cos > 0.0 && r.p_value < 5e-3 && c >= 0.9;
        pass &= ok;
        parts.push(format!(
            "seed {}: dcos={:.4} p={:.2e} c_avg={c:.4} mse={:.3e}{}",
            SEEDS[k],
            r.delta_cos,
            r.p_value,
            ex.model.final_mse(),
            if ok { "" } else { " x" }
        ));
    }
    outcome(pass, parts.join("; "))
}

fn c8_identification(ctx: &Ctx) -> Outcome {
    let setup = &ctx.setups[0];
    let entries: Vec<(String, TransformMatrix)> = (0..USERS)
        .map(|k| {
            let id = format!("user-{k:02}");
            let cfg = setup
                .config
                .train
                .clone()
                .with_seed(user_seed(setup.config.train.seed, &id));
            (
                id,
                train_on_triggers(&setup.catalog, &setup.triggers, &cfg).unwrap(),
            )
        })
        .collect();
    let registry = UserRegistry::new(entries).unwrap();
    let original = setup.original_space().unwrap();
    let suspects: Vec<EmbeddingSpace> = registry
        .entries()
        .iter()
        .map(|(_, w)| embmark_core::transform::apply_transform(w, &original).unwrap())
        .collect();
    let benign = setup.benign_ids();
    let scores = score_matrix(&suspects, &original, &registry, &benign).unwrap();
    let mut correct = 0;
    let mut min_diag = f64::INFINITY;
    let mut max_off = 0.0f64;
    for (k, row) in scores.iter().enumerate() {
        let mut best = 0;
        for (j, s) in row.iter().enumerate() {
            if *s > row[best] {
                best = j;
            }
            if j == k {
                min_diag = min_diag.min(*s);
            } else {
                max_off = max_off.max(s.abs());
            }
        }
        correct += usize::from(best == k);
    }
    outcome(
        correct == USERS && min_diag >= 0.999 && max_off < 0.4,
        format!("{correct}/{USERS} identified; min diagonal {min_diag:.6} (>= 0.999); max |off-diagonal| {max_off:.4} (< 0.4)"),
    )
}

fn c9_random_baseline(ctx: &Ctx) -> Outcome {
    let mut cfg = ctx.setups[0].config.clone();
    cfg.train.retraction_enabled = false;
    let setup = build_setup(&cfg).unwrap();
    let drift = utility_drift(&setup);
    let r = direct_copy(&setup);
    let fires = r.verdict == Verdict::Infringing && r.p_value < 5e-3 && r.delta_cos > 0.0;
    outcome(
        drift > 0.02 && fires,
        format!(
            "no retraction: benign |dcos|={drift:.4} (> 0.02); direct copy dcos={:.4} p={:.2e} c_avg={:.4} verdict={}",
            r.delta_cos,
            r.p_value,
            r.c_avg.unwrap(),
            r.verdict
        ),
    )
}

fn service_replay(setup: &WatermarkSetup) -> Result<bool, String> {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    setup
        .catalog
        .save(dir.path().join("catalog.json"))
        .map_err(|e| e.to_string())?;
    let reg = dir.path().join("registry");
    UserRegistry::new(vec![("acceptance".into(), setup.transform.clone())])
        .and_then(|r| r.save(&reg))
        .map_err(|e| e.to_string())?;
    KeyStore {
        keys: vec![KeyEntry {
            api_key: "acceptance-key".into(),
            user_id: "acceptance".into(),
        }],
    }
    .save(&reg)
    .map_err(|e| e.to_string())?;
    let cfg = ServiceConfig {
        bind: "127.0.0.1:0".into(),
        catalog: dir.path().join("catalog.json"),
        registry: reg,
        triggers: None,
        noise_sigma: None,
        seed: None,
        train: TrainConfig::desk(),
    };
    let items: Vec<EmbedItem> = setup.triggers.pairs[..64]
        .iter()
        .flat_map(|p| {
            [Side::Image, Side::Text].map(|side| EmbedItem {
                id: p.id.clone(),
                side,
                classes: p.classes(side).to_vec(),
            })
        })
        .collect();
    let req = EmbedRequest {
        api_key: "acceptance-key".into(),
        items,
    };
    let rt = tokio::runtime::Builder::new_multi_thread()
        .enable_all()
        .build()
        .map_err(|e| e.to_string())?;
    rt.block_on(async {
        let mut svc = start(cfg, None, None).await.map_err(|e| e.to_string())?;
        svc.ready().await.map_err(|e| e.to_string())?;
        let http = reqwest::Client::new();
        let url = format!("{}/v1/embed", svc.url());
        let mut bodies = Vec::new();
        for _ in 0..2 {
            let resp = http
                .post(&url)
                .json(&req)
                .send()
                .await
                .map_err(|e| e.to_string())?;
            if !resp.status().is_success() {
                return Err(format!("status {}", resp.status()));
            }
            bodies.push(resp.bytes().await.map_err(|e| e.to_string())?);
        }
        Ok(bodies[0] == bodies[1] && !bodies[0].is_empty())
    })
}

fn c10_round_trips(ctx: &Ctx) -> Outcome {
    let setup = &ctx.setups[0];
    let original = setup.original_space().unwrap();
    let w = &setup.transform;
    let inv = invert_transform(w).unwrap();
    let mut worst = 0.0f64;
    for v in original.image().iter().chain(original.text()) {
        let back = inv
            .matvec_slice(&w.w.matvec_slice(v.values()).unwrap())
            .unwrap();
        worst = back
            .iter()
            .zip(v.values())
            .map(|(a, b)| (a - b).abs())
            .fold(worst, f64::max);
    }
    let embf = encode_embf(&original).unwrap();
    let embf_ok = encode_embf(&decode_embf(&embf).unwrap()).unwrap() == embf;
    let wmt = encode_wmt1(&w.w).unwrap();
    let wmt_ok = encode_wmt1(&decode_wmt1(&wmt).unwrap()).unwrap() == wmt
        && decode_wmt1(&wmt).unwrap() == w.w;
    let replay = service_replay(setup);
    let replay_ok = replay.as_ref().is_ok_and(|b| *b);
    outcome(
        worst <= 1e-8 && embf_ok && wmt_ok && replay_ok,
        format!(
            "max |W^-1 W e - e| = {worst:.2e} (<= 1e-8); EMBF byte-identical {embf_ok}; WMT1 byte-identical {wmt_ok}; service replay identical {}",
            match replay {
                Ok(b) => b.to_string(),
                Err(e) => format!("error: {e}"),
            }
        ),
    )
}

fn run(name: &str, f: impl FnOnce() -> Outcome) -> bool {
    let started = Instant::now();
    let result = catch_unwind(AssertUnwindSafe(f));
    let secs = started.elapsed().as_secs_f64();
    match result {
        Ok(o) => {
            println!(
                "{} {name}: {} [{secs:.1}s]",
                if o.pass { "PASS" } else { "FAIL" },
                o.detail
            );
            o.pass
        }
        Err(_) => {
            println!("FAIL {name}: panicked [{secs:.1}s]");
            false
        }
    }
}

fn main() {
    let started = Instant::now();
    let setups: Vec<WatermarkSetup> = SEEDS
        .iter()
        .map(|&s| build_setup(&SetupConfig::desk(s)).expect("desk setup"))
        .collect();
    let extractions: Vec<Extraction> = setups[..EXTRACTION_SEEDS]
        .iter()
        .zip(SEEDS)
        .map(|(setup, seed)| {
            extract_from_victim(
                &setup.victim(),
                &AttackScenario::new(AttackKind::Extraction, seed),
            )
            .expect("extraction")
        })
        .collect();
    eprintln!(
        "prepared {} setups and {} extractions in {:.1}s",
        setups.len(),
        extractions.len(),
        started.elapsed().as_secs_f64()
    );
    let ctx = Ctx {
        setups,
        extractions,
    };

    let results = [
        run("1 orthogonality", || c1_orthogonality(&ctx)),
        run("2 utility preservation", || c2_utility(&ctx)),
        run("3 direct-copy detection (5 seeds)", || c3_direct_copy(&ctx)),
        run("4 gradient vs finite differences", c4_gradient),
        run("5 KS oracle equivalence", c5_ks),
        run("6 similarity invariance", || c6_invariance(&ctx)),
        run("7 extraction inheritance (3 seeds)", || c7_extraction(&ctx)),
        run("8 user identification (32 users)", || {
            c8_identification(&ctx)
        }),
        run("9 random-baseline contrast", || c9_random_baseline(&ctx)),
        run("10 round trips", || c10_round_trips(&ctx)),
    ];
    let failed = results.iter().filter(|p| !**p).count();
    println!(
        "{} of {} criteria passed in {:.1}s",
        results.len() - failed,
        results.len(),
        started.elapsed().as_secs_f64()
    );
    if failed > 0 {
        std::process::exit(1);
    }
}
