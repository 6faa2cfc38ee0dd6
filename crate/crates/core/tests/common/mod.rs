#![allow(dead_code)]

use std::sync::OnceLock;

use embmark_core::embedding::{cosine, EmbeddingSpace};
use embmark_core::pipeline::{build_setup, SetupConfig, WatermarkSetup};

static DESK: [OnceLock<WatermarkSetup>; 5] = [const { OnceLock::new() }; 5];

/// Standard desk setup for `seed` in `0..5`, built once per test binary.
pub fn desk(seed: u64) -> &'static WatermarkSetup {
    DESK[seed as usize].get_or_init(|| build_setup(&SetupConfig::desk(seed)).expect("desk setup"))
}

pub fn mean_pair_cosine(space: &EmbeddingSpace, ids: &[String]) -> f64 {
    ids.iter()
        .map(|id| {
            let (v, t) = space.pair(id).unwrap();
            cosine(v.values(), t.values()).unwrap()
        })
        .sum::<f64>()
        / ids.len() as f64
}

/// Mean `|cos(Wv, Wt) - cos(v, t)|` over the pairs of two aligned spaces.
pub fn utility_drift(before: &EmbeddingSpace, after: &EmbeddingSpace) -> f64 {
    let n = before.len();
    (0..n)
        .map(|i| {
            let a = cosine(after.image()[i].values(), after.text()[i].values()).unwrap();
            let b = cosine(before.image()[i].values(), before.text()[i].values()).unwrap();
            (a - b).abs()
        })
        .sum::<f64>()
        / n as f64
}
