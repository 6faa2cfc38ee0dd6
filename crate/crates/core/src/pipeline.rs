//! One-call construction of a watermarked provider: catalog, trigger set,
//! benign verification set and trained transform, all derived from one seed.

use serde::{Deserialize, Serialize};

use crate::attack::Victim;
use crate::corpus::{
    gen_catalog, sample_benign_pairs, ClassCatalog, CorpusSpec, Encoder, PairSpec,
};
use crate::embedding::{EmbeddingSpace, Side};
use crate::error::Result;
use crate::rng::mix;
use crate::transform::{train_transform, TrainConfig, TransformMatrix};
use crate::trigger::{build_trigger_set, select_trigger_classes, FrequencyBand, TriggerSet};
use crate::verify::Thresholds;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SetupConfig {
    pub corpus: CorpusSpec,
    pub trigger_classes: usize,
    #[serde(default)]
    pub band: FrequencyBand,
    pub trigger_pairs: usize,
    pub max_classes: usize,
    pub benign_pairs: usize,
    pub train: TrainConfig,
    #[serde(default)]
    pub thresholds: Thresholds,
    pub seed: u64,
}

impl SetupConfig {
    /// d=64, 26 trigger classes, 128 trigger pairs, 1024 benign pairs, lr 1e-3.
    pub fn desk(seed: u64) -> Self {
        SetupConfig {
            corpus: CorpusSpec {
                seed: mix(seed, 10),
                ..CorpusSpec::default()
            },
            trigger_classes: 26,
            band: FrequencyBand::High,
            trigger_pairs: 128,
            max_classes: 3,
            benign_pairs: 1024,
            train: TrainConfig::desk().with_seed(mix(seed, 13)),
            thresholds: Thresholds::default(),
            seed,
        }
    }

    /// Full-scale trigger count and training schedule.
    pub fn full(seed: u64) -> Self {
        SetupConfig {
            trigger_pairs: 1024,
            train: TrainConfig::full().with_seed(mix(seed, 13)),
            ..Self::desk(seed)
        }
    }
}

#[derive(Debug, Clone)]
pub struct WatermarkSetup {
    pub config: SetupConfig,
    pub catalog: ClassCatalog,
    pub triggers: TriggerSet,
    pub benign: Vec<PairSpec>,
    pub transform: TransformMatrix,
}

/// Stream indices under the setup seed.
const TRIGGER_CLASS_STREAM: u64 = 11;
const TRIGGER_SET_STREAM: u64 = 12;
const BENIGN_STREAM: u64 = 14;

pub fn build_setup(config: &SetupConfig) -> Result<WatermarkSetup> {
    let catalog = gen_catalog(&config.corpus)?;
    let classes = select_trigger_classes(
        &catalog,
        config.trigger_classes,
        config.band,
        mix(config.seed, TRIGGER_CLASS_STREAM),
    )?;
    let triggers = build_trigger_set(
        &classes,
        config.trigger_pairs,
        config.max_classes,
        mix(config.seed, TRIGGER_SET_STREAM),
    )?;
    let benign = sample_benign_pairs(
        &catalog,
        config.benign_pairs,
        config.max_classes,
        "benign",
        mix(config.seed, BENIGN_STREAM),
    )?;
    let transform = train_on_triggers(&catalog, &triggers, &config.train)?;
    Ok(WatermarkSetup {
        config: config.clone(),
        catalog,
        triggers,
        benign,
        transform,
    })
}

/// Trains a transform on the original embeddings of a trigger set.
pub fn train_on_triggers(
    catalog: &ClassCatalog,
    triggers: &TriggerSet,
    cfg: &TrainConfig,
) -> Result<TransformMatrix> {
    let space = Encoder::for_catalog(catalog).embed_pairs(&triggers.pairs)?;
    train_transform(
        &space.side_matrix(Side::Image),
        &space.side_matrix(Side::Text),
        cfg,
    )
}

impl WatermarkSetup {
    pub fn encoder(&self) -> Encoder<'_> {
        Encoder::for_catalog(&self.catalog)
    }

    pub fn victim(&self) -> Victim<'_> {
        Victim {
            encoder: self.encoder(),
            transform: &self.transform,
            triggers: &self.triggers,
            benign: &self.benign,
            thresholds: self.config.thresholds,
        }
    }

    pub fn benign_ids(&self) -> Vec<String> {
        self.benign.iter().map(|p| p.id.clone()).collect()
    }

    /// Original embeddings of the triggers followed by the benign pairs.
    pub fn original_space(&self) -> Result<EmbeddingSpace> {
        self.encoder()
            .embed_pairs(&self.victim().verification_queries())
    }
}
