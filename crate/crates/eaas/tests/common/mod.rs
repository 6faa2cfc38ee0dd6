#![allow(dead_code)]

use std::path::{Path, PathBuf};

use embmark_core::corpus::{gen_catalog, sample_benign_pairs, ClassCatalog, CorpusSpec};
use embmark_core::transform::TrainConfig;
use embmark_core::trigger::{build_trigger_set, select_trigger_classes, FrequencyBand, TriggerSet};
use embmark_core::PairSpec;
use embmark_eaas::service::{register_user, ServiceConfig};

pub const ADMIN: &str = "test-admin-key";

pub struct Fixture {
    pub dir: tempfile::TempDir,
    pub catalog: ClassCatalog,
    pub triggers: TriggerSet,
    pub benign: Vec<PairSpec>,
    pub train: TrainConfig,
    pub alice_key: String,
}

impl Fixture {
    pub fn path(&self, name: &str) -> PathBuf {
        self.dir.path().join(name)
    }

    pub fn service_config(&self) -> ServiceConfig {
        ServiceConfig {
            bind: "127.0.0.1:0".into(),
            catalog: self.path("catalog.json"),
            registry: self.path("registry"),
            triggers: Some(self.path("triggers.json")),
            noise_sigma: None,
            seed: None,
            train: self.train.clone(),
        }
    }
}

/// d=16 catalog, 32 trigger pairs, 300 benign pairs and one registered user.
pub fn fixture() -> Fixture {
    let dir = tempfile::tempdir().unwrap();
    let spec = CorpusSpec {
        num_classes: 80,
        num_pairs: 20_000,
        dim: 16,
        seed: 5,
        ..CorpusSpec::default()
    };
    let catalog = gen_catalog(&spec).unwrap();
    catalog.save(dir.path().join("catalog.json")).unwrap();
    let catalog = ClassCatalog::load(dir.path().join("catalog.json")).unwrap();
    let classes = select_trigger_classes(&catalog, 12, FrequencyBand::High, 1).unwrap();
    let triggers = build_trigger_set(&classes, 32, 3, 2).unwrap();
    std::fs::write(
        dir.path().join("triggers.json"),
        triggers.to_json().unwrap(),
    )
    .unwrap();
    let benign = sample_benign_pairs(&catalog, 300, 3, "benign", 3).unwrap();
    let train = TrainConfig {
        epochs: 200,
        ..TrainConfig::desk()
    };
    let (alice_key, _) = register_user(
        &dir.path().join("registry"),
        &catalog,
        &triggers,
        &train,
        "alice",
    )
    .unwrap();
    Fixture {
        dir,
        catalog,
        triggers,
        benign,
        train,
        alice_key,
    }
}

pub fn read(path: &Path) -> Vec<u8> {
    std::fs::read(path).unwrap_or_else(|e| panic!("{}: {e}", path.display()))
}
