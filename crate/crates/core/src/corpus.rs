//! Synthetic multi-modal corpus: a class catalog with Zipf-distributed
//! frequencies and separated unit prototypes, plus the deterministic encoder
//! that plays the role of the provider's original image/text model.
//!
//! An item's embedding is `normalize(mean(prototypes of its classes) + noise)`
//! where the noise is isotropic Gaussian with total scale `noise_sigma`
//! (per-coordinate std `noise_sigma / sqrt(d)`). The noise is a property of the
//! item: it is seeded from `(seed, item id, side)`, so re-encoding the same
//! item always yields the same vector regardless of batch composition.

use std::fs;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::embedding::{cosine, normalize, EmbeddingSpace, EmbeddingVector, Side};
use crate::error::{Error, Result};
use crate::io;
use crate::rng::{cumulative_weights, mix, mix_bytes, SeededRng};

/// Largest allowed cosine between two distinct class prototypes.
pub const PROTOTYPE_SEPARATION: f64 = 0.5;
/// Resampling budget per prototype before giving up.
pub const PROTOTYPE_ATTEMPTS: usize = 1000;

const STREAM_PROTOTYPES: u64 = 1;
const STREAM_FREQUENCIES: u64 = 2;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ClassId(pub u32);

impl ClassId {
    pub fn index(self) -> usize {
        self.0 as usize
    }
}

impl std::fmt::Display for ClassId {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}", self.0)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorpusSpec {
    pub num_classes: usize,
    /// Number of class draws used to tally frequencies.
    pub num_pairs: usize,
    #[serde(default = "default_zipf")]
    pub zipf_exponent: f64,
    pub dim: usize,
    pub noise_sigma: f64,
    pub seed: u64,
}

fn default_zipf() -> f64 {
    1.1
}

impl Default for CorpusSpec {
    fn default() -> Self {
        CorpusSpec {
            num_classes: 200,
            num_pairs: 100_000,
            zipf_exponent: default_zipf(),
            dim: 64,
            noise_sigma: 0.1,
            seed: 7,
        }
    }
}

impl CorpusSpec {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidConfig(m.to_string()));
        if self.dim < 2 {
            return bad("dim must be >= 2");
        }
        if self.num_classes == 0 {
            return bad("num_classes must be positive");
        }
        if !(self.noise_sigma >= 0.0) || !self.noise_sigma.is_finite() {
            return bad("noise_sigma must be finite and >= 0");
        }
        if !(self.zipf_exponent > 0.0) || !self.zipf_exponent.is_finite() {
            return bad("zipf_exponent must be positive");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ClassCatalog {
    spec: CorpusSpec,
    class_ids: Vec<ClassId>,
    prototypes: Vec<EmbeddingVector>,
    frequencies: Vec<u64>,
}

/// Generates the class catalog described by `spec`.
///
/// Frequencies are `1 + hits`, where hits counts how often each class was
/// drawn in `num_pairs` draws from a Zipf law over a seeded random ranking of
/// the classes.
pub fn gen_catalog(spec: &CorpusSpec) -> Result<ClassCatalog> {
    spec.validate()?;
    let d = spec.dim;
    let mut rng = SeededRng::new(mix(spec.seed, STREAM_PROTOTYPES));
    let mut prototypes: Vec<Vec<f64>> = Vec::with_capacity(spec.num_classes);
    for class in 0..spec.num_classes {
        let mut placed = false;
        for _ in 0..PROTOTYPE_ATTEMPTS {
            let cand = match normalize(&rng.gaussian_vec(d, 1.0)) {
                Ok(v) => v,
                Err(_) => continue,
            };
            let separated = prototypes
                .iter()
                .all(|p| cosine(p, &cand).is_ok_and(|c| c < PROTOTYPE_SEPARATION));
            if separated {
                prototypes.push(cand);
                placed = true;
                break;
            }
        }
        if !placed {
            return Err(Error::PrototypeSeparationFailure {
                class,
                attempts: PROTOTYPE_ATTEMPTS,
            });
        }
    }

    let mut rng = SeededRng::new(mix(spec.seed, STREAM_FREQUENCIES));
    let mut class_by_rank: Vec<usize> = (0..spec.num_classes).collect();
    rng.shuffle(&mut class_by_rank);
    let weights: Vec<f64> = (1..=spec.num_classes)
        .map(|r| (r as f64).powf(-spec.zipf_exponent))
        .collect();
    let cum = cumulative_weights(&weights);
    let mut frequencies = vec![1u64; spec.num_classes];
    for _ in 0..spec.num_pairs {
        frequencies[class_by_rank[rng.weighted_index(&cum)]] += 1;
    }

    Ok(ClassCatalog {
        spec: spec.clone(),
        class_ids: (0..spec.num_classes as u32).map(ClassId).collect(),
        prototypes: prototypes
            .into_iter()
            .map(EmbeddingVector::from_raw)
            .collect(),
        frequencies,
    })
}

#[derive(Serialize, Deserialize)]
struct CatalogFile {
    spec: CorpusSpec,
    class_ids: Vec<ClassId>,
    frequencies: Vec<u64>,
    /// Prototype EMBF path, relative to the JSON file.
    prototypes: PathBuf,
}

impl ClassCatalog {
    pub fn spec(&self) -> &CorpusSpec {
        &self.spec
    }

    pub fn dim(&self) -> usize {
        self.spec.dim
    }

    pub fn len(&self) -> usize {
        self.class_ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.class_ids.is_empty()
    }

    pub fn class_ids(&self) -> &[ClassId] {
        &self.class_ids
    }

    pub fn frequencies(&self) -> &[u64] {
        &self.frequencies
    }

    pub fn frequency(&self, c: ClassId) -> Result<u64> {
        self.frequencies
            .get(c.index())
            .copied()
            .ok_or(Error::UnknownClass(c.0))
    }

    pub fn prototype(&self, c: ClassId) -> Result<&EmbeddingVector> {
        self.prototypes
            .get(c.index())
            .ok_or(Error::UnknownClass(c.0))
    }

    pub fn prototypes(&self) -> &[EmbeddingVector] {
        &self.prototypes
    }

    /// Class ids sorted by descending frequency, ties by ascending id.
    pub fn ranked_by_frequency(&self) -> Vec<ClassId> {
        let mut ids = self.class_ids.clone();
        ids.sort_by(|a, b| {
            self.frequencies[b.index()]
                .cmp(&self.frequencies[a.index()])
                .then(a.cmp(b))
        });
        ids
    }

    /// Writes `<stem>.json` and `<stem>.embf` (prototypes on both sides).
    pub fn save(&self, json_path: impl AsRef<Path>) -> Result<()> {
        let json_path = json_path.as_ref();
        let embf_path = json_path.with_extension("embf");
        let ids: Vec<String> = self
            .class_ids
            .iter()
            .map(|c| format!("class-{}", c.0))
            .collect();
        let space = EmbeddingSpace::new(self.prototypes.clone(), self.prototypes.clone(), ids)?;
        io::write_embf(&embf_path, &space)?;
        let file = CatalogFile {
            spec: self.spec.clone(),
            class_ids: self.class_ids.clone(),
            frequencies: self.frequencies.clone(),
            prototypes: PathBuf::from(embf_path.file_name().expect("file name")),
        };
        fs::write(json_path, serde_json::to_vec_pretty(&file)?)?;
        Ok(())
    }

    /// Loads a catalog written by [`save`](Self::save). Prototypes come back
    /// with f32 precision.
    pub fn load(json_path: impl AsRef<Path>) -> Result<ClassCatalog> {
        let json_path = json_path.as_ref();
        let file: CatalogFile = serde_json::from_slice(&fs::read(json_path)?)?;
        let embf = json_path
            .parent()
            .unwrap_or_else(|| Path::new("."))
            .join(&file.prototypes);
        let space = io::read_embf(embf)?;
        let n = file.class_ids.len();
        if space.len() != n || file.frequencies.len() != n {
            return Err(Error::Format(format!(
                "catalog lists {n} classes but prototypes/frequencies disagree"
            )));
        }
        if space.dim() != file.spec.dim {
            return Err(Error::DimensionMismatch {
                expected: file.spec.dim,
                found: space.dim(),
            });
        }
        if file
            .class_ids
            .iter()
            .enumerate()
            .any(|(i, c)| c.index() != i)
        {
            return Err(Error::Format("class ids must be 0..n in order".into()));
        }
        Ok(ClassCatalog {
            spec: file.spec,
            class_ids: file.class_ids,
            prototypes: space.image().to_vec(),
            frequencies: file.frequencies,
        })
    }
}

/// One image-text query pair described by the classes in each side's context.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PairSpec {
    pub id: String,
    pub image_classes: Vec<ClassId>,
    pub text_classes: Vec<ClassId>,
}

impl PairSpec {
    pub fn benign(id: impl Into<String>, classes: Vec<ClassId>) -> Self {
        PairSpec {
            id: id.into(),
            image_classes: classes.clone(),
            text_classes: classes,
        }
    }

    pub fn classes(&self, side: Side) -> &[ClassId] {
        match side {
            Side::Image => &self.image_classes,
            Side::Text => &self.text_classes,
        }
    }
}

/// A single-side item to encode.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CorpusItem {
    pub id: String,
    pub classes: Vec<ClassId>,
}

/// The provider's original encoder over a catalog.
#[derive(Debug, Clone, Copy)]
pub struct Encoder<'a> {
    catalog: &'a ClassCatalog,
    noise_sigma: f64,
    seed: u64,
}

impl<'a> Encoder<'a> {
    pub fn new(catalog: &'a ClassCatalog, noise_sigma: f64, seed: u64) -> Self {
        Encoder {
            catalog,
            noise_sigma,
            seed,
        }
    }

    /// Uses the catalog's own noise level and seed.
    pub fn for_catalog(catalog: &'a ClassCatalog) -> Self {
        Self::new(catalog, catalog.spec.noise_sigma, catalog.spec.seed)
    }

    pub fn catalog(&self) -> &'a ClassCatalog {
        self.catalog
    }

    pub fn dim(&self) -> usize {
        self.catalog.dim()
    }

    /// Un-normalized latent content of an item: prototype mean plus its noise.
    pub fn content(&self, id: &str, side: Side, classes: &[ClassId]) -> Result<Vec<f64>> {
        if classes.is_empty() {
            return Err(Error::InvalidConfig(format!("item {id:?} has no classes")));
        }
        let d = self.dim();
        let mut acc = vec![0.0; d];
        for c in classes {
            let p = self.catalog.prototype(*c)?;
            for (a, x) in acc.iter_mut().zip(p.values()) {
                *a += x;
            }
        }
        let inv = 1.0 / classes.len() as f64;
        acc.iter_mut().for_each(|a| *a *= inv);
        if self.noise_sigma > 0.0 {
            let mut rng = SeededRng::new(mix(mix_bytes(self.seed, id.as_bytes()), side.tag()));
            let scale = self.noise_sigma / (d as f64).sqrt();
            for a in acc.iter_mut() {
                *a += rng.gaussian() * scale;
            }
        }
        Ok(acc)
    }

    pub fn embed(&self, id: &str, side: Side, classes: &[ClassId]) -> Result<EmbeddingVector> {
        Ok(EmbeddingVector::from_raw(normalize(
            &self.content(id, side, classes)?,
        )?))
    }

    /// Original embedding space for a list of query pairs.
    pub fn embed_pairs(&self, pairs: &[PairSpec]) -> Result<EmbeddingSpace> {
        let encoded: Vec<(EmbeddingVector, EmbeddingVector)> = pairs
            .par_iter()
            .map(|p| {
                Ok((
                    self.embed(&p.id, Side::Image, &p.image_classes)?,
                    self.embed(&p.id, Side::Text, &p.text_classes)?,
                ))
            })
            .collect::<Result<_>>()?;
        let (image, text) = encoded.into_iter().unzip();
        EmbeddingSpace::new(image, text, pairs.iter().map(|p| p.id.clone()).collect())
    }
}

/// Encodes single-side items with the given noise level and seed.
pub fn embed_corpus(
    catalog: &ClassCatalog,
    items: &[CorpusItem],
    side: Side,
    noise_sigma: f64,
    seed: u64,
) -> Result<Vec<EmbeddingVector>> {
    let enc = Encoder::new(catalog, noise_sigma, seed);
    items
        .par_iter()
        .map(|it| enc.embed(&it.id, side, &it.classes))
        .collect()
}

/// Samples `n` matched (benign) pairs whose contexts hold 1..=`max_classes`
/// distinct classes drawn in proportion to catalog frequency.
pub fn sample_benign_pairs(
    catalog: &ClassCatalog,
    n: usize,
    max_classes: usize,
    id_prefix: &str,
    seed: u64,
) -> Result<Vec<PairSpec>> {
    let max_classes = max_classes.min(catalog.len());
    if max_classes == 0 {
        return Err(Error::InsufficientClasses {
            needed: 1,
            available: catalog.len(),
        });
    }
    let weights: Vec<f64> = catalog.frequencies.iter().map(|&f| f as f64).collect();
    let cum = cumulative_weights(&weights);
    let mut rng = SeededRng::new(seed);
    let width = n.to_string().len().max(4);
    Ok((0..n)
        .map(|i| {
            let size = rng.range_inclusive(1, max_classes);
            let mut classes: Vec<ClassId> = Vec::with_capacity(size);
            while classes.len() < size {
                let c = ClassId(rng.weighted_index(&cum) as u32);
                if !classes.contains(&c) {
                    classes.push(c);
                }
            }
            classes.sort_unstable();
            PairSpec::benign(format!("{id_prefix}-{i:0width$}"), classes)
        })
        .collect())
}
