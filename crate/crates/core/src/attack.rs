//! Stealer simulation: surrogate extraction from a served embedding space and
//! similarity-preserving post-processing of the stolen space.
//!
//! The stealer's own encoder is modeled as a fixed random feature map
//! `x = c P` from an item's latent content `c` (length `d`) to `d_in`
//! features, and the surrogate is a linear map `M` fitted so that `x M`
//! matches the embeddings returned by the victim. Both modalities are pooled
//! into one least-squares problem, solved with Adam.

use std::collections::HashSet;
use std::io::Write;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::adam::Adam;
use crate::corpus::{sample_benign_pairs, ClassId, Encoder, PairSpec};
use crate::embedding::{normalize, EmbeddingSpace, EmbeddingVector, Side};
use crate::error::{Error, Result};
use crate::linalg::DenseMatrix;
use crate::rng::{mix, SeededRng};
use crate::transform::{apply_transform, TransformMatrix};
use crate::trigger::TriggerSet;
use crate::verify::{
    identify_user, verify, DistributionCheck, Identification, Thresholds, UserRegistry,
    VerificationReport,
};

/// Reports whose trigger-pair coverage falls below this are flagged.
pub const LOW_COVERAGE: f64 = 0.5;
/// Largest context drawn for duplicate-set queries.
pub const DUPLICATE_MAX_CLASSES: usize = 3;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SurrogateConfig {
    pub epochs: usize,
    /// Peak Adam rate; the rate decays along a half cosine to zero.
    pub learning_rate: f64,
    /// Stealer feature width; `None` means twice the embedding dimension.
    #[serde(default)]
    pub input_dim: Option<usize>,
    #[serde(default = "default_init_scale")]
    pub init_scale: f64,
    #[serde(default)]
    pub seed: u64,
}

fn default_init_scale() -> f64 {
    0.01
}

impl Default for SurrogateConfig {
    fn default() -> Self {
        SurrogateConfig {
            epochs: 5000,
            learning_rate: 0.01,
            input_dim: None,
            init_scale: default_init_scale(),
            seed: 0,
        }
    }
}

impl SurrogateConfig {
    pub fn input_dim_for(&self, d: usize) -> usize {
        self.input_dim.unwrap_or(2 * d)
    }
}

/// Fixed random feature map standing in for the stealer's own encoder.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StealerEncoder {
    /// `d × d_in`, Gaussian entries with std `1/sqrt(d)`.
    pub projection: DenseMatrix,
}

impl StealerEncoder {
    pub fn new(d: usize, d_in: usize, seed: u64) -> Result<Self> {
        let mut rng = SeededRng::new(seed);
        let projection = DenseMatrix::from_row_major(
            d,
            d_in,
            rng.gaussian_vec(d * d_in, 1.0 / (d as f64).sqrt()),
        )?;
        Ok(StealerEncoder { projection })
    }

    pub fn input_dim(&self) -> usize {
        self.projection.cols()
    }

    fn project(&self, content: &[f64]) -> Vec<f64> {
        let p = &self.projection;
        let mut out = vec![0.0; p.cols()];
        for (k, c) in content.iter().enumerate() {
            for (o, x) in out.iter_mut().zip(p.row(k)) {
                *o += c * x;
            }
        }
        out
    }

    /// Feature rows for both sides of `pairs` (image block, text block).
    pub fn features(&self, encoder: &Encoder<'_>, pairs: &[PairSpec]) -> Result<PooledFeatures> {
        if encoder.dim() != self.projection.rows() {
            return Err(Error::DimensionMismatch {
                expected: self.projection.rows(),
                found: encoder.dim(),
            });
        }
        let rows: Vec<(Vec<f64>, Vec<f64>)> = pairs
            .par_iter()
            .map(|p| {
                Ok((
                    self.project(&encoder.content(&p.id, Side::Image, &p.image_classes)?),
                    self.project(&encoder.content(&p.id, Side::Text, &p.text_classes)?),
                ))
            })
            .collect::<Result<_>>()?;
        let (image, text): (Vec<_>, Vec<_>) = rows.into_iter().unzip();
        Ok(PooledFeatures {
            image: DenseMatrix::from_rows(&image)?,
            text: DenseMatrix::from_rows(&text)?,
        })
    }
}

/// Stealer features for `n` pairs, one row per item.
#[derive(Debug, Clone, PartialEq)]
pub struct PooledFeatures {
    pub image: DenseMatrix,
    pub text: DenseMatrix,
}

impl PooledFeatures {
    pub fn len(&self) -> usize {
        self.image.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.image.rows() == 0
    }

    fn stacked(&self) -> Result<DenseMatrix> {
        let mut rows: Vec<Vec<f64>> = (0..self.image.rows())
            .map(|r| self.image.row(r).to_vec())
            .collect();
        rows.extend((0..self.text.rows()).map(|r| self.text.row(r).to_vec()));
        DenseMatrix::from_rows(&rows)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SurrogateModel {
    /// `d_in × d` trained map.
    pub mapping: DenseMatrix,
    pub encoder: StealerEncoder,
    /// Mean squared error per row before each epoch, then after the last.
    pub training_log: Vec<f64>,
}

impl SurrogateModel {
    pub fn final_mse(&self) -> f64 {
        *self.training_log.last().expect("log holds the initial MSE")
    }

    pub fn output_dim(&self) -> usize {
        self.mapping.cols()
    }

    /// Raw (un-normalized) output for a feature row.
    pub fn predict(&self, features: &[f64]) -> Vec<f64> {
        let m = &self.mapping;
        let mut out = vec![0.0; m.cols()];
        for (k, f) in features.iter().enumerate() {
            for (o, x) in out.iter_mut().zip(m.row(k)) {
                *o += f * x;
            }
        }
        out
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string(self)?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        Ok(serde_json::from_str(s)?)
    }
}

/// Fits `M` minimizing `mean_i |f_i M - y_i|²` over the rows of `features`
/// and `targets`. Returns the map and the MSE log.
pub fn fit_mapping(
    features: &DenseMatrix,
    targets: &DenseMatrix,
    cfg: &SurrogateConfig,
) -> Result<(DenseMatrix, Vec<f64>)> {
    let n = features.rows();
    if n == 0 {
        return Err(Error::EmptySpace);
    }
    if targets.rows() != n {
        return Err(Error::DimensionMismatch {
            expected: n,
            found: targets.rows(),
        });
    }
    if !(cfg.learning_rate > 0.0 && cfg.learning_rate.is_finite()) {
        return Err(Error::InvalidConfig("learning_rate must be > 0".into()));
    }
    let (d_in, d) = (features.cols(), targets.cols());
    // mean_i |f_i M - y_i|² = tr(Mᵀ G M) - 2 tr(Mᵀ H) + |Y|²/n
    let ft = features.transpose();
    let g = ft.matmul(features)?.scale(1.0 / n as f64);
    let h = ft.matmul(targets)?.scale(1.0 / n as f64);
    let y2 = targets.frobenius_sq() / n as f64;

    let mut rng = SeededRng::new(cfg.seed);
    let mut m = DenseMatrix::from_row_major(d_in, d, rng.gaussian_vec(d_in * d, cfg.init_scale))?;
    let mse_and_grad = |m: &DenseMatrix| -> Result<(f64, DenseMatrix)> {
        let gm = g.matmul(m)?;
        let mut mse = y2;
        for ((x, a), b) in m.entries().iter().zip(gm.entries()).zip(h.entries()) {
            mse += x * (a - 2.0 * b);
        }
        Ok((mse.max(0.0), gm.sub(&h)?.scale(2.0)))
    };

    let mut log = Vec::with_capacity(cfg.epochs + 1);
    let mut adam = Adam::new(d_in * d, cfg.learning_rate, 0.9, 0.999, 1e-8);
    let mut params = m.clone().into_entries();
    for epoch in 1..=cfg.epochs {
        let (mse, grad) = mse_and_grad(&m)?;
        if !mse.is_finite() || !grad.is_finite() {
            return Err(Error::NonFiniteLoss {
                epoch,
                learning_rate: cfg.learning_rate,
            });
        }
        log.push(mse);
        let progress = (epoch - 1) as f64 / cfg.epochs as f64;
        let scale = 0.5 * (1.0 + (std::f64::consts::PI * progress).cos());
        adam.step_scaled(&mut params, grad.entries(), scale);
        m = DenseMatrix::from_row_major(d_in, d, std::mem::take(&mut params)).map_err(|_| {
            Error::NonFiniteLoss {
                epoch,
                learning_rate: cfg.learning_rate,
            }
        })?;
        params = m.entries().to_vec();
    }
    let (mse, _) = mse_and_grad(&m)?;
    if !mse.is_finite() {
        return Err(Error::NonFiniteLoss {
            epoch: cfg.epochs,
            learning_rate: cfg.learning_rate,
        });
    }
    log.push(mse);
    Ok((m, log))
}

/// Trains a surrogate on victim-provided embeddings, both sides pooled.
pub fn extract_surrogate(
    inputs: &PooledFeatures,
    targets: &EmbeddingSpace,
    encoder: StealerEncoder,
    cfg: &SurrogateConfig,
) -> Result<SurrogateModel> {
    if inputs.len() != targets.len() || inputs.text.rows() != targets.len() {
        return Err(Error::DimensionMismatch {
            expected: targets.len(),
            found: inputs.len(),
        });
    }
    if inputs.image.cols() != encoder.input_dim() {
        return Err(Error::DimensionMismatch {
            expected: encoder.input_dim(),
            found: inputs.image.cols(),
        });
    }
    let mut rows: Vec<Vec<f64>> = targets
        .image()
        .iter()
        .map(|v| v.values().to_vec())
        .collect();
    rows.extend(targets.text().iter().map(|v| v.values().to_vec()));
    let y = DenseMatrix::from_rows(&rows)?;
    let (mapping, training_log) = fit_mapping(&inputs.stacked()?, &y, cfg)?;
    Ok(SurrogateModel {
        mapping,
        encoder,
        training_log,
    })
}

/// The stealer's service: item content through the feature map and the
/// trained mapping, re-normalized.
pub fn surrogate_service(
    model: &SurrogateModel,
    encoder: &Encoder<'_>,
    queries: &[PairSpec],
) -> Result<EmbeddingSpace> {
    let feats = model.encoder.features(encoder, queries)?;
    let embed = |m: &DenseMatrix, r: usize| -> Result<EmbeddingVector> {
        EmbeddingVector::new(normalize(&model.predict(m.row(r)))?)
    };
    let image = (0..feats.len())
        .map(|r| embed(&feats.image, r))
        .collect::<Result<Vec<_>>>()?;
    let text = (0..feats.len())
        .map(|r| embed(&feats.text, r))
        .collect::<Result<Vec<_>>>()?;
    EmbeddingSpace::new(image, text, queries.iter().map(|q| q.id.clone()).collect())
}

/// Cyclic shift `(e_1, ..., e_d) -> (e_d, e_1, ..., e_{d-1})` of every vector.
pub fn dimension_shift(space: &EmbeddingSpace) -> Result<EmbeddingSpace> {
    space.try_map(|v| {
        let mut out = v.values().to_vec();
        out.rotate_right(1);
        EmbeddingVector::new(out)
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AttackKind {
    /// The stealer relays the victim's outputs.
    DirectCopy,
    /// A surrogate trained on the duplicate set.
    Extraction,
    /// Surrogate outputs passed through [`dimension_shift`].
    ExtractionThenShift,
    /// Surrogate outputs passed through the identity map.
    Identity,
}

impl AttackKind {
    pub fn uses_surrogate(self) -> bool {
        !matches!(self, AttackKind::DirectCopy)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttackScenario {
    pub kind: AttackKind,
    #[serde(default = "default_duplicate_set_size")]
    pub duplicate_set_size: usize,
    #[serde(default)]
    pub surrogate: SurrogateConfig,
    /// Seeds the duplicate-set sampler and the stealer's feature map.
    #[serde(default)]
    pub seed: u64,
}

fn default_duplicate_set_size() -> usize {
    4096
}

impl AttackScenario {
    pub fn new(kind: AttackKind, seed: u64) -> Self {
        AttackScenario {
            kind,
            duplicate_set_size: default_duplicate_set_size(),
            surrogate: SurrogateConfig {
                seed: mix(seed, 3),
                ..SurrogateConfig::default()
            },
            seed,
        }
    }
}

/// Everything the provider holds about its watermarked service.
#[derive(Debug, Clone, Copy)]
pub struct Victim<'a> {
    pub encoder: Encoder<'a>,
    pub transform: &'a TransformMatrix,
    pub triggers: &'a TriggerSet,
    /// Benign pairs used for the distribution check.
    pub benign: &'a [PairSpec],
    pub thresholds: Thresholds,
}

impl Victim<'_> {
    /// What the watermarked service returns for `pairs`.
    pub fn serve(&self, pairs: &[PairSpec]) -> Result<EmbeddingSpace> {
        apply_transform(self.transform, &self.encoder.embed_pairs(pairs)?)
    }

    /// Trigger pairs followed by benign pairs.
    pub fn verification_queries(&self) -> Vec<PairSpec> {
        self.triggers
            .pairs
            .iter()
            .chain(self.benign)
            .cloned()
            .collect()
    }
}

/// Fraction of the class pairs that co-occur in some trigger context which
/// also co-occur in some duplicate-set item.
pub fn trigger_coverage(triggers: &TriggerSet, duplicates: &[PairSpec]) -> f64 {
    fn class_pairs(classes: &[ClassId], out: &mut HashSet<(ClassId, ClassId)>) {
        for (i, a) in classes.iter().enumerate() {
            for b in &classes[i + 1..] {
                out.insert((*a.min(b), *a.max(b)));
            }
        }
    }
    let mut wanted = HashSet::new();
    for p in &triggers.pairs {
        class_pairs(&p.image_classes, &mut wanted);
        class_pairs(&p.text_classes, &mut wanted);
    }
    if wanted.is_empty() {
        return 1.0;
    }
    let mut seen = HashSet::new();
    for p in duplicates {
        class_pairs(&p.image_classes, &mut seen);
        class_pairs(&p.text_classes, &mut seen);
    }
    wanted.iter().filter(|k| seen.contains(k)).count() as f64 / wanted.len() as f64
}

/// A duplicate set `D_c` of matched pairs drawn by class frequency.
pub fn duplicate_set(encoder: &Encoder<'_>, size: usize, seed: u64) -> Result<Vec<PairSpec>> {
    sample_benign_pairs(
        encoder.catalog(),
        size,
        DUPLICATE_MAX_CLASSES,
        "dup",
        mix(seed, 1),
    )
}

/// A surrogate trained against the victim, with its duplicate-set coverage.
#[derive(Debug, Clone)]
pub struct Extraction {
    pub model: SurrogateModel,
    pub coverage: f64,
}

pub fn extract_from_victim(victim: &Victim<'_>, scenario: &AttackScenario) -> Result<Extraction> {
    let dc = duplicate_set(&victim.encoder, scenario.duplicate_set_size, scenario.seed)?;
    if dc.is_empty() {
        return Err(Error::EmptySpace);
    }
    let provided = victim.serve(&dc)?;
    let d = victim.encoder.dim();
    let stealer = StealerEncoder::new(
        d,
        scenario.surrogate.input_dim_for(d),
        mix(scenario.seed, 2),
    )?;
    let feats = stealer.features(&victim.encoder, &dc)?;
    let model = extract_surrogate(&feats, &provided, stealer, &scenario.surrogate)?;
    Ok(Extraction {
        model,
        coverage: trigger_coverage(victim.triggers, &dc),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioReport {
    pub kind: AttackKind,
    pub report: VerificationReport,
    /// Trigger class-pair coverage of the duplicate set (1.0 for direct copy).
    pub coverage: f64,
    pub low_coverage: bool,
    pub notes: Vec<String>,
    pub mse_curve: Vec<f64>,
    pub identification: Option<Identification>,
}

/// Suspect space the attack produces for the verification queries.
pub fn suspect_space(
    kind: AttackKind,
    victim: &Victim<'_>,
    extraction: Option<&Extraction>,
) -> Result<EmbeddingSpace> {
    let queries = victim.verification_queries();
    if kind == AttackKind::DirectCopy {
        return victim.serve(&queries);
    }
    let ex = extraction
        .ok_or_else(|| Error::InvalidConfig(format!("{kind:?} needs a trained surrogate")))?;
    let out = surrogate_service(&ex.model, &victim.encoder, &queries)?;
    match kind {
        AttackKind::ExtractionThenShift => dimension_shift(&out),
        _ => Ok(out),
    }
}

/// Verifies the suspect space of one attack, reusing a trained surrogate.
pub fn evaluate_attack(
    kind: AttackKind,
    victim: &Victim<'_>,
    extraction: Option<&Extraction>,
    registry: Option<&UserRegistry>,
) -> Result<ScenarioReport> {
    let suspect = suspect_space(kind, victim, extraction)?;
    let original = victim.encoder.embed_pairs(&victim.verification_queries())?;
    let benign_ids: Vec<String> = victim.benign.iter().map(|p| p.id.clone()).collect();
    let report = verify(
        &suspect,
        &original,
        &victim.triggers.ids(),
        Some(DistributionCheck {
            transform: victim.transform,
            benign_ids: &benign_ids,
        }),
        &victim.thresholds,
    )?;
    let identification = match registry {
        Some(reg) => Some(identify_user(&suspect, &original, reg, &benign_ids)?),
        None => None,
    };
    let (coverage, mse_curve) = match (kind.uses_surrogate(), extraction) {
        (true, Some(ex)) => (ex.coverage, ex.model.training_log.clone()),
        _ => (1.0, Vec::new()),
    };
    let low_coverage = coverage < LOW_COVERAGE;
    let mut notes = Vec::new();
    if low_coverage {
        notes.push(format!(
            "low trigger coverage in the duplicate set ({:.1}% of trigger class pairs seen); \
             the watermark may not be inherited and detection can fall below thresholds",
            100.0 * coverage
        ));
    }
    if kind == AttackKind::ExtractionThenShift {
        notes.push(
            "suspect space is dimension-shifted; the distribution check is expected to fail".into(),
        );
    }
    Ok(ScenarioReport {
        kind,
        report,
        coverage,
        low_coverage,
        notes,
        mse_curve,
        identification,
    })
}

/// Query, optionally extract and shift, then verify.
pub fn run_scenario(
    scenario: &AttackScenario,
    victim: &Victim<'_>,
    registry: Option<&UserRegistry>,
) -> Result<ScenarioReport> {
    let extraction = if scenario.kind.uses_surrogate() {
        Some(extract_from_victim(victim, scenario)?)
    } else {
        None
    };
    evaluate_attack(scenario.kind, victim, extraction.as_ref(), registry)
}

/// CSV of `epoch,mse`.
pub fn write_mse_csv(out: impl Write, curve: &[f64]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    let err = |e: csv::Error| Error::Format(format!("csv: {e}"));
    w.write_record(["epoch", "mse"]).map_err(err)?;
    for (i, m) in curve.iter().enumerate() {
        w.write_record([i.to_string(), m.to_string()])
            .map_err(err)?;
    }
    w.flush()?;
    Ok(())
}
