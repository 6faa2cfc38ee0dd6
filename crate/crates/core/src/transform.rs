//! Training, applying and inverting the near-orthogonal watermark transform.
//!
//! The transform `W` minimizes `||W V - W T||²_F` over the trigger image
//! embeddings `V` and text embeddings `T` (columns), which pulls each shuffled
//! trigger pair together. Each epoch takes one Adam step on that objective and
//! then, unless disabled, one retraction step
//!
//! ```text
//! W <- (1 + beta) W - beta (W Wᵀ) W
//! ```
//!
//! which drives the singular values of `W` back towards 1. Disabling the
//! retraction gives the unconstrained "random" baseline.

use serde::{Deserialize, Serialize};

use crate::adam::Adam;
use crate::embedding::{normalize, EmbeddingSpace, EmbeddingVector};
use crate::error::{Error, Result};
use crate::linalg::DenseMatrix;
use crate::rng::SeededRng;

/// Retraction step used to orthogonalize the random initialization.
pub const INIT_RETRACTION_BETA: f64 = 0.5;
pub const INIT_RETRACTION_STEPS: usize = 32;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub epochs: usize,
    pub beta: f64,
    #[serde(default = "default_beta1")]
    pub adam_beta1: f64,
    #[serde(default = "default_beta2")]
    pub adam_beta2: f64,
    #[serde(default = "default_eps")]
    pub adam_eps: f64,
    #[serde(default = "default_true")]
    pub retraction_enabled: bool,
    #[serde(default)]
    pub seed: u64,
}

fn default_beta1() -> f64 {
    0.9
}
fn default_beta2() -> f64 {
    0.999
}
fn default_eps() -> f64 {
    1e-8
}
fn default_true() -> bool {
    true
}

impl TrainConfig {
    /// Desk-scale preset: 128 triggers, 5000 epochs, learning rate 1e-3.
    pub fn desk() -> Self {
        TrainConfig {
            learning_rate: 1e-3,
            epochs: 5000,
            beta: 0.01,
            adam_beta1: 0.9,
            adam_beta2: 0.999,
            adam_eps: 1e-8,
            retraction_enabled: true,
            seed: 0,
        }
    }

    /// Full-scale preset: 1024 triggers, 50000 epochs, learning rate 1e-5.
    pub fn full() -> Self {
        TrainConfig {
            learning_rate: 1e-5,
            epochs: 50_000,
            ..Self::desk()
        }
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::InvalidConfig("learning_rate must be > 0".into()));
        }
        if !(self.beta > 0.0 && self.beta < 1.0) {
            return Err(Error::InvalidConfig("beta must lie in (0, 1)".into()));
        }
        if !(0.0..1.0).contains(&self.adam_beta1) || !(0.0..1.0).contains(&self.adam_beta2) {
            return Err(Error::InvalidConfig("adam betas must lie in [0, 1)".into()));
        }
        if !(self.adam_eps > 0.0) {
            return Err(Error::InvalidConfig("adam_eps must be > 0".into()));
        }
        Ok(())
    }
}

/// Sidecar metadata stored next to a WMT1 matrix file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TransformMeta {
    pub beta: f64,
    pub epochs: usize,
    pub learning_rate: f64,
    pub retraction_enabled: bool,
    pub final_loss: Option<f64>,
    pub orthogonality_residual: f64,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TransformMatrix {
    pub w: DenseMatrix,
    pub beta: f64,
    pub trained_epochs: usize,
    pub learning_rate: f64,
    pub retraction_enabled: bool,
    pub seed: u64,
    /// Objective before the first epoch; `None` for an untrained matrix.
    pub initial_loss: Option<f64>,
    pub final_loss: Option<f64>,
    pub orthogonality_residual: f64,
}

impl TransformMatrix {
    /// Wraps a bare matrix (e.g. loaded from disk or hand-built).
    pub fn from_matrix(w: DenseMatrix) -> Result<Self> {
        if !w.is_square() {
            return Err(Error::NotSquare {
                rows: w.rows(),
                cols: w.cols(),
            });
        }
        let residual = w.orthogonality_residual();
        Ok(TransformMatrix {
            w,
            beta: 0.0,
            trained_epochs: 0,
            learning_rate: 0.0,
            retraction_enabled: false,
            seed: 0,
            initial_loss: None,
            final_loss: None,
            orthogonality_residual: residual,
        })
    }

    pub fn with_meta(w: DenseMatrix, meta: &TransformMeta) -> Result<Self> {
        let mut t = Self::from_matrix(w)?;
        t.beta = meta.beta;
        t.trained_epochs = meta.epochs;
        t.learning_rate = meta.learning_rate;
        t.retraction_enabled = meta.retraction_enabled;
        t.final_loss = meta.final_loss;
        t.seed = meta.seed;
        Ok(t)
    }

    pub fn dim(&self) -> usize {
        self.w.rows()
    }

    pub fn matrix(&self) -> &DenseMatrix {
        &self.w
    }

    pub fn singular_values(&self) -> Vec<f64> {
        self.w.singular_values()
    }

    pub fn meta(&self) -> TransformMeta {
        TransformMeta {
            beta: self.beta,
            epochs: self.trained_epochs,
            learning_rate: self.learning_rate,
            retraction_enabled: self.retraction_enabled,
            final_loss: self.final_loss,
            orthogonality_residual: self.orthogonality_residual,
            seed: self.seed,
        }
    }
}

/// Random start near the orthogonal manifold.
///
/// Entries are Gaussian with std `1/(2 sqrt(d))`, which keeps every singular
/// value below `sqrt(3)` with overwhelming probability, followed by
/// [`INIT_RETRACTION_STEPS`] retraction steps with
/// [`INIT_RETRACTION_BETA`]. At that step size the retraction is the
/// Newton-Schulz polar iteration and lands on the orthogonal polar factor.
pub fn init_transform(d: usize, seed: u64) -> Result<TransformMatrix> {
    if d < 2 {
        return Err(Error::InvalidConfig(format!(
            "dimension must be >= 2, got {d}"
        )));
    }
    let mut rng = SeededRng::new(seed);
    let scale = 0.5 / (d as f64).sqrt();
    let mut w = DenseMatrix::from_row_major(d, d, rng.gaussian_vec(d * d, scale))?;
    for _ in 0..INIT_RETRACTION_STEPS {
        w = retract(&w, INIT_RETRACTION_BETA);
    }
    let mut t = TransformMatrix::from_matrix(w)?;
    t.seed = seed;
    Ok(t)
}

fn check_align_shapes(w: &DenseMatrix, v: &DenseMatrix, t: &DenseMatrix) -> Result<()> {
    if !w.is_square() {
        return Err(Error::NotSquare {
            rows: w.rows(),
            cols: w.cols(),
        });
    }
    for m in [v, t] {
        if m.rows() != w.cols() {
            return Err(Error::DimensionMismatch {
                expected: w.cols(),
                found: m.rows(),
            });
        }
    }
    if v.cols() != t.cols() {
        return Err(Error::DimensionMismatch {
            expected: v.cols(),
            found: t.cols(),
        });
    }
    Ok(())
}

/// `||W (V - T)||²_F`.
pub fn loss_align(w: &DenseMatrix, v: &DenseMatrix, t: &DenseMatrix) -> Result<f64> {
    check_align_shapes(w, v, t)?;
    Ok(w.matmul(&v.sub(t)?)?.frobenius_sq())
}

/// Analytic gradient `2 W D Dᵀ` with `D = V - T`.
pub fn grad_align(w: &DenseMatrix, v: &DenseMatrix, t: &DenseMatrix) -> Result<DenseMatrix> {
    check_align_shapes(w, v, t)?;
    let dd = v.sub(t)?.gram_rows();
    Ok(w.matmul(&dd)?.scale(2.0))
}

fn retract(w: &DenseMatrix, beta: f64) -> DenseMatrix {
    let wwt_w = w
        .gram_rows()
        .matmul(w)
        .expect("square matrix products are well-formed");
    w.scale(1.0 + beta)
        .sub(&wwt_w.scale(beta))
        .expect("shapes agree")
}

/// One step of `W <- (1 + beta) W - beta (W Wᵀ) W`.
pub fn orthogonal_retraction(w: &TransformMatrix, beta: f64) -> Result<TransformMatrix> {
    if !(beta > 0.0 && beta < 1.0) {
        return Err(Error::InvalidConfig("beta must lie in (0, 1)".into()));
    }
    let next = retract(&w.w, beta);
    let mut out = w.clone();
    out.orthogonality_residual = next.orthogonality_residual();
    out.w = next;
    Ok(out)
}

/// Trains a watermark transform on trigger embeddings (columns of `v`, `t`).
pub fn train_transform(
    v: &DenseMatrix,
    t: &DenseMatrix,
    cfg: &TrainConfig,
) -> Result<TransformMatrix> {
    train_transform_observed(v, t, cfg, |_, _, _| {})
}

/// Like [`train_transform`], calling `observe(epoch, w, loss)` with the
/// initial matrix (epoch 0) and after every epoch. `loss` is the objective
/// at the matrix passed in.
pub fn train_transform_observed(
    v: &DenseMatrix,
    t: &DenseMatrix,
    cfg: &TrainConfig,
    mut observe: impl FnMut(usize, &DenseMatrix, f64),
) -> Result<TransformMatrix> {
    cfg.validate()?;
    let d = v.rows();
    let init = init_transform(d, cfg.seed)?;
    check_align_shapes(&init.w, v, t)?;
    if v.cols() < 2 {
        return Err(Error::InvalidConfig(format!(
            "need at least 2 trigger pairs, got {}",
            v.cols()
        )));
    }
    for m in [v, t] {
        for c in 0..m.cols() {
            let n = crate::embedding::norm(&m.column(c));
            if (n - 1.0).abs() > 1e-6 {
                return Err(Error::InvalidConfig(format!(
                    "trigger embedding column {c} has norm {n}, expected unit norm"
                )));
            }
        }
    }

    // loss(W) = tr(W S Wᵀ) with S = D Dᵀ, gradient 2 W S.
    let s = v.sub(t)?.gram_rows();
    let loss_and_grad = |w: &DenseMatrix| -> (f64, DenseMatrix) {
        let ws = w.matmul(&s).expect("square");
        let loss: f64 = ws
            .entries()
            .iter()
            .zip(w.entries())
            .map(|(a, b)| a * b)
            .sum();
        (loss, ws.scale(2.0))
    };

    let mut w = init.w.clone();
    let (initial_loss, _) = loss_and_grad(&w);
    observe(0, &w, initial_loss);
    let mut adam = Adam::new(
        d * d,
        cfg.learning_rate,
        cfg.adam_beta1,
        cfg.adam_beta2,
        cfg.adam_eps,
    );
    let mut params = w.clone().into_entries();
    for epoch in 1..=cfg.epochs {
        let (loss, grad) = loss_and_grad(&w);
        if !loss.is_finite() || !grad.is_finite() {
            return Err(Error::NonFiniteLoss {
                epoch,
                learning_rate: cfg.learning_rate,
            });
        }
        adam.step(&mut params, grad.entries());
        w = DenseMatrix::from_row_major(d, d, std::mem::take(&mut params)).map_err(|_| {
            Error::NonFiniteLoss {
                epoch,
                learning_rate: cfg.learning_rate,
            }
        })?;
        if cfg.retraction_enabled {
            w = retract(&w, cfg.beta);
        }
        if !w.is_finite() {
            return Err(Error::NonFiniteLoss {
                epoch,
                learning_rate: cfg.learning_rate,
            });
        }
        params = w.entries().to_vec();
        if epoch == cfg.epochs {
            observe(epoch, &w, loss_and_grad(&w).0);
        } else {
            observe(epoch, &w, f64::NAN);
        }
    }
    let (final_loss, _) = loss_and_grad(&w);
    if !final_loss.is_finite() {
        return Err(Error::NonFiniteLoss {
            epoch: cfg.epochs,
            learning_rate: cfg.learning_rate,
        });
    }
    Ok(TransformMatrix {
        orthogonality_residual: w.orthogonality_residual(),
        w,
        beta: cfg.beta,
        trained_epochs: cfg.epochs,
        learning_rate: cfg.learning_rate,
        retraction_enabled: cfg.retraction_enabled,
        seed: cfg.seed,
        initial_loss: Some(initial_loss),
        final_loss: Some(final_loss),
    })
}

fn transform_vector(w: &DenseMatrix, v: &EmbeddingVector) -> Result<EmbeddingVector> {
    EmbeddingVector::new(normalize(&w.matvec_slice(v.values())?)?)
}

/// `E_p = { W e / |W e| }` over both sides.
pub fn apply_transform(w: &TransformMatrix, space: &EmbeddingSpace) -> Result<EmbeddingSpace> {
    apply_matrix(&w.w, space)
}

/// Multiplies every vector by `m` and re-normalizes.
pub fn apply_matrix(m: &DenseMatrix, space: &EmbeddingSpace) -> Result<EmbeddingSpace> {
    if m.cols() != space.dim() {
        return Err(Error::DimensionMismatch {
            expected: m.cols(),
            found: space.dim(),
        });
    }
    space.try_map(|v| transform_vector(m, v))
}

/// Exact LU inverse of the transform (not the transpose).
pub fn invert_transform(w: &TransformMatrix) -> Result<DenseMatrix> {
    w.w.invert()
}
