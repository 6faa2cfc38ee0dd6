//! Embedding vectors, paired image/text embedding spaces and the similarity
//! measures used throughout verification.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::DenseMatrix;

/// Norms below this are treated as zero.
pub const ZERO_NORM: f64 = 1e-30;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct EmbeddingVector(Vec<f64>);

impl EmbeddingVector {
    /// Checked constructor: at least two finite coordinates.
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if values.len() < 2 {
            return Err(Error::InvalidConfig(format!(
                "embedding dimension must be >= 2, got {}",
                values.len()
            )));
        }
        if values.iter().any(|x| !x.is_finite()) {
            return Err(Error::NonFinite("embedding"));
        }
        Ok(EmbeddingVector(values))
    }

    pub(crate) fn from_raw(values: Vec<f64>) -> Self {
        EmbeddingVector(values)
    }

    pub fn values(&self) -> &[f64] {
        &self.0
    }

    pub fn into_values(self) -> Vec<f64> {
        self.0
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn norm(&self) -> f64 {
        norm(&self.0)
    }

    pub fn normalize(&self) -> Result<EmbeddingVector> {
        normalize(&self.0).map(EmbeddingVector)
    }

    pub fn is_unit(&self, tol: f64) -> bool {
        (self.norm() - 1.0).abs() <= tol
    }
}

impl From<EmbeddingVector> for Vec<f64> {
    fn from(v: EmbeddingVector) -> Self {
        v.0
    }
}

/// Neumaier-compensated sum. Near-correctly rounded, so reordering the
/// terms (e.g. by a coordinate permutation) changes the result by at most
/// an ulp or so.
pub fn compensated_sum(terms: impl IntoIterator<Item = f64>) -> f64 {
    let (mut sum, mut comp) = (0.0f64, 0.0f64);
    for x in terms {
        let t = sum + x;
        if sum.abs() >= x.abs() {
            comp += (sum - t) + x;
        } else {
            comp += (x - t) + sum;
        }
        sum = t;
    }
    sum + comp
}

pub fn dot(u: &[f64], v: &[f64]) -> f64 {
    compensated_sum(u.iter().zip(v).map(|(a, b)| a * b))
}

pub fn norm(v: &[f64]) -> f64 {
    dot(v, v).sqrt()
}

pub fn normalize(v: &[f64]) -> Result<Vec<f64>> {
    let n = norm(v);
    if !(n >= ZERO_NORM) {
        return Err(Error::ZeroVector);
    }
    Ok(v.iter().map(|x| x / n).collect())
}

fn check_pair(u: &[f64], v: &[f64]) -> Result<(f64, f64)> {
    if u.len() != v.len() {
        return Err(Error::DimensionMismatch {
            expected: u.len(),
            found: v.len(),
        });
    }
    let (nu, nv) = (norm(u), norm(v));
    if !(nu >= ZERO_NORM && nv >= ZERO_NORM) {
        return Err(Error::ZeroVector);
    }
    Ok((nu, nv))
}

/// Cosine similarity, clamped to `[-1, 1]`.
pub fn cosine(u: &[f64], v: &[f64]) -> Result<f64> {
    let (nu, nv) = check_pair(u, v)?;
    Ok((dot(u, v) / (nu * nv)).clamp(-1.0, 1.0))
}

/// `|| u/|u| - v/|v| ||²`, evaluated directly rather than through the cosine.
pub fn l2_sq_normalized(u: &[f64], v: &[f64]) -> Result<f64> {
    let (nu, nv) = check_pair(u, v)?;
    Ok(compensated_sum(u.iter().zip(v).map(|(a, b)| {
        let d = a / nu - b / nv;
        d * d
    })))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Side {
    Image,
    Text,
}

impl Side {
    pub fn tag(self) -> u64 {
        match self {
            Side::Image => 0,
            Side::Text => 1,
        }
    }
}

/// An ordered set of paired image-side / text-side vectors with stable ids.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingSpace {
    image: Vec<EmbeddingVector>,
    text: Vec<EmbeddingVector>,
    pair_ids: Vec<String>,
    index: HashMap<String, usize>,
}

impl EmbeddingSpace {
    pub fn new(
        image: Vec<EmbeddingVector>,
        text: Vec<EmbeddingVector>,
        pair_ids: Vec<String>,
    ) -> Result<Self> {
        let n = pair_ids.len();
        if n == 0 {
            return Err(Error::EmptySpace);
        }
        for len in [image.len(), text.len()] {
            if len != n {
                return Err(Error::DimensionMismatch {
                    expected: n,
                    found: len,
                });
            }
        }
        let d = image[0].dim();
        if let Some(v) = image.iter().chain(&text).find(|v| v.dim() != d) {
            return Err(Error::DimensionMismatch {
                expected: d,
                found: v.dim(),
            });
        }
        let mut index = HashMap::with_capacity(n);
        for (i, id) in pair_ids.iter().enumerate() {
            if index.insert(id.clone(), i).is_some() {
                return Err(Error::DuplicateId(id.clone()));
            }
        }
        Ok(EmbeddingSpace {
            image,
            text,
            pair_ids,
            index,
        })
    }

    /// Builds a space from raw coordinate rows.
    pub fn from_rows(
        image: Vec<Vec<f64>>,
        text: Vec<Vec<f64>>,
        pair_ids: Vec<String>,
    ) -> Result<Self> {
        let wrap = |rows: Vec<Vec<f64>>| -> Result<Vec<EmbeddingVector>> {
            rows.into_iter().map(EmbeddingVector::new).collect()
        };
        Self::new(wrap(image)?, wrap(text)?, pair_ids)
    }

    pub fn len(&self) -> usize {
        self.pair_ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pair_ids.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.image[0].dim()
    }

    pub fn image(&self) -> &[EmbeddingVector] {
        &self.image
    }

    pub fn text(&self) -> &[EmbeddingVector] {
        &self.text
    }

    pub fn side(&self, side: Side) -> &[EmbeddingVector] {
        match side {
            Side::Image => &self.image,
            Side::Text => &self.text,
        }
    }

    pub fn pair_ids(&self) -> &[String] {
        &self.pair_ids
    }

    pub fn position(&self, id: &str) -> Result<usize> {
        self.index
            .get(id)
            .copied()
            .ok_or_else(|| Error::UnknownPairId(id.to_string()))
    }

    pub fn contains(&self, id: &str) -> bool {
        self.index.contains_key(id)
    }

    pub fn pair(&self, id: &str) -> Result<(&EmbeddingVector, &EmbeddingVector)> {
        let i = self.position(id)?;
        Ok((&self.image[i], &self.text[i]))
    }

    /// Keeps only the listed pairs, in the listed order.
    pub fn subset(&self, ids: &[String]) -> Result<EmbeddingSpace> {
        let mut image = Vec::with_capacity(ids.len());
        let mut text = Vec::with_capacity(ids.len());
        for id in ids {
            let i = self.position(id)?;
            image.push(self.image[i].clone());
            text.push(self.text[i].clone());
        }
        EmbeddingSpace::new(image, text, ids.to_vec())
    }

    /// Applies `f` to every vector on both sides, keeping ids.
    pub fn try_map(
        &self,
        f: impl Fn(&EmbeddingVector) -> Result<EmbeddingVector>,
    ) -> Result<EmbeddingSpace> {
        let image = self.image.iter().map(&f).collect::<Result<Vec<_>>>()?;
        let text = self.text.iter().map(&f).collect::<Result<Vec<_>>>()?;
        EmbeddingSpace::new(image, text, self.pair_ids.clone())
    }

    /// `d x n` matrix whose columns are the vectors of one side.
    pub fn side_matrix(&self, side: Side) -> DenseMatrix {
        let cols: Vec<&[f64]> = self.side(side).iter().map(|v| v.values()).collect();
        DenseMatrix::from_columns(&cols).expect("space vectors share one dimension")
    }

    /// Largest deviation from unit norm over all vectors.
    pub fn max_norm_error(&self) -> f64 {
        self.image
            .iter()
            .chain(&self.text)
            .map(|v| (v.norm() - 1.0).abs())
            .fold(0.0, f64::max)
    }
}
