//! Small dense row-major matrices in f64.
//!
//! Products accumulate strictly left to right over the inner index, so a given
//! input always produces bit-identical output.

use serde::{Deserialize, Serialize};

use crate::embedding::EmbeddingVector;
use crate::error::{Error, Result};

/// Pivot magnitude below which a matrix is treated as singular.
pub const SINGULAR_PIVOT: f64 = 1e-12;
/// Largest/smallest pivot ratio above which an inverse is flagged ill-conditioned.
pub const ILL_CONDITIONED_RATIO: f64 = 1e10;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DenseMatrix {
    rows: usize,
    cols: usize,
    entries: Vec<f64>,
}

impl DenseMatrix {
    pub fn from_row_major(rows: usize, cols: usize, entries: Vec<f64>) -> Result<Self> {
        if entries.len() != rows * cols {
            return Err(Error::DimensionMismatch {
                expected: rows * cols,
                found: entries.len(),
            });
        }
        if entries.iter().any(|x| !x.is_finite()) {
            return Err(Error::NonFinite("matrix entries"));
        }
        Ok(DenseMatrix {
            rows,
            cols,
            entries,
        })
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let cols = rows.first().map_or(0, Vec::len);
        let mut entries = Vec::with_capacity(rows.len() * cols);
        for r in rows {
            if r.len() != cols {
                return Err(Error::DimensionMismatch {
                    expected: cols,
                    found: r.len(),
                });
            }
            entries.extend_from_slice(r);
        }
        Self::from_row_major(rows.len(), cols, entries)
    }

    /// Builds a `dim x n` matrix whose columns are the given vectors.
    pub fn from_columns(columns: &[&[f64]]) -> Result<Self> {
        let rows = columns.first().map_or(0, |c| c.len());
        let n = columns.len();
        let mut m = DenseMatrix::zeros(rows, n);
        for (j, c) in columns.iter().enumerate() {
            if c.len() != rows {
                return Err(Error::DimensionMismatch {
                    expected: rows,
                    found: c.len(),
                });
            }
            for (i, x) in c.iter().enumerate() {
                m.entries[i * n + j] = *x;
            }
        }
        Ok(m)
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        DenseMatrix {
            rows,
            cols,
            entries: vec![0.0; rows * cols],
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n, n);
        for i in 0..n {
            m.entries[i * n + i] = 1.0;
        }
        m
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn is_square(&self) -> bool {
        self.rows == self.cols
    }

    pub fn entries(&self) -> &[f64] {
        &self.entries
    }

    pub fn into_entries(self) -> Vec<f64> {
        self.entries
    }

    #[inline]
    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.entries[r * self.cols + c]
    }

    #[inline]
    pub fn set(&mut self, r: usize, c: usize, v: f64) {
        self.entries[r * self.cols + c] = v;
    }

    pub fn row(&self, r: usize) -> &[f64] {
        &self.entries[r * self.cols..(r + 1) * self.cols]
    }

    pub fn column(&self, c: usize) -> Vec<f64> {
        (0..self.rows).map(|r| self.get(r, c)).collect()
    }

    pub fn transpose(&self) -> DenseMatrix {
        let mut t = DenseMatrix::zeros(self.cols, self.rows);
        for r in 0..self.rows {
            for c in 0..self.cols {
                t.entries[c * self.rows + r] = self.entries[r * self.cols + c];
            }
        }
        t
    }

    pub fn matmul(&self, other: &DenseMatrix) -> Result<DenseMatrix> {
        if self.cols != other.rows {
            return Err(Error::DimensionMismatch {
                expected: self.cols,
                found: other.rows,
            });
        }
        let (n, k_dim, m) = (self.rows, self.cols, other.cols);
        let mut out = vec![0.0; n * m];
        // i-k-j order: every out[i][j] still sums k = 0, 1, 2, ... in order.
        let a = &self.entries;
        let b = &other.entries;
        for i in 0..n {
            let out_row = &mut out[i * m..(i + 1) * m];
            for k in 0..k_dim {
                let a_ik = a[i * k_dim + k];
                let b_row = &b[k * m..(k + 1) * m];
                for (o, bj) in out_row.iter_mut().zip(b_row) {
                    *o += a_ik * bj;
                }
            }
        }
        Ok(DenseMatrix {
            rows: n,
            cols: m,
            entries: out,
        })
    }

    /// `self * selfᵀ`.
    pub fn gram_rows(&self) -> DenseMatrix {
        self.matmul(&self.transpose())
            .expect("inner dimensions agree")
    }

    pub fn matvec_slice(&self, v: &[f64]) -> Result<Vec<f64>> {
        if v.len() != self.cols {
            return Err(Error::DimensionMismatch {
                expected: self.cols,
                found: v.len(),
            });
        }
        Ok((0..self.rows)
            .map(|r| {
                let mut s = 0.0;
                for (a, b) in self.row(r).iter().zip(v) {
                    s += a * b;
                }
                s
            })
            .collect())
    }

    pub fn matvec(&self, v: &EmbeddingVector) -> Result<EmbeddingVector> {
        Ok(EmbeddingVector::from_raw(self.matvec_slice(v.values())?))
    }

    pub fn add(&self, other: &DenseMatrix) -> Result<DenseMatrix> {
        self.zip_with(other, |a, b| a + b)
    }

    pub fn sub(&self, other: &DenseMatrix) -> Result<DenseMatrix> {
        self.zip_with(other, |a, b| a - b)
    }

    fn zip_with(&self, other: &DenseMatrix, f: impl Fn(f64, f64) -> f64) -> Result<DenseMatrix> {
        if self.rows != other.rows || self.cols != other.cols {
            return Err(Error::DimensionMismatch {
                expected: self.rows * self.cols,
                found: other.rows * other.cols,
            });
        }
        Ok(DenseMatrix {
            rows: self.rows,
            cols: self.cols,
            entries: self
                .entries
                .iter()
                .zip(&other.entries)
                .map(|(a, b)| f(*a, *b))
                .collect(),
        })
    }

    pub fn scale(&self, s: f64) -> DenseMatrix {
        DenseMatrix {
            rows: self.rows,
            cols: self.cols,
            entries: self.entries.iter().map(|x| x * s).collect(),
        }
    }

    pub fn frobenius_sq(&self) -> f64 {
        self.entries.iter().map(|x| x * x).sum()
    }

    pub fn frobenius(&self) -> f64 {
        self.frobenius_sq().sqrt()
    }

    pub fn max_abs_diff(&self, other: &DenseMatrix) -> f64 {
        self.entries
            .iter()
            .zip(&other.entries)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }

    pub fn is_finite(&self) -> bool {
        self.entries.iter().all(|x| x.is_finite())
    }

    /// `||A Aᵀ - I||_F` for a square matrix.
    pub fn orthogonality_residual(&self) -> f64 {
        let mut g = self.gram_rows();
        for i in 0..g.rows {
            g.entries[i * g.cols + i] -= 1.0;
        }
        g.frobenius()
    }

    /// LU inverse with partial pivoting.
    pub fn invert(&self) -> Result<DenseMatrix> {
        let inv = self.invert_checked()?;
        if inv.ill_conditioned {
            log::warn!(
                "inverting ill-conditioned matrix (pivot ratio {:.3e})",
                inv.pivot_ratio
            );
        }
        Ok(inv.matrix)
    }

    /// Like [`invert`](Self::invert) but also reports the pivot ratio.
    pub fn invert_checked(&self) -> Result<Inverse> {
        if !self.is_square() {
            return Err(Error::NotSquare {
                rows: self.rows,
                cols: self.cols,
            });
        }
        let lu = Lu::factor(self)?;
        let n = self.rows;
        let mut inv = DenseMatrix::zeros(n, n);
        let mut e = vec![0.0; n];
        for c in 0..n {
            e.iter_mut().for_each(|x| *x = 0.0);
            e[c] = 1.0;
            let col = lu.solve(&e);
            for r in 0..n {
                inv.entries[r * n + c] = col[r];
            }
        }
        let pivot_ratio = lu.pivot_ratio();
        Ok(Inverse {
            matrix: inv,
            pivot_ratio,
            ill_conditioned: pivot_ratio > ILL_CONDITIONED_RATIO,
        })
    }

    /// Singular values in descending order (one-sided Jacobi).
    pub fn singular_values(&self) -> Vec<f64> {
        // Work on columns of Aᵀ when A is wide so the rotation count stays small.
        let a = if self.rows >= self.cols {
            self.clone()
        } else {
            self.transpose()
        };
        let (m, n) = (a.rows, a.cols);
        let mut cols: Vec<Vec<f64>> = (0..n).map(|c| a.column(c)).collect();
        for _sweep in 0..60 {
            let mut rotated = false;
            for p in 0..n {
                for q in (p + 1)..n {
                    let (mut alpha, mut beta, mut gamma) = (0.0, 0.0, 0.0);
                    for i in 0..m {
                        alpha += cols[p][i] * cols[p][i];
                        beta += cols[q][i] * cols[q][i];
                        gamma += cols[p][i] * cols[q][i];
                    }
                    if gamma.abs() <= 1e-15 * (alpha * beta).sqrt() || gamma == 0.0 {
                        continue;
                    }
                    rotated = true;
                    let zeta = (beta - alpha) / (2.0 * gamma);
                    let t = zeta.signum() / (zeta.abs() + (1.0 + zeta * zeta).sqrt());
                    let t = if zeta == 0.0 { 1.0 } else { t };
                    let c = 1.0 / (1.0 + t * t).sqrt();
                    let s = c * t;
                    let (left, right) = cols.split_at_mut(q);
                    let (cp, cq) = (&mut left[p], &mut right[0]);
                    for i in 0..m {
                        let x = cp[i];
                        let y = cq[i];
                        cp[i] = c * x - s * y;
                        cq[i] = s * x + c * y;
                    }
                }
            }
            if !rotated {
                break;
            }
        }
        let mut sv: Vec<f64> = cols
            .iter()
            .map(|c| c.iter().map(|x| x * x).sum::<f64>().sqrt())
            .collect();
        sv.sort_by(|a, b| b.total_cmp(a));
        sv
    }
}

#[derive(Debug, Clone)]
pub struct Inverse {
    pub matrix: DenseMatrix,
    /// Largest over smallest pivot magnitude of the factorization.
    pub pivot_ratio: f64,
    pub ill_conditioned: bool,
}

/// Packed LU factors with the row permutation of partial pivoting.
struct Lu {
    n: usize,
    lu: Vec<f64>,
    perm: Vec<usize>,
}

impl Lu {
    fn factor(a: &DenseMatrix) -> Result<Lu> {
        let n = a.rows;
        let mut lu = a.entries.clone();
        let mut perm: Vec<usize> = (0..n).collect();
        for k in 0..n {
            let mut p = k;
            let mut best = lu[k * n + k].abs();
            for r in (k + 1)..n {
                let v = lu[r * n + k].abs();
                if v > best {
                    best = v;
                    p = r;
                }
            }
            if best < SINGULAR_PIVOT {
                return Err(Error::SingularMatrix {
                    column: k,
                    pivot: best,
                });
            }
            if p != k {
                for c in 0..n {
                    lu.swap(k * n + c, p * n + c);
                }
                perm.swap(k, p);
            }
            let pivot = lu[k * n + k];
            for r in (k + 1)..n {
                let f = lu[r * n + k] / pivot;
                lu[r * n + k] = f;
                for c in (k + 1)..n {
                    lu[r * n + c] -= f * lu[k * n + c];
                }
            }
        }
        Ok(Lu { n, lu, perm })
    }

    fn solve(&self, b: &[f64]) -> Vec<f64> {
        let n = self.n;
        let mut y: Vec<f64> = self.perm.iter().map(|&p| b[p]).collect();
        for r in 0..n {
            let mut s = y[r];
            for c in 0..r {
                s -= self.lu[r * n + c] * y[c];
            }
            y[r] = s;
        }
        for r in (0..n).rev() {
            let mut s = y[r];
            for c in (r + 1)..n {
                s -= self.lu[r * n + c] * y[c];
            }
            y[r] = s / self.lu[r * n + r];
        }
        y
    }

    fn pivot_ratio(&self) -> f64 {
        let pivots = (0..self.n).map(|i| self.lu[i * self.n + i].abs());
        let (lo, hi) = pivots.fold((f64::INFINITY, 0.0f64), |(lo, hi), p| {
            (lo.min(p), hi.max(p))
        });
        hi / lo
    }
}
