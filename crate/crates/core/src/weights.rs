//! Intra-modal similarity scores and ε-stabilized row-normalized soft weights.
//!
//! Scores are `a_ij = exp(β · cos(z_i, z_j))` with a zero diagonal. Weights divide each
//! row by its off-diagonal sum plus ε, so rows sum to `S / (S + ε)` and the matrix is in
//! general not symmetric even though the scores are.
//!
//! The same two steps applied to knowledge embeddings give the knowledge weights.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::{dot, l2_normalize_rows, Matrix};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct WeightConfig {
    /// Sharpness of the exponentiated cosine.
    pub beta: f64,
    /// Added to each row sum before dividing.
    pub epsilon: f64,
}

impl Default for WeightConfig {
    fn default() -> Self {
        Self {
            beta: 1.0,
            epsilon: 1e-8,
        }
    }
}

impl WeightConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.beta > 0.0 && self.beta.is_finite()) {
            return Err(Error::invalid("beta", format!("must be > 0, got {}", self.beta)));
        }
        if !(self.epsilon > 0.0 && self.epsilon <= 1e-4) {
            return Err(Error::invalid(
                "epsilon",
                format!("must lie in (0, 1e-4], got {}", self.epsilon),
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WeightKind {
    IntraSim,
    Spatial,
    Knowledge,
    BinaryBaseline,
}

/// A `B × B` non-negative soft-weight matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct WeightMatrix {
    w: Matrix,
    kind: WeightKind,
}

impl WeightMatrix {
    /// Wraps a raw matrix after checking it is square, finite and non-negative.
    pub fn new(w: Matrix, kind: WeightKind) -> Result<Self> {
        if !w.is_square() {
            return Err(Error::shape("WeightMatrix::new", (w.rows(), w.rows()), w.shape()));
        }
        check_non_negative(&w)?;
        Ok(Self { w, kind })
    }

    pub fn kind(&self) -> WeightKind {
        self.kind
    }

    pub fn matrix(&self) -> &Matrix {
        &self.w
    }

    pub fn size(&self) -> usize {
        self.w.rows()
    }

    pub fn row(&self, i: usize) -> &[f64] {
        self.w.row(i)
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.w[(i, j)]
    }

    pub fn into_matrix(self) -> Matrix {
        self.w
    }

    /// The same weights relabelled with another kind.
    pub(crate) fn with_kind(mut self, kind: WeightKind) -> Self {
        self.kind = kind;
        self
    }
}

fn check_non_negative(a: &Matrix) -> Result<()> {
    for i in 0..a.rows() {
        for (j, &v) in a.row(i).iter().enumerate() {
            if !(v >= 0.0) || !v.is_finite() {
                return Err(Error::NegativeScore {
                    row: i,
                    col: j,
                    value: v,
                });
            }
        }
    }
    Ok(())
}

/// Similarity scores `a_ij = exp(β cos(z_i, z_j))`, `a_ii = 0`.
pub fn intra_sim_scores(z: &Matrix, cfg: &WeightConfig) -> Result<Matrix> {
    let b = z.rows();
    if b < 2 {
        return Err(Error::BatchTooSmall(b));
    }
    let (unit, _) = l2_normalize_rows(z)?;
    let mut a = Matrix::zeros(b, b);
    for i in 0..b {
        for j in (i + 1)..b {
            let c = dot(unit.row(i), unit.row(j)).clamp(-1.0, 1.0);
            let s = (cfg.beta * c).exp();
            a[(i, j)] = s;
            a[(j, i)] = s;
        }
    }
    Ok(a)
}

/// One row of [`intra_sim_scores`] from pre-normalized rows, for the streaming path.
pub fn intra_sim_score_row(unit: &Matrix, i: usize, cfg: &WeightConfig, out: &mut [f64]) {
    let zi = unit.row(i);
    for (j, o) in out.iter_mut().enumerate() {
        *o = if j == i {
            0.0
        } else {
            (cfg.beta * dot(zi, unit.row(j)).clamp(-1.0, 1.0)).exp()
        };
    }
}

/// Divides one row in place by `Σ_{k≠i} a_ik + ε` and zeroes the diagonal.
pub fn normalize_row_in_place(row: &mut [f64], i: usize, epsilon: f64) {
    row[i] = 0.0;
    let sum: f64 = row.iter().sum();
    let denom = sum + epsilon;
    row.iter_mut().for_each(|x| *x /= denom);
}

pub(crate) fn normalize_rows(a: &Matrix, epsilon: f64, kind: WeightKind) -> Result<WeightMatrix> {
    if !a.is_square() {
        return Err(Error::shape("row_normalize", (a.rows(), a.rows()), a.shape()));
    }
    check_non_negative(a)?;
    let mut w = a.clone();
    for i in 0..w.rows() {
        normalize_row_in_place(w.row_mut(i), i, epsilon);
    }
    Ok(WeightMatrix { w, kind })
}

/// Row-normalizes a non-negative score matrix into intra-similarity weights.
pub fn row_normalize(a: &Matrix, cfg: &WeightConfig) -> Result<WeightMatrix> {
    normalize_rows(a, cfg.epsilon, WeightKind::IntraSim)
}

/// `row_normalize(intra_sim_scores(z))`.
pub fn intra_sim_weights(z: &Matrix, cfg: &WeightConfig) -> Result<WeightMatrix> {
    row_normalize(&intra_sim_scores(z, cfg)?, cfg)
}

/// Soft weights from fixed knowledge embeddings; same formula as the intra-modal weights.
pub fn knowledge_weights(h: &Matrix, cfg: &WeightConfig) -> Result<WeightMatrix> {
    Ok(intra_sim_weights(h, cfg)?.with_kind(WeightKind::Knowledge))
}

/// Off-diagonal ones, zero diagonal. With the identity targets this makes `w + y = 1`
/// everywhere, i.e. the plain pairwise sigmoid loss.
pub fn binary_baseline_weights(b: usize) -> WeightMatrix {
    WeightMatrix {
        w: Matrix::from_fn(b, b, |i, j| if i == j { 0.0 } else { 1.0 }),
        kind: WeightKind::BinaryBaseline,
    }
}
