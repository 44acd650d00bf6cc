//! Scaled-cosine cross-modal similarity and the soft-weighted sigmoid contrastive loss.
//!
//! For one direction with logits `S`, weights `W` and binary targets `Y`:
//!
//! ```text
//! L = (1/B) Σ_i Σ_j (w_ij + y_ij) · [ y_ij · softplus(−s_ij) + (1 − y_ij) · softplus(s_ij) ]
//! ∂L/∂s_ij = (w_ij + y_ij) · (σ(s_ij) − y_ij) / B
//! ```
//!
//! `W` is a constant here: no gradient flows back into the weight computation.
//! The bidirectional loss averages `L(S, W)` and `L(Sᵀ, W)`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::{dot, l2_normalize_rows, logistic, softplus, Matrix};
use crate::weights::WeightMatrix;

/// Upper bound applied to `exp(log_tau)`.
pub const MAX_TAU: f64 = 100.0;

/// `ln(1 / 0.07)`, the usual CLIP initialisation of the logit scale.
pub fn initial_log_tau() -> f64 {
    (1.0f64 / 0.07).ln()
}

pub fn tau_from_log(log_tau: f64) -> f64 {
    log_tau.exp().min(MAX_TAU)
}

/// `s_ij = τ · ⟨v̂_i, t̂_j⟩`.
#[derive(Debug, Clone, PartialEq)]
pub struct SimilarityMatrix {
    pub s: Matrix,
    pub tau: f64,
}

/// Binary targets, normally the identity.
#[derive(Debug, Clone, PartialEq)]
pub struct TargetMatrix {
    y: Matrix,
}

impl TargetMatrix {
    pub fn identity(b: usize) -> Self {
        Self { y: Matrix::identity(b) }
    }

    /// Arbitrary 0/1 targets. Only used to exercise the formula on general inputs.
    pub fn from_matrix(y: Matrix) -> Result<Self> {
        if !y.is_square() {
            return Err(Error::shape("TargetMatrix", (y.rows(), y.rows()), y.shape()));
        }
        if let Some(v) = y.as_slice().iter().find(|&&v| v != 0.0 && v != 1.0) {
            return Err(Error::invalid("targets", format!("entries must be 0 or 1, found {v}")));
        }
        Ok(Self { y })
    }

    pub fn matrix(&self) -> &Matrix {
        &self.y
    }

    pub fn size(&self) -> usize {
        self.y.rows()
    }
}

/// Directional and averaged losses with the gradients of each directional loss
/// with respect to the V→T logit matrix `S` (the T→V gradient is already transposed back).
#[derive(Debug, Clone, PartialEq)]
pub struct LossBreakdown {
    pub loss_v2t: f64,
    pub loss_t2v: f64,
    pub loss_bidirectional: f64,
    pub grad_s_v2t: Matrix,
    pub grad_s_t2v: Matrix,
}

impl LossBreakdown {
    /// `∂L_bidirectional / ∂S`.
    pub fn grad_s(&self) -> Matrix {
        let mut g = self.grad_s_v2t.clone();
        g.add_scaled(&self.grad_s_t2v, 1.0).expect("gradients share a shape");
        g.scale(0.5);
        g
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MixConfig {
    /// Weight of the spatial loss; `1 − alpha` goes to the knowledge loss.
    pub alpha: f64,
}

impl Default for MixConfig {
    fn default() -> Self {
        Self { alpha: 0.5 }
    }
}

impl MixConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.alpha) {
            return Err(Error::invalid(
                "alpha",
                format!("must lie in [0, 1], got {}", self.alpha),
            ));
        }
        Ok(())
    }
}

/// Deliberate formula defects, used only to prove the verification harness notices them.
#[doc(hidden)]
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Defect {
    #[default]
    None,
    /// Negates `∂L/∂S` while leaving the loss value intact.
    FlipGradSign,
    /// Drops the `(w + y)` factor from loss and gradient.
    DropPairWeight,
    /// Uses `1/B²` instead of `1/B` in loss and gradient.
    WrongPrefactor,
}

/// Unit rows of both modalities plus their original norms; the state the backward pass needs.
#[derive(Debug, Clone)]
pub struct NormalizedPair {
    pub v_unit: Matrix,
    pub v_norms: Vec<f64>,
    pub t_unit: Matrix,
    pub t_norms: Vec<f64>,
}

impl NormalizedPair {
    pub fn new(v: &Matrix, t: &Matrix) -> Result<Self> {
        if v.shape() != t.shape() {
            return Err(Error::shape("cross_modal_similarity", v.shape(), t.shape()));
        }
        let (v_unit, v_norms) = l2_normalize_rows(v)?;
        let (t_unit, t_norms) = l2_normalize_rows(t)?;
        Ok(Self {
            v_unit,
            v_norms,
            t_unit,
            t_norms,
        })
    }

    pub fn similarity(&self, log_tau: f64) -> SimilarityMatrix {
        let tau = tau_from_log(log_tau);
        let b = self.v_unit.rows();
        let s = Matrix::from_fn(b, b, |i, j| tau * dot(self.v_unit.row(i), self.t_unit.row(j)));
        SimilarityMatrix { s, tau }
    }
}

/// Row-normalizes both batches and returns `τ · V̂ T̂ᵀ`.
pub fn cross_modal_similarity(v: &Matrix, t: &Matrix, log_tau: f64) -> Result<SimilarityMatrix> {
    Ok(NormalizedPair::new(v, t)?.similarity(log_tau))
}

#[inline]
fn pair_term(s: f64, y: f64) -> f64 {
    y * softplus(-s) + (1.0 - y) * softplus(s)
}

fn check_square(s: &Matrix, w: &WeightMatrix, y: &TargetMatrix) -> Result<usize> {
    let b = s.rows();
    if !s.is_square() {
        return Err(Error::shape("swca_directional", (b, b), s.shape()));
    }
    if w.matrix().shape() != s.shape() {
        return Err(Error::shape("swca_directional weights", s.shape(), w.matrix().shape()));
    }
    if y.matrix().shape() != s.shape() {
        return Err(Error::shape("swca_directional targets", s.shape(), y.matrix().shape()));
    }
    Ok(b)
}

/// Sum of the weighted terms of one row, in ascending column order.
#[inline]
fn row_sum(s_row: &[f64], w_row: &[f64], y_row: &[f64], defect: Defect) -> f64 {
    let mut acc = 0.0;
    for ((&s, &w), &y) in s_row.iter().zip(w_row).zip(y_row) {
        let pw = if defect == Defect::DropPairWeight { 1.0 } else { w + y };
        acc += pw * pair_term(s, y);
    }
    acc
}

fn prefactor(b: usize, defect: Defect) -> f64 {
    if defect == Defect::WrongPrefactor {
        1.0 / (b * b) as f64
    } else {
        1.0 / b as f64
    }
}

pub(crate) fn directional_with(
    s: &Matrix,
    w: &WeightMatrix,
    y: &TargetMatrix,
    defect: Defect,
) -> Result<(f64, Matrix)> {
    let b = check_square(s, w, y)?;
    let scale = prefactor(b, defect);
    let ym = y.matrix();
    let mut total = 0.0;
    let mut grad = Matrix::zeros(b, b);
    for i in 0..b {
        total += row_sum(s.row(i), w.row(i), ym.row(i), defect);
        for j in 0..b {
            let yv = ym[(i, j)];
            let pw = if defect == Defect::DropPairWeight {
                1.0
            } else {
                w.get(i, j) + yv
            };
            let mut g = pw * (logistic(s[(i, j)]) - yv) * scale;
            if defect == Defect::FlipGradSign {
                g = -g;
            }
            grad[(i, j)] = g;
        }
    }
    Ok((total * scale, grad))
}

/// One direction of the soft-weighted loss and its gradient with respect to `s`.
pub fn swca_directional(s: &Matrix, w: &WeightMatrix, y: &TargetMatrix) -> Result<(f64, Matrix)> {
    directional_with(s, w, y, Defect::None)
}

pub(crate) fn bidirectional_with(
    sim: &SimilarityMatrix,
    w_v2t: &WeightMatrix,
    w_t2v: &WeightMatrix,
    defect: Defect,
) -> Result<LossBreakdown> {
    let y = TargetMatrix::identity(sim.s.rows());
    let (loss_v2t, grad_s_v2t) = directional_with(&sim.s, w_v2t, &y, defect)?;
    let (loss_t2v, grad_t) = directional_with(&sim.s.transpose(), w_t2v, &y, defect)?;
    Ok(LossBreakdown {
        loss_v2t,
        loss_t2v,
        loss_bidirectional: 0.5 * (loss_v2t + loss_t2v),
        grad_s_v2t,
        grad_s_t2v: grad_t.transpose(),
    })
}

/// Bidirectional loss from precomputed logits, allowing a separate weight matrix per direction.
pub fn swca_bidirectional_from_logits(
    sim: &SimilarityMatrix,
    w_v2t: &WeightMatrix,
    w_t2v: &WeightMatrix,
) -> Result<LossBreakdown> {
    bidirectional_with(sim, w_v2t, w_t2v, Defect::None)
}

/// Averages the V→T loss on `S` and the T→V loss on `Sᵀ`, both with the same `W`.
pub fn swca_bidirectional(v: &Matrix, t: &Matrix, log_tau: f64, w: &WeightMatrix) -> Result<LossBreakdown> {
    let sim = cross_modal_similarity(v, t, log_tau)?;
    bidirectional_with(&sim, w, w, Defect::None)
}

/// `α · L_spatial + (1 − α) · L_knowledge` on the bidirectional values.
pub fn combined_objective(spatial: &LossBreakdown, knowledge: &LossBreakdown, mix: &MixConfig) -> f64 {
    mix.alpha * spatial.loss_bidirectional + (1.0 - mix.alpha) * knowledge.loss_bidirectional
}

/// Gradient of [`combined_objective`] with respect to `S`.
pub fn combined_grad_s(spatial: &LossBreakdown, knowledge: &LossBreakdown, mix: &MixConfig) -> Matrix {
    let mut g = spatial.grad_s();
    g.scale(mix.alpha);
    g.add_scaled(&knowledge.grad_s(), 1.0 - mix.alpha)
        .expect("gradients share a shape");
    g
}

/// Accumulates one directional loss from rows delivered in index order.
///
/// Holds two scalars and two counters; rows are borrowed and never stored.
#[derive(Debug, Clone)]
pub struct StreamingDirectional {
    batch: usize,
    next_row: usize,
    total: f64,
}

impl StreamingDirectional {
    pub fn new(batch: usize) -> Self {
        Self {
            batch,
            next_row: 0,
            total: 0.0,
        }
    }

    /// Adds row `index` of the logits, weights and targets.
    pub fn push_row(&mut self, index: usize, s_row: &[f64], w_row: &[f64], y_row: &[f64]) -> Result<()> {
        if index != self.next_row || index >= self.batch {
            return Err(Error::RowOrderViolation {
                expected: self.next_row,
                got: index,
            });
        }
        for len in [s_row.len(), w_row.len(), y_row.len()] {
            if len != self.batch {
                return Err(Error::shape(
                    "StreamingDirectional::push_row",
                    (1, self.batch),
                    (1, len),
                ));
            }
        }
        self.total += row_sum(s_row, w_row, y_row, Defect::None);
        self.next_row += 1;
        Ok(())
    }

    /// Rows consumed so far.
    pub fn rows_seen(&self) -> usize {
        self.next_row
    }

    pub fn finish(self) -> Result<f64> {
        if self.next_row != self.batch {
            return Err(Error::RowOrderViolation {
                expected: self.next_row,
                got: self.batch,
            });
        }
        Ok(self.total * prefactor(self.batch, Defect::None))
    }
}

/// Streams one direction straight from unit-normalized embeddings.
///
/// `weight_row(i, out)` must fill row `i` of the weight matrix. Peak auxiliary storage is
/// three length-`B` buffers; no `B × B` matrix is ever built.
pub fn streaming_directional_from_embeddings(
    queries_unit: &Matrix,
    keys_unit: &Matrix,
    tau: f64,
    mut weight_row: impl FnMut(usize, &mut [f64]),
) -> Result<f64> {
    if queries_unit.shape() != keys_unit.shape() {
        return Err(Error::shape(
            "streaming_directional",
            queries_unit.shape(),
            keys_unit.shape(),
        ));
    }
    let b = queries_unit.rows();
    let mut acc = StreamingDirectional::new(b);
    let mut s_row = vec![0.0; b];
    let mut w_row = vec![0.0; b];
    let mut y_row = vec![0.0; b];
    for i in 0..b {
        let q = queries_unit.row(i);
        for (j, s) in s_row.iter_mut().enumerate() {
            *s = tau * dot(q, keys_unit.row(j));
        }
        weight_row(i, &mut w_row);
        y_row
            .iter_mut()
            .enumerate()
            .for_each(|(j, y)| *y = if i == j { 1.0 } else { 0.0 });
        acc.push_row(i, &s_row, &w_row, &y_row)?;
    }
    acc.finish()
}

/// Gradients of a scalar loss with respect to the raw embeddings and `log_tau`.
#[derive(Debug, Clone)]
pub struct SimilarityGrads {
    pub v: Matrix,
    pub t: Matrix,
    pub log_tau: f64,
}

/// Chains `∂L/∂S` through `S = τ V̂ T̂ᵀ` and the row normalizations.
pub fn similarity_backward(
    pair: &NormalizedPair,
    sim: &SimilarityMatrix,
    log_tau: f64,
    grad_s: &Matrix,
) -> Result<SimilarityGrads> {
    let b = pair.v_unit.rows();
    if grad_s.shape() != (b, b) {
        return Err(Error::shape("similarity_backward", (b, b), grad_s.shape()));
    }
    let tau = sim.tau;
    let mut d_vhat = grad_s.matmul(&pair.t_unit)?;
    d_vhat.scale(tau);
    let mut d_that = grad_s.t_matmul(&pair.v_unit)?;
    d_that.scale(tau);

    let d_log_tau = if log_tau.exp() < MAX_TAU {
        grad_s.as_slice().iter().zip(sim.s.as_slice()).map(|(g, s)| g * s).sum()
    } else {
        0.0
    };

    Ok(SimilarityGrads {
        v: project_tangent(&d_vhat, &pair.v_unit, &pair.v_norms),
        t: project_tangent(&d_that, &pair.t_unit, &pair.t_norms),
        log_tau: d_log_tau,
    })
}

/// `∂L/∂x = (I − x̂x̂ᵀ) ∂L/∂x̂ / ‖x‖`, row by row.
fn project_tangent(d_unit: &Matrix, unit: &Matrix, norms: &[f64]) -> Matrix {
    let mut out = d_unit.clone();
    for (i, &n) in norms.iter().enumerate() {
        let u = unit.row(i);
        let radial = dot(d_unit.row(i), u);
        for (o, &uk) in out.row_mut(i).iter_mut().zip(u) {
            *o = (*o - radial * uk) / n;
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::weights::{binary_baseline_weights, intra_sim_weights, WeightConfig, WeightKind};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_matrix(rng: &mut ChaCha8Rng, r: usize, c: usize, scale: f64) -> Matrix {
        Matrix::from_fn(r, c, |_, _| rng.random_range(-scale..scale))
    }

    fn random_weights(rng: &mut ChaCha8Rng, b: usize) -> WeightMatrix {
        let z = random_matrix(rng, b, 4, 1.0);
        intra_sim_weights(&z, &WeightConfig::default()).unwrap()
    }

    fn random_targets(rng: &mut ChaCha8Rng, b: usize) -> TargetMatrix {
        TargetMatrix::from_matrix(Matrix::from_fn(
            b,
            b,
            |_, _| if rng.random::<bool>() { 1.0 } else { 0.0 },
        ))
        .unwrap()
    }

    /// Naive double loop with raw logs of the sigmoid; fine for moderate logits.
    fn oracle_loss(s: &Matrix, w: &Matrix, y: &Matrix) -> f64 {
        let b = s.rows();
        let mut total = 0.0;
        for i in 0..b {
            for j in 0..b {
                let sig = 1.0 / (1.0 + (-s[(i, j)]).exp());
                let yij = y[(i, j)];
                total += (w[(i, j)] + yij) * (-yij * sig.ln() - (1.0 - yij) * (1.0 - sig).ln());
            }
        }
        total / b as f64
    }

    #[test]
    fn similarity_examples() {
        let v = Matrix::from_rows(&[[0.6, 0.8]]).unwrap();
        let sim = cross_modal_similarity(&v, &v, initial_log_tau()).unwrap();
        assert!((sim.s[(0, 0)] - 1.0 / 0.07).abs() < 1e-9);

        let v = Matrix::from_rows(&[[1.0, 0.0]]).unwrap();
        let t = Matrix::from_rows(&[[0.0, 3.0]]).unwrap();
        for lt in [0.0, 2.0, 4.0] {
            assert_eq!(cross_modal_similarity(&v, &t, lt).unwrap().s[(0, 0)], 0.0);
        }
        // clamp
        assert_eq!(cross_modal_similarity(&v, &v, 10.0).unwrap().tau, MAX_TAU);

        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let v = random_matrix(&mut rng, 3, 5, 1.0);
        let t = random_matrix(&mut rng, 3, 5, 1.0);
        let sim = cross_modal_similarity(&v, &t, 1.3).unwrap();
        for i in 0..3 {
            for j in 0..3 {
                let c = crate::numerics::cosine(v.row(i), t.row(j)).unwrap();
                assert!((sim.s[(i, j)] - 1.3f64.exp() * c).abs() < 1e-12);
                assert!(sim.s[(i, j)].abs() <= sim.tau + 1e-9);
            }
        }

        let z = Matrix::from_rows(&[[1.0, 0.0], [0.0, 0.0]]).unwrap();
        assert!(matches!(
            cross_modal_similarity(&v.head_rows(2), &z, 0.0),
            Err(Error::ShapeMismatch { .. })
        ));
        let v2 = Matrix::from_rows(&[[1.0, 0.0], [1.0, 1.0]]).unwrap();
        assert!(matches!(
            cross_modal_similarity(&v2, &z, 0.0),
            Err(Error::ZeroNorm { row: Some(1) })
        ));
    }

    #[test]
    fn directional_single_pair() {
        let s = Matrix::zeros(1, 1);
        let w = WeightMatrix::new(Matrix::zeros(1, 1), WeightKind::IntraSim).unwrap();
        let (loss, grad) = swca_directional(&s, &w, &TargetMatrix::identity(1)).unwrap();
        assert!((loss - 2f64.ln()).abs() < 1e-15);
        assert!((grad[(0, 0)] + 0.5).abs() < 1e-15);
    }

    #[test]
    fn zero_off_diagonal_weights_leave_only_positives() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let b = 5;
        let s = random_matrix(&mut rng, b, b, 6.0);
        let w = WeightMatrix::new(Matrix::zeros(b, b), WeightKind::IntraSim).unwrap();
        let (loss, _) = swca_directional(&s, &w, &TargetMatrix::identity(b)).unwrap();
        let want: f64 = (0..b).map(|i| softplus(-s[(i, i)])).sum::<f64>() / b as f64;
        assert!((loss - want).abs() < 1e-14);
    }

    #[test]
    fn directional_matches_oracle_and_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        for _ in 0..20 {
            let b = 3;
            let s = random_matrix(&mut rng, b, b, 4.0);
            let w = random_weights(&mut rng, b);
            let y = random_targets(&mut rng, b);
            let (loss, grad) = swca_directional(&s, &w, &y).unwrap();
            assert!((loss - oracle_loss(&s, w.matrix(), y.matrix())).abs() < 1e-12);
            let h = 1e-6;
            for i in 0..b {
                for j in 0..b {
                    let mut sp = s.clone();
                    sp[(i, j)] += h;
                    let mut sm = s.clone();
                    sm[(i, j)] -= h;
                    let fd = (oracle_loss(&sp, w.matrix(), y.matrix()) - oracle_loss(&sm, w.matrix(), y.matrix()))
                        / (2.0 * h);
                    let rel = (fd - grad[(i, j)]).abs() / grad[(i, j)].abs().max(1e-8);
                    assert!(
                        rel < 1e-7 || (fd - grad[(i, j)]).abs() < 1e-10,
                        "rel {rel} at ({i},{j})"
                    );
                }
            }
        }
    }

    #[test]
    fn baseline_reduces_to_plain_sigmoid_loss() {
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        let b = 6;
        let s = random_matrix(&mut rng, b, b, 5.0);
        let (loss, _) = swca_directional(&s, &binary_baseline_weights(b), &TargetMatrix::identity(b)).unwrap();
        let mut want = 0.0;
        for i in 0..b {
            for j in 0..b {
                want += if i == j {
                    softplus(-s[(i, j)])
                } else {
                    softplus(s[(i, j)])
                };
            }
        }
        assert!((loss - want / b as f64).abs() < 1e-12);
    }

    #[test]
    fn bidirectional_examples() {
        let mut rng = ChaCha8Rng::seed_from_u64(14);
        let v = random_matrix(&mut rng, 4, 3, 1.0);
        let w = random_weights(&mut rng, 4);
        let bd = swca_bidirectional(&v, &v, 1.0, &w).unwrap();
        assert_eq!(bd.loss_v2t, bd.loss_t2v);

        let t = random_matrix(&mut rng, 4, 3, 1.0);
        let bd = swca_bidirectional(&v, &t, 2.0, &w).unwrap();
        let sim = cross_modal_similarity(&v, &t, 2.0).unwrap();
        let y = TargetMatrix::identity(4);
        let a = oracle_loss(&sim.s, w.matrix(), y.matrix());
        let b = oracle_loss(&sim.s.transpose(), w.matrix(), y.matrix());
        assert!((bd.loss_bidirectional - 0.5 * (a + b)).abs() < 1e-12);
        assert_eq!(bd.loss_bidirectional, 0.5 * (bd.loss_v2t + bd.loss_t2v));

        // perfect single pair: loss shrinks monotonically as the logit grows
        let one = Matrix::from_rows(&[[1.0]]).unwrap();
        let w1 = WeightMatrix::new(Matrix::zeros(1, 1), WeightKind::IntraSim).unwrap();
        let mut prev = f64::INFINITY;
        for lt in [0.0, 1.0, 2.0, 3.0, 4.0, 4.6] {
            let l = swca_bidirectional(&one, &one, lt, &w1).unwrap().loss_bidirectional;
            assert!(l < prev);
            prev = l;
        }
        assert!(prev < 1e-30);
    }

    #[test]
    fn combined_endpoints_and_midpoint() {
        let mut rng = ChaCha8Rng::seed_from_u64(15);
        let v = random_matrix(&mut rng, 5, 3, 1.0);
        let t = random_matrix(&mut rng, 5, 3, 1.0);
        let ws = random_weights(&mut rng, 5);
        let wk = random_weights(&mut rng, 5);
        let ls = swca_bidirectional(&v, &t, 1.0, &ws).unwrap();
        let lk = swca_bidirectional(&v, &t, 1.0, &wk).unwrap();
        let l = |alpha| combined_objective(&ls, &lk, &MixConfig { alpha });
        assert_eq!(l(1.0), ls.loss_bidirectional);
        assert_eq!(l(0.0), lk.loss_bidirectional);
        assert!((l(0.5) - 0.5 * (l(0.0) + l(1.0))).abs() <= 1e-12);
        assert_eq!(combined_grad_s(&ls, &lk, &MixConfig { alpha: 1.0 }), ls.grad_s());
    }

    #[test]
    fn streaming_matches_batch() {
        let mut rng = ChaCha8Rng::seed_from_u64(16);
        for &b in &[1usize, 2, 7, 64] {
            let s = random_matrix(&mut rng, b, b, 8.0);
            let w = if b >= 2 {
                random_weights(&mut rng, b)
            } else {
                WeightMatrix::new(Matrix::zeros(1, 1), WeightKind::IntraSim).unwrap()
            };
            let y = TargetMatrix::identity(b);
            let (batch, _) = swca_directional(&s, &w, &y).unwrap();
            let mut acc = StreamingDirectional::new(b);
            for i in 0..b {
                acc.push_row(i, s.row(i), w.row(i), y.matrix().row(i)).unwrap();
            }
            let streamed = acc.finish().unwrap();
            assert!((streamed - batch).abs() <= 1e-10);
        }
        let mut acc = StreamingDirectional::new(1);
        acc.push_row(0, &[0.0], &[0.0], &[1.0]).unwrap();
        assert!((acc.finish().unwrap() - 2f64.ln()).abs() < 1e-15);
    }

    #[test]
    fn streaming_rejects_out_of_order_rows() {
        let mut acc = StreamingDirectional::new(3);
        assert!(matches!(
            acc.push_row(1, &[0.0; 3], &[0.0; 3], &[0.0; 3]),
            Err(Error::RowOrderViolation { expected: 0, got: 1 })
        ));
        acc.push_row(0, &[0.0; 3], &[0.0; 3], &[1.0, 0.0, 0.0]).unwrap();
        assert!(acc.clone().finish().is_err());
        assert!(acc.push_row(0, &[0.0; 3], &[0.0; 3], &[0.0; 3]).is_err());
    }

    #[test]
    fn monotone_in_logits() {
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        let b = 4;
        let s = random_matrix(&mut rng, b, b, 3.0);
        let w = random_weights(&mut rng, b);
        let y = TargetMatrix::identity(b);
        let base = swca_directional(&s, &w, &y).unwrap().0;
        let mut up = s.clone();
        up[(2, 2)] += 0.5;
        assert!(swca_directional(&up, &w, &y).unwrap().0 <= base);
        let mut off = s.clone();
        off[(1, 3)] += 0.5;
        assert!(swca_directional(&off, &w, &y).unwrap().0 > base);
    }

    #[test]
    fn backward_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(18);
        let b = 4;
        let v = random_matrix(&mut rng, b, 3, 1.0);
        let t = random_matrix(&mut rng, b, 3, 1.0);
        let w = random_weights(&mut rng, b);
        let log_tau = 1.2;
        let f = |v: &Matrix, t: &Matrix, lt: f64| swca_bidirectional(v, t, lt, &w).unwrap().loss_bidirectional;

        let pair = NormalizedPair::new(&v, &t).unwrap();
        let sim = pair.similarity(log_tau);
        let bd = swca_bidirectional(&v, &t, log_tau, &w).unwrap();
        let g = similarity_backward(&pair, &sim, log_tau, &bd.grad_s()).unwrap();

        let h = 1e-6;
        for i in 0..b {
            for k in 0..3 {
                let mut vp = v.clone();
                vp[(i, k)] += h;
                let mut vm = v.clone();
                vm[(i, k)] -= h;
                let fd = (f(&vp, &t, log_tau) - f(&vm, &t, log_tau)) / (2.0 * h);
                assert!((fd - g.v[(i, k)]).abs() < 1e-8, "v {fd} vs {}", g.v[(i, k)]);
                let mut tp = t.clone();
                tp[(i, k)] += h;
                let mut tm = t.clone();
                tm[(i, k)] -= h;
                let fd = (f(&v, &tp, log_tau) - f(&v, &tm, log_tau)) / (2.0 * h);
                assert!((fd - g.t[(i, k)]).abs() < 1e-8);
            }
        }
        let fd = (f(&v, &t, log_tau + h) - f(&v, &t, log_tau - h)) / (2.0 * h);
        assert!((fd - g.log_tau).abs() < 1e-8);
    }
}
