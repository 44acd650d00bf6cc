//! Brute-force reference implementations used as test oracles.
//!
//! Everything here is written with plain nested loops over `Vec<Vec<f64>>` and shares no code
//! with the production path, so agreement between the two is meaningful. Nothing is optimized.

use crate::encoder::{EncoderParams, Tower};
use crate::numerics::Matrix;
use crate::objective::{LossMode, ObjectiveConfig, WeightSource};

pub type Grid = Vec<Vec<f64>>;

pub fn grid(m: &Matrix) -> Grid {
    (0..m.rows()).map(|i| m.row(i).to_vec()).collect()
}

fn vnorm(x: &[f64]) -> f64 {
    let mut s = 0.0;
    for v in x {
        s += v * v;
    }
    s.sqrt()
}

fn vcos(a: &[f64], b: &[f64]) -> f64 {
    let mut d = 0.0;
    for k in 0..a.len() {
        d += a[k] * b[k];
    }
    d / (vnorm(a) * vnorm(b))
}

/// `a_ij = exp(β cos(z_i, z_j))` off the diagonal, zero on it.
pub fn intra_scores(z: &Grid, beta: f64) -> Grid {
    let n = z.len();
    let mut a = vec![vec![0.0; n]; n];
    for i in 0..n {
        for j in 0..n {
            if i != j {
                a[i][j] = (beta * vcos(&z[i], &z[j])).exp();
            }
        }
    }
    a
}

/// `w_ij = a_ij / (Σ_{k≠i} a_ik + ε)`.
pub fn row_normalize(a: &Grid, eps: f64) -> Grid {
    let n = a.len();
    let mut w = vec![vec![0.0; n]; n];
    for i in 0..n {
        let mut den = eps;
        for k in 0..n {
            if k != i {
                den += a[i][k];
            }
        }
        for j in 0..n {
            if j != i {
                w[i][j] = a[i][j] / den;
            }
        }
    }
    w
}

pub fn tau(log_tau: f64) -> f64 {
    let t = log_tau.exp();
    if t > 100.0 {
        100.0
    } else {
        t
    }
}

/// `s_ij = τ v_i·t_j / (‖v_i‖ ‖t_j‖)`.
pub fn similarity(v: &Grid, t: &Grid, log_tau: f64) -> Grid {
    let n = v.len();
    let mut s = vec![vec![0.0; n]; n];
    for i in 0..n {
        for j in 0..n {
            s[i][j] = tau(log_tau) * vcos(&v[i], &t[j]);
        }
    }
    s
}

/// `log(1 + e^x)` evaluated piecewise so neither branch overflows.
fn log1pexp(x: f64) -> f64 {
    if x > 30.0 {
        x + (-x).exp()
    } else if x < -30.0 {
        x.exp()
    } else {
        (1.0 + x.exp()).ln()
    }
}

/// One direction with identity targets.
pub fn directional_loss(s: &Grid, w: &Grid) -> f64 {
    let n = s.len();
    let mut total = 0.0;
    for i in 0..n {
        for j in 0..n {
            let y = if i == j { 1.0 } else { 0.0 };
            let nll = if y == 1.0 {
                log1pexp(-s[i][j])
            } else {
                log1pexp(s[i][j])
            };
            total += (w[i][j] + y) * nll;
        }
    }
    total / n as f64
}

pub fn transpose(m: &Grid) -> Grid {
    let n = m.len();
    let c = if n == 0 { 0 } else { m[0].len() };
    let mut t = vec![vec![0.0; n]; c];
    for i in 0..n {
        for j in 0..c {
            t[j][i] = m[i][j];
        }
    }
    t
}

pub fn bidirectional_loss(s: &Grid, w_v2t: &Grid, w_t2v: &Grid) -> f64 {
    (directional_loss(s, w_v2t) + directional_loss(&transpose(s), w_t2v)) / 2.0
}

/// `α_m = r_m / Σ r`, uniform if every score is zero.
pub fn saliency(r: &[f64]) -> Vec<f64> {
    let mut total = 0.0;
    for x in r {
        total += x;
    }
    let mut out = Vec::new();
    for x in r {
        out.push(if total == 0.0 { 1.0 / r.len() as f64 } else { x / total });
    }
    out
}

/// Saliency-weighted centroid mean and covariance.
pub fn descriptor(centroids: &[[f64; 3]], r: &[f64]) -> ([f64; 3], [[f64; 3]; 3]) {
    let a = saliency(r);
    let mut mu = [0.0; 3];
    for m in 0..centroids.len() {
        for d in 0..3 {
            mu[d] += a[m] * centroids[m][d];
        }
    }
    let mut sigma = [[0.0; 3]; 3];
    for m in 0..centroids.len() {
        for p in 0..3 {
            for q in 0..3 {
                sigma[p][q] += a[m] * (centroids[m][p] - mu[p]) * (centroids[m][q] - mu[q]);
            }
        }
    }
    (mu, sigma)
}

pub fn proximity(a: &([f64; 3], [[f64; 3]; 3]), b: &([f64; 3], [[f64; 3]; 3]), kappa_mu: f64, kappa_sigma: f64) -> f64 {
    let mut dm = 0.0;
    for d in 0..3 {
        dm += (a.0[d] - b.0[d]).powi(2);
    }
    let mut ds = 0.0;
    for p in 0..3 {
        for q in 0..3 {
            ds += (a.1[p][q] - b.1[p][q]).powi(2);
        }
    }
    (-dm / (2.0 * kappa_mu * kappa_mu)).exp() * (-ds / (2.0 * kappa_sigma * kappa_sigma)).exp()
}

/// `δ_ij = w_ij p_ij`, then row-normalized.
pub fn spatial_weights(w_intra: &Grid, p: &Grid, eps: f64) -> Grid {
    let n = w_intra.len();
    let mut d = vec![vec![0.0; n]; n];
    for i in 0..n {
        for j in 0..n {
            if i != j {
                d[i][j] = w_intra[i][j] * p[i][j];
            }
        }
    }
    row_normalize(&d, eps)
}

pub fn mix(alpha: f64, l_spatial: f64, l_knowledge: f64) -> f64 {
    alpha * l_spatial + (1.0 - alpha) * l_knowledge
}

fn tower_forward(t: &Tower, x: &Grid) -> Grid {
    let mut h = x.clone();
    let depth = t.layers.len();
    for (li, layer) in t.layers.iter().enumerate() {
        let (din, dout) = layer.weight.shape();
        let mut next = vec![vec![0.0; dout]; h.len()];
        for r in 0..h.len() {
            for o in 0..dout {
                let mut acc = layer.bias[o];
                for k in 0..din {
                    acc += h[r][k] * layer.weight[(k, o)];
                }
                next[r][o] = if li + 1 < depth { acc.tanh() } else { acc };
            }
        }
        h = next;
    }
    h
}

/// Full objective value from raw inputs, recomputing every intermediate from scratch.
pub fn objective(
    params: &EncoderParams,
    volume: &Grid,
    text: &Grid,
    knowledge: &Grid,
    clouds: &[(Vec<[f64; 3]>, Vec<f64>)],
    cfg: &ObjectiveConfig,
) -> f64 {
    let v = tower_forward(&params.volume, volume);
    let t = tower_forward(&params.text, text);
    let s = similarity(&v, &t, params.log_tau);
    let n = v.len();
    let beta = cfg.weights.beta;
    let eps = cfg.weights.epsilon;

    let intra = |z: &Grid| row_normalize(&intra_scores(z, beta), eps);
    let (intra_v2t, intra_t2v) = match cfg.intra_source {
        WeightSource::Volume => (intra(&v), intra(&v)),
        WeightSource::Text => (intra(&t), intra(&t)),
        WeightSource::PerDirection => (intra(&v), intra(&t)),
    };
    let descs: Vec<_> = clouds.iter().map(|(c, r)| descriptor(c, r)).collect();
    let mut p = vec![vec![0.0; n]; n];
    for i in 0..n {
        for j in 0..n {
            p[i][j] = proximity(&descs[i], &descs[j], cfg.kernel.kappa_mu, cfg.kernel.kappa_sigma);
        }
    }
    let spatial = || {
        bidirectional_loss(
            &s,
            &spatial_weights(&intra_v2t, &p, eps),
            &spatial_weights(&intra_t2v, &p, eps),
        )
    };
    let know = || {
        let w = intra(knowledge);
        bidirectional_loss(&s, &w, &w)
    };
    match cfg.loss_mode {
        LossMode::Binary => {
            let mut ones = vec![vec![1.0; n]; n];
            for (i, row) in ones.iter_mut().enumerate() {
                row[i] = 0.0;
            }
            bidirectional_loss(&s, &ones, &ones)
        }
        LossMode::SwcaIntra => bidirectional_loss(&s, &intra_v2t, &intra_t2v),
        LossMode::SwcaSpatial => spatial(),
        LossMode::SwcaKnowledge => know(),
        LossMode::SwcaFull => mix(cfg.mix.alpha, spatial(), know()),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn hand_values() {
        // two orthogonal unit vectors: cos = 0, a = 1, w = 1/(1+ε)
        let z = vec![vec![1.0, 0.0], vec![0.0, 1.0]];
        let a = intra_scores(&z, 1.0);
        assert_eq!(a, vec![vec![0.0, 1.0], vec![1.0, 0.0]]);
        let w = row_normalize(&a, 0.0);
        assert_eq!(w[0][1], 1.0);
        assert_eq!(tau(10.0), 100.0);
        // S = 0 everywhere: each term is ln 2 with weight (w + y)
        let s = vec![vec![0.0; 2]; 2];
        let l = directional_loss(&s, &w);
        assert!((l - 2.0 * std::f64::consts::LN_2).abs() < 1e-15);
        assert_eq!(saliency(&[0.0, 0.0]), vec![0.5, 0.5]);
    }
}
