//! Spatial coherence: patch clouds, centroid/covariance descriptors, the Gaussian
//! proximity kernel between two volumes, and spatially modulated soft weights.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::Matrix;
use crate::weights::{normalize_row_in_place, normalize_rows, WeightConfig, WeightKind, WeightMatrix};

/// Patch centroids in normalized volume coordinates plus a non-negative saliency per patch.
#[derive(Debug, Clone, PartialEq)]
pub struct PatchCloud {
    centroids: Vec<[f64; 3]>,
    saliency: Vec<f64>,
}

impl PatchCloud {
    pub fn new(centroids: Vec<[f64; 3]>, saliency: Vec<f64>) -> Result<Self> {
        if centroids.is_empty() {
            return Err(Error::invalid("patch_cloud", "needs at least one patch"));
        }
        if centroids.len() != saliency.len() {
            return Err(Error::shape(
                "PatchCloud::new",
                (centroids.len(), 1),
                (saliency.len(), 1),
            ));
        }
        if let Some(c) = centroids.iter().flatten().find(|c| !(0.0..=1.0).contains(*c)) {
            return Err(Error::invalid(
                "patch_cloud.centroids",
                format!("coordinate {c} outside [0, 1]"),
            ));
        }
        if let Some(r) = saliency.iter().find(|r| !(**r >= 0.0 && r.is_finite())) {
            return Err(Error::invalid(
                "patch_cloud.saliency",
                format!("score {r} is not a finite non-negative number"),
            ));
        }
        Ok(Self { centroids, saliency })
    }

    pub fn len(&self) -> usize {
        self.centroids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.centroids.is_empty()
    }

    pub fn centroids(&self) -> &[[f64; 3]] {
        &self.centroids
    }

    pub fn saliency(&self) -> &[f64] {
        &self.saliency
    }
}

/// Weighted centroid `mu` and covariance `sigma` of a patch cloud.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SpatialDescriptor {
    pub mu: [f64; 3],
    pub sigma: [[f64; 3]; 3],
}

/// Bandwidths of the centroid and covariance Gaussians.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct KernelParams {
    pub kappa_mu: f64,
    pub kappa_sigma: f64,
}

impl Default for KernelParams {
    fn default() -> Self {
        Self {
            kappa_mu: 0.1,
            kappa_sigma: 0.05,
        }
    }
}

impl KernelParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.kappa_mu > 0.0 && self.kappa_mu.is_finite()) {
            return Err(Error::invalid(
                "kappa_mu",
                format!("must be > 0, got {}", self.kappa_mu),
            ));
        }
        if !(self.kappa_sigma > 0.0 && self.kappa_sigma.is_finite()) {
            return Err(Error::invalid(
                "kappa_sigma",
                format!("must be > 0, got {}", self.kappa_sigma),
            ));
        }
        Ok(())
    }
}

/// Saliency coefficients `r_m / Σ r_n`; uniform when every score is zero.
pub fn saliency_normalize(cloud: &PatchCloud) -> Vec<f64> {
    let total: f64 = cloud.saliency.iter().sum();
    if total > 0.0 {
        cloud.saliency.iter().map(|r| r / total).collect()
    } else {
        vec![1.0 / cloud.len() as f64; cloud.len()]
    }
}

pub fn descriptor(cloud: &PatchCloud) -> SpatialDescriptor {
    let alpha = saliency_normalize(cloud);
    let mut mu = [0.0; 3];
    for (a, c) in alpha.iter().zip(&cloud.centroids) {
        for d in 0..3 {
            mu[d] += a * c[d];
        }
    }
    let mut sigma = [[0.0; 3]; 3];
    for (a, c) in alpha.iter().zip(&cloud.centroids) {
        let diff = [c[0] - mu[0], c[1] - mu[1], c[2] - mu[2]];
        for r in 0..3 {
            for s in r..3 {
                sigma[r][s] += a * diff[r] * diff[s];
            }
        }
    }
    // fill the lower triangle from the upper one so sigma is exactly symmetric
    for r in 0..3 {
        for s in 0..r {
            sigma[r][s] = sigma[s][r];
        }
    }
    SpatialDescriptor { mu, sigma }
}

/// `exp(−‖μ_i − μ_j‖² / 2κ_μ²) · exp(−‖Σ_i − Σ_j‖_F² / 2κ_Σ²)`.
pub fn proximity(di: &SpatialDescriptor, dj: &SpatialDescriptor, k: &KernelParams) -> f64 {
    let mut mu_sq = 0.0;
    for d in 0..3 {
        let diff = di.mu[d] - dj.mu[d];
        mu_sq += diff * diff;
    }
    let mut sigma_sq = 0.0;
    for r in 0..3 {
        for s in 0..3 {
            let diff = di.sigma[r][s] - dj.sigma[r][s];
            sigma_sq += diff * diff;
        }
    }
    (-mu_sq / (2.0 * k.kappa_mu * k.kappa_mu)).exp() * (-sigma_sq / (2.0 * k.kappa_sigma * k.kappa_sigma)).exp()
}

/// Full `B × B` proximity matrix (unit diagonal, symmetric).
pub fn proximity_matrix(descriptors: &[SpatialDescriptor], k: &KernelParams) -> Matrix {
    let b = descriptors.len();
    let mut p = Matrix::identity(b);
    for i in 0..b {
        for j in (i + 1)..b {
            let v = proximity(&descriptors[i], &descriptors[j], k);
            p[(i, j)] = v;
            p[(j, i)] = v;
        }
    }
    p
}

/// Multiplies intra-modal weights elementwise by the proximity kernel and row-normalizes again.
pub fn spatial_weights(w_intra: &WeightMatrix, p: &Matrix, cfg: &WeightConfig) -> Result<WeightMatrix> {
    let w = w_intra.matrix();
    if w.shape() != p.shape() {
        return Err(Error::shape("spatial_weights", w.shape(), p.shape()));
    }
    let mut delta = w.clone();
    for (d, &pv) in delta.as_mut_slice().iter_mut().zip(p.as_slice()) {
        *d *= pv;
    }
    normalize_rows(&delta, cfg.epsilon, WeightKind::Spatial)
}

/// One row of [`spatial_weights`] given one row of intra weights and the descriptors.
pub fn spatial_weight_row(
    intra_row: &[f64],
    i: usize,
    descriptors: &[SpatialDescriptor],
    k: &KernelParams,
    cfg: &WeightConfig,
    out: &mut [f64],
) {
    for (j, o) in out.iter_mut().enumerate() {
        let p = if i == j {
            1.0
        } else if i < j {
            proximity(&descriptors[i], &descriptors[j], k)
        } else {
            proximity(&descriptors[j], &descriptors[i], k)
        };
        *o = intra_row[j] * p;
    }
    normalize_row_in_place(out, i, cfg.epsilon);
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::symmetric_eigenvalues_3x3;
    use crate::weights::intra_sim_weights;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_cloud(rng: &mut ChaCha8Rng, n: usize) -> PatchCloud {
        let centroids = (0..n)
            .map(|_| [rng.random::<f64>(), rng.random::<f64>(), rng.random::<f64>()])
            .collect();
        let saliency = (0..n).map(|_| rng.random_range(0.0..2.0)).collect();
        PatchCloud::new(centroids, saliency).unwrap()
    }

    fn random_descriptor(rng: &mut ChaCha8Rng) -> SpatialDescriptor {
        descriptor(&random_cloud(rng, 8))
    }

    #[test]
    fn saliency_examples() {
        let c = |r: Vec<f64>| PatchCloud::new(vec![[0.5; 3]; r.len()], r).unwrap();
        assert_eq!(saliency_normalize(&c(vec![1.0; 4])), vec![0.25; 4]);
        assert_eq!(saliency_normalize(&c(vec![3.0, 1.0])), vec![0.75, 0.25]);
        assert_eq!(saliency_normalize(&c(vec![0.0; 3])), vec![1.0 / 3.0; 3]);
    }

    #[test]
    fn cloud_validation() {
        assert!(PatchCloud::new(vec![], vec![]).is_err());
        assert!(PatchCloud::new(vec![[0.5, 1.2, 0.0]], vec![1.0]).is_err());
        assert!(PatchCloud::new(vec![[0.5; 3]], vec![-1.0]).is_err());
        assert!(PatchCloud::new(vec![[0.5; 3]], vec![1.0, 2.0]).is_err());
    }

    #[test]
    fn descriptor_examples() {
        let d = descriptor(&PatchCloud::new(vec![[0.5; 3]], vec![2.0]).unwrap());
        assert_eq!(d.mu, [0.5; 3]);
        assert_eq!(d.sigma, [[0.0; 3]; 3]);

        let d = descriptor(&PatchCloud::new(vec![[0.0; 3], [1.0; 3]], vec![1.0, 1.0]).unwrap());
        assert_eq!(d.mu, [0.5; 3]);
        for row in d.sigma {
            for v in row {
                assert!((v - 0.25).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn descriptor_matches_direct_summation() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let cloud = random_cloud(&mut rng, 16);
        let d = descriptor(&cloud);
        let total: f64 = cloud.saliency().iter().sum();
        let mut mu = [0.0; 3];
        for (c, r) in cloud.centroids().iter().zip(cloud.saliency()) {
            for k in 0..3 {
                mu[k] += r / total * c[k];
            }
        }
        let mut sigma = [[0.0; 3]; 3];
        for (c, r) in cloud.centroids().iter().zip(cloud.saliency()) {
            for a in 0..3 {
                for b in 0..3 {
                    sigma[a][b] += r / total * (c[a] - mu[a]) * (c[b] - mu[b]);
                }
            }
        }
        for a in 0..3 {
            assert!((d.mu[a] - mu[a]).abs() < 1e-12);
            for b in 0..3 {
                assert!((d.sigma[a][b] - sigma[a][b]).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn proximity_examples() {
        let k = KernelParams::default();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let d = random_descriptor(&mut rng);
        assert_eq!(proximity(&d, &d, &k), 1.0);

        // ‖Δμ‖² = 2κ_μ² with equal Σ
        let mut e = d;
        let shift = (2.0f64).sqrt() * k.kappa_mu;
        e.mu[0] += shift;
        let p = proximity(&d, &e, &k);
        assert!((p - (-1.0f64).exp()).abs() < 1e-12, "{p}");

        let e = random_descriptor(&mut rng);
        let mut dm = 0.0;
        let mut ds = 0.0;
        for a in 0..3 {
            dm += (d.mu[a] - e.mu[a]).powi(2);
            for b in 0..3 {
                ds += (d.sigma[a][b] - e.sigma[a][b]).powi(2);
            }
        }
        let want = (-dm / (2.0 * 0.01)).exp() * (-ds / (2.0 * 0.0025)).exp();
        assert!((proximity(&d, &e, &k) - want).abs() < 1e-14);
    }

    #[test]
    fn spatial_weight_examples() {
        let cfg = WeightConfig::default();
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let z = Matrix::from_fn(4, 3, |_, _| rng.random_range(-1.0..1.0));
        let w = intra_sim_weights(&z, &cfg).unwrap();

        let ones = Matrix::filled(4, 4, 1.0);
        let s = spatial_weights(&w, &ones, &cfg).unwrap();
        assert_eq!(s.kind(), WeightKind::Spatial);
        assert!(s.matrix().max_abs_diff(w.matrix()) < 1e-7);

        let z2 = Matrix::from_rows(&[[1.0, 0.2], [0.3, 1.0]]).unwrap();
        let w2 = intra_sim_weights(&z2, &cfg).unwrap();
        let p2 = Matrix::from_rows(&[[1.0, 0.01], [0.01, 1.0]]).unwrap();
        let s2 = spatial_weights(&w2, &p2, &cfg).unwrap();
        assert!((s2.get(0, 1) - 1.0).abs() < 1e-5 && (s2.get(1, 0) - 1.0).abs() < 1e-5);

        let descs: Vec<_> = (0..4).map(|_| random_descriptor(&mut rng)).collect();
        let k = KernelParams {
            kappa_mu: 0.3,
            kappa_sigma: 0.2,
        };
        let p = proximity_matrix(&descs, &k);
        let s = spatial_weights(&w, &p, &cfg).unwrap();
        for i in 0..4 {
            let delta: Vec<f64> = (0..4).map(|j| w.get(i, j) * p[(i, j)]).collect();
            let sum: f64 = delta.iter().sum();
            let mut row = vec![0.0; 4];
            spatial_weight_row(w.row(i), i, &descs, &k, &cfg, &mut row);
            for j in 0..4 {
                assert!((s.get(i, j) - delta[j] / (sum + cfg.epsilon)).abs() < 1e-12);
                assert_eq!(row[j], s.get(i, j));
            }
        }
        assert!(spatial_weights(&w, &Matrix::identity(3), &cfg).is_err());
    }

    #[test]
    fn translation_invariance_and_psd() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let k = KernelParams::default();
        for _ in 0..200 {
            let make = |rng: &mut ChaCha8Rng| {
                let n = rng.random_range(1..12);
                let c: Vec<[f64; 3]> = (0..n)
                    .map(|_| {
                        [
                            rng.random_range(0.0..0.8),
                            rng.random_range(0.0..0.8),
                            rng.random_range(0.0..0.8),
                        ]
                    })
                    .collect();
                let r: Vec<f64> = (0..n).map(|_| rng.random_range(0.0..1.0)).collect();
                (c, r)
            };
            let (ca, ra) = make(&mut rng);
            let (cb, rb) = make(&mut rng);
            let off = [
                rng.random_range(0.0..0.2),
                rng.random_range(0.0..0.2),
                rng.random_range(0.0..0.2),
            ];
            let shift = |c: &[[f64; 3]]| {
                c.iter()
                    .map(|p| [p[0] + off[0], p[1] + off[1], p[2] + off[2]])
                    .collect::<Vec<_>>()
            };
            let da = descriptor(&PatchCloud::new(ca.clone(), ra.clone()).unwrap());
            let db = descriptor(&PatchCloud::new(cb.clone(), rb.clone()).unwrap());
            let sa = descriptor(&PatchCloud::new(shift(&ca), ra).unwrap());
            let sb = descriptor(&PatchCloud::new(shift(&cb), rb).unwrap());
            assert!((proximity(&da, &db, &k) - proximity(&sa, &sb, &k)).abs() < 1e-12);
            for d in [da, db, sa, sb] {
                assert!(symmetric_eigenvalues_3x3(&d.sigma)[0] >= -1e-12);
            }
        }
    }
}
