//! Synthetic paired (volume, text, knowledge, patch cloud) samples with latent cluster structure.
//!
//! Each sample draws a cluster `k` uniformly and a latent `u = center_k + N(0, 0.3² I)`.
//! The three feature channels are fixed random projections of `u` plus isotropic noise, with
//! the knowledge channel the cleanest. Patch centroids scatter around a cluster-specific
//! location in `[0.2, 0.8]³`; patch saliency is the norm of a per-patch feature `A_p u + noise`.
//!
//! Randomness for sample `i` of a split comes from its own keyed stream, so any sample can be
//! regenerated without generating the rest.

use std::path::Path;

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::io::{read_file, write_atomic, ByteReader, ByteWriter};
use crate::numerics::Matrix;
use crate::rng::{stream, Domain};
use crate::spatial::{descriptor, PatchCloud, SpatialDescriptor};

pub const DATA_MAGIC: &[u8; 8] = b"SWCADATA";
pub const DATA_VERSION: u32 = 1;

/// Standard deviation of the within-cluster latent noise.
pub const LATENT_SPREAD: f64 = 0.3;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DataGenConfig {
    pub num_clusters: usize,
    pub train_samples: usize,
    pub val_samples: usize,
    pub test_samples: usize,
    pub latent_dim: usize,
    pub dim_volume: usize,
    pub dim_text: usize,
    pub dim_knowledge: usize,
    pub patches: usize,
    /// Width of the auxiliary per-patch feature whose norm is the saliency.
    pub patch_feature_dim: usize,
    pub noise_volume: f64,
    pub noise_text: f64,
    pub noise_knowledge: f64,
    /// Isotropic standard deviation of patch centroids around their cluster location.
    pub spatial_spread: f64,
    pub seed: u64,
}

impl Default for DataGenConfig {
    fn default() -> Self {
        Self {
            num_clusters: 8,
            train_samples: 512,
            val_samples: 128,
            test_samples: 128,
            latent_dim: 8,
            dim_volume: 32,
            dim_text: 32,
            dim_knowledge: 16,
            patches: 16,
            patch_feature_dim: 8,
            noise_volume: 0.2,
            noise_text: 0.2,
            noise_knowledge: 0.05,
            spatial_spread: 0.08,
            seed: 0,
        }
    }
}

impl DataGenConfig {
    pub fn validate(&self) -> Result<()> {
        if self.num_clusters < 2 {
            return Err(Error::invalid(
                "num_clusters",
                format!("must be >= 2, got {}", self.num_clusters),
            ));
        }
        for (name, v) in [
            ("latent_dim", self.latent_dim),
            ("dim_volume", self.dim_volume),
            ("dim_text", self.dim_text),
            ("dim_knowledge", self.dim_knowledge),
            ("patch_feature_dim", self.patch_feature_dim),
        ] {
            if v < 2 {
                return Err(Error::invalid(name, format!("must be >= 2, got {v}")));
            }
        }
        if self.patches == 0 {
            return Err(Error::invalid("patches", "must be >= 1"));
        }
        if self.train_samples < 2 {
            return Err(Error::invalid("train_samples", "must be >= 2"));
        }
        if self.test_samples == 0 {
            return Err(Error::invalid("test_samples", "must be >= 1"));
        }
        for (name, v) in [
            ("noise_volume", self.noise_volume),
            ("noise_text", self.noise_text),
            ("noise_knowledge", self.noise_knowledge),
            ("spatial_spread", self.spatial_spread),
        ] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::invalid(name, format!("must be > 0, got {v}")));
            }
        }
        if self.noise_knowledge >= self.noise_text {
            return Err(Error::invalid(
                "noise_knowledge",
                format!(
                    "must be below noise_text ({}), got {}",
                    self.noise_text, self.noise_knowledge
                ),
            ));
        }
        Ok(())
    }

    pub fn split_len(&self, kind: SplitKind) -> usize {
        match kind {
            SplitKind::Train => self.train_samples,
            SplitKind::Val => self.val_samples,
            SplitKind::Test => self.test_samples,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SplitKind {
    Train,
    Val,
    Test,
}

impl SplitKind {
    pub const ALL: [SplitKind; 3] = [SplitKind::Train, SplitKind::Val, SplitKind::Test];

    fn domain(self) -> Domain {
        match self {
            SplitKind::Train => Domain::TrainSample,
            SplitKind::Val => Domain::ValSample,
            SplitKind::Test => Domain::TestSample,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PairedSample {
    pub volume_features: Vec<f64>,
    pub text_features: Vec<f64>,
    pub knowledge_embedding: Vec<f64>,
    pub patch_cloud: PatchCloud,
    /// Generating cluster; only evaluation and plots look at it.
    pub cluster_id: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Split {
    pub kind: SplitKind,
    pub samples: Vec<PairedSample>,
}

impl Split {
    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    fn stack(&self, f: impl Fn(&PairedSample) -> &[f64], indices: Option<&[usize]>) -> Matrix {
        let rows: Vec<&[f64]> = match indices {
            Some(ix) => ix.iter().map(|&i| f(&self.samples[i])).collect(),
            None => self.samples.iter().map(f).collect(),
        };
        Matrix::from_rows(&rows).expect("samples of one split share dimensions")
    }

    pub fn volume_matrix(&self, indices: Option<&[usize]>) -> Matrix {
        self.stack(|s| &s.volume_features, indices)
    }

    pub fn text_matrix(&self, indices: Option<&[usize]>) -> Matrix {
        self.stack(|s| &s.text_features, indices)
    }

    pub fn knowledge_matrix(&self, indices: Option<&[usize]>) -> Matrix {
        self.stack(|s| &s.knowledge_embedding, indices)
    }

    pub fn descriptors(&self) -> Vec<SpatialDescriptor> {
        self.samples.iter().map(|s| descriptor(&s.patch_cloud)).collect()
    }

    pub fn cluster_ids(&self) -> Vec<usize> {
        self.samples.iter().map(|s| s.cluster_id).collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub config: DataGenConfig,
    pub train: Split,
    pub val: Split,
    pub test: Split,
}

impl Dataset {
    pub fn split(&self, kind: SplitKind) -> &Split {
        match kind {
            SplitKind::Train => &self.train,
            SplitKind::Val => &self.val,
            SplitKind::Test => &self.test,
        }
    }
}

/// Quantities drawn once per seed and shared by every sample.
#[derive(Debug, Clone)]
pub struct Generator {
    config: DataGenConfig,
    centers: Matrix,
    proj_volume: Matrix,
    proj_text: Matrix,
    proj_knowledge: Matrix,
    proj_patch: Matrix,
    spatial_means: Vec<[f64; 3]>,
}

fn gaussian_matrix(rng: &mut impl Rng, rows: usize, cols: usize, std: f64) -> Matrix {
    Matrix::from_fn(rows, cols, |_, _| std * rng.sample::<f64, _>(StandardNormal))
}

/// `A u + noise · N(0, I)`.
fn project(a: &Matrix, u: &[f64], noise: f64, rng: &mut impl Rng) -> Vec<f64> {
    (0..a.rows())
        .map(|r| crate::numerics::dot(a.row(r), u) + noise * rng.sample::<f64, _>(StandardNormal))
        .collect()
}

impl Generator {
    pub fn new(config: &DataGenConfig) -> Result<Self> {
        config.validate()?;
        let mut rng = stream(config.seed, Domain::DataGlobals, 0);
        let l = config.latent_dim;
        let proj_std = 1.0 / (l as f64).sqrt();
        let centers = gaussian_matrix(&mut rng, config.num_clusters, l, 1.0);
        let proj_volume = gaussian_matrix(&mut rng, config.dim_volume, l, proj_std);
        let proj_text = gaussian_matrix(&mut rng, config.dim_text, l, proj_std);
        let proj_knowledge = gaussian_matrix(&mut rng, config.dim_knowledge, l, proj_std);
        let proj_patch = gaussian_matrix(&mut rng, config.patch_feature_dim, l, proj_std);
        let spatial_means = (0..config.num_clusters)
            .map(|_| {
                [
                    rng.random_range(0.2..=0.8),
                    rng.random_range(0.2..=0.8),
                    rng.random_range(0.2..=0.8),
                ]
            })
            .collect();
        Ok(Self {
            config: config.clone(),
            centers,
            proj_volume,
            proj_text,
            proj_knowledge,
            proj_patch,
            spatial_means,
        })
    }

    /// Sample `index` of `split`; identical on every call.
    pub fn sample(&self, split: SplitKind, index: usize) -> PairedSample {
        let cfg = &self.config;
        let mut rng = stream(cfg.seed, split.domain(), index as u64);
        let k = rng.random_range(0..cfg.num_clusters);
        let latent: Vec<f64> = self
            .centers
            .row(k)
            .iter()
            .map(|c| c + LATENT_SPREAD * rng.sample::<f64, _>(StandardNormal))
            .collect();
        let volume_features = project(&self.proj_volume, &latent, cfg.noise_volume, &mut rng);
        let text_features = project(&self.proj_text, &latent, cfg.noise_text, &mut rng);
        let knowledge_embedding = project(&self.proj_knowledge, &latent, cfg.noise_knowledge, &mut rng);

        let mean = self.spatial_means[k];
        let mut centroids = Vec::with_capacity(cfg.patches);
        let mut saliency = Vec::with_capacity(cfg.patches);
        for _ in 0..cfg.patches {
            let mut c = [0.0; 3];
            for (d, slot) in c.iter_mut().enumerate() {
                let x = mean[d] + cfg.spatial_spread * rng.sample::<f64, _>(StandardNormal);
                *slot = x.clamp(0.0, 1.0);
            }
            centroids.push(c);
            let feat = project(&self.proj_patch, &latent, cfg.noise_volume, &mut rng);
            saliency.push(crate::numerics::norm(&feat));
        }
        let patch_cloud = PatchCloud::new(centroids, saliency).expect("generated clouds are valid");
        PairedSample {
            volume_features,
            text_features,
            knowledge_embedding,
            patch_cloud,
            cluster_id: k,
        }
    }

    pub fn split(&self, kind: SplitKind) -> Split {
        Split {
            kind,
            samples: (0..self.config.split_len(kind)).map(|i| self.sample(kind, i)).collect(),
        }
    }
}

pub fn generate(config: &DataGenConfig) -> Result<Dataset> {
    let g = Generator::new(config)?;
    Ok(Dataset {
        config: config.clone(),
        train: g.split(SplitKind::Train),
        val: g.split(SplitKind::Val),
        test: g.split(SplitKind::Test),
    })
}

/// Serializes a dataset. Layout (all little-endian):
///
/// ```text
/// "SWCADATA" | u32 version | u32 config_len | config JSON
/// per split (train, val, test):
///     u64 count | u32 cluster_id × count
///     f64 volume   × count·dim_volume
///     f64 text     × count·dim_text
///     f64 knowledge× count·dim_knowledge
///     f64 centroid × count·patches·3
///     f64 saliency × count·patches
/// 32-byte SHA-256 of everything above
/// ```
pub fn encode(dataset: &Dataset) -> Result<Vec<u8>> {
    let mut w = ByteWriter::new();
    w.bytes(DATA_MAGIC);
    w.u32(DATA_VERSION);
    let cfg = serde_json::to_vec(&dataset.config).map_err(|e| Error::Format(e.to_string()))?;
    w.u32(cfg.len() as u32);
    w.bytes(&cfg);
    for kind in SplitKind::ALL {
        let split = dataset.split(kind);
        w.u64(split.len() as u64);
        for s in &split.samples {
            w.u32(s.cluster_id as u32);
        }
        for s in &split.samples {
            w.f64s(&s.volume_features);
        }
        for s in &split.samples {
            w.f64s(&s.text_features);
        }
        for s in &split.samples {
            w.f64s(&s.knowledge_embedding);
        }
        for s in &split.samples {
            for c in s.patch_cloud.centroids() {
                w.f64s(c);
            }
        }
        for s in &split.samples {
            w.f64s(s.patch_cloud.saliency());
        }
    }
    let digest = Sha256::digest(w.as_slice());
    w.bytes(&digest);
    Ok(w.into_inner())
}

pub fn decode(bytes: &[u8]) -> Result<Dataset> {
    if bytes.len() < 32 {
        return Err(Error::ChecksumMismatch);
    }
    let (body, digest) = bytes.split_at(bytes.len() - 32);
    if Sha256::digest(body).as_slice() != digest {
        return Err(Error::ChecksumMismatch);
    }
    let mut r = ByteReader::new(body);
    if r.take(8)? != DATA_MAGIC {
        return Err(Error::Format("not a dataset file (bad magic)".into()));
    }
    let version = r.u32()?;
    if version != DATA_VERSION {
        return Err(Error::VersionMismatch {
            expected: DATA_VERSION,
            found: version,
        });
    }
    let cfg_len = r.u32()? as usize;
    let config: DataGenConfig =
        serde_json::from_slice(r.take(cfg_len)?).map_err(|e| Error::Format(format!("config block: {e}")))?;
    config.validate()?;

    let mut splits = Vec::with_capacity(3);
    for kind in SplitKind::ALL {
        let n = r.u64()? as usize;
        let ids = (0..n)
            .map(|_| r.u32().map(|v| v as usize))
            .collect::<Result<Vec<_>>>()?;
        let vol = r.f64s(n * config.dim_volume)?;
        let txt = r.f64s(n * config.dim_text)?;
        let know = r.f64s(n * config.dim_knowledge)?;
        let cen = r.f64s(n * config.patches * 3)?;
        let sal = r.f64s(n * config.patches)?;
        let mut samples = Vec::with_capacity(n);
        for i in 0..n {
            if ids[i] >= config.num_clusters {
                return Err(Error::Format(format!("cluster id {} out of range", ids[i])));
            }
            let p = config.patches;
            let centroids = cen[i * p * 3..(i + 1) * p * 3]
                .chunks_exact(3)
                .map(|c| [c[0], c[1], c[2]])
                .collect();
            let cloud = PatchCloud::new(centroids, sal[i * p..(i + 1) * p].to_vec())?;
            samples.push(PairedSample {
                volume_features: vol[i * config.dim_volume..(i + 1) * config.dim_volume].to_vec(),
                text_features: txt[i * config.dim_text..(i + 1) * config.dim_text].to_vec(),
                knowledge_embedding: know[i * config.dim_knowledge..(i + 1) * config.dim_knowledge].to_vec(),
                patch_cloud: cloud,
                cluster_id: ids[i],
            });
        }
        if samples.iter().any(|s| {
            !s.volume_features
                .iter()
                .chain(&s.text_features)
                .chain(&s.knowledge_embedding)
                .all(|v| v.is_finite())
        }) {
            return Err(Error::Format("non-finite feature value".into()));
        }
        splits.push(Split { kind, samples });
    }
    if !r.is_empty() {
        return Err(Error::Format("trailing bytes after the last split".into()));
    }
    let test = splits.pop().expect("three splits");
    let val = splits.pop().expect("three splits");
    let train = splits.pop().expect("three splits");
    Ok(Dataset {
        config,
        train,
        val,
        test,
    })
}

/// SHA-256 of the encoded dataset body, as lowercase hex (the trailer of the file).
pub fn checksum_hex(encoded: &[u8]) -> String {
    hex::encode(&encoded[encoded.len().saturating_sub(32)..])
}

pub fn save(dataset: &Dataset, path: &Path) -> Result<String> {
    let bytes = encode(dataset)?;
    write_atomic(path, &bytes)?;
    Ok(checksum_hex(&bytes))
}

pub fn load(path: &Path) -> Result<Dataset> {
    decode(&read_file(path)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::cosine;
    use crate::spatial::{proximity, KernelParams};

    fn small() -> DataGenConfig {
        DataGenConfig {
            train_samples: 40,
            val_samples: 12,
            test_samples: 16,
            ..Default::default()
        }
    }

    #[test]
    fn samples_are_reproducible_in_isolation() {
        let cfg = small();
        let g = Generator::new(&cfg).unwrap();
        let ds = generate(&cfg).unwrap();
        assert_eq!(g.sample(SplitKind::Test, 7), ds.test.samples[7]);
        assert_eq!(g.sample(SplitKind::Train, 3), g.sample(SplitKind::Train, 3));
        assert_ne!(ds.train.samples[0], ds.test.samples[0]);
    }

    #[test]
    fn near_noise_free_channels_are_functions_of_the_latent() {
        let cfg = DataGenConfig {
            noise_volume: 1e-9,
            noise_text: 2e-9,
            noise_knowledge: 1e-9,
            ..small()
        };
        let g = Generator::new(&cfg).unwrap();
        let ds = generate(&cfg).unwrap();
        // text = A_t u: regress out A_v via the shared latent. Two samples of the same cluster
        // differ by the latent noise only, so their difference in every channel lies in the
        // span of the projection; check the channel is almost exactly linear in u by comparing
        // the residual of a least-squares fit of text on volume features.
        let s = &ds.train.samples;
        let v = Matrix::from_rows(&s.iter().map(|x| x.volume_features.clone()).collect::<Vec<_>>()).unwrap();
        let t = Matrix::from_rows(&s.iter().map(|x| x.text_features.clone()).collect::<Vec<_>>()).unwrap();
        // volume = A_v u with A_v (32×8) of full column rank: u = pinv(A_v) v. Use normal equations.
        let a = &g.proj_volume;
        let ata = a.t_matmul(a).unwrap();
        let inv = invert(&ata);
        for i in 0..s.len() {
            let atv: Vec<f64> = (0..8).map(|c| (0..32).map(|r| a[(r, c)] * v[(i, r)]).sum()).collect();
            let u: Vec<f64> = (0..8).map(|r| (0..8).map(|c| inv[r][c] * atv[c]).sum()).collect();
            for r in 0..cfg.dim_text {
                let pred = crate::numerics::dot(g.proj_text.row(r), &u);
                assert!((pred - t[(i, r)]).abs() < 1e-6);
            }
        }
    }

    fn invert(m: &Matrix) -> Vec<Vec<f64>> {
        let n = m.rows();
        let mut a: Vec<Vec<f64>> = (0..n)
            .map(|i| {
                let mut row = m.row(i).to_vec();
                row.extend((0..n).map(|j| if i == j { 1.0 } else { 0.0 }));
                row
            })
            .collect();
        for col in 0..n {
            let piv = (col..n)
                .max_by(|&x, &y| a[x][col].abs().total_cmp(&a[y][col].abs()))
                .unwrap();
            a.swap(col, piv);
            let p = a[col][col];
            a[col].iter_mut().for_each(|x| *x /= p);
            for r in 0..n {
                if r != col {
                    let f = a[r][col];
                    let pivot_row = a[col].clone();
                    a[r].iter_mut().zip(pivot_row).for_each(|(x, y)| *x -= f * y);
                }
            }
        }
        a.into_iter().map(|r| r[n..].to_vec()).collect()
    }

    #[test]
    fn cluster_counts_are_uniform() {
        let cfg = DataGenConfig {
            num_clusters: 4,
            train_samples: 400,
            ..small()
        };
        let ds = generate(&cfg).unwrap();
        let mut counts = [0usize; 4];
        for id in ds.train.cluster_ids() {
            counts[id] += 1;
        }
        // Binomial(400, 1/4): mean 100, sd ≈ 8.66; 99% two-sided bounds ≈ ±2.576 sd
        for c in counts {
            assert!((78..=122).contains(&c), "{counts:?}");
        }
        let chi2: f64 = counts.iter().map(|&c| (c as f64 - 100.0).powi(2) / 100.0).sum();
        assert!(chi2 < 11.34, "chi-square {chi2} exceeds the 3-dof 99% quantile");
    }

    #[test]
    fn same_cluster_pairs_are_closer() {
        let cfg = DataGenConfig {
            train_samples: 200,
            ..small()
        };
        let ds = generate(&cfg).unwrap();
        let s = &ds.train.samples;
        let descs = ds.train.descriptors();
        let k = KernelParams::default();
        let (mut cos_same, mut cos_diff, mut p_same, mut p_diff) = (vec![], vec![], vec![], vec![]);
        for i in 0..s.len() {
            for j in (i + 1)..s.len() {
                let c = cosine(&s[i].knowledge_embedding, &s[j].knowledge_embedding).unwrap();
                let p = proximity(&descs[i], &descs[j], &k);
                if s[i].cluster_id == s[j].cluster_id {
                    cos_same.push(c);
                    p_same.push(p);
                } else {
                    cos_diff.push(c);
                    p_diff.push(p);
                }
            }
        }
        assert!(cos_same.len() + cos_diff.len() >= 10_000);
        let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
        assert!(mean(&cos_same) - mean(&cos_diff) > 0.1);
        assert!(mean(&p_same) - mean(&p_diff) > 0.1);
    }

    #[test]
    fn file_round_trip_and_corruption() {
        let ds = generate(&small()).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("d.bin");
        let sum = save(&ds, &path).unwrap();
        assert_eq!(sum.len(), 64);
        let back = load(&path).unwrap();
        assert_eq!(back, ds);

        let bytes = std::fs::read(&path).unwrap();
        assert!(matches!(
            decode(&bytes[..bytes.len() - 100]),
            Err(Error::ChecksumMismatch)
        ));
        assert!(matches!(decode(&bytes[..10]), Err(Error::ChecksumMismatch)));
        let mut flipped = bytes.clone();
        flipped[200] ^= 1;
        assert!(matches!(decode(&flipped), Err(Error::ChecksumMismatch)));

        // a well-formed file with a different version number
        let mut body = bytes[..bytes.len() - 32].to_vec();
        body[8..12].copy_from_slice(&2u32.to_le_bytes());
        let digest = Sha256::digest(&body);
        body.extend_from_slice(&digest);
        assert!(matches!(decode(&body), Err(Error::VersionMismatch { found: 2, .. })));
    }

    #[test]
    fn validation_names_fields() {
        let bad = DataGenConfig {
            num_clusters: 1,
            ..Default::default()
        };
        match bad.validate() {
            Err(Error::InvalidConfig { field, .. }) => assert_eq!(field, "num_clusters"),
            other => panic!("{other:?}"),
        }
        let bad = DataGenConfig {
            noise_knowledge: 0.3,
            ..Default::default()
        };
        assert!(bad.validate().is_err());
        let bad = DataGenConfig {
            dim_text: 1,
            ..Default::default()
        };
        assert!(bad.validate().is_err());
    }
}
