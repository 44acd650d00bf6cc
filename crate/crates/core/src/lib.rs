//! Soft-weighted contrastive alignment (SWCA) for paired volume/report embeddings.
//!
//! The crate is organised bottom-up:
//!
//! * [`numerics`]: dense matrices and the stable scalar functions everything else uses.
//! * [`weights`]: intra-modal similarity scores and row-normalized soft weights.
//! * [`spatial`]: patch-cloud descriptors, the Gaussian proximity kernel and spatial weights.
//! * [`loss`]: scaled-cosine similarity, directional/bidirectional soft-weighted sigmoid
//!   losses, the α-mixed objective and a row-streaming evaluator.
//! * [`encoder`], [`objective`], [`optim`], [`train`]: a small dual encoder with explicit
//!   backward passes, AdamW with warmup/cosine schedule, and a deterministic training loop.
//! * [`data`]: a seeded synthetic generator of clustered paired samples and its file format.
//! * [`eval`]: Recall@K / SumR, pool evaluation, α ablations, k-means ordering and heatmaps.
//! * [`gradcheck`] and [`reference`]: finite-difference and brute-force verification.

// Index loops mirror the math; negated comparisons are deliberate so NaN fails validation.
#![allow(clippy::needless_range_loop, clippy::neg_cmp_op_on_partial_ord)]

pub mod checkpoint;
pub mod config;
pub mod data;
pub mod encoder;
pub mod error;
pub mod eval;
pub mod gradcheck;
pub mod io;
pub mod loss;
pub mod numerics;
pub mod objective;
pub mod optim;
pub mod reference;
pub mod rng;
pub mod spatial;
pub mod train;
pub mod weights;

pub use error::{Error, Result};
pub use numerics::Matrix;

pub use data::{DataGenConfig, Dataset, PairedSample, Split, SplitKind};
pub use encoder::{EncoderDims, EncoderParams, Modality};
pub use eval::{Direction, RetrievalReport};
pub use loss::{LossBreakdown, MixConfig, SimilarityMatrix, TargetMatrix};
pub use objective::{LossMode, ObjectiveConfig, WeightSource};
pub use spatial::{KernelParams, PatchCloud, SpatialDescriptor};
pub use train::{EpochMetrics, TrainConfig};
pub use weights::{WeightConfig, WeightKind, WeightMatrix};
