//! The training objective of the toy dual encoder for every loss mode, and its
//! gradient with respect to all encoder parameters.
//!
//! Soft weights are computed from the current (detached) embeddings and then held fixed
//! for the backward pass. [`batch_weights`] and [`objective_with_weights`] are kept separate
//! so finite-difference checks can reuse one frozen set of weights.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::encoder::EncoderParams;
use crate::error::{Error, Result};
use crate::loss::{
    bidirectional_with, combined_grad_s, combined_objective, similarity_backward, Defect, LossBreakdown, MixConfig,
    NormalizedPair,
};
use crate::numerics::Matrix;
use crate::spatial::{proximity_matrix, spatial_weights, KernelParams, SpatialDescriptor};
use crate::weights::{binary_baseline_weights, intra_sim_weights, knowledge_weights, WeightConfig, WeightMatrix};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LossMode {
    /// Uniform pairwise sigmoid loss (all off-diagonal weights 1).
    Binary,
    /// Intra-modal similarity weights only.
    SwcaIntra,
    /// Intra-modal weights modulated by the spatial proximity kernel.
    SwcaSpatial,
    /// Weights from the knowledge embeddings.
    SwcaKnowledge,
    /// `α · spatial + (1 − α) · knowledge`.
    SwcaFull,
}

impl LossMode {
    pub const ALL: [LossMode; 5] = [
        LossMode::Binary,
        LossMode::SwcaIntra,
        LossMode::SwcaSpatial,
        LossMode::SwcaKnowledge,
        LossMode::SwcaFull,
    ];

    pub fn as_str(&self) -> &'static str {
        match self {
            LossMode::Binary => "binary",
            LossMode::SwcaIntra => "swca_intra",
            LossMode::SwcaSpatial => "swca_spatial",
            LossMode::SwcaKnowledge => "swca_knowledge",
            LossMode::SwcaFull => "swca_full",
        }
    }
}

impl fmt::Display for LossMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for LossMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        LossMode::ALL
            .into_iter()
            .find(|m| m.as_str() == s)
            .ok_or_else(|| Error::invalid("loss_mode", format!("unknown mode `{s}`")))
    }
}

/// Which embeddings feed the intra-modal weights (also inside the spatial weights).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WeightSource {
    #[default]
    Volume,
    Text,
    /// Volume embeddings for V→T, text embeddings for T→V.
    PerDirection,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ObjectiveConfig {
    pub loss_mode: LossMode,
    pub weights: WeightConfig,
    pub kernel: KernelParams,
    pub mix: MixConfig,
    pub intra_source: WeightSource,
    #[doc(hidden)]
    #[serde(skip)]
    pub defect: Defect,
}

impl Default for ObjectiveConfig {
    fn default() -> Self {
        Self {
            loss_mode: LossMode::SwcaFull,
            weights: WeightConfig::default(),
            kernel: KernelParams::default(),
            mix: MixConfig::default(),
            intra_source: WeightSource::Volume,
            defect: Defect::None,
        }
    }
}

impl ObjectiveConfig {
    pub fn validate(&self) -> Result<()> {
        self.weights.validate()?;
        self.kernel.validate()?;
        self.mix.validate()
    }
}

/// Raw per-sample inputs of one batch.
#[derive(Debug, Clone, Copy)]
pub struct BatchInputs<'a> {
    pub volume: &'a Matrix,
    pub text: &'a Matrix,
    pub knowledge: &'a Matrix,
    pub descriptors: &'a [SpatialDescriptor],
}

impl BatchInputs<'_> {
    pub fn size(&self) -> usize {
        self.volume.rows()
    }

    fn validate(&self) -> Result<()> {
        let b = self.size();
        if b < 2 {
            return Err(Error::BatchTooSmall(b));
        }
        for (ctx, m) in [("text batch", self.text), ("knowledge batch", self.knowledge)] {
            if m.rows() != b {
                return Err(Error::shape(ctx, (b, m.cols()), m.shape()));
            }
        }
        if self.descriptors.len() != b {
            return Err(Error::shape("spatial descriptors", (b, 1), (self.descriptors.len(), 1)));
        }
        Ok(())
    }
}

/// Weights for the two directions of one bidirectional term.
#[derive(Debug, Clone, PartialEq)]
pub struct DirectionalWeights {
    pub v2t: WeightMatrix,
    pub t2v: WeightMatrix,
}

impl DirectionalWeights {
    fn same(w: WeightMatrix) -> Self {
        Self { v2t: w.clone(), t2v: w }
    }
}

/// Frozen weights for one batch: a single term, or the spatial and knowledge terms in full mode.
#[derive(Debug, Clone, PartialEq)]
pub enum BatchWeights {
    Single(DirectionalWeights),
    Mixed {
        spatial: DirectionalWeights,
        knowledge: DirectionalWeights,
    },
}

/// Loss values of one evaluation. Component fields are `None` when the mode does not use them.
#[derive(Debug, Clone, PartialEq)]
pub struct ObjectiveValue {
    pub total: f64,
    pub loss_v2t: f64,
    pub loss_t2v: f64,
    pub spatial: Option<f64>,
    pub knowledge: Option<f64>,
}

fn intra_pair(v: &Matrix, t: &Matrix, source: WeightSource, cfg: &WeightConfig) -> Result<DirectionalWeights> {
    Ok(match source {
        WeightSource::Volume => DirectionalWeights::same(intra_sim_weights(v, cfg)?),
        WeightSource::Text => DirectionalWeights::same(intra_sim_weights(t, cfg)?),
        WeightSource::PerDirection => DirectionalWeights {
            v2t: intra_sim_weights(v, cfg)?,
            t2v: intra_sim_weights(t, cfg)?,
        },
    })
}

fn spatial_pair(intra: &DirectionalWeights, p: &Matrix, cfg: &WeightConfig) -> Result<DirectionalWeights> {
    Ok(DirectionalWeights {
        v2t: spatial_weights(&intra.v2t, p, cfg)?,
        t2v: spatial_weights(&intra.t2v, p, cfg)?,
    })
}

/// Soft weights for a batch given its current embeddings.
pub fn batch_weights(
    volume_emb: &Matrix,
    text_emb: &Matrix,
    inputs: &BatchInputs<'_>,
    cfg: &ObjectiveConfig,
) -> Result<BatchWeights> {
    let wc = &cfg.weights;
    let b = inputs.size();
    let spatial = || -> Result<DirectionalWeights> {
        let intra = intra_pair(volume_emb, text_emb, cfg.intra_source, wc)?;
        let p = proximity_matrix(inputs.descriptors, &cfg.kernel);
        spatial_pair(&intra, &p, wc)
    };
    Ok(match cfg.loss_mode {
        LossMode::Binary => BatchWeights::Single(DirectionalWeights::same(binary_baseline_weights(b))),
        LossMode::SwcaIntra => BatchWeights::Single(intra_pair(volume_emb, text_emb, cfg.intra_source, wc)?),
        LossMode::SwcaSpatial => BatchWeights::Single(spatial()?),
        LossMode::SwcaKnowledge => {
            BatchWeights::Single(DirectionalWeights::same(knowledge_weights(inputs.knowledge, wc)?))
        }
        LossMode::SwcaFull => BatchWeights::Mixed {
            spatial: spatial()?,
            knowledge: DirectionalWeights::same(knowledge_weights(inputs.knowledge, wc)?),
        },
    })
}

/// Loss and `∂L/∂S` for frozen weights.
pub fn loss_from_similarity(
    pair: &NormalizedPair,
    log_tau: f64,
    weights: &BatchWeights,
    cfg: &ObjectiveConfig,
) -> Result<(ObjectiveValue, Matrix, crate::loss::SimilarityMatrix)> {
    let sim = pair.similarity(log_tau);
    let term = |w: &DirectionalWeights| bidirectional_with(&sim, &w.v2t, &w.t2v, cfg.defect);
    let (value, grad_s) = match weights {
        BatchWeights::Single(w) => {
            let bd = term(w)?;
            let value = ObjectiveValue {
                total: bd.loss_bidirectional,
                loss_v2t: bd.loss_v2t,
                loss_t2v: bd.loss_t2v,
                spatial: matches!(cfg.loss_mode, LossMode::SwcaSpatial).then_some(bd.loss_bidirectional),
                knowledge: matches!(cfg.loss_mode, LossMode::SwcaKnowledge).then_some(bd.loss_bidirectional),
            };
            (value, bd.grad_s())
        }
        BatchWeights::Mixed { spatial, knowledge } => {
            let ls: LossBreakdown = term(spatial)?;
            let lk: LossBreakdown = term(knowledge)?;
            let a = cfg.mix.alpha;
            let value = ObjectiveValue {
                total: combined_objective(&ls, &lk, &cfg.mix),
                loss_v2t: a * ls.loss_v2t + (1.0 - a) * lk.loss_v2t,
                loss_t2v: a * ls.loss_t2v + (1.0 - a) * lk.loss_t2v,
                spatial: Some(ls.loss_bidirectional),
                knowledge: Some(lk.loss_bidirectional),
            };
            (value, combined_grad_s(&ls, &lk, &cfg.mix))
        }
    };
    Ok((value, grad_s, sim))
}

/// Objective value and parameter gradients with the given weights held constant.
pub fn objective_with_weights(
    params: &EncoderParams,
    inputs: &BatchInputs<'_>,
    weights: &BatchWeights,
    cfg: &ObjectiveConfig,
) -> Result<(ObjectiveValue, EncoderParams)> {
    inputs.validate()?;
    let (v, v_cache) = params.volume.forward_cached(inputs.volume)?;
    let (t, t_cache) = params.text.forward_cached(inputs.text)?;
    let pair = NormalizedPair::new(&v, &t)?;
    let (value, grad_s, sim) = loss_from_similarity(&pair, params.log_tau, weights, cfg)?;
    let sg = similarity_backward(&pair, &sim, params.log_tau, &grad_s)?;
    let grads = EncoderParams {
        volume: params.volume.backward(&v_cache, &sg.v)?,
        text: params.text.backward(&t_cache, &sg.t)?,
        log_tau: sg.log_tau,
    };
    Ok((value, grads))
}

/// Objective value only, with frozen weights.
pub fn objective_value(
    params: &EncoderParams,
    inputs: &BatchInputs<'_>,
    weights: &BatchWeights,
    cfg: &ObjectiveConfig,
) -> Result<ObjectiveValue> {
    inputs.validate()?;
    let v = params.volume.forward_cached(inputs.volume)?.0;
    let t = params.text.forward_cached(inputs.text)?.0;
    let pair = NormalizedPair::new(&v, &t)?;
    Ok(loss_from_similarity(&pair, params.log_tau, weights, cfg)?.0)
}

/// Full training step computation: forward, weights from the current embeddings, loss, gradients.
pub fn backward(
    params: &EncoderParams,
    inputs: &BatchInputs<'_>,
    cfg: &ObjectiveConfig,
) -> Result<(ObjectiveValue, EncoderParams)> {
    let weights = current_weights(params, inputs, cfg)?;
    objective_with_weights(params, inputs, &weights, cfg)
}

/// Weights computed from the embeddings the current parameters produce.
pub fn current_weights(
    params: &EncoderParams,
    inputs: &BatchInputs<'_>,
    cfg: &ObjectiveConfig,
) -> Result<BatchWeights> {
    inputs.validate()?;
    let v = params.volume.forward_cached(inputs.volume)?.0;
    let t = params.text.forward_cached(inputs.text)?.0;
    batch_weights(&v, &t, inputs, cfg)
}
