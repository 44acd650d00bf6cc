//! Deterministic training loop for the toy dual encoder.
//!
//! Each epoch reshuffles the training split with a stream keyed by the epoch number, takes
//! one AdamW step per full batch (a trailing partial batch is dropped), and finishes with a
//! validation pass. Weight decay applies to weight matrices only.

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::data::{Dataset, Split};
use crate::encoder::{EncoderDims, EncoderParams};
use crate::error::{Error, Result};
use crate::eval::{embed_split, Direction, RetrievalReport};
use crate::loss::{cross_modal_similarity, tau_from_log};
use crate::numerics::Matrix;
use crate::objective::{backward, BatchInputs, ObjectiveConfig};
use crate::optim::{clip_gradients, lr_schedule, AdamW, AdamWConfig};
use crate::rng::{stream, Domain};
use crate::spatial::SpatialDescriptor;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub epochs: usize,
    pub learning_rate: f64,
    pub weight_decay: f64,
    pub warmup_frac: f64,
    pub grad_clip: f64,
    pub seed: u64,
    pub hidden: usize,
    pub embed_dim: usize,
    pub depth: usize,
    pub objective: ObjectiveConfig,
    pub optimizer: AdamWConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            batch_size: 32,
            epochs: 30,
            learning_rate: 1e-2,
            weight_decay: 0.1,
            warmup_frac: 0.03,
            grad_clip: 0.5,
            seed: 0,
            hidden: 64,
            embed_dim: 16,
            depth: 2,
            objective: ObjectiveConfig::default(),
            optimizer: AdamWConfig::default(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size < 2 {
            return Err(Error::invalid(
                "batch_size",
                format!("must be >= 2, got {}", self.batch_size),
            ));
        }
        let nonneg = [
            ("learning_rate", self.learning_rate),
            ("weight_decay", self.weight_decay),
        ];
        for (name, v) in nonneg {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(Error::invalid(name, format!("must be finite and >= 0, got {v}")));
            }
        }
        if !(self.warmup_frac > 0.0 && self.warmup_frac < 1.0) {
            return Err(Error::invalid(
                "warmup_frac",
                format!("must lie in (0, 1), got {}", self.warmup_frac),
            ));
        }
        if !(self.grad_clip > 0.0 && self.grad_clip.is_finite()) {
            return Err(Error::invalid(
                "grad_clip",
                format!("must be > 0, got {}", self.grad_clip),
            ));
        }
        let o = &self.optimizer;
        if !(0.0..1.0).contains(&o.beta1) || !(0.0..1.0).contains(&o.beta2) {
            return Err(Error::invalid("optimizer", "beta1 and beta2 must lie in [0, 1)"));
        }
        if !(o.eps > 0.0) {
            return Err(Error::invalid("optimizer.eps", "must be > 0"));
        }
        if self.embed_dim < 2 {
            return Err(Error::invalid("embed_dim", "must be >= 2"));
        }
        self.objective.validate()?;
        self.dims(2, 2).validate()
    }

    pub fn dims(&self, input_volume: usize, input_text: usize) -> EncoderDims {
        EncoderDims {
            input_volume,
            input_text,
            hidden: self.hidden,
            embed: self.embed_dim,
            depth: self.depth,
        }
    }

    /// Checks the config against a dataset before any work is done.
    pub fn validate_for(&self, dataset: &Dataset) -> Result<()> {
        self.validate()?;
        if dataset.train.len() < self.batch_size {
            return Err(Error::invalid(
                "batch_size",
                format!(
                    "{} exceeds the {} training samples",
                    self.batch_size,
                    dataset.train.len()
                ),
            ));
        }
        Ok(())
    }
}

/// One JSON-lines record. Recall fields are `None` when the validation split is smaller than K.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochMetrics {
    pub epoch: usize,
    pub loss_total: f64,
    pub loss_spatial: Option<f64>,
    pub loss_knowledge: Option<f64>,
    pub loss_v2t: f64,
    pub loss_t2v: f64,
    pub tau: f64,
    pub r1_v2t: Option<f64>,
    pub r1_t2v: Option<f64>,
    pub r5_v2t: Option<f64>,
    pub r5_t2v: Option<f64>,
    pub r10_v2t: Option<f64>,
    pub r10_t2v: Option<f64>,
    /// Learning rate of the epoch's final step.
    pub lr: f64,
}

pub fn metrics_to_jsonl(rows: &[EpochMetrics]) -> String {
    let mut out = String::new();
    for r in rows {
        out.push_str(&serde_json::to_string(r).expect("metrics serialize"));
        out.push('\n');
    }
    out
}

pub fn metrics_from_jsonl(text: &str) -> Result<Vec<EpochMetrics>> {
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(n, l)| serde_json::from_str(l).map_err(|e| Error::Format(format!("metrics line {}: {e}", n + 1))))
        .collect()
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub params: EncoderParams,
    pub metrics: Vec<EpochMetrics>,
}

/// Validation R@{1,5,10} in both directions.
pub fn validation_recalls(params: &EncoderParams, split: &Split) -> Result<[Option<f64>; 6]> {
    let mut out = [None; 6];
    if split.len() < 2 {
        return Ok(out);
    }
    let (v, t) = embed_split(params, split)?;
    let s = cross_modal_similarity(&v, &t, params.log_tau)?.s;
    let ks: Vec<usize> = [1, 5, 10].into_iter().filter(|&k| k <= split.len()).collect();
    for (d_ix, d) in Direction::BOTH.into_iter().enumerate() {
        let r = RetrievalReport::from_similarity(&s, &ks, d)?;
        for (k_ix, k) in [1, 5, 10].into_iter().enumerate() {
            out[2 * k_ix + d_ix] = r.recall(k);
        }
    }
    Ok(out)
}

pub fn init_params(dataset: &Dataset, cfg: &TrainConfig) -> Result<EncoderParams> {
    let dims = cfg.dims(dataset.config.dim_volume, dataset.config.dim_text);
    EncoderParams::init(&dims, &mut stream(cfg.seed, Domain::ParamInit, 0))
}

struct TrainSplit {
    volume: Matrix,
    text: Matrix,
    knowledge: Matrix,
    descriptors: Vec<SpatialDescriptor>,
}

pub fn train(dataset: &Dataset, cfg: &TrainConfig) -> Result<TrainOutcome> {
    cfg.validate_for(dataset)?;
    let params = init_params(dataset, cfg)?;
    train_from(params, dataset, cfg)
}

/// Runs the loop starting from the given parameters.
pub fn train_from(mut params: EncoderParams, dataset: &Dataset, cfg: &TrainConfig) -> Result<TrainOutcome> {
    cfg.validate_for(dataset)?;
    let split = &dataset.train;
    let data = TrainSplit {
        volume: split.volume_matrix(None),
        text: split.text_matrix(None),
        knowledge: split.knowledge_matrix(None),
        descriptors: split.descriptors(),
    };
    let n = split.len();
    let b = cfg.batch_size;
    let steps_per_epoch = n / b;
    let total_steps = steps_per_epoch * cfg.epochs;
    let decay_mask = params.decay_mask();
    let mut opt = AdamW::new(params.num_params(), cfg.optimizer);
    let mut flat = params.to_flat();
    let mut metrics = Vec::with_capacity(cfg.epochs);
    let mut step = 0usize;

    for epoch in 0..cfg.epochs {
        let mut order: Vec<usize> = (0..n).collect();
        order.shuffle(&mut stream(cfg.seed, Domain::EpochShuffle, epoch as u64));

        let (mut sum_total, mut sum_v2t, mut sum_t2v) = (0.0, 0.0, 0.0);
        let (mut sum_spatial, mut sum_knowledge) = (None::<f64>, None::<f64>);
        let mut lr = 0.0;
        for batch in order.chunks_exact(b) {
            let volume = data.volume.select_rows(batch);
            let text = data.text.select_rows(batch);
            let knowledge = data.knowledge.select_rows(batch);
            let descriptors: Vec<SpatialDescriptor> = batch.iter().map(|&i| data.descriptors[i]).collect();
            let inputs = BatchInputs {
                volume: &volume,
                text: &text,
                knowledge: &knowledge,
                descriptors: &descriptors,
            };
            let (value, grads) = backward(&params, &inputs, &cfg.objective)?;
            if !value.total.is_finite() {
                return Err(Error::NonFinite {
                    step,
                    what: format!("loss = {}", value.total),
                });
            }
            let mut g = grads.to_flat();
            if let Some(bad) = g.iter().position(|x| !x.is_finite()) {
                return Err(Error::NonFinite {
                    step,
                    what: format!("gradient entry {bad}"),
                });
            }
            clip_gradients(&mut g, cfg.grad_clip);
            lr = lr_schedule(step, total_steps, cfg.learning_rate, cfg.warmup_frac);
            opt.step(&mut flat, &g, lr, cfg.weight_decay, Some(&decay_mask));
            params.set_flat(&flat)?;
            if !params.is_finite() {
                return Err(Error::NonFinite {
                    step,
                    what: "parameters after update".into(),
                });
            }
            sum_total += value.total;
            sum_v2t += value.loss_v2t;
            sum_t2v += value.loss_t2v;
            if let Some(s) = value.spatial {
                *sum_spatial.get_or_insert(0.0) += s;
            }
            if let Some(k) = value.knowledge {
                *sum_knowledge.get_or_insert(0.0) += k;
            }
            step += 1;
        }
        let denom = steps_per_epoch as f64;
        let r = validation_recalls(&params, &dataset.val)?;
        metrics.push(EpochMetrics {
            epoch: epoch + 1,
            loss_total: sum_total / denom,
            loss_spatial: sum_spatial.map(|s| s / denom),
            loss_knowledge: sum_knowledge.map(|s| s / denom),
            loss_v2t: sum_v2t / denom,
            loss_t2v: sum_t2v / denom,
            tau: tau_from_log(params.log_tau),
            r1_v2t: r[0],
            r1_t2v: r[1],
            r5_v2t: r[2],
            r5_t2v: r[3],
            r10_v2t: r[4],
            r10_t2v: r[5],
            lr,
        });
    }
    Ok(TrainOutcome { params, metrics })
}
