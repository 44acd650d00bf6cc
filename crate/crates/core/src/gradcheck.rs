//! Randomized verification of the full objective: values against the brute-force
//! [`reference`](crate::reference) and analytic gradients against central finite differences.
//!
//! Soft weights are computed once at the base point and frozen for the finite differences,
//! matching how they are treated during training.

use rand::Rng;
use rand_distr::StandardNormal;
use serde::Serialize;

use crate::encoder::{EncoderDims, EncoderParams};
use crate::error::{Error, Result};
use crate::loss::Defect;
use crate::numerics::Matrix;
use crate::objective::{
    current_weights, objective_value, objective_with_weights, BatchInputs, LossMode, ObjectiveConfig, WeightSource,
};
use crate::reference;
use crate::rng::{stream, Domain};
use crate::spatial::{descriptor, PatchCloud};

pub const BATCH: usize = 6;
pub const INPUT_DIM: usize = 8;
pub const STEP: f64 = 1e-5;
/// Denominator floor of the relative error, so entries that are zero up to rounding do not blow up.
pub const REL_FLOOR: f64 = 1e-6;
/// Allowed gap between the production loss value and the reference.
pub const VALUE_TOLERANCE: f64 = 1e-10;

#[derive(Debug, Clone)]
pub struct GradcheckOptions {
    pub trials: usize,
    pub tolerance: f64,
    pub seed: u64,
    /// Weight, kernel and mix settings; `loss_mode` and `intra_source` are overridden per case.
    pub objective: ObjectiveConfig,
}

impl Default for GradcheckOptions {
    fn default() -> Self {
        Self {
            trials: 20,
            tolerance: 1e-4,
            seed: 0,
            objective: ObjectiveConfig::default(),
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct ModeResult {
    pub loss_mode: LossMode,
    pub max_rel_error: f64,
    pub max_value_error: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct GradcheckReport {
    pub trials: usize,
    pub tolerance: f64,
    pub max_rel_error: f64,
    pub max_value_error: f64,
    pub modes: Vec<ModeResult>,
    pub passed: bool,
}

struct Case {
    params: EncoderParams,
    volume: Matrix,
    text: Matrix,
    knowledge: Matrix,
    clouds: Vec<PatchCloud>,
}

fn random_case(seed: u64, trial: usize) -> Result<Case> {
    let mut rng = stream(seed, Domain::Gradcheck, trial as u64);
    let dims = EncoderDims {
        input_volume: INPUT_DIM,
        input_text: INPUT_DIM,
        hidden: INPUT_DIM,
        embed: INPUT_DIM,
        depth: 2,
    };
    let mut params = EncoderParams::init(&dims, &mut rng)?;
    params.log_tau = rng.random_range(0.0..3.0);
    let mut gauss =
        |r: usize, c: usize, std: f64| Matrix::from_fn(r, c, |_, _| std * rng.sample::<f64, _>(StandardNormal));
    let volume = gauss(BATCH, INPUT_DIM, 1.0);
    let text = gauss(BATCH, INPUT_DIM, 1.0);
    let knowledge = gauss(BATCH, INPUT_DIM, 1.0);
    // clouds near a common location so proximities are not all vanishingly small
    let mut clouds = Vec::with_capacity(BATCH);
    for _ in 0..BATCH {
        let offset: [f64; 3] = [
            rng.random_range(-0.05..0.05),
            rng.random_range(-0.05..0.05),
            rng.random_range(-0.05..0.05),
        ];
        let spread = rng.random_range(0.02..0.08);
        let centroids: Vec<[f64; 3]> = (0..5)
            .map(|_| {
                let mut c = [0.0; 3];
                for d in 0..3 {
                    let x: f64 = rng.sample(StandardNormal);
                    c[d] = (0.5 + offset[d] + spread * x).clamp(0.0, 1.0);
                }
                c
            })
            .collect();
        let saliency: Vec<f64> = (0..5).map(|_| rng.random_range(0.0..1.0)).collect();
        clouds.push(PatchCloud::new(centroids, saliency)?);
    }
    Ok(Case {
        params,
        volume,
        text,
        knowledge,
        clouds,
    })
}

/// Returns `(max relative gradient error, |value − reference|)` for one case.
fn check_case(case: &Case, cfg: &ObjectiveConfig) -> Result<(f64, f64)> {
    let descriptors: Vec<_> = case.clouds.iter().map(descriptor).collect();
    let inputs = BatchInputs {
        volume: &case.volume,
        text: &case.text,
        knowledge: &case.knowledge,
        descriptors: &descriptors,
    };
    let weights = current_weights(&case.params, &inputs, cfg)?;
    let (value, grads) = objective_with_weights(&case.params, &inputs, &weights, cfg)?;

    let raw_clouds: Vec<(Vec<[f64; 3]>, Vec<f64>)> = case
        .clouds
        .iter()
        .map(|c| (c.centroids().to_vec(), c.saliency().to_vec()))
        .collect();
    let oracle = reference::objective(
        &case.params,
        &reference::grid(&case.volume),
        &reference::grid(&case.text),
        &reference::grid(&case.knowledge),
        &raw_clouds,
        cfg,
    );
    let value_err = (value.total - oracle).abs();

    let analytic = grads.to_flat();
    let base = case.params.to_flat();
    let mut probe = case.params.clone();
    let mut x = base.clone();
    let mut worst: f64 = 0.0;
    for k in 0..base.len() {
        x[k] = base[k] + STEP;
        probe.set_flat(&x)?;
        let fp = objective_value(&probe, &inputs, &weights, cfg)?.total;
        x[k] = base[k] - STEP;
        probe.set_flat(&x)?;
        let fm = objective_value(&probe, &inputs, &weights, cfg)?.total;
        x[k] = base[k];
        let fd = (fp - fm) / (2.0 * STEP);
        let err = (fd - analytic[k]).abs() / fd.abs().max(analytic[k].abs()).max(REL_FLOOR);
        worst = worst.max(if err.is_nan() { f64::INFINITY } else { err });
    }
    Ok((worst, value_err))
}

/// Runs every loss mode on `trials` random cases; the intra-weight source cycles per trial.
#[doc(hidden)]
pub fn run_with_defect(opts: &GradcheckOptions, defect: Defect) -> Result<GradcheckReport> {
    if opts.trials == 0 {
        return Err(Error::invalid("trials", "must be >= 1"));
    }
    if !(opts.tolerance > 0.0 && opts.tolerance.is_finite()) {
        return Err(Error::invalid("tolerance", "must be > 0"));
    }
    opts.objective.validate()?;
    let sources = [WeightSource::Volume, WeightSource::Text, WeightSource::PerDirection];
    let mut modes: Vec<ModeResult> = LossMode::ALL
        .iter()
        .map(|&m| ModeResult {
            loss_mode: m,
            max_rel_error: 0.0,
            max_value_error: 0.0,
        })
        .collect();
    for trial in 0..opts.trials {
        let case = random_case(opts.seed, trial)?;
        for r in modes.iter_mut() {
            let cfg = ObjectiveConfig {
                loss_mode: r.loss_mode,
                intra_source: sources[trial % sources.len()],
                defect,
                ..opts.objective
            };
            let (g, v) = check_case(&case, &cfg)?;
            r.max_rel_error = r.max_rel_error.max(g);
            r.max_value_error = r.max_value_error.max(v);
        }
    }
    let max_rel_error = modes.iter().map(|m| m.max_rel_error).fold(0.0, f64::max);
    let max_value_error = modes.iter().map(|m| m.max_value_error).fold(0.0, f64::max);
    Ok(GradcheckReport {
        trials: opts.trials,
        tolerance: opts.tolerance,
        max_rel_error,
        max_value_error,
        passed: max_rel_error <= opts.tolerance && max_value_error <= VALUE_TOLERANCE,
        modes,
    })
}

pub fn run_gradcheck(opts: &GradcheckOptions) -> Result<GradcheckReport> {
    run_with_defect(opts, Defect::None)
}
