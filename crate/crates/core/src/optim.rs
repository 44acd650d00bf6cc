//! AdamW with decoupled weight decay, linear-warmup/cosine learning-rate schedule and
//! global-norm gradient clipping.

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AdamWConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamWConfig {
    fn default() -> Self {
        Self {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// First/second moment accumulators for a flat parameter vector.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamW {
    config: AdamWConfig,
    m: Vec<f64>,
    v: Vec<f64>,
    step: u64,
}

impl AdamW {
    pub fn new(num_params: usize, config: AdamWConfig) -> Self {
        Self {
            config,
            m: vec![0.0; num_params],
            v: vec![0.0; num_params],
            step: 0,
        }
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    pub fn moments(&self) -> (&[f64], &[f64]) {
        (&self.m, &self.v)
    }

    /// One update. `decay_mask[k]` selects which entries receive weight decay; `None` decays all.
    ///
    /// ```text
    /// θ ← θ (1 − lr λ)
    /// m ← β₁ m + (1 − β₁) g,  v ← β₂ v + (1 − β₂) g²
    /// θ ← θ − lr · m̂ / (√v̂ + ε)
    /// ```
    pub fn step(&mut self, params: &mut [f64], grads: &[f64], lr: f64, weight_decay: f64, decay_mask: Option<&[bool]>) {
        assert_eq!(params.len(), self.m.len(), "parameter count changed");
        assert_eq!(grads.len(), self.m.len(), "gradient count mismatch");
        if let Some(mask) = decay_mask {
            assert_eq!(mask.len(), params.len(), "decay mask length mismatch");
        }
        self.step += 1;
        let AdamWConfig { beta1, beta2, eps } = self.config;
        let bc1 = 1.0 - beta1.powi(self.step as i32);
        let bc2 = 1.0 - beta2.powi(self.step as i32);
        for k in 0..params.len() {
            let g = grads[k];
            if decay_mask.is_none_or(|m| m[k]) {
                params[k] *= 1.0 - lr * weight_decay;
            }
            self.m[k] = beta1 * self.m[k] + (1.0 - beta1) * g;
            self.v[k] = beta2 * self.v[k] + (1.0 - beta2) * g * g;
            let m_hat = self.m[k] / bc1;
            let v_hat = self.v[k] / bc2;
            params[k] -= lr * m_hat / (v_hat.sqrt() + eps);
        }
    }
}

/// Linear ramp from 0 to `base_lr` over the first `ceil(warmup_frac · total_steps)` steps,
/// then cosine decay reaching 0 at `total_steps`.
pub fn lr_schedule(step: usize, total_steps: usize, base_lr: f64, warmup_frac: f64) -> f64 {
    if total_steps == 0 {
        return 0.0;
    }
    let step = step.min(total_steps);
    let warmup = ((warmup_frac * total_steps as f64).ceil() as usize).clamp(1, total_steps);
    if step < warmup {
        return base_lr * step as f64 / warmup as f64;
    }
    if warmup == total_steps {
        return base_lr;
    }
    let progress = (step - warmup) as f64 / (total_steps - warmup) as f64;
    0.5 * base_lr * (1.0 + (std::f64::consts::PI * progress).cos())
}

/// Global L2 norm of all gradients.
pub fn global_norm(grads: &[f64]) -> f64 {
    grads.iter().map(|g| g * g).sum::<f64>().sqrt()
}

/// Rescales `grads` so their global norm is at most `max_norm`. Returns the norm before clipping.
pub fn clip_gradients(grads: &mut [f64], max_norm: f64) -> f64 {
    let norm = global_norm(grads);
    if norm > max_norm {
        let scale = max_norm / norm;
        grads.iter_mut().for_each(|g| *g *= scale);
    }
    norm
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn zero_gradient_without_decay_is_a_no_op() {
        let mut opt = AdamW::new(3, AdamWConfig::default());
        let mut p = vec![0.5, -1.0, 2.0];
        opt.step(&mut p, &[0.0; 3], 0.1, 0.0, None);
        assert_eq!(p, vec![0.5, -1.0, 2.0]);
    }

    #[test]
    fn first_step_hand_calculation() {
        // m̂ = g, v̂ = g², so Δ = −lr · g / (|g| + ε)
        let mut opt = AdamW::new(1, AdamWConfig::default());
        let mut p = vec![0.0];
        opt.step(&mut p, &[1.0], 0.1, 0.0, None);
        let want = -0.1 * 1.0 / (1.0 + 1e-8);
        assert!((p[0] - want).abs() < 1e-15);
        assert!((p[0] + 0.1).abs() < 1e-8);
        assert_eq!(opt.step_count(), 1);
    }

    #[test]
    fn decay_only_scales_parameters() {
        let mut opt = AdamW::new(2, AdamWConfig::default());
        let mut p = vec![1.0, -3.0];
        opt.step(&mut p, &[0.0, 0.0], 0.1, 0.1, None);
        assert!((p[0] - 0.99).abs() < 1e-15);
        assert!((p[1] + 2.97).abs() < 1e-15);

        let mut p = vec![1.0, -3.0];
        opt.step(&mut p, &[0.0, 0.0], 0.1, 0.1, Some(&[true, false]));
        assert!((p[0] - 0.99).abs() < 1e-15);
        assert_eq!(p[1], -3.0);
    }

    #[test]
    fn second_step_matches_manual_moments() {
        let cfg = AdamWConfig::default();
        let mut opt = AdamW::new(1, cfg);
        let mut p = vec![1.0];
        opt.step(&mut p, &[0.5], 0.01, 0.0, None);
        let after_first = p[0];
        opt.step(&mut p, &[-0.2], 0.01, 0.0, None);
        let m = 0.9 * (0.1 * 0.5) + 0.1 * -0.2;
        let v = 0.999 * (0.001 * 0.25) + 0.001 * 0.04;
        let m_hat = m / (1.0 - 0.81);
        let v_hat = v / (1.0 - 0.999f64.powi(2));
        let want = after_first - 0.01 * m_hat / (v_hat.sqrt() + 1e-8);
        assert!((p[0] - want).abs() < 1e-15);
    }

    #[test]
    fn schedule_endpoints() {
        let total = 1000;
        assert_eq!(lr_schedule(0, total, 1e-3, 0.03), 0.0);
        assert!((lr_schedule(30, total, 1e-3, 0.03) - 1e-3).abs() < 1e-18);
        assert!(lr_schedule(total, total, 1e-3, 0.03).abs() < 1e-18);
        assert!((lr_schedule(15, total, 1e-3, 0.03) - 0.5e-3).abs() < 1e-18);
        let mid = 30 + (total - 30) / 2;
        assert!((lr_schedule(mid, total, 1e-3, 0.03) - 0.5e-3).abs() < 1e-6);
        // non-increasing after warmup
        let mut prev = f64::INFINITY;
        for s in 30..=total {
            let lr = lr_schedule(s, total, 1e-3, 0.03);
            assert!(lr <= prev);
            prev = lr;
        }
    }

    #[test]
    fn clipping() {
        let mut g = vec![0.15, 0.2];
        clip_gradients(&mut g, 0.5);
        assert_eq!(g, vec![0.15, 0.2]);

        let mut g = vec![2.0];
        let before = clip_gradients(&mut g, 0.5);
        assert_eq!(before, 2.0);
        assert!((g[0] - 0.5).abs() < 1e-15);

        let mut rng = ChaCha8Rng::seed_from_u64(0);
        for _ in 0..50 {
            let tensors: Vec<Vec<f64>> = (0..4)
                .map(|_| {
                    (0..rng.random_range(1..20))
                        .map(|_| rng.random_range(-3.0..3.0))
                        .collect()
                })
                .collect();
            let mut flat = tensors.concat();
            clip_gradients(&mut flat, 0.5);
            let recomputed: f64 = flat.iter().map(|x| x * x).sum::<f64>().sqrt();
            assert!(recomputed <= 0.5 + 1e-12);
        }
    }
}
