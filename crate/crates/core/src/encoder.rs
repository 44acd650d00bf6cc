//! Toy dual encoder: one small tanh MLP per modality plus a learnable log-temperature.
//!
//! Depth 1 is a single affine map; depth 2 is affine → tanh → affine. Outputs are raw
//! (unnormalized) embeddings.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::loss::initial_log_tau;
use crate::numerics::Matrix;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Modality {
    Volume,
    Text,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct EncoderDims {
    pub input_volume: usize,
    pub input_text: usize,
    pub hidden: usize,
    pub embed: usize,
    pub depth: usize,
}

impl EncoderDims {
    pub fn validate(&self) -> Result<()> {
        if !(1..=2).contains(&self.depth) {
            return Err(Error::invalid("depth", format!("must be 1 or 2, got {}", self.depth)));
        }
        for (name, v) in [
            ("input_volume", self.input_volume),
            ("input_text", self.input_text),
            ("hidden", self.hidden),
            ("embed_dim", self.embed),
        ] {
            if v == 0 {
                return Err(Error::invalid(name, "must be positive"));
            }
        }
        Ok(())
    }
}

/// Affine map `y = x W + b` with `W` stored `in × out`.
#[derive(Debug, Clone, PartialEq)]
pub struct Layer {
    pub weight: Matrix,
    pub bias: Vec<f64>,
}

impl Layer {
    pub fn zeros(input: usize, output: usize) -> Self {
        Self {
            weight: Matrix::zeros(input, output),
            bias: vec![0.0; output],
        }
    }

    /// Glorot-uniform weights, zero bias.
    pub fn glorot(input: usize, output: usize, rng: &mut impl Rng) -> Self {
        let limit = (6.0 / (input + output) as f64).sqrt();
        Self {
            weight: Matrix::from_fn(input, output, |_, _| rng.random_range(-limit..limit)),
            bias: vec![0.0; output],
        }
    }

    fn apply(&self, x: &Matrix) -> Result<Matrix> {
        let mut out = x.matmul(&self.weight)?;
        for i in 0..out.rows() {
            for (o, b) in out.row_mut(i).iter_mut().zip(&self.bias) {
                *o += b;
            }
        }
        Ok(out)
    }

    pub fn input_dim(&self) -> usize {
        self.weight.rows()
    }

    pub fn output_dim(&self) -> usize {
        self.weight.cols()
    }
}

/// The layers of one modality.
#[derive(Debug, Clone, PartialEq)]
pub struct Tower {
    pub layers: Vec<Layer>,
}

/// Activations kept from the forward pass: the input and each hidden `tanh` output.
#[derive(Debug, Clone)]
pub struct TowerCache {
    inputs: Vec<Matrix>,
}

impl Tower {
    pub fn init(input: usize, dims: &EncoderDims, rng: &mut impl Rng) -> Self {
        let layers = if dims.depth == 1 {
            vec![Layer::glorot(input, dims.embed, rng)]
        } else {
            vec![
                Layer::glorot(input, dims.hidden, rng),
                Layer::glorot(dims.hidden, dims.embed, rng),
            ]
        };
        Self { layers }
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].input_dim()
    }

    pub fn forward_cached(&self, x: &Matrix) -> Result<(Matrix, TowerCache)> {
        if x.cols() != self.input_dim() {
            return Err(Error::shape("encoder forward", (x.rows(), self.input_dim()), x.shape()));
        }
        let mut inputs = Vec::with_capacity(self.layers.len());
        let mut h = x.clone();
        let last = self.layers.len() - 1;
        for (l, layer) in self.layers.iter().enumerate() {
            let mut a = layer.apply(&h)?;
            if l < last {
                a.as_mut_slice().iter_mut().for_each(|v| *v = v.tanh());
            }
            inputs.push(std::mem::replace(&mut h, a));
        }
        Ok((h, TowerCache { inputs }))
    }

    /// Parameter gradients given `∂L/∂output`.
    pub fn backward(&self, cache: &TowerCache, grad_out: &Matrix) -> Result<Tower> {
        let mut grads: Vec<Layer> = Vec::with_capacity(self.layers.len());
        let mut delta = grad_out.clone();
        for l in (0..self.layers.len()).rev() {
            let input = &cache.inputs[l];
            let weight_grad = input.t_matmul(&delta)?;
            let mut bias_grad = vec![0.0; delta.cols()];
            for r in delta.row_iter() {
                for (g, d) in bias_grad.iter_mut().zip(r) {
                    *g += d;
                }
            }
            grads.push(Layer {
                weight: weight_grad,
                bias: bias_grad,
            });
            if l > 0 {
                let mut upstream = delta.matmul_t(&self.layers[l].weight)?;
                // input to layer l is tanh(a_{l-1}); tanh' = 1 − tanh²
                for (u, h) in upstream.as_mut_slice().iter_mut().zip(input.as_slice()) {
                    *u *= 1.0 - h * h;
                }
                delta = upstream;
            }
        }
        grads.reverse();
        Ok(Tower { layers: grads })
    }

    fn zeros_like(&self) -> Tower {
        Tower {
            layers: self
                .layers
                .iter()
                .map(|l| Layer::zeros(l.input_dim(), l.output_dim()))
                .collect(),
        }
    }
}

/// Both towers and the log-temperature.
#[derive(Debug, Clone, PartialEq)]
pub struct EncoderParams {
    pub volume: Tower,
    pub text: Tower,
    pub log_tau: f64,
}

impl EncoderParams {
    pub fn init(dims: &EncoderDims, rng: &mut impl Rng) -> Result<Self> {
        dims.validate()?;
        let volume = Tower::init(dims.input_volume, dims, rng);
        let text = Tower::init(dims.input_text, dims, rng);
        Ok(Self {
            volume,
            text,
            log_tau: initial_log_tau(),
        })
    }

    /// Same structure with every entry zero; used as a gradient container.
    pub fn zeros_like(&self) -> Self {
        Self {
            volume: self.volume.zeros_like(),
            text: self.text.zeros_like(),
            log_tau: 0.0,
        }
    }

    pub fn tower(&self, modality: Modality) -> &Tower {
        match modality {
            Modality::Volume => &self.volume,
            Modality::Text => &self.text,
        }
    }

    pub fn depth(&self) -> usize {
        self.volume.layers.len()
    }

    pub fn dims(&self) -> EncoderDims {
        let depth = self.depth();
        EncoderDims {
            input_volume: self.volume.input_dim(),
            input_text: self.text.input_dim(),
            hidden: if depth == 2 {
                self.volume.layers[0].output_dim()
            } else {
                0
            },
            embed: self.volume.layers[depth - 1].output_dim(),
            depth,
        }
    }

    /// Tensors in their canonical order: volume layers (weight, bias), text layers, log_tau.
    pub fn tensors(&self) -> Vec<&[f64]> {
        let mut out: Vec<&[f64]> = Vec::new();
        for tower in [&self.volume, &self.text] {
            for l in &tower.layers {
                out.push(l.weight.as_slice());
                out.push(&l.bias);
            }
        }
        out.push(std::slice::from_ref(&self.log_tau));
        out
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut [f64]> {
        let mut out: Vec<&mut [f64]> = Vec::new();
        for tower in [&mut self.volume, &mut self.text] {
            for l in tower.layers.iter_mut() {
                out.push(l.weight.as_mut_slice());
                out.push(&mut l.bias);
            }
        }
        out.push(std::slice::from_mut(&mut self.log_tau));
        out
    }

    /// Shapes matching [`EncoderParams::tensors`]; biases and `log_tau` are 1-D.
    pub fn tensor_shapes(&self) -> Vec<Vec<usize>> {
        let mut out = Vec::new();
        for tower in [&self.volume, &self.text] {
            for l in &tower.layers {
                out.push(vec![l.input_dim(), l.output_dim()]);
                out.push(vec![l.output_dim()]);
            }
        }
        out.push(vec![1]);
        out
    }

    /// Which flattened entries are weight-matrix entries (the ones subject to weight decay).
    pub fn decay_mask(&self) -> Vec<bool> {
        let mut mask = Vec::with_capacity(self.num_params());
        for tower in [&self.volume, &self.text] {
            for l in &tower.layers {
                mask.extend(std::iter::repeat_n(true, l.weight.as_slice().len()));
                mask.extend(std::iter::repeat_n(false, l.bias.len()));
            }
        }
        mask.push(false);
        mask
    }

    pub fn num_params(&self) -> usize {
        self.tensors().iter().map(|t| t.len()).sum()
    }

    pub fn to_flat(&self) -> Vec<f64> {
        self.tensors().concat()
    }

    pub fn set_flat(&mut self, flat: &[f64]) -> Result<()> {
        if flat.len() != self.num_params() {
            return Err(Error::shape(
                "EncoderParams::set_flat",
                (self.num_params(), 1),
                (flat.len(), 1),
            ));
        }
        let mut offset = 0;
        for t in self.tensors_mut() {
            let n = t.len();
            t.copy_from_slice(&flat[offset..offset + n]);
            offset += n;
        }
        Ok(())
    }

    pub fn is_finite(&self) -> bool {
        self.tensors().iter().all(|t| t.iter().all(|v| v.is_finite()))
    }
}

/// Raw embeddings of one modality.
pub fn forward(params: &EncoderParams, x: &Matrix, modality: Modality) -> Result<Matrix> {
    Ok(params.tower(modality).forward_cached(x)?.0)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn dims(depth: usize) -> EncoderDims {
        EncoderDims {
            input_volume: 5,
            input_text: 4,
            hidden: 6,
            embed: 3,
            depth,
        }
    }

    #[test]
    fn zero_params_give_zero_rows() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut p = EncoderParams::init(&dims(2), &mut rng).unwrap();
        let zeros = vec![0.0; p.num_params()];
        p.set_flat(&zeros).unwrap();
        let x = Matrix::from_fn(3, 5, |i, j| (i + j) as f64);
        let out = forward(&p, &x, Modality::Volume).unwrap();
        assert!(out.as_slice().iter().all(|&v| v == 0.0));
        let t = forward(&p, &Matrix::filled(3, 4, 1.0), Modality::Text).unwrap();
        assert!(matches!(
            crate::loss::cross_modal_similarity(&out, &t, 0.0),
            Err(Error::ZeroNorm { row: Some(0) })
        ));
    }

    #[test]
    fn identity_layer_is_passthrough() {
        let p = EncoderParams {
            volume: Tower {
                layers: vec![Layer {
                    weight: Matrix::identity(3),
                    bias: vec![0.0; 3],
                }],
            },
            text: Tower {
                layers: vec![Layer::zeros(2, 3)],
            },
            log_tau: 0.0,
        };
        let x = Matrix::from_rows(&[[1.0, -2.0, 0.5], [0.0, 3.0, 1.0]]).unwrap();
        assert_eq!(forward(&p, &x, Modality::Volume).unwrap(), x);
    }

    #[test]
    fn forward_matches_matmul_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let p = EncoderParams::init(&dims(2), &mut rng).unwrap();
        let x = Matrix::from_fn(4, 5, |_, _| rng.random_range(-1.0..1.0));
        let out = forward(&p, &x, Modality::Volume).unwrap();
        let l0 = &p.volume.layers[0];
        let l1 = &p.volume.layers[1];
        for r in 0..4 {
            let mut hidden = [0.0; 6];
            for h in 0..6 {
                let mut a = l0.bias[h];
                for i in 0..5 {
                    a += x[(r, i)] * l0.weight[(i, h)];
                }
                hidden[h] = a.tanh();
            }
            for o in 0..3 {
                let mut a = l1.bias[o];
                for h in 0..6 {
                    a += hidden[h] * l1.weight[(h, o)];
                }
                assert!((out[(r, o)] - a).abs() < 1e-14);
            }
        }
        assert!(forward(&p, &Matrix::zeros(2, 4), Modality::Volume).is_err());
    }

    #[test]
    fn tower_backward_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for depth in [1, 2] {
            let p = EncoderParams::init(&dims(depth), &mut rng).unwrap();
            let x = Matrix::from_fn(3, 5, |_, _| rng.random_range(-1.0..1.0));
            let g_out = Matrix::from_fn(3, 3, |_, _| rng.random_range(-1.0..1.0));
            // L = Σ g_out ⊙ f(x)
            let f = |p: &EncoderParams| {
                let y = forward(p, &x, Modality::Volume).unwrap();
                y.as_slice()
                    .iter()
                    .zip(g_out.as_slice())
                    .map(|(a, b)| a * b)
                    .sum::<f64>()
            };
            let (_, cache) = p.volume.forward_cached(&x).unwrap();
            let grads = p.volume.backward(&cache, &g_out).unwrap();
            let mut g = p.zeros_like();
            g.volume = grads;
            let analytic = g.to_flat();
            let base = p.to_flat();
            let h = 1e-6;
            for k in 0..base.len() {
                let mut q = p.clone();
                let mut plus = base.clone();
                plus[k] += h;
                q.set_flat(&plus).unwrap();
                let fp = f(&q);
                let mut minus = base.clone();
                minus[k] -= h;
                q.set_flat(&minus).unwrap();
                let fm = f(&q);
                assert!(((fp - fm) / (2.0 * h) - analytic[k]).abs() < 1e-8, "param {k}");
            }
        }
    }

    #[test]
    fn flat_round_trip_and_mask() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let p = EncoderParams::init(&dims(2), &mut rng).unwrap();
        let mut q = p.zeros_like();
        q.set_flat(&p.to_flat()).unwrap();
        assert_eq!(p, q);
        let mask = p.decay_mask();
        assert_eq!(mask.len(), p.num_params());
        assert_eq!(mask.iter().filter(|m| **m).count(), 5 * 6 + 6 * 3 + 4 * 6 + 6 * 3);
        assert!(!mask[mask.len() - 1]);
        assert_eq!(p.dims(), dims(2));
    }
}
