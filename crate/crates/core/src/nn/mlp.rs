//! Fully connected networks with swish activations and optional Fourier features.

use rand::Rng;
use rand_distr::{Distribution, Normal, Uniform};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{gemm, Op};

use super::jet::{activation_backward, activation_forward, Activation, Jets};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FourierSpec {
    pub n_freq: usize,
    pub mean: f64,
    pub std: f64,
}

/// Fixed random map `x ↦ [cos(x·B), sin(x·B)]`, `B` of shape `n_in × n_freq`.
#[derive(Debug, Clone, PartialEq)]
pub struct FourierMap {
    pub n_in: usize,
    pub n_freq: usize,
    pub b: Vec<f64>,
}

impl FourierMap {
    pub fn out_width(&self) -> usize {
        2 * self.n_freq
    }

    fn forward(&self, x: &Jets) -> (Jets, Jets) {
        let mut z = Jets::zeros(x.n, self.n_freq, x.n_dir);
        gemm(
            x.rows(),
            self.n_in,
            self.n_freq,
            1.0,
            &x.data,
            Op::N,
            &self.b,
            Op::N,
            0.0,
            &mut z.data,
        );
        let c = activation_forward(Activation::Cos, &z);
        let s = activation_forward(Activation::Sin, &z);
        let mut out = Jets::zeros(x.n, 2 * self.n_freq, x.n_dir);
        let nf = self.n_freq;
        for r in 0..x.rows() {
            out.data[r * 2 * nf..r * 2 * nf + nf].copy_from_slice(&c.data[r * nf..(r + 1) * nf]);
            out.data[r * 2 * nf + nf..(r + 1) * 2 * nf]
                .copy_from_slice(&s.data[r * nf..(r + 1) * nf]);
        }
        (out, z)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MlpSpec {
    /// Widths including input and output. With Fourier features the first
    /// width is the raw input width.
    pub widths: Vec<usize>,
    #[serde(default)]
    pub fourier: Option<FourierSpec>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LinearLayer {
    pub n_in: usize,
    pub n_out: usize,
    /// Row-major `n_in × n_out` so that `y = x·W + b`.
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
}

/// Affine layers with swish between them; the last layer is linear.
#[derive(Debug, Clone, PartialEq)]
pub struct Mlp {
    pub fourier: Option<FourierMap>,
    pub layers: Vec<LinearLayer>,
}

#[derive(Debug, Clone)]
pub struct MlpCache {
    /// Input to each linear layer.
    inputs: Vec<Jets>,
    /// Pre-activation output of each hidden layer.
    pre: Vec<Jets>,
}

impl Mlp {
    /// Xavier-uniform weights, zero biases, Gaussian Fourier frequencies.
    pub fn init<R: Rng>(spec: &MlpSpec, rng: &mut R) -> Result<Self> {
        if spec.widths.len() < 2 || spec.widths.contains(&0) {
            return Err(Error::Config(format!(
                "invalid MLP widths {:?}",
                spec.widths
            )));
        }
        let fourier = match &spec.fourier {
            Some(f) => {
                if f.n_freq == 0 || !(f.std >= 0.0) {
                    return Err(Error::Config("invalid Fourier feature spec".into()));
                }
                let normal =
                    Normal::new(f.mean, f.std).map_err(|e| Error::Config(e.to_string()))?;
                let b = (0..spec.widths[0] * f.n_freq)
                    .map(|_| normal.sample(rng))
                    .collect();
                Some(FourierMap {
                    n_in: spec.widths[0],
                    n_freq: f.n_freq,
                    b,
                })
            }
            None => None,
        };
        let mut widths = spec.widths.clone();
        if let Some(f) = &fourier {
            widths[0] = f.out_width();
        }
        let layers = widths
            .windows(2)
            .map(|w| {
                let limit = (6.0 / (w[0] + w[1]) as f64).sqrt();
                let dist = Uniform::new_inclusive(-limit, limit).expect("finite bounds");
                LinearLayer {
                    n_in: w[0],
                    n_out: w[1],
                    weights: (0..w[0] * w[1]).map(|_| dist.sample(rng)).collect(),
                    bias: vec![0.0; w[1]],
                }
            })
            .collect();
        Ok(Self { fourier, layers })
    }

    pub fn from_layers(layers: Vec<LinearLayer>, fourier: Option<FourierMap>) -> Result<Self> {
        let mut expected = fourier.as_ref().map(|f| f.out_width());
        for (idx, l) in layers.iter().enumerate() {
            if l.weights.len() != l.n_in * l.n_out || l.bias.len() != l.n_out {
                return Err(Error::Dimension(format!(
                    "layer {idx}: parameter shapes disagree"
                )));
            }
            if expected.is_some_and(|w| w != l.n_in) {
                return Err(Error::Dimension(format!(
                    "layer {idx}: expected input width {}",
                    expected.unwrap()
                )));
            }
            expected = Some(l.n_out);
        }
        if layers.is_empty() {
            return Err(Error::Config("MLP has no layers".into()));
        }
        Ok(Self { fourier, layers })
    }

    pub fn n_in(&self) -> usize {
        self.fourier
            .as_ref()
            .map(|f| f.n_in)
            .unwrap_or(self.layers[0].n_in)
    }

    pub fn n_out(&self) -> usize {
        self.layers.last().unwrap().n_out
    }

    pub fn spec(&self) -> MlpSpec {
        let mut widths = vec![self.n_in()];
        widths.extend(self.layers.iter().map(|l| l.n_out));
        MlpSpec {
            widths,
            fourier: None,
        }
    }

    pub fn param_count(&self) -> usize {
        self.layers
            .iter()
            .map(|l| l.weights.len() + l.bias.len())
            .sum()
    }

    /// Trainable parameters: weights then bias for each layer. Fourier
    /// frequencies are fixed.
    pub fn param_slices(&self) -> Vec<&[f64]> {
        self.layers
            .iter()
            .flat_map(|l| [l.weights.as_slice(), l.bias.as_slice()])
            .collect()
    }

    pub fn param_slices_mut(&mut self) -> Vec<&mut [f64]> {
        self.layers
            .iter_mut()
            .flat_map(|l| [l.weights.as_mut_slice(), l.bias.as_mut_slice()])
            .collect()
    }

    /// Single-input evaluation with width checking.
    pub fn forward_vec(&self, input: &[f64]) -> Result<Vec<f64>> {
        if input.len() != self.n_in() {
            return Err(Error::Dimension(format!(
                "MLP expects {} inputs, got {}",
                self.n_in(),
                input.len()
            )));
        }
        Ok(self
            .forward(&Jets::values(1, input.len(), input.to_vec()))
            .data)
    }

    pub fn forward(&self, x: &Jets) -> Jets {
        self.forward_cached(x).0
    }

    pub fn forward_cached(&self, x: &Jets) -> (Jets, MlpCache) {
        assert_eq!(x.width, self.n_in(), "MLP input width");
        let mut h = match &self.fourier {
            Some(f) => f.forward(x).0,
            None => x.clone(),
        };
        let mut inputs = Vec::with_capacity(self.layers.len());
        let mut pre = Vec::with_capacity(self.layers.len());
        let last = self.layers.len() - 1;
        for (idx, layer) in self.layers.iter().enumerate() {
            let mut z = Jets::zeros(h.n, layer.n_out, h.n_dir);
            gemm(
                h.rows(),
                layer.n_in,
                layer.n_out,
                1.0,
                &h.data,
                Op::N,
                &layer.weights,
                Op::N,
                0.0,
                &mut z.data,
            );
            for row in z.data[..h.n * layer.n_out].chunks_exact_mut(layer.n_out) {
                for (v, b) in row.iter_mut().zip(&layer.bias) {
                    *v += b;
                }
            }
            inputs.push(h);
            if idx == last {
                h = z;
            } else {
                h = activation_forward(Activation::Swish, &z);
                pre.push(z);
            }
        }
        (h, MlpCache { inputs, pre })
    }

    /// Parameter gradient in [`param_slices`](Self::param_slices) order.
    pub fn backward(&self, cache: &MlpCache, dy: &Jets) -> Vec<f64> {
        let mut grads: Vec<Vec<f64>> = vec![Vec::new(); 2 * self.layers.len()];
        let mut g = dy.clone();
        for (idx, layer) in self.layers.iter().enumerate().rev() {
            let x = &cache.inputs[idx];
            let mut dw = vec![0.0; layer.n_in * layer.n_out];
            gemm(
                layer.n_in,
                x.rows(),
                layer.n_out,
                1.0,
                &x.data,
                Op::T,
                &g.data,
                Op::N,
                0.0,
                &mut dw,
            );
            let mut db = vec![0.0; layer.n_out];
            for row in g.data[..g.n * layer.n_out].chunks_exact(layer.n_out) {
                for (d, v) in db.iter_mut().zip(row) {
                    *d += v;
                }
            }
            grads[2 * idx] = dw;
            grads[2 * idx + 1] = db;
            if idx > 0 {
                let mut dx = Jets::zeros(g.n, layer.n_in, g.n_dir);
                gemm(
                    g.rows(),
                    layer.n_out,
                    layer.n_in,
                    1.0,
                    &g.data,
                    Op::N,
                    &layer.weights,
                    Op::T,
                    0.0,
                    &mut dx.data,
                );
                g = activation_backward(Activation::Swish, &cache.pre[idx - 1], &dx);
            }
        }
        grads.concat()
    }
}
