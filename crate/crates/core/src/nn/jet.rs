//! Second-order forward-mode tangents ("jets") carried through networks.
//!
//! A [`Jets`] batch holds `n` points of width `width` in `1 + 2·n_dir`
//! blocks: block 0 is the value, blocks `1 + 2d` and `2 + 2d` are the first
//! and second directional derivatives along direction `d`. Each block is a
//! contiguous row-major `n × width` matrix, so a linear layer acts on all
//! blocks with one GEMM.

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq)]
pub struct Jets {
    pub n: usize,
    pub width: usize,
    pub n_dir: usize,
    pub data: Vec<f64>,
}

impl Jets {
    pub fn zeros(n: usize, width: usize, n_dir: usize) -> Self {
        Self {
            n,
            width,
            n_dir,
            data: vec![0.0; (1 + 2 * n_dir) * n * width],
        }
    }

    /// Value-only batch (no tangents).
    pub fn values(n: usize, width: usize, data: Vec<f64>) -> Self {
        assert_eq!(data.len(), n * width);
        Self {
            n,
            width,
            n_dir: 0,
            data,
        }
    }

    /// Scalar inputs seeded with unit tangent: `(s, 1, 0)` per point.
    pub fn seed_scalar(s: &[f64]) -> Self {
        let n = s.len();
        let mut j = Self::zeros(n, 1, 1);
        j.block_mut(0).copy_from_slice(s);
        j.block_mut(1).iter_mut().for_each(|v| *v = 1.0);
        j
    }

    /// Multi-input points (row-major `n × width`) with one unit direction per input.
    pub fn seed_coordinates(points: &[f64], width: usize) -> Self {
        let n = points.len() / width;
        let mut j = Self::zeros(n, width, width);
        j.block_mut(0).copy_from_slice(points);
        for d in 0..width {
            let blk = j.block_mut(1 + 2 * d);
            for p in 0..n {
                blk[p * width + d] = 1.0;
            }
        }
        j
    }

    pub fn blocks(&self) -> usize {
        1 + 2 * self.n_dir
    }

    pub fn rows(&self) -> usize {
        self.blocks() * self.n
    }

    pub fn block(&self, b: usize) -> &[f64] {
        let len = self.n * self.width;
        &self.data[b * len..(b + 1) * len]
    }

    pub fn block_mut(&mut self, b: usize) -> &mut [f64] {
        let len = self.n * self.width;
        &mut self.data[b * len..(b + 1) * len]
    }

    pub fn value(&self) -> &[f64] {
        self.block(0)
    }

    pub fn first(&self, dir: usize) -> &[f64] {
        self.block(1 + 2 * dir)
    }

    pub fn second(&self, dir: usize) -> &[f64] {
        self.block(2 + 2 * dir)
    }

    pub fn zeros_like(&self) -> Self {
        Self::zeros(self.n, self.width, self.n_dir)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    Tanh,
    Swish,
    Cos,
    Sin,
    Identity,
}

impl Activation {
    /// `[f, f', f'', f''']` at `x`.
    #[inline]
    pub fn derivs(self, x: f64) -> [f64; 4] {
        match self {
            Activation::Tanh => {
                let u = x.tanh();
                let s = 1.0 - u * u;
                [u, s, -2.0 * u * s, -2.0 * s * (s - 2.0 * u * u)]
            }
            Activation::Swish => {
                let sig = 1.0 / (1.0 + (-x).exp());
                let g = sig * (1.0 - sig);
                let a = 1.0 - 2.0 * sig;
                let h = 2.0 + x * a;
                [
                    x * sig,
                    sig * (1.0 + x * (1.0 - sig)),
                    g * h,
                    g * (a * h + a - 2.0 * x * g),
                ]
            }
            Activation::Cos => {
                let (s, c) = x.sin_cos();
                [c, -s, -c, s]
            }
            Activation::Sin => {
                let (s, c) = x.sin_cos();
                [s, c, -s, -c]
            }
            Activation::Identity => [x, 1.0, 0.0, 0.0],
        }
    }

    pub fn eval(self, x: f64) -> f64 {
        self.derivs(x)[0]
    }
}

/// Applies an elementwise function to a jet batch (chain rule to second order).
pub fn activation_forward(act: Activation, v: &Jets) -> Jets {
    let mut out = v.zeros_like();
    let len = v.n * v.width;
    let nd = v.n_dir;
    for e in 0..len {
        let [f0, f1, f2, _] = act.derivs(v.data[e]);
        out.data[e] = f0;
        for d in 0..nd {
            let (b1, b2) = ((1 + 2 * d) * len + e, (2 + 2 * d) * len + e);
            let v1 = v.data[b1];
            out.data[b1] = f1 * v1;
            out.data[b2] = f2 * v1 * v1 + f1 * v.data[b2];
        }
    }
    out
}

/// Pulls gradients with respect to `act(v)` back to gradients with respect to `v`.
pub fn activation_backward(act: Activation, v: &Jets, gu: &Jets) -> Jets {
    let mut gv = v.zeros_like();
    let len = v.n * v.width;
    let nd = v.n_dir;
    for e in 0..len {
        let [_, f1, f2, f3] = act.derivs(v.data[e]);
        let mut g0 = gu.data[e] * f1;
        for d in 0..nd {
            let (b1, b2) = ((1 + 2 * d) * len + e, (2 + 2 * d) * len + e);
            let (v1, v2) = (v.data[b1], v.data[b2]);
            let (g1, g2) = (gu.data[b1], gu.data[b2]);
            g0 += g1 * f2 * v1 + g2 * (f3 * v1 * v1 + f2 * v2);
            gv.data[b1] = g1 * f1 + g2 * 2.0 * f2 * v1;
            gv.data[b2] = g2 * f1;
        }
        gv.data[e] = g0;
    }
    gv
}
