//! Chebyshev Kolmogorov–Arnold layers: `y_j = Σ_i Σ_k a[i,j,k]·C_k(x_i)`.

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{gemm, Op};

use super::jet::{activation_backward, activation_forward, Activation, Jets};

/// Coefficients are stored as a row-major `(n_in·(K+1)) × n_out` matrix with
/// row `i·(K+1) + k`, i.e. `a[i,j,k]` lives at `(i·(K+1)+k)·n_out + j`.
#[derive(Debug, Clone, PartialEq)]
pub struct ChebKanLayer {
    pub n_in: usize,
    pub n_out: usize,
    pub order: usize,
    pub coeffs: Vec<f64>,
}

/// `[C_k, C_k', C_k'', C_k''']` for `k = 0..=order`, written into `out[k*4..]`.
#[inline]
fn cheb_table(u: f64, order: usize, out: &mut [f64]) {
    out[0] = 1.0;
    out[1] = 0.0;
    out[2] = 0.0;
    out[3] = 0.0;
    if order == 0 {
        return;
    }
    out[4] = u;
    out[5] = 1.0;
    out[6] = 0.0;
    out[7] = 0.0;
    for k in 2..=order {
        let (p, q) = ((k - 1) * 4, (k - 2) * 4);
        out[k * 4] = 2.0 * u * out[p] - out[q];
        out[k * 4 + 1] = 2.0 * out[p] + 2.0 * u * out[p + 1] - out[q + 1];
        out[k * 4 + 2] = 4.0 * out[p + 1] + 2.0 * u * out[p + 2] - out[q + 2];
        out[k * 4 + 3] = 6.0 * out[p + 2] + 2.0 * u * out[p + 3] - out[q + 3];
    }
}

/// Chebyshev polynomials of the first kind `C_0..=C_order` at `u`.
pub fn chebyshev_t(u: f64, order: usize) -> Vec<f64> {
    let mut c = vec![0.0; order + 1];
    c[0] = 1.0;
    if order >= 1 {
        c[1] = u;
    }
    for k in 2..=order {
        c[k] = 2.0 * u * c[k - 1] - c[k - 2];
    }
    c
}

/// Chebyshev polynomials of the second kind `U_0..=U_order` at `u`.
pub fn chebyshev_u(u: f64, order: usize) -> Vec<f64> {
    let mut c = vec![0.0; order + 1];
    c[0] = 1.0;
    if order >= 1 {
        c[1] = 2.0 * u;
    }
    for k in 2..=order {
        c[k] = 2.0 * u * c[k - 1] - c[k - 2];
    }
    c
}

impl ChebKanLayer {
    pub fn new(n_in: usize, n_out: usize, order: usize, coeffs: Vec<f64>) -> Result<Self> {
        if order < 1 {
            return Err(Error::Config("Chebyshev order must be at least 1".into()));
        }
        if coeffs.len() != n_in * n_out * (order + 1) {
            return Err(Error::Dimension(format!(
                "{n_in}x{n_out} order-{order} layer needs {} coefficients, got {}",
                n_in * n_out * (order + 1),
                coeffs.len()
            )));
        }
        if coeffs.iter().any(|c| !c.is_finite()) {
            return Err(Error::Numeric("non-finite Chebyshev coefficient".into()));
        }
        Ok(Self {
            n_in,
            n_out,
            order,
            coeffs,
        })
    }

    /// Gaussian coefficients with standard deviation `1/(n_in·(K+1))`.
    pub fn init<R: Rng>(n_in: usize, n_out: usize, order: usize, rng: &mut R) -> Self {
        let std = 1.0 / (n_in * (order + 1)) as f64;
        let normal = Normal::new(0.0, std).expect("positive std");
        let coeffs = (0..n_in * n_out * (order + 1))
            .map(|_| normal.sample(rng))
            .collect();
        Self {
            n_in,
            n_out,
            order,
            coeffs,
        }
    }

    #[inline]
    pub fn coeff(&self, i: usize, j: usize, k: usize) -> f64 {
        self.coeffs[(i * (self.order + 1) + k) * self.n_out + j]
    }

    pub fn coeff_mut(&mut self, i: usize, j: usize, k: usize) -> &mut f64 {
        &mut self.coeffs[(i * (self.order + 1) + k) * self.n_out + j]
    }

    fn check_domain(&self, x: &[f64]) -> Result<()> {
        if x.len() != self.n_in {
            return Err(Error::Dimension(format!(
                "layer expects {} inputs, got {}",
                self.n_in,
                x.len()
            )));
        }
        if let Some((i, v)) = x.iter().enumerate().find(|(_, v)| !(v.abs() < 1.0)) {
            return Err(Error::Domain(format!("input {i} = {v} outside (-1, 1)")));
        }
        Ok(())
    }

    /// Plain evaluation on inputs already inside (−1, 1).
    pub fn forward(&self, x: &[f64]) -> Result<Vec<f64>> {
        self.check_domain(x)?;
        let mut y = vec![0.0; self.n_out];
        for (i, &xi) in x.iter().enumerate() {
            for (k, ck) in chebyshev_t(xi, self.order).into_iter().enumerate() {
                for (j, yj) in y.iter_mut().enumerate() {
                    *yj += self.coeff(i, j, k) * ck;
                }
            }
        }
        Ok(y)
    }

    /// Jacobian `∂y_j/∂x_i` (row-major `n_out × n_in`) using `C_k' = k·U_{k−1}`.
    pub fn input_jacobian(&self, x: &[f64]) -> Result<Vec<f64>> {
        self.check_domain(x)?;
        let mut jac = vec![0.0; self.n_out * self.n_in];
        for (i, &xi) in x.iter().enumerate() {
            let u = chebyshev_u(xi, self.order);
            for k in 1..=self.order {
                let dk = k as f64 * u[k - 1];
                for j in 0..self.n_out {
                    jac[j * self.n_in + i] += self.coeff(i, j, k) * dk;
                }
            }
        }
        Ok(jac)
    }
}

/// Intermediate values of one layer kept for the backward pass.
#[derive(Debug, Clone)]
struct KanLayerCache {
    /// Layer input before the squasher.
    v: Jets,
    /// Squashed input.
    u: Jets,
    /// Chebyshev tables at the squashed values, `n × n_in × (K+1) × 4`.
    table: Vec<f64>,
    /// Feature matrix, `(blocks·n) × (n_in·(K+1))`.
    phi: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct KanSpec {
    /// Widths including input and output, e.g. `[1, 64, 64, 64, r]` for four layers.
    pub widths: Vec<usize>,
    pub order: usize,
}

/// Stack of Chebyshev-KAN layers, each preceded by a tanh squasher.
#[derive(Debug, Clone, PartialEq)]
pub struct KanNet {
    pub layers: Vec<ChebKanLayer>,
}

#[derive(Debug, Clone)]
pub struct KanCache {
    layers: Vec<KanLayerCache>,
}

impl KanNet {
    pub fn init<R: Rng>(spec: &KanSpec, rng: &mut R) -> Result<Self> {
        if spec.widths.len() < 2 || spec.order < 1 || spec.widths.contains(&0) {
            return Err(Error::Config(format!("invalid KAN spec {spec:?}")));
        }
        let layers = spec
            .widths
            .windows(2)
            .map(|w| ChebKanLayer::init(w[0], w[1], spec.order, rng))
            .collect();
        Ok(Self { layers })
    }

    pub fn spec(&self) -> KanSpec {
        let mut widths = vec![self.layers[0].n_in];
        widths.extend(self.layers.iter().map(|l| l.n_out));
        KanSpec {
            widths,
            order: self.layers[0].order,
        }
    }

    pub fn n_in(&self) -> usize {
        self.layers[0].n_in
    }

    pub fn n_out(&self) -> usize {
        self.layers.last().unwrap().n_out
    }

    pub fn param_count(&self) -> usize {
        self.layers.iter().map(|l| l.coeffs.len()).sum()
    }

    pub fn param_slices(&self) -> Vec<&[f64]> {
        self.layers.iter().map(|l| l.coeffs.as_slice()).collect()
    }

    pub fn param_slices_mut(&mut self) -> Vec<&mut [f64]> {
        self.layers
            .iter_mut()
            .map(|l| l.coeffs.as_mut_slice())
            .collect()
    }

    pub fn forward(&self, x: &Jets) -> Jets {
        self.forward_cached(x).0
    }

    pub fn forward_cached(&self, x: &Jets) -> (Jets, KanCache) {
        let mut caches = Vec::with_capacity(self.layers.len());
        let mut v = x.clone();
        for layer in &self.layers {
            let (y, cache) = layer_forward(layer, v);
            caches.push(cache);
            v = y;
        }
        (v, KanCache { layers: caches })
    }

    /// Parameter gradient (concatenated in [`param_slices`](Self::param_slices) order)
    /// for an output gradient `dy`.
    pub fn backward(&self, cache: &KanCache, dy: &Jets) -> Vec<f64> {
        let mut grads: Vec<Vec<f64>> = vec![Vec::new(); self.layers.len()];
        let mut g = dy.clone();
        for (idx, (layer, c)) in self.layers.iter().zip(&cache.layers).enumerate().rev() {
            let need_input = idx > 0;
            let (da, gv) = layer_backward(layer, c, &g, need_input);
            grads[idx] = da;
            if let Some(gv) = gv {
                g = gv;
            }
        }
        grads.concat()
    }
}

fn layer_forward(layer: &ChebKanLayer, v: Jets) -> (Jets, KanLayerCache) {
    let (n, n_in, kp1, nd) = (v.n, layer.n_in, layer.order + 1, v.n_dir);
    assert_eq!(v.width, n_in, "KAN layer input width");
    let u = activation_forward(Activation::Tanh, &v);
    let blocks = u.blocks();
    let cols = n_in * kp1;
    let mut table = vec![0.0; n * n_in * kp1 * 4];
    let mut phi = vec![0.0; blocks * n * cols];
    let len = n * n_in;
    let blk = n * cols;
    for p in 0..n {
        for i in 0..n_in {
            let e = p * n_in + i;
            let t = &mut table[e * kp1 * 4..(e + 1) * kp1 * 4];
            cheb_table(u.data[e], layer.order, t);
            let base = p * cols + i * kp1;
            for k in 0..kp1 {
                phi[base + k] = t[k * 4];
            }
            for d in 0..nd {
                let u1 = u.data[(1 + 2 * d) * len + e];
                let u2 = u.data[(2 + 2 * d) * len + e];
                for k in 0..kp1 {
                    let (c1, c2) = (t[k * 4 + 1], t[k * 4 + 2]);
                    phi[(1 + 2 * d) * blk + base + k] = c1 * u1;
                    phi[(2 + 2 * d) * blk + base + k] = c2 * u1 * u1 + c1 * u2;
                }
            }
        }
    }
    let mut y = Jets::zeros(n, layer.n_out, nd);
    gemm(
        blocks * n,
        cols,
        layer.n_out,
        1.0,
        &phi,
        Op::N,
        &layer.coeffs,
        Op::N,
        0.0,
        &mut y.data,
    );
    (y, KanLayerCache { v, u, table, phi })
}

fn layer_backward(
    layer: &ChebKanLayer,
    c: &KanLayerCache,
    dy: &Jets,
    need_input: bool,
) -> (Vec<f64>, Option<Jets>) {
    let (n, n_in, kp1, nd) = (c.u.n, layer.n_in, layer.order + 1, c.u.n_dir);
    let blocks = c.u.blocks();
    let cols = n_in * kp1;
    let mut da = vec![0.0; cols * layer.n_out];
    gemm(
        cols,
        blocks * n,
        layer.n_out,
        1.0,
        &c.phi,
        Op::T,
        &dy.data,
        Op::N,
        0.0,
        &mut da,
    );
    if !need_input {
        return (da, None);
    }
    let mut dphi = vec![0.0; blocks * n * cols];
    gemm(
        blocks * n,
        layer.n_out,
        cols,
        1.0,
        &dy.data,
        Op::N,
        &layer.coeffs,
        Op::T,
        0.0,
        &mut dphi,
    );

    let mut gu = c.u.zeros_like();
    let len = n * n_in;
    let blk = n * cols;
    for p in 0..n {
        for i in 0..n_in {
            let e = p * n_in + i;
            let t = &c.table[e * kp1 * 4..(e + 1) * kp1 * 4];
            let base = p * cols + i * kp1;
            let mut g0 = 0.0;
            for k in 0..kp1 {
                g0 += dphi[base + k] * t[k * 4 + 1];
            }
            for d in 0..nd {
                let (b1, b2) = ((1 + 2 * d) * len + e, (2 + 2 * d) * len + e);
                let (u1, u2) = (c.u.data[b1], c.u.data[b2]);
                let (mut g1, mut g2) = (0.0, 0.0);
                for k in 0..kp1 {
                    let (c1, c2, c3) = (t[k * 4 + 1], t[k * 4 + 2], t[k * 4 + 3]);
                    let d1 = dphi[(1 + 2 * d) * blk + base + k];
                    let d2 = dphi[(2 + 2 * d) * blk + base + k];
                    g0 += d1 * c2 * u1 + d2 * (c3 * u1 * u1 + c2 * u2);
                    g1 += d1 * c1 + d2 * 2.0 * c2 * u1;
                    g2 += d2 * c1;
                }
                gu.data[b1] = g1;
                gu.data[b2] = g2;
            }
            gu.data[e] = g0;
        }
    }
    (da, Some(activation_backward(Activation::Tanh, &c.v, &gu)))
}
