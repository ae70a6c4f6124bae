//! Branch/trunk operator model `T(y) = t_ref + S·Σₖ βₖ(u)·τₖ(y)`.
//!
//! With the separable layout each axis has its own trunk and
//! `τₖ(y) = τ₁ₖ(y₁)·τ₂ₖ(y₂)·τ₃ₖ(y₃)`, so a full grid costs `N₁+N₂+N₃` trunk
//! evaluations and a few GEMMs. The pointwise layout keeps one trunk over
//! all three coordinates and serves as the non-separable baseline.

mod normalize;

use std::io::{BufRead, Write};
use std::sync::atomic::{AtomicUsize, Ordering};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::domain::{build_mesh, ChipStack, PowerSpec};
use crate::error::{Error, Result};
use crate::fd::resolve_power;
use crate::field::TemperatureField;
use crate::linalg::{gemm, Op};
use crate::nn::{
    read_blobs, write_blobs, BlobFile, FourierSpec, Jets, KanCache, KanNet, KanSpec, Mlp, MlpCache,
    MlpSpec,
};

pub use normalize::{Normalizer, HALF_SPAN};

pub const DEFAULT_RANK: usize = 64;

/// Derivative orders `(∂y₁, ∂y₂, ∂y₃)` of a raw field term, taken with
/// respect to the normalised trunk inputs.
pub type Term = [usize; 3];

pub const VALUE: Term = [0, 0, 0];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case", deny_unknown_fields)]
pub enum TrunkSpec {
    Kan {
        hidden: Vec<usize>,
        order: usize,
    },
    Mlp {
        hidden: Vec<usize>,
        #[serde(default)]
        fourier: Option<FourierSpec>,
    },
}

impl TrunkSpec {
    /// Three hidden Chebyshev layers of 64 at order 3.
    pub fn kan_default() -> Self {
        TrunkSpec::Kan {
            hidden: vec![64; 3],
            order: 3,
        }
    }

    /// Six affine layers of width 128 behind a 2π-scale Fourier embedding.
    pub fn mlp_default() -> Self {
        TrunkSpec::Mlp {
            hidden: vec![128; 5],
            fourier: Some(FourierSpec {
                n_freq: 64,
                mean: 0.0,
                std: 2.0 * std::f64::consts::PI,
            }),
        }
    }
}

impl Default for TrunkSpec {
    fn default() -> Self {
        Self::kan_default()
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Layout {
    #[default]
    Separable,
    Pointwise,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSpec {
    #[serde(default = "default_rank")]
    pub rank: usize,
    #[serde(default = "default_branch_hidden")]
    pub branch_hidden: Vec<usize>,
    #[serde(default)]
    pub trunk: TrunkSpec,
    #[serde(default)]
    pub layout: Layout,
    /// Kelvin per unit of raw network output.
    #[serde(default = "default_output_scale")]
    pub output_scale: f64,
}

fn default_rank() -> usize {
    DEFAULT_RANK
}
fn default_branch_hidden() -> Vec<usize> {
    vec![256; 9]
}
fn default_output_scale() -> f64 {
    100.0
}

impl Default for ModelSpec {
    fn default() -> Self {
        Self {
            rank: DEFAULT_RANK,
            branch_hidden: default_branch_hidden(),
            trunk: TrunkSpec::default(),
            layout: Layout::Separable,
            output_scale: default_output_scale(),
        }
    }
}

/// Sensor grid of the branch input and the areal power density (mW/mm²)
/// that maps to an encoded value of one.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Encoding {
    pub sensors: [usize; 2],
    pub power_scale: f64,
}

impl Encoding {
    pub fn len(&self) -> usize {
        self.sensors[0] * self.sensors[1]
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum TrunkNet {
    Kan(KanNet),
    Mlp(Mlp),
}

#[derive(Debug, Clone)]
pub enum TrunkCache {
    Kan(KanCache),
    Mlp(MlpCache),
}

impl TrunkNet {
    pub fn init<R: Rng>(spec: &TrunkSpec, n_in: usize, rank: usize, rng: &mut R) -> Result<Self> {
        let widths = |hidden: &[usize]| {
            let mut w = vec![n_in];
            w.extend_from_slice(hidden);
            w.push(rank);
            w
        };
        Ok(match spec {
            TrunkSpec::Kan { hidden, order } => TrunkNet::Kan(KanNet::init(
                &KanSpec {
                    widths: widths(hidden),
                    order: *order,
                },
                rng,
            )?),
            TrunkSpec::Mlp { hidden, fourier } => TrunkNet::Mlp(Mlp::init(
                &MlpSpec {
                    widths: widths(hidden),
                    fourier: fourier.clone(),
                },
                rng,
            )?),
        })
    }

    pub fn n_in(&self) -> usize {
        match self {
            TrunkNet::Kan(n) => n.n_in(),
            TrunkNet::Mlp(n) => n.n_in(),
        }
    }

    pub fn n_out(&self) -> usize {
        match self {
            TrunkNet::Kan(n) => n.n_out(),
            TrunkNet::Mlp(n) => n.n_out(),
        }
    }

    pub fn param_count(&self) -> usize {
        match self {
            TrunkNet::Kan(n) => n.param_count(),
            TrunkNet::Mlp(n) => n.param_count(),
        }
    }

    pub fn param_slices_mut(&mut self) -> Vec<&mut [f64]> {
        match self {
            TrunkNet::Kan(n) => n.param_slices_mut(),
            TrunkNet::Mlp(n) => n.param_slices_mut(),
        }
    }

    pub fn forward(&self, x: &Jets) -> Jets {
        match self {
            TrunkNet::Kan(n) => n.forward(x),
            TrunkNet::Mlp(n) => n.forward(x),
        }
    }

    pub fn forward_cached(&self, x: &Jets) -> (Jets, TrunkCache) {
        match self {
            TrunkNet::Kan(n) => {
                let (y, c) = n.forward_cached(x);
                (y, TrunkCache::Kan(c))
            }
            TrunkNet::Mlp(n) => {
                let (y, c) = n.forward_cached(x);
                (y, TrunkCache::Mlp(c))
            }
        }
    }

    pub fn backward(&self, cache: &TrunkCache, dy: &Jets) -> Vec<f64> {
        match (self, cache) {
            (TrunkNet::Kan(n), TrunkCache::Kan(c)) => n.backward(c, dy),
            (TrunkNet::Mlp(n), TrunkCache::Mlp(c)) => n.backward(c, dy),
            _ => panic!("trunk cache from a different network kind"),
        }
    }

    fn named(&self, prefix: &str) -> Vec<(String, &[f64])> {
        match self {
            TrunkNet::Kan(n) => n
                .layers
                .iter()
                .enumerate()
                .map(|(i, l)| (format!("{prefix}.{i}.coeffs"), l.coeffs.as_slice()))
                .collect(),
            TrunkNet::Mlp(n) => mlp_named(n, prefix),
        }
    }

    fn named_mut(&mut self, prefix: &str) -> Vec<(String, &mut Vec<f64>)> {
        match self {
            TrunkNet::Kan(n) => n
                .layers
                .iter_mut()
                .enumerate()
                .map(|(i, l)| (format!("{prefix}.{i}.coeffs"), &mut l.coeffs))
                .collect(),
            TrunkNet::Mlp(n) => mlp_named_mut(n, prefix),
        }
    }
}

fn mlp_named<'a>(n: &'a Mlp, prefix: &str) -> Vec<(String, &'a [f64])> {
    let mut out: Vec<(String, &[f64])> = Vec::new();
    if let Some(f) = &n.fourier {
        out.push((format!("{prefix}.fourier"), &f.b));
    }
    for (i, l) in n.layers.iter().enumerate() {
        out.push((format!("{prefix}.{i}.w"), &l.weights));
        out.push((format!("{prefix}.{i}.b"), &l.bias));
    }
    out
}

fn mlp_named_mut<'a>(n: &'a mut Mlp, prefix: &str) -> Vec<(String, &'a mut Vec<f64>)> {
    let mut out: Vec<(String, &mut Vec<f64>)> = Vec::new();
    if let Some(f) = &mut n.fourier {
        out.push((format!("{prefix}.fourier"), &mut f.b));
    }
    for (i, l) in n.layers.iter_mut().enumerate() {
        out.push((format!("{prefix}.{i}.w"), &mut l.weights));
        out.push((format!("{prefix}.{i}.b"), &mut l.bias));
    }
    out
}

/// Everything the backward pass needs from a forward field evaluation.
#[derive(Debug, Clone)]
pub struct FieldPass {
    batch: usize,
    beta: Vec<f64>,
    branch_cache: MlpCache,
    lens: [usize; 3],
    tau: Vec<Jets>,
    caches: Vec<TrunkCache>,
}

impl FieldPass {
    pub fn batch(&self) -> usize {
        self.batch
    }

    /// Grid nodes per design.
    pub fn nodes(&self) -> usize {
        self.lens.iter().product()
    }

    /// Branch coefficients, `batch × rank`.
    pub fn beta(&self) -> &[f64] {
        &self.beta
    }
}

const META_KIND: &str = "operator-model";

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ModelMeta {
    kind: String,
    spec: ModelSpec,
    stack: ChipStack,
    encoding: Encoding,
}

#[derive(Debug)]
pub struct OperatorModel {
    pub spec: ModelSpec,
    pub stack: ChipStack,
    pub encoding: Encoding,
    pub branch: Mlp,
    /// Three per-axis trunks (separable) or one 3-input trunk (pointwise).
    pub trunks: Vec<TrunkNet>,
    normalizer: Normalizer,
    t_ref: f64,
    trunk_passes: AtomicUsize,
}

impl Clone for OperatorModel {
    fn clone(&self) -> Self {
        Self {
            spec: self.spec.clone(),
            stack: self.stack.clone(),
            encoding: self.encoding,
            branch: self.branch.clone(),
            trunks: self.trunks.clone(),
            normalizer: self.normalizer.clone(),
            t_ref: self.t_ref,
            trunk_passes: AtomicUsize::new(self.trunk_passes()),
        }
    }
}

impl PartialEq for OperatorModel {
    fn eq(&self, other: &Self) -> bool {
        self.spec == other.spec
            && self.stack == other.stack
            && self.encoding == other.encoding
            && self.branch == other.branch
            && self.trunks == other.trunks
    }
}

impl OperatorModel {
    pub fn new<R: Rng>(
        spec: ModelSpec,
        stack: ChipStack,
        encoding: Encoding,
        rng: &mut R,
    ) -> Result<Self> {
        let mut widths = vec![encoding.len()];
        widths.extend_from_slice(&spec.branch_hidden);
        widths.push(spec.rank);
        let branch = Mlp::init(
            &MlpSpec {
                widths,
                fourier: None,
            },
            rng,
        )?;
        let trunks = match spec.layout {
            Layout::Separable => (0..3)
                .map(|_| TrunkNet::init(&spec.trunk, 1, spec.rank, rng))
                .collect::<Result<_>>()?,
            Layout::Pointwise => vec![TrunkNet::init(&spec.trunk, 3, spec.rank, rng)?],
        };
        Self::from_parts(spec, stack, encoding, branch, trunks)
    }

    /// Assembles a model from explicit networks, checking that all widths agree.
    pub fn from_parts(
        spec: ModelSpec,
        stack: ChipStack,
        encoding: Encoding,
        branch: Mlp,
        trunks: Vec<TrunkNet>,
    ) -> Result<Self> {
        let normalizer = Normalizer::new(&stack)?;
        let t_ref = stack.reference_temperature().ok_or_else(|| {
            Error::Config("operator model needs at least one convective face".into())
        })?;
        if spec.rank == 0 {
            return Err(Error::Config("rank must be positive".into()));
        }
        if !(spec.output_scale > 0.0 && spec.output_scale.is_finite()) {
            return Err(Error::Config(format!(
                "output scale must be positive, got {}",
                spec.output_scale
            )));
        }
        if encoding.is_empty() || !(encoding.power_scale > 0.0 && encoding.power_scale.is_finite())
        {
            return Err(Error::Config(
                "encoding needs sensors and a positive power scale".into(),
            ));
        }
        if branch.n_in() != encoding.len() || branch.n_out() != spec.rank {
            return Err(Error::Dimension(format!(
                "branch maps {} → {}, model needs {} → {}",
                branch.n_in(),
                branch.n_out(),
                encoding.len(),
                spec.rank
            )));
        }
        let (count, n_in) = match spec.layout {
            Layout::Separable => (3, 1),
            Layout::Pointwise => (1, 3),
        };
        if trunks.len() != count
            || trunks
                .iter()
                .any(|t| t.n_in() != n_in || t.n_out() != spec.rank)
        {
            return Err(Error::Dimension(format!(
                "{:?} layout needs {count} trunks of shape {n_in} → {}",
                spec.layout, spec.rank
            )));
        }
        Ok(Self {
            spec,
            stack,
            encoding,
            branch,
            trunks,
            normalizer,
            t_ref,
            trunk_passes: AtomicUsize::new(0),
        })
    }

    pub fn rank(&self) -> usize {
        self.spec.rank
    }

    pub fn t_ref(&self) -> f64 {
        self.t_ref
    }

    pub fn output_scale(&self) -> f64 {
        self.spec.output_scale
    }

    pub fn normalizer(&self) -> &Normalizer {
        &self.normalizer
    }

    /// Trunk network evaluations since construction or the last reset.
    pub fn trunk_passes(&self) -> usize {
        self.trunk_passes.load(Ordering::Relaxed)
    }

    pub fn reset_trunk_passes(&self) {
        self.trunk_passes.store(0, Ordering::Relaxed);
    }

    pub fn param_count(&self) -> usize {
        self.branch.param_count() + self.trunks.iter().map(|t| t.param_count()).sum::<usize>()
    }

    /// Trainable parameters: branch first, then trunks in axis order. Matches
    /// the gradient layout of [`backward_fields`](Self::backward_fields).
    pub fn param_slices_mut(&mut self) -> Vec<&mut [f64]> {
        let mut out = self.branch.param_slices_mut();
        for t in &mut self.trunks {
            out.extend(t.param_slices_mut());
        }
        out
    }

    /// Encoded branch input: areal power density at every sensor node
    /// divided by the model's power scale.
    pub fn encode(&self, power: &PowerSpec) -> Result<Vec<f64>> {
        let [sx, sy] = self.encoding.sensors;
        let mesh = build_mesh(&self.stack, (sx, sy, self.stack.layers.len() + 1))?;
        let resolved = resolve_power(&mesh, &self.stack, power)?;
        let mut density = vec![0.0; sx * sy];
        if let Some(q) = &resolved.top_flux {
            density.iter_mut().zip(q).for_each(|(d, v)| *d += v);
        }
        if let Some((_, p)) = &resolved.layer_power {
            let (wx, wy) = (mesh.cell_widths(0), mesh.cell_widths(1));
            for i in 0..sx {
                for j in 0..sy {
                    density[i * sy + j] += p[i * sy + j] / (wx[i] * wy[j]);
                }
            }
        }
        let scale = self.encoding.power_scale;
        Ok(density.into_iter().map(|d| d / scale).collect())
    }

    fn check_encoded(&self, encoded: &[f64], batch: usize) -> Result<()> {
        let m = self.encoding.len();
        if batch == 0 || encoded.len() != batch * m {
            return Err(Error::Dimension(format!(
                "expected {batch} encoded designs of length {m}, got {} values",
                encoded.len()
            )));
        }
        if encoded.iter().any(|v| !v.is_finite()) {
            return Err(Error::Numeric("non-finite encoded design".into()));
        }
        Ok(())
    }

    fn max_orders(&self, terms: &[Term]) -> Result<[usize; 3]> {
        let mut max = [0; 3];
        for t in terms {
            if t.iter().any(|&o| o > 2) {
                return Err(Error::Config(format!(
                    "derivative orders above 2 are not supported: {t:?}"
                )));
            }
            if self.spec.layout == Layout::Pointwise && t.iter().filter(|&&o| o > 0).count() > 1 {
                return Err(Error::Config(format!(
                    "pointwise trunk provides pure derivatives only: {t:?}"
                )));
            }
            for a in 0..3 {
                max[a] = max[a].max(t[a]);
            }
        }
        Ok(max)
    }

    /// Raw fields `Σₖ βₖ ∂^t τₖ` for each term, per design on the Cartesian grid
    /// of `axes` (physical coordinates). `values[t]` is `batch × N` with the
    /// grid flattened as `(i·N₂ + j)·N₃ + l`.
    pub fn forward_fields(
        &self,
        encoded: &[f64],
        batch: usize,
        axes: [&[f64]; 3],
        terms: &[Term],
    ) -> Result<(Vec<Vec<f64>>, FieldPass)> {
        self.check_encoded(encoded, batch)?;
        let max = self.max_orders(terms)?;
        let r = self.spec.rank;
        let (beta_j, branch_cache) =
            self.branch
                .forward_cached(&Jets::values(batch, self.encoding.len(), encoded.to_vec()));
        let beta = beta_j.data;
        if beta.iter().any(|v| !v.is_finite()) {
            return Err(Error::Numeric(
                "branch produced non-finite coefficients".into(),
            ));
        }
        let lens = [axes[0].len(), axes[1].len(), axes[2].len()];
        let n_nodes: usize = lens.iter().product();
        let mut tau = Vec::new();
        let mut caches = Vec::new();
        let mut values = Vec::with_capacity(terms.len());
        match self.spec.layout {
            Layout::Separable => {
                for a in 0..3 {
                    let u = self.normalizer.to_unit_all(a, axes[a])?;
                    let input = if max[a] > 0 {
                        Jets::seed_scalar(&u)
                    } else {
                        Jets::values(u.len(), 1, u)
                    };
                    let (t, c) = self.trunks[a].forward_cached(&input);
                    self.trunk_passes.fetch_add(1, Ordering::Relaxed);
                    tau.push(t);
                    caches.push(c);
                }
                let nyz = lens[1] * lens[2];
                let mut g = vec![0.0; nyz * r];
                let mut w = vec![0.0; batch * lens[0] * r];
                for t in terms {
                    outer_rows(
                        tau[1].block(t[1]),
                        tau[2].block(t[2]),
                        lens[1],
                        lens[2],
                        r,
                        &mut g,
                    );
                    scaled_rows(&beta, tau[0].block(t[0]), batch, lens[0], r, &mut w);
                    let mut f = vec![0.0; batch * n_nodes];
                    gemm(
                        batch * lens[0],
                        r,
                        nyz,
                        1.0,
                        &w,
                        Op::N,
                        &g,
                        Op::T,
                        0.0,
                        &mut f,
                    );
                    values.push(f);
                }
            }
            Layout::Pointwise => {
                let mut pts = Vec::with_capacity(3 * n_nodes);
                let u: Vec<Vec<f64>> = (0..3)
                    .map(|a| self.normalizer.to_unit_all(a, axes[a]))
                    .collect::<Result<_>>()?;
                for &x in &u[0] {
                    for &y in &u[1] {
                        for &z in &u[2] {
                            pts.extend_from_slice(&[x, y, z]);
                        }
                    }
                }
                let input = if max.iter().any(|&o| o > 0) {
                    Jets::seed_coordinates(&pts, 3)
                } else {
                    Jets::values(n_nodes, 3, pts)
                };
                let (t, c) = self.trunks[0].forward_cached(&input);
                self.trunk_passes.fetch_add(1, Ordering::Relaxed);
                for term in terms {
                    let mut f = vec![0.0; batch * n_nodes];
                    gemm(
                        batch,
                        r,
                        n_nodes,
                        1.0,
                        &beta,
                        Op::N,
                        t.block(pointwise_block(term)),
                        Op::T,
                        0.0,
                        &mut f,
                    );
                    values.push(f);
                }
                tau.push(t);
                caches.push(c);
            }
        }
        if values.iter().flatten().any(|v| !v.is_finite()) {
            return Err(Error::Numeric(
                "operator produced non-finite field values".into(),
            ));
        }
        Ok((
            values,
            FieldPass {
                batch,
                beta,
                branch_cache,
                lens,
                tau,
                caches,
            },
        ))
    }

    /// Parameter gradient of a scalar loss given `∂L/∂values[t]` for the
    /// same terms passed to [`forward_fields`](Self::forward_fields).
    pub fn backward_fields(
        &self,
        pass: &FieldPass,
        terms: &[Term],
        d_values: &[Vec<f64>],
    ) -> Vec<f64> {
        assert_eq!(terms.len(), d_values.len(), "one gradient per term");
        let r = self.spec.rank;
        let batch = pass.batch;
        let lens = pass.lens;
        let n_nodes = pass.nodes();
        let mut d_beta = vec![0.0; batch * r];
        let mut d_tau: Vec<Jets> = pass.tau.iter().map(Jets::zeros_like).collect();
        match self.spec.layout {
            Layout::Separable => {
                let nyz = lens[1] * lens[2];
                let mut g = vec![0.0; nyz * r];
                let mut w = vec![0.0; batch * lens[0] * r];
                let mut dw = vec![0.0; batch * lens[0] * r];
                let mut dg = vec![0.0; nyz * r];
                for (t, d) in terms.iter().zip(d_values) {
                    assert_eq!(d.len(), batch * n_nodes, "gradient shape");
                    let (tx, ty, tz) = (
                        pass.tau[0].block(t[0]),
                        pass.tau[1].block(t[1]),
                        pass.tau[2].block(t[2]),
                    );
                    outer_rows(ty, tz, lens[1], lens[2], r, &mut g);
                    scaled_rows(&pass.beta, tx, batch, lens[0], r, &mut w);
                    gemm(
                        batch * lens[0],
                        nyz,
                        r,
                        1.0,
                        d,
                        Op::N,
                        &g,
                        Op::N,
                        0.0,
                        &mut dw,
                    );
                    gemm(
                        nyz,
                        batch * lens[0],
                        r,
                        1.0,
                        d,
                        Op::T,
                        &w,
                        Op::N,
                        0.0,
                        &mut dg,
                    );
                    let dtx = d_tau[0].block_mut(t[0]);
                    for b in 0..batch {
                        for i in 0..lens[0] {
                            let row = &dw[(b * lens[0] + i) * r..(b * lens[0] + i + 1) * r];
                            for k in 0..r {
                                d_beta[b * r + k] += row[k] * tx[i * r + k];
                                dtx[i * r + k] += row[k] * pass.beta[b * r + k];
                            }
                        }
                    }
                    let dty = d_tau[1].block_mut(t[1]);
                    for j in 0..lens[1] {
                        for l in 0..lens[2] {
                            let row = &dg[(j * lens[2] + l) * r..(j * lens[2] + l + 1) * r];
                            for k in 0..r {
                                dty[j * r + k] += row[k] * tz[l * r + k];
                            }
                        }
                    }
                    let dtz = d_tau[2].block_mut(t[2]);
                    for j in 0..lens[1] {
                        for l in 0..lens[2] {
                            let row = &dg[(j * lens[2] + l) * r..(j * lens[2] + l + 1) * r];
                            for k in 0..r {
                                dtz[l * r + k] += row[k] * ty[j * r + k];
                            }
                        }
                    }
                }
            }
            Layout::Pointwise => {
                for (t, d) in terms.iter().zip(d_values) {
                    assert_eq!(d.len(), batch * n_nodes, "gradient shape");
                    let blk = pointwise_block(t);
                    gemm(
                        batch,
                        n_nodes,
                        r,
                        1.0,
                        d,
                        Op::N,
                        pass.tau[0].block(blk),
                        Op::N,
                        1.0,
                        &mut d_beta,
                    );
                    gemm(
                        n_nodes,
                        batch,
                        r,
                        1.0,
                        d,
                        Op::T,
                        &pass.beta,
                        Op::N,
                        1.0,
                        d_tau[0].block_mut(blk),
                    );
                }
            }
        }
        let mut grad = self
            .branch
            .backward(&pass.branch_cache, &Jets::values(batch, r, d_beta));
        for ((trunk, cache), dt) in self.trunks.iter().zip(&pass.caches).zip(&d_tau) {
            grad.extend(trunk.backward(cache, dt));
        }
        grad
    }

    /// Temperature on the Cartesian grid of `axes` for one encoded design.
    pub fn eval_grid(&self, encoded: &[f64], axes: [&[f64]; 3]) -> Result<TemperatureField> {
        let dims = [axes[0].len(), axes[1].len(), axes[2].len()];
        let (mut values, _) = self.forward_fields(encoded, 1, axes, &[VALUE])?;
        let raw = values.pop().unwrap();
        TemperatureField::new(dims, self.to_kelvin(raw))
    }

    /// Grid evaluation for a batch of encoded designs in one pass.
    pub fn eval_grid_batch(
        &self,
        encoded: &[f64],
        batch: usize,
        axes: [&[f64]; 3],
    ) -> Result<Vec<TemperatureField>> {
        let dims = [axes[0].len(), axes[1].len(), axes[2].len()];
        let n: usize = dims.iter().product();
        let (values, _) = self.forward_fields(encoded, batch, axes, &[VALUE])?;
        values[0]
            .chunks_exact(n)
            .map(|c| TemperatureField::new(dims, self.to_kelvin(c.to_vec())))
            .collect()
    }

    fn to_kelvin(&self, mut raw: Vec<f64>) -> Vec<f64> {
        let s = self.spec.output_scale;
        raw.iter_mut().for_each(|v| *v = self.t_ref + s * *v);
        raw
    }

    /// Physical derivative fields `∂^order T/∂y_axis^order` for several
    /// requests, sharing one trunk evaluation per axis. Inside each layer the
    /// z-derivative uses that layer's conductivity in the chain rule.
    pub fn derivative_grids(
        &self,
        encoded: &[f64],
        axes: [&[f64]; 3],
        requests: &[(usize, usize)],
    ) -> Result<Vec<Vec<f64>>> {
        let mut terms = Vec::with_capacity(requests.len());
        for &(axis, order) in requests {
            if axis > 2 || !(1..=2).contains(&order) {
                return Err(Error::Config(format!(
                    "unsupported derivative request: axis {axis}, order {order}"
                )));
            }
            let mut t = VALUE;
            t[axis] = order;
            terms.push(t);
        }
        let (values, _) = self.forward_fields(encoded, 1, axes, &terms)?;
        let s = self.spec.output_scale;
        let nz = axes[2].len();
        Ok(values
            .into_iter()
            .zip(requests)
            .map(|(mut f, &(axis, order))| {
                if axis == 2 {
                    let factors: Vec<f64> = axes[2]
                        .iter()
                        .map(|&z| s * self.normalizer.chain_factor(2, z).powi(order as i32))
                        .collect();
                    f.iter_mut()
                        .enumerate()
                        .for_each(|(p, v)| *v *= factors[p % nz]);
                } else {
                    let c = s * self.normalizer.lateral_factor(axis).powi(order as i32);
                    f.iter_mut().for_each(|v| *v *= c);
                }
                f
            })
            .collect())
    }

    pub fn spatial_derivative_grid(
        &self,
        encoded: &[f64],
        axes: [&[f64]; 3],
        axis: usize,
        order: usize,
    ) -> Result<Vec<f64>> {
        Ok(self
            .derivative_grids(encoded, axes, &[(axis, order)])?
            .pop()
            .unwrap())
    }

    /// Temperature at arbitrary points, each product evaluated on its own.
    pub fn eval_points(&self, encoded: &[f64], points: &[[f64; 3]]) -> Result<Vec<f64>> {
        self.check_encoded(encoded, 1)?;
        let beta = self.branch.forward_vec(encoded)?;
        let r = self.spec.rank;
        let n = points.len();
        let s = self.spec.output_scale;
        let raw: Vec<f64> = match self.spec.layout {
            Layout::Separable => {
                let mut tau = Vec::with_capacity(3);
                for a in 0..3 {
                    let u: Vec<f64> = points
                        .iter()
                        .map(|p| self.normalizer.to_unit(a, p[a]))
                        .collect::<Result<_>>()?;
                    tau.push(self.trunks[a].forward(&Jets::values(n, 1, u)).data);
                    self.trunk_passes.fetch_add(1, Ordering::Relaxed);
                }
                (0..n)
                    .map(|p| {
                        (0..r)
                            .map(|k| {
                                beta[k] * tau[0][p * r + k] * tau[1][p * r + k] * tau[2][p * r + k]
                            })
                            .sum()
                    })
                    .collect()
            }
            Layout::Pointwise => self.pointwise_raw(&beta, points)?,
        };
        let out: Vec<f64> = raw.into_iter().map(|v| self.t_ref + s * v).collect();
        if out.iter().any(|v| !v.is_finite()) {
            return Err(Error::Numeric("operator produced non-finite values".into()));
        }
        Ok(out)
    }

    fn pointwise_raw(&self, beta: &[f64], points: &[[f64; 3]]) -> Result<Vec<f64>> {
        let r = self.spec.rank;
        let mut u = Vec::with_capacity(3 * points.len());
        for p in points {
            for a in 0..3 {
                u.push(self.normalizer.to_unit(a, p[a])?);
            }
        }
        let tau = self.trunks[0]
            .forward(&Jets::values(points.len(), 3, u))
            .data;
        self.trunk_passes.fetch_add(1, Ordering::Relaxed);
        Ok(tau
            .chunks_exact(r)
            .map(|row| row.iter().zip(beta).map(|(t, b)| t * b).sum())
            .collect())
    }

    /// Classic branch·trunk dot product at each point; requires the pointwise layout.
    pub fn eval_pointwise_baseline(
        &self,
        encoded: &[f64],
        points: &[[f64; 3]],
    ) -> Result<Vec<f64>> {
        if self.spec.layout != Layout::Pointwise {
            return Err(Error::Config(
                "pointwise baseline needs a model with a single 3-input trunk".into(),
            ));
        }
        self.eval_points(encoded, points)
    }

    fn named(&self) -> Vec<(String, &[f64])> {
        let mut out = mlp_named(&self.branch, "branch");
        for (a, t) in self.trunks.iter().enumerate() {
            out.extend(t.named(&format!("trunk{a}")));
        }
        out
    }

    fn named_mut(&mut self) -> Vec<(String, &mut Vec<f64>)> {
        let mut out = mlp_named_mut(&mut self.branch, "branch");
        for (a, t) in self.trunks.iter_mut().enumerate() {
            out.extend(t.named_mut(&format!("trunk{a}")));
        }
        out
    }

    /// Writes the model plus caller-supplied metadata and blobs (e.g.
    /// optimiser state) as one checkpoint.
    pub fn save<W: Write>(
        &self,
        w: W,
        extra_meta: serde_json::Value,
        extra: &[(String, &[f64])],
    ) -> Result<()> {
        let meta = serde_json::json!({
            "model": ModelMeta {
                kind: META_KIND.into(),
                spec: self.spec.clone(),
                stack: self.stack.clone(),
                encoding: self.encoding,
            },
            "extra": extra_meta,
        });
        let mut blobs = self.named();
        for (name, v) in extra {
            if blobs.iter().any(|(n, _)| n == name) {
                return Err(Error::Format(format!(
                    "extra blob {name} clashes with a model parameter"
                )));
            }
            blobs.push((name.clone(), v));
        }
        write_blobs(w, &meta, &blobs)
    }

    /// Inverse of [`save`](Self::save); the returned file still holds the
    /// extra metadata and blobs.
    pub fn load<R: BufRead>(r: R) -> Result<(Self, BlobFile)> {
        let file = read_blobs(r)?;
        let meta: ModelMeta = serde_json::from_value(
            file.meta
                .get("model")
                .cloned()
                .ok_or_else(|| Error::Format("checkpoint holds no operator model".into()))?,
        )?;
        if meta.kind != META_KIND {
            return Err(Error::Format(format!(
                "unexpected checkpoint kind {}",
                meta.kind
            )));
        }
        let mut model = Self::new(
            meta.spec,
            meta.stack,
            meta.encoding,
            &mut ChaCha8Rng::seed_from_u64(0),
        )?;
        for (name, slot) in model.named_mut() {
            let data = file.get(&name)?;
            if data.len() != slot.len() {
                return Err(Error::Format(format!(
                    "blob {name} has {} values, expected {}",
                    data.len(),
                    slot.len()
                )));
            }
            slot.copy_from_slice(data);
        }
        Ok((model, file))
    }
}

/// `g[(j·n_b + l)·r + k] = a[j·r + k]·b[l·r + k]`.
fn outer_rows(a: &[f64], b: &[f64], n_a: usize, n_b: usize, r: usize, g: &mut [f64]) {
    for j in 0..n_a {
        let ra = &a[j * r..(j + 1) * r];
        for l in 0..n_b {
            let rb = &b[l * r..(l + 1) * r];
            let out = &mut g[(j * n_b + l) * r..(j * n_b + l + 1) * r];
            for k in 0..r {
                out[k] = ra[k] * rb[k];
            }
        }
    }
}

/// `w[(b·n + i)·r + k] = beta[b·r + k]·t[i·r + k]`.
fn scaled_rows(beta: &[f64], t: &[f64], batch: usize, n: usize, r: usize, w: &mut [f64]) {
    for b in 0..batch {
        let rb = &beta[b * r..(b + 1) * r];
        for i in 0..n {
            let rt = &t[i * r..(i + 1) * r];
            let out = &mut w[(b * n + i) * r..(b * n + i + 1) * r];
            for k in 0..r {
                out[k] = rb[k] * rt[k];
            }
        }
    }
}

/// Jet block holding a pure derivative of a 3-direction trunk output.
fn pointwise_block(t: &Term) -> usize {
    match t.iter().position(|&o| o > 0) {
        None => 0,
        Some(d) => 2 * d + t[d],
    }
}
