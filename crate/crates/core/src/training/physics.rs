//! Physics-informed loss on the mesh nodes.
//!
//! Interior nodes carry the conduction residual `k∇²T + q_V`; nodes on a
//! material interface carry the flux-continuity residual instead; face nodes
//! carry `k ∂T/∂n + h(T − T_amb) − q_in` once per face they lie on.

use serde::{Deserialize, Serialize};

use crate::domain::{BoundaryCondition, ChipStack, Face, Mesh, PowerSpec};
use crate::error::{Error, Result};
use crate::fd::resolve_power;
use crate::operator::{OperatorModel, Term};

const T0: usize = 0;
const TX1: usize = 1;
const TX2: usize = 2;
const TY1: usize = 3;
const TY2: usize = 4;
const TZ1: usize = 5;
const TZ2: usize = 6;

/// Raw field terms evaluated for the loss, indexed by the constants above.
pub const LOSS_TERMS: [Term; 7] = [
    [0, 0, 0],
    [1, 0, 0],
    [2, 0, 0],
    [0, 1, 0],
    [0, 2, 0],
    [0, 0, 1],
    [0, 0, 2],
];

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LossWeights {
    #[serde(default = "one")]
    pub residual: f64,
    #[serde(default = "one")]
    pub boundary: f64,
}

fn one() -> f64 {
    1.0
}

impl Default for LossWeights {
    fn default() -> Self {
        Self {
            residual: 1.0,
            boundary: 1.0,
        }
    }
}

/// Node index sets (flat mesh indices). Interior and interface nodes are the
/// non-face nodes; `boundary[f]` lists the nodes of `Face::ALL[f]`.
#[derive(Debug, Clone, PartialEq)]
pub struct CollocationSet {
    pub interior: Vec<usize>,
    pub interface: Vec<usize>,
    pub boundary: [Vec<usize>; 6],
}

#[derive(Debug, Clone)]
struct PdeNode {
    node: usize,
    xy: usize,
    layer: usize,
    k: f64,
}

#[derive(Debug, Clone)]
struct InterfaceNode {
    node: usize,
    k_below: f64,
    k_above: f64,
}

#[derive(Debug, Clone)]
struct BoundaryEntry {
    node: usize,
    xy: usize,
    face: Face,
    k: f64,
    htc: f64,
    t_amb: f64,
    flux: f64,
}

/// Mesh, stack and precomputed collocation data for one training geometry.
#[derive(Debug, Clone)]
pub struct PhysicsProblem {
    mesh: Mesh,
    stack: ChipStack,
    collocation: CollocationSet,
    pde: Vec<PdeNode>,
    interfaces: Vec<InterfaceNode>,
    boundary: Vec<BoundaryEntry>,
}

/// Per-design source terms resolved on the problem mesh.
#[derive(Debug, Clone, PartialEq)]
pub struct DesignSource {
    /// Top-face flux per (x, y) node, mW/mm².
    pub top_flux: Option<Vec<f64>>,
    /// Heated layer and volumetric density per (x, y) node, mW/mm³.
    pub density: Option<(usize, Vec<f64>)>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DesignBatch {
    pub encoded: Vec<f64>,
    pub sources: Vec<DesignSource>,
}

impl DesignBatch {
    pub fn len(&self) -> usize {
        self.sources.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sources.is_empty()
    }
}

/// Raw residual tensors: `interior` is `batch × (interior + interface)`,
/// `boundary` is `batch × boundary entries`.
#[derive(Debug, Clone, PartialEq)]
pub struct Residuals {
    pub interior: Vec<f64>,
    pub boundary: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossBreakdown {
    pub total: f64,
    pub residual: f64,
    pub boundary: f64,
}

impl PhysicsProblem {
    pub fn new(mesh: Mesh, stack: ChipStack) -> Result<Self> {
        stack.validate()?;
        let [nx, ny, nz] = mesh.dims();
        let bounds = stack.layer_bounds();
        if (mesh.x[nx - 1] - stack.extent_x).abs() > 1e-9 * stack.extent_x
            || (mesh.y[ny - 1] - stack.extent_y).abs() > 1e-9 * stack.extent_y
            || (mesh.z[nz - 1] - bounds[bounds.len() - 1]).abs() > 1e-9 * stack.height()
        {
            return Err(Error::Mesh("mesh does not span the stack".into()));
        }
        let k_of = |layer: usize| stack.layers[layer].conductivity;
        let mut collocation = CollocationSet {
            interior: Vec::new(),
            interface: Vec::new(),
            boundary: Default::default(),
        };
        let mut pde = Vec::new();
        let mut interfaces = Vec::new();
        let mut boundary = Vec::new();
        for i in 0..nx {
            for j in 0..ny {
                for l in 0..nz {
                    let node = mesh.index(i, j, l);
                    let xy = i * ny + j;
                    let on = [
                        i == 0,
                        i == nx - 1,
                        j == 0,
                        j == ny - 1,
                        l == 0,
                        l == nz - 1,
                    ];
                    let layer = mesh.layer_of_z[l];
                    if on.iter().any(|&b| b) {
                        for (f, face) in Face::ALL.iter().enumerate() {
                            if !on[f] {
                                continue;
                            }
                            collocation.boundary[f].push(node);
                            let (htc, t_amb, flux) = match stack.bc.get(*face) {
                                BoundaryCondition::Adiabatic => (0.0, 0.0, 0.0),
                                BoundaryCondition::Convection { htc, t_amb } => (htc, t_amb, 0.0),
                                BoundaryCondition::Neumann { flux } => (0.0, 0.0, flux),
                            };
                            let k = match face {
                                Face::Bottom => k_of(0),
                                Face::Top => k_of(stack.layers.len() - 1),
                                _ => k_of(layer),
                            };
                            boundary.push(BoundaryEntry {
                                node,
                                xy,
                                face: *face,
                                k,
                                htc,
                                t_amb,
                                flux,
                            });
                        }
                    } else if mesh.interface_z[l] {
                        collocation.interface.push(node);
                        interfaces.push(InterfaceNode {
                            node,
                            k_below: k_of(layer),
                            k_above: k_of(layer + 1),
                        });
                    } else {
                        collocation.interior.push(node);
                        pde.push(PdeNode {
                            node,
                            xy,
                            layer,
                            k: k_of(layer),
                        });
                    }
                }
            }
        }
        Ok(Self {
            mesh,
            stack,
            collocation,
            pde,
            interfaces,
            boundary,
        })
    }

    pub fn mesh(&self) -> &Mesh {
        &self.mesh
    }

    pub fn stack(&self) -> &ChipStack {
        &self.stack
    }

    pub fn collocation(&self) -> &CollocationSet {
        &self.collocation
    }

    pub fn axes(&self) -> [&[f64]; 3] {
        [&self.mesh.x, &self.mesh.y, &self.mesh.z]
    }

    pub fn check_model(&self, model: &OperatorModel) -> Result<()> {
        if model.stack != self.stack {
            return Err(Error::Config(
                "model was built for a different chip stack".into(),
            ));
        }
        Ok(())
    }

    /// Encodes the designs and resolves their sources on the mesh.
    pub fn prepare(&self, model: &OperatorModel, designs: &[PowerSpec]) -> Result<DesignBatch> {
        self.check_model(model)?;
        let [nx, ny, _] = self.mesh.dims();
        let (wx, wy) = (self.mesh.cell_widths(0), self.mesh.cell_widths(1));
        let mut encoded = Vec::with_capacity(designs.len() * model.encoding.len());
        let mut sources = Vec::with_capacity(designs.len());
        for d in designs {
            encoded.extend(model.encode(d)?);
            let resolved = resolve_power(&self.mesh, &self.stack, d)?;
            let density = resolved.layer_power.map(|(layer, p)| {
                let t = self.stack.layers[layer].thickness;
                let mut q = vec![0.0; nx * ny];
                for i in 0..nx {
                    for j in 0..ny {
                        q[i * ny + j] = p[i * ny + j] / (wx[i] * wy[j] * t);
                    }
                }
                (layer, q)
            });
            sources.push(DesignSource {
                top_flux: resolved.top_flux,
                density,
            });
        }
        Ok(DesignBatch { encoded, sources })
    }

    fn interior_len(&self) -> usize {
        self.pde.len() + self.interfaces.len()
    }

    fn factors(&self, model: &OperatorModel) -> (f64, f64, f64, f64) {
        let n = model.normalizer();
        (
            model.output_scale(),
            n.lateral_factor(0),
            n.lateral_factor(1),
            n.flux_factor(),
        )
    }

    fn residuals_from_fields(
        &self,
        model: &OperatorModel,
        batch: &DesignBatch,
        fields: &[Vec<f64>],
    ) -> Residuals {
        let (s, ax, ay, az) = self.factors(model);
        let t_ref = model.t_ref();
        let n = self.mesh.len();
        let ni = self.interior_len();
        let nb = self.boundary.len();
        let mut interior = vec![0.0; batch.len() * ni];
        let mut boundary = vec![0.0; batch.len() * nb];
        for (b, src) in batch.sources.iter().enumerate() {
            let f = |t: usize, node: usize| fields[t][b * n + node];
            let out = &mut interior[b * ni..(b + 1) * ni];
            for (r, p) in out.iter_mut().zip(&self.pde) {
                let q = match &src.density {
                    Some((layer, dens)) if *layer == p.layer => dens[p.xy],
                    _ => 0.0,
                };
                *r = p.k * s * (ax * ax * f(TX2, p.node) + ay * ay * f(TY2, p.node))
                    + s * az * az / p.k * f(TZ2, p.node)
                    + q;
            }
            for (r, p) in out[self.pde.len()..].iter_mut().zip(&self.interfaces) {
                let dtdz = f(TZ1, p.node);
                *r = p.k_above * (s * az / p.k_above * dtdz)
                    - p.k_below * (s * az / p.k_below * dtdz);
            }
            let out = &mut boundary[b * nb..(b + 1) * nb];
            for (r, e) in out.iter_mut().zip(&self.boundary) {
                let (normal, q_map) = self.normal_flux(e, s, ax, ay, az, &f, src);
                let t = t_ref + s * f(T0, e.node);
                let conv = if e.htc > 0.0 {
                    e.htc * (t - e.t_amb)
                } else {
                    0.0
                };
                *r = normal + conv - (e.flux + q_map);
            }
        }
        Residuals { interior, boundary }
    }

    /// `k ∂T/∂n_out` at a boundary entry plus any surface-map flux entering there.
    #[allow(clippy::too_many_arguments)]
    fn normal_flux(
        &self,
        e: &BoundaryEntry,
        s: f64,
        ax: f64,
        ay: f64,
        az: f64,
        f: &dyn Fn(usize, usize) -> f64,
        src: &DesignSource,
    ) -> (f64, f64) {
        let sign = e.face.outward_sign();
        let (term, coef) = self.normal_coef(e, s, ax, ay, az);
        let q_map = match (&src.top_flux, e.face) {
            (Some(q), Face::Top) => q[e.xy],
            _ => 0.0,
        };
        (sign * coef * f(term, e.node), q_map)
    }

    /// Field term and coefficient with `k ∂T/∂(axis) = coef · field`.
    fn normal_coef(&self, e: &BoundaryEntry, s: f64, ax: f64, ay: f64, az: f64) -> (usize, f64) {
        match e.face.axis() {
            0 => (TX1, e.k * s * ax),
            1 => (TY1, e.k * s * ay),
            _ => (TZ1, e.k * (s * az / e.k)),
        }
    }

    /// Residual tensors for a batch, for inspection and independent checks.
    pub fn residuals(&self, model: &OperatorModel, batch: &DesignBatch) -> Result<Residuals> {
        let (fields, _) =
            model.forward_fields(&batch.encoded, batch.len(), self.axes(), &LOSS_TERMS)?;
        Ok(self.residuals_from_fields(model, batch, &fields))
    }

    /// `L = w_r·L_r + w_b·L_b` and its gradient in
    /// [`OperatorModel::param_slices_mut`] order.
    pub fn loss(
        &self,
        model: &OperatorModel,
        batch: &DesignBatch,
        weights: LossWeights,
    ) -> Result<(LossBreakdown, Vec<f64>)> {
        self.check_model(model)?;
        if batch.is_empty() {
            return Err(Error::Config("empty design batch".into()));
        }
        let (fields, pass) =
            model.forward_fields(&batch.encoded, batch.len(), self.axes(), &LOSS_TERMS)?;
        let res = self.residuals_from_fields(model, batch, &fields);
        let breakdown = loss_from_residuals(&res, weights);
        if !breakdown.total.is_finite() {
            let max_enc = batch.encoded.iter().fold(0.0f64, |m, v| m.max(v.abs()));
            return Err(Error::Numeric(format!(
                "non-finite physics loss (L_r = {}, L_b = {}) on a batch of {} designs, max |encoded| = {max_enc}",
                breakdown.residual,
                breakdown.boundary,
                batch.len()
            )));
        }

        let (s, ax, ay, az) = self.factors(model);
        let n = self.mesh.len();
        let ni = self.interior_len();
        let nb = self.boundary.len();
        let gi = 2.0 * weights.residual / res.interior.len() as f64;
        let gb = 2.0 * weights.boundary / res.boundary.len() as f64;
        let mut d: Vec<Vec<f64>> = vec![vec![0.0; batch.len() * n]; LOSS_TERMS.len()];
        for b in 0..batch.len() {
            let ri = &res.interior[b * ni..(b + 1) * ni];
            for (r, p) in ri.iter().zip(&self.pde) {
                let g = gi * r;
                let at = b * n + p.node;
                d[TX2][at] += g * p.k * s * ax * ax;
                d[TY2][at] += g * p.k * s * ay * ay;
                d[TZ2][at] += g * s * az * az / p.k;
            }
            for (r, p) in ri[self.pde.len()..].iter().zip(&self.interfaces) {
                let coef = p.k_above * (s * az / p.k_above) - p.k_below * (s * az / p.k_below);
                d[TZ1][b * n + p.node] += gi * r * coef;
            }
            let rb = &res.boundary[b * nb..(b + 1) * nb];
            for (r, e) in rb.iter().zip(&self.boundary) {
                let g = gb * r;
                let at = b * n + e.node;
                let (term, coef) = self.normal_coef(e, s, ax, ay, az);
                d[term][at] += g * e.face.outward_sign() * coef;
                if e.htc > 0.0 {
                    d[T0][at] += g * e.htc * s;
                }
            }
        }
        let grad = model.backward_fields(&pass, &LOSS_TERMS, &d);
        Ok((breakdown, grad))
    }
}

/// Mean squared interior and boundary residuals combined with `weights`.
pub fn loss_from_residuals(res: &Residuals, weights: LossWeights) -> LossBreakdown {
    let mean_sq = |v: &[f64]| {
        if v.is_empty() {
            0.0
        } else {
            v.iter().map(|r| r * r).sum::<f64>() / v.len() as f64
        }
    };
    let residual = mean_sq(&res.interior);
    let boundary = mean_sq(&res.boundary);
    LossBreakdown {
        total: weights.residual * residual + weights.boundary * boundary,
        residual,
        boundary,
    }
}
