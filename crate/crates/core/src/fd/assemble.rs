//! Finite-volume assembly of `∇·(k∇T) + q_V = 0` on a node-centred mesh.
//!
//! Every node owns a control volume (half cells on boundaries, which is the
//! mirrored-ghost-node treatment written in flux form). Rows are divided by
//! the cell volume so entries are `O(k/h²)`.

use std::sync::Arc;

use crate::domain::{
    interpolate_tile_power, rasterize_floorplan, BoundaryCondition, ChipStack, Face, Mesh,
    PowerSpec,
};
use crate::error::{Error, Result};
use crate::field::TemperatureField;
use crate::linalg::norm2;

use super::sparse::CsrMatrix;

/// `A·x = b` where `x = T − offset` (offset 0 for the absolute-temperature form).
#[derive(Debug, Clone)]
pub struct SparseSystem {
    pub a: Arc<CsrMatrix>,
    pub b: Vec<f64>,
    pub offset: f64,
    pub dims: [usize; 3],
}

impl SparseSystem {
    pub fn n(&self) -> usize {
        self.b.len()
    }

    pub fn to_unknowns(&self, field: &TemperatureField) -> Result<Vec<f64>> {
        if field.dims() != self.dims {
            return Err(Error::Dimension(format!(
                "field {:?} vs system {:?}",
                field.dims(),
                self.dims
            )));
        }
        Ok(field.values().iter().map(|t| t - self.offset).collect())
    }

    pub fn to_field(&self, x: &[f64]) -> Result<TemperatureField> {
        TemperatureField::new(self.dims, x.iter().map(|v| v + self.offset).collect())
    }

    /// Same system in excess-temperature unknowns `θ = T − t_ref`.
    pub fn excess_form(&self, t_ref: f64) -> SparseSystem {
        let shift = t_ref - self.offset;
        let a1 = self.a.mul_vec(&vec![shift; self.n()]);
        let b = self.b.iter().zip(&a1).map(|(b, s)| b - s).collect();
        SparseSystem {
            a: self.a.clone(),
            b,
            offset: t_ref,
            dims: self.dims,
        }
    }
}

/// `‖A·x − b‖₂ / ‖b‖₂` for the field expressed in the system's unknowns.
pub fn relative_residual(sys: &SparseSystem, field: &TemperatureField) -> Result<f64> {
    let bn = norm2(&sys.b);
    if bn == 0.0 {
        return Err(Error::Degenerate(
            "right-hand side is zero; the residual is undefined".into(),
        ));
    }
    let x = sys.to_unknowns(field)?;
    let mut r = vec![0.0; sys.n()];
    sys.a.residual(&x, &sys.b, &mut r);
    Ok(norm2(&r) / bn)
}

/// Power sources resolved onto a mesh.
#[derive(Debug, Clone, PartialEq)]
pub struct ResolvedPower {
    /// Heat flux entering through the top face per (x, y) node, mW/mm².
    pub top_flux: Option<Vec<f64>>,
    /// Layer index and nodal power per (x, y) node of that layer, mW.
    pub layer_power: Option<(usize, Vec<f64>)>,
}

impl ResolvedPower {
    pub fn is_zero(&self) -> bool {
        self.top_flux
            .as_ref()
            .is_none_or(|q| q.iter().all(|&v| v == 0.0))
            && self
                .layer_power
                .as_ref()
                .is_none_or(|(_, p)| p.iter().all(|&v| v == 0.0))
    }
}

pub fn resolve_power(mesh: &Mesh, stack: &ChipStack, power: &PowerSpec) -> Result<ResolvedPower> {
    let [nx, ny, _] = mesh.dims();
    match power {
        PowerSpec::SurfaceTiles(tiles) => Ok(ResolvedPower {
            top_flux: Some(interpolate_tile_power(tiles, mesh)?),
            layer_power: None,
        }),
        PowerSpec::Volumetric(v) => {
            if v.nx != nx || v.ny != ny || v.values.len() != nx * ny {
                return Err(Error::Dimension(format!(
                    "volumetric map {}x{} ({} values) on a {nx}x{ny} mesh",
                    v.nx,
                    v.ny,
                    v.values.len()
                )));
            }
            if v.layer >= stack.layers.len() {
                return Err(Error::Power(format!("layer {} does not exist", v.layer)));
            }
            if let Some(p) = v.values.iter().find(|p| !(**p >= 0.0 && p.is_finite())) {
                return Err(Error::Power(format!("invalid nodal power {p}")));
            }
            Ok(ResolvedPower {
                top_flux: None,
                layer_power: Some((v.layer, v.values.clone())),
            })
        }
        PowerSpec::Floorplan(fp) => {
            let v = rasterize_floorplan(fp, mesh)?;
            Ok(ResolvedPower {
                top_flux: None,
                layer_power: Some((v.layer, v.values)),
            })
        }
    }
}

/// Matrix and geometric factors for one (mesh, stack) pair. The matrix does
/// not depend on power, so it is built once and shared across designs.
#[derive(Debug, Clone)]
pub struct Assembler {
    mesh: Mesh,
    stack: ChipStack,
    a: Arc<CsrMatrix>,
    dx: Vec<f64>,
    dy: Vec<f64>,
    dz: Vec<f64>,
}

impl Assembler {
    pub fn new(mesh: &Mesh, stack: &ChipStack) -> Result<Self> {
        stack.validate()?;
        check_mesh(mesh, stack)?;
        let [nx, ny, nz] = mesh.dims();
        let dx = mesh.cell_widths(0);
        let dy = mesh.cell_widths(1);
        let dz = mesh.cell_widths(2);

        // Lateral conductivity: average over each node's vertical extent.
        let layer_bounds = stack.layer_bounds();
        let zb = mesh.cell_bounds(2);
        let k_lat: Vec<f64> = zb
            .iter()
            .map(|&(lo, hi)| {
                let mut acc = 0.0;
                for (idx, layer) in stack.layers.iter().enumerate() {
                    let overlap =
                        (hi.min(layer_bounds[idx + 1]) - lo.max(layer_bounds[idx])).max(0.0);
                    acc += overlap * layer.conductivity;
                }
                acc / (hi - lo)
            })
            .collect();
        // Vertical conductance per unit area between z-nodes l and l+1 (series resistances).
        let g_vert: Vec<f64> = (0..nz - 1)
            .map(|l| {
                let (lo, hi) = (mesh.z[l], mesh.z[l + 1]);
                let mut resistance = 0.0;
                for (idx, layer) in stack.layers.iter().enumerate() {
                    let overlap =
                        (hi.min(layer_bounds[idx + 1]) - lo.max(layer_bounds[idx])).max(0.0);
                    resistance += overlap / layer.conductivity;
                }
                1.0 / resistance
            })
            .collect();

        let n = mesh.len();
        let mut row_ptr = Vec::with_capacity(n + 1);
        let mut col_idx = Vec::with_capacity(7 * n);
        let mut values = Vec::with_capacity(7 * n);
        row_ptr.push(0);
        let (sx, sy) = (ny * nz, nz);
        for i in 0..nx {
            for j in 0..ny {
                for l in 0..nz {
                    let idx = mesh.index(i, j, l);
                    let vol = dx[i] * dy[j] * dz[l];
                    let ax = dy[j] * dz[l];
                    let ay = dx[i] * dz[l];
                    let az = dx[i] * dy[j];
                    let gxm = (i > 0).then(|| k_lat[l] * ax / (mesh.x[i] - mesh.x[i - 1]));
                    let gxp = (i + 1 < nx).then(|| k_lat[l] * ax / (mesh.x[i + 1] - mesh.x[i]));
                    let gym = (j > 0).then(|| k_lat[l] * ay / (mesh.y[j] - mesh.y[j - 1]));
                    let gyp = (j + 1 < ny).then(|| k_lat[l] * ay / (mesh.y[j + 1] - mesh.y[j]));
                    let gzm = (l > 0).then(|| g_vert[l - 1] * az);
                    let gzp = (l + 1 < nz).then(|| g_vert[l] * az);

                    let mut diag: f64 = [gxm, gxp, gym, gyp, gzm, gzp].iter().flatten().sum();
                    let on_face = |face: Face| match face {
                        Face::XMin => i == 0,
                        Face::XMax => i + 1 == nx,
                        Face::YMin => j == 0,
                        Face::YMax => j + 1 == ny,
                        Face::Bottom => l == 0,
                        Face::Top => l + 1 == nz,
                    };
                    for face in Face::ALL {
                        if !on_face(face) {
                            continue;
                        }
                        if let BoundaryCondition::Convection { htc, .. } = stack.bc.get(face) {
                            let area = match face.axis() {
                                0 => ax,
                                1 => ay,
                                _ => az,
                            };
                            diag += htc * area;
                        }
                    }

                    let mut push = |col: usize, v: f64| {
                        col_idx.push(col);
                        values.push(v / vol);
                    };
                    if let Some(g) = gxm {
                        push(idx - sx, -g);
                    }
                    if let Some(g) = gym {
                        push(idx - sy, -g);
                    }
                    if let Some(g) = gzm {
                        push(idx - 1, -g);
                    }
                    push(idx, diag);
                    if let Some(g) = gzp {
                        push(idx + 1, -g);
                    }
                    if let Some(g) = gyp {
                        push(idx + sy, -g);
                    }
                    if let Some(g) = gxp {
                        push(idx + sx, -g);
                    }
                    row_ptr.push(col_idx.len());
                }
            }
        }
        let a = CsrMatrix::new(n, row_ptr, col_idx, values)?;
        if let Some(r) = a.diagonal().iter().position(|d| *d == 0.0) {
            return Err(Error::Degenerate(format!("row {r} has a zero diagonal")));
        }
        Ok(Self {
            mesh: mesh.clone(),
            stack: stack.clone(),
            a: Arc::new(a),
            dx,
            dy,
            dz,
        })
    }

    pub fn matrix(&self) -> &Arc<CsrMatrix> {
        &self.a
    }

    pub fn mesh(&self) -> &Mesh {
        &self.mesh
    }

    pub fn stack(&self) -> &ChipStack {
        &self.stack
    }

    /// See [`ChipStack::reference_temperature`].
    pub fn reference_temperature(&self) -> Option<f64> {
        self.stack.reference_temperature()
    }

    /// Right-hand side for unknowns `T − offset`. Sources and Neumann fluxes
    /// enter unchanged; convective faces contribute `h·A·(t_amb − offset)`.
    pub fn rhs(&self, power: &ResolvedPower, offset: f64) -> Result<Vec<f64>> {
        let mesh = &self.mesh;
        let [nx, ny, nz] = mesh.dims();
        let mut b = vec![0.0; mesh.len()];
        for face in Face::ALL {
            let (coef_area, extra) = match self.stack.bc.get(face) {
                BoundaryCondition::Adiabatic => (0.0, 0.0),
                BoundaryCondition::Convection { htc, t_amb } => (htc * (t_amb - offset), 0.0),
                BoundaryCondition::Neumann { flux } => (0.0, flux),
            };
            let per_area = coef_area + extra;
            if per_area == 0.0 {
                continue;
            }
            self.for_face_nodes(face, |idx, area| b[idx] += per_area * area);
        }
        if let Some(q) = &power.top_flux {
            if q.len() != nx * ny {
                return Err(Error::Dimension(
                    "top flux map does not match the mesh".into(),
                ));
            }
            for i in 0..nx {
                for j in 0..ny {
                    b[mesh.index(i, j, nz - 1)] += q[i * ny + j] * self.dx[i] * self.dy[j];
                }
            }
        }
        if let Some((layer, p)) = &power.layer_power {
            if p.len() != nx * ny {
                return Err(Error::Dimension(
                    "layer power map does not match the mesh".into(),
                ));
            }
            let weights = mesh.layer_node_weights(&self.stack, *layer);
            for i in 0..nx {
                for j in 0..ny {
                    let pij = p[i * ny + j];
                    if pij == 0.0 {
                        continue;
                    }
                    for &(l, w) in &weights {
                        b[mesh.index(i, j, l)] += pij * w;
                    }
                }
            }
        }
        for i in 0..nx {
            for j in 0..ny {
                for l in 0..nz {
                    b[mesh.index(i, j, l)] /= self.dx[i] * self.dy[j] * self.dz[l];
                }
            }
        }
        Ok(b)
    }

    fn for_face_nodes(&self, face: Face, mut f: impl FnMut(usize, f64)) {
        let [nx, ny, nz] = self.mesh.dims();
        match face {
            Face::XMin | Face::XMax => {
                let i = if face.is_max() { nx - 1 } else { 0 };
                for j in 0..ny {
                    for l in 0..nz {
                        f(self.mesh.index(i, j, l), self.dy[j] * self.dz[l]);
                    }
                }
            }
            Face::YMin | Face::YMax => {
                let j = if face.is_max() { ny - 1 } else { 0 };
                for i in 0..nx {
                    for l in 0..nz {
                        f(self.mesh.index(i, j, l), self.dx[i] * self.dz[l]);
                    }
                }
            }
            Face::Bottom | Face::Top => {
                let l = if face.is_max() { nz - 1 } else { 0 };
                for i in 0..nx {
                    for j in 0..ny {
                        f(self.mesh.index(i, j, l), self.dx[i] * self.dy[j]);
                    }
                }
            }
        }
    }

    /// Absolute-temperature system.
    pub fn system(&self, power: &PowerSpec) -> Result<SparseSystem> {
        let resolved = resolve_power(&self.mesh, &self.stack, power)?;
        self.system_resolved(&resolved, 0.0)
    }

    pub fn system_resolved(&self, power: &ResolvedPower, offset: f64) -> Result<SparseSystem> {
        Ok(SparseSystem {
            a: self.a.clone(),
            b: self.rhs(power, offset)?,
            offset,
            dims: self.mesh.dims(),
        })
    }

    /// System in excess temperature above [`reference_temperature`](Self::reference_temperature).
    /// With a common ambient on all convective faces only the power terms
    /// remain in `b`, so `‖b‖` measures the design's heat load.
    pub fn excess_system(&self, power: &PowerSpec) -> Result<SparseSystem> {
        let resolved = resolve_power(&self.mesh, &self.stack, power)?;
        let t_ref = self.reference_temperature().unwrap_or(0.0);
        self.system_resolved(&resolved, t_ref)
    }
}

fn check_mesh(mesh: &Mesh, stack: &ChipStack) -> Result<()> {
    if mesh.is_empty() || mesh.x.len() < 2 || mesh.y.len() < 2 || mesh.z.len() < 2 {
        return Err(Error::Mesh("mesh is empty".into()));
    }
    let tol = 1e-9;
    let ends = [
        (mesh.x[mesh.x.len() - 1], stack.extent_x, "x"),
        (mesh.y[mesh.y.len() - 1], stack.extent_y, "y"),
        (mesh.z[mesh.z.len() - 1], stack.height(), "z"),
    ];
    for (got, want, name) in ends {
        if (got - want).abs() > tol * want {
            return Err(Error::Mesh(format!(
                "{name}-axis ends at {got}, stack extent is {want}"
            )));
        }
    }
    if mesh.layer_of_z.len() != mesh.z.len()
        || mesh.layer_of_z.iter().any(|&l| l >= stack.layers.len())
    {
        return Err(Error::Mesh(
            "mesh layer map does not match the stack".into(),
        ));
    }
    Ok(())
}

/// Assembles the absolute-temperature system for one design.
pub fn assemble(mesh: &Mesh, stack: &ChipStack, power: &PowerSpec) -> Result<SparseSystem> {
    Assembler::new(mesh, stack)?.system(power)
}
