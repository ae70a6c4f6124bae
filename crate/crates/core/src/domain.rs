//! Chip geometry, meshes, boundary conditions and power specifications.
//!
//! Units are fixed at (mm, mW, K): conductivities in mW/(mm·K), heat
//! transfer coefficients in mW/(mm²·K), fluxes in mW/mm². Numerically these
//! coincide with W/(m·K) and kW/m² style values, so 0.1 W/(m·K) is written
//! as 0.1 and 500 W/(m²·K) as 0.5.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Relative tolerance used when matching coordinates against layer interfaces.
const COORD_EPS: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Layer {
    /// mm
    pub thickness: f64,
    /// mW/(mm·K)
    pub conductivity: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case", deny_unknown_fields)]
pub enum BoundaryCondition {
    Adiabatic,
    /// `-k ∂T/∂n = htc·(T - t_amb)` with `n` the outward normal.
    Convection {
        htc: f64,
        t_amb: f64,
    },
    /// Uniform heat flux entering the chip through the face, mW/mm².
    /// Surface power maps assigned to the face add onto this value.
    Neumann {
        flux: f64,
    },
}

impl BoundaryCondition {
    fn validate(&self, face: Face) -> Result<()> {
        match *self {
            BoundaryCondition::Adiabatic => Ok(()),
            BoundaryCondition::Convection { htc, t_amb } => {
                if !(htc > 0.0 && htc.is_finite()) {
                    return Err(Error::Geometry(format!(
                        "{face:?}: htc must be positive, got {htc}"
                    )));
                }
                if !(t_amb > 0.0 && t_amb.is_finite()) {
                    return Err(Error::Geometry(format!(
                        "{face:?}: t_amb must be positive Kelvin, got {t_amb}"
                    )));
                }
                Ok(())
            }
            BoundaryCondition::Neumann { flux } => {
                if !flux.is_finite() {
                    return Err(Error::Geometry(format!("{face:?}: non-finite flux")));
                }
                Ok(())
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Face {
    XMin,
    XMax,
    YMin,
    YMax,
    Bottom,
    Top,
}

impl Face {
    pub const ALL: [Face; 6] = [
        Face::XMin,
        Face::XMax,
        Face::YMin,
        Face::YMax,
        Face::Bottom,
        Face::Top,
    ];

    /// 0 = x, 1 = y, 2 = z.
    pub fn axis(self) -> usize {
        match self {
            Face::XMin | Face::XMax => 0,
            Face::YMin | Face::YMax => 1,
            Face::Bottom | Face::Top => 2,
        }
    }

    /// Whether the face sits at the upper end of its axis.
    pub fn is_max(self) -> bool {
        matches!(self, Face::XMax | Face::YMax | Face::Top)
    }

    /// Sign of the outward normal along the face's axis.
    pub fn outward_sign(self) -> f64 {
        if self.is_max() {
            1.0
        } else {
            -1.0
        }
    }
}

/// One boundary condition per face.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FaceConditions {
    pub x_min: BoundaryCondition,
    pub x_max: BoundaryCondition,
    pub y_min: BoundaryCondition,
    pub y_max: BoundaryCondition,
    pub bottom: BoundaryCondition,
    pub top: BoundaryCondition,
}

impl FaceConditions {
    /// Same condition on the four side faces.
    pub fn with_sides(
        sides: BoundaryCondition,
        bottom: BoundaryCondition,
        top: BoundaryCondition,
    ) -> Self {
        Self {
            x_min: sides,
            x_max: sides,
            y_min: sides,
            y_max: sides,
            bottom,
            top,
        }
    }

    pub fn get(&self, face: Face) -> BoundaryCondition {
        match face {
            Face::XMin => self.x_min,
            Face::XMax => self.x_max,
            Face::YMin => self.y_min,
            Face::YMax => self.y_max,
            Face::Bottom => self.bottom,
            Face::Top => self.top,
        }
    }
}

/// Layered chip: lateral extents, layers listed bottom-up, and face conditions.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ChipStack {
    pub extent_x: f64,
    pub extent_y: f64,
    pub layers: Vec<Layer>,
    pub bc: FaceConditions,
}

impl ChipStack {
    pub fn new(
        extent_x: f64,
        extent_y: f64,
        layers: Vec<Layer>,
        bc: FaceConditions,
    ) -> Result<Self> {
        let stack = Self {
            extent_x,
            extent_y,
            layers,
            bc,
        };
        stack.validate()?;
        Ok(stack)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.extent_x > 0.0
            && self.extent_x.is_finite()
            && self.extent_y > 0.0
            && self.extent_y.is_finite())
        {
            return Err(Error::Geometry(format!(
                "lateral extents must be positive, got {} x {}",
                self.extent_x, self.extent_y
            )));
        }
        if self.layers.is_empty() {
            return Err(Error::Geometry("stack has no layers".into()));
        }
        for (idx, layer) in self.layers.iter().enumerate() {
            if !(layer.thickness > 0.0 && layer.thickness.is_finite()) {
                return Err(Error::Geometry(format!(
                    "layer {idx}: thickness must be positive, got {}",
                    layer.thickness
                )));
            }
            if !(layer.conductivity > 0.0 && layer.conductivity.is_finite()) {
                return Err(Error::Geometry(format!(
                    "layer {idx}: conductivity must be positive, got {}",
                    layer.conductivity
                )));
            }
        }
        for face in Face::ALL {
            self.bc.get(face).validate(face)?;
        }
        Ok(())
    }

    /// Total vertical extent (sum of layer thicknesses).
    pub fn height(&self) -> f64 {
        self.layers.iter().map(|l| l.thickness).sum()
    }

    /// Layer boundaries bottom-up, starting at 0 and ending at [`height`](Self::height).
    pub fn layer_bounds(&self) -> Vec<f64> {
        let mut bounds = Vec::with_capacity(self.layers.len() + 1);
        let mut z = 0.0;
        bounds.push(z);
        for layer in &self.layers {
            z += layer.thickness;
            bounds.push(z);
        }
        bounds
    }

    /// Layer containing height `z`. An interface belongs to the layer below it.
    pub fn layer_at(&self, z: f64) -> usize {
        let bounds = self.layer_bounds();
        let tol = COORD_EPS * self.height();
        for idx in 0..self.layers.len() {
            if z <= bounds[idx + 1] + tol {
                return idx;
            }
        }
        self.layers.len() - 1
    }

    /// Ambient temperature of the first convective face (bottom, top, then
    /// sides). Used as the offset of the excess-temperature form and as the
    /// operator model's output reference.
    pub fn reference_temperature(&self) -> Option<f64> {
        [
            Face::Bottom,
            Face::Top,
            Face::XMin,
            Face::XMax,
            Face::YMin,
            Face::YMax,
        ]
        .iter()
        .find_map(|&f| match self.bc.get(f) {
            BoundaryCondition::Convection { t_amb, .. } => Some(t_amb),
            _ => None,
        })
    }

    /// Single homogeneous cuboid with a top surface flux face, convective
    /// bottom and adiabatic sides.
    pub fn surface_cuboid(
        extent: f64,
        thickness: f64,
        conductivity: f64,
        htc: f64,
        t_amb: f64,
    ) -> Result<Self> {
        Self::new(
            extent,
            extent,
            vec![Layer {
                thickness,
                conductivity,
            }],
            FaceConditions::with_sides(
                BoundaryCondition::Adiabatic,
                BoundaryCondition::Convection { htc, t_amb },
                BoundaryCondition::Neumann { flux: 0.0 },
            ),
        )
    }

    /// 1 mm × 1 mm × 0.5 mm cuboid, k = 0.1, bottom htc 0.5 at 298.15 K.
    pub fn surface_benchmark() -> Self {
        Self::surface_cuboid(1.0, 0.5, 0.1, 0.5, 298.15).expect("valid preset")
    }

    /// Three-layer 1 mm × 1 mm × 0.55 mm stack (bottom-up: 0.1 mm at k=20,
    /// 0.05 mm at k=1, 0.4 mm at k=1), convective top and bottom, adiabatic sides.
    pub fn three_layer_benchmark() -> Self {
        let conv = BoundaryCondition::Convection {
            htc: 0.5,
            t_amb: 298.15,
        };
        Self::new(
            1.0,
            1.0,
            vec![
                Layer {
                    thickness: 0.1,
                    conductivity: 20.0,
                },
                Layer {
                    thickness: 0.05,
                    conductivity: 1.0,
                },
                Layer {
                    thickness: 0.4,
                    conductivity: 1.0,
                },
            ],
            FaceConditions::with_sides(BoundaryCondition::Adiabatic, conv, conv),
        )
        .expect("valid preset")
    }
}

/// Node-centered tensor-product grid. Flat indices are row-major over
/// (x, y, z) with z fastest.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Mesh {
    pub x: Vec<f64>,
    pub y: Vec<f64>,
    pub z: Vec<f64>,
    /// Layer index of each z-node.
    pub layer_of_z: Vec<usize>,
    /// Whether each z-node sits on an internal layer interface.
    pub interface_z: Vec<bool>,
}

impl Mesh {
    pub fn dims(&self) -> [usize; 3] {
        [self.x.len(), self.y.len(), self.z.len()]
    }

    pub fn len(&self) -> usize {
        self.x.len() * self.y.len() * self.z.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    #[inline]
    pub fn index(&self, i: usize, j: usize, l: usize) -> usize {
        (i * self.y.len() + j) * self.z.len() + l
    }

    pub fn axis(&self, axis: usize) -> &[f64] {
        match axis {
            0 => &self.x,
            1 => &self.y,
            _ => &self.z,
        }
    }

    /// Dual-cell (control volume) widths along an axis; boundary nodes get half cells.
    pub fn cell_widths(&self, axis: usize) -> Vec<f64> {
        dual_widths(self.axis(axis))
    }

    /// Dual-cell bounds `(lo, hi)` along an axis.
    pub fn cell_bounds(&self, axis: usize) -> Vec<(f64, f64)> {
        dual_bounds(self.axis(axis))
    }

    /// Fraction of a layer's thickness covered by each z-node's control volume.
    /// The fractions sum to one.
    pub fn layer_node_weights(&self, stack: &ChipStack, layer: usize) -> Vec<(usize, f64)> {
        let bounds = stack.layer_bounds();
        let (lo, hi) = (bounds[layer], bounds[layer + 1]);
        let thickness = hi - lo;
        self.cell_bounds(2)
            .iter()
            .enumerate()
            .filter_map(|(l, &(a, b))| {
                let overlap = (b.min(hi) - a.max(lo)).max(0.0);
                (overlap > 0.0).then_some((l, overlap / thickness))
            })
            .collect()
    }

    /// z-nodes strictly inside a layer (excluding its bounding interfaces and faces).
    pub fn layer_interior_z(&self, layer: usize) -> Vec<usize> {
        let nz = self.z.len();
        (0..nz)
            .filter(|&l| {
                self.layer_of_z[l] == layer && !self.interface_z[l] && l != 0 && l != nz - 1
            })
            .collect()
    }
}

fn dual_bounds(coords: &[f64]) -> Vec<(f64, f64)> {
    let n = coords.len();
    (0..n)
        .map(|i| {
            let lo = if i == 0 {
                coords[0]
            } else {
                0.5 * (coords[i - 1] + coords[i])
            };
            let hi = if i + 1 == n {
                coords[n - 1]
            } else {
                0.5 * (coords[i] + coords[i + 1])
            };
            (lo, hi)
        })
        .collect()
}

fn dual_widths(coords: &[f64]) -> Vec<f64> {
    dual_bounds(coords)
        .into_iter()
        .map(|(lo, hi)| hi - lo)
        .collect()
}

fn uniform_axis(extent: f64, n: usize) -> Vec<f64> {
    (0..n)
        .map(|i| {
            if i + 1 == n {
                extent
            } else {
                extent * i as f64 / (n - 1) as f64
            }
        })
        .collect()
}

/// Builds a node-centered mesh. x and y are uniform; along z the `nz - 1`
/// intervals are shared among layers in proportion to thickness (at least one
/// each) so that every interface is a grid node, with uniform spacing inside
/// each layer.
pub fn build_mesh(stack: &ChipStack, nodes_per_axis: (usize, usize, usize)) -> Result<Mesh> {
    stack.validate()?;
    let (nx, ny, nz) = nodes_per_axis;
    for (name, n) in [("x", nx), ("y", ny), ("z", nz)] {
        if n < 2 {
            return Err(Error::Mesh(format!(
                "{name}-axis needs at least 2 nodes, got {n}"
            )));
        }
    }
    let n_layers = stack.layers.len();
    let intervals = nz - 1;
    if intervals < n_layers {
        return Err(Error::Mesh(format!(
            "{nz} z-nodes cannot resolve {n_layers} layers: layer {intervals} (thickness {} mm) receives no interval",
            stack.layers[intervals].thickness
        )));
    }

    let height = stack.height();
    let ideal: Vec<f64> = stack
        .layers
        .iter()
        .map(|l| l.thickness / height * intervals as f64)
        .collect();
    let mut counts: Vec<usize> = ideal
        .iter()
        .map(|v| ((v + 1e-9).floor() as usize).max(1))
        .collect();
    // Largest-remainder rounding towards the exact interval total.
    loop {
        let total: usize = counts.iter().sum();
        if total == intervals {
            break;
        }
        if total < intervals {
            let idx = (0..n_layers)
                .max_by(|&a, &b| {
                    (ideal[a] - counts[a] as f64).total_cmp(&(ideal[b] - counts[b] as f64))
                })
                .unwrap();
            counts[idx] += 1;
        } else {
            let idx = (0..n_layers)
                .filter(|&i| counts[i] > 1)
                .max_by(|&a, &b| {
                    (counts[a] as f64 - ideal[a]).total_cmp(&(counts[b] as f64 - ideal[b]))
                })
                .ok_or_else(|| Error::Mesh("cannot distribute z intervals".into()))?;
            counts[idx] -= 1;
        }
    }

    let bounds = stack.layer_bounds();
    let mut z = Vec::with_capacity(nz);
    let mut layer_of_z = Vec::with_capacity(nz);
    let mut interface_z = Vec::with_capacity(nz);
    z.push(0.0);
    layer_of_z.push(0);
    interface_z.push(false);
    for (layer, &count) in counts.iter().enumerate() {
        let (lo, hi) = (bounds[layer], bounds[layer + 1]);
        for step in 1..=count {
            let zz = if step == count {
                hi
            } else {
                lo + (hi - lo) * step as f64 / count as f64
            };
            z.push(zz);
            layer_of_z.push(layer);
            interface_z.push(step == count && layer + 1 < n_layers);
        }
    }

    Ok(Mesh {
        x: uniform_axis(stack.extent_x, nx),
        y: uniform_axis(stack.extent_y, ny),
        z,
        layer_of_z,
        interface_z,
    })
}

/// Surface power map: `n × n` tile levels in [0, 1] on the top face,
/// indexed `levels[tx * n + ty]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SurfaceTiles {
    pub n: usize,
    pub levels: Vec<f64>,
    /// Power of a tile at level 1, mW.
    pub unit_power: f64,
}

/// Paper-default tile power at level 1 (mW).
pub const DEFAULT_TILE_UNIT_POWER: f64 = 0.00625;

impl SurfaceTiles {
    pub fn new(n: usize, levels: Vec<f64>, unit_power: f64) -> Result<Self> {
        let tiles = Self {
            n,
            levels,
            unit_power,
        };
        tiles.validate()?;
        Ok(tiles)
    }

    pub fn uniform(n: usize, level: f64, unit_power: f64) -> Result<Self> {
        Self::new(n, vec![level; n * n], unit_power)
    }

    pub fn validate(&self) -> Result<()> {
        if self.n == 0 || self.levels.len() != self.n * self.n {
            return Err(Error::Power(format!(
                "expected {}x{} tile levels, got {}",
                self.n,
                self.n,
                self.levels.len()
            )));
        }
        if let Some(bad) = self.levels.iter().find(|v| !(0.0..=1.0).contains(*v)) {
            return Err(Error::Power(format!("tile level {bad} outside [0, 1]")));
        }
        if !(self.unit_power >= 0.0 && self.unit_power.is_finite()) {
            return Err(Error::Power(format!(
                "unit power must be non-negative, got {}",
                self.unit_power
            )));
        }
        Ok(())
    }

    pub fn total_power(&self) -> f64 {
        self.levels.iter().sum::<f64>() * self.unit_power
    }
}

/// Nodal power (mW) per (x, y) node of a layer slab, indexed `values[i * ny + j]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VolumetricPower {
    pub layer: usize,
    pub nx: usize,
    pub ny: usize,
    pub values: Vec<f64>,
}

impl VolumetricPower {
    pub fn total_power(&self) -> f64 {
        self.values.iter().sum()
    }
}

/// Rectangular heat source on a tile grid. `(x, y)` is the lower-left tile.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Component {
    pub id: String,
    pub width: usize,
    pub height: usize,
    /// mW
    pub power: f64,
    pub x: usize,
    pub y: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Floorplan {
    pub grid_w: usize,
    pub grid_h: usize,
    /// Layer receiving the components' power.
    pub layer: usize,
    pub components: Vec<Component>,
}

impl Floorplan {
    pub fn validate(&self) -> Result<()> {
        if self.grid_w == 0 || self.grid_h == 0 {
            return Err(Error::Power("empty tile grid".into()));
        }
        for c in &self.components {
            if c.width == 0 || c.height == 0 {
                return Err(Error::Power(format!("component {} has zero size", c.id)));
            }
            if !(c.power >= 0.0 && c.power.is_finite()) {
                return Err(Error::Power(format!(
                    "component {} has invalid power {}",
                    c.id, c.power
                )));
            }
            if c.x + c.width > self.grid_w || c.y + c.height > self.grid_h {
                return Err(Error::Power(format!(
                    "component {} at ({}, {}) size {}x{} leaves the {}x{} grid",
                    c.id, c.x, c.y, c.width, c.height, self.grid_w, self.grid_h
                )));
            }
        }
        Ok(())
    }

    pub fn total_power(&self) -> f64 {
        self.components.iter().map(|c| c.power).sum()
    }

    /// Per-tile power (mW), `grid_w × grid_h`, indexed `[tx * grid_h + ty]`.
    /// Overlapping components add.
    pub fn tile_power(&self) -> Vec<f64> {
        let mut tiles = vec![0.0; self.grid_w * self.grid_h];
        for c in &self.components {
            let per_tile = c.power / (c.width * c.height) as f64;
            for tx in c.x..c.x + c.width {
                for ty in c.y..c.y + c.height {
                    tiles[tx * self.grid_h + ty] += per_tile;
                }
            }
        }
        tiles
    }

    /// Largest per-tile power any single component produces.
    pub fn max_component_tile_power(&self) -> f64 {
        self.components
            .iter()
            .map(|c| c.power / (c.width * c.height) as f64)
            .fold(0.0, f64::max)
    }
}

/// Design configuration driving a thermal solve.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "variant", rename_all = "snake_case")]
pub enum PowerSpec {
    SurfaceTiles(SurfaceTiles),
    Volumetric(VolumetricPower),
    Floorplan(Floorplan),
}

impl PowerSpec {
    pub fn total_power(&self) -> f64 {
        match self {
            PowerSpec::SurfaceTiles(t) => t.total_power(),
            PowerSpec::Volumetric(v) => v.total_power(),
            PowerSpec::Floorplan(f) => f.total_power(),
        }
    }
}

/// Bilinear interpolation of tile-centre flux densities (mW/mm²) onto the
/// top-face nodes, with constant extrapolation beyond the outermost centres.
/// Returns `nx * ny` values indexed `[i * ny + j]`.
pub fn interpolate_tile_power(tiles: &SurfaceTiles, mesh: &Mesh) -> Result<Vec<f64>> {
    tiles.validate()?;
    let [nx, ny, _] = mesh.dims();
    if nx != tiles.n + 1 || ny != tiles.n + 1 {
        return Err(Error::Dimension(format!(
            "{}x{} tiles need a {}x{} top face, mesh has {nx}x{ny}",
            tiles.n,
            tiles.n,
            tiles.n + 1,
            tiles.n + 1
        )));
    }
    let ex = mesh.x[nx - 1] - mesh.x[0];
    let ey = mesh.y[ny - 1] - mesh.y[0];
    let n = tiles.n;
    let density = tiles.unit_power / ((ex / n as f64) * (ey / n as f64));

    // Fractional position of a coordinate on the tile-centre lattice.
    let locate = |coord: f64, origin: f64, extent: f64| -> (usize, usize, f64) {
        let t = ((coord - origin) / extent * n as f64 - 0.5).clamp(0.0, (n - 1) as f64);
        let lo = (t.floor() as usize).min(n - 1);
        let hi = (lo + 1).min(n - 1);
        (lo, hi, t - lo as f64)
    };

    let mut out = vec![0.0; nx * ny];
    for i in 0..nx {
        let (x0, x1, fx) = locate(mesh.x[i], mesh.x[0], ex);
        for j in 0..ny {
            let (y0, y1, fy) = locate(mesh.y[j], mesh.y[0], ey);
            let lv = |tx: usize, ty: usize| tiles.levels[tx * n + ty];
            let level = (1.0 - fx) * (1.0 - fy) * lv(x0, y0)
                + fx * (1.0 - fy) * lv(x1, y0)
                + (1.0 - fx) * fy * lv(x0, y1)
                + fx * fy * lv(x1, y1);
            out[i * ny + j] = level * density;
        }
    }
    Ok(out)
}

/// Fraction of each tile (along one axis) falling into each node's control
/// volume: `weights[t]` lists `(node, fraction)` with fractions summing to one.
fn tile_to_node_weights(coords: &[f64], n_tiles: usize) -> Vec<Vec<(usize, f64)>> {
    let bounds = dual_bounds(coords);
    let origin = coords[0];
    let extent = coords[coords.len() - 1] - origin;
    let w = extent / n_tiles as f64;
    (0..n_tiles)
        .map(|t| {
            let (a, b) = (origin + t as f64 * w, origin + (t + 1) as f64 * w);
            let mut row: Vec<(usize, f64)> = bounds
                .iter()
                .enumerate()
                .filter_map(|(i, &(lo, hi))| {
                    let overlap = (hi.min(b) - lo.max(a)).max(0.0);
                    (overlap > 0.0).then_some((i, overlap))
                })
                .collect();
            let total: f64 = row.iter().map(|(_, v)| v).sum();
            for entry in &mut row {
                entry.1 /= total;
            }
            row
        })
        .collect()
}

/// Spreads each component's power uniformly over its tiles (overlaps add) and
/// maps tile power onto the (x, y) nodes of the floorplan layer by control
/// volume overlap. Total power is conserved.
pub fn rasterize_floorplan(fp: &Floorplan, mesh: &Mesh) -> Result<VolumetricPower> {
    fp.validate()?;
    let [nx, ny, _] = mesh.dims();
    let max_layer = mesh.layer_of_z.iter().copied().max().unwrap_or(0);
    if fp.layer > max_layer {
        return Err(Error::Power(format!(
            "floorplan layer {} does not exist",
            fp.layer
        )));
    }
    let tiles = fp.tile_power();
    let wx = tile_to_node_weights(&mesh.x, fp.grid_w);
    let wy = tile_to_node_weights(&mesh.y, fp.grid_h);
    let mut values = vec![0.0; nx * ny];
    for tx in 0..fp.grid_w {
        for ty in 0..fp.grid_h {
            let p = tiles[tx * fp.grid_h + ty];
            if p == 0.0 {
                continue;
            }
            for &(i, fx) in &wx[tx] {
                for &(j, fy) in &wy[ty] {
                    values[i * ny + j] += p * fx * fy;
                }
            }
        }
    }
    Ok(VolumetricPower {
        layer: fp.layer,
        nx,
        ny,
        values,
    })
}

/// Number of tile cells covered by two or more components.
pub fn overlap_tiles(fp: &Floorplan) -> usize {
    let mut occupancy = vec![0u32; fp.grid_w * fp.grid_h];
    for c in &fp.components {
        for tx in c.x..(c.x + c.width).min(fp.grid_w) {
            for ty in c.y..(c.y + c.height).min(fp.grid_h) {
                occupancy[tx * fp.grid_h + ty] += 1;
            }
        }
    }
    occupancy.iter().filter(|&&c| c >= 2).count()
}

/// The ten-component set (two at 0.5 mW, four at 1 mW, four at 2 mW), each a
/// square of `side` tiles, all placed at the origin.
pub fn benchmark_components(side: usize) -> Vec<Component> {
    let powers = [0.5, 0.5, 1.0, 1.0, 1.0, 1.0, 2.0, 2.0, 2.0, 2.0];
    powers
        .iter()
        .enumerate()
        .map(|(idx, &power)| Component {
            id: format!("C{idx}"),
            width: side,
            height: side,
            power,
            x: 0,
            y: 0,
        })
        .collect()
}
