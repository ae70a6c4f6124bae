//! Physical coordinates → trunk inputs.
//!
//! x and y map affinely onto `[-HALF_SPAN, HALF_SPAN]`. z goes through the
//! thermal-resistance coordinate `ζ(z) = ∫₀^z dz'/k(z')` first, so that a
//! field smooth in the normalised coordinate automatically carries a
//! continuous heat flux `k ∂T/∂z` across material interfaces.

use crate::domain::ChipStack;
use crate::error::{Error, Result};

pub const HALF_SPAN: f64 = 0.9;

/// Slack on the domain check, relative to the axis extent.
const DOMAIN_EPS: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq)]
pub struct Normalizer {
    extent: [f64; 3],
    z_bounds: Vec<f64>,
    conductivity: Vec<f64>,
    /// ζ at each entry of `z_bounds`.
    zeta_bounds: Vec<f64>,
}

impl Normalizer {
    pub fn new(stack: &ChipStack) -> Result<Self> {
        stack.validate()?;
        let z_bounds = stack.layer_bounds();
        let conductivity: Vec<f64> = stack.layers.iter().map(|l| l.conductivity).collect();
        let mut zeta_bounds = vec![0.0];
        for l in &stack.layers {
            zeta_bounds.push(zeta_bounds.last().unwrap() + l.thickness / l.conductivity);
        }
        Ok(Self {
            extent: [stack.extent_x, stack.extent_y, stack.height()],
            z_bounds,
            conductivity,
            zeta_bounds,
        })
    }

    pub fn extent(&self, axis: usize) -> f64 {
        self.extent[axis]
    }

    fn check(&self, axis: usize, c: f64) -> Result<()> {
        let tol = DOMAIN_EPS * self.extent[axis];
        if !(c >= -tol && c <= self.extent[axis] + tol) {
            return Err(Error::Domain(format!(
                "coordinate {c} on axis {axis} outside [0, {}]",
                self.extent[axis]
            )));
        }
        Ok(())
    }

    /// Layer holding height `z`; an interface belongs to the layer below.
    pub fn layer_at(&self, z: f64) -> usize {
        let tol = DOMAIN_EPS * self.extent[2];
        (0..self.conductivity.len())
            .find(|&i| z <= self.z_bounds[i + 1] + tol)
            .unwrap_or(self.conductivity.len() - 1)
    }

    fn zeta(&self, z: f64) -> f64 {
        let i = self.layer_at(z);
        let dz = (z - self.z_bounds[i]).clamp(0.0, self.z_bounds[i + 1] - self.z_bounds[i]);
        self.zeta_bounds[i] + dz / self.conductivity[i]
    }

    pub fn to_unit(&self, axis: usize, c: f64) -> Result<f64> {
        self.check(axis, c)?;
        let frac = if axis == 2 {
            self.zeta(c) / self.zeta_bounds.last().unwrap()
        } else {
            c.clamp(0.0, self.extent[axis]) / self.extent[axis]
        };
        Ok(-HALF_SPAN + 2.0 * HALF_SPAN * frac)
    }

    pub fn to_unit_all(&self, axis: usize, coords: &[f64]) -> Result<Vec<f64>> {
        coords.iter().map(|&c| self.to_unit(axis, c)).collect()
    }

    /// `du/dy` for x and y.
    pub fn lateral_factor(&self, axis: usize) -> f64 {
        2.0 * HALF_SPAN / self.extent[axis]
    }

    /// `k·du/dz`, the same in every layer.
    pub fn flux_factor(&self) -> f64 {
        2.0 * HALF_SPAN / self.zeta_bounds.last().unwrap()
    }

    pub fn conductivity_at(&self, z: f64) -> f64 {
        self.conductivity[self.layer_at(z)]
    }

    /// `du/dy` along `axis` at coordinate `c` (for z, inside the layer
    /// holding `c`).
    pub fn chain_factor(&self, axis: usize, c: f64) -> f64 {
        if axis == 2 {
            self.flux_factor() / self.conductivity_at(c)
        } else {
            self.lateral_factor(axis)
        }
    }
}
