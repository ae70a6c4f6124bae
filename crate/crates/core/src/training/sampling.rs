//! Random design generators: Gaussian random fields on the tile grid,
//! random floorplan placements and structured block patterns.

use std::sync::Arc;

use rand::Rng;
use rand_distr::StandardNormal;
use rustfft::num_complex::Complex64;
use rustfft::{Fft, FftPlanner};

use crate::domain::{Component, Floorplan, SurfaceTiles};
use crate::error::{Error, Result};

/// Stationary squared-exponential field on a `T × T` tile grid, drawn by
/// circulant embedding. Lengths are fractions of the die edge.
pub struct GrfSampler {
    tiles: usize,
    length_scale: f64,
    m: usize,
    sqrt_eig: Vec<f64>,
    fft: Arc<dyn Fft<f64>>,
}

impl std::fmt::Debug for GrfSampler {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("GrfSampler")
            .field("tiles", &self.tiles)
            .field("length_scale", &self.length_scale)
            .field("m", &self.m)
            .finish()
    }
}

impl GrfSampler {
    pub fn new(tiles: usize, length_scale: f64) -> Result<Self> {
        if tiles < 2 {
            return Err(Error::Config(format!(
                "GRF needs at least 2x2 tiles, got {tiles}"
            )));
        }
        if !(length_scale > 0.0 && length_scale.is_finite()) {
            return Err(Error::Config(format!(
                "GRF length scale must be positive, got {length_scale}"
            )));
        }
        // The periodic box must exceed the die by several length scales so
        // wrap-around correlation is negligible.
        let min = (tiles as f64 * (1.0 + 5.0 * length_scale)).ceil() as usize;
        let m = min.next_power_of_two().max(2 * tiles);
        let t = tiles as f64;
        let mut c = vec![Complex64::new(0.0, 0.0); m * m];
        for p in 0..m {
            let dp = p.min(m - p) as f64 / t;
            for q in 0..m {
                let dq = q.min(m - q) as f64 / t;
                c[p * m + q].re =
                    (-(dp * dp + dq * dq) / (2.0 * length_scale * length_scale)).exp();
            }
        }
        let fft = FftPlanner::new().plan_fft_forward(m);
        fft2(&fft, &mut c, m);
        let n = (m * m) as f64;
        let sqrt_eig = c.iter().map(|z| (z.re.max(0.0) / n).sqrt()).collect();
        Ok(Self {
            tiles,
            length_scale,
            m,
            sqrt_eig,
            fft,
        })
    }

    pub fn tiles(&self) -> usize {
        self.tiles
    }

    pub fn length_scale(&self) -> f64 {
        self.length_scale
    }

    /// Zero-mean unit-variance field, indexed `[tx * T + ty]`.
    pub fn sample_raw<R: Rng>(&self, rng: &mut R) -> Vec<f64> {
        let m = self.m;
        let mut z: Vec<Complex64> = self
            .sqrt_eig
            .iter()
            .map(|&s| {
                let (a, b): (f64, f64) = (rng.sample(StandardNormal), rng.sample(StandardNormal));
                Complex64::new(s * a, s * b)
            })
            .collect();
        fft2(&self.fft, &mut z, m);
        let t = self.tiles;
        let mut out = Vec::with_capacity(t * t);
        for tx in 0..t {
            for ty in 0..t {
                out.push(z[tx * m + ty].re);
            }
        }
        out
    }

    /// Field min–max normalised onto [0, 1].
    pub fn sample_levels<R: Rng>(&self, rng: &mut R) -> Vec<f64> {
        min_max(self.sample_raw(rng))
    }
}

fn fft2(fft: &Arc<dyn Fft<f64>>, data: &mut [Complex64], m: usize) {
    for row in data.chunks_exact_mut(m) {
        fft.process(row);
    }
    let mut col = vec![Complex64::new(0.0, 0.0); m];
    for j in 0..m {
        for i in 0..m {
            col[i] = data[i * m + j];
        }
        fft.process(&mut col);
        for i in 0..m {
            data[i * m + j] = col[i];
        }
    }
}

fn min_max(mut v: Vec<f64>) -> Vec<f64> {
    let lo = v.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let span = hi - lo;
    if span > 0.0 {
        v.iter_mut()
            .for_each(|x| *x = ((*x - lo) / span).clamp(0.0, 1.0));
    } else {
        v.iter_mut().for_each(|x| *x = 0.0);
    }
    v
}

/// Tile levels of a GRF draw, wrapped as a surface power map.
pub fn sample_grf<R: Rng>(
    sampler: &GrfSampler,
    unit_power: f64,
    rng: &mut R,
) -> Result<SurfaceTiles> {
    SurfaceTiles::new(sampler.tiles(), sampler.sample_levels(rng), unit_power)
}

/// Places every component uniformly over its valid lower-left positions.
/// Overlap is allowed.
pub fn sample_floorplan<R: Rng>(
    components: &[Component],
    grid_w: usize,
    grid_h: usize,
    layer: usize,
    rng: &mut R,
) -> Result<Floorplan> {
    let mut placed = Vec::with_capacity(components.len());
    for c in components {
        if c.width == 0 || c.height == 0 || c.width > grid_w || c.height > grid_h {
            return Err(Error::Power(format!(
                "component {} ({}x{}) does not fit a {grid_w}x{grid_h} grid",
                c.id, c.width, c.height
            )));
        }
        let mut c = c.clone();
        c.x = rng.random_range(0..=grid_w - c.width);
        c.y = rng.random_range(0..=grid_h - c.height);
        placed.push(c);
    }
    let fp = Floorplan {
        grid_w,
        grid_h,
        layer,
        components: placed,
    };
    fp.validate()?;
    Ok(fp)
}

/// Structured evaluation map: a few axis-aligned rectangles at levels 0.5
/// or 1 on a zero background (later rectangles overwrite earlier ones).
pub fn block_pattern<R: Rng>(tiles: usize, unit_power: f64, rng: &mut R) -> Result<SurfaceTiles> {
    if tiles < 2 {
        return Err(Error::Config(
            "block patterns need at least 2x2 tiles".into(),
        ));
    }
    let mut levels = vec![0.0; tiles * tiles];
    let blocks = rng.random_range(2..=5);
    for _ in 0..blocks {
        let w = rng.random_range(1..=(tiles / 2).max(1));
        let h = rng.random_range(1..=(tiles / 2).max(1));
        let x = rng.random_range(0..=tiles - w);
        let y = rng.random_range(0..=tiles - h);
        let level = if rng.random_bool(0.5) { 0.5 } else { 1.0 };
        for tx in x..x + w {
            for ty in y..y + h {
                levels[tx * tiles + ty] = level;
            }
        }
    }
    SurfaceTiles::new(tiles, levels, unit_power)
}
