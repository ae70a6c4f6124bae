//! File output helpers: atomic writes, CSV rows and PPM heatmaps.

use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::field::TemperatureField;

/// Writes through a temporary sibling file and renames it into place, so a
/// reader never observes a partially written file.
pub fn atomic_write<F>(path: &Path, write: F) -> Result<()>
where
    F: FnOnce(&mut BufWriter<File>) -> Result<()>,
{
    let dir = path
        .parent()
        .filter(|p| !p.as_os_str().is_empty())
        .unwrap_or(Path::new("."));
    fs::create_dir_all(dir)?;
    let name = path
        .file_name()
        .ok_or_else(|| Error::Config(format!("{} is not a file path", path.display())))?;
    let tmp = dir.join(format!(
        ".{}.tmp{}",
        name.to_string_lossy(),
        std::process::id()
    ));
    let result = (|| {
        let mut w = BufWriter::new(File::create(&tmp)?);
        write(&mut w)?;
        w.flush()?;
        w.get_ref().sync_all()?;
        Ok(())
    })();
    match result {
        Ok(()) => {
            fs::rename(&tmp, path)?;
            Ok(())
        }
        Err(e) => {
            let _ = fs::remove_file(&tmp);
            Err(e)
        }
    }
}

pub fn write_csv<W: Write>(
    w: &mut W,
    header: &str,
    rows: impl IntoIterator<Item = String>,
) -> Result<()> {
    writeln!(w, "{header}")?;
    for row in rows {
        writeln!(w, "{row}")?;
    }
    Ok(())
}

/// Piecewise-linear blue → cyan → green → yellow → red ramp on [0, 1].
pub fn colormap(t: f64) -> [u8; 3] {
    const STOPS: [[f64; 3]; 5] = [
        [0.0, 0.0, 1.0],
        [0.0, 1.0, 1.0],
        [0.0, 1.0, 0.0],
        [1.0, 1.0, 0.0],
        [1.0, 0.0, 0.0],
    ];
    let t = if t.is_finite() {
        t.clamp(0.0, 1.0)
    } else {
        0.0
    };
    let pos = t * (STOPS.len() - 1) as f64;
    let i = (pos.floor() as usize).min(STOPS.len() - 2);
    let f = pos - i as f64;
    let mut rgb = [0u8; 3];
    for c in 0..3 {
        let v = STOPS[i][c] + f * (STOPS[i + 1][c] - STOPS[i][c]);
        rgb[c] = (v * 255.0).round() as u8;
    }
    rgb
}

/// Binary PPM (P6) of the z-slice `l`, min–max normalised over the slice.
/// Image rows run along y (top row is the largest y), columns along x.
pub fn write_ppm_slice<W: Write>(w: &mut W, field: &TemperatureField, l: usize) -> Result<()> {
    let [nx, ny, nz] = field.dims();
    if l >= nz {
        return Err(Error::Dimension(format!("slice {l} outside {nz} z-nodes")));
    }
    let vals: Vec<f64> = (0..nx)
        .flat_map(|i| (0..ny).map(move |j| (i, j)))
        .map(|(i, j)| field.get(i, j, l))
        .collect();
    let lo = vals.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = vals.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let span = if hi > lo { hi - lo } else { 1.0 };
    write!(w, "P6\n{nx} {ny}\n255\n")?;
    let mut buf = Vec::with_capacity(nx * ny * 3);
    for j in (0..ny).rev() {
        for i in 0..nx {
            buf.extend_from_slice(&colormap((vals[i * ny + j] - lo) / span));
        }
    }
    w.write_all(&buf)?;
    Ok(())
}
