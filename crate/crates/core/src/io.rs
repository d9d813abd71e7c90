//! Grid exports: CSV matrices and 16-bit binary PGM images.
//!
//! Grids use the field layout (`x` slow, `y` fast). Both exports write one
//! row per `y`, top row at the largest `y`, columns in increasing `x`.

use std::io::Write;

use crate::error::{Error, Result};

fn check(nx: usize, ny: usize, data: &[f64]) -> Result<()> {
    if nx == 0 || ny == 0 || data.len() != nx * ny {
        return Err(Error::precondition(format!(
            "grid of {} values does not match {nx} x {ny}",
            data.len()
        )));
    }
    Ok(())
}

pub fn write_csv_grid<W: Write>(mut out: W, nx: usize, ny: usize, data: &[f64]) -> Result<()> {
    check(nx, ny, data)?;
    let mut line = String::new();
    for iy in (0..ny).rev() {
        line.clear();
        for ix in 0..nx {
            if ix > 0 {
                line.push(',');
            }
            line.push_str(&data[ix * ny + iy].to_string());
        }
        writeln!(out, "{line}")?;
    }
    Ok(())
}

/// Binary PGM (P5), maxval 65535, scaled so the grid maximum is white.
pub fn write_pgm16<W: Write>(mut out: W, nx: usize, ny: usize, data: &[f64]) -> Result<()> {
    check(nx, ny, data)?;
    let max = data.iter().cloned().fold(0.0, f64::max);
    let scale = if max > 0.0 { 65535.0 / max } else { 0.0 };
    write!(out, "P5\n{nx} {ny}\n65535\n")?;
    let mut buf = Vec::with_capacity(2 * nx * ny);
    for iy in (0..ny).rev() {
        for ix in 0..nx {
            let v = (data[ix * ny + iy].max(0.0) * scale).round().min(65535.0) as u16;
            buf.extend_from_slice(&v.to_be_bytes());
        }
    }
    out.write_all(&buf)?;
    Ok(())
}

/// Central `size × size` window of a square-or-rectangular grid.
pub fn crop_center(nx: usize, ny: usize, data: &[f64], size: usize) -> (usize, usize, Vec<f64>) {
    let (sx, sy) = (size.min(nx), size.min(ny));
    let (x0, y0) = (nx / 2 - sx / 2, ny / 2 - sy / 2);
    let mut out = Vec::with_capacity(sx * sy);
    for ix in x0..x0 + sx {
        out.extend_from_slice(&data[ix * ny + y0..ix * ny + y0 + sy]);
    }
    (sx, sy, out)
}
