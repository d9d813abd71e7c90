use std::f64::consts::PI;
use std::sync::Arc;

use num_complex::Complex64;
use rayon::prelude::*;
use rustfft::{Fft, FftDirection, FftPlanner};

use crate::error::{Error, Result};

/// Complex scalar amplitude on a square-pixel grid.
///
/// Storage is row-major with `x` the slow index: sample `(ix, iy)` lives at
/// `ix * ny + iy` and sits at `x = (ix - nx/2) * pitch`.
#[derive(Debug, Clone, PartialEq)]
pub struct ScalarField {
    pub nx: usize,
    pub ny: usize,
    pub pitch_nm: f64,
    pub wavelength_nm: f64,
    /// Plane position along the propagation axis.
    pub z_um: f64,
    pub data: Vec<Complex64>,
}

impl ScalarField {
    pub fn zeros(nx: usize, ny: usize, pitch_nm: f64, wavelength_nm: f64) -> Self {
        ScalarField {
            nx,
            ny,
            pitch_nm,
            wavelength_nm,
            z_um: 0.0,
            data: vec![Complex64::new(0.0, 0.0); nx * ny],
        }
    }

    /// Builds a field by evaluating `f(x_nm, y_nm)` at every sample.
    pub fn from_fn(
        nx: usize,
        ny: usize,
        pitch_nm: f64,
        wavelength_nm: f64,
        f: impl Fn(f64, f64) -> Complex64 + Sync,
    ) -> Self {
        let mut field = ScalarField::zeros(nx, ny, pitch_nm, wavelength_nm);
        field
            .data
            .par_chunks_mut(ny)
            .enumerate()
            .for_each(|(ix, row)| {
                let x = (ix as f64 - (nx / 2) as f64) * pitch_nm;
                for (iy, v) in row.iter_mut().enumerate() {
                    let y = (iy as f64 - (ny / 2) as f64) * pitch_nm;
                    *v = f(x, y);
                }
            });
        field
    }

    /// Elliptical Gaussian waist (1/e² intensity radii) at its focus.
    pub fn gaussian(n: usize, pitch_nm: f64, wavelength_nm: f64, waist_x_nm: f64, waist_y_nm: f64) -> Self {
        ScalarField::from_fn(n, n, pitch_nm, wavelength_nm, |x, y| {
            let a = (x / waist_x_nm).powi(2) + (y / waist_y_nm).powi(2);
            Complex64::new((-a).exp(), 0.0)
        })
    }

    pub fn x_coord(&self, ix: usize) -> f64 {
        (ix as f64 - (self.nx / 2) as f64) * self.pitch_nm
    }

    pub fn y_coord(&self, iy: usize) -> f64 {
        (iy as f64 - (self.ny / 2) as f64) * self.pitch_nm
    }

    pub fn at(&self, ix: usize, iy: usize) -> Complex64 {
        self.data[ix * self.ny + iy]
    }

    /// ∫|E|² dA in amplitude² · nm².
    pub fn power(&self) -> f64 {
        self.data.iter().map(|c| c.norm_sqr()).sum::<f64>() * self.pitch_nm * self.pitch_nm
    }

    pub fn intensity(&self) -> Vec<f64> {
        self.data.iter().map(|c| c.norm_sqr()).collect()
    }

    /// Bilinear sample of the complex amplitude at `(x_nm, y_nm)`; zero outside.
    pub fn sample(&self, x_nm: f64, y_nm: f64) -> Complex64 {
        let fx = x_nm / self.pitch_nm + (self.nx / 2) as f64;
        let fy = y_nm / self.pitch_nm + (self.ny / 2) as f64;
        if fx < 0.0 || fy < 0.0 {
            return Complex64::new(0.0, 0.0);
        }
        let (ix, iy) = (fx.floor() as usize, fy.floor() as usize);
        if ix + 1 >= self.nx || iy + 1 >= self.ny {
            return Complex64::new(0.0, 0.0);
        }
        let (tx, ty) = (fx - ix as f64, fy - iy as f64);
        self.at(ix, iy) * ((1.0 - tx) * (1.0 - ty))
            + self.at(ix + 1, iy) * (tx * (1.0 - ty))
            + self.at(ix, iy + 1) * ((1.0 - tx) * ty)
            + self.at(ix + 1, iy + 1) * (tx * ty)
    }

    /// Resamples onto another grid by bilinear interpolation.
    pub fn resampled(&self, nx: usize, ny: usize, pitch_nm: f64) -> ScalarField {
        let mut out = ScalarField::from_fn(nx, ny, pitch_nm, self.wavelength_nm, |x, y| self.sample(x, y));
        out.z_um = self.z_um;
        out
    }

    /// Free-space angular-spectrum propagation by `dz_um`. Evanescent
    /// components are dropped.
    pub fn propagate(&self, dz_um: f64) -> ScalarField {
        let mut out = self.clone();
        let mut spectrum = out.data;
        let fft = Fft2::new(self.nx, self.ny);
        fft.forward(&mut spectrum);
        let k = 2.0 * PI / self.wavelength_nm;
        let dz = dz_um * 1e3;
        let dkx = 2.0 * PI / (self.nx as f64 * self.pitch_nm);
        let dky = 2.0 * PI / (self.ny as f64 * self.pitch_nm);
        let (nx, ny) = (self.nx, self.ny);
        spectrum
            .par_chunks_mut(ny)
            .enumerate()
            .for_each(|(ix, row)| {
                let kx = fft_freq(ix, nx) * dkx;
                for (iy, v) in row.iter_mut().enumerate() {
                    let ky = fft_freq(iy, ny) * dky;
                    let kz2 = k * k - kx * kx - ky * ky;
                    if kz2 > 0.0 {
                        *v *= Complex64::from_polar(1.0, kz2.sqrt() * dz);
                    } else {
                        *v = Complex64::new(0.0, 0.0);
                    }
                }
            });
        fft.inverse(&mut spectrum);
        out.data = spectrum;
        out.z_um = self.z_um + dz_um;
        out
    }
}

fn fft_freq(i: usize, n: usize) -> f64 {
    if i <= n / 2 {
        i as f64
    } else {
        i as f64 - n as f64
    }
}

/// Several field components on one grid (one for scalar fields, three
/// Cartesian components for vector fields).
#[derive(Debug, Clone, PartialEq)]
pub struct FieldStack {
    pub components: Vec<ScalarField>,
}

impl FieldStack {
    pub fn scalar(field: ScalarField) -> Self {
        FieldStack {
            components: vec![field],
        }
    }

    pub fn grid(&self) -> &ScalarField {
        &self.components[0]
    }

    pub fn intensity(&self) -> Vec<f64> {
        let mut acc = vec![0.0; self.grid().data.len()];
        for c in &self.components {
            for (a, v) in acc.iter_mut().zip(&c.data) {
                *a += v.norm_sqr();
            }
        }
        acc
    }

    pub fn power(&self) -> f64 {
        self.components.iter().map(ScalarField::power).sum()
    }

    pub fn propagate(&self, dz_um: f64) -> FieldStack {
        FieldStack {
            components: self.components.iter().map(|c| c.propagate(dz_um)).collect(),
        }
    }
}

/// Unnormalized 2-D FFT over a row-major `nx × ny` buffer. `inverse`
/// applies the `1/(nx ny)` factor.
pub(crate) struct Fft2 {
    nx: usize,
    ny: usize,
    rows_fwd: Arc<dyn Fft<f64>>,
    rows_inv: Arc<dyn Fft<f64>>,
    cols_fwd: Arc<dyn Fft<f64>>,
    cols_inv: Arc<dyn Fft<f64>>,
}

impl Fft2 {
    pub(crate) fn new(nx: usize, ny: usize) -> Self {
        let mut planner = FftPlanner::new();
        Fft2 {
            nx,
            ny,
            rows_fwd: planner.plan_fft(ny, FftDirection::Forward),
            rows_inv: planner.plan_fft(ny, FftDirection::Inverse),
            cols_fwd: planner.plan_fft(nx, FftDirection::Forward),
            cols_inv: planner.plan_fft(nx, FftDirection::Inverse),
        }
    }

    pub(crate) fn forward(&self, data: &mut [Complex64]) {
        self.run(data, &self.rows_fwd, &self.cols_fwd);
    }

    pub(crate) fn inverse(&self, data: &mut [Complex64]) {
        self.run(data, &self.rows_inv, &self.cols_inv);
        let scale = 1.0 / (self.nx * self.ny) as f64;
        data.par_iter_mut().for_each(|v| *v *= scale);
    }

    fn run(&self, data: &mut [Complex64], rows: &Arc<dyn Fft<f64>>, cols: &Arc<dyn Fft<f64>>) {
        let (nx, ny) = (self.nx, self.ny);
        data.par_chunks_mut(ny).for_each_init(
            || vec![Complex64::new(0.0, 0.0); rows.get_inplace_scratch_len()],
            |scratch, row| rows.process_with_scratch(row, scratch),
        );
        let mut t = transpose(data, nx, ny);
        t.par_chunks_mut(nx).for_each_init(
            || vec![Complex64::new(0.0, 0.0); cols.get_inplace_scratch_len()],
            |scratch, col| cols.process_with_scratch(col, scratch),
        );
        let back = transpose(&t, ny, nx);
        data.copy_from_slice(&back);
    }
}

fn transpose(data: &[Complex64], rows: usize, cols: usize) -> Vec<Complex64> {
    let mut out = vec![Complex64::new(0.0, 0.0); rows * cols];
    out.par_chunks_mut(rows).enumerate().for_each(|(c, dst)| {
        for (r, v) in dst.iter_mut().enumerate() {
            *v = data[r * cols + c];
        }
    });
    out
}

/// Swaps half-planes so index `n/2` moves to 0 (and back for even `n`).
pub(crate) fn shift2(data: &mut [Complex64], nx: usize, ny: usize, inverse: bool) {
    let sx = if inverse { nx - nx / 2 } else { nx / 2 };
    let sy = if inverse { ny - ny / 2 } else { ny / 2 };
    let src = data.to_vec();
    data.par_chunks_mut(ny).enumerate().for_each(|(ix, row)| {
        let jx = (ix + sx) % nx;
        for (iy, v) in row.iter_mut().enumerate() {
            *v = src[jx * ny + (iy + sy) % ny];
        }
    });
}

pub(crate) fn check_finite(field: &ScalarField) -> Result<()> {
    if field.data.iter().any(|c| !c.re.is_finite() || !c.im.is_finite()) {
        return Err(Error::Sampling("field contains non-finite samples".into()));
    }
    Ok(())
}
