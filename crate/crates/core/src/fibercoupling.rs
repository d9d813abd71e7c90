//! Mode matching of the ion image into a single-mode fiber.

use std::io::Write;

use num_complex::Complex64;
use serde::Serialize;

use crate::diffractive::{FieldStack, ScalarField};
use crate::error::{Error, Result};
use crate::numerics::golden_max;

/// Fundamental fiber mode, treated as a circular Gaussian.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct GaussianMode {
    /// 1/e² intensity radius.
    pub waist_nm: f64,
    pub wavelength_nm: f64,
}

impl GaussianMode {
    pub fn new(waist_nm: f64, wavelength_nm: f64) -> Result<Self> {
        if !(waist_nm > 0.0 && wavelength_nm > 0.0) {
            return Err(Error::precondition("mode waist and wavelength must be > 0"));
        }
        Ok(GaussianMode {
            waist_nm,
            wavelength_nm,
        })
    }

    /// Unit-power mode sampled on the grid of `like`.
    pub fn sampled_like(&self, like: &ScalarField) -> ScalarField {
        self.sampled_scaled(like, 1.0)
    }

    fn sampled_scaled(&self, like: &ScalarField, magnification: f64) -> ScalarField {
        let w = self.waist_nm / magnification;
        let mut f = ScalarField::from_fn(like.nx, like.ny, like.pitch_nm, like.wavelength_nm, |x, y| {
            Complex64::new((-(x * x + y * y) / (w * w)).exp(), 0.0)
        });
        f.z_um = like.z_um;
        f
    }
}

/// Elliptical Gaussian image described by its two 1/e² radii.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct EllipticalGaussian {
    pub waist_x_nm: f64,
    pub waist_y_nm: f64,
}

impl EllipticalGaussian {
    /// Gaussian with the given intensity FWHMs.
    pub fn from_fwhm(fwhm_x_nm: f64, fwhm_y_nm: f64) -> Self {
        let k = (2.0 * 2f64.ln()).sqrt();
        EllipticalGaussian {
            waist_x_nm: fwhm_x_nm / k,
            waist_y_nm: fwhm_y_nm / k,
        }
    }

    pub fn mean_waist_nm(&self) -> f64 {
        (self.waist_x_nm * self.waist_y_nm).sqrt()
    }
}

/// Overlap of two centred, aligned Gaussians given their radii per axis.
pub fn gaussian_overlap(a: (f64, f64), b: (f64, f64)) -> f64 {
    let axis = |p: f64, q: f64| 2.0 * p * q / (p * p + q * q);
    axis(a.0, b.0) * axis(a.1, b.1)
}

/// `|⟨a, b⟩|² / (⟨a, a⟩ ⟨b, b⟩)` of two fields. A multi-component field
/// couples each component independently into the same spatial mode.
pub fn overlap_fields(a: &FieldStack, b: &ScalarField) -> Result<f64> {
    let g = a.grid();
    let resampled;
    let b = if b.nx != g.nx || b.ny != g.ny || b.pitch_nm != g.pitch_nm {
        resampled = b.resampled(g.nx, g.ny, g.pitch_nm);
        &resampled
    } else {
        b
    };
    let pb: f64 = b.data.iter().map(|v| v.norm_sqr()).sum();
    let pa: f64 = a.components.iter().flat_map(|c| &c.data).map(|v| v.norm_sqr()).sum();
    if pa <= 0.0 || pb <= 0.0 {
        return Err(Error::Undefined("overlap with a zero-power field".into()));
    }
    let coupled: f64 = a
        .components
        .iter()
        .map(|c| {
            c.data
                .iter()
                .zip(&b.data)
                .map(|(u, v)| u.conj() * v)
                .sum::<Complex64>()
                .norm_sqr()
        })
        .sum();
    Ok((coupled / (pa * pb)).min(1.0))
}

/// Image to be coupled.
#[derive(Debug, Clone, Copy)]
pub enum CouplingImage<'a> {
    Field(&'a FieldStack),
    Gaussian(EllipticalGaussian),
}

/// Overlap of `image` magnified by `magnification` with `fiber`.
pub fn overlap_efficiency(image: &CouplingImage, fiber: &GaussianMode, magnification: f64) -> Result<f64> {
    if !(magnification > 0.0) {
        return Err(Error::precondition("magnification must be > 0"));
    }
    match image {
        CouplingImage::Gaussian(g) => {
            let w = fiber.waist_nm;
            Ok(gaussian_overlap(
                (magnification * g.waist_x_nm, magnification * g.waist_y_nm),
                (w, w),
            ))
        }
        CouplingImage::Field(stack) => {
            let mode = fiber.sampled_scaled(stack.grid(), magnification);
            overlap_fields(stack, &mode)
        }
    }
}

/// Magnification maximizing the overlap, with a scan over the bracket.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MagnificationScan {
    pub magnification: f64,
    pub overlap: f64,
    /// `(magnification, overlap)` samples across the bracket.
    pub curve: Vec<(f64, f64)>,
    pub warning: Option<String>,
}

pub fn optimize_magnification(
    image: &CouplingImage,
    fiber: &GaussianMode,
    bounds: (f64, f64),
    samples: usize,
) -> Result<MagnificationScan> {
    let (lo, hi) = bounds;
    if !(lo > 0.0 && hi > lo) {
        return Err(Error::precondition("magnification bounds must satisfy 0 < lo < hi"));
    }
    let eval = |m: f64| overlap_efficiency(image, fiber, m);
    eval(lo)?;
    let (m, best) = golden_max(|m| eval(m).unwrap_or(0.0), lo, hi, 1e-10 * hi);
    let n = samples.max(2);
    let curve = (0..n)
        .map(|i| {
            let m = lo + (hi - lo) * i as f64 / (n - 1) as f64;
            eval(m).map(|o| (m, o))
        })
        .collect::<Result<Vec<_>>>()?;
    let edge = 1e-6 * (hi - lo);
    let warning = (m - lo < edge || hi - m < edge)
        .then(|| format!("optimum {m:.6} sits on the bracket boundary [{lo}, {hi}]"));
    Ok(MagnificationScan {
        magnification: m,
        overlap: best,
        curve,
        warning,
    })
}

/// Predicted coupling once beam quality is accounted for: `overlap / M²`.
pub fn coupling_with_quality(overlap: f64, m2_avg: f64) -> Result<f64> {
    if !(0.0..=1.0).contains(&overlap) {
        return Err(Error::precondition("overlap must be in [0, 1]"));
    }
    if !(m2_avg >= 1.0) {
        return Err(Error::OutOfRange(format!("M² = {m2_avg} is below 1")));
    }
    Ok(overlap / m2_avg)
}

/// Arithmetic mean of the two axis M² values.
pub fn average_m2(m2_h: f64, m2_v: f64) -> f64 {
    0.5 * (m2_h + m2_v)
}

fn unit(name: &str, v: f64) -> Result<()> {
    if (0.0..=1.0).contains(&v) {
        Ok(())
    } else {
        Err(Error::precondition(format!("{name} must be in [0, 1]")))
    }
}

/// Light leaving the fiber per photon at its input.
pub fn fiber_throughput(coupling: f64, transmission: f64) -> Result<f64> {
    unit("coupling", coupling)?;
    unit("transmission", transmission)?;
    Ok(coupling * transmission)
}

/// Coupling recovered from a measured throughput.
pub fn coupling_from_throughput(throughput: f64, transmission: f64) -> Result<f64> {
    unit("throughput", throughput)?;
    unit("transmission", transmission)?;
    if transmission == 0.0 {
        return Err(Error::Undefined("zero fiber transmission".into()));
    }
    Ok(throughput / transmission)
}

/// Writes `magnification,overlap,predicted_coupling` rows.
pub fn write_scan_csv<W: Write>(mut out: W, scan: &MagnificationScan, m2_avg: f64) -> Result<()> {
    writeln!(out, "magnification,overlap,predicted_coupling")?;
    for &(m, o) in &scan.curve {
        writeln!(out, "{m},{o},{}", coupling_with_quality(o, m2_avg)?)?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn mode(w: f64) -> GaussianMode {
        GaussianMode::new(w, 370.0).unwrap()
    }

    #[test]
    fn analytic_gaussian_overlaps() {
        assert!((gaussian_overlap((1.0, 1.0), (1.0, 1.0)) - 1.0).abs() < 1e-15);
        assert!((gaussian_overlap((2.0, 2.0), (1.0, 1.0)) - 0.64).abs() < 1e-12);
    }

    #[test]
    fn sampled_overlap_matches_analytic() {
        let img = ScalarField::gaussian(256, 40.0, 370.0, 1600.0, 1600.0);
        let stack = FieldStack::scalar(img);
        let o = overlap_efficiency(&CouplingImage::Field(&stack), &mode(800.0), 1.0).unwrap();
        assert!((o - 0.64).abs() < 1e-6, "{o}");
        // a different grid is resampled first
        let other = ScalarField::gaussian(200, 50.0, 370.0, 800.0, 800.0);
        assert!((overlap_fields(&stack, &other).unwrap() - 0.64).abs() < 1e-3);
    }

    #[test]
    fn zero_power_overlap_is_undefined() {
        let z = FieldStack::scalar(ScalarField::zeros(16, 16, 10.0, 370.0));
        let r = overlap_efficiency(&CouplingImage::Field(&z), &mode(50.0), 1.0);
        assert!(matches!(r, Err(Error::Undefined(_))));
    }

    #[test]
    fn gaussian_twice_the_fiber_waist_wants_half_magnification() {
        let img = CouplingImage::Gaussian(EllipticalGaussian {
            waist_x_nm: 4000.0,
            waist_y_nm: 4000.0,
        });
        let s = optimize_magnification(&img, &mode(2000.0), (0.1, 2.0), 41).unwrap();
        assert!((s.magnification - 0.5).abs() < 1e-4);
        assert!((s.overlap - 1.0).abs() < 1e-9);
        assert!(s.warning.is_none());
        let h = 1e-4;
        let d = (overlap_efficiency(&img, &mode(2000.0), s.magnification + h).unwrap()
            - overlap_efficiency(&img, &mode(2000.0), s.magnification - h).unwrap())
            / (2.0 * h);
        assert!(d.abs() < 1e-6);
    }

    #[test]
    fn boundary_optimum_is_flagged() {
        let img = CouplingImage::Gaussian(EllipticalGaussian {
            waist_x_nm: 4000.0,
            waist_y_nm: 4000.0,
        });
        let s = optimize_magnification(&img, &mode(2000.0), (1.0, 2.0), 5).unwrap();
        assert!(s.warning.is_some());
    }

    #[test]
    fn elliptical_image_on_round_mode() {
        // FWHM aspect of the simulated spot; the mode is matched to the mean radius
        let img = EllipticalGaussian::from_fwhm(332.8, 250.9);
        let fiber = mode(2000.0);
        let s = optimize_magnification(&CouplingImage::Gaussian(img), &fiber, (1.0, 20.0), 20).unwrap();
        assert!((s.magnification - 2000.0 / img.mean_waist_nm()).abs() < 1e-4);
        assert!((s.overlap - 0.98).abs() < 0.01);
    }

    #[test]
    fn quality_penalty_and_throughput() {
        assert!((coupling_with_quality(0.98, average_m2(1.36, 1.54)).unwrap() - 0.676).abs() < 5e-4);
        assert_eq!(coupling_with_quality(1.0, 1.0).unwrap(), 1.0);
        assert!(coupling_with_quality(0.9, 0.8).is_err());
        assert!((coupling_from_throughput(0.57, 0.80).unwrap() - 0.7125).abs() < 1e-12);
        assert!((fiber_throughput(0.71, 0.80).unwrap() - 0.568).abs() < 1e-12);
        assert_eq!(fiber_throughput(1.0, 1.0).unwrap(), 1.0);
        assert!(fiber_throughput(1.2, 1.0).is_err());
    }

    #[test]
    fn scan_csv_has_header_and_rows() {
        let img = CouplingImage::Gaussian(EllipticalGaussian {
            waist_x_nm: 1.0,
            waist_y_nm: 1.0,
        });
        let s = optimize_magnification(&img, &mode(1.0), (0.5, 2.0), 4).unwrap();
        let mut buf = Vec::new();
        write_scan_csv(&mut buf, &s, 1.45).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(text.lines().count(), 5);
        assert!(text.starts_with("magnification,overlap,predicted_coupling\n"));
    }
}
