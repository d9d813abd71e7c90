//! Focal-spot synthesis for the ion imaged through the mirror.
//!
//! The spot is the Debye integral of the collected angular spectrum,
//! `U(r) = (1/λ) ∫ P(s) exp(i k s·r) d²s`, evaluated by FFT on a grid of
//! direction sines `s = (sx, sy)`. For a mirror pupil `P` carries the
//! emission amplitude over `cos θ` (the `dΩ = d²s / cos θ` Jacobian), the
//! rectangular clip mapped into direction space, and the residual phase
//! left by the relief and any source defocus. Sizes are in object space;
//! the external re-imaging lens is treated as ideal.

use std::f64::consts::PI;

use nalgebra::Vector3;
use num_complex::Complex64;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::field::{check_finite, shift2, FieldStack, Fft2, ScalarField};
use super::profile::PhaseProfile;
use crate::error::{Error, Result};
use crate::radiometry::{ApertureGeometry, EmissionPattern};

/// Pupil amplitude weighting.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Apodization {
    /// Flat amplitude in direction-sine space.
    Uniform,
    /// Square root of the source emission.
    #[default]
    Emission,
}

/// How many field components are carried.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum FieldModel {
    /// Single amplitude `√I`.
    Scalar,
    /// Three Cartesian components of the dipole far field, each carried by
    /// the same scalar integral and summed in intensity.
    #[default]
    Vector,
}

/// Relief carried by a mirror pupil.
#[derive(Debug, Clone, Copy)]
pub enum Relief<'a> {
    /// Perfect continuous collimator.
    Ideal,
    /// Sampled (possibly quantized) relief; its departure from the ideal
    /// phase is applied at the nearest sample.
    Sampled(&'a PhaseProfile),
}

/// Collection pupil.
#[derive(Debug, Clone, Copy)]
pub enum Pupil<'a> {
    /// Rectangular mirror with the design focus at `focal_length_um`. The
    /// source sits at `aperture.ion_height_um`; any difference is defocus.
    Mirror {
        aperture: &'a ApertureGeometry,
        focal_length_um: f64,
        relief: Relief<'a>,
    },
    /// Circular aperture of the given NA, centred on the axis.
    Circular { na: f64 },
}

impl Pupil<'_> {
    fn max_sine(&self) -> f64 {
        match self {
            Pupil::Circular { na } => *na,
            Pupil::Mirror { aperture, .. } => {
                let h = aperture.ion_height_um;
                let r = (0.5 * aperture.width_um).hypot(0.5 * aperture.length_um);
                let s = r / r.hypot(h);
                aperture.iris_na.map_or(s, |na| s.min(na))
            }
        }
    }

    /// Residual phase at direction sines `(sx, sy)`, or `None` outside.
    fn phase(&self, sx: f64, sy: f64, wavelength_nm: f64) -> Option<f64> {
        let s2 = sx * sx + sy * sy;
        if s2 >= 1.0 {
            return None;
        }
        match self {
            Pupil::Circular { na } => (s2 < na * na).then_some(0.0),
            Pupil::Mirror {
                aperture,
                focal_length_um,
                relief,
            } => {
                if let Some(na) = aperture.iris_na {
                    if s2 > na * na {
                        return None;
                    }
                }
                let kz = (1.0 - s2).sqrt();
                let h = aperture.ion_height_um;
                let (x, y) = (h * sx / kz, h * sy / kz);
                if x.abs() > 0.5 * aperture.width_um || y.abs() > 0.5 * aperture.length_um {
                    return None;
                }
                let k = 2.0 * PI / (wavelength_nm * 1e-3);
                let f = *focal_length_um;
                let r2 = x * x + y * y;
                let mut phase = k * ((h / kz - h) - ((r2 + f * f).sqrt() - f));
                if let Relief::Sampled(profile) = relief {
                    let (ix, iy) = profile.index_of(x, y)?;
                    phase += profile.phase_error_at(ix, iy);
                }
                Some(phase)
            }
        }
    }
}

/// Grid and model settings for [`propagate_psf`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PsfConfig {
    pub grid: usize,
    pub image_pitch_nm: f64,
    pub wavelength_nm: f64,
    pub apodization: Apodization,
    pub model: FieldModel,
    /// Largest power fraction tolerated in the outer border of the grid.
    pub edge_power_threshold: f64,
}

impl Default for PsfConfig {
    fn default() -> Self {
        PsfConfig {
            grid: 2048,
            image_pitch_nm: 370.0 / 8.0,
            wavelength_nm: 370.0,
            apodization: Apodization::Emission,
            model: FieldModel::Vector,
            edge_power_threshold: 1e-3,
        }
    }
}

impl PsfConfig {
    fn sine_pitch(&self) -> f64 {
        self.wavelength_nm / (self.grid as f64 * self.image_pitch_nm)
    }

    fn validate(&self, pupil: &Pupil) -> Result<()> {
        if self.grid < 16 || !self.grid.is_multiple_of(2) {
            return Err(Error::precondition("PSF grid must be even and >= 16"));
        }
        if self.image_pitch_nm > 0.25 * self.wavelength_nm {
            return Err(Error::Sampling(format!(
                "image pitch {} nm exceeds λ/4",
                self.image_pitch_nm
            )));
        }
        let band = 0.5 * self.grid as f64 * self.sine_pitch();
        if pupil.max_sine() >= band {
            return Err(Error::Sampling("pupil exceeds the sampled direction band".into()));
        }
        Ok(())
    }
}

/// Pupil amplitudes per component at direction `(sx, sy)`.
fn amplitudes(
    sx: f64,
    sy: f64,
    source: &EmissionPattern,
    config: &PsfConfig,
) -> Result<[Complex64; 3]> {
    let kz = (1.0 - sx * sx - sy * sy).sqrt();
    let dir = Vector3::new(sx, sy, kz);
    let zero = Complex64::new(0.0, 0.0);
    Ok(match (config.apodization, config.model) {
        (Apodization::Uniform, _) => [Complex64::new(1.0, 0.0), zero, zero],
        (Apodization::Emission, FieldModel::Scalar) => {
            [Complex64::new(source.intensity(&dir).sqrt() / kz, 0.0), zero, zero]
        }
        (Apodization::Emission, FieldModel::Vector) => {
            let e = source.far_field(&dir).ok_or_else(|| {
                Error::precondition("the vector model needs a polarized (dipole) source")
            })?;
            [e.x / kz, e.y / kz, e.z / kz]
        }
    })
}

fn component_count(config: &PsfConfig) -> usize {
    match (config.apodization, config.model) {
        (Apodization::Emission, FieldModel::Vector) => 3,
        _ => 1,
    }
}

/// Pupil arrays, one per field component, in natural (centred) order.
fn build_pupil(pupil: &Pupil, source: &EmissionPattern, config: &PsfConfig) -> Result<Vec<Vec<Complex64>>> {
    let n = config.grid;
    let ds = config.sine_pitch();
    let nc = component_count(config);
    let rows: Vec<Result<Vec<[Complex64; 3]>>> = (0..n)
        .into_par_iter()
        .map(|ix| {
            let sx = (ix as f64 - (n / 2) as f64) * ds;
            (0..n)
                .map(|iy| {
                    let sy = (iy as f64 - (n / 2) as f64) * ds;
                    match pupil.phase(sx, sy, config.wavelength_nm) {
                        None => Ok([Complex64::new(0.0, 0.0); 3]),
                        Some(phase) => {
                            let rot = Complex64::from_polar(1.0, phase);
                            let a = amplitudes(sx, sy, source, config)?;
                            Ok([a[0] * rot, a[1] * rot, a[2] * rot])
                        }
                    }
                })
                .collect()
        })
        .collect();
    let mut comps = vec![Vec::with_capacity(n * n); nc];
    for row in rows {
        for cell in row? {
            for (c, comp) in comps.iter_mut().enumerate() {
                comp.push(cell[c]);
            }
        }
    }
    Ok(comps)
}

/// Focal-plane field of `source` imaged through `pupil`.
pub fn propagate_psf(pupil: &Pupil, source: &EmissionPattern, config: &PsfConfig) -> Result<FieldStack> {
    config.validate(pupil)?;
    let n = config.grid;
    let ds = config.sine_pitch();
    let scale = (n * n) as f64 * ds * ds / config.wavelength_nm;
    let fft = Fft2::new(n, n);
    let mut components = Vec::new();
    for mut p in build_pupil(pupil, source, config)? {
        shift2(&mut p, n, n, false);
        fft.inverse(&mut p);
        shift2(&mut p, n, n, true);
        p.par_iter_mut().for_each(|v| *v *= scale);
        let field = ScalarField {
            nx: n,
            ny: n,
            pitch_nm: config.image_pitch_nm,
            wavelength_nm: config.wavelength_nm,
            z_um: 0.0,
            data: p,
        };
        check_finite(&field)?;
        components.push(field);
    }
    let stack = FieldStack { components };
    check_edges(&stack, config.edge_power_threshold)?;
    Ok(stack)
}

/// Power in the pupil, `Σ|P|² Δs²`; equals the focal-plane field power.
pub fn pupil_power(pupil: &Pupil, source: &EmissionPattern, config: &PsfConfig) -> Result<f64> {
    config.validate(pupil)?;
    let ds = config.sine_pitch();
    Ok(build_pupil(pupil, source, config)?
        .iter()
        .flat_map(|c| c.iter())
        .map(|v| v.norm_sqr())
        .sum::<f64>()
        * ds
        * ds)
}

fn check_edges(stack: &FieldStack, threshold: f64) -> Result<()> {
    let g = stack.grid();
    let band = (g.nx / 64).max(2);
    let intensity = stack.intensity();
    let total: f64 = intensity.iter().sum();
    if total == 0.0 {
        return Ok(());
    }
    let mut edge = 0.0;
    for ix in 0..g.nx {
        for iy in 0..g.ny {
            if ix < band || iy < band || ix >= g.nx - band || iy >= g.ny - band {
                edge += intensity[ix * g.ny + iy];
            }
        }
    }
    if edge / total > threshold {
        return Err(Error::Sampling(format!(
            "{:.2e} of the power reaches the grid edge",
            edge / total
        )));
    }
    Ok(())
}

/// On-axis Strehl ratio: focal intensity with the pupil's residual phase
/// over the intensity with that phase removed.
pub fn strehl_ratio(pupil: &Pupil, source: &EmissionPattern, config: &PsfConfig) -> Result<f64> {
    config.validate(pupil)?;
    let n = config.grid;
    let ds = config.sine_pitch();
    let nc = component_count(config);
    let sums: Vec<([Complex64; 3], [Complex64; 3])> = (0..n)
        .into_par_iter()
        .map(|ix| {
            let sx = (ix as f64 - (n / 2) as f64) * ds;
            let mut aberrated = [Complex64::new(0.0, 0.0); 3];
            let mut flat = [Complex64::new(0.0, 0.0); 3];
            for iy in 0..n {
                let sy = (iy as f64 - (n / 2) as f64) * ds;
                if let Some(phase) = pupil.phase(sx, sy, config.wavelength_nm) {
                    let a = amplitudes(sx, sy, source, config)?;
                    let rot = Complex64::from_polar(1.0, phase);
                    for c in 0..nc {
                        aberrated[c] += a[c] * rot;
                        flat[c] += a[c];
                    }
                }
            }
            Ok((aberrated, flat))
        })
        .collect::<Result<_>>()?;
    let (mut num, mut den) = ([Complex64::new(0.0, 0.0); 3], [Complex64::new(0.0, 0.0); 3]);
    for (a, f) in sums {
        for c in 0..3 {
            num[c] += a[c];
            den[c] += f[c];
        }
    }
    let den: f64 = den.iter().map(|v| v.norm_sqr()).sum();
    if den == 0.0 {
        return Err(Error::Undefined("empty pupil".into()));
    }
    Ok(num.iter().map(|v| v.norm_sqr()).sum::<f64>() / den)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::diffractive::metrics::spot_fwhm;
    use crate::radiometry::TransitionKind;

    fn small_config() -> PsfConfig {
        PsfConfig {
            grid: 512,
            ..PsfConfig::default()
        }
    }

    #[test]
    fn airy_spot_for_uniform_circular_pupil() {
        let config = PsfConfig {
            grid: 1024,
            apodization: Apodization::Uniform,
            model: FieldModel::Scalar,
            ..PsfConfig::default()
        };
        let field = propagate_psf(&Pupil::Circular { na: 0.2 }, &EmissionPattern::isotropic(), &config).unwrap();
        let (h, v) = spot_fwhm(&field).unwrap();
        let airy = 0.5145 * 370.0 / 0.2;
        assert!((h / airy - 1.0).abs() < 0.02, "{h} vs {airy}");
        assert!((v / airy - 1.0).abs() < 0.02);
    }

    #[test]
    fn pupil_power_equals_field_power() {
        let g = ApertureGeometry::published();
        let src = EmissionPattern::dipole(TransitionKind::Pi, g.axis()).unwrap();
        let pupil = Pupil::Mirror {
            aperture: &g,
            focal_length_um: 59.6,
            relief: Relief::Ideal,
        };
        let config = small_config();
        let field = propagate_psf(&pupil, &src, &config).unwrap();
        let pp = pupil_power(&pupil, &src, &config).unwrap();
        assert!((field.power() / pp - 1.0).abs() < 1e-9);
    }

    #[test]
    fn blocked_aperture_gives_zero_field() {
        let config = PsfConfig {
            grid: 64,
            model: FieldModel::Scalar,
            ..PsfConfig::default()
        };
        let field = propagate_psf(&Pupil::Circular { na: 0.0 }, &EmissionPattern::isotropic(), &config).unwrap();
        assert_eq!(field.power(), 0.0);
    }

    #[test]
    fn coarse_image_pitch_is_rejected() {
        let config = PsfConfig {
            image_pitch_nm: 200.0,
            ..small_config()
        };
        let r = propagate_psf(&Pupil::Circular { na: 0.5 }, &EmissionPattern::isotropic(), &config);
        assert!(matches!(r, Err(Error::Sampling(_))));
    }

    #[test]
    fn vector_model_needs_dipole() {
        let config = small_config();
        let r = propagate_psf(&Pupil::Circular { na: 0.5 }, &EmissionPattern::isotropic(), &config);
        assert!(r.is_err());
    }

    #[test]
    fn defocus_degrades_strehl_monotonically() {
        let config = PsfConfig {
            grid: 256,
            ..PsfConfig::default()
        };
        let mut last = f64::INFINITY;
        for dz in [0.0, 0.05, 0.1, 0.2, 0.4] {
            let g = ApertureGeometry::published().with_ion_height(59.6 + dz).unwrap();
            let src = EmissionPattern::dipole(TransitionKind::Pi, g.axis()).unwrap();
            let pupil = Pupil::Mirror {
                aperture: &g,
                focal_length_um: 59.6,
                relief: Relief::Ideal,
            };
            let s = strehl_ratio(&pupil, &src, &config).unwrap();
            if dz == 0.0 {
                assert!((s - 1.0).abs() < 1e-12);
            }
            assert!(s < last || dz == 0.0);
            last = s;
        }
    }
}
