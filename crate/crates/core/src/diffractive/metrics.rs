//! Spot size and beam quality of an image-plane field.

use std::f64::consts::PI;

use nalgebra::{Matrix3, Vector3};
use serde::{Deserialize, Serialize};

use super::field::FieldStack;
use crate::error::{Error, Result};

/// Which 1-D profile a width is read from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum ProfileKind {
    /// Line through the intensity maximum.
    Cut,
    /// Intensity integrated over the other axis.
    #[default]
    Marginal,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricOptions {
    pub profile: ProfileKind,
    /// Half-width of the second-moment integration window, in units of the
    /// current rms radius.
    pub window_sigmas: f64,
}

impl Default for MetricOptions {
    fn default() -> Self {
        MetricOptions {
            profile: ProfileKind::Marginal,
            window_sigmas: 4.0,
        }
    }
}

/// Result of a beam-caustic fit `w²(z) = w0² + (M² λ / π w0)² (z − z0)²`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct CausticFit {
    pub w0_nm: f64,
    pub z0_nm: f64,
    pub m2: f64,
    pub rayleigh_nm: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SpotMetrics {
    pub fwhm_h_nm: f64,
    pub fwhm_v_nm: f64,
    pub m2_h: Option<f64>,
    pub m2_v: Option<f64>,
    pub centroid_nm: [f64; 2],
    /// Why M² is missing, when it is.
    pub unavailable: Option<String>,
}

/// Horizontal (along x) and vertical (along y) intensity profiles.
pub fn profiles(stack: &FieldStack, kind: ProfileKind) -> (Vec<f64>, Vec<f64>) {
    let g = stack.grid();
    let (nx, ny) = (g.nx, g.ny);
    let intensity = stack.intensity();
    match kind {
        ProfileKind::Marginal => {
            let mut h = vec![0.0; nx];
            let mut v = vec![0.0; ny];
            for ix in 0..nx {
                for iy in 0..ny {
                    let i = intensity[ix * ny + iy];
                    h[ix] += i;
                    v[iy] += i;
                }
            }
            (h, v)
        }
        ProfileKind::Cut => {
            let peak = intensity
                .iter()
                .enumerate()
                .max_by(|a, b| a.1.total_cmp(b.1))
                .map_or(0, |(i, _)| i);
            let (px, py) = (peak / ny, peak % ny);
            let h = (0..nx).map(|ix| intensity[ix * ny + py]).collect();
            let v = intensity[px * ny..(px + 1) * ny].to_vec();
            (h, v)
        }
    }
}

/// Full width at half maximum of a sampled profile, from linearly
/// interpolated crossings on either side of the peak.
pub fn fwhm(profile: &[f64], pitch_nm: f64) -> Result<f64> {
    let (i0, &peak) = profile
        .iter()
        .enumerate()
        .max_by(|a, b| a.1.total_cmp(b.1))
        .ok_or_else(|| Error::Undefined("empty profile".into()))?;
    if peak <= 0.0 {
        return Err(Error::Undefined("profile has no power".into()));
    }
    let half = 0.5 * peak;
    let right = (i0..profile.len() - 1)
        .find(|&i| profile[i + 1] < half)
        .map(|i| i as f64 + (profile[i] - half) / (profile[i] - profile[i + 1]));
    let left = (1..=i0)
        .rev()
        .find(|&i| profile[i - 1] < half)
        .map(|i| i as f64 - (profile[i] - half) / (profile[i] - profile[i - 1]));
    match (left, right) {
        (Some(l), Some(r)) => Ok((r - l) * pitch_nm),
        _ => Err(Error::Sampling("half maximum not reached inside the grid".into())),
    }
}

/// FWHM of the cut profiles through the peak, `(horizontal, vertical)`.
pub fn spot_fwhm(stack: &FieldStack) -> Result<(f64, f64)> {
    spot_fwhm_with(stack, ProfileKind::Cut)
}

pub fn spot_fwhm_with(stack: &FieldStack, kind: ProfileKind) -> Result<(f64, f64)> {
    let pitch = stack.grid().pitch_nm;
    let (h, v) = profiles(stack, kind);
    Ok((fwhm(&h, pitch)?, fwhm(&v, pitch)?))
}

/// Centroid and second-moment radius `2σ` of a profile, with the moments
/// re-evaluated inside a window of ±`window_sigmas`·σ until stable.
/// Coordinates follow the grid convention (index n/2 at zero).
pub fn second_moment_width(profile: &[f64], pitch_nm: f64, window_sigmas: f64) -> Option<(f64, f64)> {
    let n = profile.len();
    let coord = |i: usize| (i as f64 - (n / 2) as f64) * pitch_nm;
    let moments = |lo: f64, hi: f64| {
        let (mut s0, mut s1, mut s2) = (0.0, 0.0, 0.0);
        for (i, &p) in profile.iter().enumerate() {
            let x = coord(i);
            if x >= lo && x <= hi {
                s0 += p;
                s1 += p * x;
                s2 += p * x * x;
            }
        }
        if s0 <= 0.0 {
            return None;
        }
        let c = s1 / s0;
        Some((c, (s2 / s0 - c * c).max(0.0).sqrt()))
    };
    let (mut c, mut sigma) = moments(f64::NEG_INFINITY, f64::INFINITY)?;
    for _ in 0..100 {
        let half = window_sigmas * sigma.max(pitch_nm);
        let (c2, s2) = moments(c - half, c + half)?;
        let done = (s2 - sigma).abs() <= 1e-9 * sigma.max(pitch_nm) && (c2 - c).abs() <= 1e-9 * pitch_nm;
        c = c2;
        sigma = s2;
        if done {
            break;
        }
    }
    Some((c, 2.0 * sigma))
}

/// Least-squares caustic fit of widths `w_nm` measured at planes `z_nm`.
pub fn fit_beam_caustic(z_nm: &[f64], w_nm: &[f64], wavelength_nm: f64) -> Result<CausticFit> {
    if z_nm.len() != w_nm.len() || z_nm.len() < 5 {
        return Err(Error::precondition("caustic fit needs at least 5 (z, w) pairs"));
    }
    let mut ata = Matrix3::<f64>::zeros();
    let mut atb = Vector3::<f64>::zeros();
    for (&z, &w) in z_nm.iter().zip(w_nm) {
        let row = Vector3::new(1.0, z, z * z);
        ata += row * row.transpose();
        atb += row * (w * w);
    }
    let coef = ata
        .lu()
        .solve(&atb)
        .ok_or_else(|| Error::NonConvergence("degenerate plane set".into()))?;
    let (a, b, c) = (coef[0], coef[1], coef[2]);
    let det = a * c - 0.25 * b * b;
    if c <= 0.0 || det <= 0.0 {
        return Err(Error::NonConvergence("widths do not follow a caustic".into()));
    }
    let w0 = (det / c).sqrt();
    let m2 = PI / wavelength_nm * det.sqrt();
    Ok(CausticFit {
        w0_nm: w0,
        z0_nm: -0.5 * b / c,
        m2,
        rayleigh_nm: w0 / c.sqrt(),
    })
}

/// FWHM and centroid at the given field's plane, plus M² from second-moment
/// widths at each offset in `planes_um`.
pub fn spot_metrics(stack: &FieldStack, planes_um: &[f64], opts: &MetricOptions) -> Result<SpotMetrics> {
    if planes_um.len() < 5 {
        return Err(Error::precondition("M² needs at least 5 planes"));
    }
    let g = stack.grid();
    let (pitch, lam) = (g.pitch_nm, g.wavelength_nm);
    let (fwhm_h_nm, fwhm_v_nm) = spot_fwhm_with(stack, opts.profile)?;
    let (h, v) = profiles(stack, ProfileKind::Marginal);
    let cx = second_moment_width(&h, pitch, f64::INFINITY).map_or(0.0, |m| m.0);
    let cy = second_moment_width(&v, pitch, f64::INFINITY).map_or(0.0, |m| m.0);

    let mut z = Vec::with_capacity(planes_um.len());
    let (mut wh, mut wv) = (Vec::new(), Vec::new());
    for &dz in planes_um {
        let s = if dz == 0.0 { stack.clone() } else { stack.propagate(dz) };
        let (h, v) = profiles(&s, ProfileKind::Marginal);
        let (Some(a), Some(b)) = (
            second_moment_width(&h, pitch, opts.window_sigmas),
            second_moment_width(&v, pitch, opts.window_sigmas),
        ) else {
            return Err(Error::Undefined("field has no power".into()));
        };
        z.push(dz * 1e3);
        wh.push(a.1);
        wv.push(b.1);
    }
    let span = z.iter().cloned().fold(f64::NEG_INFINITY, f64::max) - z.iter().cloned().fold(f64::INFINITY, f64::min);
    let mut unavailable = None;
    let mut fit = |w: &[f64], axis: &str| match fit_beam_caustic(&z, w, lam) {
        Ok(f) if span >= f.rayleigh_nm => Some(f.m2),
        Ok(_) => {
            unavailable = Some(format!("{axis}: planes span less than one Rayleigh range"));
            None
        }
        Err(e) => {
            unavailable = Some(format!("{axis}: {e}"));
            None
        }
    };
    let m2_h = fit(&wh, "horizontal");
    let m2_v = fit(&wv, "vertical");
    Ok(SpotMetrics {
        fwhm_h_nm,
        fwhm_v_nm,
        m2_h,
        m2_v,
        centroid_nm: [cx, cy],
        unavailable,
    })
}

/// Evenly spaced offsets covering ±`half_span_um`.
pub fn plane_offsets(half_span_um: f64, count: usize) -> Vec<f64> {
    let count = count.max(2);
    (0..count)
        .map(|i| -half_span_um + 2.0 * half_span_um * i as f64 / (count - 1) as f64)
        .collect()
}
