use std::f64::consts::PI;

use num_complex::Complex64;
use serde::Serialize;

use super::profile::{PhaseProfile, StepHeights};
use crate::error::{Error, Result};
use crate::numerics::{bisect, sinc};
use crate::radiometry::EmissionPattern;

/// First-order efficiency of an ideal `levels`-step blaze, `[sin(π/N)/(π/N)]²`.
pub fn scalar_diffraction_efficiency(levels: u32) -> Result<f64> {
    if levels < 2 {
        return Err(Error::precondition("a stepped blaze needs at least 2 levels"));
    }
    Ok(sinc(PI / levels as f64).powi(2))
}

/// First-order efficiency of an N-step staircase whose steps advance the
/// reflected phase by `step_phase` rad instead of the ideal 2π/N.
pub fn staircase_efficiency(levels: u32, step_phase: f64) -> f64 {
    let n = levels as f64;
    let detune = step_phase - 2.0 * PI / n;
    let sum: Complex64 = (0..levels)
        .map(|j| Complex64::from_polar(1.0, j as f64 * detune))
        .sum();
    sinc(PI / n).powi(2) * (sum / n).norm_sqr()
}

/// Efficiency of one region given its level count and etched step height.
pub fn region_efficiency(levels: u32, step_nm: f64, wavelength_nm: f64) -> f64 {
    staircase_efficiency(levels, 4.0 * PI * step_nm / wavelength_nm)
}

/// Emission-weighted efficiency of a quantized mirror.
#[derive(Debug, Clone, Serialize)]
pub struct DesignEfficiency {
    /// Reflectivity × power-weighted first-order efficiency.
    pub efficiency: f64,
    /// Same layout etched with ideal λ/(2N) steps.
    pub ideal_step_efficiency: f64,
    /// Fraction of collected power falling on four-level regions.
    pub four_level_power_fraction: f64,
    pub reflectivity: f64,
}

impl DesignEfficiency {
    /// Relative loss of the as-built steps against ideal ones.
    pub fn step_height_loss(&self) -> f64 {
        if self.ideal_step_efficiency > 0.0 {
            1.0 - self.efficiency / self.ideal_step_efficiency
        } else {
            0.0
        }
    }
}

/// Collected-power weight of each sample for a point source at the focus.
fn emission_weights(profile: &PhaseProfile, source: &EmissionPattern) -> Vec<f64> {
    let f = profile.focal_length_um;
    let mut w = Vec::with_capacity(profile.nx * profile.ny);
    for ix in 0..profile.nx {
        let x = profile.x_um(ix);
        for iy in 0..profile.ny {
            let y = profile.y_um(iy);
            let d2 = x * x + y * y + f * f;
            let d = d2.sqrt();
            let dir = nalgebra::Vector3::new(x / d, y / d, f / d);
            w.push(source.intensity(&dir) * f / (d2 * d));
        }
    }
    w
}

/// Mirror efficiency: reflectivity times the first-order efficiency of each
/// quantized region, weighted by the emission power landing on it.
pub fn design_efficiency(
    profile: &PhaseProfile,
    reflectivity: f64,
    source: &EmissionPattern,
) -> Result<DesignEfficiency> {
    if !(0.0..=1.0).contains(&reflectivity) {
        return Err(Error::precondition("reflectivity must be in [0, 1]"));
    }
    let levels = profile
        .levels()
        .ok_or_else(|| Error::Undefined("design efficiency of an unquantized profile".into()))?;
    let weights = emission_weights(profile, source);
    let lam = profile.wavelength_nm;
    let step = profile.step_heights();
    let mut eff = std::collections::BTreeMap::new();
    let (mut acc, mut acc_ideal, mut total, mut four) = (0.0, 0.0, 0.0, 0.0);
    for (&n, &w) in levels.iter().zip(&weights) {
        let (e, ei) = *eff.entry(n).or_insert_with(|| {
            let n = n as u32;
            (
                region_efficiency(n, step.step_nm(n, lam), lam),
                region_efficiency(n, StepHeights::Ideal.step_nm(n, lam), lam),
            )
        });
        acc += w * e;
        acc_ideal += w * ei;
        total += w;
        if n >= 4 {
            four += w;
        }
    }
    if total <= 0.0 {
        return Err(Error::Undefined("no emission reaches the profile".into()));
    }
    Ok(DesignEfficiency {
        efficiency: reflectivity * acc / total,
        ideal_step_efficiency: reflectivity * acc_ideal / total,
        four_level_power_fraction: four / total,
        reflectivity,
    })
}

/// Four/two-level crossover period (nm) at which the hybrid layout of
/// `profile` reaches `target` design efficiency.
pub fn crossover_for_target(
    profile: &PhaseProfile,
    reflectivity: f64,
    target: f64,
    source: &EmissionPattern,
    step: StepHeights,
) -> Result<f64> {
    if profile.is_quantized() {
        return Err(Error::precondition("crossover search needs the continuous profile"));
    }
    let lam = profile.wavelength_nm;
    let weights = emission_weights(profile, source);
    let total: f64 = weights.iter().sum();
    let mut by_period: Vec<(f64, f64)> = (0..profile.nx)
        .flat_map(|ix| (0..profile.ny).map(move |iy| (ix, iy)))
        .zip(&weights)
        .map(|((ix, iy), &w)| (profile.period_at_nm(ix, iy), w))
        .collect();
    by_period.sort_by(|a, b| b.0.total_cmp(&a.0));
    let e4 = region_efficiency(4, step.step_nm(4, lam), lam);
    let e2 = region_efficiency(2, step.step_nm(2, lam), lam);
    let efficiency = |threshold: f64| {
        let four: f64 = by_period
            .iter()
            .take_while(|(p, _)| *p > threshold)
            .map(|(_, w)| w)
            .sum();
        reflectivity * (e4 * four + e2 * (total - four)) / total
    };
    let finest = by_period.last().map(|p| p.0).unwrap_or(lam);
    let lo = 0.5 * finest;
    let hi = 1e3 * lam;
    bisect(|t| efficiency(t) - target, lo, hi, 1e-6).ok_or_else(|| {
        Error::NonConvergence(format!(
            "target efficiency {target} outside reachable range [{:.3}, {:.3}]",
            efficiency(hi),
            efficiency(lo)
        ))
    })
}
