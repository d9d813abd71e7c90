//! Scattering rate from laser parameters.
//!
//! Two-level saturation model: `R = (Γ/2) s / (1 + s + (2Δ/Γ)²)` with
//! `s = I / I_sat` and `I_sat = π h c Γ / (3 λ³)`. The peak intensity of a
//! Gaussian beam, `2P / (π w²)` with `w` half the 1/e² diameter, is used for
//! `I`; Zeeman structure and the repump are ignored.

use std::f64::consts::PI;

const PLANCK: f64 = 6.626_070_15e-34;
const LIGHT_SPEED: f64 = 299_792_458.0;

/// Natural linewidth `Γ/2π` of the 369.5 nm cooling transition.
pub const YB_LINEWIDTH_HZ: f64 = 19.6e6;
pub const YB_WAVELENGTH_NM: f64 = 369.5;

/// `Γ/2` in scatters per µs.
pub fn saturated_rate_per_us(linewidth_hz: f64) -> f64 {
    PI * linewidth_hz * 1e-6
}

/// Saturation intensity in W/m².
pub fn saturation_intensity_w_m2(wavelength_nm: f64, linewidth_hz: f64) -> f64 {
    let lam = wavelength_nm * 1e-9;
    PI * PLANCK * LIGHT_SPEED * (2.0 * PI * linewidth_hz) / (3.0 * lam.powi(3))
}

/// Peak on-axis saturation parameter of a Gaussian beam.
pub fn saturation_parameter(power_w: f64, beam_diameter_m: f64, wavelength_nm: f64, linewidth_hz: f64) -> f64 {
    let w = 0.5 * beam_diameter_m;
    2.0 * power_w / (PI * w * w) / saturation_intensity_w_m2(wavelength_nm, linewidth_hz)
}

/// Scatters per µs at saturation parameter `s` and detuning `Δ/2π`.
pub fn scattering_rate_per_us(s: f64, detuning_hz: f64, linewidth_hz: f64) -> f64 {
    let d = 2.0 * detuning_hz / linewidth_hz;
    saturated_rate_per_us(linewidth_hz) * s / (1.0 + s + d * d)
}
