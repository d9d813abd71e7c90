use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Minimum samples per local zone period accepted by the synthesizer.
pub const MIN_SAMPLES_PER_PERIOD: f64 = 4.0;

/// Fabricated step heights: 45 nm on four-level areas, 90 nm on two-level.
pub const FABRICATED_STEP_4_NM: f64 = 45.0;
pub const FABRICATED_STEP_2_NM: f64 = 90.0;

/// Focal lengths of the five collimators fabricated on the chip.
pub const FOCAL_LADDER_UM: [f64; 5] = [58.6, 59.6, 60.6, 61.6, 62.6];

/// Which step height a quantized region is etched with.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum StepHeights {
    /// λ/(2N) for N levels.
    #[default]
    Ideal,
    /// As built: 45 nm (N = 4) and 90 nm (N = 2).
    Fabricated,
}

impl StepHeights {
    pub fn step_nm(self, levels: u32, wavelength_nm: f64) -> f64 {
        match (self, levels) {
            (StepHeights::Fabricated, 4) => FABRICATED_STEP_4_NM,
            (StepHeights::Fabricated, 2) => FABRICATED_STEP_2_NM,
            _ => wavelength_nm / (2.0 * levels as f64),
        }
    }
}

/// Sampled surface relief of the reflective Fresnel mirror.
///
/// Sample `(ix, iy)` sits at the pixel centre
/// `x = (ix + ½) pitch − width/2`, `y = (iy + ½) pitch − length/2`.
#[derive(Debug, Clone, PartialEq)]
pub struct PhaseProfile {
    pub wavelength_nm: f64,
    pub focal_length_um: f64,
    pub pitch_nm: f64,
    pub width_um: f64,
    pub length_um: f64,
    pub nx: usize,
    pub ny: usize,
    heights_nm: Vec<f64>,
    /// Level count per sample, `None` for a continuous profile.
    levels: Option<Vec<u8>>,
    step: StepHeights,
}

impl PhaseProfile {
    pub fn heights_nm(&self) -> &[f64] {
        &self.heights_nm
    }

    pub fn levels(&self) -> Option<&[u8]> {
        self.levels.as_deref()
    }

    pub fn step_heights(&self) -> StepHeights {
        self.step
    }

    pub fn is_quantized(&self) -> bool {
        self.levels.is_some()
    }

    pub fn x_um(&self, ix: usize) -> f64 {
        ((ix as f64 + 0.5) * self.pitch_nm) * 1e-3 - 0.5 * self.width_um
    }

    pub fn y_um(&self, iy: usize) -> f64 {
        ((iy as f64 + 0.5) * self.pitch_nm) * 1e-3 - 0.5 * self.length_um
    }

    pub fn height_at(&self, ix: usize, iy: usize) -> f64 {
        self.heights_nm[ix * self.ny + iy]
    }

    /// Reflected phase `4π h / λ` wrapped to `[0, 2π)`.
    pub fn phase_at(&self, ix: usize, iy: usize) -> f64 {
        (4.0 * PI * self.height_at(ix, iy) / self.wavelength_nm).rem_euclid(2.0 * PI)
    }

    /// Nearest sample to `(x, y)` in µm, if inside the optic.
    pub fn index_of(&self, x_um: f64, y_um: f64) -> Option<(usize, usize)> {
        let fx = (x_um + 0.5 * self.width_um) * 1e3 / self.pitch_nm;
        let fy = (y_um + 0.5 * self.length_um) * 1e3 / self.pitch_nm;
        if fx < 0.0 || fy < 0.0 {
            return None;
        }
        let (ix, iy) = (fx as usize, fy as usize);
        (ix < self.nx && iy < self.ny).then_some((ix, iy))
    }

    /// Phase departure of the sample from the ideal continuous design,
    /// wrapped to `(-π, π]`.
    pub fn phase_error_at(&self, ix: usize, iy: usize) -> f64 {
        let ideal = ideal_phase(self.x_um(ix), self.y_um(iy), self.focal_length_um, self.wavelength_nm);
        wrap_pi(self.phase_at(ix, iy) - ideal)
    }

    /// Local zone period at sample `(ix, iy)`.
    pub fn period_at_nm(&self, ix: usize, iy: usize) -> f64 {
        let r = self.x_um(ix).hypot(self.y_um(iy));
        local_period_nm(r, self.focal_length_um, self.wavelength_nm)
    }
}

fn wrap_pi(p: f64) -> f64 {
    let w = (p + PI).rem_euclid(2.0 * PI) - PI;
    if w == -PI {
        PI
    } else {
        w
    }
}

/// Ideal collimating phase `−(2π/λ)(√(r² + f²) − f)` wrapped to `[0, 2π)`.
pub fn ideal_phase(x_um: f64, y_um: f64, focal_length_um: f64, wavelength_nm: f64) -> f64 {
    let k = 2.0 * PI / (wavelength_nm * 1e-3);
    let path = (x_um * x_um + y_um * y_um + focal_length_um * focal_length_um).sqrt() - focal_length_um;
    (-k * path).rem_euclid(2.0 * PI)
}

/// Period of the wrapped relief at radius `r`: `λ √(r² + f²) / r`.
pub fn local_period_nm(r_um: f64, focal_length_um: f64, wavelength_nm: f64) -> f64 {
    if r_um <= 0.0 {
        return f64::INFINITY;
    }
    wavelength_nm * (r_um * r_um + focal_length_um * focal_length_um).sqrt() / r_um
}

/// Radius of the `m`-th zone boundary, where the path from focus grows by `mλ`.
pub fn zone_radius_um(m: u32, focal_length_um: f64, wavelength_nm: f64) -> f64 {
    let lam = wavelength_nm * 1e-3;
    let outer = focal_length_um + m as f64 * lam;
    (outer * outer - focal_length_um * focal_length_um).sqrt()
}

/// Ideal continuous relief of a mirror that collimates a point source at
/// `focal_length_um` on axis.
pub fn synthesize_phase_profile(
    focal_length_um: f64,
    wavelength_nm: f64,
    extent_um: (f64, f64),
    pitch_nm: f64,
) -> Result<PhaseProfile> {
    let (width_um, length_um) = extent_um;
    if !(focal_length_um > 0.0 && wavelength_nm > 0.0 && pitch_nm > 0.0 && width_um > 0.0 && length_um > 0.0) {
        return Err(Error::precondition("profile dimensions must be positive"));
    }
    let corner = (0.5 * width_um).hypot(0.5 * length_um);
    let finest = local_period_nm(corner, focal_length_um, wavelength_nm);
    if pitch_nm * MIN_SAMPLES_PER_PERIOD > finest {
        return Err(Error::Sampling(format!(
            "pitch {pitch_nm} nm undersamples the outer zones (period {finest:.1} nm needs pitch <= {:.1} nm)",
            finest / MIN_SAMPLES_PER_PERIOD
        )));
    }
    let nx = ((width_um * 1e3 / pitch_nm).round() as usize).max(1);
    let ny = ((length_um * 1e3 / pitch_nm).round() as usize).max(1);
    let mut profile = PhaseProfile {
        wavelength_nm,
        focal_length_um,
        pitch_nm,
        width_um: nx as f64 * pitch_nm * 1e-3,
        length_um: ny as f64 * pitch_nm * 1e-3,
        nx,
        ny,
        heights_nm: Vec::with_capacity(nx * ny),
        levels: None,
        step: StepHeights::Ideal,
    };
    for ix in 0..nx {
        let x = profile.x_um(ix);
        for iy in 0..ny {
            let phase = ideal_phase(x, profile.y_um(iy), focal_length_um, wavelength_nm);
            profile.heights_nm.push(phase * wavelength_nm / (4.0 * PI));
        }
    }
    Ok(profile)
}

fn quantize_height(height_nm: f64, levels: u32, wavelength_nm: f64, step_nm: f64) -> f64 {
    let ideal_step = wavelength_nm / (2.0 * levels as f64);
    let level = ((height_nm / ideal_step).floor() as u32).min(levels - 1);
    level as f64 * step_nm
}

/// Hybrid quantization: samples whose local zone period exceeds
/// `zone_period_threshold_nm` get `levels` levels, the rest two.
/// `levels = 2` gives a pure binary relief.
pub fn quantize_profile(
    profile: &PhaseProfile,
    levels: u32,
    zone_period_threshold_nm: f64,
    step: StepHeights,
) -> Result<PhaseProfile> {
    if levels != 2 && levels != 4 {
        return Err(Error::Unsupported(format!(
            "{levels}-level relief (supported: 2 or 4)"
        )));
    }
    if !(zone_period_threshold_nm > 0.0) {
        return Err(Error::precondition("zone period threshold must be > 0"));
    }
    let base = continuous_source(profile)?;
    let mut out = base.clone();
    let mut level_map = Vec::with_capacity(base.nx * base.ny);
    for ix in 0..base.nx {
        for iy in 0..base.ny {
            let n = if levels == 4 && base.period_at_nm(ix, iy) > zone_period_threshold_nm {
                4
            } else {
                2
            };
            let i = ix * base.ny + iy;
            out.heights_nm[i] = quantize_height(
                base.heights_nm[i],
                n,
                base.wavelength_nm,
                step.step_nm(n, base.wavelength_nm),
            );
            level_map.push(n as u8);
        }
    }
    out.levels = Some(level_map);
    out.step = step;
    Ok(out)
}

/// Uniform `levels`-level staircase with ideal λ/(2N) steps, for any N ≥ 2.
pub fn quantize_uniform(profile: &PhaseProfile, levels: u32) -> Result<PhaseProfile> {
    if levels < 2 || levels > u8::MAX as u32 {
        return Err(Error::Unsupported(format!("{levels}-level relief")));
    }
    let base = continuous_source(profile)?;
    let mut out = base.clone();
    let step = base.wavelength_nm / (2.0 * levels as f64);
    for h in out.heights_nm.iter_mut() {
        *h = quantize_height(*h, levels, base.wavelength_nm, step);
    }
    out.levels = Some(vec![levels as u8; base.nx * base.ny]);
    out.step = StepHeights::Ideal;
    Ok(out)
}

fn continuous_source(profile: &PhaseProfile) -> Result<&PhaseProfile> {
    if profile.is_quantized() {
        return Err(Error::precondition("profile is already quantized"));
    }
    Ok(profile)
}
