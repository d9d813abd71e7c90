//! Angular emission of atomic dipole transitions and its overlap with a
//! rectangular collection optic.
//!
//! Coordinates are ion-centred: the optic plane sits at `z = ion_height`, the
//! `x` axis runs along the optic width and `y` along its length. The
//! quantization axis lies in the `xy` plane. Directions point from the ion
//! towards the optic, so every collected direction has `z > 0`.

use std::f64::consts::PI;

use nalgebra::Vector3;
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::gauss_legendre;

const UNIT_TOLERANCE: f64 = 1e-9;

/// Atomic transition, labelled by the change in magnetic quantum number.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TransitionKind {
    Pi,
    SigmaPlus,
    SigmaMinus,
}

impl TransitionKind {
    pub fn is_sigma(self) -> bool {
        !matches!(self, TransitionKind::Pi)
    }

    pub fn label(self) -> &'static str {
        match self {
            TransitionKind::Pi => "pi",
            TransitionKind::SigmaPlus => "sigma+",
            TransitionKind::SigmaMinus => "sigma-",
        }
    }
}

fn check_unit(v: &Vector3<f64>, what: &str) -> Result<()> {
    let n = v.norm();
    if !n.is_finite() || (n - 1.0).abs() > UNIT_TOLERANCE {
        return Err(Error::precondition(format!(
            "{what} must be a unit vector (norm {n})"
        )));
    }
    Ok(())
}

/// Classical dipole emission in sr⁻¹ along `direction`, with `axis` the
/// quantization axis. Both vectors must be normalized.
pub fn emission_intensity(
    kind: TransitionKind,
    direction: &Vector3<f64>,
    axis: &Vector3<f64>,
) -> Result<f64> {
    check_unit(direction, "direction")?;
    check_unit(axis, "quantization axis")?;
    Ok(dipole_intensity(kind, direction.dot(axis)))
}

#[inline]
fn dipole_intensity(kind: TransitionKind, cos_theta: f64) -> f64 {
    let c2 = (cos_theta * cos_theta).min(1.0);
    match kind {
        TransitionKind::Pi => 3.0 / (8.0 * PI) * (1.0 - c2),
        TransitionKind::SigmaPlus | TransitionKind::SigmaMinus => 3.0 / (16.0 * PI) * (1.0 + c2),
    }
}

/// Angular source distribution, normalized to unit power over the sphere.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum EmissionPattern {
    Dipole {
        kind: TransitionKind,
        axis: Vector3<f64>,
    },
    Isotropic,
}

impl EmissionPattern {
    pub fn dipole(kind: TransitionKind, axis: Vector3<f64>) -> Result<Self> {
        check_unit(&axis, "quantization axis")?;
        Ok(EmissionPattern::Dipole { kind, axis })
    }

    pub fn isotropic() -> Self {
        EmissionPattern::Isotropic
    }

    /// Intensity in sr⁻¹ for a unit `direction` (not re-validated here).
    #[inline]
    pub fn intensity(&self, direction: &Vector3<f64>) -> f64 {
        match self {
            EmissionPattern::Dipole { kind, axis } => dipole_intensity(*kind, direction.dot(axis)),
            EmissionPattern::Isotropic => 1.0 / (4.0 * PI),
        }
    }

    /// Complex far-field polarization vector with `|E|² = intensity`.
    ///
    /// Isotropic sources have no defined polarization and return `None`.
    pub fn far_field(&self, direction: &Vector3<f64>) -> Option<Vector3<Complex64>> {
        match self {
            EmissionPattern::Dipole { kind, axis } => {
                let d = dipole_moment(*kind, axis);
                let k = direction.map(|c| Complex64::new(c, 0.0));
                let kd = k.dot(&d);
                let e = d - k * kd;
                // |d|² = 1 for every kind, so one constant normalizes both patterns.
                Some(e * Complex64::new((3.0 / (8.0 * PI)).sqrt(), 0.0))
            }
            EmissionPattern::Isotropic => None,
        }
    }
}

/// Dipole moment of the transition. σ± use the circular basis
/// `(e1 ± i e2)/√2` with `e1 × e2` along the quantization axis.
pub fn dipole_moment(kind: TransitionKind, axis: &Vector3<f64>) -> Vector3<Complex64> {
    let (e1, e2) = transverse_basis(axis);
    let re = |v: Vector3<f64>| v.map(|c| Complex64::new(c, 0.0));
    match kind {
        TransitionKind::Pi => re(*axis),
        TransitionKind::SigmaPlus | TransitionKind::SigmaMinus => {
            let sign = if kind == TransitionKind::SigmaPlus { 1.0 } else { -1.0 };
            (re(e1) + re(e2) * Complex64::new(0.0, sign)) * Complex64::new(0.5f64.sqrt(), 0.0)
        }
    }
}

fn transverse_basis(axis: &Vector3<f64>) -> (Vector3<f64>, Vector3<f64>) {
    let helper = if axis.z.abs() < 0.9 {
        Vector3::z()
    } else {
        Vector3::x()
    };
    let e1 = (helper - axis * helper.dot(axis)).normalize();
    let e2 = axis.cross(&e1);
    (e1, e2)
}

/// Rectangular collection optic and its pose relative to the ion.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ApertureGeometry {
    pub width_um: f64,
    pub length_um: f64,
    pub ion_height_um: f64,
    pub quantization_axis: [f64; 3],
    /// Optional circular iris, as an NA about the collection axis.
    pub iris_na: Option<f64>,
}

impl ApertureGeometry {
    /// `quantization_angle_deg` is measured in the optic plane from the
    /// length axis towards the width axis.
    pub fn new(
        width_um: f64,
        length_um: f64,
        ion_height_um: f64,
        quantization_angle_deg: f64,
    ) -> Result<Self> {
        let a = quantization_angle_deg.to_radians();
        let geometry = ApertureGeometry {
            width_um,
            length_um,
            ion_height_um,
            quantization_axis: [a.sin(), a.cos(), 0.0],
            iris_na: None,
        };
        geometry.validate()?;
        Ok(geometry)
    }

    /// 80 × 127 µm optic, ion at the 59.6 µm focus, field at 45° to the rails.
    pub fn published() -> Self {
        ApertureGeometry::new(80.0, 127.0, 59.6, 45.0).expect("published geometry is valid")
    }

    pub fn with_iris(mut self, na: Option<f64>) -> Result<Self> {
        self.iris_na = na;
        self.validate()?;
        Ok(self)
    }

    pub fn with_ion_height(mut self, ion_height_um: f64) -> Result<Self> {
        self.ion_height_um = ion_height_um;
        self.validate()?;
        Ok(self)
    }

    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("width_um", self.width_um),
            ("length_um", self.length_um),
            ("ion_height_um", self.ion_height_um),
        ] {
            if !(v > 0.0) || v.is_nan() {
                return Err(Error::precondition(format!("{name} must be > 0, got {v}")));
            }
        }
        let q = self.axis();
        check_unit(&q, "quantization axis")?;
        if q.z.abs() > UNIT_TOLERANCE {
            return Err(Error::precondition(
                "quantization axis must lie in the optic plane",
            ));
        }
        if let Some(na) = self.iris_na {
            if !(na > 0.0 && na <= 1.0) {
                return Err(Error::precondition(format!("iris NA must be in (0, 1], got {na}")));
            }
        }
        Ok(())
    }

    pub fn axis(&self) -> Vector3<f64> {
        Vector3::from(self.quantization_axis)
    }

    pub fn na_width(&self) -> f64 {
        (0.5 * self.width_um / self.ion_height_um).atan().sin()
    }

    pub fn na_length(&self) -> f64 {
        (0.5 * self.length_um / self.ion_height_um).atan().sin()
    }
}

/// A direction on the unit sphere with its quadrature weight in steradians.
#[derive(Debug, Clone, Copy)]
pub struct DirectionSample {
    pub direction: Vector3<f64>,
    pub weight: f64,
}

/// Integration scheme over the directions subtended by the aperture.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "scheme", rename_all = "snake_case")]
pub enum Quadrature {
    /// Midpoint grid over the rectangle with the exact `h dA / d³` Jacobian.
    /// `nx` samples across the width; the length gets the same pitch.
    RectGrid { nx: usize },
    /// Gauss–Legendre in polar angle, midpoint in azimuth. Handles an iris
    /// and very large apertures without staircase error.
    Polar { n_theta: usize, n_phi: usize },
}

impl Default for Quadrature {
    fn default() -> Self {
        Quadrature::RectGrid { nx: 320 }
    }
}

impl Quadrature {
    /// Scheme used when none is requested: rectangle grid unless an iris cuts
    /// the aperture, which the polar scheme integrates without a jagged edge.
    pub fn for_aperture(aperture: &ApertureGeometry) -> Self {
        if aperture.iris_na.is_some() {
            Quadrature::Polar {
                n_theta: 64,
                n_phi: 1440,
            }
        } else {
            Quadrature::default()
        }
    }

    /// Doubles the sample density along each dimension.
    pub fn refined(self) -> Self {
        match self {
            Quadrature::RectGrid { nx } => Quadrature::RectGrid { nx: 2 * nx },
            Quadrature::Polar { n_theta, n_phi } => Quadrature::Polar {
                n_theta: 2 * n_theta,
                n_phi: 2 * n_phi,
            },
        }
    }

    pub fn samples(&self, aperture: &ApertureGeometry) -> Vec<DirectionSample> {
        match *self {
            Quadrature::RectGrid { nx } => rect_samples(aperture, nx),
            Quadrature::Polar { n_theta, n_phi } => polar_samples(aperture, n_theta, n_phi),
        }
    }

    pub fn solid_angle_fraction(&self, aperture: &ApertureGeometry) -> f64 {
        self.samples(aperture).iter().map(|s| s.weight).sum::<f64>() / (4.0 * PI)
    }

    pub fn collection_fraction(&self, pattern: &EmissionPattern, aperture: &ApertureGeometry) -> f64 {
        self.samples(aperture)
            .iter()
            .map(|s| pattern.intensity(&s.direction) * s.weight)
            .sum()
    }

    pub fn polarizer_transmission(
        &self,
        pattern: &EmissionPattern,
        aperture: &ApertureGeometry,
        polarizer: &PolarizerSetting,
    ) -> Result<f64> {
        polarizer.validate()?;
        let axis = Vector3::from(polarizer.axis).map(|c| Complex64::new(c, 0.0));
        let mut passed = 0.0;
        let mut total = 0.0;
        for s in self.samples(aperture) {
            let Some(field) = pattern.far_field(&s.direction) else {
                return Err(Error::precondition(
                    "polarizer transmission needs a polarized (dipole) source",
                ));
            };
            let collimated = collimate(&s.direction, &field);
            let power = field.norm_squared();
            let along = collimated.dot(&axis).norm_sqr();
            passed += along * s.weight;
            total += power * s.weight;
        }
        if total <= 0.0 {
            return Ok(0.0);
        }
        let parallel = (passed / total).clamp(0.0, 1.0);
        Ok(parallel + (1.0 - parallel) / polarizer.extinction_ratio)
    }
}

fn rect_samples(aperture: &ApertureGeometry, nx: usize) -> Vec<DirectionSample> {
    let nx = nx.max(1);
    let pitch = aperture.width_um / nx as f64;
    let ny = ((aperture.length_um / pitch).round() as usize).clamp(1, 8 * nx);
    let pitch_y = aperture.length_um / ny as f64;
    let h = aperture.ion_height_um;
    let area = pitch * pitch_y;
    let iris = aperture.iris_na;
    let mut out = Vec::with_capacity(nx * ny);
    for i in 0..nx {
        let x = (i as f64 + 0.5) * pitch - 0.5 * aperture.width_um;
        for j in 0..ny {
            let y = (j as f64 + 0.5) * pitch_y - 0.5 * aperture.length_um;
            let d2 = x * x + y * y + h * h;
            let d = d2.sqrt();
            if let Some(na) = iris {
                if ((x * x + y * y) / d2).sqrt() > na {
                    continue;
                }
            }
            out.push(DirectionSample {
                direction: Vector3::new(x / d, y / d, h / d),
                weight: h * area / (d2 * d),
            });
        }
    }
    out
}

fn polar_samples(aperture: &ApertureGeometry, n_theta: usize, n_phi: usize) -> Vec<DirectionSample> {
    let (nodes, weights) = gauss_legendre(n_theta.max(1));
    let n_phi = n_phi.max(4);
    let dphi = 2.0 * PI / n_phi as f64;
    let h = aperture.ion_height_um;
    let half_w = 0.5 * aperture.width_um;
    let half_l = 0.5 * aperture.length_um;
    let iris_theta = aperture.iris_na.map(f64::asin).unwrap_or(0.5 * PI);
    let mut out = Vec::with_capacity(n_theta * n_phi);
    for j in 0..n_phi {
        let phi = (j as f64 + 0.5) * dphi;
        let (sp, cp) = phi.sin_cos();
        let r_max = (half_w / cp.abs()).min(half_l / sp.abs());
        let theta_max = (r_max / h).atan().min(iris_theta);
        for (t, w) in nodes.iter().zip(&weights) {
            let theta = 0.5 * theta_max * (t + 1.0);
            let (st, ct) = theta.sin_cos();
            out.push(DirectionSample {
                direction: Vector3::new(st * cp, st * sp, ct),
                weight: 0.5 * theta_max * w * st * dphi,
            });
        }
    }
    out
}

/// Maps a far-field vector at `direction` onto the transverse plane of the
/// collimated beam by the meridional rotation that carries `direction` onto
/// the collection axis.
pub fn collimate(direction: &Vector3<f64>, field: &Vector3<Complex64>) -> Vector3<Complex64> {
    let st = (direction.x * direction.x + direction.y * direction.y).sqrt();
    let ct = direction.z;
    let (cp, sp) = if st > 1e-15 {
        (direction.x / st, direction.y / st)
    } else {
        (1.0, 0.0)
    };
    let e_theta = Vector3::new(ct * cp, ct * sp, -st).map(|c| Complex64::new(c, 0.0));
    let e_phi = Vector3::new(-sp, cp, 0.0).map(|c| Complex64::new(c, 0.0));
    let radial = Vector3::new(cp, sp, 0.0).map(|c| Complex64::new(c, 0.0));
    let a_theta = e_theta.dot(field);
    let a_phi = e_phi.dot(field);
    radial * a_theta + e_phi * a_phi
}

/// Linear analyzer in the collimated beam.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PolarizerSetting {
    /// Transmission axis, perpendicular to the collection axis.
    pub axis: [f64; 3],
    /// Power extinction ratio; `f64::INFINITY` for an ideal analyzer.
    pub extinction_ratio: f64,
}

impl PolarizerSetting {
    /// Ideal analyzer passing the on-axis π polarization.
    pub fn pi_aligned(aperture: &ApertureGeometry) -> Self {
        let q = aperture.axis();
        let t = Vector3::new(q.x, q.y, 0.0).normalize();
        PolarizerSetting {
            axis: [t.x, t.y, t.z],
            extinction_ratio: f64::INFINITY,
        }
    }

    pub fn with_extinction_ratio(mut self, ratio: f64) -> Self {
        self.extinction_ratio = ratio;
        self
    }

    pub fn validate(&self) -> Result<()> {
        let a = Vector3::from(self.axis);
        check_unit(&a, "polarizer axis")?;
        if a.z.abs() > UNIT_TOLERANCE {
            return Err(Error::precondition(
                "polarizer axis must be perpendicular to the collection axis",
            ));
        }
        if !(self.extinction_ratio >= 1.0) {
            return Err(Error::precondition("extinction ratio must be >= 1"));
        }
        Ok(())
    }
}

/// Ω/4π subtended by the aperture (including any iris).
pub fn solid_angle_fraction(aperture: &ApertureGeometry) -> f64 {
    Quadrature::for_aperture(aperture).solid_angle_fraction(aperture)
}

/// Fraction of the transition's total emission that enters the aperture.
pub fn collection_fraction(kind: TransitionKind, aperture: &ApertureGeometry) -> f64 {
    let pattern = EmissionPattern::Dipole {
        kind,
        axis: aperture.axis(),
    };
    Quadrature::for_aperture(aperture).collection_fraction(&pattern, aperture)
}

/// NA of the circular cone subtending the same solid-angle fraction.
pub fn equivalent_circular_na(solid_angle_fraction: f64) -> Result<f64> {
    if !(0.0..=0.5).contains(&solid_angle_fraction) {
        return Err(Error::OutOfRange(format!(
            "solid-angle fraction {solid_angle_fraction} outside [0, 0.5]"
        )));
    }
    let cos_theta = 1.0 - 2.0 * solid_angle_fraction;
    Ok((1.0 - cos_theta * cos_theta).max(0.0).sqrt())
}

/// Probability that a collected photon of `kind` passes the analyzer.
pub fn polarizer_transmission(
    kind: TransitionKind,
    aperture: &ApertureGeometry,
    polarizer: &PolarizerSetting,
) -> Result<f64> {
    let pattern = EmissionPattern::dipole(kind, aperture.axis())?;
    Quadrature::for_aperture(aperture).polarizer_transmission(&pattern, aperture, polarizer)
}
