//! Run configuration read from TOML. Every section is optional and defaults
//! to the published device; unknown keys are rejected.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::budget::EfficiencyStage;
use crate::correlation::G2Config;
use crate::diffractive::{Apodization, FieldModel, StepHeights};
use crate::error::{Error, Result};
use crate::protocol::{DetectionChain, ProtocolParams, PulseSequence, Repump};
use crate::radiometry::ApertureGeometry;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GeometryConfig {
    pub width_um: f64,
    pub length_um: f64,
    pub ion_height_um: f64,
    /// In-plane angle of the quantization axis from the length axis.
    pub quantization_angle_deg: f64,
    pub iris_na: Option<f64>,
    /// Analyzer extinction ratio; absent for an ideal analyzer.
    pub polarizer_extinction_ratio: Option<f64>,
}

impl Default for GeometryConfig {
    fn default() -> Self {
        GeometryConfig {
            width_um: 80.0,
            length_um: 127.0,
            ion_height_um: 59.6,
            quantization_angle_deg: 45.0,
            iris_na: None,
            polarizer_extinction_ratio: None,
        }
    }
}

impl GeometryConfig {
    pub fn aperture(&self) -> Result<ApertureGeometry> {
        for (key, v) in [
            ("width_um", self.width_um),
            ("length_um", self.length_um),
            ("ion_height_um", self.ion_height_um),
        ] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::config(format!("geometry.{key}"), format!("must be > 0, got {v}")));
            }
        }
        if let Some(na) = self.iris_na {
            if !(na > 0.0 && na < 1.0) {
                return Err(Error::config("geometry.iris_na", format!("must be in (0, 1), got {na}")));
            }
        }
        ApertureGeometry::new(self.width_um, self.length_um, self.ion_height_um, self.quantization_angle_deg)
            .and_then(|g| g.with_iris(self.iris_na))
            .map_err(|e| Error::config("geometry", e.to_string()))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OpticsConfig {
    pub wavelength_nm: f64,
    pub focal_length_um: f64,
    pub reflectivity: f64,
    /// Design efficiency the 4/2-level crossover is tuned to.
    pub target_efficiency: f64,
    /// Fixed crossover period; overrides `target_efficiency` when set.
    pub crossover_period_nm: Option<f64>,
    pub step_heights: StepHeights,
    pub profile_pitch_nm: f64,
    pub psf_grid: usize,
    pub psf_pitch_nm: f64,
    pub apodization: Apodization,
    pub field_model: FieldModel,
    pub m2_half_span_um: f64,
    pub m2_planes: usize,
    pub m2_window_sigmas: f64,
    pub image_crop_px: usize,
}

impl Default for OpticsConfig {
    fn default() -> Self {
        OpticsConfig {
            wavelength_nm: 370.0,
            focal_length_um: 59.6,
            reflectivity: 0.92,
            target_efficiency: 0.50,
            crossover_period_nm: None,
            step_heights: StepHeights::Ideal,
            profile_pitch_nm: 100.0,
            psf_grid: 2048,
            psf_pitch_nm: 370.0 / 8.0,
            apodization: Apodization::Emission,
            field_model: FieldModel::Vector,
            m2_half_span_um: 2.0,
            m2_planes: 9,
            m2_window_sigmas: 4.0,
            image_crop_px: 256,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CouplingConfig {
    /// Focal-spot FWHM used when no PSF report is supplied.
    pub image_fwhm_h_nm: f64,
    pub image_fwhm_v_nm: f64,
    pub fiber_waist_nm: f64,
    pub magnification_min: f64,
    pub magnification_max: f64,
    pub scan_points: usize,
    /// Beam quality used for the predicted coupling.
    pub m2_h: f64,
    pub m2_v: f64,
    pub fiber_transmission: f64,
    pub measured_throughput: f64,
}

impl Default for CouplingConfig {
    fn default() -> Self {
        CouplingConfig {
            image_fwhm_h_nm: 336.0,
            image_fwhm_v_nm: 257.0,
            fiber_waist_nm: 1650.0,
            magnification_min: 1.0,
            magnification_max: 20.0,
            scan_points: 96,
            m2_h: 1.36,
            m2_v: 1.54,
            fiber_transmission: 0.80,
            measured_throughput: 0.57,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ProtocolConfig {
    pub trials: u64,
    pub scattering_rate_per_us: f64,
    pub p_dark: f64,
    pub repump: Repump,
    pub polarization_impurity: f64,
    pub record_all_gate_emissions: bool,
    pub sequence: PulseSequence,
}

impl Default for ProtocolConfig {
    fn default() -> Self {
        let p = ProtocolParams::default();
        ProtocolConfig {
            trials: 184_000,
            scattering_rate_per_us: p.scattering_rate_per_us,
            p_dark: p.p_dark,
            repump: p.repump,
            polarization_impurity: p.polarization_impurity,
            record_all_gate_emissions: false,
            sequence: PulseSequence::published(),
        }
    }
}

impl ProtocolConfig {
    pub fn params(&self) -> ProtocolParams {
        ProtocolParams {
            scattering_rate_per_us: self.scattering_rate_per_us,
            p_dark: self.p_dark,
            repump: self.repump,
            polarization_impurity: self.polarization_impurity,
            recording: if self.record_all_gate_emissions {
                crate::protocol::Recording::GateEmissions
            } else {
                crate::protocol::Recording::DetectedOnly
            },
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BudgetConfig {
    pub measured_counts: u64,
    pub trials: u64,
    /// Stages known independently of the count measurement.
    pub known: Vec<EfficiencyStage>,
    pub pi_collection: f64,
    pub fiber_coupling: f64,
    pub fiber_coupling_relative_uncertainty: f64,
    /// Further optics loss named alongside the ion-to-fiber total.
    pub extra_optics_loss: f64,
    pub previous_best: f64,
}

impl Default for BudgetConfig {
    fn default() -> Self {
        BudgetConfig {
            measured_counts: 770,
            trials: 184_000,
            known: vec![
                EfficiencyStage { name: "detector QE".into(), value: 0.19, relative_uncertainty: 0.0 },
                EfficiencyStage { name: "iris".into(), value: 0.50, relative_uncertainty: 0.10 },
                EfficiencyStage { name: "other optics".into(), value: 0.76, relative_uncertainty: 0.0 },
            ],
            pi_collection: 0.174,
            fiber_coupling: 0.71,
            fiber_coupling_relative_uncertainty: 0.07,
            extra_optics_loss: 0.083,
            previous_best: 0.014,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    pub output_dir: PathBuf,
    pub geometry: GeometryConfig,
    pub optics: OpticsConfig,
    pub coupling: CouplingConfig,
    pub protocol: ProtocolConfig,
    pub chain: DetectionChain,
    pub correlation: G2Config,
    pub budget: BudgetConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            seed: 1,
            output_dir: PathBuf::from("out"),
            geometry: GeometryConfig::default(),
            optics: OpticsConfig::default(),
            coupling: CouplingConfig::default(),
            protocol: ProtocolConfig::default(),
            chain: DetectionChain::published(),
            correlation: G2Config::default(),
            budget: BudgetConfig::default(),
        }
    }
}

impl RunConfig {
    /// Published device and measurement values.
    pub fn published() -> Self {
        Self::default()
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: RunConfig = toml::from_str(text).map_err(|e| {
            let message = e.message().to_string();
            let path = e
                .span()
                .map(|s| key_path_at(text, s.start))
                .filter(|p| !p.is_empty())
                .unwrap_or_else(|| "<root>".into());
            Error::config(path, message)
        })?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::config(path.display().to_string(), format!("cannot read: {e}")))?;
        Self::from_toml(&text)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Format(e.to_string()))
    }

    pub fn validate(&self) -> Result<()> {
        self.geometry.aperture()?;
        if let Some(er) = self.geometry.polarizer_extinction_ratio {
            if !(er >= 1.0) {
                return Err(Error::config("geometry.polarizer_extinction_ratio", "must be >= 1"));
            }
        }
        let o = &self.optics;
        let positive = [
            ("optics.wavelength_nm", o.wavelength_nm),
            ("optics.focal_length_um", o.focal_length_um),
            ("optics.profile_pitch_nm", o.profile_pitch_nm),
            ("optics.psf_pitch_nm", o.psf_pitch_nm),
            ("optics.m2_half_span_um", o.m2_half_span_um),
            ("optics.m2_window_sigmas", o.m2_window_sigmas),
            ("coupling.image_fwhm_h_nm", self.coupling.image_fwhm_h_nm),
            ("coupling.image_fwhm_v_nm", self.coupling.image_fwhm_v_nm),
            ("coupling.fiber_waist_nm", self.coupling.fiber_waist_nm),
            ("coupling.magnification_min", self.coupling.magnification_min),
        ];
        for (path, v) in positive {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::config(path, "must be > 0"));
            }
        }
        for (path, v) in [
            ("optics.reflectivity", o.reflectivity),
            ("optics.target_efficiency", o.target_efficiency),
            ("coupling.fiber_transmission", self.coupling.fiber_transmission),
            ("coupling.measured_throughput", self.coupling.measured_throughput),
            ("budget.pi_collection", self.budget.pi_collection),
            ("budget.fiber_coupling", self.budget.fiber_coupling),
            ("budget.extra_optics_loss", self.budget.extra_optics_loss),
        ] {
            if !(0.0..=1.0).contains(&v) {
                return Err(Error::config(path, "must be in [0, 1]"));
            }
        }
        if self.coupling.magnification_max <= self.coupling.magnification_min {
            return Err(Error::config("coupling.magnification_max", "must exceed magnification_min"));
        }
        if o.m2_planes < 5 {
            return Err(Error::config("optics.m2_planes", "at least 5 planes are needed"));
        }
        if self.protocol.trials == 0 {
            return Err(Error::config("protocol.trials", "must be >= 1"));
        }
        self.protocol.sequence.validate()?;
        self.protocol.params().validate()?;
        self.chain.validate()?;
        self.correlation.validate()?;
        for (i, s) in self.budget.known.iter().enumerate() {
            s.validate().map_err(|e| Error::config(format!("budget.known[{i}]"), e.to_string()))?;
        }
        Ok(())
    }
}

/// Dotted key path of the table and key in effect at byte `offset`.
fn key_path_at(text: &str, offset: usize) -> String {
    let mut table = String::new();
    let mut key = String::new();
    let mut pos = 0;
    for line in text.split_inclusive('\n') {
        let t = line.trim();
        if t.starts_with('[') {
            table = t.trim_matches(|c| c == '[' || c == ']').trim().to_string();
            key.clear();
        } else if let Some((k, _)) = t.split_once('=') {
            key = k.trim().to_string();
        }
        pos += line.len();
        if pos > offset {
            break;
        }
    }
    match (table.is_empty(), key.is_empty()) {
        (true, _) => key,
        (false, true) => table,
        (false, false) => format!("{table}.{key}"),
    }
}
