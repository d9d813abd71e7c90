//! Reflective Fresnel mirror: relief synthesis and quantization, blaze
//! efficiency, focal-spot synthesis and spot metrics.

pub mod field;
pub mod grating;
pub mod metrics;
pub mod profile;
pub mod psf;

pub use field::{FieldStack, ScalarField};
pub use grating::{
    crossover_for_target, design_efficiency, region_efficiency, scalar_diffraction_efficiency,
    staircase_efficiency, DesignEfficiency,
};
pub use metrics::{
    fit_beam_caustic, plane_offsets, spot_fwhm, spot_fwhm_with, spot_metrics, CausticFit, MetricOptions, ProfileKind,
    SpotMetrics,
};
pub use profile::{
    quantize_profile, quantize_uniform, synthesize_phase_profile, zone_radius_um, PhaseProfile, StepHeights,
};
pub use psf::{propagate_psf, strehl_ratio, Apodization, FieldModel, PsfConfig, Pupil, Relief};
