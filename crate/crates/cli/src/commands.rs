use std::f64::consts::PI;
use std::fs;
use std::io::{BufRead, BufReader};
use std::path::Path;

use clap::ValueEnum;
use serde_json::{json, Value};

use ionlink::budget::{entanglement_rate_gain, infer_stage, ion_to_fiber, Estimate, Inferred};
use ionlink::config::RunConfig;
use ionlink::correlation::{
    antibunching_verdict, coincidence_histogram, g2_zero, read_timestamp_csv, streams_from_events,
};
use ionlink::diffractive::{
    crossover_for_target, design_efficiency, plane_offsets, propagate_psf, quantize_profile,
    scalar_diffraction_efficiency, spot_fwhm, spot_metrics, synthesize_phase_profile, Apodization, FieldModel,
    FieldStack, MetricOptions, PhaseProfile, PsfConfig, Pupil, Relief, ScalarField, StepHeights,
};
use ionlink::fibercoupling::{
    average_m2, coupling_from_throughput, coupling_with_quality, optimize_magnification, write_scan_csv,
    CouplingImage, EllipticalGaussian, GaussianMode,
};
use ionlink::io::{crop_center, write_csv_grid, write_pgm16};
use ionlink::protocol::{self, run_protocol, DetectionChain, PhotonEvent, ProtocolParams};
use ionlink::radiometry::{
    equivalent_circular_na, polarizer_transmission, ApertureGeometry, EmissionPattern, PolarizerSetting, Quadrature,
    TransitionKind,
};
use ionlink::{Error, Result};

use crate::report::{emit, Format, Output};

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum PsfCheck {
    /// Free-space Gaussian beam; M² must come out as 1.
    Gaussian,
    /// Uniform circular pupil at NA 0.2 against the Airy FWHM.
    Airy,
}

const AIRY_NA: f64 = 0.2;

fn to_value<T: serde::Serialize>(v: &T) -> Result<Value> {
    serde_json::to_value(v).map_err(|e| Error::Format(e.to_string()))
}

fn polarizer(cfg: &RunConfig, ap: &ApertureGeometry) -> PolarizerSetting {
    let p = PolarizerSetting::pi_aligned(ap);
    match cfg.geometry.polarizer_extinction_ratio {
        Some(r) => p.with_extinction_ratio(r),
        None => p,
    }
}

pub fn collect(mut cfg: RunConfig, iris_na: Option<f64>, isotropic: bool, format: Format) -> Result<()> {
    if iris_na.is_some() {
        cfg.geometry.iris_na = iris_na;
    }
    let ap = cfg.geometry.aperture()?;
    let q = Quadrature::for_aperture(&ap);
    let omega = q.solid_angle_fraction(&ap);
    let mut results = json!({
        "aperture": {
            "na_width": ap.na_width(),
            "na_length": ap.na_length(),
            "iris_na": ap.iris_na,
        },
        "solid_angle_fraction": omega,
        "equivalent_na": equivalent_circular_na(omega)?,
    });
    if isotropic {
        results["collection"] = json!({ "isotropic": q.collection_fraction(&EmissionPattern::isotropic(), &ap) });
    } else {
        let pol = polarizer(&cfg, &ap);
        let mut collection = serde_json::Map::new();
        let mut transmission = serde_json::Map::new();
        for kind in [TransitionKind::Pi, TransitionKind::SigmaPlus, TransitionKind::SigmaMinus] {
            let pattern = EmissionPattern::dipole(kind, ap.axis())?;
            collection.insert(kind.label().into(), json!(q.collection_fraction(&pattern, &ap)));
            transmission.insert(kind.label().into(), json!(polarizer_transmission(kind, &ap, &pol)?));
        }
        let share = |k: &str| collection[k].as_f64().unwrap_or(0.0) * transmission[k].as_f64().unwrap_or(0.0);
        let ratio = share("sigma+") / share("pi");
        results["collection"] = Value::Object(collection);
        results["polarizer_transmission"] = Value::Object(transmission);
        results["sigma_to_pi_after_polarizer"] = json!(ratio);
    }
    let mut out = Output::new(&cfg.output_dir)?;
    emit(&mut out, "collect", &cfg, results, format)
}

fn device_profile(cfg: &RunConfig) -> Result<PhaseProfile> {
    let o = &cfg.optics;
    synthesize_phase_profile(
        o.focal_length_um,
        o.wavelength_nm,
        (cfg.geometry.width_um, cfg.geometry.length_um),
        o.profile_pitch_nm,
    )
}

/// Hybrid relief and the crossover period it was built with.
fn hybrid_relief(cfg: &RunConfig, source: &EmissionPattern) -> Result<(PhaseProfile, f64)> {
    let o = &cfg.optics;
    let profile = device_profile(cfg)?;
    let crossover = match o.crossover_period_nm {
        Some(p) => p,
        None => crossover_for_target(&profile, o.reflectivity, o.target_efficiency, source, StepHeights::Ideal)?,
    };
    Ok((quantize_profile(&profile, 4, crossover, o.step_heights)?, crossover))
}

fn pi_source(ap: &ApertureGeometry) -> Result<EmissionPattern> {
    EmissionPattern::dipole(TransitionKind::Pi, ap.axis())
}

pub fn grating(cfg: RunConfig, format: Format) -> Result<()> {
    let ap = cfg.geometry.aperture()?;
    let source = pi_source(&ap)?;
    let (relief, crossover) = hybrid_relief(&cfg, &source)?;
    let eff = design_efficiency(&relief, cfg.optics.reflectivity, &source)?;
    let results = json!({
        "levels": {
            "two": scalar_diffraction_efficiency(2)?,
            "four": scalar_diffraction_efficiency(4)?,
        },
        "crossover_period_nm": crossover,
        "design": to_value(&eff)?,
        "step_height_loss": eff.step_height_loss(),
        "grid": [relief.nx, relief.ny],
    });
    let mut out = Output::new(&cfg.output_dir)?;
    out.file("grating_heights.pgm", |w| write_pgm16(w, relief.nx, relief.ny, relief.heights_nm()))?;
    emit(&mut out, "grating", &cfg, results, format)
}

fn write_spot(out: &mut Output, stack: &FieldStack, crop: usize) -> Result<()> {
    let g = stack.grid();
    let (cx, cy, image) = crop_center(g.nx, g.ny, &stack.intensity(), crop);
    out.file("psf.pgm", |w| write_pgm16(w, cx, cy, &image))?;
    out.file("psf_grid.csv", |w| write_csv_grid(w, cx, cy, &image))?;
    let (h, v) = ionlink::diffractive::metrics::profiles(stack, MetricOptions::default().profile);
    out.file("psf_profiles.csv", |w| {
        writeln!(w, "offset_nm,horizontal,vertical")?;
        for (i, (a, b)) in h.iter().zip(&v).enumerate() {
            let x = g.x_coord(i);
            if x.abs() <= 0.5 * crop as f64 * g.pitch_nm {
                writeln!(w, "{x},{a},{b}")?;
            }
        }
        Ok(())
    })
}

pub fn psf(cfg: RunConfig, check: Option<PsfCheck>, quantized: bool, format: Format) -> Result<()> {
    let o = &cfg.optics;
    let opts = MetricOptions {
        window_sigmas: o.m2_window_sigmas,
        ..MetricOptions::default()
    };
    let psf_config = PsfConfig {
        grid: o.psf_grid,
        image_pitch_nm: o.psf_pitch_nm,
        wavelength_nm: o.wavelength_nm,
        apodization: o.apodization,
        model: o.field_model,
        ..PsfConfig::default()
    };
    let mut out = Output::new(&cfg.output_dir)?;
    let results = match check {
        Some(PsfCheck::Gaussian) => {
            let w0 = 2000.0;
            let stack = FieldStack::scalar(ScalarField::gaussian(512, 100.0, o.wavelength_nm, w0, w0));
            let zr_um = PI * w0 * w0 / o.wavelength_nm * 1e-3;
            let m = spot_metrics(&stack, &plane_offsets(1.5 * zr_um, 7), &opts)?;
            json!({ "check": "gaussian", "waist_nm": w0, "spot": to_value(&m)?, "expected_m2": 1.0 })
        }
        Some(PsfCheck::Airy) => {
            let config = PsfConfig {
                model: FieldModel::Scalar,
                apodization: Apodization::Uniform,
                grid: psf_config.grid.min(1024),
                ..psf_config
            };
            let stack = propagate_psf(&Pupil::Circular { na: AIRY_NA }, &EmissionPattern::isotropic(), &config)?;
            let (h, v) = spot_fwhm(&stack)?;
            let expected = 0.5145 * o.wavelength_nm / AIRY_NA;
            json!({
                "check": "airy",
                "na": AIRY_NA,
                "fwhm_h_nm": h,
                "fwhm_v_nm": v,
                "expected_fwhm_nm": expected,
                "relative_error": (0.5 * (h + v) / expected - 1.0),
            })
        }
        None => {
            let ap = cfg.geometry.aperture()?;
            let source = pi_source(&ap)?;
            let relief = if quantized { Some(hybrid_relief(&cfg, &source)?.0) } else { None };
            let pupil = Pupil::Mirror {
                aperture: &ap,
                focal_length_um: o.focal_length_um,
                relief: relief.as_ref().map_or(Relief::Ideal, Relief::Sampled),
            };
            let stack = propagate_psf(&pupil, &source, &psf_config)?;
            let m = spot_metrics(&stack, &plane_offsets(o.m2_half_span_um, o.m2_planes), &opts)?;
            write_spot(&mut out, &stack, o.image_crop_px)?;
            json!({
                "relief": if quantized { "quantized" } else { "ideal" },
                "spot": to_value(&m)?,
                "fwhm_ratio": m.fwhm_h_nm / m.fwhm_v_nm,
                "na_ratio": ap.na_length() / ap.na_width(),
                "reference_fwhm_nm": [336.0, 257.0],
            })
        }
    };
    emit(&mut out, "psf", &cfg, results, format)
}

fn fwhm_from_report(path: &Path) -> Result<(f64, f64)> {
    let text = fs::read_to_string(path).map_err(|e| Error::config(path.display().to_string(), format!("cannot read: {e}")))?;
    let v: Value = serde_json::from_str(&text).map_err(|e| Error::Format(format!("{}: {e}", path.display())))?;
    let spot = &v["results"]["spot"];
    match (spot["fwhm_h_nm"].as_f64(), spot["fwhm_v_nm"].as_f64()) {
        (Some(h), Some(v)) => Ok((h, v)),
        _ => Err(Error::Format(format!("{}: no spot FWHM in report", path.display()))),
    }
}

pub fn couple(cfg: RunConfig, psf_report: Option<&Path>, format: Format) -> Result<()> {
    let c = &cfg.coupling;
    let (fh, fv) = match psf_report {
        Some(path) => fwhm_from_report(path)?,
        None => (c.image_fwhm_h_nm, c.image_fwhm_v_nm),
    };
    let image = EllipticalGaussian::from_fwhm(fh, fv);
    let fiber = GaussianMode::new(c.fiber_waist_nm, cfg.optics.wavelength_nm)?;
    let scan = optimize_magnification(
        &CouplingImage::Gaussian(image),
        &fiber,
        (c.magnification_min, c.magnification_max),
        c.scan_points,
    )?;
    let m2 = average_m2(c.m2_h, c.m2_v);
    let predicted = coupling_with_quality(scan.overlap, m2)?;
    let inferred = coupling_from_throughput(c.measured_throughput, c.fiber_transmission)?;
    let results = json!({
        "image_fwhm_nm": [fh, fv],
        "image_waist_nm": [image.waist_x_nm, image.waist_y_nm],
        "fiber_waist_nm": c.fiber_waist_nm,
        "magnification": scan.magnification,
        "overlap": scan.overlap,
        "scan_warning": scan.warning,
        "m2_average": m2,
        "predicted_coupling": predicted,
        "coupling_from_throughput": inferred,
    });
    let mut out = Output::new(&cfg.output_dir)?;
    out.file("coupling_scan.csv", |w| write_scan_csv(w, &scan, m2))?;
    emit(&mut out, "couple", &cfg, results, format)
}

pub fn protocol(cfg: RunConfig, format: Format) -> Result<()> {
    let p = &cfg.protocol;
    let run = run_protocol(&p.sequence, p.trials, &cfg.chain, &p.params(), cfg.seed)?;
    let s = &run.summary;
    let expected = s.trials as f64 * cfg.chain.detection_probability(TransitionKind::Pi);
    let results = json!({
        "summary": to_value(s)?,
        "detected_per_trial": s.detected as f64 / s.trials as f64,
        "closed_form_pi_detections": expected,
    });
    let mut out = Output::new(&cfg.output_dir)?;
    out.file("events.bin", |w| protocol::events::write_binary(w, &run.events))?;
    out.file("events.csv", |w| protocol::events::write_csv(w, &run.events))?;
    emit(&mut out, "protocol", &cfg, results, format)
}

fn read_streams(path: &Path) -> Result<(Vec<f64>, Vec<f64>)> {
    let file = fs::File::open(path).map_err(|e| Error::config(path.display().to_string(), format!("cannot open: {e}")))?;
    let mut input = BufReader::new(file);
    let events: Vec<PhotonEvent> = if path.extension().is_some_and(|e| e == "bin") {
        protocol::events::read_binary(input)?
    } else {
        let is_events = input.fill_buf()?.starts_with(b"trial,");
        if !is_events {
            return read_timestamp_csv(input);
        }
        protocol::events::read_csv(input)?
    };
    Ok(streams_from_events(&events))
}

pub fn g2(mut cfg: RunConfig, input: Option<&Path>, ideal: bool, format: Format) -> Result<()> {
    let (a, b, source) = match input {
        Some(path) => {
            let (a, b) = read_streams(path)?;
            (a, b, path.display().to_string())
        }
        None => {
            if ideal {
                cfg.chain = DetectionChain::ideal();
                cfg.protocol.p_dark = 0.0;
                cfg.protocol.polarization_impurity = 0.0;
            }
            let p = &cfg.protocol;
            let params = ProtocolParams {
                recording: protocol::Recording::DetectedOnly,
                ..p.params()
            };
            let run = run_protocol(&p.sequence, p.trials, &cfg.chain, &params, cfg.seed)?;
            let (a, b) = streams_from_events(&run.events);
            (a, b, if ideal { "simulated (ideal)" } else { "simulated" }.to_string())
        }
    };
    let hist = coincidence_histogram(&a, &b, &cfg.correlation)?;
    let z = g2_zero(&hist)?;
    let results = json!({
        "source": source,
        "clicks": [a.len(), b.len()],
        "pairs": hist.pairs,
        "g2_zero": z.value,
        "uncertainty": z.uncertainty,
        "upper_bound": z.upper_bound,
        "zero_peak": z.zero_peak,
        "side_peaks": z.side_peaks,
        "antibunched": antibunching_verdict(z.value, z.uncertainty),
    });
    let mut out = Output::new(&cfg.output_dir)?;
    out.file("g2_histogram.csv", |w| hist.write_csv(w))?;
    emit(&mut out, "g2", &cfg, results, format)
}

fn estimate(e: Estimate) -> Value {
    json!({ "value": e.value, "uncertainty": e.uncertainty, "relative": e.relative() })
}

pub fn budget(cfg: RunConfig, format: Format) -> Result<()> {
    let b = &cfg.budget;
    let inferred = infer_stage(b.measured_counts, b.trials, &b.known)?;
    let mut results = json!({ "known_stages": to_value(&b.known)? });
    match inferred {
        Inferred::UpperBound(u) => {
            results["collection_upper_bound"] = json!(u);
        }
        Inferred::Value(collection) => {
            let diffraction = collection.divided_by(Estimate::new(b.pi_collection, 0.0))?;
            let coupling = Estimate::from_relative(b.fiber_coupling, b.fiber_coupling_relative_uncertainty);
            let comp = ion_to_fiber(collection, coupling, b.extra_optics_loss)?;
            results["collection"] = estimate(collection);
            results["diffraction_efficiency"] = estimate(diffraction);
            results["ion_to_fiber"] = estimate(comp.total);
            results["ion_to_fiber_with_extra_loss"] = estimate(comp.with_extra_loss);
            results["composition_note"] = json!(comp.note);
            results["entanglement_rate_gain"] = json!(entanglement_rate_gain(comp.total.value, b.previous_best)?);
        }
    }
    let mut out = Output::new(&cfg.output_dir)?;
    emit(&mut out, "budget", &cfg, results, format)
}
