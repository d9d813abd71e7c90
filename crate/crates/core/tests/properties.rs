use std::f64::consts::PI;

use nalgebra::Vector3;
use num_complex::Complex64;
use proptest::prelude::*;

use ionlink::budget::{chain, infer_stage, EfficiencyStage, Inferred};
use ionlink::correlation::{coincidence_histogram, G2Config};
use ionlink::diffractive::{quantize_profile, synthesize_phase_profile, FieldStack, ScalarField, StepHeights};
use ionlink::fibercoupling::{gaussian_overlap, overlap_fields};
use ionlink::protocol::{run_protocol, DetectionChain, KindFactor, ProtocolParams, PulseSequence, Recording};
use ionlink::radiometry::{
    collection_fraction, solid_angle_fraction, ApertureGeometry, EmissionPattern, Quadrature, TransitionKind,
};

fn kind() -> impl Strategy<Value = TransitionKind> {
    prop_oneof![
        Just(TransitionKind::Pi),
        Just(TransitionKind::SigmaPlus),
        Just(TransitionKind::SigmaMinus)
    ]
}

fn stage() -> impl Strategy<Value = EfficiencyStage> {
    (0.01f64..=1.0, 0.0f64..0.5).prop_map(|(v, r)| EfficiencyStage::new("s", v, r).unwrap())
}

/// Sorted integer-valued timestamps, so shifts and differences are exact.
fn stream() -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(0u32..40_000, 0..60).prop_map(|mut v| {
        v.sort_unstable();
        v.into_iter().map(f64::from).collect()
    })
}

fn small_g2() -> G2Config {
    G2Config::for_period(3250.0, 1000.0, 2)
}

/// Midpoint-rule sphere integral of the pattern.
fn sphere_integral(p: &EmissionPattern) -> f64 {
    let (nt, np) = (400, 400);
    let mut acc = 0.0;
    for i in 0..nt {
        let th = (i as f64 + 0.5) * PI / nt as f64;
        for j in 0..np {
            let ph = (j as f64 + 0.5) * 2.0 * PI / np as f64;
            let d = Vector3::new(th.sin() * ph.cos(), th.sin() * ph.sin(), th.cos());
            acc += p.intensity(&d) * th.sin();
        }
    }
    acc * (PI / nt as f64) * (2.0 * PI / np as f64)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn emission_is_normalized_and_nonnegative(k in kind(), angle in 0.0f64..2.0 * PI) {
        let axis = Vector3::new(angle.cos(), angle.sin(), 0.0);
        let p = EmissionPattern::dipole(k, axis).unwrap();
        prop_assert!((sphere_integral(&p) - 1.0).abs() < 1e-4);
        let d = Vector3::new(0.3, -0.4, angle.sin()).normalize();
        prop_assert!(p.intensity(&d) >= 0.0);
    }

    #[test]
    fn collection_grows_with_aperture(
        k in kind(),
        w in 20.0f64..150.0,
        l in 20.0f64..150.0,
        h in 20.0f64..100.0,
        dw in 1.0f64..30.0,
        dh in 1.0f64..30.0,
    ) {
        let base = ApertureGeometry::new(w, l, h, 45.0).unwrap();
        let c = collection_fraction(k, &base);
        prop_assert!(collection_fraction(k, &ApertureGeometry::new(w + dw, l, h, 45.0).unwrap()) >= c - 1e-9);
        prop_assert!(collection_fraction(k, &ApertureGeometry::new(w, l + dw, h, 45.0).unwrap()) >= c - 1e-9);
        prop_assert!(collection_fraction(k, &ApertureGeometry::new(w, l, h + dh, 45.0).unwrap()) < c);
        let f = solid_angle_fraction(&base);
        prop_assert!(f > 0.0 && f < 0.5);
    }

    #[test]
    fn isotropic_collection_is_solid_angle(w in 20.0f64..150.0, l in 20.0f64..150.0, h in 20.0f64..100.0) {
        let ap = ApertureGeometry::new(w, l, h, 45.0).unwrap();
        let q = Quadrature::for_aperture(&ap);
        let iso = q.collection_fraction(&EmissionPattern::isotropic(), &ap);
        prop_assert!((iso - q.solid_angle_fraction(&ap)).abs() < 1e-6);
    }

    #[test]
    fn propagation_conserves_power(w in 800.0f64..3000.0, dz in -40.0f64..40.0, tilt in 0.0f64..1e-3) {
        let f = ScalarField::from_fn(128, 128, 100.0, 370.0, |x, y| {
            let a = (x * x + y * y) / (w * w);
            Complex64::from_polar((-a).exp(), tilt * x)
        });
        let g = f.propagate(dz);
        prop_assert!((g.power() / f.power() - 1.0).abs() < 1e-6);
    }

    #[test]
    fn quantized_heights_stay_in_half_wave(levels in prop_oneof![Just(2u32), Just(4)], threshold in 200.0f64..3000.0) {
        let p = synthesize_phase_profile(59.6, 370.0, (20.0, 30.0), 100.0).unwrap();
        let q = quantize_profile(&p, levels, threshold, StepHeights::Ideal).unwrap();
        for h in p.heights_nm().iter().chain(q.heights_nm()) {
            prop_assert!((0.0..=185.0).contains(h));
        }
    }

    #[test]
    fn gaussian_overlap_is_symmetric_and_bounded(
        a in (100.0f64..5000.0, 100.0f64..5000.0),
        b in (100.0f64..5000.0, 100.0f64..5000.0),
    ) {
        let ab = gaussian_overlap(a, b);
        prop_assert!((ab - gaussian_overlap(b, a)).abs() < 1e-15);
        prop_assert!(ab > 0.0 && ab <= 1.0 + 1e-15);
        prop_assert!((gaussian_overlap(a, a) - 1.0).abs() < 1e-15);
    }

    #[test]
    fn sampled_overlap_matches_closed_form(
        a in (400.0f64..1500.0, 400.0f64..1500.0),
        b in (400.0f64..1500.0, 400.0f64..1500.0),
        phase in 0.0f64..2.0 * PI,
    ) {
        let fa = ScalarField::gaussian(256, 50.0, 370.0, a.0, a.1);
        let fb = ScalarField::gaussian(256, 50.0, 370.0, b.0, b.1);
        let mut rotated = fa.clone();
        for v in rotated.data.iter_mut() {
            *v *= Complex64::from_polar(2.0, phase);
        }
        let ab = overlap_fields(&FieldStack::scalar(fa.clone()), &fb).unwrap();
        let ba = overlap_fields(&FieldStack::scalar(fb), &fa).unwrap();
        let rot = overlap_fields(&FieldStack::scalar(rotated), &fa).unwrap();
        prop_assert!((ab - ba).abs() < 1e-12);
        prop_assert!((ab - gaussian_overlap(a, b)).abs() < 1e-6);
        prop_assert!((rot - 1.0).abs() < 1e-12);
    }

    #[test]
    fn chain_is_associative(a in prop::collection::vec(stage(), 0..5), b in prop::collection::vec(stage(), 0..5)) {
        let whole: Vec<_> = a.iter().chain(&b).cloned().collect();
        let nested = chain(&[chain(&a).stage("a").unwrap(), chain(&b).stage("b").unwrap()]);
        let flat = chain(&whole);
        prop_assert!((flat.value - nested.value).abs() <= 1e-12 * flat.value);
        prop_assert!((flat.uncertainty - nested.uncertainty).abs() <= 1e-12 * flat.uncertainty.max(1e-300));
    }

    #[test]
    fn inference_inverts_the_chain(known in prop::collection::vec(stage(), 1..4), counts in 1u64..100_000, trials in 100_000u64..10_000_000) {
        let Inferred::Value(e) = infer_stage(counts, trials, &known).unwrap() else {
            panic!("nonzero counts give a value");
        };
        let back = e.value * chain(&known).value * trials as f64;
        prop_assert!((back / counts as f64 - 1.0).abs() < 1e-12);
    }

    #[test]
    fn histogram_counts_every_pair_in_window(a in stream(), b in stream()) {
        let c = small_g2();
        let h = coincidence_histogram(&a, &b, &c).unwrap();
        let brute = a.iter().flat_map(|t1| b.iter().map(move |t2| t2 - t1)).filter(|d| d.abs() <= c.window_ns).count();
        prop_assert_eq!(h.pairs, brute as u64);
        prop_assert_eq!(h.counts.iter().sum::<u64>(), h.pairs);
    }

    #[test]
    fn histogram_is_translation_invariant(a in stream(), b in stream(), shift in 0u32..1_000_000) {
        let c = small_g2();
        let s = f64::from(shift);
        let moved = |v: &[f64]| v.iter().map(|t| t + s).collect::<Vec<_>>();
        let h = coincidence_histogram(&a, &b, &c).unwrap();
        let g = coincidence_histogram(&moved(&a), &moved(&b), &c).unwrap();
        prop_assert_eq!(h.counts, g.counts);
    }

    #[test]
    fn swapping_detectors_mirrors_histogram(a in stream(), b in stream()) {
        let c = small_g2();
        let h = coincidence_histogram(&a, &b, &c).unwrap();
        let mut g = coincidence_histogram(&b, &a, &c).unwrap().counts;
        g.reverse();
        prop_assert_eq!(h.counts, g);
    }

    #[test]
    fn detection_flags_are_nested(
        pi in 0.0f64..=1.0,
        sigma in 0.0f64..=1.0,
        leak in 0.0f64..0.2,
        bg in 0.0f64..1e5,
        seed in any::<u64>(),
    ) {
        let chain = DetectionChain {
            collection: KindFactor { pi, sigma },
            polarizer: KindFactor { pi: 1.0, sigma: leak },
            stages: Vec::new(),
            background_rate_hz: bg,
        };
        let params = ProtocolParams { recording: Recording::GateEmissions, ..ProtocolParams::default() };
        let run = run_protocol(&PulseSequence::published(), 500, &chain, &params, seed).unwrap();
        for e in &run.events {
            if !e.background {
                prop_assert!(!e.passed_polarizer || e.collected);
                prop_assert!(!e.detected || e.passed_polarizer);
            }
            prop_assert_eq!(e.detected || e.background, e.detector.is_some());
        }
        let s = &run.summary;
        prop_assert!(s.detected <= s.passed_polarizer + s.background);
        prop_assert!(s.passed_polarizer <= s.collected);
    }
}
