use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Circularly polarized drive beam.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Beam {
    SigmaPlus,
    SigmaMinus,
}

/// Beam switched on for part of a stage; `start_ns` is measured from the
/// stage start.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Pulse {
    pub beam: Beam,
    pub start_ns: f64,
    pub duration_ns: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Stage {
    pub name: String,
    pub duration_ns: f64,
    /// Beams on for the whole stage.
    #[serde(default)]
    pub beams: Vec<Beam>,
    #[serde(default)]
    pub pulses: Vec<Pulse>,
    /// Detection gate open for the whole stage.
    #[serde(default)]
    pub gate: bool,
    /// Probability that the ion leaves the stage in the other ground state.
    #[serde(default)]
    pub pump_failure: f64,
}

impl Stage {
    pub fn new(name: &str, duration_ns: f64, beams: &[Beam]) -> Self {
        Stage {
            name: name.into(),
            duration_ns,
            beams: beams.to_vec(),
            pulses: Vec::new(),
            gate: false,
            pump_failure: 0.0,
        }
    }

    /// Driven by a single continuous beam: every scatter sequence is an
    /// optical-pumping sequence.
    pub fn is_pumping(&self) -> bool {
        self.beams.len() == 1 && self.pulses.is_empty()
    }
}

/// Interval of constant drive inside one cycle.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Segment {
    pub stage: usize,
    pub start_ns: f64,
    pub end_ns: f64,
    pub sigma_plus: bool,
    pub sigma_minus: bool,
    pub gate: bool,
}

/// One protocol cycle, repeated once per trial.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PulseSequence {
    pub stages: Vec<Stage>,
}

impl Default for PulseSequence {
    fn default() -> Self {
        Self::published()
    }
}

impl PulseSequence {
    /// Cool, pump, wait, detect, then idle to a 3.25 µs cycle.
    pub fn published() -> Self {
        let mut detect = Stage::new("detect", 1000.0, &[]);
        detect.gate = true;
        detect.pulses.push(Pulse {
            beam: Beam::SigmaPlus,
            start_ns: 250.0,
            duration_ns: 250.0,
        });
        PulseSequence {
            stages: vec![
                Stage::new("cool", 500.0, &[Beam::SigmaPlus, Beam::SigmaMinus]),
                Stage::new("pump", 500.0, &[Beam::SigmaMinus]),
                Stage::new("wait", 750.0, &[]),
                detect,
                Stage::new("idle", 500.0, &[]),
            ],
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.stages.is_empty() {
            return Err(Error::precondition("pulse sequence has no stages"));
        }
        for (i, s) in self.stages.iter().enumerate() {
            let at = |m: &str| Error::config(format!("protocol.stages[{i}]"), m);
            if !(s.duration_ns > 0.0 && s.duration_ns.is_finite()) {
                return Err(at("duration_ns must be > 0"));
            }
            if !(0.0..=1.0).contains(&s.pump_failure) {
                return Err(at("pump_failure must be in [0, 1]"));
            }
            for p in &s.pulses {
                if !(p.start_ns >= 0.0 && p.duration_ns > 0.0 && p.start_ns + p.duration_ns <= s.duration_ns) {
                    return Err(at("pulse must lie inside its stage"));
                }
            }
        }
        Ok(())
    }

    pub fn cycle_ns(&self) -> f64 {
        self.stages.iter().map(|s| s.duration_ns).sum()
    }

    pub fn repetition_rate_hz(&self) -> f64 {
        1e9 / self.cycle_ns()
    }

    /// Open-gate time per cycle.
    pub fn gate_ns(&self) -> f64 {
        self.stages.iter().filter(|s| s.gate).map(|s| s.duration_ns).sum()
    }

    /// Gate windows within one cycle, relative to its start.
    pub fn gate_windows(&self) -> Vec<(f64, f64)> {
        let mut t = 0.0;
        let mut out = Vec::new();
        for s in &self.stages {
            if s.gate {
                out.push((t, t + s.duration_ns));
            }
            t += s.duration_ns;
        }
        out
    }

    /// Piecewise-constant drive over one cycle.
    pub fn segments(&self) -> Vec<Segment> {
        let mut out = Vec::new();
        let mut t0 = 0.0;
        for (i, s) in self.stages.iter().enumerate() {
            let mut cuts = vec![0.0, s.duration_ns];
            for p in &s.pulses {
                cuts.push(p.start_ns);
                cuts.push(p.start_ns + p.duration_ns);
            }
            cuts.sort_by(f64::total_cmp);
            cuts.dedup();
            for w in cuts.windows(2) {
                let mid = 0.5 * (w[0] + w[1]);
                let on = |b: Beam| {
                    s.beams.contains(&b)
                        || s.pulses
                            .iter()
                            .any(|p| p.beam == b && mid > p.start_ns && mid < p.start_ns + p.duration_ns)
                };
                out.push(Segment {
                    stage: i,
                    start_ns: t0 + w[0],
                    end_ns: t0 + w[1],
                    sigma_plus: on(Beam::SigmaPlus),
                    sigma_minus: on(Beam::SigmaMinus),
                    gate: s.gate,
                });
            }
            t0 += s.duration_ns;
        }
        out
    }
}
