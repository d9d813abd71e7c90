use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Exp1, Poisson};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::events::PhotonEvent;
use super::sequence::{PulseSequence, Segment};
use crate::budget::EfficiencyStage;
use crate::error::{Error, Result};
use crate::radiometry::TransitionKind;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum IonState {
    /// S½, m = −½.
    GroundMinus,
    /// S½, m = +½.
    GroundPlus,
    /// Metastable D[3/2].
    DarkD32,
}

/// Per-transition factor (collection fraction or polarizer transmission).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct KindFactor {
    pub pi: f64,
    pub sigma: f64,
}

impl KindFactor {
    pub fn get(&self, kind: TransitionKind) -> f64 {
        if kind.is_sigma() {
            self.sigma
        } else {
            self.pi
        }
    }
}

/// Everything between an emitted photon and a detector click.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DetectionChain {
    pub collection: KindFactor,
    pub polarizer: KindFactor,
    /// Kind-independent stages after the polarizer, applied in order.
    pub stages: Vec<EfficiencyStage>,
    /// Background counts per second (both detectors) while a gate is open.
    #[serde(default)]
    pub background_rate_hz: f64,
}

impl Default for DetectionChain {
    fn default() -> Self {
        Self::published()
    }
}

impl DetectionChain {
    /// Loss chain of the 184,000-trial collection measurement.
    pub fn published() -> Self {
        DetectionChain {
            collection: KindFactor { pi: 0.174, sigma: 0.113 },
            polarizer: KindFactor { pi: 1.0, sigma: 0.0 },
            stages: vec![
                EfficiencyStage { name: "diffraction".into(), value: 0.333, relative_uncertainty: 0.0 },
                EfficiencyStage { name: "iris".into(), value: 0.50, relative_uncertainty: 0.1 },
                EfficiencyStage { name: "other optics".into(), value: 0.76, relative_uncertainty: 0.0 },
                EfficiencyStage { name: "detector QE".into(), value: 0.19, relative_uncertainty: 0.0 },
            ],
            background_rate_hz: 0.0,
        }
    }

    pub fn ideal() -> Self {
        DetectionChain {
            collection: KindFactor { pi: 1.0, sigma: 1.0 },
            polarizer: KindFactor { pi: 1.0, sigma: 0.0 },
            stages: Vec::new(),
            background_rate_hz: 0.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("collection.pi", self.collection.pi),
            ("collection.sigma", self.collection.sigma),
            ("polarizer.pi", self.polarizer.pi),
            ("polarizer.sigma", self.polarizer.sigma),
        ] {
            if !(0.0..=1.0).contains(&v) {
                return Err(Error::config(format!("chain.{name}"), "must be in [0, 1]"));
            }
        }
        for (i, s) in self.stages.iter().enumerate() {
            s.validate().map_err(|e| Error::config(format!("chain.stages[{i}]"), e.to_string()))?;
        }
        if !(self.background_rate_hz >= 0.0 && self.background_rate_hz.is_finite()) {
            return Err(Error::config("chain.background_rate_hz", "must be >= 0"));
        }
        Ok(())
    }

    /// Closed-form probability that an in-gate photon of `kind` is detected.
    pub fn detection_probability(&self, kind: TransitionKind) -> f64 {
        self.collection.get(kind) * self.polarizer.get(kind) * self.stages.iter().map(|s| s.value).product::<f64>()
    }
}

/// Return path out of the dark state.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "mode", deny_unknown_fields)]
pub enum Repump {
    /// Repumper always on; exponential delay with this mean (0 = instant).
    Continuous { mean_delay_ns: f64 },
    /// Stays dark until the cycle ends.
    CycleBoundary,
}

/// Which events a run keeps.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Recording {
    /// Every emission inside an open gate, plus background.
    #[default]
    GateEmissions,
    /// Detected events only.
    DetectedOnly,
    None,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProtocolParams {
    pub scattering_rate_per_us: f64,
    pub p_dark: f64,
    pub repump: Repump,
    /// Fraction of the σ⁺ beam power in the wrong polarization; it drives
    /// the m = +½ ground state at `impurity × rate`.
    #[serde(default)]
    pub polarization_impurity: f64,
    #[serde(default)]
    pub recording: Recording,
}

impl Default for ProtocolParams {
    fn default() -> Self {
        ProtocolParams {
            scattering_rate_per_us: super::rates::saturated_rate_per_us(super::rates::YB_LINEWIDTH_HZ),
            p_dark: 0.005,
            repump: Repump::Continuous { mean_delay_ns: 0.0 },
            polarization_impurity: 0.0,
            recording: Recording::GateEmissions,
        }
    }
}

impl ProtocolParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.scattering_rate_per_us > 0.0 && self.scattering_rate_per_us.is_finite()) {
            return Err(Error::config("protocol.scattering_rate_per_us", "must be > 0"));
        }
        if !(0.0..=1.0).contains(&self.p_dark) {
            return Err(Error::config("protocol.p_dark", "must be in [0, 1]"));
        }
        if !(0.0..=1.0).contains(&self.polarization_impurity) {
            return Err(Error::config("protocol.polarization_impurity", "must be in [0, 1]"));
        }
        if let Repump::Continuous { mean_delay_ns } = self.repump {
            if !(mean_delay_ns >= 0.0 && mean_delay_ns.is_finite()) {
                return Err(Error::config("protocol.repump.mean_delay_ns", "must be >= 0"));
            }
        }
        Ok(())
    }
}

/// Scatter bookkeeping for one stage of the cycle.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StageStats {
    pub name: String,
    pub scatters: u64,
    /// Scatter sequences ended by a π decay inside the stage.
    pub completed_sequences: u64,
    /// Sequences cut short by the stage end or a dark-state decay.
    pub aborted_sequences: u64,
    /// `histogram[n]`: completed sequences of exactly `n` scatters.
    pub histogram: Vec<u64>,
}

impl StageStats {
    fn new(name: &str) -> Self {
        StageStats {
            name: name.into(),
            scatters: 0,
            completed_sequences: 0,
            aborted_sequences: 0,
            histogram: Vec::new(),
        }
    }

    pub fn mean_scatters(&self) -> Option<f64> {
        let (n, s) = self
            .histogram
            .iter()
            .enumerate()
            .fold((0u64, 0u64), |(n, s), (k, &c)| (n + c, s + k as u64 * c));
        (n > 0).then(|| s as f64 / n as f64)
    }

    fn merge(&mut self, other: &StageStats) {
        self.scatters += other.scatters;
        self.completed_sequences += other.completed_sequences;
        self.aborted_sequences += other.aborted_sequences;
        if self.histogram.len() < other.histogram.len() {
            self.histogram.resize(other.histogram.len(), 0);
        }
        for (a, b) in self.histogram.iter_mut().zip(&other.histogram) {
            *a += b;
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ProtocolSummary {
    pub seed: u64,
    pub trials: u64,
    pub cycle_ns: f64,
    pub repetition_rate_hz: f64,
    pub scatters: u64,
    pub dark_entries: u64,
    pub emitted_pi_in_gate: u64,
    pub emitted_sigma_in_gate: u64,
    pub collected: u64,
    pub passed_polarizer: u64,
    /// Detected source photons, background excluded.
    pub detected: u64,
    pub background: u64,
    /// Clicks per detector, background included.
    pub detector_counts: [u64; 2],
    /// Mean over the completed sequences of the optical-pumping stages.
    pub mean_scatters_per_pump_cycle: Option<f64>,
    pub stages: Vec<StageStats>,
    pub warnings: Vec<String>,
}

impl ProtocolSummary {
    fn empty(seq: &PulseSequence, seed: u64) -> Self {
        ProtocolSummary {
            seed,
            trials: 0,
            cycle_ns: seq.cycle_ns(),
            repetition_rate_hz: seq.repetition_rate_hz(),
            scatters: 0,
            dark_entries: 0,
            emitted_pi_in_gate: 0,
            emitted_sigma_in_gate: 0,
            collected: 0,
            passed_polarizer: 0,
            detected: 0,
            background: 0,
            detector_counts: [0; 2],
            mean_scatters_per_pump_cycle: None,
            stages: seq.stages.iter().map(|s| StageStats::new(&s.name)).collect(),
            warnings: Vec::new(),
        }
    }

    fn merge(&mut self, o: &ProtocolSummary) {
        self.trials += o.trials;
        self.scatters += o.scatters;
        self.dark_entries += o.dark_entries;
        self.emitted_pi_in_gate += o.emitted_pi_in_gate;
        self.emitted_sigma_in_gate += o.emitted_sigma_in_gate;
        self.collected += o.collected;
        self.passed_polarizer += o.passed_polarizer;
        self.detected += o.detected;
        self.background += o.background;
        self.detector_counts[0] += o.detector_counts[0];
        self.detector_counts[1] += o.detector_counts[1];
        for (a, b) in self.stages.iter_mut().zip(&o.stages) {
            a.merge(b);
        }
    }

    fn record(&mut self, e: &PhotonEvent) {
        if e.background {
            self.background += 1;
        } else {
            match e.kind {
                TransitionKind::Pi => self.emitted_pi_in_gate += 1,
                _ => self.emitted_sigma_in_gate += 1,
            }
            self.collected += e.collected as u64;
            self.passed_polarizer += e.passed_polarizer as u64;
            self.detected += e.detected as u64;
        }
        if let Some(d) = e.detector {
            self.detector_counts[d as usize - 1] += 1;
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ProtocolRun {
    /// Sorted by `(trial, time_ns)`.
    pub events: Vec<PhotonEvent>,
    pub summary: ProtocolSummary,
}

/// Bernoulli passage of `event` through collection, polarizer and the
/// remaining stages. Stops at the first loss.
pub fn sample_detection<R: Rng + ?Sized>(mut event: PhotonEvent, chain: &DetectionChain, rng: &mut R) -> PhotonEvent {
    event.collected = rng.random::<f64>() < chain.collection.get(event.kind);
    event.passed_polarizer = event.collected && rng.random::<f64>() < chain.polarizer.get(event.kind);
    event.detected = event.passed_polarizer && chain.stages.iter().all(|s| rng.random::<f64>() < s.value);
    event
}

fn assign_detector<R: Rng + ?Sized>(event: &mut PhotonEvent, rng: &mut R) {
    if event.detected || event.background {
        event.detector = Some(if rng.random::<bool>() { 1 } else { 2 });
    }
}

/// Sends every detected event through a 50/50 beamsplitter and returns the
/// two detector streams. Undetected events are dropped.
pub fn split_detectors<R: Rng + ?Sized>(
    stream: Vec<PhotonEvent>,
    rng: &mut R,
) -> (Vec<PhotonEvent>, Vec<PhotonEvent>) {
    let mut a = Vec::new();
    let mut b = Vec::new();
    for mut e in stream.into_iter().filter(|e| e.detected || e.background) {
        assign_detector(&mut e, rng);
        if e.detector == Some(1) {
            a.push(e);
        } else {
            b.push(e);
        }
    }
    (a, b)
}

/// Open detection window in absolute time.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Gate {
    pub trial: u64,
    pub start_ns: f64,
    pub end_ns: f64,
}

/// Appends Poisson background clicks spread uniformly over the gates; the
/// rate covers both detectors. Output is sorted by `(trial, time)`.
pub fn add_background<R: Rng + ?Sized>(
    mut stream: Vec<PhotonEvent>,
    rate_hz: f64,
    gates: &[Gate],
    rng: &mut R,
) -> Result<Vec<PhotonEvent>> {
    if !(rate_hz >= 0.0 && rate_hz.is_finite()) {
        return Err(Error::precondition("background rate must be >= 0"));
    }
    let total: f64 = gates.iter().map(|g| (g.end_ns - g.start_ns).max(0.0)).sum();
    if rate_hz == 0.0 || total == 0.0 {
        return Ok(stream);
    }
    let n = poisson(rate_hz * total * 1e-9, rng);
    for _ in 0..n {
        let mut u = rng.random::<f64>() * total;
        let gate = gates
            .iter()
            .find(|g| {
                let len = (g.end_ns - g.start_ns).max(0.0);
                if u < len {
                    true
                } else {
                    u -= len;
                    false
                }
            })
            .unwrap_or(&gates[gates.len() - 1]);
        let mut e = PhotonEvent::emitted(gate.trial, gate.start_ns + u, TransitionKind::SigmaPlus);
        e.background = true;
        assign_detector(&mut e, rng);
        stream.push(e);
    }
    stream.sort_by(|a, b| a.trial.cmp(&b.trial).then(a.time_ns.total_cmp(&b.time_ns)));
    Ok(stream)
}

fn poisson<R: Rng + ?Sized>(mean: f64, rng: &mut R) -> u64 {
    if mean <= 0.0 {
        return 0;
    }
    match Poisson::new(mean) {
        Ok(d) => rng.sample::<f64, _>(d) as u64,
        Err(_) => 0,
    }
}

fn random_ground<R: Rng + ?Sized>(rng: &mut R) -> IonState {
    if rng.random::<bool>() {
        IonState::GroundPlus
    } else {
        IonState::GroundMinus
    }
}

/// Excitation rate (1/ns) out of `state` under the drive of `seg`.
fn drive_rate(state: IonState, seg: &Segment, rate: f64, impurity: f64) -> f64 {
    match state {
        IonState::GroundMinus if seg.sigma_plus => rate,
        IonState::GroundPlus => {
            let mut r = 0.0;
            if seg.sigma_minus {
                r += rate;
            }
            if seg.sigma_plus {
                r += impurity * rate;
            }
            r
        }
        _ => 0.0,
    }
}

struct Sim<'a> {
    seq: &'a PulseSequence,
    segments: Vec<Segment>,
    chain: &'a DetectionChain,
    params: &'a ProtocolParams,
    gates: Vec<(f64, f64)>,
    cycle: f64,
}

impl Sim<'_> {
    fn trial(&self, seed: u64, trial: u64, acc: &mut ProtocolSummary, events: &mut Vec<PhotonEvent>) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(trial);
        let rate = self.params.scattering_rate_per_us * 1e-3;
        let origin = trial as f64 * self.cycle;
        let keep = self.params.recording;
        let mut state = random_ground(&mut rng);
        // (stage, scatters so far) of the running sequence
        let mut run: Option<(usize, usize)> = None;
        let first_event = events.len();

        for (si, seg) in self.segments.iter().enumerate() {
            let mut t = seg.start_ns;
            let stats_idx = seg.stage;
            if let Some((s, _)) = run.filter(|&(s, _)| s != stats_idx) {
                acc.stages[s].aborted_sequences += 1;
                run = None;
            }
            loop {
                if state == IonState::DarkD32 {
                    match self.params.repump {
                        Repump::CycleBoundary => break,
                        Repump::Continuous { mean_delay_ns } => {
                            let d = if mean_delay_ns > 0.0 {
                                mean_delay_ns * rng.sample::<f64, _>(Exp1)
                            } else {
                                0.0
                            };
                            if t + d >= seg.end_ns {
                                break;
                            }
                            t += d;
                            state = random_ground(&mut rng);
                        }
                    }
                }
                let r = drive_rate(state, seg, rate, self.params.polarization_impurity);
                if r <= 0.0 {
                    break;
                }
                let dt = rng.sample::<f64, _>(Exp1) / r;
                if t + dt >= seg.end_ns {
                    break;
                }
                t += dt;
                let stage = &mut acc.stages[stats_idx];
                stage.scatters += 1;
                acc.scatters += 1;
                let count = run.map_or(0, |(_, c)| c) + 1;
                if rng.random::<f64>() < self.params.p_dark {
                    state = IonState::DarkD32;
                    acc.dark_entries += 1;
                    stage.aborted_sequences += 1;
                    run = None;
                    continue;
                }
                let pi = rng.random::<f64>() < 1.0 / 3.0;
                let kind = match (state, pi) {
                    (_, true) => TransitionKind::Pi,
                    (IonState::GroundMinus, false) => TransitionKind::SigmaPlus,
                    _ => TransitionKind::SigmaMinus,
                };
                if pi {
                    state = match state {
                        IonState::GroundMinus => IonState::GroundPlus,
                        _ => IonState::GroundMinus,
                    };
                    if stage.histogram.len() <= count {
                        stage.histogram.resize(count + 1, 0);
                    }
                    stage.histogram[count] += 1;
                    stage.completed_sequences += 1;
                    run = None;
                } else {
                    run = Some((stats_idx, count));
                }
                if seg.gate {
                    let mut e = sample_detection(PhotonEvent::emitted(trial, origin + t, kind), self.chain, &mut rng);
                    assign_detector(&mut e, &mut rng);
                    acc.record(&e);
                    if keep == Recording::GateEmissions || (keep == Recording::DetectedOnly && e.detected) {
                        events.push(e);
                    }
                }
            }
            let last_of_stage = self.segments.get(si + 1).is_none_or(|n| n.stage != seg.stage);
            if last_of_stage {
                let p = self.seq.stages[seg.stage].pump_failure;
                if p > 0.0 && rng.random::<f64>() < p {
                    state = match state {
                        IonState::GroundMinus => IonState::GroundPlus,
                        IonState::GroundPlus => IonState::GroundMinus,
                        s => s,
                    };
                }
            }
        }
        if let Some((s, _)) = run {
            acc.stages[s].aborted_sequences += 1;
        }

        if self.chain.background_rate_hz > 0.0 {
            let gates: Vec<Gate> = self
                .gates
                .iter()
                .map(|&(a, b)| Gate { trial, start_ns: origin + a, end_ns: origin + b })
                .collect();
            let bg = add_background(Vec::new(), self.chain.background_rate_hz, &gates, &mut rng).unwrap_or_default();
            for e in bg {
                acc.record(&e);
                if keep != Recording::None {
                    events.push(e);
                }
            }
            events[first_event..].sort_by(|a, b| a.time_ns.total_cmp(&b.time_ns));
        }
        acc.trials += 1;
    }
}

const CHUNK: u64 = 4096;

/// Monte Carlo run of `trials` independent protocol cycles. Trial `i` draws
/// from stream `i` of a ChaCha8 generator seeded with `seed`, so results do
/// not depend on scheduling.
pub fn run_protocol(
    sequence: &PulseSequence,
    trials: u64,
    chain: &DetectionChain,
    params: &ProtocolParams,
    seed: u64,
) -> Result<ProtocolRun> {
    if trials == 0 {
        return Err(Error::precondition("trials must be >= 1"));
    }
    sequence.validate()?;
    chain.validate()?;
    params.validate()?;
    let sim = Sim {
        seq: sequence,
        segments: sequence.segments(),
        chain,
        params,
        gates: sequence.gate_windows(),
        cycle: sequence.cycle_ns(),
    };
    let chunks: Vec<(ProtocolSummary, Vec<PhotonEvent>)> = (0..trials.div_ceil(CHUNK))
        .into_par_iter()
        .map(|c| {
            let mut acc = ProtocolSummary::empty(sequence, seed);
            let mut events = Vec::new();
            for trial in c * CHUNK..((c + 1) * CHUNK).min(trials) {
                sim.trial(seed, trial, &mut acc, &mut events);
            }
            (acc, events)
        })
        .collect();
    let mut summary = ProtocolSummary::empty(sequence, seed);
    let mut events = Vec::new();
    for (acc, ev) in chunks {
        summary.merge(&acc);
        events.extend(ev);
    }
    let pumping: Vec<&StageStats> = sequence
        .stages
        .iter()
        .zip(&summary.stages)
        .filter(|(s, _)| s.is_pumping())
        .map(|(_, st)| st)
        .collect();
    let mut pooled = StageStats::new("pumping");
    for s in pumping {
        pooled.merge(s);
    }
    summary.mean_scatters_per_pump_cycle = pooled.mean_scatters();
    if sequence.gate_ns() <= 0.0 {
        summary.warnings.push("no detection gate in the sequence: nothing can be detected".into());
    }
    Ok(ProtocolRun { events, summary })
}
