//! Monte Carlo model of the triggered single-photon protocol.

pub mod events;
pub mod rates;
pub mod sequence;
pub mod simulation;

pub use events::PhotonEvent;
pub use sequence::{Beam, Pulse, PulseSequence, Stage};
pub use simulation::{
    add_background, run_protocol, sample_detection, split_detectors, DetectionChain, Gate, IonState, KindFactor,
    ProtocolParams, ProtocolRun, ProtocolSummary, Recording, Repump, StageStats,
};
