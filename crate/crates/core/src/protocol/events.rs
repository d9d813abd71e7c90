//! Photon event records and their CSV and binary encodings.
//!
//! Binary layout, little-endian: an 8-byte magic `IONEVT01`, a `u64` record
//! count, then 24-byte records
//!
//! | offset | type | field |
//! |---|---|---|
//! | 0 | u64 | trial |
//! | 8 | f64 | time_ns |
//! | 16 | u8 | kind: 0 π, 1 σ⁺, 2 σ⁻ |
//! | 17 | u8 | detector: 0 none, 1, 2 |
//! | 18 | u8 | flags: bit 0 collected, 1 passed polarizer, 2 background, 3 detected |
//! | 19 | 5 × u8 | zero |

use std::io::{BufRead, Read, Write};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::radiometry::TransitionKind;

pub const MAGIC: &[u8; 8] = b"IONEVT01";
pub const RECORD_BYTES: usize = 24;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PhotonEvent {
    pub trial: u64,
    /// Absolute time, `trial × cycle + offset`.
    pub time_ns: f64,
    /// Emitting transition; for background counts, the laser polarization.
    pub kind: TransitionKind,
    pub collected: bool,
    pub passed_polarizer: bool,
    pub detected: bool,
    pub detector: Option<u8>,
    pub background: bool,
}

impl PhotonEvent {
    pub fn emitted(trial: u64, time_ns: f64, kind: TransitionKind) -> Self {
        PhotonEvent {
            trial,
            time_ns,
            kind,
            collected: false,
            passed_polarizer: false,
            detected: false,
            detector: None,
            background: false,
        }
    }
}

fn kind_code(k: TransitionKind) -> u8 {
    match k {
        TransitionKind::Pi => 0,
        TransitionKind::SigmaPlus => 1,
        TransitionKind::SigmaMinus => 2,
    }
}

fn kind_from(code: u8) -> Result<TransitionKind> {
    Ok(match code {
        0 => TransitionKind::Pi,
        1 => TransitionKind::SigmaPlus,
        2 => TransitionKind::SigmaMinus,
        _ => return Err(Error::Format(format!("unknown transition code {code}"))),
    })
}

pub fn write_binary<W: Write>(mut out: W, events: &[PhotonEvent]) -> Result<()> {
    out.write_all(MAGIC)?;
    out.write_all(&(events.len() as u64).to_le_bytes())?;
    for e in events {
        let mut rec = [0u8; RECORD_BYTES];
        rec[0..8].copy_from_slice(&e.trial.to_le_bytes());
        rec[8..16].copy_from_slice(&e.time_ns.to_le_bytes());
        rec[16] = kind_code(e.kind);
        rec[17] = e.detector.unwrap_or(0);
        rec[18] = e.collected as u8
            | (e.passed_polarizer as u8) << 1
            | (e.background as u8) << 2
            | (e.detected as u8) << 3;
        out.write_all(&rec)?;
    }
    Ok(())
}

pub fn read_binary<R: Read>(mut input: R) -> Result<Vec<PhotonEvent>> {
    let mut head = [0u8; 16];
    input.read_exact(&mut head).map_err(|_| Error::Format("truncated event header".into()))?;
    if &head[0..8] != MAGIC {
        return Err(Error::Format("not an event file (bad magic)".into()));
    }
    let n = u64::from_le_bytes(head[8..16].try_into().unwrap_or_default());
    let mut events = Vec::with_capacity(n.min(1 << 24) as usize);
    let mut rec = [0u8; RECORD_BYTES];
    for i in 0..n {
        input
            .read_exact(&mut rec)
            .map_err(|_| Error::Format(format!("truncated at record {i} of {n}")))?;
        let detector = match rec[17] {
            0 => None,
            d @ (1 | 2) => Some(d),
            d => return Err(Error::Format(format!("record {i}: detector {d}"))),
        };
        events.push(PhotonEvent {
            trial: u64::from_le_bytes(rec[0..8].try_into().unwrap_or_default()),
            time_ns: f64::from_le_bytes(rec[8..16].try_into().unwrap_or_default()),
            kind: kind_from(rec[16])?,
            collected: rec[18] & 1 != 0,
            passed_polarizer: rec[18] & 2 != 0,
            background: rec[18] & 4 != 0,
            detected: rec[18] & 8 != 0,
            detector,
        });
    }
    Ok(events)
}

pub const CSV_HEADER: &str = "trial,time_ns,kind,detector,collected,passed_polarizer,detected,background";

pub fn write_csv<W: Write>(mut out: W, events: &[PhotonEvent]) -> Result<()> {
    writeln!(out, "{CSV_HEADER}")?;
    for e in events {
        writeln!(
            out,
            "{},{},{},{},{},{},{},{}",
            e.trial,
            e.time_ns,
            e.kind.label(),
            e.detector.unwrap_or(0),
            e.collected as u8,
            e.passed_polarizer as u8,
            e.detected as u8,
            e.background as u8
        )?;
    }
    Ok(())
}

pub fn read_csv<R: BufRead>(input: R) -> Result<Vec<PhotonEvent>> {
    let mut lines = input.lines();
    let header = lines.next().transpose()?;
    if header.as_deref().map(str::trim) != Some(CSV_HEADER) {
        return Err(Error::Format("missing event CSV header".into()));
    }
    let mut out = Vec::new();
    for (n, line) in lines.enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let bad = || Error::Format(format!("event CSV line {}: `{line}`", n + 2));
        let f: Vec<&str> = line.split(',').map(str::trim).collect();
        if f.len() != 8 {
            return Err(bad());
        }
        let flag = |s: &str| match s {
            "0" => Ok(false),
            "1" => Ok(true),
            _ => Err(bad()),
        };
        let kind = [TransitionKind::Pi, TransitionKind::SigmaPlus, TransitionKind::SigmaMinus]
            .into_iter()
            .find(|k| k.label() == f[2])
            .ok_or_else(bad)?;
        let detector = match f[3] {
            "0" => None,
            "1" => Some(1),
            "2" => Some(2),
            _ => return Err(bad()),
        };
        out.push(PhotonEvent {
            trial: f[0].parse().map_err(|_| bad())?,
            time_ns: f[1].parse().map_err(|_| bad())?,
            kind,
            detector,
            collected: flag(f[4])?,
            passed_polarizer: flag(f[5])?,
            detected: flag(f[6])?,
            background: flag(f[7])?,
        });
    }
    Ok(out)
}
