//! Photon-collection physics of a trapped ion imaged by an integrated
//! diffractive mirror: dipole emission capture, diffractive imaging,
//! single-mode fiber coupling, a Monte Carlo triggered single-photon
//! protocol, pulsed g²(τ) analysis and efficiency budgets.

pub mod budget;
pub mod config;
pub mod correlation;
pub mod diffractive;
pub mod error;
pub mod fibercoupling;
pub mod io;
pub mod numerics;
pub mod protocol;
pub mod radiometry;

pub use error::{Error, Result};
