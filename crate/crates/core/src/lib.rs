//! Simulation of dimension-reduced channel feedback for RIS-assisted FDD
//! multi-user downlink.
//!
//! * [`channel`]: geometric BS-RIS, RIS-UE and cascaded channels.
//! * [`angular`]: AoD dictionary and the hybrid-domain representation.
//! * [`codec`]: three-step feedback, subspace codebooks, payload layout and
//!   bit accounting.
//! * [`beamforming`]: cross-entropy RIS phase search, zero forcing and
//!   rate evaluation.
//! * [`harness`]: Monte-Carlo points, sweeps and CSV tables.

pub mod angular;
pub mod beamforming;
pub mod channel;
pub mod codec;
pub mod config;
pub mod error;
pub mod harness;
pub mod linalg;

pub use config::SystemConfig;
pub use error::{Error, Result};
