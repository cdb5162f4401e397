//! Real-time seizure early-warning engine.
//!
//! The processing chain mirrors a wearable front end followed by two parallel
//! analysis units:
//!
//! 1. [`ingest`] loads or synthesizes multi-channel EEG and cuts it into
//!    fixed-width windows of signature units.
//! 2. [`conditioning`] applies gain and band-pass filtering, scores each
//!    channel for heavy-tailed artifacts against an autoregressive prediction
//!    and decomposes it with a discrete wavelet transform.
//! 3. [`signature`] compresses the wavelet coefficients into a 165-bit word.
//! 4. [`detector`] measures cross-channel synchronization and applies a
//!    threshold with a duration requirement.
//! 5. [`ais`] matches signatures against a negative-selection trained detector
//!    population that is refined by clonal selection.
//! 6. [`decision`] fuses both outputs into WARN / ALARM / CLEAR events and feeds
//!    confirmed seizures back into the population.
//!
//! [`pipeline::Engine`] wires the stages together and [`eval`] scores runs
//! against annotations.

pub mod ais;
pub mod conditioning;
pub mod config;
pub mod decision;
pub mod detector;
pub mod error;
pub mod eval;
pub mod ingest;
pub mod par;
pub mod pipeline;
pub mod signature;

pub use config::EngineConfig;
pub use error::{Error, Result};
