//! Joint timing, carrier-frequency-offset, phase-noise and channel estimation
//! for hybrid mmWave MIMO-OFDM links, with hybrid Cramér-Rao bounds and
//! compressive recovery of the MIMO channel.
//!
//! Pipeline: [`channel`] draws a clustered channel, [`training`] builds the
//! frames, [`impairments`] propagates them, [`sync`] estimates per-frame
//! offsets, phase noise and beamformed channels, [`crlb`] evaluates the
//! bounds, [`csrec`] recovers the MIMO channel and [`harness`] drives sweeps.

pub mod channel;
pub mod crlb;
pub mod csrec;
pub mod error;
pub mod fixture;
pub mod harness;
pub mod impairments;
pub mod linalg;
pub mod rng;
pub mod scenario;
pub mod sync;
pub mod training;

pub use error::{Error, Result};
