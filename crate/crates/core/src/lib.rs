//! Post-processing toolkit for the six-state quantum key distribution scheme
//! with adaptive two-way privacy amplification.
//!
//! The toolkit has four parts that check each other:
//!
//! - [`maps`]: closed-form error-rate dynamics of the two-way entanglement
//!   purification step (EP), the `[r,1,r]` phase error correction step (PEC),
//!   and the concatenated Steane-code stage, together with the classical
//!   binomial tail bound the analysis rests on.
//! - [`planner`]: adaptive schedule selection — how many EP rounds `k`, which
//!   odd PEC width `r`, and how many Steane concatenation levels `L` — plus
//!   threshold and yield analysis for depolarizing channels.
//! - [`sim`]: a Monte Carlo Pauli-frame simulator of the full protocol
//!   (sifting, rate estimation, EP rounds, PEC, concatenated Steane decoding,
//!   key finalization) used to cross-validate the analytic maps.
//! - [`session`]: a two-party (Alice/Bob) execution of the classical
//!   post-processing as an explicit message exchange with a byte-exact,
//!   replayable transcript.
//!
//! All randomness is derived from explicit seeds via [`seed::stage_rng`], so
//! every simulation, session, and transcript is reproducible bit for bit.

pub mod error;
pub mod maps;
pub mod pauli;
pub mod planner;
pub mod seed;
pub mod session;
pub mod sim;

pub use error::Error;
pub use pauli::{depolarizing, sample_frame, ErrorFrame, PauliLabel, PauliRates};
