use thiserror::Error;

/// Errors raised by the analytic and simulation layers.
///
/// Protocol aborts are *not* errors: an abort is a legitimate outcome carried
/// inside a report. These variants cover misuse of the library surface
/// (out-of-range parameters, inconsistent inputs) and internal invariant
/// violations.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("probabilities ({p_i}, {p_x}, {p_y}, {p_z}) do not form a Pauli rate vector: {reason}")]
    InvalidRates {
        p_i: f64,
        p_x: f64,
        p_y: f64,
        p_z: f64,
        reason: String,
    },

    #[error("bit error rate {0} outside [0, 2/3] for a depolarizing channel")]
    BitErrorOutOfRange(f64),

    #[error("PEC width {0} must be an odd integer >= 3")]
    InvalidPecWidth(u64),

    #[error("binomial tail bound requires 0 < lambda < p < 1, got lambda={lambda}, p={p}")]
    TailBoundOrdering { lambda: f64, p: f64 },

    #[error("post-PEC error {0} is at or above the Steane threshold {1}")]
    AboveSteaneThreshold(f64, f64),

    #[error("frame of length {len} too short: need {needed}")]
    FrameTooShort { len: usize, needed: usize },

    #[error("bracket [{lo}, {hi}] does not straddle the feasibility boundary")]
    BadBracket { lo: f64, hi: f64 },

    #[error("internal invariant violated: {0}")]
    Internal(String),
}
