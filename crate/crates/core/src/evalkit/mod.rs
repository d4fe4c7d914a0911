//! Evaluation metrics, a versioned report format and a deterministic
//! synthetic traffic generator.

mod metrics;
mod report;
mod synth;

use thiserror::Error;

pub use metrics::{
    accuracy, ece, fraction_above, ks_uniform, micro_f1, ClassScores, ConfusionMatrix,
    DEFAULT_ECE_BINS,
};
pub use report::{EvalReport, OodSummary};
pub use synth::{
    default_profiles, generate_connection, generate_connections, generate_profile,
    generate_synthetic, generate_windows, write_profile_pcap, Duplex, Exchange, Pattern, SizeDist,
    SynthProfile,
};

#[derive(Debug, Error, PartialEq)]
pub enum EvalError {
    #[error("length mismatch: {left} vs {right}")]
    LengthMismatch { left: usize, right: usize },
    #[error("no examples")]
    Empty,
    #[error("unknown label {0}")]
    UnknownLabel(String),
    #[error("confidence {0} outside [0, 1]")]
    ConfidenceOutOfRange(f64),
    #[error("number of bins must be positive")]
    ZeroBins,
    #[error("report line {line}: {reason}")]
    BadReport { line: usize, reason: String },
    #[error("synthetic generation needs at least 2 profiles, got {0}")]
    TooFewProfiles(usize),
}
