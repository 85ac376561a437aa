//! Leaderboard red-teaming toolkit.
//!
//! Simulates an RMSE scoring oracle with a submission budget and optional
//! score quantization, and implements three probing attacks against it:
//!
//! - **mean-value**: learn segment means from indicator submissions, then
//!   improve any candidate by projecting each segment onto its known mean
//!   under the label bounds;
//! - **linear-regression**: learn the correlation of a basis with the hidden
//!   labels and submit the least-squares optimal combination, predicting its
//!   score before spending a submission on it;
//! - **finite-label**: when labels come from a finite, uniformly spaced value
//!   set, pack whole label segments into single scores with powers-of-radix
//!   submissions and decode them exactly.
//!
//! The `harness` module drives attack campaigns from JSON scenario configs
//! and writes reproducible reports; the `lbprobe` binary exposes it on the
//! command line.

pub mod finite;
pub mod harness;
pub mod linalg;
pub mod mean;
pub mod numeric;
pub mod oracle;
pub mod probe;
pub mod regression;

pub use oracle::{Bounds, GroundTruth, Oracle, OracleConfig, OracleReading, ScoreMode, Submission};
pub use probe::KnowledgeState;
