//! Simulated RMSE scoring oracle with a submission budget.
//!
//! The oracle holds the hidden label vector, answers each submission with its
//! root-mean-squared error (optionally quantized to a fixed number of decimal
//! digits, the way leaderboards display scores), decrements the budget and
//! appends to the submission log. The score is the only channel out: nothing
//! else about the labels is observable without the `instrumentation` feature.
//!
//! Scores are computed exactly. The squared error is an integer sum over a
//! common decimal scale, so a reading in exact mode carries the full real
//! RMSE (as its exact square), and quantized readings are correctly rounded
//! half-to-even — no f64 round-off sneaks into the reported score.

use std::fmt;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;
use std::str::FromStr;

use num_bigint::{BigInt, BigUint};
use num_rational::BigRational;
use num_traits::{ToPrimitive, Zero};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::numeric::{
    max_scale, pow10_int, pow10_uint, rational_from_f64, rational_sqrt_f64, rational_to_f64,
    round_half_even_sqrt, Decimal,
};

#[derive(Debug, Error)]
pub enum OracleError {
    #[error("label {index} lies outside the declared bounds")]
    LabelOutOfBounds { index: usize },
    #[error("ground truth must contain at least one label")]
    EmptyLabels,
    #[error("bounds must be finite with lo <= hi")]
    InvalidBounds,
    #[error("quantized mode requires between 1 and 15 decimal digits, got {digits}")]
    InvalidConfig { digits: u8 },
    #[error("submission budget exhausted")]
    BudgetExhausted,
    #[error("submission has {got} entries, oracle expects {expected}")]
    LengthMismatch { expected: usize, got: usize },
    #[error("submission entry {index} is not finite")]
    NonFiniteEntry { index: usize },
    #[error("submission log I/O failed")]
    Io(#[from] std::io::Error),
}

/// Inclusive label bounds, in label units.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Bounds {
    pub lo: f64,
    pub hi: f64,
}

impl Bounds {
    pub fn new(lo: f64, hi: f64) -> Result<Self, OracleError> {
        if !(lo.is_finite() && hi.is_finite() && lo <= hi) {
            return Err(OracleError::InvalidBounds);
        }
        Ok(Bounds { lo, hi })
    }

    pub fn contains(&self, value: &Decimal) -> bool {
        let v = value.to_rational();
        let lo = rational_from_f64(self.lo).expect("bounds are finite");
        let hi = rational_from_f64(self.hi).expect("bounds are finite");
        lo <= v && v <= hi
    }

    pub fn clamp(&self, x: f64) -> f64 {
        x.max(self.lo).min(self.hi)
    }
}

/// The hidden label vector together with its bounds.
#[derive(Debug, Clone)]
pub struct GroundTruth {
    labels: Vec<Decimal>,
    bounds: Bounds,
}

impl GroundTruth {
    pub fn new(labels: Vec<Decimal>, bounds: Bounds) -> Result<Self, OracleError> {
        if labels.is_empty() {
            return Err(OracleError::EmptyLabels);
        }
        for (index, label) in labels.iter().enumerate() {
            if !bounds.contains(label) {
                return Err(OracleError::LabelOutOfBounds { index });
            }
        }
        Ok(GroundTruth { labels, bounds })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn bounds(&self) -> Bounds {
        self.bounds
    }

    pub fn labels(&self) -> &[Decimal] {
        &self.labels
    }
}

/// How the oracle reports scores.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ScoreMode {
    /// Full-precision RMSE.
    Exact,
    /// RMSE rounded half-to-even to `digits` fractional decimal digits.
    Quantized { digits: u8 },
}

impl ScoreMode {
    /// Half of the quantization step: the worst-case rounding error of a
    /// reported score (0 in exact mode).
    pub fn half_step(&self) -> f64 {
        match self {
            ScoreMode::Exact => 0.0,
            ScoreMode::Quantized { digits } => 0.5 * 10f64.powi(-(*digits as i32)),
        }
    }

    pub fn is_exact(&self) -> bool {
        matches!(self, ScoreMode::Exact)
    }
}

impl fmt::Display for ScoreMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ScoreMode::Exact => f.write_str("exact"),
            ScoreMode::Quantized { digits } => write!(f, "quantized:{digits}"),
        }
    }
}

impl FromStr for ScoreMode {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        if s == "exact" {
            return Ok(ScoreMode::Exact);
        }
        if let Some(d) = s.strip_prefix("quantized:") {
            let digits: u8 = d.parse().map_err(|_| format!("bad digit count {d:?}"))?;
            return Ok(ScoreMode::Quantized { digits });
        }
        Err(format!("expected \"exact\" or \"quantized:<d>\", got {s:?}"))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct OracleConfig {
    pub mode: ScoreMode,
    pub budget: u32,
}

impl OracleConfig {
    pub fn new(mode: ScoreMode, budget: u32) -> Result<Self, OracleError> {
        if let ScoreMode::Quantized { digits } = mode {
            if !(1..=15).contains(&digits) {
                return Err(OracleError::InvalidConfig { digits });
            }
        }
        Ok(OracleConfig { mode, budget })
    }
}

/// The reported score of one submission.
#[derive(Debug, Clone, PartialEq)]
pub struct OracleReading {
    pub submission_index: u32,
    pub mode: ScoreMode,
    value: ReadingValue,
}

#[derive(Debug, Clone, PartialEq)]
enum ReadingValue {
    /// Exact mode carries the full-precision score as its exact square.
    Exact { rmse_sq: BigRational },
    /// Quantized mode carries the rounded score `units / 10^digits` exactly.
    Quantized { units: BigUint, digits: u8 },
}

impl OracleReading {
    /// The reported RMSE as an f64 view (may be `inf` for extreme scores).
    pub fn rmse(&self) -> f64 {
        match &self.value {
            ReadingValue::Exact { rmse_sq } => rational_sqrt_f64(rmse_sq),
            ReadingValue::Quantized { units, digits } => rational_to_f64(&BigRational::new(
                BigInt::from(units.clone()),
                pow10_int(*digits as u32),
            )),
        }
    }

    /// Exact square of the reported value. In exact mode this is SE/n itself;
    /// in quantized mode it is the square of the rounded score.
    pub fn rmse_sq(&self) -> BigRational {
        match &self.value {
            ReadingValue::Exact { rmse_sq } => rmse_sq.clone(),
            ReadingValue::Quantized { units, digits } => {
                let u = BigInt::from(units.clone());
                BigRational::new(&u * &u, pow10_int(2 * *digits as u32))
            }
        }
    }

    pub fn is_zero(&self) -> bool {
        match &self.value {
            ReadingValue::Exact { rmse_sq } => rmse_sq.is_zero(),
            ReadingValue::Quantized { units, .. } => units.is_zero(),
        }
    }

    /// Deterministic decimal rendering for logs and reports. Quantized scores
    /// render with their exact digits; exact scores as shortest-roundtrip f64.
    pub fn render_rmse(&self) -> String {
        match &self.value {
            ReadingValue::Exact { .. } => format!("{:e}", self.rmse()),
            ReadingValue::Quantized { units, digits } => {
                Decimal::new(BigInt::from(units.clone()), *digits as u32).render()
            }
        }
    }
}

/// A submission: a vector of exact decimals plus its content digest.
#[derive(Debug, Clone, PartialEq)]
pub struct Submission {
    entries: Vec<Decimal>,
    digest: String,
}

impl Submission {
    pub fn from_decimals(entries: Vec<Decimal>) -> Self {
        let digest = digest_of(&entries);
        Submission { entries, digest }
    }

    pub fn from_f64s(values: &[f64]) -> Result<Self, OracleError> {
        let entries = values
            .iter()
            .enumerate()
            .map(|(index, &v)| {
                Decimal::from_f64_exact(v).map_err(|_| OracleError::NonFiniteEntry { index })
            })
            .collect::<Result<Vec<_>, _>>()?;
        Ok(Self::from_decimals(entries))
    }

    pub fn zeros(n: usize) -> Self {
        Self::from_decimals(vec![Decimal::zero(); n])
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn entries(&self) -> &[Decimal] {
        &self.entries
    }

    /// Hex SHA-256 of the canonical comma-joined decimal rendering.
    pub fn digest(&self) -> &str {
        &self.digest
    }
}

fn digest_of(entries: &[Decimal]) -> String {
    let mut hasher = Sha256::new();
    for (i, e) in entries.iter().enumerate() {
        if i > 0 {
            hasher.update(b",");
        }
        hasher.update(e.render().as_bytes());
    }
    hasher
        .finalize()
        .iter()
        .map(|b| format!("{b:02x}"))
        .collect()
}

/// One line of the submission log.
#[derive(Debug, Clone)]
pub struct SubmissionRecord {
    pub index: u32,
    pub digest: String,
    pub reading: OracleReading,
    pub tag: String,
}

impl SubmissionRecord {
    fn log_line(&self) -> String {
        serde_json::json!({
            "index": self.index,
            "digest": self.digest,
            "rmse": self.reading.render_rmse(),
            "mode": self.reading.mode.to_string(),
            "tag": self.tag,
        })
        .to_string()
    }
}

/// The scoring oracle. `evaluate` is the single mutating entry point; callers
/// must serialize it externally (single-writer).
#[derive(Debug)]
pub struct Oracle {
    truth: GroundTruth,
    config: OracleConfig,
    log: Vec<SubmissionRecord>,
}

impl Oracle {
    pub fn new(truth: GroundTruth, config: OracleConfig) -> Self {
        Oracle { truth, config, log: Vec::new() }
    }

    /// Convenience constructor from raw parts.
    pub fn create(
        labels: Vec<Decimal>,
        bounds: Bounds,
        config: OracleConfig,
    ) -> Result<Self, OracleError> {
        Ok(Self::new(GroundTruth::new(labels, bounds)?, config))
    }

    pub fn n(&self) -> usize {
        self.truth.len()
    }

    pub fn bounds(&self) -> Bounds {
        self.truth.bounds()
    }

    pub fn mode(&self) -> ScoreMode {
        self.config.mode
    }

    pub fn config(&self) -> OracleConfig {
        self.config
    }

    pub fn remaining_budget(&self) -> u32 {
        self.config.budget - self.log.len() as u32
    }

    pub fn submissions_made(&self) -> u32 {
        self.log.len() as u32
    }

    pub fn log(&self) -> &[SubmissionRecord] {
        &self.log
    }

    /// Hidden labels, for assertions only. Attack code must not call this.
    #[cfg(any(test, feature = "instrumentation"))]
    pub fn ground_truth_labels(&self) -> &[Decimal] {
        self.truth.labels()
    }

    /// Score a submission: exact RMSE per definition, rounded half-to-even in
    /// quantized mode. Consumes one unit of budget and appends to the log.
    /// Submissions are not required to lie within the label bounds.
    pub fn evaluate(
        &mut self,
        submission: &Submission,
        tag: &str,
    ) -> Result<OracleReading, OracleError> {
        if self.remaining_budget() == 0 {
            return Err(OracleError::BudgetExhausted);
        }
        if submission.len() != self.truth.len() {
            return Err(OracleError::LengthMismatch {
                expected: self.truth.len(),
                got: submission.len(),
            });
        }

        let n = self.truth.len();
        let labels = self.truth.labels();
        let t = max_scale(submission.entries()).max(max_scale(labels));
        let mut se_units = BigUint::zero();
        for (a, b) in submission.entries().iter().zip(labels) {
            let d = a.units_at_scale(t) - b.units_at_scale(t);
            se_units += (&d * &d).to_biguint().expect("square is nonnegative");
        }
        // SE = se_units / 10^(2t); rmse^2 = SE / n
        let value = match self.config.mode {
            ScoreMode::Exact => ReadingValue::Exact {
                rmse_sq: BigRational::new(
                    BigInt::from(se_units),
                    BigInt::from(n) * pow10_int(2 * t),
                ),
            },
            ScoreMode::Quantized { digits } => {
                let p = se_units * pow10_uint(2 * digits as u32);
                let q = BigUint::from(n) * pow10_uint(2 * t);
                ReadingValue::Quantized { units: round_half_even_sqrt(&p, &q), digits }
            }
        };
        let reading = OracleReading {
            submission_index: self.log.len() as u32 + 1,
            mode: self.config.mode,
            value,
        };
        self.log.push(SubmissionRecord {
            index: reading.submission_index,
            digest: submission.digest().to_string(),
            reading: reading.clone(),
            tag: tag.to_string(),
        });
        Ok(reading)
    }

    /// Convenience wrapper: build the submission from f64s and score it.
    pub fn evaluate_f64s(&mut self, values: &[f64], tag: &str) -> Result<OracleReading, OracleError> {
        let submission = Submission::from_f64s(values)?;
        self.evaluate(&submission, tag)
    }

    /// Write the submission log as line-delimited JSON; returns the record count.
    pub fn export_log(&self, destination: &Path) -> Result<usize, OracleError> {
        let mut out = BufWriter::new(File::create(destination)?);
        for record in &self.log {
            writeln!(out, "{}", record.log_line())?;
        }
        out.flush()?;
        Ok(self.log.len())
    }
}
