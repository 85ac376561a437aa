//! Turning scores into inner products.
//!
//! One zero submission reveals the squared norm of the hidden labels. After
//! that, any submission's score can be decomposed into the inner product
//! between the submission and the labels: se = hat_y_sq + y_sq - 2*ip, so
//! ip = (hat_y_sq + y_sq - se) / 2. All central values are kept as exact
//! rationals; quantized oracles contribute a symmetric uncertainty interval
//! (half-width) propagated first-order in the rounding step.

use std::collections::BTreeMap;

use num_rational::BigRational;
use num_traits::{Signed, Zero};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::numeric::{norm_sq_exact, rational_to_f64};
use crate::oracle::{Oracle, OracleError, OracleReading, Submission};

#[derive(Debug, Error)]
pub enum ProbeError {
    #[error("norm already probed; re-probing a deterministic oracle wastes budget")]
    AlreadyProbed,
    #[error("squared norm unknown; run the norm probe first")]
    NormUnknown,
    #[error(transparent)]
    Oracle(#[from] OracleError),
}

/// One recovered inner product with its uncertainty.
#[derive(Debug, Clone)]
pub struct InnerProductRecord {
    value: BigRational,
    hat_y_sq: BigRational,
    pub halfwidth: f64,
    pub rmse_seen: f64,
}

impl InnerProductRecord {
    pub fn value(&self) -> f64 {
        rational_to_f64(&self.value)
    }

    pub fn value_exact(&self) -> &BigRational {
        &self.value
    }

    pub fn hat_y_sq_exact(&self) -> &BigRational {
        &self.hat_y_sq
    }
}

/// Everything the attacker has learned from the oracle so far.
#[derive(Debug, Clone)]
pub struct KnowledgeState {
    n: usize,
    y_sq: Option<BigRational>,
    y_sq_halfwidth: f64,
    ip_cache: BTreeMap<String, InnerProductRecord>,
}

impl KnowledgeState {
    pub fn new(n: usize) -> Self {
        KnowledgeState { n, y_sq: None, y_sq_halfwidth: 0.0, ip_cache: BTreeMap::new() }
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn norm_probed(&self) -> bool {
        self.y_sq.is_some()
    }

    pub fn y_sq(&self) -> Option<f64> {
        self.y_sq.as_ref().map(rational_to_f64)
    }

    pub fn y_sq_exact(&self) -> Option<&BigRational> {
        self.y_sq.as_ref()
    }

    pub fn y_sq_halfwidth(&self) -> f64 {
        self.y_sq_halfwidth
    }

    pub fn cached(&self, digest: &str) -> Option<&InnerProductRecord> {
        self.ip_cache.get(digest)
    }

    pub fn cache_len(&self) -> usize {
        self.ip_cache.len()
    }

    pub fn to_json(&self) -> serde_json::Value {
        let repr = StateRepr {
            n: self.n,
            y_sq: self.y_sq.as_ref().map(rational_str),
            y_sq_halfwidth: self.y_sq_halfwidth,
            cache: self
                .ip_cache
                .iter()
                .map(|(k, v)| {
                    (
                        k.clone(),
                        RecordRepr {
                            value: rational_str(&v.value),
                            hat_y_sq: rational_str(&v.hat_y_sq),
                            halfwidth: v.halfwidth,
                            rmse_seen: v.rmse_seen,
                        },
                    )
                })
                .collect(),
        };
        serde_json::to_value(repr).expect("state serializes")
    }

    pub fn from_json(value: &serde_json::Value) -> Result<Self, String> {
        let repr: StateRepr = serde_json::from_value(value.clone()).map_err(|e| e.to_string())?;
        let mut ip_cache = BTreeMap::new();
        for (k, v) in repr.cache {
            ip_cache.insert(
                k,
                InnerProductRecord {
                    value: parse_rational(&v.value)?,
                    hat_y_sq: parse_rational(&v.hat_y_sq)?,
                    halfwidth: v.halfwidth,
                    rmse_seen: v.rmse_seen,
                },
            );
        }
        Ok(KnowledgeState {
            n: repr.n,
            y_sq: repr.y_sq.as_deref().map(parse_rational).transpose()?,
            y_sq_halfwidth: repr.y_sq_halfwidth,
            ip_cache,
        })
    }
}

#[derive(Serialize, Deserialize)]
struct StateRepr {
    n: usize,
    y_sq: Option<String>,
    y_sq_halfwidth: f64,
    cache: BTreeMap<String, RecordRepr>,
}

#[derive(Serialize, Deserialize)]
struct RecordRepr {
    value: String,
    hat_y_sq: String,
    halfwidth: f64,
    rmse_seen: f64,
}

fn rational_str(r: &BigRational) -> String {
    format!("{}/{}", r.numer(), r.denom())
}

fn parse_rational(s: &str) -> Result<BigRational, String> {
    let (num, den) = s.split_once('/').ok_or_else(|| format!("bad rational {s:?}"))?;
    let num = num.parse().map_err(|_| format!("bad numerator {num:?}"))?;
    let den = den.parse().map_err(|_| format!("bad denominator {den:?}"))?;
    Ok(BigRational::new(num, den))
}

/// Half-width of the squared-score interval n*rmse^2 for one reading:
/// n * (2*rmse*eps + eps^2) with eps half the quantization step.
fn score_sq_halfwidth(n: usize, rmse: f64, eps: f64) -> f64 {
    n as f64 * (2.0 * rmse * eps + eps * eps)
}

/// Half-width of a recovered inner product given the reading it came from.
pub fn ip_halfwidth(reading: &OracleReading, state: &KnowledgeState) -> Result<f64, ProbeError> {
    if !state.norm_probed() {
        return Err(ProbeError::NormUnknown);
    }
    let eps = reading.mode.half_step();
    Ok(0.5 * (state.y_sq_halfwidth + score_sq_halfwidth(state.n, reading.rmse(), eps)))
}

/// Submit the all-zeros vector and learn y_sq = n * rmse^2. Returns the f64
/// view; the exact value lands in the state. Errors on a repeat probe.
pub fn probe_norm(oracle: &mut Oracle, state: &mut KnowledgeState) -> Result<f64, ProbeError> {
    if state.norm_probed() {
        return Err(ProbeError::AlreadyProbed);
    }
    let zeros = Submission::zeros(state.n);
    let reading = oracle.evaluate(&zeros, "norm-probe")?;
    let y_sq = reading.rmse_sq() * BigRational::from_integer(state.n.into());
    let eps = reading.mode.half_step();
    state.y_sq_halfwidth = score_sq_halfwidth(state.n, reading.rmse(), eps);
    state.y_sq = Some(y_sq.clone());
    // The zero submission's inner product is 0 by the decomposition itself;
    // cache it so later queries for the zero vector are free.
    state.ip_cache.insert(
        zeros.digest().to_string(),
        InnerProductRecord {
            value: BigRational::zero(),
            hat_y_sq: BigRational::zero(),
            halfwidth: state.y_sq_halfwidth,
            rmse_seen: reading.rmse(),
        },
    );
    Ok(rational_to_f64(&y_sq))
}

/// Recover the inner product between `submission` and the hidden labels.
/// Costs one submission unless the digest is already cached.
pub fn inner_product(
    oracle: &mut Oracle,
    state: &mut KnowledgeState,
    submission: &Submission,
    tag: &str,
) -> Result<InnerProductRecord, ProbeError> {
    let y_sq = state.y_sq.clone().ok_or(ProbeError::NormUnknown)?;
    if let Some(hit) = state.ip_cache.get(submission.digest()) {
        return Ok(hit.clone());
    }
    let hat_y_sq = norm_sq_exact(submission.entries());
    let reading = oracle.evaluate(submission, tag)?;
    let se_estimate = reading.rmse_sq() * BigRational::from_integer(state.n.into());
    let value = (&hat_y_sq + &y_sq - se_estimate) / BigRational::from_integer(2.into());
    let record = InnerProductRecord {
        value,
        hat_y_sq,
        halfwidth: ip_halfwidth(&reading, state)?,
        rmse_seen: reading.rmse(),
    };
    state.ip_cache.insert(submission.digest().to_string(), record.clone());
    Ok(record)
}

/// Exposed for planners that must evaluate the uncertainty formula without a
/// live reading (worst-case rmse bounds).
pub fn halfwidth_formula(n: usize, rmse: f64, eps: f64, y_sq_halfwidth: f64) -> f64 {
    0.5 * (y_sq_halfwidth + score_sq_halfwidth(n, rmse, eps))
}

/// True when the record's interval contains the given exact value.
pub fn interval_contains(record: &InnerProductRecord, truth: &BigRational) -> bool {
    let hw = crate::numeric::rational_from_f64(record.halfwidth).expect("halfwidth is finite");
    (truth - &record.value).abs() <= hw
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numeric::{kahan_dot, Decimal};
    use crate::oracle::{Bounds, OracleConfig, ScoreMode};
    use num_bigint::BigInt;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn oracle_from(labels: &[f64], mode: ScoreMode, budget: u32) -> Oracle {
        let decs = labels
            .iter()
            .map(|&v| Decimal::from_f64_exact(v).unwrap())
            .collect();
        let (lo, hi) = labels
            .iter()
            .fold((f64::MAX, f64::MIN), |(lo, hi), &v| (lo.min(v), hi.max(v)));
        Oracle::create(
            decs,
            Bounds::new(lo.min(0.0), hi.max(1.0)).unwrap(),
            OracleConfig::new(mode, budget).unwrap(),
        )
        .unwrap()
    }

    fn rat(v: i64) -> BigRational {
        BigRational::from_integer(BigInt::from(v))
    }

    #[test]
    fn norm_probe_on_zero_labels() {
        let mut oracle = oracle_from(&[0.0, 0.0, 0.0], ScoreMode::Exact, 5);
        let mut state = KnowledgeState::new(3);
        assert_eq!(probe_norm(&mut oracle, &mut state).unwrap(), 0.0);
        assert_eq!(state.y_sq_exact().unwrap(), &BigRational::zero());
    }

    #[test]
    fn norm_probe_exact_example() {
        let mut oracle = oracle_from(&[1.0, 0.0, 2.0, 1.0], ScoreMode::Exact, 5);
        let mut state = KnowledgeState::new(4);
        let y_sq = probe_norm(&mut oracle, &mut state).unwrap();
        assert_eq!(y_sq, 6.0);
        assert_eq!(state.y_sq_exact().unwrap(), &rat(6));
        assert_eq!(state.y_sq_halfwidth(), 0.0);
        let err = probe_norm(&mut oracle, &mut state).unwrap_err();
        assert!(matches!(err, ProbeError::AlreadyProbed));
    }

    #[test]
    fn norm_probe_quantized_interval_contains_truth() {
        let mut oracle =
            oracle_from(&[1.0, 0.0, 2.0, 1.0], ScoreMode::Quantized { digits: 5 }, 5);
        let mut state = KnowledgeState::new(4);
        let y_sq = probe_norm(&mut oracle, &mut state).unwrap();
        // central value 4 * 1.22474^2, half-width 4*(2*1.22474*5e-6 + 2.5e-11)
        assert!((y_sq - 5.999_952_270_4).abs() < 1e-9);
        let hw = state.y_sq_halfwidth();
        assert!((hw - 4.899_0e-5).abs() < 1e-8, "halfwidth {hw}");
        assert!(y_sq - hw <= 6.0 && 6.0 <= y_sq + hw);
    }

    #[test]
    fn inner_product_requires_norm() {
        let mut oracle = oracle_from(&[1.0, 0.0], ScoreMode::Exact, 5);
        let mut state = KnowledgeState::new(2);
        let sub = Submission::from_f64s(&[1.0, 1.0]).unwrap();
        let err = inner_product(&mut oracle, &mut state, &sub, "t").unwrap_err();
        assert!(matches!(err, ProbeError::NormUnknown));
    }

    #[test]
    fn inner_product_exact_examples() {
        let mut oracle = oracle_from(&[1.0, 0.0, 2.0, 1.0], ScoreMode::Exact, 10);
        let mut state = KnowledgeState::new(4);
        probe_norm(&mut oracle, &mut state).unwrap();

        let ones = Submission::from_f64s(&[1.0; 4]).unwrap();
        let rec = inner_product(&mut oracle, &mut state, &ones, "ones").unwrap();
        assert_eq!(rec.value_exact(), &rat(4));
        assert_eq!(rec.halfwidth, 0.0);

        let this = Submission::from_f64s(&[1.0, 0.0, 2.0, 1.0]).unwrap();
        let rec = inner_product(&mut oracle, &mut state, &this, "self").unwrap();
        assert_eq!(rec.value_exact(), &rat(6));

        // zero vector was cached by the norm probe: free and exactly zero
        let before = oracle.remaining_budget();
        let zeros = Submission::zeros(4);
        let rec = inner_product(&mut oracle, &mut state, &zeros, "z").unwrap();
        assert_eq!(rec.value_exact(), &BigRational::zero());
        assert_eq!(oracle.remaining_budget(), before);
    }

    #[test]
    fn budget_accounting_with_cache() {
        let mut oracle = oracle_from(&[1.0, 0.0, 2.0, 1.0], ScoreMode::Exact, 10);
        let mut state = KnowledgeState::new(4);
        probe_norm(&mut oracle, &mut state).unwrap();
        let subs: Vec<Submission> = (0..3)
            .map(|i| {
                let mut v = vec![0.0; 4];
                v[i] = 1.0;
                Submission::from_f64s(&v).unwrap()
            })
            .collect();
        for s in &subs {
            inner_product(&mut oracle, &mut state, s, "seg").unwrap();
        }
        assert_eq!(oracle.submissions_made(), 4); // 1 norm + 3 distinct
        for s in &subs {
            inner_product(&mut oracle, &mut state, s, "repeat").unwrap();
        }
        assert_eq!(oracle.submissions_made(), 4); // repeats are free
    }

    #[test]
    fn halfwidth_formula_example_and_monotonicity() {
        // quantized(5), rmse=1.0, n=100: n*(2*rmse*eps + eps^2) = 0.0010000025
        let eps = 0.5e-5;
        let inner = 100.0 * (2.0 * 1.0 * eps + eps * eps);
        assert!((inner - 0.001_000_002_5).abs() < 1e-15);
        let y_hw = 0.002;
        assert_eq!(halfwidth_formula(100, 1.0, eps, y_hw), 0.5 * (y_hw + inner));
        // monotone in n at fixed rmse and digits
        let mut last = 0.0;
        for n in [1usize, 10, 100, 1000] {
            let hw = halfwidth_formula(n, 1.0, eps, 0.0);
            assert!(hw > last);
            last = hw;
        }
    }

    #[test]
    fn ip_halfwidth_zero_in_exact_mode() {
        let mut oracle = oracle_from(&[1.0, 0.0, 2.0, 1.0], ScoreMode::Exact, 10);
        let mut state = KnowledgeState::new(4);
        probe_norm(&mut oracle, &mut state).unwrap();
        let sub = Submission::from_f64s(&[1.0; 4]).unwrap();
        let rec = inner_product(&mut oracle, &mut state, &sub, "t").unwrap();
        assert_eq!(rec.halfwidth, 0.0);
    }

    #[test]
    fn random_exact_recovery_matches_dot_product() {
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        for _ in 0..50 {
            let n = rng.gen_range(1..=64);
            let y: Vec<f64> = (0..n).map(|_| rng.gen_range(-3.0..3.0)).collect();
            let s: Vec<f64> = (0..n).map(|_| rng.gen_range(-3.0..3.0)).collect();
            let mut oracle = oracle_from(&y, ScoreMode::Exact, 2);
            let mut state = KnowledgeState::new(n);
            probe_norm(&mut oracle, &mut state).unwrap();
            let sub = Submission::from_f64s(&s).unwrap();
            let rec = inner_product(&mut oracle, &mut state, &sub, "t").unwrap();
            assert!((rec.value() - kahan_dot(&s, &y)).abs() <= 1e-9);
        }
    }

    #[test]
    fn quantized_intervals_contain_truth() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for _ in 0..50 {
            let n = rng.gen_range(1..=64);
            let y: Vec<f64> = (0..n).map(|_| rng.gen_range(-3.0..3.0)).collect();
            let s: Vec<f64> = (0..n).map(|_| rng.gen_range(-3.0..3.0)).collect();
            let digits = rng.gen_range(2..=8);
            let mut oracle = oracle_from(&y, ScoreMode::Quantized { digits }, 2);
            let mut state = KnowledgeState::new(n);
            probe_norm(&mut oracle, &mut state).unwrap();
            let sub = Submission::from_f64s(&s).unwrap();
            let rec = inner_product(&mut oracle, &mut state, &sub, "t").unwrap();
            let truth: BigRational = s
                .iter()
                .zip(&y)
                .map(|(&a, &b)| {
                    crate::numeric::rational_from_f64(a).unwrap()
                        * crate::numeric::rational_from_f64(b).unwrap()
                })
                .sum();
            assert!(interval_contains(&rec, &truth), "interval misses truth");
        }
    }

    #[test]
    fn state_json_roundtrip() {
        let mut oracle = oracle_from(&[1.0, 0.0, 2.0, 1.0], ScoreMode::Quantized { digits: 5 }, 10);
        let mut state = KnowledgeState::new(4);
        probe_norm(&mut oracle, &mut state).unwrap();
        let sub = Submission::from_f64s(&[1.0; 4]).unwrap();
        inner_product(&mut oracle, &mut state, &sub, "t").unwrap();

        let json = state.to_json();
        assert_eq!(json["n"], 4);
        let restored = KnowledgeState::from_json(&json).unwrap();
        assert_eq!(restored.n(), state.n());
        assert_eq!(restored.y_sq_exact(), state.y_sq_exact());
        assert_eq!(restored.cache_len(), state.cache_len());
        assert_eq!(
            restored.cached(sub.digest()).unwrap().value_exact(),
            state.cached(sub.digest()).unwrap().value_exact()
        );
    }
}
