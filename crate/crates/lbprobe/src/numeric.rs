//! Exact decimal arithmetic and float helpers shared by the oracle and the attacks.
//!
//! Every value that crosses the oracle boundary (labels, submission entries,
//! reported scores) is an exact scaled decimal `units / 10^scale`. Keeping this
//! exact is what lets the finite-label attack pack hundreds of bits into a
//! single score and get them all back; f64 is used only as a view for the
//! attack-side linear algebra.

use std::cmp::Ordering;
use std::fmt;
use std::str::FromStr;

use num_bigint::{BigInt, BigUint};
use num_integer::Integer;
use num_rational::BigRational;
use num_traits::{Signed, ToPrimitive, Zero};
use serde::de::{self, Visitor};
use serde::{Deserialize, Deserializer, Serialize, Serializer};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum DecimalError {
    #[error("cannot parse {0:?} as a decimal number")]
    Parse(String),
    #[error("non-finite value cannot be represented as a decimal")]
    NonFinite,
}

/// An exact decimal: `units / 10^scale`, normalized so `scale` is minimal.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Decimal {
    units: BigInt,
    scale: u32,
}

impl Decimal {
    pub fn new(units: BigInt, scale: u32) -> Self {
        let mut d = Decimal { units, scale };
        d.normalize();
        d
    }

    fn normalize(&mut self) {
        if self.units.is_zero() {
            self.scale = 0;
            return;
        }
        let ten = BigInt::from(10u8);
        while self.scale > 0 {
            let (q, r) = self.units.div_rem(&ten);
            if r.is_zero() {
                self.units = q;
                self.scale -= 1;
            } else {
                break;
            }
        }
    }

    pub fn zero() -> Self {
        Decimal { units: BigInt::zero(), scale: 0 }
    }

    pub fn from_int(v: i64) -> Self {
        Decimal { units: BigInt::from(v), scale: 0 }
    }

    pub fn from_bigint(v: BigInt) -> Self {
        Decimal { units: v, scale: 0 }
    }

    pub fn is_zero(&self) -> bool {
        self.units.is_zero()
    }

    pub fn units(&self) -> &BigInt {
        &self.units
    }

    pub fn scale(&self) -> u32 {
        self.scale
    }

    /// The exact value of an f64; `Err(NonFinite)` for NaN and infinities.
    /// Every finite f64 is `m * 2^e`, hence an exact (if long) decimal.
    pub fn from_f64_exact(x: f64) -> Result<Self, DecimalError> {
        if !x.is_finite() {
            return Err(DecimalError::NonFinite);
        }
        if x == 0.0 {
            return Ok(Decimal::zero());
        }
        let bits = x.to_bits();
        let sign_neg = bits >> 63 == 1;
        let biased_exp = ((bits >> 52) & 0x7ff) as i64;
        let frac = bits & 0x000f_ffff_ffff_ffff;
        let (mantissa, exp) = if biased_exp == 0 {
            (frac, -1074i64)
        } else {
            (frac | 0x0010_0000_0000_0000, biased_exp - 1075)
        };
        let mut units = BigInt::from(mantissa);
        let scale;
        if exp >= 0 {
            units <<= exp as u32;
            scale = 0;
        } else {
            let k = (-exp) as u32;
            units *= BigInt::from(5u8).pow(k);
            scale = k;
        }
        if sign_neg {
            units = -units;
        }
        Ok(Decimal::new(units, scale))
    }

    pub fn to_rational(&self) -> BigRational {
        BigRational::new(self.units.clone(), pow10_int(self.scale))
    }

    pub fn to_f64(&self) -> f64 {
        rational_to_f64(&self.to_rational())
    }

    /// Units after rescaling to a coarser `target` scale (target >= self.scale).
    pub fn units_at_scale(&self, target: u32) -> BigInt {
        debug_assert!(target >= self.scale);
        &self.units * pow10_int(target - self.scale)
    }

    /// Canonical rendering: optional sign, integer digits, fractional digits
    /// without trailing zeros, never exponent notation.
    pub fn render(&self) -> String {
        if self.scale == 0 {
            return self.units.to_string();
        }
        let neg = self.units.is_negative();
        let mag = self.units.magnitude().to_string();
        let scale = self.scale as usize;
        let (int_part, frac_part) = if mag.len() > scale {
            let split = mag.len() - scale;
            (mag[..split].to_string(), mag[split..].to_string())
        } else {
            ("0".to_string(), format!("{}{}", "0".repeat(scale - mag.len()), mag))
        };
        let sign = if neg { "-" } else { "" };
        format!("{sign}{int_part}.{frac_part}")
    }

    pub fn parse(s: &str) -> Result<Self, DecimalError> {
        let err = || DecimalError::Parse(s.to_string());
        let t = s.trim();
        let (mantissa_str, exp) = match t.find(['e', 'E']) {
            Some(pos) => {
                let e: i32 = t[pos + 1..].parse().map_err(|_| err())?;
                (&t[..pos], e)
            }
            None => (t, 0i32),
        };
        let (neg, digits) = match mantissa_str.strip_prefix('-') {
            Some(rest) => (true, rest),
            None => (false, mantissa_str.strip_prefix('+').unwrap_or(mantissa_str)),
        };
        let (int_part, frac_part) = match digits.find('.') {
            Some(pos) => (&digits[..pos], &digits[pos + 1..]),
            None => (digits, ""),
        };
        if int_part.is_empty() && frac_part.is_empty() {
            return Err(err());
        }
        if !int_part.bytes().all(|b| b.is_ascii_digit()) || !frac_part.bytes().all(|b| b.is_ascii_digit()) {
            return Err(err());
        }
        let all_digits = format!("{int_part}{frac_part}");
        let mut units = BigInt::from_str(&all_digits).map_err(|_| err())?;
        if neg {
            units = -units;
        }
        // value = units * 10^(exp - frac_len)
        let shift = exp as i64 - frac_part.len() as i64;
        if shift >= 0 {
            units *= pow10_int(shift as u32);
            Ok(Decimal::new(units, 0))
        } else {
            Ok(Decimal::new(units, (-shift) as u32))
        }
    }
}

impl fmt::Display for Decimal {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.render())
    }
}

impl FromStr for Decimal {
    type Err = DecimalError;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Decimal::parse(s)
    }
}

impl PartialOrd for Decimal {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for Decimal {
    fn cmp(&self, other: &Self) -> Ordering {
        let t = self.scale.max(other.scale);
        self.units_at_scale(t).cmp(&other.units_at_scale(t))
    }
}

impl Serialize for Decimal {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.serialize_str(&self.render())
    }
}

struct DecimalVisitor;

impl Visitor<'_> for DecimalVisitor {
    type Value = Decimal;

    fn expecting(&self, f: &mut fmt::Formatter) -> fmt::Result {
        f.write_str("a decimal number or a decimal string")
    }

    fn visit_str<E: de::Error>(self, v: &str) -> Result<Decimal, E> {
        Decimal::parse(v).map_err(de::Error::custom)
    }

    fn visit_i64<E: de::Error>(self, v: i64) -> Result<Decimal, E> {
        Ok(Decimal::from_int(v))
    }

    fn visit_u64<E: de::Error>(self, v: u64) -> Result<Decimal, E> {
        Ok(Decimal::from_bigint(BigInt::from(v)))
    }

    fn visit_f64<E: de::Error>(self, v: f64) -> Result<Decimal, E> {
        Decimal::from_f64_exact(v).map_err(de::Error::custom)
    }
}

impl<'de> Deserialize<'de> for Decimal {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        deserializer.deserialize_any(DecimalVisitor)
    }
}

pub fn pow10_int(k: u32) -> BigInt {
    BigInt::from(10u8).pow(k)
}

pub fn pow10_uint(k: u32) -> BigUint {
    BigUint::from(10u8).pow(k)
}

/// Largest scale among the given decimals (0 for an empty slice).
pub fn max_scale<'a>(values: impl IntoIterator<Item = &'a Decimal>) -> u32 {
    values.into_iter().map(|d| d.scale).max().unwrap_or(0)
}

/// Exact sum of squares of a decimal slice, as a rational.
pub fn norm_sq_exact(values: &[Decimal]) -> BigRational {
    let t = max_scale(values);
    let mut acc = BigInt::zero();
    for v in values {
        let u = v.units_at_scale(t);
        acc += &u * &u;
    }
    BigRational::new(acc, pow10_int(2 * t))
}

/// ldexp: x * 2^e without intermediate overflow for large |e|.
pub fn scale_by_pow2(mut x: f64, mut e: i64) -> f64 {
    while e > 1000 {
        x *= 2f64.powi(1000);
        if !x.is_finite() {
            return x;
        }
        e -= 1000;
    }
    while e < -1000 {
        x *= 2f64.powi(-1000);
        if x == 0.0 {
            return x;
        }
        e += 1000;
    }
    x * 2f64.powi(e as i32)
}

/// Rational to nearest f64, accurate to about 1 ulp. Exact when the rational
/// is exactly representable (so f64 -> Decimal -> f64 round-trips bit-for-bit).
pub fn rational_to_f64(r: &BigRational) -> f64 {
    if r.numer().is_zero() {
        return 0.0;
    }
    let neg = r.numer().is_negative();
    let num = r.numer().magnitude().clone();
    let den = r.denom().magnitude().clone();
    let shift = 63i64 - (num.bits() as i64 - den.bits() as i64);
    let q = if shift >= 0 {
        (num << shift as u64) / den
    } else {
        num / (den << (-shift) as u64)
    };
    let f = scale_by_pow2(q.to_f64().unwrap_or(f64::INFINITY), -shift);
    if neg {
        -f
    } else {
        f
    }
}

/// sqrt(p/q) as an f64 for a nonnegative rational, accurate to about 1 ulp.
/// Works far outside the f64 range of p/q itself (only the root must fit).
pub fn rational_sqrt_f64(r: &BigRational) -> f64 {
    debug_assert!(!r.numer().is_negative());
    if r.numer().is_zero() {
        return 0.0;
    }
    let num = r.numer().magnitude().clone();
    let den = r.denom().magnitude().clone();
    // Root has ~(bits(num)-bits(den))/2 bits; shift so the integer root carries ~64.
    let half_bits = (num.bits() as i64 - den.bits() as i64) / 2;
    let k = 64i64 - half_bits;
    let scaled = if k >= 0 {
        (num << (2 * k) as u64) / den
    } else {
        num / (den << (2 * -k) as u64)
    };
    let t = scaled.sqrt();
    scale_by_pow2(t.to_f64().unwrap_or(f64::INFINITY), -k)
}

/// Round-half-even of sqrt(p/q) to an integer, exactly.
pub fn round_half_even_sqrt(p: &BigUint, q: &BigUint) -> BigUint {
    if p.is_zero() {
        return BigUint::zero();
    }
    let four_p = p * 4u8;
    let mut k = (p / q).sqrt();
    loop {
        // boundary between k and k+1 is at k + 1/2: compare 4p with (2k+1)^2 q
        let b = (&k * 2u8) + 1u8;
        let boundary = &b * &b * q;
        match four_p.cmp(&boundary) {
            Ordering::Less => return k,
            Ordering::Equal => {
                return if k.is_even() { k } else { k + 1u8 };
            }
            Ordering::Greater => k += 1u8,
        }
    }
}

/// Nearest integer to a rational (ties away from zero; callers guarantee the
/// value is within 1/2 of an integer so ties cannot occur).
pub fn round_rational(r: &BigRational) -> BigInt {
    r.round().to_integer()
}

/// Compensated (Kahan) summation accumulator.
#[derive(Debug, Clone, Copy, Default)]
pub struct KahanSum {
    sum: f64,
    err: f64,
}

impl KahanSum {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, rhs: f64) {
        let y = rhs - self.err;
        let t = self.sum + y;
        self.err = (t - self.sum) - y;
        self.sum = t;
    }

    pub fn value(&self) -> f64 {
        self.sum
    }
}

pub fn kahan_sum(values: impl IntoIterator<Item = f64>) -> f64 {
    let mut acc = KahanSum::new();
    for v in values {
        acc.add(v);
    }
    acc.value()
}

pub fn kahan_dot(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    kahan_sum(a.iter().zip(b).map(|(x, y)| x * y))
}

pub fn kahan_norm_sq(a: &[f64]) -> f64 {
    kahan_sum(a.iter().map(|x| x * x))
}

/// Distance in units-in-the-last-place between two finite nonnegative floats.
pub fn ulps_between(a: f64, b: f64) -> u64 {
    debug_assert!(a.is_finite() && b.is_finite() && a >= 0.0 && b >= 0.0);
    let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
    hi.to_bits() - lo.to_bits()
}

pub fn rational_from_f64(x: f64) -> Result<BigRational, DecimalError> {
    Ok(Decimal::from_f64_exact(x)?.to_rational())
}

#[cfg(test)]
mod tests {
    use super::*;
    use num_traits::One;
    use proptest::prelude::*;

    #[test]
    fn parse_and_render_roundtrip() {
        for s in ["0", "1", "-1", "0.5", "-0.125", "1024", "3.14159", "0.0001"] {
            let d = Decimal::parse(s).unwrap();
            assert_eq!(d.render(), s);
        }
    }

    #[test]
    fn parse_normalizes() {
        assert_eq!(Decimal::parse("1.500").unwrap().render(), "1.5");
        assert_eq!(Decimal::parse("+0.000").unwrap().render(), "0");
        assert_eq!(Decimal::parse("-0").unwrap().render(), "0");
        assert_eq!(Decimal::parse("2e3").unwrap().render(), "2000");
        assert_eq!(Decimal::parse("25e-2").unwrap().render(), "0.25");
        assert_eq!(Decimal::parse("1.5E1").unwrap().render(), "15");
    }

    #[test]
    fn parse_rejects_garbage() {
        for s in ["", ".", "abc", "1.2.3", "--1", "1e", "0x10"] {
            assert!(Decimal::parse(s).is_err(), "accepted {s:?}");
        }
    }

    #[test]
    fn from_f64_exact_known_values() {
        assert_eq!(Decimal::from_f64_exact(0.5).unwrap().render(), "0.5");
        assert_eq!(Decimal::from_f64_exact(-2.0).unwrap().render(), "-2");
        assert_eq!(Decimal::from_f64_exact(0.0).unwrap().render(), "0");
        // 0.1 is not dyadic; its exact expansion ends in ...5625
        let d = Decimal::from_f64_exact(0.1).unwrap();
        assert!(d.render().starts_with("0.1000000000000000055511151231257827"));
        assert!(Decimal::from_f64_exact(f64::NAN).is_err());
        assert!(Decimal::from_f64_exact(f64::INFINITY).is_err());
    }

    #[test]
    fn rational_to_f64_huge_and_tiny() {
        let big = BigRational::new(BigInt::from(3u8) * BigInt::from(2u8).pow(997), BigInt::one());
        let f = rational_to_f64(&big);
        assert_eq!(f, 3.0 * 2f64.powi(997));
        let tiny = BigRational::new(BigInt::one(), BigInt::from(2u8).pow(600));
        assert_eq!(rational_to_f64(&tiny), 2f64.powi(-600));
    }

    #[test]
    fn sqrt_f64_matches_reference() {
        let r = BigRational::new(BigInt::from(6), BigInt::from(4));
        let s = rational_sqrt_f64(&r);
        assert!((s - (6f64 / 4.0).sqrt()).abs() <= f64::EPSILON * s);
        // root of a value whose square overflows f64
        let r2 = BigRational::new(BigInt::from(2u8).pow(2000), BigInt::one());
        assert_eq!(rational_sqrt_f64(&r2), 2f64.powi(1000));
    }

    #[test]
    fn half_even_sqrt_cases() {
        // sqrt(25/4) = 2.5 -> even neighbor 2
        assert_eq!(
            round_half_even_sqrt(&BigUint::from(25u8), &BigUint::from(4u8)),
            BigUint::from(2u8)
        );
        // sqrt(49/4) = 3.5 -> even neighbor 4
        assert_eq!(
            round_half_even_sqrt(&BigUint::from(49u8), &BigUint::from(4u8)),
            BigUint::from(4u8)
        );
        assert_eq!(
            round_half_even_sqrt(&BigUint::from(0u8), &BigUint::from(1u8)),
            BigUint::zero()
        );
        assert_eq!(
            round_half_even_sqrt(&BigUint::from(144u8), &BigUint::from(1u8)),
            BigUint::from(12u8)
        );
    }

    #[test]
    fn kahan_beats_naive_on_adversarial_sum() {
        let values = [1e16, 1.0, -1e16, 1.0];
        assert_eq!(kahan_sum(values.iter().copied()), 2.0);
        let naive: f64 = values.iter().sum();
        assert_ne!(naive, 2.0);
    }

    proptest! {
        #[test]
        fn f64_decimal_roundtrip(bits in any::<u64>()) {
            let x = f64::from_bits(bits);
            prop_assume!(x.is_finite());
            let d = Decimal::from_f64_exact(x).unwrap();
            prop_assert_eq!(d.to_f64().to_bits(), if x == 0.0 { 0u64 } else { x.to_bits() });
        }

        #[test]
        fn render_parse_roundtrip(units in -1_000_000_000i64..1_000_000_000i64, scale in 0u32..12) {
            let d = Decimal::new(BigInt::from(units), scale);
            let back = Decimal::parse(&d.render()).unwrap();
            prop_assert_eq!(back, d);
        }

        #[test]
        fn half_even_sqrt_matches_f64_reference(p in 0u64..1_000_000, q in 1u64..1000) {
            let exact = round_half_even_sqrt(&BigUint::from(p), &BigUint::from(q));
            let f = (p as f64 / q as f64).sqrt();
            // away from ties the f64 reference rounds identically
            let frac = (f - f.floor()).abs();
            prop_assume!((frac - 0.5).abs() > 1e-6);
            prop_assert_eq!(exact, BigUint::from(f.round() as u64));
        }
    }
}
