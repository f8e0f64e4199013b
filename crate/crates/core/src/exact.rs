//! Exact rational values: parsing from decimal text, rendering to fixed
//! decimal places, and the string serde format (`"7/8"`) used in every
//! persisted artifact.

use std::fmt;
use std::str::FromStr;

use num_bigint::BigInt;
use num_integer::Integer;
use num_traits::{One, Signed, Zero};
use serde::{Deserialize, Deserializer, Serialize, Serializer};

pub type Rational = num_rational::BigRational;

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum ParseRationalError {
    #[error("empty rational literal")]
    Empty,
    #[error("malformed rational literal `{0}`")]
    Malformed(String),
    #[error("zero denominator in `{0}`")]
    ZeroDenominator(String),
    #[error("threshold `{0}` is outside [0, 1]")]
    OutOfUnitInterval(String),
}

/// Parses `"0.875"`, `"7/8"`, `"1"` or `"-0.25"` into an exact rational.
pub fn parse_rational(text: &str) -> Result<Rational, ParseRationalError> {
    let s = text.trim();
    if s.is_empty() {
        return Err(ParseRationalError::Empty);
    }
    let malformed = || ParseRationalError::Malformed(s.to_string());
    if let Some((num, den)) = s.split_once('/') {
        let num: BigInt = num.trim().parse().map_err(|_| malformed())?;
        let den: BigInt = den.trim().parse().map_err(|_| malformed())?;
        if den.is_zero() {
            return Err(ParseRationalError::ZeroDenominator(s.to_string()));
        }
        return Ok(Rational::new(num, den));
    }
    let (negative, body) = match s.strip_prefix('-') {
        Some(rest) => (true, rest),
        None => (false, s.strip_prefix('+').unwrap_or(s)),
    };
    let (int_part, frac_part) = body.split_once('.').unwrap_or((body, ""));
    if int_part.is_empty() && frac_part.is_empty() {
        return Err(malformed());
    }
    let all_digits = |p: &str| p.bytes().all(|b| b.is_ascii_digit());
    if !all_digits(int_part) || !all_digits(frac_part) {
        return Err(malformed());
    }
    let digits = format!("{int_part}{frac_part}");
    let numer: BigInt = if digits.is_empty() {
        BigInt::zero()
    } else {
        digits.parse().map_err(|_| malformed())?
    };
    let denom = num_traits::pow(BigInt::from(10), frac_part.len());
    let value = Rational::new(numer, denom);
    Ok(if negative { -value } else { value })
}

/// Renders `"p/q"` in lowest terms, or `"p"` for integers.
pub fn to_exact_string(value: &Rational) -> String {
    if value.denom().is_one() {
        value.numer().to_string()
    } else {
        format!("{}/{}", value.numer(), value.denom())
    }
}

/// Rounds half away from zero to `places` decimal places.
pub fn to_decimal_string(value: &Rational, places: usize) -> String {
    let scale = num_traits::pow(BigInt::from(10), places);
    let scaled = value.abs() * Rational::from_integer(scale.clone());
    let (q, r) = scaled.numer().div_rem(scaled.denom());
    let twice_r: BigInt = r * 2;
    let rounded = if &twice_r >= scaled.denom() { q + 1 } else { q };
    let (int_part, frac_part) = rounded.div_rem(&scale);
    let sign = if value.is_negative() && !rounded_is_zero(&int_part, &frac_part) {
        "-"
    } else {
        ""
    };
    if places == 0 {
        return format!("{sign}{int_part}");
    }
    format!("{sign}{int_part}.{:0>width$}", frac_part.to_string(), width = places)
}

fn rounded_is_zero(int_part: &BigInt, frac_part: &BigInt) -> bool {
    int_part.is_zero() && frac_part.is_zero()
}

pub fn ratio(numer: u64, denom: u64) -> Rational {
    Rational::new(BigInt::from(numer), BigInt::from(denom))
}

/// Serde adapter writing a [`Rational`] as its exact string.
pub mod serde_rational {
    use super::*;

    pub fn serialize<S: Serializer>(value: &Rational, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&to_exact_string(value))
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Rational, D::Error> {
        let text = String::deserialize(d)?;
        parse_rational(&text).map_err(serde::de::Error::custom)
    }
}

/// A consistency threshold `t` in `[0, 1]`, held exactly.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Threshold(Rational);

impl Threshold {
    pub fn new(value: Rational) -> Result<Self, ParseRationalError> {
        if value.is_negative() || value > Rational::one() {
            return Err(ParseRationalError::OutOfUnitInterval(to_exact_string(&value)));
        }
        Ok(Self(value))
    }

    pub fn value(&self) -> &Rational {
        &self.0
    }

    /// The threshold used throughout the reported experiments.
    pub fn default_experiment() -> Self {
        Self(ratio(9, 10))
    }
}

impl Default for Threshold {
    fn default() -> Self {
        Self::default_experiment()
    }
}

impl FromStr for Threshold {
    type Err = ParseRationalError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Self::new(parse_rational(s)?)
    }
}

impl fmt::Display for Threshold {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&to_exact_string(&self.0))
    }
}

impl Serialize for Threshold {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&to_exact_string(&self.0))
    }
}

impl<'de> Deserialize<'de> for Threshold {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let text = String::deserialize(d)?;
        text.parse().map_err(serde::de::Error::custom)
    }
}

/// A rate or gap that may be undefined (zero denominator, empty group).
///
/// Undefined values are never coerced to zero. Serialized as
/// `{"defined": true, "exact": "3/8", "display": "0.38"}` or
/// `{"defined": false}`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Rate(Option<Rational>);

impl Rate {
    pub const UNDEFINED: Rate = Rate(None);

    pub fn defined(value: Rational) -> Self {
        Self(Some(value))
    }

    /// `numer / denom`, undefined when `denom` is zero.
    pub fn of(numer: u64, denom: u64) -> Self {
        if denom == 0 {
            Self(None)
        } else {
            Self(Some(ratio(numer, denom)))
        }
    }

    pub fn value(&self) -> Option<&Rational> {
        self.0.as_ref()
    }

    pub fn is_defined(&self) -> bool {
        self.0.is_some()
    }

    /// `|self - other|`, undefined if either side is.
    pub fn abs_diff(&self, other: &Rate) -> Rate {
        match (&self.0, &other.0) {
            (Some(a), Some(b)) => Rate(Some((a - b).abs())),
            _ => Rate(None),
        }
    }

    pub fn display(&self) -> String {
        match &self.0 {
            Some(v) => to_decimal_string(v, 2),
            None => "undefined".to_string(),
        }
    }
}

impl From<Option<Rational>> for Rate {
    fn from(value: Option<Rational>) -> Self {
        Self(value)
    }
}

#[derive(Serialize, Deserialize)]
struct RateRepr {
    defined: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    exact: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    display: Option<String>,
}

impl Serialize for Rate {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        let repr = match &self.0 {
            Some(v) => RateRepr {
                defined: true,
                exact: Some(to_exact_string(v)),
                display: Some(to_decimal_string(v, 2)),
            },
            None => RateRepr {
                defined: false,
                exact: None,
                display: None,
            },
        };
        repr.serialize(s)
    }
}

impl<'de> Deserialize<'de> for Rate {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let repr = RateRepr::deserialize(d)?;
        match (repr.defined, repr.exact) {
            (false, _) => Ok(Rate(None)),
            (true, Some(text)) => parse_rational(&text)
                .map(|v| Rate(Some(v)))
                .map_err(serde::de::Error::custom),
            (true, None) => Err(serde::de::Error::custom("defined rate without exact value")),
        }
    }
}

/// Unweighted mean of the defined values; returns the mean (if any value was
/// defined) and how many undefined entries were skipped.
pub fn mean_defined<'a>(values: impl IntoIterator<Item = &'a Rate>) -> (Rate, usize) {
    let mut sum = Rational::zero();
    let mut count = 0u64;
    let mut skipped = 0usize;
    for rate in values {
        match rate.value() {
            Some(v) => {
                sum += v;
                count += 1;
            }
            None => skipped += 1,
        }
    }
    if count == 0 {
        (Rate::UNDEFINED, skipped)
    } else {
        (
            Rate::defined(sum / Rational::from_integer(BigInt::from(count))),
            skipped,
        )
    }
}
