//! Truth values, truth intervals and the T-/S-/C-norm families used to
//! interpret transfer functions.
//!
//! Every logic here is a De Morgan triple `(tnorm, snorm, cnorm)` with the
//! standard complement `1 - x`. The S-norm is always derived from the T-norm
//! through the complement, so duality holds exactly for every family.
//!
//! Interval values lift a scalar logic endpoint-wise; negation swaps and
//! complements the endpoints.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Deserializer, Serialize, Serializer};
use thiserror::Error;

/// Slack tolerated outside `[0, 1]` before a value is rejected.
pub const CLAMP_SLACK: f64 = 1e-12;

/// Below this distance from 1 a Frank parameter is evaluated as the product
/// T-norm; the log formula has a removable singularity at `s = 1`.
const FRANK_PRODUCT_BAND: f64 = 1e-6;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum FuzzyError {
    #[error("truth value {0} is outside [0, 1]")]
    OutOfRange(f64),
    #[error("interval [{lo}, {hi}] has lo > hi")]
    InvertedInterval { lo: f64, hi: f64 },
    #[error("invalid Frank parameter {0}: need s > 0, s != 1, s finite")]
    InvalidFrankParameter(f64),
    #[error("unknown logic family `{0}` (expected minmax, product, lukasiewicz, nilpotent or frank:<s>)")]
    UnknownFamily(String),
}

/// A degree of truth in `[0, 1]`.
#[derive(Debug, Clone, Copy, PartialEq, PartialOrd, Default)]
pub struct TruthValue(f64);

impl TruthValue {
    pub const FALSE: TruthValue = TruthValue(0.0);
    pub const TRUE: TruthValue = TruthValue(1.0);

    /// Builds a truth value, clamping rounding noise within [`CLAMP_SLACK`]
    /// of the unit interval and rejecting anything further out.
    pub fn new(value: f64) -> Result<Self, FuzzyError> {
        if value.is_nan() || !(-CLAMP_SLACK..=1.0 + CLAMP_SLACK).contains(&value) {
            return Err(FuzzyError::OutOfRange(value));
        }
        Ok(TruthValue(value.clamp(0.0, 1.0)))
    }

    /// Clamps unconditionally. Only for results of operations that are
    /// mathematically closed on `[0, 1]` but may drift by rounding.
    pub(crate) fn saturating(value: f64) -> Self {
        debug_assert!(!value.is_nan());
        TruthValue(value.clamp(0.0, 1.0))
    }

    pub fn get(self) -> f64 {
        self.0
    }
}

impl fmt::Display for TruthValue {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fmt::Display::fmt(&self.0, f)
    }
}

impl TryFrom<f64> for TruthValue {
    type Error = FuzzyError;

    fn try_from(value: f64) -> Result<Self, Self::Error> {
        TruthValue::new(value)
    }
}

impl From<bool> for TruthValue {
    fn from(b: bool) -> Self {
        if b {
            TruthValue::TRUE
        } else {
            TruthValue::FALSE
        }
    }
}

impl Serialize for TruthValue {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.serialize_f64(self.0)
    }
}

impl<'de> Deserialize<'de> for TruthValue {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let raw = f64::deserialize(deserializer)?;
        TruthValue::new(raw).map_err(serde::de::Error::custom)
    }
}

/// A sub-interval `[lo, hi]` of the unit interval.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TruthInterval {
    lo: TruthValue,
    hi: TruthValue,
}

impl TruthInterval {
    pub const BOTTOM: TruthInterval = TruthInterval {
        lo: TruthValue::FALSE,
        hi: TruthValue::FALSE,
    };
    pub const TOP: TruthInterval = TruthInterval {
        lo: TruthValue::TRUE,
        hi: TruthValue::TRUE,
    };
    pub const UNKNOWN: TruthInterval = TruthInterval {
        lo: TruthValue::FALSE,
        hi: TruthValue::TRUE,
    };

    pub fn new(lo: TruthValue, hi: TruthValue) -> Result<Self, FuzzyError> {
        if lo > hi {
            return Err(FuzzyError::InvertedInterval {
                lo: lo.get(),
                hi: hi.get(),
            });
        }
        Ok(TruthInterval { lo, hi })
    }

    pub fn from_bounds(lo: f64, hi: f64) -> Result<Self, FuzzyError> {
        TruthInterval::new(TruthValue::new(lo)?, TruthValue::new(hi)?)
    }

    /// Endpoints produced by monotone operations on valid intervals. Fixes up
    /// a rounding-level inversion instead of failing.
    pub(crate) fn from_ordered(lo: TruthValue, hi: TruthValue) -> Self {
        if lo <= hi {
            TruthInterval { lo, hi }
        } else {
            debug_assert!(lo.get() - hi.get() < 1e-9, "inverted by {}", lo.get() - hi.get());
            TruthInterval { lo: hi, hi: lo }
        }
    }

    pub fn degenerate(value: TruthValue) -> Self {
        TruthInterval {
            lo: value,
            hi: value,
        }
    }

    pub fn lo(self) -> TruthValue {
        self.lo
    }

    pub fn hi(self) -> TruthValue {
        self.hi
    }

    pub fn width(self) -> f64 {
        self.hi.get() - self.lo.get()
    }

    pub fn is_degenerate(self) -> bool {
        self.lo == self.hi
    }

    pub fn contains(self, value: TruthValue) -> bool {
        self.lo <= value && value <= self.hi
    }

    /// `other` lies entirely inside `self`.
    pub fn encloses(self, other: TruthInterval) -> bool {
        self.lo <= other.lo && other.hi <= self.hi
    }
}

impl fmt::Display for TruthInterval {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "[{}, {}]", self.lo, self.hi)
    }
}

impl Serialize for TruthInterval {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        [self.lo.get(), self.hi.get()].serialize(serializer)
    }
}

impl<'de> Deserialize<'de> for TruthInterval {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let [lo, hi] = <[f64; 2]>::deserialize(deserializer)?;
        TruthInterval::from_bounds(lo, hi).map_err(serde::de::Error::custom)
    }
}

/// A De Morgan system: T-norm, derived S-norm, and the standard complement.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub enum LogicFamily {
    #[default]
    MinMax,
    Product,
    Lukasiewicz,
    /// Nilpotent minimum. Discontinuous on `x + y = 1`, so it carries no
    /// non-expansiveness guarantee.
    Nilpotent,
    Frank(FrankParameter),
}

/// Parameter `s` of the Frank family, `0 < s < inf`, `s != 1`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FrankParameter(f64);

impl FrankParameter {
    pub fn new(s: f64) -> Result<Self, FuzzyError> {
        if s.is_finite() && s > 0.0 && s != 1.0 {
            Ok(FrankParameter(s))
        } else {
            Err(FuzzyError::InvalidFrankParameter(s))
        }
    }

    pub fn get(self) -> f64 {
        self.0
    }
}

impl LogicFamily {
    pub fn frank(s: f64) -> Result<Self, FuzzyError> {
        FrankParameter::new(s).map(LogicFamily::Frank)
    }

    /// True for the families covered by the 1-Lipschitz guarantee.
    pub fn is_frank_family(self) -> bool {
        !matches!(self, LogicFamily::Nilpotent)
    }

    pub fn tnorm(self, x: TruthValue, y: TruthValue) -> TruthValue {
        let (x, y) = (x.get(), y.get());
        let r = match self {
            LogicFamily::MinMax => x.min(y),
            LogicFamily::Product => x * y,
            LogicFamily::Lukasiewicz => (x + y - 1.0).max(0.0),
            LogicFamily::Nilpotent => {
                if x + y > 1.0 {
                    x.min(y)
                } else {
                    0.0
                }
            }
            LogicFamily::Frank(s) => frank_tnorm(s.get(), x, y),
        };
        TruthValue::saturating(r)
    }

    /// `cnorm(tnorm(cnorm x, cnorm y))`.
    pub fn snorm(self, x: TruthValue, y: TruthValue) -> TruthValue {
        cnorm(self.tnorm(cnorm(x), cnorm(y)))
    }

    pub fn cnorm(self, x: TruthValue) -> TruthValue {
        cnorm(x)
    }

    pub fn interval_tnorm(self, x: TruthInterval, y: TruthInterval) -> TruthInterval {
        TruthInterval::from_ordered(self.tnorm(x.lo, y.lo), self.tnorm(x.hi, y.hi))
    }

    pub fn interval_snorm(self, x: TruthInterval, y: TruthInterval) -> TruthInterval {
        TruthInterval::from_ordered(self.snorm(x.lo, y.lo), self.snorm(x.hi, y.hi))
    }

    pub fn interval_cnorm(self, x: TruthInterval) -> TruthInterval {
        interval_cnorm(x)
    }
}

fn frank_tnorm(s: f64, x: f64, y: f64) -> f64 {
    if (s - 1.0).abs() <= FRANK_PRODUCT_BAND {
        return x * y;
    }
    // ln_1p/exp_m1 keep precision for s close to 0 or 1.
    let ln_s = s.ln();
    let num = (x * ln_s).exp_m1() * (y * ln_s).exp_m1();
    let den = ln_s.exp_m1();
    (num / den).ln_1p() / ln_s
}

/// The standard complement `1 - x`.
pub fn cnorm(x: TruthValue) -> TruthValue {
    TruthValue::saturating(1.0 - x.get())
}

/// `[1 - hi, 1 - lo]`.
pub fn interval_cnorm(x: TruthInterval) -> TruthInterval {
    TruthInterval {
        lo: cnorm(x.hi),
        hi: cnorm(x.lo),
    }
}

/// Snaps `x` to the nearest point of the grid `{ i / 2^q }`, ties to even `i`.
pub fn quantize(x: TruthValue, q: u32) -> TruthValue {
    assert!(q >= 1, "grid exponent must be positive");
    if q >= 60 {
        // Finer than f64 resolution on [0, 1].
        return x;
    }
    let scale = (1u64 << q) as f64;
    TruthValue::saturating((x.get() * scale).round_ties_even() / scale)
}

impl fmt::Display for LogicFamily {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            LogicFamily::MinMax => f.write_str("minmax"),
            LogicFamily::Product => f.write_str("product"),
            LogicFamily::Lukasiewicz => f.write_str("lukasiewicz"),
            LogicFamily::Nilpotent => f.write_str("nilpotent"),
            LogicFamily::Frank(s) => write!(f, "frank:{}", s.get()),
        }
    }
}

impl FromStr for LogicFamily {
    type Err = FuzzyError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let trimmed = s.trim();
        match trimmed.to_ascii_lowercase().as_str() {
            "minmax" => Ok(LogicFamily::MinMax),
            "product" => Ok(LogicFamily::Product),
            "lukasiewicz" => Ok(LogicFamily::Lukasiewicz),
            "nilpotent" => Ok(LogicFamily::Nilpotent),
            other => match other.strip_prefix("frank:") {
                Some(param) => {
                    let s: f64 = param
                        .trim()
                        .parse()
                        .map_err(|_| FuzzyError::UnknownFamily(trimmed.to_string()))?;
                    LogicFamily::frank(s)
                }
                None => Err(FuzzyError::UnknownFamily(trimmed.to_string())),
            },
        }
    }
}

impl Serialize for LogicFamily {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for LogicFamily {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let raw = String::deserialize(deserializer)?;
        raw.parse().map_err(serde::de::Error::custom)
    }
}

/// Values a fuzzy formula can be interpreted over: scalar degrees or
/// interval degrees.
pub trait Truth: Copy + PartialEq + fmt::Debug + fmt::Display + Send + Sync + 'static {
    fn lift(value: TruthValue) -> Self;
    /// `None` when the domain cannot represent the interval (a scalar
    /// domain accepts only degenerate intervals).
    fn from_interval(value: TruthInterval) -> Option<Self>;
    /// The tightest enclosing interval (degenerate for scalars).
    fn to_interval(self) -> TruthInterval;
    fn and(self, other: Self, family: LogicFamily) -> Self;
    fn or(self, other: Self, family: LogicFamily) -> Self;
    fn not(self) -> Self;
    /// l1 distance; for intervals the sum over both endpoints.
    fn distance(self, other: Self) -> f64;
    /// Convex combination; weights are assumed nonnegative summing to one.
    fn weighted_sum<I: IntoIterator<Item = (f64, Self)>>(terms: I) -> Self;
    fn quantize(self, q: u32) -> Self;

    fn zero() -> Self {
        Self::lift(TruthValue::FALSE)
    }

    fn one() -> Self {
        Self::lift(TruthValue::TRUE)
    }
}

impl Truth for TruthValue {
    fn lift(value: TruthValue) -> Self {
        value
    }

    fn from_interval(value: TruthInterval) -> Option<Self> {
        value.is_degenerate().then_some(value.lo)
    }

    fn to_interval(self) -> TruthInterval {
        TruthInterval::degenerate(self)
    }

    fn and(self, other: Self, family: LogicFamily) -> Self {
        family.tnorm(self, other)
    }

    fn or(self, other: Self, family: LogicFamily) -> Self {
        family.snorm(self, other)
    }

    fn not(self) -> Self {
        cnorm(self)
    }

    fn distance(self, other: Self) -> f64 {
        (self.0 - other.0).abs()
    }

    fn weighted_sum<I: IntoIterator<Item = (f64, Self)>>(terms: I) -> Self {
        TruthValue::saturating(terms.into_iter().map(|(w, v)| w * v.0).sum())
    }

    fn quantize(self, q: u32) -> Self {
        quantize(self, q)
    }
}

impl Truth for TruthInterval {
    fn lift(value: TruthValue) -> Self {
        TruthInterval::degenerate(value)
    }

    fn from_interval(value: TruthInterval) -> Option<Self> {
        Some(value)
    }

    fn to_interval(self) -> TruthInterval {
        self
    }

    fn and(self, other: Self, family: LogicFamily) -> Self {
        family.interval_tnorm(self, other)
    }

    fn or(self, other: Self, family: LogicFamily) -> Self {
        family.interval_snorm(self, other)
    }

    fn not(self) -> Self {
        interval_cnorm(self)
    }

    fn distance(self, other: Self) -> f64 {
        self.lo.distance(other.lo) + self.hi.distance(other.hi)
    }

    fn weighted_sum<I: IntoIterator<Item = (f64, Self)>>(terms: I) -> Self {
        let (lo, hi) = terms
            .into_iter()
            .fold((0.0, 0.0), |(lo, hi), (w, v)| (lo + w * v.lo.0, hi + w * v.hi.0));
        TruthInterval::from_ordered(TruthValue::saturating(lo), TruthValue::saturating(hi))
    }

    fn quantize(self, q: u32) -> Self {
        TruthInterval::from_ordered(quantize(self.lo, q), quantize(self.hi, q))
    }
}
