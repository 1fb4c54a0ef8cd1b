//! Commutative semirings used to annotate tuples.
//!
//! Grouping folds annotations with `add`, joining combines them with `mul`.
//! Every supported aggregate maps onto one [`SemiringKind`]:
//!
//! | kind          | carrier              | add   | mul           | zero  | one    |
//! |---------------|----------------------|-------|---------------|-------|--------|
//! | `Count`       | non-negative ℚ       | +     | ×             | 0     | 1      |
//! | `SumReal`     | ℝ (f64)              | +     | ×             | 0     | 1      |
//! | `Avg`         | (count, sum) pairs   | pairwise + | dual product | (0,0) | (1,0) |
//! | `MaxTropical` | ℝ ∪ {−∞}             | max   | +             | −∞    | 0      |
//! | `MinTropical` | ℝ ∪ {+∞}             | min   | +             | +∞    | 0      |
//!
//! The `Avg` product is `(c1, s1)·(c2, s2) = (c1·c2, c1·s2 + c2·s1)`. With a
//! count-lifted operand `(n, 0)` it reduces to `(n·c, n·s)`, which is the only
//! shape the engine produces since a metric has a single payload relation.

use std::fmt;

use num_bigint::BigInt;
use num_rational::BigRational;
use num_traits::{One, Signed, ToPrimitive, Zero};
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{Error, Result};

pub type Rational = BigRational;

/// Comparison tolerance for float-backed kinds.
pub const DEFAULT_TOLERANCE: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SemiringKind {
    Count,
    SumReal,
    Avg,
    MaxTropical,
    MinTropical,
}

impl SemiringKind {
    pub const ALL: [SemiringKind; 5] = [
        SemiringKind::Count,
        SemiringKind::SumReal,
        SemiringKind::Avg,
        SemiringKind::MaxTropical,
        SemiringKind::MinTropical,
    ];

    /// Whether annotations of this kind can be multiplied by a weight.
    pub fn is_scalable(self) -> bool {
        !matches!(self, SemiringKind::MaxTropical | SemiringKind::MinTropical)
    }
}

impl fmt::Display for SemiringKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            SemiringKind::Count => "count",
            SemiringKind::SumReal => "sum_real",
            SemiringKind::Avg => "avg",
            SemiringKind::MaxTropical => "max_tropical",
            SemiringKind::MinTropical => "min_tropical",
        };
        f.write_str(s)
    }
}

/// A semiring element tagged with its kind.
#[derive(Debug, Clone, PartialEq)]
pub enum Annotation {
    Count(Rational),
    SumReal(f64),
    Avg { count: f64, sum: f64 },
    MaxTropical(f64),
    MinTropical(f64),
}

impl Annotation {
    pub fn kind(&self) -> SemiringKind {
        match self {
            Annotation::Count(_) => SemiringKind::Count,
            Annotation::SumReal(_) => SemiringKind::SumReal,
            Annotation::Avg { .. } => SemiringKind::Avg,
            Annotation::MaxTropical(_) => SemiringKind::MaxTropical,
            Annotation::MinTropical(_) => SemiringKind::MinTropical,
        }
    }

    pub fn zero(kind: SemiringKind) -> Self {
        match kind {
            SemiringKind::Count => Annotation::Count(Rational::zero()),
            SemiringKind::SumReal => Annotation::SumReal(0.0),
            SemiringKind::Avg => Annotation::Avg { count: 0.0, sum: 0.0 },
            SemiringKind::MaxTropical => Annotation::MaxTropical(f64::NEG_INFINITY),
            SemiringKind::MinTropical => Annotation::MinTropical(f64::INFINITY),
        }
    }

    pub fn one(kind: SemiringKind) -> Self {
        match kind {
            SemiringKind::Count => Annotation::Count(Rational::one()),
            SemiringKind::SumReal => Annotation::SumReal(1.0),
            SemiringKind::Avg => Annotation::Avg { count: 1.0, sum: 0.0 },
            SemiringKind::MaxTropical => Annotation::MaxTropical(0.0),
            SemiringKind::MinTropical => Annotation::MinTropical(0.0),
        }
    }

    pub fn count(n: i64) -> Self {
        Annotation::Count(Rational::from_integer(BigInt::from(n)))
    }

    /// `n` copies of `one` folded with `add`: the annotation of a group of
    /// `n` one-annotated tuples.
    pub fn lift_count(kind: SemiringKind, n: u64) -> Self {
        match kind {
            SemiringKind::Count => Annotation::Count(Rational::from_integer(BigInt::from(n))),
            SemiringKind::SumReal => Annotation::SumReal(n as f64),
            SemiringKind::Avg => Annotation::Avg { count: n as f64, sum: 0.0 },
            SemiringKind::MaxTropical | SemiringKind::MinTropical if n == 0 => Annotation::zero(kind),
            SemiringKind::MaxTropical | SemiringKind::MinTropical => Annotation::one(kind),
        }
    }

    /// Payload annotation for one tuple carrying `value` for an averaged attribute.
    pub fn avg_payload(value: f64) -> Self {
        Annotation::Avg { count: 1.0, sum: value }
    }

    fn mismatch(&self, other: &Annotation) -> Error {
        Error::KindMismatch { left: self.kind(), right: other.kind() }
    }

    pub fn add(&self, other: &Annotation) -> Result<Annotation> {
        use Annotation::*;
        Ok(match (self, other) {
            (Count(a), Count(b)) => Count(a + b),
            (SumReal(a), SumReal(b)) => SumReal(a + b),
            (Avg { count: c1, sum: s1 }, Avg { count: c2, sum: s2 }) => {
                Avg { count: c1 + c2, sum: s1 + s2 }
            }
            (MaxTropical(a), MaxTropical(b)) => MaxTropical(a.max(*b)),
            (MinTropical(a), MinTropical(b)) => MinTropical(a.min(*b)),
            _ => return Err(self.mismatch(other)),
        })
    }

    pub fn mul(&self, other: &Annotation) -> Result<Annotation> {
        use Annotation::*;
        Ok(match (self, other) {
            (Count(a), Count(b)) => Count(a * b),
            (SumReal(a), SumReal(b)) => SumReal(a * b),
            (Avg { count: c1, sum: s1 }, Avg { count: c2, sum: s2 }) => {
                Avg { count: c1 * c2, sum: c1 * s2 + c2 * s1 }
            }
            (MaxTropical(a), MaxTropical(b)) => MaxTropical(tropical_plus(*a, *b, f64::NEG_INFINITY)),
            (MinTropical(a), MinTropical(b)) => MinTropical(tropical_plus(*a, *b, f64::INFINITY)),
            _ => return Err(self.mismatch(other)),
        })
    }

    /// Multiplies the annotation by a non-negative weight.
    pub fn scale(&self, w: &Weight) -> Result<Annotation> {
        use Annotation::*;
        Ok(match self {
            Count(c) => Count(c * w.as_rational()),
            SumReal(s) => SumReal(s * w.to_f64()),
            Avg { count, sum } => {
                let w = w.to_f64();
                Avg { count: count * w, sum: sum * w }
            }
            MaxTropical(_) | MinTropical(_) => return Err(Error::UnsupportedScale(self.kind())),
        })
    }

    /// The user-facing aggregate value. `None` when undefined (empty average,
    /// max/min over nothing).
    pub fn finalize(&self) -> Option<f64> {
        match self {
            Annotation::Count(c) => c.to_f64(),
            Annotation::SumReal(s) => Some(*s),
            Annotation::Avg { count, sum } => (*count != 0.0).then(|| sum / count),
            Annotation::MaxTropical(v) | Annotation::MinTropical(v) => v.is_finite().then_some(*v),
        }
    }

    pub fn is_zero(&self) -> bool {
        *self == Annotation::zero(self.kind())
    }

    pub fn is_one(&self) -> bool {
        *self == Annotation::one(self.kind())
    }

    /// Equality up to a relative tolerance for float kinds; exact for `Count`.
    /// `Avg` compares the (count, sum) pair, not the ratio.
    pub fn approx_eq(&self, other: &Annotation, tol: f64) -> bool {
        use Annotation::*;
        match (self, other) {
            (Count(a), Count(b)) => a == b,
            (SumReal(a), SumReal(b)) => close(*a, *b, tol),
            (Avg { count: c1, sum: s1 }, Avg { count: c2, sum: s2 }) => {
                close(*c1, *c2, tol) && close(*s1, *s2, tol)
            }
            (MaxTropical(a), MaxTropical(b)) | (MinTropical(a), MinTropical(b)) => close(*a, *b, tol),
            _ => false,
        }
    }

    /// Folds `items` with `add`, starting from zero.
    pub fn sum<'a>(kind: SemiringKind, items: impl IntoIterator<Item = &'a Annotation>) -> Result<Annotation> {
        items.into_iter().try_fold(Annotation::zero(kind), |acc, a| acc.add(a))
    }

    /// Distance from `one`, used to rank fanout offenders.
    pub fn distance_from_one(&self) -> f64 {
        match self {
            Annotation::Avg { count, sum } => (count - 1.0).abs() + sum.abs(),
            other => match (other.finalize(), Annotation::one(other.kind()).finalize()) {
                (Some(v), Some(o)) => (v - o).abs(),
                _ => f64::INFINITY,
            },
        }
    }
}

// Tropical `+` with the annihilating element absorbing, so that zero ⊗ x = zero
// even when x is the opposite infinity.
fn tropical_plus(a: f64, b: f64, zero: f64) -> f64 {
    if a == zero || b == zero {
        zero
    } else {
        a + b
    }
}

/// Relative closeness; absolute near zero. Equal infinities compare equal.
pub fn close(a: f64, b: f64, tol: f64) -> bool {
    if a == b {
        return true;
    }
    if !a.is_finite() || !b.is_finite() {
        return false;
    }
    (a - b).abs() <= tol * a.abs().max(b.abs()).max(1.0)
}

impl fmt::Display for Annotation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Annotation::Count(c) => write!(f, "{c}"),
            Annotation::SumReal(s) => write!(f, "{s}"),
            Annotation::Avg { count, sum } => write!(f, "({count}, {sum})"),
            Annotation::MaxTropical(v) | Annotation::MinTropical(v) => write!(f, "{v}"),
        }
    }
}

#[derive(Serialize, Deserialize)]
struct AnnotationRepr {
    kind: SemiringKind,
    /// Finalized scalar.
    value: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    exact: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    count: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    sum: Option<f64>,
}

impl Serialize for Annotation {
    fn serialize<S: Serializer>(&self, serializer: S) -> std::result::Result<S::Ok, S::Error> {
        let mut repr = AnnotationRepr {
            kind: self.kind(),
            value: self.finalize(),
            exact: None,
            count: None,
            sum: None,
        };
        match self {
            Annotation::Count(c) => repr.exact = Some(c.to_string()),
            Annotation::Avg { count, sum } => {
                repr.count = Some(*count);
                repr.sum = Some(*sum);
            }
            _ => {}
        }
        repr.serialize(serializer)
    }
}

impl<'de> Deserialize<'de> for Annotation {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> std::result::Result<Self, D::Error> {
        use serde::de::Error as _;
        let repr = AnnotationRepr::deserialize(deserializer)?;
        Ok(match repr.kind {
            SemiringKind::Count => {
                let exact = repr.exact.ok_or_else(|| D::Error::missing_field("exact"))?;
                Annotation::Count(parse_rational(&exact).map_err(D::Error::custom)?)
            }
            SemiringKind::SumReal => Annotation::SumReal(repr.value.unwrap_or(0.0)),
            SemiringKind::Avg => Annotation::Avg {
                count: repr.count.ok_or_else(|| D::Error::missing_field("count"))?,
                sum: repr.sum.ok_or_else(|| D::Error::missing_field("sum"))?,
            },
            SemiringKind::MaxTropical => Annotation::MaxTropical(repr.value.unwrap_or(f64::NEG_INFINITY)),
            SemiringKind::MinTropical => Annotation::MinTropical(repr.value.unwrap_or(f64::INFINITY)),
        })
    }
}

/// A non-negative multiplier applied to an annotation. Stored exactly so that
/// count-mode weighing stays rational.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Weight(Rational);

impl Weight {
    pub fn new(r: Rational) -> Result<Self> {
        if r.is_negative() {
            return Err(Error::InvalidWeight(r.to_string()));
        }
        Ok(Weight(r))
    }

    pub fn one() -> Self {
        Weight(Rational::one())
    }

    pub fn zero() -> Self {
        Weight(Rational::zero())
    }

    /// `1/n`; `n` must be positive.
    pub fn reciprocal(n: usize) -> Self {
        Weight(Rational::new(BigInt::one(), BigInt::from(n)))
    }

    /// Converts through the shortest decimal that round-trips, so `0.1`
    /// becomes `1/10` rather than its binary expansion.
    pub fn from_f64(w: f64) -> Result<Self> {
        if !w.is_finite() {
            return Err(Error::InvalidWeight(w.to_string()));
        }
        format!("{w}").parse()
    }

    pub fn as_rational(&self) -> &Rational {
        &self.0
    }

    pub fn to_f64(&self) -> f64 {
        self.0.to_f64().unwrap_or(f64::NAN)
    }
}

impl fmt::Display for Weight {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

impl std::str::FromStr for Weight {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Weight::new(parse_rational(s)?)
    }
}

impl Serialize for Weight {
    fn serialize<S: Serializer>(&self, serializer: S) -> std::result::Result<S::Ok, S::Error> {
        serializer.serialize_str(&self.0.to_string())
    }
}

impl<'de> Deserialize<'de> for Weight {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> std::result::Result<Self, D::Error> {
        use serde::de::Error as _;
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Raw {
            Num(f64),
            Str(String),
        }
        let text = match Raw::deserialize(deserializer)? {
            // Shortest round-trip decimal, so 0.7 becomes 7/10 rather than its binary expansion.
            Raw::Num(n) => format!("{n}"),
            Raw::Str(s) => s,
        };
        text.parse().map_err(D::Error::custom)
    }
}

/// Parses `p/q`, plain integers, and decimal literals (optionally with an
/// exponent) into an exact rational.
pub fn parse_rational(s: &str) -> Result<Rational> {
    let bad = || Error::InvalidWeight(s.to_string());
    let s = s.trim();
    if let Some((n, d)) = s.split_once('/') {
        let n: BigInt = n.trim().parse().map_err(|_| bad())?;
        let d: BigInt = d.trim().parse().map_err(|_| bad())?;
        if d.is_zero() {
            return Err(bad());
        }
        return Ok(Rational::new(n, d));
    }
    let (mantissa, exp) = match s.find(['e', 'E']) {
        Some(i) => (&s[..i], s[i + 1..].parse::<i32>().map_err(|_| bad())?),
        None => (s, 0),
    };
    let (negative, digits) = match mantissa.strip_prefix('-') {
        Some(rest) => (true, rest),
        None => (false, mantissa.strip_prefix('+').unwrap_or(mantissa)),
    };
    let (int_part, frac_part) = digits.split_once('.').unwrap_or((digits, ""));
    if int_part.is_empty() && frac_part.is_empty() {
        return Err(bad());
    }
    if !int_part.chars().chain(frac_part.chars()).all(|c| c.is_ascii_digit()) {
        return Err(bad());
    }
    let mut numer: BigInt = format!("{int_part}{frac_part}").parse().map_err(|_| bad())?;
    if negative {
        numer = -numer;
    }
    let scale = exp - frac_part.len() as i32;
    let ten = BigInt::from(10);
    let r = if scale >= 0 {
        Rational::from_integer(numer * num_traits::pow(ten, scale as usize))
    } else {
        Rational::new(numer, num_traits::pow(ten, (-scale) as usize))
    };
    Ok(r)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn avg(count: f64, sum: f64) -> Annotation {
        Annotation::Avg { count, sum }
    }

    #[test]
    fn add_examples() {
        assert_eq!(Annotation::count(1).add(&Annotation::count(3)).unwrap(), Annotation::count(4));
        assert_eq!(
            Annotation::SumReal(20.0).add(&Annotation::SumReal(50.0)).unwrap(),
            Annotation::SumReal(70.0)
        );
        assert_eq!(
            Annotation::MaxTropical(0.0).add(&Annotation::MaxTropical(0.0)).unwrap(),
            Annotation::MaxTropical(0.0)
        );
    }

    #[test]
    fn kind_mismatch() {
        let err = Annotation::count(1).add(&Annotation::SumReal(1.0)).unwrap_err();
        assert!(matches!(err, Error::KindMismatch { .. }));
        assert!(Annotation::count(1).mul(&Annotation::SumReal(1.0)).is_err());
    }

    #[test]
    fn mul_examples() {
        assert_eq!(Annotation::count(1).mul(&Annotation::count(2)).unwrap(), Annotation::count(2));
        assert_eq!(Annotation::count(3).mul(&Annotation::count(1)).unwrap(), Annotation::count(3));
        for x in [0.0, 20.0, -5.0] {
            let one = Annotation::one(SemiringKind::SumReal);
            assert_eq!(Annotation::SumReal(x).mul(&one).unwrap(), Annotation::SumReal(x));
        }
    }

    #[test]
    fn avg_times_count_lift_matches_replication() {
        // Two rows with values 20 and 30, each replicated three times.
        let rows = [20.0, 30.0];
        let replicated: Vec<f64> = rows.iter().flat_map(|v| std::iter::repeat_n(*v, 3)).collect();
        let oracle = avg(replicated.len() as f64, replicated.iter().sum());

        let lifted = Annotation::lift_count(SemiringKind::Avg, 3);
        let got = avg(2.0, 50.0).mul(&lifted).unwrap();
        assert_eq!(got, oracle);
        assert_eq!(got, avg(6.0, 150.0));
    }

    #[test]
    fn scale_examples() {
        let half = Weight::reciprocal(2);
        assert_eq!(Annotation::SumReal(20.0).scale(&half).unwrap(), Annotation::SumReal(10.0));
        assert_eq!(Annotation::SumReal(50.0).scale(&Weight::one()).unwrap(), Annotation::SumReal(50.0));
        assert_eq!(Annotation::count(4).scale(&Weight::zero()).unwrap(), Annotation::count(0));
        assert!(matches!(
            Annotation::MaxTropical(3.0).scale(&half),
            Err(Error::UnsupportedScale(SemiringKind::MaxTropical))
        ));
    }

    #[test]
    fn finalize_examples() {
        // Four values summing to 280: 40, 60, 80, 100.
        let vals = [40.0, 60.0, 80.0, 100.0];
        let mean = vals.iter().sum::<f64>() / vals.len() as f64;
        assert_eq!(avg(4.0, 280.0).finalize(), Some(mean));
        assert_eq!(avg(4.0, 280.0).finalize(), Some(70.0));
        assert_eq!(avg(0.0, 0.0).finalize(), None);
        assert_eq!(Annotation::MaxTropical(f64::NEG_INFINITY).finalize(), None);
        assert_eq!(Annotation::MinTropical(f64::INFINITY).finalize(), None);
        assert_eq!(Annotation::count(3).finalize(), Some(3.0));
    }

    #[test]
    fn tropical_zero_annihilates() {
        let z = Annotation::zero(SemiringKind::MaxTropical);
        assert_eq!(z.mul(&Annotation::MaxTropical(f64::INFINITY)).unwrap(), z);
        let z = Annotation::zero(SemiringKind::MinTropical);
        assert_eq!(z.mul(&Annotation::MinTropical(f64::NEG_INFINITY)).unwrap(), z);
    }

    #[test]
    fn parse_rational_forms() {
        let r = |n: i64, d: i64| Rational::new(BigInt::from(n), BigInt::from(d));
        assert_eq!(parse_rational("0.5").unwrap(), r(1, 2));
        assert_eq!(parse_rational("1/3").unwrap(), r(1, 3));
        assert_eq!(parse_rational("1").unwrap(), r(1, 1));
        assert_eq!(parse_rational(".25").unwrap(), r(1, 4));
        assert_eq!(parse_rational("2.5e-1").unwrap(), r(1, 4));
        assert_eq!(parse_rational("1e2").unwrap(), r(100, 1));
        assert!(parse_rational("abc").is_err());
        assert!(parse_rational("1/0").is_err());
        assert!("-0.5".parse::<Weight>().is_err());
    }

    #[test]
    fn weight_json_numbers_are_decimal_exact() {
        let w: Weight = serde_json::from_str("0.7").unwrap();
        assert_eq!(w, "7/10".parse().unwrap());
        let w: Weight = serde_json::from_str("\"1/3\"").unwrap();
        assert_eq!(serde_json::to_string(&w).unwrap(), "\"1/3\"");
        assert_eq!(Weight::from_f64(0.1).unwrap(), "1/10".parse().unwrap());
        assert!(Weight::from_f64(f64::NAN).is_err());
    }

    #[test]
    fn annotation_json_roundtrip() {
        for a in [
            Annotation::Count(Rational::new(BigInt::from(5), BigInt::from(3))),
            Annotation::SumReal(-2.5),
            avg(3.0, 7.5),
            Annotation::zero(SemiringKind::MaxTropical),
            Annotation::MinTropical(4.0),
        ] {
            let json = serde_json::to_string(&a).unwrap();
            let back: Annotation = serde_json::from_str(&json).unwrap();
            assert_eq!(back, a, "{json}");
        }
    }
}
