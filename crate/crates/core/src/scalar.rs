//! Numeric modes and the mode-tagged scalar used across the public API.
//!
//! Two arithmetics are supported: exact rationals (the oracle mode) and
//! binary floating point at a configurable precision. Both are backed by
//! GMP/MPFR through `rug`.

use std::cmp::Ordering;
use std::fmt;
use std::ops::{Add, Div, Mul, Neg, Sub};

use rug::ops::{Pow, SubFrom};
use rug::{Assign, Float, Integer, Rational};

use crate::error::{DrError, Result};

/// Arithmetic used to represent probabilities and derived statistics.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum NumericMode {
    ExactRational,
    BigFloat { precision_bits: u32 },
}

impl NumericMode {
    pub const DEFAULT_PRECISION: u32 = 256;
    pub const MIN_PRECISION: u32 = 64;

    pub fn exact() -> Self {
        NumericMode::ExactRational
    }

    pub fn big_float(precision_bits: u32) -> Result<Self> {
        if precision_bits < Self::MIN_PRECISION {
            return Err(DrError::Config(format!(
                "precision_bits must be at least {}, got {precision_bits}",
                Self::MIN_PRECISION
            )));
        }
        Ok(NumericMode::BigFloat { precision_bits })
    }

    pub fn is_exact(&self) -> bool {
        matches!(self, NumericMode::ExactRational)
    }

    /// Working precision in bits; exact mode reports the default float precision,
    /// which is what irrational results (roots, logarithms) fall back to.
    pub fn precision(&self) -> u32 {
        match self {
            NumericMode::ExactRational => Self::DEFAULT_PRECISION,
            NumericMode::BigFloat { precision_bits } => *precision_bits,
        }
    }

    pub fn zero(&self) -> Scalar {
        self.from_int(0)
    }

    pub fn one(&self) -> Scalar {
        self.from_int(1)
    }

    pub fn from_int(&self, v: i64) -> Scalar {
        match self {
            NumericMode::ExactRational => Scalar::Exact(Rational::from(v)),
            NumericMode::BigFloat { precision_bits } => {
                Scalar::Float(Float::with_val(*precision_bits, v))
            }
        }
    }

    pub fn from_ratio(&self, num: i64, den: u64) -> Scalar {
        assert!(den != 0, "zero denominator");
        self.from_rational(&Rational::from((num, den)))
    }

    pub fn from_rational(&self, r: &Rational) -> Scalar {
        match self {
            NumericMode::ExactRational => Scalar::Exact(r.clone()),
            NumericMode::BigFloat { precision_bits } => {
                Scalar::Float(Float::with_val(*precision_bits, r))
            }
        }
    }

    /// Converts any scalar into this mode. Floats entering exact mode are
    /// converted to the exact rational they represent.
    pub fn convert(&self, s: &Scalar) -> Scalar {
        match (self, s) {
            (NumericMode::ExactRational, Scalar::Exact(r)) => Scalar::Exact(r.clone()),
            (NumericMode::ExactRational, Scalar::Float(f)) => {
                Scalar::Exact(f.to_rational().unwrap_or_default())
            }
            (NumericMode::BigFloat { precision_bits }, Scalar::Exact(r)) => {
                Scalar::Float(Float::with_val(*precision_bits, r))
            }
            (NumericMode::BigFloat { precision_bits }, Scalar::Float(f)) => {
                Scalar::Float(Float::with_val(*precision_bits, f))
            }
        }
    }

    /// Parses `a/b`, an integer, or a decimal such as `0.2` or `1e-30`.
    ///
    /// Exact mode converts decimals to the rational they denote; float mode
    /// rounds correctly to the working precision.
    pub fn parse(&self, text: &str) -> Result<Scalar> {
        let r = parse_rational(text)?;
        Ok(self.from_rational(&r))
    }

    pub fn matches(&self, s: &Scalar) -> bool {
        match (self, s) {
            (NumericMode::ExactRational, Scalar::Exact(_)) => true,
            (NumericMode::BigFloat { precision_bits }, Scalar::Float(f)) => f.prec() == *precision_bits,
            _ => false,
        }
    }
}

impl fmt::Display for NumericMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            NumericMode::ExactRational => write!(f, "exact"),
            NumericMode::BigFloat { precision_bits } => write!(f, "bigfloat:{precision_bits}"),
        }
    }
}

impl std::str::FromStr for NumericMode {
    type Err = DrError;

    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim();
        if s == "exact" {
            return Ok(NumericMode::ExactRational);
        }
        if s == "bigfloat" {
            return NumericMode::big_float(NumericMode::DEFAULT_PRECISION);
        }
        if let Some(bits) = s.strip_prefix("bigfloat:") {
            let bits = bits
                .parse::<u32>()
                .map_err(|_| DrError::Config(format!("bad precision in mode {s:?}")))?;
            return NumericMode::big_float(bits);
        }
        Err(DrError::Config(format!("unknown numeric mode {s:?}")))
    }
}

/// Parses an exact rational from `a/b`, an integer, or a decimal literal.
pub fn parse_rational(text: &str) -> Result<Rational> {
    let t = text.trim();
    let bad = || DrError::Config(format!("cannot parse number {text:?}"));
    if t.is_empty() {
        return Err(bad());
    }
    if t.contains('/') {
        let r = Rational::parse(t).map_err(|_| bad())?;
        return Ok(Rational::from(r));
    }
    let (mantissa, exponent) = match t.find(['e', 'E']) {
        Some(i) => (&t[..i], t[i + 1..].parse::<i64>().map_err(|_| bad())?),
        None => (t, 0),
    };
    let (negative, mantissa) = match mantissa.as_bytes().first() {
        Some(b'-') => (true, &mantissa[1..]),
        Some(b'+') => (false, &mantissa[1..]),
        _ => (false, mantissa),
    };
    let (int_part, frac_part) = match mantissa.find('.') {
        Some(i) => (&mantissa[..i], &mantissa[i + 1..]),
        None => (mantissa, ""),
    };
    if int_part.is_empty() && frac_part.is_empty() {
        return Err(bad());
    }
    if !int_part.bytes().chain(frac_part.bytes()).all(|b| b.is_ascii_digit()) {
        return Err(bad());
    }
    let digits = format!("{int_part}{frac_part}");
    let mut num = Integer::from_str_radix(if digits.is_empty() { "0" } else { &digits }, 10)
        .map_err(|_| bad())?;
    if negative {
        num = -num;
    }
    let scale = exponent - frac_part.len() as i64;
    if scale.unsigned_abs() > 1_000_000 {
        return Err(bad());
    }
    let pow = Integer::from(Integer::u_pow_u(10, scale.unsigned_abs() as u32));
    Ok(if scale >= 0 {
        Rational::from(num * pow)
    } else {
        Rational::from((num, pow))
    })
}

/// A scalar tagged with the arithmetic that produced it.
///
/// Mixed arithmetic promotes to floating point at the float operand's precision.
#[derive(Clone, Debug, PartialEq)]
pub enum Scalar {
    Exact(Rational),
    Float(Float),
}

impl Scalar {
    pub fn mode(&self) -> NumericMode {
        match self {
            Scalar::Exact(_) => NumericMode::ExactRational,
            Scalar::Float(f) => NumericMode::BigFloat { precision_bits: f.prec() },
        }
    }

    pub fn is_exact(&self) -> bool {
        matches!(self, Scalar::Exact(_))
    }

    pub fn as_rational(&self) -> Option<&Rational> {
        match self {
            Scalar::Exact(r) => Some(r),
            Scalar::Float(_) => None,
        }
    }

    pub fn as_float(&self) -> Option<&Float> {
        match self {
            Scalar::Float(f) => Some(f),
            Scalar::Exact(_) => None,
        }
    }

    /// Float view at `prec` bits (exact values are rounded).
    pub fn to_float(&self, prec: u32) -> Float {
        match self {
            Scalar::Exact(r) => Float::with_val(prec, r),
            Scalar::Float(f) => Float::with_val(prec, f),
        }
    }

    pub fn to_f64(&self) -> f64 {
        match self {
            Scalar::Exact(r) => r.to_f64(),
            Scalar::Float(f) => f.to_f64(),
        }
    }

    pub fn is_zero(&self) -> bool {
        match self {
            Scalar::Exact(r) => r.cmp0() == Ordering::Equal,
            Scalar::Float(f) => f.is_zero(),
        }
    }

    pub fn signum(&self) -> Ordering {
        match self {
            Scalar::Exact(r) => r.cmp0(),
            Scalar::Float(f) => f.cmp0().unwrap_or(Ordering::Equal),
        }
    }

    pub fn is_negative(&self) -> bool {
        self.signum() == Ordering::Less
    }

    pub fn abs(&self) -> Scalar {
        match self {
            Scalar::Exact(r) => Scalar::Exact(r.clone().abs()),
            Scalar::Float(f) => Scalar::Float(f.clone().abs()),
        }
    }

    pub fn powi(&self, e: i32) -> Scalar {
        match self {
            Scalar::Exact(r) => Scalar::Exact(r.clone().pow(e)),
            Scalar::Float(f) => Scalar::Float(f.clone().pow(e)),
        }
    }

    /// Principal `k`-th root. Exact inputs stay exact when the root is rational.
    pub fn root(&self, k: u32) -> Result<Scalar> {
        if self.is_negative() {
            return Err(DrError::Domain(format!("root of negative value {self}")));
        }
        match self {
            Scalar::Exact(r) => {
                let (n, d) = (r.numer(), r.denom());
                let rn = n.clone().root(k);
                let rd = d.clone().root(k);
                if rn.clone().pow(k) == *n && rd.clone().pow(k) == *d {
                    Ok(Scalar::Exact(Rational::from((rn, rd))))
                } else {
                    let f = Float::with_val(NumericMode::DEFAULT_PRECISION, r);
                    Ok(Scalar::Float(f.root(k)))
                }
            }
            Scalar::Float(f) => Ok(Scalar::Float(f.clone().root(k))),
        }
    }

    /// Natural logarithm, computed in floating point.
    pub fn ln(&self, prec: u32) -> Scalar {
        Scalar::Float(self.to_float(prec).ln())
    }

    /// Canonical text form: `a/b` for rationals, the shortest decimal that
    /// reads back to the same value for floats.
    pub fn to_canonical(&self) -> String {
        match self {
            Scalar::Exact(r) => format!("{}/{}", r.numer(), r.denom()),
            Scalar::Float(f) => shortest_decimal(f),
        }
    }

    /// Parses the canonical form for the given mode.
    pub fn from_canonical(text: &str, mode: NumericMode) -> Result<Scalar> {
        match mode {
            NumericMode::ExactRational => {
                let r = Rational::parse(text.trim())
                    .map_err(|_| DrError::Config(format!("cannot parse rational {text:?}")))?;
                Ok(Scalar::Exact(Rational::from(r)))
            }
            NumericMode::BigFloat { precision_bits } => {
                let f = Float::parse(text.trim())
                    .map_err(|_| DrError::Config(format!("cannot parse float {text:?}")))?;
                Ok(Scalar::Float(Float::with_val(precision_bits, f)))
            }
        }
    }

    /// Lossless, radix-independent encoding: `a/b` for rationals and
    /// `<sign><mantissa>p<binary exponent>` for floats.
    pub fn encode_exact(&self) -> String {
        match self {
            Scalar::Exact(r) => format!("{}/{}", r.numer(), r.denom()),
            Scalar::Float(f) => match f.to_integer_exp() {
                Some((mant, exp)) => {
                    let sign = if mant.cmp0() == Ordering::Less { "-" } else { "+" };
                    format!("{sign}{}p{exp}", mant.abs())
                }
                None if f.is_zero() => "+0p0".to_string(),
                None => format!("{f}"),
            },
        }
    }

    pub fn decode_exact(text: &str, mode: NumericMode) -> Result<Scalar> {
        let bad = || DrError::Load(format!("malformed scalar {text:?}"));
        match mode {
            NumericMode::ExactRational => {
                let r = Rational::parse(text).map_err(|_| bad())?;
                Ok(Scalar::Exact(Rational::from(r)))
            }
            NumericMode::BigFloat { precision_bits } => {
                let (mant, exp) = text.split_once('p').ok_or_else(bad)?;
                let mant = Integer::parse(mant).map_err(|_| bad())?;
                let exp: i32 = exp.parse().map_err(|_| bad())?;
                let mant = Integer::from(mant);
                if mant.significant_bits() > precision_bits {
                    return Err(DrError::Load(format!(
                        "mantissa of {text:?} exceeds {precision_bits} bits"
                    )));
                }
                let mut f = Float::with_val(precision_bits, mant);
                f <<= exp;
                Ok(Scalar::Float(f))
            }
        }
    }
}

fn shortest_decimal(f: &Float) -> String {
    if f.is_zero() {
        return "0".to_string();
    }
    if !f.is_finite() {
        return f.to_string();
    }
    let prec = f.prec();
    let render = |digits: usize| -> String {
        let (neg, s, exp) = f.to_sign_string_exp(10, Some(digits));
        let exp = exp.unwrap_or(0) - 1;
        let s = s.trim_end_matches('0');
        let s = if s.is_empty() { "0" } else { s };
        let (head, tail) = s.split_at(1);
        let sign = if neg { "-" } else { "" };
        if tail.is_empty() {
            format!("{sign}{head}e{exp}")
        } else {
            format!("{sign}{head}.{tail}e{exp}")
        }
    };
    let round_trips = |s: &str| {
        Float::parse(s)
            .map(|p| Float::with_val(prec, p) == *f)
            .unwrap_or(false)
    };
    let mut lo = 1usize;
    let mut hi = (f64::from(prec) * std::f64::consts::LOG10_2).ceil() as usize + 2;
    while lo < hi {
        let mid = (lo + hi) / 2;
        if round_trips(&render(mid)) {
            hi = mid;
        } else {
            lo = mid + 1;
        }
    }
    render(lo)
}

impl fmt::Display for Scalar {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.to_canonical())
    }
}

impl PartialOrd for Scalar {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        match (self, other) {
            (Scalar::Exact(a), Scalar::Exact(b)) => a.partial_cmp(b),
            (Scalar::Float(a), Scalar::Float(b)) => a.partial_cmp(b),
            (Scalar::Exact(a), Scalar::Float(b)) => a.partial_cmp(b),
            (Scalar::Float(a), Scalar::Exact(b)) => a.partial_cmp(b),
        }
    }
}

macro_rules! scalar_binop {
    ($trait:ident, $method:ident, $op:tt) => {
        impl $trait<&Scalar> for &Scalar {
            type Output = Scalar;
            fn $method(self, rhs: &Scalar) -> Scalar {
                match (self, rhs) {
                    (Scalar::Exact(a), Scalar::Exact(b)) => Scalar::Exact(Rational::from(a $op b)),
                    (Scalar::Float(a), Scalar::Float(b)) => {
                        let prec = a.prec().max(b.prec());
                        Scalar::Float(Float::with_val(prec, a $op b))
                    }
                    (Scalar::Exact(a), Scalar::Float(b)) => {
                        let a = Float::with_val(b.prec(), a);
                        Scalar::Float(Float::with_val(b.prec(), &a $op b))
                    }
                    (Scalar::Float(a), Scalar::Exact(b)) => {
                        let b = Float::with_val(a.prec(), b);
                        Scalar::Float(Float::with_val(a.prec(), a $op &b))
                    }
                }
            }
        }
        impl $trait<Scalar> for Scalar {
            type Output = Scalar;
            fn $method(self, rhs: Scalar) -> Scalar {
                &self $op &rhs
            }
        }
        impl $trait<&Scalar> for Scalar {
            type Output = Scalar;
            fn $method(self, rhs: &Scalar) -> Scalar {
                &self $op rhs
            }
        }
        impl $trait<Scalar> for &Scalar {
            type Output = Scalar;
            fn $method(self, rhs: Scalar) -> Scalar {
                self $op &rhs
            }
        }
        impl $trait<i64> for &Scalar {
            type Output = Scalar;
            fn $method(self, rhs: i64) -> Scalar {
                let rhs = self.mode().from_int(rhs);
                self $op &rhs
            }
        }
        impl $trait<i64> for Scalar {
            type Output = Scalar;
            fn $method(self, rhs: i64) -> Scalar {
                &self $op rhs
            }
        }
    };
}

scalar_binop!(Add, add, +);
scalar_binop!(Sub, sub, -);
scalar_binop!(Mul, mul, *);
scalar_binop!(Div, div, /);

impl Neg for Scalar {
    type Output = Scalar;
    fn neg(self) -> Scalar {
        match self {
            Scalar::Exact(r) => Scalar::Exact(-r),
            Scalar::Float(f) => Scalar::Float(-f),
        }
    }
}

impl Neg for &Scalar {
    type Output = Scalar;
    fn neg(self) -> Scalar {
        -self.clone()
    }
}

/// In-place arithmetic shared by the exact and float hot loops.
pub(crate) trait Num: Clone + PartialOrd + Send + Sync + fmt::Debug {
    fn zero_with(prec: u32) -> Self;
    fn from_u64_with(v: u64, prec: u32) -> Self;
    fn from_scalar(s: &Scalar, prec: u32) -> Self;
    fn into_scalar(self) -> Scalar;
    fn add_ref(&mut self, other: &Self);
    fn mul_ref(&mut self, other: &Self);
    fn mul_u64(&mut self, v: u64);
    fn set_mul(&mut self, a: &Self, b: &Self);
    fn set(&mut self, a: &Self);
    /// `self = v - self`.
    fn rsub_u64(&mut self, v: u64);
    /// Rough `log2 |self|`; `None` for zero.
    fn log2_approx(&self) -> Option<f64>;
    fn is_zero_val(&self) -> bool;
    fn to_f64_val(&self) -> f64;
}

impl Num for Rational {
    fn zero_with(_: u32) -> Self {
        Rational::new()
    }
    fn from_u64_with(v: u64, _: u32) -> Self {
        Rational::from(v)
    }
    fn from_scalar(s: &Scalar, _: u32) -> Self {
        match s {
            Scalar::Exact(r) => r.clone(),
            Scalar::Float(f) => f.to_rational().unwrap_or_default(),
        }
    }
    fn into_scalar(self) -> Scalar {
        Scalar::Exact(self)
    }
    fn add_ref(&mut self, other: &Self) {
        *self += other;
    }
    fn mul_ref(&mut self, other: &Self) {
        *self *= other;
    }
    fn mul_u64(&mut self, v: u64) {
        *self *= v;
    }
    fn set_mul(&mut self, a: &Self, b: &Self) {
        self.assign(a * b);
    }
    fn set(&mut self, a: &Self) {
        self.assign(a);
    }
    fn rsub_u64(&mut self, v: u64) {
        *self -= v;
        *self = -std::mem::take(self);
    }
    fn log2_approx(&self) -> Option<f64> {
        if self.cmp0() == Ordering::Equal {
            return None;
        }
        let n = self.numer().significant_bits() as f64;
        let d = self.denom().significant_bits() as f64;
        Some(n - d)
    }
    fn is_zero_val(&self) -> bool {
        self.cmp0() == Ordering::Equal
    }
    fn to_f64_val(&self) -> f64 {
        self.to_f64()
    }
}

impl Num for Float {
    fn zero_with(prec: u32) -> Self {
        Float::new(prec)
    }
    fn from_u64_with(v: u64, prec: u32) -> Self {
        Float::with_val(prec, v)
    }
    fn from_scalar(s: &Scalar, prec: u32) -> Self {
        s.to_float(prec)
    }
    fn into_scalar(self) -> Scalar {
        Scalar::Float(self)
    }
    fn add_ref(&mut self, other: &Self) {
        *self += other;
    }
    fn mul_ref(&mut self, other: &Self) {
        *self *= other;
    }
    fn mul_u64(&mut self, v: u64) {
        *self *= v;
    }
    fn set_mul(&mut self, a: &Self, b: &Self) {
        self.assign(a * b);
    }
    fn set(&mut self, a: &Self) {
        self.assign(a);
    }
    fn rsub_u64(&mut self, v: u64) {
        self.sub_from(v);
    }
    fn log2_approx(&self) -> Option<f64> {
        if self.is_zero() {
            return None;
        }
        let (mant, exp) = self.to_f64_exp();
        Some(mant.abs().log2() + exp as f64)
    }
    fn is_zero_val(&self) -> bool {
        self.is_zero()
    }
    fn to_f64_val(&self) -> f64 {
        self.to_f64()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn decimal_literals_parse_exactly() {
        assert_eq!(parse_rational("0.2").unwrap(), Rational::from((1, 5)));
        assert_eq!(parse_rational("4/5").unwrap(), Rational::from((4, 5)));
        assert_eq!(parse_rational("-1.5e2").unwrap(), Rational::from(-150));
        assert_eq!(
            parse_rational("1e-30").unwrap(),
            Rational::from((1, Integer::from(Integer::u_pow_u(10, 30))))
        );
        assert!(parse_rational("").is_err());
        assert!(parse_rational("abc").is_err());
        assert!(parse_rational(".").is_err());
    }

    #[test]
    fn mode_rejects_low_precision() {
        assert!(NumericMode::big_float(32).is_err());
        assert!(NumericMode::big_float(64).is_ok());
        assert_eq!("bigfloat:128".parse::<NumericMode>().unwrap().precision(), 128);
        assert!("fixed".parse::<NumericMode>().is_err());
    }

    #[test]
    fn exact_root_stays_rational() {
        let x = Scalar::Exact(Rational::from((16, 25)));
        assert_eq!(x.root(2).unwrap(), Scalar::Exact(Rational::from((4, 5))));
        let y = Scalar::Exact(Rational::from(2));
        assert!(!y.root(2).unwrap().is_exact());
        assert!(Scalar::Exact(Rational::from(-1)).root(2).is_err());
    }

    #[test]
    fn shortest_decimal_round_trips() {
        let mode = NumericMode::big_float(256).unwrap();
        for text in ["0.2", "1/3", "8/5", "1e-30", "-7.25", "0"] {
            let x = mode.parse(text).unwrap();
            let s = x.to_canonical();
            let back = Scalar::from_canonical(&s, mode).unwrap();
            assert_eq!(back, x, "{text} -> {s}");
            assert_eq!(back.to_canonical(), s);
        }
        assert_eq!(mode.parse("0.2").unwrap().to_canonical(), "2e-1");
        assert_eq!(mode.parse("8/5").unwrap().to_canonical(), "1.6e0");
    }

    #[test]
    fn exact_encoding_is_lossless() {
        let mode = NumericMode::big_float(256).unwrap();
        let x = mode.parse("1/3").unwrap();
        let enc = x.encode_exact();
        assert_eq!(Scalar::decode_exact(&enc, mode).unwrap(), x);
        let zero = mode.zero();
        assert_eq!(Scalar::decode_exact(&zero.encode_exact(), mode).unwrap(), zero);
        let r = Scalar::Exact(Rational::from((-3, 7)));
        assert_eq!(Scalar::decode_exact(&r.encode_exact(), NumericMode::exact()).unwrap(), r);
    }

    #[test]
    fn mixed_arithmetic_promotes_to_float() {
        let a = Scalar::Exact(Rational::from((1, 2)));
        let b = NumericMode::big_float(128).unwrap().from_int(2);
        let c = &a * &b;
        assert!(!c.is_exact());
        assert_eq!(c.to_f64(), 1.0);
        assert_eq!((&a + 1).to_canonical(), "3/2");
    }
}
