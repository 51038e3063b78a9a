//! Finitely supported mass functions on the non-negative integers and the
//! one-step recursion map.

use std::cmp::Ordering;

use rug::ops::Pow;
use rug::{Assign, Float, Integer, Rational};

use crate::convolution::{self, Audit};
use crate::error::{DrError, Result};
use crate::scalar::{parse_rational, NumericMode, Scalar};

/// Largest support the exact engine will build.
pub const EXACT_SUPPORT_CAP: usize = 1_000_000;

/// Upper bound on the total numerator bits of an exact iterate.
pub const EXACT_BITS_CAP: u64 = 1 << 33;

/// Model constants shared by every step of a run.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelParams {
    pub m: u32,
    /// Trailing entries with `m^k (k+1)^3 p_k` below this are dropped.
    pub truncation_tol: Rational,
    /// Optional hard cap on the largest retained value.
    pub k_max: Option<usize>,
}

impl ModelParams {
    pub fn new(m: u32, truncation_tol: Rational, k_max: Option<usize>) -> Result<Self> {
        if m < 2 {
            return Err(DrError::Config(format!("arity m must be at least 2, got {m}")));
        }
        if truncation_tol.cmp0() == Ordering::Less {
            return Err(DrError::Config("truncation_tol must be non-negative".into()));
        }
        Ok(ModelParams { m, truncation_tol, k_max })
    }

    /// No truncation at all.
    pub fn untruncated(m: u32) -> Result<Self> {
        Self::new(m, Rational::new(), None)
    }

    /// The default BigFloat threshold of `1e-30`.
    pub fn with_default_tol(m: u32) -> Result<Self> {
        Self::new(m, parse_rational("1e-30")?, None)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub(crate) enum Probs {
    Exact(Vec<Rational>),
    Float(Vec<Float>),
}

impl Probs {
    fn len(&self) -> usize {
        match self {
            Probs::Exact(v) => v.len(),
            Probs::Float(v) => v.len(),
        }
    }
}

/// A probability mass function with a truncation ledger.
#[derive(Clone, Debug, PartialEq)]
pub struct Pmf {
    pub(crate) probs: Probs,
    mode: NumericMode,
    discarded_mass: Scalar,
    discarded_weight: Scalar,
}

impl Pmf {
    /// Builds a law from exact probabilities, which must be non-negative and sum to one.
    pub fn from_rationals(mode: NumericMode, probs: Vec<Rational>) -> Result<Self> {
        if probs.is_empty() {
            return Err(DrError::Config("a pmf needs at least one entry".into()));
        }
        if probs.iter().any(|p| p.cmp0() == Ordering::Less) {
            return Err(DrError::Config("probabilities must be non-negative".into()));
        }
        let total: Rational = probs.iter().sum();
        if total != 1 {
            return Err(DrError::Config(format!("probabilities sum to {total}, not 1")));
        }
        let mut probs = probs;
        while probs.len() > 1 && probs.last().is_some_and(|p| p.cmp0() == Ordering::Equal) {
            probs.pop();
        }
        let probs = match mode {
            NumericMode::ExactRational => Probs::Exact(probs),
            NumericMode::BigFloat { precision_bits } => {
                Probs::Float(probs.iter().map(|p| Float::with_val(precision_bits, p)).collect())
            }
        };
        Ok(Pmf { probs, mode, discarded_mass: mode.zero(), discarded_weight: mode.zero() })
    }

    /// Builds a law from `(value, probability)` pairs; repeated values accumulate.
    pub fn from_pairs(mode: NumericMode, pairs: &[(usize, Rational)]) -> Result<Self> {
        let len = pairs.iter().map(|(k, _)| k + 1).max().unwrap_or(0);
        if len > EXACT_SUPPORT_CAP {
            return Err(DrError::Resource(format!("support value {} exceeds cap", len - 1)));
        }
        let mut probs = vec![Rational::new(); len];
        for (k, p) in pairs {
            probs[*k] += p;
        }
        Self::from_rationals(mode, probs)
    }

    /// Parses `value:prob` pairs separated by commas, e.g. `0:4/5,2:1/5` or `0:0.8,2:0.2`.
    pub fn parse(mode: NumericMode, text: &str) -> Result<Self> {
        let mut pairs = Vec::new();
        for item in text.split(',').map(str::trim).filter(|s| !s.is_empty()) {
            let (k, p) = item
                .split_once(':')
                .ok_or_else(|| DrError::Config(format!("expected value:prob, got {item:?}")))?;
            let k: usize = k
                .trim()
                .parse()
                .map_err(|_| DrError::Config(format!("bad support value {k:?}")))?;
            pairs.push((k, parse_rational(p)?));
        }
        Self::from_pairs(mode, &pairs)
    }

    /// Point mass at `k`.
    pub fn delta(mode: NumericMode, k: usize) -> Result<Self> {
        Self::from_pairs(mode, &[(k, Rational::from(1))])
    }

    /// Reassembles a law from stored parts, checking every invariant.
    pub fn from_parts(
        mode: NumericMode,
        probs: Vec<Scalar>,
        discarded_mass: Scalar,
        discarded_weight: Scalar,
    ) -> Result<Self> {
        if probs.is_empty() {
            return Err(DrError::Config("a pmf needs at least one entry".into()));
        }
        for s in probs.iter().chain([&discarded_mass, &discarded_weight]) {
            if !mode.matches(s) {
                return Err(DrError::Config(format!("value {s} does not match mode {mode}")));
            }
            if s.is_negative() {
                return Err(DrError::Config(format!("negative value {s} in pmf")));
            }
        }
        let probs = match mode {
            NumericMode::ExactRational => Probs::Exact(
                probs.into_iter().map(|s| s.as_rational().cloned().unwrap_or_default()).collect(),
            ),
            NumericMode::BigFloat { .. } => Probs::Float(
                probs.into_iter().map(|s| s.as_float().cloned().expect("checked mode")).collect(),
            ),
        };
        let pmf = Pmf { probs, mode, discarded_mass, discarded_weight };
        pmf.check_mass()?;
        Ok(pmf)
    }

    fn check_mass(&self) -> Result<()> {
        let total = &self.total_mass() + &self.discarded_mass;
        let dev = (&total - 1).abs();
        let ok = match self.mode {
            NumericMode::ExactRational => dev.is_zero(),
            NumericMode::BigFloat { precision_bits } => {
                let mut tol = Float::with_val(64, self.len() + 1);
                tol >>= precision_bits - 1;
                dev.to_float(64) <= tol
            }
        };
        if ok {
            Ok(())
        } else {
            Err(DrError::Integrity(format!("mass plus ledger is {total}, not 1")))
        }
    }

    pub fn mode(&self) -> NumericMode {
        self.mode
    }

    /// Number of stored entries, `K + 1`.
    pub fn len(&self) -> usize {
        self.probs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Largest value carrying positive mass (0 for the null measure).
    pub fn max_support(&self) -> usize {
        (0..self.len()).rev().find(|&k| !self.get(k).is_zero()).unwrap_or(0)
    }

    /// `P(X = k)` over the retained support (zero beyond it).
    pub fn get(&self, k: usize) -> Scalar {
        match &self.probs {
            Probs::Exact(v) => Scalar::Exact(v.get(k).cloned().unwrap_or_default()),
            Probs::Float(v) => Scalar::Float(
                v.get(k).cloned().unwrap_or_else(|| Float::new(self.mode.precision())),
            ),
        }
    }

    pub fn probs(&self) -> Vec<Scalar> {
        (0..self.len()).map(|k| self.get(k)).collect()
    }

    pub fn discarded_mass(&self) -> &Scalar {
        &self.discarded_mass
    }

    pub fn discarded_weight(&self) -> &Scalar {
        &self.discarded_weight
    }

    pub fn total_mass(&self) -> Scalar {
        match &self.probs {
            Probs::Exact(v) => Scalar::Exact(v.iter().sum()),
            Probs::Float(v) => {
                let mut acc = Float::new(self.mode.precision());
                for x in v {
                    acc += x;
                }
                Scalar::Float(acc)
            }
        }
    }

    /// The `m = 2`, `X ≡ 1` fixed point, which is critical but outside the asymptotic theory.
    pub fn is_degenerate(&self, m: u32) -> bool {
        m == 2
            && self.len() == 2
            && self.get(0).is_zero()
            && (&self.get(1) - 1).is_zero()
            && self.discarded_mass.is_zero()
    }

    /// Re-expresses the law in another numeric mode.
    pub fn to_mode(&self, mode: NumericMode) -> Pmf {
        let probs = match (&self.probs, mode) {
            (Probs::Exact(v), NumericMode::ExactRational) => Probs::Exact(v.clone()),
            (Probs::Float(v), NumericMode::ExactRational) => {
                Probs::Exact(v.iter().map(|x| x.to_rational().unwrap_or_default()).collect())
            }
            (Probs::Exact(v), NumericMode::BigFloat { precision_bits }) => {
                Probs::Float(v.iter().map(|x| Float::with_val(precision_bits, x)).collect())
            }
            (Probs::Float(v), NumericMode::BigFloat { precision_bits }) => {
                Probs::Float(v.iter().map(|x| Float::with_val(precision_bits, x)).collect())
            }
        };
        Pmf {
            probs,
            mode,
            discarded_mass: mode.convert(&self.discarded_mass),
            discarded_weight: mode.convert(&self.discarded_weight),
        }
    }

    pub(crate) fn from_raw(probs: Probs, mode: NumericMode, discarded_mass: Scalar, discarded_weight: Scalar) -> Pmf {
        Pmf { probs, mode, discarded_mass, discarded_weight }
    }

    /// Entries `0..len` only, with the ledger reset. Used for head windows.
    pub(crate) fn head(&self, len: usize) -> Pmf {
        let probs = match &self.probs {
            Probs::Exact(v) => Probs::Exact(v.iter().take(len.max(1)).cloned().collect()),
            Probs::Float(v) => Probs::Float(v.iter().take(len.max(1)).cloned().collect()),
        };
        Pmf { probs, mode: self.mode, discarded_mass: self.mode.zero(), discarded_weight: self.mode.zero() }
    }

    /// Probabilities as a sparse list of `(value, probability)` in canonical text.
    pub fn to_pairs_string(&self) -> String {
        self.probs()
            .iter()
            .enumerate()
            .filter(|(_, p)| !p.is_zero())
            .map(|(k, p)| format!("{k}:{p}"))
            .collect::<Vec<_>>()
            .join(",")
    }
}

/// Law of the sum of independent draws from `a` and `b`.
pub fn convolve(a: &Pmf, b: &Pmf) -> Result<Pmf> {
    if a.mode != b.mode {
        return Err(DrError::Config(format!("mode mismatch: {} vs {}", a.mode, b.mode)));
    }
    let probs = match (&a.probs, &b.probs) {
        (Probs::Exact(x), Probs::Exact(y)) => Probs::Exact(convolution::convolve_rational(x, y)?),
        (Probs::Float(x), Probs::Float(y)) => {
            Probs::Float(convolution::convolve_float(x, y, 2, a.mode.precision())?)
        }
        _ => unreachable!("modes agree"),
    };
    // The retained mass of the sum is the product of retained masses.
    let la = &a.discarded_mass;
    let lb = &b.discarded_mass;
    let discarded_mass = &(la + lb) - &(la * lb);
    let discarded_weight = &a.discarded_weight + &b.discarded_weight;
    Ok(Pmf { probs, mode: a.mode, discarded_mass, discarded_weight })
}

fn check_exact_budget(v: &[Rational], m: u32) -> Result<()> {
    let projected = (v.len().saturating_sub(1)).saturating_mul(m as usize);
    if projected > EXACT_SUPPORT_CAP {
        return Err(DrError::Resource(format!(
            "exact iterate would need {projected} entries (cap {EXACT_SUPPORT_CAP})"
        )));
    }
    let bits = v
        .iter()
        .map(|x| x.numer().significant_bits().max(x.denom().significant_bits()) as u64)
        .max()
        .unwrap_or(0);
    let total = bits.saturating_mul(m as u64).saturating_mul(projected as u64 + 1);
    if total > EXACT_BITS_CAP {
        return Err(DrError::Resource(format!(
            "exact iterate would need about {total} bits of numerators (cap {EXACT_BITS_CAP})"
        )));
    }
    Ok(())
}

fn shift_floor<T: Clone + std::ops::AddAssign<T>>(mut s: Vec<T>) -> Vec<T> {
    if s.len() >= 2 {
        let s1 = s[1].clone();
        s[0] += s1;
        s.remove(1);
    }
    s
}

/// Applies the recursion map without truncation.
///
/// `P(X' = 0)` is set to the complement of the rest and the ledger, so that
/// retained mass plus ledger stays exactly one. Without truncation this is the
/// exact image; with it, the mass removed earlier is not propagated.
pub fn dr_image(p: &Pmf, params: &ModelParams, audit: &Audit) -> Result<Pmf> {
    let m = params.m;
    let probs = match &p.probs {
        Probs::Exact(v) => {
            check_exact_budget(v, m)?;
            let s = shift_floor(convolution::power_rational(v, m, None, audit)?);
            let mut s = s;
            let rest: Rational = s.iter().skip(1).sum();
            let ledger = p.discarded_mass.as_rational().cloned().unwrap_or_default();
            s[0] = Rational::from(1) - ledger - rest;
            Probs::Exact(s)
        }
        Probs::Float(v) => {
            let prec = p.mode.precision();
            let mut s = shift_floor(convolution::power_float(v, m, prec, None, audit)?);
            let mut rest = Float::new(prec + 32);
            for x in s.iter().skip(1) {
                rest += x;
            }
            let mut zero = Float::with_val(prec + 32, 1);
            zero -= p.discarded_mass.to_float(prec + 32);
            zero -= rest;
            // a true zero can come out as a tiny negative from cancellation
            let slack = Float::with_val(64, s.len() + 1) >> (prec - 1);
            if zero.is_sign_negative() && -Float::with_val(64, &zero) <= slack {
                zero.assign(0);
            }
            s[0] = Float::with_val(prec, zero);
            Probs::Float(s)
        }
    };
    Ok(Pmf {
        probs,
        mode: p.mode,
        discarded_mass: p.discarded_mass.clone(),
        discarded_weight: p.discarded_weight.clone(),
    })
}

/// Drops trailing entries that are zero, beyond `k_max`, or whose weight
/// `m^k (k+1)^3 p_k` falls below the tolerance. The removed raw mass and
/// `m^k k^3 p_k` weight go to the ledger. Index 0 is always kept.
pub fn truncate(p: &Pmf, params: &ModelParams) -> Pmf {
    let m = params.m;
    let tol = &params.truncation_tol;
    let k_max = params.k_max.unwrap_or(usize::MAX);
    let mut out = p.clone();
    match &mut out.probs {
        Probs::Exact(v) => {
            let mut mass = Rational::new();
            let mut weight = Rational::new();
            let mut tilt = Integer::from(m).pow(v.len().saturating_sub(1) as u32);
            while v.len() > 1 {
                let k = v.len() - 1;
                let x = &v[k];
                if x.cmp0() != Ordering::Equal {
                    let w = Rational::from(x * &tilt);
                    let crit = Rational::from(&w * Integer::from(k + 1).pow(3));
                    if k <= k_max && crit >= *tol {
                        break;
                    }
                    mass += x;
                    weight += w * Integer::from(k).pow(3);
                }
                v.pop();
                tilt /= m;
            }
            if mass.cmp0() != Ordering::Equal || weight.cmp0() != Ordering::Equal {
                out.discarded_mass = &out.discarded_mass + &Scalar::Exact(mass);
                out.discarded_weight = &out.discarded_weight + &Scalar::Exact(weight);
            }
        }
        Probs::Float(v) => {
            let prec = p.mode.precision();
            let wp = prec + 64;
            let mut mass = Float::new(wp);
            let mut weight = Float::new(wp);
            let top = v.len().saturating_sub(1) as u32;
            let mut tilt = Float::with_val(wp, Float::u_pow_u(m, top));
            let tol = Float::with_val(wp, tol);
            let mut w = Float::new(wp);
            let mut crit = Float::new(wp);
            while v.len() > 1 {
                let k = v.len() - 1;
                let x = &v[k];
                if !x.is_zero() {
                    w.assign(x * &tilt);
                    crit.assign(&w * (k as u64 + 1).pow(3));
                    if k <= k_max && crit >= tol {
                        break;
                    }
                    mass += x;
                    weight += Float::with_val(w.prec(), &w * (k as u64).pow(3));
                }
                v.pop();
                tilt /= m;
            }
            if !mass.is_zero() || !weight.is_zero() {
                out.discarded_mass = &out.discarded_mass + &Scalar::Float(Float::with_val(prec, mass));
                out.discarded_weight =
                    &out.discarded_weight + &Scalar::Float(Float::with_val(prec, weight));
            }
        }
    }
    out
}

/// One step of the recursion followed by truncation.
pub fn dr_step(p: &Pmf, params: &ModelParams) -> Result<Pmf> {
    Ok(truncate(&dr_image(p, params, &Audit::none())?, params))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn q(n: i64, d: u64) -> Rational {
        Rational::from((n, d))
    }

    fn exact(text: &str) -> Pmf {
        Pmf::parse(NumericMode::exact(), text).unwrap()
    }

    #[test]
    fn construction_validates() {
        assert!(Pmf::parse(NumericMode::exact(), "0:1/2,1:1/3").is_err());
        assert!(Pmf::parse(NumericMode::exact(), "0:3/2,1:-1/2").is_err());
        assert!(Pmf::parse(NumericMode::exact(), "0:0.8,2:0.2").is_ok());
        assert!(ModelParams::untruncated(1).is_err());
        assert_eq!(exact("0:1,3:0").len(), 1);
    }

    #[test]
    fn identity_element() {
        let p = exact("0:4/5,2:1/5");
        assert_eq!(convolve(&exact("0:1"), &p).unwrap(), p);
    }

    #[test]
    fn hand_convolution() {
        let p = exact("0:4/5,2:1/5");
        let c = convolve(&p, &p).unwrap();
        assert_eq!(c, exact("0:16/25,2:8/25,4:1/25"));
    }

    #[test]
    fn binomial_triple() {
        let p = exact("0:3/4,1:1/4");
        let c = convolve(&convolve(&p, &p).unwrap(), &p).unwrap();
        assert_eq!(c, exact("0:27/64,1:27/64,2:9/64,3:1/64"));
    }

    #[test]
    fn mode_mismatch_is_config_error() {
        let a = exact("0:1");
        let b = a.to_mode(NumericMode::big_float(128).unwrap());
        assert!(matches!(convolve(&a, &b), Err(DrError::Config(_))));
    }

    #[test]
    fn step_examples() {
        let two = ModelParams::untruncated(2).unwrap();
        let three = ModelParams::untruncated(3).unwrap();
        assert_eq!(dr_step(&exact("0:4/5,2:1/5"), &two).unwrap(), exact("0:16/25,1:8/25,3:1/25"));
        assert_eq!(dr_step(&exact("1:1"), &two).unwrap(), exact("1:1"));
        assert_eq!(dr_step(&exact("0:3/4,1:1/4"), &three).unwrap(), exact("0:27/32,1:9/64,2:1/64"));
    }

    #[test]
    fn truncation_rules() {
        let p = exact("0:4/5,2:1/5");
        let zero_tol = ModelParams::untruncated(2).unwrap();
        assert_eq!(truncate(&p, &zero_tol), p);

        let padded = Pmf::from_raw(
            Probs::Exact(vec![q(1, 2), q(1, 2), Rational::new(), Rational::new()]),
            NumericMode::exact(),
            Scalar::Exact(Rational::new()),
            Scalar::Exact(Rational::new()),
        );
        let t = truncate(&padded, &zero_tol);
        assert_eq!(t.len(), 2);
        assert!(t.discarded_mass().is_zero());

        // weight of k=2 is 4·27·(1/5) = 108/5
        let cut = ModelParams::new(2, q(22, 1), None).unwrap();
        let t = truncate(&p, &cut);
        assert_eq!(t.len(), 1);
        assert_eq!(t.discarded_mass(), &Scalar::Exact(q(1, 5)));
        assert_eq!(t.discarded_weight(), &Scalar::Exact(q(32, 5)));
        let keep = ModelParams::new(2, q(21, 1), None).unwrap();
        assert_eq!(truncate(&p, &keep), p);
        let capped = ModelParams::new(2, Rational::new(), Some(1)).unwrap();
        assert_eq!(truncate(&p, &capped).len(), 1);
    }

    #[test]
    fn truncation_never_leaves_gaps() {
        // the entry at 1 is tiny but followed by a retained one
        let p = exact("0:1/2,1:1/1000000,3:499999/1000000");
        let params = ModelParams::new(2, q(1, 100), None).unwrap();
        assert_eq!(truncate(&p, &params), p);
    }

    #[test]
    fn float_truncation_matches_exact() {
        let p = exact("0:4/5,2:1/5");
        let f = p.to_mode(NumericMode::big_float(256).unwrap());
        let cut = ModelParams::new(2, q(22, 1), None).unwrap();
        let t = truncate(&f, &cut);
        assert_eq!(t.len(), 1);
        assert_eq!(t.discarded_weight().to_f64(), 6.4);
    }

    #[test]
    fn exact_budget_is_enforced() {
        let p = Pmf::delta(NumericMode::exact(), 600_000).unwrap();
        let params = ModelParams::untruncated(2).unwrap();
        assert!(matches!(dr_step(&p, &params), Err(DrError::Resource(_))));
    }

    #[test]
    fn degenerate_detection() {
        assert!(exact("1:1").is_degenerate(2));
        assert!(!exact("1:1").is_degenerate(3));
        assert!(!exact("0:4/5,2:1/5").is_degenerate(2));
    }
}
