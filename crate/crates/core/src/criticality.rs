//! Criticality classification, the parametric critical point, free-energy
//! brackets, and the essential-singularity fit above the transition.

use std::cmp::Ordering;

use rug::Rational;
use serde::Serialize;

use crate::convolution::{self, Audit};
use crate::error::{DrError, Result};
use crate::genfun;
use crate::pmf::{ModelParams, Pmf, Probs, EXACT_BITS_CAP};
use crate::scalar::{NumericMode, Scalar};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub enum Class {
    Subcritical,
    Critical,
    Supercritical,
}

/// Both sides of the criterion `(m-1) E(X m^X)` vs `E(m^X)` and the resulting class.
#[derive(Clone, Debug, PartialEq)]
pub struct CriticalityReport {
    pub lhs: Scalar,
    pub rhs: Scalar,
    /// `lhs - rhs`
    pub margin: Scalar,
    /// Margins within this band count as critical (zero in exact mode).
    pub tolerance: Scalar,
    pub class: Class,
    /// Set for the `m = 2`, `X = 1` fixed point.
    pub degenerate_flag: bool,
}

/// Classifies a law as sub-, super- or critical.
///
/// In float mode margins up to `2^-(precision/2) · rhs` are treated as zero.
pub fn classify(p: &Pmf, params: &ModelParams) -> CriticalityReport {
    let (lhs, rhs) = genfun::criterion_sides(p, params);
    let margin = &lhs - &rhs;
    let tolerance = match p.mode() {
        NumericMode::ExactRational => p.mode().zero(),
        NumericMode::BigFloat { precision_bits } => {
            let mut t = rhs.to_float(precision_bits);
            t >>= precision_bits / 2;
            Scalar::Float(t)
        }
    };
    let class = if margin.abs() <= tolerance {
        Class::Critical
    } else if margin.is_negative() {
        Class::Subcritical
    } else {
        Class::Supercritical
    };
    CriticalityReport {
        lhs,
        rhs,
        margin,
        tolerance,
        class,
        degenerate_flag: p.is_degenerate(params.m),
    }
}

/// The mixture `(1-p) δ_0 + p · law(Y0)` with `Y0 >= 1`.
#[derive(Clone, Debug, PartialEq)]
pub struct ParametricFamily {
    pub y0: Pmf,
    pub p: Scalar,
}

impl ParametricFamily {
    pub fn new(y0: Pmf, p: Scalar) -> Result<Self> {
        check_positive(&y0)?;
        let mode = p.mode();
        if p.is_negative() || p > mode.one() {
            return Err(DrError::Domain(format!("mixing weight p = {p} outside [0, 1]")));
        }
        Ok(ParametricFamily { y0, p })
    }

    /// The initial law, in the mode of `y0`.
    pub fn law(&self) -> Result<Pmf> {
        mixture(&self.y0, &self.p)
    }
}

fn check_positive(y0: &Pmf) -> Result<()> {
    if !y0.get(0).is_zero() {
        return Err(DrError::Config("Y0 must be positive: it puts mass on 0".into()));
    }
    Ok(())
}

fn mixture(y0: &Pmf, p: &Scalar) -> Result<Pmf> {
    let mode = y0.mode();
    let p = mode.convert(p);
    let mut probs = vec![&mode.one() - &p];
    probs.extend((1..y0.len()).map(|k| &p * &y0.get(k)));
    Pmf::from_parts(mode, probs, mode.zero(), mode.zero())
}

/// `p_c = 1/((m-1) E(Y0 m^Y0) - E(m^Y0) + 1)`, clipped to `(0, 1]`.
pub fn critical_p(y0: &Pmf, params: &ModelParams) -> Result<Scalar> {
    check_positive(y0)?;
    let (lhs, rhs) = genfun::criterion_sides(y0, params);
    let den = &(&lhs - &rhs) + 1;
    if !(den.signum() == Ordering::Greater) {
        return Err(DrError::Undefined("no transition in (0, 1]".into()));
    }
    let pc = &den.mode().one() / &den;
    Ok(if pc > den.mode().one() { den.mode().one() } else { pc })
}

/// Independent check of [`critical_p`]: bisection on the class of the mixture,
/// carried out in exact arithmetic on dyadic weights.
pub fn critical_p_bisection(y0: &Pmf, params: &ModelParams, tol: f64) -> Result<Scalar> {
    check_positive(y0)?;
    let y0 = y0.to_mode(NumericMode::exact());
    let class_at = |p: &Rational| -> Result<Class> {
        let law = mixture(&y0, &Scalar::Exact(p.clone()))?;
        Ok(classify(&law, params).class)
    };
    let one = Rational::from(1);
    match class_at(&one)? {
        Class::Subcritical => return Err(DrError::Undefined("no transition in (0, 1]".into())),
        Class::Critical => {
            // the transition may sit exactly at 1; still confirm nothing below is critical
        }
        Class::Supercritical => {}
    }
    let mut lo = Rational::new();
    let mut hi = one;
    let tol = Rational::from_f64(tol).unwrap_or_else(|| Rational::from((1, 1u64 << 40)));
    while Rational::from(&hi - &lo) > tol {
        let mid = Rational::from(&lo + &hi) / 2;
        match class_at(&mid)? {
            Class::Critical => return Ok(Scalar::Exact(mid)),
            Class::Supercritical => hi = mid,
            Class::Subcritical => lo = mid,
        }
    }
    Ok(Scalar::Exact((lo + hi) / 2))
}

/// Rigorous enclosure of the free energy from `E(X_n)`.
#[derive(Clone, Debug, PartialEq)]
pub struct FreeEnergyBracket {
    pub n: usize,
    pub mean: Scalar,
    /// `(E(X_n) - 1/(m-1)) / m^n`
    pub lower: Scalar,
    /// `E(X_n) / m^n`
    pub upper: Scalar,
}

/// Brackets for every `j <= n`.
///
/// `E(X_j)` follows from `E(X_{j+1}) = m E(X_j) - 1 + P(X_j = 0)^m`, and the zero
/// masses only need a shrinking head of each law: entries up to `k` of `X_{j+1}`
/// depend on entries up to `k+1` of `X_j`. No truncation is involved, and float
/// runs carry `n log2(m)` extra bits to absorb the factor `m` per step.
pub fn free_energy_series(initial: &Pmf, params: &ModelParams, n: usize) -> Result<Vec<FreeEnergyBracket>> {
    let m = params.m;
    let mode = initial.mode();
    let work_mode = match mode {
        NumericMode::ExactRational => mode,
        NumericMode::BigFloat { precision_bits } => {
            let extra = (n as f64 * (m as f64).log2()).ceil() as u32;
            NumericMode::BigFloat { precision_bits: precision_bits + extra + 64 }
        }
    };
    let full = initial.to_mode(work_mode);
    let (_, mean0, _) = genfun::gen_at(&full, params, &work_mode.one())?;
    let mut means = vec![mean0];
    let mut window = full.head(n + 1).probs;
    for j in 0..n {
        let w = n + 1 - j;
        let (p0, next) = match &window {
            Probs::Exact(v) => {
                let bits: u64 = v.iter().map(|x| x.denom().significant_bits() as u64 + x.numer().significant_bits() as u64).sum();
                if bits.saturating_mul(m as u64) > EXACT_BITS_CAP {
                    return Err(DrError::Resource(format!(
                        "exact free-energy recursion outgrew {EXACT_BITS_CAP} bits at step {j}; use a float mode"
                    )));
                }
                let s = convolution::power_rational(v, m, Some(w), &Audit::none())?;
                let p0 = Scalar::Exact(v[0].clone());
                (p0, Probs::Exact(shift_window(s, w - 1)))
            }
            Probs::Float(v) => {
                let s = convolution::power_float(v, m, work_mode.precision(), Some(w), &Audit::none())?;
                (Scalar::Float(v[0].clone()), Probs::Float(shift_window(s, w - 1)))
            }
        };
        let prev = means.last().expect("non-empty");
        let next_mean = &(&(prev * m as i64) - 1) + &p0.powi(m as i32);
        means.push(next_mean);
        window = next;
    }
    let mi = m as i64;
    let mut out = Vec::with_capacity(n + 1);
    let mut scale = work_mode.one();
    let shift = work_mode.from_ratio(1, (mi - 1) as u64);
    for (j, e) in means.into_iter().enumerate() {
        let upper = &e / &scale;
        let lower = &(&e - &shift) / &scale;
        out.push(FreeEnergyBracket {
            n: j,
            mean: mode.convert(&e),
            lower: mode.convert(&lower),
            upper: mode.convert(&upper),
        });
        scale = &scale * mi;
    }
    Ok(out)
}

fn shift_window<T: Clone + std::ops::AddAssign<T>>(mut s: Vec<T>, keep: usize) -> Vec<T> {
    if s.len() >= 2 {
        let s1 = s[1].clone();
        s[0] += s1;
        s.remove(1);
    }
    s.truncate(keep.max(1));
    s
}

/// The bracket at step `n`.
pub fn free_energy_bracket(initial: &Pmf, params: &ModelParams, n: usize) -> Result<FreeEnergyBracket> {
    Ok(free_energy_series(initial, params, n)?.pop().expect("n + 1 brackets"))
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct FitPoint {
    pub p: String,
    pub lower: String,
    pub upper: String,
    /// `-(p - p_c)^(-1/2)`
    pub x: f64,
    /// `ln` of the bracket midpoint
    pub ln_f: f64,
    pub residual: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ExcludedPoint {
    pub p: String,
    pub reason: String,
}

/// Least-squares fit of `ln F = c + K · (-(p - p_c)^(-1/2))`.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SingularityFit {
    pub p_c: String,
    pub n: usize,
    pub k_hat: f64,
    pub intercept: f64,
    pub r_squared: f64,
    /// `ln F̂` increases strictly with `p` over the fitted points.
    pub monotone: bool,
    pub bracket_width: String,
    pub points: Vec<FitPoint>,
    pub excluded_points: Vec<ExcludedPoint>,
    pub brackets: Vec<(String, FreeEnergyBracket)>,
}

impl Serialize for FreeEnergyBracket {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        use serde::ser::SerializeStruct;
        let mut st = s.serialize_struct("FreeEnergyBracket", 4)?;
        st.serialize_field("n", &self.n)?;
        st.serialize_field("mean", &self.mean.to_canonical())?;
        st.serialize_field("lower", &self.lower.to_canonical())?;
        st.serialize_field("upper", &self.upper.to_canonical())?;
        st.end()
    }
}

/// Fits the essential-singularity form to free-energy brackets above `p_c`.
///
/// Exact `y0` is promoted to the default float precision, since exact laws grow
/// doubly exponentially in size.
pub fn fit_singularity(y0: &Pmf, params: &ModelParams, p_grid: &[Scalar], n: usize) -> Result<SingularityFit> {
    if p_grid.len() < 3 {
        return Err(DrError::Config(format!("fit requires at least 3 grid points, got {}", p_grid.len())));
    }
    let mode = match y0.mode() {
        NumericMode::ExactRational => NumericMode::big_float(NumericMode::DEFAULT_PRECISION)?,
        m => m,
    };
    let y0 = y0.to_mode(mode);
    let pc = critical_p(&y0, params)?;
    for p in p_grid {
        if *p <= pc || *p > mode.one() {
            return Err(DrError::Domain(format!("grid point {p} must lie in (p_c, 1] with p_c = {pc}")));
        }
    }
    let mut pts = Vec::new();
    let mut excluded = Vec::new();
    let mut brackets = Vec::new();
    let mut width = mode.zero();
    for p in p_grid {
        let p = mode.convert(p);
        let law = ParametricFamily::new(y0.clone(), p.clone())?.law()?;
        let b = free_energy_bracket(&law, params, n)?;
        width = &b.upper - &b.lower;
        brackets.push((p.to_canonical(), b.clone()));
        if !b.lower.signum().is_gt() {
            excluded.push(ExcludedPoint {
                p: p.to_canonical(),
                reason: format!("lower bound {} is not positive at n = {n}", b.lower),
            });
            continue;
        }
        let mid = &(&b.lower + &b.upper) / 2;
        let ln_f = mid.ln(mode.precision()).to_f64();
        let gap = (&p - &pc).to_f64();
        pts.push((p, b, -gap.powf(-0.5), ln_f));
    }
    if pts.len() < 2 {
        return Err(DrError::Undefined(format!(
            "only {} grid point(s) resolved at n = {n}; increase n",
            pts.len()
        )));
    }
    let k = pts.len() as f64;
    let sx: f64 = pts.iter().map(|t| t.2).sum();
    let sy: f64 = pts.iter().map(|t| t.3).sum();
    let sxx: f64 = pts.iter().map(|t| t.2 * t.2).sum();
    let sxy: f64 = pts.iter().map(|t| t.2 * t.3).sum();
    let slope = (k * sxy - sx * sy) / (k * sxx - sx * sx);
    let intercept = (sy - slope * sx) / k;
    let ybar = sy / k;
    let ss_tot: f64 = pts.iter().map(|t| (t.3 - ybar).powi(2)).sum();
    let mut ss_res = 0.0;
    let mut points = Vec::new();
    for (p, b, x, y) in &pts {
        let res = y - (intercept + slope * x);
        ss_res += res * res;
        points.push(FitPoint {
            p: p.to_canonical(),
            lower: b.lower.to_canonical(),
            upper: b.upper.to_canonical(),
            x: *x,
            ln_f: *y,
            residual: res,
        });
    }
    let mut sorted: Vec<(f64, f64)> = pts.iter().map(|t| (t.2, t.3)).collect();
    sorted.sort_by(|a, b| a.0.total_cmp(&b.0));
    let monotone = sorted.windows(2).all(|w| w[1].1 > w[0].1);
    Ok(SingularityFit {
        p_c: pc.to_canonical(),
        n,
        k_hat: slope,
        intercept,
        r_squared: if ss_tot > 0.0 { 1.0 - ss_res / ss_tot } else { 1.0 },
        monotone,
        bracket_width: width.to_canonical(),
        points,
        excluded_points: excluded,
        brackets,
    })
}

/// Bracket monotonicity between consecutive steps: `upper` non-increasing, `lower` non-decreasing.
pub fn brackets_monotone(series: &[FreeEnergyBracket]) -> bool {
    series.windows(2).all(|w| w[1].upper <= w[0].upper && w[1].lower >= w[0].lower)
}
