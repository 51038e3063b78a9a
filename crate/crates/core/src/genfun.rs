//! Generating-function values, derivatives, and the iterative aggregates
//! built from them.
//!
//! Everything is a finite weighted sum over the retained support. At `s = m`
//! the sums run over the tilted values `q_k = m^k p_k`; derivatives come from
//! falling-factorial weights, never from differencing.

use rug::{Float, Integer, Rational};

use crate::error::{DrError, Result};
use crate::pmf::{ModelParams, Pmf, Probs};
use crate::scalar::{Num, NumericMode, Scalar};

/// The generating-function tower at `s = m`.
#[derive(Clone, Debug, PartialEq)]
pub struct GenStats {
    /// `G(m) = E(m^X)`
    pub g: Scalar,
    pub g1: Scalar,
    pub g2: Scalar,
    pub g3: Scalar,
    /// `G(m) - 1`
    pub eps: Scalar,
    /// `m(m-1)G''' + (4m-5)G'' + 2(m-2)/(m^2(m-1)) G`
    pub d: Scalar,
    /// `G(0) = P(X = 0)`
    pub p_zero: Scalar,
}

/// `G`, `G'`, `G''` at one point, with the quantities bounded by the Δ lemmas.
#[derive(Clone, Debug, PartialEq)]
pub struct SPoint {
    pub s: Scalar,
    pub g: Scalar,
    pub g1: Scalar,
    pub g2: Scalar,
    pub delta: Scalar,
    /// `[(m-1) s G'(s) - G(s)]^2`
    pub cs_lhs: Scalar,
    /// `2 G(0) Δ(s)`
    pub cs_rhs: Scalar,
}

fn working_precision(mode: NumericMode, len: usize) -> u32 {
    mode.precision() + 64 + (usize::BITS - len.leading_zeros())
}

fn round_out(x: Scalar, mode: NumericMode) -> Scalar {
    match x {
        Scalar::Float(f) => Scalar::Float(Float::with_val(mode.precision(), f)),
        e => e,
    }
}

/// Sums of `q_k`, `k q_k`, `k(k-1) q_k`, `k(k-1)(k-2) q_k` with `q_k = m^k p_k`.
fn tilted_tower<T: Num>(v: &[T], m: u32, wp: u32) -> [T; 4] {
    let mut acc = [T::zero_with(wp), T::zero_with(wp), T::zero_with(wp), T::zero_with(wp)];
    let mut tilt = T::from_u64_with(1, wp);
    let mut q = T::zero_with(wp);
    for (k, p) in v.iter().enumerate() {
        if !p.is_zero_val() {
            let k = k as u64;
            q.set_mul(p, &tilt);
            acc[0].add_ref(&q);
            if k >= 1 {
                q.mul_u64(k);
                acc[1].add_ref(&q);
                if k >= 2 {
                    q.mul_u64(k - 1);
                    acc[2].add_ref(&q);
                    if k >= 3 {
                        q.mul_u64(k - 2);
                        acc[3].add_ref(&q);
                    }
                }
            }
        }
        tilt.mul_u64(m as u64);
    }
    acc
}

/// The tower at `s = m` for the retained measure.
pub fn gen_stats(p: &Pmf, params: &ModelParams) -> GenStats {
    let m = params.m;
    let mode = p.mode();
    let wp = working_precision(mode, p.len());
    let [a0, a1, a2, a3] = match &p.probs {
        Probs::Exact(v) => tilted_tower::<Rational>(v, m, wp).map(Num::into_scalar),
        Probs::Float(v) => tilted_tower::<Float>(v, m, wp).map(Num::into_scalar),
    };
    let mi = m as i64;
    let g = a0;
    let g1 = &a1 / mi;
    let g2 = &a2 / (mi * mi);
    let g3 = &a3 / (mi * mi * mi);
    let d = d_aggregate(&g, &g2, &g3, m);
    let eps = &g - 1;
    GenStats {
        eps: round_out(eps, mode),
        d: round_out(d, mode),
        g: round_out(g, mode),
        g1: round_out(g1, mode),
        g2: round_out(g2, mode),
        g3: round_out(g3, mode),
        p_zero: p.get(0),
    }
}

fn d_aggregate(g: &Scalar, g2: &Scalar, g3: &Scalar, m: u32) -> Scalar {
    let mi = m as i64;
    let c = g.mode().from_ratio(2 * (mi - 2), (mi * mi * (mi - 1)) as u64);
    &(&(g3 * (mi * (mi - 1))) + &(g2 * (4 * mi - 5))) + &(g * &c)
}

/// `E(X^j s^X) = Σ k^j s^k p_k` over the retained support.
pub fn weighted_moment(p: &Pmf, params: &ModelParams, j: u32, s: &Scalar) -> Result<Scalar> {
    check_s(s, params.m, true)?;
    let mode = p.mode();
    let wp = working_precision(mode, p.len());
    Ok(match &p.probs {
        Probs::Exact(v) => {
            let s = Rational::from_scalar(s, wp);
            weighted_sum(v, &s, j, wp).into_scalar()
        }
        Probs::Float(v) => {
            let s = Float::from_scalar(s, wp);
            round_out(weighted_sum(v, &s, j, wp).into_scalar(), mode)
        }
    })
}

fn weighted_sum<T: Num>(v: &[T], s: &T, j: u32, wp: u32) -> T {
    let mut acc = T::zero_with(wp);
    let mut pw = T::from_u64_with(1, wp);
    let mut term = T::zero_with(wp);
    for (k, p) in v.iter().enumerate() {
        if !p.is_zero_val() && (k > 0 || j == 0) {
            term.set_mul(p, &pw);
            for _ in 0..j {
                term.mul_u64(k as u64);
            }
            acc.add_ref(&term);
        }
        pw.mul_ref(s);
    }
    acc
}

fn check_s(s: &Scalar, m: u32, closed: bool) -> Result<()> {
    let m = s.mode().from_int(m as i64);
    let above = if closed { *s > m } else { *s >= m };
    if s.is_negative() || above {
        let interval = if closed { "[0, m]" } else { "[0, m)" };
        return Err(DrError::Domain(format!("s = {s} outside {interval}")));
    }
    Ok(())
}

/// Sums needed at a point `s`: `G`, `G'`, `G''`, and
/// `B = Σ_{k≥1} c_k p_k s^k ((k+1) - k x)` with `c_k = (m-1)k - 1`, `x = s/m`.
struct PointSums<T> {
    g: T,
    g1: T,
    g2: T,
    b: T,
}

/// Evaluates the point sums. Float runs stop once a bound on the remaining
/// terms drops below the working precision relative to the partial `G`;
/// `mass_bound` must dominate every `m^k p_k`.
fn point_sums<T: Num>(v: &[T], m: u32, s: &T, x: &T, wp: u32, mass_bound: Option<f64>) -> PointSums<T> {
    let mut out = PointSums {
        g: T::zero_with(wp),
        g1: T::zero_with(wp),
        g2: T::zero_with(wp),
        b: T::zero_with(wp),
    };
    // powers s^k, s^(k-1), s^(k-2)
    let mut pw0 = T::from_u64_with(1, wp);
    let mut pw1 = T::zero_with(wp);
    let mut pw2 = T::zero_with(wp);
    let mut u = T::zero_with(wp);
    let mut tmp = T::zero_with(wp);
    let x_f = x.to_f64_val();
    let s_f = s.to_f64_val();
    let cutoff = match mass_bound {
        Some(q) if x_f < 1.0 && x_f > 0.0 => {
            let lx = x_f.log2();
            let k_star = (3.0 / (1.0 - x_f)).ceil() as usize;
            let extra = q.log2() + 2.0 - (1.0 - x_f).log2() + 2.0 * (m as f64 / s_f).max(1.0).log2();
            Some((k_star, lx, extra))
        }
        _ => None,
    };
    for (k, p) in v.iter().enumerate() {
        let ku = k as u64;
        if !p.is_zero_val() {
            u.set_mul(p, &pw0);
            out.g.add_ref(&u);
            if ku >= 1 {
                tmp.set_mul(p, &pw1);
                tmp.mul_u64(ku);
                out.g1.add_ref(&tmp);
                // c_k u ((k+1) - k x)
                tmp.set(x);
                tmp.mul_u64(ku);
                tmp.rsub_u64(ku + 1);
                tmp.mul_ref(&u);
                tmp.mul_u64((m as u64 - 1) * ku - 1);
                out.b.add_ref(&tmp);
            }
            if ku >= 2 {
                tmp.set_mul(p, &pw2);
                tmp.mul_u64(ku * (ku - 1));
                out.g2.add_ref(&tmp);
            }
        }
        if let Some((k_star, lx, extra)) = cutoff {
            if k > k_star && k % 32 == 0 {
                let kf = (k + 1) as f64;
                let bound = extra + 3.0 * kf.log2() + k as f64 * lx;
                let scale = out.g.log2_approx().unwrap_or(f64::NEG_INFINITY);
                if bound < scale - wp as f64 {
                    break;
                }
            }
        }
        std::mem::swap(&mut pw2, &mut pw1);
        pw1.set(&pw0);
        pw0.mul_ref(s);
    }
    out
}

/// `G(s)`, `G'(s)`, `G''(s)` for `s` in `[0, m]`.
pub fn gen_at(p: &Pmf, params: &ModelParams, s: &Scalar) -> Result<(Scalar, Scalar, Scalar)> {
    check_s(s, params.m, true)?;
    let mode = p.mode();
    let wp = working_precision(mode, p.len());
    let m = params.m;
    Ok(match &p.probs {
        Probs::Exact(v) => {
            let s = Rational::from_scalar(s, wp);
            let x = Rational::from(&s / m);
            let r = point_sums(v, m, &s, &x, wp, None);
            (r.g.into_scalar(), r.g1.into_scalar(), r.g2.into_scalar())
        }
        Probs::Float(v) => {
            let s = Float::from_scalar(s, wp);
            let x = Float::with_val(wp, &s / m);
            let r = point_sums(v, m, &s, &x, wp, None);
            (
                round_out(r.g.into_scalar(), mode),
                round_out(r.g1.into_scalar(), mode),
                round_out(r.g2.into_scalar(), mode),
            )
        }
    })
}

/// Evaluates everything at `s` in `[0, m)`, reusing the tower at `m`.
pub fn s_point(p: &Pmf, params: &ModelParams, stats: &GenStats, s: &Scalar) -> Result<SPoint> {
    check_s(s, params.m, false)?;
    let m = params.m;
    let mode = p.mode();
    let wp = working_precision(mode, p.len());
    let (g, g1, g2, b) = match &p.probs {
        Probs::Exact(v) => {
            let sr = Rational::from_scalar(s, wp);
            let x = Rational::from(&sr / m);
            let r = point_sums(v, m, &sr, &x, wp, None);
            (r.g.into_scalar(), r.g1.into_scalar(), r.g2.into_scalar(), r.b.into_scalar())
        }
        Probs::Float(v) => {
            let sf = Float::from_scalar(s, wp);
            let x = Float::with_val(wp, &sf / m);
            let bound = stats.g.to_f64().max(1.0);
            let r = point_sums(v, m, &sf, &x, wp, Some(bound));
            (r.g.into_scalar(), r.g1.into_scalar(), r.g2.into_scalar(), r.b.into_scalar())
        }
    };
    let s_w = mode_scalar(s, mode, wp);
    let a = delta_head(stats, m, wp);
    let delta = &a - &b;
    let lin = &(&(&s_w * (m as i64 - 1)) * &g1) - &g;
    let cs_lhs = &lin * &lin;
    let cs_rhs = &(&mode_scalar(&stats.p_zero, mode, wp) * &delta) * 2;
    Ok(SPoint {
        s: s.clone(),
        g: round_out(g, mode),
        g1: round_out(g1, mode),
        g2: round_out(g2, mode),
        delta: round_out(delta, mode),
        cs_lhs: round_out(cs_lhs, mode),
        cs_rhs: round_out(cs_rhs, mode),
    })
}

fn mode_scalar(s: &Scalar, mode: NumericMode, wp: u32) -> Scalar {
    match mode {
        NumericMode::ExactRational => mode.convert(s),
        NumericMode::BigFloat { .. } => Scalar::Float(s.to_float(wp)),
    }
}

/// `Σ_{k≥1} ((m-1)k - 1) m^k p_k = (m-1) m G'(m) - G(m) + G(0)`.
fn delta_head(stats: &GenStats, m: u32, wp: u32) -> Scalar {
    let mode = stats.g.mode();
    let g = mode_scalar(&stats.g, mode, wp);
    let g1 = mode_scalar(&stats.g1, mode, wp);
    let p0 = mode_scalar(&stats.p_zero, mode, wp);
    &(&(&g1 * (m as i64 * (m as i64 - 1))) - &g) + &p0
}

/// `Δ(s)` by its series: `Σ_k m^k (km - k - 1)(1 - (k+1)x^k + k x^(k+1)) p_k`, `x = s/m`.
pub fn delta(p: &Pmf, params: &ModelParams, s: &Scalar) -> Result<Scalar> {
    check_s(s, params.m, false)?;
    let stats = gen_stats(p, params);
    Ok(s_point(p, params, &stats, s)?.delta)
}

/// `Δ(s)` from its definition,
/// `[G - s(s-1)G'] - ((m-1)(m-s)/m) [2sG' + s^2 G'']`.
pub fn delta_direct(p: &Pmf, params: &ModelParams, s: &Scalar) -> Result<Scalar> {
    check_s(s, params.m, false)?;
    let m = params.m as i64;
    let (g, g1, g2) = gen_at(p, params, s)?;
    let first = &g - &(&(s * &(s - 1)) * &g1);
    let coef = &(&(s.mode().from_int(m) - s) * (m - 1)) / m;
    let second = &(&(&g1 * s) * 2) + &(&(s * s) * &g2);
    Ok(&first - &(&coef * &second))
}

/// Both sides of the criticality criterion: `((m-1) E(X m^X), E(m^X))`.
pub fn criterion_sides(p: &Pmf, params: &ModelParams) -> (Scalar, Scalar) {
    let stats = gen_stats(p, params);
    criterion_from_stats(&stats, params.m)
}

pub fn criterion_from_stats(stats: &GenStats, m: u32) -> (Scalar, Scalar) {
    let m = m as i64;
    (&stats.g1 * (m * (m - 1)), stats.g.clone())
}

/// `(m-1) m G'(m) - G(m)`; zero exactly on the critical manifold.
pub fn criticality_residual(stats: &GenStats, m: u32) -> Scalar {
    let (lhs, rhs) = criterion_from_stats(stats, m);
    &lhs - &rhs
}

/// `G_{n+1}(s) - [G_n(s)^m / s + (1 - 1/s) G_n(0)^m]`.
pub fn g0_residual(prev: &SPoint, prev_zero: &Scalar, next: &SPoint, m: u32) -> Scalar {
    let s = &prev.s;
    let m = m as i32;
    let rhs = &(&prev.g.powi(m) / s) + &(&(&s.mode().one() - &(&s.mode().one() / s)) * &prev_zero.powi(m));
    &next.g - &rhs
}

/// `(s-1) s G'_{n+1}(s) - G_{n+1}(s) - [m(s-1)G'_n(s) - G_n(s)] G_n(s)^(m-1)`.
pub fn g10_residual(prev: &SPoint, next: &SPoint, m: u32) -> Scalar {
    let s = &prev.s;
    let sm1 = s - 1;
    let lhs = &(&(&sm1 * s) * &next.g1) - &next.g;
    let inner = &(&(&sm1 * m as i64) * &prev.g1) - &prev.g;
    &lhs - &(&inner * &prev.g.powi(m as i32 - 1))
}

/// `G''_{n+1}(m) + c G_{n+1}(m) - [G''_n(m) + (c/2) G_n(m)] G_n(m)^(m-1)`, `c = 2/(m^2(m-1))`.
pub fn g20_residual(prev: &GenStats, next: &GenStats, m: u32) -> Scalar {
    let mi = m as i64;
    let half = prev.g.mode().from_ratio(1, (mi * mi * (mi - 1)) as u64);
    let lhs = &next.g2 + &(&(&half * 2) * &next.g);
    let rhs = &(&prev.g2 + &(&half * &prev.g)) * &prev.g.powi(m as i32 - 1);
    &lhs - &rhs
}

/// `D_{n+1}(m) - D_n(m) G_n(m)^(m-1)`.
pub fn d_residual(prev: &GenStats, next: &GenStats, m: u32) -> Scalar {
    &next.d - &(&prev.d * &prev.g.powi(m as i32 - 1))
}

/// `Δ_{n+1}(s) - [(m/s) Δ_n G^(m-1) - ((m-s)/s) ((m-1) s G' - G)^2 G^(m-2)]`, all at `s`.
pub fn delta_residual(prev: &SPoint, next: &SPoint, m: u32) -> Scalar {
    let s = &prev.s;
    let mi = m as i64;
    let mode = s.mode();
    let first = &(&(&mode.from_int(mi) / s) * &prev.delta) * &prev.g.powi(m as i32 - 1);
    let lin = &(&(s * (mi - 1)) * &prev.g1) - &prev.g;
    let second = &(&(&(&mode.from_int(mi) - s) / s) * &(&lin * &lin)) * &prev.g.powi(m as i32 - 2);
    &next.delta - &(&first - &second)
}

/// `1 - (k+1) x^k + k x^(k+1)` minus `(1 - x^k)^2 / 2`; non-negative on `[0, 1]`.
pub fn scalar_inequality_slack(x: f64, k: u32) -> f64 {
    let xk = x.powi(k as i32);
    let rhs = 1.0 - (k as f64 + 1.0) * xk + k as f64 * xk * x;
    let lhs = (1.0 - xk) * (1.0 - xk);
    2.0 * rhs - lhs
}

/// Exact version of [`scalar_inequality_slack`] for rational `x`.
pub fn scalar_inequality_slack_exact(x: &Rational, k: u32) -> Rational {
    use rug::ops::Pow;
    let xk = Rational::from(x.pow(k));
    let rhs = Rational::from(1) - Rational::from(&xk * (k + 1)) + Rational::from(&xk * x) * k;
    let lhs = (Rational::from(1) - &xk).square();
    rhs * 2 - lhs
}

/// Falling factorial `k (k-1) ... (k-j+1)` as an integer.
pub fn falling(k: u64, j: u32) -> Integer {
    (0..j as u64).fold(Integer::from(1), |acc, i| acc * Integer::from(k.saturating_sub(i)))
}
