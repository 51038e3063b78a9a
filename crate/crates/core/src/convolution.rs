//! Polynomial products of non-negative coefficient vectors.
//!
//! The production path packs each vector into one big integer (Kronecker
//! substitution) and lets GMP multiply. Exact rationals go through a common
//! denominator; floats go through an exponentially tilted fixed-point image.
//! Integer products are exact, so the only rounding is at the float boundary.

use rug::ops::Pow;
use rug::{Float, Integer, Rational};

use crate::error::{DrError, Result};

/// Direct O(len(a)·len(b)) product. Reference oracle for the packed path.
pub fn schoolbook_mul(a: &[Integer], b: &[Integer]) -> Vec<Integer> {
    if a.is_empty() || b.is_empty() {
        return Vec::new();
    }
    let mut out = vec![Integer::new(); a.len() + b.len() - 1];
    for (i, x) in a.iter().enumerate() {
        if x.cmp0() == std::cmp::Ordering::Equal {
            continue;
        }
        for (j, y) in b.iter().enumerate() {
            out[i + j] += x * y;
        }
    }
    out
}

/// Coefficient `k` of `a·b`, computed directly.
pub fn coefficient(a: &[Integer], b: &[Integer], k: usize) -> Integer {
    let mut acc = Integer::new();
    let lo = k.saturating_sub(b.len().saturating_sub(1));
    let hi = k.min(a.len().saturating_sub(1));
    for i in lo..=hi {
        if i < a.len() && k - i < b.len() {
            acc += &a[i] * &b[k - i];
        }
    }
    acc
}

fn max_bits(v: &[Integer]) -> u32 {
    v.iter().map(|x| x.significant_bits()).max().unwrap_or(0)
}

fn slot_limbs(bits_a: u32, bits_b: u32, terms: usize) -> usize {
    let spread = usize::BITS - terms.max(1).leading_zeros();
    let bits = bits_a as usize + bits_b as usize + spread as usize + 1;
    bits.div_ceil(64)
}

fn pack(v: &[Integer], limbs: usize) -> Integer {
    let mut buf = vec![0u64; v.len() * limbs];
    for (i, x) in v.iter().enumerate() {
        debug_assert!(x.cmp0() != std::cmp::Ordering::Less);
        let n = x.significant_digits::<u64>();
        if n > 0 {
            x.write_digits(&mut buf[i * limbs..i * limbs + n], rug::integer::Order::Lsf);
        }
    }
    Integer::from_digits(&buf, rug::integer::Order::Lsf)
}

fn unpack(x: &Integer, limbs: usize, len: usize) -> Vec<Integer> {
    let digits = x.to_digits::<u64>(rug::integer::Order::Lsf);
    (0..len)
        .map(|i| {
            let lo = (i * limbs).min(digits.len());
            let hi = ((i + 1) * limbs).min(digits.len());
            Integer::from_digits(&digits[lo..hi], rug::integer::Order::Lsf)
        })
        .collect()
}

fn check_negative(v: &[Integer]) -> Result<()> {
    if v.iter().any(|x| x.cmp0() == std::cmp::Ordering::Less) {
        return Err(DrError::Domain("packed product needs non-negative coefficients".into()));
    }
    Ok(())
}

/// Product of non-negative integer coefficient vectors by Kronecker substitution.
pub fn kronecker_mul(a: &[Integer], b: &[Integer]) -> Result<Vec<Integer>> {
    if a.is_empty() || b.is_empty() {
        return Ok(Vec::new());
    }
    check_negative(a)?;
    check_negative(b)?;
    let limbs = slot_limbs(max_bits(a), max_bits(b), a.len().min(b.len()));
    let pa = pack(a, limbs);
    let pb = pack(b, limbs);
    let prod = Integer::from(&pa * &pb);
    Ok(unpack(&prod, limbs, a.len() + b.len() - 1))
}

/// `kronecker_mul(a, a)`, using a squaring.
pub fn kronecker_square(a: &[Integer]) -> Result<Vec<Integer>> {
    if a.is_empty() {
        return Ok(Vec::new());
    }
    check_negative(a)?;
    let bits = max_bits(a);
    let limbs = slot_limbs(bits, bits, a.len());
    let pa = pack(a, limbs);
    let prod = Integer::from(pa.square_ref());
    Ok(unpack(&prod, limbs, 2 * a.len() - 1))
}

/// Verifies sampled coefficients of a claimed product against direct sums.
pub fn spot_check(a: &[Integer], b: &[Integer], c: &[Integer], indices: &[usize]) -> Result<()> {
    for &k in indices {
        if k >= c.len() {
            continue;
        }
        let direct = coefficient(a, b, k);
        if direct != c[k] {
            return Err(DrError::Integrity(format!(
                "packed convolution disagrees with direct sum at index {k}"
            )));
        }
    }
    Ok(())
}

/// Records which products to audit against the direct sum.
#[derive(Debug, Clone, Default)]
pub struct Audit {
    pub indices: Vec<usize>,
}

impl Audit {
    pub fn none() -> Self {
        Audit { indices: Vec::new() }
    }

    /// First, last, and a few interior coefficients spread over `len`.
    pub fn spread(len: usize, extra: &[usize]) -> Self {
        let mut indices = vec![0, len.saturating_sub(1), len / 2];
        indices.extend(extra.iter().map(|e| e % len.max(1)));
        indices.sort_unstable();
        indices.dedup();
        Audit { indices }
    }

    fn run(&self, a: &[Integer], b: &[Integer], c: &[Integer]) -> Result<()> {
        if self.indices.is_empty() {
            return Ok(());
        }
        let scaled: Vec<usize> = self
            .indices
            .iter()
            .map(|&i| if c.is_empty() { 0 } else { i % c.len() })
            .collect();
        spot_check(a, b, c, &scaled)
    }
}

fn mul_audited(a: &[Integer], b: &[Integer], audit: &Audit) -> Result<Vec<Integer>> {
    let c = if std::ptr::eq(a, b) { kronecker_square(a)? } else { kronecker_mul(a, b)? };
    audit.run(a, b, &c)?;
    Ok(c)
}

/// Common-denominator form: `v[i] = nums[i] / den`.
fn to_common(v: &[Rational]) -> (Vec<Integer>, Integer) {
    let mut den = Integer::from(1);
    for x in v {
        if x.cmp0() != std::cmp::Ordering::Equal && !den.is_divisible(x.denom()) {
            den.lcm_mut(x.denom());
        }
    }
    let nums = v
        .iter()
        .map(|x| {
            let scale = Integer::from(&den / x.denom());
            Integer::from(x.numer() * &scale)
        })
        .collect();
    (nums, den)
}

fn from_common(nums: Vec<Integer>, den: &Integer) -> Vec<Rational> {
    nums.into_iter().map(|n| Rational::from((n, den.clone()))).collect()
}

/// Exact product of two rational coefficient vectors.
pub fn convolve_rational(a: &[Rational], b: &[Rational]) -> Result<Vec<Rational>> {
    let (na, da) = to_common(a);
    let (nb, db) = to_common(b);
    let c = kronecker_mul(&na, &nb)?;
    Ok(from_common(c, &Integer::from(&da * &db)))
}

/// Exact `m`-fold self-convolution, truncated to the first `limit` coefficients if given.
pub fn power_rational(a: &[Rational], m: u32, limit: Option<usize>, audit: &Audit) -> Result<Vec<Rational>> {
    let a = match limit {
        Some(l) if l < a.len() => &a[..l],
        _ => a,
    };
    let (na, da) = to_common(a);
    let mut acc = mul_audited(&na, &na, audit)?;
    clip(&mut acc, limit);
    for _ in 2..m {
        acc = mul_audited(&acc, &na, &Audit::none())?;
        clip(&mut acc, limit);
    }
    let den = da.pow(m);
    Ok(from_common(acc, &den))
}

fn clip<T>(v: &mut Vec<T>, limit: Option<usize>) {
    if let Some(l) = limit {
        v.truncate(l);
    }
}

/// Tilted fixed-point image of a float vector.
///
/// Entry `k` holds `round(p_k · base^k · 2^frac_bits)`. Geometric tilts commute
/// with convolution, and a well chosen base flattens the slowly decaying tails
/// seen near criticality, which keeps the fixed-point width small.
struct Tilted {
    nums: Vec<Integer>,
    frac_bits: u32,
}

fn working_bits(prec: u32, len: usize) -> u32 {
    prec + 64 + (usize::BITS - len.leading_zeros())
}

fn tilts(len: usize, base: &Float, wp: u32) -> Vec<Float> {
    let mut out = Vec::with_capacity(len);
    let mut t = Float::with_val(wp, 1);
    for _ in 0..len {
        out.push(t.clone());
        t *= base;
    }
    out
}

fn tilt(p: &[Float], base: &Float, prec: u32) -> Tilted {
    let wp = working_bits(prec, p.len());
    let mut q = Vec::with_capacity(p.len());
    let mut min_exp = i64::MAX;
    for (x, t) in p.iter().zip(tilts(p.len(), base, wp)) {
        let v = Float::with_val(wp, x * &t);
        if !v.is_zero() {
            min_exp = min_exp.min(v.get_exp().unwrap_or(0) as i64);
        }
        q.push(v);
    }
    let below = if min_exp == i64::MAX { 0 } else { (-min_exp).max(0) };
    let frac_bits = (prec as i64 + 64 + below) as u32;
    let nums = q
        .into_iter()
        .map(|mut v| {
            v <<= frac_bits;
            v.to_integer().unwrap_or_default()
        })
        .collect();
    Tilted { nums, frac_bits }
}

fn untilt(nums: Vec<Integer>, frac_bits: u32, base: &Float, prec: u32) -> Vec<Float> {
    let wp = working_bits(prec, nums.len());
    let mut inv = Float::with_val(wp, 1);
    inv /= base;
    let tilts = tilts(nums.len(), &inv, wp);
    nums.into_iter()
        .zip(tilts)
        .map(|(n, t)| {
            if n.cmp0() == std::cmp::Ordering::Equal {
                return Float::new(prec);
            }
            let mut v = Float::with_val(wp, n);
            v >>= frac_bits;
            Float::with_val(prec, &v * &t)
        })
        .collect()
}

/// Tilt base `2^σ` minimising the exponent spread of `p_k 2^(σk)`.
///
/// The spread is convex and piecewise linear in `σ`, so a ternary search
/// converges; `σ` is rounded to a multiple of `2^-20` to stay reproducible.
fn flattening_base(p: &[Float], wp: u32) -> Float {
    let pts: Vec<(f64, f64)> = p
        .iter()
        .enumerate()
        .filter(|(_, x)| !x.is_zero())
        .map(|(k, x)| (k as f64, x.get_exp().unwrap_or(0) as f64))
        .collect();
    let spread = |sigma: f64| {
        let (lo, hi) = pts.iter().fold((f64::MAX, f64::MIN), |(lo, hi), &(k, e)| {
            let v = e + sigma * k;
            (lo.min(v), hi.max(v))
        });
        hi - lo
    };
    let (mut a, mut b) = (-8.0f64, 8.0f64);
    if pts.len() > 1 {
        for _ in 0..60 {
            let x = a + (b - a) / 3.0;
            let y = b - (b - a) / 3.0;
            if spread(x) <= spread(y) {
                b = y;
            } else {
                a = x;
            }
        }
    }
    let sigma = if pts.len() > 1 { ((a + b) / 2.0 * 1048576.0).round() / 1048576.0 } else { 0.0 };
    Float::with_val(wp, sigma).exp2()
}

/// Product of two float coefficient vectors at `prec` bits, tilted by `base^k`.
pub fn convolve_float(a: &[Float], b: &[Float], base: u32, prec: u32) -> Result<Vec<Float>> {
    if a.is_empty() || b.is_empty() {
        return Ok(Vec::new());
    }
    let base = Float::with_val(working_bits(prec, a.len() + b.len()), base);
    let ta = tilt(a, &base, prec);
    let tb = tilt(b, &base, prec);
    let c = kronecker_mul(&ta.nums, &tb.nums)?;
    Ok(untilt(c, ta.frac_bits + tb.frac_bits, &base, prec))
}

/// `m`-fold self-convolution at `prec` bits.
///
/// Each intermediate product is exact; between factors the running product is
/// rescaled back to the input's fixed-point width.
pub fn power_float(
    a: &[Float],
    m: u32,
    prec: u32,
    limit: Option<usize>,
    audit: &Audit,
) -> Result<Vec<Float>> {
    let a = match limit {
        Some(l) if l < a.len() => &a[..l],
        _ => a,
    };
    if a.is_empty() {
        return Ok(Vec::new());
    }
    let out_len = (a.len() - 1) * m as usize + 1;
    let base = flattening_base(a, working_bits(prec, out_len));
    let t = tilt(a, &base, prec);
    let mut acc = mul_audited(&t.nums, &t.nums, audit)?;
    clip(&mut acc, limit);
    for _ in 2..m {
        for x in acc.iter_mut() {
            *x >>= t.frac_bits;
        }
        acc = mul_audited(&acc, &t.nums, &Audit::none())?;
        clip(&mut acc, limit);
    }
    Ok(untilt(acc, 2 * t.frac_bits, &base, prec))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ints(v: &[i64]) -> Vec<Integer> {
        v.iter().map(|&x| Integer::from(x)).collect()
    }

    #[test]
    fn packed_product_matches_schoolbook() {
        let a = ints(&[3, 0, 7, 1 << 40, 5]);
        let b = ints(&[1, 2, 0, 9]);
        assert_eq!(kronecker_mul(&a, &b).unwrap(), schoolbook_mul(&a, &b));
        assert_eq!(kronecker_square(&a).unwrap(), schoolbook_mul(&a, &a));
        let big: Vec<Integer> = (0..50).map(|i| Integer::from(Integer::u_pow_u(3, 200 + i))).collect();
        assert_eq!(kronecker_square(&big).unwrap(), schoolbook_mul(&big, &big));
    }

    #[test]
    fn zero_slots_are_preserved() {
        let a = ints(&[0, 0, 1]);
        assert_eq!(kronecker_square(&a).unwrap(), ints(&[0, 0, 0, 0, 1]));
    }

    #[test]
    fn negative_input_is_rejected() {
        assert!(kronecker_mul(&ints(&[1, -1]), &ints(&[1])).is_err());
    }

    #[test]
    fn spot_check_detects_corruption() {
        let a = ints(&[1, 2, 3]);
        let mut c = kronecker_square(&a).unwrap();
        assert!(spot_check(&a, &a, &c, &[0, 2, 4]).is_ok());
        c[2] += 1;
        assert!(spot_check(&a, &a, &c, &[0, 2, 4]).is_err());
    }

    #[test]
    fn rational_power_is_exact() {
        let p = vec![Rational::from((3, 4)), Rational::from((1, 4))];
        let cube = power_rational(&p, 3, None, &Audit::spread(4, &[])).unwrap();
        let expect: Vec<Rational> = [27, 27, 9, 1].iter().map(|&n| Rational::from((n, 64))).collect();
        assert_eq!(cube, expect);
        let head = power_rational(&p, 3, Some(2), &Audit::none()).unwrap();
        assert_eq!(head, expect[..2].to_vec());
    }

    #[test]
    fn float_power_tracks_rational() {
        let p = vec![Rational::from((4, 5)), Rational::new(), Rational::from((1, 5))];
        let f: Vec<Float> = p.iter().map(|x| Float::with_val(256, x)).collect();
        for m in 2..=4 {
            let exact = power_rational(&p, m, None, &Audit::none()).unwrap();
            let approx = power_float(&f, m, 256, None, &Audit::spread(8, &[3])).unwrap();
            assert_eq!(exact.len(), approx.len());
            for (e, a) in exact.iter().zip(&approx) {
                let e = Float::with_val(512, e);
                let err = Float::with_val(512, &e - a).abs();
                assert!(err <= e * Float::with_val(64, 1e-70) + Float::with_val(64, 1e-300));
            }
        }
    }
}
