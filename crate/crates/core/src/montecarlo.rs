//! Sampling the recursion directly, as an independent check of the exact engine.

use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::error::{DrError, Result};
use crate::pmf::{ModelParams, Pmf};

/// Default cap on leaf draws for one call of [`sample_tree`].
pub const DEFAULT_TREE_BUDGET: u64 = 20_000_000_000;

/// Smallest pool accepted by [`sample_pool`].
pub const MIN_POOL: usize = 10_000;

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct McEstimate {
    pub n: usize,
    pub samples: u64,
    pub mean_hat: f64,
    pub se_mean: f64,
    pub p_nonzero_hat: f64,
    pub se_p_nonzero: f64,
    /// value -> count
    pub hist: BTreeMap<u64, u64>,
    pub seed: u64,
}

impl McEstimate {
    fn from_hist(n: usize, hist: BTreeMap<u64, u64>, seed: u64) -> Self {
        let samples: u64 = hist.values().sum();
        let nf = samples as f64;
        let mut sum = 0.0;
        let mut sum_sq = 0.0;
        for (&v, &c) in &hist {
            let v = v as f64;
            sum += v * c as f64;
            sum_sq += v * v * c as f64;
        }
        let mean = sum / nf;
        let var = if samples > 1 { (sum_sq - nf * mean * mean).max(0.0) / (nf - 1.0) } else { 0.0 };
        let zeros = hist.get(&0).copied().unwrap_or(0) as f64;
        let p = 1.0 - zeros / nf;
        McEstimate {
            n,
            samples,
            mean_hat: mean,
            se_mean: (var / nf).sqrt(),
            p_nonzero_hat: p,
            se_p_nonzero: (p * (1.0 - p) / nf).sqrt(),
            hist,
            seed,
        }
    }
}

/// Inverse-CDF sampler on 64-bit thresholds.
struct Leaf {
    thresholds: Vec<u64>,
    values: Vec<u64>,
}

impl Leaf {
    fn new(p: &Pmf) -> Result<Self> {
        let mut thresholds = Vec::new();
        let mut values = Vec::new();
        let total = p.total_mass().to_f64();
        if total.is_nan() || total <= 0.0 {
            return Err(DrError::Domain("cannot sample from a law with no retained mass".into()));
        }
        let mut acc = 0.0f64;
        for k in 0..p.len() {
            let w = p.get(k).to_f64() / total;
            if w <= 0.0 {
                continue;
            }
            acc += w;
            let t = if acc >= 1.0 { u64::MAX } else { (acc * 2f64.powi(64)) as u64 };
            thresholds.push(t);
            values.push(k as u64);
        }
        if let Some(last) = thresholds.last_mut() {
            *last = u64::MAX;
        }
        Ok(Leaf { thresholds, values })
    }

    #[inline]
    fn draw<R: Rng>(&self, rng: &mut R) -> u64 {
        if self.values.len() == 1 {
            return self.values[0];
        }
        let u: u64 = rng.gen();
        let i = self.thresholds.partition_point(|&t| t < u);
        self.values[i.min(self.values.len() - 1)]
    }
}

fn stream_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Exact i.i.d. samples of `X_n`: each sample folds a full `m`-ary tree of depth
/// `n` whose leaves are independent draws of `X_0`. Sample `i` uses its own
/// random stream, so results do not depend on evaluation order.
pub fn sample_tree(
    initial: &Pmf,
    params: &ModelParams,
    n: usize,
    count: u64,
    seed: u64,
    budget: u64,
) -> Result<McEstimate> {
    let m = params.m as u64;
    let leaves = (m as u128).checked_pow(n as u32).unwrap_or(u128::MAX);
    let required = leaves.saturating_mul(count as u128);
    if required > budget as u128 {
        return Err(DrError::Resource(format!(
            "tree sampling needs {required} leaf draws (m^n * count), budget is {budget}"
        )));
    }
    let leaf = Leaf::new(initial)?;
    let leaves = leaves as usize;
    let mut buf = vec![0u64; leaves];
    let mut hist = BTreeMap::new();
    for i in 0..count {
        let mut rng = stream_rng(seed, i);
        for x in buf.iter_mut() {
            *x = leaf.draw(&mut rng);
        }
        let mut len = leaves;
        while len > 1 {
            let next = len / m as usize;
            for j in 0..next {
                let s: u64 = buf[j * m as usize..(j + 1) * m as usize].iter().fold(0u64, |a, &b| a.saturating_add(b));
                buf[j] = s.saturating_sub(1);
            }
            len = next;
        }
        *hist.entry(buf[0]).or_insert(0) += 1;
    }
    Ok(McEstimate::from_hist(n, hist, seed))
}

/// Approximate samples of `X_n` from a resampled population.
///
/// Each generation draws `m` parents with replacement from the previous pool.
/// Shared parents correlate the pool, so this estimator is biased; it is meant
/// for loose sanity bands at depths where full trees are out of reach.
pub fn sample_pool(initial: &Pmf, params: &ModelParams, n: usize, pool_size: usize, seed: u64) -> Result<McEstimate> {
    if pool_size < MIN_POOL {
        return Err(DrError::Config(format!("pool size must be at least {MIN_POOL}, got {pool_size}")));
    }
    let m = params.m as usize;
    let leaf = Leaf::new(initial)?;
    let mut rng = stream_rng(seed, 0);
    let mut pool: Vec<u64> = (0..pool_size).map(|_| leaf.draw(&mut rng)).collect();
    let mut next = vec![0u64; pool_size];
    for step in 0..n {
        let mut rng = stream_rng(seed, step as u64 + 1);
        for x in next.iter_mut() {
            let s = (0..m).fold(0u64, |a, _| a.saturating_add(pool[rng.gen_range(0..pool_size)]));
            *x = s.saturating_sub(1);
        }
        std::mem::swap(&mut pool, &mut next);
    }
    let mut hist = BTreeMap::new();
    for v in pool {
        *hist.entry(v).or_insert(0) += 1;
    }
    Ok(McEstimate::from_hist(n, hist, seed))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scalar::NumericMode;

    fn exact(text: &str) -> Pmf {
        Pmf::parse(NumericMode::exact(), text).unwrap()
    }

    #[test]
    fn deterministic_tree() {
        let params = ModelParams::untruncated(2).unwrap();
        let est = sample_tree(&exact("2:1"), &params, 3, 100, 7, DEFAULT_TREE_BUDGET).unwrap();
        assert_eq!(est.hist.len(), 1);
        assert_eq!(est.hist[&9], 100);
        assert_eq!(est.mean_hat, 9.0);
    }

    #[test]
    fn depth_zero_samples_initial() {
        let params = ModelParams::untruncated(2).unwrap();
        let est = sample_tree(&exact("0:4/5,2:1/5"), &params, 0, 100_000, 1, DEFAULT_TREE_BUDGET).unwrap();
        assert!((est.p_nonzero_hat - 0.2).abs() < 4.0 * est.se_p_nonzero);
        assert_eq!(est.hist.values().sum::<u64>(), 100_000);
    }

    #[test]
    fn budget_is_enforced() {
        let params = ModelParams::untruncated(2).unwrap();
        let err = sample_tree(&exact("0:1"), &params, 40, 10, 0, 1_000_000).unwrap_err();
        assert!(matches!(err, DrError::Resource(msg) if msg.contains("10995116277760")));
    }

    #[test]
    fn reproducible() {
        let params = ModelParams::untruncated(2).unwrap();
        let p = exact("0:4/5,2:1/5");
        let a = sample_tree(&p, &params, 4, 1000, 99, DEFAULT_TREE_BUDGET).unwrap();
        let b = sample_tree(&p, &params, 4, 1000, 99, DEFAULT_TREE_BUDGET).unwrap();
        assert_eq!(a, b);
        let c = sample_pool(&p, &params, 4, 20_000, 5).unwrap();
        let d = sample_pool(&p, &params, 4, 20_000, 5).unwrap();
        assert_eq!(c, d);
    }

    #[test]
    fn pool_preconditions() {
        let params = ModelParams::untruncated(2).unwrap();
        assert!(sample_pool(&exact("0:1"), &params, 3, 10, 0).is_err());
        let est = sample_pool(&exact("2:1"), &params, 5, MIN_POOL, 0).unwrap();
        assert_eq!(est.hist.keys().copied().collect::<Vec<_>>(), vec![33]);
    }
}
