use drlab::evolution::{self, EvolveOptions};
use drlab::montecarlo::{self, DEFAULT_TREE_BUDGET};
use drlab::{ModelParams, NumericMode, Pmf};
use statrs::distribution::{ChiSquared, ContinuousCDF};

fn critical() -> Pmf {
    Pmf::parse(NumericMode::exact(), "0:4/5,2:1/5").unwrap()
}

fn exact_law(n: usize) -> Vec<f64> {
    let t = evolution::evolve(&critical(), &ModelParams::untruncated(2).unwrap(), n, &EvolveOptions::minimal()).unwrap();
    t.final_pmf.probs().iter().map(|p| p.to_f64()).collect()
}

/// Pearson statistic with adjacent cells pooled until each expects at least 5.
fn chi_square_p_value(hist: &std::collections::BTreeMap<u64, u64>, law: &[f64], samples: u64) -> f64 {
    let mut cells: Vec<(f64, f64)> = Vec::new();
    let (mut e, mut o) = (0.0, 0.0);
    for (k, p) in law.iter().enumerate() {
        e += p * samples as f64;
        o += *hist.get(&(k as u64)).unwrap_or(&0) as f64;
        if e >= 5.0 {
            cells.push((e, o));
            e = 0.0;
            o = 0.0;
        }
    }
    if let Some(last) = cells.last_mut() {
        last.0 += e;
        last.1 += o;
    }
    let stat: f64 = cells.iter().map(|(e, o)| (o - e) * (o - e) / e).sum();
    let dof = (cells.len() - 1) as f64;
    1.0 - ChiSquared::new(dof).unwrap().cdf(stat)
}

#[test]
fn tree_histograms_match_exact_law() {
    let params = ModelParams::untruncated(2).unwrap();
    for n in [1usize, 3, 6] {
        let law = exact_law(n);
        let samples = 10_000;
        let mut passed = 0;
        for seed in 0..100 {
            let est = montecarlo::sample_tree(&critical(), &params, n, samples, seed, DEFAULT_TREE_BUDGET).unwrap();
            assert!(est.hist.keys().all(|&k| (k as usize) < law.len()), "impossible value at n = {n}");
            if chi_square_p_value(&est.hist, &law, samples) > 1e-4 {
                passed += 1;
            }
        }
        assert!(passed >= 99, "n = {n}: {passed} of 100 runs passed");
    }
}

#[test]
fn same_seed_same_estimate() {
    let params = ModelParams::untruncated(2).unwrap();
    let a = montecarlo::sample_tree(&critical(), &params, 5, 2000, 42, DEFAULT_TREE_BUDGET).unwrap();
    let b = montecarlo::sample_tree(&critical(), &params, 5, 2000, 42, DEFAULT_TREE_BUDGET).unwrap();
    assert_eq!(a, b);
    let c = montecarlo::sample_tree(&critical(), &params, 5, 2000, 43, DEFAULT_TREE_BUDGET).unwrap();
    assert_ne!(a.hist, c.hist);
    let a = montecarlo::sample_pool(&critical(), &params, 8, 20_000, 3).unwrap();
    let b = montecarlo::sample_pool(&critical(), &params, 8, 20_000, 3).unwrap();
    assert_eq!(a, b);
}

#[test]
fn pool_stays_in_a_loose_band() {
    let params = ModelParams::untruncated(2).unwrap();
    let want = 1.0 - exact_law(10)[0];
    let est = montecarlo::sample_pool(&critical(), &params, 10, 200_000, 9).unwrap();
    assert!((est.p_nonzero_hat - want).abs() < 0.25 * want + 5.0 * est.se_p_nonzero, "{} vs {want}", est.p_nonzero_hat);
}
