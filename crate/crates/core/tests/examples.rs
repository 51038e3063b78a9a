use drlab::asymptotics;
use drlab::criticality::{self, Class, ParametricFamily};
use drlab::evolution::{self, EvolveOptions};
use drlab::genfun;
use drlab::pmf::{self, convolve};
use drlab::snapshot;
use drlab::{DrError, ModelParams, NumericMode, Pmf, Scalar};
use rug::Rational;

fn exact(text: &str) -> Pmf {
    Pmf::parse(NumericMode::exact(), text).unwrap()
}

fn q(n: i64, d: u64) -> Scalar {
    Scalar::Exact(Rational::from((n, d)))
}

fn params(m: u32) -> ModelParams {
    ModelParams::untruncated(m).unwrap()
}

#[test]
fn convolution_examples() {
    let p = exact("0:4/5,2:1/5");
    assert_eq!(convolve(&exact("0:1"), &p).unwrap(), p);
    assert_eq!(convolve(&p, &p).unwrap(), exact("0:16/25,2:8/25,4:1/25"));
    let b = exact("0:3/4,1:1/4");
    let b3 = convolve(&convolve(&b, &b).unwrap(), &b).unwrap();
    assert_eq!(b3, exact("0:27/64,1:27/64,2:9/64,3:1/64"));
}

#[test]
fn mixed_modes_are_rejected() {
    let a = exact("0:1");
    let b = a.to_mode(NumericMode::big_float(128).unwrap());
    assert!(matches!(convolve(&a, &b), Err(DrError::Config(_))));
}

#[test]
fn one_step_examples() {
    assert_eq!(pmf::dr_step(&exact("0:4/5,2:1/5"), &params(2)).unwrap(), exact("0:16/25,1:8/25,3:1/25"));
    assert_eq!(pmf::dr_step(&exact("1:1"), &params(2)).unwrap(), exact("1:1"));
    assert_eq!(pmf::dr_step(&exact("0:3/4,1:1/4"), &params(3)).unwrap(), exact("0:27/32,1:9/64,2:1/64"));
}

#[test]
fn truncation_examples() {
    let p = exact("0:1/2,1:1/4,5:1/4");
    assert_eq!(pmf::truncate(&p, &params(2)), p);

    // six float steps at tol 1e-30 agree with the rational oracle on every retained index
    let float = ModelParams::with_default_tol(2).unwrap();
    let mut x = exact("0:4/5,2:1/5");
    let mut y = x.to_mode(NumericMode::big_float(256).unwrap());
    for _ in 0..6 {
        x = pmf::dr_step(&x, &params(2)).unwrap();
        y = pmf::dr_step(&y, &float).unwrap();
    }
    assert!(y.len() <= x.len());
    for k in 0..y.len() {
        let (a, b) = (x.get(k), y.get(k));
        let err = (&a - &b).abs();
        assert!(err <= &a.abs() * &q(1, 1u64 << 50).powi(4), "index {k}");
    }
}

#[test]
fn moment_examples() {
    let p = exact("0:4/5,2:1/5");
    let two = params(2);
    let one = NumericMode::exact().one();
    let s2 = NumericMode::exact().from_int(2);
    assert_eq!(genfun::weighted_moment(&p, &two, 0, &one).unwrap(), one);
    assert_eq!(genfun::weighted_moment(&p, &two, 0, &s2).unwrap(), q(8, 5));
    assert_eq!(genfun::weighted_moment(&p, &two, 1, &s2).unwrap(), q(8, 5));
    assert!(genfun::weighted_moment(&p, &two, 0, &NumericMode::exact().from_int(3)).is_err());

    let z = genfun::gen_stats(&exact("0:1"), &params(3));
    assert_eq!(z.g, one);
    assert!(z.g1.is_zero() && z.g2.is_zero() && z.g3.is_zero() && z.eps.is_zero());
    assert_eq!(z.d, q(2, 18));
}

#[test]
fn delta_examples() {
    let two = params(2);
    let p = exact("0:4/5,2:1/5");
    let zero = NumericMode::exact().zero();
    let d0 = genfun::delta(&p, &two, &zero).unwrap();
    assert_eq!(d0, q(4, 5));
    assert_eq!(genfun::delta(&p, &two, &NumericMode::exact().one()).unwrap(), q(2, 5));
    for s in [zero.clone(), q(1, 2), q(3, 2)] {
        assert!(genfun::delta(&exact("1:1"), &two, &s).unwrap().is_zero());
    }
    assert!(genfun::delta(&p, &two, &NumericMode::exact().from_int(2)).is_err());
}

#[test]
fn criterion_sides_examples() {
    assert_eq!(genfun::criterion_sides(&exact("0:4/5,2:1/5"), &params(2)), (q(8, 5), q(8, 5)));
    assert_eq!(genfun::criterion_sides(&exact("0:3/4,1:1/4"), &params(3)), (q(3, 2), q(3, 2)));
    assert_eq!(genfun::criterion_sides(&exact("2:1"), &params(2)), (q(8, 1), q(4, 1)));
}

#[test]
fn evolution_examples() {
    let two = params(2);
    let t = evolution::evolve(&exact("0:4/5,2:1/5"), &two, 0, &EvolveOptions::default()).unwrap();
    assert_eq!(t.records.len(), 1);
    assert_eq!(t.records[0].stats.g, q(8, 5));

    let t = evolution::evolve(&exact("0:4/5,2:1/5"), &two, 1, &EvolveOptions::minimal()).unwrap();
    let r = &t.records[1];
    assert_eq!((r.stats.p_zero.clone(), r.mean.clone(), r.stats.g.clone()), (q(16, 25), q(11, 25), q(8, 5)));

    let t = evolution::evolve(&exact("2:1"), &two, 3, &EvolveOptions::minimal()).unwrap();
    let means: Vec<Scalar> = t.records.iter().map(|r| r.mean.clone()).collect();
    assert_eq!(means, vec![q(2, 1), q(3, 1), q(5, 1), q(9, 1)]);
    assert_eq!(t.final_pmf, exact("9:1"));
}

#[test]
fn zero_identity_examples() {
    let two = params(2);
    let t = evolution::evolve(&exact("0:4/5,2:1/5"), &two, 1, &EvolveOptions::minimal()).unwrap();
    assert!(evolution::check_zero_identity(&t, 0).unwrap().is_zero());
    let t = evolution::evolve(&exact("0:1"), &params(3), 4, &EvolveOptions::minimal()).unwrap();
    for n in 0..4 {
        assert!(evolution::check_zero_identity(&t, n).unwrap().is_zero());
    }
    let t = evolution::evolve(&exact("2:1"), &two, 2, &EvolveOptions::minimal()).unwrap();
    assert!(evolution::check_zero_identity(&t, 1).unwrap().is_zero());
}

#[test]
fn snapshot_resume_matches_uninterrupted_run() {
    let p = exact("0:4/5,2:1/5").to_mode(NumericMode::big_float(256).unwrap());
    let params = ModelParams::with_default_tol(2).unwrap();
    let opts = EvolveOptions::default();
    let full = evolution::evolve(&p, &params, 200, &opts).unwrap();
    let half = evolution::evolve(&p, &params, 100, &opts).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("run.snapshot");
    snapshot::snapshot(&half, &path).unwrap();
    let restored = snapshot::restore(&path).unwrap();
    let resumed = evolution::resume(restored, 100, |_| Ok(())).unwrap();
    assert_eq!(resumed.records.len(), full.records.len());
    for (a, b) in resumed.records.iter().zip(&full.records) {
        assert_eq!(a, b, "record {}", a.n);
    }
    assert_eq!(resumed, full);
}

#[test]
fn corrupted_snapshot_leaves_no_state() {
    let t = evolution::evolve(&exact("0:4/5,2:1/5"), &params(2), 3, &EvolveOptions::minimal()).unwrap();
    let text = snapshot::to_text(&t);
    let bad = text.replacen("16/25", "17/25", 1);
    assert!(matches!(snapshot::from_text(&bad), Err(DrError::Load(_))));
}

#[test]
fn classification_examples() {
    let two = params(2);
    assert_eq!(criticality::classify(&exact("0:4/5,2:1/5"), &two).class, Class::Critical);
    assert_eq!(criticality::classify(&exact("2:1"), &two).class, Class::Supercritical);
    assert_eq!(criticality::classify(&exact("0:1"), &two).class, Class::Subcritical);
}

#[test]
fn critical_point_examples() {
    assert_eq!(criticality::critical_p(&exact("2:1"), &params(2)).unwrap(), q(1, 5));
    assert_eq!(criticality::critical_p(&exact("1:1"), &params(3)).unwrap(), q(1, 4));
    assert_eq!(criticality::critical_p(&exact("1:1"), &params(2)).unwrap(), q(1, 1));
    let fam = ParametricFamily::new(exact("1:1"), q(1, 1)).unwrap();
    assert!(criticality::classify(&fam.law().unwrap(), &params(2)).degenerate_flag);

    for (m, y0) in [(2, "2:1"), (3, "1:1"), (2, "1:1/2,3:1/2")] {
        let pc = criticality::critical_p(&exact(y0), &params(m)).unwrap();
        let step = q(1, 1_000_000);
        let below = ParametricFamily::new(exact(y0), &pc - &step).unwrap().law().unwrap();
        let above = ParametricFamily::new(exact(y0), &pc + &step).unwrap().law().unwrap();
        assert_eq!(criticality::classify(&below, &params(m)).class, Class::Subcritical);
        assert_eq!(criticality::classify(&above, &params(m)).class, Class::Supercritical);
    }
}

#[test]
fn free_energy_examples() {
    let two = params(2);
    let b = criticality::free_energy_bracket(&exact("2:1"), &two, 10).unwrap();
    assert_eq!((b.lower, b.upper), (q(1, 1), q(1025, 1024)));
    let b = criticality::free_energy_bracket(&exact("0:1"), &two, 5).unwrap();
    assert!(b.upper.is_zero());
    assert_eq!(b.lower, q(-1, 32));

    let b = criticality::free_energy_bracket(&exact("0:4/5,2:1/5"), &two, 20).unwrap();
    assert!(b.upper <= &b.lower + &q(1, 1 << 20));
    assert!(b.upper.to_f64() < 1e-5);
}

#[test]
fn singularity_fit_examples() {
    let two = params(2);
    let grid = |v: &[&str]| v.iter().map(|s| NumericMode::exact().parse(s).unwrap()).collect::<Vec<_>>();
    let fit = criticality::fit_singularity(&exact("2:1"), &two, &grid(&["0.30", "0.35", "0.40"]), 40).unwrap();
    assert!(fit.k_hat.is_finite() && fit.k_hat > 0.0);
    assert!(fit.monotone);
    assert!(matches!(
        criticality::fit_singularity(&exact("2:1"), &two, &grid(&["0.3"]), 40),
        Err(DrError::Config(_))
    ));
    assert!(matches!(
        criticality::fit_singularity(&exact("2:1"), &two, &grid(&["0.1", "0.3", "0.4"]), 40),
        Err(DrError::Domain(_))
    ));
}

#[test]
fn conjecture_harness_examples() {
    let t = asymptotics::targets(2);
    assert_eq!((t.p_nonzero, t.mean, t.eps), (4.0, 8.0, 2.0));
    let trace = evolution::evolve(&exact("0:1"), &params(2), 5, &EvolveOptions::minimal()).unwrap();
    assert!(asymptotics::conjecture_series(&trace, &[]).is_err());
    let trace = evolution::evolve(&exact("1:1"), &params(2), 5, &EvolveOptions::minimal()).unwrap();
    assert!(asymptotics::conjecture_series(&trace, &[]).is_err());
}

#[test]
fn conditional_law_examples() {
    assert_eq!(asymptotics::conditional_law(&exact("0:16/25,1:8/25,3:1/25")).unwrap(), exact("1:8/9,3:1/9"));
    assert_eq!(asymptotics::conditional_law(&exact("1:1")).unwrap(), exact("1:1"));
    assert!(asymptotics::conditional_law(&exact("0:1")).is_err());
}

#[test]
fn harmonic_limit_of_a_constant() {
    let b = vec![3.0; 100_000];
    let small = asymptotics::h_limit(&b, 100).unwrap();
    let large = asymptotics::h_limit(&b, 100_000).unwrap();
    assert!((large - 3.0).abs() < (small - 3.0).abs());
    assert!((large - 3.0).abs() < 0.2);
}

#[test]
fn s_limit_rejects_bad_points() {
    let trace = evolution::evolve(&exact("0:4/5,2:1/5"), &params(2), 5, &EvolveOptions::default()).unwrap();
    for s in [q(1, 1), q(0, 1), q(2, 1), q(5, 2)] {
        assert!(matches!(asymptotics::h_s_limit(&trace, &s), Err(DrError::Domain(_))));
    }
    let h = asymptotics::h_s_limit(&trace, &q(1, 2)).unwrap();
    assert_eq!(h.h_target, asymptotics::h_target(2, 0.5));
    assert_eq!(h.ratio.n.len(), 5);
}

#[test]
fn decollage_residual_at_zero() {
    // P(X_0 != 0) = 1/5 and eps_0 = eps_1 = 3/5, so the residual is 1/5 - 9/50
    let t = evolution::evolve(&exact("0:4/5,2:1/5"), &params(2), 2, &EvolveOptions::minimal()).unwrap();
    assert_eq!(asymptotics::decollage_residual(&t, 0).unwrap(), q(1, 50));
    assert!(asymptotics::decollage_residual(&t, 2).is_err());
}
