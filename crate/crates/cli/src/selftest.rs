//! A quick battery over every module. Each check prints one PASS/FAIL line.

use drlab::asymptotics;
use drlab::criticality::{self, Class};
use drlab::evolution::{self, EvolveOptions};
use drlab::genfun;
use drlab::montecarlo;
use drlab::snapshot;
use drlab::{ModelParams, NumericMode, Pmf, Scalar};
use rug::Rational;
use serde::Serialize;

type Outcome = std::result::Result<String, String>;

#[derive(Debug, Serialize)]
pub struct CheckResult {
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
}

fn exact(text: &str) -> Pmf {
    Pmf::parse(NumericMode::exact(), text).expect("valid literal")
}

fn ensure(ok: bool, msg: impl Into<String>) -> std::result::Result<(), String> {
    if ok {
        Ok(())
    } else {
        Err(msg.into())
    }
}

fn e<E: std::fmt::Display>(x: E) -> String {
    x.to_string()
}

fn classification() -> Outcome {
    let two = ModelParams::untruncated(2).map_err(e)?;
    for (law, want) in [("0:4/5,2:1/5", Class::Critical), ("2:1", Class::Supercritical), ("0:1", Class::Subcritical)] {
        let got = criticality::classify(&exact(law), &two).class;
        ensure(got == want, format!("{law}: {got:?}, expected {want:?}"))?;
    }
    Ok("three reference laws".into())
}

fn critical_point() -> Outcome {
    for (m, y0, want) in [(2, "2:1", (1, 5)), (3, "1:1", (1, 4))] {
        let params = ModelParams::untruncated(m).map_err(e)?;
        let pc = criticality::critical_p(&exact(y0), &params).map_err(e)?;
        ensure(pc == Scalar::Exact(Rational::from(want)), format!("m = {m}: p_c = {pc}"))?;
        let b = criticality::critical_p_bisection(&exact(y0), &params, 1e-12).map_err(e)?;
        ensure((&pc - &b).abs().to_f64() < 1e-10, "bisection disagrees")?;
    }
    Ok("closed form and bisection agree".into())
}

fn exact_identities() -> Outcome {
    for (m, law) in [(2, "0:4/5,2:1/5"), (3, "0:3/4,1:1/4")] {
        let params = ModelParams::untruncated(m).map_err(e)?;
        let opts = EvolveOptions { s_fractions: vec![Rational::from((1, 2))], ..EvolveOptions::minimal() };
        let t = evolution::evolve(&exact(law), &params, 6, &opts).map_err(e)?;
        for w in t.records.windows(2) {
            let (a, b) = (&w[0], &w[1]);
            ensure(genfun::criticality_residual(&b.stats, m).is_zero(), "criticality residual")?;
            ensure(genfun::d_residual(&a.stats, &b.stats, m).is_zero(), "D recursion")?;
            ensure(genfun::g20_residual(&a.stats, &b.stats, m).is_zero(), "G20 relation")?;
            let (pa, pb) = (&a.s_points[0], &b.s_points[0]);
            ensure(genfun::g0_residual(pa, &a.stats.p_zero, pb, m).is_zero(), "G0 relation")?;
            ensure(genfun::g10_residual(pa, pb, m).is_zero(), "G10 relation")?;
            ensure(genfun::delta_residual(pa, pb, m).is_zero(), "delta recursion")?;
            ensure(evolution::check_zero_identity(&t, a.n).map_err(e)?.is_zero(), "zero-mass identity")?;
        }
    }
    Ok("six exact steps for m = 2 and m = 3".into())
}

fn float_matches_exact() -> Outcome {
    let params = ModelParams::with_default_tol(2).map_err(e)?;
    let mut worst = 0.0f64;
    let mut x = exact("0:4/5,2:1/5");
    let mut y = x.to_mode(NumericMode::big_float(256).map_err(e)?);
    let exact_params = ModelParams::untruncated(2).map_err(e)?;
    for _ in 0..6 {
        x = drlab::pmf::dr_step(&x, &exact_params).map_err(e)?;
        y = drlab::pmf::dr_step(&y, &params).map_err(e)?;
        ensure(x.len() == y.len(), "support lengths differ")?;
        for k in 0..x.len() {
            let (a, b) = (x.get(k), y.get(k));
            if !a.is_zero() {
                worst = worst.max(((&a - &b).abs() / &a).to_f64());
            }
        }
    }
    ensure(worst < 1e-60, format!("relative error {worst:e}"))?;
    Ok(format!("max relative error {worst:e}"))
}

fn free_energy() -> Outcome {
    let two = ModelParams::untruncated(2).map_err(e)?;
    let series = criticality::free_energy_series(&exact("2:1"), &two, 20).map_err(e)?;
    for b in &series {
        ensure(b.lower == Scalar::Exact(Rational::from(1)), format!("lower at n = {}", b.n))?;
        let up = Rational::from(1) + Rational::from((1, 1u64 << b.n));
        ensure(b.upper == Scalar::Exact(up), format!("upper at n = {}", b.n))?;
    }
    Ok("delta_2 brackets exact for n <= 20".into())
}

fn degenerate_guard() -> Outcome {
    let two = ModelParams::untruncated(2).map_err(e)?;
    let one = exact("1:1");
    let r = criticality::classify(&one, &two);
    ensure(r.class == Class::Critical && r.degenerate_flag, "classification")?;
    let t = evolution::evolve(&one, &two, 10, &EvolveOptions::minimal()).map_err(e)?;
    ensure(t.records.iter().all(|r| r.stats.g == Scalar::Exact(Rational::from(2))), "not a fixed point")?;
    ensure(asymptotics::conjecture_series(&t, &[]).is_err(), "harness accepted it")?;
    Ok("fixed point, flagged and refused".into())
}

fn snapshot_resume() -> Outcome {
    let params = ModelParams::with_default_tol(2).map_err(e)?;
    let p = exact("0:4/5,2:1/5").to_mode(NumericMode::big_float(128).map_err(e)?);
    let opts = EvolveOptions::default();
    let full = evolution::evolve(&p, &params, 20, &opts).map_err(e)?;
    let half = evolution::evolve(&p, &params, 10, &opts).map_err(e)?;
    let restored = snapshot::from_text(&snapshot::to_text(&half)).map_err(e)?;
    ensure(restored == half, "round trip")?;
    let resumed = evolution::resume(restored, 10, |_| Ok(())).map_err(e)?;
    ensure(resumed == full, "resumed run differs")?;
    Ok("10 + 10 steps equal 20 steps".into())
}

fn csv_round_trip() -> Outcome {
    let params = ModelParams::with_default_tol(2).map_err(e)?;
    let p = exact("0:4/5,2:1/5").to_mode(NumericMode::big_float(256).map_err(e)?);
    let t = evolution::evolve(&p, &params, 15, &EvolveOptions::minimal()).map_err(e)?;
    let mut buf = Vec::new();
    evolution::write_trace_csv(&t, &mut buf).map_err(e)?;
    let text = String::from_utf8(buf).map_err(e)?;
    let again = evolution::recanonicalize_csv(&text, t.mode).map_err(e)?;
    ensure(again == text, "re-emitted CSV differs")?;
    Ok("byte-identical".into())
}

fn monte_carlo() -> Outcome {
    let params = ModelParams::untruncated(2).map_err(e)?;
    let det = montecarlo::sample_tree(&exact("2:1"), &params, 3, 1000, 1, montecarlo::DEFAULT_TREE_BUDGET).map_err(e)?;
    ensure(det.hist.len() == 1 && det.hist.contains_key(&9), "delta_2 at n = 3")?;
    let p = exact("0:4/5,2:1/5");
    let t = evolution::evolve(&p, &params, 6, &EvolveOptions::minimal()).map_err(e)?;
    let want = t.records[6].p_nonzero.to_f64();
    let est = montecarlo::sample_tree(&p, &params, 6, 100_000, 7, montecarlo::DEFAULT_TREE_BUDGET).map_err(e)?;
    let z = (est.p_nonzero_hat - want) / est.se_p_nonzero;
    ensure(z.abs() < 4.0, format!("z = {z:.2}"))?;
    Ok(format!("z = {z:.2}"))
}

fn scalar_inequality() -> Outcome {
    let mut worst = f64::INFINITY;
    for k in 1..=50 {
        for i in 0..=200 {
            worst = worst.min(genfun::scalar_inequality_slack(i as f64 / 200.0, k));
        }
    }
    ensure(worst >= -1e-12, format!("slack {worst:e}"))?;
    Ok(format!("min slack {worst:e}"))
}

fn delta_bounds() -> Outcome {
    let params = ModelParams::with_default_tol(2).map_err(e)?;
    let p = exact("0:4/5,2:1/5").to_mode(NumericMode::big_float(256).map_err(e)?);
    let t = evolution::evolve(&p, &params, 100, &EvolveOptions { track_tv: false, ..EvolveOptions::default() })
        .map_err(e)?;
    let slack = Scalar::Exact(Rational::from_f64(-1e-30).expect("finite"));
    for r in &t.records {
        for s in &r.s_points {
            let lo = s.delta.clone();
            let hi = &Scalar::Exact(Rational::from(1)) - &s.delta;
            let cs = &s.cs_rhs - &s.cs_lhs;
            ensure(lo >= slack && hi >= slack && cs >= slack, format!("n = {}, s = {}", r.n, s.s))?;
        }
    }
    Ok("100 float steps at four points".into())
}

type Check = (&'static str, fn() -> Outcome);

pub fn run() -> Vec<CheckResult> {
    let checks: [Check; 11] = [
        ("classification", classification),
        ("critical point", critical_point),
        ("exact identities", exact_identities),
        ("float engine vs exact", float_matches_exact),
        ("free-energy bracket", free_energy),
        ("degenerate guard", degenerate_guard),
        ("snapshot resume", snapshot_resume),
        ("csv round trip", csv_round_trip),
        ("monte carlo", monte_carlo),
        ("scalar inequality", scalar_inequality),
        ("delta bounds", delta_bounds),
    ];
    checks
        .into_iter()
        .map(|(name, f)| {
            let (passed, detail) = match f() {
                Ok(d) => (true, d),
                Err(d) => (false, d),
            };
            println!("{} {name}: {detail}", if passed { "PASS" } else { "FAIL" });
            CheckResult { name, passed, detail }
        })
        .collect()
}
