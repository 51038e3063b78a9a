//! One function per subcommand. Each writes its artifacts plus the resolved config.

use std::io::Write;
use std::path::Path;

use drlab::asymptotics::{self, Series};
use drlab::criticality;
use drlab::evolution::{self, EvolutionTrace};
use drlab::montecarlo;
use drlab::scalar::parse_rational;
use drlab::{snapshot, DrError, Result, Scalar};
use serde_json::json;

use crate::config::{McMethod, RunConfig};

/// Writes `bytes` to `dir/name` through a temporary file and a rename.
pub fn write_atomic(dir: &Path, name: &str, bytes: &[u8]) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    let mut tmp = tempfile::NamedTempFile::new_in(dir)?;
    tmp.write_all(bytes)?;
    tmp.as_file().sync_all()?;
    tmp.persist(dir.join(name)).map_err(|e| DrError::Io(e.error))?;
    Ok(())
}

fn write_json(dir: &Path, name: &str, value: &impl serde::Serialize) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value).map_err(|e| DrError::Config(e.to_string()))?;
    text.push('\n');
    write_atomic(dir, name, text.as_bytes())
}

pub fn write_resolved(cfg: &RunConfig) -> Result<()> {
    write_json(cfg.out_dir(), "config.resolved.json", cfg)
}

fn csv_bytes(header: &[&str], rows: impl IntoIterator<Item = Vec<String>>) -> Result<Vec<u8>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    let err = |e: csv::Error| DrError::Config(format!("csv: {e}"));
    w.write_record(header).map_err(err)?;
    for r in rows {
        w.write_record(&r).map_err(err)?;
    }
    w.into_inner().map_err(|e| DrError::Config(format!("csv: {e}")))
}

fn report(line: impl AsRef<str>) {
    println!("{}", line.as_ref());
}

/// Runs (or resumes) a trajectory, checkpointing every `checkpoint_every` steps.
fn run_trace(cfg: &RunConfig) -> Result<EvolutionTrace> {
    let steps = cfg.steps(2000);
    let dir = cfg.out_dir();
    std::fs::create_dir_all(dir)?;
    let snap_path = dir.join("trace.snapshot");
    let mut trace = match &cfg.resume_from {
        Some(path) => {
            let t = snapshot::restore(path)?;
            if t.params != cfg.params()? || t.mode != cfg.numeric_mode()? {
                return Err(DrError::Config(format!(
                    "snapshot {} was taken with different parameters or mode",
                    path.display()
                )));
            }
            t
        }
        None => evolution::evolve(&cfg.initial_pmf()?, &cfg.params()?, 0, &cfg.evolve_options()?)?,
    };
    let target = trace.last_step() + steps;
    let chunk = cfg.checkpoint_every.filter(|&c| c > 0).unwrap_or(steps.max(1));
    while trace.last_step() < target {
        let k = chunk.min(target - trace.last_step());
        trace = evolution::resume(trace, k, |_| Ok(()))?;
        if trace.last_step() < target {
            snapshot::snapshot(&trace, &snap_path)?;
            eprintln!("checkpoint at n = {}", trace.last_step());
        }
    }
    snapshot::snapshot(&trace, &snap_path)?;
    Ok(trace)
}

fn write_trace(cfg: &RunConfig, trace: &EvolutionTrace) -> Result<()> {
    let mut buf = Vec::new();
    evolution::write_trace_csv(trace, &mut buf)?;
    write_atomic(cfg.out_dir(), "trace.csv", &buf)
}

pub fn evolve(cfg: &RunConfig) -> Result<()> {
    let trace = run_trace(cfg)?;
    write_trace(cfg, &trace)?;
    let last = trace.records.last().expect("record 0 always exists");
    report(format!(
        "evolved to n = {}: eps = {}, E(X_n) = {}, P(X_n != 0) = {}, retained support {}",
        last.n, last.stats.eps, last.mean, last.p_nonzero, last.retained_len
    ));
    Ok(())
}

pub fn classify(cfg: &RunConfig) -> Result<()> {
    let p = cfg.initial_pmf()?;
    let r = criticality::classify(&p, &cfg.params()?);
    let out = json!({
        "lhs": r.lhs.to_canonical(),
        "rhs": r.rhs.to_canonical(),
        "margin": r.margin.to_canonical(),
        "tolerance": r.tolerance.to_canonical(),
        "class": format!("{:?}", r.class),
        "degenerate_flag": r.degenerate_flag,
    });
    write_json(cfg.out_dir(), "classification.json", &out)?;
    report(format!("{:?} (lhs {}, rhs {})", r.class, r.lhs, r.rhs));
    Ok(())
}

pub fn pc(cfg: &RunConfig) -> Result<()> {
    let y0 = cfg.y0()?;
    let params = cfg.params()?;
    let closed = criticality::critical_p(&y0, &params)?;
    let tol = cfg.bisection_tol.unwrap_or(1e-12);
    let bisect = criticality::critical_p_bisection(&y0, &params, tol)?;
    let gap = (&closed - &bisect).abs();
    let out = json!({
        "p_c": closed.to_canonical(),
        "p_c_decimal": closed.to_f64(),
        "bisection": bisect.to_canonical(),
        "bisection_tol": tol,
        "abs_difference": gap.to_f64(),
        "degenerate_flag": y0.is_degenerate(params.m),
    });
    write_json(cfg.out_dir(), "pc.json", &out)?;
    report(format!("p_c = {} ({}); bisection differs by {:e}", closed, closed.to_f64(), gap.to_f64()));
    Ok(())
}

pub fn free_energy(cfg: &RunConfig) -> Result<()> {
    let n = cfg.steps(20);
    let series = criticality::free_energy_series(&cfg.initial_pmf()?, &cfg.params()?, n)?;
    let rows = series.iter().map(|b| {
        vec![
            b.n.to_string(),
            b.mean.to_canonical(),
            b.lower.to_canonical(),
            b.upper.to_canonical(),
            (&b.upper - &b.lower).to_canonical(),
        ]
    });
    write_atomic(cfg.out_dir(), "free_energy.csv", &csv_bytes(&["n", "mean", "lower", "upper", "width"], rows)?)?;
    let last = series.last().expect("n + 1 brackets");
    report(format!("F in [{}, {}] at n = {}", last.lower, last.upper, last.n));
    Ok(())
}

pub fn scan_k(cfg: &RunConfig) -> Result<()> {
    let y0 = cfg.y0()?;
    let params = cfg.params()?;
    let n = cfg.steps(40);
    let grid = cfg
        .p_grid
        .as_ref()
        .ok_or_else(|| DrError::Config("scan-k needs \"p_grid\"".into()))?
        .iter()
        .map(|t| Ok(Scalar::Exact(parse_rational(t)?)))
        .collect::<Result<Vec<_>>>()?;
    let y0 = y0.to_mode(cfg.numeric_mode()?);
    let fit = criticality::fit_singularity(&y0, &params, &grid, n)?;
    let rows = fit.brackets.iter().map(|(p, b)| {
        vec![p.clone(), fit.p_c.clone(), b.lower.to_canonical(), b.upper.to_canonical(), b.n.to_string()]
    });
    write_atomic(cfg.out_dir(), "scan_k.csv", &csv_bytes(&["p", "p_c", "F_lower", "F_upper", "n"], rows)?)?;
    write_json(cfg.out_dir(), "fit.json", &fit)?;
    report(format!(
        "K_hat = {} (r^2 = {}, {} excluded, monotone: {})",
        fit.k_hat,
        fit.r_squared,
        fit.excluded_points.len(),
        fit.monotone
    ));
    Ok(())
}

fn series_csv(s: &Series) -> Result<Vec<u8>> {
    let target = s.target.map_or(String::new(), |t| t.to_string());
    let rows = (0..s.n.len()).map(|i| {
        vec![
            s.n[i].to_string(),
            s.raw[i].to_string(),
            target.clone(),
            s.rolling[i].to_string(),
            s.extrapolated[i].to_string(),
        ]
    });
    csv_bytes(&["n", "raw_value", "target", "rolling_mean", "extrapolated"], rows)
}

pub fn conjectures(cfg: &RunConfig) -> Result<()> {
    let initial = cfg.initial_pmf()?;
    let params = cfg.params()?;
    // refuse before spending a long run on an input the harness will reject
    if initial.is_degenerate(params.m) {
        return Err(DrError::Undefined(
            "degenerate-critical initial law (m = 2, X0 = 1 a.s.) is a fixed point of the map; \
             the asymptotic conjectures do not apply to it"
                .into(),
        ));
    }
    let class = criticality::classify(&initial, &params).class;
    if class != drlab::Class::Critical {
        return Err(DrError::Undefined(format!("conjecture harness needs a critical initial law, got {class:?}")));
    }
    let trace = run_trace(cfg)?;
    write_trace(cfg, &trace)?;
    let r_list = cfg.r_list.clone().unwrap_or_default();
    let cs = asymptotics::conjecture_series(&trace, &r_list)?;
    let dir = cfg.out_dir();
    for s in cs.all() {
        write_atomic(dir, &format!("conj_{}.csv", s.name), &series_csv(s)?)?;
    }
    let mut hs = Vec::new();
    let mode = trace.mode;
    for f in &trace.options.s_fractions {
        let s = &mode.from_rational(f) * params.m as i64;
        if s.is_zero() || (&s - 1).is_zero() {
            continue;
        }
        let h = asymptotics::h_s_limit(&trace, &s)?;
        let tag = format!("{}", s.to_f64()).replace('.', "p");
        write_atomic(dir, &format!("conj_h_ratio_s{tag}.csv"), &series_csv(&h.ratio)?)?;
        write_atomic(dir, &format!("conj_h_scaled_s{tag}.csv"), &series_csv(&h.scaled)?)?;
        hs.push(h);
    }
    let tol = cfg.verdict_tolerance.unwrap_or(0.25);
    let verdict = cs.verdict(tol);
    let hs_verdict: Vec<_> = hs
        .iter()
        .filter_map(|h| {
            let (n, raw, ext) = h.ratio.last()?;
            Some(json!({"s": h.s, "n": n, "raw": raw, "extrapolated": ext, "target": h.h_target}))
        })
        .collect();
    let out = json!({
        "m": cs.m,
        "n": trace.last_step(),
        "tolerance": tol,
        "targets": cs.targets,
        "verdicts": verdict,
        "h_s": hs_verdict,
        "moment_conditions": cs.moments,
        "note": "conjecture probes: a deviation beyond tolerance is a finding, not a failure",
    });
    write_json(dir, "verdict.json", &out)?;
    for v in &verdict {
        report(format!(
            "{} {}: value {:.6} vs target {} (relative deviation {:.4})",
            if v.within_tolerance { "WITHIN" } else { "OUTSIDE" },
            v.name,
            if v.name.starts_with("h_") { v.raw } else { v.extrapolated },
            v.target,
            v.relative_deviation
        ));
    }
    Ok(())
}

pub fn mc(cfg: &RunConfig) -> Result<()> {
    let initial = cfg.initial_pmf()?;
    let params = cfg.params()?;
    let n = cfg.steps(6);
    let seed = cfg.seed.unwrap_or(0);
    let est = match cfg.method.unwrap_or_default() {
        McMethod::Tree => montecarlo::sample_tree(
            &initial,
            &params,
            n,
            cfg.samples.unwrap_or(100_000),
            seed,
            cfg.budget.unwrap_or(montecarlo::DEFAULT_TREE_BUDGET),
        )?,
        McMethod::Pool => montecarlo::sample_pool(&initial, &params, n, cfg.pool_size.unwrap_or(100_000), seed)?,
    };
    let row = vec![
        est.n.to_string(),
        est.samples.to_string(),
        est.mean_hat.to_string(),
        est.se_mean.to_string(),
        est.p_nonzero_hat.to_string(),
    ];
    let csv = csv_bytes(&["n", "samples", "mean_hat", "se_mean", "p_nonzero_hat"], [row])?;
    write_atomic(cfg.out_dir(), "mc.csv", &csv)?;
    let hist: serde_json::Map<String, serde_json::Value> =
        est.hist.iter().map(|(k, v)| (k.to_string(), json!(v))).collect();
    write_json(cfg.out_dir(), "hist.json", &json!({"n": est.n, "samples": est.samples, "seed": est.seed, "hist": hist}))?;
    report(format!(
        "P(X_{n} != 0) ~ {} +- {}, E(X_{n}) ~ {} +- {}",
        est.p_nonzero_hat, est.se_p_nonzero, est.mean_hat, est.se_mean
    ));
    Ok(())
}
