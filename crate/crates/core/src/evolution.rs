//! Multi-step trajectories with per-step observables.

use std::io::Write;

use rand::seq::index;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rug::{Float, Rational};

use crate::asymptotics::{self, TvEstimate};
use crate::convolution::Audit;
use crate::error::{DrError, Result};
use crate::genfun::{self, GenStats, SPoint};
use crate::pmf::{self, ModelParams, Pmf};
use crate::scalar::{NumericMode, Scalar};

/// Observables of one iterate.
///
/// Statistics describe the image of the previously retained state, before
/// that image is truncated; the ledger fields and `retained_len` describe the
/// state after truncation.
#[derive(Clone, Debug, PartialEq)]
pub struct StepRecord {
    pub n: usize,
    pub stats: GenStats,
    /// `E(X_n)`
    pub mean: Scalar,
    /// `P(X_n != 0)`, counting ledgered mass as non-zero.
    pub p_nonzero: Scalar,
    pub support_len: usize,
    pub retained_len: usize,
    pub discarded_mass: Scalar,
    pub discarded_weight: Scalar,
    pub s_points: Vec<SPoint>,
    /// `E(X_n^r)` for each requested `r`.
    pub r_moments: Vec<(f64, Scalar)>,
    pub tv: Option<TvEstimate>,
}

/// What to measure besides the tower at `s = m`.
#[derive(Clone, Debug, PartialEq)]
pub struct EvolveOptions {
    /// Fixed evaluation points, as fractions of `m`.
    pub s_fractions: Vec<Rational>,
    /// Also evaluate at `s = m - m/n` for `n >= 1`.
    pub moving_point: bool,
    pub r_list: Vec<f64>,
    pub track_tv: bool,
    /// Number of steps whose packed convolution is audited against direct sums.
    pub audit_steps: usize,
    pub audit_seed: u64,
}

impl Default for EvolveOptions {
    fn default() -> Self {
        EvolveOptions {
            s_fractions: vec![Rational::from((1, 4)), Rational::from((1, 2)), Rational::from((3, 4))],
            moving_point: true,
            r_list: vec![0.5, 1.0, 2.0],
            track_tv: true,
            audit_steps: 3,
            audit_seed: 0,
        }
    }
}

impl EvolveOptions {
    /// Only the tower at `s = m` and the mean.
    pub fn minimal() -> Self {
        EvolveOptions {
            s_fractions: Vec::new(),
            moving_point: false,
            r_list: Vec::new(),
            track_tv: false,
            ..Default::default()
        }
    }
}

/// A finished (or paused) run.
#[derive(Clone, Debug, PartialEq)]
pub struct EvolutionTrace {
    pub params: ModelParams,
    pub mode: NumericMode,
    pub options: EvolveOptions,
    pub initial: Pmf,
    pub records: Vec<StepRecord>,
    pub final_pmf: Pmf,
}

impl EvolutionTrace {
    pub fn last_step(&self) -> usize {
        self.records.last().map_or(0, |r| r.n)
    }

    pub fn record(&self, n: usize) -> Result<&StepRecord> {
        self.records
            .get(n)
            .filter(|r| r.n == n)
            .ok_or_else(|| DrError::Domain(format!("step {n} not recorded (last is {})", self.last_step())))
    }
}

/// Passed to observers after each record is built.
pub struct StepView<'a> {
    pub n: usize,
    /// The retained state the image was computed from (`None` at `n = 0`).
    pub prev: Option<&'a Pmf>,
    pub image: &'a Pmf,
    pub retained: &'a Pmf,
    pub record: &'a StepRecord,
}

/// Runs `steps` iterations from `initial`.
pub fn evolve(initial: &Pmf, params: &ModelParams, steps: usize, options: &EvolveOptions) -> Result<EvolutionTrace> {
    evolve_observed(initial, params, steps, options, |_| Ok(()))
}

/// Like [`evolve`], calling `observer` on every record, including `n = 0`.
pub fn evolve_observed<F>(
    initial: &Pmf,
    params: &ModelParams,
    steps: usize,
    options: &EvolveOptions,
    mut observer: F,
) -> Result<EvolutionTrace>
where
    F: FnMut(StepView<'_>) -> Result<()>,
{
    let record = make_record(0, initial, initial, params, options)?;
    observer(StepView { n: 0, prev: None, image: initial, retained: initial, record: &record })?;
    let mut trace = EvolutionTrace {
        params: params.clone(),
        mode: initial.mode(),
        options: options.clone(),
        initial: initial.clone(),
        records: vec![record],
        final_pmf: initial.clone(),
    };
    advance(&mut trace, steps, &mut observer)?;
    Ok(trace)
}

/// Continues a trace for `steps` more iterations with its own options.
pub fn resume<F>(mut trace: EvolutionTrace, steps: usize, mut observer: F) -> Result<EvolutionTrace>
where
    F: FnMut(StepView<'_>) -> Result<()>,
{
    advance(&mut trace, steps, &mut observer)?;
    Ok(trace)
}

fn audited_steps(start: usize, steps: usize, options: &EvolveOptions) -> Vec<usize> {
    let mut rng = ChaCha8Rng::seed_from_u64(options.audit_seed ^ start as u64);
    let k = options.audit_steps.min(steps);
    index::sample(&mut rng, steps, k).into_iter().map(|i| start + 1 + i).collect()
}

fn advance<F>(trace: &mut EvolutionTrace, steps: usize, observer: &mut F) -> Result<()>
where
    F: FnMut(StepView<'_>) -> Result<()>,
{
    let start = trace.last_step();
    let audited = audited_steps(start, steps, &trace.options);
    let mut audit_rng = ChaCha8Rng::seed_from_u64(trace.options.audit_seed.wrapping_add(1));
    let params = trace.params.clone();
    let mut state = trace.final_pmf.clone();
    for n in start + 1..=start + steps {
        let audit = if audited.contains(&n) {
            let len = (state.len() - 1) * params.m as usize + 1;
            let extra: Vec<usize> = (0..5).map(|_| rand::Rng::gen_range(&mut audit_rng, 0..len)).collect();
            Audit::spread(len, &extra)
        } else {
            Audit::none()
        };
        let image = pmf::dr_image(&state, &params, &audit)?;
        check_sign(&image)?;
        let retained = pmf::truncate(&image, &params);
        let record = make_record(n, &image, &retained, &params, &trace.options)?;
        observer(StepView { n, prev: Some(&state), image: &image, retained: &retained, record: &record })?;
        trace.records.push(record);
        state = retained;
    }
    trace.final_pmf = state;
    Ok(())
}

fn check_sign(p: &Pmf) -> Result<()> {
    if let NumericMode::BigFloat { precision_bits } = p.mode() {
        let mut tol = Float::with_val(64, p.len() + 1);
        tol >>= precision_bits - 1;
        let p0 = p.get(0).to_float(64);
        if p0 < -tol {
            return Err(DrError::Integrity(format!("negative probability {} at 0", p.get(0))));
        }
    }
    Ok(())
}

/// `s = m - m/n`, the evaluation point that approaches `m` with the step index.
pub fn moving_point(m: u32, n: usize, mode: NumericMode) -> Scalar {
    let m = m as i64;
    &mode.from_int(m) - &mode.from_ratio(m, n as u64)
}

fn make_record(
    n: usize,
    image: &Pmf,
    retained: &Pmf,
    params: &ModelParams,
    options: &EvolveOptions,
) -> Result<StepRecord> {
    let mode = image.mode();
    let m = params.m;
    let stats = genfun::gen_stats(image, params);
    let at_one = genfun::s_point(image, params, &stats, &mode.one())?;
    let ledger = image.discarded_mass();
    let p_nonzero = match mode {
        NumericMode::ExactRational => &mode.one() - &stats.p_zero,
        NumericMode::BigFloat { .. } => &(&at_one.g - &stats.p_zero) + ledger,
    };
    let mut s_points = Vec::with_capacity(options.s_fractions.len() + 1);
    for f in &options.s_fractions {
        let s = &mode.from_rational(f) * m as i64;
        s_points.push(genfun::s_point(image, params, &stats, &s)?);
    }
    if options.moving_point && n >= 1 {
        let s = moving_point(m, n, mode);
        s_points.push(genfun::s_point(image, params, &stats, &s)?);
    }
    // every m^k p_k is at most G(m)
    let tail = match mode {
        NumericMode::ExactRational => None,
        NumericMode::BigFloat { .. } => Some(asymptotics::TailBound {
            m,
            log2_q: stats.g.to_float(64).log2().to_f64().max(0.0) + 1.0,
        }),
    };
    let r_moments = options
        .r_list
        .iter()
        .map(|&r| Ok((r, asymptotics::fractional_moment_bounded(image, r, tail)?)))
        .collect::<Result<Vec<_>>>()?;
    let tv = if options.track_tv && !p_nonzero.is_zero() && image.len() > 1 {
        Some(asymptotics::tv_geometric_bounded(image, m, tail)?)
    } else {
        None
    };
    Ok(StepRecord {
        n,
        mean: at_one.g1,
        p_nonzero,
        support_len: image.len(),
        retained_len: retained.len(),
        discarded_mass: retained.discarded_mass().clone(),
        discarded_weight: retained.discarded_weight().clone(),
        stats,
        s_points,
        r_moments,
        tv,
    })
}

/// `P(X_n = 0) - [1 - m E(X_n) + E(X_{n+1})]^(1/m)`.
pub fn check_zero_identity(trace: &EvolutionTrace, n: usize) -> Result<Scalar> {
    let m = trace.params.m;
    let a = trace.record(n)?;
    let b = trace.record(n + 1)?;
    let bracket = &(&(&a.mean * -(m as i64)) + 1) + &b.mean;
    if bracket.is_negative() {
        return Err(DrError::Integrity(format!("zero-mass bracket is negative ({bracket}) at step {n}")));
    }
    let root = bracket.root(m)?;
    Ok(&a.stats.p_zero - &root)
}

pub const CSV_COLUMNS: [&str; 13] = [
    "n",
    "p_zero",
    "p_nonzero",
    "mean",
    "g",
    "g1",
    "g2",
    "g3",
    "eps",
    "d",
    "support_len",
    "discarded_mass",
    "discarded_weight",
];

/// Writes one row per record in canonical number format.
pub fn write_trace_csv<W: Write>(trace: &EvolutionTrace, out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(CSV_COLUMNS).map_err(csv_err)?;
    for r in &trace.records {
        let s = &r.stats;
        w.write_record([
            r.n.to_string(),
            s.p_zero.to_canonical(),
            r.p_nonzero.to_canonical(),
            r.mean.to_canonical(),
            s.g.to_canonical(),
            s.g1.to_canonical(),
            s.g2.to_canonical(),
            s.g3.to_canonical(),
            s.eps.to_canonical(),
            s.d.to_canonical(),
            r.support_len.to_string(),
            r.discarded_mass.to_canonical(),
            r.discarded_weight.to_canonical(),
        ])
        .map_err(csv_err)?;
    }
    w.flush()?;
    Ok(())
}

/// Parses a CSV of canonical numbers and writes it back in canonical form.
/// Integer columns pass through; every other field is read in `mode`.
pub fn recanonicalize_csv(input: &str, mode: NumericMode) -> Result<String> {
    let mut rd = csv::ReaderBuilder::new().has_headers(false).from_reader(input.as_bytes());
    let mut out = csv::Writer::from_writer(Vec::new());
    for (i, row) in rd.records().enumerate() {
        let row = row.map_err(csv_err)?;
        let fields: Vec<String> = if i == 0 {
            row.iter().map(str::to_string).collect()
        } else {
            row.iter()
                .map(|f| {
                    if f.parse::<u64>().is_ok() || f.is_empty() {
                        Ok(f.to_string())
                    } else {
                        Ok(Scalar::from_canonical(f, mode)?.to_canonical())
                    }
                })
                .collect::<Result<_>>()?
        };
        out.write_record(&fields).map_err(csv_err)?;
    }
    let bytes = out.into_inner().map_err(|e| DrError::Io(e.into_error()))?;
    String::from_utf8(bytes).map_err(|e| DrError::Config(e.to_string()))
}

pub(crate) fn csv_err(e: csv::Error) -> DrError {
    DrError::Io(std::io::Error::other(e))
}
