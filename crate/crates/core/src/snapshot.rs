//! Lossless on-disk form of a trace, for pausing and resuming long runs.
//!
//! The file is line oriented text: a versioned header, the run parameters,
//! the initial and current laws as length-prefixed entry lists, one line per
//! record, and a trailing SHA-256 of everything above it. Rationals are stored
//! as `a/b`; floats as `<precision>:<sign><mantissa>p<exponent>`, so nothing
//! depends on decimal rounding.

use std::fs;
use std::io::Write;
use std::path::Path;

use rug::Rational;
use sha2::{Digest, Sha256};

use crate::asymptotics::TvEstimate;
use crate::error::{DrError, Result};
use crate::evolution::{EvolutionTrace, EvolveOptions, StepRecord};
use crate::genfun::{GenStats, SPoint};
use crate::pmf::{ModelParams, Pmf, Probs};
use crate::scalar::{NumericMode, Scalar};

pub const FORMAT_VERSION: u32 = 1;
const MAGIC: &str = "drlab-snapshot";

fn enc(s: &Scalar) -> String {
    match s {
        Scalar::Exact(_) => s.encode_exact(),
        Scalar::Float(f) => format!("{}:{}", f.prec(), s.encode_exact()),
    }
}

/// Scalars carry their own kind: exact-mode records still hold float
/// estimates for fractional moments, so decoding does not follow the run mode.
fn dec(text: &str) -> Result<Scalar> {
    match text.split_once(':') {
        None => Scalar::decode_exact(text, NumericMode::exact()),
        Some((prec, rest)) => {
            let prec: u32 = prec.parse().map_err(|_| load(format!("malformed precision in {text:?}")))?;
            if !(1..=1 << 24).contains(&prec) {
                return Err(load(format!("precision {prec} out of range")));
            }
            Scalar::decode_exact(rest, NumericMode::BigFloat { precision_bits: prec })
        }
    }
}

fn load(msg: String) -> DrError {
    DrError::Load(msg)
}

/// Renders the snapshot text, checksum line included.
pub fn to_text(trace: &EvolutionTrace) -> String {
    let mut b = String::new();
    let o = &trace.options;
    b += &format!("{MAGIC}\n");
    b += &format!("format_version {FORMAT_VERSION}\n");
    b += &format!("m {}\n", trace.params.m);
    b += &format!("mode {}\n", trace.mode);
    b += &format!("step {}\n", trace.last_step());
    let tol = &trace.params.truncation_tol;
    b += &format!("tol {}/{}\n", tol.numer(), tol.denom());
    b += &format!("k_max {}\n", trace.params.k_max.map_or("none".to_string(), |k| k.to_string()));
    let fr: Vec<String> = o.s_fractions.iter().map(|r| format!("{}/{}", r.numer(), r.denom())).collect();
    b += &format!("s_fractions {} {}\n", fr.len(), fr.join(" "));
    let rl: Vec<String> = o.r_list.iter().map(|r| r.to_string()).collect();
    b += &format!("r_list {} {}\n", rl.len(), rl.join(" "));
    b += &format!(
        "flags {} {} {} {}\n",
        o.moving_point as u8, o.track_tv as u8, o.audit_steps, o.audit_seed
    );
    write_pmf(&mut b, "initial", &trace.initial);
    write_pmf(&mut b, "final", &trace.final_pmf);
    b += &format!("records {}\n", trace.records.len());
    for r in &trace.records {
        b += &record_line(r);
        b.push('\n');
    }
    let sum = hex(&Sha256::digest(b.as_bytes()));
    b += &format!("checksum {sum}\n");
    b
}

fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|x| format!("{x:02x}")).collect()
}

fn write_pmf(b: &mut String, name: &str, p: &Pmf) {
    *b += &format!("pmf {name} {} {} {}\n", p.len(), enc(p.discarded_mass()), enc(p.discarded_weight()));
    for s in p.probs() {
        *b += &enc(&s);
        b.push('\n');
    }
}

fn record_line(r: &StepRecord) -> String {
    let mut f: Vec<String> = vec![r.n.to_string(), r.support_len.to_string(), r.retained_len.to_string()];
    let st = &r.stats;
    for s in [&st.g, &st.g1, &st.g2, &st.g3, &st.eps, &st.d, &st.p_zero, &r.mean, &r.p_nonzero, &r.discarded_mass, &r.discarded_weight] {
        f.push(enc(s));
    }
    f.push(r.s_points.len().to_string());
    for p in &r.s_points {
        for s in [&p.s, &p.g, &p.g1, &p.g2, &p.delta, &p.cs_lhs, &p.cs_rhs] {
            f.push(enc(s));
        }
    }
    f.push(r.r_moments.len().to_string());
    for (x, s) in &r.r_moments {
        f.push(x.to_string());
        f.push(enc(s));
    }
    match &r.tv {
        Some(tv) => {
            f.push("1".into());
            f.push(enc(&tv.tv));
            f.push(enc(&tv.bound));
        }
        None => f.push("0".into()),
    }
    f.join(" ")
}

/// Writes the snapshot atomically: a temporary file in the target directory is
/// renamed over `path` only once fully written.
pub fn snapshot(trace: &EvolutionTrace, path: &Path) -> Result<()> {
    let dir = match path.parent() {
        Some(d) if !d.as_os_str().is_empty() => d,
        _ => Path::new("."),
    };
    let mut tmp = tempfile::NamedTempFile::new_in(dir)?;
    tmp.write_all(to_text(trace).as_bytes())?;
    tmp.as_file().sync_all()?;
    tmp.persist(path).map_err(|e| DrError::Io(e.error))?;
    Ok(())
}

/// Reads a snapshot back. Any defect yields a load error and no trace.
pub fn restore(path: &Path) -> Result<EvolutionTrace> {
    let text = fs::read_to_string(path).map_err(|e| load(format!("{}: {e}", path.display())))?;
    from_text(&text)
}

struct Lines<'a> {
    it: std::iter::Enumerate<std::str::Lines<'a>>,
}

impl<'a> Lines<'a> {
    fn next(&mut self) -> Result<(usize, &'a str)> {
        self.it.next().map(|(i, l)| (i + 1, l)).ok_or_else(|| load("unexpected end of snapshot".into()))
    }

    /// Next line, which must start with `key`; returns the remaining fields.
    fn keyed(&mut self, key: &str) -> Result<Vec<&'a str>> {
        let (no, line) = self.next()?;
        let mut parts = line.split(' ');
        if parts.next() != Some(key) {
            return Err(load(format!("line {no}: expected `{key}`")));
        }
        Ok(parts.filter(|s| !s.is_empty()).collect())
    }
}

fn num<T: std::str::FromStr>(text: &str, what: &str) -> Result<T> {
    text.parse().map_err(|_| load(format!("malformed {what} {text:?}")))
}

fn single<'a>(fields: &[&'a str], key: &str) -> Result<&'a str> {
    match fields {
        [x] => Ok(x),
        _ => Err(load(format!("`{key}` takes exactly one value"))),
    }
}

/// Parses snapshot text, verifying the checksum first.
pub fn from_text(text: &str) -> Result<EvolutionTrace> {
    let body_end = text
        .trim_end_matches('\n')
        .rfind('\n')
        .map(|i| i + 1)
        .ok_or_else(|| load("snapshot too short".into()))?;
    let (body, tail) = text.split_at(body_end);
    let stored = tail.trim_end().strip_prefix("checksum ").ok_or_else(|| load("missing checksum line".into()))?;
    if hex(&Sha256::digest(body.as_bytes())) != stored {
        return Err(load("checksum mismatch: snapshot is corrupted".into()));
    }
    let mut ls = Lines { it: body.lines().enumerate() };
    if ls.next()?.1 != MAGIC {
        return Err(load("not a drlab snapshot".into()));
    }
    let version: u32 = num(single(&ls.keyed("format_version")?, "format_version")?, "format_version")?;
    if version != FORMAT_VERSION {
        return Err(load(format!("unsupported format_version {version} (expected {FORMAT_VERSION})")));
    }
    let m: u32 = num(single(&ls.keyed("m")?, "m")?, "m")?;
    let mode: NumericMode = single(&ls.keyed("mode")?, "mode")?.parse().map_err(|e: DrError| load(e.to_string()))?;
    let step: usize = num(single(&ls.keyed("step")?, "step")?, "step")?;
    let tol = Rational::parse(single(&ls.keyed("tol")?, "tol")?)
        .map(Rational::from)
        .map_err(|_| load("malformed tol".into()))?;
    let k_max = match single(&ls.keyed("k_max")?, "k_max")? {
        "none" => None,
        k => Some(num(k, "k_max")?),
    };
    let params = ModelParams::new(m, tol, k_max).map_err(|e| load(e.to_string()))?;

    let fr = counted(ls.keyed("s_fractions")?, 1)?;
    let s_fractions = fr
        .iter()
        .map(|t| Rational::parse(t).map(Rational::from).map_err(|_| load(format!("malformed fraction {t:?}"))))
        .collect::<Result<Vec<_>>>()?;
    let r_list = counted(ls.keyed("r_list")?, 1)?.iter().map(|t| num(t, "r")).collect::<Result<Vec<f64>>>()?;
    let flags = ls.keyed("flags")?;
    if flags.len() != 4 {
        return Err(load("`flags` takes four values".into()));
    }
    let options = EvolveOptions {
        s_fractions,
        moving_point: num::<u8>(flags[0], "flag")? == 1,
        r_list,
        track_tv: num::<u8>(flags[1], "flag")? == 1,
        audit_steps: num(flags[2], "audit_steps")?,
        audit_seed: num(flags[3], "audit_seed")?,
    };
    let initial = read_pmf(&mut ls, "initial", mode)?;
    let final_pmf = read_pmf(&mut ls, "final", mode)?;
    let count: usize = num(single(&ls.keyed("records")?, "records")?, "record count")?;
    let mut records = Vec::with_capacity(count.min(1 << 20));
    for _ in 0..count {
        let (no, line) = ls.next()?;
        records.push(parse_record(line).map_err(|e| load(format!("line {no}: {e}")))?);
    }
    if ls.it.next().is_some() {
        return Err(load("trailing content before checksum".into()));
    }
    if records.last().map_or(0, |r| r.n) != step {
        return Err(load(format!("header step {step} disagrees with the records")));
    }
    Ok(EvolutionTrace { params, mode, options, initial, records, final_pmf })
}

/// Checks a `<count> <item>...` field list with `width` tokens per item.
fn counted(fields: Vec<&str>, width: usize) -> Result<Vec<&str>> {
    let (n, rest) = fields.split_first().ok_or_else(|| load("missing count".into()))?;
    let n: usize = num(n, "count")?;
    if rest.len() != n * width {
        return Err(load(format!("expected {} values, found {}", n * width, rest.len())));
    }
    Ok(rest.to_vec())
}

fn read_pmf(ls: &mut Lines<'_>, name: &str, mode: NumericMode) -> Result<Pmf> {
    let head = ls.keyed("pmf")?;
    if head.len() != 4 || head[0] != name {
        return Err(load(format!("malformed `pmf {name}` header")));
    }
    let len: usize = num(head[1], "length")?;
    if len == 0 {
        return Err(load(format!("pmf {name} is empty")));
    }
    let mass = dec(head[2])?;
    let weight = dec(head[3])?;
    let mut entries = Vec::with_capacity(len.min(1 << 24));
    for _ in 0..len {
        let (_, line) = ls.next()?;
        let s = dec(line)?;
        if !mode.matches(&s) {
            return Err(load(format!("entry {line:?} does not match mode {mode}")));
        }
        entries.push(s);
    }
    let probs = match mode {
        NumericMode::ExactRational => {
            Probs::Exact(entries.into_iter().map(|s| s.as_rational().cloned().expect("exact mode")).collect())
        }
        NumericMode::BigFloat { .. } => {
            Probs::Float(entries.into_iter().map(|s| s.as_float().cloned().expect("float mode")).collect())
        }
    };
    Ok(Pmf::from_raw(probs, mode, mass, weight))
}

fn parse_record(line: &str) -> Result<StepRecord> {
    let mut f = line.split(' ');
    let mut next = || f.next().ok_or_else(|| load("record line too short".into()));
    let n: usize = num(next()?, "n")?;
    let support_len: usize = num(next()?, "support_len")?;
    let retained_len: usize = num(next()?, "retained_len")?;
    let mut sc = Vec::with_capacity(11);
    for _ in 0..11 {
        sc.push(dec(next()?)?);
    }
    let mut sc = sc.into_iter();
    let mut take = || sc.next().expect("eleven scalars");
    let stats = GenStats { g: take(), g1: take(), g2: take(), g3: take(), eps: take(), d: take(), p_zero: take() };
    let (mean, p_nonzero, discarded_mass, discarded_weight) = (take(), take(), take(), take());
    let k: usize = num(next()?, "s-point count")?;
    let mut s_points = Vec::with_capacity(k.min(1024));
    for _ in 0..k {
        let mut v = Vec::with_capacity(7);
        for _ in 0..7 {
            v.push(dec(next()?)?);
        }
        let mut v = v.into_iter();
        let mut t = || v.next().expect("seven scalars");
        s_points.push(SPoint { s: t(), g: t(), g1: t(), g2: t(), delta: t(), cs_lhs: t(), cs_rhs: t() });
    }
    let k: usize = num(next()?, "moment count")?;
    let mut r_moments = Vec::with_capacity(k.min(1024));
    for _ in 0..k {
        let r: f64 = num(next()?, "r")?;
        r_moments.push((r, dec(next()?)?));
    }
    let tv = match next()? {
        "0" => None,
        "1" => Some(TvEstimate { tv: dec(next()?)?, bound: dec(next()?)? }),
        t => return Err(load(format!("malformed tv flag {t:?}"))),
    };
    if f.next().is_some() {
        return Err(load("record line too long".into()));
    }
    Ok(StepRecord {
        n,
        stats,
        mean,
        p_nonzero,
        support_len,
        retained_len,
        discarded_mass,
        discarded_weight,
        s_points,
        r_moments,
        tv,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::evolution::evolve;

    fn trace(mode: NumericMode, steps: usize) -> EvolutionTrace {
        let p = Pmf::parse(mode, "0:4/5,2:1/5").unwrap();
        let params = ModelParams::with_default_tol(2).unwrap();
        evolve(&p, &params, steps, &EvolveOptions::default()).unwrap()
    }

    #[test]
    fn round_trip_both_modes() {
        for mode in [NumericMode::exact(), NumericMode::big_float(128).unwrap()] {
            let t = trace(mode, 6);
            assert_eq!(from_text(&to_text(&t)).unwrap(), t);
        }
    }

    #[test]
    fn zero_step_trace_round_trips() {
        let t = trace(NumericMode::exact(), 0);
        assert_eq!(from_text(&to_text(&t)).unwrap(), t);
    }

    #[test]
    fn corruption_is_detected() {
        let text = to_text(&trace(NumericMode::exact(), 3));
        let bad = text.replacen("4/5", "3/5", 1);
        assert!(matches!(from_text(&bad), Err(DrError::Load(_))));
        let truncated = &text[..text.len() / 2];
        assert!(matches!(from_text(truncated), Err(DrError::Load(_))));
    }

    #[test]
    fn version_mismatch_is_rejected() {
        let text = to_text(&trace(NumericMode::exact(), 1));
        let body = text[..text.rfind("checksum").unwrap()].replace("format_version 1", "format_version 2");
        let forged = format!("{body}checksum {}\n", hex(&Sha256::digest(body.as_bytes())));
        let err = from_text(&forged).unwrap_err();
        assert!(err.to_string().contains("format_version"));
    }

    #[test]
    fn file_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("run.snap");
        let t = trace(NumericMode::big_float(96).unwrap(), 4);
        snapshot(&t, &path).unwrap();
        assert_eq!(restore(&path).unwrap(), t);
    }
}
