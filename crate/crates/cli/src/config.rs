//! Run configuration: strict JSON in, fully resolved JSON out.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use drlab::criticality::{self, ParametricFamily};
use drlab::montecarlo;
use drlab::scalar::parse_rational;
use drlab::{DrError, ModelParams, NumericMode, Pmf, Result, Scalar};
use serde::{Deserialize, Serialize};

/// Environment variable naming the default root for output directories.
pub const OUT_ROOT_ENV: &str = "DRLAB_OUT_ROOT";

#[derive(Clone, Debug, Deserialize, Serialize, PartialEq)]
#[serde(untagged)]
pub enum PmfSpec {
    /// `"0:4/5,2:1/5"`
    Pairs(String),
    /// `{"0": "4/5", "2": "1/5"}`
    Map(BTreeMap<String, String>),
}

impl PmfSpec {
    fn text(&self) -> String {
        match self {
            PmfSpec::Pairs(s) => s.clone(),
            PmfSpec::Map(m) => m.iter().map(|(k, v)| format!("{k}:{v}")).collect::<Vec<_>>().join(","),
        }
    }

    pub fn parse(&self, mode: NumericMode) -> Result<Pmf> {
        Pmf::parse(mode, &self.text())
    }
}

#[derive(Clone, Debug, Deserialize, Serialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct FamilySpec {
    pub y0: PmfSpec,
    /// A probability, or `"critical"` for `p = p_c`.
    #[serde(default = "critical_str")]
    pub p: String,
}

fn critical_str() -> String {
    "critical".into()
}

#[derive(Clone, Debug, Deserialize, Serialize, PartialEq)]
#[serde(deny_unknown_fields, rename_all = "snake_case")]
pub enum InitialSpec {
    Pmf(PmfSpec),
    Family(FamilySpec),
}

#[derive(Clone, Copy, Debug, Deserialize, Serialize, PartialEq, Eq, Default)]
#[serde(rename_all = "snake_case")]
pub enum McMethod {
    #[default]
    Tree,
    Pool,
}

/// Everything a subcommand may read. Unknown keys are rejected.
#[derive(Clone, Debug, Deserialize, Serialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub m: u32,
    #[serde(default = "default_mode")]
    pub mode: String,
    #[serde(default)]
    pub precision_bits: Option<u32>,
    pub initial: InitialSpec,
    #[serde(default)]
    pub steps: Option<usize>,
    #[serde(default)]
    pub truncation_tol: Option<String>,
    #[serde(default)]
    pub k_max: Option<usize>,
    #[serde(default)]
    pub out: Option<PathBuf>,
    #[serde(default)]
    pub seed: Option<u64>,

    // evolve / conjectures
    #[serde(default)]
    pub s_fractions: Option<Vec<String>>,
    #[serde(default)]
    pub moving_point: Option<bool>,
    #[serde(default)]
    pub r_list: Option<Vec<f64>>,
    #[serde(default)]
    pub track_tv: Option<bool>,
    #[serde(default)]
    pub audit_steps: Option<usize>,
    #[serde(default)]
    pub checkpoint_every: Option<usize>,
    #[serde(default)]
    pub resume_from: Option<PathBuf>,
    #[serde(default)]
    pub verdict_tolerance: Option<f64>,

    // pc / scan-k
    #[serde(default)]
    pub bisection_tol: Option<f64>,
    #[serde(default)]
    pub p_grid: Option<Vec<String>>,

    // mc
    #[serde(default)]
    pub method: Option<McMethod>,
    #[serde(default)]
    pub samples: Option<u64>,
    #[serde(default)]
    pub pool_size: Option<usize>,
    #[serde(default)]
    pub budget: Option<u64>,
}

/// Step counts used when neither the file nor the command line gives one.
pub fn default_steps(command: &str) -> Option<usize> {
    match command {
        "evolve" | "conjectures" => Some(2000),
        "free-energy" => Some(20),
        "scan-k" => Some(40),
        "mc" => Some(6),
        _ => None,
    }
}

fn default_mode() -> String {
    "bigfloat".into()
}

/// Command-line overrides, applied on top of the file.
#[derive(Clone, Debug, Default)]
pub struct Overrides {
    pub out: Option<PathBuf>,
    pub steps: Option<usize>,
    pub precision: Option<u32>,
    pub tol: Option<String>,
    pub seed: Option<u64>,
}

pub fn load(path: &Path) -> Result<RunConfig> {
    let text = std::fs::read_to_string(path).map_err(|e| DrError::Config(format!("{}: {e}", path.display())))?;
    parse(&text)
}

pub fn parse(text: &str) -> Result<RunConfig> {
    serde_json::from_str(text).map_err(|e| DrError::Config(format!("config: {e}")))
}

impl RunConfig {
    /// Applies overrides and fills every default, so the result reproduces the run on its own.
    pub fn resolve(mut self, ov: &Overrides, command: &str) -> Result<RunConfig> {
        if ov.steps.is_some() {
            self.steps = ov.steps;
        }
        if ov.precision.is_some() {
            self.precision_bits = ov.precision;
        }
        if ov.tol.is_some() {
            self.truncation_tol = ov.tol.clone();
        }
        if ov.seed.is_some() {
            self.seed = ov.seed;
        }
        if ov.out.is_some() {
            self.out = ov.out.clone();
        }
        let mode = self.numeric_mode()?;
        self.mode = if mode.is_exact() { "exact".into() } else { "bigfloat".into() };
        self.precision_bits = if mode.is_exact() { None } else { Some(mode.precision()) };
        if self.truncation_tol.is_none() {
            self.truncation_tol = Some(if mode.is_exact() { "0".into() } else { "1e-30".into() });
        }
        if self.out.is_none() {
            let root = std::env::var_os(OUT_ROOT_ENV).map(PathBuf::from).unwrap_or_else(|| PathBuf::from("drlab-out"));
            self.out = Some(root.join(command));
        }
        self.seed.get_or_insert(0);
        if self.steps.is_none() {
            self.steps = default_steps(command);
        }
        let defaults = drlab::EvolveOptions::default();
        self.s_fractions.get_or_insert_with(|| {
            defaults.s_fractions.iter().map(|r| format!("{}/{}", r.numer(), r.denom())).collect()
        });
        self.moving_point.get_or_insert(defaults.moving_point);
        self.r_list.get_or_insert(defaults.r_list.clone());
        self.track_tv.get_or_insert(defaults.track_tv);
        self.audit_steps.get_or_insert(defaults.audit_steps);
        self.verdict_tolerance.get_or_insert(0.25);
        self.bisection_tol.get_or_insert(1e-12);
        self.method.get_or_insert(McMethod::Tree);
        self.samples.get_or_insert(100_000);
        self.pool_size.get_or_insert(100_000);
        self.budget.get_or_insert(montecarlo::DEFAULT_TREE_BUDGET);
        // normalise the initial law to exact pairs so the resolved file is self-contained
        if let InitialSpec::Pmf(spec) = &self.initial {
            let p = spec.parse(NumericMode::exact())?;
            self.initial = InitialSpec::Pmf(PmfSpec::Pairs(p.to_pairs_string()));
        }
        self.params()?;
        Ok(self)
    }

    pub fn numeric_mode(&self) -> Result<NumericMode> {
        match self.mode.as_str() {
            // precision is ignored in exact mode
            "exact" => Ok(NumericMode::exact()),
            "bigfloat" => NumericMode::big_float(self.precision_bits.unwrap_or(NumericMode::DEFAULT_PRECISION)),
            other => Err(DrError::Config(format!("unknown mode {other:?} (expected \"exact\" or \"bigfloat\")"))),
        }
    }

    pub fn params(&self) -> Result<ModelParams> {
        let tol = parse_rational(self.truncation_tol.as_deref().unwrap_or("0"))?;
        ModelParams::new(self.m, tol, self.k_max)
    }

    pub fn out_dir(&self) -> &Path {
        self.out.as_deref().expect("resolved")
    }

    pub fn steps(&self, default: usize) -> usize {
        self.steps.unwrap_or(default)
    }

    /// The initial law in the run's mode.
    pub fn initial_pmf(&self) -> Result<Pmf> {
        let mode = self.numeric_mode()?;
        match &self.initial {
            InitialSpec::Pmf(spec) => spec.parse(mode),
            InitialSpec::Family(f) => {
                let y0 = f.y0.parse(NumericMode::exact())?;
                let params = self.params()?;
                let p = if f.p == "critical" {
                    criticality::critical_p(&y0, &params)?
                } else {
                    Scalar::Exact(parse_rational(&f.p)?)
                };
                Ok(ParametricFamily::new(y0, p)?.law()?.to_mode(mode))
            }
        }
    }

    /// `Y0` of a family configuration.
    pub fn y0(&self) -> Result<Pmf> {
        match &self.initial {
            InitialSpec::Family(f) => f.y0.parse(NumericMode::exact()),
            InitialSpec::Pmf(_) => Err(DrError::Config("this command needs \"initial\": {\"family\": {\"y0\": ...}}".into())),
        }
    }

    pub fn evolve_options(&self) -> Result<drlab::EvolveOptions> {
        let s_fractions = self
            .s_fractions
            .clone()
            .unwrap_or_default()
            .iter()
            .map(|t| parse_rational(t))
            .collect::<Result<Vec<_>>>()?;
        for f in &s_fractions {
            if f.cmp0() == std::cmp::Ordering::Less || *f >= 1 {
                return Err(DrError::Config(format!("s fraction {f} must lie in [0, 1)")));
            }
        }
        let r_list = self.r_list.clone().unwrap_or_default();
        if r_list.iter().any(|r| !(r.is_finite() && *r > 0.0)) {
            return Err(DrError::Config("r_list entries must be positive".into()));
        }
        Ok(drlab::EvolveOptions {
            s_fractions,
            moving_point: self.moving_point.unwrap_or(true),
            r_list,
            track_tv: self.track_tv.unwrap_or(true),
            audit_steps: self.audit_steps.unwrap_or(3),
            audit_seed: self.seed.unwrap_or(0),
        })
    }
}
