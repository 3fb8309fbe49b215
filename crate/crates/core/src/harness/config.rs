//! Flat `key = value` experiment configuration.
//!
//! Lines are `key = value`; `#` starts a comment. Unknown and repeated keys
//! are errors naming the key. Settings whose default depends on the
//! experiment accept `auto`.

use std::collections::HashSet;
use std::fmt;
use std::str::FromStr;

use serde::Serialize;

use crate::controls::{StrategyMode, StrategyParams};
use crate::dufresne::{DufresneSpec, TailCutoff};
use crate::error::{CouplingError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum ExperimentKind {
    FullCoupling,
    ReducedCouplingDist,
    DufresneCheck,
    ItoValidate,
    Kolmogorov,
}

impl ExperimentKind {
    pub const ALL: [ExperimentKind; 5] = [
        ExperimentKind::FullCoupling,
        ExperimentKind::ReducedCouplingDist,
        ExperimentKind::DufresneCheck,
        ExperimentKind::ItoValidate,
        ExperimentKind::Kolmogorov,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            ExperimentKind::FullCoupling => "full-coupling",
            ExperimentKind::ReducedCouplingDist => "reduced-coupling-dist",
            ExperimentKind::DufresneCheck => "dufresne-check",
            ExperimentKind::ItoValidate => "ito-validate",
            ExperimentKind::Kolmogorov => "kolmogorov",
        }
    }
}

impl fmt::Display for ExperimentKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ExperimentKind {
    type Err = CouplingError;

    fn from_str(s: &str) -> Result<Self> {
        ExperimentKind::ALL
            .into_iter()
            .find(|k| k.as_str() == s)
            .ok_or_else(|| CouplingError::config("experiment", format!("unknown experiment `{s}`")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum OutputFormat {
    Csv,
    Json,
}

impl OutputFormat {
    pub fn as_str(self) -> &'static str {
        match self {
            OutputFormat::Csv => "csv",
            OutputFormat::Json => "json",
        }
    }
}

impl FromStr for OutputFormat {
    type Err = CouplingError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "csv" => Ok(OutputFormat::Csv),
            "json" => Ok(OutputFormat::Json),
            _ => Err(CouplingError::config(
                "format",
                format!("expected csv or json, got `{s}`"),
            )),
        }
    }
}

/// Every setting of one experiment. `None` means `auto`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ExperimentConfig {
    pub experiment: ExperimentKind,
    pub n: usize,
    pub mode: StrategyMode,
    pub alpha_sq: f64,
    pub beta: f64,
    pub w0: f64,
    /// Initial `V` for both the full engine and the Kolmogorov coupler.
    pub v0: Option<f64>,
    /// Initial `U` of the Kolmogorov coupler.
    pub u0: f64,
    pub dt: Option<f64>,
    pub dtau: f64,
    pub clock_step: f64,
    pub replicas: u64,
    pub horizon: Option<f64>,
    pub max_steps: u64,
    pub seed: u64,
    pub eps_v: Option<f64>,
    pub eps_u: Option<f64>,
    /// `W` level `L′`: absorption level of the reduced engine and lower
    /// hysteresis level of the full engine.
    pub switch_level: Option<f64>,
    /// Keep only reduced replicas whose `W` never fell below the switch level.
    pub conditioned: bool,
    pub a: f64,
    pub b: f64,
    pub cases: u64,
    pub tail_fraction: f64,
    pub cutoff_tol: f64,
    pub cutoff_delta: f64,
    /// `-` writes to standard output.
    pub output_path: String,
    pub format: OutputFormat,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            experiment: ExperimentKind::ReducedCouplingDist,
            n: 2,
            mode: StrategyMode::ReflectionSynchronous,
            alpha_sq: 1.5,
            beta: 0.0,
            w0: 1e3,
            v0: None,
            u0: 1.0,
            dt: None,
            dtau: 1e-2,
            clock_step: crate::sde::DEFAULT_CLOCK_STEP,
            replicas: 1000,
            horizon: None,
            max_steps: 10_000_000,
            seed: 42,
            eps_v: None,
            eps_u: None,
            switch_level: None,
            conditioned: true,
            a: 1.0,
            b: 1.0,
            cases: 5,
            tail_fraction: 0.05,
            cutoff_tol: TailCutoff::default().tol,
            cutoff_delta: TailCutoff::default().delta,
            output_path: "-".into(),
            format: OutputFormat::Csv,
        }
    }
}

/// Keys with one-line descriptions, in the order `describe` prints them.
pub const CONFIG_KEYS: [(&str, &str); 27] = [
    (
        "experiment",
        "full-coupling | reduced-coupling-dist | dufresne-check | ito-validate | kolmogorov",
    ),
    ("n", "dimension of the full engine (>= 2)"),
    ("mode", "reflection-synchronous | reflection-rotation | pure-reflection"),
    ("alpha_sq", "reflection scale alpha^2"),
    ("beta", "rotation scale beta"),
    ("w0", "initial ratio W = U/V^2"),
    ("v0", "initial V (full: 1, kolmogorov: 0)"),
    ("u0", "initial U of the Kolmogorov coupler"),
    (
        "dt",
        "step (full: largest step 1e-4, dufresne: 1e-3, ito: 1e-5, kolmogorov: 1e-4)",
    ),
    ("dtau", "reduced-engine step in the tau clock"),
    ("clock_step", "full engine: clock increment per adaptive step"),
    ("replicas", "replicas (ito-validate: samples per case)"),
    (
        "horizon",
        "time limit (full: 1e4, reduced: 1e7 in tau, kolmogorov: 1e12)",
    ),
    ("max_steps", "step budget per full-engine replica"),
    ("seed", "base seed; replica i uses stream i"),
    ("eps_v", "V coupling threshold (auto: fraction of the start)"),
    ("eps_u", "U coupling threshold (auto: fraction of the start)"),
    ("switch_level", "W level L' (reduced: regime boundary, full: 10)"),
    ("conditioned", "reduced: summarize only replicas that stay above L'"),
    ("a", "dufresne-check: diffusion coefficient"),
    ("b", "dufresne-check: drift"),
    ("cases", "ito-validate: number of random frozen cases"),
    ("tail_fraction", "upper fraction used by the tail-index estimator"),
    ("cutoff_tol", "tail cutoff: relative size of the neglected remainder"),
    ("cutoff_delta", "tail cutoff: probability the remainder exceeds it"),
    ("output_path", "records file, - for standard output"),
    ("format", "csv | json"),
];

fn parse_f64(field: &str, value: &str) -> Result<f64> {
    value
        .parse::<f64>()
        .map_err(|_| CouplingError::config(field, format!("expected a number, got `{value}`")))
}

fn parse_auto(field: &str, value: &str) -> Result<Option<f64>> {
    if value == "auto" {
        Ok(None)
    } else {
        parse_f64(field, value).map(Some)
    }
}

/// Integers may be written as `100000` or `1e5`.
fn parse_u64(field: &str, value: &str) -> Result<u64> {
    if let Ok(v) = value.parse::<u64>() {
        return Ok(v);
    }
    match value.parse::<f64>() {
        Ok(v) if v >= 0.0 && v.fract() == 0.0 && v <= 9.007_199_254_740_992e15 => Ok(v as u64),
        _ => Err(CouplingError::config(
            field,
            format!("expected a non-negative integer, got `{value}`"),
        )),
    }
}

fn parse_bool(field: &str, value: &str) -> Result<bool> {
    match value {
        "true" => Ok(true),
        "false" => Ok(false),
        _ => Err(CouplingError::config(
            field,
            format!("expected true or false, got `{value}`"),
        )),
    }
}

fn show_auto(v: Option<f64>) -> String {
    v.map_or_else(|| "auto".to_string(), |x| format!("{x:?}"))
}

impl ExperimentConfig {
    /// Sets one key from its text value.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        match key {
            "experiment" => self.experiment = value.parse()?,
            "n" => {
                self.n = usize::try_from(parse_u64(key, value)?).map_err(|_| CouplingError::config(key, "too large"))?
            }
            "mode" => {
                self.mode = value
                    .parse()
                    .map_err(|_| CouplingError::config(key, format!("unknown mode `{value}`")))?
            }
            "alpha_sq" => self.alpha_sq = parse_f64(key, value)?,
            "beta" => self.beta = parse_f64(key, value)?,
            "w0" => self.w0 = parse_f64(key, value)?,
            "v0" => self.v0 = parse_auto(key, value)?,
            "u0" => self.u0 = parse_f64(key, value)?,
            "dt" => self.dt = parse_auto(key, value)?,
            "dtau" => self.dtau = parse_f64(key, value)?,
            "clock_step" => self.clock_step = parse_f64(key, value)?,
            "replicas" => self.replicas = parse_u64(key, value)?,
            "horizon" => self.horizon = parse_auto(key, value)?,
            "max_steps" => self.max_steps = parse_u64(key, value)?,
            "seed" => {
                self.seed = value.parse::<u64>().map_err(|_| {
                    CouplingError::config(key, format!("expected a 64-bit unsigned integer, got `{value}`"))
                })?
            }
            "eps_v" => self.eps_v = parse_auto(key, value)?,
            "eps_u" => self.eps_u = parse_auto(key, value)?,
            "switch_level" => self.switch_level = parse_auto(key, value)?,
            "conditioned" => self.conditioned = parse_bool(key, value)?,
            "a" => self.a = parse_f64(key, value)?,
            "b" => self.b = parse_f64(key, value)?,
            "cases" => self.cases = parse_u64(key, value)?,
            "tail_fraction" => self.tail_fraction = parse_f64(key, value)?,
            "cutoff_tol" => self.cutoff_tol = parse_f64(key, value)?,
            "cutoff_delta" => self.cutoff_delta = parse_f64(key, value)?,
            "output_path" => self.output_path = value.to_string(),
            "format" => self.format = value.parse()?,
            _ => return Err(CouplingError::config(key, "unknown key")),
        }
        Ok(())
    }

    /// The text value of `key`, in a form [`ExperimentConfig::set`] reads
    /// back to the same value.
    pub fn get(&self, key: &str) -> Option<String> {
        Some(match key {
            "experiment" => self.experiment.to_string(),
            "n" => self.n.to_string(),
            "mode" => self.mode.to_string(),
            "alpha_sq" => format!("{:?}", self.alpha_sq),
            "beta" => format!("{:?}", self.beta),
            "w0" => format!("{:?}", self.w0),
            "v0" => show_auto(self.v0),
            "u0" => format!("{:?}", self.u0),
            "dt" => show_auto(self.dt),
            "dtau" => format!("{:?}", self.dtau),
            "clock_step" => format!("{:?}", self.clock_step),
            "replicas" => self.replicas.to_string(),
            "horizon" => show_auto(self.horizon),
            "max_steps" => self.max_steps.to_string(),
            "seed" => self.seed.to_string(),
            "eps_v" => show_auto(self.eps_v),
            "eps_u" => show_auto(self.eps_u),
            "switch_level" => show_auto(self.switch_level),
            "conditioned" => self.conditioned.to_string(),
            "a" => format!("{:?}", self.a),
            "b" => format!("{:?}", self.b),
            "cases" => self.cases.to_string(),
            "tail_fraction" => format!("{:?}", self.tail_fraction),
            "cutoff_tol" => format!("{:?}", self.cutoff_tol),
            "cutoff_delta" => format!("{:?}", self.cutoff_delta),
            "output_path" => self.output_path.clone(),
            "format" => self.format.as_str().to_string(),
            _ => return None,
        })
    }

    /// Applies every `key = value` line of `text` on top of `self`.
    pub fn apply_text(&mut self, text: &str) -> Result<()> {
        let mut seen = HashSet::new();
        for (index, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| CouplingError::Parse {
                line: index + 1,
                message: "expected `key = value`".into(),
            })?;
            let (key, value) = (key.trim(), value.trim());
            if key.is_empty() {
                return Err(CouplingError::Parse {
                    line: index + 1,
                    message: "empty key".into(),
                });
            }
            if !seen.insert(key.to_string()) {
                return Err(CouplingError::config(
                    key,
                    format!("duplicate key on line {}", index + 1),
                ));
            }
            self.set(key, value)?;
        }
        Ok(())
    }

    /// Defaults overlaid with `text`, then validated.
    pub fn parse(text: &str) -> Result<Self> {
        let mut config = ExperimentConfig::default();
        config.apply_text(text)?;
        config.validate()?;
        Ok(config)
    }

    /// One `key = value` line per setting.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for (key, _) in CONFIG_KEYS {
            out.push_str(&format!("{key} = {}\n", self.get(key).expect("listed key")));
        }
        out
    }

    /// Every setting with its description, as accepted by [`ExperimentConfig::parse`].
    pub fn describe(&self) -> String {
        let mut out = String::new();
        for (key, doc) in CONFIG_KEYS {
            out.push_str(&format!("# {doc}\n{key} = {}\n", self.get(key).expect("listed key")));
        }
        out
    }

    pub fn strategy(&self) -> Result<StrategyParams> {
        StrategyParams::new(self.alpha_sq, self.beta, self.mode).map_err(|e| match e {
            CouplingError::OutOfRange { name, constraint, .. } => CouplingError::config(name, constraint),
            other => other,
        })
    }

    pub fn cutoff(&self) -> TailCutoff {
        TailCutoff {
            tol: self.cutoff_tol,
            delta: self.cutoff_delta,
        }
    }

    pub fn resolved_dt(&self) -> f64 {
        self.dt.unwrap_or(match self.experiment {
            ExperimentKind::FullCoupling => 1e-4,
            ExperimentKind::ReducedCouplingDist => self.dtau,
            ExperimentKind::DufresneCheck => 1e-3,
            ExperimentKind::ItoValidate => 1e-5,
            ExperimentKind::Kolmogorov => 1e-4,
        })
    }

    pub fn resolved_horizon(&self) -> f64 {
        self.horizon.unwrap_or(match self.experiment {
            ExperimentKind::FullCoupling => 1e4,
            ExperimentKind::ReducedCouplingDist => 1e7,
            ExperimentKind::Kolmogorov => 1e12,
            ExperimentKind::DufresneCheck | ExperimentKind::ItoValidate => f64::INFINITY,
        })
    }

    pub fn resolved_v0(&self) -> f64 {
        self.v0.unwrap_or(match self.experiment {
            ExperimentKind::Kolmogorov => 0.0,
            _ => 1.0,
        })
    }

    /// Checks the settings the chosen experiment uses; errors name the key.
    pub fn validate(&self) -> Result<()> {
        fn positive(field: &str, v: f64) -> Result<()> {
            if v > 0.0 && !v.is_nan() {
                Ok(())
            } else {
                Err(CouplingError::config(field, format!("must be > 0, got {v}")))
            }
        }
        fn finite(field: &str, v: f64) -> Result<()> {
            if v.is_finite() {
                Ok(())
            } else {
                Err(CouplingError::config(field, format!("must be finite, got {v}")))
            }
        }
        if self.replicas < 1 {
            return Err(CouplingError::config("replicas", "must be >= 1"));
        }
        if let Some(dt) = self.dt {
            positive("dt", dt)?;
        }
        if let Some(h) = self.horizon {
            positive("horizon", h)?;
        }
        for (field, v) in [("eps_v", self.eps_v), ("eps_u", self.eps_u)] {
            if let Some(v) = v {
                if !(v >= 0.0) {
                    return Err(CouplingError::config(field, format!("must be >= 0, got {v}")));
                }
            }
        }
        if let Some(l) = self.switch_level {
            if !(l >= 0.0) || !l.is_finite() {
                return Err(CouplingError::config(
                    "switch_level",
                    format!("must be finite and >= 0, got {l}"),
                ));
            }
        }
        if !(self.tail_fraction > 0.0 && self.tail_fraction <= 0.5) {
            return Err(CouplingError::config("tail_fraction", "must be in (0, 0.5]"));
        }
        positive("cutoff_tol", self.cutoff_tol)?;
        if !(self.cutoff_delta > 0.0 && self.cutoff_delta < 1.0) {
            return Err(CouplingError::config("cutoff_delta", "must be in (0, 1)"));
        }
        if self.output_path.is_empty() {
            return Err(CouplingError::config("output_path", "must not be empty"));
        }
        match self.experiment {
            ExperimentKind::FullCoupling => {
                if self.n < 2 {
                    return Err(CouplingError::config("n", "must be >= 2"));
                }
                self.strategy()?;
                finite("w0", self.w0)?;
                if !(self.w0 >= 0.0) {
                    return Err(CouplingError::config("w0", "must be >= 0"));
                }
                positive("v0", self.resolved_v0())?;
                finite("v0", self.resolved_v0())?;
                positive("clock_step", self.clock_step)?;
                if self.max_steps < 1 {
                    return Err(CouplingError::config("max_steps", "must be >= 1"));
                }
            }
            ExperimentKind::ReducedCouplingDist => {
                self.strategy()?;
                positive("w0", self.w0)?;
                finite("w0", self.w0)?;
                positive("dtau", self.dtau)?;
                finite("dtau", self.dtau)?;
            }
            ExperimentKind::DufresneCheck => {
                DufresneSpec::new(self.a, self.b).map_err(|e| match e {
                    CouplingError::OutOfRange { name, constraint, .. } => CouplingError::config(name, constraint),
                    other => other,
                })?;
            }
            ExperimentKind::ItoValidate => {
                if self.cases < 1 {
                    return Err(CouplingError::config("cases", "must be >= 1"));
                }
                if self.replicas < 2 {
                    return Err(CouplingError::config("replicas", "must be >= 2 samples per case"));
                }
            }
            ExperimentKind::Kolmogorov => {
                finite("u0", self.u0)?;
                finite("v0", self.resolved_v0())?;
            }
        }
        Ok(())
    }
}
