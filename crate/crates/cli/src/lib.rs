//! Experiment runner behind the `momsand` binary: configuration, command
//! dispatch and JSON reports.

use std::fmt;
use std::str::FromStr;

use momsand_core::{ConstantBundle, Error};
use serde::{Deserialize, Serialize};

pub mod commands;

pub const EXIT_PASS: i32 = 0;
pub const EXIT_FAIL: i32 = 1;
pub const EXIT_USAGE: i32 = 2;
pub const EXIT_HYPOTHESIS: i32 = 3;

/// Environment variable capping the worker pool size.
pub const THREADS_ENV: &str = "MOMSAND_THREADS";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CommandKind {
    Moments,
    Certify,
    Verify,
    Riesz,
    Perpetuity,
    Counterexample,
}

impl fmt::Display for CommandKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            CommandKind::Moments => "moments",
            CommandKind::Certify => "certify",
            CommandKind::Verify => "verify",
            CommandKind::Riesz => "riesz",
            CommandKind::Perpetuity => "perpetuity",
            CommandKind::Counterexample => "counterexample",
        };
        f.write_str(s)
    }
}

/// Every parameter a run can take. Unset fields fall back to per-command
/// defaults; the filled-in copy is echoed in the report.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub command: Option<CommandKind>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dist: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub p: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub n: Option<Vec<usize>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dim: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub norm: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub coeffs: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub reps: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub grid_a: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub grid_q: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub q: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub draws: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub bdist: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub coupling: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seq: Option<Vec<u64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub term: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub points: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub fixed_point_demo: Option<bool>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lower_c: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub csv: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub out: Option<String>,
}

macro_rules! overlay {
    ($base:expr, $top:expr, $($field:ident),*) => {
        ExperimentConfig { $($field: $top.$field.clone().or_else(|| $base.$field.clone())),* }
    };
}

impl ExperimentConfig {
    /// Field-wise merge: values set in `top` win.
    pub fn overridden_by(&self, top: &ExperimentConfig) -> ExperimentConfig {
        overlay!(
            self, top, command, dist, p, n, dim, norm, coeffs, reps, seed, grid_a, grid_q, q, draws, bdist,
            coupling, seq, term, points, fixed_point_demo, lower_c, csv, out
        )
    }

    /// Compact JSON with fields in declaration order and unset fields
    /// omitted; [`ExperimentConfig::from_canonical`] inverts it exactly.
    pub fn to_canonical(&self) -> String {
        serde_json::to_string(self).expect("config serialises")
    }

    pub fn from_canonical(s: &str) -> Result<Self, CliError> {
        serde_json::from_str(s).map_err(|e| CliError::Usage(format!("bad config: {e}")))
    }

    pub fn from_file(path: &str) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::Usage(format!("cannot read {path}: {e}")))?;
        Self::from_canonical(&text)
    }
}

/// Where the coefficient vectors come from.
#[derive(Debug, Clone, PartialEq)]
pub enum CoeffSource {
    /// Flat list, chunked into vectors of length `dim`.
    Explicit(Vec<f64>),
    /// `count` vectors with entries uniform on `[−scale, scale]`.
    Random { count: usize, scale: f64, seed: u64 },
}

impl FromStr for CoeffSource {
    type Err = CliError;

    fn from_str(s: &str) -> Result<Self, CliError> {
        let s = s.trim();
        if let Some(body) = s.strip_prefix("random:") {
            let (mut count, mut scale, mut seed) = (None, 1.0, 0u64);
            for part in body.split(',').filter(|x| !x.trim().is_empty()) {
                let (k, v) = part
                    .split_once('=')
                    .ok_or_else(|| CliError::Usage(format!("expected key=value in `{s}`, got `{part}`")))?;
                let bad = |e: &dyn fmt::Display| CliError::Usage(format!("bad value for {k} in `{s}`: {e}"));
                match k.trim() {
                    "count" => count = Some(v.trim().parse::<usize>().map_err(|e| bad(&e))?),
                    "scale" => scale = v.trim().parse::<f64>().map_err(|e| bad(&e))?,
                    "seed" => seed = v.trim().parse::<u64>().map_err(|e| bad(&e))?,
                    other => return Err(CliError::Usage(format!("unknown key `{other}` in `{s}`"))),
                }
            }
            let count = count.ok_or_else(|| CliError::Usage(format!("`{s}` needs count=")))?;
            return Ok(CoeffSource::Random { count, scale, seed });
        }
        let values = s
            .split(',')
            .map(|x| x.trim().parse::<f64>())
            .collect::<Result<Vec<_>, _>>()
            .map_err(|e| CliError::Usage(format!("bad coefficient list `{s}`: {e}")))?;
        Ok(CoeffSource::Explicit(values))
    }
}

#[derive(Debug)]
pub enum CliError {
    Usage(String),
    Core(Error),
    Io(String),
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Usage(m) => write!(f, "usage error: {m}"),
            CliError::Core(e) if e.is_hypothesis_failure() => write!(f, "hypothesis not satisfied: {e}"),
            CliError::Core(e) => write!(f, "{e}"),
            CliError::Io(m) => write!(f, "i/o error: {m}"),
        }
    }
}

impl std::error::Error for CliError {}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        CliError::Core(e)
    }
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Core(e) if e.is_hypothesis_failure() || matches!(e, Error::NonfiniteMoment(_)) => {
                EXIT_HYPOTHESIS
            }
            _ => EXIT_USAGE,
        }
    }
}

/// Pass/fail tally over the checks a run performed.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub passed: usize,
    pub failed: usize,
    pub inconclusive: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub min_ratio: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub max_ratio: Option<f64>,
}

/// Everything needed to rerun an experiment and compare the result.
/// `wall_time_s` is the only field that varies between identical runs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub tool: String,
    pub version: String,
    pub config: ExperimentConfig,
    pub certificates: Vec<serde_json::Value>,
    pub bundles: Vec<ConstantBundle>,
    pub reports: Vec<serde_json::Value>,
    pub summary: Summary,
    pub exit_code: i32,
    pub wall_time_s: f64,
}

impl RunReport {
    pub fn new(config: ExperimentConfig) -> Self {
        RunReport {
            tool: "momsand".into(),
            version: env!("CARGO_PKG_VERSION").into(),
            config,
            certificates: Vec::new(),
            bundles: Vec::new(),
            reports: Vec::new(),
            summary: Summary::default(),
            exit_code: EXIT_PASS,
            wall_time_s: 0.0,
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serialises")
    }
}

/// A finished run: the report plus human-readable lines for the terminal.
#[derive(Debug, Clone)]
pub struct Outcome {
    pub report: RunReport,
    pub lines: Vec<String>,
}

/// Runs the configured command. The config must name a command.
pub fn run(config: &ExperimentConfig) -> Result<Outcome, CliError> {
    let start = std::time::Instant::now();
    let kind = config.command.ok_or_else(|| CliError::Usage("no command given".into()))?;
    let mut outcome = match kind {
        CommandKind::Moments => commands::moments(config),
        CommandKind::Certify => commands::certify(config),
        CommandKind::Verify => commands::verify(config),
        CommandKind::Riesz => commands::riesz(config),
        CommandKind::Perpetuity => commands::perpetuity(config),
        CommandKind::Counterexample => commands::counterexample(config),
    }?;
    outcome.report.wall_time_s = start.elapsed().as_secs_f64();
    Ok(outcome)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn overlay_prefers_top() {
        let base = ExperimentConfig { p: Some(2.0), seed: Some(1), ..Default::default() };
        let top = ExperimentConfig { p: Some(3.0), ..Default::default() };
        let m = base.overridden_by(&top);
        assert_eq!(m.p, Some(3.0));
        assert_eq!(m.seed, Some(1));
    }

    #[test]
    fn coefficient_sources() {
        assert_eq!("1, -2.5,3".parse::<CoeffSource>().unwrap(), CoeffSource::Explicit(vec![1.0, -2.5, 3.0]));
        assert_eq!(
            "random:count=4,seed=9".parse::<CoeffSource>().unwrap(),
            CoeffSource::Random { count: 4, scale: 1.0, seed: 9 }
        );
        assert!("random:scale=2".parse::<CoeffSource>().is_err());
        assert!("1,x".parse::<CoeffSource>().is_err());
    }

    #[test]
    fn unknown_config_keys_are_rejected() {
        assert!(ExperimentConfig::from_canonical(r#"{"pp": 2}"#).is_err());
    }
}
