//! Experiment configuration: a flat `key = value` file with dotted section
//! prefixes, overlaid by command-line flags.
//!
//! ```text
//! # comment
//! seed = 7
//! noise.sigma2_grid = 0, 0.5, 1.0
//! apparatus.filtration = true
//! ```

use std::collections::BTreeMap;
use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use tbqkd::{ApparatusConfig, DetectorConfig, OutputPort, Statistics};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Sweep,
    Qkd,
    Eve,
}

impl FromStr for Mode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "sweep" | "visibility_sweep" => Ok(Mode::Sweep),
            "qkd" | "qkd_session" => Ok(Mode::Qkd),
            "eve" | "eve_analysis" => Ok(Mode::Eve),
            _ => Err(format!("expected sweep, qkd or eve, got `{s}`")),
        }
    }
}

impl fmt::Display for Mode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Mode::Sweep => "sweep",
            Mode::Qkd => "qkd",
            Mode::Eve => "eve",
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub mode: Mode,
    pub seed: u64,
    /// Monte Carlo trials per visibility point or Eve analysis.
    pub trials: u64,
    /// BB84 rounds per session.
    pub rounds: u64,
    pub sigma2_grid: Vec<f64>,
    pub apparatus: ApparatusConfig,
    /// Extra filtered variants for the sweep, beyond `apparatus.n_pairs`.
    pub extra_n_pairs: Vec<u32>,
    /// Fringe factor of the filtration stages, applied on top of
    /// `apparatus.fringe_factor` whenever filtration is on.
    pub filtration_fringe_factor: f64,
    pub detector: DetectorConfig,
    /// Calibrate the dark-count probability to this raw error rate.
    pub target_raw_error: Option<f64>,
    pub calibration_trials: u64,
    /// Run every QKD point with filtration off and on.
    pub paired: bool,
    pub p_replace: Vec<f64>,
    /// Compare the attack ensemble with the equivalent noise channel.
    pub compare_fringes: bool,
    pub output: Option<PathBuf>,
    pub threads: Option<usize>,
}

impl ExperimentConfig {
    pub fn defaults(mode: Mode) -> Self {
        ExperimentConfig {
            mode,
            seed: 0,
            trials: 100_000,
            rounds: 1_000_000,
            sigma2_grid: (0..=15).map(|k| f64::from(k) / 10.0).collect(),
            apparatus: ApparatusConfig::default(),
            extra_n_pairs: Vec::new(),
            filtration_fringe_factor: 1.0,
            detector: DetectorConfig::default(),
            target_raw_error: None,
            calibration_trials: 20_000,
            paired: false,
            p_replace: vec![0.5],
            compare_fringes: true,
            output: None,
            threads: None,
        }
    }

    /// Apparatus for one variant: `n_pairs == 1` means no filtration.
    pub fn variant(&self, n_pairs: u32) -> ApparatusConfig {
        let filtration = n_pairs > 1;
        let mut a = ApparatusConfig {
            filtration,
            n_pairs,
            ..self.apparatus
        };
        if filtration {
            a.fringe_factor *= self.filtration_fringe_factor;
        }
        a
    }

    /// Apparatus as configured, with the filtration fringe factor applied.
    pub fn effective_apparatus(&self) -> ApparatusConfig {
        self.variant(self.apparatus.effective_pairs())
    }
}

/// Where a setting came from, for error messages.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Origin {
    Line { file: PathBuf, line: usize },
    Flag(&'static str),
}

impl fmt::Display for Origin {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Origin::Line { file, line } => write!(f, "{}:{}", file.display(), line),
            Origin::Flag(name) => write!(f, "flag --{name}"),
        }
    }
}

#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("cannot read {}: {source}", path.display())]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("invalid configuration:\n  {}", .0.join("\n  "))]
    Invalid(Vec<String>),
}

/// A command-line override of a config key.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Override {
    pub flag: &'static str,
    pub key: &'static str,
    pub value: String,
}

impl Override {
    pub fn new(flag: &'static str, key: &'static str, value: impl Into<String>) -> Self {
        Override {
            flag,
            key,
            value: value.into(),
        }
    }
}

/// Reads `path` (if any), applies `overrides` in order and validates.
pub fn load_config(mode: Mode, path: Option<&Path>, overrides: &[Override]) -> Result<ExperimentConfig, ConfigError> {
    let text = match path {
        Some(p) => Some(std::fs::read_to_string(p).map_err(|source| ConfigError::Io {
            path: p.to_path_buf(),
            source,
        })?),
        None => None,
    };
    let file = path.unwrap_or(Path::new("<config>"));
    parse_config(mode, text.as_deref().map(|t| (file, t)), overrides)
}

/// [`load_config`] on already-read text.
pub fn parse_config(
    mode: Mode,
    file: Option<(&Path, &str)>,
    overrides: &[Override],
) -> Result<ExperimentConfig, ConfigError> {
    let mut cfg = ExperimentConfig::defaults(mode);
    let mut issues = Vec::new();
    let mut entries = Vec::new();
    if let Some((path, text)) = file {
        let mut seen: BTreeMap<String, usize> = BTreeMap::new();
        for (i, raw) in text.lines().enumerate() {
            let line = i + 1;
            let origin = Origin::Line {
                file: path.to_path_buf(),
                line,
            };
            let content = raw.split('#').next().unwrap_or("").trim();
            if content.is_empty() {
                continue;
            }
            let Some((key, value)) = content.split_once('=') else {
                issues.push(format!("{origin}: expected `key = value`, got `{content}`"));
                continue;
            };
            let (key, value) = (key.trim(), value.trim());
            if let Some(first) = seen.insert(key.to_string(), line) {
                issues.push(format!("{origin}: duplicate key `{key}` (first set on line {first})"));
                continue;
            }
            entries.push((origin, key.to_string(), value.to_string()));
        }
    }
    for o in overrides {
        entries.push((Origin::Flag(o.flag), o.key.to_string(), o.value.clone()));
    }
    for (origin, key, value) in &entries {
        if let Err(msg) = set(&mut cfg, key, value) {
            issues.push(format!("{origin}: {msg}"));
        }
    }
    issues.extend(validate(&cfg));
    if issues.is_empty() {
        Ok(cfg)
    } else {
        Err(ConfigError::Invalid(issues))
    }
}

fn parse<T: FromStr>(key: &str, value: &str, what: &str) -> Result<T, String> {
    value
        .parse()
        .map_err(|_| format!("{key}: expected {what}, got `{value}`"))
}

fn parse_list<T: FromStr>(key: &str, value: &str, what: &str) -> Result<Vec<T>, String> {
    if value.is_empty() {
        return Ok(Vec::new());
    }
    value.split(',').map(|v| parse(key, v.trim(), what)).collect()
}

fn parse_bool(key: &str, value: &str) -> Result<bool, String> {
    match value {
        "true" | "on" | "yes" | "1" => Ok(true),
        "false" | "off" | "no" | "0" => Ok(false),
        _ => Err(format!("{key}: expected true or false, got `{value}`")),
    }
}

const INT: &str = "a non-negative integer";
const REAL: &str = "a number";

fn set(cfg: &mut ExperimentConfig, key: &str, value: &str) -> Result<(), String> {
    match key {
        "mode" => {
            let mode: Mode = value.parse().map_err(|e| format!("mode: {e}"))?;
            if mode != cfg.mode {
                return Err(format!("mode = {mode} conflicts with the `{}` subcommand", cfg.mode));
            }
        }
        "seed" => cfg.seed = parse(key, value, "an unsigned 64-bit integer")?,
        "trials" => cfg.trials = parse(key, value, INT)?,
        "rounds" => cfg.rounds = parse(key, value, INT)?,
        "output" => cfg.output = Some(PathBuf::from(value)),
        "threads" => cfg.threads = Some(parse(key, value, INT)?),
        "noise.sigma2_grid" => cfg.sigma2_grid = parse_list(key, value, "a comma-separated list of numbers")?,
        "apparatus.filtration" => cfg.apparatus.filtration = parse_bool(key, value)?,
        "apparatus.n_pairs" => cfg.apparatus.n_pairs = parse(key, value, INT)?,
        "apparatus.extra_n_pairs" => cfg.extra_n_pairs = parse_list(key, value, "a comma-separated list of integers")?,
        "apparatus.mz_delay_bins" => cfg.apparatus.mz_delay_bins = parse(key, value, INT)?,
        "apparatus.bin_spacing_ns" => cfg.apparatus.bin_spacing_ns = parse(key, value, REAL)?,
        "apparatus.source" => {
            cfg.apparatus.source = match value {
                "coherent" => Statistics::Coherent {
                    mu: cfg.apparatus.source.mean_photon_number().unwrap_or(0.8),
                },
                "single_photon" => Statistics::SinglePhoton,
                _ => return Err(format!("{key}: expected coherent or single_photon, got `{value}`")),
            }
        }
        "apparatus.mu" => match cfg.apparatus.source {
            Statistics::Coherent { ref mut mu } => *mu = parse(key, value, REAL)?,
            Statistics::SinglePhoton => return Err(format!("{key}: only valid with apparatus.source = coherent")),
        },
        "apparatus.fringe_factor" => cfg.apparatus.fringe_factor = parse(key, value, REAL)?,
        "apparatus.filtration_fringe_factor" => cfg.filtration_fringe_factor = parse(key, value, REAL)?,
        "apparatus.quarter_wave_phase_error" => cfg.apparatus.quarter_wave_phase_error = parse(key, value, REAL)?,
        "detector.efficiency" => cfg.detector.efficiency = parse(key, value, REAL)?,
        "detector.dark_prob" => cfg.detector.dark_prob = parse(key, value, REAL)?,
        "detector.port" => cfg.detector.port = value.parse::<OutputPort>().map_err(|e| format!("{key}: {e}"))?,
        "detector.gate_bin" => cfg.detector.gate_bin = Some(parse(key, value, INT)?),
        "detector.target_raw_error" => cfg.target_raw_error = Some(parse(key, value, REAL)?),
        "detector.calibration_trials" => cfg.calibration_trials = parse(key, value, INT)?,
        "qkd.paired" => cfg.paired = parse_bool(key, value)?,
        "eve.p_replace" => cfg.p_replace = parse_list(key, value, "a comma-separated list of numbers")?,
        "eve.compare_fringes" => cfg.compare_fringes = parse_bool(key, value)?,
        _ => return Err(format!("unknown key `{key}`")),
    }
    Ok(())
}

/// Every invariant violation, not just the first.
fn validate(cfg: &ExperimentConfig) -> Vec<String> {
    let mut issues = Vec::new();
    let mut check = |ok: bool, msg: String| {
        if !ok {
            issues.push(msg);
        }
    };
    check(cfg.trials >= 1, "trials must be >= 1".into());
    check(cfg.rounds >= 1, "rounds must be >= 1".into());
    check(cfg.calibration_trials >= 1, "detector.calibration_trials must be >= 1".into());
    check(!cfg.sigma2_grid.is_empty(), "noise.sigma2_grid must not be empty".into());
    for s in &cfg.sigma2_grid {
        check(
            s.is_finite() && *s >= 0.0,
            format!("noise.sigma2_grid: variance must be finite and >= 0, got {s}"),
        );
    }
    let a = &cfg.apparatus;
    check(
        a.n_pairs >= 1 && a.n_pairs.is_power_of_two() && a.n_pairs <= 4096,
        format!("apparatus.n_pairs must be a power of two in [1, 4096], got {}", a.n_pairs),
    );
    for n in &cfg.extra_n_pairs {
        check(
            *n >= 1 && n.is_power_of_two() && *n <= 4096,
            format!("apparatus.extra_n_pairs: {n} is not a power of two in [1, 4096]"),
        );
    }
    check(a.mz_delay_bins >= 1, "apparatus.mz_delay_bins must be >= 1".into());
    check(
        a.bin_spacing_ns.is_finite() && a.bin_spacing_ns > 0.0,
        format!("apparatus.bin_spacing_ns must be positive, got {}", a.bin_spacing_ns),
    );
    if let Statistics::Coherent { mu } = a.source {
        check(mu.is_finite() && mu >= 0.0, format!("apparatus.mu must be finite and >= 0, got {mu}"));
    }
    let unit = |x: f64| (0.0..=1.0).contains(&x);
    check(unit(a.fringe_factor), format!("apparatus.fringe_factor must lie in [0, 1], got {}", a.fringe_factor));
    check(
        unit(cfg.filtration_fringe_factor),
        format!(
            "apparatus.filtration_fringe_factor must lie in [0, 1], got {}",
            cfg.filtration_fringe_factor
        ),
    );
    check(
        a.quarter_wave_phase_error.is_finite(),
        "apparatus.quarter_wave_phase_error must be finite".into(),
    );
    let d = &cfg.detector;
    check(unit(d.efficiency), format!("detector.efficiency must lie in [0, 1], got {}", d.efficiency));
    check(unit(d.dark_prob), format!("detector.dark_prob must lie in [0, 1], got {}", d.dark_prob));
    if let Some(t) = cfg.target_raw_error {
        check(
            t > 0.0 && t < 0.5,
            format!("detector.target_raw_error must lie in (0, 0.5), got {t}"),
        );
    }
    check(!cfg.p_replace.is_empty(), "eve.p_replace must not be empty".into());
    for p in &cfg.p_replace {
        check(unit(*p), format!("eve.p_replace: {p} is not a probability"));
    }
    if let Some(t) = cfg.threads {
        check(t >= 1, "threads must be >= 1".into());
    }
    issues
}
