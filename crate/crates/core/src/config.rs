//! Run configuration for the command-line driver.
//!
//! A configuration is one JSON document. Every key is optional except the
//! subcommand (which may also come from the command line); unknown keys are
//! rejected. Command-line flags override scalar fields, and the seed falls
//! back to the `SLOWENV_SEED` environment variable when neither the flags
//! nor the document set it.

use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::asymptotics::{check_grid_rule, FrequencyConvention};
use crate::error::Error;
use crate::lyapunov::{BurnIn, InitialCondition, RunConfig};
use crate::noise::NoiseSpec;
use crate::propagator::{Scheme, SchemeConfig};

pub const CONFIG_VERSION: u32 = 1;
pub const SEED_ENV: &str = "SLOWENV_SEED";

/// Process exit codes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ExitCode {
    Success = 0,
    Numerical = 1,
    MissingFile = 2,
    Malformed = 3,
    UnknownKey = 4,
    OutOfRange = 5,
}

impl ExitCode {
    pub fn code(self) -> i32 {
        self as i32
    }
}

/// A configuration problem, tagged with the exit code it maps to.
#[derive(Debug, Clone, PartialEq)]
pub struct ConfigError {
    pub exit: ExitCode,
    pub message: String,
}

impl ConfigError {
    pub fn new(exit: ExitCode, message: impl Into<String>) -> Self {
        Self {
            exit,
            message: message.into(),
        }
    }

    fn range(message: impl Into<String>) -> Self {
        Self::new(ExitCode::OutOfRange, message)
    }

    /// Classifies a deserialization failure.
    pub fn from_json(err: &serde_json::Error, what: &str) -> Self {
        let msg = err.to_string();
        let exit = if !err.is_data() {
            ExitCode::Malformed
        } else if msg.contains("unknown field") {
            ExitCode::UnknownKey
        } else if msg.contains("invalid value") || msg.contains("unknown variant") {
            ExitCode::OutOfRange
        } else {
            ExitCode::Malformed
        };
        Self::new(exit, format!("{what}: {msg}"))
    }
}

impl fmt::Display for ConfigError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.message)
    }
}

impl std::error::Error for ConfigError {}

impl From<Error> for ConfigError {
    fn from(e: Error) -> Self {
        ConfigError::range(e.to_string())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Subcommand {
    Lyapunov,
    Furstenberg,
    Sweep,
    Smalltau,
    Sqrtlaw,
    Spectrum,
    Bounds,
    Sync,
    Birkhoff,
    ChaosConst,
    Validate,
}

impl Subcommand {
    pub const ALL: [Subcommand; 11] = [
        Subcommand::Lyapunov,
        Subcommand::Furstenberg,
        Subcommand::Sweep,
        Subcommand::Smalltau,
        Subcommand::Sqrtlaw,
        Subcommand::Spectrum,
        Subcommand::Bounds,
        Subcommand::Sync,
        Subcommand::Birkhoff,
        Subcommand::ChaosConst,
        Subcommand::Validate,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Subcommand::Lyapunov => "lyapunov",
            Subcommand::Furstenberg => "furstenberg",
            Subcommand::Sweep => "sweep",
            Subcommand::Smalltau => "smalltau",
            Subcommand::Sqrtlaw => "sqrtlaw",
            Subcommand::Spectrum => "spectrum",
            Subcommand::Bounds => "bounds",
            Subcommand::Sync => "sync",
            Subcommand::Birkhoff => "birkhoff",
            Subcommand::ChaosConst => "chaos-const",
            Subcommand::Validate => "validate",
        }
    }

    fn default_tau(self) -> f64 {
        match self {
            Subcommand::Validate => 0.1,
            Subcommand::ChaosConst => 1e-3,
            _ => 1.0,
        }
    }

    fn default_taus(self) -> Vec<f64> {
        match self {
            Subcommand::Smalltau => vec![0.02, 0.01, 0.005],
            Subcommand::Sqrtlaw => vec![1.6e-2, 4e-3, 1e-3],
            // Seven log-spaced points from 0.01 to 10.
            _ => (0..7).map(|i| 10f64.powf(-2.0 + 0.5 * i as f64)).collect(),
        }
    }
}

impl FromStr for Subcommand {
    type Err = ConfigError;

    fn from_str(s: &str) -> Result<Self, ConfigError> {
        Subcommand::ALL
            .into_iter()
            .find(|c| c.name() == s)
            .ok_or_else(|| ConfigError::range(format!("unknown subcommand `{s}`")))
    }
}

impl fmt::Display for Subcommand {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OutputFormat {
    #[default]
    Csv,
    /// One JSON object per line.
    #[serde(alias = "jsonl")]
    Json,
}

impl FromStr for OutputFormat {
    type Err = ConfigError;

    fn from_str(s: &str) -> Result<Self, ConfigError> {
        match s {
            "csv" => Ok(OutputFormat::Csv),
            "json" | "jsonl" => Ok(OutputFormat::Json),
            other => Err(ConfigError::range(format!("unknown output format `{other}`"))),
        }
    }
}

/// `"auto"`, `{"auto": {"max": N}}`, `{"fixed": N}` or a bare period count.
#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(untagged)]
enum RawBurnIn {
    Count(u64),
    Name(String),
    Tagged(BurnIn),
}

impl RawBurnIn {
    fn resolve(self) -> Result<BurnIn, ConfigError> {
        match self {
            RawBurnIn::Count(n) => Ok(BurnIn::Fixed(n)),
            RawBurnIn::Name(s) if s == "auto" => Ok(BurnIn::default()),
            RawBurnIn::Name(s) => Err(ConfigError::range(format!(
                "burn_in must be \"auto\", a count, {{\"auto\":{{\"max\":N}}}} or {{\"fixed\":N}}, got \"{s}\""
            ))),
            RawBurnIn::Tagged(b) => Ok(b),
        }
    }
}

/// The JSON document as written by the user.
#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawConfig {
    version: Option<u32>,
    subcommand: Option<String>,
    noise: Option<serde_json::Value>,
    kappa: Option<f64>,
    tau: Option<f64>,
    taus: Option<Vec<f64>>,
    #[serde(alias = "grid_n")]
    n: Option<usize>,
    n_periods: Option<u64>,
    burn_in: Option<RawBurnIn>,
    replicas: Option<usize>,
    scheme: Option<Scheme>,
    dt_max: Option<f64>,
    seed: Option<u64>,
    batch_count: Option<usize>,
    centered: Option<bool>,
    initial: Option<InitialCondition>,
    n_samples: Option<usize>,
    n_outer: Option<usize>,
    n_pairs: Option<usize>,
    k_max: Option<u64>,
    convention: Option<FrequencyConvention>,
    n_paths: Option<usize>,
    dt_fk: Option<f64>,
    output_path: Option<PathBuf>,
    output_format: Option<OutputFormat>,
    log_level: Option<String>,
    record_wall_time: Option<bool>,
}

/// Scalar overrides from the command line.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Overrides {
    pub subcommand: Option<String>,
    pub noise_json: Option<String>,
    pub tau: Option<f64>,
    pub taus: Option<Vec<f64>>,
    pub seed: Option<u64>,
    pub grid_n: Option<usize>,
    pub scheme: Option<String>,
    pub dt_max: Option<f64>,
    pub kappa: Option<f64>,
    pub n_periods: Option<u64>,
    pub replicas: Option<usize>,
    pub output_path: Option<PathBuf>,
    pub output_format: Option<String>,
    pub log_level: Option<String>,
}

/// A fully resolved and validated configuration.
#[derive(Debug, Clone, PartialEq)]
pub struct CliConfig {
    pub subcommand: Subcommand,
    pub run: RunConfig,
    /// `tau` grid of the sweep and the limit-law fits.
    pub taus: Vec<f64>,
    /// Eigen-samples for `spectrum` / `bounds`, environments for `birkhoff`.
    pub n_samples: usize,
    pub n_outer: usize,
    pub n_pairs: usize,
    /// Frequency cutoff of `chaos-const`; chosen automatically when absent.
    pub k_max: Option<u64>,
    pub convention: FrequencyConvention,
    pub n_paths: usize,
    pub dt_fk: f64,
    pub output_path: Option<PathBuf>,
    pub output_format: OutputFormat,
    pub log_level: String,
    pub record_wall_time: bool,
}

/// Canonical form of the resolved configuration; hashed into the run id.
#[derive(Serialize)]
struct Canonical<'a> {
    version: u32,
    subcommand: &'a str,
    noise: &'a NoiseSpec,
    kappa: f64,
    tau: f64,
    taus: &'a [f64],
    n: usize,
    n_periods: u64,
    burn_in: BurnIn,
    replicas: usize,
    scheme: Scheme,
    dt_max: f64,
    seed: u64,
    batch_count: usize,
    centered: bool,
    initial: InitialCondition,
    n_samples: usize,
    n_outer: usize,
    n_pairs: usize,
    k_max: Option<u64>,
    convention: FrequencyConvention,
    n_paths: usize,
    dt_fk: f64,
}

impl CliConfig {
    pub fn canonical_json(&self) -> String {
        let r = &self.run;
        serde_json::to_string(&Canonical {
            version: CONFIG_VERSION,
            subcommand: self.subcommand.name(),
            noise: &r.noise,
            kappa: r.kappa(),
            tau: r.tau,
            taus: &self.taus,
            n: r.grid_n,
            n_periods: r.n_periods,
            burn_in: r.burn_in,
            replicas: r.replicas,
            scheme: r.scheme.scheme,
            dt_max: r.scheme.dt_max,
            seed: r.seed,
            batch_count: r.batch_count,
            centered: r.centered,
            initial: r.initial,
            n_samples: self.n_samples,
            n_outer: self.n_outer,
            n_pairs: self.n_pairs,
            k_max: self.k_max,
            convention: self.convention,
            n_paths: self.n_paths,
            dt_fk: self.dt_fk,
        })
        .expect("configuration serializes")
    }

    /// 64-bit FNV-1a hash of the canonical configuration, in hex.
    pub fn run_id(&self) -> String {
        let mut h: u64 = 0xcbf2_9ce4_8422_2325;
        for b in self.canonical_json().bytes() {
            h ^= b as u64;
            h = h.wrapping_mul(0x0000_0100_0000_01b3);
        }
        format!("{h:016x}")
    }
}

/// Reads the configuration file (if any), applies overrides and the seed
/// environment variable, and validates the result.
pub fn parse_config(
    path: Option<&Path>,
    overrides: &Overrides,
    env_seed: Option<&str>,
) -> Result<CliConfig, ConfigError> {
    let raw = match path {
        Some(p) => {
            let text = std::fs::read_to_string(p).map_err(|e| {
                ConfigError::new(
                    ExitCode::MissingFile,
                    format!("cannot read config file {}: {e}", p.display()),
                )
            })?;
            parse_document(&text)?
        }
        None => RawConfig::default(),
    };
    resolve(raw, overrides, env_seed)
}

/// Parses and validates a configuration given as a JSON string.
pub fn parse_config_str(
    text: &str,
    overrides: &Overrides,
    env_seed: Option<&str>,
) -> Result<CliConfig, ConfigError> {
    resolve(parse_document(text)?, overrides, env_seed)
}

fn parse_document(text: &str) -> Result<RawConfig, ConfigError> {
    serde_json::from_str(text).map_err(|e| ConfigError::from_json(&e, "config"))
}

/// Decodes a noise object. Parameterless kinds take no other keys; serde's
/// internal tagging would silently ignore them.
fn parse_noise(v: serde_json::Value, what: &str) -> Result<NoiseSpec, ConfigError> {
    let spec: NoiseSpec = serde_json::from_value(v.clone()).map_err(|e| ConfigError::from_json(&e, what))?;
    if matches!(spec, NoiseSpec::Zero | NoiseSpec::WhiteNoise) {
        if let Some(extra) = v.as_object().and_then(|o| o.keys().find(|k| k.as_str() != "kind")) {
            return Err(ConfigError::new(
                ExitCode::UnknownKey,
                format!("{what}: unknown field `{extra}` for noise kind `{}`", spec.kind().name()),
            ));
        }
    }
    Ok(spec)
}

fn resolve(raw: RawConfig, ov: &Overrides, env_seed: Option<&str>) -> Result<CliConfig, ConfigError> {
    let version = raw.version.unwrap_or(CONFIG_VERSION);
    if version != CONFIG_VERSION {
        return Err(ConfigError::range(format!(
            "unsupported config version {version}; expected {CONFIG_VERSION}"
        )));
    }
    let sub_name = ov
        .subcommand
        .clone()
        .or(raw.subcommand)
        .ok_or_else(|| ConfigError::new(ExitCode::Malformed, "no subcommand given"))?;
    let subcommand: Subcommand = sub_name.parse()?;

    let noise = match &ov.noise_json {
        Some(text) => {
            let v = serde_json::from_str(text).map_err(|e| ConfigError::from_json(&e, "--noise"))?;
            parse_noise(v, "--noise")?
        }
        None => match raw.noise {
            Some(v) => parse_noise(v, "noise")?,
            None => NoiseSpec::Zero,
        },
    };
    let scheme = match &ov.scheme {
        Some(s) => s.parse::<Scheme>()?,
        None => raw.scheme.unwrap_or(Scheme::StrangSplit),
    };
    let seed = match ov.seed.or(raw.seed) {
        Some(s) => s,
        None => match env_seed {
            Some(text) => text.trim().parse::<u64>().map_err(|_| {
                ConfigError::range(format!("{SEED_ENV} must be a non-negative integer, got `{text}`"))
            })?,
            None => 0,
        },
    };
    let output_format = match &ov.output_format {
        Some(s) => s.parse()?,
        None => raw.output_format.unwrap_or_default(),
    };
    let burn_in = match raw.burn_in {
        Some(b) => b.resolve()?,
        None => BurnIn::default(),
    };

    let kappa = ov.kappa.or(raw.kappa).unwrap_or(1.0);
    let dt_max = ov.dt_max.or(raw.dt_max).unwrap_or(1e-3);
    let scheme_cfg = SchemeConfig::new(scheme, dt_max, kappa)?;
    let tau = ov.tau.or(raw.tau).unwrap_or(subcommand.default_tau());
    let run = RunConfig {
        noise,
        grid_n: ov.grid_n.or(raw.n).unwrap_or(256),
        tau,
        n_periods: ov.n_periods.or(raw.n_periods).unwrap_or(10_000),
        burn_in,
        replicas: ov.replicas.or(raw.replicas).unwrap_or(1),
        scheme: scheme_cfg,
        seed,
        batch_count: raw.batch_count.unwrap_or(20),
        centered: raw.centered.unwrap_or(false),
        initial: raw.initial.unwrap_or_default(),
    };
    let taus = ov
        .taus
        .clone()
        .or(raw.taus)
        .unwrap_or_else(|| subcommand.default_taus());

    let cfg = CliConfig {
        subcommand,
        taus,
        n_samples: raw.n_samples.unwrap_or(match subcommand {
            Subcommand::Birkhoff => 10,
            _ => 200,
        }),
        n_outer: raw.n_outer.unwrap_or(100),
        n_pairs: raw.n_pairs.unwrap_or(20),
        k_max: raw.k_max,
        convention: raw.convention.unwrap_or(FrequencyConvention::Torus),
        n_paths: raw.n_paths.unwrap_or(100_000),
        dt_fk: raw.dt_fk.unwrap_or(1e-3),
        output_path: ov.output_path.clone().or(raw.output_path),
        output_format,
        log_level: ov
            .log_level
            .clone()
            .or(raw.log_level)
            .unwrap_or_else(|| "warn".to_string()),
        record_wall_time: raw.record_wall_time.unwrap_or(false),
        run,
    };
    validate(&cfg)?;
    Ok(cfg)
}

fn validate(cfg: &CliConfig) -> Result<(), ConfigError> {
    let r = &cfg.run;
    let batched = matches!(
        cfg.subcommand,
        Subcommand::Lyapunov | Subcommand::Sweep | Subcommand::Smalltau | Subcommand::Sqrtlaw | Subcommand::Bounds
    );
    if batched {
        r.validate()?;
    } else {
        // Batch means play no role here.
        RunConfig {
            batch_count: 0,
            ..r.clone()
        }
        .validate()?;
    }
    if !matches!(
        cfg.log_level.as_str(),
        "off" | "error" | "warn" | "info" | "debug" | "trace"
    ) {
        return Err(ConfigError::range(format!("unknown log level `{}`", cfg.log_level)));
    }
    let uses_taus = matches!(
        cfg.subcommand,
        Subcommand::Sweep | Subcommand::Smalltau | Subcommand::Sqrtlaw
    );
    if uses_taus {
        if cfg.taus.is_empty() {
            return Err(ConfigError::range("taus must not be empty"));
        }
        if let Some(t) = cfg.taus.iter().find(|t| !(**t > 0.0) || !t.is_finite()) {
            return Err(ConfigError::range(format!("every tau must be positive, got {t}")));
        }
        let mut sorted = cfg.taus.clone();
        sorted.sort_by(f64::total_cmp);
        if sorted.windows(2).any(|w| w[0] == w[1]) {
            return Err(ConfigError::range("taus must be distinct"));
        }
    }
    match cfg.subcommand {
        Subcommand::Furstenberg if cfg.n_outer < 30 => {
            return Err(ConfigError::range(format!("n_outer must be >= 30, got {}", cfg.n_outer)));
        }
        Subcommand::Spectrum | Subcommand::Bounds if cfg.n_samples < 30 => {
            return Err(ConfigError::range(format!(
                "n_samples must be >= 30, got {}",
                cfg.n_samples
            )));
        }
        Subcommand::Birkhoff if cfg.n_samples == 0 || cfg.n_pairs == 0 => {
            return Err(ConfigError::range("n_samples and n_pairs must be >= 1"));
        }
        Subcommand::Smalltau => {
            if !r.noise.kind().is_bounded() {
                return Err(ConfigError::range("smalltau needs bounded noise"));
            }
            if let Some(t) = cfg.taus.iter().find(|t| **t > 0.05) {
                return Err(ConfigError::range(format!("smalltau needs tau <= 0.05, got {t}")));
            }
        }
        Subcommand::Sqrtlaw => {
            if r.noise != NoiseSpec::WhiteNoise {
                return Err(ConfigError::range("sqrtlaw needs white noise"));
            }
            let grid = r.grid()?;
            for &tau in &cfg.taus {
                check_grid_rule(grid, r.kappa(), tau)?;
            }
        }
        Subcommand::Validate => {
            if !(cfg.dt_fk > 0.0) || cfg.dt_fk > r.tau || cfg.n_paths == 0 {
                return Err(ConfigError::range("validate needs 0 < dt_fk <= tau and n_paths >= 1"));
            }
        }
        _ => {}
    }
    Ok(())
}
