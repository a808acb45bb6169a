//! Command-line driver: argument parsing, subcommand dispatch and result
//! emission.

use std::ffi::OsString;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::PathBuf;
use std::time::Instant;

use clap::error::ErrorKind;
use clap::Parser;
use log::{info, warn};
use rayon::prelude::*;

use crate::asymptotics::{
    check_grid_rule, closed_form_sqrt_constant, small_tau_slope, sqrt_law_fit, zeroth_chaos_constant,
    zeroth_chaos_limit, zeroth_chaos_with_tail, FrequencyConvention, LimitFitReport,
};
use crate::config::{parse_config, CliConfig, ExitCode, OutputFormat, Overrides, Subcommand, SEED_ENV};
use crate::error::Error;
use crate::grid::TorusGrid;
use crate::lyapunov::{estimate_furstenberg, estimate_time_average, sweep_tau, LyapunovEstimate};
use crate::noise::{sample_potential, NoiseKind, PotentialSample, RenewalPotential};
use crate::output::{detail, format_f64, write_csv, write_json_lines, ResultRow, SCHEMA_VERSION};
use crate::projective::{
    birkhoff_coefficient_estimate, cosine_density, synchronization_rate, ProjectiveDensity,
};
use crate::propagator::{feynman_kac_mass, Propagator, Scheme, SchemeConfig};
use crate::rng::{mix, RngKey};
use crate::spectral::{bounds_from_samples, sample_zeta_mu};
use crate::stats::Moments;

const STREAM_SPECTRUM: u64 = 0x5bec_0001;
const STREAM_BIRKHOFF_XI: u64 = 0xb1c0_0001;
const STREAM_BIRKHOFF_PAIRS: u64 = 0xb1c0_0002;
const STREAM_VALIDATE_FK: u64 = 0xfa11_0001;

#[derive(Debug, Parser)]
#[command(
    name = "slowenv",
    version,
    about = "Parabolic Anderson model in a slowly renewing random environment on the 1D torus"
)]
pub struct Args {
    /// One of: lyapunov, furstenberg, sweep, smalltau, sqrtlaw, spectrum,
    /// bounds, sync, birkhoff, chaos-const, validate. Overrides the config.
    pub subcommand: Option<String>,
    /// JSON configuration file.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Noise specification as inline JSON, e.g. '{"kind":"white"}'.
    #[arg(long)]
    pub noise: Option<String>,
    #[arg(long)]
    pub tau: Option<f64>,
    /// Comma-separated list of renewal periods.
    #[arg(long, value_delimiter = ',')]
    pub taus: Option<Vec<f64>>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long = "grid-n")]
    pub grid_n: Option<usize>,
    /// eigen_exact | strang_split | crank_nicolson (or eigen | strang | cn).
    #[arg(long)]
    pub scheme: Option<String>,
    #[arg(long = "dt-max")]
    pub dt_max: Option<f64>,
    #[arg(long)]
    pub kappa: Option<f64>,
    #[arg(long = "n-periods")]
    pub n_periods: Option<u64>,
    #[arg(long)]
    pub replicas: Option<usize>,
    /// Output file; standard output when absent.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// csv | json
    #[arg(long)]
    pub format: Option<String>,
    #[arg(long = "log-level")]
    pub log_level: Option<String>,
    /// Worker threads; results do not depend on this.
    #[arg(long)]
    pub workers: Option<usize>,
}

impl Args {
    fn overrides(&self) -> Overrides {
        Overrides {
            subcommand: self.subcommand.clone(),
            noise_json: self.noise.clone(),
            tau: self.tau,
            taus: self.taus.clone(),
            seed: self.seed,
            grid_n: self.grid_n,
            scheme: self.scheme.clone(),
            dt_max: self.dt_max,
            kappa: self.kappa,
            n_periods: self.n_periods,
            replicas: self.replicas,
            output_path: self.out.clone(),
            output_format: self.format.clone(),
            log_level: self.log_level.clone(),
        }
    }
}

/// Parses `args` (including the program name), runs, and returns the exit code.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let args = match Args::try_parse_from(args) {
        Ok(a) => a,
        Err(e) => {
            let code = match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => ExitCode::Success,
                ErrorKind::UnknownArgument => ExitCode::UnknownKey,
                ErrorKind::InvalidValue | ErrorKind::ValueValidation => ExitCode::OutOfRange,
                _ => ExitCode::Malformed,
            };
            let _ = e.print();
            return code.code();
        }
    };
    let env_seed = std::env::var(SEED_ENV).ok();
    let cfg = match parse_config(args.config.as_deref(), &args.overrides(), env_seed.as_deref()) {
        Ok(c) => c,
        Err(e) => {
            eprintln!("slowenv: {e}");
            return e.exit.code();
        }
    };
    let _ = env_logger::Builder::new()
        .parse_filters(&cfg.log_level)
        .format_timestamp(None)
        .try_init();

    let pool = match args.workers {
        Some(0) => {
            eprintln!("slowenv: --workers must be >= 1");
            return ExitCode::OutOfRange.code();
        }
        Some(w) => rayon::ThreadPoolBuilder::new().num_threads(w).build(),
        None => rayon::ThreadPoolBuilder::new().build(),
    };
    let pool = match pool {
        Ok(p) => p,
        Err(e) => {
            eprintln!("slowenv: cannot start worker pool: {e}");
            return ExitCode::Numerical.code();
        }
    };
    pool.install(|| run(&cfg))
}

/// Runs the configured subcommand, writes its rows and returns the exit code.
pub fn run(cfg: &CliConfig) -> i32 {
    let start = Instant::now();
    let (mut rows, exit) = match execute(cfg) {
        Ok(out) => out,
        Err(e) => {
            eprintln!("slowenv: {e}");
            let exit = exit_for(&e);
            let mut row = base_row(cfg, "diagnostics");
            row.status = "error".into();
            row.detail = detail(&[("error", e.to_string())]);
            (vec![row], exit)
        }
    };
    if cfg.record_wall_time {
        let t = start.elapsed().as_secs_f64();
        for r in &mut rows {
            r.wall_time_s = Some(t);
        }
    }
    if let Err(e) = emit(cfg, &rows) {
        eprintln!("slowenv: cannot write results: {e}");
        return ExitCode::Numerical.code();
    }
    exit.code()
}

fn exit_for(e: &Error) -> ExitCode {
    match e {
        Error::InvalidArgument(_) | Error::GridRule { .. } | Error::CutoffTooSmall { .. } => {
            ExitCode::OutOfRange
        }
        _ => ExitCode::Numerical,
    }
}

fn emit(cfg: &CliConfig, rows: &[ResultRow]) -> Result<(), crate::output::OutputError> {
    let sink: Box<dyn Write> = match &cfg.output_path {
        Some(p) => Box::new(BufWriter::new(File::create(p)?)),
        None => Box::new(std::io::stdout().lock()),
    };
    match cfg.output_format {
        OutputFormat::Csv => write_csv(sink, rows),
        OutputFormat::Json => write_json_lines(sink, rows),
    }
}

type Outcome = crate::error::Result<(Vec<ResultRow>, ExitCode)>;

fn execute(cfg: &CliConfig) -> Outcome {
    let r = &cfg.run;
    if r.noise.kind() == NoiseKind::WhiteNoise && cfg.subcommand != Subcommand::Sqrtlaw {
        let grid = r.grid()?;
        let taus: Vec<f64> = match cfg.subcommand {
            Subcommand::Sweep | Subcommand::Smalltau => cfg.taus.clone(),
            _ => vec![r.tau],
        };
        for tau in taus {
            if let Err(e) = check_grid_rule(grid, r.kappa(), tau) {
                warn!("{e}");
            }
        }
    }
    info!("running {} (run id {})", cfg.subcommand, cfg.run_id());
    match cfg.subcommand {
        Subcommand::Lyapunov => {
            let est = estimate_time_average(r)?;
            Ok((vec![estimate_row(cfg, "estimate", &est)], ExitCode::Success))
        }
        Subcommand::Furstenberg => {
            let est = estimate_furstenberg(r, cfg.n_outer)?;
            let mut row = estimate_row(cfg, "estimate", &est);
            row.detail = format!("{};n_outer={}", row.detail, cfg.n_outer);
            Ok((vec![row], ExitCode::Success))
        }
        Subcommand::Sweep => run_sweep(cfg),
        Subcommand::Smalltau => {
            let report = small_tau_slope(&r.noise, &cfg.taus, r)?;
            Ok((limit_rows(cfg, &report), ExitCode::Success))
        }
        Subcommand::Sqrtlaw => {
            let report = sqrt_law_fit(&cfg.taus, r)?;
            Ok((limit_rows(cfg, &report), ExitCode::Success))
        }
        Subcommand::Spectrum => run_spectrum(cfg),
        Subcommand::Bounds => run_bounds(cfg),
        Subcommand::Sync => run_sync(cfg),
        Subcommand::Birkhoff => run_birkhoff(cfg),
        Subcommand::ChaosConst => run_chaos(cfg),
        Subcommand::Validate => run_validate(cfg),
    }
}

fn base_row(cfg: &CliConfig, kind: &str) -> ResultRow {
    let r = &cfg.run;
    let stepping = r.scheme.scheme != Scheme::EigenExact;
    ResultRow {
        schema_version: SCHEMA_VERSION,
        run_id: cfg.run_id(),
        subcommand: cfg.subcommand.name().into(),
        row_kind: kind.into(),
        status: "ok".into(),
        noise_kind: r.noise.kind().name().into(),
        noise_params: r.noise.params_string(),
        kappa: Some(r.kappa()),
        tau: Some(r.tau),
        n_grid: Some(r.grid_n as u64),
        scheme: r.scheme.scheme.name().into(),
        dt_max: stepping.then_some(r.scheme.dt_max),
        seed: Some(r.seed),
        ..ResultRow::default()
    }
}

fn estimate_row(cfg: &CliConfig, kind: &str, est: &LyapunovEstimate) -> ResultRow {
    let mut row = base_row(cfg, kind);
    row.tau = Some(est.tau);
    row.n_periods = Some(est.n_periods_used);
    row.burn_in = Some(est.burn_in_used);
    row.lambda_hat = Some(est.lambda_hat);
    row.stderr = Some(est.stderr);
    row.clamp_events = Some(est.diagnostics.clamp_events);
    row.detail = detail(&[
        ("replicas", cfg.run.replicas.to_string()),
        ("centered", est.diagnostics.centered.to_string()),
        ("burn_in_capped", est.diagnostics.burn_in_capped.to_string()),
    ]);
    row
}

fn run_sweep(cfg: &CliConfig) -> Outcome {
    let mut taus = cfg.taus.clone();
    taus.sort_by(f64::total_cmp);
    let mut failed = false;
    let rows = sweep_tau(&cfg.run, &taus)?
        .into_iter()
        .map(|(tau, res)| match res {
            Ok(est) => estimate_row(cfg, "point", &est),
            Err(e) => {
                warn!("sweep point tau = {tau} failed: {e}");
                failed = true;
                let mut row = base_row(cfg, "point");
                row.tau = Some(tau);
                row.status = "error".into();
                row.detail = detail(&[("error", e.to_string())]);
                row
            }
        })
        .collect();
    let exit = if failed { ExitCode::Numerical } else { ExitCode::Success };
    Ok((rows, exit))
}

fn limit_rows(cfg: &CliConfig, rep: &LimitFitReport) -> Vec<ResultRow> {
    let mut rows: Vec<ResultRow> = rep
        .estimates
        .iter()
        .zip(&rep.ratios)
        .map(|(est, &(ratio, ratio_se))| {
            let mut row = estimate_row(cfg, "point", est);
            row.value = Some(ratio);
            row.detail = format!("{};ratio_stderr={}", row.detail, format_f64(ratio_se));
            row
        })
        .collect();
    let mut fit = base_row(cfg, "fit");
    fit.tau = None;
    fit.target = Some(rep.target);
    fit.extrapolated = Some(rep.extrapolated);
    fit.stderr = Some(rep.extrapolated_stderr);
    fit.status = if rep.under_resolved { "fail" } else { "ok" }.into();
    let mut pairs = vec![
        ("law", format!("{:?}", rep.law)),
        ("abscissa_exponent", rep.abscissa_exponent.to_string()),
        ("relative_gap", format_f64(rep.relative_gap)),
        ("extrapolated_linear_tau", format_f64(rep.extrapolated_linear_tau)),
        ("small_tau_weight_share", format_f64(rep.small_tau_weight_share)),
        ("under_resolved", rep.under_resolved.to_string()),
        ("target_source", format!("{:?}", rep.target_source)),
    ];
    if let Some(p) = rep.closed_form_value {
        pairs.push(("closed_form_value", format_f64(p)));
        pairs.push(("relative_gap_to_closed_form", format_f64((rep.extrapolated - p) / p)));
    }
    if let Some(s) = rep.zeroth_chaos_limit {
        pairs.push(("zeroth_chaos_limit", format_f64(s)));
    }
    fit.detail = detail(&pairs);
    rows.push(fit);
    rows
}

fn run_spectrum(cfg: &CliConfig) -> Outcome {
    let r = &cfg.run;
    let samples = sample_zeta_mu(
        &r.noise,
        r.grid()?,
        r.kappa(),
        cfg.n_samples,
        RngKey::new(r.seed, STREAM_SPECTRUM, 0),
    )?;
    let zeta: Moments = samples.iter().map(|s| s.0).collect();
    let mu: Moments = samples.iter().map(|s| s.1).collect();
    let mut row = base_row(cfg, "summary");
    row.tau = None;
    row.zeta_mean = Some(zeta.mean());
    row.mu_mean = Some(mu.mean());
    row.stderr = Some(zeta.stderr());
    row.detail = detail(&[
        ("n_samples", cfg.n_samples.to_string()),
        ("mu_stderr", format_f64(mu.stderr())),
    ]);
    Ok((vec![row], ExitCode::Success))
}

fn run_bounds(cfg: &CliConfig) -> Outcome {
    let r = &cfg.run;
    let est = estimate_time_average(r)?;
    let samples = sample_zeta_mu(
        &r.noise,
        r.grid()?,
        r.kappa(),
        cfg.n_samples,
        RngKey::new(r.seed, STREAM_SPECTRUM, 0),
    )?;
    let b = bounds_from_samples(&samples, r.tau, est.lambda_hat, est.stderr);
    let mut row = estimate_row(cfg, "estimate", &est);
    row.zeta_mean = Some(b.zeta_mean);
    row.mu_mean = Some(b.mu_mean);
    row.status = if b.upper_ok && b.lower_ok { "ok" } else { "fail" }.into();
    row.detail = format!(
        "{};{}",
        row.detail,
        detail(&[
            ("n_samples", b.n_samples.to_string()),
            ("zeta_stderr", format_f64(b.zeta_stderr)),
            ("lower", format_f64(b.lower)),
            ("lower_stderr", format_f64(b.lower_stderr)),
            ("upper_ok", b.upper_ok.to_string()),
            ("lower_ok", b.lower_ok.to_string()),
        ])
    );
    Ok((vec![row], ExitCode::Success))
}

fn run_sync(cfg: &CliConfig) -> Outcome {
    let r = &cfg.run;
    let grid = r.grid()?;
    let u0_a = ProjectiveDensity::uniform(grid);
    let u0_b = cosine_density(grid);
    let reports = (0..r.replicas as u64)
        .into_par_iter()
        .map(|i| {
            let renewal = RenewalPotential::new(r.noise, grid, r.tau, r.seed, i)?;
            let mut prop = Propagator::new(grid, r.scheme)?;
            synchronization_rate(&u0_a, &u0_b, &renewal, r.n_periods as usize, &mut prop)
        })
        .collect::<crate::error::Result<Vec<_>>>()?;
    let mut rows: Vec<ResultRow> = reports
        .iter()
        .enumerate()
        .map(|(i, rep)| {
            let mut row = base_row(cfg, "replica");
            row.n_periods = Some(r.n_periods);
            row.slope = Some(rep.fitted_slope);
            row.stderr = Some(rep.slope_stderr);
            row.detail = detail(&[
                ("replica", i.to_string()),
                ("fit_points", rep.fit_points.to_string()),
                ("underflow", rep.underflow.to_string()),
                ("final_distance", format_f64(*rep.distances.last().unwrap_or(&f64::NAN))),
            ]);
            row
        })
        .collect();
    let slopes: Moments = reports.iter().map(|rep| rep.fitted_slope).collect();
    let negative = reports.iter().filter(|rep| rep.fitted_slope < 0.0).count();
    let mut summary = base_row(cfg, "summary");
    summary.n_periods = Some(r.n_periods);
    summary.slope = Some(slopes.mean());
    summary.stderr = Some(slopes.stderr());
    summary.value = Some(negative as f64 / reports.len() as f64);
    summary.detail = detail(&[
        ("replicas", reports.len().to_string()),
        ("negative_slopes", negative.to_string()),
        (
            "heat_gap_rate",
            format_f64(-4.0 * std::f64::consts::PI.powi(2) * r.kappa()),
        ),
    ]);
    rows.push(summary);
    Ok((rows, ExitCode::Success))
}

fn run_birkhoff(cfg: &CliConfig) -> Outcome {
    let r = &cfg.run;
    let grid = r.grid()?;
    let estimates = (0..cfg.n_samples as u64)
        .into_par_iter()
        .map(|i| {
            let xi = sample_potential(&r.noise, grid, RngKey::new(r.seed, STREAM_BIRKHOFF_XI, i))?;
            let mut prop = Propagator::new(grid, r.scheme)?;
            let key = RngKey::new(r.seed, mix(&[STREAM_BIRKHOFF_PAIRS, i]), 0);
            birkhoff_coefficient_estimate(&xi, r.tau, &mut prop, cfg.n_pairs, key)
        })
        .collect::<crate::error::Result<Vec<_>>>()?;
    let mu_hat = estimates.iter().map(|e| e.mu_hat).fold(0.0, f64::max);
    let pairs: usize = estimates.iter().map(|e| e.pairs.len()).sum();
    let contracting: usize = estimates
        .iter()
        .map(|e| e.pairs.iter().filter(|p| p.ratio < 1.0).count())
        .sum();
    let skipped: usize = estimates.iter().map(|e| e.skipped).sum();
    let mut row = base_row(cfg, "summary");
    row.mu_hat_birkhoff = Some(mu_hat);
    row.status = if contracting == pairs { "ok" } else { "fail" }.into();
    row.detail = detail(&[
        ("environments", cfg.n_samples.to_string()),
        ("pairs", pairs.to_string()),
        ("contracting_pairs", contracting.to_string()),
        ("skipped", skipped.to_string()),
    ]);
    Ok((vec![row], ExitCode::Success))
}

fn run_chaos(cfg: &CliConfig) -> Outcome {
    let r = &cfg.run;
    let (tau, kappa) = (r.tau, r.kappa());
    let conv = cfg.convention;
    let (k, partial) = match cfg.k_max {
        Some(k) => (k, zeroth_chaos_constant(tau, kappa, k, conv)?),
        None => auto_cutoff(tau, kappa, conv)?,
    };
    let with_tail = zeroth_chaos_with_tail(tau, kappa, k, conv)?;
    let limit = zeroth_chaos_limit(kappa, conv);
    let mut row = base_row(cfg, "summary");
    row.scheme = String::new();
    row.dt_max = None;
    row.n_grid = None;
    row.seed = None;
    row.noise_kind = NoiseKind::WhiteNoise.name().into();
    row.noise_params = String::new();
    row.value = Some(with_tail);
    row.target = Some(limit);
    row.detail = detail(&[
        ("convention", conv.name().into()),
        ("k_max", k.to_string()),
        ("partial_sum", format_f64(partial)),
        ("torus_limit", format_f64(zeroth_chaos_limit(kappa, FrequencyConvention::Torus))),
        ("closed_form_value", format_f64(closed_form_sqrt_constant(kappa))),
    ]);
    Ok((vec![row], ExitCode::Success))
}

/// Smallest cutoff in the sequence `10^6 * 4^j` that passes the
/// truncation check.
fn auto_cutoff(tau: f64, kappa: f64, conv: FrequencyConvention) -> crate::error::Result<(u64, f64)> {
    let mut k = 1_000_000u64;
    loop {
        match zeroth_chaos_constant(tau, kappa, k, conv) {
            Ok(v) => return Ok((k, v)),
            Err(Error::CutoffTooSmall { .. }) if k < 1 << 30 => k *= 4,
            Err(e) => return Err(e),
        }
    }
}

/// The smooth reference potential `cos 2 pi x`.
pub fn cosine_potential(grid: TorusGrid) -> PotentialSample {
    PotentialSample::from_fn(grid, |x| (2.0 * std::f64::consts::PI * x).cos())
}

/// Cross-checks the stepping schemes and the Feynman-Kac estimator against
/// the eigen-exact period map on the cosine potential, from uniform data.
fn run_validate(cfg: &CliConfig) -> Outcome {
    let r = &cfg.run;
    let grid = r.grid()?;
    let kappa = r.kappa();
    let xi = cosine_potential(grid);
    let z = ProjectiveDensity::uniform(grid);
    let mass = |scheme: Scheme| -> crate::error::Result<f64> {
        let sc = SchemeConfig::new(scheme, r.scheme.dt_max, kappa)?;
        Ok(Propagator::new(grid, sc)?.propagate_period(&z, &xi, r.tau)?.log_mass)
    };
    let exact = mass(Scheme::EigenExact)?;
    let row_for = |scheme: &str, log_mass: f64| {
        let mut row = base_row(cfg, "scheme");
        row.noise_kind = NoiseKind::Custom.name().into();
        row.noise_params = "xi=cos(2 pi x)".into();
        row.scheme = scheme.into();
        row.value = Some(log_mass);
        row.target = Some(exact);
        row
    };
    let mut rows = vec![row_for(Scheme::EigenExact.name(), exact)];
    rows[0].dt_max = None;
    for scheme in [Scheme::StrangSplit, Scheme::CrankNicolson] {
        let m = mass(scheme)?;
        let mut row = row_for(scheme.name(), m);
        row.dt_max = Some(r.scheme.dt_max);
        let delta = (m - exact).abs();
        row.status = if delta <= 1e-6 { "ok" } else { "fail" }.into();
        row.detail = detail(&[("delta", format_f64(delta))]);
        rows.push(row);
    }
    let key = RngKey::new(r.seed, STREAM_VALIDATE_FK, 0);
    let (fk, fk_se) = feynman_kac_mass(&xi, r.tau, &z, kappa, cfg.n_paths, cfg.dt_fk, key)?;
    let exact_mass = exact.exp();
    let mut row = row_for("feynman_kac", fk.ln());
    row.dt_max = Some(cfg.dt_fk);
    row.stderr = Some(fk_se / fk);
    let sigmas = (fk - exact_mass).abs() / fk_se;
    row.status = if sigmas <= 3.0 { "ok" } else { "fail" }.into();
    row.detail = detail(&[
        ("delta", format_f64((fk.ln() - exact).abs())),
        ("mass", format_f64(fk)),
        ("mass_stderr", format_f64(fk_se)),
        ("sigmas", format_f64(sigmas)),
        ("n_paths", cfg.n_paths.to_string()),
    ]);
    rows.push(row);
    Ok((rows, ExitCode::Success))
}
