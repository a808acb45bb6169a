//! Lyapunov exponent estimators.
//!
//! * [`estimate_time_average`] follows one trajectory and averages the
//!   per-period log-mass increments `log int e^{tau H^i} z^{i-1}`, whose sum
//!   telescopes to the log of the total mass.
//! * [`estimate_furstenberg`] draws independent pairs (invariant profile,
//!   fresh environment) and averages the one-period log-mass gain.
//!
//! Both can work with spatially centered potentials: replacing `xi^i` by
//! `xi^i - <xi^i, 1>` shifts each increment by exactly `-tau <xi^i, 1>`,
//! a quantity with zero mean that is independent of the trajectory, while
//! leaving the projective trajectory untouched. The expectation is unchanged
//! and the variance of the estimator drops sharply at small `tau`.

use log::warn;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::TorusGrid;
use crate::noise::{center_spatially, sample_potential, NoiseSpec, RenewalPotential};
use crate::projective::{cosine_density, hilbert_distance, ProjectiveDensity};
use crate::propagator::{Propagator, SchemeConfig};
use crate::rng::{mix, RngKey};
use crate::stats::{batch_means, mean_stderr, pool_inverse_variance};

/// Coupled-pair distance at which the chain counts as stationary.
pub const BURN_IN_TOLERANCE: f64 = 1e-8;

const STREAM_FURSTENBERG_A: u64 = 0xf0a5_7e1a;
const STREAM_FURSTENBERG_B: u64 = 0xf0a5_7e1b;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BurnIn {
    /// Run a coupled pair until it synchronizes, add 25%, never exceed `max`.
    Auto { max: u64 },
    Fixed(u64),
}

impl Default for BurnIn {
    fn default() -> Self {
        BurnIn::Auto { max: 100_000 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InitialCondition {
    #[default]
    Uniform,
    /// `normalize(exp(cos 2 pi x))`.
    Cosine,
}

impl InitialCondition {
    pub fn density(self, grid: TorusGrid) -> ProjectiveDensity {
        match self {
            InitialCondition::Uniform => ProjectiveDensity::uniform(grid),
            InitialCondition::Cosine => cosine_density(grid),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub noise: NoiseSpec,
    pub grid_n: usize,
    pub tau: f64,
    pub n_periods: u64,
    pub burn_in: BurnIn,
    pub replicas: usize,
    pub scheme: SchemeConfig,
    pub seed: u64,
    /// Number of batch-means batches; values below 2 fall back to an
    /// i.i.d. standard error.
    pub batch_count: usize,
    /// Use spatially centered potentials (see the module documentation).
    pub centered: bool,
    pub initial: InitialCondition,
}

impl RunConfig {
    pub fn new(noise: NoiseSpec, tau: f64, n_periods: u64, scheme: SchemeConfig, seed: u64) -> Self {
        Self {
            noise,
            grid_n: 256,
            tau,
            n_periods,
            burn_in: BurnIn::default(),
            replicas: 1,
            scheme,
            seed,
            batch_count: 20,
            centered: false,
            initial: InitialCondition::Uniform,
        }
    }

    pub fn kappa(&self) -> f64 {
        self.scheme.kappa
    }

    pub fn grid(&self) -> Result<TorusGrid> {
        TorusGrid::new(self.grid_n)
    }

    pub fn validate(&self) -> Result<()> {
        self.noise.validate()?;
        self.noise.check_grid(self.grid()?)?;
        self.scheme.validate()?;
        if !(self.tau > 0.0) || !self.tau.is_finite() {
            return Err(Error::invalid(format!("tau must be positive, got {}", self.tau)));
        }
        if self.n_periods == 0 {
            return Err(Error::invalid("n_periods must be >= 1"));
        }
        if self.replicas == 0 {
            return Err(Error::invalid("replicas must be >= 1"));
        }
        if self.batch_count >= 2 && self.n_periods < 10 * self.batch_count as u64 {
            return Err(Error::invalid(format!(
                "n_periods = {} is below 10 x batch_count = {}",
                self.n_periods,
                10 * self.batch_count
            )));
        }
        Ok(())
    }

    pub fn renewal(&self, stream: u64) -> Result<RenewalPotential> {
        RenewalPotential::new(self.noise, self.grid()?, self.tau, self.seed, stream)
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct Diagnostics {
    pub clamp_events: u64,
    /// The automatic burn-in hit its cap before the coupled pair synchronized.
    pub burn_in_capped: bool,
    pub centered: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ReplicaEstimate {
    pub lambda_hat: f64,
    pub stderr: f64,
    /// Sum of the per-period log-mass increments after burn-in.
    pub total_log_mass: f64,
    pub burn_in: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LyapunovEstimate {
    pub lambda_hat: f64,
    pub stderr: f64,
    pub tau: f64,
    /// Periods entering the average, per replica (or outer replicates).
    pub n_periods_used: u64,
    /// Largest burn-in used by any replica.
    pub burn_in_used: u64,
    pub replicas: Vec<ReplicaEstimate>,
    pub diagnostics: Diagnostics,
}

/// State after burn-in.
#[derive(Debug, Clone)]
pub struct BurnInOutcome {
    pub periods: u64,
    pub capped: bool,
    pub state: ProjectiveDensity,
    pub clamp_events: u64,
}

/// Advances `u0` through the burn-in phase of `r`, starting at period 0.
pub fn run_burn_in(
    u0: &ProjectiveDensity,
    r: &RenewalPotential,
    prop: &mut Propagator,
    burn_in: BurnIn,
) -> Result<BurnInOutcome> {
    let tau = r.tau();
    match burn_in {
        BurnIn::Fixed(b) => {
            let s = prop.evolve_with(u0, r, 0, b, false, |_, _| {})?;
            Ok(BurnInOutcome {
                periods: b,
                capped: false,
                state: s.z_final,
                clamp_events: s.clamp_events,
            })
        }
        BurnIn::Auto { max } => {
            let grid = r.grid();
            let mut a = u0.clone();
            let mut b = if hilbert_distance(u0, &ProjectiveDensity::uniform(grid)) > 0.0 {
                ProjectiveDensity::uniform(grid)
            } else {
                cosine_density(grid)
            };
            let mut clamps = 0;
            let mut synced_after = None;
            for i in 0..max {
                let xi = r.sample(i);
                let ra = prop.propagate_period(&a, &xi, tau)?;
                let rb = prop.propagate_period(&b, &xi, tau)?;
                clamps += ra.clamp_events + rb.clamp_events;
                a = ra.z_next;
                b = rb.z_next;
                if hilbert_distance(&a, &b) < BURN_IN_TOLERANCE {
                    synced_after = Some(i + 1);
                    break;
                }
            }
            let (periods, capped) = match synced_after {
                Some(p) => ((p as f64 * 1.25).ceil() as u64, false),
                None => (max, true),
            };
            let periods = periods.min(max);
            if capped {
                warn!("burn-in cap of {max} periods reached before synchronization");
            }
            let done = synced_after.unwrap_or(max);
            let rest = prop.evolve_with(&a, r, done, periods - done, false, |_, _| {})?;
            Ok(BurnInOutcome {
                periods,
                capped,
                state: rest.z_final,
                clamp_events: clamps + rest.clamp_events,
            })
        }
    }
}

fn time_average_replica(cfg: &RunConfig, replica: usize) -> Result<(ReplicaEstimate, Diagnostics)> {
    let grid = cfg.grid()?;
    let r = cfg.renewal(replica as u64)?;
    let mut prop = Propagator::new(grid, cfg.scheme)?;
    let u0 = cfg.initial.density(grid);
    let burn = run_burn_in(&u0, &r, &mut prop, cfg.burn_in)?;
    let mut increments = Vec::with_capacity(cfg.n_periods as usize);
    let summary = prop.evolve_with(
        &burn.state,
        &r,
        burn.periods,
        cfg.n_periods,
        cfg.centered,
        |_, res| increments.push(res.log_mass),
    )?;
    let n = cfg.n_periods as f64;
    let lambda_hat = summary.total_log_mass / (cfg.tau * n);
    let se_inc = if cfg.batch_count >= 2 {
        batch_means(&increments, cfg.batch_count).1
    } else {
        mean_stderr(&increments).1
    };
    Ok((
        ReplicaEstimate {
            lambda_hat,
            stderr: se_inc / cfg.tau,
            total_log_mass: summary.total_log_mass,
            burn_in: burn.periods,
        },
        Diagnostics {
            clamp_events: burn.clamp_events + summary.clamp_events,
            burn_in_capped: burn.capped,
            centered: cfg.centered,
        },
    ))
}

fn merge_diagnostics(parts: impl Iterator<Item = Diagnostics>, centered: bool) -> Diagnostics {
    let mut d = Diagnostics {
        centered,
        ..Diagnostics::default()
    };
    for p in parts {
        d.clamp_events += p.clamp_events;
        d.burn_in_capped |= p.burn_in_capped;
    }
    d
}

/// Time-average estimator: `lambda_hat = (sum of increments) / (tau N)`
/// per replica, batch-means error bars, inverse-variance pooling.
pub fn estimate_time_average(cfg: &RunConfig) -> Result<LyapunovEstimate> {
    cfg.validate()?;
    let results: Vec<(ReplicaEstimate, Diagnostics)> = (0..cfg.replicas)
        .into_par_iter()
        .map(|i| time_average_replica(cfg, i))
        .collect::<Result<_>>()?;
    let pairs: Vec<(f64, f64)> = results
        .iter()
        .map(|(r, _)| (r.lambda_hat, r.stderr))
        .collect();
    let (lambda_hat, stderr) = pool_inverse_variance(&pairs);
    let burn_in_used = results.iter().map(|(r, _)| r.burn_in).max().unwrap_or(0);
    let diagnostics = merge_diagnostics(results.iter().map(|(_, d)| d.clone()), cfg.centered);
    Ok(LyapunovEstimate {
        lambda_hat,
        stderr,
        tau: cfg.tau,
        n_periods_used: cfg.n_periods,
        burn_in_used,
        replicas: results.into_iter().map(|(r, _)| r).collect(),
        diagnostics,
    })
}

/// Furstenberg estimator: `n_outer` independent replicates, each a fresh
/// burn-in on stream A followed by one evaluation period in an environment
/// from stream B that the burn-in never saw.
pub fn estimate_furstenberg(cfg: &RunConfig, n_outer: usize) -> Result<LyapunovEstimate> {
    cfg.validate()?;
    if n_outer < 30 {
        return Err(Error::invalid(format!("n_outer must be >= 30, got {n_outer}")));
    }
    let grid = cfg.grid()?;
    let outcomes: Vec<(f64, u64, Diagnostics)> = (0..n_outer as u64)
        .into_par_iter()
        .map_init(
            || Propagator::new(grid, cfg.scheme),
            |prop, j| {
                let prop = prop.as_mut().map_err(|e| e.clone())?;
                let ra = cfg.renewal(mix(&[STREAM_FURSTENBERG_A, j]))?;
                let u0 = cfg.initial.density(grid);
                let burn = run_burn_in(&u0, &ra, prop, cfg.burn_in)?;
                let key = RngKey::new(cfg.seed, mix(&[STREAM_FURSTENBERG_B, j]), 0);
                let raw = sample_potential(&cfg.noise, grid, key)?;
                let xi = if cfg.centered { center_spatially(&raw) } else { raw };
                let res = prop.propagate_period(&burn.state, &xi, cfg.tau)?;
                Ok((
                    res.log_mass / cfg.tau,
                    burn.periods,
                    Diagnostics {
                        clamp_events: burn.clamp_events + res.clamp_events,
                        burn_in_capped: burn.capped,
                        centered: cfg.centered,
                    },
                ))
            },
        )
        .collect::<Result<_>>()?;
    let values: Vec<f64> = outcomes.iter().map(|o| o.0).collect();
    let (lambda_hat, stderr) = mean_stderr(&values);
    Ok(LyapunovEstimate {
        lambda_hat,
        stderr,
        tau: cfg.tau,
        n_periods_used: n_outer as u64,
        burn_in_used: outcomes.iter().map(|o| o.1).max().unwrap_or(0),
        replicas: Vec::new(),
        diagnostics: merge_diagnostics(outcomes.into_iter().map(|o| o.2), cfg.centered),
    })
}

/// One time-average estimate per `tau`; failures are kept per row.
pub fn sweep_tau(template: &RunConfig, taus: &[f64]) -> Result<Vec<(f64, Result<LyapunovEstimate>)>> {
    if taus.is_empty() {
        return Err(Error::invalid("taus must not be empty"));
    }
    if taus.windows(2).any(|w| !(w[0] < w[1])) {
        return Err(Error::invalid("taus must be strictly increasing"));
    }
    Ok(taus
        .iter()
        .map(|&tau| {
            let cfg = RunConfig {
                tau,
                ..template.clone()
            };
            (tau, estimate_time_average(&cfg))
        })
        .collect())
}
