//! Top eigenpair of `H = kappa L + diag(xi)`, the Doob transform quantities
//! `(zeta, psi, mu)` and the large-`tau` sandwich
//! `E[zeta] >= lambda(tau) >= E[zeta - mu / tau]`.

use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::grid::TorusGrid;
use crate::lyapunov::LyapunovEstimate;
use crate::noise::{sample_potential, NoiseSpec, PotentialSample};
use crate::projective::{hilbert_distance, normalize_values, ProjectiveDensity};
use crate::propagator::{apply_operator, Eigensystem, Propagator, Scheme, SchemeConfig};
use crate::rng::{mix, RngKey};
use crate::stats::Moments;

/// Largest grid solved densely; beyond it the power-iteration path is used.
pub const DENSE_MAX_N: usize = 2048;

/// Tolerated negative eigenvector entries (relative to the mean) before the
/// Perron property is declared violated.
const PERRON_SLACK: f64 = 1e-10;

#[derive(Debug, Clone)]
pub struct EigenPair {
    pub zeta: f64,
    pub psi: ProjectiveDensity,
    /// `max|H psi - zeta psi| / max|psi|`.
    pub residual: f64,
}

fn residual(xi: &PotentialSample, kappa: f64, zeta: f64, psi: &[f64]) -> f64 {
    let h = apply_operator(xi.values(), kappa, psi);
    let num = h
        .iter()
        .zip(psi)
        .map(|(a, b)| (a - zeta * b).abs())
        .fold(0.0, f64::max);
    let den = psi.iter().map(|v| v.abs()).fold(0.0, f64::max);
    num / den
}

/// Sign-fixed, `int psi = 1` normalized copy of an eigenvector.
fn perron_density(grid: TorusGrid, v: &[f64]) -> Result<ProjectiveDensity> {
    let sign = if v.iter().sum::<f64>() < 0.0 { -1.0 } else { 1.0 };
    let mass = grid.integrate(v) * sign;
    let scaled: Vec<f64> = v.iter().map(|x| sign * x / mass).collect();
    let min_entry = scaled.iter().copied().fold(f64::INFINITY, f64::min);
    if min_entry < -PERRON_SLACK {
        return Err(Error::PerronViolation { min_entry });
    }
    Ok(normalize_values(grid, scaled)?.density)
}

/// Largest eigenvalue of `kappa L + diag(xi)` and its positive eigenvector.
pub fn top_eigenpair(xi: &PotentialSample, kappa: f64) -> Result<EigenPair> {
    if !(kappa > 0.0) {
        return Err(Error::invalid(format!("kappa must be positive, got {kappa}")));
    }
    if xi.grid().n() > DENSE_MAX_N {
        return top_eigenpair_power(xi, kappa);
    }
    let e = Eigensystem::compute(xi, kappa)?;
    eigenpair_from_system(xi, kappa, &e)
}

/// Extracts the Perron pair from a precomputed decomposition.
pub fn eigenpair_from_system(
    xi: &PotentialSample,
    kappa: f64,
    e: &Eigensystem,
) -> Result<EigenPair> {
    let zeta = e.top_value();
    let psi = perron_density(xi.grid(), e.top_vector())?;
    let res = residual(xi, kappa, zeta, psi.values());
    // A backward-stable solver leaves a residual of order eps * ||H||, and
    // ||H|| grows like 4 kappa n^2.
    let n = xi.grid().n() as f64;
    let norm = 4.0 * kappa * n * n + xi.field().max_abs();
    if !(res <= 1e-8 * (1.0 + zeta.abs()) + 1e-12 * norm) {
        return Err(Error::EigenSolver(format!(
            "top eigenpair residual {res:e} exceeds tolerance"
        )));
    }
    Ok(EigenPair {
        zeta,
        psi,
        residual: res,
    })
}

/// Power iteration on `e^{s H}` for grids too large for a dense solve.
fn top_eigenpair_power(xi: &PotentialSample, kappa: f64) -> Result<EigenPair> {
    let grid = xi.grid();
    let cfg = SchemeConfig::new(Scheme::StrangSplit, 1e-4, kappa)?;
    let mut prop = Propagator::new(grid, cfg)?;
    let s = 0.05 / kappa;
    let mut z = ProjectiveDensity::uniform(grid);
    let mut converged = false;
    for _ in 0..20_000 {
        let next = prop.propagate_period(&z, xi, s)?.z_next;
        let d = hilbert_distance(&next, &z);
        z = next;
        if d < 1e-12 {
            converged = true;
            break;
        }
    }
    if !converged {
        return Err(Error::EigenSolver(format!(
            "power iteration did not converge on n = {}",
            grid.n()
        )));
    }
    let v = z.values();
    let hv = apply_operator(xi.values(), kappa, v);
    let zeta = hv.iter().zip(v).map(|(a, b)| a * b).sum::<f64>()
        / v.iter().map(|a| a * a).sum::<f64>();
    let res = residual(xi, kappa, zeta, v);
    Ok(EigenPair {
        zeta,
        residual: res,
        psi: z,
    })
}

/// `mu = log max psi - log min psi = d_H(psi, 1)`.
pub fn doob_mu(pair: &EigenPair) -> f64 {
    let lv = pair.psi.log_values();
    let hi = lv.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lo = lv.iter().copied().fold(f64::INFINITY, f64::min);
    hi - lo
}

/// Checks `e^{tau H} psi = e^{tau zeta} psi`; returns
/// `(d_H(e^{tau H} psi, psi), |log mass - tau zeta|)`.
pub fn doob_consistency_check(
    xi: &PotentialSample,
    tau: f64,
    cfg: SchemeConfig,
) -> Result<(f64, f64)> {
    if cfg.scheme != Scheme::EigenExact {
        return Err(Error::invalid("the Doob consistency check needs the eigen_exact scheme"));
    }
    let mut prop = Propagator::new(xi.grid(), cfg)?;
    let e = prop.eigensystem(xi)?;
    let pair = eigenpair_from_system(xi, cfg.kappa, &e)?;
    let out = prop.propagate_period(&pair.psi, xi, tau)?;
    Ok((
        hilbert_distance(&out.z_next, &pair.psi),
        (out.log_mass - tau * pair.zeta).abs(),
    ))
}

/// Monte Carlo summary of `(zeta, mu)` against a Lyapunov estimate.
#[derive(Debug, Clone, Serialize)]
pub struct BoundsReport {
    pub tau: f64,
    pub n_samples: usize,
    pub zeta_mean: f64,
    pub zeta_stderr: f64,
    pub mu_mean: f64,
    pub mu_stderr: f64,
    /// `E[zeta - mu / tau]`.
    pub lower: f64,
    pub lower_stderr: f64,
    pub lambda_hat: f64,
    pub lambda_stderr: f64,
    pub upper_ok: bool,
    pub lower_ok: bool,
}

impl BoundsReport {
    /// Width `E[mu] / tau` of the sandwich at another period.
    pub fn gap_at(&self, tau: f64) -> f64 {
        self.mu_mean / tau
    }
}

/// Per-sample `(zeta, mu)` for `n_samples` independent environments.
pub fn sample_zeta_mu(
    spec: &NoiseSpec,
    grid: TorusGrid,
    kappa: f64,
    n_samples: usize,
    key: RngKey,
) -> Result<Vec<(f64, f64)>> {
    spec.check_grid(grid)?;
    let stream = mix(&[key.stream, 0xe16e_5a3e]);
    (0..n_samples as u64)
        .into_par_iter()
        .map(|i| {
            let xi = sample_potential(spec, grid, RngKey::new(key.seed, stream, i))?;
            let pair = top_eigenpair(&xi, kappa)?;
            Ok((pair.zeta, doob_mu(&pair)))
        })
        .collect()
}

pub fn sandwich_bounds(
    spec: &NoiseSpec,
    grid: TorusGrid,
    kappa: f64,
    tau: f64,
    n_samples: usize,
    lambda_hat: &LyapunovEstimate,
    key: RngKey,
) -> Result<BoundsReport> {
    if n_samples < 30 {
        return Err(Error::invalid(format!("n_samples must be >= 30, got {n_samples}")));
    }
    if !(tau > 0.0) {
        return Err(Error::invalid(format!("tau must be positive, got {tau}")));
    }
    let samples = sample_zeta_mu(spec, grid, kappa, n_samples, key)?;
    Ok(bounds_from_samples(&samples, tau, lambda_hat.lambda_hat, lambda_hat.stderr))
}

pub fn bounds_from_samples(
    samples: &[(f64, f64)],
    tau: f64,
    lambda_hat: f64,
    lambda_stderr: f64,
) -> BoundsReport {
    let zeta: Moments = samples.iter().map(|s| s.0).collect();
    let mu: Moments = samples.iter().map(|s| s.1).collect();
    let lower: Moments = samples.iter().map(|s| s.0 - s.1 / tau).collect();
    let up_se = (lambda_stderr.powi(2) + zeta.stderr().powi(2)).sqrt();
    let lo_se = (lambda_stderr.powi(2) + lower.stderr().powi(2)).sqrt();
    BoundsReport {
        tau,
        n_samples: samples.len(),
        zeta_mean: zeta.mean(),
        zeta_stderr: zeta.stderr(),
        mu_mean: mu.mean(),
        mu_stderr: mu.stderr(),
        lower: lower.mean(),
        lower_stderr: lower.stderr(),
        lambda_hat,
        lambda_stderr,
        upper_ok: lambda_hat <= zeta.mean() + 3.0 * up_se,
        lower_ok: lambda_hat >= lower.mean() - 3.0 * lo_se,
    }
}

/// Richardson extrapolation of a quantity with error `C h^order` from
/// values on grids `h` and `h / ratio`.
pub fn richardson(coarse: f64, fine: f64, ratio: f64, order: f64) -> f64 {
    let r = ratio.powf(order);
    (r * fine - coarse) / (r - 1.0)
}
