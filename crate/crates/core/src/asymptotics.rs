//! Drivers for the three limit laws of `lambda(tau)` and the white-noise
//! zeroth-chaos constant.
//!
//! * bounded noise, `tau -> 0`: `lambda(tau) / tau -> (1/4) E int int |xi(x) - xi(y)|^2`;
//! * white noise, `tau -> 0`: `lambda(tau) / sqrt(tau)` converges to a
//!   constant fixed by the zeroth chaos `s(t)`;
//! * `tau -> infinity`: `lambda(tau) -> E[zeta]`, squeezed by
//!   `E[zeta] >= lambda >= E[zeta - mu / tau]`.
//!
//! For white noise the one-period gain, to leading order, is the time
//! integral of the zeroth chaos, `E log int e^{tau H} 1 ~ int_0^tau sqrt(t) s(t) dt
//! - tau^2 / 2`, so `lambda / sqrt(tau) -> (2/3) lim s`. Written out mode by
//! mode this is `sum_{k != 0} [tau / m_k - (1 - e^{-tau m_k}) / m_k^2]` with
//! `m_k = kappa |2 pi k|^2`, which [`white_noise_growth_prediction`]
//! evaluates on the simulation grid.

use std::f64::consts::PI;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::grid::{LaplacianSymbol, TorusGrid};
use crate::lyapunov::{estimate_time_average, LyapunovEstimate, RunConfig};
use crate::noise::{variance_functional, NoiseKind, NoiseSpec};
use crate::rng::RngKey;
use crate::spectral::{sandwich_bounds, BoundsReport};
use crate::stats::linear_fit;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum LimitLaw {
    SmallTauLinear,
    SmallTauSqrt,
    LargeTau,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum TargetSource {
    ClosedForm,
    DerivedOracle,
}

#[derive(Debug, Clone, Serialize)]
pub struct LimitFitReport {
    pub law: LimitLaw,
    /// Strictly decreasing.
    pub taus: Vec<f64>,
    /// `(lambda / tau^p, stderr)` with `p = 1` or `1/2`.
    pub ratios: Vec<(f64, f64)>,
    /// The ratios are fitted as a line in `tau^abscissa_exponent`.
    pub abscissa_exponent: f64,
    pub extrapolated: f64,
    pub extrapolated_stderr: f64,
    /// Intercept of the plain linear-in-`tau` fit, for comparison.
    pub extrapolated_linear_tau: f64,
    pub target: f64,
    pub target_source: TargetSource,
    pub relative_gap: f64,
    /// Share of the total fit weight carried by the two smallest `tau`.
    pub small_tau_weight_share: f64,
    /// The two smallest `tau` do not dominate the fit.
    pub under_resolved: bool,
    /// Constant stated in closed form for the white-noise law, for comparison.
    pub closed_form_value: Option<f64>,
    /// `lim_{t -> 0} s(t)` under the torus convention.
    pub zeroth_chaos_limit: Option<f64>,
    pub estimates: Vec<LyapunovEstimate>,
}

/// Intercept of a weighted line through `(tau_i^gamma, r_i)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Extrapolation {
    pub value: f64,
    pub stderr: f64,
    pub small_tau_weight_share: f64,
}

/// Weighted (inverse-variance) linear extrapolation to `tau = 0` in the
/// abscissa `tau^gamma`. Falls back to ordinary least squares when any error
/// bar is zero.
pub fn extrapolate_to_zero(taus: &[f64], ratios: &[(f64, f64)], gamma: f64) -> Result<Extrapolation> {
    if taus.len() != ratios.len() || taus.len() < 2 {
        return Err(Error::invalid("extrapolation needs at least two (tau, ratio) points"));
    }
    let xs: Vec<f64> = taus.iter().map(|t| t.powf(gamma)).collect();
    let ys: Vec<f64> = ratios.iter().map(|r| r.0).collect();
    let weighted = ratios.iter().all(|r| r.1 > 0.0);
    let ws: Vec<f64> = if weighted {
        ratios.iter().map(|r| 1.0 / (r.1 * r.1)).collect()
    } else {
        vec![1.0; ratios.len()]
    };
    let fit = linear_fit(&xs, &ys, if weighted { Some(&ws) } else { None });
    let mut order: Vec<usize> = (0..taus.len()).collect();
    order.sort_by(|&a, &b| taus[a].total_cmp(&taus[b]));
    let total: f64 = ws.iter().sum();
    let small: f64 = order.iter().take(2).map(|&i| ws[i]).sum();
    Ok(Extrapolation {
        value: fit.intercept,
        stderr: fit.intercept_se,
        small_tau_weight_share: small / total,
    })
}

fn decreasing(taus: &[f64]) -> Result<Vec<f64>> {
    let mut t = taus.to_vec();
    if t.iter().any(|v| !(*v > 0.0) || !v.is_finite()) {
        return Err(Error::invalid("every tau must be positive and finite"));
    }
    t.sort_by(|a, b| b.total_cmp(a));
    if t.windows(2).any(|w| w[0] == w[1]) {
        return Err(Error::invalid("taus must be distinct"));
    }
    Ok(t)
}

fn run_ratios(template: &RunConfig, taus: &[f64], power: f64) -> Result<(Vec<(f64, f64)>, Vec<LyapunovEstimate>)> {
    let mut ratios = Vec::with_capacity(taus.len());
    let mut estimates = Vec::with_capacity(taus.len());
    for &tau in taus {
        let cfg = RunConfig {
            tau,
            ..template.clone()
        };
        let est = estimate_time_average(&cfg)?;
        let scale = tau.powf(power);
        ratios.push((est.lambda_hat / scale, est.stderr / scale));
        estimates.push(est);
    }
    Ok((ratios, estimates))
}

fn relative_gap(value: f64, target: f64) -> f64 {
    if target == 0.0 {
        value.abs()
    } else {
        (value - target).abs() / target.abs()
    }
}

/// Abscissa exponent for the small-`tau` fit of `lambda / tau`: the first
/// correction is `O(sqrt(tau))` for potentials with jumps (heat smoothing
/// across a discontinuity acts on a `sqrt(kappa tau)` layer) and `O(tau)`
/// for smooth ones.
pub fn small_tau_exponent(kind: NoiseKind) -> f64 {
    match kind {
        NoiseKind::PiecewiseConstant | NoiseKind::WhiteNoise => 0.5,
        _ => 1.0,
    }
}

/// `lambda(tau) / tau` for bounded noise, extrapolated to `tau = 0` and
/// compared with the closed-form variance functional.
pub fn small_tau_slope(spec: &NoiseSpec, taus: &[f64], template: &RunConfig) -> Result<LimitFitReport> {
    if spec.kind() == NoiseKind::WhiteNoise {
        return Err(Error::invalid("the linear small-tau law needs bounded noise"));
    }
    let taus = decreasing(taus)?;
    if taus[0] > 0.05 {
        return Err(Error::invalid(format!("small-tau fits need tau <= 0.05, got {}", taus[0])));
    }
    let target = variance_functional(spec)?;
    let template = RunConfig {
        noise: *spec,
        ..template.clone()
    };
    let (ratios, estimates) = run_ratios(&template, &taus, 1.0)?;
    let gamma = small_tau_exponent(spec.kind());
    let ex = extrapolate_to_zero(&taus, &ratios, gamma)?;
    let lin = extrapolate_to_zero(&taus, &ratios, 1.0)?;
    Ok(LimitFitReport {
        law: LimitLaw::SmallTauLinear,
        taus,
        ratios,
        abscissa_exponent: gamma,
        extrapolated: ex.value,
        extrapolated_stderr: ex.stderr,
        extrapolated_linear_tau: lin.value,
        target,
        target_source: TargetSource::DerivedOracle,
        relative_gap: relative_gap(ex.value, target),
        small_tau_weight_share: ex.small_tau_weight_share,
        under_resolved: ex.small_tau_weight_share <= 0.5,
        closed_form_value: None,
        zeroth_chaos_limit: None,
        estimates,
    })
}

/// Grid resolution rule for white-noise runs: `dx <= sqrt(kappa tau) / 8`.
pub fn check_grid_rule(grid: TorusGrid, kappa: f64, tau: f64) -> Result<()> {
    let limit = (kappa * tau).sqrt() / 8.0;
    if grid.dx() > limit {
        return Err(Error::GridRule {
            tau,
            dx: grid.dx(),
            limit,
            required_n: (1.0 / limit).ceil() as usize,
        });
    }
    Ok(())
}

/// `lambda(tau) / sqrt(tau)` for white noise, extrapolated in `sqrt(tau)`.
pub fn sqrt_law_fit(taus: &[f64], template: &RunConfig) -> Result<LimitFitReport> {
    if template.noise != NoiseSpec::WhiteNoise {
        return Err(Error::invalid("the square-root law is for white noise"));
    }
    let taus = decreasing(taus)?;
    let kappa = template.kappa();
    let grid = template.grid()?;
    for &tau in &taus {
        check_grid_rule(grid, kappa, tau)?;
    }
    let (ratios, estimates) = run_ratios(template, &taus, 0.5)?;
    let ex = extrapolate_to_zero(&taus, &ratios, 0.5)?;
    let lin = extrapolate_to_zero(&taus, &ratios, 1.0)?;
    let target = sqrt_law_target(kappa);
    Ok(LimitFitReport {
        law: LimitLaw::SmallTauSqrt,
        taus,
        ratios,
        abscissa_exponent: 0.5,
        extrapolated: ex.value,
        extrapolated_stderr: ex.stderr,
        extrapolated_linear_tau: lin.value,
        target,
        target_source: TargetSource::DerivedOracle,
        relative_gap: relative_gap(ex.value, target),
        small_tau_weight_share: ex.small_tau_weight_share,
        under_resolved: ex.small_tau_weight_share <= 0.5,
        closed_form_value: Some(closed_form_sqrt_constant(kappa)),
        zeroth_chaos_limit: Some(zeroth_chaos_limit(kappa, FrequencyConvention::Torus)),
        estimates,
    })
}

/// How the frequency `k` enters the heat symbol.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FrequencyConvention {
    /// `|k|^2`.
    #[serde(alias = "integer-k2", alias = "k2")]
    IntegerK2,
    /// `|2 pi k|^2`, the Laplacian on `R / Z` used by the propagator.
    #[serde(alias = "torus-2pik")]
    Torus,
}

impl FrequencyConvention {
    fn scale(self) -> f64 {
        match self {
            FrequencyConvention::IntegerK2 => 1.0,
            FrequencyConvention::Torus => 4.0 * PI * PI,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            FrequencyConvention::IntegerK2 => "integer_k2",
            FrequencyConvention::Torus => "torus",
        }
    }
}

fn chaos_args(tau: f64, kappa: f64) -> Result<()> {
    if !(tau > 0.0) || !tau.is_finite() || !(kappa > 0.0) || !kappa.is_finite() {
        return Err(Error::invalid(format!(
            "tau and kappa must be positive, got tau = {tau}, kappa = {kappa}"
        )));
    }
    Ok(())
}

/// `(1/sqrt(tau)) int_0^tau e^{-(tau - s) kappa sigma} ds` with `sigma = c k^2`.
fn chaos_term(tau: f64, kappa: f64, c: f64, k: u64) -> f64 {
    if k == 0 {
        return tau.sqrt();
    }
    let m = kappa * c * (k as f64).powi(2);
    -(-tau * m).exp_m1() / (tau.sqrt() * m)
}

/// The truncated zeroth chaos `s_K(tau) = sum_{|k| <= K}` of the closed-form
/// time integrals; the `k = 0` term is `sqrt(tau)`.
pub fn zeroth_chaos_partial_sum(tau: f64, kappa: f64, k_max: u64, conv: FrequencyConvention) -> Result<f64> {
    chaos_args(tau, kappa)?;
    let c = conv.scale();
    // Summed from the small terms up.
    let tail: f64 = (1..=k_max).rev().map(|k| 2.0 * chaos_term(tau, kappa, c, k)).sum();
    Ok(tau.sqrt() + tail)
}

/// `psi_1(x) = sum_{j >= 0} 1 / (x + j)^2` for `x >= 1`.
pub fn trigamma(mut x: f64) -> f64 {
    let mut acc = 0.0;
    while x < 20.0 {
        acc += 1.0 / (x * x);
        x += 1.0;
    }
    let x2 = 1.0 / (x * x);
    acc + 1.0 / x
        + x2 / 2.0
        + x2 / x * (1.0 / 6.0 - x2 * (1.0 / 30.0 - x2 * (1.0 / 42.0 - x2 / 30.0)))
}

/// `sum_{|k| > K}` of the zeroth-chaos terms, in closed form up to the
/// exponentially small corrections, which are summed explicitly.
pub fn zeroth_chaos_tail(tau: f64, kappa: f64, k_max: u64, conv: FrequencyConvention) -> Result<f64> {
    chaos_args(tau, kappa)?;
    let c = conv.scale();
    let a = tau * kappa * c;
    let mut expo = 0.0;
    let mut k = k_max + 1;
    loop {
        let kk = (k as f64).powi(2);
        if a * kk > 745.0 {
            break;
        }
        expo += (-a * kk).exp() / kk;
        k += 1;
    }
    Ok(2.0 / (tau.sqrt() * kappa * c) * (trigamma((k_max + 1) as f64) - expo))
}

/// The zeroth chaos `s(tau)` truncated at `K`, refusing when the `k = K`
/// term is not below `1e-12` of the sum (the error then carries the
/// estimated remaining tail).
pub fn zeroth_chaos_constant(tau: f64, kappa: f64, k_max: u64, conv: FrequencyConvention) -> Result<f64> {
    let sum = zeroth_chaos_partial_sum(tau, kappa, k_max, conv)?;
    if k_max > 0 {
        let last = chaos_term(tau, kappa, conv.scale(), k_max);
        if last > 1e-12 * sum {
            return Err(Error::CutoffTooSmall {
                tail: zeroth_chaos_tail(tau, kappa, k_max, conv)?,
            });
        }
    }
    Ok(sum)
}

/// `s(tau)` over all of `Z`: the partial sum to `K` plus the closed-form tail.
pub fn zeroth_chaos_with_tail(tau: f64, kappa: f64, k_max: u64, conv: FrequencyConvention) -> Result<f64> {
    Ok(zeroth_chaos_partial_sum(tau, kappa, k_max, conv)? + zeroth_chaos_tail(tau, kappa, k_max, conv)?)
}

/// `lim_{tau -> 0} s(tau) = int_R (1 - e^{-kappa c k^2}) / (kappa c k^2) dk
/// = 2 sqrt(pi / (kappa c))`: `1 / sqrt(pi kappa)` on the torus and
/// `2 sqrt(pi / kappa)` under the `k^2` convention.
pub fn zeroth_chaos_limit(kappa: f64, conv: FrequencyConvention) -> f64 {
    2.0 * (PI / (kappa * conv.scale())).sqrt()
}

/// Binding target of the square-root law: `(2/3) lim s` on the torus,
/// `2 / (3 sqrt(pi kappa))`.
pub fn sqrt_law_target(kappa: f64) -> f64 {
    2.0 / 3.0 * zeroth_chaos_limit(kappa, FrequencyConvention::Torus)
}

/// The closed-form constant `sqrt(pi / kappa)` quoted for the square-root law.
pub fn closed_form_sqrt_constant(kappa: f64) -> f64 {
    (PI / kappa).sqrt()
}

fn growth_term(tau: f64, m: f64) -> f64 {
    // tau/m - (1 - e^{-tau m})/m^2, written to avoid cancellation.
    let x = tau * m;
    if x < 1e-3 {
        tau * tau * (0.5 - x / 6.0 + x * x / 24.0)
    } else {
        (x + (-x).exp_m1()) / (m * m)
    }
}

/// Leading-order white-noise Lyapunov exponent at finite `tau`,
/// `(1/tau) sum_{k != 0} [tau / m_k - (1 - e^{-tau m_k}) / m_k^2]`.
///
/// With `grid = Some(g)` the sum runs over the grid frequencies with the
/// second-difference symbol (matching the discrete simulation); with `None`
/// it is the continuum torus sum.
pub fn white_noise_growth_prediction(tau: f64, kappa: f64, grid: Option<TorusGrid>) -> Result<f64> {
    chaos_args(tau, kappa)?;
    let total = match grid {
        Some(g) => (0..g.n())
            .map(|j| g.frequency(j))
            .filter(|&k| k != 0)
            .map(|k| growth_term(tau, kappa * LaplacianSymbol::SecondDifference.eval(k, g.n())))
            .sum::<f64>(),
        None => {
            let c = 4.0 * PI * PI * kappa;
            let k_max = 1_000_000u64;
            let head: f64 = (1..=k_max)
                .rev()
                .map(|k| 2.0 * growth_term(tau, c * (k as f64).powi(2)))
                .sum();
            // Beyond K the exponential is negligible: tau/m - 1/m^2.
            let x = (k_max + 1) as f64;
            let inv4 = 1.0 / (3.0 * x.powi(3)) + 1.0 / (2.0 * x.powi(4));
            head + 2.0 * (tau / c * trigamma(x) - inv4 / (c * c))
        }
    };
    Ok(total / tau)
}

#[derive(Debug, Clone, Serialize)]
pub struct LargeTauReport {
    pub estimate: LyapunovEstimate,
    pub bounds: BoundsReport,
    /// `|lambda_hat - E[zeta]|`.
    pub gap: f64,
    /// `E[mu] / tau + 3 sqrt(se_lambda^2 + se_zeta^2)`.
    pub allowed: f64,
    pub holds: bool,
}

/// Compares `lambda_hat(tau)` at large `tau` with the sampled `E[zeta]` and
/// `E[mu] / tau`.
pub fn large_tau_compare(cfg: &RunConfig, n_samples: usize, key: RngKey) -> Result<LargeTauReport> {
    if cfg.tau < 5.0 {
        return Err(Error::invalid(format!("large-tau comparison needs tau >= 5, got {}", cfg.tau)));
    }
    let estimate = estimate_time_average(cfg)?;
    let bounds = sandwich_bounds(
        &cfg.noise,
        cfg.grid()?,
        cfg.kappa(),
        cfg.tau,
        n_samples,
        &estimate,
        key,
    )?;
    let gap = (estimate.lambda_hat - bounds.zeta_mean).abs();
    let se = (estimate.stderr.powi(2) + bounds.zeta_stderr.powi(2)).sqrt();
    let allowed = bounds.mu_mean / cfg.tau + 3.0 * se;
    Ok(LargeTauReport {
        holds: gap <= allowed,
        gap,
        allowed,
        estimate,
        bounds,
    })
}
