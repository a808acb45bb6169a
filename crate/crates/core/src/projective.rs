//! The projective space of positive densities with unit integral, the
//! Hilbert projective metric, synchronization of coupled trajectories and
//! empirical Birkhoff contraction coefficients.

use std::f64::consts::PI;

use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};
use crate::grid::{heat_apply, Field, TorusGrid};
use crate::noise::{PotentialSample, RenewalPotential};
use crate::propagator::Propagator;
use crate::rng::{Purpose, RngKey};
use crate::stats::{linear_fit, LinearFit};

/// Floor substituted for non-positive values before taking logarithms.
pub const EPS_POS: f64 = 1e-300;

/// Distances below this are treated as numerically synchronized.
pub const DH_UNDERFLOW: f64 = 1e-14;

/// A strictly positive grid density with unit integral.
#[derive(Debug, Clone, PartialEq)]
pub struct ProjectiveDensity {
    field: Field,
    log_values: Vec<f64>,
}

impl ProjectiveDensity {
    /// Wraps a field that is already strictly positive with unit integral.
    pub fn new(field: Field) -> Result<Self> {
        if let Some(j) = field.values().iter().position(|v| !(*v > 0.0)) {
            return Err(Error::invalid(format!(
                "density value {} at node {j} is not positive",
                field.values()[j]
            )));
        }
        let mass = field.integrate();
        if (mass - 1.0).abs() > 1e-12 {
            return Err(Error::invalid(format!("density integrates to {mass}, not 1")));
        }
        let log_values = field.values().iter().map(|v| v.ln()).collect();
        Ok(Self { field, log_values })
    }

    /// The constant density `1`.
    pub fn uniform(grid: TorusGrid) -> Self {
        Self {
            field: Field::constant(grid, 1.0),
            log_values: vec![0.0; grid.n()],
        }
    }

    /// `normalize(exp(g))` computed in log space.
    pub fn from_log_values(grid: TorusGrid, g: &[f64]) -> Result<Self> {
        let shift = g.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let vals: Vec<f64> = g.iter().map(|v| (v - shift).exp()).collect();
        let (z, _) = normalize(&Field::new(grid, vals)?)?;
        Ok(z)
    }

    pub fn field(&self) -> &Field {
        &self.field
    }

    pub fn values(&self) -> &[f64] {
        self.field.values()
    }

    pub fn log_values(&self) -> &[f64] {
        &self.log_values
    }

    pub fn grid(&self) -> TorusGrid {
        self.field.grid()
    }
}

/// Result of normalizing a raw field, with the number of clamped nodes.
#[derive(Debug, Clone)]
pub struct Normalized {
    pub density: ProjectiveDensity,
    pub log_mass: f64,
    pub clamp_events: u64,
}

/// Splits `f` into its mass and its projective component, clamping
/// non-positive values to [`EPS_POS`].
pub fn normalize_counting(f: &Field) -> Result<Normalized> {
    normalize_values(f.grid(), f.values().to_vec())
}

pub(crate) fn normalize_values(grid: TorusGrid, mut values: Vec<f64>) -> Result<Normalized> {
    let raw = grid.integrate(&values);
    if !(raw > 0.0) || !raw.is_finite() {
        return Err(Error::DegenerateMass { integral: raw });
    }
    let mut clamp_events = 0;
    for v in values.iter_mut() {
        if !(*v > 0.0) {
            *v = EPS_POS;
            clamp_events += 1;
        }
    }
    let mass = grid.integrate(&values);
    let inv = 1.0 / mass;
    let mut log_values = Vec::with_capacity(values.len());
    for v in values.iter_mut() {
        *v *= inv;
        log_values.push(v.ln());
    }
    // Division can push a subnormal to zero.
    for (v, l) in values.iter_mut().zip(log_values.iter_mut()) {
        if *v <= 0.0 {
            *v = EPS_POS;
            *l = EPS_POS.ln();
            clamp_events += 1;
        }
    }
    Ok(Normalized {
        density: ProjectiveDensity {
            field: Field::new(grid, values)?,
            log_values,
        },
        log_mass: mass.ln(),
        clamp_events,
    })
}

/// `f = exp(log_mass) * z` with `z` in the projective space.
pub fn normalize(f: &Field) -> Result<(ProjectiveDensity, f64)> {
    let n = normalize_counting(f)?;
    Ok((n.density, n.log_mass))
}

/// Hilbert projective distance `max log(phi/psi) - min log(phi/psi)`.
pub fn hilbert_distance(phi: &ProjectiveDensity, psi: &ProjectiveDensity) -> f64 {
    assert_eq!(phi.grid(), psi.grid(), "densities on different grids");
    log_ratio_range(phi.log_values(), psi.log_values())
}

/// Hilbert distance between raw positive arrays.
pub fn hilbert_distance_values(phi: &[f64], psi: &[f64]) -> Result<f64> {
    if phi.len() != psi.len() {
        return Err(Error::invalid("arrays of different length"));
    }
    if phi.iter().chain(psi).any(|v| !(*v > 0.0)) {
        return Err(Error::invalid("Hilbert distance needs strictly positive values"));
    }
    let a: Vec<f64> = phi.iter().map(|v| v.ln()).collect();
    let b: Vec<f64> = psi.iter().map(|v| v.ln()).collect();
    Ok(log_ratio_range(&a, &b))
}

fn log_ratio_range(a: &[f64], b: &[f64]) -> f64 {
    let mut hi = f64::NEG_INFINITY;
    let mut lo = f64::INFINITY;
    for (x, y) in a.iter().zip(b) {
        let d = x - y;
        hi = hi.max(d);
        lo = lo.min(d);
    }
    (hi - lo).max(0.0)
}

/// Distances of two trajectories driven by the same environment.
#[derive(Debug, Clone)]
pub struct SyncReport {
    /// `d_H` at `t = 0, tau, 2 tau, ...` until the run ends or underflows.
    pub distances: Vec<f64>,
    pub tau: f64,
    /// Least-squares slope of `log d_H` against time.
    pub fitted_slope: f64,
    pub slope_stderr: f64,
    pub fit_points: usize,
    /// `d_H` fell below [`DH_UNDERFLOW`] before the planned end.
    pub underflow: bool,
}

/// Evolves `u0_a`, `u0_b` under the same renewal potential and fits the
/// exponential rate at which their Hilbert distance shrinks.
///
/// The first 10% of periods are discarded as transient. When the distance
/// underflows early the fit uses what is available, down to the initial
/// point, and `underflow` is set.
pub fn synchronization_rate(
    u0_a: &ProjectiveDensity,
    u0_b: &ProjectiveDensity,
    r: &RenewalPotential,
    n_periods: usize,
    prop: &mut Propagator,
) -> Result<SyncReport> {
    if n_periods == 0 {
        return Err(Error::invalid("n_periods must be >= 1"));
    }
    let d0 = hilbert_distance(u0_a, u0_b);
    if d0 < DH_UNDERFLOW {
        return Err(Error::invalid(
            "initial conditions coincide in the projective space",
        ));
    }
    let tau = r.tau();
    let mut a = u0_a.clone();
    let mut b = u0_b.clone();
    let mut distances = vec![d0];
    let mut underflow = false;
    for i in 0..n_periods {
        let xi = r.sample(i as u64);
        a = prop.propagate_period(&a, &xi, tau)?.z_next;
        b = prop.propagate_period(&b, &xi, tau)?.z_next;
        let d = hilbert_distance(&a, &b);
        distances.push(d);
        if d < DH_UNDERFLOW {
            underflow = true;
            break;
        }
    }

    let valid: Vec<usize> = (0..distances.len())
        .filter(|&i| distances[i] >= DH_UNDERFLOW)
        .collect();
    let discard = n_periods / 10;
    let mut window: Vec<usize> = valid.iter().copied().filter(|&i| i > discard).collect();
    if window.len() < 2 {
        window = valid.clone();
    }
    let (xs, ys): (Vec<f64>, Vec<f64>) = if window.len() >= 2 {
        window
            .iter()
            .map(|&i| (i as f64 * tau, distances[i].ln()))
            .unzip()
    } else {
        // Collapsed within one period: the floor gives an upper bound on the rate.
        (vec![0.0, tau], vec![d0.ln(), DH_UNDERFLOW.ln()])
    };
    let LinearFit { slope, slope_se, .. } = linear_fit(&xs, &ys, None);
    Ok(SyncReport {
        fit_points: xs.len(),
        distances,
        tau,
        fitted_slope: slope,
        slope_stderr: slope_se,
        underflow,
    })
}

/// One sampled pair in the contraction estimate.
#[derive(Debug, Clone, Copy)]
pub struct PairRatio {
    pub d_in: f64,
    pub d_out: f64,
    pub ratio: f64,
}

#[derive(Debug, Clone)]
pub struct BirkhoffEstimate {
    /// `max d_H(A phi, A psi) / d_H(phi, psi)` over the sampled pairs; a lower
    /// bound on the contraction coefficient of `A`.
    pub mu_hat: f64,
    pub pairs: Vec<PairRatio>,
    pub skipped: usize,
}

/// A random element of the projective space whose log-density is smoothed
/// Gaussian noise rescaled to a log-range of 2.
pub fn random_density(grid: TorusGrid, key: RngKey) -> Result<ProjectiveDensity> {
    let mut rng = key.rng(Purpose::ProjectivePairs);
    let white: Vec<f64> = (0..grid.n())
        .map(|_| StandardNormal.sample(&mut rng))
        .collect();
    let smooth = heat_apply(&Field::new(grid, white)?, 0.01, 1.0)?;
    let (lo, hi) = (smooth.min(), smooth.max());
    let span = hi - lo;
    let g: Vec<f64> = if span > 0.0 {
        smooth.values().iter().map(|v| 2.0 * (v - lo) / span).collect()
    } else {
        vec![0.0; grid.n()]
    };
    ProjectiveDensity::from_log_values(grid, &g)
}

/// Empirical contraction coefficient of one period of the dynamics in the
/// potential `xi`.
pub fn birkhoff_coefficient_estimate(
    xi: &PotentialSample,
    tau: f64,
    prop: &mut Propagator,
    n_pairs: usize,
    key: RngKey,
) -> Result<BirkhoffEstimate> {
    if n_pairs == 0 {
        return Err(Error::invalid("n_pairs must be >= 1"));
    }
    let grid = xi.grid();
    let mut pairs = Vec::with_capacity(n_pairs);
    let mut skipped = 0;
    for p in 0..n_pairs as u64 {
        let phi = random_density(grid, key.with_index(2 * p))?;
        let psi = random_density(grid, key.with_index(2 * p + 1))?;
        let d_in = hilbert_distance(&phi, &psi);
        if d_in < DH_UNDERFLOW {
            skipped += 1;
            continue;
        }
        let a = prop.propagate_period(&phi, xi, tau)?.z_next;
        let b = prop.propagate_period(&psi, xi, tau)?.z_next;
        let d_out = hilbert_distance(&a, &b);
        pairs.push(PairRatio {
            d_in,
            d_out,
            ratio: d_out / d_in,
        });
    }
    if pairs.is_empty() {
        return Err(Error::invalid("every sampled pair was degenerate"));
    }
    let mu_hat = pairs.iter().map(|p| p.ratio).fold(0.0, f64::max);
    Ok(BirkhoffEstimate {
        mu_hat,
        pairs,
        skipped,
    })
}

/// `normalize(exp(cos 2 pi x))`, the second reference initial condition.
pub fn cosine_density(grid: TorusGrid) -> ProjectiveDensity {
    let g: Vec<f64> = grid.nodes().iter().map(|x| (2.0 * PI * x).cos()).collect();
    ProjectiveDensity::from_log_values(grid, &g).expect("cosine density is well defined")
}
