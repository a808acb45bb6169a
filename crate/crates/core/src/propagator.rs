//! One renewal period of `du/dt = kappa Laplacian u + xi u` acting on a
//! projective density, with the mass tracked in log space.
//!
//! Three interchangeable schemes share one discrete operator, the periodic
//! second-difference Laplacian plus the diagonal potential:
//!
//! * [`Scheme::EigenExact`] diagonalizes `kappa L + diag(xi)` once per
//!   potential and applies `exp(tau * eigenvalues)` exactly;
//! * [`Scheme::StrangSplit`] alternates exact spectral heat half-steps with
//!   the pointwise factor `exp(dt xi)`;
//! * [`Scheme::CrankNicolson`] is theta = 1/2 time stepping, kept as an
//!   independent cross-check.
//!
//! A Feynman-Kac Monte Carlo estimate of the one-period mass is provided as
//! an oracle for all three.

use std::collections::HashMap;
use std::sync::Arc;

use nalgebra::{DMatrix, SymmetricEigen};
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use rustfft::num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{heat_multipliers, Fourier, LaplacianSymbol, TorusGrid};
use crate::noise::{center_spatially, NoiseKind, PotentialSample, RenewalPotential};
use crate::projective::{normalize_values, ProjectiveDensity};
use crate::rng::{Purpose, RngKey};
use crate::stats::Moments;

/// Eigen-modes whose factor relative to the top mode falls below
/// `exp(-MODE_CUTOFF)` are dropped; their contribution is below 1e-20.
const MODE_CUTOFF: f64 = 46.0;

/// Mid-period renormalization threshold for the stepping schemes.
const RESCALE_ABOVE: f64 = 1e100;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Scheme {
    #[serde(alias = "eigen")]
    EigenExact,
    #[serde(alias = "strang")]
    StrangSplit,
    #[serde(alias = "cn")]
    CrankNicolson,
}

impl Scheme {
    pub fn name(self) -> &'static str {
        match self {
            Scheme::EigenExact => "eigen_exact",
            Scheme::StrangSplit => "strang_split",
            Scheme::CrankNicolson => "crank_nicolson",
        }
    }
}

impl std::str::FromStr for Scheme {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "eigen_exact" | "eigen" => Ok(Scheme::EigenExact),
            "strang_split" | "strang" => Ok(Scheme::StrangSplit),
            "crank_nicolson" | "cn" => Ok(Scheme::CrankNicolson),
            other => Err(Error::invalid(format!("unknown scheme `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SchemeConfig {
    pub scheme: Scheme,
    /// Sub-step cap for the stepping schemes.
    pub dt_max: f64,
    pub kappa: f64,
    /// Heat symbol of the splitting sub-steps. The default matches the
    /// second-difference matrix used by the other two schemes.
    pub heat_symbol: LaplacianSymbol,
}

impl SchemeConfig {
    pub fn new(scheme: Scheme, dt_max: f64, kappa: f64) -> Result<Self> {
        let cfg = Self {
            scheme,
            dt_max,
            kappa,
            heat_symbol: LaplacianSymbol::SecondDifference,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn eigen(kappa: f64) -> Self {
        Self::new(Scheme::EigenExact, 1e-3, kappa).expect("valid kappa")
    }

    pub fn strang(dt_max: f64, kappa: f64) -> Self {
        Self::new(Scheme::StrangSplit, dt_max, kappa).expect("valid parameters")
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.dt_max > 0.0) || !self.dt_max.is_finite() {
            return Err(Error::invalid(format!("dt_max must be positive, got {}", self.dt_max)));
        }
        if !(self.kappa > 0.0) || !self.kappa.is_finite() {
            return Err(Error::invalid(format!("kappa must be positive, got {}", self.kappa)));
        }
        Ok(())
    }
}

/// Outcome of one renewal period.
#[derive(Debug, Clone)]
pub struct PeriodResult {
    pub z_next: ProjectiveDensity,
    /// `log int e^{tau H} z dx`.
    pub log_mass: f64,
    pub clamp_events: u64,
}

/// Applies `kappa L + diag(xi)` to `v` (periodic second difference).
pub fn apply_operator(xi: &[f64], kappa: f64, v: &[f64]) -> Vec<f64> {
    let n = v.len();
    let c = kappa * (n * n) as f64;
    (0..n)
        .map(|j| {
            let l = v[(j + n - 1) % n];
            let r = v[(j + 1) % n];
            c * (l - 2.0 * v[j] + r) + xi[j] * v[j]
        })
        .collect()
}

/// Dense `kappa L + diag(xi)`.
pub fn operator_matrix(xi: &PotentialSample, kappa: f64) -> DMatrix<f64> {
    let n = xi.grid().n();
    let c = kappa * (n * n) as f64;
    let mut m = DMatrix::zeros(n, n);
    for j in 0..n {
        m[(j, j)] += -2.0 * c + xi.values()[j];
        m[(j, (j + 1) % n)] += c;
        m[(j, (j + n - 1) % n)] += c;
    }
    m
}

/// Full eigendecomposition of `kappa L + diag(xi)`, modes sorted by
/// decreasing eigenvalue; the top eigenvector is sign-fixed positive.
#[derive(Debug, Clone)]
pub struct Eigensystem {
    n: usize,
    values: Vec<f64>,
    /// Column-major: mode `k` occupies `vectors[k*n .. (k+1)*n]`, unit 2-norm.
    vectors: Vec<f64>,
}

impl Eigensystem {
    pub fn compute(xi: &PotentialSample, kappa: f64) -> Result<Self> {
        let n = xi.grid().n();
        let m = operator_matrix(xi, kappa);
        let eig = SymmetricEigen::try_new(m, 1e-15, 10_000).ok_or_else(|| {
            Error::EigenSolver(format!(
                "no convergence for n = {n}, kappa = {kappa}, max |xi| = {:e}",
                xi.field().max_abs()
            ))
        })?;
        let mut order: Vec<usize> = (0..n).collect();
        order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
        let mut values = Vec::with_capacity(n);
        let mut vectors = Vec::with_capacity(n * n);
        for &k in &order {
            let v: Vec<f64> = eig.eigenvectors.column(k).iter().copied().collect();
            // Rayleigh quotient with the sparse operator: second-order accurate
            // in the eigenvector error, so far below the solver's backward error.
            let hv = apply_operator(xi.values(), kappa, &v);
            let num: f64 = v.iter().zip(&hv).map(|(a, b)| a * b).sum();
            let den: f64 = v.iter().map(|a| a * a).sum();
            values.push(num / den);
            vectors.extend(v);
        }
        if vectors[..n].iter().sum::<f64>() < 0.0 {
            for v in vectors[..n].iter_mut() {
                *v = -*v;
            }
        }
        if values.iter().any(|v| !v.is_finite()) || vectors.iter().any(|v| !v.is_finite()) {
            return Err(Error::EigenSolver("non-finite eigen data".into()));
        }
        Ok(Self { n, values, vectors })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn eigenvalues(&self) -> &[f64] {
        &self.values
    }

    pub fn mode(&self, k: usize) -> &[f64] {
        &self.vectors[k * self.n..(k + 1) * self.n]
    }

    pub fn top_value(&self) -> f64 {
        self.values[0]
    }

    pub fn top_vector(&self) -> &[f64] {
        self.mode(0)
    }

    /// `e^{tau (H - top)} z`; the returned log scale is `tau * top`.
    pub fn apply_exp(&self, z: &[f64], tau: f64) -> (Vec<f64>, f64) {
        let n = self.n;
        let top = self.values[0];
        let mut out = vec![0.0; n];
        for (k, &lam) in self.values.iter().enumerate() {
            let expo = tau * (lam - top);
            if expo < -MODE_CUTOFF {
                break;
            }
            let v = self.mode(k);
            let c: f64 = v.iter().zip(z).map(|(a, b)| a * b).sum();
            let w = c * expo.exp();
            for (o, a) in out.iter_mut().zip(v) {
                *o += w * a;
            }
        }
        (out, tau * top)
    }
}

fn potential_key(xi: &PotentialSample) -> Vec<u64> {
    xi.values().iter().map(|v| v.to_bits()).collect()
}

struct HeatSteps {
    h: f64,
    half: Vec<f64>,
    full: Vec<f64>,
}

/// Upper limit on sub-steps per period; beyond it a run is hopeless.
pub const MAX_SUBSTEPS: f64 = 1e8;

fn substeps(scheme: &str, tau: f64, dt: f64) -> Result<usize> {
    let steps = (tau / dt).ceil().max(1.0);
    if !(steps <= MAX_SUBSTEPS) {
        return Err(Error::breakdown(
            scheme,
            format!("period {tau} needs {steps:e} sub-steps of {dt:e}"),
        ));
    }
    Ok(steps as usize)
}

/// Propagator bound to one grid and scheme. Holds FFT plans and a bounded,
/// insert-only cache of eigendecompositions keyed by the exact potential
/// values; one instance per worker.
pub struct Propagator {
    grid: TorusGrid,
    cfg: SchemeConfig,
    fourier: Fourier,
    heat: Option<HeatSteps>,
    cache: HashMap<Vec<u64>, Arc<Eigensystem>>,
    cache_capacity: usize,
    buf: Vec<Complex64>,
}

impl Clone for Propagator {
    fn clone(&self) -> Self {
        Self {
            grid: self.grid,
            cfg: self.cfg,
            fourier: self.fourier.clone(),
            heat: None,
            cache: self.cache.clone(),
            cache_capacity: self.cache_capacity,
            buf: Vec::new(),
        }
    }
}

impl std::fmt::Debug for Propagator {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Propagator")
            .field("grid", &self.grid)
            .field("cfg", &self.cfg)
            .field("cached", &self.cache.len())
            .finish()
    }
}

/// Summary of a streamed evolution.
#[derive(Debug, Clone)]
pub struct EvolveSummary {
    pub total_log_mass: f64,
    pub z_final: ProjectiveDensity,
    pub clamp_events: u64,
}

/// Full record of an evolution, one entry per period.
#[derive(Debug, Clone)]
pub struct Evolution {
    pub total_log_mass: f64,
    pub z_final: ProjectiveDensity,
    pub per_period: Vec<PeriodResult>,
}

impl Propagator {
    pub fn new(grid: TorusGrid, cfg: SchemeConfig) -> Result<Self> {
        cfg.validate()?;
        Ok(Self {
            grid,
            cfg,
            fourier: Fourier::new(grid),
            heat: None,
            cache: HashMap::new(),
            cache_capacity: 64,
            buf: Vec::with_capacity(grid.n()),
        })
    }

    pub fn grid(&self) -> TorusGrid {
        self.grid
    }

    pub fn config(&self) -> &SchemeConfig {
        &self.cfg
    }

    pub fn kappa(&self) -> f64 {
        self.cfg.kappa
    }

    /// Eigendecomposition of `kappa L + diag(xi)`, cached by potential values.
    pub fn eigensystem(&mut self, xi: &PotentialSample) -> Result<Arc<Eigensystem>> {
        let key = potential_key(xi);
        if let Some(e) = self.cache.get(&key) {
            return Ok(Arc::clone(e));
        }
        let e = Arc::new(Eigensystem::compute(xi, self.cfg.kappa)?);
        if self.cache.len() < self.cache_capacity {
            self.cache.insert(key, Arc::clone(&e));
        }
        Ok(e)
    }

    pub fn propagate_period(
        &mut self,
        z: &ProjectiveDensity,
        xi: &PotentialSample,
        tau: f64,
    ) -> Result<PeriodResult> {
        if !(tau > 0.0) || !tau.is_finite() {
            return Err(Error::invalid(format!("tau must be positive, got {tau}")));
        }
        if z.grid() != self.grid || xi.grid() != self.grid {
            return Err(Error::invalid("density, potential and propagator grids differ"));
        }
        let (values, log_scale) = match self.cfg.scheme {
            Scheme::EigenExact => {
                let e = self.eigensystem(xi)?;
                e.apply_exp(z.values(), tau)
            }
            Scheme::StrangSplit => self.strang(z.values(), xi, tau)?,
            Scheme::CrankNicolson => self.crank_nicolson(z.values(), xi, tau)?,
        };
        self.finish(values, log_scale, tau)
    }

    fn finish(&self, values: Vec<f64>, log_scale: f64, tau: f64) -> Result<PeriodResult> {
        if let Some(j) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::breakdown(
                self.cfg.scheme.name(),
                format!("non-finite value at node {j} (tau = {tau})"),
            ));
        }
        let (lo, hi) = values
            .iter()
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &v| (a.min(v), b.max(v)));
        let normalized = normalize_values(self.grid, values).map_err(|e| {
            Error::breakdown(
                self.cfg.scheme.name(),
                format!("{e}; tau = {tau}, min = {lo:e}, max = {hi:e}"),
            )
        })?;
        let log_mass = log_scale + normalized.log_mass;
        if !log_mass.is_finite() {
            return Err(Error::breakdown(self.cfg.scheme.name(), "non-finite log mass"));
        }
        Ok(PeriodResult {
            z_next: normalized.density,
            log_mass,
            clamp_events: normalized.clamp_events,
        })
    }

    fn strang(&mut self, z: &[f64], xi: &PotentialSample, tau: f64) -> Result<(Vec<f64>, f64)> {
        let xmax = xi.field().max_abs();
        let mut dt = self.cfg.dt_max;
        if xmax > 0.0 {
            dt = dt.min(1.0 / (10.0 * xmax));
        }
        let steps = substeps("strang_split", tau, dt)?;
        let h = tau / steps as f64;
        let stale = self.heat.as_ref().is_none_or(|s| s.h != h);
        if stale {
            let (kappa, sym) = (self.cfg.kappa, self.cfg.heat_symbol);
            self.heat = Some(HeatSteps {
                h,
                half: heat_multipliers(self.grid, 0.5 * h, kappa, sym),
                full: heat_multipliers(self.grid, h, kappa, sym),
            });
        }
        let heat = self.heat.as_ref().expect("heat steps initialized");
        let growth: Vec<f64> = xi.values().iter().map(|v| (h * v).exp()).collect();
        let mut u = z.to_vec();
        let mut log_scale = 0.0;
        let buf = &mut self.buf;
        self.fourier.forward_into(&u, buf);
        for (c, m) in buf.iter_mut().zip(&heat.half) {
            *c *= *m;
        }
        for step in 0..steps {
            self.fourier.inverse_into(buf, &mut u);
            let mut peak = 0.0_f64;
            for (v, g) in u.iter_mut().zip(&growth) {
                *v *= g;
                peak = peak.max(v.abs());
            }
            if peak > RESCALE_ABOVE {
                for v in u.iter_mut() {
                    *v /= peak;
                }
                log_scale += peak.ln();
            }
            self.fourier.forward_into(&u, buf);
            let mult = if step + 1 == steps { &heat.half } else { &heat.full };
            for (c, m) in buf.iter_mut().zip(mult) {
                *c *= *m;
            }
        }
        self.fourier.inverse_into(buf, &mut u);
        Ok((u, log_scale))
    }

    fn crank_nicolson(
        &mut self,
        z: &[f64],
        xi: &PotentialSample,
        tau: f64,
    ) -> Result<(Vec<f64>, f64)> {
        let n = self.grid.n();
        let steps = substeps("crank_nicolson", tau, self.cfg.dt_max)?;
        let h = tau / steps as f64;
        let c = self.cfg.kappa * (n * n) as f64;
        let off = -0.5 * h * c;
        let diag: Vec<f64> = xi
            .values()
            .iter()
            .map(|v| 1.0 + h * c - 0.5 * h * v)
            .collect();
        let mut u = z.to_vec();
        let mut log_scale = 0.0;
        for _ in 0..steps {
            let au = apply_operator(xi.values(), self.cfg.kappa, &u);
            let rhs: Vec<f64> = u.iter().zip(&au).map(|(a, b)| a + 0.5 * h * b).collect();
            u = solve_cyclic(&diag, off, &rhs).ok_or_else(|| {
                Error::breakdown("crank_nicolson", format!("singular step matrix (h = {h:e})"))
            })?;
            let peak = u.iter().fold(0.0_f64, |m, v| m.max(v.abs()));
            if peak > RESCALE_ABOVE {
                for v in u.iter_mut() {
                    *v /= peak;
                }
                log_scale += peak.ln();
            }
        }
        Ok((u, log_scale))
    }

    /// Runs `count` periods starting at renewal index `start` and calls
    /// `visit(index, &result)` after each. With `centered`, every potential
    /// is replaced by its spatially centered version, which leaves the
    /// projective trajectory unchanged and removes `tau <xi, 1>` from each
    /// log-mass increment.
    pub fn evolve_with<F>(
        &mut self,
        u0: &ProjectiveDensity,
        r: &RenewalPotential,
        start: u64,
        count: u64,
        centered: bool,
        mut visit: F,
    ) -> Result<EvolveSummary>
    where
        F: FnMut(u64, &PeriodResult),
    {
        let mut z = u0.clone();
        let mut total = 0.0;
        let mut clamps = 0;
        for i in start..start + count {
            let raw = r.sample(i);
            let xi = if centered { center_spatially(&raw) } else { raw };
            let res = self.propagate_period(&z, &xi, r.tau())?;
            total += res.log_mass;
            clamps += res.clamp_events;
            visit(i, &res);
            z = res.z_next;
        }
        Ok(EvolveSummary {
            total_log_mass: total,
            z_final: z,
            clamp_events: clamps,
        })
    }

    /// Evolution keeping every [`PeriodResult`]; memory grows with `n_periods`.
    pub fn evolve(
        &mut self,
        u0: &ProjectiveDensity,
        r: &RenewalPotential,
        n_periods: usize,
    ) -> Result<Evolution> {
        if n_periods == 0 {
            return Err(Error::invalid("n_periods must be >= 1"));
        }
        let mut per_period = Vec::with_capacity(n_periods);
        let summary = self.evolve_with(u0, r, 0, n_periods as u64, false, |_, res| {
            per_period.push(res.clone())
        })?;
        Ok(Evolution {
            total_log_mass: summary.total_log_mass,
            z_final: summary.z_final,
            per_period,
        })
    }
}

/// Solves the periodic tridiagonal system with diagonal `diag` and constant
/// off-diagonal (and corner) entries `off`.
fn solve_cyclic(diag: &[f64], off: f64, rhs: &[f64]) -> Option<Vec<f64>> {
    let n = diag.len();
    if n == 2 {
        // Both neighbours of a node are the same node.
        let (a, b, c, d) = (diag[0], 2.0 * off, 2.0 * off, diag[1]);
        let det = a * d - b * c;
        if det == 0.0 {
            return None;
        }
        return Some(vec![
            (d * rhs[0] - b * rhs[1]) / det,
            (a * rhs[1] - c * rhs[0]) / det,
        ]);
    }
    let gamma = -diag[0];
    let mut bb = diag.to_vec();
    bb[0] -= gamma;
    bb[n - 1] -= off * off / gamma;
    let x = solve_tridiagonal(&bb, off, rhs)?;
    let mut u = vec![0.0; n];
    u[0] = gamma;
    u[n - 1] = off;
    let w = solve_tridiagonal(&bb, off, &u)?;
    let fact = (x[0] + off * x[n - 1] / gamma) / (1.0 + w[0] + off * w[n - 1] / gamma);
    Some(x.iter().zip(&w).map(|(a, b)| a - fact * b).collect())
}

fn solve_tridiagonal(diag: &[f64], off: f64, rhs: &[f64]) -> Option<Vec<f64>> {
    let n = diag.len();
    let mut c_prime = vec![0.0; n];
    let mut x = vec![0.0; n];
    let mut beta = diag[0];
    if beta == 0.0 {
        return None;
    }
    x[0] = rhs[0] / beta;
    for j in 1..n {
        c_prime[j] = off / beta;
        beta = diag[j] - off * c_prime[j];
        if beta == 0.0 {
            return None;
        }
        x[j] = (rhs[j] - off * x[j - 1]) / beta;
    }
    for j in (0..n - 1).rev() {
        x[j] -= c_prime[j + 1] * x[j + 1];
    }
    Some(x)
}

/// One period with a fresh propagator (no cache reuse).
pub fn propagate_period(
    z: &ProjectiveDensity,
    xi: &PotentialSample,
    tau: f64,
    cfg: SchemeConfig,
) -> Result<PeriodResult> {
    Propagator::new(xi.grid(), cfg)?.propagate_period(z, xi, tau)
}

pub fn evolve(
    u0: &ProjectiveDensity,
    r: &RenewalPotential,
    n_periods: usize,
    cfg: SchemeConfig,
) -> Result<Evolution> {
    Propagator::new(r.grid(), cfg)?.evolve(u0, r, n_periods)
}

const FK_CHUNK: usize = 4096;

/// Monte Carlo estimate of `int (e^{tau H} z) dx` from the Feynman-Kac
/// formula `E_{x ~ Unif}[ z(B_tau) exp(int_0^tau xi(B_s) ds) ]`, with
/// Brownian increments of variance `2 kappa dt`, nearest-node evaluation of
/// `xi` and `z`, and the left-endpoint rule in time. Returns the mean and its
/// standard error.
pub fn feynman_kac_mass(
    xi: &PotentialSample,
    tau: f64,
    z: &ProjectiveDensity,
    kappa: f64,
    n_paths: usize,
    dt_fk: f64,
    key: RngKey,
) -> Result<(f64, f64)> {
    if xi.kind() == NoiseKind::WhiteNoise {
        return Err(Error::Unsupported(
            "Feynman-Kac path integrals are not grid-stable for white noise".into(),
        ));
    }
    if !(tau > 0.0) || !(dt_fk > 0.0) || dt_fk > tau {
        return Err(Error::invalid(format!(
            "need 0 < dt_fk <= tau, got dt_fk = {dt_fk}, tau = {tau}"
        )));
    }
    if !(kappa > 0.0) || n_paths == 0 {
        return Err(Error::invalid("kappa must be positive and n_paths >= 1"));
    }
    let grid = xi.grid();
    let steps = (tau / dt_fk).ceil() as usize;
    let h = tau / steps as f64;
    let sd = (2.0 * kappa * h).sqrt();
    let n_chunks = n_paths.div_ceil(FK_CHUNK);
    let chunks: Vec<Moments> = (0..n_chunks)
        .into_par_iter()
        .map(|c| {
            let mut rng = key.with_index(c as u64).rng(Purpose::FeynmanKac);
            let len = FK_CHUNK.min(n_paths - c * FK_CHUNK);
            let mut m = Moments::new();
            for _ in 0..len {
                let mut x: f64 = rng.random();
                let mut acc = 0.0;
                for _ in 0..steps {
                    acc += xi.values()[grid.nearest_node(x)] * h;
                    let g: f64 = StandardNormal.sample(&mut rng);
                    x += sd * g;
                }
                m.push(z.values()[grid.nearest_node(x)] * acc.exp());
            }
            m
        })
        .collect();
    let mut total = Moments::new();
    for m in &chunks {
        total.merge(m);
    }
    Ok((total.mean(), total.stderr()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::projective::{cosine_density, hilbert_distance};
    use std::f64::consts::PI;

    fn schemes(kappa: f64) -> Vec<SchemeConfig> {
        vec![
            SchemeConfig::eigen(kappa),
            SchemeConfig::strang(1e-3, kappa),
            SchemeConfig::new(Scheme::CrankNicolson, 1e-3, kappa).unwrap(),
        ]
    }

    #[test]
    fn zero_potential_keeps_the_constant() {
        let g = TorusGrid::new(64).unwrap();
        let one = ProjectiveDensity::uniform(g);
        let xi = PotentialSample::constant(g, 0.0);
        for cfg in schemes(1.0) {
            let r = propagate_period(&one, &xi, 0.3, cfg).unwrap();
            assert!(r.log_mass.abs() < 1e-12, "{:?}: {}", cfg.scheme, r.log_mass);
            assert!(r.z_next.values().iter().all(|v| (v - 1.0).abs() < 1e-12));
        }
    }

    #[test]
    fn constant_potential_adds_tau_c() {
        let g = TorusGrid::new(64).unwrap();
        let z = cosine_density(g);
        let xi = PotentialSample::constant(g, 0.7);
        let tau = 0.05;
        let heat = crate::grid::heat_apply_with(
            z.field(),
            tau,
            1.0,
            LaplacianSymbol::SecondDifference,
        )
        .unwrap();
        for cfg in schemes(1.0) {
            let r = propagate_period(&z, &xi, tau, cfg).unwrap();
            if cfg.scheme == Scheme::CrankNicolson {
                // The constant mode grows by the (1,1) Pade factor each step.
                let h = tau / (tau / cfg.dt_max).ceil();
                let pade = (tau / h) * ((1.0 + 0.35 * h) / (1.0 - 0.35 * h)).ln();
                assert!((r.log_mass - pade).abs() < 1e-12);
                assert!((r.log_mass - 0.7 * tau).abs() < 1e-8);
            } else {
                assert!((r.log_mass - 0.7 * tau).abs() < 1e-12, "{:?}", cfg.scheme);
                for (a, b) in r.z_next.values().iter().zip(heat.values()) {
                    assert!((a - b).abs() < 1e-10, "{:?}", cfg.scheme);
                }
            }
        }
    }

    #[test]
    fn strang_matches_eigen_on_cosine_potential() {
        let g = TorusGrid::new(256).unwrap();
        let xi = PotentialSample::from_fn(g, |x| (2.0 * PI * x).cos());
        let one = ProjectiveDensity::uniform(g);
        let exact = propagate_period(&one, &xi, 0.1, SchemeConfig::eigen(1.0)).unwrap();
        let split = propagate_period(&one, &xi, 0.1, SchemeConfig::strang(1e-3, 1.0)).unwrap();
        assert!((exact.log_mass - split.log_mass).abs() < 1e-6);
        let cn = propagate_period(
            &one,
            &xi,
            0.1,
            SchemeConfig::new(Scheme::CrankNicolson, 1e-4, 1.0).unwrap(),
        )
        .unwrap();
        assert!((exact.log_mass - cn.log_mass).abs() < 1e-6);
    }

    #[test]
    fn scaling_input_only_shifts_log_mass() {
        let g = TorusGrid::new(32).unwrap();
        let xi = PotentialSample::from_fn(g, |x| (2.0 * PI * x).sin() + 0.3);
        let z = cosine_density(g);
        let mut p = Propagator::new(g, SchemeConfig::eigen(1.0)).unwrap();
        let e = p.eigensystem(&xi).unwrap();
        let scaled: Vec<f64> = z.values().iter().map(|v| 3.0 * v).collect();
        let (a, sa) = e.apply_exp(z.values(), 0.2);
        let (b, sb) = e.apply_exp(&scaled, 0.2);
        assert_eq!(sa, sb);
        let ma: f64 = a.iter().sum();
        let mb: f64 = b.iter().sum();
        assert!(((mb / ma).ln() - 3.0_f64.ln()).abs() < 1e-13);
    }

    #[test]
    fn two_half_periods_compose() {
        let g = TorusGrid::new(64).unwrap();
        let xi = PotentialSample::from_fn(g, |x| 2.0 * (2.0 * PI * x).cos() - (6.0 * PI * x).sin());
        let z = cosine_density(g);
        let mut p = Propagator::new(g, SchemeConfig::eigen(1.0)).unwrap();
        let full = p.propagate_period(&z, &xi, 0.4).unwrap();
        let h1 = p.propagate_period(&z, &xi, 0.2).unwrap();
        let h2 = p.propagate_period(&h1.z_next, &xi, 0.2).unwrap();
        assert!((full.log_mass - h1.log_mass - h2.log_mass).abs() < 1e-8);
        assert!(hilbert_distance(&full.z_next, &h2.z_next) < 1e-8);
    }

    #[test]
    fn cyclic_solver_matches_dense() {
        for n in [2usize, 3, 5, 16] {
            let g = TorusGrid::new(n).unwrap();
            let xi = PotentialSample::from_fn(g, |x| (2.0 * PI * x).cos());
            let h = 1e-3;
            let m = DMatrix::<f64>::identity(n, n) - operator_matrix(&xi, 1.0) * (0.5 * h);
            let c = (n * n) as f64;
            let diag: Vec<f64> = xi.values().iter().map(|v| 1.0 + h * c - 0.5 * h * v).collect();
            let rhs: Vec<f64> = (0..n).map(|j| 1.0 + j as f64).collect();
            let x = solve_cyclic(&diag, -0.5 * h * c, &rhs).unwrap();
            let back = &m * nalgebra::DVector::from_vec(x);
            for j in 0..n {
                assert!((back[j] - rhs[j]).abs() < 1e-10, "n = {n}");
            }
        }
    }

    #[test]
    fn feynman_kac_deterministic_cases() {
        let g = TorusGrid::new(64).unwrap();
        let one = ProjectiveDensity::uniform(g);
        let key = RngKey::new(1, 0, 0);
        let zero = PotentialSample::constant(g, 0.0);
        assert_eq!(feynman_kac_mass(&zero, 0.2, &one, 1.0, 1000, 0.01, key).unwrap(), (1.0, 0.0));
        let c = PotentialSample::constant(g, 0.8);
        let (est, se) = feynman_kac_mass(&c, 0.2, &one, 1.0, 1000, 0.01, key).unwrap();
        assert!((est - (0.16_f64).exp()).abs() < 1e-12);
        assert_eq!(se, 0.0);
    }

    #[test]
    fn feynman_kac_argument_checks() {
        let g = TorusGrid::new(64).unwrap();
        let one = ProjectiveDensity::uniform(g);
        let key = RngKey::new(1, 0, 0);
        let zero = PotentialSample::constant(g, 0.0);
        assert!(matches!(
            feynman_kac_mass(&zero, 0.1, &one, 1.0, 10, 0.2, key),
            Err(Error::InvalidArgument(_))
        ));
        let white = crate::noise::sample_potential(&crate::noise::NoiseSpec::WhiteNoise, g, key).unwrap();
        assert!(matches!(
            feynman_kac_mass(&white, 0.1, &one, 1.0, 10, 0.01, key),
            Err(Error::Unsupported(_))
        ));
    }

    #[test]
    fn scheme_names_parse() {
        for s in [Scheme::EigenExact, Scheme::StrangSplit, Scheme::CrankNicolson] {
            assert_eq!(s.name().parse::<Scheme>().unwrap(), s);
        }
        assert!("rk4".parse::<Scheme>().is_err());
        assert!(SchemeConfig::new(Scheme::StrangSplit, 0.0, 1.0).is_err());
        assert!(SchemeConfig::new(Scheme::StrangSplit, 1e-3, -1.0).is_err());
    }
}
