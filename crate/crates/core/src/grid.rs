//! Uniform periodic grid on the unit torus, rectangle-rule quadrature, the
//! discrete Fourier transform and the exact heat semigroup.
//!
//! Fourier coefficients follow the convention `c_k = dx * sum_j f(x_j) e^{-2 pi i k x_j}`,
//! the discrete analogue of `int_T e^{-2 pi i k x} f(x) dx`, so a constant
//! field `f = c` has `c_0 = c` and `cos(2 pi x)` has `c_{+1} = c_{-1} = 1/2`.

use std::f64::consts::PI;
use std::sync::Arc;

use rustfft::num_complex::Complex64;
use rustfft::{Fft, FftPlanner};

use crate::error::{Error, Result};

/// Uniform discretization of the torus `R/Z` with `n` nodes `x_j = j/n`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct TorusGrid {
    n: usize,
}

impl TorusGrid {
    pub fn new(n: usize) -> Result<Self> {
        if n < 2 {
            return Err(Error::invalid(format!("grid needs at least 2 nodes, got {n}")));
        }
        Ok(Self { n })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn dx(&self) -> f64 {
        1.0 / self.n as f64
    }

    pub fn node(&self, j: usize) -> f64 {
        j as f64 / self.n as f64
    }

    pub fn nodes(&self) -> Vec<f64> {
        (0..self.n).map(|j| self.node(j)).collect()
    }

    /// Integer frequency stored at FFT index `j`, in `-floor(n/2) ..= ceil(n/2) - 1`.
    pub fn frequency(&self, j: usize) -> i64 {
        let half_up = self.n.div_ceil(2);
        if j < half_up {
            j as i64
        } else {
            j as i64 - self.n as i64
        }
    }

    /// FFT index holding integer frequency `k`, if it is representable.
    pub fn index_of_frequency(&self, k: i64) -> Option<usize> {
        let n = self.n as i64;
        let lo = -(n / 2);
        let hi = (n + 1) / 2 - 1;
        if k < lo || k > hi {
            return None;
        }
        Some(k.rem_euclid(n) as usize)
    }

    /// Grid node closest to `x` (taken modulo 1).
    pub fn nearest_node(&self, x: f64) -> usize {
        let n = self.n as f64;
        let j = (x.rem_euclid(1.0) * n).round() as usize;
        j % self.n
    }

    pub fn integrate(&self, values: &[f64]) -> f64 {
        values.iter().sum::<f64>() * self.dx()
    }
}

/// Symbol of `-Laplacian` used for the heat semigroup.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default)]
pub enum LaplacianSymbol {
    /// `(2 pi k)^2`, the continuum operator on `R/Z`.
    #[default]
    Continuum,
    /// `4 n^2 sin^2(pi k / n)`, the eigenvalues of the periodic second-difference matrix.
    SecondDifference,
}

impl LaplacianSymbol {
    pub fn eval(self, k: i64, n: usize) -> f64 {
        match self {
            LaplacianSymbol::Continuum => {
                let w = 2.0 * PI * k as f64;
                w * w
            }
            LaplacianSymbol::SecondDifference => {
                let nf = n as f64;
                let s = (PI * k as f64 / nf).sin();
                4.0 * nf * nf * s * s
            }
        }
    }
}

/// Real grid function. All values are finite.
#[derive(Debug, Clone, PartialEq)]
pub struct Field {
    grid: TorusGrid,
    values: Vec<f64>,
}

impl Field {
    pub fn new(grid: TorusGrid, values: Vec<f64>) -> Result<Self> {
        if values.len() != grid.n() {
            return Err(Error::invalid(format!(
                "field has {} values on a grid of {} nodes",
                values.len(),
                grid.n()
            )));
        }
        if let Some(j) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::invalid(format!("non-finite field value at node {j}")));
        }
        Ok(Self { grid, values })
    }

    pub fn constant(grid: TorusGrid, c: f64) -> Self {
        Self {
            grid,
            values: vec![c; grid.n()],
        }
    }

    /// Samples `f` at the grid nodes. Panics if `f` returns a non-finite value.
    pub fn from_fn(grid: TorusGrid, f: impl Fn(f64) -> f64) -> Self {
        let values: Vec<f64> = (0..grid.n()).map(|j| f(grid.node(j))).collect();
        assert!(values.iter().all(|v| v.is_finite()), "from_fn produced a non-finite value");
        Self { grid, values }
    }

    pub fn grid(&self) -> TorusGrid {
        self.grid
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    pub fn integrate(&self) -> f64 {
        self.grid.integrate(&self.values)
    }

    pub fn max_abs(&self) -> f64 {
        self.values.iter().fold(0.0_f64, |m, v| m.max(v.abs()))
    }

    pub fn max(&self) -> f64 {
        self.values.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn min(&self) -> f64 {
        self.values.iter().copied().fold(f64::INFINITY, f64::min)
    }
}

/// Integral of a field by the rectangle rule, `dx * sum_j f(x_j)`.
pub fn integrate(f: &Field) -> f64 {
    f.integrate()
}

/// Discrete Fourier coefficients stored in FFT order.
#[derive(Debug, Clone, PartialEq)]
pub struct SpectralCoeffs {
    grid: TorusGrid,
    coeffs: Vec<Complex64>,
}

impl SpectralCoeffs {
    pub fn new(grid: TorusGrid, coeffs: Vec<Complex64>) -> Result<Self> {
        if coeffs.len() != grid.n() {
            return Err(Error::invalid(format!(
                "{} coefficients on a grid of {} nodes",
                coeffs.len(),
                grid.n()
            )));
        }
        Ok(Self { grid, coeffs })
    }

    pub fn grid(&self) -> TorusGrid {
        self.grid
    }

    /// Coefficient of integer frequency `k`; zero when `k` is not representable.
    pub fn coeff(&self, k: i64) -> Complex64 {
        self.grid
            .index_of_frequency(k)
            .map(|j| self.coeffs[j])
            .unwrap_or_default()
    }

    pub fn as_slice(&self) -> &[Complex64] {
        &self.coeffs
    }
}

/// Cached FFT plans for one grid size.
#[derive(Clone)]
pub struct Fourier {
    grid: TorusGrid,
    forward: Arc<dyn Fft<f64>>,
    inverse: Arc<dyn Fft<f64>>,
}

impl std::fmt::Debug for Fourier {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Fourier").field("grid", &self.grid).finish()
    }
}

impl Fourier {
    pub fn new(grid: TorusGrid) -> Self {
        let mut planner = FftPlanner::new();
        Self {
            grid,
            forward: planner.plan_fft_forward(grid.n()),
            inverse: planner.plan_fft_inverse(grid.n()),
        }
    }

    pub fn grid(&self) -> TorusGrid {
        self.grid
    }

    /// Real values to coefficients, in place on `buf` (normalized by `dx`).
    pub fn forward_into(&self, values: &[f64], buf: &mut Vec<Complex64>) {
        buf.clear();
        buf.extend(values.iter().map(|&v| Complex64::new(v, 0.0)));
        self.forward.process(buf);
        let dx = self.grid.dx();
        for c in buf.iter_mut() {
            *c *= dx;
        }
    }

    /// Coefficients to real values; `buf` is consumed as scratch.
    pub fn inverse_into(&self, buf: &mut [Complex64], values: &mut [f64]) {
        self.inverse.process(buf);
        for (v, c) in values.iter_mut().zip(buf.iter()) {
            *v = c.re;
        }
    }

    pub fn spectral_forward(&self, f: &Field) -> Result<SpectralCoeffs> {
        self.check(f.grid())?;
        let mut buf = Vec::with_capacity(self.grid.n());
        self.forward_into(f.values(), &mut buf);
        SpectralCoeffs::new(self.grid, buf)
    }

    pub fn spectral_inverse(&self, c: &SpectralCoeffs) -> Result<Field> {
        self.check(c.grid())?;
        let mut buf = c.coeffs.clone();
        let mut values = vec![0.0; self.grid.n()];
        self.inverse_into(&mut buf, &mut values);
        Field::new(self.grid, values)
    }

    fn check(&self, grid: TorusGrid) -> Result<()> {
        if grid != self.grid {
            return Err(Error::invalid(format!(
                "grid with {} nodes passed to a transform planned for {}",
                grid.n(),
                self.grid.n()
            )));
        }
        Ok(())
    }
}

pub fn spectral_forward(f: &Field) -> Result<SpectralCoeffs> {
    Fourier::new(f.grid()).spectral_forward(f)
}

pub fn spectral_inverse(c: &SpectralCoeffs) -> Result<Field> {
    Fourier::new(c.grid()).spectral_inverse(c)
}

/// Fourier multipliers `exp(-t kappa symbol(k))` of the heat semigroup `e^{t kappa Laplacian}`.
pub fn heat_multipliers(grid: TorusGrid, t: f64, kappa: f64, symbol: LaplacianSymbol) -> Vec<f64> {
    (0..grid.n())
        .map(|j| {
            let k = grid.frequency(j);
            if k == 0 {
                1.0
            } else {
                (-t * kappa * symbol.eval(k, grid.n())).exp()
            }
        })
        .collect()
}

/// `e^{t kappa Laplacian} f` on the torus, with Fourier symbol `-(2 pi k)^2`.
pub fn heat_apply(f: &Field, t: f64, kappa: f64) -> Result<Field> {
    heat_apply_with(f, t, kappa, LaplacianSymbol::Continuum)
}

pub fn heat_apply_with(f: &Field, t: f64, kappa: f64, symbol: LaplacianSymbol) -> Result<Field> {
    if !(t >= 0.0) || !t.is_finite() {
        return Err(Error::invalid(format!("heat time must be finite and >= 0, got {t}")));
    }
    if !(kappa > 0.0) || !kappa.is_finite() {
        return Err(Error::invalid(format!("kappa must be positive, got {kappa}")));
    }
    if t == 0.0 {
        return Ok(f.clone());
    }
    let grid = f.grid();
    let fourier = Fourier::new(grid);
    let mult = heat_multipliers(grid, t, kappa, symbol);
    let mut buf = Vec::with_capacity(grid.n());
    fourier.forward_into(f.values(), &mut buf);
    for (c, m) in buf.iter_mut().zip(&mult) {
        *c *= *m;
    }
    let mut values = vec![0.0; grid.n()];
    fourier.inverse_into(&mut buf, &mut values);
    let out = Field::new(grid, values)?;
    let floor = -1e-12 * f.max().abs().max(f64::MIN_POSITIVE);
    if f.min() > 0.0 && out.min() < floor {
        log::warn!(
            "heat_apply produced a negative overshoot {:e} from a positive field",
            out.min()
        );
    }
    Ok(out)
}
