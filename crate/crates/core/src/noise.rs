//! Random environments: the frozen potential classes, the renewal potential
//! that resamples them every `tau` time units, and the small-`tau` variance functional.

use std::f64::consts::PI;

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{Field, TorusGrid};
use crate::rng::{Purpose, RngKey};

/// Centered scalar law with standard deviation `sigma`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Law {
    /// `+-sigma` with probability 1/2 each.
    Rademacher,
    /// Uniform on `[-sqrt(3) sigma, sqrt(3) sigma]`.
    #[serde(alias = "uniform")]
    UniformSym,
    /// `N(0, sigma^2)`.
    #[serde(alias = "gaussian")]
    CenteredGaussian,
}

impl Law {
    pub fn draw<R: Rng + ?Sized>(self, sigma: f64, rng: &mut R) -> f64 {
        match self {
            Law::Rademacher => {
                if rng.random::<bool>() {
                    sigma
                } else {
                    -sigma
                }
            }
            Law::UniformSym => {
                let h = 3.0_f64.sqrt() * sigma;
                rng.random_range(-h..h)
            }
            Law::CenteredGaussian => {
                let g: f64 = StandardNormal.sample(rng);
                sigma * g
            }
        }
    }

    fn name(self) -> &'static str {
        match self {
            Law::Rademacher => "rademacher",
            Law::UniformSym => "uniform",
            Law::CenteredGaussian => "gaussian",
        }
    }
}

/// Multipliers of the random Fourier series.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Multiplier {
    #[default]
    Gaussian,
    Rademacher,
}

/// The noise classes. Every law is centered pointwise.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum NoiseSpec {
    /// `xi = 0`; the control case with `lambda = 0`.
    Zero,
    /// `sum_i X_i 1_{A_i}` over `m` equal node-aligned blocks, `X_i` i.i.d.
    #[serde(alias = "piecewise")]
    PiecewiseConstant { m: usize, law: Law, sigma: f64 },
    /// `sum_{k=1}^{K} k^{-(alpha + 1/2)} (g_k cos 2 pi k x + g'_k sin 2 pi k x)`.
    #[serde(alias = "holder")]
    HolderFourier {
        alpha: f64,
        k_max: usize,
        #[serde(default)]
        multipliers: Multiplier,
    },
    /// Spatial white noise: i.i.d. `N(0, 1/dx)` per node.
    #[serde(alias = "white")]
    WhiteNoise,
    /// A single draw of `law`, constant in space.
    #[serde(alias = "constant")]
    ConstantInSpace { law: Law, sigma: f64 },
}

/// Tag describing where a potential came from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NoiseKind {
    Zero,
    PiecewiseConstant,
    HolderFourier,
    WhiteNoise,
    ConstantInSpace,
    /// A hand-built deterministic potential.
    Custom,
}

impl NoiseKind {
    pub fn name(self) -> &'static str {
        match self {
            NoiseKind::Zero => "zero",
            NoiseKind::PiecewiseConstant => "piecewise",
            NoiseKind::HolderFourier => "holder",
            NoiseKind::WhiteNoise => "white",
            NoiseKind::ConstantInSpace => "constant",
            NoiseKind::Custom => "custom",
        }
    }

    /// Realizations are bounded functions (not distributions).
    pub fn is_bounded(self) -> bool {
        !matches!(self, NoiseKind::WhiteNoise)
    }
}

impl NoiseSpec {
    pub fn kind(&self) -> NoiseKind {
        match self {
            NoiseSpec::Zero => NoiseKind::Zero,
            NoiseSpec::PiecewiseConstant { .. } => NoiseKind::PiecewiseConstant,
            NoiseSpec::HolderFourier { .. } => NoiseKind::HolderFourier,
            NoiseSpec::WhiteNoise => NoiseKind::WhiteNoise,
            NoiseSpec::ConstantInSpace { .. } => NoiseKind::ConstantInSpace,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let check_sigma = |sigma: f64| {
            if sigma > 0.0 && sigma.is_finite() {
                Ok(())
            } else {
                Err(Error::invalid(format!("sigma must be positive, got {sigma}")))
            }
        };
        match *self {
            NoiseSpec::Zero | NoiseSpec::WhiteNoise => Ok(()),
            NoiseSpec::PiecewiseConstant { m, sigma, .. } => {
                if m == 0 {
                    return Err(Error::invalid("interval count m must be >= 1"));
                }
                check_sigma(sigma)
            }
            NoiseSpec::HolderFourier { alpha, k_max, .. } => {
                if !(alpha > 0.0 && alpha < 1.0) {
                    return Err(Error::invalid(format!("alpha must lie in (0,1), got {alpha}")));
                }
                if k_max == 0 {
                    return Err(Error::invalid("mode cutoff K must be >= 1"));
                }
                Ok(())
            }
            NoiseSpec::ConstantInSpace { sigma, .. } => check_sigma(sigma),
        }
    }

    /// Checks that realizations are exactly representable on `grid`.
    pub fn check_grid(&self, grid: TorusGrid) -> Result<()> {
        self.validate()?;
        match *self {
            NoiseSpec::PiecewiseConstant { m, .. } if grid.n() % m != 0 => Err(Error::invalid(
                format!("grid of {} nodes is not divisible into {m} blocks", grid.n()),
            )),
            NoiseSpec::HolderFourier { k_max, .. } if 2 * k_max >= grid.n() => {
                Err(Error::invalid(format!(
                    "mode cutoff {k_max} is not below the Nyquist frequency of a {}-node grid",
                    grid.n()
                )))
            }
            _ => Ok(()),
        }
    }

    /// Compact `key=value;...` description without commas.
    pub fn params_string(&self) -> String {
        match *self {
            NoiseSpec::Zero | NoiseSpec::WhiteNoise => String::new(),
            NoiseSpec::PiecewiseConstant { m, law, sigma } => {
                format!("m={m};law={};sigma={sigma}", law.name())
            }
            NoiseSpec::HolderFourier {
                alpha,
                k_max,
                multipliers,
            } => format!(
                "alpha={alpha};k_max={k_max};multipliers={}",
                match multipliers {
                    Multiplier::Gaussian => "gaussian",
                    Multiplier::Rademacher => "rademacher",
                }
            ),
            NoiseSpec::ConstantInSpace { law, sigma } => {
                format!("law={};sigma={sigma}", law.name())
            }
        }
    }
}

/// Fourier amplitude `a_k = k^{-(alpha + 1/2)}`.
pub fn holder_amplitude(alpha: f64, k: usize) -> f64 {
    (k as f64).powf(-(alpha + 0.5))
}

/// One frozen environment on the grid.
#[derive(Debug, Clone, PartialEq)]
pub struct PotentialSample {
    field: Field,
    kind: NoiseKind,
}

impl PotentialSample {
    pub fn new(field: Field, kind: NoiseKind) -> Self {
        Self { field, kind }
    }

    /// A deterministic potential given by a function of `x`.
    pub fn from_fn(grid: TorusGrid, f: impl Fn(f64) -> f64) -> Self {
        Self::new(Field::from_fn(grid, f), NoiseKind::Custom)
    }

    pub fn constant(grid: TorusGrid, c: f64) -> Self {
        let kind = if c == 0.0 {
            NoiseKind::Zero
        } else {
            NoiseKind::Custom
        };
        Self::new(Field::constant(grid, c), kind)
    }

    pub fn field(&self) -> &Field {
        &self.field
    }

    pub fn values(&self) -> &[f64] {
        self.field.values()
    }

    pub fn grid(&self) -> TorusGrid {
        self.field.grid()
    }

    pub fn kind(&self) -> NoiseKind {
        self.kind
    }

    pub fn mean(&self) -> f64 {
        self.field.integrate()
    }
}

/// Draws one environment. Pure in `(spec, grid, key)`.
pub fn sample_potential(spec: &NoiseSpec, grid: TorusGrid, key: RngKey) -> Result<PotentialSample> {
    spec.check_grid(grid)?;
    let n = grid.n();
    let mut rng = key.rng(Purpose::Potential);
    let values = match *spec {
        NoiseSpec::Zero => vec![0.0; n],
        NoiseSpec::PiecewiseConstant { m, law, sigma } => {
            let block = n / m;
            let mut v = Vec::with_capacity(n);
            for _ in 0..m {
                let x = law.draw(sigma, &mut rng);
                v.extend(std::iter::repeat_n(x, block));
            }
            v
        }
        NoiseSpec::HolderFourier {
            alpha,
            k_max,
            multipliers,
        } => {
            let mut v = vec![0.0; n];
            for k in 1..=k_max {
                let a = holder_amplitude(alpha, k);
                let (g, h) = match multipliers {
                    Multiplier::Gaussian => {
                        let g: f64 = StandardNormal.sample(&mut rng);
                        let h: f64 = StandardNormal.sample(&mut rng);
                        (g, h)
                    }
                    Multiplier::Rademacher => (
                        Law::Rademacher.draw(1.0, &mut rng),
                        Law::Rademacher.draw(1.0, &mut rng),
                    ),
                };
                for (j, vj) in v.iter_mut().enumerate() {
                    let phase = 2.0 * PI * ((k * j) % n) as f64 / n as f64;
                    *vj += a * (g * phase.cos() + h * phase.sin());
                }
            }
            v
        }
        NoiseSpec::WhiteNoise => {
            let sd = (n as f64).sqrt();
            (0..n)
                .map(|_| {
                    let g: f64 = StandardNormal.sample(&mut rng);
                    sd * g
                })
                .collect()
        }
        NoiseSpec::ConstantInSpace { law, sigma } => vec![law.draw(sigma, &mut rng); n],
    };
    Ok(PotentialSample::new(Field::new(grid, values)?, spec.kind()))
}

/// Removes the spatial mean: `xi - <xi, 1>`.
pub fn center_spatially(p: &PotentialSample) -> PotentialSample {
    let mean = p.mean();
    let values = p.values().iter().map(|v| v - mean).collect();
    PotentialSample::new(
        Field::new(p.grid(), values).expect("centering keeps values finite"),
        p.kind(),
    )
}

/// `xi^tau(t) = xi^{floor(t/tau)}`: i.i.d. environments renewed every `tau`.
#[derive(Debug, Clone, PartialEq)]
pub struct RenewalPotential {
    spec: NoiseSpec,
    grid: TorusGrid,
    tau: f64,
    seed: u64,
    stream: u64,
}

impl RenewalPotential {
    pub fn new(spec: NoiseSpec, grid: TorusGrid, tau: f64, seed: u64, stream: u64) -> Result<Self> {
        if !(tau > 0.0) || !tau.is_finite() {
            return Err(Error::invalid(format!("renewal period must be positive, got {tau}")));
        }
        spec.check_grid(grid)?;
        Ok(Self {
            spec,
            grid,
            tau,
            seed,
            stream,
        })
    }

    pub fn spec(&self) -> &NoiseSpec {
        &self.spec
    }

    pub fn grid(&self) -> TorusGrid {
        self.grid
    }

    pub fn tau(&self) -> f64 {
        self.tau
    }

    pub fn key(&self, index: u64) -> RngKey {
        RngKey::new(self.seed, self.stream, index)
    }

    /// Environment of period `index`.
    pub fn sample(&self, index: u64) -> PotentialSample {
        sample_potential(&self.spec, self.grid, self.key(index))
            .expect("spec was checked against the grid at construction")
    }

    pub fn index_at(&self, t: f64) -> Result<u64> {
        if !(t >= 0.0) || !t.is_finite() {
            return Err(Error::invalid(format!("time must be finite and >= 0, got {t}")));
        }
        Ok((t / self.tau).floor() as u64)
    }

    pub fn renewal_at(&self, t: f64) -> Result<PotentialSample> {
        Ok(self.sample(self.index_at(t)?))
    }
}

pub fn renewal_at(r: &RenewalPotential, t: f64) -> Result<PotentialSample> {
    r.renewal_at(t)
}

/// Small-`tau` slope `(1/4) int int E|xi(x) - xi(y)|^2 dx dy` in closed form.
pub fn variance_functional(spec: &NoiseSpec) -> Result<f64> {
    spec.validate()?;
    match *spec {
        NoiseSpec::Zero | NoiseSpec::ConstantInSpace { .. } => Ok(0.0),
        NoiseSpec::PiecewiseConstant { m, sigma, .. } => {
            Ok(sigma * sigma * (1.0 - 1.0 / m as f64) / 2.0)
        }
        NoiseSpec::HolderFourier { alpha, k_max, .. } => Ok(0.5
            * (1..=k_max)
                .map(|k| holder_amplitude(alpha, k).powi(2))
                .sum::<f64>()),
        NoiseSpec::WhiteNoise => Err(Error::NotFinite(
            "the variance functional diverges for white noise".into(),
        )),
    }
}
