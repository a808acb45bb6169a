//! Small statistics toolkit: running moments, batch means for correlated
//! series, inverse-variance pooling, straight-line fits and the two-sample
//! Kolmogorov-Smirnov test.

/// Welford running mean and variance.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct Moments {
    count: u64,
    mean: f64,
    m2: f64,
}

impl Moments {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, x: f64) {
        self.count += 1;
        let delta = x - self.mean;
        self.mean += delta / self.count as f64;
        self.m2 += delta * (x - self.mean);
    }

    /// Chan et al. parallel merge.
    pub fn merge(&mut self, other: &Moments) {
        if other.count == 0 {
            return;
        }
        if self.count == 0 {
            *self = *other;
            return;
        }
        let n = self.count + other.count;
        let delta = other.mean - self.mean;
        let mean = self.mean + delta * other.count as f64 / n as f64;
        let m2 = self.m2
            + other.m2
            + delta * delta * (self.count as f64 * other.count as f64) / n as f64;
        *self = Moments {
            count: n,
            mean,
            m2,
        };
    }

    pub fn count(&self) -> u64 {
        self.count
    }

    pub fn mean(&self) -> f64 {
        self.mean
    }

    /// Unbiased sample variance; zero for fewer than two points.
    pub fn variance(&self) -> f64 {
        if self.count < 2 {
            0.0
        } else {
            self.m2 / (self.count - 1) as f64
        }
    }

    pub fn stderr(&self) -> f64 {
        if self.count == 0 {
            0.0
        } else {
            (self.variance() / self.count as f64).sqrt()
        }
    }
}

impl FromIterator<f64> for Moments {
    fn from_iter<I: IntoIterator<Item = f64>>(iter: I) -> Self {
        let mut m = Moments::new();
        for x in iter {
            m.push(x);
        }
        m
    }
}

/// Mean and standard error of i.i.d. samples.
pub fn mean_stderr(xs: &[f64]) -> (f64, f64) {
    let m: Moments = xs.iter().copied().collect();
    (m.mean(), m.stderr())
}

/// Overall mean of `xs` and a batch-means standard error from
/// `n_batches` contiguous batches of equal size (a remainder shorter
/// than one batch enters the mean but not the error bar).
pub fn batch_means(xs: &[f64], n_batches: usize) -> (f64, f64) {
    let mean = xs.iter().sum::<f64>() / xs.len() as f64;
    if n_batches < 2 || xs.len() < n_batches {
        return (mean, mean_stderr(xs).1);
    }
    let size = xs.len() / n_batches;
    let batch: Moments = xs
        .chunks_exact(size)
        .take(n_batches)
        .map(|c| c.iter().sum::<f64>() / size as f64)
        .collect();
    (mean, batch.stderr())
}

/// Inverse-variance weighted mean of independent estimates.
///
/// Falls back to the plain mean (with pooled standard error) when any
/// standard error is zero.
pub fn pool_inverse_variance(estimates: &[(f64, f64)]) -> (f64, f64) {
    assert!(!estimates.is_empty());
    if estimates.len() == 1 {
        return estimates[0];
    }
    if estimates.iter().any(|&(_, se)| !(se > 0.0)) {
        let n = estimates.len() as f64;
        let mean = estimates.iter().map(|e| e.0).sum::<f64>() / n;
        let se = (estimates.iter().map(|e| e.1 * e.1).sum::<f64>()).sqrt() / n;
        return (mean, se);
    }
    let mut wsum = 0.0;
    let mut acc = 0.0;
    for &(x, se) in estimates {
        let w = 1.0 / (se * se);
        wsum += w;
        acc += w * x;
    }
    (acc / wsum, (1.0 / wsum).sqrt())
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LinearFit {
    pub intercept: f64,
    pub slope: f64,
    pub intercept_se: f64,
    pub slope_se: f64,
}

/// Least-squares line `y = intercept + slope * x`.
///
/// With `weights = Some(w)`, `w_i` are inverse variances of `y_i` and the
/// standard errors come from `(X^T W X)^{-1}`. Without weights, ordinary least
/// squares with the residual variance (zero for two points).
pub fn linear_fit(xs: &[f64], ys: &[f64], weights: Option<&[f64]>) -> LinearFit {
    assert_eq!(xs.len(), ys.len());
    assert!(xs.len() >= 2, "a line fit needs two points");
    let ws: Vec<f64> = match weights {
        Some(w) => w.to_vec(),
        None => vec![1.0; xs.len()],
    };
    let sw: f64 = ws.iter().sum();
    let sx: f64 = ws.iter().zip(xs).map(|(w, x)| w * x).sum();
    let sy: f64 = ws.iter().zip(ys).map(|(w, y)| w * y).sum();
    let xbar = sx / sw;
    let ybar = sy / sw;
    let sxx: f64 = ws.iter().zip(xs).map(|(w, x)| w * (x - xbar).powi(2)).sum();
    let sxy: f64 = ws
        .iter()
        .zip(xs.iter().zip(ys))
        .map(|(w, (x, y))| w * (x - xbar) * (y - ybar))
        .sum();
    let slope = sxy / sxx;
    let intercept = ybar - slope * xbar;
    let scale = match weights {
        Some(_) => 1.0,
        None => {
            let dof = xs.len() as f64 - 2.0;
            if dof > 0.0 {
                let rss: f64 = xs
                    .iter()
                    .zip(ys)
                    .map(|(x, y)| (y - intercept - slope * x).powi(2))
                    .sum();
                rss / dof
            } else {
                0.0
            }
        }
    };
    LinearFit {
        intercept,
        slope,
        intercept_se: (scale * (1.0 / sw + xbar * xbar / sxx)).sqrt(),
        slope_se: (scale / sxx).sqrt(),
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KsTest {
    pub statistic: f64,
    pub critical: f64,
    pub reject: bool,
}

/// Two-sample Kolmogorov-Smirnov test at level 1% (asymptotic critical value).
pub fn ks_two_sample_1pct(a: &[f64], b: &[f64]) -> KsTest {
    let mut a = a.to_vec();
    let mut b = b.to_vec();
    a.sort_by(f64::total_cmp);
    b.sort_by(f64::total_cmp);
    let (n, m) = (a.len(), b.len());
    let (mut i, mut j) = (0, 0);
    let mut d: f64 = 0.0;
    while i < n && j < m {
        let x = a[i].min(b[j]);
        while i < n && a[i] <= x {
            i += 1;
        }
        while j < m && b[j] <= x {
            j += 1;
        }
        d = d.max((i as f64 / n as f64 - j as f64 / m as f64).abs());
    }
    let critical = 1.628 * ((n + m) as f64 / (n as f64 * m as f64)).sqrt();
    KsTest {
        statistic: d,
        critical,
        reject: d > critical,
    }
}
