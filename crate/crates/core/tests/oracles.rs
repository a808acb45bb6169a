//! Reference values worked out independently of the implementation:
//! closed forms, grid-refinement limits, Fourier-decay rates and
//! cross-scheme agreement.

use std::f64::consts::PI;

use slowenv::asymptotics::{
    large_tau_compare, closed_form_sqrt_constant, small_tau_slope, white_noise_growth_prediction,
    sqrt_law_target, zeroth_chaos_constant, zeroth_chaos_limit, zeroth_chaos_partial_sum,
    zeroth_chaos_with_tail, FrequencyConvention,
};
use slowenv::error::Error;
use slowenv::grid::{Field, TorusGrid};
use slowenv::lyapunov::{
    estimate_furstenberg, estimate_time_average, run_burn_in, sweep_tau, BurnIn, InitialCondition,
    RunConfig,
};
use slowenv::noise::{
    center_spatially, sample_potential, Law, Multiplier, NoiseSpec, PotentialSample, RenewalPotential,
};
use slowenv::projective::{
    birkhoff_coefficient_estimate, hilbert_distance, normalize, synchronization_rate,
    ProjectiveDensity,
};
use slowenv::propagator::{feynman_kac_mass, Propagator, SchemeConfig};
use slowenv::rng::RngKey;
use slowenv::spectral::{doob_consistency_check, doob_mu, richardson, sample_zeta_mu, top_eigenpair};
use slowenv::stats::{ks_two_sample_1pct, Moments};

const PIECEWISE: NoiseSpec = NoiseSpec::PiecewiseConstant {
    m: 4,
    law: Law::Rademacher,
    sigma: 1.0,
};

fn grid(n: usize) -> TorusGrid {
    TorusGrid::new(n).unwrap()
}

fn cosine(g: TorusGrid, amp: f64) -> PotentialSample {
    PotentialSample::from_fn(g, move |x| amp * (2.0 * PI * x).cos())
}

#[test]
fn white_noise_node_variance_is_one_over_dx() {
    let g = grid(256);
    let mut m = vec![Moments::new(); 256];
    for i in 0..10_000 {
        let xi = sample_potential(&NoiseSpec::WhiteNoise, g, RngKey::new(1, 0, i)).unwrap();
        for (acc, v) in m.iter_mut().zip(xi.values()) {
            acc.push(*v);
        }
    }
    for acc in &m {
        assert!((acc.variance() / 256.0 - 1.0).abs() < 0.05, "{}", acc.variance());
    }
}

#[test]
fn every_law_is_pointwise_centered() {
    let g = grid(256);
    let specs = [
        PIECEWISE,
        NoiseSpec::PiecewiseConstant {
            m: 8,
            law: Law::UniformSym,
            sigma: 2.0,
        },
        NoiseSpec::HolderFourier {
            alpha: 0.5,
            k_max: 32,
            multipliers: Multiplier::Gaussian,
        },
        NoiseSpec::HolderFourier {
            alpha: 0.3,
            k_max: 8,
            multipliers: Multiplier::Rademacher,
        },
        NoiseSpec::WhiteNoise,
        NoiseSpec::ConstantInSpace {
            law: Law::CenteredGaussian,
            sigma: 1.0,
        },
    ];
    let reps = 10_000u64;
    for spec in specs {
        let mut m = vec![Moments::new(); 256];
        for i in 0..reps {
            let xi = sample_potential(&spec, g, RngKey::new(2, 0, i)).unwrap();
            for (acc, v) in m.iter_mut().zip(xi.values()) {
                acc.push(*v);
            }
        }
        for (j, acc) in m.iter().enumerate() {
            let bound = 4.0 * acc.variance().sqrt() / (reps as f64).sqrt();
            assert!(acc.mean().abs() <= bound, "{spec:?} node {j}: {} > {bound}", acc.mean());
        }
    }
}

/// Monte Carlo of `int int E|xi(x) - xi(y)|^2` over uniform node pairs.
fn pair_functional(spec: &NoiseSpec, reps: u64) -> (f64, f64) {
    let g = grid(256);
    let m: Moments = (0..reps)
        .map(|i| {
            let xi = sample_potential(spec, g, RngKey::new(3, 0, i)).unwrap();
            let v = xi.values();
            // Every ordered pair of nodes, averaged.
            let mean = v.iter().sum::<f64>() / 256.0;
            let sq = v.iter().map(|a| a * a).sum::<f64>() / 256.0;
            2.0 * (sq - mean * mean)
        })
        .collect();
    (m.mean(), m.stderr())
}

#[test]
fn variance_functional_matches_monte_carlo() {
    let (est, se) = pair_functional(&PIECEWISE, 20_000);
    assert!((est - 4.0 * 0.375).abs() <= 3.0 * se, "{est} +- {se}");
    let single_mode = NoiseSpec::HolderFourier {
        alpha: 0.5,
        k_max: 1,
        multipliers: Multiplier::Gaussian,
    };
    let (est, se) = pair_functional(&single_mode, 20_000);
    assert!((est - 4.0 * 0.5).abs() <= 3.0 * se, "{est} +- {se}");
}

#[test]
fn feynman_kac_matches_eigen_mass_on_cosine() {
    let g = grid(256);
    let xi = cosine(g, 1.0);
    let z = ProjectiveDensity::uniform(g);
    let exact = Propagator::new(g, SchemeConfig::eigen(1.0))
        .unwrap()
        .propagate_period(&z, &xi, 0.2)
        .unwrap()
        .log_mass
        .exp();
    let (est, se) = feynman_kac_mass(&xi, 0.2, &z, 1.0, 100_000, 1e-3, RngKey::new(4, 0, 0)).unwrap();
    assert!((est - exact).abs() <= 3.0 * se, "{est} vs {exact} (se {se})");
}

#[test]
fn strang_error_is_second_order_on_cosine() {
    let g = grid(256);
    let xi = cosine(g, 1.0);
    let z = ProjectiveDensity::uniform(g);
    let mass = |cfg: SchemeConfig| {
        Propagator::new(g, cfg).unwrap().propagate_period(&z, &xi, 0.1).unwrap().log_mass
    };
    let exact = mass(SchemeConfig::eigen(1.0));
    let coarse = (mass(SchemeConfig::strang(1e-3, 1.0)) - exact).abs();
    let fine = (mass(SchemeConfig::strang(5e-4, 1.0)) - exact).abs();
    assert!(coarse <= 1e-6, "{coarse}");
    let ratio = coarse / fine;
    assert!((3.5..=4.5).contains(&ratio), "{ratio}");
}

#[test]
fn ground_state_of_double_cosine_converges_under_refinement() {
    let pairs: Vec<_> = [256, 512, 1024]
        .into_iter()
        .map(|n| top_eigenpair(&cosine(grid(n), 2.0), 1.0).unwrap())
        .collect();
    let zeta: Vec<f64> = pairs.iter().map(|p| p.zeta).collect();
    let mu: Vec<f64> = pairs.iter().map(doob_mu).collect();
    // O(dx^2) convergence: successive differences shrink by four.
    let r = (zeta[0] - zeta[1]) / (zeta[1] - zeta[2]);
    assert!((3.9..4.1).contains(&r), "{r}");
    // The n = 256 value, Richardson-corrected with n = 512, matches n = 1024.
    assert!((richardson(zeta[0], zeta[1], 2.0, 2.0) - zeta[2]).abs() <= 1e-6);
    assert!((richardson(mu[0], mu[1], 2.0, 2.0) - mu[2]).abs() <= 1e-6);
    // And both extrapolations agree far more tightly with each other.
    let z_lim = richardson(zeta[1], zeta[2], 2.0, 2.0);
    assert!((richardson(zeta[0], zeta[1], 2.0, 2.0) - z_lim).abs() <= 1e-8);
    // Second-order perturbation theory: zeta ~ 2 / (4 pi^2).
    assert!((zeta[2] - 2.0 / (4.0 * PI * PI)).abs() < 1e-3);
}

#[test]
fn ground_state_equals_long_time_growth_rate() {
    let g = grid(256);
    let xi = cosine(g, 2.0);
    let zeta = top_eigenpair(&xi, 1.0).unwrap().zeta;
    let mut prop = Propagator::new(g, SchemeConfig::eigen(1.0)).unwrap();
    let mut z = ProjectiveDensity::uniform(g);
    let mut rate = 0.0;
    for _ in 0..20 {
        let out = prop.propagate_period(&z, &xi, 1.0).unwrap();
        z = out.z_next;
        rate = out.log_mass;
    }
    assert!((rate - zeta).abs() <= 1e-6, "{rate} vs {zeta}");
}

#[test]
fn doob_transform_on_double_cosine() {
    let (dh, dm) = doob_consistency_check(&cosine(grid(256), 2.0), 0.5, SchemeConfig::eigen(1.0)).unwrap();
    assert!(dh <= 1e-9 && dm <= 1e-9, "{dh} {dm}");
    let (dh, dm) = doob_consistency_check(&cosine(grid(128), 1.0), 1.0, SchemeConfig::eigen(1.0)).unwrap();
    assert!(dh <= 1e-9 && dm <= 1e-9, "{dh} {dm}");
    for c in [0.0, 1.7] {
        let flat = PotentialSample::constant(grid(64), c);
        let (dh, dm) = doob_consistency_check(&flat, 0.7, SchemeConfig::eigen(1.0)).unwrap();
        assert!(dh <= 1e-12 && dm <= 1e-12);
    }
}

#[test]
fn heat_synchronization_rate_is_the_spectral_gap() {
    let g = grid(256);
    let u0_b = normalize(&Field::from_fn(g, |x| 1.0 + 0.5 * (2.0 * PI * x).cos())).unwrap().0;
    let r = RenewalPotential::new(NoiseSpec::Zero, g, 0.01, 0, 0).unwrap();
    let mut prop = Propagator::new(g, SchemeConfig::eigen(1.0)).unwrap();
    let rep = synchronization_rate(&ProjectiveDensity::uniform(g), &u0_b, &r, 100, &mut prop).unwrap();
    let target = -4.0 * PI * PI;
    assert!(((rep.fitted_slope - target) / target).abs() < 0.1, "{}", rep.fitted_slope);
}

#[test]
fn piecewise_trajectories_synchronize() {
    let g = grid(256);
    let mut prop = Propagator::new(g, SchemeConfig::eigen(1.0)).unwrap();
    let u0_b = slowenv::projective::cosine_density(g);
    for stream in 0..5 {
        let r = RenewalPotential::new(PIECEWISE, g, 0.5, 11, stream).unwrap();
        let rep = synchronization_rate(&ProjectiveDensity::uniform(g), &u0_b, &r, 100, &mut prop).unwrap();
        assert!(rep.fitted_slope < 0.0);
        assert!(rep.fitted_slope.abs() > 3.0 * rep.slope_stderr);
    }
}

#[test]
fn identical_initial_conditions_are_rejected() {
    let g = grid(32);
    let r = RenewalPotential::new(PIECEWISE, g, 0.5, 0, 0).unwrap();
    let mut prop = Propagator::new(g, SchemeConfig::eigen(1.0)).unwrap();
    let u = ProjectiveDensity::uniform(g);
    assert!(matches!(
        synchronization_rate(&u, &u, &r, 10, &mut prop),
        Err(Error::InvalidArgument(_))
    ));
}

#[test]
fn heat_contraction_shrinks_with_the_period() {
    let g = grid(256);
    let zero = PotentialSample::constant(g, 0.0);
    let mut prop = Propagator::new(g, SchemeConfig::eigen(1.0)).unwrap();
    let mu = |tau: f64, prop: &mut Propagator| {
        birkhoff_coefficient_estimate(&zero, tau, prop, 20, RngKey::new(1, 2, 0))
            .unwrap()
            .mu_hat
    };
    let short = mu(0.01, &mut prop);
    let half = mu(0.5, &mut prop);
    let long = mu(1.0, &mut prop);
    assert!(short < 1.0);
    assert!(long < short);
    // Fourier-decay bound at a period where it is above double-precision
    // round-off; at tau = 1 the bound (7e-17) is below it and the measured
    // ratio is round-off.
    assert!(half <= 10.0 * (-4.0 * PI * PI * 0.5).exp(), "{half}");
    assert!(long < 1e-13, "{long}");
}

fn run_cfg(noise: NoiseSpec, tau: f64, n_periods: u64, n: usize) -> RunConfig {
    let mut c = RunConfig::new(noise, tau, n_periods, SchemeConfig::eigen(1.0), 17);
    c.grid_n = n;
    c
}

#[test]
fn lyapunov_exponent_does_not_depend_on_the_initial_condition() {
    let mut a = run_cfg(PIECEWISE, 0.5, 4000, 64);
    a.replicas = 2;
    let mut b = a.clone();
    b.initial = InitialCondition::Cosine;
    b.seed = 99;
    let (ea, eb) = (estimate_time_average(&a).unwrap(), estimate_time_average(&b).unwrap());
    let se = (ea.stderr.powi(2) + eb.stderr.powi(2)).sqrt();
    assert!((ea.lambda_hat - eb.lambda_hat).abs() <= 3.0 * se);
    assert_eq!(ea.diagnostics.clamp_events, 0);
}

#[test]
fn time_average_telescopes_to_the_total_log_mass() {
    let mut cfg = run_cfg(PIECEWISE, 0.5, 400, 64);
    cfg.burn_in = BurnIn::Fixed(0);
    let est = estimate_time_average(&cfg).unwrap();
    let r = cfg.renewal(0).unwrap();
    let ev = Propagator::new(cfg.grid().unwrap(), cfg.scheme)
        .unwrap()
        .evolve(&ProjectiveDensity::uniform(cfg.grid().unwrap()), &r, 400)
        .unwrap();
    let total = est.lambda_hat * cfg.tau * est.n_periods_used as f64;
    assert!((total - ev.total_log_mass).abs() <= 1e-10 * ev.total_log_mass.abs());
    assert_eq!(est.replicas[0].total_log_mass, ev.total_log_mass);
}

#[test]
fn estimators_vanish_on_degenerate_noise() {
    let zero = run_cfg(NoiseSpec::Zero, 0.5, 200, 32);
    assert!(estimate_furstenberg(&zero, 30).unwrap().lambda_hat.abs() < 1e-10);
    let mut constant = run_cfg(
        NoiseSpec::ConstantInSpace {
            law: Law::Rademacher,
            sigma: 1.0,
        },
        1.0,
        200,
        32,
    );
    constant.centered = true;
    let f = estimate_furstenberg(&constant, 30).unwrap();
    assert!(f.lambda_hat.abs() <= 3.0 * f.stderr + 1e-12);

    let rows = sweep_tau(&zero, &[0.01, 0.1, 1.0, 10.0]).unwrap();
    assert!(rows.iter().all(|(_, e)| e.as_ref().unwrap().lambda_hat.abs() < 1e-10));
    let single = sweep_tau(&zero, &[1.0]).unwrap();
    assert_eq!(single.len(), 1);
    assert_eq!(single[0].0, 1.0);
}

#[test]
fn sweep_curve_rises_toward_the_mean_ground_state() {
    let mut t = run_cfg(PIECEWISE, 1.0, 2000, 64);
    t.replicas = 2;
    t.centered = true;
    let rows = sweep_tau(&t, &[0.01, 0.1, 1.0, 10.0]).unwrap();
    let est: Vec<_> = rows.into_iter().map(|(_, e)| e.unwrap()).collect();
    for w in est.windows(2) {
        assert!(w[1].lambda_hat > w[0].lambda_hat - 3.0 * (w[0].stderr + w[1].stderr));
    }
    // Near zero, lambda(tau) stays under the small-tau law tau * 0.375.
    assert!(est[0].lambda_hat < 0.01 * 0.375 * 1.1, "{}", est[0].lambda_hat);
    assert!(est[0].lambda_hat < 0.3 * est[3].lambda_hat);
    let zeta_mean = centered_zeta_mean(&PIECEWISE, grid(64), 400).0;
    let last = &est[3];
    assert!(last.lambda_hat <= zeta_mean + 3.0 * last.stderr + 0.05 * zeta_mean);
    assert!(last.lambda_hat >= 0.5 * zeta_mean);
}

/// Mean top eigenvalue estimated from centered samples: since the spatial
/// mean of every law has zero expectation and `zeta(xi - c) = zeta(xi) - c`,
/// this is an unbiased estimator of `E[zeta]` without the variance of the
/// spatial mean.
fn centered_zeta_mean(spec: &NoiseSpec, g: TorusGrid, n: u64) -> (f64, f64) {
    let m: Moments = (0..n)
        .map(|i| {
            let xi = center_spatially(&sample_potential(spec, g, RngKey::new(8, 0, i)).unwrap());
            top_eigenpair(&xi, 1.0).unwrap().zeta
        })
        .collect();
    (m.mean(), m.stderr())
}

#[test]
fn mean_ground_state_is_positive() {
    let (mean, se) = centered_zeta_mean(&PIECEWISE, grid(256), 500);
    assert!(mean > 3.0 * se, "{mean} +- {se}");
}

#[test]
fn sandwich_bounds_on_degenerate_noise() {
    let g = grid(32);
    let zero = sample_zeta_mu(&NoiseSpec::Zero, g, 1.0, 30, RngKey::new(0, 0, 0)).unwrap();
    assert!(zero.iter().all(|&(z, m)| z.abs() < 1e-12 && m.abs() < 1e-12));
    let spec = NoiseSpec::ConstantInSpace {
        law: Law::Rademacher,
        sigma: 1.0,
    };
    let s = sample_zeta_mu(&spec, g, 1.0, 40, RngKey::new(0, 0, 0)).unwrap();
    assert!(s.iter().all(|&(z, m)| (z.abs() - 1.0).abs() < 1e-12 && m.abs() < 1e-12));

    let cfg = run_cfg(NoiseSpec::Zero, 5.0, 200, 32);
    let rep = large_tau_compare(&cfg, 30, RngKey::new(0, 0, 0)).unwrap();
    assert!(rep.estimate.lambda_hat.abs() < 1e-10 && rep.bounds.zeta_mean.abs() < 1e-12);
    assert!(rep.bounds.mu_mean.abs() < 1e-12 && rep.holds);
    let mut cfg = run_cfg(spec, 5.0, 200, 32);
    cfg.centered = true;
    let rep = large_tau_compare(&cfg, 100, RngKey::new(0, 0, 0)).unwrap();
    assert!(rep.holds && rep.bounds.mu_mean.abs() < 1e-12);
}

#[test]
fn small_tau_law_vanishes_for_constant_noise() {
    let spec = NoiseSpec::ConstantInSpace {
        law: Law::Rademacher,
        sigma: 1.0,
    };
    let mut t = run_cfg(spec, 0.01, 400, 32);
    t.centered = true;
    let rep = small_tau_slope(&spec, &[0.02, 0.01, 0.005], &t).unwrap();
    assert_eq!(rep.target, 0.0);
    // Exact zero up to the round-off of the per-period masses, amplified by 1/tau^2.
    assert!(rep.extrapolated.abs() < 1e-9, "{}", rep.extrapolated);
}

#[test]
fn invariant_profile_is_stable_under_one_more_period() {
    let g = grid(64);
    let mut prop = Propagator::new(g, SchemeConfig::eigen(1.0)).unwrap();
    let flat = ProjectiveDensity::uniform(g);
    let stationary = |seed: u64, j: u64, prop: &mut Propagator| {
        let r = RenewalPotential::new(PIECEWISE, g, 0.5, seed, j).unwrap();
        run_burn_in(&flat, &r, prop, BurnIn::default()).unwrap().state
    };
    // Two independent samples: z_infinity itself, and z_infinity pushed
    // through one more period in an environment it has never seen.
    let mut before = Vec::new();
    let mut after = Vec::new();
    for j in 0..200u64 {
        before.push(hilbert_distance(&stationary(21, j, &mut prop), &flat));
        let z = stationary(22, j, &mut prop);
        let fresh = sample_potential(&PIECEWISE, g, RngKey::new(23, j, 0)).unwrap();
        let next = prop.propagate_period(&z, &fresh, 0.5).unwrap().z_next;
        after.push(hilbert_distance(&next, &flat));
    }
    let ks = ks_two_sample_1pct(&before, &after);
    assert!(!ks.reject, "D = {} > {}", ks.statistic, ks.critical);
}

#[test]
fn zeroth_chaos_examples() {
    // The single k = 0 term.
    for conv in [FrequencyConvention::IntegerK2, FrequencyConvention::Torus] {
        assert!((zeroth_chaos_partial_sum(1e-4, 1.0, 0, conv).unwrap() - 1e-2).abs() < 1e-17);
    }
    // Quadrature oracle for the |k|^2 symbol: (1/sqrt t) int_0^t sqrt(pi/(kappa r)) dr = 2 sqrt(pi/kappa).
    let (tau, k) = (1e-6, 100_000);
    let partial = zeroth_chaos_partial_sum(tau, 1.0, k, FrequencyConvention::IntegerK2).unwrap();
    let full = zeroth_chaos_with_tail(tau, 1.0, k, FrequencyConvention::IntegerK2).unwrap();
    let oracle = 2.0 * PI.sqrt();
    assert!((full - oracle).abs() / oracle < 2e-3, "{full} vs {oracle}");
    assert!(partial < full);
    assert!(matches!(
        zeroth_chaos_constant(tau, 1.0, k, FrequencyConvention::IntegerK2),
        Err(Error::CutoffTooSmall { .. })
    ));
    // The closed form stated for the white-noise law, and the limits.
    assert!((closed_form_sqrt_constant(1.0) - 1.77245).abs() < 1e-5);
    assert!((closed_form_sqrt_constant(4.0) - 0.88623).abs() < 1e-5);
    assert!((zeroth_chaos_limit(1.0, FrequencyConvention::IntegerK2) - oracle).abs() < 1e-12);
    assert!((zeroth_chaos_limit(1.0, FrequencyConvention::Torus) - 1.0 / PI.sqrt()).abs() < 1e-12);
    assert!((sqrt_law_target(4.0) - 0.5 * sqrt_law_target(1.0)).abs() < 1e-15);
}

#[test]
fn zeroth_chaos_tail_bound_is_honored() {
    for conv in [FrequencyConvention::Torus, FrequencyConvention::IntegerK2] {
        for tau in [1e-3, 1e-2, 0.1] {
            let k = 1_000_000;
            let a = zeroth_chaos_with_tail(tau, 1.0, k, conv).unwrap();
            let b = zeroth_chaos_with_tail(tau, 1.0, 2 * k, conv).unwrap();
            assert!((a - b).abs() < 1e-10, "{conv:?} {tau}: {}", (a - b).abs());
        }
    }
}

#[test]
fn white_noise_growth_defect_is_order_sqrt_tau() {
    let c = sqrt_law_target(1.0);
    let taus: Vec<f64> = (0..6).map(|i| 0.016 / 2f64.powi(i)).collect();
    let defects: Vec<f64> = taus
        .iter()
        .map(|&t| c - white_noise_growth_prediction(t, 1.0, None).unwrap() / t.sqrt())
        .collect();
    for w in defects.windows(2) {
        let ratio = w[0] / w[1];
        assert!((1.2..=1.7).contains(&ratio), "{ratio}");
    }
}
