//! Independent oracles for the propagation layer: a numerical-quadrature
//! reference for the local-scattering correlation matrix and a Monte-Carlo
//! check of the MMSE estimator's orthogonality property.

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use mimo_assoc::propagation::{
    build_scenario, mmse_estimate, received_pilots, sample_channels, EstimatorBank,
    NetworkConfig, PilotPlan,
};

/// Steering vector of a uniform linear array: a(theta)_s = exp(i 2 pi D s sin theta).
fn steering(n: usize, spacing: f64, theta: f64) -> DVector<Complex64> {
    DVector::from_fn(n, |s, _| {
        Complex64::from_polar(1.0, 2.0 * std::f64::consts::PI * spacing * s as f64 * theta.sin())
    })
}

/// Quadrature reference for E{ a(phi+delta) a(phi+delta)^H } with
/// delta ~ N(0, sigma^2), evaluated by trapezoid rule on [-8 sigma, 8 sigma].
fn quadrature_correlation(
    n: usize,
    spacing: f64,
    phi: f64,
    sigma: f64,
    beta: f64,
    nodes: usize,
) -> DMatrix<Complex64> {
    let half_width = 8.0 * sigma;
    let step = 2.0 * half_width / (nodes - 1) as f64;
    let mut acc = DMatrix::<Complex64>::zeros(n, n);
    let mut mass = 0.0;
    for i in 0..nodes {
        let delta = -half_width + step * i as f64;
        let w = (-0.5 * (delta / sigma).powi(2)).exp()
            * if i == 0 || i == nodes - 1 { 0.5 } else { 1.0 };
        let a = steering(n, spacing, phi + delta);
        acc.gerc(Complex64::new(w, 0.0), &a, &a, Complex64::new(1.0, 0.0));
        mass += w;
    }
    acc * Complex64::new(beta / mass, 0.0)
}

#[test]
fn correlation_matches_quadrature_oracle() {
    // N = 4, half-wavelength spacing, 30 degree azimuth, 10 degree ASD.
    let n = 4;
    let spacing = 0.5;
    let phi = 30f64.to_radians();
    let sigma = 10f64.to_radians();

    let oracle = quadrature_correlation(n, spacing, phi, sigma, 1.0, 20_001);

    // Place one user exactly at azimuth 30 degrees from one BS and rescale the
    // produced matrix to beta = 1.
    let bs = [100.0, 100.0];
    let dist = 300.0;
    let ue = [bs[0] + dist * phi.cos(), bs[1] + dist * phi.sin()];
    let cfg = NetworkConfig {
        n_bs: 1,
        n_antennas: n,
        n_users: 1,
        tau_p: 1,
        tau_u: 199,
        bs_positions: vec![bs],
        capacities: vec![1],
        asd_deg: 10.0,
        antenna_spacing: spacing,
        ..NetworkConfig::default()
    };
    let scn = build_scenario(&cfg, &[ue]).unwrap();
    let r = &scn.correlations[0][0] / Complex64::new(scn.gains[0][0], 0.0);

    let rel = (&r - &oracle).norm() / oracle.norm();
    assert!(rel < 0.02, "closed form deviates from quadrature by {rel:.4}");
}

#[test]
fn closed_form_is_exact_at_zero_spread() {
    // With sigma -> 0 the quadrature collapses onto the steering outer
    // product and the closed form must match it to machine precision.
    let n = 6;
    let spacing = 0.5;
    let phi = -40f64.to_radians();
    let oracle = {
        let a = steering(n, spacing, phi);
        let mut m = DMatrix::<Complex64>::zeros(n, n);
        m.gerc(Complex64::new(1.0, 0.0), &a, &a, Complex64::new(1.0, 0.0));
        m
    };
    let bs = [500.0, 500.0];
    let dist = 200.0;
    let ue = [bs[0] + dist * phi.cos(), bs[1] + dist * phi.sin()];
    let cfg = NetworkConfig {
        n_bs: 1,
        n_antennas: n,
        n_users: 1,
        tau_p: 1,
        tau_u: 199,
        bs_positions: vec![bs],
        capacities: vec![1],
        asd_deg: 0.0,
        antenna_spacing: spacing,
        ..NetworkConfig::default()
    };
    let scn = build_scenario(&cfg, &[ue]).unwrap();
    let r = &scn.correlations[0][0] / Complex64::new(scn.gains[0][0], 0.0);
    assert!((&r - &oracle).norm() <= 1e-10 * oracle.norm());
}

#[test]
fn mmse_orthogonality_smoke() {
    // Reduced-scale version of the estimator-statistics acceptance check:
    // the sample mean of h_hat (h - h_hat)^H must vanish within five
    // Monte-Carlo standard errors.
    let cfg = NetworkConfig {
        n_bs: 2,
        n_antennas: 4,
        n_users: 6,
        tau_p: 3,
        tau_u: 197,
        bs_positions: vec![[250.0, 250.0], [750.0, 750.0]],
        capacities: vec![3, 3],
        ..NetworkConfig::default()
    };
    let pos: Vec<[f64; 2]> = vec![
        [120.0, 340.0],
        [430.0, 90.0],
        [610.0, 700.0],
        [880.0, 220.0],
        [300.0, 860.0],
        [740.0, 460.0],
    ];
    let scn = build_scenario(&cfg, &pos).unwrap();
    let plan = PilotPlan::round_robin(&cfg);
    let bank = EstimatorBank::new(&scn, &plan, &cfg).unwrap();

    let n = cfg.n_antennas;
    let blocks = 3000;
    let tracked = [(0usize, 0usize), (3, 1), (5, 0)];
    let mut sum = vec![DMatrix::<Complex64>::zeros(n, n); tracked.len()];
    let mut sum_sq = vec![DMatrix::<f64>::zeros(n, n); tracked.len()];

    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    for _ in 0..blocks {
        let ch = sample_channels(&scn, &mut rng);
        let obs = received_pilots(&ch, &plan, &cfg, &mut rng);
        let despread = bank.despread(&obs, &plan);
        let h_hat = bank.estimate(&scn, &despread, &plan);
        for (i, &(k, m)) in tracked.iter().enumerate() {
            let err = &ch.h[k][m] - &h_hat[k][m];
            for s in 0..n {
                for t in 0..n {
                    let v = h_hat[k][m][s] * err[t].conj();
                    sum[i][(s, t)] += v;
                    sum_sq[i][(s, t)] += v.norm_sqr();
                }
            }
        }
    }

    for (i, &(k, m)) in tracked.iter().enumerate() {
        let mean = &sum[i] / Complex64::new(blocks as f64, 0.0);
        // Per-entry standard error of the mean, aggregated in Frobenius norm.
        let mut se_sq = 0.0;
        for s in 0..n {
            for t in 0..n {
                let second = sum_sq[i][(s, t)] / blocks as f64;
                let var = (second - mean[(s, t)].norm_sqr()).max(0.0);
                se_sq += var / blocks as f64;
            }
        }
        let se = se_sq.sqrt();
        let bias = mean.norm();
        assert!(
            bias <= 5.0 * se,
            "orthogonality violated for user {k}, BS {m}: |mean| = {bias:.3e}, 5 SE = {:.3e}",
            5.0 * se
        );
    }

    // The one-shot public API agrees with the bank it is built from.
    let mut rng = ChaCha8Rng::seed_from_u64(77);
    let ch = sample_channels(&scn, &mut rng);
    let obs = received_pilots(&ch, &plan, &cfg, &mut rng);
    let est = mmse_estimate(&obs, &scn, &plan, &cfg).unwrap();
    let despread = bank.despread(&obs, &plan);
    let h_hat = bank.estimate(&scn, &despread, &plan);
    for k in 0..cfg.n_users {
        for m in 0..cfg.n_bs {
            assert_eq!(est.h_hat[k][m], h_hat[k][m]);
        }
    }
}
