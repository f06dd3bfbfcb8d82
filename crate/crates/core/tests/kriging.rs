use co_assim::grid::EARTH_RADIUS_M;
use co_assim::kriging::{krige_predict, log_likelihood, matern_cov, mle_fit, FitStatus, KrigingConfig, MaternParams, Snapshot};
use co_assim::seed::SimRng;
use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_distr::{Distribution, StandardNormal};

/// Chord-based great-circle distance via 3-D unit vectors.
fn chord_distance(a: (f64, f64), b: (f64, f64)) -> f64 {
    let unit = |(lon, lat): (f64, f64)| {
        let (lo, la) = (lon.to_radians(), lat.to_radians());
        [la.cos() * lo.cos(), la.cos() * lo.sin(), la.sin()]
    };
    let (p, q) = (unit(a), unit(b));
    let c = ((p[0] - q[0]).powi(2) + (p[1] - q[1]).powi(2) + (p[2] - q[2]).powi(2)).sqrt();
    2.0 * EARTH_RADIUS_M * (c / 2.0).asin()
}

fn matern(d: f64, s2: f64, rho: f64) -> f64 {
    let s = 5f64.sqrt() * d / rho;
    s2 * (1.0 + s + s * s / 3.0) * (-s).exp()
}

fn random_points(n: usize, rng: &mut SimRng) -> Vec<(f64, f64)> {
    (0..n).map(|_| (rng.random_range(231.5..248.5), rng.random_range(33.5..48.5))).collect()
}

fn gp_draw(pts: &[(f64, f64)], s2: f64, rho: f64, nugget: f64, mean: f64, rng: &mut SimRng) -> Vec<f64> {
    let n = pts.len();
    let k = DMatrix::from_fn(n, n, |a, b| matern(chord_distance(pts[a], pts[b]), s2, rho) + if a == b { nugget + 1e-9 } else { 0.0 });
    let l = k.cholesky().unwrap().l();
    let z = DVector::from_fn(n, |_, _| StandardNormal.sample(rng));
    (l * z).iter().map(|v| v + mean).collect()
}

fn snap(pts: Vec<(f64, f64)>, values: Vec<f64>, nugget: f64) -> Snapshot {
    let n = values.len();
    Snapshot { lonlat: pts, values, noise_var: vec![nugget; n], radius: EARTH_RADIUS_M }
}

/// Ordinary kriging through the augmented system [[K, 1], [1', 0]].
fn augmented_oracle(s: &Snapshot, p: &MaternParams, target: (f64, f64)) -> (f64, f64) {
    let n = s.len();
    let mut a = DMatrix::zeros(n + 1, n + 1);
    let mut rhs = DVector::zeros(n + 1);
    for i in 0..n {
        for j in 0..n {
            a[(i, j)] = matern(chord_distance(s.lonlat[i], s.lonlat[j]), p.sigma2, p.rho) + if i == j { p.nugget } else { 0.0 };
        }
        a[(i, n)] = 1.0;
        a[(n, i)] = 1.0;
        rhs[i] = matern(chord_distance(s.lonlat[i], target), p.sigma2, p.rho);
    }
    rhs[n] = 1.0;
    let sol = a.lu().solve(&rhs).unwrap();
    let mean: f64 = (0..n).map(|i| sol[i] * s.values[i]).sum();
    let var = p.sigma2 - (0..n).map(|i| sol[i] * rhs[i]).sum::<f64>() - sol[n];
    (mean, var)
}

#[test]
fn predictor_matches_augmented_system() {
    let mut rng = SimRng::seed_from_u64(3);
    for rep in 0..5 {
        let pts = random_points(25, &mut rng);
        let p = MaternParams { sigma2: 3.0 + rep as f64, rho: 250_000.0 + 50_000.0 * rep as f64, nugget: 0.2 * rep as f64 };
        let values = gp_draw(&pts, p.sigma2, p.rho, p.nugget, 80.0, &mut rng);
        let s = snap(pts, values, p.nugget);
        let targets = random_points(30, &mut rng);
        let (mean, var) = krige_predict(&s, &p, &targets).unwrap();
        for (t, target) in targets.iter().enumerate() {
            let (om, ov) = augmented_oracle(&s, &p, *target);
            assert!((mean[t] - om).abs() <= 1e-8 * om.abs(), "{} vs {om}", mean[t]);
            assert!((var[t] - ov).abs() <= 1e-8 * p.sigma2, "{} vs {ov}", var[t]);
            assert!(var[t] >= 0.0);
        }
    }
}

#[test]
fn nugget_to_zero_recovers_observations() {
    let mut rng = SimRng::seed_from_u64(8);
    let pts = random_points(20, &mut rng);
    let values = gp_draw(&pts, 4.0, 300_000.0, 0.5, 50.0, &mut rng);
    let mut prev = f64::INFINITY;
    for nugget in [1.0, 1e-2, 1e-4] {
        let s = snap(pts.clone(), values.clone(), nugget);
        let p = MaternParams { sigma2: 4.0, rho: 300_000.0, nugget };
        let (m, v) = krige_predict(&s, &p, &pts).unwrap();
        let err = m.iter().zip(&values).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        assert!(err < prev, "nugget {nugget}: {err} not below {prev}");
        assert!(v.iter().all(|&x| x >= 0.0));
        prev = err;
    }
    assert!(prev < 1e-2, "residual {prev}");
    let p = MaternParams { sigma2: 4.0, rho: 300_000.0, nugget: 0.0 };
    let (m, v) = krige_predict(&snap(pts.clone(), values.clone(), 0.0), &p, &pts).unwrap();
    for i in 0..pts.len() {
        assert!((m[i] - values[i]).abs() < 1e-6);
        assert!(v[i] < 1e-6);
    }
}

#[test]
fn covariance_is_positive_definite_on_distinct_points() {
    let mut rng = SimRng::seed_from_u64(1);
    let pts = random_points(60, &mut rng);
    for (s2, rho) in [(0.01, 10_000.0), (1.0, 200_000.0), (100.0, 2_000_000.0)] {
        let p = MaternParams { sigma2: s2, rho, nugget: 0.0 };
        let k = DMatrix::from_fn(60, 60, |a, b| matern_cov(chord_distance(pts[a], pts[b]), &p).unwrap());
        assert!(k.cholesky().is_some(), "({s2}, {rho})");
    }
}

#[test]
fn mle_recovers_variance_and_range() {
    let mut rng = SimRng::seed_from_u64(21);
    let cfg = KrigingConfig::default();
    let (mut s2s, mut rhos) = (Vec::new(), Vec::new());
    for _ in 0..20 {
        let pts = random_points(200, &mut rng);
        let values = gp_draw(&pts, 4.0, 200_000.0, 0.05, 100.0, &mut rng);
        let fit = mle_fit(&snap(pts, values, 0.05), &cfg).unwrap();
        assert_eq!(fit.status, FitStatus::Fitted);
        s2s.push(fit.params.sigma2);
        rhos.push(fit.params.rho);
    }
    let median = |v: &mut Vec<f64>| {
        v.sort_by(f64::total_cmp);
        0.5 * (v[9] + v[10])
    };
    let (ms, mr) = (median(&mut s2s), median(&mut rhos));
    assert!((ms / 4.0 - 1.0).abs() < 0.25, "sigma2 median {ms}");
    assert!((mr / 200_000.0 - 1.0).abs() < 0.25, "rho median {mr}");
}

#[test]
fn scaling_data_quadruples_variance_only() {
    let mut rng = SimRng::seed_from_u64(5);
    let pts = random_points(80, &mut rng);
    let values = gp_draw(&pts, 5.0, 400_000.0, 0.3, 60.0, &mut rng);
    let cfg = KrigingConfig { min_step: 1e-5, ..KrigingConfig::default() };
    let a = mle_fit(&snap(pts.clone(), values.clone(), 0.3), &cfg).unwrap();
    let doubled: Vec<f64> = values.iter().map(|v| 2.0 * v).collect();
    let b = mle_fit(&snap(pts, doubled, 1.2), &cfg).unwrap();
    assert!((b.params.sigma2 / a.params.sigma2 - 4.0).abs() < 4.0 * 1e-3, "{} vs {}", b.params.sigma2, a.params.sigma2);
    assert!((b.params.rho / a.params.rho - 1.0).abs() < 1e-3);
}

#[test]
fn constant_data_is_degenerate_and_small_snapshots_skip() {
    let mut rng = SimRng::seed_from_u64(6);
    let pts = random_points(30, &mut rng);
    let fit = mle_fit(&snap(pts.clone(), vec![42.0; 30], 1.0), &KrigingConfig::default()).unwrap();
    assert_eq!(fit.status, FitStatus::Degenerate);
    assert!(fit.params.sigma2 < (-6.0f64).exp() * 1.05);
    let few = mle_fit(&snap(pts[..9].to_vec(), vec![1.0; 9], 1.0), &KrigingConfig::default()).unwrap();
    assert_eq!(few.status, FitStatus::Skipped);
}

#[test]
fn fitted_likelihood_beats_neighbors() {
    let mut rng = SimRng::seed_from_u64(12);
    let pts = random_points(60, &mut rng);
    let values = gp_draw(&pts, 9.0, 300_000.0, 0.5, 70.0, &mut rng);
    let s = snap(pts, values, 0.5);
    let fit = mle_fit(&s, &KrigingConfig::default()).unwrap();
    assert!((log_likelihood(&s, &fit.params).unwrap() - fit.log_lik).abs() < 1e-9);
    for (fs, fr) in [(1.05, 1.0), (0.95, 1.0), (1.0, 1.05), (1.0, 0.95)] {
        let q = MaternParams { sigma2: fit.params.sigma2 * fs, rho: fit.params.rho * fr, nugget: 0.5 };
        assert!(log_likelihood(&s, &q).unwrap() <= fit.log_lik + 1e-6);
    }
    let est = mle_fit(&s, &KrigingConfig { estimate_nugget: true, ..KrigingConfig::default() }).unwrap();
    assert!(est.log_lik >= fit.log_lik - 1e-6);
}
