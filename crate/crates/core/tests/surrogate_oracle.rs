//! Gaussian-process posterior and likelihood against dense textbook algebra.

use mfbo::surrogate::{GpHyperparameters, GpModel};
use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn matern(u: &[f64; 3], v: &[f64; 3], h: &GpHyperparameters) -> f64 {
    let r2: f64 = (0..3)
        .map(|d| ((u[d] - v[d]) / h.lengthscales[d]).powi(2))
        .sum();
    let a = (5.0 * r2).sqrt();
    h.output_scale * (1.0 + a + 5.0 * r2 / 3.0) * (-a).exp()
}

fn random_problem(rng: &mut ChaCha8Rng, n: usize) -> (Vec<[f64; 3]>, Vec<f64>, GpHyperparameters) {
    let x: Vec<[f64; 3]> = (0..n)
        .map(|_| [rng.random(), rng.random(), rng.random()])
        .collect();
    let y: Vec<f64> = x
        .iter()
        .map(|p| 1500.0 + 300.0 * (3.0 * p[0]).sin() + 50.0 * p[1] * p[2] + rng.random::<f64>())
        .collect();
    let h = GpHyperparameters {
        lengthscales: [
            rng.random_range(0.1..1.5),
            rng.random_range(0.1..1.5),
            rng.random_range(0.1..1.5),
        ],
        output_scale: rng.random_range(0.3..3.0),
        noise_variance: rng.random_range(1e-3..1e-1),
    };
    (x, y, h)
}

/// Posterior mean and variance in raw units from an explicit inverse.
fn dense_posterior(x: &[[f64; 3]], y: &[f64], h: &GpHyperparameters, q: &[f64; 3]) -> (f64, f64) {
    let n = x.len();
    let mean = y.iter().sum::<f64>() / n as f64;
    let sd = (y.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n as f64 - 1.0)).sqrt();
    let ys = DVector::from_iterator(n, y.iter().map(|v| (v - mean) / sd));
    let k = DMatrix::from_fn(n, n, |i, j| {
        matern(&x[i], &x[j], h) + if i == j { h.noise_variance } else { 0.0 }
    });
    let kinv = k.try_inverse().unwrap();
    let kx = DVector::from_iterator(n, x.iter().map(|p| matern(p, q, h)));
    let mu = (kx.transpose() * &kinv * ys)[0];
    let var = h.output_scale - (kx.transpose() * &kinv * &kx)[0];
    (mean + sd * mu, sd * sd * var)
}

#[test]
fn posterior_matches_dense_inverse() {
    let mut rng = ChaCha8Rng::seed_from_u64(42);
    for _ in 0..10 {
        let (x, y, h) = random_problem(&mut rng, 5);
        let mut gp = GpModel::new(x.clone(), &y).unwrap();
        gp.set_hyperparameters(h).unwrap();
        for _ in 0..5 {
            let q = [rng.random(), rng.random(), rng.random()];
            let p = gp.posterior(&q).unwrap();
            let (m, v) = dense_posterior(&x, &y, &h, &q);
            let scale = y.iter().map(|v| v.abs()).fold(0.0, f64::max);
            assert!(
                (p.mean - m).abs() <= 1e-8 * scale,
                "mean {} vs {}",
                p.mean,
                m
            );
            assert!(
                (p.variance - v).abs() <= 1e-8 * v.abs().max(1.0),
                "var {} vs {}",
                p.variance,
                v
            );
        }
    }
}

#[test]
fn log_marginal_likelihood_matches_dense_formula() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    for _ in 0..10 {
        let (x, y, h) = random_problem(&mut rng, 5);
        let mut gp = GpModel::new(x.clone(), &y).unwrap();
        gp.set_hyperparameters(h).unwrap();
        let n = x.len();
        let mean = y.iter().sum::<f64>() / n as f64;
        let sd = (y.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n as f64 - 1.0)).sqrt();
        let ys = DVector::from_iterator(n, y.iter().map(|v| (v - mean) / sd));
        let k = DMatrix::from_fn(n, n, |i, j| {
            matern(&x[i], &x[j], &h) + if i == j { h.noise_variance } else { 0.0 }
        });
        let quad = (ys.transpose() * k.clone().try_inverse().unwrap() * &ys)[0];
        let want = -0.5 * quad
            - 0.5 * k.determinant().ln()
            - 0.5 * n as f64 * (2.0 * std::f64::consts::PI).ln();
        let got = gp.log_marginal_likelihood().unwrap();
        assert!(
            (got - want).abs() < 1e-8 * want.abs().max(1.0),
            "{got} vs {want}"
        );
    }
}

fn with_log_params(h: &GpHyperparameters, theta: [f64; 5]) -> GpHyperparameters {
    let _ = h;
    GpHyperparameters {
        lengthscales: [theta[0].exp(), theta[1].exp(), theta[2].exp()],
        output_scale: theta[3].exp(),
        noise_variance: theta[4].exp(),
    }
}

#[test]
fn likelihood_gradient_matches_central_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(99);
    for _ in 0..10 {
        let (x, y, h) = random_problem(&mut rng, 8);
        let gp = GpModel::new(x, &y).unwrap();
        let theta = [
            h.lengthscales[0].ln(),
            h.lengthscales[1].ln(),
            h.lengthscales[2].ln(),
            h.output_scale.ln(),
            h.noise_variance.ln(),
        ];
        let (_, grad) = gp.mll_and_gradient(&h).unwrap();
        let eps = 1e-5;
        for k in 0..5 {
            let (mut up, mut dn) = (theta, theta);
            up[k] += eps;
            dn[k] -= eps;
            let fu = gp.mll_and_gradient(&with_log_params(&h, up)).unwrap().0;
            let fd = gp.mll_and_gradient(&with_log_params(&h, dn)).unwrap().0;
            let numeric = (fu - fd) / (2.0 * eps);
            let tol = 1e-4 * numeric.abs().max(1e-2);
            assert!(
                (grad[k] - numeric).abs() <= tol,
                "param {k}: {} vs {}",
                grad[k],
                numeric
            );
        }
    }
}
