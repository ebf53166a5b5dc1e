use std::f64::consts::PI;

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};

use super::kernel::{
    matern_grad_factor, matern_profile, matern_unchecked, scaled_sq, GpHyperparameters,
};
use crate::error::{Error, Result};
use crate::linalg::cholesky_jittered;
use crate::problem::DIM;

/// Number of log-hyperparameters: three lengthscales, output scale, noise.
pub const N_PARAMS: usize = DIM + 2;

/// Affine output standardization `y_std = (y - mean) / std`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Standardization {
    pub mean: f64,
    pub std: f64,
}

impl Standardization {
    /// Sample mean and (n-1) standard deviation of `y`.
    pub fn from_targets(y: &[f64]) -> Result<Self> {
        if y.len() < 2 {
            return Err(Error::TooFewPoints {
                required: 2,
                got: y.len(),
            });
        }
        let n = y.len() as f64;
        let mean = y.iter().sum::<f64>() / n;
        let var = y.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
        let std = var.sqrt();
        if !(std > 0.0) || std <= 1e-12 * mean.abs() {
            return Err(Error::ConstantTargets);
        }
        Ok(Self { mean, std })
    }
}

/// Posterior of the latent function at one input, in raw output units.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PosteriorPrediction {
    pub mean: f64,
    pub variance: f64,
}

impl PosteriorPrediction {
    pub fn std_dev(&self) -> f64 {
        self.variance.max(0.0).sqrt()
    }
}

#[derive(Debug, Clone)]
struct Factorization {
    hyper: GpHyperparameters,
    chol: Cholesky<f64, Dyn>,
    lower: DMatrix<f64>,
    alpha: DVector<f64>,
    jitter: f64,
}

/// Exact GP regression model on unit-cube inputs.
#[derive(Debug, Clone)]
pub struct GpModel {
    inputs: Vec<[f64; DIM]>,
    targets: DVector<f64>,
    standardization: Standardization,
    factor: Option<Factorization>,
}

impl GpModel {
    /// Builds a model from raw targets, standardizing them.
    pub fn new(inputs: Vec<[f64; DIM]>, raw_targets: &[f64]) -> Result<Self> {
        let standardization = Standardization::from_targets(raw_targets)?;
        Self::with_standardization(inputs, raw_targets, standardization)
    }

    /// Builds a model with an explicitly supplied standardization.
    pub fn with_standardization(
        inputs: Vec<[f64; DIM]>,
        raw_targets: &[f64],
        standardization: Standardization,
    ) -> Result<Self> {
        if inputs.len() != raw_targets.len() || inputs.is_empty() {
            return Err(Error::InvalidParameter {
                name: "training data",
                reason: format!("{} inputs vs {} targets", inputs.len(), raw_targets.len()),
            });
        }
        if !(standardization.std > 0.0) {
            return Err(Error::ConstantTargets);
        }
        if inputs
            .iter()
            .flatten()
            .chain(raw_targets)
            .any(|v| !v.is_finite())
        {
            return Err(Error::InvalidParameter {
                name: "training data",
                reason: "non-finite value".into(),
            });
        }
        let targets = DVector::from_iterator(
            raw_targets.len(),
            raw_targets
                .iter()
                .map(|y| (y - standardization.mean) / standardization.std),
        );
        Ok(Self {
            inputs,
            targets,
            standardization,
            factor: None,
        })
    }

    pub fn n(&self) -> usize {
        self.inputs.len()
    }

    pub fn inputs(&self) -> &[[f64; DIM]] {
        &self.inputs
    }

    /// Standardized training targets.
    pub fn targets(&self) -> &DVector<f64> {
        &self.targets
    }

    pub fn standardization(&self) -> Standardization {
        self.standardization
    }

    pub fn hyperparameters(&self) -> Option<GpHyperparameters> {
        self.factor.as_ref().map(|f| f.hyper)
    }

    /// Diagonal jitter the current factorization needed.
    pub fn jitter(&self) -> Option<f64> {
        self.factor.as_ref().map(|f| f.jitter)
    }

    pub fn is_fitted(&self) -> bool {
        self.factor.is_some()
    }

    /// Prior covariance matrix `K(X, X)` without noise.
    pub fn kernel_matrix(&self, hyper: &GpHyperparameters) -> DMatrix<f64> {
        let n = self.n();
        let mut k = DMatrix::zeros(n, n);
        for i in 0..n {
            k[(i, i)] = hyper.output_scale;
            for j in 0..i {
                let v = matern_unchecked(&self.inputs[i], &self.inputs[j], hyper);
                k[(i, j)] = v;
                k[(j, i)] = v;
            }
        }
        k
    }

    fn factorize(&self, hyper: &GpHyperparameters) -> Result<Factorization> {
        hyper.validate()?;
        let mut k = self.kernel_matrix(hyper);
        for i in 0..self.n() {
            k[(i, i)] += hyper.noise_variance;
        }
        let (chol, jitter) = cholesky_jittered(&k)?;
        let alpha = chol.solve(&self.targets);
        let lower = chol.l();
        Ok(Factorization {
            hyper: *hyper,
            chol,
            lower,
            alpha,
            jitter,
        })
    }

    /// Installs hyperparameters and caches the factorization of
    /// `K(X, X) + noise * I`.
    pub fn set_hyperparameters(&mut self, hyper: GpHyperparameters) -> Result<()> {
        self.factor = Some(self.factorize(&hyper)?);
        Ok(())
    }

    fn factor(&self) -> Result<&Factorization> {
        self.factor.as_ref().ok_or(Error::NotFitted)
    }

    /// Exact log marginal likelihood of the standardized targets.
    pub fn log_marginal_likelihood(&self) -> Result<f64> {
        Ok(mll_from_factor(self.factor()?, &self.targets))
    }

    /// Log marginal likelihood and its gradient with respect to
    /// `[ln l_h, ln l_l, ln l_s, ln sf2, ln sn2]` at `hyper`.
    pub fn mll_and_gradient(&self, hyper: &GpHyperparameters) -> Result<(f64, [f64; N_PARAMS])> {
        let f = self.factorize(hyper)?;
        let mll = mll_from_factor(&f, &self.targets);
        let n = self.n();
        let k_inv = f.chol.inverse();
        // W = alpha alpha^T - K^{-1}; dL/dtheta = 0.5 tr(W dK/dtheta)
        let alpha = &f.alpha;
        let mut grad = [0.0; N_PARAMS];
        let ls = &hyper.lengthscales;
        for i in 0..n {
            let w_ii = alpha[i] * alpha[i] - k_inv[(i, i)];
            grad[DIM] += 0.5 * w_ii * hyper.output_scale;
            grad[DIM + 1] += 0.5 * w_ii * hyper.noise_variance;
            for j in 0..i {
                let w_ij = alpha[i] * alpha[j] - k_inv[(i, j)];
                let sq = scaled_sq(&self.inputs[i], &self.inputs[j], ls);
                let r = sq.iter().sum::<f64>().sqrt();
                let kij = hyper.output_scale * matern_profile(r);
                let g = hyper.output_scale * matern_grad_factor(r);
                // off-diagonal entries appear twice in the trace
                grad[DIM] += w_ij * kij;
                for d in 0..DIM {
                    grad[d] += w_ij * g * sq[d];
                }
            }
        }
        Ok((mll, grad))
    }

    /// Latent posterior at a unit-cube query, de-standardized to raw units.
    pub fn posterior(&self, query: &[f64; DIM]) -> Result<PosteriorPrediction> {
        let (mean, var) = self.posterior_standardized(query)?;
        let s = self.standardization;
        Ok(PosteriorPrediction {
            mean: mean * s.std + s.mean,
            variance: var * s.std * s.std,
        })
    }

    /// Latent posterior mean and variance in standardized units.
    pub fn posterior_standardized(&self, query: &[f64; DIM]) -> Result<(f64, f64)> {
        let f = self.factor()?;
        let kx = self.cross_covariance(query, &f.hyper);
        let mean = kx.dot(&f.alpha);
        let v = f
            .lower
            .solve_lower_triangular(&kx)
            .expect("cholesky factor has a positive diagonal");
        let var = (f.hyper.output_scale - v.norm_squared()).max(0.0);
        Ok((mean, var))
    }

    fn cross_covariance(&self, query: &[f64; DIM], hyper: &GpHyperparameters) -> DVector<f64> {
        DVector::from_iterator(
            self.n(),
            self.inputs
                .iter()
                .map(|x| matern_unchecked(x, query, hyper)),
        )
    }

    /// Precomputes the joint latent posterior over `points` so that many
    /// candidates can be conditioned against it cheaply.
    pub fn joint_posterior(&self, points: &[[f64; DIM]]) -> Result<JointPosterior<'_>> {
        let f = self.factor()?;
        let m = points.len();
        let mut cross = DMatrix::zeros(self.n(), m);
        for (j, p) in points.iter().enumerate() {
            cross.set_column(j, &self.cross_covariance(p, &f.hyper));
        }
        let w = f
            .lower
            .solve_lower_triangular(&cross)
            .expect("cholesky factor has a positive diagonal");
        let mean = cross.transpose() * &f.alpha;
        let mut cov = DMatrix::zeros(m, m);
        for i in 0..m {
            for j in 0..=i {
                let k = matern_unchecked(&points[i], &points[j], &f.hyper);
                let v = k - w.column(i).dot(&w.column(j));
                cov[(i, j)] = v;
                cov[(j, i)] = v;
            }
        }
        Ok(JointPosterior {
            model: self,
            points: points.to_vec(),
            w,
            mean,
            cov,
        })
    }
}

fn mll_from_factor(f: &Factorization, y: &DVector<f64>) -> f64 {
    let n = y.len() as f64;
    let log_det: f64 = 2.0 * f.lower.diagonal().iter().map(|d| d.ln()).sum::<f64>();
    -0.5 * y.dot(&f.alpha) - 0.5 * log_det - 0.5 * n * (2.0 * PI).ln()
}

/// Latent posterior over a fixed point set, in standardized units.
#[derive(Debug, Clone)]
pub struct JointPosterior<'a> {
    model: &'a GpModel,
    points: Vec<[f64; DIM]>,
    // L^{-1} K(X, points)
    w: DMatrix<f64>,
    pub mean: DVector<f64>,
    pub cov: DMatrix<f64>,
}

/// Candidate-side terms of a joint posterior, in standardized units.
#[derive(Debug, Clone)]
pub struct CandidatePosterior {
    pub mean: f64,
    pub variance: f64,
    /// Posterior covariance between the candidate and each fixed point.
    pub cross: DVector<f64>,
}

impl JointPosterior<'_> {
    pub fn points(&self) -> &[[f64; DIM]] {
        &self.points
    }

    pub fn candidate(&self, query: &[f64; DIM]) -> CandidatePosterior {
        let f = self
            .model
            .factor
            .as_ref()
            .expect("joint posterior built from a fitted model");
        let kx = self.model.cross_covariance(query, &f.hyper);
        let v = f
            .lower
            .solve_lower_triangular(&kx)
            .expect("cholesky factor has a positive diagonal");
        let mean = kx.dot(&f.alpha);
        let variance = (f.hyper.output_scale - v.norm_squared()).max(0.0);
        let prior_cross = DVector::from_iterator(
            self.points.len(),
            self.points
                .iter()
                .map(|p| matern_unchecked(query, p, &f.hyper)),
        );
        let cross = prior_cross - self.w.transpose() * v;
        CandidatePosterior {
            mean,
            variance,
            cross,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_problem(rng: &mut ChaCha8Rng, n: usize) -> (GpModel, GpHyperparameters) {
        let x: Vec<[f64; 3]> = (0..n)
            .map(|_| std::array::from_fn(|_| rng.random()))
            .collect();
        let y: Vec<f64> = (0..n).map(|_| 300.0 + 50.0 * rng.random::<f64>()).collect();
        let hyper = GpHyperparameters {
            lengthscales: std::array::from_fn(|_| rng.random_range(0.1..1.5)),
            output_scale: rng.random_range(0.3..3.0),
            noise_variance: rng.random_range(1e-4..0.3),
        };
        let mut m = GpModel::new(x, &y).unwrap();
        m.set_hyperparameters(hyper).unwrap();
        (m, hyper)
    }

    #[test]
    fn one_point_mll() {
        let s = Standardization {
            mean: 0.0,
            std: 1.0,
        };
        let hyper = GpHyperparameters {
            lengthscales: [0.5; 3],
            output_scale: 1.0 - 1e-4,
            noise_variance: 1e-4,
        };
        let mut m = GpModel::with_standardization(vec![[0.5; 3]], &[0.0], s).unwrap();
        m.set_hyperparameters(hyper).unwrap();
        let want = -0.5 * (2.0 * PI).ln();
        assert!((m.log_marginal_likelihood().unwrap() - want).abs() < 1e-12);

        let mut m = GpModel::with_standardization(vec![[0.5; 3]], &[1.0], s).unwrap();
        m.set_hyperparameters(hyper).unwrap();
        assert!((m.log_marginal_likelihood().unwrap() - (want - 0.5)).abs() < 1e-12);
    }

    #[test]
    fn constant_targets_rejected() {
        let x = vec![[0.1; 3], [0.5; 3], [0.9; 3]];
        assert!(matches!(
            GpModel::new(x, &[4.0, 4.0, 4.0]),
            Err(Error::ConstantTargets)
        ));
    }

    #[test]
    fn unfitted_model_errors() {
        let m = GpModel::new(vec![[0.1; 3], [0.9; 3]], &[1.0, 2.0]).unwrap();
        assert!(matches!(m.posterior(&[0.5; 3]), Err(Error::NotFitted)));
        assert!(matches!(m.log_marginal_likelihood(), Err(Error::NotFitted)));
    }

    #[test]
    fn kernel_matrix_symmetric_psd() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..10 {
            let (m, hyper) = random_problem(&mut rng, 12);
            let k = m.kernel_matrix(&hyper);
            assert!((&k - k.transpose()).amax() <= 1e-12);
            let eig = k.symmetric_eigenvalues();
            assert!(eig.min() >= -1e-8, "min eigenvalue {}", eig.min());
        }
    }

    #[test]
    fn variance_at_training_input_bounded_by_noise() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..10 {
            let (m, hyper) = random_problem(&mut rng, 8);
            let std = m.standardization().std;
            for x in m.inputs() {
                let p = m.posterior(x).unwrap();
                assert!(p.variance >= 0.0);
                assert!(p.variance <= hyper.noise_variance * std * std + 1e-6);
            }
        }
    }

    #[test]
    fn interpolates_and_reverts_to_prior() {
        let x = vec![
            [0.1, 0.2, 0.3],
            [0.7, 0.6, 0.2],
            [0.4, 0.9, 0.8],
            [0.3, 0.3, 0.9],
        ];
        let y = [1500.0, 1620.0, 1580.0, 1700.0];
        let mut m = GpModel::new(x.clone(), &y).unwrap();
        let hyper = GpHyperparameters {
            lengthscales: [0.05; 3],
            output_scale: 1.3,
            noise_variance: 1e-4,
        };
        m.set_hyperparameters(hyper).unwrap();
        let s = m.standardization();
        for (xi, yi) in x.iter().zip(y) {
            let p = m.posterior(xi).unwrap();
            assert!((p.mean - yi).abs() < 0.01 * s.std);
        }
        let far = m.posterior(&[50.0, 50.0, 50.0]).unwrap();
        assert!((far.variance / (1.3 * s.std * s.std) - 1.0).abs() < 0.01);
        assert!((far.mean - s.mean).abs() < 1e-6 * s.std);
    }

    #[test]
    fn joint_posterior_consistent_with_marginals() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let (m, _) = random_problem(&mut rng, 9);
        let pts: Vec<[f64; 3]> = (0..4)
            .map(|_| std::array::from_fn(|_| rng.random()))
            .collect();
        let joint = m.joint_posterior(&pts).unwrap();
        for (i, p) in pts.iter().enumerate() {
            let (mu, var) = m.posterior_standardized(p).unwrap();
            assert!((joint.mean[i] - mu).abs() < 1e-12);
            assert!((joint.cov[(i, i)] - var).abs() < 1e-10);
        }
        let q = [0.3, 0.6, 0.1];
        let c = joint.candidate(&q);
        let mut all = pts.clone();
        all.push(q);
        let big = m.joint_posterior(&all).unwrap();
        for i in 0..pts.len() {
            assert!((c.cross[i] - big.cov[(4, i)]).abs() < 1e-10);
        }
        assert!((c.variance - big.cov[(4, 4)]).abs() < 1e-10);
    }
}
