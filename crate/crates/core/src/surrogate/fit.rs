//! MAP training of the surrogate hyperparameters.
//!
//! The objective is the exact log marginal likelihood plus the Gamma
//! log-priors on the lengthscales and output scale, maximized over
//! `[ln l_h, ln l_l, ln l_s, ln sf2, ln(sn2 - floor)]` with BFGS. One run
//! starts from the warm start (or a fixed cold start), two more from draws of
//! the priors; the best run wins.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Gamma};
use serde::{Deserialize, Serialize};

use super::kernel::{GpHyperparameters, NOISE_FLOOR};
use super::model::{GpModel, N_PARAMS};
use crate::error::{Error, Result};
use crate::problem::DIM;

/// Gamma distribution with shape/rate parameterization, density
/// proportional to `x^(c-1) exp(-r x)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GammaPrior {
    pub concentration: f64,
    pub rate: f64,
}

impl GammaPrior {
    pub fn new(concentration: f64, rate: f64) -> Result<Self> {
        if !(concentration > 0.0 && rate > 0.0) {
            return Err(Error::InvalidParameter {
                name: "gamma prior",
                reason: format!("concentration {concentration} and rate {rate} must be > 0"),
            });
        }
        Ok(Self {
            concentration,
            rate,
        })
    }

    pub fn log_density(&self, x: f64) -> f64 {
        let (c, r) = (self.concentration, self.rate);
        c * r.ln() - libm::lgamma(c) + (c - 1.0) * x.ln() - r * x
    }

    /// Derivative of [`Self::log_density`] with respect to `ln x`.
    fn dlog_density_dlog(&self, x: f64) -> f64 {
        (self.concentration - 1.0) - self.rate * x
    }

    fn sample(&self, rng: &mut ChaCha8Rng) -> f64 {
        Gamma::new(self.concentration, 1.0 / self.rate)
            .expect("validated gamma parameters")
            .sample(rng)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HyperPriors {
    pub lengthscale: GammaPrior,
    pub outputscale: GammaPrior,
}

impl Default for HyperPriors {
    fn default() -> Self {
        Self {
            lengthscale: GammaPrior {
                concentration: 3.0,
                rate: 6.0,
            },
            outputscale: GammaPrior {
                concentration: 2.0,
                rate: 0.15,
            },
        }
    }
}

impl HyperPriors {
    pub fn log_density(&self, h: &GpHyperparameters) -> f64 {
        h.lengthscales
            .iter()
            .map(|&l| self.lengthscale.log_density(l))
            .sum::<f64>()
            + self.outputscale.log_density(h.output_scale)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FitOptions {
    /// Restarts drawn from the priors, in addition to the warm/cold start.
    pub prior_restarts: usize,
    pub max_iterations: usize,
    pub gradient_tolerance: f64,
    /// Seed for the prior-sampled restarts.
    pub seed: u64,
}

impl Default for FitOptions {
    fn default() -> Self {
        Self {
            prior_restarts: 2,
            max_iterations: 200,
            gradient_tolerance: 1e-5,
            seed: 0x5eed,
        }
    }
}

#[derive(Debug, Clone)]
pub struct FitReport {
    pub hyper: GpHyperparameters,
    /// MLL plus log-priors at the returned hyperparameters.
    pub objective: f64,
    pub log_marginal_likelihood: f64,
    /// Objective evaluations summed over all restarts.
    pub evaluations: usize,
    /// Evaluations spent by the first (warm or cold) restart.
    pub first_restart_evaluations: usize,
}

// log-space box keeping the kernel matrix numerically sane
const LOG_LENGTHSCALE: (f64, f64) = (-6.9, 4.6);
const LOG_OUTPUTSCALE: (f64, f64) = (-9.2, 6.9);
const LOG_NOISE_EXCESS: (f64, f64) = (-18.4, 2.3);

fn box_bounds(i: usize) -> (f64, f64) {
    match i {
        i if i < DIM => LOG_LENGTHSCALE,
        i if i == DIM => LOG_OUTPUTSCALE,
        _ => LOG_NOISE_EXCESS,
    }
}

fn to_theta(h: &GpHyperparameters) -> [f64; N_PARAMS] {
    let mut t = [0.0; N_PARAMS];
    for d in 0..DIM {
        t[d] = h.lengthscales[d].ln();
    }
    t[DIM] = h.output_scale.ln();
    t[DIM + 1] = (h.noise_variance - NOISE_FLOOR)
        .max(1e-8 * NOISE_FLOOR)
        .ln();
    for (i, v) in t.iter_mut().enumerate() {
        let (lo, hi) = box_bounds(i);
        *v = v.clamp(lo, hi);
    }
    t
}

fn from_theta(t: &[f64; N_PARAMS]) -> GpHyperparameters {
    GpHyperparameters {
        lengthscales: std::array::from_fn(|d| t[d].exp()),
        output_scale: t[DIM].exp(),
        noise_variance: NOISE_FLOOR + t[DIM + 1].exp(),
    }
}

struct Objective<'a> {
    model: &'a GpModel,
    priors: &'a HyperPriors,
    evaluations: usize,
}

impl Objective<'_> {
    /// Negative MAP objective and its gradient in theta.
    fn eval(&mut self, t: &[f64; N_PARAMS]) -> Option<(f64, [f64; N_PARAMS])> {
        self.evaluations += 1;
        let h = from_theta(t);
        let (mll, g) = self.model.mll_and_gradient(&h).ok()?;
        let value = mll + self.priors.log_density(&h);
        if !value.is_finite() {
            return None;
        }
        let mut grad = [0.0; N_PARAMS];
        for d in 0..DIM {
            grad[d] = -(g[d] + self.priors.lengthscale.dlog_density_dlog(h.lengthscales[d]));
        }
        grad[DIM] = -(g[DIM] + self.priors.outputscale.dlog_density_dlog(h.output_scale));
        // chain rule through sn2 = floor + exp(theta)
        grad[DIM + 1] = -g[DIM + 1] * (h.noise_variance - NOISE_FLOOR) / h.noise_variance;
        Some((-value, grad))
    }
}

fn project(t: &mut [f64; N_PARAMS]) {
    for (i, v) in t.iter_mut().enumerate() {
        let (lo, hi) = box_bounds(i);
        *v = v.clamp(lo, hi);
    }
}

fn projected_grad_norm(t: &[f64; N_PARAMS], g: &[f64; N_PARAMS]) -> f64 {
    let mut s = 0.0;
    for i in 0..N_PARAMS {
        let (lo, hi) = box_bounds(i);
        let blocked = (t[i] <= lo && g[i] > 0.0) || (t[i] >= hi && g[i] < 0.0);
        if !blocked {
            s += g[i] * g[i];
        }
    }
    s.sqrt()
}

/// Projected BFGS with backtracking Armijo line search (minimization).
fn bfgs(
    obj: &mut Objective<'_>,
    start: [f64; N_PARAMS],
    opts: &FitOptions,
) -> Option<([f64; N_PARAMS], f64)> {
    let mut x = start;
    project(&mut x);
    let (mut f, mut g) = obj.eval(&x)?;
    let mut hinv = [[0.0; N_PARAMS]; N_PARAMS];
    for (i, row) in hinv.iter_mut().enumerate() {
        row[i] = 1.0;
    }
    for _ in 0..opts.max_iterations {
        if projected_grad_norm(&x, &g) < opts.gradient_tolerance {
            break;
        }
        let mut dir = [0.0; N_PARAMS];
        for i in 0..N_PARAMS {
            dir[i] = -(0..N_PARAMS).map(|j| hinv[i][j] * g[j]).sum::<f64>();
        }
        let mut slope: f64 = dir.iter().zip(&g).map(|(d, gi)| d * gi).sum();
        if slope >= 0.0 {
            // lost descent: fall back to steepest descent
            for (i, row) in hinv.iter_mut().enumerate() {
                dir[i] = -g[i];
                row.iter_mut().for_each(|v| *v = 0.0);
                row[i] = 1.0;
            }
            slope = -g.iter().map(|v| v * v).sum::<f64>();
        }
        // cap the step so no coordinate moves more than 2 in log space
        let max_move = dir.iter().fold(0.0f64, |m, d| m.max(d.abs()));
        let mut step = if max_move > 2.0 { 2.0 / max_move } else { 1.0 };
        let mut accepted = None;
        for _ in 0..30 {
            let mut trial = [0.0; N_PARAMS];
            for i in 0..N_PARAMS {
                trial[i] = x[i] + step * dir[i];
            }
            project(&mut trial);
            if let Some((ft, gt)) = obj.eval(&trial) {
                let decrease: f64 = trial
                    .iter()
                    .zip(&x)
                    .zip(&g)
                    .map(|((a, b), gi)| (a - b) * gi)
                    .sum();
                if ft <= f + 1e-4 * decrease.min(step * slope).min(0.0) {
                    accepted = Some((trial, ft, gt));
                    break;
                }
            }
            step *= 0.5;
        }
        let Some((xn, fnew, gn)) = accepted else {
            break;
        };
        let s: [f64; N_PARAMS] = std::array::from_fn(|i| xn[i] - x[i]);
        let y: [f64; N_PARAMS] = std::array::from_fn(|i| gn[i] - g[i]);
        let sy: f64 = s.iter().zip(&y).map(|(a, b)| a * b).sum();
        if sy > 1e-12 {
            let rho = 1.0 / sy;
            let hy: [f64; N_PARAMS] =
                std::array::from_fn(|i| (0..N_PARAMS).map(|j| hinv[i][j] * y[j]).sum());
            let yhy: f64 = y.iter().zip(&hy).map(|(a, b)| a * b).sum();
            for i in 0..N_PARAMS {
                for j in 0..N_PARAMS {
                    hinv[i][j] += -rho * (hy[i] * s[j] + s[i] * hy[j])
                        + (rho * rho * yhy + rho) * s[i] * s[j];
                }
            }
        }
        let converged = (f - fnew).abs() <= 1e-12 * f.abs().max(1.0);
        x = xn;
        f = fnew;
        g = gn;
        if converged && projected_grad_norm(&x, &g) < 1e-3 {
            break;
        }
    }
    Some((x, f))
}

/// Fits MAP hyperparameters, installs them on the model and reports the fit.
pub fn fit(
    model: &mut GpModel,
    priors: &HyperPriors,
    warm_start: Option<&GpHyperparameters>,
    opts: &FitOptions,
) -> Result<FitReport> {
    if model.n() < 2 {
        return Err(Error::TooFewPoints {
            required: 2,
            got: model.n(),
        });
    }
    let mut starts = vec![to_theta(&warm_start.copied().unwrap_or_default())];
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    for _ in 0..opts.prior_restarts {
        let h = GpHyperparameters {
            lengthscales: std::array::from_fn(|_| priors.lengthscale.sample(&mut rng)),
            output_scale: priors.outputscale.sample(&mut rng),
            noise_variance: NOISE_FLOOR
                + (10f64).powf(-4.0 + 3.0 * rand::Rng::random::<f64>(&mut rng)),
        };
        starts.push(to_theta(&h));
    }

    let mut obj = Objective {
        model,
        priors,
        evaluations: 0,
    };
    let mut best: Option<([f64; N_PARAMS], f64)> = None;
    let mut first_restart_evaluations = 0;
    for (k, start) in starts.into_iter().enumerate() {
        let before = obj.evaluations;
        let result = bfgs(&mut obj, start, opts);
        if k == 0 {
            if result.is_none() {
                return Err(Error::Initialization);
            }
            first_restart_evaluations = obj.evaluations - before;
        }
        if let Some((t, f)) = result {
            if best.as_ref().is_none_or(|(_, fb)| f < *fb) {
                best = Some((t, f));
            }
        }
    }
    let evaluations = obj.evaluations;
    let (theta, neg_obj) = best.ok_or(Error::Initialization)?;
    let hyper = from_theta(&theta);
    model.set_hyperparameters(hyper)?;
    let log_marginal_likelihood = model.log_marginal_likelihood()?;
    Ok(FitReport {
        hyper,
        objective: -neg_obj,
        log_marginal_likelihood,
        evaluations,
        first_restart_evaluations,
    })
}

/// MAP objective (MLL plus log-priors) at `hyper` without modifying `model`.
pub fn map_objective(
    model: &GpModel,
    priors: &HyperPriors,
    hyper: &GpHyperparameters,
) -> Result<f64> {
    let (mll, _) = model.mll_and_gradient(hyper)?;
    Ok(mll + priors.log_density(hyper))
}
