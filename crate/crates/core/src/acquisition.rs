//! Constrained, cost-aware acquisition.
//!
//! The score of a unit-cube candidate is
//! `EI(x) * PF(x) * z(x)^gamma * t(x)^-beta`, where `EI` is the Monte-Carlo
//! noisy expected improvement of the objective surrogate, `PF` the probability
//! that the constraint surrogate stays under the cap, `z` the fidelity index
//! and `t` the calibrated runtime model.

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fidelity_cost::{fidelity_index, runtime_predict, RuntimeCoefficients};
use crate::linalg::cholesky_jittered;
use crate::normal;
use crate::problem::{denormalize, Bounds, DesignPoint, DIM};
use crate::qmc::SobolGenerator;
use crate::surrogate::{GpModel, JointPosterior, PosteriorPrediction};

/// How the expected improvement of the objective is computed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ImprovementMode {
    /// QMC estimate under the joint posterior of candidate and incumbents.
    #[default]
    Noisy,
    /// Closed-form EI against the best posterior mean at the incumbents.
    Analytic,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AcquisitionConfig {
    /// Runtime penalty exponent.
    pub beta: f64,
    /// Fidelity penalty exponent.
    pub gamma: f64,
    /// NOx mass-fraction cap.
    pub nox_cap: f64,
    pub mc_samples: usize,
    pub restarts: usize,
    pub raw_samples: usize,
    pub seed: u64,
    pub mode: ImprovementMode,
}

impl Default for AcquisitionConfig {
    fn default() -> Self {
        Self {
            beta: 1.0,
            gamma: 1.0,
            nox_cap: 2e-6,
            mc_samples: 256,
            restarts: 12,
            raw_samples: 512,
            seed: 0,
            mode: ImprovementMode::Noisy,
        }
    }
}

impl AcquisitionConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |name, reason: String| Err(Error::InvalidParameter { name, reason });
        if !(self.beta >= 0.0 && self.beta.is_finite()) {
            return bad(
                "beta",
                format!("must be finite and >= 0, got {}", self.beta),
            );
        }
        if !(self.gamma >= 0.0 && self.gamma.is_finite()) {
            return bad(
                "gamma",
                format!("must be finite and >= 0, got {}", self.gamma),
            );
        }
        if self.nox_cap.is_nan() {
            return bad("nox_cap", "must not be NaN".into());
        }
        if self.mc_samples < 16 || !self.mc_samples.is_power_of_two() {
            return bad(
                "mc_samples",
                format!("must be a power of two >= 16, got {}", self.mc_samples),
            );
        }
        if self.restarts < 1 {
            return bad("restarts", "must be >= 1".into());
        }
        if self.raw_samples < self.restarts {
            return bad(
                "raw_samples",
                format!(
                    "{} is fewer than restarts ({})",
                    self.raw_samples, self.restarts
                ),
            );
        }
        Ok(())
    }
}

/// `Phi((cap - mu) / sigma)`, the indicator `mu <= cap` when `sigma == 0`.
pub fn probability_feasible(pred: &PosteriorPrediction, cap: f64) -> f64 {
    let sigma = pred.std_dev();
    if sigma == 0.0 || !sigma.is_finite() {
        return if pred.mean <= cap { 1.0 } else { 0.0 };
    }
    normal::cdf((cap - pred.mean) / sigma)
}

/// Closed-form expected improvement `sigma (phi(u) + u Phi(u))`.
pub fn analytic_ei(mean: f64, sigma: f64, threshold: f64) -> f64 {
    if sigma <= 0.0 {
        return (mean - threshold).max(0.0);
    }
    let u = (mean - threshold) / sigma;
    (sigma * (normal::pdf(u) + u * normal::cdf(u))).max(0.0)
}

/// Monte-Carlo noisy expected improvement with base samples fixed across
/// candidates.
///
/// The joint latent posterior over the incumbent inputs is factored once and
/// their sample paths are drawn once; each candidate then only needs its own
/// conditional column of the joint Cholesky factor.
#[derive(Debug)]
pub struct NoisyExpectedImprovement<'a> {
    joint: JointPosterior<'a>,
    chol_obs: DMatrix<f64>,
    /// incumbent base samples, one column per MC sample
    base_obs: DMatrix<f64>,
    base_candidate: DVector<f64>,
    /// per-sample maximum over incumbent draws (standardized)
    best: DVector<f64>,
    scale: f64,
}

impl<'a> NoisyExpectedImprovement<'a> {
    /// `sampler` must have dimension `observed.len() + 1`; `mc_samples`
    /// normal draws are taken from its current position.
    pub fn new(
        model: &'a GpModel,
        observed: &[[f64; DIM]],
        sampler: &mut SobolGenerator,
        mc_samples: usize,
    ) -> Result<Self> {
        let m = observed.len();
        if m == 0 {
            return Err(Error::InvalidParameter {
                name: "observed_inputs",
                reason: "at least one incumbent input is required".into(),
            });
        }
        if sampler.dimension() != m + 1 {
            return Err(Error::InvalidParameter {
                name: "sampler",
                reason: format!(
                    "dimension {} but {} incumbents + 1 candidate",
                    sampler.dimension(),
                    m
                ),
            });
        }
        let joint = model.joint_posterior(observed)?;
        let (chol, _) = cholesky_jittered(&joint.cov)?;
        let chol_obs = chol.l();
        let draws = sampler.qmc_normal_samples(mc_samples);
        let mut base_obs = DMatrix::zeros(m, mc_samples);
        let mut base_candidate = DVector::zeros(mc_samples);
        for (k, d) in draws.iter().enumerate() {
            for j in 0..m {
                base_obs[(j, k)] = d[j];
            }
            base_candidate[k] = d[m];
        }
        let paths = &chol_obs * &base_obs;
        let best = DVector::from_iterator(
            mc_samples,
            (0..mc_samples).map(|k| {
                (0..m)
                    .map(|j| joint.mean[j] + paths[(j, k)])
                    .fold(f64::NEG_INFINITY, f64::max)
            }),
        );
        Ok(Self {
            joint,
            chol_obs,
            base_obs,
            base_candidate,
            best,
            scale: model.standardization().std,
        })
    }

    /// Expected improvement at `candidate`, in raw objective units.
    pub fn evaluate(&self, candidate: &[f64; DIM]) -> f64 {
        let c = self.joint.candidate(candidate);
        let l_x = self
            .chol_obs
            .solve_lower_triangular(&c.cross)
            .expect("incumbent factor has a positive diagonal");
        let d = (c.variance - l_x.norm_squared()).max(0.0).sqrt();
        let shared = self.base_obs.tr_mul(&l_x);
        let s = self.best.len();
        let total: f64 = (0..s)
            .map(|k| (c.mean + shared[k] + d * self.base_candidate[k] - self.best[k]).max(0.0))
            .sum();
        total / s as f64 * self.scale
    }
}

/// One-shot noisy expected improvement at `candidate` (raw units).
pub fn qnei(
    model: &GpModel,
    candidate: &[f64; DIM],
    observed: &[[f64; DIM]],
    sampler: &mut SobolGenerator,
    mc_samples: usize,
) -> Result<f64> {
    Ok(NoisyExpectedImprovement::new(model, observed, sampler, mc_samples)?.evaluate(candidate))
}

/// Incumbent inputs: training inputs whose constraint posterior mean meets
/// the cap. Falls back to all inputs (flagged `true`) when none does.
pub fn feasible_incumbents(
    objective: &GpModel,
    constraint: &GpModel,
    cap: f64,
) -> Result<(Vec<[f64; DIM]>, bool)> {
    let mut feasible = Vec::new();
    for x in objective.inputs() {
        if constraint.posterior(x)?.mean <= cap {
            feasible.push(*x);
        }
    }
    if feasible.is_empty() {
        Ok((objective.inputs().to_vec(), true))
    } else {
        Ok((feasible, false))
    }
}

enum Improvement<'a> {
    Noisy(Box<NoisyExpectedImprovement<'a>>),
    Analytic { model: &'a GpModel, threshold: f64 },
}

/// Every factor of a penalized acquisition score.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AcquisitionBreakdown {
    pub score: f64,
    /// Unconstrained expected improvement, raw objective units.
    pub improvement: f64,
    pub pf: f64,
    pub z: f64,
    pub t_hat: f64,
    /// `z^gamma`
    pub penalty_z: f64,
    /// `t_hat^-beta`
    pub penalty_t: f64,
}

/// Fitted surrogates and runtime model bundled for repeated scoring.
pub struct PenalizedAcquisition<'a> {
    constraint: &'a GpModel,
    improvement: Improvement<'a>,
    cfg: AcquisitionConfig,
    coeffs: RuntimeCoefficients,
    bounds: Bounds,
    /// No incumbent was predicted feasible; all inputs were used.
    pub incumbent_fallback: bool,
}

impl<'a> PenalizedAcquisition<'a> {
    pub fn new(
        objective: &'a GpModel,
        constraint: &'a GpModel,
        cfg: &AcquisitionConfig,
        coeffs: &RuntimeCoefficients,
        bounds: &Bounds,
    ) -> Result<Self> {
        cfg.validate()?;
        if !objective.is_fitted() || !constraint.is_fitted() {
            return Err(Error::NotFitted);
        }
        let (incumbents, incumbent_fallback) =
            feasible_incumbents(objective, constraint, cfg.nox_cap)?;
        let improvement = match cfg.mode {
            ImprovementMode::Noisy => {
                let mut sampler = SobolGenerator::new(incumbents.len() + 1, Some(cfg.seed))?;
                Improvement::Noisy(Box::new(NoisyExpectedImprovement::new(
                    objective,
                    &incumbents,
                    &mut sampler,
                    cfg.mc_samples,
                )?))
            }
            ImprovementMode::Analytic => {
                let mut threshold = f64::NEG_INFINITY;
                for x in &incumbents {
                    threshold = threshold.max(objective.posterior(x)?.mean);
                }
                Improvement::Analytic {
                    model: objective,
                    threshold,
                }
            }
        };
        Ok(Self {
            constraint,
            improvement,
            cfg: *cfg,
            coeffs: *coeffs,
            bounds: *bounds,
            incumbent_fallback,
        })
    }

    pub fn config(&self) -> &AcquisitionConfig {
        &self.cfg
    }

    pub fn evaluate(&self, candidate: &[f64; DIM]) -> Result<AcquisitionBreakdown> {
        let x = denormalize(candidate, &self.bounds)?;
        let z = fidelity_index(&x, &self.bounds)?;
        let t_hat = runtime_predict(&x, &self.coeffs, &self.bounds)?;
        let improvement = match &self.improvement {
            Improvement::Noisy(nei) => nei.evaluate(candidate),
            Improvement::Analytic { model, threshold } => {
                let p = model.posterior(candidate)?;
                analytic_ei(p.mean, p.std_dev(), *threshold)
            }
        };
        let pf = probability_feasible(&self.constraint.posterior(candidate)?, self.cfg.nox_cap);
        let penalty_z = z.powf(self.cfg.gamma);
        let penalty_t = t_hat.powf(-self.cfg.beta);
        Ok(AcquisitionBreakdown {
            score: improvement * pf * penalty_z * penalty_t,
            improvement,
            pf,
            z,
            t_hat,
            penalty_z,
            penalty_t,
        })
    }
}

/// Penalized acquisition score of one candidate.
pub fn penalized_acquisition(
    candidate: &[f64; DIM],
    objective: &GpModel,
    constraint: &GpModel,
    cfg: &AcquisitionConfig,
    coeffs: &RuntimeCoefficients,
    bounds: &Bounds,
) -> Result<AcquisitionBreakdown> {
    PenalizedAcquisition::new(objective, constraint, cfg, coeffs, bounds)?.evaluate(candidate)
}

#[derive(Debug, Clone, PartialEq)]
pub struct Proposal {
    pub x: DesignPoint,
    pub unit: [f64; DIM],
    pub breakdown: AcquisitionBreakdown,
    /// Every raw candidate scored zero; `x` maximizes objective variance.
    pub pure_exploration: bool,
}

const PATTERN_INITIAL_STEP: f64 = 0.1;
const PATTERN_MIN_STEP: f64 = 1e-4;
const PATTERN_MAX_EVALS: usize = 400;

fn pattern_search(
    acq: &PenalizedAcquisition<'_>,
    start: [f64; DIM],
    start_score: f64,
    free: &[usize],
) -> Result<([f64; DIM], f64)> {
    let mut x = start;
    let mut fx = start_score;
    let mut step = PATTERN_INITIAL_STEP;
    let mut evals = 0;
    while step >= PATTERN_MIN_STEP && evals < PATTERN_MAX_EVALS {
        let mut best: Option<([f64; DIM], f64)> = None;
        for &d in free {
            for dir in [1.0, -1.0] {
                let mut y = x;
                y[d] = (x[d] + dir * step).clamp(0.0, 1.0);
                if y[d] == x[d] {
                    continue;
                }
                let fy = acq.evaluate(&y)?.score;
                evals += 1;
                if fy > fx && best.is_none_or(|(_, fb)| fy > fb) {
                    best = Some((y, fy));
                }
            }
        }
        match best {
            Some((y, fy)) => {
                x = y;
                fx = fy;
            }
            None => step *= 0.5,
        }
    }
    Ok((x, fx))
}

/// Multi-start maximization of the penalized acquisition.
///
/// Scores `raw_samples` scrambled Sobol candidates, refines the best
/// `restarts` of them with a coordinate pattern search, and returns the best
/// refined point. `pinned_unit_s` fixes the normalized mesh coordinate.
pub fn propose(
    acq: &PenalizedAcquisition<'_>,
    objective: &GpModel,
    pinned_unit_s: Option<f64>,
) -> Result<Proposal> {
    let cfg = acq.config();
    let mut gen = SobolGenerator::new(DIM, Some(cfg.seed.wrapping_add(0x9e37_79b9_7f4a_7c15)))?;
    let raw: Vec<[f64; DIM]> = gen
        .sobol_points(cfg.raw_samples)
        .into_iter()
        .map(|p| {
            let mut u = [p[0], p[1], p[2]];
            if let Some(s) = pinned_unit_s {
                u[2] = s;
            }
            u
        })
        .collect();
    let scores: Vec<f64> = raw
        .par_iter()
        .map(|u| acq.evaluate(u).map(|b| b.score))
        .collect::<Result<_>>()?;

    let mut order: Vec<usize> = (0..raw.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]).then(a.cmp(&b)));
    if !(scores[order[0]] > 0.0) {
        let mut best = (0, f64::NEG_INFINITY);
        for (i, u) in raw.iter().enumerate() {
            let v = objective.posterior(u)?.variance;
            if v > best.1 {
                best = (i, v);
            }
        }
        let unit = raw[best.0];
        return Ok(Proposal {
            x: denormalize(&unit, &acq.bounds)?,
            unit,
            breakdown: acq.evaluate(&unit)?,
            pure_exploration: true,
        });
    }

    let free: Vec<usize> = if pinned_unit_s.is_some() {
        vec![0, 1]
    } else {
        vec![0, 1, 2]
    };
    let refined: Vec<([f64; DIM], f64)> = order[..cfg.restarts]
        .par_iter()
        .map(|&i| pattern_search(acq, raw[i], scores[i], &free))
        .collect::<Result<_>>()?;
    let (unit, _) = refined
        .into_iter()
        .fold(None::<([f64; DIM], f64)>, |acc, (u, f)| match acc {
            Some((_, fb)) if fb >= f => acc,
            _ => Some((u, f)),
        })
        .expect("at least one restart");
    Ok(Proposal {
        x: denormalize(&unit, &acq.bounds)?,
        unit,
        breakdown: acq.evaluate(&unit)?,
        pure_exploration: false,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::surrogate::GpHyperparameters;
    use statrs::function::erf::erf;

    fn pred(mean: f64, variance: f64) -> PosteriorPrediction {
        PosteriorPrediction { mean, variance }
    }

    #[test]
    fn feasibility_examples() {
        assert_eq!(probability_feasible(&pred(2e-6, 1e-12), 2e-6), 0.5);
        assert_eq!(probability_feasible(&pred(3e-6, 0.0), 2e-6), 0.0);
        assert_eq!(probability_feasible(&pred(1e-6, 0.0), 2e-6), 1.0);
        let p = probability_feasible(&pred(1.0, 4.0), 3.0);
        let oracle = 0.5 * (1.0 + erf(1.0 / 2f64.sqrt()));
        assert!((p - oracle).abs() < 1e-10, "{p} vs {oracle}");
        assert!((p - 0.841_344_746_068_542_9).abs() < 1e-15);
    }

    #[test]
    fn config_validation() {
        let mut c = AcquisitionConfig::default();
        assert!(c.validate().is_ok());
        c.mc_samples = 100;
        assert!(c.validate().is_err());
        c.mc_samples = 8;
        assert!(c.validate().is_err());
        let c = AcquisitionConfig {
            raw_samples: 4,
            ..Default::default()
        };
        assert!(c.validate().is_err());
        let c = AcquisitionConfig {
            beta: -1.0,
            ..Default::default()
        };
        assert!(c.validate().is_err());
    }

    fn fitted(inputs: Vec<[f64; 3]>, y: &[f64], ls: f64, noise: f64) -> GpModel {
        let mut m = GpModel::new(inputs, y).unwrap();
        m.set_hyperparameters(GpHyperparameters {
            lengthscales: [ls; 3],
            output_scale: 1.0,
            noise_variance: noise,
        })
        .unwrap();
        m
    }

    #[test]
    fn no_improvement_over_itself() {
        let x = vec![
            [0.2, 0.3, 0.4],
            [0.8, 0.7, 0.1],
            [0.5, 0.5, 0.9],
            [0.1, 0.9, 0.5],
        ];
        let y = [1.0, 3.0, 2.0, 1.5];
        let m = fitted(x.clone(), &y, 0.3, 1e-4);
        let mut sampler = SobolGenerator::new(x.len() + 1, Some(1)).unwrap();
        let ei = qnei(&m, &x[1], &x, &mut sampler, 256).unwrap();
        assert!(ei / m.standardization().std < 1e-3, "ei {ei}");
    }

    #[test]
    fn permutation_invariant_and_nonnegative() {
        let x = vec![[0.2, 0.3, 0.4], [0.8, 0.7, 0.1], [0.5, 0.5, 0.9]];
        let m = fitted(x.clone(), &[1.0, 3.0, 2.0], 0.4, 1e-2);
        let q = [0.6, 0.6, 0.6];
        let mut s1 = SobolGenerator::new(4, Some(3)).unwrap();
        let a = qnei(&m, &q, &x, &mut s1, 1024).unwrap();
        let perm = vec![x[2], x[0], x[1]];
        let mut s2 = SobolGenerator::new(4, Some(3)).unwrap();
        let b = qnei(&m, &q, &perm, &mut s2, 1024).unwrap();
        assert!(a >= 0.0 && b >= 0.0);
        // a relabelling changes which base sample drives which incumbent,
        // so equality holds up to QMC error
        assert!((a - b).abs() <= 0.02 * a.max(b) + 1e-9, "{a} vs {b}");
    }

    #[test]
    fn penalties_vanish_and_annihilate() {
        let b = Bounds::default();
        let x = vec![
            [0.2, 0.3, 0.4],
            [0.8, 0.7, 0.1],
            [0.5, 0.5, 0.9],
            [0.1, 0.9, 0.5],
        ];
        let obj = fitted(x.clone(), &[1800.0, 1850.0, 1820.0, 1790.0], 0.3, 1e-3);
        let con = fitted(x, &[1e-6, 1.2e-6, 0.9e-6, 1.1e-6], 0.3, 1e-3);
        let coeffs = RuntimeCoefficients {
            c: 300.0,
            a1: 60.0,
            a2: 200.0,
            b1: 3.5,
            b2: 0.5,
            a0: b.mid_area(),
        };
        let cfg = AcquisitionConfig {
            beta: 0.0,
            gamma: 0.0,
            ..Default::default()
        };
        let acq = PenalizedAcquisition::new(&obj, &con, &cfg, &coeffs, &b).unwrap();
        let q = [0.6, 0.4, 0.0];
        let r = acq.evaluate(&q).unwrap();
        assert_eq!(r.score, r.improvement * r.pf);
        let cfg = AcquisitionConfig {
            gamma: 1.0,
            ..Default::default()
        };
        let acq = PenalizedAcquisition::new(&obj, &con, &cfg, &coeffs, &b).unwrap();
        // u_s = 1 is s = s_max, z = 0
        let r = acq.evaluate(&[0.6, 0.4, 1.0]).unwrap();
        assert_eq!(r.z, 0.0);
        assert_eq!(r.score, 0.0);
    }

    #[test]
    fn penalty_arithmetic() {
        let (alpha, pf, z, t, beta, gamma): (f64, f64, f64, f64, f64, f64) =
            (1.0, 1.0, 0.5, 100.0, 1.0, 1.0);
        let score = alpha * pf * z.powf(gamma) * t.powf(-beta);
        assert!((score - 5e-3).abs() < 1e-15);
    }

    /// With a single incumbent the improvement is `E[max(D, 0)]` for the
    /// Gaussian difference `D = f(x) - f(o)`.
    #[test]
    fn single_incumbent_matches_closed_form() {
        let x = vec![
            [0.2, 0.3, 0.4],
            [0.8, 0.7, 0.1],
            [0.5, 0.5, 0.9],
            [0.1, 0.9, 0.5],
        ];
        let m = fitted(x.clone(), &[1.0, 3.0, 2.0, 1.5], 0.35, 1e-2);
        let o = x[1];
        let q = [0.6, 0.6, 0.3];
        let jp = m.joint_posterior(&[o, q]).unwrap();
        let mean = jp.mean[1] - jp.mean[0];
        let var = jp.cov[(0, 0)] + jp.cov[(1, 1)] - 2.0 * jp.cov[(0, 1)];
        let oracle = {
            let sd = var.sqrt();
            let u = mean / sd;
            let phi = (-0.5 * u * u).exp() / (2.0 * std::f64::consts::PI).sqrt();
            let big_phi = 0.5 * (1.0 + erf(u / 2f64.sqrt()));
            sd * (phi + u * big_phi) * m.standardization().std
        };
        let mut sampler = SobolGenerator::new(2, Some(11)).unwrap();
        let est = qnei(&m, &q, &[o], &mut sampler, 4096).unwrap();
        assert!((est - oracle).abs() < 0.01 * oracle, "{est} vs {oracle}");
    }

    fn bump_models(center: [f64; 3]) -> (GpModel, GpModel) {
        bump_models_with(center, false)
    }

    /// `mesh_free` drops the mesh coordinate from the bump and gives the
    /// surrogate a long mesh lengthscale, so improvement is flat along `s`.
    fn bump_models_with(center: [f64; 3], mesh_free: bool) -> (GpModel, GpModel) {
        let dims = if mesh_free { 2 } else { 3 };
        let mut gen = SobolGenerator::new(3, Some(5)).unwrap();
        let xs: Vec<[f64; 3]> = gen
            .sobol_points(64)
            .into_iter()
            .map(|p| [p[0], p[1], p[2]])
            .collect();
        let y: Vec<f64> = xs
            .iter()
            .map(|x| {
                let r2: f64 = (0..dims).map(|d| (x[d] - center[d]).powi(2)).sum();
                (-r2 / (2.0 * 0.15f64.powi(2))).exp()
            })
            .collect();
        let nox: Vec<f64> = xs.iter().map(|x| 1e-7 * (1.0 + x[0])).collect();
        let mut obj = GpModel::new(xs.clone(), &y).unwrap();
        let ls = if mesh_free { [0.2, 0.2, 5.0] } else { [0.2; 3] };
        obj.set_hyperparameters(GpHyperparameters {
            lengthscales: ls,
            output_scale: 1.0,
            noise_variance: 1e-4,
        })
        .unwrap();
        let mut con = GpModel::new(xs, &nox).unwrap();
        con.set_hyperparameters(GpHyperparameters {
            lengthscales: [0.5; 3],
            output_scale: 1.0,
            noise_variance: 1e-4,
        })
        .unwrap();
        (obj, con)
    }

    fn flat_coeffs(b: &Bounds) -> RuntimeCoefficients {
        RuntimeCoefficients {
            c: 100.0,
            a1: 0.0,
            a2: 0.0,
            b1: 1.0,
            b2: 1.0,
            a0: b.mid_area(),
        }
    }

    #[test]
    fn finds_planted_bump() {
        let b = Bounds::default();
        let center = [0.37, 0.61, 0.52];
        let (obj, con) = bump_models(center);
        let cfg = AcquisitionConfig {
            beta: 0.0,
            gamma: 0.0,
            seed: 3,
            ..Default::default()
        };
        let acq = PenalizedAcquisition::new(&obj, &con, &cfg, &flat_coeffs(&b), &b).unwrap();
        assert!(!acq.incumbent_fallback);
        let p = propose(&acq, &obj, None).unwrap();
        assert!(!p.pure_exploration);
        let dist: f64 = (0..3)
            .map(|d| (p.unit[d] - center[d]).powi(2))
            .sum::<f64>()
            .sqrt();
        assert!(dist < 0.05, "proposal {:?} is {dist} from the bump", p.unit);
    }

    #[test]
    fn strong_fidelity_penalty_pushes_to_fine_mesh() {
        let b = Bounds::default();
        let (obj, con) = bump_models_with([0.5, 0.5, 0.5], true);
        let cfg = AcquisitionConfig {
            beta: 0.0,
            gamma: 10.0,
            seed: 4,
            ..Default::default()
        };
        let acq = PenalizedAcquisition::new(&obj, &con, &cfg, &flat_coeffs(&b), &b).unwrap();
        let p = propose(&acq, &obj, None).unwrap();
        assert!(p.x.s <= 1.1 * b.s_min(), "s = {}", p.x.s);
    }

    #[test]
    fn strong_runtime_penalty_pushes_to_coarse_mesh() {
        let b = Bounds::default();
        let (obj, con) = bump_models_with([0.5, 0.5, 0.5], true);
        let steep = RuntimeCoefficients {
            c: 10.0,
            a1: 100.0,
            a2: 0.0,
            b1: 3.0,
            b2: 1.0,
            a0: b.mid_area(),
        };
        let cfg = AcquisitionConfig {
            beta: 10.0,
            gamma: 1.0,
            seed: 4,
            ..Default::default()
        };
        let acq = PenalizedAcquisition::new(&obj, &con, &cfg, &steep, &b).unwrap();
        let p = propose(&acq, &obj, None).unwrap();
        assert!(p.breakdown.z > 0.0);
        assert!(p.x.s >= 0.9 * b.s_max(), "s = {}", p.x.s);
    }

    #[test]
    fn pinned_mesh_is_respected_and_infeasible_region_explores() {
        let b = Bounds::default();
        let (obj, con) = bump_models([0.5, 0.5, 0.5]);
        let cfg = AcquisitionConfig {
            beta: 0.0,
            gamma: 0.0,
            seed: 6,
            ..Default::default()
        };
        let acq = PenalizedAcquisition::new(&obj, &con, &cfg, &flat_coeffs(&b), &b).unwrap();
        let p = propose(&acq, &obj, Some(0.0)).unwrap();
        assert_eq!(p.x.s, b.s_min());

        // a cap nothing can meet makes every score vanish
        let cfg = AcquisitionConfig {
            nox_cap: -1.0,
            ..cfg
        };
        let acq = PenalizedAcquisition::new(&obj, &con, &cfg, &flat_coeffs(&b), &b).unwrap();
        assert!(acq.incumbent_fallback);
        let p = propose(&acq, &obj, None).unwrap();
        assert!(p.pure_exploration);
        assert_eq!(p.breakdown.score, 0.0);
    }

    #[test]
    fn proposal_is_deterministic() {
        let b = Bounds::default();
        let (obj, con) = bump_models([0.3, 0.3, 0.7]);
        let cfg = AcquisitionConfig {
            seed: 9,
            ..Default::default()
        };
        let coeffs = RuntimeCoefficients {
            c: 300.0,
            a1: 60.0,
            a2: 200.0,
            b1: 3.5,
            b2: 0.5,
            a0: b.mid_area(),
        };
        let acq = PenalizedAcquisition::new(&obj, &con, &cfg, &coeffs, &b).unwrap();
        let a = propose(&acq, &obj, None).unwrap();
        let c = propose(&acq, &obj, None).unwrap();
        assert_eq!(a, c);
    }
}
