//! Analytic burner stand-in.
//!
//! With normalized `hn = (h - h_lo) / (h_hi - h_lo)` and
//! `ln = (l - l_lo) / (l_hi - l_lo)`:
//!
//! ```text
//! T_hi = T0 - a_l (ln - l*)^2 - a_h (hn - h*)^2 - c hn (1 - ln)
//! T    = T_hi - (1 - z) (b0 + b1 cos(2 pi ln))
//! NOx  = n0 exp((T - T_ref) / T_sc) (1 - d_l ln)
//! ```
//!
//! so temperature rises with length and falls with height, the coarse-mesh
//! bias vanishes on the finest mesh, and NOx follows temperature but is
//! diluted in long reactors. The defaults put the unconstrained temperature
//! peak about 14% over the NOx cap, pushing the constrained optimum to
//! `l ~ 925 mm, h ~ 128 mm`.

use std::f64::consts::PI;
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::{EvaluationRequest, EvaluationResult, Evaluator};
use crate::error::{Error, Result};
use crate::fidelity_cost::{fidelity_index, runtime_predict, RuntimeCoefficients};
use crate::problem::{Bounds, DesignPoint};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SyntheticBurnerParams {
    /// Peak fine-mesh temperature, K.
    pub t0: f64,
    /// Normalized length of the temperature ridge.
    pub l_star: f64,
    /// Normalized height of the temperature ridge.
    pub h_star: f64,
    /// Curvature along length, K.
    pub a_l: f64,
    /// Curvature along height, K.
    pub a_h: f64,
    /// Height–length interaction, K.
    pub c: f64,
    /// Mean coarse-mesh temperature bias, K.
    pub b0: f64,
    /// Length-periodic part of the bias, K.
    pub b1: f64,
    /// NOx at `T = T_ref` in a zero-length reactor.
    pub n0: f64,
    pub t_ref: f64,
    /// NOx e-folding temperature, K.
    pub t_sc: f64,
    /// NOx dilution with length.
    pub d_l: f64,
    /// Coefficients of the true wall-time law.
    pub runtime: RuntimeCoefficients,
    /// Log-normal sigma of wall time.
    pub wall_time_sigma: f64,
    /// Gaussian temperature noise, K.
    pub temperature_noise: f64,
    /// Relative Gaussian NOx noise.
    pub nox_noise: f64,
    pub seed: u64,
}

impl Default for SyntheticBurnerParams {
    fn default() -> Self {
        Self {
            t0: 1900.0,
            l_star: 0.40,
            h_star: 0.35,
            a_l: 250.0,
            a_h: 250.0,
            c: 180.0,
            b0: 40.0,
            b1: 15.0,
            n0: 5.5e-6,
            t_ref: 1900.0,
            t_sc: 60.0,
            d_l: 0.8,
            runtime: RuntimeCoefficients {
                c: 300.0,
                a1: 60.0,
                a2: 200.0,
                b1: 3.5,
                b2: 0.5,
                a0: Bounds::default().mid_area(),
            },
            wall_time_sigma: 0.05,
            temperature_noise: 0.5,
            nox_noise: 0.01,
            seed: 0,
        }
    }
}

impl SyntheticBurnerParams {
    /// Same response surface, no observation or timing noise.
    pub fn noiseless(self) -> Self {
        Self {
            wall_time_sigma: 0.0,
            temperature_noise: 0.0,
            nox_noise: 0.0,
            ..self
        }
    }

    pub fn validate(&self) -> Result<()> {
        let checks = [
            ("t_sc", self.t_sc > 0.0),
            ("n0", self.n0 >= 0.0),
            ("d_l", (0.0..1.0).contains(&self.d_l)),
            ("wall_time_sigma", self.wall_time_sigma >= 0.0),
            ("temperature_noise", self.temperature_noise >= 0.0),
            ("nox_noise", self.nox_noise >= 0.0),
        ];
        for (name, ok) in checks {
            if !ok {
                return Err(Error::InvalidParameter {
                    name,
                    reason: "out of admissible range".into(),
                });
            }
        }
        Ok(())
    }
}

/// Coarse-mesh temperature bias `b0 + b1 cos(2 pi ln)` at full coarseness.
pub fn fidelity_bias(l: f64, p: &SyntheticBurnerParams, b: &Bounds) -> f64 {
    let ln = (l - b.lower[1]) / (b.upper[1] - b.lower[1]);
    p.b0 + p.b1 * (2.0 * PI * ln).cos()
}

/// Noise-free `(T, NOx)` at a design.
pub fn synthetic_response(
    x: &DesignPoint,
    p: &SyntheticBurnerParams,
    b: &Bounds,
) -> Result<(f64, f64)> {
    let z = fidelity_index(x, b)?;
    let hn = (x.h - b.lower[0]) / (b.upper[0] - b.lower[0]);
    let ln = (x.l - b.lower[1]) / (b.upper[1] - b.lower[1]);
    let t_hi = p.t0
        - p.a_l * (ln - p.l_star).powi(2)
        - p.a_h * (hn - p.h_star).powi(2)
        - p.c * hn * (1.0 - ln);
    let t = t_hi - (1.0 - z) * fidelity_bias(x.l, p, b);
    let nox = p.n0 * ((t - p.t_ref) / p.t_sc).exp() * (1.0 - p.d_l * ln);
    Ok((t, nox))
}

fn splitmix(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9e37_79b9_7f4a_7c15);
    x = (x ^ (x >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    x ^ (x >> 31)
}

fn request_stream(req: &EvaluationRequest, seed: u64) -> ChaCha8Rng {
    let mut k = splitmix(seed);
    for v in [req.h, req.l, req.s] {
        k = splitmix(k ^ v.to_bits());
    }
    for byte in req.run_id.bytes() {
        k = splitmix(k ^ u64::from(byte));
    }
    ChaCha8Rng::seed_from_u64(k)
}

/// Deterministic noisy evaluation of the analytic burner.
pub fn synthetic_evaluate(
    req: &EvaluationRequest,
    p: &SyntheticBurnerParams,
    b: &Bounds,
) -> Result<EvaluationResult> {
    let x = req.point();
    let (t, nox) = synthetic_response(&x, p, b)?;
    let mut rng = request_stream(req, p.seed);
    let mut gauss = || -> f64 { StandardNormal.sample(&mut rng) };
    let t_obs = t + p.temperature_noise * gauss();
    let nox_obs = (nox * (1.0 + p.nox_noise * gauss())).max(0.0);
    let wall = runtime_predict(&x, &p.runtime, b)? * (p.wall_time_sigma * gauss()).exp();
    Ok(EvaluationResult {
        t_mean: t_obs,
        nox: nox_obs,
        wall_time: wall,
        mesh_cells: (x.h * x.l / (x.s * x.s)).round() as u64,
        converged: true,
        message: None,
        reported_wall_time: None,
    })
}

#[derive(Debug, Clone)]
pub struct SyntheticEvaluator {
    pub params: SyntheticBurnerParams,
    pub bounds: Bounds,
}

impl SyntheticEvaluator {
    pub fn new(params: SyntheticBurnerParams, bounds: Bounds) -> Self {
        Self { params, bounds }
    }
}

impl Evaluator for SyntheticEvaluator {
    fn evaluate(&self, req: &EvaluationRequest) -> EvaluationResult {
        synthetic_evaluate(req, &self.params, &self.bounds)
            .unwrap_or_else(|e| EvaluationResult::failed(e.to_string(), 0.0))
    }

    fn name(&self) -> &'static str {
        "synthetic"
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OracleOptimum {
    pub h_mm: f64,
    pub l_mm: f64,
    #[serde(rename = "t_mean_K")]
    pub t_mean_k: f64,
    pub nox: f64,
}

/// Brute-force optima of the noise-free surface on the finest mesh.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OracleReport {
    pub grid_n: usize,
    pub s_mm: f64,
    /// `None` when the cap is infinite.
    pub nox_cap: Option<f64>,
    /// `None` when no grid point meets the cap.
    pub constrained: Option<OracleOptimum>,
    pub unconstrained: OracleOptimum,
}

impl OracleReport {
    pub fn write(&self, path: &Path) -> Result<()> {
        let mut text = serde_json::to_string_pretty(self)?;
        text.push('\n');
        std::fs::write(path, text)?;
        Ok(())
    }

    pub fn read(path: &Path) -> Result<Self> {
        Ok(serde_json::from_slice(&std::fs::read(path)?)?)
    }
}

/// Scans a `grid_n x grid_n` grid over `(h, l)` at `s = s_min`.
pub fn grid_oracle(
    p: &SyntheticBurnerParams,
    b: &Bounds,
    grid_n: usize,
    nox_cap: f64,
) -> Result<OracleReport> {
    if grid_n < 2 {
        return Err(Error::InvalidParameter {
            name: "grid",
            reason: format!("need at least 2 points per axis, got {grid_n}"),
        });
    }
    if nox_cap.is_nan() {
        return Err(Error::InvalidParameter {
            name: "nox_cap",
            reason: "must not be NaN".into(),
        });
    }
    let axis = |d: usize, i: usize| {
        if i == grid_n - 1 {
            b.upper[d]
        } else {
            b.lower[d] + (b.upper[d] - b.lower[d]) * i as f64 / (grid_n - 1) as f64
        }
    };
    let s = b.s_min();
    let mut unconstrained: Option<OracleOptimum> = None;
    let mut constrained: Option<OracleOptimum> = None;
    for i in 0..grid_n {
        for j in 0..grid_n {
            let x = DesignPoint::new(axis(0, i), axis(1, j), s);
            let (t, nox) = synthetic_response(&x, p, b)?;
            let here = OracleOptimum {
                h_mm: x.h,
                l_mm: x.l,
                t_mean_k: t,
                nox,
            };
            if unconstrained.is_none_or(|u| t > u.t_mean_k) {
                unconstrained = Some(here);
            }
            if nox <= nox_cap && constrained.is_none_or(|c| t > c.t_mean_k) {
                constrained = Some(here);
            }
        }
    }
    Ok(OracleReport {
        grid_n,
        s_mm: s,
        nox_cap: nox_cap.is_finite().then_some(nox_cap),
        constrained,
        unconstrained: unconstrained.expect("grid is non-empty"),
    })
}
