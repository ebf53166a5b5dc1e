use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::problem::DIM;

/// Lower bound on the likelihood noise variance (standardized units).
pub const NOISE_FLOOR: f64 = 1e-4;

/// Hyperparameters of one Matérn-5/2 ARD surrogate. The output scale and
/// noise are in standardized-output units, lengthscales in unit-cube units.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GpHyperparameters {
    pub lengthscales: [f64; DIM],
    pub output_scale: f64,
    pub noise_variance: f64,
}

impl Default for GpHyperparameters {
    fn default() -> Self {
        Self {
            lengthscales: [1.0 / 3.0; DIM],
            output_scale: 1.0,
            noise_variance: 1e-2,
        }
    }
}

impl GpHyperparameters {
    pub fn validate(&self) -> Result<()> {
        if self
            .lengthscales
            .iter()
            .any(|&l| !(l > 0.0 && l.is_finite()))
        {
            return Err(Error::InvalidParameter {
                name: "lengthscale",
                reason: format!("must be positive, got {:?}", self.lengthscales),
            });
        }
        if !(self.output_scale > 0.0 && self.output_scale.is_finite()) {
            return Err(Error::InvalidParameter {
                name: "output_scale",
                reason: format!("must be positive, got {}", self.output_scale),
            });
        }
        if !(self.noise_variance >= NOISE_FLOOR && self.noise_variance.is_finite()) {
            return Err(Error::InvalidParameter {
                name: "noise_variance",
                reason: format!("must be >= {NOISE_FLOOR}, got {}", self.noise_variance),
            });
        }
        Ok(())
    }
}

/// Scaled squared distance terms `((u_d - v_d) / l_d)^2`.
#[inline]
pub(crate) fn scaled_sq(u: &[f64; DIM], v: &[f64; DIM], ls: &[f64; DIM]) -> [f64; DIM] {
    std::array::from_fn(|d| {
        let t = (u[d] - v[d]) / ls[d];
        t * t
    })
}

/// Matérn-5/2 profile `(1 + sqrt5 r + 5 r^2 / 3) exp(-sqrt5 r)` at unit variance.
#[inline]
pub(crate) fn matern_profile(r: f64) -> f64 {
    let sr = 5f64.sqrt() * r;
    (1.0 + sr + sr * sr / 3.0) * (-sr).exp()
}

/// `-(1/r) d/dr` of the unit profile, i.e. `(5/3)(1 + sqrt5 r) exp(-sqrt5 r)`.
/// Finite at `r = 0`, which keeps lengthscale gradients well defined.
#[inline]
pub(crate) fn matern_grad_factor(r: f64) -> f64 {
    let sr = 5f64.sqrt() * r;
    5.0 / 3.0 * (1.0 + sr) * (-sr).exp()
}

#[inline]
pub(crate) fn matern_unchecked(u: &[f64; DIM], v: &[f64; DIM], hyper: &GpHyperparameters) -> f64 {
    let r = scaled_sq(u, v, &hyper.lengthscales)
        .iter()
        .sum::<f64>()
        .sqrt();
    hyper.output_scale * matern_profile(r)
}

/// Matérn-5/2 covariance with ARD distance.
pub fn matern25(u: &[f64; DIM], v: &[f64; DIM], hyper: &GpHyperparameters) -> Result<f64> {
    if hyper.lengthscales.iter().any(|&l| !(l > 0.0)) {
        return Err(Error::InvalidParameter {
            name: "lengthscale",
            reason: format!("must be positive, got {:?}", hyper.lengthscales),
        });
    }
    Ok(matern_unchecked(u, v, hyper))
}

/// Normalized inverse lengthscales `(1/l_d) / sum(1/l)`.
pub fn ard_importance(hyper: &GpHyperparameters) -> Result<[f64; DIM]> {
    if hyper
        .lengthscales
        .iter()
        .any(|&l| !(l > 0.0 && l.is_finite()))
    {
        return Err(Error::InvalidParameter {
            name: "lengthscale",
            reason: format!("must be positive, got {:?}", hyper.lengthscales),
        });
    }
    let inv = hyper.lengthscales.map(|l| 1.0 / l);
    let total: f64 = inv.iter().sum();
    Ok(inv.map(|v| v / total))
}
