//! Design space: the `[h, l, s]` design vector, its box bounds, the affine
//! map onto the unit cube, and the observation record shared by the loop.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const DIM: usize = 3;
pub const DIM_NAMES: [&str; DIM] = ["h", "l", "s"];

/// A burner design: height `h`, length `l` and mesh element size `s`, all in mm.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DesignPoint {
    pub h: f64,
    pub l: f64,
    pub s: f64,
}

impl DesignPoint {
    pub fn new(h: f64, l: f64, s: f64) -> Self {
        Self { h, l, s }
    }

    pub fn to_array(self) -> [f64; DIM] {
        [self.h, self.l, self.s]
    }

    pub fn from_array(x: [f64; DIM]) -> Self {
        Self::new(x[0], x[1], x[2])
    }

    /// Reactor area `h * l` in mm^2.
    pub fn area(&self) -> f64 {
        self.h * self.l
    }
}

/// Box bounds on the design vector, in mm.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Bounds {
    pub lower: [f64; DIM],
    pub upper: [f64; DIM],
}

impl Default for Bounds {
    fn default() -> Self {
        Self {
            lower: [100.0, 250.0, 0.35],
            upper: [250.0, 1500.0, 3.0],
        }
    }
}

impl Bounds {
    pub fn new(lower: [f64; DIM], upper: [f64; DIM]) -> Result<Self> {
        let b = Self { lower, upper };
        b.validate()?;
        Ok(b)
    }

    pub fn validate(&self) -> Result<()> {
        for d in 0..DIM {
            let (lo, hi) = (self.lower[d], self.upper[d]);
            if !(lo.is_finite() && hi.is_finite() && lo > 0.0 && lo < hi) {
                return Err(Error::InvalidBounds {
                    dim: DIM_NAMES[d],
                    lower: lo,
                    upper: hi,
                });
            }
        }
        Ok(())
    }

    pub fn s_min(&self) -> f64 {
        self.lower[2]
    }

    pub fn s_max(&self) -> f64 {
        self.upper[2]
    }

    /// Area at the centre of the `(h, l)` box.
    pub fn mid_area(&self) -> f64 {
        0.5 * (self.lower[0] + self.upper[0]) * 0.5 * (self.lower[1] + self.upper[1])
    }

    pub fn contains(&self, x: &DesignPoint) -> bool {
        self.check(x).is_ok()
    }

    pub fn check(&self, x: &DesignPoint) -> Result<()> {
        for (d, v) in x.to_array().into_iter().enumerate() {
            if !(v.is_finite() && v >= self.lower[d] && v <= self.upper[d]) {
                return Err(Error::OutOfBounds {
                    dim: DIM_NAMES[d],
                    value: v,
                    lower: self.lower[d],
                    upper: self.upper[d],
                });
            }
        }
        Ok(())
    }
}

/// Maps an in-bounds design onto `[0, 1]^3`.
pub fn normalize(x: &DesignPoint, b: &Bounds) -> Result<[f64; DIM]> {
    b.check(x)?;
    let v = x.to_array();
    Ok(std::array::from_fn(|d| {
        (v[d] - b.lower[d]) / (b.upper[d] - b.lower[d])
    }))
}

/// Inverse of [`normalize`].
pub fn denormalize(u: &[f64; DIM], b: &Bounds) -> Result<DesignPoint> {
    for (index, &value) in u.iter().enumerate() {
        if !(0.0..=1.0).contains(&value) {
            return Err(Error::UnitRange { index, value });
        }
    }
    Ok(DesignPoint::from_array(std::array::from_fn(|d| {
        // endpoints map exactly onto the bounds
        match u[d] {
            0.0 => b.lower[d],
            1.0 => b.upper[d],
            v => b.lower[d] + v * (b.upper[d] - b.lower[d]),
        }
    })))
}

/// One evaluated design.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Observation {
    pub x: DesignPoint,
    /// Mean reactor temperature, K.
    pub t_mean: f64,
    /// NOx mass fraction.
    pub nox: f64,
    /// Seconds.
    pub wall_time: f64,
    pub mesh_cells: u64,
    pub converged: bool,
    pub z: f64,
    /// Absent for initial-design points.
    pub acquisition_value: Option<f64>,
}

impl Observation {
    /// Whether the realized NOx satisfies `cap`.
    pub fn is_feasible(&self, cap: f64) -> bool {
        self.converged && self.nox <= cap
    }
}
