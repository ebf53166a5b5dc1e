//! Continuous mesh-fidelity index and the analytical runtime model
//! `t(h, l, s) = C + A1 exp(B1 z) + A2 exp(B2 h l / A0)`.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::problem::{Bounds, DesignPoint, Observation};

/// Fidelity `z` in `[0, 1]`: 0 at the coarsest mesh (`s_max`), 1 at the finest.
///
/// Mesh density `(1/s)/(h l)` normalized logarithmically between its extremes
/// reduces to `ln(s_max / s) / ln(s_max / s_min)`; the geometry cancels.
pub fn fidelity_index(x: &DesignPoint, b: &Bounds) -> Result<f64> {
    let (s_min, s_max) = (b.s_min(), b.s_max());
    if !(x.s >= s_min && x.s <= s_max) {
        return Err(Error::OutOfBounds {
            dim: "s",
            value: x.s,
            lower: s_min,
            upper: s_max,
        });
    }
    Ok((s_max / x.s).ln() / (s_max / s_min).ln())
}

/// Mesh element size giving fidelity `z`.
pub fn element_size_for_fidelity(z: f64, b: &Bounds) -> f64 {
    let (s_min, s_max) = (b.s_min(), b.s_max());
    match z {
        z if z <= 0.0 => s_max,
        z if z >= 1.0 => s_min,
        z => s_max * (s_min / s_max).powf(z),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RuntimeCoefficients {
    /// Constant overhead, s.
    pub c: f64,
    /// Mesh-density amplitude, s.
    pub a1: f64,
    /// Area amplitude, s.
    pub a2: f64,
    pub b1: f64,
    pub b2: f64,
    /// Area normalizer, mm^2.
    pub a0: f64,
}

impl RuntimeCoefficients {
    /// Constant model at the median converged wall time.
    pub fn fallback(history: &[Observation], b: &Bounds) -> Self {
        let mut times: Vec<f64> = history
            .iter()
            .filter(|o| o.converged && o.wall_time > 0.0)
            .map(|o| o.wall_time)
            .collect();
        times.sort_by(f64::total_cmp);
        let c = match times.len() {
            0 => 1.0,
            n if n % 2 == 1 => times[n / 2],
            n => 0.5 * (times[n / 2 - 1] + times[n / 2]),
        };
        Self {
            c,
            a1: 0.0,
            a2: 0.0,
            b1: 0.0,
            b2: 0.0,
            a0: b.mid_area(),
        }
    }

    fn eval(&self, z: f64, area: f64) -> f64 {
        self.c + self.a1 * (self.b1 * z).exp() + self.a2 * (self.b2 * area / self.a0).exp()
    }

    fn params(&self) -> [f64; 5] {
        [self.c, self.a1, self.b1, self.a2, self.b2]
    }

    fn with_params(p: &[f64; 5], a0: f64) -> Self {
        Self {
            c: p[0],
            a1: p[1],
            b1: p[2],
            a2: p[3],
            b2: p[4],
            a0,
        }
    }

    /// Smallest prediction over the bounded design space. Each term is
    /// monotone in its own variable, so the minimum sits on a corner.
    pub fn min_over(&self, b: &Bounds) -> f64 {
        let areas = [b.lower[0] * b.lower[1], b.upper[0] * b.upper[1]];
        [0.0, 1.0]
            .iter()
            .flat_map(|&z| areas.iter().map(move |&a| (z, a)))
            .map(|(z, a)| self.eval(z, a))
            .fold(f64::INFINITY, f64::min)
    }
}

/// Predicted wall time in seconds.
pub fn runtime_predict(x: &DesignPoint, c: &RuntimeCoefficients, b: &Bounds) -> Result<f64> {
    b.check(x)?;
    let z = fidelity_index(x, b)?;
    let t = c.eval(z, x.area());
    if !(t > 0.0 && t.is_finite()) {
        return Err(Error::InvalidCalibration { value: t });
    }
    Ok(t)
}

const MIN_POINTS: usize = 6;
const MAX_RATE: f64 = 20.0;

struct Sample {
    z: f64,
    area: f64,
    log_t: f64,
}

fn residuals(p: &[f64; 5], a0: f64, data: &[Sample]) -> Option<DVector<f64>> {
    let c = RuntimeCoefficients::with_params(p, a0);
    let mut r = DVector::zeros(data.len());
    for (i, s) in data.iter().enumerate() {
        let t = c.eval(s.z, s.area);
        if !(t > 0.0 && t.is_finite()) {
            return None;
        }
        r[i] = t.ln() - s.log_t;
    }
    Some(r)
}

fn jacobian(p: &[f64; 5], a0: f64, data: &[Sample]) -> DMatrix<f64> {
    let c = RuntimeCoefficients::with_params(p, a0);
    let mut j = DMatrix::zeros(data.len(), 5);
    for (i, s) in data.iter().enumerate() {
        let t = c.eval(s.z, s.area);
        let ez = (c.b1 * s.z).exp();
        let an = s.area / a0;
        let ea = (c.b2 * an).exp();
        j[(i, 0)] = 1.0 / t;
        j[(i, 1)] = ez / t;
        j[(i, 2)] = c.a1 * s.z * ez / t;
        j[(i, 3)] = ea / t;
        j[(i, 4)] = c.a2 * an * ea / t;
    }
    j
}

fn sum_sq(r: &DVector<f64>) -> f64 {
    r.norm_squared()
}

/// Levenberg-Marquardt on the log-time residuals.
fn levenberg_marquardt(start: [f64; 5], a0: f64, data: &[Sample]) -> Option<([f64; 5], f64)> {
    let mut p = start;
    let mut r = residuals(&p, a0, data)?;
    let mut ss = sum_sq(&r);
    let mut lambda = 1e-3;
    for _ in 0..500 {
        if ss < 1e-28 {
            break;
        }
        let j = jacobian(&p, a0, data);
        let jt = j.transpose();
        let jtj = &jt * &j;
        let g = &jt * &r;
        let mut improved = false;
        for _ in 0..40 {
            let mut a = jtj.clone();
            for k in 0..5 {
                a[(k, k)] += lambda * jtj[(k, k)].max(1e-12);
            }
            let Some(delta) = a.lu().solve(&(-&g)) else {
                lambda *= 10.0;
                continue;
            };
            let mut trial = p;
            for k in 0..5 {
                trial[k] += delta[k];
            }
            trial[2] = trial[2].clamp(-MAX_RATE, MAX_RATE);
            trial[4] = trial[4].clamp(-MAX_RATE, MAX_RATE);
            if let Some(rt) = residuals(&trial, a0, data) {
                let st = sum_sq(&rt);
                if st < ss {
                    let rel = (ss - st) / ss.max(1e-300);
                    p = trial;
                    r = rt;
                    ss = st;
                    lambda = (lambda * 0.3).max(1e-12);
                    improved = true;
                    if rel < 1e-14 {
                        return Some((p, ss));
                    }
                    break;
                }
            }
            lambda *= 10.0;
            if lambda > 1e16 {
                break;
            }
        }
        if !improved {
            break;
        }
    }
    Some((p, ss))
}

/// Linear least squares for `(C, A1, A2)` at fixed rates, weighted by `1/t`
/// so it approximates the log-space objective.
fn linear_start(b1: f64, b2: f64, a0: f64, data: &[Sample]) -> Option<[f64; 5]> {
    let n = data.len();
    let mut a = DMatrix::zeros(n, 3);
    let mut y = DVector::zeros(n);
    for (i, s) in data.iter().enumerate() {
        let w = (-s.log_t).exp();
        a[(i, 0)] = w;
        a[(i, 1)] = (b1 * s.z).exp() * w;
        a[(i, 2)] = (b2 * s.area / a0).exp() * w;
        y[i] = 1.0;
    }
    let sol = a.svd(true, true).solve(&y, 1e-12).ok()?;
    Some([sol[0], sol[1], b1, sol[2], b2])
}

/// Least-squares fit of the runtime model to converged observations in
/// log-time space. `A0` is held at the mid-bounds area.
pub fn calibrate_runtime(
    history: &[Observation],
    b: &Bounds,
    current: Option<&RuntimeCoefficients>,
) -> Result<RuntimeCoefficients> {
    let a0 = b.mid_area();
    let data: Vec<Sample> = history
        .iter()
        .filter(|o| o.converged && o.wall_time > 0.0 && o.wall_time.is_finite())
        .map(|o| Sample {
            z: o.z,
            area: o.x.area(),
            log_t: o.wall_time.ln(),
        })
        .collect();
    if data.len() < MIN_POINTS {
        return Err(Error::Underdetermined {
            required: MIN_POINTS,
            got: data.len(),
        });
    }
    let spread = |f: &dyn Fn(&Sample) -> f64| {
        let (lo, hi) = data
            .iter()
            .map(f)
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| {
                (lo.min(v), hi.max(v))
            });
        hi - lo
    };
    if spread(&|s| s.z) < 1e-9 && spread(&|s| s.area / a0) < 1e-9 {
        return Err(Error::RankDeficient);
    }

    let current_params = current.map(|c| {
        // rescale B2 if the caller used a different area normalizer
        let mut p = c.params();
        p[4] *= a0 / c.a0;
        p
    });
    let current_fit = current_params.and_then(|p| {
        let ss0 = sum_sq(&residuals(&p, a0, &data)?);
        let (pf, ssf) = levenberg_marquardt(p, a0, &data)?;
        Some(if ssf <= ss0 { (pf, ssf) } else { (p, ss0) })
    });

    let mut seeds: Vec<([f64; 5], f64)> = Vec::new();
    for b1 in [0.5, 1.0, 2.0, 3.0, 4.0, 5.0] {
        for b2 in [-1.0, 0.1, 0.5, 1.0, 2.0] {
            if let Some(p) = linear_start(b1, b2, a0, &data) {
                if let Some(r) = residuals(&p, a0, &data) {
                    seeds.push((p, sum_sq(&r)));
                }
            }
        }
    }
    seeds.sort_by(|a, b| a.1.total_cmp(&b.1));
    let mut best: Option<([f64; 5], f64)> = None;
    for (p, _) in seeds.into_iter().take(4) {
        if let Some((pf, ss)) = levenberg_marquardt(p, a0, &data) {
            if best.is_none_or(|(_, bs)| ss < bs) {
                best = Some((pf, ss));
            }
        }
    }
    // the warm-started fit wins unless a fresh start is clearly better
    let chosen = match (current_fit, best) {
        (Some(cur), Some(fresh)) if fresh.1 < cur.1 * (1.0 - 1e-9) - 1e-30 => fresh,
        (Some(cur), _) => cur,
        (None, Some(fresh)) => fresh,
        (None, None) => return Err(Error::RankDeficient),
    };
    let coeffs = RuntimeCoefficients::with_params(&chosen.0, a0);
    let min_t = coeffs.min_over(b);
    if !(min_t > 0.0 && min_t.is_finite()) {
        return Err(Error::InvalidCalibration { value: min_t });
    }
    Ok(coeffs)
}

/// Root-mean-square log-time residual of `c` on converged observations.
pub fn log_rms_residual(history: &[Observation], c: &RuntimeCoefficients) -> Option<f64> {
    let data: Vec<_> = history
        .iter()
        .filter(|o| o.converged && o.wall_time > 0.0)
        .collect();
    if data.is_empty() {
        return None;
    }
    let ss: f64 = data
        .iter()
        .map(|o| (c.eval(o.z, o.x.area()).ln() - o.wall_time.ln()).powi(2))
        .sum();
    Some((ss / data.len() as f64).sqrt())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn definitional(x: &DesignPoint, b: &Bounds) -> f64 {
        let area = x.h * x.l;
        let rho = (1.0 / x.s) / area;
        let rho_min = (1.0 / b.s_max()) / area;
        let rho_max = (1.0 / b.s_min()) / area;
        (rho / rho_min).ln() / (rho_max / rho_min).ln()
    }

    fn truth() -> RuntimeCoefficients {
        RuntimeCoefficients {
            c: 300.0,
            a1: 60.0,
            a2: 200.0,
            b1: 3.5,
            b2: 0.5,
            a0: Bounds::default().mid_area(),
        }
    }

    fn observations(c: &RuntimeCoefficients, n: usize, noise: f64, seed: u64) -> Vec<Observation> {
        let b = Bounds::default();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n)
            .map(|i| {
                let z = i as f64 / (n - 1) as f64;
                let x = DesignPoint::new(
                    rng.random_range(100.0..=250.0),
                    rng.random_range(250.0..=1500.0),
                    element_size_for_fidelity(z, &b),
                );
                let t = runtime_predict(&x, c, &b).unwrap();
                let eps: f64 = if noise > 0.0 {
                    rng.random_range(-noise..noise)
                } else {
                    0.0
                };
                Observation {
                    x,
                    t_mean: 1800.0,
                    nox: 1e-6,
                    wall_time: t * (1.0 + eps),
                    mesh_cells: 1,
                    converged: true,
                    z: fidelity_index(&x, &b).unwrap(),
                    acquisition_value: None,
                }
            })
            .collect()
    }

    #[test]
    fn fidelity_endpoints_and_midpoint() {
        let b = Bounds::default();
        assert_eq!(
            fidelity_index(&DesignPoint::new(150.0, 800.0, 3.0), &b).unwrap(),
            0.0
        );
        assert_eq!(
            fidelity_index(&DesignPoint::new(150.0, 800.0, 0.35), &b).unwrap(),
            1.0
        );
        let mid = DesignPoint::new(150.0, 800.0, (0.35f64 * 3.0).sqrt());
        assert!((fidelity_index(&mid, &b).unwrap() - 0.5).abs() < 1e-12);
    }

    #[test]
    fn fidelity_rejects_out_of_range_size() {
        let b = Bounds::default();
        assert!(matches!(
            fidelity_index(&DesignPoint::new(150.0, 800.0, 3.5), &b),
            Err(Error::OutOfBounds { dim: "s", .. })
        ));
    }

    #[test]
    fn runtime_examples() {
        let b = Bounds::default();
        let x = DesignPoint::new(120.0, 700.0, 3.0);
        let mut c = truth();
        c.a1 = 0.0;
        c.a2 = 0.0;
        assert_eq!(runtime_predict(&x, &c, &b).unwrap(), c.c);

        let c = truth();
        let want = c.c + c.a1 + c.a2 * (c.b2 * x.area() / c.a0).exp();
        assert!((runtime_predict(&x, &c, &b).unwrap() - want).abs() < 1e-9);

        let x = DesignPoint::new(120.0, 700.0, 0.35);
        let c = RuntimeCoefficients {
            c: 60.0,
            a1: 30.0,
            b1: 3.0,
            a2: 10.0,
            b2: 1.0,
            a0: x.area(),
        };
        let want = 60.0 + 30.0 * 3f64.exp() + 10.0 * 1f64.exp();
        assert!((runtime_predict(&x, &c, &b).unwrap() - want).abs() < 1e-9);

        let bad = RuntimeCoefficients { c: -1e4, ..truth() };
        assert!(matches!(
            runtime_predict(&x, &bad, &b),
            Err(Error::InvalidCalibration { .. })
        ));
    }

    #[test]
    fn calibration_guards() {
        let b = Bounds::default();
        let obs = observations(&truth(), 5, 0.0, 1);
        assert!(matches!(
            calibrate_runtime(&obs, &b, None),
            Err(Error::Underdetermined { got: 5, .. })
        ));
        let mut obs = observations(&truth(), 8, 0.0, 1);
        for o in obs.iter_mut() {
            o.x = DesignPoint::new(150.0, 800.0, 1.0);
            o.z = fidelity_index(&o.x, &b).unwrap();
        }
        assert!(matches!(
            calibrate_runtime(&obs, &b, None),
            Err(Error::RankDeficient)
        ));
    }

    #[test]
    fn recovers_noiseless_model_and_is_idempotent() {
        let b = Bounds::default();
        let gen = truth();
        let obs = observations(&gen, 20, 0.0, 2);
        let fit = calibrate_runtime(&obs, &b, None).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(99);
        let mut sq = 0.0;
        let n = 400;
        for _ in 0..n {
            let x = DesignPoint::new(
                rng.random_range(100.0..=250.0),
                rng.random_range(250.0..=1500.0),
                rng.random_range(0.35..=3.0),
            );
            let t = runtime_predict(&x, &gen, &b).unwrap();
            let tf = runtime_predict(&x, &fit, &b).unwrap();
            sq += ((tf - t) / t).powi(2);
        }
        assert!((sq / n as f64).sqrt() < 0.01, "fit {fit:?}");

        let again = calibrate_runtime(&obs, &b, Some(&fit)).unwrap();
        for (p, q) in fit.params().iter().zip(again.params()) {
            assert!(
                (p - q).abs() <= 1e-6 * p.abs().max(1e-12),
                "{fit:?} vs {again:?}"
            );
        }
    }

    #[test]
    fn warm_start_never_worse() {
        let b = Bounds::default();
        let obs = observations(&truth(), 30, 0.1, 3);
        let start = RuntimeCoefficients::fallback(&obs, &b);
        let fit = calibrate_runtime(&obs, &b, Some(&start)).unwrap();
        assert!(log_rms_residual(&obs, &fit).unwrap() <= log_rms_residual(&obs, &start).unwrap());
    }

    #[test]
    fn noisy_fit_keeps_fidelity_monotonicity() {
        let b = Bounds::default();
        let obs = observations(&truth(), 30, 0.1, 4);
        let fit = calibrate_runtime(&obs, &b, None).unwrap();
        for (h, l) in [(100.0, 250.0), (175.0, 875.0), (250.0, 1500.0)] {
            let lo = runtime_predict(&DesignPoint::new(h, l, 3.0), &fit, &b).unwrap();
            let hi = runtime_predict(&DesignPoint::new(h, l, 0.35), &fit, &b).unwrap();
            assert!(hi > lo);
        }
    }

    proptest! {
        #[test]
        fn reduced_form_matches_definition(h in 100.0f64..=250.0, l in 250.0f64..=1500.0, s in 0.35f64..=3.0) {
            let b = Bounds::default();
            let x = DesignPoint::new(h, l, s);
            prop_assert!((fidelity_index(&x, &b).unwrap() - definitional(&x, &b)).abs() < 1e-12);
        }

        #[test]
        fn fidelity_decreasing_in_size(s in 0.35f64..2.9, ds in 1e-6f64..0.1) {
            let b = Bounds::default();
            let z1 = fidelity_index(&DesignPoint::new(150.0, 800.0, s), &b).unwrap();
            let z2 = fidelity_index(&DesignPoint::new(150.0, 800.0, (s + ds).min(3.0)), &b).unwrap();
            prop_assert!(z2 < z1);
        }

        #[test]
        fn runtime_monotone(z in 0.0f64..0.99, dz in 1e-4f64..0.01, a in 0.1f64..2.0, da in 1e-3f64..0.1) {
            let c = truth();
            prop_assert!(c.eval(z + dz, a * c.a0) > c.eval(z, a * c.a0));
            prop_assert!(c.eval(z, (a + da) * c.a0) > c.eval(z, a * c.a0));
        }
    }
}
