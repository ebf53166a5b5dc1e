//! Sobol low-discrepancy sequences and the quasi-Monte-Carlo normal sampler.
//!
//! Direction numbers come from the Joe & Kuo `new-joe-kuo-6.21201` table,
//! truncated to the first 1111 dimensions and bundled as
//! `data/joe_kuo_d1111.txt`. Each data line is `d s a m_1 .. m_s`: the
//! dimension, the degree of its primitive polynomial, the polynomial's inner
//! coefficients packed as an integer, and the initial odd direction integers.
//! Dimension 1 is implicit (all `m_k = 1`).
//!
//! Points are generated in Gray-code order with 32-bit resolution, so the
//! first point of an unscrambled stream is the origin. The initial design
//! skips that point ([`SobolGenerator::skip`]) because it sits on a corner
//! of the domain. Optional scrambling applies a random linear matrix scramble
//! followed by a random digital shift, both drawn from a ChaCha stream
//! seeded with `scramble_seed`.

use std::sync::OnceLock;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::normal;

const BITS: usize = 32;
const TABLE: &str = include_str!("../data/joe_kuo_d1111.txt");

#[derive(Debug, Clone)]
struct Polynomial {
    degree: usize,
    coeffs: u32,
    m: Vec<u32>,
}

fn table() -> &'static [Polynomial] {
    static PARSED: OnceLock<Vec<Polynomial>> = OnceLock::new();
    PARSED.get_or_init(|| parse_table(TABLE).expect("bundled direction-number table is valid"))
}

fn parse_table(text: &str) -> Result<Vec<Polynomial>> {
    let mut polys = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') || line.starts_with('d') {
            continue;
        }
        let bad = |reason: &str| Error::DirectionTable {
            line: lineno + 1,
            reason: reason.to_string(),
        };
        let nums = line
            .split_whitespace()
            .map(|t| t.parse::<u32>())
            .collect::<std::result::Result<Vec<_>, _>>()
            .map_err(|e| bad(&e.to_string()))?;
        if nums.len() < 4 {
            return Err(bad("too few columns"));
        }
        let (d, s, a) = (nums[0] as usize, nums[1] as usize, nums[2]);
        if d != polys.len() + 2 {
            return Err(bad("dimensions must be consecutive starting at 2"));
        }
        if nums.len() != 3 + s || s == 0 || s >= BITS {
            return Err(bad("column count does not match degree"));
        }
        polys.push(Polynomial {
            degree: s,
            coeffs: a,
            m: nums[3..].to_vec(),
        });
    }
    Ok(polys)
}

/// Highest dimension supported by the bundled table.
pub fn max_dimension() -> usize {
    table().len() + 1
}

fn direction_numbers(dim_index: usize) -> [u32; BITS] {
    let mut v = [0u32; BITS];
    if dim_index == 0 {
        for (k, vk) in v.iter_mut().enumerate() {
            *vk = 1u32 << (BITS - 1 - k);
        }
        return v;
    }
    let p = &table()[dim_index - 1];
    let s = p.degree;
    for k in 0..s {
        v[k] = p.m[k] << (BITS - 1 - k);
    }
    for k in s..BITS {
        let mut x = v[k - s] ^ (v[k - s] >> s);
        for i in 1..s {
            if (p.coeffs >> (s - 1 - i)) & 1 == 1 {
                x ^= v[k - i];
            }
        }
        v[k] = x;
    }
    v
}

/// Stateful Sobol stream over `[0, 1)^dimension`.
#[derive(Debug, Clone)]
pub struct SobolGenerator {
    dimension: usize,
    index: u64,
    scramble_seed: Option<u64>,
    directions: Vec<[u32; BITS]>,
    shift: Vec<u32>,
    state: Vec<u32>,
}

impl SobolGenerator {
    pub fn new(dimension: usize, scramble_seed: Option<u64>) -> Result<Self> {
        let max = max_dimension();
        if dimension == 0 || dimension > max {
            return Err(Error::UnsupportedDimension {
                requested: dimension,
                max,
            });
        }
        let mut directions: Vec<_> = (0..dimension).map(direction_numbers).collect();
        let mut shift = vec![0u32; dimension];
        if let Some(seed) = scramble_seed {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            for (dirs, sh) in directions.iter_mut().zip(shift.iter_mut()) {
                let ltm = random_lower_triangular(&mut rng);
                for v in dirs.iter_mut() {
                    *v = apply_ltm(&ltm, *v);
                }
                *sh = rng.random();
            }
        }
        let state = shift.clone();
        Ok(Self {
            dimension,
            index: 0,
            scramble_seed,
            directions,
            shift,
            state,
        })
    }

    pub fn dimension(&self) -> usize {
        self.dimension
    }

    /// Index of the next point to be emitted.
    pub fn index(&self) -> u64 {
        self.index
    }

    pub fn scramble_seed(&self) -> Option<u64> {
        self.scramble_seed
    }

    /// Repositions the stream so the next point emitted is point `index`.
    pub fn seek(&mut self, index: u64) {
        let gray = index ^ (index >> 1);
        for (j, st) in self.state.iter_mut().enumerate() {
            let mut x = self.shift[j];
            for (k, v) in self.directions[j].iter().enumerate() {
                if (gray >> k) & 1 == 1 {
                    x ^= v;
                }
            }
            *st = x;
        }
        self.index = index;
    }

    /// Advances past `n` points without emitting them.
    pub fn skip(&mut self, n: u64) -> &mut Self {
        self.seek(self.index + n);
        self
    }

    /// Next point of the stream.
    pub fn next_point(&mut self) -> Vec<f64> {
        const SCALE: f64 = 1.0 / 4_294_967_296.0;
        let out = self.state.iter().map(|&x| x as f64 * SCALE).collect();
        // Gray-code step i -> i+1 flips the lowest zero bit of i
        let c = (self.index.trailing_ones() as usize).min(BITS - 1);
        for (st, dirs) in self.state.iter_mut().zip(&self.directions) {
            *st ^= dirs[c];
        }
        self.index += 1;
        out
    }

    /// The next `n` points, each in `[0, 1)^dimension`.
    pub fn sobol_points(&mut self, n: usize) -> Vec<Vec<f64>> {
        (0..n).map(|_| self.next_point()).collect()
    }

    /// The next `n` points pushed through the inverse normal CDF.
    ///
    /// Zero coordinates are replaced by half the smallest dyadic cell covering
    /// the points generated so far, so no sample is infinite.
    pub fn qmc_normal_samples(&mut self, n: usize) -> Vec<Vec<f64>> {
        let end = self.index + n as u64;
        let cell = 1.0 / (end.max(2).next_power_of_two() as f64);
        (0..n)
            .map(|_| {
                self.next_point()
                    .into_iter()
                    .map(|u| normal::ppf(if u == 0.0 { 0.5 * cell } else { u }))
                    .collect()
            })
            .collect()
    }
}

fn random_lower_triangular(rng: &mut ChaCha8Rng) -> [u32; BITS] {
    // row b holds the mixing mask for output bit b (counted from the most
    // significant bit): unit diagonal plus random bits in more significant
    // positions only
    let mut rows = [0u32; BITS];
    for (b, row) in rows.iter_mut().enumerate() {
        let own = 1u32 << (BITS - 1 - b);
        let above_mask = if b == 0 { 0 } else { !0u32 << (BITS - b) };
        *row = own | (rng.random::<u32>() & above_mask);
    }
    rows
}

fn apply_ltm(rows: &[u32; BITS], v: u32) -> u32 {
    let mut out = 0u32;
    for (b, row) in rows.iter().enumerate() {
        if (row & v).count_ones() & 1 == 1 {
            out |= 1u32 << (BITS - 1 - b);
        }
    }
    out
}
