//! Cholesky factorization with escalating diagonal jitter.

use nalgebra::{Cholesky, DMatrix, Dyn};

use crate::error::{Error, Result};

/// Diagonal jitter tried, in order, when a factorization fails.
pub const JITTER_LADDER: [f64; 5] = [1e-8, 1e-7, 1e-6, 1e-5, 1e-4];

/// Cholesky factor of `a`, retrying with growing diagonal jitter.
///
/// Returns the factor and the jitter that was needed (0 if none).
pub fn cholesky_jittered(a: &DMatrix<f64>) -> Result<(Cholesky<f64, Dyn>, f64)> {
    if let Some(c) = a.clone().cholesky() {
        return Ok((c, 0.0));
    }
    let scale = a
        .diagonal()
        .iter()
        .fold(0.0f64, |m, v| m.max(v.abs()))
        .max(1.0);
    for jitter in JITTER_LADDER {
        let mut b = a.clone();
        for i in 0..b.nrows() {
            b[(i, i)] += jitter * scale;
        }
        if let Some(c) = b.cholesky() {
            return Ok((c, jitter * scale));
        }
    }
    Err(Error::Conditioning {
        jitter: JITTER_LADDER[JITTER_LADDER.len() - 1] * scale,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn singular_matrix_gets_jitter() {
        let a = DMatrix::from_element(3, 3, 1.0);
        let (c, jitter) = cholesky_jittered(&a).unwrap();
        assert!(jitter > 0.0);
        assert_eq!(c.l().nrows(), 3);
    }

    #[test]
    fn indefinite_matrix_fails() {
        let a = DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, -1.0]);
        assert!(matches!(
            cholesky_jittered(&a),
            Err(Error::Conditioning { .. })
        ));
    }
}
