//! Least-squares solves for the continuation-value regressions.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

/// Polynomial basis of total degree ≤ 2 in `dim` variables: the constant,
/// every coordinate and every product `x_i x_j` with `i ≤ j`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct QuadraticBasis {
    dim: usize,
}

impl QuadraticBasis {
    pub fn new(dim: usize) -> Self {
        Self { dim }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        1 + self.dim + self.dim * (self.dim + 1) / 2
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    /// Writes the basis row for `x` into `out` (length [`Self::len`]).
    #[inline]
    pub fn eval_into(&self, x: &[f64], out: &mut [f64]) {
        out[0] = 1.0;
        out[1..=self.dim].copy_from_slice(&x[..self.dim]);
        let mut c = 1 + self.dim;
        for i in 0..self.dim {
            for j in i..self.dim {
                out[c] = x[i] * x[j];
                c += 1;
            }
        }
    }

    #[inline]
    pub fn dot(&self, x: &[f64], coef: &[f64]) -> f64 {
        let mut acc = coef[0];
        for i in 0..self.dim {
            acc += coef[1 + i] * x[i];
        }
        let mut c = 1 + self.dim;
        for i in 0..self.dim {
            for j in i..self.dim {
                acc += coef[c] * x[i] * x[j];
                c += 1;
            }
        }
        acc
    }
}

/// Result of a least-squares solve.
#[derive(Debug, Clone, PartialEq)]
pub struct LeastSquares {
    pub coef: Vec<f64>,
    /// The design was rank deficient and the minimum-norm solution was used.
    pub rank_deficient: bool,
}

/// Minimizes `‖A x - y‖₂` by Householder QR, falling back to the SVD
/// pseudo-inverse when `R` has a negligible diagonal entry.
pub fn least_squares(design: DMatrix<f64>, target: &DVector<f64>) -> Result<LeastSquares> {
    let (m, n) = design.shape();
    if m != target.len() {
        return Err(Error::DimensionMismatch {
            expected: m,
            got: target.len(),
        });
    }
    if m == 0 || n == 0 {
        return Err(Error::InvalidInput("empty regression design".into()));
    }
    let tol_scale = f64::EPSILON * m.max(n) as f64;
    if m >= n {
        let qr = design.clone().qr();
        let r = qr.r();
        let diag_max = (0..n).map(|i| r[(i, i)].abs()).fold(0.0, f64::max);
        let full_rank = diag_max > 0.0 && (0..n).all(|i| r[(i, i)].abs() > tol_scale * diag_max);
        if full_rank {
            let mut qty = target.clone();
            qr.q_tr_mul(&mut qty);
            let rhs = qty.rows(0, n).into_owned();
            if let Some(x) = r.solve_upper_triangular(&rhs) {
                if x.iter().all(|v| v.is_finite()) {
                    return Ok(LeastSquares {
                        coef: x.iter().copied().collect(),
                        rank_deficient: false,
                    });
                }
            }
        }
    }
    let svd = design.svd(true, true);
    let sv_max = svd.singular_values.iter().copied().fold(0.0, f64::max);
    let x = svd
        .solve(target, tol_scale * sv_max.max(f64::MIN_POSITIVE))
        .map_err(|e| Error::Numerical(format!("pseudo-inverse solve failed: {e}")))?;
    Ok(LeastSquares {
        coef: x.iter().copied().collect(),
        rank_deficient: true,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn basis_sizes() {
        assert_eq!(QuadraticBasis::new(2).len(), 6);
        assert_eq!(QuadraticBasis::new(4).len(), 15);
    }

    #[test]
    fn basis_dot_matches_eval() {
        let b = QuadraticBasis::new(4);
        let x = [0.3, -1.2, 2.0, 0.7];
        let coef: Vec<f64> = (0..15).map(|i| 0.1 * i as f64 - 0.5).collect();
        let mut row = vec![0.0; 15];
        b.eval_into(&x, &mut row);
        let direct: f64 = row.iter().zip(&coef).map(|(a, c)| a * c).sum();
        assert_relative_eq!(direct, b.dot(&x, &coef), max_relative = 1e-14);
    }

    #[test]
    fn exact_fit_recovered() {
        let xs: Vec<f64> = (0..20).map(|i| i as f64 * 0.1).collect();
        let a = DMatrix::from_fn(20, 3, |i, j| xs[i].powi(j as i32));
        let y = DVector::from_iterator(20, xs.iter().map(|x| 1.0 - 2.0 * x + 0.5 * x * x));
        let ls = least_squares(a, &y).unwrap();
        assert!(!ls.rank_deficient);
        assert_relative_eq!(ls.coef[0], 1.0, epsilon = 1e-12);
        assert_relative_eq!(ls.coef[1], -2.0, epsilon = 1e-12);
        assert_relative_eq!(ls.coef[2], 0.5, epsilon = 1e-12);
    }

    #[test]
    fn rank_deficient_falls_back_to_min_norm() {
        // identical rows: only the mean is identifiable
        let a = DMatrix::from_fn(10, 3, |_, j| [1.0, 2.0, 4.0][j]);
        let y = DVector::from_iterator(10, (0..10).map(|i| i as f64));
        let ls = least_squares(a.clone(), &y).unwrap();
        assert!(ls.rank_deficient);
        let fitted = &a * DVector::from_vec(ls.coef.clone());
        for v in fitted.iter() {
            assert_relative_eq!(*v, 4.5, max_relative = 1e-12);
        }
    }
}
