//! Minimum-norm least squares.
//!
//! [`lstsq_min_norm`] is the reference solver: a thin SVD of the design
//! matrix with singular values below `1e-10 × σ_max` dropped.
//! [`GramSolver`] answers the same question from a precomputed Gram matrix
//! `BᵀB` and right-hand side `Bᵀa`, which is what the imputation hot loop
//! has in hand. It takes a Cholesky fast path when the Gram matrix is
//! comfortably positive definite and otherwise falls back to a truncated
//! eigendecomposition.

use faer::linalg::solvers::Solve;
use faer::{Mat, MatRef, Side};

use crate::error::{Error, Result};

/// Relative singular-value cutoff.
pub const SINGULAR_RCOND: f64 = 1e-10;

/// Smallest accepted `min(Lᵢᵢ²) / max(Gᵢᵢ)` for the Cholesky path. Below
/// this the Gram matrix is treated as (numerically) rank deficient.
pub const GRAM_PIVOT_RCOND: f64 = 1e-12;

/// Returns the minimum-norm `x` minimising `‖M x − rhs‖₂`.
pub fn lstsq_min_norm(matrix: MatRef<'_, f64>, rhs: &[f64]) -> Result<Vec<f64>> {
    let (p, q) = (matrix.nrows(), matrix.ncols());
    if p == 0 || q == 0 {
        return Err(Error::Numeric(format!("empty {p}x{q} least squares system")));
    }
    if rhs.len() != p {
        return Err(Error::Numeric(format!(
            "right-hand side has {} rows, matrix has {p}",
            rhs.len()
        )));
    }
    for j in 0..q {
        for i in 0..p {
            if !matrix[(i, j)].is_finite() {
                return Err(Error::NonFinite("least squares matrix"));
            }
        }
    }
    if rhs.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("least squares right-hand side"));
    }

    let svd = matrix
        .thin_svd()
        .map_err(|e| Error::Numeric(format!("svd did not converge: {e:?}")))?;
    let (u, v) = (svd.U(), svd.V());
    let s = svd.S().column_vector();
    let r = s.nrows();
    let cutoff = if r > 0 { s[0] * SINGULAR_RCOND } else { 0.0 };

    let mut x = vec![0.0; q];
    for k in 0..r {
        let sigma = s[k];
        if sigma <= cutoff || sigma == 0.0 {
            break;
        }
        let mut coef = 0.0;
        for i in 0..p {
            coef += u[(i, k)] * rhs[i];
        }
        coef /= sigma;
        for (j, xj) in x.iter_mut().enumerate() {
            *xj += coef * v[(j, k)];
        }
    }
    Ok(x)
}

/// Which route a [`GramSolver`] solve took.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GramRoute {
    Cholesky,
    Eigen,
}

/// Minimum-norm least squares from normal equations `G x = h` with
/// `G = BᵀB`, `h = Bᵀa`.
#[derive(Debug, Default, Clone)]
pub struct GramSolver {
    pub cholesky_solves: usize,
    pub eigen_solves: usize,
}

impl GramSolver {
    pub fn new() -> Self {
        Self::default()
    }

    /// Solves `G_s x = h_s` for the leading `s × s` block of `gram` and the
    /// first `s` entries of `rhs`, for every `s` in `sizes`. One Cholesky
    /// factorisation serves all sizes, since the factor of a leading block
    /// is the leading block of the factor; sizes that fail the pivot test
    /// go through [`GramSolver::solve`].
    pub fn solve_nested(&mut self, gram: MatRef<'_, f64>, rhs: &[f64], sizes: &[usize]) -> Result<Vec<Vec<f64>>> {
        let k = gram.nrows();
        debug_assert!(sizes.iter().all(|&s| s <= k));
        let llt = gram.llt(Side::Lower).ok();
        let mut forward = Vec::new();
        if let Some(llt) = &llt {
            let l = llt.L();
            forward = vec![0.0; k];
            for i in 0..k {
                let mut v = rhs[i];
                for j in 0..i {
                    v -= l[(i, j)] * forward[j];
                }
                forward[i] = v / l[(i, i)];
            }
        }
        let mut out = Vec::with_capacity(sizes.len());
        for &size in sizes {
            if let Some(llt) = &llt {
                let l = llt.L();
                let max_diag = (0..size).map(|i| gram[(i, i)]).fold(0.0, f64::max);
                let min_pivot = (0..size).map(|i| l[(i, i)] * l[(i, i)]).fold(f64::INFINITY, f64::min);
                if max_diag > 0.0 && max_diag.is_finite() && min_pivot >= GRAM_PIVOT_RCOND * max_diag {
                    let mut x = forward[..size].to_vec();
                    for i in (0..size).rev() {
                        let mut v = x[i];
                        for j in i + 1..size {
                            v -= l[(j, i)] * x[j];
                        }
                        x[i] = v / l[(i, i)];
                    }
                    if x.iter().all(|v| v.is_finite()) {
                        self.cholesky_solves += 1;
                        out.push(x);
                        continue;
                    }
                }
            }
            out.push(self.solve(gram.submatrix(0, 0, size, size), &rhs[..size])?.0);
        }
        Ok(out)
    }

    /// Solves in place. `gram` must be symmetric; only its lower triangle
    /// is read.
    pub fn solve(&mut self, gram: MatRef<'_, f64>, rhs: &[f64]) -> Result<(Vec<f64>, GramRoute)> {
        let k = gram.nrows();
        debug_assert_eq!(k, gram.ncols());
        debug_assert_eq!(k, rhs.len());
        let max_diag = (0..k).map(|i| gram[(i, i)]).fold(0.0, f64::max);
        if !max_diag.is_finite() {
            return Err(Error::NonFinite("gram matrix"));
        }
        if max_diag == 0.0 {
            // B is zero, so the minimum-norm solution is zero.
            self.eigen_solves += 1;
            return Ok((vec![0.0; k], GramRoute::Eigen));
        }

        if let Ok(llt) = gram.llt(Side::Lower) {
            let l = llt.L();
            let min_pivot = (0..k).map(|i| l[(i, i)] * l[(i, i)]).fold(f64::INFINITY, f64::min);
            if min_pivot >= GRAM_PIVOT_RCOND * max_diag {
                let mut col = Mat::from_fn(k, 1, |i, _| rhs[i]);
                llt.solve_in_place(col.as_mut());
                let x: Vec<f64> = (0..k).map(|i| col[(i, 0)]).collect();
                if x.iter().all(|v| v.is_finite()) {
                    self.cholesky_solves += 1;
                    return Ok((x, GramRoute::Cholesky));
                }
            }
        }

        self.eigen_solves += 1;
        let evd = gram
            .self_adjoint_eigen(Side::Lower)
            .map_err(|e| Error::Numeric(format!("eigendecomposition failed: {e:?}")))?;
        let vecs = evd.U();
        let vals = evd.S().column_vector();
        let lambda_max = (0..k).map(|i| vals[i]).fold(0.0, f64::max);
        // eigenvalues are squared singular values; below k·ε·λ_max they are
        // indistinguishable from rounding noise in the Gram product
        let cutoff = lambda_max * (SINGULAR_RCOND * SINGULAR_RCOND).max(k as f64 * f64::EPSILON);
        let mut x = vec![0.0; k];
        for c in 0..k {
            let lambda = vals[c];
            if lambda <= cutoff {
                continue;
            }
            let mut coef = 0.0;
            for i in 0..k {
                coef += vecs[(i, c)] * rhs[i];
            }
            coef /= lambda;
            for (i, xi) in x.iter_mut().enumerate() {
                *xi += coef * vecs[(i, c)];
            }
        }
        Ok((x, GramRoute::Eigen))
    }
}
