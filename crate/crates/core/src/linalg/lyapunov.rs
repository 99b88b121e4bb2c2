//! Algebraic Lyapunov equation `A Q + Q A^T + C = 0`.
//!
//! Small systems go through the Kronecker form; larger ones through a real
//! Schur decomposition and block back-substitution (Bartels–Stewart).

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

/// Largest dimension solved through the `n^2 x n^2` Kronecker system.
pub const KRONECKER_MAX_DIM: usize = 24;

pub fn solve_ale(a: &DMatrix<f64>, c: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let n = a.nrows();
    if !a.is_square() || c.nrows() != n || c.ncols() != n {
        return Err(Error::dim("solve_ale: A and C must be square and of equal size"));
    }
    let q = if n <= KRONECKER_MAX_DIM {
        solve_kronecker(a, c)?
    } else {
        solve_schur(a, c)?
    };
    Ok((&q + q.transpose()) * 0.5)
}

/// Residual `A Q + Q A^T + C`.
pub fn ale_residual(a: &DMatrix<f64>, q: &DMatrix<f64>, c: &DMatrix<f64>) -> DMatrix<f64> {
    a * q + q * a.transpose() + c
}

fn closest_eigen_pair(a: &DMatrix<f64>) -> (f64, f64) {
    let eig = a.clone().complex_eigenvalues();
    let mut best = (f64::INFINITY, 0.0, 0.0);
    for x in eig.iter() {
        for y in eig.iter() {
            let s = (x + y).norm();
            if s < best.0 {
                best = (s, x.re, y.re);
            }
        }
    }
    (best.1, best.2)
}

pub(crate) fn solve_kronecker(a: &DMatrix<f64>, c: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let n = a.nrows();
    let m = n * n;
    let mut k = DMatrix::<f64>::zeros(m, m);
    // column-major vec: vec(AQ) = (I kron A) vec Q, vec(Q A^T) = (A kron I) vec Q
    for blk in 0..n {
        for i in 0..n {
            for j in 0..n {
                k[(blk * n + i, blk * n + j)] += a[(i, j)];
                k[(blk * n + i, j * n + i)] += a[(blk, j)];
            }
        }
    }
    let rhs = DVector::from_iterator(m, c.iter().map(|v| -v));
    let scale = k.norm().max(f64::MIN_POSITIVE);
    let lu = k.lu();
    let u = lu.u();
    let min_piv = (0..m).map(|i| u[(i, i)].abs()).fold(f64::INFINITY, f64::min);
    if min_piv <= 1e-13 * scale {
        let (x, y) = closest_eigen_pair(a);
        return Err(Error::NotSolvable(x, y));
    }
    let q = lu
        .solve(&rhs)
        .ok_or_else(|| {
            let (x, y) = closest_eigen_pair(a);
            Error::NotSolvable(x, y)
        })?;
    Ok(DMatrix::from_column_slice(n, n, q.as_slice()))
}

pub(crate) fn solve_schur(a: &DMatrix<f64>, c: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let n = a.nrows();
    let (u, t) = a.clone().schur().unpack();
    let f = -(u.transpose() * c * &u);
    let tnorm = t.norm().max(f64::MIN_POSITIVE);

    let mut blocks: Vec<(usize, usize)> = Vec::new();
    let mut i = 0;
    while i < n {
        if i + 1 < n && t[(i + 1, i)].abs() > 1e-14 * tnorm {
            blocks.push((i, 2));
            i += 2;
        } else {
            blocks.push((i, 1));
            i += 1;
        }
    }

    let mut y = DMatrix::<f64>::zeros(n, n);
    for &(j0, q) in blocks.iter().rev() {
        for &(i0, p) in blocks.iter().rev() {
            let mut r = DMatrix::<f64>::zeros(p, q);
            for a_ in 0..p {
                for b_ in 0..q {
                    let (ii, jj) = (i0 + a_, j0 + b_);
                    let mut s = f[(ii, jj)];
                    for k in i0 + p..n {
                        s -= t[(ii, k)] * y[(k, jj)];
                    }
                    for l in j0 + q..n {
                        s -= y[(ii, l)] * t[(jj, l)];
                    }
                    r[(a_, b_)] = s;
                }
            }
            // (I_q kron T_II + T_JJ kron I_p) vec Y = vec R
            let dim = p * q;
            let mut k = DMatrix::<f64>::zeros(dim, dim);
            for bb in 0..q {
                for aa in 0..p {
                    let row = bb * p + aa;
                    for a2 in 0..p {
                        k[(row, bb * p + a2)] += t[(i0 + aa, i0 + a2)];
                    }
                    for b2 in 0..q {
                        k[(row, b2 * p + aa)] += t[(j0 + bb, j0 + b2)];
                    }
                }
            }
            let rhs = DVector::from_column_slice(r.as_slice());
            let kn = k.norm().max(tnorm * 1e-300);
            let lu = k.lu();
            let uu = lu.u();
            let min_piv = (0..dim).map(|d| uu[(d, d)].abs()).fold(f64::INFINITY, f64::min);
            if min_piv <= 1e-13 * kn.max(tnorm) {
                return Err(Error::NotSolvable(t[(i0, i0)], t[(j0, j0)]));
            }
            let sol = lu.solve(&rhs).ok_or(Error::NotSolvable(t[(i0, i0)], t[(j0, j0)]))?;
            for bb in 0..q {
                for aa in 0..p {
                    y[(i0 + aa, j0 + bb)] = sol[bb * p + aa];
                }
            }
        }
    }
    Ok(&u * y * u.transpose())
}
