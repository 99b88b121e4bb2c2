//! Banded LU with partial pivoting for the sparse systems produced by
//! Crank–Nicolson on grid operators, plus a dense fallback.

use nalgebra::{DMatrix, DVector};

use super::operator::Operator;
use super::sparse::CsrMatrix;
use crate::error::{Error, Result};

/// LU factors of a banded matrix. Row `i` of `work` covers columns
/// `i - kl ..= i + kl + ku`; the extra `kl` upper diagonals hold fill-in
/// from row interchanges.
#[derive(Debug, Clone)]
pub struct BandedLu {
    n: usize,
    kl: usize,
    ku: usize,
    width: usize,
    work: Vec<f64>,
    multipliers: Vec<f64>,
    pivots: Vec<usize>,
    condition: f64,
}

impl BandedLu {
    #[inline]
    fn idx(&self, i: usize, c: usize) -> usize {
        i * self.width + (c + self.kl - i)
    }

    pub fn factor(m: &CsrMatrix) -> Result<Self> {
        if m.nrows() != m.ncols() {
            return Err(Error::dim("banded LU needs a square matrix"));
        }
        let n = m.nrows();
        let (kl, ku) = m.bandwidth();
        let width = 2 * kl + ku + 1;
        let mut lu = BandedLu {
            n,
            kl,
            ku,
            width,
            work: vec![0.0; n * width],
            multipliers: vec![0.0; n * kl.max(1)],
            pivots: vec![0; n],
            condition: 1.0,
        };
        for (i, j, v) in m.triplets() {
            let k = lu.idx(i, j);
            lu.work[k] = v;
        }
        let scale = m.norm_one().max(f64::MIN_POSITIVE);
        let mut max_piv: f64 = 0.0;
        let mut min_piv = f64::INFINITY;
        for k in 0..n {
            let last_row = (k + kl).min(n - 1);
            let last_col = (k + kl + ku).min(n - 1);
            let mut p = k;
            let mut best = lu.work[lu.idx(k, k)].abs();
            for i in k + 1..=last_row {
                let v = lu.work[lu.idx(i, k)].abs();
                if v > best {
                    best = v;
                    p = i;
                }
            }
            lu.pivots[k] = p;
            if best <= f64::EPSILON * scale * (n as f64) {
                return Err(Error::Singular {
                    condition: f64::INFINITY,
                    context: format!("zero pivot in banded LU at column {k}"),
                });
            }
            max_piv = max_piv.max(best);
            min_piv = min_piv.min(best);
            if p != k {
                for c in k..=last_col {
                    let a = lu.idx(k, c);
                    let b = lu.idx(p, c);
                    lu.work.swap(a, b);
                }
            }
            let pivot = lu.work[lu.idx(k, k)];
            for i in k + 1..=last_row {
                let l = lu.work[lu.idx(i, k)] / pivot;
                lu.multipliers[k * kl + (i - k - 1)] = l;
                let ik = lu.idx(i, k);
                lu.work[ik] = 0.0;
                if l != 0.0 {
                    for c in k + 1..=last_col {
                        let kc = lu.work[lu.idx(k, c)];
                        let ic = lu.idx(i, c);
                        lu.work[ic] -= l * kc;
                    }
                }
            }
        }
        lu.condition = max_piv / min_piv;
        if lu.condition > 1e14 {
            return Err(Error::Singular {
                condition: lu.condition,
                context: "banded LU pivot ratio".into(),
            });
        }
        Ok(lu)
    }

    /// Pivot-ratio condition estimate (a lower bound on the true condition).
    pub fn condition_estimate(&self) -> f64 {
        self.condition
    }

    pub fn solve_in_place(&self, b: &mut [f64]) {
        let n = self.n;
        let kl = self.kl;
        for k in 0..n {
            let p = self.pivots[k];
            if p != k {
                b.swap(k, p);
            }
            let bk = b[k];
            if bk != 0.0 {
                let last_row = (k + kl).min(n - 1);
                for i in k + 1..=last_row {
                    b[i] -= self.multipliers[k * kl + (i - k - 1)] * bk;
                }
            }
        }
        for i in (0..n).rev() {
            let last_col = (i + kl + self.ku).min(n - 1);
            let mut s = b[i];
            for c in i + 1..=last_col {
                s -= self.work[self.idx(i, c)] * b[c];
            }
            b[i] = s / self.work[self.idx(i, i)];
        }
    }
}

/// A factorized square system, reused across time steps.
#[derive(Debug, Clone)]
pub enum LinearSolver {
    Banded(BandedLu),
    Dense(nalgebra::LU<f64, nalgebra::Dyn, nalgebra::Dyn>),
}

impl LinearSolver {
    pub fn factor(m: &Operator) -> Result<Self> {
        m.check_square()?;
        match m {
            Operator::Sparse(s) => Ok(LinearSolver::Banded(BandedLu::factor(s)?)),
            Operator::Dense(d) => {
                let cond = dense_pivot_ratio(d);
                if !cond.is_finite() || cond > 1e14 {
                    return Err(Error::Singular {
                        condition: cond,
                        context: "dense LU pivot ratio".into(),
                    });
                }
                Ok(LinearSolver::Dense(d.clone().lu()))
            }
        }
    }

    pub fn solve(&self, b: &DVector<f64>) -> DVector<f64> {
        match self {
            LinearSolver::Banded(lu) => {
                let mut x = b.clone();
                lu.solve_in_place(x.as_mut_slice());
                x
            }
            LinearSolver::Dense(lu) => lu.solve(b).expect("factor checked nonsingular"),
        }
    }

    pub fn solve_in_place(&self, b: &mut DVector<f64>) {
        match self {
            LinearSolver::Banded(lu) => lu.solve_in_place(b.as_mut_slice()),
            LinearSolver::Dense(lu) => {
                let x = lu.solve(b).expect("factor checked nonsingular");
                b.copy_from(&x);
            }
        }
    }
}

fn dense_pivot_ratio(d: &DMatrix<f64>) -> f64 {
    let lu = d.clone().lu();
    let u = lu.u();
    let diag: Vec<f64> = (0..u.nrows().min(u.ncols())).map(|i| u[(i, i)].abs()).collect();
    let max = diag.iter().cloned().fold(0.0, f64::max);
    let min = diag.iter().cloned().fold(f64::INFINITY, f64::min);
    if min == 0.0 {
        f64::INFINITY
    } else {
        max / min
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn banded_matches_dense_solve_with_pivoting() {
        // tridiagonal with a small diagonal entry forces a row interchange
        let n = 7;
        let mut trip = Vec::new();
        for i in 0..n {
            trip.push((i, i, if i == 2 { 1e-3 } else { 2.0 + i as f64 }));
            if i + 1 < n {
                trip.push((i, i + 1, -1.5));
                trip.push((i + 1, i, 3.0));
            }
        }
        let m = CsrMatrix::from_triplets(n, n, &trip).unwrap();
        let lu = BandedLu::factor(&m).unwrap();
        let b = DVector::from_fn(n, |i, _| (i as f64).sin() + 1.0);
        let mut x = b.clone();
        lu.solve_in_place(x.as_mut_slice());
        let dense = m.to_dense().lu().solve(&b).unwrap();
        assert!((x - dense).norm() < 1e-12);
    }

    #[test]
    fn singular_reports_condition() {
        let m = CsrMatrix::from_triplets(2, 2, &[(0, 0, 1.0), (0, 1, 1.0), (1, 0, 1.0), (1, 1, 1.0)])
            .unwrap();
        match BandedLu::factor(&m) {
            Err(Error::Singular { .. }) => {}
            other => panic!("expected singular error, got {other:?}"),
        }
    }
}
