use nalgebra::{DMatrix, DVector};

use super::sparse::CsrMatrix;
use crate::error::{Error, Result};
use crate::exec;

/// A square linear operator stored either densely (calibrated drift, noise
/// operators) or in CSR form (discretized transport).
#[derive(Debug, Clone, PartialEq)]
pub enum Operator {
    Dense(DMatrix<f64>),
    Sparse(CsrMatrix),
}

impl Operator {
    pub fn dim(&self) -> usize {
        match self {
            Operator::Dense(m) => m.nrows(),
            Operator::Sparse(s) => s.nrows(),
        }
    }

    pub fn check_square(&self) -> Result<()> {
        let (r, c) = match self {
            Operator::Dense(m) => (m.nrows(), m.ncols()),
            Operator::Sparse(s) => (s.nrows(), s.ncols()),
        };
        if r != c {
            return Err(Error::dim(format!("operator is {r}x{c}, expected square")));
        }
        Ok(())
    }

    pub fn apply(&self, x: &DVector<f64>) -> DVector<f64> {
        match self {
            Operator::Dense(m) => m * x,
            Operator::Sparse(s) => s.apply(x),
        }
    }

    /// `self * B`, column blocks processed in parallel for sparse storage.
    pub fn apply_block(&self, b: &DMatrix<f64>) -> DMatrix<f64> {
        match self {
            Operator::Dense(m) => m * b,
            Operator::Sparse(s) => {
                let n = s.nrows();
                let cols = exec::map_indexed(b.ncols(), |j| {
                    let mut y = vec![0.0; n];
                    s.mul_vec(b.column(j).as_slice(), &mut y);
                    y
                });
                let mut out = DMatrix::zeros(n, b.ncols());
                for (j, c) in cols.into_iter().enumerate() {
                    out.column_mut(j).copy_from_slice(&c);
                }
                out
            }
        }
    }

    pub fn norm_one(&self) -> f64 {
        match self {
            Operator::Dense(m) => (0..m.ncols())
                .map(|j| m.column(j).iter().map(|v| v.abs()).sum::<f64>())
                .fold(0.0, f64::max),
            Operator::Sparse(s) => s.norm_one(),
        }
    }

    pub fn trace(&self) -> f64 {
        match self {
            Operator::Dense(m) => m.trace(),
            Operator::Sparse(s) => s.trace(),
        }
    }

    pub fn to_dense(&self) -> DMatrix<f64> {
        match self {
            Operator::Dense(m) => m.clone(),
            Operator::Sparse(s) => s.to_dense(),
        }
    }

    pub fn transpose(&self) -> Operator {
        match self {
            Operator::Dense(m) => Operator::Dense(m.transpose()),
            Operator::Sparse(s) => Operator::Sparse(s.transpose()),
        }
    }

    /// `alpha * self + beta * I`, keeping the storage kind.
    pub fn scale_add_identity(&self, alpha: f64, beta: f64) -> Operator {
        match self {
            Operator::Dense(m) => {
                let mut out = m * alpha;
                for i in 0..out.nrows() {
                    out[(i, i)] += beta;
                }
                Operator::Dense(out)
            }
            Operator::Sparse(s) => Operator::Sparse(s.scale_add_identity(alpha, beta)),
        }
    }

    pub fn is_finite(&self) -> bool {
        match self {
            Operator::Dense(m) => m.iter().all(|v| v.is_finite()),
            Operator::Sparse(s) => s.triplets().all(|(_, _, v)| v.is_finite()),
        }
    }

    /// Gershgorin bound on the largest real part of the spectrum.
    pub fn gershgorin_abscissa(&self) -> f64 {
        let n = self.dim();
        let mut best = f64::NEG_INFINITY;
        for i in 0..n {
            let (diag, off) = match self {
                Operator::Dense(m) => {
                    let off: f64 = (0..n).filter(|&j| j != i).map(|j| m[(i, j)].abs()).sum();
                    (m[(i, i)], off)
                }
                Operator::Sparse(s) => {
                    let (cols, vals) = s.row(i);
                    let mut d = 0.0;
                    let mut off = 0.0;
                    for (&j, &v) in cols.iter().zip(vals) {
                        if j == i {
                            d = v;
                        } else {
                            off += v.abs();
                        }
                    }
                    (d, off)
                }
            };
            best = best.max(diag + off);
        }
        best
    }

    /// Largest real part of the spectrum: Gershgorin when conclusive,
    /// otherwise a dense eigenvalue computation (n <= 1024).
    pub fn spectral_abscissa(&self) -> Result<f64> {
        let g = self.gershgorin_abscissa();
        if g < 0.0 {
            return Ok(g);
        }
        if self.dim() > 1024 {
            return Ok(g);
        }
        let eig = self.to_dense().complex_eigenvalues();
        Ok(eig.iter().map(|z| z.re).fold(f64::NEG_INFINITY, f64::max))
    }
}

impl From<DMatrix<f64>> for Operator {
    fn from(m: DMatrix<f64>) -> Self {
        Operator::Dense(m)
    }
}

impl From<CsrMatrix> for Operator {
    fn from(s: CsrMatrix) -> Self {
        Operator::Sparse(s)
    }
}
