//! Action of the matrix exponential on a tall-thin block.
//!
//! The operator is shifted by `mu = trace(A)/n` (exactly undone by the scalar
//! factor `exp(t*mu)`), the interval is split into `s` substeps so that
//! `||t(A - mu I)||_1 / s <= 1`, and each substep sums the Taylor series
//! until the next term is below the per-substep tolerance.

use nalgebra::DMatrix;

use super::operator::Operator;
use crate::error::{Error, Result};

const MAX_TERMS: usize = 60;
const MAX_SUBSTEPS: usize = 100_000;

pub fn exp_action(a: &Operator, b: &DMatrix<f64>, t: f64, tol: f64) -> Result<DMatrix<f64>> {
    a.check_square()?;
    if b.nrows() != a.dim() {
        return Err(Error::dim(format!(
            "exp_action: block has {} rows, operator is {}",
            b.nrows(),
            a.dim()
        )));
    }
    if !t.is_finite() {
        return Err(Error::arg("exp_action: non-finite time"));
    }
    if !(tol > 0.0) {
        return Err(Error::arg("exp_action: tolerance must be positive"));
    }
    if t == 0.0 || b.ncols() == 0 {
        return Ok(b.clone());
    }
    let n = a.dim();
    let mu = a.trace() / n as f64;
    let shifted = a.scale_add_identity(1.0, -mu);
    let norm = shifted.norm_one() * t.abs();
    if !norm.is_finite() {
        return Err(Error::NonFinite("exp_action: operator norm".into()));
    }
    let s = (norm.ceil() as usize).clamp(1, MAX_SUBSTEPS);
    let dt = t / s as f64;
    let step_tol = (tol / s as f64).max(f64::EPSILON);
    let scale = (mu * dt).exp();

    let mut v = b.clone();
    for _ in 0..s {
        let mut f = v.clone();
        let mut term = v;
        let mut converged = false;
        let mut prev_small = false;
        for k in 1..=MAX_TERMS {
            term = shifted.apply_block(&term) * (dt / k as f64);
            f += &term;
            let small = term.norm() <= step_tol * f.norm();
            if small && prev_small {
                converged = true;
                break;
            }
            prev_small = small;
            if f.norm() == 0.0 {
                converged = true;
                break;
            }
        }
        if !converged {
            return Err(Error::NoConvergence {
                iterations: MAX_TERMS,
                context: "exp_action Taylor series".into(),
            });
        }
        f *= scale;
        v = f;
    }
    Ok(v)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_time_returns_block() {
        let a = Operator::Dense(DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 3.0, 4.0]));
        let b = DMatrix::from_row_slice(2, 1, &[0.3, -0.7]);
        assert_eq!(exp_action(&a, &b, 0.0, 1e-12).unwrap(), b);
    }

    #[test]
    fn diagonal_generator() {
        let a = Operator::Dense(DMatrix::from_diagonal(&nalgebra::DVector::from_vec(vec![
            -1.0, -2.0,
        ])));
        let e = exp_action(&a, &DMatrix::identity(2, 2), 1.0, 1e-14).unwrap();
        assert!((e[(0, 0)] - (-1.0f64).exp()).abs() < 1e-14);
        assert!((e[(1, 1)] - (-2.0f64).exp()).abs() < 1e-14);
        assert!(e[(0, 1)].abs() < 1e-15 && e[(1, 0)].abs() < 1e-15);
    }

    #[test]
    fn rejects_bad_tolerance() {
        let a = Operator::Dense(DMatrix::identity(2, 2));
        assert!(exp_action(&a, &DMatrix::identity(2, 2), 1.0, 0.0).is_err());
    }
}
