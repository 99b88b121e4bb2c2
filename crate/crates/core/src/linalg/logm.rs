//! Principal matrix logarithm by inverse scaling and squaring.

use nalgebra::DMatrix;

use crate::error::{Error, Result};

/// Principal logarithm of `m`. Fails with [`Error::BranchCut`] if an
/// eigenvalue lies on the closed negative real axis.
pub fn principal_log(m: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    if !m.is_square() {
        return Err(Error::dim("principal_log needs a square matrix"));
    }
    if m.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("principal_log input".into()));
    }
    let n = m.nrows();
    if n == 0 {
        return Ok(m.clone());
    }
    let scale = m.norm().max(f64::MIN_POSITIVE);
    for z in m.clone().complex_eigenvalues().iter() {
        if z.re <= 0.0 && z.im.abs() <= 1e-12 * scale.max(z.norm()) {
            return Err(Error::BranchCut { re: z.re, im: z.im });
        }
        if z.norm() <= 1e-14 * scale {
            return Err(Error::BranchCut { re: z.re, im: z.im });
        }
    }

    let eye = DMatrix::<f64>::identity(n, n);
    let mut x = m.clone();
    let mut roots = 0u32;
    while norm_one(&(&x - &eye)) > 0.25 {
        if roots >= 64 {
            return Err(Error::NoConvergence {
                iterations: 64,
                context: "principal_log square-root reduction".into(),
            });
        }
        x = sqrtm_denman_beavers(&x)?;
        roots += 1;
    }

    // log X = 2 atanh(Y), Y = (X - I)(X + I)^{-1}; ||Y|| <= 1/7 here.
    let xp = (&x + &eye)
        .try_inverse()
        .ok_or_else(|| Error::Singular {
            condition: f64::INFINITY,
            context: "principal_log: X + I".into(),
        })?;
    let y = (&x - &eye) * xp;
    let y2 = &y * &y;
    let mut power = y.clone();
    let mut acc = y.clone();
    for j in (3..200).step_by(2) {
        power = &power * &y2;
        let term = &power / j as f64;
        acc += &term;
        if term.norm() <= f64::EPSILON * acc.norm().max(f64::MIN_POSITIVE) {
            break;
        }
    }
    Ok(acc * (2.0 * (1u64 << roots) as f64))
}

fn sqrtm_denman_beavers(a: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let n = a.nrows();
    let mut y = a.clone();
    let mut z = DMatrix::<f64>::identity(n, n);
    for _ in 0..100 {
        let yi = y.clone().try_inverse();
        let zi = z.clone().try_inverse();
        let (yi, zi) = match (yi, zi) {
            (Some(yi), Some(zi)) => (yi, zi),
            _ => {
                return Err(Error::Singular {
                    condition: f64::INFINITY,
                    context: "matrix square root iteration".into(),
                })
            }
        };
        let y_next = (&y + &zi) * 0.5;
        let z_next = (&z + &yi) * 0.5;
        let delta = (&y_next - &y).norm();
        y = y_next;
        z = z_next;
        if delta <= 1e-15 * y.norm() {
            return Ok(y);
        }
    }
    Err(Error::NoConvergence {
        iterations: 100,
        context: "Denman-Beavers square root".into(),
    })
}

fn norm_one(m: &DMatrix<f64>) -> f64 {
    (0..m.ncols())
        .map(|j| m.column(j).iter().map(|v| v.abs()).sum::<f64>())
        .fold(0.0, f64::max)
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::DVector;

    #[test]
    fn log_of_identity_is_zero() {
        let l = principal_log(&DMatrix::identity(3, 3)).unwrap();
        assert!(l.norm() < 1e-15);
    }

    #[test]
    fn log_of_diagonal_exponentials() {
        let e = std::f64::consts::E;
        let m = DMatrix::from_diagonal(&DVector::from_vec(vec![e, e * e]));
        let l = principal_log(&m).unwrap();
        assert!((l[(0, 0)] - 1.0).abs() < 1e-13);
        assert!((l[(1, 1)] - 2.0).abs() < 1e-13);
        assert!(l[(0, 1)].abs() < 1e-14);
    }

    #[test]
    fn negative_eigenvalue_is_branch_cut() {
        let m = DMatrix::from_diagonal(&DVector::from_vec(vec![1.0, -0.5]));
        match principal_log(&m) {
            Err(Error::BranchCut { re, .. }) => assert!((re + 0.5).abs() < 1e-12),
            other => panic!("expected branch cut, got {other:?}"),
        }
    }

    #[test]
    fn rotation_log_recovers_angle() {
        let th: f64 = 0.9;
        let m = DMatrix::from_row_slice(2, 2, &[th.cos(), -th.sin(), th.sin(), th.cos()]);
        let l = principal_log(&m).unwrap();
        assert!((l[(1, 0)] - th).abs() < 1e-12);
        assert!((l[(0, 1)] + th).abs() < 1e-12);
        assert!(l[(0, 0)].abs() < 1e-12);
    }
}
