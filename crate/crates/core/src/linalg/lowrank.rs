//! Symmetric PSD matrices in factored form `P = Z Z^T`.

use nalgebra::{DMatrix, DVector, SymmetricEigen};

use crate::error::{Error, Result};

pub const DEFAULT_MAX_RANK: usize = 200;

/// Tall-thin factor `Z` (n x r) representing `P = Z Z^T`.
#[derive(Debug, Clone, PartialEq)]
pub struct LowRankFactor {
    z: DMatrix<f64>,
}

impl LowRankFactor {
    pub fn new(z: DMatrix<f64>) -> Result<Self> {
        if z.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("low-rank factor column".into()));
        }
        Ok(Self { z })
    }

    pub fn empty(n: usize) -> Self {
        Self {
            z: DMatrix::zeros(n, 0),
        }
    }

    pub fn from_vector(v: &DVector<f64>) -> Self {
        Self {
            z: DMatrix::from_column_slice(v.len(), 1, v.as_slice()),
        }
    }

    pub fn dim(&self) -> usize {
        self.z.nrows()
    }

    pub fn rank(&self) -> usize {
        self.z.ncols()
    }

    pub fn factor(&self) -> &DMatrix<f64> {
        &self.z
    }

    pub fn into_inner(self) -> DMatrix<f64> {
        self.z
    }

    /// Dense `Z Z^T`.
    pub fn product(&self) -> DMatrix<f64> {
        &self.z * self.z.transpose()
    }

    pub fn trace(&self) -> f64 {
        self.z.norm_squared()
    }

    /// Diagonal of `Z Z^T` without forming the product.
    pub fn diagonal(&self) -> DVector<f64> {
        DVector::from_fn(self.dim(), |i, _| self.z.row(i).norm_squared())
    }

    /// Horizontal concatenation `[Z | B1 | B2 ...]`.
    pub fn hcat(blocks: &[&DMatrix<f64>]) -> Result<Self> {
        let n = blocks.first().map(|b| b.nrows()).unwrap_or(0);
        if blocks.iter().any(|b| b.nrows() != n) {
            return Err(Error::dim("hcat: blocks have different row counts"));
        }
        let r: usize = blocks.iter().map(|b| b.ncols()).sum();
        let mut z = DMatrix::zeros(n, r);
        let mut off = 0;
        for b in blocks {
            z.columns_mut(off, b.ncols()).copy_from(*b);
            off += b.ncols();
        }
        Self::new(z)
    }
}

/// Orthonormal basis `Q` and small factor `R` with `Z Z^T = Q R R^T Q^T`.
fn orth_basis(z: &DMatrix<f64>) -> (DMatrix<f64>, DMatrix<f64>) {
    let (n, r) = z.shape();
    if r <= n {
        let qr = z.clone().qr();
        (qr.q(), qr.r())
    } else {
        let svd = z.clone().svd(true, false);
        let u = svd.u.expect("requested U");
        let s = DMatrix::from_diagonal(&svd.singular_values);
        (u, s)
    }
}

/// Minimal-rank `Z'` with `||Z'Z'^T - ZZ^T||_F <= tol ||ZZ^T||_F`, via QR of
/// `Z` followed by an SVD of the triangular factor.
pub fn compress_columns(z: &LowRankFactor, tol: f64) -> LowRankFactor {
    let n = z.dim();
    if z.rank() == 0 {
        return z.clone();
    }
    let (q, r) = orth_basis(&z.z);
    let svd = r.svd(true, false);
    let u = svd.u.expect("requested U");
    let sigma = svd.singular_values;
    let mut order: Vec<usize> = (0..sigma.len()).collect();
    order.sort_by(|&a, &b| sigma[b].partial_cmp(&sigma[a]).unwrap());
    let total: f64 = sigma.iter().map(|s| s.powi(4)).sum();
    if total == 0.0 {
        return LowRankFactor::empty(n);
    }
    let budget = (tol * tol) * total;
    // drop from the smallest singular value up while the tail stays in budget
    let mut keep = order.len();
    let mut tail = 0.0;
    while keep > 0 {
        let s4 = sigma[order[keep - 1]].powi(4);
        if tail + s4 > budget {
            break;
        }
        tail += s4;
        keep -= 1;
    }
    let qu = &q * &u;
    let mut out = DMatrix::zeros(n, keep);
    for (c, &k) in order[..keep].iter().enumerate() {
        out.column_mut(c).copy_from(&(qu.column(k) * sigma[k]));
    }
    LowRankFactor { z: out }
}

/// Compress, then fail if the rank still exceeds `max_rank`.
pub fn compress_bounded(z: &LowRankFactor, tol: f64, max_rank: usize) -> Result<LowRankFactor> {
    let c = compress_columns(z, tol);
    if c.rank() > max_rank {
        return Err(Error::RankExceeded {
            rank: c.rank(),
            max_rank,
        });
    }
    Ok(c)
}

/// Factor a symmetric (numerically) PSD matrix. Eigenvalues are dropped from
/// the bottom while the Frobenius norm of the discarded part stays within
/// `tol * ||Q||_F`; negative eigenvalues down to `-100 tol ||Q||_2` are
/// clipped, anything more negative is an error.
pub fn psd_factor(q: &DMatrix<f64>, tol: f64) -> Result<LowRankFactor> {
    psd_factor_impl(q, tol, true)
}

/// Factor of the PSD part of `q`, clipping every negative eigenvalue.
pub fn psd_projection_factor(q: &DMatrix<f64>, tol: f64) -> Result<LowRankFactor> {
    psd_factor_impl(q, tol, false)
}

fn psd_factor_impl(q: &DMatrix<f64>, tol: f64, strict: bool) -> Result<LowRankFactor> {
    if !q.is_square() {
        return Err(Error::dim("psd_factor needs a square matrix"));
    }
    if q.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("psd_factor input".into()));
    }
    let n = q.nrows();
    let sym = (q + q.transpose()) * 0.5;
    let eig = SymmetricEigen::new(sym);
    let spec = eig.eigenvalues.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    if spec == 0.0 {
        return Ok(LowRankFactor::empty(n));
    }
    let min_eig = eig.eigenvalues.iter().cloned().fold(f64::INFINITY, f64::min);
    if strict && min_eig < -100.0 * tol * spec {
        return Err(Error::Indefinite {
            min_eig,
            scale: spec,
            hint: "",
        });
    }
    let fro = eig.eigenvalues.iter().map(|v| v * v).sum::<f64>().sqrt();
    let mut pos: Vec<usize> = (0..n).filter(|&i| eig.eigenvalues[i] > 0.0).collect();
    pos.sort_by(|&a, &b| eig.eigenvalues[b].partial_cmp(&eig.eigenvalues[a]).unwrap());
    let budget = (tol * fro).powi(2);
    let mut keep = pos.len();
    let mut tail = 0.0;
    while keep > 0 {
        let l2 = eig.eigenvalues[pos[keep - 1]].powi(2);
        if tail + l2 > budget {
            break;
        }
        tail += l2;
        keep -= 1;
    }
    let mut z = DMatrix::zeros(n, keep);
    for (c, &i) in pos[..keep].iter().enumerate() {
        z.column_mut(c)
            .copy_from(&(eig.eigenvectors.column(i) * eig.eigenvalues[i].sqrt()));
    }
    Ok(LowRankFactor { z })
}

/// Factor of the PSD part of `Z Z^T - m m^T` (second moment to covariance).
pub fn centered_factor(z: &LowRankFactor, m: &DVector<f64>, tol: f64) -> Result<LowRankFactor> {
    if m.len() != z.dim() {
        return Err(Error::dim("centered_factor: mean length differs from factor rows"));
    }
    if z.rank() == 0 {
        return Ok(z.clone());
    }
    let (q, r) = orth_basis(&z.z);
    let c = q.transpose() * m;
    let k = &r * r.transpose() - &c * c.transpose();
    let small = psd_projection_factor(&k, tol)?;
    LowRankFactor::new(q * small.z)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_matrix_gives_empty_factor() {
        let f = psd_factor(&DMatrix::zeros(4, 4), 1e-8).unwrap();
        assert_eq!(f.rank(), 0);
        assert_eq!(f.dim(), 4);
    }

    #[test]
    fn identity_factor() {
        let f = psd_factor(&DMatrix::identity(2, 2), 1e-8).unwrap();
        assert!((f.product() - DMatrix::<f64>::identity(2, 2)).norm() < 1e-14);
    }

    #[test]
    fn strongly_indefinite_rejected() {
        let q = DMatrix::from_diagonal(&DVector::from_vec(vec![1.0, -0.5]));
        assert!(matches!(psd_factor(&q, 1e-8), Err(Error::Indefinite { .. })));
    }

    #[test]
    fn duplicate_columns_compress_to_rank_one() {
        let v = DVector::from_vec(vec![1.0, -2.0, 0.5]);
        let z = LowRankFactor::hcat(&[
            &DMatrix::from_column_slice(3, 1, v.as_slice()),
            &DMatrix::from_column_slice(3, 1, v.as_slice()),
        ])
        .unwrap();
        let c = compress_columns(&z, 1e-12);
        assert_eq!(c.rank(), 1);
        assert!((c.product() - z.product()).norm() < 1e-13);
    }

    #[test]
    fn orthonormal_columns_keep_rank() {
        let z = LowRankFactor::new(DMatrix::identity(5, 3)).unwrap();
        let c = compress_columns(&z, 1e-10);
        assert_eq!(c.rank(), 3);
    }

    #[test]
    fn wide_factor_compresses() {
        let z = LowRankFactor::new(DMatrix::from_fn(3, 7, |i, j| ((i + 2 * j) as f64).cos()))
            .unwrap();
        let c = compress_columns(&z, 1e-12);
        assert!(c.rank() <= 3);
        assert!((c.product() - z.product()).norm() <= 1e-11 * z.product().norm());
    }

    #[test]
    fn centered_factor_subtracts_mean() {
        let m = DVector::from_vec(vec![1.0, 2.0]);
        let cov = DMatrix::from_row_slice(2, 2, &[0.5, 0.1, 0.1, 0.3]);
        let second = &cov + &m * m.transpose();
        let z = psd_factor(&second, 1e-14).unwrap();
        let c = centered_factor(&z, &m, 1e-14).unwrap();
        assert!((c.product() - cov).norm() < 1e-12);
    }

    #[test]
    fn rank_cap_is_enforced() {
        let z = LowRankFactor::new(DMatrix::identity(6, 6)).unwrap();
        assert!(matches!(
            compress_bounded(&z, 1e-12, 4),
            Err(Error::RankExceeded { rank: 6, max_rank: 4 })
        ));
    }
}
