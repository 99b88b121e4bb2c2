//! Leading eigenpairs of a symmetric matrix: dense for small sizes, Lanczos
//! with full reorthogonalization otherwise.

use nalgebra::{DMatrix, DVector, SymmetricEigen};

use crate::error::{Error, Result};

const DENSE_LIMIT: usize = 400;

/// Eigenpairs sorted by nonincreasing eigenvalue.
#[derive(Debug, Clone)]
pub struct EigenPairs {
    pub values: Vec<f64>,
    pub vectors: DMatrix<f64>,
    /// Smallest eigenvalue seen (all of the spectrum on the dense path, the
    /// Ritz values otherwise).
    pub min_seen: f64,
}

pub fn top_eigenpairs(m: &DMatrix<f64>, k: usize) -> Result<EigenPairs> {
    let n = m.nrows();
    if !m.is_square() {
        return Err(Error::dim("top_eigenpairs needs a square matrix"));
    }
    if k > n {
        return Err(Error::arg(format!("requested {k} eigenpairs of a {n}x{n} matrix")));
    }
    if n <= DENSE_LIMIT {
        dense(m, k)
    } else {
        lanczos(m, k)
    }
}

fn dense(m: &DMatrix<f64>, k: usize) -> Result<EigenPairs> {
    let n = m.nrows();
    let eig = SymmetricEigen::new((m + m.transpose()) * 0.5);
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].partial_cmp(&eig.eigenvalues[a]).unwrap());
    let min_seen = eig.eigenvalues.iter().cloned().fold(f64::INFINITY, f64::min);
    let mut vectors = DMatrix::zeros(n, k);
    let mut values = Vec::with_capacity(k);
    for (c, &i) in order[..k].iter().enumerate() {
        values.push(eig.eigenvalues[i]);
        vectors.column_mut(c).copy_from(&eig.eigenvectors.column(i));
    }
    Ok(EigenPairs {
        values,
        vectors,
        min_seen,
    })
}

fn lanczos(m: &DMatrix<f64>, k: usize) -> Result<EigenPairs> {
    let n = m.nrows();
    let max_steps = n.min((4 * k + 60).max(80));
    let mut basis = DMatrix::<f64>::zeros(n, max_steps);
    let mut alpha = Vec::with_capacity(max_steps);
    let mut beta: Vec<f64> = Vec::with_capacity(max_steps);
    let mut q = DVector::from_fn(n, |i, _| 1.0 + ((i * 7919) % 97) as f64 / 97.0);
    q /= q.norm();
    let scale = m.norm().max(f64::MIN_POSITIVE);

    let mut steps = 0;
    let mut result = None;
    for j in 0..max_steps {
        basis.column_mut(j).copy_from(&q);
        let mut w = m * &q;
        let a = q.dot(&w);
        alpha.push(a);
        // full reorthogonalization, twice
        for _ in 0..2 {
            let cols = basis.columns(0, j + 1);
            let coeff = cols.transpose() * &w;
            w -= cols * coeff;
        }
        let b = w.norm();
        steps = j + 1;
        if steps >= k && (steps % 10 == 0 || b <= 1e-12 * scale || steps == max_steps) {
            let (vals, vecs) = tridiagonal_eigen(&alpha, &beta);
            let converged = (0..k).all(|i| (b * vecs[(steps - 1, i)]).abs() <= 1e-10 * scale);
            if converged || b <= 1e-12 * scale || steps == max_steps {
                result = Some((vals, vecs, converged || b <= 1e-12 * scale));
                break;
            }
        }
        if b <= 1e-12 * scale {
            if steps >= k || steps == n {
                break;
            }
            // invariant subspace found early: restart orthogonally to it
            let mut r = DVector::from_fn(n, |i, _| (((i + 1) * (j + 3) * 2654435761) % 1009) as f64 / 1009.0 - 0.5);
            for _ in 0..2 {
                let cols = basis.columns(0, j + 1);
                let coeff = cols.transpose() * &r;
                r -= cols * coeff;
            }
            beta.push(0.0);
            q = &r / r.norm();
            continue;
        }
        beta.push(b);
        q = w / b;
    }
    let (vals, vecs, converged) = match result {
        Some(r) => r,
        None => {
            let (v, s) = tridiagonal_eigen(&alpha, &beta[..steps.saturating_sub(1)]);
            (v, s, true)
        }
    };
    if !converged {
        return Err(Error::NoConvergence {
            iterations: steps,
            context: "Lanczos leading eigenpairs".into(),
        });
    }
    let ritz = basis.columns(0, steps) * vecs;
    let mut vectors = DMatrix::zeros(n, k);
    let mut values = Vec::with_capacity(k);
    for i in 0..k {
        values.push(vals[i]);
        let v = ritz.column(i);
        vectors.column_mut(i).copy_from(&(v / v.norm()));
    }
    let min_seen = vals.iter().cloned().fold(f64::INFINITY, f64::min);
    Ok(EigenPairs {
        values,
        vectors,
        min_seen,
    })
}

/// Eigen-decomposition of the symmetric tridiagonal matrix, sorted descending.
fn tridiagonal_eigen(alpha: &[f64], beta: &[f64]) -> (Vec<f64>, DMatrix<f64>) {
    let m = alpha.len();
    let mut t = DMatrix::zeros(m, m);
    for i in 0..m {
        t[(i, i)] = alpha[i];
        if i + 1 < m {
            t[(i, i + 1)] = beta[i];
            t[(i + 1, i)] = beta[i];
        }
    }
    let eig = SymmetricEigen::new(t);
    let mut order: Vec<usize> = (0..m).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].partial_cmp(&eig.eigenvalues[a]).unwrap());
    let vals = order.iter().map(|&i| eig.eigenvalues[i]).collect();
    let mut vecs = DMatrix::zeros(m, m);
    for (c, &i) in order.iter().enumerate() {
        vecs.column_mut(c).copy_from(&eig.eigenvectors.column(i));
    }
    (vals, vecs)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn lanczos_restarts_on_low_rank_input() {
        let n = 420;
        let b = DMatrix::from_fn(n, 5, |i, j| ((i * (j + 2)) as f64 * 0.37).sin());
        let m = &b * b.transpose();
        let l = lanczos(&m, 8).unwrap();
        let d = dense(&m, 8).unwrap();
        for i in 0..8 {
            assert!((l.values[i] - d.values[i]).abs() < 1e-9 * d.values[0], "{i}");
        }
        let gram = l.vectors.transpose() * &l.vectors;
        assert!((gram - DMatrix::identity(8, 8)).amax() < 1e-8);
    }

    #[test]
    fn lanczos_matches_dense() {
        let n = 450;
        let m = DMatrix::from_fn(n, n, |i, j| (-((i as f64) - (j as f64)).abs() / 40.0).exp());
        let l = lanczos(&m, 4).unwrap();
        let d = dense(&m, 4).unwrap();
        for i in 0..4 {
            assert!((l.values[i] - d.values[i]).abs() < 1e-9 * d.values[0]);
            let dot = l.vectors.column(i).dot(&d.vectors.column(i)).abs();
            assert!((dot - 1.0).abs() < 1e-8);
        }
    }
}
