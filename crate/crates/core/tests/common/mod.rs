//! Independent reference implementations shared by integration tests.
#![allow(dead_code)]

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rel_frob(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
    (a - b).norm() / b.norm()
}

/// Right-hand side of the (generalized) Lyapunov flow
/// `P' = A P + P A^T + S1 P S1^T + C`.
fn lyap_rhs(a: &DMatrix<f64>, s1: Option<&DMatrix<f64>>, c: &DMatrix<f64>, p: &DMatrix<f64>) -> DMatrix<f64> {
    let ap = a * p;
    let mut out = &ap + ap.transpose() + c;
    if let Some(s1) = s1 {
        out += s1 * p * s1.transpose();
    }
    out
}

/// Dormand–Prince 5(4) with step-size control on the matrix ODE, which is
/// the vectorized Kronecker system `vec(P)' = (I⊗A + A⊗I + S1⊗S1) vec(P) + vec(C)`
/// written without forming the n^2 x n^2 matrix.
pub fn dense_lyapunov_flow(
    a: &DMatrix<f64>,
    s1: Option<&DMatrix<f64>>,
    c: &DMatrix<f64>,
    p0: &DMatrix<f64>,
    horizon: f64,
    rtol: f64,
) -> DMatrix<f64> {
    let b = [35.0 / 384.0, 0.0, 500.0 / 1113.0, 125.0 / 192.0, -2187.0 / 6784.0, 11.0 / 84.0, 0.0];
    let bs = [
        5179.0 / 57600.0,
        0.0,
        7571.0 / 16695.0,
        393.0 / 640.0,
        -92097.0 / 339200.0,
        187.0 / 2100.0,
        1.0 / 40.0,
    ];
    let f = |p: &DMatrix<f64>| lyap_rhs(a, s1, c, p);
    let mut t = 0.0;
    let mut p = p0.clone();
    let mut h = horizon / 100.0;
    while t < horizon {
        if t + h > horizon {
            h = horizon - t;
        }
        let k1 = f(&p);
        let k2 = f(&(&p + &k1 * (h / 5.0)));
        let k3 = f(&(&p + &k1 * (3.0 * h / 40.0) + &k2 * (9.0 * h / 40.0)));
        let k4 = f(&(&p + &k1 * (44.0 * h / 45.0) - &k2 * (56.0 * h / 15.0) + &k3 * (32.0 * h / 9.0)));
        let k5 = f(&(&p + &k1 * (19372.0 * h / 6561.0) - &k2 * (25360.0 * h / 2187.0)
            + &k3 * (64448.0 * h / 6561.0)
            - &k4 * (212.0 * h / 729.0)));
        let k6 = f(&(&p + &k1 * (9017.0 * h / 3168.0) - &k2 * (355.0 * h / 33.0)
            + &k3 * (46732.0 * h / 5247.0)
            + &k4 * (49.0 * h / 176.0)
            - &k5 * (5103.0 * h / 18656.0)));
        let y5 = &p + (&k1 * b[0] + &k3 * b[2] + &k4 * b[3] + &k5 * b[4] + &k6 * b[5]) * h;
        let k7 = f(&y5);
        let y4 = &p + (&k1 * bs[0] + &k3 * bs[2] + &k4 * bs[3] + &k5 * bs[4] + &k6 * bs[5] + &k7 * bs[6]) * h;
        let scale = 1e-14 + rtol * y5.norm().max(p.norm());
        let err = (&y5 - &y4).norm() / scale;
        if err <= 1.0 {
            t += h;
            p = y5;
        }
        let fac = if err == 0.0 { 5.0 } else { (0.9 * err.powf(-0.2)).clamp(0.2, 5.0) };
        h *= fac;
    }
    p
}

/// Random matrix with spectral abscissa at most `-margin`: a random matrix
/// shifted left by its largest eigenvalue real part.
pub fn random_stable(n: usize, seed: u64, margin: f64) -> DMatrix<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let m = DMatrix::from_fn(n, n, |_, _| rng.random_range(-1.0..1.0) / (n as f64).sqrt());
    let alpha = m
        .clone()
        .complex_eigenvalues()
        .iter()
        .map(|z| z.re)
        .fold(f64::NEG_INFINITY, f64::max);
    &m - DMatrix::identity(n, n) * (alpha + margin)
}

pub fn random_matrix(rows: usize, cols: usize, seed: u64, scale: f64) -> DMatrix<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    DMatrix::from_fn(rows, cols, |_, _| scale * rng.random_range(-1.0..1.0))
}
