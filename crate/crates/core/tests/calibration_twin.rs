mod common;

use common::{random_stable, rel_frob};
use nalgebra::{DMatrix, DVector};
use nino_core::calibration::{calibrate, lag_covariances, AnomalySeries, CalibrationOptions};
use nino_core::grid::Grid;
use nino_core::linalg::{exp_action, solve_ale, Operator};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

/// Exact discrete-time sampling of an OU process started in stationarity.
fn ou_samples(a: &DMatrix<f64>, c: &DMatrix<f64>, dt: f64, nt: usize, seed: u64) -> DMatrix<f64> {
    let n = a.nrows();
    let p = solve_ale(a, c).unwrap();
    let g = exp_action(&Operator::Dense(a.clone()), &DMatrix::identity(n, n), dt, 1e-14).unwrap();
    let sig = &p - &g * &p * g.transpose();
    let l_sig = sig.cholesky().unwrap().l();
    let l_p = p.cholesky().unwrap().l();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut draw = || DVector::from_fn(n, |_, _| StandardNormal.sample(&mut rng));
    let mut out = DMatrix::zeros(n, nt);
    let mut x = &l_p * draw();
    for k in 0..nt {
        out.column_mut(k).copy_from(&x);
        x = &g * x + &l_sig * draw();
    }
    out
}

#[test]
fn drift_is_recovered_from_long_ou_series() {
    let a = random_stable(4, 77, 0.3);
    let c = DMatrix::identity(4, 4) * 0.2;
    let data = ou_samples(&a, &c, 0.5, 100_000, 1);
    let g = Grid::new(2, 2, 0.0, 1.0, 0.0, 1.0).unwrap();
    let s = AnomalySeries::uniform(g, 0.0, 0.5, data).unwrap();
    let ops = calibrate(&s, &CalibrationOptions::default()).unwrap();
    let e = rel_frob(&ops.a.to_dense(), &a);
    assert!(e < 0.05, "drift error {e}");
    // noise follows from the stationary balance
    let q = ops.s.product();
    assert!(rel_frob(&q, &c) < 0.15);
}

#[test]
fn calibration_is_basis_covariant() {
    let a = random_stable(3, 5, 0.4);
    let data = ou_samples(&a, &DMatrix::identity(3, 3), 1.0, 3000, 2);
    let qm = common::random_matrix(3, 3, 6, 1.0).qr().q();
    // embed the three components in the first nodes of a 3 x 2 grid
    let pad = |d: DMatrix<f64>| {
        let mut full = DMatrix::zeros(6, d.ncols());
        full.rows_mut(0, 3).copy_from(&d);
        full
    };
    let g = Grid::new(3, 2, 0.0, 1.0, 0.0, 1.0).unwrap();
    let base = AnomalySeries::uniform(g, 0.0, 1.0, pad(data.clone())).unwrap();
    let rot = AnomalySeries::uniform(g, 0.0, 1.0, pad(&qm * &data)).unwrap();
    let (c0, _) = lag_covariances(&base, 1).unwrap();
    let (c0r, _) = lag_covariances(&rot, 1).unwrap();
    assert!((c0r.trace() - c0.trace()).abs() < 1e-9 * c0.trace());
    let opts = CalibrationOptions {
        eof_modes: Some(3),
        ..Default::default()
    };
    let lifted = |s: &AnomalySeries| {
        let ops = calibrate(s, &opts).unwrap();
        let e = ops.eof.clone().unwrap();
        (&e * ops.a.to_dense() * e.transpose()).view((0, 0), (3, 3)).into_owned()
    };
    let a_base = lifted(&base);
    let a_rot = lifted(&rot);
    assert!(rel_frob(&a_rot, &(&qm * &a_base * qm.transpose())) < 1e-8);
}
