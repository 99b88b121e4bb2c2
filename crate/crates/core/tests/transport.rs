mod common;

use common::random_matrix;
use nalgebra::{DMatrix, DVector};
use nino_core::grid::{assemble_transport_operator, BoundaryRule, CrankNicolson, Grid, VelocityField};
use nino_core::linalg::{CsrMatrix, Operator};

#[test]
fn crank_nicolson_matches_dense_solve() {
    let a = random_matrix(5, 5, 31, 1.0) - DMatrix::identity(5, 5) * 2.0;
    let x0 = DVector::from_vec(vec![1.0, -2.0, 0.5, 3.0, -1.0]);
    let h = 0.3;
    let i = DMatrix::<f64>::identity(5, 5);
    let want = (&i - &a * (h / 2.0)).lu().solve(&((&i + &a * (h / 2.0)) * &x0)).unwrap();
    for op in [Operator::Dense(a.clone()), Operator::Sparse(CsrMatrix::from_dense(&a))] {
        let got = CrankNicolson::new(&op, h).unwrap().step(&x0);
        assert!((got - &want).norm() < 1e-12 * want.norm());
    }
}

#[test]
fn skew_operator_preserves_norm() {
    let b = random_matrix(7, 7, 32, 1.0);
    let skew = &b - b.transpose();
    let cn = CrankNicolson::new(&Operator::Dense(skew), 0.4).unwrap();
    let mut x = DVector::from_fn(7, |i, _| (i as f64).sin());
    let n0 = x.norm();
    for _ in 0..200 {
        x = cn.step(&x);
    }
    assert!((x.norm() - n0).abs() < 1e-10 * n0);
}

#[test]
fn periodic_uniform_flow_conserves_total_and_contracts() {
    let g = Grid::new(12, 4, 0.0, 11.0, -1.5, 1.5).unwrap();
    let vel = VelocityField::new(g, DVector::from_element(g.len(), 2.0), DVector::zeros(g.len())).unwrap();
    let t = assemble_transport_operator(&g, &vel, BoundaryRule::PeriodicLongitude).unwrap();
    for s in t.row_sums() {
        assert!(s.abs() < 1e-12);
    }
    let cn = CrankNicolson::new(&Operator::Sparse(t), 0.5).unwrap();
    let mut x = DVector::from_fn(g.len(), |k, _| if k % 12 < 3 { 1.0 } else { 0.0 });
    let total = x.sum();
    let mut energy = x.norm();
    for _ in 0..50 {
        x = cn.step(&x);
        // column sums of the circulant upwind operator vanish too
        assert!((x.sum() - total).abs() < 1e-10);
        assert!(x.norm() <= energy + 1e-12);
        energy = x.norm();
    }
}

#[test]
fn zero_inflow_domain_drains() {
    let g = Grid::new(8, 6, 0.0, 7.0, 0.0, 5.0).unwrap();
    let vel = VelocityField::new(g, DVector::from_element(g.len(), 1.0), DVector::from_element(g.len(), -0.5)).unwrap();
    let t = assemble_transport_operator(&g, &vel, BoundaryRule::ZeroInflowDirichlet).unwrap();
    let cn = CrankNicolson::new(&Operator::Sparse(t), 0.25).unwrap();
    let mut x = DVector::from_element(g.len(), 1.0);
    for _ in 0..400 {
        x = cn.step(&x);
    }
    assert!(x.amax() < 1e-6);
}
