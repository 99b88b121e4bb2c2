use nalgebra::{DMatrix, DVector};
use nino_core::calibration::OperatorSet;
use nino_core::chaos::{
    assemble_galerkin_system, basis_size, build_chaos_basis, kl_eigenpairs_points, solve_chaos, GalerkinSpec,
    KernelSpec,
};
use nino_core::covariance::{solve_dle, DLEProblem};
use nino_core::linalg::{LowRankFactor, Operator};
use nino_core::sampler::{sample_realizations, RealizationRequest};

fn bisect(f: impl Fn(f64) -> f64, mut lo: f64, mut hi: f64) -> f64 {
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if (f(mid) < 0.0) == (f(lo) < 0.0) {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    0.5 * (lo + hi)
}

/// Exponential kernel on [-1, 1]: eigenvalues 2 / (1 + w^2) with
/// `1 - w tan(w) = 0` (even modes) or `w + tan(w) = 0` (odd modes).
#[test]
fn kl_eigenvalues_match_transcendental_roots() {
    let pi = std::f64::consts::PI;
    let eps = 1e-12;
    let mut exact = Vec::new();
    for k in 0..4 {
        let k = k as f64;
        let even = bisect(|w| w * w.tan() - 1.0, k * pi + eps, k * pi + pi / 2.0 - eps);
        let odd = bisect(|w| w + w.tan(), k * pi + pi / 2.0 + eps, (k + 1.0) * pi - eps);
        exact.push(2.0 / (1.0 + even * even));
        exact.push(2.0 / (1.0 + odd * odd));
    }
    exact.sort_by(|a, b| b.partial_cmp(a).unwrap());

    let n = 1201;
    let h = 2.0 / (n - 1) as f64;
    let points: Vec<(f64, f64)> = (0..n).map(|i| (-1.0 + i as f64 * h, 0.0)).collect();
    let weights: Vec<f64> = (0..n).map(|i| if i == 0 || i == n - 1 { h / 2.0 } else { h }).collect();
    let kl = kl_eigenpairs_points(&points, &weights, &KernelSpec::new(1.0), 6).unwrap();
    for (got, want) in kl.values.iter().zip(&exact) {
        assert!((got - want).abs() < 1e-3 * want, "{got} vs {want}");
    }
    let gram = kl.gram();
    assert!((gram - DMatrix::identity(6, 6)).amax() < 1e-10);
}

#[test]
fn basis_sizes_follow_binomial() {
    assert_eq!(basis_size(3, 2).unwrap(), 10);
    assert_eq!(build_chaos_basis(3, 2).unwrap().len(), 10);
    assert_eq!(basis_size(10, 3).unwrap(), 286);
    assert_eq!(basis_size(1, 7).unwrap(), 8);
}

#[test]
fn additive_galerkin_variance_matches_covariance_flow() {
    let n = 4;
    let a = DMatrix::from_fn(n, n, |i, j| match (i as i64 - j as i64).abs() {
        0 => -1.0,
        1 => 0.3,
        _ => 0.0,
    });
    let s = DMatrix::from_fn(n, 2, |i, j| 0.2 * (1.0 + i as f64) * if j == 0 { 1.0 } else { -0.5 });
    let ops = OperatorSet::additive(Operator::Dense(a), LowRankFactor::new(s).unwrap()).unwrap();
    let (h, steps) = (0.05, 40);
    let sys = assemble_galerkin_system(&ops, h, steps, &GalerkinSpec::default()).unwrap();
    let traj = solve_chaos(&sys, &DVector::zeros(n), 0).unwrap();
    let p = solve_dle(&DLEProblem::from_ops(&ops, LowRankFactor::empty(n), h * steps as f64, h))
        .unwrap()
        .last()
        .product();
    for i in 0..n {
        let (got, want) = (traj.variance[steps][i], p[(i, i)]);
        assert!((got - want).abs() < 0.05 * want, "node {i}: {got} vs {want}");
    }
}

#[test]
fn sampled_realizations_have_requested_moments() {
    let m = DVector::from_vec(vec![1.0, -1.0, 0.5]);
    let z = LowRankFactor::new(DMatrix::from_row_slice(3, 2, &[1.0, 0.0, 0.5, 0.5, 0.0, 2.0])).unwrap();
    let means = vec![m.clone()];
    let factors = vec![z.clone()];
    let count = 20_000;
    let draws = sample_realizations(&RealizationRequest {
        means: &means,
        factors: &factors,
        seed: 4,
        count,
        zero_draws: false,
    })
    .unwrap();
    let mean = draws.iter().fold(DVector::zeros(3), |acc, d| acc + &d[0]) / count as f64;
    let mut cov = DMatrix::zeros(3, 3);
    for d in &draws {
        let e = &d[0] - &mean;
        cov.ger(1.0 / (count - 1) as f64, &e, &e, 1.0);
    }
    let p = z.product();
    for i in 0..3 {
        assert!((mean[i] - m[i]).abs() < 5.0 * (p[(i, i)] / count as f64).sqrt());
    }
    assert!((cov - &p).norm() < 0.05 * p.norm());
}
