//! Mean and covariance flow of linear SDEs.
//!
//! The mean solves `m' = A m` (Crank–Nicolson, the same solve as the
//! deterministic transport problem). The covariance solves the differential
//! Lyapunov equation
//!
//! ```text
//! P' = A P + P A^T + S1 P S1^T + S S^T
//! ```
//!
//! in factored form `P = Z Z^T`. Without multiplicative noise each step is
//! the exact solution operator with the forcing integral replaced by a
//! quadrature rule. With multiplicative noise the flow is split (Strang):
//! half steps of the additive flow around a full step of `P -> S1 P S1^T`,
//! the latter by the truncated expansion `I + h F + h^2/2 F^2`.
//!
//! For multiplicative noise the equation above governs the second moment
//! `E[x x^T]`; the covariance is recovered as `E[x x^T] - m m^T`.

use nalgebra::{DMatrix, DVector};

use crate::calibration::{ModelKind, OperatorSet};
use crate::error::{Error, Result};
use crate::exec;
use crate::grid::CrankNicolson;
use crate::linalg::{
    centered_factor, compress_bounded, compress_columns, exp_action, LowRankFactor, Operator,
    DEFAULT_MAX_RANK,
};

pub const DEFAULT_COMPRESSION_TOL: f64 = 1e-8;
pub const DEFAULT_EXP_TOL: f64 = 1e-12;

/// Quadrature on `[0, 1]` with positive weights summing to 1.
#[derive(Debug, Clone, PartialEq)]
pub struct QuadratureRule {
    nodes: Vec<f64>,
    weights: Vec<f64>,
    order: usize,
}

impl QuadratureRule {
    pub fn new(nodes: Vec<f64>, weights: Vec<f64>, order: usize) -> Result<Self> {
        if nodes.is_empty() || nodes.len() != weights.len() {
            return Err(Error::arg("quadrature needs matching, nonempty nodes and weights"));
        }
        if nodes.windows(2).any(|w| w[1] <= w[0]) || nodes[0] < 0.0 || nodes[nodes.len() - 1] > 1.0
        {
            return Err(Error::arg("quadrature nodes must be sorted and lie in [0, 1]"));
        }
        if weights.iter().any(|w| !(*w > 0.0)) {
            return Err(Error::arg("quadrature weights must be positive"));
        }
        if (weights.iter().sum::<f64>() - 1.0).abs() > 1e-12 {
            return Err(Error::arg("quadrature weights must sum to 1"));
        }
        Ok(Self {
            nodes,
            weights,
            order,
        })
    }

    /// Gauss–Legendre rule with `points` nodes (1..=5) mapped to `[0, 1]`.
    pub fn gauss_legendre(points: usize) -> Result<Self> {
        let (x, w): (Vec<f64>, Vec<f64>) = match points {
            1 => (vec![0.0], vec![2.0]),
            2 => {
                let a = 1.0 / 3f64.sqrt();
                (vec![-a, a], vec![1.0, 1.0])
            }
            3 => {
                let a = 0.6f64.sqrt();
                (vec![-a, 0.0, a], vec![5.0 / 9.0, 8.0 / 9.0, 5.0 / 9.0])
            }
            4 => {
                let r = (6.0 / 5.0f64).sqrt() * 2.0 / 7.0;
                let inner = (3.0 / 7.0 - r).sqrt();
                let outer = (3.0 / 7.0 + r).sqrt();
                let wi = (18.0 + 30f64.sqrt()) / 36.0;
                let wo = (18.0 - 30f64.sqrt()) / 36.0;
                (vec![-outer, -inner, inner, outer], vec![wo, wi, wi, wo])
            }
            5 => {
                let r = 2.0 * (10.0 / 7.0f64).sqrt();
                let inner = (5.0 - r).sqrt() / 3.0;
                let outer = (5.0 + r).sqrt() / 3.0;
                let s70 = 70f64.sqrt();
                let wi = (322.0 + 13.0 * s70) / 900.0;
                let wo = (322.0 - 13.0 * s70) / 900.0;
                (
                    vec![-outer, -inner, 0.0, inner, outer],
                    vec![wo, wi, 128.0 / 225.0, wi, wo],
                )
            }
            _ => return Err(Error::arg("Gauss-Legendre rules are provided for 1 to 5 points")),
        };
        let nodes = x.iter().map(|v| 0.5 * (v + 1.0)).collect();
        let weights = w.iter().map(|v| 0.5 * v).collect();
        Self::new(nodes, weights, 2 * points)
    }

    pub fn midpoint() -> Self {
        Self::gauss_legendre(1).expect("one-point rule")
    }

    pub fn nodes(&self) -> &[f64] {
        &self.nodes
    }
    pub fn weights(&self) -> &[f64] {
        &self.weights
    }
    pub fn order(&self) -> usize {
        self.order
    }
}

impl Default for QuadratureRule {
    fn default() -> Self {
        Self::gauss_legendre(4).expect("four-point rule")
    }
}

/// Crank–Nicolson mean trajectory `m_0, ..., m_{n_steps}`.
pub fn propagate_mean(
    a: &Operator,
    m0: &DVector<f64>,
    h: f64,
    n_steps: usize,
) -> Result<Vec<DVector<f64>>> {
    if !(h > 0.0) {
        return Err(Error::arg("step size must be positive"));
    }
    if m0.len() != a.dim() {
        return Err(Error::dim("initial mean length differs from operator size"));
    }
    let cn = CrankNicolson::new(a, h)?;
    let mut out = Vec::with_capacity(n_steps + 1);
    out.push(m0.clone());
    for k in 0..n_steps {
        let next = cn.step(&out[k]);
        out.push(next);
    }
    Ok(out)
}

/// `[sqrt(h w_1) e^{tau_1 h A} S | ... | sqrt(h w_s) e^{tau_s h A} S]`,
/// a factor of the quadrature approximation of `int_0^h e^{sA} S S^T e^{sA^T} ds`.
fn forcing_columns(
    a: &Operator,
    s: &LowRankFactor,
    h: f64,
    quad: &QuadratureRule,
    exp_tol: f64,
) -> Result<DMatrix<f64>> {
    let n = a.dim();
    if s.rank() == 0 {
        return Ok(DMatrix::zeros(n, 0));
    }
    let blocks = exec::map_indexed(quad.nodes.len(), |k| {
        exp_action(a, s.factor(), quad.nodes[k] * h, exp_tol)
            .map(|b| b * (h * quad.weights[k]).sqrt())
    });
    let blocks = blocks.into_iter().collect::<Result<Vec<_>>>()?;
    let refs: Vec<&DMatrix<f64>> = blocks.iter().collect();
    Ok(LowRankFactor::hcat(&refs)?.into_inner())
}

/// One step of the additive differential Lyapunov equation.
pub fn dle_additive_step(
    a: &Operator,
    s: &LowRankFactor,
    z0: &LowRankFactor,
    h: f64,
    quad: &QuadratureRule,
    tol: f64,
) -> Result<LowRankFactor> {
    AdditiveStepper::new(a, s, h, quad, tol)?.step(z0)
}

/// Additive DLE stepper with the forcing columns computed once.
#[derive(Debug, Clone)]
pub struct AdditiveStepper {
    a: Operator,
    h: f64,
    forcing: DMatrix<f64>,
    tol: f64,
    max_rank: usize,
    exp_tol: f64,
}

impl AdditiveStepper {
    pub fn new(
        a: &Operator,
        s: &LowRankFactor,
        h: f64,
        quad: &QuadratureRule,
        tol: f64,
    ) -> Result<Self> {
        a.check_square()?;
        if s.dim() != a.dim() {
            return Err(Error::dim("noise factor rows differ from operator size"));
        }
        if !(h > 0.0) || !h.is_finite() {
            return Err(Error::arg("step size must be positive"));
        }
        if !(tol > 0.0) {
            return Err(Error::arg("compression tolerance must be positive"));
        }
        let raw = LowRankFactor::new(forcing_columns(a, s, h, quad, DEFAULT_EXP_TOL)?)?;
        let forcing = compress_columns(&raw, tol).into_inner();
        Ok(Self {
            a: a.clone(),
            h,
            forcing,
            tol,
            max_rank: DEFAULT_MAX_RANK,
            exp_tol: DEFAULT_EXP_TOL,
        })
    }

    pub fn with_max_rank(mut self, max_rank: usize) -> Self {
        self.max_rank = max_rank;
        self
    }

    pub fn forcing_rank(&self) -> usize {
        self.forcing.ncols()
    }

    pub fn step(&self, z0: &LowRankFactor) -> Result<LowRankFactor> {
        if z0.dim() != self.a.dim() {
            return Err(Error::dim("factor rows differ from operator size"));
        }
        let flowed = exp_action(&self.a, z0.factor(), self.h, self.exp_tol)?;
        let z = LowRankFactor::hcat(&[&flowed, &self.forcing])?;
        compress_bounded(&z, self.tol, self.max_rank)
    }
}

/// One Strang step `T1(h/2) T2(h) T1(h/2)` of the generalized equation.
pub fn dle_strang_step(
    a: &Operator,
    s1: &Operator,
    s2: Option<&LowRankFactor>,
    z0: &LowRankFactor,
    h: f64,
    tol: f64,
) -> Result<LowRankFactor> {
    StrangStepper::new(a, s1, s2, h, &QuadratureRule::default(), tol)?.step(z0)
}

#[derive(Debug, Clone)]
pub struct StrangStepper {
    half: AdditiveStepper,
    s1: Operator,
    h: f64,
}

impl StrangStepper {
    pub fn new(
        a: &Operator,
        s1: &Operator,
        s2: Option<&LowRankFactor>,
        h: f64,
        quad: &QuadratureRule,
        tol: f64,
    ) -> Result<Self> {
        s1.check_square()?;
        if s1.dim() != a.dim() {
            return Err(Error::dim("multiplicative noise operator size differs from drift"));
        }
        let empty = LowRankFactor::empty(a.dim());
        let half = AdditiveStepper::new(a, s2.unwrap_or(&empty), 0.5 * h, quad, tol)?;
        Ok(Self {
            half,
            s1: s1.clone(),
            h,
        })
    }

    pub fn with_max_rank(mut self, max_rank: usize) -> Self {
        self.half.max_rank = max_rank;
        self
    }

    /// `P -> P + h S1 P S1^T + h^2/2 S1^2 P S1^2T` on the factor.
    fn multiplicative_substep(&self, z: &LowRankFactor) -> Result<LowRankFactor> {
        let s1z = self.s1.apply_block(z.factor());
        let s1s1z = self.s1.apply_block(&s1z);
        let cat = LowRankFactor::hcat(&[
            z.factor(),
            &(s1z * self.h.sqrt()),
            &(s1s1z * (self.h / std::f64::consts::SQRT_2)),
        ])?;
        compress_bounded(&cat, self.half.tol, self.half.max_rank)
    }

    pub fn step(&self, z0: &LowRankFactor) -> Result<LowRankFactor> {
        let z = self.half.step(z0)?;
        let z = self.multiplicative_substep(&z)?;
        self.half.step(&z)
    }
}

/// Covariance flow problem for one model.
#[derive(Debug, Clone)]
pub struct DLEProblem {
    pub kind: ModelKind,
    pub a: Operator,
    /// Additive noise factor (`S2` for the mixed model).
    pub s: LowRankFactor,
    pub s1: Option<Operator>,
    pub p0: LowRankFactor,
    /// Initial mean; only affects models with multiplicative noise.
    pub m0: Option<DVector<f64>>,
    pub horizon: f64,
    pub h: f64,
    pub tol: f64,
    pub max_rank: usize,
    pub quad: QuadratureRule,
    /// Record every `stride`-th step (the final step is always recorded).
    pub stride: usize,
}

impl DLEProblem {
    pub fn from_ops(ops: &OperatorSet, p0: LowRankFactor, horizon: f64, h: f64) -> Self {
        Self {
            kind: ops.kind,
            a: ops.a.clone(),
            s: ops.s.clone(),
            s1: ops.s1.clone(),
            p0,
            m0: None,
            horizon,
            h,
            tol: DEFAULT_COMPRESSION_TOL,
            max_rank: DEFAULT_MAX_RANK,
            quad: QuadratureRule::default(),
            stride: 1,
        }
    }

    pub fn n_steps(&self) -> Result<usize> {
        if !(self.h > 0.0) || !self.h.is_finite() {
            return Err(Error::arg("step size must be positive"));
        }
        if !(self.horizon >= self.h) {
            return Err(Error::arg("horizon must be at least one step"));
        }
        let n = (self.horizon / self.h).round();
        if ((n * self.h - self.horizon) / self.horizon).abs() > 1e-9 {
            return Err(Error::arg(format!(
                "horizon {} is not a multiple of the step {}",
                self.horizon, self.h
            )));
        }
        Ok(n as usize)
    }

    fn validate(&self) -> Result<()> {
        self.a.check_square()?;
        let n = self.a.dim();
        if self.s.dim() != n || self.p0.dim() != n {
            return Err(Error::dim("noise and initial factors must match the operator size"));
        }
        if let Some(m) = &self.m0 {
            if m.len() != n {
                return Err(Error::dim("initial mean length differs from operator size"));
            }
        }
        if self.stride == 0 {
            return Err(Error::arg("checkpoint stride must be positive"));
        }
        if self.kind != ModelKind::Additive && self.s1.is_none() {
            return Err(Error::arg("multiplicative noise operator missing"));
        }
        Ok(())
    }
}

/// Covariance factors at the recorded steps.
#[derive(Debug, Clone)]
pub struct DLESolution {
    pub steps: Vec<usize>,
    pub times: Vec<f64>,
    pub factors: Vec<LowRankFactor>,
    pub peak_rank: usize,
}

impl DLESolution {
    pub fn last(&self) -> &LowRankFactor {
        self.factors.last().expect("at least the initial factor")
    }
}

/// Integrate the covariance equation; the initial factor is recorded as step 0.
pub fn solve_dle(problem: &DLEProblem) -> Result<DLESolution> {
    let h = problem.h;
    let mut sol = DLESolution {
        steps: Vec::new(),
        times: Vec::new(),
        factors: Vec::new(),
        peak_rank: 0,
    };
    sol.peak_rank = solve_dle_observed(problem, |k, z| {
        sol.steps.push(k);
        sol.times.push(k as f64 * h);
        sol.factors.push(z.clone());
        Ok(())
    })?;
    Ok(sol)
}

/// [`solve_dle`] without storage: `observer` receives the covariance factor
/// at step 0 and at every recorded step. Returns the peak factor rank.
pub fn solve_dle_observed(
    problem: &DLEProblem,
    mut observer: impl FnMut(usize, &LowRankFactor) -> Result<()>,
) -> Result<usize> {
    problem.validate()?;
    let n_steps = problem.n_steps()?;
    let h = problem.h;
    let mut peak = problem.p0.rank();
    observer(0, &problem.p0)?;
    let record = |k: usize| k % problem.stride == 0 || k == n_steps;

    match (problem.kind, &problem.s1) {
        (ModelKind::Additive, _) | (_, None) => {
            let stepper = AdditiveStepper::new(&problem.a, &problem.s, h, &problem.quad, problem.tol)?
                .with_max_rank(problem.max_rank);
            let mut z = problem.p0.clone();
            for k in 1..=n_steps {
                z = stepper.step(&z)?;
                peak = peak.max(z.rank());
                if record(k) {
                    observer(k, &z)?;
                }
            }
        }
        (_, Some(s1)) => {
            let s2 = (problem.kind == ModelKind::Mixed).then_some(&problem.s);
            let stepper = StrangStepper::new(&problem.a, s1, s2, h, &problem.quad, problem.tol)?
                .with_max_rank(problem.max_rank);
            let n = problem.a.dim();
            let mut mean = problem.m0.clone().unwrap_or_else(|| DVector::zeros(n));
            let has_mean = mean.iter().any(|v| *v != 0.0);
            // second moment E[x x^T] = m m^T + P
            let mut z = if has_mean {
                let m = DMatrix::from_column_slice(n, 1, mean.as_slice());
                LowRankFactor::hcat(&[&m, problem.p0.factor()])?
            } else {
                problem.p0.clone()
            };
            for k in 1..=n_steps {
                z = stepper.step(&z)?;
                if has_mean {
                    let m = DMatrix::from_column_slice(n, 1, mean.as_slice());
                    let next = exp_action(&problem.a, &m, h, DEFAULT_EXP_TOL)?;
                    mean = DVector::from_column_slice(next.as_slice());
                }
                peak = peak.max(z.rank());
                if record(k) {
                    if has_mean {
                        observer(k, &centered_factor(&z, &mean, problem.tol)?)?;
                    } else {
                        observer(k, &z)?;
                    }
                }
            }
        }
    }
    Ok(peak)
}
