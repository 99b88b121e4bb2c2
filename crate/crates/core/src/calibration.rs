//! Operator estimation from an observed anomaly series.
//!
//! Ensemble averages are realized as time averages over the single observed
//! trajectory (stationarity and ergodicity are assumed). No mean is
//! subtracted: the input is already an anomaly series.

use log::warn;
use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::grid::{Field, Grid};
use crate::linalg::{
    principal_log, psd_factor, psd_projection_factor, symeig, LowRankFactor, Operator,
};

/// Gridded snapshots at uniformly spaced times.
#[derive(Debug, Clone, PartialEq)]
pub struct AnomalySeries {
    grid: Grid,
    times: Vec<f64>,
    dt: f64,
    /// One column per snapshot.
    data: DMatrix<f64>,
}

impl AnomalySeries {
    pub fn new(grid: Grid, times: Vec<f64>, data: DMatrix<f64>) -> Result<Self> {
        if data.nrows() != grid.len() {
            return Err(Error::dim(format!(
                "snapshots have {} values, grid has {} nodes",
                data.nrows(),
                grid.len()
            )));
        }
        if data.ncols() != times.len() {
            return Err(Error::dim(format!(
                "{} times but {} snapshots",
                times.len(),
                data.ncols()
            )));
        }
        if times.len() < 3 {
            return Err(Error::SeriesTooShort(format!(
                "{} snapshots, at least 3 required",
                times.len()
            )));
        }
        if data.iter().chain(times.iter()).any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("anomaly series".into()));
        }
        let dt = times[1] - times[0];
        if !(dt > 0.0) {
            return Err(Error::arg("times must be strictly increasing"));
        }
        for (k, w) in times.windows(2).enumerate() {
            let d = w[1] - w[0];
            if !(d > 0.0) || ((d - dt) / dt).abs() > 1e-9 {
                return Err(Error::arg(format!(
                    "times are not uniformly spaced (interval {k} is {d}, expected {dt})"
                )));
            }
        }
        let dt = (times[times.len() - 1] - times[0]) / (times.len() - 1) as f64;
        Ok(Self {
            grid,
            times,
            dt,
            data,
        })
    }

    /// Snapshots at `t0 + k dt`; `dt` is kept exactly as given.
    pub fn uniform(grid: Grid, t0: f64, dt: f64, data: DMatrix<f64>) -> Result<Self> {
        if !(dt > 0.0) || !dt.is_finite() || !t0.is_finite() {
            return Err(Error::arg("uniform series needs finite t0 and dt > 0"));
        }
        let times = (0..data.ncols()).map(|k| t0 + k as f64 * dt).collect();
        let mut s = Self::new(grid, times, data)?;
        s.dt = dt;
        Ok(s)
    }

    pub fn from_fields(times: Vec<f64>, fields: &[Field]) -> Result<Self> {
        let grid = *fields
            .first()
            .ok_or_else(|| Error::SeriesTooShort("no snapshots".into()))?
            .grid();
        let mut data = DMatrix::zeros(grid.len(), fields.len());
        for (k, f) in fields.iter().enumerate() {
            grid.same_as(f.grid())?;
            data.column_mut(k).copy_from(f.values());
        }
        Self::new(grid, times, data)
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }
    pub fn times(&self) -> &[f64] {
        &self.times
    }
    pub fn len(&self) -> usize {
        self.times.len()
    }
    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }
    pub fn dt(&self) -> f64 {
        self.dt
    }
    pub fn data(&self) -> &DMatrix<f64> {
        &self.data
    }
    pub fn snapshot(&self, k: usize) -> Field {
        Field::new(self.grid, self.data.column(k).into_owned()).expect("validated on construction")
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ModelKind {
    /// `dx = A x dt + S dW`
    Additive,
    /// `dx = A x dt + S1 x dW`
    Multiplicative,
    /// `dx = A x dt + S1 x dW1 + S2 dW2`
    Mixed,
}

impl ModelKind {
    pub fn name(&self) -> &'static str {
        match self {
            ModelKind::Additive => "additive",
            ModelKind::Multiplicative => "multiplicative",
            ModelKind::Mixed => "mixed",
        }
    }
}

impl std::str::FromStr for ModelKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "additive" => Ok(ModelKind::Additive),
            "multiplicative" | "mult" => Ok(ModelKind::Multiplicative),
            "mixed" => Ok(ModelKind::Mixed),
            other => Err(Error::arg(format!("unknown model kind '{other}'"))),
        }
    }
}

impl std::fmt::Display for ModelKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

/// Drift and noise operators of a linear SDE.
///
/// `s` is the additive noise factor (called `S2` for the mixed model, empty
/// for the multiplicative one); `s1` the multiplicative noise matrix. When
/// `eof` is set the operators act on EOF coefficients `y = E^T x` and
/// [`OperatorSet::lift_state`] maps back to the grid.
#[derive(Debug, Clone)]
pub struct OperatorSet {
    pub kind: ModelKind,
    pub a: Operator,
    pub s: LowRankFactor,
    pub s1: Option<Operator>,
    pub lag_tau: f64,
    pub eof: Option<DMatrix<f64>>,
}

impl OperatorSet {
    pub fn additive(a: Operator, s: LowRankFactor) -> Result<Self> {
        let ops = Self {
            kind: ModelKind::Additive,
            a,
            s,
            s1: None,
            lag_tau: 0.0,
            eof: None,
        };
        ops.validate()?;
        Ok(ops)
    }

    pub fn multiplicative(a: Operator, s1: Operator) -> Result<Self> {
        let n = a.dim();
        let ops = Self {
            kind: ModelKind::Multiplicative,
            a,
            s: LowRankFactor::empty(n),
            s1: Some(s1),
            lag_tau: 0.0,
            eof: None,
        };
        ops.validate()?;
        Ok(ops)
    }

    pub fn mixed(a: Operator, s1: Operator, s2: LowRankFactor) -> Result<Self> {
        let ops = Self {
            kind: ModelKind::Mixed,
            a,
            s: s2,
            s1: Some(s1),
            lag_tau: 0.0,
            eof: None,
        };
        ops.validate()?;
        Ok(ops)
    }

    /// State dimension the operators act on.
    pub fn dim(&self) -> usize {
        self.a.dim()
    }

    /// Grid dimension (differs from [`dim`](Self::dim) under EOF projection).
    pub fn grid_dim(&self) -> usize {
        self.eof.as_ref().map_or(self.dim(), |e| e.nrows())
    }

    pub fn validate(&self) -> Result<()> {
        self.a.check_square()?;
        let n = self.a.dim();
        if !self.a.is_finite() {
            return Err(Error::NonFinite("drift operator".into()));
        }
        if self.s.dim() != n {
            return Err(Error::dim(format!(
                "noise factor has {} rows, drift is {n}x{n}",
                self.s.dim()
            )));
        }
        match (&self.s1, self.kind) {
            (None, ModelKind::Multiplicative | ModelKind::Mixed) => {
                return Err(Error::arg("multiplicative noise operator missing"));
            }
            (Some(s1), _) => {
                s1.check_square()?;
                if s1.dim() != n {
                    return Err(Error::dim("multiplicative noise operator size differs from drift"));
                }
            }
            _ => {}
        }
        if let Some(e) = &self.eof {
            if e.ncols() != n {
                return Err(Error::dim("EOF basis column count differs from drift size"));
            }
        }
        Ok(())
    }

    pub fn project_state(&self, x: &DVector<f64>) -> Result<DVector<f64>> {
        match &self.eof {
            None => Ok(x.clone()),
            Some(e) if e.nrows() == x.len() => Ok(e.transpose() * x),
            Some(_) => Err(Error::dim("state length differs from EOF basis")),
        }
    }

    pub fn lift_state(&self, y: &DVector<f64>) -> DVector<f64> {
        match &self.eof {
            None => y.clone(),
            Some(e) => e * y,
        }
    }

    pub fn lift_factor(&self, z: &LowRankFactor) -> LowRankFactor {
        match &self.eof {
            None => z.clone(),
            Some(e) => LowRankFactor::new(e * z.factor()).expect("finite product"),
        }
    }
}

/// `C0 = <x(t) x(t)^T>` and `Ctau = <x(t+tau) x(t)^T>`, both averaged over
/// the same `nt - tau_steps` start times; `C0` is symmetrized.
pub fn lag_covariances(
    series: &AnomalySeries,
    tau_steps: usize,
) -> Result<(DMatrix<f64>, DMatrix<f64>)> {
    lag_covariances_of(series.data(), tau_steps)
}

/// [`lag_covariances`] on a raw snapshot matrix (one column per time).
pub fn lag_covariances_of(
    data: &DMatrix<f64>,
    tau_steps: usize,
) -> Result<(DMatrix<f64>, DMatrix<f64>)> {
    if tau_steps == 0 {
        return Err(Error::arg("tau_steps must be at least 1"));
    }
    let nt = data.ncols();
    if nt < tau_steps + 2 {
        return Err(Error::SeriesTooShort(format!(
            "{nt} snapshots, lag {tau_steps} needs at least {}",
            tau_steps + 2
        )));
    }
    let m = nt - tau_steps;
    let x0 = data.columns(0, m);
    let x1 = data.columns(tau_steps, m);
    let c0 = &x0 * x0.transpose() / m as f64;
    let ctau = &x1 * x0.transpose() / m as f64;
    let c0 = (&c0 + c0.transpose()) * 0.5;
    Ok((c0, ctau))
}

pub fn default_ridge(c0: &DMatrix<f64>) -> f64 {
    let n = c0.nrows().max(1);
    1e-10 * c0.trace() / n as f64
}

/// `A = log(Ctau (C0 + ridge I)^{-1}) / tau`.
pub fn estimate_drift(
    c0: &DMatrix<f64>,
    ctau: &DMatrix<f64>,
    tau: f64,
    ridge: f64,
) -> Result<DMatrix<f64>> {
    let n = c0.nrows();
    if !c0.is_square() || ctau.shape() != c0.shape() {
        return Err(Error::dim("C0 and Ctau must be square of equal size"));
    }
    if !(tau > 0.0) {
        return Err(Error::arg("lag tau must be positive"));
    }
    if !(ridge >= 0.0) {
        return Err(Error::arg("ridge must be nonnegative"));
    }
    let reg = c0 + DMatrix::identity(n, n) * ridge;
    // G = Ctau reg^{-1}  <=>  reg G^T = Ctau^T  (reg symmetric)
    let lu = reg.clone().lu();
    let gt = lu.solve(&ctau.transpose()).ok_or_else(|| Error::Singular {
        condition: f64::INFINITY,
        context: "C0 + ridge I is singular; raise the ridge or project to leading EOFs".into(),
    })?;
    let g = gt.transpose();
    if g.iter().any(|v| !v.is_finite()) {
        return Err(Error::Singular {
            condition: f64::INFINITY,
            context: "lag regression produced non-finite values; raise the ridge".into(),
        });
    }
    Ok(principal_log(&g)? / tau)
}

/// `S` with `S S^T = -(A C0 + C0 A^T)` (stationary balance), factored with
/// relative tolerance `tol`.
pub fn estimate_additive_noise_tol(
    a: &DMatrix<f64>,
    c0: &DMatrix<f64>,
    tol: f64,
) -> Result<LowRankFactor> {
    check_pair(a, c0)?;
    warn_if_not_hurwitz(a);
    let ac = a * c0;
    let q = -(&ac + ac.transpose());
    psd_factor(&q, tol).map_err(|e| match e {
        Error::Indefinite { min_eig, scale, .. } => Error::Indefinite {
            min_eig,
            scale,
            hint: "; calibrate in a reduced EOF basis",
        },
        other => other,
    })
}

pub fn estimate_additive_noise(a: &DMatrix<f64>, c0: &DMatrix<f64>) -> Result<LowRankFactor> {
    estimate_additive_noise_tol(a, c0, 1e-8)
}

pub const DEFAULT_MIXED_THETA: f64 = 0.5;

/// Scalar-intensity multiplicative noise `S1 = sigma I`.
///
/// `sigma^2` minimizes the stationary residual `||A C0 + C0 A^T + s C0||_F`
/// over `s >= 0` (bisection on the derivative). For the mixed model the
/// multiplicative part takes the fraction `theta` of that intensity and the
/// remaining forcing `-(A C0 + C0 A^T) - sigma^2 C0` is factored as `S2`.
/// If no positive `s` reduces the residual the additive model is returned.
pub fn estimate_multiplicative_noise(
    a: &DMatrix<f64>,
    c0: &DMatrix<f64>,
    kind: ModelKind,
    theta: f64,
) -> Result<OperatorSet> {
    check_pair(a, c0)?;
    warn_if_not_hurwitz(a);
    let n = a.nrows();
    let ac = a * c0;
    let b = &ac + ac.transpose();
    let s_star = minimize_residual_intensity(&b, c0)?;
    let drift = Operator::Dense(a.clone());
    if s_star <= 0.0 {
        warn!("multiplicative noise does not reduce the stationary residual; using additive noise");
        return OperatorSet::additive(drift, estimate_additive_noise(a, c0)?);
    }
    match kind {
        ModelKind::Multiplicative => {
            let s1 = Operator::Dense(DMatrix::identity(n, n) * s_star.sqrt());
            OperatorSet::multiplicative(drift, s1)
        }
        ModelKind::Mixed => {
            if !(0.0..=1.0).contains(&theta) {
                return Err(Error::arg("mixed split theta must lie in [0, 1]"));
            }
            let sigma2 = theta * s_star;
            let rest = -(&b + c0 * sigma2);
            let s2 = psd_projection_factor(&rest, 1e-8)?;
            let s1 = Operator::Dense(DMatrix::identity(n, n) * sigma2.sqrt());
            OperatorSet::mixed(drift, s1, s2)
        }
        ModelKind::Additive => Err(Error::arg(
            "estimate_multiplicative_noise needs kind multiplicative or mixed",
        )),
    }
}

/// Minimizer over `s >= 0` of `||B + s C0||_F^2`, by bisection on its
/// (linear, increasing) derivative `2 <B + s C0, C0>`.
fn minimize_residual_intensity(b: &DMatrix<f64>, c0: &DMatrix<f64>) -> Result<f64> {
    let cc = c0.dot(c0);
    if cc == 0.0 {
        return Ok(0.0);
    }
    let deriv = |s: f64| b.dot(c0) + s * cc;
    if deriv(0.0) >= 0.0 {
        return Ok(0.0);
    }
    let mut hi = 1.0;
    let mut guard = 0;
    while deriv(hi) < 0.0 {
        hi *= 2.0;
        guard += 1;
        if guard > 2000 {
            return Err(Error::NoConvergence {
                iterations: guard,
                context: "bracketing multiplicative intensity".into(),
            });
        }
    }
    let mut lo = 0.0;
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if deriv(mid) < 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
        if hi - lo <= 1e-15 * hi {
            break;
        }
    }
    Ok(0.5 * (lo + hi))
}

fn check_pair(a: &DMatrix<f64>, c0: &DMatrix<f64>) -> Result<()> {
    if !a.is_square() || a.shape() != c0.shape() {
        return Err(Error::dim("A and C0 must be square of equal size"));
    }
    Ok(())
}

fn warn_if_not_hurwitz(a: &DMatrix<f64>) {
    let alpha = a
        .clone()
        .complex_eigenvalues()
        .iter()
        .map(|z| z.re)
        .fold(f64::NEG_INFINITY, f64::max);
    if alpha >= 0.0 {
        warn!("drift is not Hurwitz (max real eigenvalue {alpha:.3e})");
    }
}

/// Leading `k` eigenvectors of `C0` (columns, orthonormal).
pub fn eof_basis(c0: &DMatrix<f64>, k: usize) -> Result<DMatrix<f64>> {
    if k == 0 {
        return Err(Error::arg("EOF count must be positive"));
    }
    Ok(symeig::top_eigenpairs(c0, k.min(c0.nrows()))?.vectors)
}

#[derive(Debug, Clone)]
pub struct CalibrationOptions {
    pub kind: ModelKind,
    pub tau_steps: usize,
    /// `None` selects [`default_ridge`].
    pub ridge: Option<f64>,
    /// Calibrate in the leading-EOF basis of this size.
    pub eof_modes: Option<usize>,
    pub theta: f64,
    /// Relative tolerance for factoring the additive noise.
    pub noise_tol: f64,
}

impl Default for CalibrationOptions {
    fn default() -> Self {
        Self {
            kind: ModelKind::Additive,
            tau_steps: 1,
            ridge: None,
            eof_modes: None,
            theta: DEFAULT_MIXED_THETA,
            noise_tol: 1e-8,
        }
    }
}

/// Full pipeline: lag covariances, optional EOF projection, drift and noise.
pub fn calibrate(series: &AnomalySeries, opts: &CalibrationOptions) -> Result<OperatorSet> {
    let tau = opts.tau_steps as f64 * series.dt();
    let (data, eof) = match opts.eof_modes {
        Some(k) => {
            let (c0_full, _) = lag_covariances(series, opts.tau_steps)?;
            let e = eof_basis(&c0_full, k)?;
            (e.transpose() * series.data(), Some(e))
        }
        None => (series.data().clone(), None),
    };
    let (c0, ctau) = lag_covariances_of(&data, opts.tau_steps)?;
    let ridge = opts.ridge.unwrap_or_else(|| default_ridge(&c0));
    let a = estimate_drift(&c0, &ctau, tau, ridge)?;
    let mut ops = match opts.kind {
        ModelKind::Additive => {
            let s = estimate_additive_noise_tol(&a, &c0, opts.noise_tol)?;
            OperatorSet::additive(Operator::Dense(a), s)?
        }
        kind => estimate_multiplicative_noise(&a, &c0, kind, opts.theta)?,
    };
    ops.lag_tau = tau;
    ops.eof = eof;
    ops.validate()?;
    Ok(ops)
}
