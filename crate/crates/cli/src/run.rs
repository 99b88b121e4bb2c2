//! Model × method runs: build operators, integrate, draw realizations,
//! score against a reference series.

use std::fmt;
use std::str::FromStr;
use std::time::{Duration, Instant};

use log::{info, warn};
use nalgebra::{DMatrix, DVector};
use nino_core::calibration::{AnomalySeries, ModelKind, OperatorSet};
use nino_core::chaos::{assemble_galerkin_system, solve_chaos_observed, GalerkinSpec};
use nino_core::covariance::{propagate_mean, solve_dle_observed, DLEProblem, DEFAULT_COMPRESSION_TOL};
use nino_core::grid::{RegionMask, VelocityField};
use nino_core::linalg::{CsrMatrix, LowRankFactor, Operator, DEFAULT_MAX_RANK};
use nino_core::path_sim::{path_rng, run_ensemble, EnsembleOptions, Scheme};
use nino_core::sampler::{sample_realizations, score_against_reference, ErrorReport, RealizationRequest};
use nino_core::scenario::{scenario_operators, ScenarioConfig};
use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{CliError, CliResult};

/// Calibrated (`Sde`, dense operators from `fit`) or transport-based
/// (`Spde`, upwind drift from currents plus KL noise).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Formulation {
    Sde,
    Spde,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Model {
    pub kind: ModelKind,
    pub form: Formulation,
}

impl FromStr for Model {
    type Err = CliError;
    fn from_str(s: &str) -> CliResult<Self> {
        let (kind, form) = match s.rsplit_once('-') {
            Some((k, "sde")) => (k, Formulation::Sde),
            Some((k, "spde")) => (k, Formulation::Spde),
            _ => (s, Formulation::Sde),
        };
        let kind = kind
            .parse()
            .map_err(|_| CliError::usage(format!("unknown model '{s}' (additive|mult|mixed)-(sde|spde)")))?;
        Ok(Model { kind, form })
    }
}

impl fmt::Display for Model {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let k = match self.kind {
            ModelKind::Additive => "additive",
            ModelKind::Multiplicative => "mult",
            ModelKind::Mixed => "mixed",
        };
        let form = match self.form {
            Formulation::Sde => "sde",
            Formulation::Spde => "spde",
        };
        write!(f, "{k}-{form}")
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum Method {
    MeanCov,
    Galerkin,
    Taylor15,
    Euler,
}

impl Method {
    pub fn name(&self) -> &'static str {
        match self {
            Method::MeanCov => "mean-cov",
            Method::Galerkin => "galerkin",
            Method::Taylor15 => "taylor15",
            Method::Euler => "euler",
        }
    }
}

impl FromStr for Method {
    type Err = CliError;
    fn from_str(s: &str) -> CliResult<Self> {
        match s {
            "mean-cov" | "meancov" | "mean&cov" => Ok(Method::MeanCov),
            "galerkin" | "s-galerkin" => Ok(Method::Galerkin),
            "taylor15" | "taylor1.5" | "taylor" => Ok(Method::Taylor15),
            "euler" | "euler-maruyama" | "em" => Ok(Method::Euler),
            other => Err(CliError::usage(format!(
                "unknown method '{other}' (mean-cov|galerkin|taylor15|euler)"
            ))),
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Numerical settings of one run.
#[derive(Debug, Clone)]
pub struct RunSpec {
    pub model: Model,
    pub method: Method,
    pub h: f64,
    pub steps: usize,
    pub paths: usize,
    pub seed: u64,
    /// Chaos degree `K`.
    pub degree: usize,
    /// Noise windows over the horizon (Galerkin random variables per channel).
    pub windows: usize,
    pub tol: f64,
    pub max_rank: usize,
}

impl RunSpec {
    pub fn new(model: Model, method: Method) -> Self {
        Self {
            model,
            method,
            h: 0.5,
            steps: 400,
            paths: 50,
            seed: 0,
            degree: 1,
            windows: 10,
            tol: DEFAULT_COMPRESSION_TOL,
            max_rank: DEFAULT_MAX_RANK,
        }
    }

    /// Compatibility and range checks.
    pub fn validate(&self) -> CliResult<()> {
        if !(self.h > 0.0) || !self.h.is_finite() {
            return Err(CliError::usage("--h must be positive"));
        }
        if self.steps == 0 {
            return Err(CliError::usage("--steps must be positive"));
        }
        if self.paths == 0 {
            return Err(CliError::usage("--paths must be positive"));
        }
        if self.method == Method::Galerkin {
            if self.degree == 0 {
                return Err(CliError::usage("galerkin needs polynomial degree K >= 1"));
            }
            if self.windows == 0 {
                return Err(CliError::usage("galerkin needs at least one noise window"));
            }
        }
        if !(self.tol > 0.0 && self.tol < 1.0) {
            return Err(CliError::usage("compression tolerance must lie in (0, 1)"));
        }
        Ok(())
    }

    pub fn window_steps(&self) -> usize {
        self.steps.div_ceil(self.windows.max(1))
    }
}

/// Operators of a transport-based model on the scenario grid.
pub fn spde_operators(cfg: &ScenarioConfig, vel: &VelocityField, kind: ModelKind, mult_noise: f64) -> CliResult<OperatorSet> {
    let base = scenario_operators(cfg, vel)?;
    let n = cfg.grid.len();
    let s1 = || {
        let trip: Vec<(usize, usize, f64)> = (0..n).map(|i| (i, i, mult_noise)).collect();
        CsrMatrix::from_triplets(n, n, &trip).map(Operator::Sparse)
    };
    Ok(match kind {
        ModelKind::Additive => base,
        ModelKind::Multiplicative => OperatorSet::multiplicative(base.a, s1()?)?,
        ModelKind::Mixed => OperatorSet::mixed(base.a, s1()?, base.s)?,
    })
}

/// Check that a fitted operator set matches the requested model kind.
pub fn check_kind(ops: &OperatorSet, model: Model) -> CliResult<()> {
    if ops.kind != model.kind {
        return Err(CliError::Core(nino_core::Error::InvalidArgument(format!(
            "operator file holds a {} model but --model is {model}",
            ops.kind
        ))));
    }
    Ok(())
}

/// Grid-space output of one run.
#[derive(Debug, Clone)]
pub struct Trajectory {
    /// Days since the initial state.
    pub times: Vec<f64>,
    pub mean: Vec<DVector<f64>>,
    pub variance: Vec<DVector<f64>>,
    /// `realizations[r][k]`.
    pub realizations: Vec<Vec<DVector<f64>>>,
    /// Peak covariance rank (mean-cov) or chaos block count (galerkin).
    pub size: usize,
    pub final_factor: Option<LowRankFactor>,
    pub elapsed: Duration,
}

fn step_seed(seed: u64, k: usize) -> u64 {
    seed ^ (k as u64).wrapping_add(1).wrapping_mul(0x9E37_79B9_7F4A_7C15)
}

/// Integrate from the model-space state `y0`.
pub fn run_method(spec: &RunSpec, ops: &OperatorSet, y0: &DVector<f64>) -> CliResult<Trajectory> {
    spec.validate()?;
    ops.validate()?;
    if y0.len() != ops.dim() {
        return Err(CliError::Core(nino_core::Error::Dimension(
            "initial state does not match the model dimension".into(),
        )));
    }
    let started = Instant::now();
    let (h, steps) = (spec.h, spec.steps);
    let times: Vec<f64> = (0..=steps).map(|k| k as f64 * h).collect();
    let mut traj = match spec.method {
        Method::MeanCov => mean_cov(spec, ops, y0)?,
        Method::Galerkin => galerkin(spec, ops, y0)?,
        Method::Taylor15 | Method::Euler => {
            let scheme = if spec.method == Method::Taylor15 {
                Scheme::Taylor15
            } else {
                Scheme::EulerMaruyama
            };
            let ens = run_ensemble(
                ops,
                y0,
                h,
                steps,
                spec.paths,
                scheme,
                spec.seed,
                &EnsembleOptions {
                    keep_paths: true,
                    ..Default::default()
                },
            )?;
            let realizations: Vec<Vec<DVector<f64>>> = ens
                .paths
                .unwrap_or_default()
                .into_iter()
                .map(|p| p.iter().map(|y| ops.lift_state(y)).collect())
                .collect();
            let mean: Vec<DVector<f64>> = ens.mean.iter().map(|m| ops.lift_state(m)).collect();
            let variance = sample_variance(&realizations, &mean);
            Trajectory {
                times: Vec::new(),
                mean,
                variance,
                realizations,
                size: spec.paths,
                final_factor: None,
                elapsed: Duration::ZERO,
            }
        }
    };
    traj.times = times;
    traj.elapsed = started.elapsed();
    Ok(traj)
}

fn sample_variance(real: &[Vec<DVector<f64>>], mean: &[DVector<f64>]) -> Vec<DVector<f64>> {
    let n = real.len();
    mean.iter()
        .enumerate()
        .map(|(k, m)| {
            if n < 2 {
                return DVector::zeros(m.len());
            }
            real.iter()
                .fold(DVector::zeros(m.len()), |acc, r| {
                    let d = &r[k] - m;
                    acc + d.component_mul(&d)
                })
                / (n - 1) as f64
        })
        .collect()
}

fn mean_cov(spec: &RunSpec, ops: &OperatorSet, y0: &DVector<f64>) -> CliResult<Trajectory> {
    let (h, steps) = (spec.h, spec.steps);
    let means = propagate_mean(&ops.a, y0, h, steps)?;
    let mean: Vec<DVector<f64>> = means.iter().map(|m| ops.lift_state(m)).collect();
    let mut problem = DLEProblem::from_ops(ops, LowRankFactor::empty(ops.dim()), steps as f64 * h, h);
    problem.tol = spec.tol;
    problem.max_rank = spec.max_rank;
    if ops.kind != ModelKind::Additive {
        problem.m0 = Some(y0.clone());
    }
    let mut variance = Vec::with_capacity(steps + 1);
    let mut realizations: Vec<Vec<DVector<f64>>> = vec![Vec::with_capacity(steps + 1); spec.paths];
    let mut final_factor = None;
    let peak = solve_dle_observed(&problem, |k, z| {
        let lifted = ops.lift_factor(z);
        variance.push(lifted.diagonal());
        let draws = sample_realizations(&RealizationRequest {
            means: std::slice::from_ref(&mean[k]),
            factors: std::slice::from_ref(&lifted),
            seed: step_seed(spec.seed, k),
            count: spec.paths,
            zero_draws: false,
        })?;
        for (r, mut d) in draws.into_iter().enumerate() {
            realizations[r].push(d.pop().expect("one step"));
        }
        if k == steps {
            final_factor = Some(lifted);
        }
        Ok(())
    })?;
    info!("mean-cov: peak covariance rank {peak}");
    Ok(Trajectory {
        times: Vec::new(),
        mean,
        variance,
        realizations,
        size: peak,
        final_factor,
        elapsed: Duration::ZERO,
    })
}

fn galerkin(spec: &RunSpec, ops: &OperatorSet, y0: &DVector<f64>) -> CliResult<Trajectory> {
    let gspec = GalerkinSpec {
        degree: spec.degree,
        window_steps: spec.window_steps(),
    };
    let system = assemble_galerkin_system(ops, spec.h, spec.steps, &gspec)?;
    let basis = system.basis();
    info!(
        "galerkin: {} random variables, degree {}, {} blocks",
        basis.n_vars(),
        basis.degree(),
        basis.len()
    );
    // Hermite values of every basis element at each realization's variables
    let mut hv = DMatrix::zeros(basis.len(), spec.paths);
    for r in 0..spec.paths {
        let mut rng = path_rng(spec.seed, r as u64);
        let xi: Vec<f64> = (0..basis.n_vars()).map(|_| rng.sample(StandardNormal)).collect();
        hv.column_mut(r).copy_from_slice(&basis.hermite_values(&xi)?);
    }
    let norms = basis.norms().to_vec();
    let steps = spec.steps;
    let mut mean = Vec::with_capacity(steps + 1);
    let mut variance = Vec::with_capacity(steps + 1);
    let mut realizations: Vec<Vec<DVector<f64>>> = vec![Vec::with_capacity(steps + 1); spec.paths];
    solve_chaos_observed(&system, y0, |_, coeff| {
        let c = DMatrix::from_columns(coeff);
        let lifted = match &ops.eof {
            Some(e) => e * &c,
            None => c,
        };
        mean.push(lifted.column(0).into_owned());
        let mut var = DVector::zeros(lifted.nrows());
        for (j, w) in norms.iter().enumerate().skip(1) {
            for i in 0..lifted.nrows() {
                var[i] += w * lifted[(i, j)] * lifted[(i, j)];
            }
        }
        variance.push(var);
        let x = &lifted * &hv;
        for (r, real) in realizations.iter_mut().enumerate() {
            real.push(x.column(r).into_owned());
        }
    })?;
    Ok(Trajectory {
        times: Vec::new(),
        mean,
        variance,
        realizations,
        size: basis.len(),
        final_factor: None,
        elapsed: Duration::ZERO,
    })
}

/// Score realizations started at reference snapshot `start` on the steps
/// whose absolute time coincides with a reference snapshot.
pub fn score(
    traj: &Trajectory,
    reference: &AnomalySeries,
    start: usize,
    mask: &RegionMask,
) -> CliResult<ErrorReport> {
    let t0 = reference.times()[start];
    let ref_times = reference.times();
    let dt = reference.dt();
    let mut keep = Vec::new();
    for (k, t) in traj.times.iter().enumerate() {
        let abs = t0 + t;
        let pos = ref_times.partition_point(|&r| r < abs - 1e-6 * dt);
        if pos < ref_times.len() && (ref_times[pos] - abs).abs() <= 1e-6 * dt {
            keep.push(k);
        }
    }
    if keep.len() < traj.times.len() {
        let beyond = traj.times.iter().filter(|t| t0 + **t > ref_times[ref_times.len() - 1] + 1e-6 * dt).count();
        if beyond > 0 {
            warn!("{beyond} simulated steps lie beyond the reference series and are not scored");
        }
    }
    if keep.len() < 2 {
        return Err(CliError::Core(nino_core::Error::InvalidArgument(
            "fewer than two simulated steps coincide with reference snapshots".into(),
        )));
    }
    let sims: Vec<Vec<DVector<f64>>> = traj
        .realizations
        .iter()
        .map(|r| keep.iter().map(|&k| r[k].clone()).collect())
        .collect();
    let times: Vec<f64> = keep.iter().map(|&k| t0 + traj.times[k]).collect();
    Ok(score_against_reference(&sims, &times, reference, mask)?)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn model_names_roundtrip() {
        for s in ["additive-sde", "mult-sde", "mixed-sde", "additive-spde", "mult-spde", "mixed-spde"] {
            assert_eq!(s.parse::<Model>().unwrap().to_string(), s);
        }
        assert_eq!("additive".parse::<Model>().unwrap().form, Formulation::Sde);
        assert!("quadratic-sde".parse::<Model>().is_err());
    }

    #[test]
    fn method_names_roundtrip() {
        for m in [Method::MeanCov, Method::Galerkin, Method::Taylor15, Method::Euler] {
            assert_eq!(m.name().parse::<Method>().unwrap(), m);
        }
        assert_eq!("pce".parse::<Method>().unwrap_err().exit_code(), 1);
    }

    #[test]
    fn galerkin_requires_degree() {
        let mut s = RunSpec::new("additive-spde".parse().unwrap(), Method::Galerkin);
        s.degree = 0;
        assert_eq!(s.validate().unwrap_err().exit_code(), 1);
    }

    #[test]
    fn zero_noise_mean_cov_realizations_are_the_mean() {
        let a = Operator::Dense(DMatrix::from_row_slice(2, 2, &[-1.0, 0.5, 0.0, -0.5]));
        let ops = OperatorSet::additive(a, LowRankFactor::empty(2)).unwrap();
        let mut spec = RunSpec::new("additive-sde".parse().unwrap(), Method::MeanCov);
        spec.steps = 10;
        spec.paths = 3;
        let t = run_method(&spec, &ops, &DVector::from_vec(vec![1.0, 2.0])).unwrap();
        for r in &t.realizations {
            assert_eq!(r, &t.mean);
        }
        assert_eq!(t.size, 0);
    }
}
