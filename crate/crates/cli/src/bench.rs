//! Per-step cost of the mean/covariance solver against the other methods on
//! a sequence of grid sizes.

use std::fmt::Write as _;
use std::time::Instant;

use log::info;
use nalgebra::DVector;
use nino_core::calibration::{ModelKind, OperatorSet};
use nino_core::chaos::{assemble_galerkin_system, solve_chaos_observed, GalerkinSpec};
use nino_core::covariance::{propagate_mean, solve_dle_observed, DLEProblem};
use nino_core::grid::Grid;
use nino_core::linalg::LowRankFactor;
use nino_core::path_sim::{run_ensemble, EnsembleOptions, Scheme};

use crate::config::Config;
use crate::error::{CliError, CliResult};
use crate::run::{spde_operators, Formulation, Method, Model, RunSpec};

#[derive(Debug, Clone, PartialEq)]
pub struct BenchRecord {
    pub nx: usize,
    pub ny: usize,
    pub method: Method,
    pub model: Model,
    /// Median over repetitions of wall time / steps.
    pub seconds_per_step: f64,
    pub min_seconds_per_step: f64,
    pub max_seconds_per_step: f64,
    /// Peak covariance rank, chaos block count or path count.
    pub size: usize,
}

impl BenchRecord {
    pub fn nodes(&self) -> usize {
        self.nx * self.ny
    }
}

#[derive(Debug, Clone)]
pub struct BenchOptions {
    pub sizes: Vec<(usize, usize)>,
    pub methods: Vec<Method>,
    pub model: Model,
    pub reps: usize,
    /// Step size, steps, seed, chaos and compression settings.
    pub spec: RunSpec,
}

/// `8x4,16x8,...`, ascending by node count.
pub fn parse_sizes(s: &str) -> CliResult<Vec<(usize, usize)>> {
    let sizes: Vec<(usize, usize)> = s
        .split(',')
        .map(|p| {
            let (a, b) = p
                .trim()
                .split_once(['x', 'X'])
                .ok_or_else(|| CliError::usage(format!("grid size '{p}' is not NXxNY")))?;
            let nx = a.parse().map_err(|_| CliError::usage(format!("bad grid size '{p}'")))?;
            let ny = b.parse().map_err(|_| CliError::usage(format!("bad grid size '{p}'")))?;
            Ok((nx, ny))
        })
        .collect::<CliResult<_>>()?;
    if sizes.is_empty() {
        return Err(CliError::usage("no grid sizes given"));
    }
    if sizes.windows(2).any(|w| w[0].0 * w[0].1 > w[1].0 * w[1].1) {
        return Err(CliError::usage("--sizes must be sorted ascending by node count"));
    }
    Ok(sizes)
}

fn operators_on(config: &Config, model: Model, nx: usize, ny: usize) -> CliResult<OperatorSet> {
    let base = config.grid()?;
    let grid = Grid::new(nx, ny, base.lon_min(), base.lon_max(), base.lat_min(), base.lat_max())?;
    let cfg = config.scenario_on(grid)?;
    let vel = cfg.velocity.field(&grid)?;
    spde_operators(&cfg, &vel, model.kind, config.mult_noise()?)
}

/// Solve once; returns the method's size figure. No output is stored.
fn solve_once(spec: &RunSpec, ops: &OperatorSet, x0: &DVector<f64>) -> CliResult<usize> {
    let (h, steps) = (spec.h, spec.steps);
    Ok(match spec.method {
        Method::MeanCov => {
            propagate_mean(&ops.a, x0, h, steps)?;
            let mut p = DLEProblem::from_ops(ops, LowRankFactor::empty(ops.dim()), h * steps as f64, h);
            p.tol = spec.tol;
            p.max_rank = spec.max_rank;
            p.stride = steps;
            if ops.kind != ModelKind::Additive {
                p.m0 = Some(x0.clone());
            }
            solve_dle_observed(&p, |_, _| Ok(()))?
        }
        Method::Galerkin => {
            let system = assemble_galerkin_system(
                ops,
                h,
                steps,
                &GalerkinSpec {
                    degree: spec.degree,
                    window_steps: spec.window_steps(),
                },
            )?;
            solve_chaos_observed(&system, x0, |_, _| {})?;
            system.block_count()
        }
        Method::Taylor15 | Method::Euler => {
            let scheme = if spec.method == Method::Taylor15 {
                Scheme::Taylor15
            } else {
                Scheme::EulerMaruyama
            };
            run_ensemble(ops, x0, h, steps, spec.paths, scheme, spec.seed, &EnsembleOptions::default())?;
            spec.paths
        }
    })
}

fn median(v: &mut [f64]) -> f64 {
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

pub fn run_benchmark(config: &Config, opts: &BenchOptions) -> CliResult<Vec<BenchRecord>> {
    if opts.reps == 0 {
        return Err(CliError::usage("--reps must be positive"));
    }
    if opts.model.form != Formulation::Spde {
        return Err(CliError::usage("the benchmark runs the SPDE models (e.g. additive-spde)"));
    }
    let mut out = Vec::new();
    for &(nx, ny) in &opts.sizes {
        let ops = operators_on(config, opts.model, nx, ny)?;
        // a smooth nonzero start keeps the multiplicative models nontrivial
        let x0 = DVector::from_fn(ops.dim(), |k, _| {
            let (i, j) = (k % nx, k / nx);
            (std::f64::consts::PI * i as f64 / (nx - 1) as f64).sin() * (std::f64::consts::PI * j as f64 / (ny - 1) as f64).sin()
        });
        let mut methods = opts.methods.clone();
        methods.sort();
        methods.dedup();
        for method in methods {
            let mut spec = opts.spec.clone();
            spec.model = opts.model;
            spec.method = method;
            spec.validate()?;
            // warm-up, excluded from timing
            let mut warm = spec.clone();
            warm.steps = 2.min(spec.steps);
            solve_once(&warm, &ops, &x0)?;
            let mut times = Vec::with_capacity(opts.reps);
            let mut size = 0;
            for _ in 0..opts.reps {
                let t = Instant::now();
                size = solve_once(&spec, &ops, &x0)?;
                times.push(t.elapsed().as_secs_f64() / spec.steps as f64);
            }
            let (lo, hi) = times
                .iter()
                .fold((f64::INFINITY, 0.0f64), |(a, b), &t| (a.min(t), b.max(t)));
            let med = median(&mut times);
            info!("{nx}x{ny} {method}: median {med:.3e} s/step (min {lo:.3e}, max {hi:.3e}), size {size}");
            out.push(BenchRecord {
                nx,
                ny,
                method,
                model: opts.model,
                seconds_per_step: med.max(f64::MIN_POSITIVE),
                min_seconds_per_step: lo,
                max_seconds_per_step: hi,
                size,
            });
        }
    }
    out.sort_by(|a, b| a.nodes().cmp(&b.nodes()).then(a.method.cmp(&b.method)));
    Ok(out)
}

pub fn records_csv(records: &[BenchRecord]) -> String {
    let mut s = String::from("nx,ny,nodes,method,model,seconds_per_step,min_seconds_per_step,max_seconds_per_step,size\n");
    for r in records {
        let _ = writeln!(
            s,
            "{},{},{},{},{},{:.6e},{:.6e},{:.6e},{}",
            r.nx,
            r.ny,
            r.nodes(),
            r.method,
            r.model,
            r.seconds_per_step,
            r.min_seconds_per_step,
            r.max_seconds_per_step,
            r.size
        );
    }
    s
}

/// Least-squares slope and intercept of `log t` against `log nodes`.
pub fn growth_exponent(records: &[BenchRecord], method: Method) -> Option<(f64, f64)> {
    let pts: Vec<(f64, f64)> = records
        .iter()
        .filter(|r| r.method == method)
        .map(|r| ((r.nodes() as f64).ln(), r.seconds_per_step.ln()))
        .collect();
    if pts.len() < 2 {
        return None;
    }
    let n = pts.len() as f64;
    let (mx, my) = (pts.iter().map(|p| p.0).sum::<f64>() / n, pts.iter().map(|p| p.1).sum::<f64>() / n);
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    if sxx == 0.0 {
        return None;
    }
    let slope = sxy / sxx;
    Some((slope, my - slope * mx))
}

#[derive(Debug, Clone, PartialEq)]
pub enum Crossover {
    /// Smallest measured size from which `fast` stays faster.
    Observed { nx: usize, ny: usize, nodes: usize },
    /// Power-law extrapolation of the fitted growth curves.
    Extrapolated { nodes: f64 },
    /// `fast` is faster at every measured size.
    AlwaysFaster,
    /// Curves do not cross ahead (the other method grows no faster).
    None,
}

/// Where `fast` (normally mean-cov) overtakes `slow` (normally galerkin).
pub fn crossover(records: &[BenchRecord], fast: Method, slow: Method) -> Crossover {
    let mut pairs = Vec::new();
    for r in records.iter().filter(|r| r.method == fast) {
        if let Some(s) = records.iter().find(|s| s.method == slow && s.nx == r.nx && s.ny == r.ny) {
            pairs.push((r.nx, r.ny, r.seconds_per_step < s.seconds_per_step));
        }
    }
    if pairs.is_empty() {
        return Crossover::None;
    }
    if let Some(first) = (0..pairs.len()).find(|&i| pairs[i..].iter().all(|p| p.2)) {
        if first == 0 {
            return Crossover::AlwaysFaster;
        }
        let (nx, ny, _) = pairs[first];
        return Crossover::Observed { nx, ny, nodes: nx * ny };
    }
    match (growth_exponent(records, fast), growth_exponent(records, slow)) {
        (Some((pf, cf)), Some((ps, cs))) if ps > pf => Crossover::Extrapolated {
            nodes: ((cf - cs) / (ps - pf)).exp(),
        },
        _ => Crossover::None,
    }
}

pub fn summary(records: &[BenchRecord]) -> String {
    let mut s = String::new();
    let mut methods: Vec<Method> = records.iter().map(|r| r.method).collect();
    methods.sort();
    methods.dedup();
    for m in &methods {
        if let Some((slope, _)) = growth_exponent(records, *m) {
            let _ = writeln!(s, "{m}: time per step ~ nodes^{slope:.2}");
        }
    }
    if methods.contains(&Method::MeanCov) && methods.contains(&Method::Galerkin) {
        let line = match crossover(records, Method::MeanCov, Method::Galerkin) {
            Crossover::Observed { nx, ny, nodes } => {
                format!("crossover: mean-cov faster than galerkin from {nx}x{ny} ({nodes} nodes) on")
            }
            Crossover::Extrapolated { nodes } => {
                format!("crossover: not observed; extrapolated at about {nodes:.0} nodes")
            }
            Crossover::AlwaysFaster => "crossover: mean-cov faster than galerkin at every measured size".into(),
            Crossover::None => "crossover: none (galerkin grows no faster than mean-cov)".into(),
        };
        s.push_str(&line);
        s.push('\n');
    }
    s
}
