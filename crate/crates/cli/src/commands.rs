use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use log::info;
use nalgebra::DMatrix;
use nino_core::calibration::{calibrate, AnomalySeries, CalibrationOptions, OperatorSet, DEFAULT_MIXED_THETA};
use nino_core::grid::{Field, RegionMask};
use nino_core::sampler::{score_against_reference, write_heatmap_pgm, write_heatmap_text, ErrorReport};
use nino_core::scenario::{
    generate_synthetic_scenario, read_grid_series, read_operator_set, read_velocity, write_factor_checkpoints,
    write_grid_series, write_operator_set, write_velocity, FactorCheckpoint, VelocitySeries,
};

use crate::config::Config;
use crate::error::{CliError, CliResult};
use crate::run::{check_kind, run_method, score, spde_operators, Formulation, Method, Model, RunSpec, Trajectory};

pub const SERIES_FILE: &str = "series.ssta";
pub const VELOCITY_FILE: &str = "velocity.ocvel";
pub const TRUTH_FILE: &str = "truth.ops";

fn ensure_dir(dir: &Path) -> CliResult<()> {
    fs::create_dir_all(dir).map_err(|e| CliError::File {
        path: dir.display().to_string(),
        source: e.into(),
    })
}

pub fn load_series(path: &Path) -> CliResult<AnomalySeries> {
    read_grid_series(path).map_err(CliError::file(path))
}

/// Write the synthetic series, its currents and the true operators.
pub fn generate(config: &Config, out: &Path) -> CliResult<String> {
    let cfg = config.scenario()?;
    let sc = generate_synthetic_scenario(&cfg)?;
    ensure_dir(out)?;
    let series = out.join(SERIES_FILE);
    let vel = out.join(VELOCITY_FILE);
    let truth = out.join(TRUTH_FILE);
    write_grid_series(&sc.series, &series).map_err(CliError::file(&series))?;
    write_velocity(&VelocitySeries::steady(&sc.velocity)?, &vel).map_err(CliError::file(&vel))?;
    write_operator_set(&sc.truth, &truth).map_err(CliError::file(&truth))?;
    Ok(format!(
        "generated {} snapshots on a {}x{} grid (dt {} d, seed {}) -> {}, {}, {}",
        sc.series.len(),
        cfg.grid.nx(),
        cfg.grid.ny(),
        cfg.dt,
        cfg.seed,
        series.display(),
        vel.display(),
        truth.display()
    ))
}

#[derive(Debug, Clone)]
pub struct FitOptions {
    pub tau_steps: usize,
    /// `Some(0)` disables the EOF reduction; `None` picks 20 modes on
    /// grids larger than that.
    pub eof: Option<usize>,
    pub ridge: Option<f64>,
    pub theta: f64,
    pub noise_tol: f64,
}

impl Default for FitOptions {
    fn default() -> Self {
        Self {
            tau_steps: 1,
            eof: None,
            ridge: None,
            theta: DEFAULT_MIXED_THETA,
            noise_tol: 1e-6,
        }
    }
}

pub const DEFAULT_FIT_EOFS: usize = 20;

pub fn fit(series: &AnomalySeries, model: Model, opts: &FitOptions) -> CliResult<OperatorSet> {
    if model.form == Formulation::Spde {
        return Err(CliError::usage(
            "fit calibrates the SDE models; SPDE operators are built from the currents (use --config/--velocity)",
        ));
    }
    let n = series.grid().len();
    let eof_modes = match opts.eof {
        Some(0) => None,
        Some(k) => Some(k.min(n)),
        None => (n > DEFAULT_FIT_EOFS).then_some(DEFAULT_FIT_EOFS),
    };
    let copts = CalibrationOptions {
        kind: model.kind,
        tau_steps: opts.tau_steps,
        ridge: opts.ridge,
        eof_modes,
        theta: opts.theta,
        noise_tol: opts.noise_tol,
    };
    Ok(calibrate(series, &copts)?)
}

pub fn fit_to_file(series_path: &Path, model: Model, opts: &FitOptions, out: &Path) -> CliResult<String> {
    let series = load_series(series_path)?;
    let ops = fit(&series, model, opts)?;
    write_operator_set(&ops, out).map_err(CliError::file(out))?;
    Ok(format!(
        "fitted {} model (dimension {}, noise rank {}, lag {} d) -> {}",
        ops.kind,
        ops.dim(),
        ops.s.rank(),
        ops.lag_tau,
        out.display()
    ))
}

/// Inputs of `simulate`.
#[derive(Debug, Clone, Default)]
pub struct SimulateInputs {
    pub reference: PathBuf,
    pub ops: Option<PathBuf>,
    pub config: Option<PathBuf>,
    pub velocity: Option<PathBuf>,
    pub start: usize,
    pub region: Option<(f64, f64, f64, f64)>,
    pub save_paths: usize,
}

/// Operators for `model` on the reference grid.
pub fn model_operators(model: Model, inputs: &SimulateInputs, grid: &nino_core::grid::Grid) -> CliResult<OperatorSet> {
    match model.form {
        Formulation::Sde => {
            let path = inputs
                .ops
                .as_ref()
                .ok_or_else(|| CliError::usage("SDE models need --ops (output of 'nino fit')"))?;
            let ops = read_operator_set(path).map_err(CliError::file(path))?;
            check_kind(&ops, model)?;
            if ops.grid_dim() != grid.len() {
                return Err(CliError::Core(nino_core::Error::GridMismatch(format!(
                    "operators act on {} nodes, reference grid has {}",
                    ops.grid_dim(),
                    grid.len()
                ))));
            }
            Ok(ops)
        }
        Formulation::Spde => {
            let path = inputs
                .config
                .as_ref()
                .ok_or_else(|| CliError::usage("SPDE models need --config"))?;
            let config = Config::load(path)?;
            let cfg = config.scenario_on(*grid)?;
            let vel = match &inputs.velocity {
                Some(p) => {
                    let vs = read_velocity(p).map_err(CliError::file(p))?;
                    vs.grid.same_as(grid).map_err(CliError::file(p))?;
                    vs.mean_field().map_err(CliError::file(p))?
                }
                None => cfg.velocity.field(grid)?,
            };
            spde_operators(&cfg, &vel, model.kind, config.mult_noise()?)
        }
    }
}

/// Result of `simulate` before writing.
#[derive(Debug, Clone)]
pub struct Simulation {
    pub trajectory: Trajectory,
    pub report: ErrorReport,
    pub reference: AnomalySeries,
    pub t0: f64,
}

pub fn simulate(spec: &RunSpec, inputs: &SimulateInputs) -> CliResult<Simulation> {
    spec.validate()?;
    let reference = load_series(&inputs.reference)?;
    if inputs.start >= reference.len() {
        return Err(CliError::usage(format!(
            "--start {} is past the last reference snapshot ({})",
            inputs.start,
            reference.len() - 1
        )));
    }
    let grid = *reference.grid();
    let ops = model_operators(spec.model, inputs, &grid)?;
    let x0 = reference.data().column(inputs.start).into_owned();
    let y0 = ops.project_state(&x0)?;
    let trajectory = run_method(spec, &ops, &y0)?;
    let mask = region_mask(&grid, inputs.region);
    let report = score(&trajectory, &reference, inputs.start, &mask)?;
    info!(
        "{} / {}: {} steps in {:.2?}",
        spec.model,
        spec.method,
        spec.steps,
        trajectory.elapsed
    );
    Ok(Simulation {
        t0: reference.times()[inputs.start],
        trajectory,
        report,
        reference,
    })
}

pub fn region_mask(grid: &nino_core::grid::Grid, region: Option<(f64, f64, f64, f64)>) -> RegionMask {
    match region {
        Some((a, b, c, d)) => RegionMask::new(*grid, a, b, c, d),
        None => RegionMask::whole(*grid),
    }
}

/// `lon_lo,lon_hi,lat_lo,lat_hi`.
pub fn parse_region(s: &str) -> CliResult<(f64, f64, f64, f64)> {
    let v: Vec<f64> = s
        .split(',')
        .map(|p| p.trim().parse::<f64>())
        .collect::<Result<_, _>>()
        .map_err(|_| CliError::usage(format!("--region expects lon_lo,lon_hi,lat_lo,lat_hi, got '{s}'")))?;
    if v.len() != 4 || v.iter().any(|x| !x.is_finite()) {
        return Err(CliError::usage(format!("--region expects four numbers, got '{s}'")));
    }
    Ok((v[0], v[1], v[2], v[3]))
}

pub fn trajectory_csv(t0: f64, traj: &Trajectory) -> String {
    let mut out = String::from("step,time_days,spatial_mean_degC,spatial_rms_sd_degC\n");
    for (k, (m, v)) in traj.mean.iter().zip(&traj.variance).enumerate() {
        let _ = writeln!(
            out,
            "{k},{},{},{}",
            t0 + traj.times[k],
            m.mean(),
            v.mean().max(0.0).sqrt()
        );
    }
    out
}

/// Write all artifacts of a simulation into `out`; returns a summary line.
pub fn write_simulation(sim: &Simulation, spec: &RunSpec, out: &Path, save_paths: usize) -> CliResult<String> {
    ensure_dir(out)?;
    let grid = *sim.reference.grid();
    let traj = &sim.trajectory;
    let write = |name: &str, text: String| -> CliResult<()> {
        let p = out.join(name);
        fs::write(&p, text).map_err(|e| CliError::File {
            path: p.display().to_string(),
            source: e.into(),
        })
    };
    write("trajectory.csv", trajectory_csv(sim.t0, traj))?;
    write("error_report.csv", sim.report.to_csv())?;
    write("error_summary.csv", sim.report.to_summary_csv())?;

    let as_series = |states: &[nalgebra::DVector<f64>]| -> CliResult<AnomalySeries> {
        Ok(AnomalySeries::uniform(grid, sim.t0, spec.h, DMatrix::from_columns(states))?)
    };
    if traj.mean.len() >= 3 {
        let p = out.join("mean.ssta");
        write_grid_series(&as_series(&traj.mean)?, &p).map_err(CliError::file(&p))?;
        for (r, real) in traj.realizations.iter().take(save_paths).enumerate() {
            let p = out.join(format!("path_{r:03}.ssta"));
            write_grid_series(&as_series(real)?, &p).map_err(CliError::file(&p))?;
        }
    }
    let last_mean = Field::new(grid, traj.mean.last().expect("nonempty").clone())?;
    let last_sd = Field::new(grid, traj.variance.last().expect("nonempty").map(|v| v.max(0.0).sqrt()))?;
    for (name, f) in [("final_mean", &last_mean), ("final_sd", &last_sd)] {
        let pgm = out.join(format!("{name}.pgm"));
        write_heatmap_pgm(f, &pgm).map_err(CliError::file(&pgm))?;
        let txt = out.join(format!("{name}.txt"));
        write_heatmap_text(f, &txt).map_err(CliError::file(&txt))?;
    }
    if let Some(z) = &traj.final_factor {
        let p = out.join("final_factor.nfac");
        let cp = FactorCheckpoint {
            step: spec.steps,
            time: sim.t0 + spec.steps as f64 * spec.h,
            mean: traj.mean.last().expect("nonempty").clone(),
            factor: z.clone(),
        };
        write_factor_checkpoints(&[cp], &p).map_err(CliError::file(&p))?;
    }
    let within = sim.report.fraction_within(3.0);
    Ok(format!(
        "{} / {}: {} steps, {} realizations, size {}, {:.3} s; scored {} steps, final rel_l2 {:.4}, {:.1}% of |err| within 3 predicted SE -> {}",
        spec.model,
        spec.method,
        spec.steps,
        spec.paths,
        traj.size,
        traj.elapsed.as_secs_f64(),
        sim.report.times.len(),
        sim.report.rel_l2.last().copied().unwrap_or(0.0),
        100.0 * within,
        out.display()
    ))
}

/// Score saved realizations (SSTA-GRID files) against a reference.
pub fn compare(reference: &Path, sims: &[PathBuf], region: Option<(f64, f64, f64, f64)>) -> CliResult<ErrorReport> {
    if sims.is_empty() {
        return Err(CliError::usage("compare needs at least one simulation file"));
    }
    let reference_series = load_series(reference)?;
    let mut states = Vec::with_capacity(sims.len());
    let mut times: Option<Vec<f64>> = None;
    for p in sims {
        let s = load_series(p)?;
        s.grid().same_as(reference_series.grid()).map_err(CliError::file(p))?;
        match &times {
            None => times = Some(s.times().to_vec()),
            Some(t) if t.len() != s.len() || t.iter().zip(s.times()).any(|(a, b)| (a - b).abs() > 1e-9 * s.dt()) => {
                return Err(CliError::File {
                    path: p.display().to_string(),
                    source: nino_core::Error::InvalidArgument("time axis differs from the first simulation".into()),
                })
            }
            Some(_) => {}
        }
        states.push((0..s.len()).map(|k| s.data().column(k).into_owned()).collect::<Vec<_>>());
    }
    let mask = region_mask(reference_series.grid(), region);
    Ok(score_against_reference(
        &states,
        &times.expect("at least one file"),
        &reference_series,
        &mask,
    )?)
}

/// Method parsing for comma-separated lists.
pub fn parse_methods(s: &str) -> CliResult<Vec<Method>> {
    s.split(',').map(|m| m.trim().parse()).collect()
}
