use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use log::error;
use nino_cli::bench::{parse_sizes, records_csv, run_benchmark, summary, BenchOptions};
use nino_cli::commands::{
    compare, fit_to_file, generate, parse_methods, parse_region, simulate, write_simulation, FitOptions,
    SimulateInputs,
};
use nino_cli::config::Config;
use nino_cli::run::{Method, Model, RunSpec};
use nino_cli::{CliError, CliResult};
use nino_core::exec::{self, Execution};

#[derive(Parser, Debug)]
#[command(name = "nino", version, about = "Linear stochastic SST-anomaly models: calibrate, simulate, compare, benchmark")]
struct Cli {
    /// Worker threads (1 runs everything sequentially)
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// Log verbosity (-v info, -vv debug)
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate a synthetic twin: series, currents and true operators
    Generate {
        #[arg(long)]
        config: PathBuf,
        #[arg(long, default_value = ".")]
        out: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Calibrate drift and noise operators from an SSTA-GRID series
    Fit {
        series: PathBuf,
        #[arg(long, default_value = "additive-sde")]
        model: String,
        #[arg(long, default_value = "fitted.ops")]
        out: PathBuf,
        /// Leading EOFs to calibrate in (0 = full grid)
        #[arg(long)]
        eof: Option<usize>,
        #[arg(long, default_value_t = 1)]
        tau_steps: usize,
        #[arg(long)]
        ridge: Option<f64>,
        /// Share of the multiplicative intensity kept by the mixed model
        #[arg(long, default_value_t = 0.5)]
        theta: f64,
        #[arg(long, default_value_t = 1e-6)]
        noise_tol: f64,
    },
    /// Simulate a model with one method and score it against a reference
    Simulate {
        #[arg(long)]
        model: String,
        #[arg(long, default_value = "mean-cov")]
        method: String,
        /// Reference series; also supplies the initial state and grid
        #[arg(long)]
        reference: PathBuf,
        /// Fitted operators (SDE models)
        #[arg(long)]
        ops: Option<PathBuf>,
        /// Scenario config (SPDE models)
        #[arg(long)]
        config: Option<PathBuf>,
        /// Currents for SPDE models (defaults to the config's analytic field)
        #[arg(long)]
        velocity: Option<PathBuf>,
        #[arg(long, default_value_t = 0.5)]
        h: f64,
        #[arg(long, default_value_t = 400)]
        steps: usize,
        #[arg(long, default_value_t = 50)]
        paths: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Chaos polynomial degree K
        #[arg(long, default_value_t = 1)]
        degree: usize,
        /// Chaos noise windows over the horizon
        #[arg(long, default_value_t = 10)]
        windows: usize,
        /// Low-rank compression tolerance
        #[arg(long, default_value_t = 1e-8)]
        tol: f64,
        #[arg(long, default_value_t = 200)]
        max_rank: usize,
        /// Reference snapshot index of the initial state
        #[arg(long, default_value_t = 0)]
        start: usize,
        /// Scoring box lon_lo,lon_hi,lat_lo,lat_hi
        #[arg(long, allow_hyphen_values = true)]
        region: Option<String>,
        /// Also write this many realizations as SSTA-GRID files
        #[arg(long, default_value_t = 0)]
        save_paths: usize,
        #[arg(long, default_value = "sim_out")]
        out: PathBuf,
    },
    /// Score saved realizations against a reference series
    Compare {
        #[arg(long)]
        reference: PathBuf,
        #[arg(required = true)]
        sims: Vec<PathBuf>,
        #[arg(long, allow_hyphen_values = true)]
        region: Option<String>,
        #[arg(long, default_value = "error_report.csv")]
        out: PathBuf,
    },
    /// Time per step of several methods over increasing grid sizes
    Benchmark {
        #[arg(long)]
        config: PathBuf,
        #[arg(long, default_value = "8x4,16x8,32x16,64x32")]
        sizes: String,
        #[arg(long, default_value = "mean-cov,galerkin")]
        methods: String,
        #[arg(long, default_value = "additive-spde")]
        model: String,
        #[arg(long, default_value_t = 100)]
        steps: usize,
        #[arg(long, default_value_t = 3)]
        reps: usize,
        #[arg(long, default_value_t = 0.5)]
        h: f64,
        #[arg(long, default_value_t = 50)]
        paths: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 1)]
        degree: usize,
        #[arg(long, default_value_t = 10)]
        windows: usize,
        #[arg(long, default_value_t = 1e-6)]
        tol: f64,
        #[arg(long, default_value_t = 400)]
        max_rank: usize,
        #[arg(long, default_value = "bench.csv")]
        out: PathBuf,
    },
}

fn write_file(path: &PathBuf, text: &str) -> CliResult<()> {
    std::fs::write(path, text).map_err(|e| CliError::File {
        path: path.display().to_string(),
        source: e.into(),
    })
}

fn run(cli: Cli) -> CliResult<()> {
    if let Some(t) = cli.threads {
        if t == 0 {
            return Err(CliError::usage("--threads must be positive"));
        }
        if t == 1 {
            exec::set_mode(Execution::Sequential);
        } else if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(t).build_global() {
            log::warn!("thread pool already initialized: {e}");
        }
    }
    match cli.command {
        Command::Generate { config, out, seed } => {
            let mut cfg = Config::load(&config)?;
            if let Some(s) = seed {
                cfg.set("seed", s);
            }
            println!("{}", generate(&cfg, &out)?);
        }
        Command::Fit {
            series,
            model,
            out,
            eof,
            tau_steps,
            ridge,
            theta,
            noise_tol,
        } => {
            let model: Model = model.parse()?;
            let opts = FitOptions {
                tau_steps,
                eof,
                ridge,
                theta,
                noise_tol,
            };
            println!("{}", fit_to_file(&series, model, &opts, &out)?);
        }
        Command::Simulate {
            model,
            method,
            reference,
            ops,
            config,
            velocity,
            h,
            steps,
            paths,
            seed,
            degree,
            windows,
            tol,
            max_rank,
            start,
            region,
            save_paths,
            out,
        } => {
            let mut spec = RunSpec::new(model.parse()?, method.parse()?);
            spec.h = h;
            spec.steps = steps;
            spec.paths = paths;
            spec.seed = seed;
            spec.degree = degree;
            spec.windows = windows;
            spec.tol = tol;
            spec.max_rank = max_rank;
            let inputs = SimulateInputs {
                reference,
                ops,
                config,
                velocity,
                start,
                region: region.as_deref().map(parse_region).transpose()?,
                save_paths,
            };
            let sim = simulate(&spec, &inputs)?;
            println!("{}", write_simulation(&sim, &spec, &out, save_paths)?);
        }
        Command::Compare {
            reference,
            sims,
            region,
            out,
        } => {
            let region = region.as_deref().map(parse_region).transpose()?;
            let report = compare(&reference, &sims, region)?;
            write_file(&out, &report.to_csv())?;
            println!(
                "scored {} files over {} times: mean |err| {:.4} degC -> {}",
                sims.len(),
                report.times.len(),
                report.err_mean.iter().map(|e| e.abs()).sum::<f64>() / report.times.len() as f64,
                out.display()
            );
        }
        Command::Benchmark {
            config,
            sizes,
            methods,
            model,
            steps,
            reps,
            h,
            paths,
            seed,
            degree,
            windows,
            tol,
            max_rank,
            out,
        } => {
            let cfg = Config::load(&config)?;
            let model: Model = model.parse()?;
            let mut spec = RunSpec::new(model, Method::MeanCov);
            spec.h = h;
            spec.steps = steps;
            spec.paths = paths;
            spec.seed = seed;
            spec.degree = degree;
            spec.windows = windows;
            spec.tol = tol;
            spec.max_rank = max_rank;
            let opts = BenchOptions {
                sizes: parse_sizes(&sizes)?,
                methods: parse_methods(&methods)?,
                model,
                reps,
                spec,
            };
            let records = run_benchmark(&cfg, &opts)?;
            write_file(&out, &records_csv(&records))?;
            print!("{}", summary(&records));
            println!("{} records -> {}", records.len(), out.display());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            error!("{e}");
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
