//! Flat `key = value` configuration files.
//!
//! One pair per line; `#` starts a comment. Keys understood by the
//! scenario builder:
//!
//! | key | meaning | default |
//! |-----|---------|---------|
//! | `nx`, `ny` | grid nodes | required |
//! | `lon_min`, `lon_max`, `lat_min`, `lat_max` | domain (degrees) | required |
//! | `seed` | generator seed | required |
//! | `velocity` | `double-gyre`, `uniform` or `zero` | `double-gyre` |
//! | `velocity_amplitude` | gyre speed (m/s) | 0.5 |
//! | `u`, `v` | uniform current (m/s) | 0 |
//! | `boundary` | `zero-inflow` or `periodic` | `zero-inflow` |
//! | `damping` | 1/day | 0.1 |
//! | `noise_amplitude` | kernel amplitude Q | 0.05 |
//! | `kernel_length` | kernel length scale (degrees) | 20 |
//! | `kl_modes` | retained KL modes | 10 |
//! | `mult_noise` | multiplicative intensity (SPDE models) | 0.1 |
//! | `initial_amplitude` | initial bump before spin-up | 0 |
//! | `spinup_days` | discarded spin-up | 50 |
//! | `dt` | snapshot spacing (days) | 1 |
//! | `snapshots` | snapshot count | 500 |
//! | `substeps` | integration steps per snapshot | 2 |
//! | `t0` | first snapshot time (days) | 0 |

use std::collections::BTreeMap;
use std::path::Path;
use std::str::FromStr;

use log::warn;
use nino_core::grid::Grid;
use nino_core::scenario::{ScenarioConfig, VelocitySpec};

use crate::error::{CliError, CliResult};

const KNOWN_KEYS: &[&str] = &[
    "nx",
    "ny",
    "lon_min",
    "lon_max",
    "lat_min",
    "lat_max",
    "seed",
    "velocity",
    "velocity_amplitude",
    "u",
    "v",
    "boundary",
    "damping",
    "noise_amplitude",
    "kernel_length",
    "kl_modes",
    "mult_noise",
    "initial_amplitude",
    "spinup_days",
    "dt",
    "snapshots",
    "substeps",
    "t0",
];

pub const DEFAULT_MULT_NOISE: f64 = 0.1;

#[derive(Debug, Clone)]
pub struct Config {
    origin: String,
    values: BTreeMap<String, (usize, String)>,
}

impl Config {
    pub fn parse(text: &str, origin: &str) -> CliResult<Self> {
        let mut values = BTreeMap::new();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line.split_once('=').ok_or_else(|| CliError::Config {
                path: origin.into(),
                line: i + 1,
                message: format!("expected 'key = value', found '{line}'"),
            })?;
            let (k, v) = (k.trim(), v.trim());
            if k.is_empty() {
                return Err(CliError::Config {
                    path: origin.into(),
                    line: i + 1,
                    message: "empty key".into(),
                });
            }
            if !KNOWN_KEYS.contains(&k) {
                warn!("{origin} line {}: unknown key '{k}' ignored", i + 1);
            }
            values.insert(k.to_string(), (i + 1, v.to_string()));
        }
        Ok(Self {
            origin: origin.into(),
            values,
        })
    }

    pub fn load(path: &Path) -> CliResult<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::File {
            path: path.display().to_string(),
            source: e.into(),
        })?;
        Self::parse(&text, &path.display().to_string())
    }

    /// Command-line override; takes precedence over the file.
    pub fn set(&mut self, key: &str, value: impl ToString) {
        self.values.insert(key.to_string(), (0, value.to_string()));
    }

    pub fn get<T: FromStr>(&self, key: &str) -> CliResult<Option<T>> {
        match self.values.get(key) {
            None => Ok(None),
            Some((line, v)) => v.parse().map(Some).map_err(|_| CliError::Config {
                path: self.origin.clone(),
                line: *line,
                message: format!("cannot parse value '{v}' for key '{key}'"),
            }),
        }
    }

    pub fn require<T: FromStr>(&self, key: &str) -> CliResult<T> {
        self.get(key)?.ok_or_else(|| CliError::MissingKey {
            path: self.origin.clone(),
            key: key.into(),
        })
    }

    pub fn get_or<T: FromStr>(&self, key: &str, default: T) -> CliResult<T> {
        Ok(self.get(key)?.unwrap_or(default))
    }

    fn bad(&self, key: &str, message: String) -> CliError {
        CliError::Config {
            path: self.origin.clone(),
            line: self.values.get(key).map_or(0, |(l, _)| *l),
            message,
        }
    }

    pub fn grid(&self) -> CliResult<Grid> {
        let nx = self.require("nx")?;
        let ny = self.require("ny")?;
        let b: Vec<f64> = ["lon_min", "lon_max", "lat_min", "lat_max"]
            .iter()
            .map(|k| self.require(k))
            .collect::<CliResult<_>>()?;
        Grid::new(nx, ny, b[0], b[1], b[2], b[3]).map_err(|e| self.bad("nx", e.to_string()))
    }

    pub fn velocity_spec(&self) -> CliResult<VelocitySpec> {
        let kind: String = self.get_or("velocity", "double-gyre".to_string())?;
        match kind.as_str() {
            "double-gyre" | "gyre" => Ok(VelocitySpec::DoubleGyre {
                amplitude: self.get_or("velocity_amplitude", 0.5)?,
            }),
            "uniform" => Ok(VelocitySpec::Uniform {
                u: self.get_or("u", 0.0)?,
                v: self.get_or("v", 0.0)?,
            }),
            "zero" | "none" => Ok(VelocitySpec::Zero),
            other => Err(self.bad("velocity", format!("unknown velocity kind '{other}'"))),
        }
    }

    /// Scenario settings on `grid` (normally [`Config::grid`]).
    pub fn scenario_on(&self, grid: Grid) -> CliResult<ScenarioConfig> {
        let d = ScenarioConfig::new(grid, 0);
        let boundary: String = self.get_or("boundary", "zero-inflow".to_string())?;
        let cfg = ScenarioConfig {
            grid,
            velocity: self.velocity_spec()?,
            boundary: boundary.parse().map_err(|e: nino_core::Error| self.bad("boundary", e.to_string()))?,
            damping: self.get_or("damping", d.damping)?,
            noise_amplitude: self.get_or("noise_amplitude", d.noise_amplitude)?,
            kernel_length: self.get_or("kernel_length", d.kernel_length)?,
            kl_modes: self.get_or("kl_modes", d.kl_modes)?,
            initial_amplitude: self.get_or("initial_amplitude", d.initial_amplitude)?,
            spinup_days: self.get_or("spinup_days", d.spinup_days)?,
            dt: self.get_or("dt", d.dt)?,
            n_snapshots: self.get_or("snapshots", d.n_snapshots)?,
            substeps: self.get_or("substeps", d.substeps)?,
            t0: self.get_or("t0", d.t0)?,
            seed: self.get_or("seed", 0)?,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    /// Full scenario: requires grid keys and `seed`.
    pub fn scenario(&self) -> CliResult<ScenarioConfig> {
        let grid = self.grid()?;
        self.require::<u64>("seed")?;
        self.scenario_on(grid)
    }

    pub fn mult_noise(&self) -> CliResult<f64> {
        let s: f64 = self.get_or("mult_noise", DEFAULT_MULT_NOISE)?;
        if !(s >= 0.0) || !s.is_finite() {
            return Err(self.bad("mult_noise", "mult_noise must be finite and nonnegative".into()));
        }
        Ok(s)
    }
}
