//! File formats and the synthetic scenario generator.
//!
//! # SSTA-GRID v1
//!
//! Plain text, one record per line, values separated by whitespace:
//!
//! ```text
//! ssta-grid 1
//! nx ny
//! lon_min lon_max lat_min lat_max
//! nt dt_days t0_days
//! <nt blocks of ny lines with nx values, latitude rows from south to north>
//! ```
//!
//! Blank lines and lines starting with `#` are ignored. Values are written
//! in shortest round-trip decimal form, so reading back is exact.
//!
//! # OCVEL v1
//!
//! Same header with first line `ocvel 1`; each time slice holds a `u_east`
//! block followed by a `v_north` block, in m/s.
//!
//! # Operator and factor dumps
//!
//! `nino-ops 1` and `nino-factors 1` files start with that header line and
//! continue with tagged sections of row-major dense blocks (sparse drift
//! operators as `row col value` triplets); see [`write_operator_set`] and
//! [`write_factor_checkpoints`].

use std::fmt::Write as _;
use std::path::Path;

use nalgebra::{DMatrix, DVector};

use crate::calibration::{AnomalySeries, ModelKind, OperatorSet};
use crate::chaos::{kl_eigenpairs, KernelSpec};
use crate::error::{Error, Result};
use crate::grid::{assemble_transport_operator, BoundaryRule, Grid, VelocityField};
use crate::linalg::{CsrMatrix, LowRankFactor, Operator};
use crate::path_sim::{path_rng, simulate_path, Scheme};

const GRID_MAGIC: &str = "ssta-grid";
const VEL_MAGIC: &str = "ocvel";
const OPS_MAGIC: &str = "nino-ops";
const FACTORS_MAGIC: &str = "nino-factors";

/// Line reader that tracks 1-based line numbers and skips blanks/comments.
struct Lines<'a> {
    inner: std::iter::Enumerate<std::str::Lines<'a>>,
    last: usize,
}

impl<'a> Lines<'a> {
    fn new(text: &'a str) -> Self {
        Self {
            inner: text.lines().enumerate(),
            last: 0,
        }
    }

    fn next_line(&mut self) -> Option<(usize, &'a str)> {
        for (i, line) in self.inner.by_ref() {
            let t = line.trim();
            if t.is_empty() || t.starts_with('#') {
                continue;
            }
            self.last = i + 1;
            return Some((i + 1, t));
        }
        None
    }

    fn expect(&mut self, what: &str) -> Result<(usize, &'a str)> {
        self.next_line()
            .ok_or_else(|| Error::parse(self.last + 1, format!("unexpected end of file, expected {what}")))
    }
}

fn tokens<T: std::str::FromStr>(line: usize, text: &str, count: usize, what: &str) -> Result<Vec<T>> {
    let parts: Vec<&str> = text.split_whitespace().collect();
    if parts.len() != count {
        return Err(Error::parse(
            line,
            format!("expected {count} values for {what}, found {}", parts.len()),
        ));
    }
    parts
        .iter()
        .map(|p| {
            p.parse::<T>()
                .map_err(|_| Error::parse(line, format!("cannot parse '{p}' in {what}")))
        })
        .collect()
}

fn finite_row(line: usize, text: &str, count: usize, what: &str) -> Result<Vec<f64>> {
    let v: Vec<f64> = tokens(line, text, count, what)?;
    if let Some(k) = v.iter().position(|x| !x.is_finite()) {
        return Err(Error::parse(line, format!("non-finite value '{}' in {what}", v[k])));
    }
    Ok(v)
}

fn check_magic(lines: &mut Lines<'_>, magic: &str) -> Result<()> {
    let (ln, head) = lines.expect("format header")?;
    let parts: Vec<&str> = head.split_whitespace().collect();
    if parts.len() != 2 || parts[0] != magic {
        return Err(Error::parse(ln, format!("expected header '{magic} 1', found '{head}'")));
    }
    if parts[1] != "1" {
        return Err(Error::UnsupportedVersion(format!("{magic} {}", parts[1])));
    }
    Ok(())
}

struct GridHeader {
    grid: Grid,
    nt: usize,
    dt: f64,
    t0: f64,
}

fn read_grid_header(lines: &mut Lines<'_>) -> Result<GridHeader> {
    let (ln, l) = lines.expect("grid size line 'nx ny'")?;
    let nn: Vec<usize> = tokens(ln, l, 2, "grid size")?;
    let (ln, l) = lines.expect("bounds line")?;
    let b = finite_row(ln, l, 4, "grid bounds")?;
    let grid = Grid::new(nn[0], nn[1], b[0], b[1], b[2], b[3])
        .map_err(|e| Error::parse(ln, e.to_string()))?;
    let (ln, l) = lines.expect("time line 'nt dt_days t0_days'")?;
    let parts: Vec<&str> = l.split_whitespace().collect();
    if parts.len() != 3 {
        return Err(Error::parse(ln, format!("expected 3 values for time line, found {}", parts.len())));
    }
    let nt: usize = parts[0]
        .parse()
        .map_err(|_| Error::parse(ln, format!("cannot parse snapshot count '{}'", parts[0])))?;
    let tf = finite_row(ln, &parts[1..].join(" "), 2, "time line")?;
    if !(tf[0] > 0.0) {
        return Err(Error::parse(ln, "dt_days must be positive"));
    }
    Ok(GridHeader {
        grid,
        nt,
        dt: tf[0],
        t0: tf[1],
    })
}

fn write_grid_header(out: &mut String, magic: &str, grid: &Grid, nt: usize, dt: f64, t0: f64) {
    let _ = writeln!(out, "{magic} 1");
    let _ = writeln!(out, "{} {}", grid.nx(), grid.ny());
    let _ = writeln!(
        out,
        "{} {} {} {}",
        grid.lon_min(),
        grid.lon_max(),
        grid.lat_min(),
        grid.lat_max()
    );
    let _ = writeln!(out, "{nt} {dt} {t0}");
}

fn write_block(out: &mut String, grid: &Grid, values: impl Fn(usize) -> f64) {
    for j in 0..grid.ny() {
        for i in 0..grid.nx() {
            if i > 0 {
                out.push(' ');
            }
            let _ = write!(out, "{}", values(grid.index(i, j)));
        }
        out.push('\n');
    }
}

fn read_block(
    lines: &mut Lines<'_>,
    grid: &Grid,
    block: usize,
    total_rows: usize,
    rows_read: &mut usize,
    what: &str,
) -> Result<DVector<f64>> {
    let mut v = DVector::zeros(grid.len());
    for j in 0..grid.ny() {
        let (ln, l) = lines.next_line().ok_or_else(|| {
            Error::parse(
                lines.last + 1,
                format!("truncated data: expected {total_rows} rows, found {}", *rows_read),
            )
        })?;
        let row = finite_row(ln, l, grid.nx(), &format!("{what} {block} row {j}"))?;
        for (i, x) in row.into_iter().enumerate() {
            v[grid.index(i, j)] = x;
        }
        *rows_read += 1;
    }
    Ok(v)
}

fn expect_end(lines: &mut Lines<'_>, total_rows: usize) -> Result<()> {
    if let Some((ln, _)) = lines.next_line() {
        return Err(Error::parse(
            ln,
            format!("extra data after the expected {total_rows} rows"),
        ));
    }
    Ok(())
}

pub fn format_grid_series(series: &AnomalySeries) -> String {
    let g = series.grid();
    let mut out = String::new();
    write_grid_header(&mut out, GRID_MAGIC, g, series.len(), series.dt(), series.times()[0]);
    for k in 0..series.len() {
        let col = series.data().column(k);
        write_block(&mut out, g, |i| col[i]);
    }
    out
}

pub fn parse_grid_series(text: &str) -> Result<AnomalySeries> {
    let mut lines = Lines::new(text);
    check_magic(&mut lines, GRID_MAGIC)?;
    let hdr = read_grid_header(&mut lines)?;
    let total = hdr.nt * hdr.grid.ny();
    let mut rows = 0;
    let mut data = DMatrix::zeros(hdr.grid.len(), hdr.nt);
    for k in 0..hdr.nt {
        let v = read_block(&mut lines, &hdr.grid, k, total, &mut rows, "snapshot")?;
        data.column_mut(k).copy_from(&v);
    }
    expect_end(&mut lines, total)?;
    AnomalySeries::uniform(hdr.grid, hdr.t0, hdr.dt, data)
}

pub fn write_grid_series(series: &AnomalySeries, path: &Path) -> Result<()> {
    std::fs::write(path, format_grid_series(series))?;
    Ok(())
}

pub fn read_grid_series(path: &Path) -> Result<AnomalySeries> {
    parse_grid_series(&std::fs::read_to_string(path)?)
}

/// Velocity slices in m/s, as stored in OCVEL files.
#[derive(Debug, Clone, PartialEq)]
pub struct VelocitySeries {
    pub grid: Grid,
    pub t0: f64,
    pub dt: f64,
    pub u_ms: Vec<DVector<f64>>,
    pub v_ms: Vec<DVector<f64>>,
}

impl VelocitySeries {
    pub fn steady(field: &VelocityField) -> Result<Self> {
        let (u, v) = field.to_meters_per_second()?;
        Ok(Self {
            grid: *field.grid(),
            t0: 0.0,
            dt: 1.0,
            u_ms: vec![u],
            v_ms: vec![v],
        })
    }

    /// Time-mean field converted to degrees/day.
    pub fn mean_field(&self) -> Result<VelocityField> {
        if self.u_ms.is_empty() {
            return Err(Error::arg("velocity series has no slices"));
        }
        let k = self.u_ms.len() as f64;
        let u = self.u_ms.iter().fold(DVector::zeros(self.grid.len()), |a, b| a + b) / k;
        let v = self.v_ms.iter().fold(DVector::zeros(self.grid.len()), |a, b| a + b) / k;
        VelocityField::from_meters_per_second(self.grid, &u, &v)
    }
}

pub fn format_velocity(vel: &VelocitySeries) -> String {
    let mut out = String::new();
    write_grid_header(&mut out, VEL_MAGIC, &vel.grid, vel.u_ms.len(), vel.dt, vel.t0);
    for (u, v) in vel.u_ms.iter().zip(&vel.v_ms) {
        write_block(&mut out, &vel.grid, |i| u[i]);
        write_block(&mut out, &vel.grid, |i| v[i]);
    }
    out
}

pub fn parse_velocity(text: &str) -> Result<VelocitySeries> {
    let mut lines = Lines::new(text);
    check_magic(&mut lines, VEL_MAGIC)?;
    let hdr = read_grid_header(&mut lines)?;
    if hdr.nt == 0 {
        return Err(Error::parse(lines.last, "velocity file needs at least one slice"));
    }
    let total = 2 * hdr.nt * hdr.grid.ny();
    let mut rows = 0;
    let mut u_ms = Vec::with_capacity(hdr.nt);
    let mut v_ms = Vec::with_capacity(hdr.nt);
    for k in 0..hdr.nt {
        u_ms.push(read_block(&mut lines, &hdr.grid, k, total, &mut rows, "u_east slice")?);
        v_ms.push(read_block(&mut lines, &hdr.grid, k, total, &mut rows, "v_north slice")?);
    }
    expect_end(&mut lines, total)?;
    Ok(VelocitySeries {
        grid: hdr.grid,
        t0: hdr.t0,
        dt: hdr.dt,
        u_ms,
        v_ms,
    })
}

pub fn write_velocity(vel: &VelocitySeries, path: &Path) -> Result<()> {
    std::fs::write(path, format_velocity(vel))?;
    Ok(())
}

pub fn read_velocity(path: &Path) -> Result<VelocitySeries> {
    parse_velocity(&std::fs::read_to_string(path)?)
}

fn write_dense(out: &mut String, tag: &str, m: &DMatrix<f64>) {
    let _ = writeln!(out, "{tag} dense {} {}", m.nrows(), m.ncols());
    for i in 0..m.nrows() {
        let row: Vec<String> = (0..m.ncols()).map(|j| format!("{}", m[(i, j)])).collect();
        let _ = writeln!(out, "{}", row.join(" "));
    }
}

fn write_operator(out: &mut String, tag: &str, op: &Operator) {
    match op {
        Operator::Dense(m) => write_dense(out, tag, m),
        Operator::Sparse(s) => {
            let _ = writeln!(out, "{tag} sparse {} {}", s.nrows(), s.nnz());
            for (i, j, v) in s.triplets() {
                let _ = writeln!(out, "{i} {j} {v}");
            }
        }
    }
}

fn read_dense_rows(lines: &mut Lines<'_>, rows: usize, cols: usize, tag: &str) -> Result<DMatrix<f64>> {
    let mut m = DMatrix::zeros(rows, cols);
    if cols == 0 {
        return Ok(m);
    }
    for i in 0..rows {
        let (ln, l) = lines.expect(&format!("{tag} row {i}"))?;
        let r = finite_row(ln, l, cols, &format!("{tag} row {i}"))?;
        for (j, v) in r.into_iter().enumerate() {
            m[(i, j)] = v;
        }
    }
    Ok(m)
}

/// Parses `<tag> none`, `<tag> dense r c` or `<tag> sparse n nnz` sections.
fn read_operator_section(lines: &mut Lines<'_>, tag: &str) -> Result<Option<Operator>> {
    let (ln, l) = lines.expect(&format!("'{tag}' section"))?;
    let parts: Vec<&str> = l.split_whitespace().collect();
    if parts.first() != Some(&tag) {
        return Err(Error::parse(ln, format!("expected section '{tag}', found '{l}'")));
    }
    match parts.get(1).copied() {
        Some("none") if parts.len() == 2 => Ok(None),
        Some("dense") if parts.len() == 4 => {
            let dims: Vec<usize> = tokens(ln, &parts[2..].join(" "), 2, tag)?;
            Ok(Some(Operator::Dense(read_dense_rows(lines, dims[0], dims[1], tag)?)))
        }
        Some("sparse") if parts.len() == 4 => {
            let dims: Vec<usize> = tokens(ln, &parts[2..].join(" "), 2, tag)?;
            let mut trip = Vec::with_capacity(dims[1]);
            for _ in 0..dims[1] {
                let (ln, l) = lines.expect(&format!("{tag} triplet"))?;
                let p: Vec<&str> = l.split_whitespace().collect();
                if p.len() != 3 {
                    return Err(Error::parse(ln, format!("expected 'row col value' in {tag}")));
                }
                let i: usize = p[0].parse().map_err(|_| Error::parse(ln, "bad row index"))?;
                let j: usize = p[1].parse().map_err(|_| Error::parse(ln, "bad column index"))?;
                let v = finite_row(ln, p[2], 1, tag)?[0];
                if i >= dims[0] || j >= dims[0] {
                    return Err(Error::parse(ln, format!("index out of range in {tag}")));
                }
                trip.push((i, j, v));
            }
            Ok(Some(Operator::Sparse(CsrMatrix::from_triplets(dims[0], dims[0], &trip)?)))
        }
        _ => Err(Error::parse(ln, format!("malformed '{tag}' section header '{l}'"))),
    }
}

/// `nino-ops 1`, then `kind <k>`, `lag_tau <days>`, and the sections
/// `drift`, `noise`, `s1`, `eof`, each `none`, `dense rows cols` followed by
/// rows, or (drift, s1) `sparse n nnz` followed by triplets.
pub fn format_operator_set(ops: &OperatorSet) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "{OPS_MAGIC} 1");
    let _ = writeln!(out, "kind {}", ops.kind.name());
    let _ = writeln!(out, "lag_tau {}", ops.lag_tau);
    write_operator(&mut out, "drift", &ops.a);
    write_dense(&mut out, "noise", ops.s.factor());
    match &ops.s1 {
        Some(s1) => write_operator(&mut out, "s1", s1),
        None => out.push_str("s1 none\n"),
    }
    match &ops.eof {
        Some(e) => write_dense(&mut out, "eof", e),
        None => out.push_str("eof none\n"),
    }
    out
}

pub fn parse_operator_set(text: &str) -> Result<OperatorSet> {
    let mut lines = Lines::new(text);
    check_magic(&mut lines, OPS_MAGIC)?;
    let (ln, l) = lines.expect("kind line")?;
    let kind: ModelKind = l
        .strip_prefix("kind ")
        .ok_or_else(|| Error::parse(ln, "expected 'kind <additive|multiplicative|mixed>'"))?
        .trim()
        .parse()
        .map_err(|e: Error| Error::parse(ln, e.to_string()))?;
    let (ln, l) = lines.expect("lag_tau line")?;
    let lag_tau = l
        .strip_prefix("lag_tau ")
        .map(|t| finite_row(ln, t, 1, "lag_tau"))
        .ok_or_else(|| Error::parse(ln, "expected 'lag_tau <days>'"))??[0];
    let a = read_operator_section(&mut lines, "drift")?
        .ok_or_else(|| Error::parse(lines.last, "drift operator is required"))?;
    let s = match read_operator_section(&mut lines, "noise")? {
        Some(Operator::Dense(m)) => LowRankFactor::new(m)?,
        Some(Operator::Sparse(_)) => return Err(Error::parse(lines.last, "noise factor must be dense")),
        None => LowRankFactor::empty(a.dim()),
    };
    let s1 = read_operator_section(&mut lines, "s1")?;
    let eof = match read_operator_section(&mut lines, "eof")? {
        Some(Operator::Dense(m)) => Some(m),
        Some(Operator::Sparse(_)) => return Err(Error::parse(lines.last, "EOF basis must be dense")),
        None => None,
    };
    if let Some((ln, _)) = lines.next_line() {
        return Err(Error::parse(ln, "unexpected content after the eof section"));
    }
    let ops = OperatorSet {
        kind,
        a,
        s,
        s1,
        lag_tau,
        eof,
    };
    ops.validate()?;
    Ok(ops)
}

pub fn write_operator_set(ops: &OperatorSet, path: &Path) -> Result<()> {
    std::fs::write(path, format_operator_set(ops))?;
    Ok(())
}

pub fn read_operator_set(path: &Path) -> Result<OperatorSet> {
    parse_operator_set(&std::fs::read_to_string(path)?)
}

/// One recorded step of a mean/covariance-factor trajectory.
#[derive(Debug, Clone, PartialEq)]
pub struct FactorCheckpoint {
    pub step: usize,
    pub time: f64,
    pub mean: DVector<f64>,
    pub factor: LowRankFactor,
}

/// `nino-factors 1`, `count <K>`, then per checkpoint a line
/// `checkpoint <step> <time> <n> <r>`, one line with the `n` mean values and
/// `n` rows of the `r` factor columns (omitted when `r = 0`).
pub fn format_factor_checkpoints(cps: &[FactorCheckpoint]) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "{FACTORS_MAGIC} 1");
    let _ = writeln!(out, "count {}", cps.len());
    for c in cps {
        let z = c.factor.factor();
        let _ = writeln!(out, "checkpoint {} {} {} {}", c.step, c.time, z.nrows(), z.ncols());
        let mean: Vec<String> = c.mean.iter().map(|v| format!("{v}")).collect();
        let _ = writeln!(out, "{}", mean.join(" "));
        if z.ncols() > 0 {
            for i in 0..z.nrows() {
                let row: Vec<String> = (0..z.ncols()).map(|j| format!("{}", z[(i, j)])).collect();
                let _ = writeln!(out, "{}", row.join(" "));
            }
        }
    }
    out
}

pub fn parse_factor_checkpoints(text: &str) -> Result<Vec<FactorCheckpoint>> {
    let mut lines = Lines::new(text);
    check_magic(&mut lines, FACTORS_MAGIC)?;
    let (ln, l) = lines.expect("count line")?;
    let count: usize = l
        .strip_prefix("count ")
        .ok_or_else(|| Error::parse(ln, "expected 'count <K>'"))?
        .trim()
        .parse()
        .map_err(|_| Error::parse(ln, "bad checkpoint count"))?;
    let mut out = Vec::with_capacity(count);
    for _ in 0..count {
        let (ln, l) = lines.expect("checkpoint line")?;
        let rest = l
            .strip_prefix("checkpoint ")
            .ok_or_else(|| Error::parse(ln, "expected 'checkpoint <step> <time> <n> <r>'"))?;
        let p: Vec<&str> = rest.split_whitespace().collect();
        if p.len() != 4 {
            return Err(Error::parse(ln, "expected 'checkpoint <step> <time> <n> <r>'"));
        }
        let step: usize = p[0].parse().map_err(|_| Error::parse(ln, "bad step"))?;
        let time = finite_row(ln, p[1], 1, "checkpoint time")?[0];
        let n: usize = p[2].parse().map_err(|_| Error::parse(ln, "bad row count"))?;
        let r: usize = p[3].parse().map_err(|_| Error::parse(ln, "bad rank"))?;
        let (ln, l) = lines.expect("mean line")?;
        let mean = DVector::from_vec(finite_row(ln, l, n, "checkpoint mean")?);
        let z = read_dense_rows(&mut lines, n, r, "factor")?;
        out.push(FactorCheckpoint {
            step,
            time,
            mean,
            factor: LowRankFactor::new(z)?,
        });
    }
    if let Some((ln, _)) = lines.next_line() {
        return Err(Error::parse(ln, format!("more than the declared {count} checkpoints")));
    }
    Ok(out)
}

pub fn write_factor_checkpoints(cps: &[FactorCheckpoint], path: &Path) -> Result<()> {
    std::fs::write(path, format_factor_checkpoints(cps))?;
    Ok(())
}

pub fn read_factor_checkpoints(path: &Path) -> Result<Vec<FactorCheckpoint>> {
    parse_factor_checkpoints(&std::fs::read_to_string(path)?)
}

/// Analytic steady currents.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum VelocitySpec {
    Zero,
    /// Constant `(u, v)` in m/s.
    Uniform { u: f64, v: f64 },
    /// `u = U sin(pi xi) cos(pi zeta)`, `v = -U cos(pi xi) sin(pi zeta)` in
    /// m/s on normalized coordinates `xi, zeta` in `[0, 1]`.
    DoubleGyre { amplitude: f64 },
}

impl VelocitySpec {
    pub fn field(&self, grid: &Grid) -> Result<VelocityField> {
        let n = grid.len();
        let mut u = DVector::zeros(n);
        let mut v = DVector::zeros(n);
        let pi = std::f64::consts::PI;
        for j in 0..grid.ny() {
            for i in 0..grid.nx() {
                let k = grid.index(i, j);
                match *self {
                    VelocitySpec::Zero => {}
                    VelocitySpec::Uniform { u: uu, v: vv } => {
                        u[k] = uu;
                        v[k] = vv;
                    }
                    VelocitySpec::DoubleGyre { amplitude } => {
                        let xi = i as f64 / (grid.nx() - 1) as f64;
                        let zeta = j as f64 / (grid.ny() - 1) as f64;
                        u[k] = amplitude * (pi * xi).sin() * (pi * zeta).cos();
                        v[k] = -amplitude * (pi * xi).cos() * (pi * zeta).sin();
                    }
                }
            }
        }
        VelocityField::from_meters_per_second(*grid, &u, &v)
    }
}

/// Synthetic twin configuration.
#[derive(Debug, Clone, PartialEq)]
pub struct ScenarioConfig {
    pub grid: Grid,
    pub velocity: VelocitySpec,
    pub boundary: BoundaryRule,
    /// Damping `gamma` (1/day) in `A = transport - gamma I`.
    pub damping: f64,
    /// Kernel amplitude `Q` (degC^2/day).
    pub noise_amplitude: f64,
    /// Kernel length scale (degrees).
    pub kernel_length: f64,
    pub kl_modes: usize,
    /// Amplitude of a cosine bump used as the initial field (before spin-up).
    pub initial_amplitude: f64,
    pub spinup_days: f64,
    /// Snapshot spacing (days) and count.
    pub dt: f64,
    pub n_snapshots: usize,
    /// Integration steps per snapshot interval.
    pub substeps: usize,
    pub t0: f64,
    pub seed: u64,
}

impl ScenarioConfig {
    pub fn new(grid: Grid, seed: u64) -> Self {
        Self {
            grid,
            velocity: VelocitySpec::DoubleGyre { amplitude: 0.5 },
            boundary: BoundaryRule::ZeroInflowDirichlet,
            damping: 0.1,
            noise_amplitude: 0.05,
            kernel_length: 20.0,
            kl_modes: 10,
            initial_amplitude: 0.0,
            spinup_days: 50.0,
            dt: 1.0,
            n_snapshots: 500,
            substeps: 2,
            t0: 0.0,
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.dt > 0.0) || self.substeps == 0 {
            return Err(Error::arg("snapshot spacing and substeps must be positive"));
        }
        if self.n_snapshots < 3 {
            return Err(Error::arg("at least 3 snapshots required"));
        }
        if !(self.damping >= 0.0) || !(self.noise_amplitude >= 0.0) || !(self.spinup_days >= 0.0) {
            return Err(Error::arg("damping, noise amplitude and spin-up must be nonnegative"));
        }
        if self.kl_modes > self.grid.len() {
            return Err(Error::arg("more KL modes than grid nodes"));
        }
        Ok(())
    }

    pub fn kernel(&self) -> KernelSpec {
        KernelSpec {
            amplitude: self.noise_amplitude,
            length_scale: self.kernel_length,
        }
    }
}

/// Ground-truth additive operators of a scenario: upwind transport minus
/// damping, and KL noise modes. Fails if the drift is not stable.
pub fn scenario_operators(cfg: &ScenarioConfig, vel: &VelocityField) -> Result<OperatorSet> {
    let transport = assemble_transport_operator(&cfg.grid, vel, cfg.boundary)?;
    let a = Operator::Sparse(transport.scale_add_identity(1.0, -cfg.damping));
    let abscissa = a.spectral_abscissa()?;
    if abscissa >= 0.0 {
        return Err(Error::Unstable(abscissa));
    }
    let s = if cfg.kl_modes == 0 || cfg.noise_amplitude == 0.0 {
        LowRankFactor::empty(cfg.grid.len())
    } else {
        kl_eigenpairs(&cfg.grid, &cfg.kernel(), cfg.kl_modes)?.noise_factor()
    };
    OperatorSet::additive(a, s)
}

fn initial_bump(grid: &Grid, amplitude: f64) -> DVector<f64> {
    let pi = std::f64::consts::PI;
    DVector::from_fn(grid.len(), |k, _| {
        let (i, j) = (k % grid.nx(), k / grid.nx());
        let xi = i as f64 / (grid.nx() - 1) as f64;
        let zeta = j as f64 / (grid.ny() - 1) as f64;
        amplitude * (pi * xi).sin() * (pi * zeta).sin()
    })
}

/// Generated observations, currents and ground truth.
#[derive(Debug, Clone)]
pub struct Scenario {
    pub series: AnomalySeries,
    pub velocity: VelocityField,
    pub truth: OperatorSet,
}

/// Build the true operators and simulate one long additive-noise path
/// (Taylor 1.5, `substeps` per snapshot) after a spin-up period.
pub fn generate_synthetic_scenario(cfg: &ScenarioConfig) -> Result<Scenario> {
    cfg.validate()?;
    let velocity = cfg.velocity.field(&cfg.grid)?;
    let truth = scenario_operators(cfg, &velocity)?;
    let h = cfg.dt / cfg.substeps as f64;
    let mut rng = path_rng(cfg.seed, 0);
    let mut x = initial_bump(&cfg.grid, cfg.initial_amplitude);
    let spin = (cfg.spinup_days / h).round() as usize;
    if spin > 0 {
        x = simulate_path(&truth, &x, h, spin, Scheme::Taylor15, &mut rng)?
            .pop()
            .expect("nonempty path");
    }
    let mut data = DMatrix::zeros(cfg.grid.len(), cfg.n_snapshots);
    data.column_mut(0).copy_from(&x);
    for k in 1..cfg.n_snapshots {
        x = simulate_path(&truth, &x, h, cfg.substeps, Scheme::Taylor15, &mut rng)?
            .pop()
            .expect("nonempty path");
        data.column_mut(k).copy_from(&x);
    }
    let series = AnomalySeries::uniform(cfg.grid, cfg.t0, cfg.dt, data)?;
    Ok(Scenario {
        series,
        velocity,
        truth,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small_series() -> AnomalySeries {
        let g = Grid::new(3, 2, 160.0, 200.0, -5.0, 5.0).unwrap();
        let data = DMatrix::from_fn(6, 4, |i, k| 0.1 * i as f64 - 0.37 * k as f64 + 1e-17);
        AnomalySeries::uniform(g, 12.5, 0.5, data).unwrap()
    }

    #[test]
    fn grid_series_roundtrip() {
        let s = small_series();
        let back = parse_grid_series(&format_grid_series(&s)).unwrap();
        assert_eq!(back, s);
    }

    #[test]
    fn truncated_file_names_row_counts() {
        let text = format_grid_series(&small_series());
        let cut: Vec<&str> = text.lines().take(4 + 5).collect();
        let err = parse_grid_series(&cut.join("\n")).unwrap_err().to_string();
        assert!(err.contains("expected 8 rows, found 5"), "{err}");
    }

    #[test]
    fn version_two_is_unsupported() {
        let text = format_grid_series(&small_series()).replacen("ssta-grid 1", "ssta-grid 2", 1);
        assert!(matches!(parse_grid_series(&text), Err(Error::UnsupportedVersion(_))));
    }

    #[test]
    fn bad_token_reports_line() {
        let mut lines: Vec<String> = format_grid_series(&small_series()).lines().map(String::from).collect();
        lines[6] = "1 nan 2".into();
        match parse_grid_series(&lines.join("\n")) {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 7),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn velocity_roundtrip() {
        let g = Grid::new(4, 3, 30.0, 290.0, -30.0, 30.0).unwrap();
        let f = VelocitySpec::DoubleGyre { amplitude: 0.4 }.field(&g).unwrap();
        let vs = VelocitySeries::steady(&f).unwrap();
        let back = parse_velocity(&format_velocity(&vs)).unwrap();
        assert_eq!(back, vs);
        let mf = back.mean_field().unwrap();
        for (a, b) in mf.u_east().iter().zip(f.u_east().iter()) {
            assert!((a - b).abs() <= 1e-12 * b.abs().max(1.0));
        }
    }

    #[test]
    fn operator_set_roundtrip() {
        let g = Grid::new(3, 3, 0.0, 2.0, 0.0, 2.0).unwrap();
        let cfg = ScenarioConfig {
            kl_modes: 2,
            ..ScenarioConfig::new(g, 1)
        };
        let vel = cfg.velocity.field(&g).unwrap();
        let mut ops = scenario_operators(&cfg, &vel).unwrap();
        ops.lag_tau = 1.5;
        let back = parse_operator_set(&format_operator_set(&ops)).unwrap();
        assert_eq!(back.a, ops.a);
        assert_eq!(back.s, ops.s);
        assert_eq!(back.kind, ops.kind);
        assert_eq!(back.lag_tau, 1.5);
        assert!(back.s1.is_none() && back.eof.is_none());
    }

    #[test]
    fn checkpoint_roundtrip() {
        let cps = vec![
            FactorCheckpoint {
                step: 0,
                time: 0.0,
                mean: DVector::from_vec(vec![1.0, 2.0]),
                factor: LowRankFactor::empty(2),
            },
            FactorCheckpoint {
                step: 4,
                time: 2.0,
                mean: DVector::from_vec(vec![0.5, -0.25]),
                factor: LowRankFactor::new(DMatrix::from_vec(2, 2, vec![1.0, 0.1, 0.0, 1e-300])).unwrap(),
            },
        ];
        assert_eq!(parse_factor_checkpoints(&format_factor_checkpoints(&cps)).unwrap(), cps);
    }

    #[test]
    fn noise_free_scenario_decays() {
        let g = Grid::new(4, 3, 0.0, 3.0, 0.0, 2.0).unwrap();
        let cfg = ScenarioConfig {
            velocity: VelocitySpec::Zero,
            damping: 1.0,
            noise_amplitude: 0.0,
            initial_amplitude: 2.0,
            spinup_days: 0.0,
            n_snapshots: 6,
            dt: 0.5,
            substeps: 10,
            ..ScenarioConfig::new(g, 9)
        };
        let sc = generate_synthetic_scenario(&cfg).unwrap();
        let d = sc.series.data();
        let h: f64 = 0.05;
        let per_step = 1.0 - h + 0.5 * h * h;
        for k in 1..6 {
            let ratio = d.column(k).norm() / d.column(0).norm();
            assert!((ratio - per_step.powi(10 * k as i32)).abs() < 1e-12);
            assert!((ratio - (-0.5 * k as f64).exp()).abs() < 1e-3);
        }
    }

    #[test]
    fn generation_is_seeded() {
        let g = Grid::new(4, 3, 0.0, 30.0, -10.0, 10.0).unwrap();
        let cfg = ScenarioConfig {
            n_snapshots: 20,
            spinup_days: 5.0,
            kl_modes: 4,
            ..ScenarioConfig::new(g, 42)
        };
        let a = generate_synthetic_scenario(&cfg).unwrap();
        let b = generate_synthetic_scenario(&cfg).unwrap();
        assert_eq!(a.series, b.series);
        let c = generate_synthetic_scenario(&ScenarioConfig { seed: 43, ..cfg }).unwrap();
        assert_ne!(a.series, c.series);
    }

    #[test]
    fn undamped_closed_basin_is_rejected() {
        let g = Grid::new(4, 3, 0.0, 3.0, 0.0, 2.0).unwrap();
        let cfg = ScenarioConfig {
            velocity: VelocitySpec::Zero,
            damping: 0.0,
            ..ScenarioConfig::new(g, 1)
        };
        let vel = cfg.velocity.field(&g).unwrap();
        assert!(matches!(scenario_operators(&cfg, &vel), Err(Error::Unstable(_))));
    }
}
