//! Path simulation: Euler–Maruyama and the strong order 1.5 Itô–Taylor
//! scheme for linear drift with additive and/or linear multiplicative noise,
//! and seeded Monte Carlo ensembles.
//!
//! Noise channels are ordered with the scalar multiplicative channel first
//! (when the model has one) followed by one channel per column of the
//! additive factor. Per step and channel, with `xi1, xi2 ~ N(0, 1)`:
//!
//! ```text
//! dW = sqrt(h) xi1,   dZ = h^{3/2} (xi1 + xi2 / sqrt(3)) / 2
//! ```
//!
//! which gives `Var dZ = h^3/3` and `Cov(dW, dZ) = h^2/2`. Each path draws
//! from its own ChaCha8 stream (`seed`, stream = path index), so results do
//! not depend on how paths are scheduled across threads.
//!
//! For the mixed model the channels are advanced with independent
//! increments; the cross terms that would need Lévy areas between the
//! multiplicative and additive channels are not included.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::calibration::OperatorSet;
use crate::error::{Error, Result};
use crate::exec;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Scheme {
    EulerMaruyama,
    Taylor15,
}

impl std::str::FromStr for Scheme {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "euler" | "euler-maruyama" | "em" => Ok(Scheme::EulerMaruyama),
            "taylor15" | "taylor1.5" | "taylor" => Ok(Scheme::Taylor15),
            other => Err(Error::arg(format!("unknown path scheme '{other}'"))),
        }
    }
}

/// Wiener increments and iterated integrals `dZ = int int dW ds` for one
/// step, one entry per channel.
#[derive(Debug, Clone, PartialEq)]
pub struct NoiseIncrements {
    pub dw: Vec<f64>,
    pub dz: Vec<f64>,
}

impl NoiseIncrements {
    pub fn zeros(channels: usize) -> Self {
        Self {
            dw: vec![0.0; channels],
            dz: vec![0.0; channels],
        }
    }

    pub fn draw<R: Rng + ?Sized>(rng: &mut R, channels: usize, h: f64) -> Self {
        let sh = h.sqrt();
        let c = 0.5 * h * sh;
        let inv_sqrt3 = 1.0 / 3f64.sqrt();
        let mut out = Self::zeros(channels);
        for k in 0..channels {
            let xi1: f64 = rng.sample(StandardNormal);
            let xi2: f64 = rng.sample(StandardNormal);
            out.dw[k] = sh * xi1;
            out.dz[k] = c * (xi1 + xi2 * inv_sqrt3);
        }
        out
    }

    pub fn channels(&self) -> usize {
        self.dw.len()
    }
}

/// Number of noise channels of a model (see module docs for the order).
pub fn channel_count(ops: &OperatorSet) -> usize {
    usize::from(ops.s1.is_some()) + ops.s.rank()
}

/// Random stream of path `path` under `seed`.
pub fn path_rng(seed: u64, path: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(path);
    rng
}

fn check(ops: &OperatorSet, x: &DVector<f64>, h: f64, noise: &NoiseIncrements) -> Result<()> {
    if x.len() != ops.dim() {
        return Err(Error::dim(format!(
            "state has length {}, model dimension is {}",
            x.len(),
            ops.dim()
        )));
    }
    if !(h > 0.0) {
        return Err(Error::arg("step size must be positive"));
    }
    if noise.channels() != channel_count(ops) || noise.dz.len() != noise.dw.len() {
        return Err(Error::dim(format!(
            "{} noise channels supplied, model has {}",
            noise.channels(),
            channel_count(ops)
        )));
    }
    Ok(())
}

/// `x + h A x + S dW + S1 x dW1 (+ S2 dW2)`.
pub fn euler_maruyama_step(
    ops: &OperatorSet,
    x: &DVector<f64>,
    h: f64,
    noise: &NoiseIncrements,
) -> Result<DVector<f64>> {
    check(ops, x, h, noise)?;
    let mut out = x + ops.a.apply(x) * h;
    let mut ch = 0;
    if let Some(s1) = &ops.s1 {
        out.axpy(noise.dw[0], &s1.apply(x), 1.0);
        ch = 1;
    }
    if ops.s.rank() > 0 {
        let dw = DVector::from_column_slice(&noise.dw[ch..]);
        out += ops.s.factor() * dw;
    }
    Ok(out)
}

/// Strong order 1.5 Itô–Taylor step for linear drift and diffusion.
pub fn taylor15_step(
    ops: &OperatorSet,
    x: &DVector<f64>,
    h: f64,
    noise: &NoiseIncrements,
) -> Result<DVector<f64>> {
    check(ops, x, h, noise)?;
    let ax = ops.a.apply(x);
    let aax = ops.a.apply(&ax);
    let mut out = x + &ax * h + aax * (0.5 * h * h);
    let mut ch = 0;
    if let Some(s1) = &ops.s1 {
        let (dw, dz) = (noise.dw[0], noise.dz[0]);
        let bx = s1.apply(x);
        let abx = ops.a.apply(&bx);
        let bax = s1.apply(&ax);
        let bbx = s1.apply(&bx);
        let bbbx = s1.apply(&bbx);
        out.axpy(dw, &bx, 1.0);
        out.axpy(dz, &abx, 1.0);
        out.axpy(h * dw - dz, &bax, 1.0);
        out.axpy(0.5 * (dw * dw - h), &bbx, 1.0);
        out.axpy(0.5 * (dw * dw / 3.0 - h) * dw, &bbbx, 1.0);
        ch = 1;
    }
    if ops.s.rank() > 0 {
        let dw = DVector::from_column_slice(&noise.dw[ch..]);
        let dz = DVector::from_column_slice(&noise.dz[ch..]);
        let s = ops.s.factor();
        let sdw = s * dw;
        let sdz = s * dz;
        out += sdw + ops.a.apply(&sdz);
    }
    Ok(out)
}

pub fn step(
    scheme: Scheme,
    ops: &OperatorSet,
    x: &DVector<f64>,
    h: f64,
    noise: &NoiseIncrements,
) -> Result<DVector<f64>> {
    match scheme {
        Scheme::EulerMaruyama => euler_maruyama_step(ops, x, h, noise),
        Scheme::Taylor15 => taylor15_step(ops, x, h, noise),
    }
}

/// Single trajectory `x_0, ..., x_{n_steps}` drawn from `rng`.
pub fn simulate_path<R: Rng + ?Sized>(
    ops: &OperatorSet,
    x0: &DVector<f64>,
    h: f64,
    n_steps: usize,
    scheme: Scheme,
    rng: &mut R,
) -> Result<Vec<DVector<f64>>> {
    let channels = channel_count(ops);
    let mut out = Vec::with_capacity(n_steps + 1);
    out.push(x0.clone());
    for k in 0..n_steps {
        let noise = NoiseIncrements::draw(rng, channels, h);
        let next = step(scheme, ops, &out[k], h, &noise)?;
        out.push(next);
    }
    Ok(out)
}

/// Which ensemble covariances to accumulate.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum CovarianceRecording {
    #[default]
    None,
    Final,
    /// Every `k`-th step and the final step.
    Stride(usize),
}

#[derive(Debug, Clone)]
pub struct EnsembleOptions {
    pub covariance: CovarianceRecording,
    pub keep_paths: bool,
    /// Paths per work item; part of the reduction order, so changing it may
    /// change results in the last bits.
    pub chunk: usize,
}

impl Default for EnsembleOptions {
    fn default() -> Self {
        Self {
            covariance: CovarianceRecording::None,
            keep_paths: false,
            chunk: 64,
        }
    }
}

/// Per-step ensemble summaries.
#[derive(Debug, Clone)]
pub struct PathEnsemble {
    pub n_paths: usize,
    pub times: Vec<f64>,
    pub mean: Vec<DVector<f64>>,
    /// Pointwise sample variance (divisor `n - 1`; zero for one path).
    pub variance: Vec<DVector<f64>>,
    /// `(step, sample covariance)` at the recorded steps.
    pub covariance: Vec<(usize, DMatrix<f64>)>,
    pub paths: Option<Vec<Vec<DVector<f64>>>>,
}

impl PathEnsemble {
    pub fn final_covariance(&self) -> Option<&DMatrix<f64>> {
        self.covariance.last().map(|(_, c)| c)
    }
}

struct ChunkSums {
    sum: Vec<DVector<f64>>,
    sum_sq: Vec<DVector<f64>>,
    outer: Vec<DMatrix<f64>>,
    paths: Vec<Vec<DVector<f64>>>,
}

#[allow(clippy::too_many_arguments)]
pub fn run_ensemble(
    ops: &OperatorSet,
    x0: &DVector<f64>,
    h: f64,
    n_steps: usize,
    n_paths: usize,
    scheme: Scheme,
    seed: u64,
    opts: &EnsembleOptions,
) -> Result<PathEnsemble> {
    if n_paths == 0 {
        return Err(Error::arg("ensemble needs at least one path"));
    }
    if opts.chunk == 0 {
        return Err(Error::arg("chunk size must be positive"));
    }
    if x0.len() != ops.dim() {
        return Err(Error::dim("initial state length differs from model dimension"));
    }
    if !(h > 0.0) {
        return Err(Error::arg("step size must be positive"));
    }
    let n = ops.dim();
    let cov_steps: Vec<usize> = match opts.covariance {
        CovarianceRecording::None => vec![],
        CovarianceRecording::Final => vec![n_steps],
        CovarianceRecording::Stride(k) if k > 0 => (0..=n_steps)
            .filter(|s| s % k == 0 || *s == n_steps)
            .collect(),
        CovarianceRecording::Stride(_) => return Err(Error::arg("covariance stride must be positive")),
    };
    let channels = channel_count(ops);
    let n_chunks = n_paths.div_ceil(opts.chunk);

    let chunks = exec::map_indexed(n_chunks, |c| -> Result<ChunkSums> {
        let mut acc = ChunkSums {
            sum: vec![DVector::zeros(n); n_steps + 1],
            sum_sq: vec![DVector::zeros(n); n_steps + 1],
            outer: vec![DMatrix::zeros(n, n); cov_steps.len()],
            paths: Vec::new(),
        };
        let lo = c * opts.chunk;
        let hi = (lo + opts.chunk).min(n_paths);
        for p in lo..hi {
            let mut rng = path_rng(seed, p as u64);
            let mut x = x0.clone();
            let mut kept = opts.keep_paths.then(|| Vec::with_capacity(n_steps + 1));
            let mut next_cov = 0;
            for k in 0..=n_steps {
                if k > 0 {
                    let noise = NoiseIncrements::draw(&mut rng, channels, h);
                    x = step(scheme, ops, &x, h, &noise)?;
                }
                acc.sum[k] += &x;
                acc.sum_sq[k] += x.component_mul(&x);
                if next_cov < cov_steps.len() && cov_steps[next_cov] == k {
                    acc.outer[next_cov].ger(1.0, &x, &x, 1.0);
                    next_cov += 1;
                }
                if let Some(v) = kept.as_mut() {
                    v.push(x.clone());
                }
            }
            if let Some(v) = kept {
                acc.paths.push(v);
            }
        }
        Ok(acc)
    });

    let mut sum = vec![DVector::zeros(n); n_steps + 1];
    let mut sum_sq = vec![DVector::zeros(n); n_steps + 1];
    let mut outer = vec![DMatrix::zeros(n, n); cov_steps.len()];
    let mut paths = opts.keep_paths.then(Vec::new);
    for chunk in chunks {
        let chunk = chunk?;
        for k in 0..=n_steps {
            sum[k] += &chunk.sum[k];
            sum_sq[k] += &chunk.sum_sq[k];
        }
        for (o, c) in outer.iter_mut().zip(&chunk.outer) {
            *o += c;
        }
        if let Some(p) = paths.as_mut() {
            p.extend(chunk.paths);
        }
    }

    let np = n_paths as f64;
    let denom = if n_paths > 1 { np - 1.0 } else { 1.0 };
    let mean: Vec<DVector<f64>> = sum.iter().map(|s| s / np).collect();
    let variance = sum_sq
        .iter()
        .zip(&mean)
        .map(|(sq, m)| {
            if n_paths == 1 {
                DVector::zeros(n)
            } else {
                ((sq - m.component_mul(m) * np) / denom).map(|v| v.max(0.0))
            }
        })
        .collect();
    let covariance = cov_steps
        .iter()
        .zip(outer)
        .map(|(&k, o)| {
            let m = &mean[k];
            let c = if n_paths == 1 {
                DMatrix::zeros(n, n)
            } else {
                (o - m * m.transpose() * np) / denom
            };
            (k, (&c + c.transpose()) * 0.5)
        })
        .collect();
    Ok(PathEnsemble {
        n_paths,
        times: (0..=n_steps).map(|k| k as f64 * h).collect(),
        mean,
        variance,
        covariance,
        paths,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::{LowRankFactor, Operator};
    use approx::assert_relative_eq;

    fn scalar_additive(a: f64, s: f64) -> OperatorSet {
        OperatorSet::additive(
            Operator::Dense(DMatrix::from_element(1, 1, a)),
            LowRankFactor::new(DMatrix::from_element(1, 1, s)).unwrap(),
        )
        .unwrap()
    }

    fn scalar_mult(a: f64, s1: f64) -> OperatorSet {
        OperatorSet::multiplicative(
            Operator::Dense(DMatrix::from_element(1, 1, a)),
            Operator::Dense(DMatrix::from_element(1, 1, s1)),
        )
        .unwrap()
    }

    #[test]
    fn increments_have_the_joint_law() {
        let h = 0.25;
        let mut rng = path_rng(7, 0);
        let n = 200_000;
        let (mut sw, mut sz, mut swz) = (0.0, 0.0, 0.0);
        for _ in 0..n {
            let d = NoiseIncrements::draw(&mut rng, 1, h);
            sw += d.dw[0] * d.dw[0];
            sz += d.dz[0] * d.dz[0];
            swz += d.dw[0] * d.dz[0];
        }
        let n = n as f64;
        assert!((sw / n / h - 1.0).abs() < 0.02);
        assert!((sz / n / (h.powi(3) / 3.0) - 1.0).abs() < 0.02);
        assert!((swz / n / (h * h / 2.0) - 1.0).abs() < 0.02);
    }

    #[test]
    fn zero_noise_steps() {
        let ops = scalar_additive(-0.5, 1.0);
        let x = DVector::from_element(1, 2.0);
        let z = NoiseIncrements::zeros(1);
        let em = euler_maruyama_step(&ops, &x, 0.1, &z).unwrap();
        assert_relative_eq!(em[0], 2.0 * (1.0 - 0.05));
        let t = taylor15_step(&ops, &x, 0.1, &z).unwrap();
        assert_relative_eq!(t[0], 2.0 * (1.0 - 0.05 + 0.5 * 0.0025), epsilon = 1e-15);
    }

    #[test]
    fn drift_free_additive_is_pure_increment() {
        let ops = scalar_additive(0.0, 3.0);
        let x = DVector::from_element(1, 1.0);
        let noise = NoiseIncrements {
            dw: vec![0.2],
            dz: vec![0.05],
        };
        for f in [euler_maruyama_step, taylor15_step] {
            assert_relative_eq!(f(&ops, &x, 0.1, &noise).unwrap()[0], 1.6, epsilon = 1e-15);
        }
    }

    #[test]
    fn multiplicative_euler_hand_formula() {
        let ops = scalar_mult(0.0, 1.0);
        let x = DVector::from_element(1, 1.5);
        let noise = NoiseIncrements {
            dw: vec![0.3],
            dz: vec![0.0],
        };
        let y = euler_maruyama_step(&ops, &x, 0.1, &noise).unwrap();
        assert_relative_eq!(y[0], 1.5 * 1.3, epsilon = 1e-15);
    }

    #[test]
    fn channel_mismatch_rejected() {
        let ops = scalar_additive(-1.0, 1.0);
        let x = DVector::from_element(1, 1.0);
        assert!(euler_maruyama_step(&ops, &x, 0.1, &NoiseIncrements::zeros(2)).is_err());
    }

    #[test]
    fn single_noiseless_path_is_deterministic_solve() {
        let ops = scalar_additive(-1.0, 0.0);
        let ens = run_ensemble(
            &ops,
            &DVector::from_element(1, 1.0),
            0.1,
            10,
            1,
            Scheme::EulerMaruyama,
            3,
            &EnsembleOptions::default(),
        )
        .unwrap();
        assert_relative_eq!(ens.mean[10][0], 0.9f64.powi(10), epsilon = 1e-14);
        assert_eq!(ens.variance[10][0], 0.0);
    }

    #[test]
    fn ensembles_are_reproducible_and_mode_independent() {
        let ops = scalar_mult(-0.3, 0.4);
        let x0 = DVector::from_element(1, 1.0);
        let opts = EnsembleOptions {
            covariance: CovarianceRecording::Final,
            chunk: 7,
            ..Default::default()
        };
        let run = || run_ensemble(&ops, &x0, 0.05, 20, 50, Scheme::Taylor15, 11, &opts).unwrap();
        let a = run();
        exec::set_mode(exec::Execution::Sequential);
        let b = run();
        exec::set_mode(exec::Execution::Parallel);
        assert_eq!(a.mean, b.mean);
        assert_eq!(a.covariance, b.covariance);
    }
}
