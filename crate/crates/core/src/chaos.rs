//! Stochastic Galerkin (Wiener chaos) solver.
//!
//! Spatially, the additive forcing is expanded in the Karhunen–Loève modes
//! of an exponential covariance kernel; the model's additive factor holds
//! the scaled modes `sqrt(lambda_j) phi_j` as columns. In time, white noise
//! is expanded on piecewise-constant windows: window `l` of width `w`
//! carries the standard normal `xi = (W(t_l + w) - W(t_l)) / sqrt(w)` and the
//! basis function `m_l(t) = 1/sqrt(w)` on the window. The random variables
//! are therefore (noise channel, window) pairs, one channel per additive
//! column plus one for a scalar multiplicative noise.
//!
//! The solution is expanded as `X = sum_alpha Y_alpha H_alpha(xi)` in
//! probabilists' Hermite products `H_alpha`, with `<H_alpha, H_alpha> =
//! alpha!`. Projecting the Itô equation gives
//!
//! ```text
//! Y_alpha' = A Y_alpha + sum_l m_l(t) c(l, alpha) S1 Y_{alpha - e_l}   (multiplicative)
//!          + m_l(t) sqrt(lambda_j) phi_j                    for alpha = e_(j,l)   (additive)
//! ```
//!
//! with `c = <xi_l H_{alpha-e_l} H_alpha> / <H_alpha, H_alpha> = 1` taken from
//! the triple-product tensor. Only the degree-raising part of the coupling
//! appears: Itô integrals act as Wick products, so the degree-lowering
//! (Stratonovich correction) terms of a plain random-ODE projection cancel.
//! The system is block lower triangular in the total degree and is solved
//! with Crank–Nicolson one degree at a time.

use std::collections::HashMap;

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;

use crate::calibration::{ModelKind, OperatorSet};
use crate::error::{Error, Result};
use crate::exec;
use crate::grid::{CrankNicolson, Grid};
use crate::linalg::{symeig, LowRankFactor, Operator};

/// Kernel `(x1, x2) -> Q exp(-|x1 - x2| / length_scale)`, distance in
/// degrees (Euclidean in lon-lat coordinates).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KernelSpec {
    pub amplitude: f64,
    pub length_scale: f64,
}

impl KernelSpec {
    pub fn new(amplitude: f64) -> Self {
        Self {
            amplitude,
            length_scale: 1.0,
        }
    }

    pub fn eval(&self, p: (f64, f64), q: (f64, f64)) -> f64 {
        let d = ((p.0 - q.0).powi(2) + (p.1 - q.1).powi(2)).sqrt();
        self.amplitude * (-d / self.length_scale).exp()
    }
}

/// Leading KL eigenpairs; `modes` columns are orthonormal under the
/// quadrature inner product `sum_i w_i f_i g_i`.
#[derive(Debug, Clone)]
pub struct KLBasis {
    pub values: Vec<f64>,
    pub modes: DMatrix<f64>,
    pub weights: Vec<f64>,
}

impl KLBasis {
    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// `[sqrt(lambda_1) phi_1 | ... ]`, the noise factor of the expansion.
    pub fn noise_factor(&self) -> LowRankFactor {
        let mut z = self.modes.clone();
        for (j, l) in self.values.iter().enumerate() {
            let scale = l.max(0.0).sqrt();
            z.column_mut(j).scale_mut(scale);
        }
        LowRankFactor::new(z).expect("finite modes")
    }

    /// Weighted inner products of the modes (identity up to round-off).
    pub fn gram(&self) -> DMatrix<f64> {
        let w = DMatrix::from_diagonal(&DVector::from_column_slice(&self.weights));
        self.modes.transpose() * w * &self.modes
    }
}

/// Nyström discretization of the kernel integral operator on the grid nodes
/// with trapezoidal cell weights.
pub fn kl_eigenpairs(grid: &Grid, kernel: &KernelSpec, count: usize) -> Result<KLBasis> {
    kl_eigenpairs_points(&grid.coordinates(), &grid.cell_weights(), kernel, count)
}

pub fn kl_eigenpairs_points(
    points: &[(f64, f64)],
    weights: &[f64],
    kernel: &KernelSpec,
    count: usize,
) -> Result<KLBasis> {
    let n = points.len();
    if weights.len() != n {
        return Err(Error::dim("one quadrature weight per point required"));
    }
    if count > n {
        return Err(Error::arg(format!("{count} KL modes requested on {n} points")));
    }
    if !(kernel.amplitude >= 0.0) || !(kernel.length_scale > 0.0) {
        return Err(Error::arg("kernel amplitude must be >= 0 and length scale > 0"));
    }
    if weights.iter().any(|w| !(*w > 0.0)) {
        return Err(Error::arg("quadrature weights must be positive"));
    }
    if kernel.amplitude == 0.0 {
        return Ok(KLBasis {
            values: vec![0.0; count],
            modes: weighted_unit_modes(weights, count),
            weights: weights.to_vec(),
        });
    }
    let sw: Vec<f64> = weights.iter().map(|w| w.sqrt()).collect();
    let rows = exec::map_indexed(n, |i| {
        (0..n)
            .map(|j| sw[i] * kernel.eval(points[i], points[j]) * sw[j])
            .collect::<Vec<f64>>()
    });
    let b = DMatrix::from_fn(n, n, |i, j| rows[i][j]);
    let eig = symeig::top_eigenpairs(&b, count)?;
    let lead = eig.values.first().copied().unwrap_or(0.0).max(0.0);
    if eig.min_seen < -1e-8 * lead {
        return Err(Error::Indefinite {
            min_eig: eig.min_seen,
            scale: lead,
            hint: "; the covariance kernel must be positive semidefinite",
        });
    }
    let mut modes = eig.vectors;
    for j in 0..count {
        for i in 0..n {
            modes[(i, j)] /= sw[i];
        }
        // fixed sign convention: largest-magnitude entry positive
        let imax = modes.column(j).iamax();
        if modes[(imax, j)] < 0.0 {
            modes.column_mut(j).neg_mut();
        }
    }
    Ok(KLBasis {
        values: eig.values.iter().map(|v| v.max(0.0)).collect(),
        modes,
        weights: weights.to_vec(),
    })
}

fn weighted_unit_modes(weights: &[f64], count: usize) -> DMatrix<f64> {
    let mut m = DMatrix::zeros(weights.len(), count);
    for j in 0..count {
        m[(j, j)] = 1.0 / weights[j].sqrt();
    }
    m
}

/// Multi-index in sparse form: `(variable, power)` pairs sorted by variable.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct MultiIndex(Vec<(u32, u8)>);

impl MultiIndex {
    pub fn zero() -> Self {
        MultiIndex(Vec::new())
    }

    pub fn from_dense(powers: &[usize]) -> Self {
        MultiIndex(
            powers
                .iter()
                .enumerate()
                .filter(|(_, p)| **p > 0)
                .map(|(v, p)| (v as u32, *p as u8))
                .collect(),
        )
    }

    pub fn degree(&self) -> usize {
        self.0.iter().map(|(_, p)| *p as usize).sum()
    }

    pub fn power(&self, var: usize) -> usize {
        self.0
            .iter()
            .find(|(v, _)| *v as usize == var)
            .map_or(0, |(_, p)| *p as usize)
    }

    pub fn entries(&self) -> &[(u32, u8)] {
        &self.0
    }

    /// `<H_alpha, H_alpha> = prod alpha_i!`
    pub fn norm(&self) -> f64 {
        self.0.iter().map(|(_, p)| factorial(*p as usize)).product()
    }

    /// `alpha - e_var`, or `None` if that power is zero.
    pub fn lowered(&self, var: usize) -> Option<MultiIndex> {
        let pos = self.0.iter().position(|(v, _)| *v as usize == var)?;
        let mut e = self.0.clone();
        if e[pos].1 == 1 {
            e.remove(pos);
        } else {
            e[pos].1 -= 1;
        }
        Some(MultiIndex(e))
    }
}

fn factorial(k: usize) -> f64 {
    (1..=k).map(|i| i as f64).product()
}

/// `E[He_a He_b He_c]` for probabilists' Hermite polynomials.
pub fn hermite_triple(a: usize, b: usize, c: usize) -> f64 {
    let total = a + b + c;
    if total % 2 == 1 {
        return 0.0;
    }
    let s = total / 2;
    if s < a || s < b || s < c {
        return 0.0;
    }
    factorial(a) * factorial(b) * factorial(c)
        / (factorial(s - a) * factorial(s - b) * factorial(s - c))
}

pub const MAX_BASIS_SIZE: usize = 1_000_000;

/// `(n + k)! / (n! k!)`, or an error above [`MAX_BASIS_SIZE`].
pub fn basis_size(n_vars: usize, degree: usize) -> Result<usize> {
    let mut c: u128 = 1;
    for i in 1..=degree as u128 {
        c = c * (n_vars as u128 + i) / i;
        if c > MAX_BASIS_SIZE as u128 {
            return Err(Error::arg(format!(
                "chaos basis with {n_vars} variables and degree {degree} exceeds {MAX_BASIS_SIZE} terms"
            )));
        }
    }
    Ok(c as usize)
}

/// Total-degree Hermite chaos basis in graded lexicographic order: by degree,
/// then lexicographically descending in the dense exponent vector, so
/// `(0,0), (1,0), (0,1), (2,0), (1,1), (0,2), ...`.
#[derive(Debug, Clone)]
pub struct ChaosBasis {
    n_vars: usize,
    degree: usize,
    indices: Vec<MultiIndex>,
    norms: Vec<f64>,
    lookup: HashMap<MultiIndex, usize>,
}

pub fn build_chaos_basis(n_vars: usize, degree: usize) -> Result<ChaosBasis> {
    if n_vars == 0 {
        return Err(Error::arg("chaos basis needs at least one random variable"));
    }
    let size = basis_size(n_vars, degree)?;
    let mut indices = Vec::with_capacity(size);
    for d in 0..=degree {
        // nondecreasing variable lists of length d in lexicographic order
        let mut vars = vec![0usize; d];
        loop {
            let mut idx: Vec<(u32, u8)> = Vec::new();
            for &v in &vars {
                match idx.last_mut() {
                    Some((lv, p)) if *lv as usize == v => *p += 1,
                    _ => idx.push((v as u32, 1)),
                }
            }
            indices.push(MultiIndex(idx));
            // advance
            let mut pos = d;
            while pos > 0 && vars[pos - 1] == n_vars - 1 {
                pos -= 1;
            }
            if pos == 0 {
                break;
            }
            let next = vars[pos - 1] + 1;
            for v in vars[pos - 1..].iter_mut() {
                *v = next;
            }
        }
    }
    debug_assert_eq!(indices.len(), size);
    let norms = indices.iter().map(|m| m.norm()).collect();
    let lookup = indices
        .iter()
        .enumerate()
        .map(|(i, m)| (m.clone(), i))
        .collect();
    Ok(ChaosBasis {
        n_vars,
        degree,
        indices,
        norms,
        lookup,
    })
}

impl ChaosBasis {
    pub fn len(&self) -> usize {
        self.indices.len()
    }
    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }
    pub fn n_vars(&self) -> usize {
        self.n_vars
    }
    pub fn degree(&self) -> usize {
        self.degree
    }
    pub fn index(&self, i: usize) -> &MultiIndex {
        &self.indices[i]
    }
    pub fn norms(&self) -> &[f64] {
        &self.norms
    }
    pub fn position(&self, m: &MultiIndex) -> Option<usize> {
        self.lookup.get(m).copied()
    }

    /// `<H_i H_j H_k>` as a product of univariate triple products.
    pub fn triple_product(&self, i: usize, j: usize, k: usize) -> f64 {
        let (a, b, c) = (&self.indices[i], &self.indices[j], &self.indices[k]);
        let mut vars: Vec<u32> = a
            .0
            .iter()
            .chain(&b.0)
            .chain(&c.0)
            .map(|(v, _)| *v)
            .collect();
        vars.sort_unstable();
        vars.dedup();
        vars.iter()
            .map(|&v| hermite_triple(a.power(v as usize), b.power(v as usize), c.power(v as usize)))
            .product()
    }

    /// Nonzero entries `(i, j, k, <H_i H_j H_k>)` with `i <= j <= k`.
    pub fn triple_tensor(&self) -> Result<Vec<(usize, usize, usize, f64)>> {
        let m = self.len();
        if m > 400 {
            return Err(Error::arg(format!(
                "dense triple-product enumeration limited to 400 terms (basis has {m})"
            )));
        }
        let mut out = Vec::new();
        for i in 0..m {
            for j in i..m {
                for k in j..m {
                    let v = self.triple_product(i, j, k);
                    if v != 0.0 {
                        out.push((i, j, k, v));
                    }
                }
            }
        }
        Ok(out)
    }

    /// `sum_alpha coeff_alpha H_alpha(xi)` for scalar coefficients.
    /// `H_alpha(xi)` for every basis element, in basis order.
    pub fn hermite_values(&self, xi: &[f64]) -> Result<Vec<f64>> {
        if xi.len() < self.n_vars() {
            return Err(Error::dim("fewer variable values than basis variables"));
        }
        let mut cache: HashMap<(u32, u8), f64> = HashMap::new();
        Ok(self
            .indices
            .iter()
            .map(|m| {
                m.0.iter()
                    .map(|&(v, p)| *cache.entry((v, p)).or_insert_with(|| hermite(p as usize, xi[v as usize])))
                    .product()
            })
            .collect())
    }

    pub fn evaluate(&self, xi: &[f64], coeff: &[f64]) -> f64 {
        let mut cache: HashMap<(u32, u8), f64> = HashMap::new();
        let mut total = 0.0;
        for (m, c) in self.indices.iter().zip(coeff) {
            if *c == 0.0 {
                continue;
            }
            let mut h = 1.0;
            for &(v, p) in &m.0 {
                h *= *cache
                    .entry((v, p))
                    .or_insert_with(|| hermite(p as usize, xi[v as usize]));
            }
            total += c * h;
        }
        total
    }
}

/// Probabilists' Hermite polynomial `He_n(x)`.
pub fn hermite(n: usize, x: f64) -> f64 {
    let (mut h0, mut h1) = (1.0, x);
    if n == 0 {
        return h0;
    }
    for k in 1..n {
        let h2 = x * h1 - k as f64 * h0;
        h0 = h1;
        h1 = h2;
    }
    h1
}

/// Truncation and temporal resolution of the Galerkin expansion.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct GalerkinSpec {
    /// Maximum total polynomial degree `K`.
    pub degree: usize,
    /// Time steps per noise window.
    pub window_steps: usize,
}

impl Default for GalerkinSpec {
    fn default() -> Self {
        Self {
            degree: 1,
            window_steps: 1,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Channel {
    Multiplicative,
    Additive(usize),
}

#[derive(Debug, Clone, Copy)]
struct Variable {
    window: usize,
    channel: Channel,
}

/// Per-block couplings of the assembled system.
#[derive(Debug, Clone)]
struct Block {
    /// First step whose interval lies inside every window the block uses;
    /// the block is identically zero before it.
    active_from: usize,
    /// `(lower block, window, coefficient)` of `S1 Y_lower` terms.
    coupling: Vec<(usize, usize, f64)>,
    /// `(additive column, window)` of the constant forcing, degree-1 only.
    forcing: Option<(usize, usize)>,
}

/// Deterministic block system for the chaos coefficients.
#[derive(Debug, Clone)]
pub struct ChaosSystem {
    a: Operator,
    s1: Option<Operator>,
    forcing: DMatrix<f64>,
    basis: ChaosBasis,
    blocks: Vec<Block>,
    /// Block ranges `[start, end)` of equal total degree, ascending.
    degree_ranges: Vec<(usize, usize)>,
    h: f64,
    n_steps: usize,
    window_steps: usize,
}

impl ChaosSystem {
    pub fn basis(&self) -> &ChaosBasis {
        &self.basis
    }
    pub fn block_count(&self) -> usize {
        self.basis.len()
    }
    pub fn dim(&self) -> usize {
        self.a.dim()
    }
    pub fn n_windows(&self) -> usize {
        self.n_steps.div_ceil(self.window_steps)
    }
    pub fn n_steps(&self) -> usize {
        self.n_steps
    }
    pub fn step_size(&self) -> f64 {
        self.h
    }
}

/// Assemble the Galerkin system of a model over `n_steps` steps of size `h`.
/// The additive KL modes are the columns of `ops.s`.
pub fn assemble_galerkin_system(
    ops: &OperatorSet,
    h: f64,
    n_steps: usize,
    spec: &GalerkinSpec,
) -> Result<ChaosSystem> {
    ops.validate()?;
    if !(h > 0.0) {
        return Err(Error::arg("step size must be positive"));
    }
    if spec.window_steps == 0 {
        return Err(Error::arg("window must span at least one step"));
    }
    if n_steps == 0 {
        return Err(Error::arg("at least one step required"));
    }
    let n_windows = n_steps.div_ceil(spec.window_steps);
    let n_add = ops.s.rank();
    let mult = ops.kind != ModelKind::Additive && ops.s1.is_some();
    let mut variables = Vec::new();
    for window in 0..n_windows {
        if mult {
            variables.push(Variable {
                window,
                channel: Channel::Multiplicative,
            });
        }
        for j in 0..n_add {
            variables.push(Variable {
                window,
                channel: Channel::Additive(j),
            });
        }
    }
    let basis = if variables.is_empty() {
        // noise-free model: only the mean block
        build_chaos_basis(1, 0)?
    } else {
        build_chaos_basis(variables.len(), spec.degree)?
    };

    let mut blocks = Vec::with_capacity(basis.len());
    for (i, alpha) in basis.indices.iter().enumerate() {
        let latest_window = alpha
            .0
            .iter()
            .map(|(v, _)| variables[*v as usize].window)
            .max();
        let active_from = latest_window.map_or(0, |w| w * spec.window_steps);
        let mut coupling = Vec::new();
        let mut forcing = None;
        for &(v, _) in &alpha.0 {
            let var = variables[v as usize];
            match var.channel {
                Channel::Multiplicative => {
                    let lower = alpha.lowered(v as usize).expect("power > 0");
                    let j = basis.position(&lower).expect("lower index in basis");
                    let e = basis
                        .position(&MultiIndex(vec![(v, 1)]))
                        .expect("degree-1 index in basis");
                    let c = basis.triple_product(e, j, i) / basis.norms[i];
                    coupling.push((j, var.window, c));
                }
                Channel::Additive(col) => {
                    if alpha.degree() == 1 {
                        forcing = Some((col, var.window));
                    }
                }
            }
        }
        blocks.push(Block {
            active_from,
            coupling,
            forcing,
        });
    }
    let mut degree_ranges = Vec::new();
    let mut start = 0;
    for i in 1..=basis.len() {
        if i == basis.len() || basis.indices[i].degree() != basis.indices[start].degree() {
            degree_ranges.push((start, i));
            start = i;
        }
    }
    Ok(ChaosSystem {
        a: ops.a.clone(),
        s1: if mult { ops.s1.clone() } else { None },
        forcing: ops.s.factor().clone(),
        basis,
        blocks,
        degree_ranges,
        h,
        n_steps,
        window_steps: spec.window_steps,
    })
}

/// Chaos solution: pointwise mean and variance at every step, plus full
/// coefficient sets at the recorded steps.
#[derive(Debug, Clone)]
pub struct ChaosTrajectory {
    pub times: Vec<f64>,
    pub mean: Vec<DVector<f64>>,
    pub variance: Vec<DVector<f64>>,
    pub snapshots: Vec<(usize, Vec<DVector<f64>>)>,
}

/// Crank–Nicolson integration of the block system from `x0` (mode 0).
/// Coefficient snapshots are kept every `stride` steps (0 keeps none) and at
/// the final step when `stride > 0`.
pub fn solve_chaos(system: &ChaosSystem, x0: &DVector<f64>, stride: usize) -> Result<ChaosTrajectory> {
    let n = system.dim();
    let mut out = ChaosTrajectory {
        times: Vec::with_capacity(system.n_steps + 1),
        mean: Vec::with_capacity(system.n_steps + 1),
        variance: Vec::with_capacity(system.n_steps + 1),
        snapshots: Vec::new(),
    };
    let h = system.h;
    solve_chaos_observed(system, x0, |k, coeff| {
        out.times.push(k as f64 * h);
        out.mean.push(coeff[0].clone());
        out.variance.push(if k == 0 { DVector::zeros(n) } else { variance_of(coeff, system.basis.norms()) });
        if stride > 0 && (k % stride == 0 || k == system.n_steps) {
            out.snapshots.push((k, coeff.to_vec()));
        }
    })?;
    Ok(out)
}

/// Run the Crank–Nicolson block integration, handing the full coefficient
/// set to `observer` after every step (and once for the initial state, step 0).
pub fn solve_chaos_observed(
    system: &ChaosSystem,
    x0: &DVector<f64>,
    mut observer: impl FnMut(usize, &[DVector<f64>]),
) -> Result<()> {
    let n = system.dim();
    if x0.len() != n {
        return Err(Error::dim("initial state length differs from system size"));
    }
    let cn = CrankNicolson::new(&system.a, system.h)?;
    let h = system.h;
    let m_window = 1.0 / (system.window_steps as f64 * h).sqrt();
    let nb = system.block_count();
    let mut cur: Vec<DVector<f64>> = vec![DVector::zeros(n); nb];
    cur[0] = x0.clone();
    // S1 Y for every block at the current level, reused as the old-level term
    let apply_s1 = |y: &DVector<f64>| system.s1.as_ref().map(|s| s.apply(y));
    let mut s1_cur: Vec<Option<DVector<f64>>> = vec![None; nb];
    if system.s1.is_some() {
        s1_cur[0] = apply_s1(&cur[0]);
    }

    observer(0, &cur);

    for step in 0..system.n_steps {
        let window = step / system.window_steps;
        let mut next: Vec<DVector<f64>> = vec![DVector::zeros(n); nb];
        let mut s1_next: Vec<Option<DVector<f64>>> = vec![None; nb];
        for &(lo, hi) in &system.degree_ranges {
            let level = &mut next[lo..hi];
            let lower_s1 = &s1_next[..lo];
            let cur_ref = &cur;
            let s1_cur_ref = &s1_cur;
            exec::for_each_mut(level, |off, y| {
                let b = lo + off;
                let block = &system.blocks[b];
                if step < block.active_from {
                    return;
                }
                let mut rhs = cn.apply_explicit(&cur_ref[b]);
                if let Some((col, w)) = block.forcing {
                    if w == window {
                        rhs.axpy(h * m_window, &system.forcing.column(col), 1.0);
                    }
                }
                for &(j, w, c) in &block.coupling {
                    if w != window {
                        continue;
                    }
                    let f = 0.5 * h * m_window * c;
                    if let Some(old) = &s1_cur_ref[j] {
                        rhs.axpy(f, old, 1.0);
                    }
                    if let Some(new) = &lower_s1[j] {
                        rhs.axpy(f, new, 1.0);
                    }
                }
                cn.solve_implicit(&mut rhs);
                *y = rhs;
            });
            if system.s1.is_some() {
                let computed = exec::map_indexed(hi - lo, |off| {
                    let b = lo + off;
                    if step < system.blocks[b].active_from {
                        None
                    } else {
                        apply_s1(&next[b])
                    }
                });
                for (off, v) in computed.into_iter().enumerate() {
                    s1_next[lo + off] = v;
                }
            }
        }
        cur = next;
        s1_cur = s1_next;
        observer(step + 1, &cur);
    }
    Ok(())
}

fn variance_of(coeff: &[DVector<f64>], norms: &[f64]) -> DVector<f64> {
    let n = coeff[0].len();
    let mut v = DVector::zeros(n);
    for (c, norm) in coeff.iter().zip(norms).skip(1) {
        for i in 0..n {
            v[i] += norm * c[i] * c[i];
        }
    }
    v
}

/// Mean, variance and a realization sampler from one coefficient set.
#[derive(Debug, Clone)]
pub struct ChaosStatistics<'a> {
    pub mean: DVector<f64>,
    pub variance: DVector<f64>,
    coeff: &'a [DVector<f64>],
    basis: &'a ChaosBasis,
}

pub fn chaos_statistics<'a>(coeff: &'a [DVector<f64>], basis: &'a ChaosBasis) -> Result<ChaosStatistics<'a>> {
    if coeff.len() != basis.len() || coeff.is_empty() {
        return Err(Error::dim(format!(
            "{} coefficient blocks for a basis of {}",
            coeff.len(),
            basis.len()
        )));
    }
    Ok(ChaosStatistics {
        mean: coeff[0].clone(),
        variance: variance_of(coeff, basis.norms()),
        coeff,
        basis,
    })
}

impl ChaosStatistics<'_> {
    /// Evaluate the expansion at `xi` (one value per random variable).
    pub fn realization(&self, xi: &[f64]) -> Result<DVector<f64>> {
        if xi.len() < self.basis.n_vars() {
            return Err(Error::dim("fewer variable values than basis variables"));
        }
        let n = self.mean.len();
        let mut x = DVector::zeros(n);
        let mut cache: HashMap<(u32, u8), f64> = HashMap::new();
        for (m, c) in self.basis.indices.iter().zip(self.coeff) {
            let mut hval = 1.0;
            for &(v, p) in &m.0 {
                hval *= *cache
                    .entry((v, p))
                    .or_insert_with(|| hermite(p as usize, xi[v as usize]));
            }
            if hval != 0.0 {
                x.axpy(hval, c, 1.0);
            }
        }
        Ok(x)
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> DVector<f64> {
        let xi: Vec<f64> = (0..self.basis.n_vars())
            .map(|_| rng.sample(StandardNormal))
            .collect();
        self.realization(&xi).expect("sized to the basis")
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::path_sim::path_rng;
    use approx::assert_relative_eq;

    #[test]
    fn basis_sizes() {
        assert_eq!(build_chaos_basis(3, 2).unwrap().len(), 10);
        let b = build_chaos_basis(1, 1).unwrap();
        assert_eq!(b.len(), 2);
        assert_eq!(b.norms(), &[1.0, 1.0]);
        assert!(basis_size(2000, 3).is_err());
    }

    #[test]
    fn graded_lex_order() {
        let b = build_chaos_basis(2, 2).unwrap();
        let dense: Vec<[usize; 2]> = (0..b.len())
            .map(|i| [b.index(i).power(0), b.index(i).power(1)])
            .collect();
        assert_eq!(dense, vec![[0, 0], [1, 0], [0, 1], [2, 0], [1, 1], [0, 2]]);
    }

    #[test]
    fn hermite_triple_products() {
        assert_eq!(hermite_triple(1, 1, 2), 2.0);
        assert_eq!(hermite_triple(1, 1, 1), 0.0);
        assert_eq!(hermite_triple(0, 3, 3), 6.0);
        assert_eq!(hermite_triple(1, 1, 4), 0.0);
        let b = build_chaos_basis(2, 2).unwrap();
        for i in 0..b.len() {
            for j in 0..b.len() {
                let expected = if i == j { b.norms()[i] } else { 0.0 };
                assert_eq!(b.triple_product(0, i, j), expected);
            }
        }
    }

    #[test]
    fn kl_zero_amplitude_and_ordering() {
        let g = Grid::new(5, 4, 0.0, 4.0, 0.0, 3.0).unwrap();
        let z = kl_eigenpairs(&g, &KernelSpec::new(0.0), 3).unwrap();
        assert!(z.values.iter().all(|v| *v == 0.0));
        let kl = kl_eigenpairs(&g, &KernelSpec::new(2.0), 6).unwrap();
        assert!(kl.values.windows(2).all(|w| w[0] >= w[1]));
        assert!(kl.values.iter().all(|v| *v > 0.0));
        let gram = kl.gram();
        assert_relative_eq!(gram, DMatrix::identity(6, 6), epsilon = 1e-8);
    }

    #[test]
    fn deterministic_system_is_single_block() {
        let ops = OperatorSet::additive(
            Operator::Dense(DMatrix::from_element(1, 1, -1.0)),
            LowRankFactor::new(DMatrix::from_element(1, 1, 1.0)).unwrap(),
        )
        .unwrap();
        let spec = GalerkinSpec {
            degree: 0,
            window_steps: 1,
        };
        let sys = assemble_galerkin_system(&ops, 0.1, 10, &spec).unwrap();
        assert_eq!(sys.block_count(), 1);
        let tr = solve_chaos(&sys, &DVector::from_element(1, 1.0), 0).unwrap();
        let r: f64 = 0.95 / 1.05;
        assert_relative_eq!(tr.mean[10][0], r.powi(10), epsilon = 1e-14);
        assert_eq!(tr.variance[10][0], 0.0);
    }

    #[test]
    fn additive_forcing_only_in_degree_one_blocks() {
        let ops = OperatorSet::additive(
            Operator::Dense(-DMatrix::identity(2, 2)),
            LowRankFactor::new(DMatrix::identity(2, 2)).unwrap(),
        )
        .unwrap();
        let sys = assemble_galerkin_system(&ops, 0.1, 1, &GalerkinSpec::default()).unwrap();
        assert_eq!(sys.block_count(), 3);
        assert!(sys.blocks[0].forcing.is_none());
        assert_eq!(sys.blocks[1].forcing, Some((0, 0)));
        assert_eq!(sys.blocks[2].forcing, Some((1, 0)));
    }

    #[test]
    fn additive_scalar_variance_matches_lyapunov() {
        let ops = OperatorSet::additive(
            Operator::Dense(DMatrix::from_element(1, 1, -1.0)),
            LowRankFactor::new(DMatrix::from_element(1, 1, 2f64.sqrt())).unwrap(),
        )
        .unwrap();
        let h = 0.01;
        let sys = assemble_galerkin_system(&ops, h, 100, &GalerkinSpec::default()).unwrap();
        let tr = solve_chaos(&sys, &DVector::zeros(1), 0).unwrap();
        for k in (10..=100).step_by(10) {
            let t = k as f64 * h;
            assert!((tr.variance[k][0] - (1.0 - (-2.0 * t).exp())).abs() < 1e-3);
        }
    }

    #[test]
    fn multiplicative_scalar_moment_converges_in_degree() {
        let (a, s1, t) = (-1.0, 0.8, 1.0);
        let ops = OperatorSet::multiplicative(
            Operator::Dense(DMatrix::from_element(1, 1, a)),
            Operator::Dense(DMatrix::from_element(1, 1, s1)),
        )
        .unwrap();
        let exact = ((2.0 * a + s1 * s1) * t).exp();
        let mut prev = f64::INFINITY;
        for k in 1..=6 {
            let spec = GalerkinSpec {
                degree: k,
                window_steps: 200,
            };
            let sys = assemble_galerkin_system(&ops, t / 200.0, 200, &spec).unwrap();
            let tr = solve_chaos(&sys, &DVector::from_element(1, 1.0), 0).unwrap();
            let second = tr.variance[200][0] + tr.mean[200][0].powi(2);
            let err = (second - exact).abs();
            assert!(err < prev);
            prev = err;
        }
        assert!(prev < 1e-3 * exact);
    }

    #[test]
    fn sampler_reproduces_moments() {
        let basis = build_chaos_basis(1, 1).unwrap();
        let coeff = vec![DVector::from_element(1, 0.5), DVector::from_element(1, 2.0)];
        let stats = chaos_statistics(&coeff, &basis).unwrap();
        assert_eq!(stats.variance[0], 4.0);
        let mut rng = path_rng(5, 0);
        let n = 100_000;
        let draws: Vec<f64> = (0..n).map(|_| stats.sample(&mut rng)[0]).collect();
        let mean = draws.iter().sum::<f64>() / n as f64;
        let var = draws.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
        assert!((mean - 0.5).abs() < 3.0 * (4.0 / n as f64).sqrt());
        assert!((var - 4.0).abs() < 3.0 * 4.0 * (2.0 / n as f64).sqrt());

        let zero = vec![DVector::from_element(1, 0.5), DVector::zeros(1)];
        let stats = chaos_statistics(&zero, &basis).unwrap();
        assert_eq!(stats.variance[0], 0.0);
        assert_eq!(stats.sample(&mut rng)[0], 0.5);
    }
}
