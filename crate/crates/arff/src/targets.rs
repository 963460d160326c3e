//! Synthetic target functions, dataset synthesis, and the Fourier-side
//! oracle used to compare learned spectra against the best possible
//! sampling density.
//!
//! Two target families are provided, both modulated by a Gaussian
//! envelope `exp(-|x|^2 / 2)`:
//!
//! * `Bump`: `exp(-|v.x| / a)`, which has a ridge-shaped kink along the
//!   hyperplane `v.x = 0`,
//! * `SineIntegral`: `Si(v.x / a)`, a smooth sigmoidal ridge.
//!
//! When a period `q` is set, inputs are wrapped into `[-q/2, q/2)^d`
//! coordinate-wise before evaluation, making the target exactly
//! `q`-periodic along every axis.

use std::sync::OnceLock;

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::model::{C64, Dataset, FrequencySet, LatticeSpec};
use crate::rng::RngStream;
use crate::sampler::multinomial_resample;

/// Shape of the ridge profile along the distinguished direction.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TargetKind {
    /// `exp(-|v.x| / a)`: continuous but with a slope jump across `v.x = 0`.
    Bump,
    /// `Si(v.x / a)`: smooth, saturating to `+-pi/2` away from the ridge.
    SineIntegral,
}

/// A fully specified synthetic target function.
#[derive(Debug, Clone, PartialEq)]
pub struct TargetSpec {
    pub kind: TargetKind,
    /// Unit direction `v` of the ridge; length defines the input dimension.
    pub direction: Vec<f64>,
    /// Sharpness `a > 0`; smaller values concentrate spectral mass at
    /// higher frequencies.
    pub sharpness: f64,
    /// Optional period `q`; when present the target is wrapped into
    /// `[-q/2, q/2)^d` before evaluation.
    pub period: Option<LatticeSpec>,
}

impl TargetSpec {
    pub fn new(
        kind: TargetKind,
        direction: Vec<f64>,
        sharpness: f64,
        period: Option<LatticeSpec>,
    ) -> Result<Self> {
        let spec = TargetSpec { kind, direction, sharpness, period };
        spec.validate()?;
        Ok(spec)
    }

    pub fn dim(&self) -> usize {
        self.direction.len()
    }

    pub fn validate(&self) -> Result<()> {
        if self.direction.is_empty() {
            return Err(Error::Config("target direction must be non-empty".into()));
        }
        let norm = self.direction.iter().map(|v| v * v).sum::<f64>().sqrt();
        // Unit length up to 1e-12 so spectra do not silently rescale.
        if (norm - 1.0).abs() > 1e-12 {
            return Err(Error::Config(format!(
                "target direction must be a unit vector (norm {norm:.3e})"
            )));
        }
        if !(self.sharpness > 0.0) || !self.sharpness.is_finite() {
            return Err(Error::Config(format!(
                "target sharpness must be positive and finite, got {}",
                self.sharpness
            )));
        }
        Ok(())
    }
}

/// Axis-aligned unit direction `e_1` in `d` dimensions.
pub fn direction_axis(dim: usize) -> Vec<f64> {
    let mut v = vec![0.0; dim.max(1)];
    v[0] = 1.0;
    v
}

/// Uniformly random unit direction.
pub fn direction_random(dim: usize, rng: &mut RngStream) -> Vec<f64> {
    loop {
        let v: Vec<f64> = (0..dim).map(|_| rng.standard_normal()).collect();
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm > 1e-6 {
            return v.iter().map(|x| x / norm).collect();
        }
    }
}

/// A unit vector orthogonal to `v`: the `+pi/2` rotation in two
/// dimensions, otherwise the first standard basis vector with a
/// non-degenerate Gram-Schmidt complement against `v`.
pub fn perpendicular_direction(v: &[f64]) -> Result<Vec<f64>> {
    let d = v.len();
    if d < 2 {
        return Err(Error::Unsupported(
            "perpendicular direction requires dimension >= 2".into(),
        ));
    }
    if d == 2 {
        return Ok(vec![-v[1], v[0]]);
    }
    for axis in 0..d {
        let mut w = vec![0.0; d];
        w[axis] = 1.0;
        let proj = v[axis];
        for (wi, vi) in w.iter_mut().zip(v) {
            *wi -= proj * vi;
        }
        let norm = w.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm > 1e-8 {
            return Ok(w.iter().map(|x| x / norm).collect());
        }
    }
    Err(Error::Degenerate("no basis vector is independent of v".into()))
}

/// Wrap a scalar into `[-q/2, q/2)`.
///
/// Uses `x - q * floor(x/q + 1/2)` rather than `round` so the upper
/// boundary folds down (`wrap(q/2) = -q/2`) and the lower boundary is
/// kept, matching the half-open convention exactly.
pub fn wrap_periodic(x: f64, q: f64) -> f64 {
    x - q * (x / q + 0.5).floor()
}

fn wrap_into(x: &[f64], q: f64, out: &mut Vec<f64>) {
    out.clear();
    out.extend(x.iter().map(|&xi| wrap_periodic(xi, q)));
}

const GAUSS_LEGENDRE_N: usize = 20;

/// Nodes and weights of `n`-point Gauss-Legendre quadrature on `[-1, 1]`,
/// computed by Newton iteration on the Legendre polynomial.
fn gauss_legendre(n: usize) -> (Vec<f64>, Vec<f64>) {
    let mut nodes = vec![0.0; n];
    let mut weights = vec![0.0; n];
    for i in 0..n {
        // Chebyshev-based initial guess; converges in a handful of steps.
        let mut x = (std::f64::consts::PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
        let mut dp = 0.0;
        for _ in 0..100 {
            let mut p0 = 1.0;
            let mut p1 = x;
            for k in 2..=n {
                let kf = k as f64;
                let p2 = ((2.0 * kf - 1.0) * x * p1 - (kf - 1.0) * p0) / kf;
                p0 = p1;
                p1 = p2;
            }
            dp = n as f64 * (x * p1 - p0) / (x * x - 1.0);
            let dx = p1 / dp;
            x -= dx;
            if dx.abs() < 1e-15 {
                break;
            }
        }
        nodes[i] = x;
        weights[i] = 2.0 / ((1.0 - x * x) * dp * dp);
    }
    (nodes, weights)
}

fn gauss_legendre_cached() -> &'static (Vec<f64>, Vec<f64>) {
    static CACHE: OnceLock<(Vec<f64>, Vec<f64>)> = OnceLock::new();
    CACHE.get_or_init(|| gauss_legendre(GAUSS_LEGENDRE_N))
}

fn sinc(s: f64) -> f64 {
    if s.abs() < 1e-8 {
        // Two-term series; the truncation error is below 1e-33 here.
        1.0 - s * s / 6.0
    } else {
        s.sin() / s
    }
}

/// The sine integral `Si(t) = integral of sin(s)/s over [0, t]`.
///
/// The integrand is entire, so composite Gauss-Legendre quadrature on
/// panels no wider than `pi/2` converges far below f64 resolution.
pub fn sine_integral(t: f64) -> f64 {
    if t == 0.0 {
        return 0.0;
    }
    let magnitude = t.abs();
    let (nodes, weights) = gauss_legendre_cached();
    let panels = (magnitude / std::f64::consts::FRAC_PI_2).ceil().max(1.0) as usize;
    let width = magnitude / panels as f64;
    let mut total = 0.0;
    for p in 0..panels {
        let left = p as f64 * width;
        let center = left + 0.5 * width;
        let half = 0.5 * width;
        let mut panel = 0.0;
        for (&node, &weight) in nodes.iter().zip(weights) {
            panel += weight * sinc(center + half * node);
        }
        total += half * panel;
    }
    total.copysign(t)
}

fn profile(kind: TargetKind, u: f64) -> f64 {
    match kind {
        TargetKind::Bump => (-u.abs()).exp(),
        TargetKind::SineIntegral => sine_integral(u),
    }
}

fn evaluate_wrapped(spec: &TargetSpec, x: &[f64]) -> f64 {
    let mut ridge = 0.0;
    let mut sq = 0.0;
    for (&xi, &vi) in x.iter().zip(&spec.direction) {
        ridge += vi * xi;
        sq += xi * xi;
    }
    profile(spec.kind, ridge / spec.sharpness) * (-0.5 * sq).exp()
}

/// Evaluate the target at one point, wrapping into the fundamental
/// domain first when the target is periodic.
pub fn evaluate_target(spec: &TargetSpec, x: &[f64]) -> Result<f64> {
    if x.len() != spec.dim() {
        return Err(Error::DimensionMismatch(format!(
            "point has dimension {}, target expects {}",
            x.len(),
            spec.dim()
        )));
    }
    Ok(match spec.period {
        Some(lattice) => {
            let mut buf = Vec::with_capacity(x.len());
            wrap_into(x, lattice.period(), &mut buf);
            evaluate_wrapped(spec, &buf)
        }
        None => evaluate_wrapped(spec, x),
    })
}

/// Evaluate the target at `points` (row-major, one point per row).
pub fn evaluate_batch(spec: &TargetSpec, points: &[f64]) -> Result<Vec<f64>> {
    let d = spec.dim();
    if points.len() % d != 0 {
        return Err(Error::DimensionMismatch(format!(
            "point buffer length {} is not a multiple of dimension {d}",
            points.len()
        )));
    }
    points
        .par_chunks(d)
        .map(|row| evaluate_target(spec, row))
        .collect()
}

/// Standard deviation `s` such that noise `N(0, s^2)` yields the given
/// expected noise-to-signal ratio against a clean signal with mean
/// square `mean_sq`: `s = sqrt(nsr * mean_sq / (1 - nsr))`.
pub fn noise_std_for_nsr(nsr: f64, mean_sq: f64) -> Result<f64> {
    if !(0.0..1.0).contains(&nsr) {
        return Err(Error::Config(format!(
            "noise-to-signal ratio must lie in [0, 1), got {nsr}"
        )));
    }
    if !(mean_sq > 0.0) {
        return Err(Error::Degenerate(
            "mean square of the clean signal must be positive".into(),
        ));
    }
    Ok((nsr * mean_sq / (1.0 - nsr)).sqrt())
}

/// Draw `count` inputs i.i.d. standard normal, evaluate the target, and
/// add Gaussian noise of standard deviation `noise_std`.
///
/// All input coordinates are drawn first (point-major), then all noise
/// values, so datasets of equal size share inputs across noise levels
/// when drawn from streams with the same key.
pub fn sample_dataset(
    spec: &TargetSpec,
    count: usize,
    noise_std: f64,
    rng: &mut RngStream,
) -> Result<Dataset> {
    let (dataset, _) = sample_dataset_with_clean(spec, count, noise_std, rng)?;
    Ok(dataset)
}

/// As `sample_dataset`, also returning the clean (noise-free) target values.
pub fn sample_dataset_with_clean(
    spec: &TargetSpec,
    count: usize,
    noise_std: f64,
    rng: &mut RngStream,
) -> Result<(Dataset, Vec<f64>)> {
    if noise_std < 0.0 || !noise_std.is_finite() {
        return Err(Error::Config(format!(
            "noise standard deviation must be non-negative, got {noise_std}"
        )));
    }
    let d = spec.dim();
    let mut inputs = Vec::with_capacity(count * d);
    for _ in 0..count * d {
        inputs.push(rng.standard_normal());
    }
    let clean = evaluate_batch(spec, &inputs)?;
    let mut targets = Vec::with_capacity(count);
    for &c in &clean {
        let noise = if noise_std > 0.0 { noise_std * rng.standard_normal() } else { 0.0 };
        targets.push(C64::new(c + noise, 0.0));
    }
    let dataset = Dataset::new(d, inputs, targets, noise_std);
    Ok((dataset, clean))
}

/// Largest grid (total points across all axes) accepted by the
/// quadrature oracle; keeps the dense tensor within a few hundred MB.
const MAX_GRID_CELLS: usize = 1 << 23;

/// Fourier coefficients of a periodic target on the dense symmetric box
/// `{-n_max, .., n_max}^d` of lattice indices, stored row-major with the
/// last axis fastest.
#[derive(Debug, Clone)]
pub struct FourierCoefficientTable {
    spec: LatticeSpec,
    dim: usize,
    n_max: i64,
    coeffs: Vec<C64>,
}

impl FourierCoefficientTable {
    /// Assemble a table from raw storage-order coefficients, as produced
    /// by parsing a previously written table.
    pub fn from_coefficients(
        spec: LatticeSpec,
        dim: usize,
        n_max: i64,
        coeffs: Vec<C64>,
    ) -> Result<Self> {
        if dim == 0 || dim > 3 {
            return Err(Error::Unsupported(format!(
                "coefficient tables support dimensions 1-3, got {dim}"
            )));
        }
        if n_max < 0 {
            return Err(Error::Config(format!("n_max must be nonnegative, got {n_max}")));
        }
        let side = (2 * n_max + 1) as usize;
        let expect = side.pow(dim as u32);
        if coeffs.len() != expect {
            return Err(Error::DimensionMismatch(format!(
                "{} coefficients, the {side}^{dim} box needs {expect}",
                coeffs.len()
            )));
        }
        Ok(FourierCoefficientTable { spec, dim, n_max, coeffs })
    }

    pub fn lattice_spec(&self) -> LatticeSpec {
        self.spec
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn n_max(&self) -> i64 {
        self.n_max
    }

    /// Points per axis, `2 n_max + 1`.
    pub fn side(&self) -> usize {
        (2 * self.n_max + 1) as usize
    }

    pub fn len(&self) -> usize {
        self.coeffs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.coeffs.is_empty()
    }

    pub fn coefficients(&self) -> &[C64] {
        &self.coeffs
    }

    /// Flat index of a lattice index vector, if it lies inside the box.
    pub fn flat_index(&self, n: &[i64]) -> Option<usize> {
        if n.len() != self.dim {
            return None;
        }
        let side = self.side();
        let mut flat = 0usize;
        for &ni in n {
            if ni.abs() > self.n_max {
                return None;
            }
            flat = flat * side + (ni + self.n_max) as usize;
        }
        Some(flat)
    }

    /// Coefficient at lattice index `n`, zero-extended outside the box.
    pub fn get(&self, n: &[i64]) -> C64 {
        match self.flat_index(n) {
            Some(i) => self.coeffs[i],
            None => C64::new(0.0, 0.0),
        }
    }

    /// Decode a flat index back into lattice coordinates.
    pub fn index_vector(&self, mut flat: usize) -> Vec<i64> {
        let side = self.side();
        let mut n = vec![0i64; self.dim];
        for slot in n.iter_mut().rev() {
            *slot = (flat % side) as i64 - self.n_max;
            flat /= side;
        }
        n
    }

    /// Iterate `(lattice index, coefficient)` in storage order.
    pub fn iter(&self) -> impl Iterator<Item = (Vec<i64>, C64)> + '_ {
        self.coeffs
            .iter()
            .enumerate()
            .map(|(flat, &c)| (self.index_vector(flat), c))
    }

    /// Sum of `|coefficient|^2` (the discrete Parseval mass).
    pub fn parseval_mass(&self) -> f64 {
        self.coeffs.iter().map(|c| c.norm_sqr()).sum()
    }

    /// Evaluate the truncated Fourier series at a point.
    pub fn reconstruct(&self, x: &[f64]) -> Result<C64> {
        if x.len() != self.dim {
            return Err(Error::DimensionMismatch(format!(
                "point has dimension {}, table expects {}",
                x.len(),
                self.dim
            )));
        }
        let spacing = self.spec.spacing();
        let mut total = C64::new(0.0, 0.0);
        for (n, c) in self.iter() {
            let phase: f64 = n
                .iter()
                .zip(x)
                .map(|(&ni, &xi)| spacing * ni as f64 * xi)
                .sum();
            total += c * C64::new(phase.cos(), phase.sin());
        }
        Ok(total)
    }
}

/// Fourier coefficients of an arbitrary `q`-periodic function on the
/// dense symmetric box, by tensorized trapezoidal quadrature on a
/// uniform grid (a partial discrete Fourier transform per axis).
///
/// `grid_per_axis` must be at least `4 * n_max` so the retained modes
/// are well separated from the grid's aliasing limit.
pub fn compute_fourier_table_of<F>(
    f: F,
    spec: LatticeSpec,
    dim: usize,
    n_max: i64,
    grid_per_axis: usize,
) -> Result<FourierCoefficientTable>
where
    F: Fn(&[f64]) -> f64 + Sync,
{
    if dim == 0 || dim > 3 {
        return Err(Error::Unsupported(format!(
            "Fourier tables support dimensions 1 to 3, got {dim}"
        )));
    }
    if n_max < 0 {
        return Err(Error::Config(format!("n_max must be non-negative, got {n_max}")));
    }
    if grid_per_axis < (4 * n_max.max(1)) as usize {
        return Err(Error::Config(format!(
            "grid_per_axis {grid_per_axis} is below 4 * n_max = {}",
            4 * n_max.max(1)
        )));
    }
    let cells = grid_per_axis
        .checked_pow(dim as u32)
        .filter(|&c| c <= MAX_GRID_CELLS)
        .ok_or_else(|| {
            Error::Unsupported(format!(
                "quadrature grid {grid_per_axis}^{dim} exceeds the supported size"
            ))
        })?;

    let q = spec.period();
    let m = grid_per_axis;
    let h = q / m as f64;
    let side = (2 * n_max + 1) as usize;

    // Sample f on the uniform grid x_g = -q/2 + g h, g = 0..m-1 per axis
    // (the endpoint is excluded: it aliases the start under periodicity).
    let grid_coord = |g: usize| -0.5 * q + g as f64 * h;
    let values: Vec<C64> = (0..cells)
        .into_par_iter()
        .map(|flat| {
            let mut x = [0.0f64; 3];
            let mut rest = flat;
            for t in (0..dim).rev() {
                x[t] = grid_coord(rest % m);
                rest /= m;
            }
            C64::new(f(&x[..dim]), 0.0)
        })
        .collect();

    // Transform factor shared by all axes: W[s][g] = exp(-i w_s x_g) / m,
    // with w_s = spacing * (s - n_max).
    let spacing = spec.spacing();
    let mut w = vec![C64::new(0.0, 0.0); side * m];
    for s in 0..side {
        let omega = spacing * (s as i64 - n_max) as f64;
        for g in 0..m {
            let angle = -omega * grid_coord(g);
            w[s * m + g] = C64::new(angle.cos(), angle.sin()) / m as f64;
        }
    }

    // Contract one axis at a time: shape [done axes: side, pending axes: m].
    let mut data = values;
    let mut dims = vec![m; dim];
    for axis in 0..dim {
        let axis_len = dims[axis];
        let inner: usize = dims[axis + 1..].iter().product();
        let outer: usize = dims[..axis].iter().product();
        let mut next = vec![C64::new(0.0, 0.0); outer * side * inner];
        next.par_chunks_mut(side * inner)
            .enumerate()
            .for_each(|(o, block)| {
                let src = &data[o * axis_len * inner..(o + 1) * axis_len * inner];
                for s in 0..side {
                    let row = &w[s * m..s * m + axis_len];
                    let dst = &mut block[s * inner..(s + 1) * inner];
                    for (g, &wg) in row.iter().enumerate() {
                        let slice = &src[g * inner..(g + 1) * inner];
                        for (acc, &v) in dst.iter_mut().zip(slice) {
                            *acc += wg * v;
                        }
                    }
                }
            });
        data = next;
        dims[axis] = side;
    }
    debug_assert_eq!(data.len(), side.pow(dim as u32));

    Ok(FourierCoefficientTable { spec, dim, n_max, coeffs: data })
}

/// Mean of `f^2` over the same uniform period-box grid the table
/// quadrature uses; with Parseval this should match the table's
/// coefficient mass up to truncation and aliasing.
pub fn grid_mean_square_of<F>(f: F, spec: LatticeSpec, dim: usize, grid_per_axis: usize) -> Result<f64>
where
    F: Fn(&[f64]) -> f64 + Sync,
{
    if dim == 0 || dim > 3 {
        return Err(Error::Unsupported(format!(
            "Fourier tables support dimensions 1 to 3, got {dim}"
        )));
    }
    let cells = grid_per_axis
        .checked_pow(dim as u32)
        .filter(|&c| 0 < c && c <= MAX_GRID_CELLS)
        .ok_or_else(|| {
            Error::Unsupported(format!(
                "quadrature grid {grid_per_axis}^{dim} exceeds the supported size"
            ))
        })?;
    let q = spec.period();
    let m = grid_per_axis;
    let h = q / m as f64;
    let total: f64 = (0..cells)
        .into_par_iter()
        .map(|flat| {
            let mut x = [0.0f64; 3];
            let mut rest = flat;
            for t in (0..dim).rev() {
                x[t] = -0.5 * q + (rest % m) as f64 * h;
                rest /= m;
            }
            let v = f(&x[..dim]);
            v * v
        })
        .sum();
    Ok(total / cells as f64)
}

/// Mean square of a periodic target over the quadrature grid.
pub fn grid_mean_square(spec: &TargetSpec, grid_per_axis: usize) -> Result<f64> {
    spec.validate()?;
    let lattice = spec.period.ok_or_else(|| {
        Error::Config("Fourier tables require a periodic target (set a period)".into())
    })?;
    grid_mean_square_of(|x| evaluate_wrapped(spec, x), lattice, spec.dim(), grid_per_axis)
}

/// Fourier coefficients of a periodic target spec (see
/// `compute_fourier_table_of`). Errors when the spec has no period.
pub fn compute_fourier_table(
    spec: &TargetSpec,
    n_max: i64,
    grid_per_axis: usize,
) -> Result<FourierCoefficientTable> {
    spec.validate()?;
    let lattice = spec.period.ok_or_else(|| {
        Error::Config("Fourier tables require a periodic target (set a period)".into())
    })?;
    compute_fourier_table_of(
        |x| evaluate_wrapped(spec, x),
        lattice,
        spec.dim(),
        n_max,
        grid_per_axis,
    )
}

/// A probability distribution over the dense symmetric index box,
/// aligned with a `FourierCoefficientTable` of the same shape.
#[derive(Debug, Clone)]
pub struct TabulatedDistribution {
    spec: LatticeSpec,
    dim: usize,
    n_max: i64,
    probs: Vec<f64>,
}

impl TabulatedDistribution {
    pub fn new(spec: LatticeSpec, dim: usize, n_max: i64, probs: Vec<f64>) -> Result<Self> {
        let side = (2 * n_max + 1) as usize;
        let expect = side.pow(dim as u32);
        if probs.len() != expect {
            return Err(Error::DimensionMismatch(format!(
                "distribution has {} entries, box needs {expect}",
                probs.len()
            )));
        }
        let mut total = 0.0;
        for &p in &probs {
            if !(p >= 0.0) || !p.is_finite() {
                return Err(Error::InvalidProbabilities(format!(
                    "probabilities must be non-negative and finite, got {p}"
                )));
            }
            total += p;
        }
        if (total - 1.0).abs() > 1e-9 {
            return Err(Error::InvalidProbabilities(format!(
                "probabilities sum to {total}, expected 1"
            )));
        }
        Ok(TabulatedDistribution { spec, dim, n_max, probs })
    }

    pub fn lattice_spec(&self) -> LatticeSpec {
        self.spec
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn n_max(&self) -> i64 {
        self.n_max
    }

    pub fn probabilities(&self) -> &[f64] {
        &self.probs
    }

    /// Probability of lattice index `n`; zero outside the box.
    pub fn prob(&self, n: &[i64]) -> f64 {
        let side = (2 * self.n_max + 1) as usize;
        if n.len() != self.dim {
            return 0.0;
        }
        let mut flat = 0usize;
        for &ni in n {
            if ni.abs() > self.n_max {
                return 0.0;
            }
            flat = flat * side + (ni + self.n_max) as usize;
        }
        self.probs[flat]
    }
}

/// The importance density proportional to `|f_hat|`, which minimizes the
/// second-moment rate constant over all densities on the box.
pub fn optimal_distribution(table: &FourierCoefficientTable) -> Result<TabulatedDistribution> {
    let total: f64 = table.coeffs.iter().map(|c| c.norm()).sum();
    if !(total > 0.0) {
        return Err(Error::Degenerate(
            "all Fourier coefficients vanish; no optimal density exists".into(),
        ));
    }
    let probs = table.coeffs.iter().map(|c| c.norm() / total).collect();
    TabulatedDistribution::new(table.spec, table.dim, table.n_max, probs)
}

/// The rate constant `C_p = sum |f_hat(n)|^2 / p(n)`, the coefficient in
/// front of `1/K` in the Monte Carlo error of importance sampling from
/// `p`. Errors when `p` vanishes on a mode that carries mass (the
/// constant would be infinite).
pub fn rate_constant(
    table: &FourierCoefficientTable,
    dist: &TabulatedDistribution,
) -> Result<f64> {
    check_aligned(table, dist)?;
    let mut total = 0.0;
    for (&c, &p) in table.coeffs.iter().zip(&dist.probs) {
        let mass = c.norm_sqr();
        if mass == 0.0 {
            continue;
        }
        if p == 0.0 {
            return Err(Error::Degenerate(
                "support violation: density vanishes on a mode with nonzero coefficient"
                    .into(),
            ));
        }
        total += mass / p;
    }
    Ok(total)
}

/// The quartic diagnostic `sum |f_hat(n)|^4 / p(n)^3`, which controls the
/// variance of the empirical rate constant.
pub fn quartic_rate_constant(
    table: &FourierCoefficientTable,
    dist: &TabulatedDistribution,
) -> Result<f64> {
    check_aligned(table, dist)?;
    let mut total = 0.0;
    for (&c, &p) in table.coeffs.iter().zip(&dist.probs) {
        let mass = c.norm_sqr();
        if mass == 0.0 {
            continue;
        }
        if p == 0.0 {
            return Err(Error::Degenerate(
                "support violation: density vanishes on a mode with nonzero coefficient"
                    .into(),
            ));
        }
        total += mass * mass / (p * p * p);
    }
    Ok(total)
}

fn check_aligned(table: &FourierCoefficientTable, dist: &TabulatedDistribution) -> Result<()> {
    if table.dim != dist.dim
        || table.n_max != dist.n_max
        || table.spec.period() != dist.spec.period()
    {
        return Err(Error::DimensionMismatch(
            "coefficient table and distribution cover different boxes".into(),
        ));
    }
    Ok(())
}

/// Base distributions for drawing fresh frequencies.
#[derive(Debug, Clone)]
pub enum BaseDistribution {
    /// Continuous `N(0, scale^2 I)`.
    StandardNormal { scale: f64 },
    /// `N(0, scale^2 I)` projected to the nearest lattice point.
    LatticeProjectedNormal { scale: f64, spec: LatticeSpec },
    /// An explicit distribution over a dense symmetric index box.
    Tabulated(TabulatedDistribution),
}

impl BaseDistribution {
    fn validate(&self) -> Result<()> {
        match self {
            BaseDistribution::StandardNormal { scale }
            | BaseDistribution::LatticeProjectedNormal { scale, .. } => {
                if !(scale > &0.0) || !scale.is_finite() {
                    return Err(Error::Config(format!(
                        "base distribution scale must be positive, got {scale}"
                    )));
                }
                Ok(())
            }
            BaseDistribution::Tabulated(_) => Ok(()),
        }
    }
}

/// Draw `count` frequencies i.i.d. from the base distribution.
///
/// Draws are frequency-major, coordinate-minor. For the tabulated case
/// `dim` must match the box dimension.
pub fn sample_base(
    dist: &BaseDistribution,
    count: usize,
    dim: usize,
    rng: &mut RngStream,
) -> Result<FrequencySet> {
    dist.validate()?;
    if dim == 0 {
        return Err(Error::Config("frequency dimension must be positive".into()));
    }
    match dist {
        BaseDistribution::StandardNormal { scale } => {
            let mut coords = Vec::with_capacity(count * dim);
            for _ in 0..count * dim {
                coords.push(scale * rng.standard_normal());
            }
            Ok(FrequencySet::continuous(dim, coords))
        }
        BaseDistribution::LatticeProjectedNormal { scale, spec } => {
            let h = spec.spacing();
            let mut indices = Vec::with_capacity(count * dim);
            for _ in 0..count * dim {
                let draw: f64 = scale * rng.standard_normal();
                indices.push((draw / h).round() as i64);
            }
            Ok(FrequencySet::lattice(*spec, dim, indices))
        }
        BaseDistribution::Tabulated(tab) => {
            if dim != tab.dim {
                return Err(Error::DimensionMismatch(format!(
                    "requested dimension {dim}, tabulated box has {}",
                    tab.dim
                )));
            }
            let side = (2 * tab.n_max + 1) as usize;
            let flat = multinomial_resample(&tab.probs, count, rng)?;
            let mut indices = Vec::with_capacity(count * dim);
            for mut f in flat {
                let base = indices.len();
                indices.resize(base + dim, 0);
                for t in (0..dim).rev() {
                    indices[base + t] = (f % side) as i64 - tab.n_max;
                    f /= side;
                }
            }
            Ok(FrequencySet::lattice(tab.spec, dim, indices))
        }
    }
}
