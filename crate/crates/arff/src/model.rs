//! Core model types: frequencies, amplitudes, datasets, and error metrics.
//!
//! The model is `beta(x) = sum_k amp_k * exp(i nu_k . x)` with complex
//! amplitudes throughout; realness of outputs for real targets is an emergent
//! property, not a representation choice.

use num_complex::Complex;
use rayon::prelude::*;

use crate::error::{Error, Result};

pub type C64 = Complex<f64>;

/// Frequency lattice `(pi/L) Z^d` for `q`-periodic targets, `q = 2L`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LatticeSpec {
    q: f64,
}

impl LatticeSpec {
    pub fn new(q: f64) -> Result<Self> {
        if !(q > 0.0) || !q.is_finite() {
            return Err(Error::Config(format!("lattice period must be positive, got {q}")));
        }
        Ok(Self { q })
    }

    pub fn period(&self) -> f64 {
        self.q
    }

    /// Distance between adjacent lattice points, `pi/L = 2*pi/q`.
    pub fn spacing(&self) -> f64 {
        2.0 * std::f64::consts::PI / self.q
    }
}

/// Ordered set of K frequencies in `R^d`.
///
/// Lattice sets store exact integer indices so that equality grouping never
/// suffers floating-point aliasing; coordinates are derived on use.
#[derive(Clone, Debug)]
pub enum FrequencySet {
    Continuous {
        dim: usize,
        /// Row-major K x d coordinates.
        coords: Vec<f64>,
    },
    Lattice {
        spec: LatticeSpec,
        dim: usize,
        /// Row-major K x d integer lattice indices.
        indices: Vec<i64>,
    },
}

impl FrequencySet {
    pub fn continuous(dim: usize, coords: Vec<f64>) -> Self {
        assert!(dim > 0 && coords.len() % dim == 0, "coords must be K x dim");
        FrequencySet::Continuous { dim, coords }
    }

    pub fn lattice(spec: LatticeSpec, dim: usize, indices: Vec<i64>) -> Self {
        assert!(dim > 0 && indices.len() % dim == 0, "indices must be K x dim");
        FrequencySet::Lattice { spec, dim, indices }
    }

    pub fn zeros_continuous(k: usize, dim: usize) -> Self {
        Self::continuous(dim, vec![0.0; k * dim])
    }

    pub fn zeros_lattice(k: usize, dim: usize, spec: LatticeSpec) -> Self {
        Self::lattice(spec, dim, vec![0i64; k * dim])
    }

    pub fn len(&self) -> usize {
        match self {
            FrequencySet::Continuous { dim, coords } => coords.len() / dim,
            FrequencySet::Lattice { dim, indices, .. } => indices.len() / dim,
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn dim(&self) -> usize {
        match self {
            FrequencySet::Continuous { dim, .. } => *dim,
            FrequencySet::Lattice { dim, .. } => *dim,
        }
    }

    pub fn lattice_spec(&self) -> Option<LatticeSpec> {
        match self {
            FrequencySet::Continuous { .. } => None,
            FrequencySet::Lattice { spec, .. } => Some(*spec),
        }
    }

    /// Dense row-major K x d coordinates.
    pub fn to_dense(&self) -> Vec<f64> {
        match self {
            FrequencySet::Continuous { coords, .. } => coords.clone(),
            FrequencySet::Lattice { spec, indices, .. } => {
                let h = spec.spacing();
                indices.iter().map(|&n| n as f64 * h).collect()
            }
        }
    }

    /// New set containing `rows[i]`-th frequency at position i (with
    /// repetition allowed), preserving the domain tag.
    pub fn select_rows(&self, rows: &[usize]) -> Self {
        let d = self.dim();
        match self {
            FrequencySet::Continuous { coords, .. } => {
                let mut out = Vec::with_capacity(rows.len() * d);
                for &r in rows {
                    out.extend_from_slice(&coords[r * d..(r + 1) * d]);
                }
                FrequencySet::Continuous { dim: d, coords: out }
            }
            FrequencySet::Lattice { spec, indices, .. } => {
                let mut out = Vec::with_capacity(rows.len() * d);
                for &r in rows {
                    out.extend_from_slice(&indices[r * d..(r + 1) * d]);
                }
                FrequencySet::Lattice { spec: *spec, dim: d, indices: out }
            }
        }
    }
}

/// Fitted random Fourier feature model.
#[derive(Clone, Debug)]
pub struct RffModel {
    pub freqs: FrequencySet,
    pub amps: Vec<C64>,
}

impl RffModel {
    pub fn new(freqs: FrequencySet, amps: Vec<C64>) -> Self {
        assert_eq!(freqs.len(), amps.len(), "amplitude count must equal K");
        Self { freqs, amps }
    }

    /// Evaluates `beta` at `points` (row-major n x d).
    pub fn evaluate(&self, points: &[f64], dim: usize) -> Result<Vec<C64>> {
        if dim != self.freqs.dim() {
            return Err(Error::DimensionMismatch(format!(
                "model dimension {} vs points dimension {dim}",
                self.freqs.dim()
            )));
        }
        if points.len() % dim != 0 {
            return Err(Error::DimensionMismatch(
                "points length is not a multiple of the dimension".into(),
            ));
        }
        let freqs = self.freqs.to_dense();
        Ok(evaluate_dense(&freqs, &self.amps, points, dim))
    }
}

/// `out[j] = sum_k amps[k] * exp(i freq_k . x_j)`, sequential sum per point.
pub(crate) fn evaluate_dense(freqs: &[f64], amps: &[C64], points: &[f64], dim: usize) -> Vec<C64> {
    let k = amps.len();
    points
        .par_chunks(dim)
        .map(|x| {
            let mut acc = C64::new(0.0, 0.0);
            for ki in 0..k {
                let row = &freqs[ki * dim..(ki + 1) * dim];
                let theta: f64 = row.iter().zip(x).map(|(a, b)| a * b).sum();
                acc += amps[ki] * C64::new(theta.cos(), theta.sin());
            }
            acc
        })
        .collect()
}

/// Training data: inputs (row-major J x d), complex targets, and the noise
/// standard deviation used to generate them (metadata only).
#[derive(Clone, Debug)]
pub struct Dataset {
    pub dim: usize,
    pub inputs: Vec<f64>,
    pub targets: Vec<C64>,
    pub noise_std: f64,
}

impl Dataset {
    pub fn new(dim: usize, inputs: Vec<f64>, targets: Vec<C64>, noise_std: f64) -> Self {
        assert!(dim > 0 && inputs.len() % dim == 0, "inputs must be J x dim");
        assert_eq!(inputs.len() / dim, targets.len(), "target count must equal J");
        assert!(noise_std >= 0.0);
        Self { dim, inputs, targets, noise_std }
    }

    pub fn len(&self) -> usize {
        self.targets.len()
    }

    pub fn is_empty(&self) -> bool {
        self.targets.is_empty()
    }

    pub fn input_row(&self, j: usize) -> &[f64] {
        &self.inputs[j * self.dim..(j + 1) * self.dim]
    }

    /// Row subset in the given order.
    pub fn select_rows(&self, rows: &[usize]) -> Self {
        let d = self.dim;
        let mut inputs = Vec::with_capacity(rows.len() * d);
        let mut targets = Vec::with_capacity(rows.len());
        for &r in rows {
            inputs.extend_from_slice(&self.inputs[r * d..(r + 1) * d]);
            targets.push(self.targets[r]);
        }
        Self { dim: d, inputs, targets, noise_std: self.noise_std }
    }
}

/// Ratio of squared norms `sum |pred - truth|^2 / sum |truth|^2`.
pub fn relative_l2_error(predicted: &[C64], truth: &[C64]) -> Result<f64> {
    if predicted.len() != truth.len() || truth.is_empty() {
        return Err(Error::DimensionMismatch(format!(
            "predicted length {} vs truth length {}",
            predicted.len(),
            truth.len()
        )));
    }
    let denom: f64 = truth.iter().map(|t| t.norm_sqr()).sum();
    if denom == 0.0 {
        return Err(Error::Degenerate("relative error against all-zero truth".into()));
    }
    let num: f64 = predicted.iter().zip(truth).map(|(p, t)| (p - t).norm_sqr()).sum();
    Ok(num / denom)
}

/// `sum |y_j - clean_j|^2 / sum |y_j|^2` for a dataset with known clean values.
pub fn noise_to_signal_ratio(dataset: &Dataset, clean: &[C64]) -> Result<f64> {
    if clean.len() != dataset.len() {
        return Err(Error::DimensionMismatch(format!(
            "clean length {} vs dataset length {}",
            clean.len(),
            dataset.len()
        )));
    }
    let denom: f64 = dataset.targets.iter().map(|y| y.norm_sqr()).sum();
    if denom == 0.0 {
        return Err(Error::Degenerate("noise-to-signal ratio of all-zero targets".into()));
    }
    let num: f64 = dataset.targets.iter().zip(clean).map(|(y, f)| (y - f).norm_sqr()).sum();
    Ok(num / denom)
}
