//! One-vs-all digit classification with real cos/sin feature networks.
//!
//! Each digit owns a network `beta(x) = sum_k bhat_k cos(w_k . x) +
//! bcheck_k sin(w_k . x)` trained by the continuous resampling loop:
//! random-walk the frequencies, solve the ridge-regularized least
//! squares problem for the weights, resample frequencies with
//! probabilities proportional to `|(bhat_k, bcheck_k)|`. The networks
//! advance in lockstep so the jointly best validation iteration can be
//! retained. Prediction takes the argmax over the per-digit outputs.
//!
//! The weight pair of a feature is packed as the complex number
//! `bhat + i bcheck`; the normal equations of the real problem are then
//! exactly the complex-packed system solved by the shared CG core under
//! the real inner product.

use std::io::Read;

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::linalg::{cg_core, phase_matrix, CgOutcome};
use crate::model::{C64, RffModel};
use crate::rng::RngStream;
use crate::sampler::multinomial_resample;

/// A parsed IDX image file with pixels scaled to `[0, 1]`.
#[derive(Debug, Clone)]
pub struct IdxImages {
    pub count: usize,
    pub rows: usize,
    pub cols: usize,
    /// `count * rows * cols` values, image-major, row-major inside an image.
    pub pixels: Vec<f64>,
}

impl IdxImages {
    /// Pixels of one image.
    pub fn image(&self, i: usize) -> &[f64] {
        let d = self.rows * self.cols;
        &self.pixels[i * d..(i + 1) * d]
    }

    pub fn dim(&self) -> usize {
        self.rows * self.cols
    }

    /// Copy the selected images into a fresh set.
    pub fn select(&self, indices: &[usize]) -> IdxImages {
        let d = self.dim();
        let mut pixels = Vec::with_capacity(indices.len() * d);
        for &i in indices {
            pixels.extend_from_slice(self.image(i));
        }
        IdxImages { count: indices.len(), rows: self.rows, cols: self.cols, pixels }
    }
}

/// A parsed IDX label file.
#[derive(Debug, Clone)]
pub struct IdxLabels {
    pub count: usize,
    pub labels: Vec<u8>,
}

impl IdxLabels {
    pub fn select(&self, indices: &[usize]) -> IdxLabels {
        let labels: Vec<u8> = indices.iter().map(|&i| self.labels[i]).collect();
        IdxLabels { count: labels.len(), labels }
    }
}

const IMAGE_MAGIC: u32 = 2051;
const LABEL_MAGIC: u32 = 2049;

/// Transparently gunzip when the stream carries the gzip signature.
fn maybe_gunzip(bytes: &[u8]) -> Result<Vec<u8>> {
    if bytes.len() >= 2 && bytes[0] == 0x1f && bytes[1] == 0x8b {
        let mut out = Vec::new();
        flate2::read::GzDecoder::new(bytes).read_to_end(&mut out)?;
        Ok(out)
    } else {
        Ok(bytes.to_vec())
    }
}

fn read_u32_be(data: &[u8], offset: usize, what: &str) -> Result<u32> {
    let end = offset + 4;
    if data.len() < end {
        return Err(Error::Format(format!(
            "truncated IDX header: {what} needs bytes {offset}..{end}, have {}",
            data.len()
        )));
    }
    Ok(u32::from_be_bytes([data[offset], data[offset + 1], data[offset + 2], data[offset + 3]]))
}

/// Parse an IDX image file (magic 2051), gzip-compressed or raw.
pub fn load_idx_images(bytes: &[u8]) -> Result<IdxImages> {
    let data = maybe_gunzip(bytes)?;
    let magic = read_u32_be(&data, 0, "magic")?;
    if magic != IMAGE_MAGIC {
        return Err(Error::Format(format!(
            "bad IDX magic {magic}, expected {IMAGE_MAGIC} for images"
        )));
    }
    let count = read_u32_be(&data, 4, "count")? as usize;
    let rows = read_u32_be(&data, 8, "rows")? as usize;
    let cols = read_u32_be(&data, 12, "cols")? as usize;
    let payload = &data[16..];
    let need = count
        .checked_mul(rows)
        .and_then(|n| n.checked_mul(cols))
        .ok_or_else(|| Error::Format("IDX image dimensions overflow".into()))?;
    if payload.len() != need {
        return Err(Error::Format(format!(
            "IDX image payload has {} bytes, the declared {count} x {rows} x {cols} needs {need}",
            payload.len()
        )));
    }
    let pixels = payload.iter().map(|&b| b as f64 / 255.0).collect();
    Ok(IdxImages { count, rows, cols, pixels })
}

/// Parse an IDX label file (magic 2049), gzip-compressed or raw.
pub fn load_idx_labels(bytes: &[u8]) -> Result<IdxLabels> {
    let data = maybe_gunzip(bytes)?;
    let magic = read_u32_be(&data, 0, "magic")?;
    if magic != LABEL_MAGIC {
        return Err(Error::Format(format!(
            "bad IDX magic {magic}, expected {LABEL_MAGIC} for labels"
        )));
    }
    let count = read_u32_be(&data, 4, "count")? as usize;
    let payload = &data[8..];
    if payload.len() != count {
        return Err(Error::Format(format!(
            "IDX label payload has {} bytes, the declared count is {count}",
            payload.len()
        )));
    }
    for (i, &l) in payload.iter().enumerate() {
        if l > 9 {
            return Err(Error::Format(format!("label {l} at index {i} is outside 0-9")));
        }
    }
    Ok(IdxLabels { count, labels: payload.to_vec() })
}

/// Serialize raw byte pixels into the IDX image layout.
pub fn encode_idx_images(rows: usize, cols: usize, raw: &[u8]) -> Vec<u8> {
    assert!(rows > 0 && cols > 0 && raw.len() % (rows * cols) == 0);
    let count = raw.len() / (rows * cols);
    let mut out = Vec::with_capacity(16 + raw.len());
    out.extend_from_slice(&IMAGE_MAGIC.to_be_bytes());
    out.extend_from_slice(&(count as u32).to_be_bytes());
    out.extend_from_slice(&(rows as u32).to_be_bytes());
    out.extend_from_slice(&(cols as u32).to_be_bytes());
    out.extend_from_slice(raw);
    out
}

/// Serialize labels into the IDX label layout.
pub fn encode_idx_labels(labels: &[u8]) -> Vec<u8> {
    let mut out = Vec::with_capacity(8 + labels.len());
    out.extend_from_slice(&LABEL_MAGIC.to_be_bytes());
    out.extend_from_slice(&(labels.len() as u32).to_be_bytes());
    out.extend_from_slice(labels);
    out
}

/// One digit's cos/sin feature network.
#[derive(Debug, Clone)]
pub struct CosSinModel {
    pub dim: usize,
    /// Row-major K x dim frequencies.
    pub freqs: Vec<f64>,
    pub cos_weights: Vec<f64>,
    pub sin_weights: Vec<f64>,
}

impl CosSinModel {
    pub fn k(&self) -> usize {
        self.cos_weights.len()
    }

    /// Network outputs at `points` (row-major, one point per row).
    pub fn evaluate_batch(&self, points: &[f64]) -> Result<Vec<f64>> {
        if points.len() % self.dim != 0 {
            return Err(Error::DimensionMismatch(format!(
                "point buffer length {} is not a multiple of dimension {}",
                points.len(),
                self.dim
            )));
        }
        let theta = phase_matrix(points, &self.freqs, self.dim);
        let k = self.k();
        Ok(theta
            .par_chunks(k)
            .map(|row| {
                let mut acc = 0.0;
                for ((&t, &a), &b) in row.iter().zip(&self.cos_weights).zip(&self.sin_weights)
                {
                    let (s, c) = t.sin_cos();
                    acc += a * c + b * s;
                }
                acc
            })
            .collect())
    }

    /// The pointwise-equal complex model: amplitudes `(bhat - i bcheck)/2`
    /// on `w_k` plus the conjugates on `-w_k`.
    pub fn to_complex(&self) -> RffModel {
        let k = self.k();
        let mut coords = Vec::with_capacity(2 * self.freqs.len());
        coords.extend_from_slice(&self.freqs);
        coords.extend(self.freqs.iter().map(|c| -c));
        let mut amps = Vec::with_capacity(2 * k);
        for (&a, &b) in self.cos_weights.iter().zip(&self.sin_weights) {
            amps.push(C64::new(a / 2.0, -b / 2.0));
        }
        for (&a, &b) in self.cos_weights.iter().zip(&self.sin_weights) {
            amps.push(C64::new(a / 2.0, b / 2.0));
        }
        RffModel::new(
            crate::model::FrequencySet::continuous(self.dim, coords),
            amps,
        )
    }
}

/// Models for a set of digits, aligned index-for-index with `digits`.
#[derive(Debug, Clone)]
pub struct OneVsAllEnsemble {
    pub digits: Vec<u8>,
    pub models: Vec<CosSinModel>,
}

impl OneVsAllEnsemble {
    /// Predicted digit for one image: the digit whose network produces
    /// the highest output, ties broken by the smallest digit.
    pub fn predict(&self, image: &[f64]) -> Result<u8> {
        let scores = self.scores(image)?;
        Ok(self.digits[argmax_first(&scores)])
    }

    fn scores(&self, image: &[f64]) -> Result<Vec<f64>> {
        self.models.iter().map(|m| Ok(m.evaluate_batch(image)?[0])).collect()
    }
}

/// First-occurrence argmax; with the digit lists sorted ascending this
/// implements the smallest-digit tie rule.
fn argmax_first(scores: &[f64]) -> usize {
    let mut best = 0;
    for (i, &s) in scores.iter().enumerate().skip(1) {
        if s > scores[best] {
            best = i;
        }
    }
    best
}

/// Fraction of images whose predicted digit matches the label.
pub fn accuracy(ensemble: &OneVsAllEnsemble, images: &IdxImages, labels: &IdxLabels) -> Result<f64> {
    if images.count == 0 {
        return Err(Error::Degenerate("accuracy of an empty image set is undefined".into()));
    }
    if images.count != labels.count {
        return Err(Error::DimensionMismatch(format!(
            "{} images vs {} labels",
            images.count, labels.count
        )));
    }
    // Batch evaluation per model, then argmax per column.
    let mut outputs = Vec::with_capacity(ensemble.models.len());
    for m in &ensemble.models {
        if m.dim != images.dim() {
            return Err(Error::DimensionMismatch(format!(
                "model dimension {} vs image dimension {}",
                m.dim,
                images.dim()
            )));
        }
        outputs.push(m.evaluate_batch(&images.pixels)?);
    }
    let mut correct = 0usize;
    let mut scores = vec![0.0; ensemble.models.len()];
    for j in 0..images.count {
        for (s, out) in scores.iter_mut().zip(&outputs) {
            *s = out[j];
        }
        if ensemble.digits[argmax_first(&scores)] == labels.labels[j] {
            correct += 1;
        }
    }
    Ok(correct as f64 / images.count as f64)
}

/// Configuration of a one-vs-all training run.
#[derive(Debug, Clone)]
pub struct MnistConfig {
    /// Digits to train networks for, ascending and distinct.
    pub digits: Vec<u8>,
    pub k: usize,
    pub iterations: usize,
    /// Random-walk step size.
    pub delta: f64,
    /// Ridge weight on the `(1/J)`-scaled objective.
    pub lambda: f64,
    pub cg_rel_tol: f64,
    pub cg_max_iters: usize,
    pub seed: u64,
}

impl MnistConfig {
    /// Four-digit subset at reduced width; finishes on a desk machine.
    pub fn desk(seed: u64) -> Self {
        MnistConfig {
            digits: vec![0, 1, 2, 8],
            k: 2000,
            iterations: 300,
            delta: 0.005,
            lambda: 2.0,
            cg_rel_tol: 1e-4,
            cg_max_iters: 2000,
            seed,
        }
    }

    /// The full ten-digit configuration.
    pub fn full(seed: u64) -> Self {
        MnistConfig { digits: (0..10).collect(), k: 10_000, iterations: 6000, ..Self::desk(seed) }
    }

    pub fn validate(&self) -> Result<()> {
        if self.digits.is_empty() {
            return Err(Error::Config("digit list must be non-empty".into()));
        }
        let mut sorted = self.digits.clone();
        sorted.sort_unstable();
        sorted.dedup();
        if sorted != self.digits || self.digits.iter().any(|&d| d > 9) {
            return Err(Error::Config(
                "digits must be distinct, ascending, and in 0-9".into(),
            ));
        }
        if self.k == 0 || self.iterations == 0 {
            return Err(Error::Config("K and iteration count must be positive".into()));
        }
        if !(self.delta > 0.0) || !(self.lambda >= 0.0) || !(self.cg_rel_tol > 0.0) {
            return Err(Error::Config(
                "delta must be positive, lambda non-negative, CG tolerance positive".into(),
            ));
        }
        Ok(())
    }
}

/// Per-digit, per-iteration log row. Accuracies are the binary
/// one-vs-all decisions thresholded at 1/2.
#[derive(Debug, Clone)]
pub struct DigitIterationRecord {
    pub iteration: usize,
    pub digit: u8,
    pub train_acc: f64,
    pub val_acc: f64,
    pub cg_iters: usize,
}

/// Joint (argmax over digits) accuracy at one iteration.
#[derive(Debug, Clone)]
pub struct MulticlassRecord {
    pub iteration: usize,
    pub train_acc: f64,
    pub val_acc: f64,
}

#[derive(Debug, Clone, Default)]
pub struct MnistHistory {
    pub per_digit: Vec<DigitIterationRecord>,
    pub multiclass: Vec<MulticlassRecord>,
    pub best_iteration: usize,
    pub best_val_accuracy: f64,
    /// Multiclass training accuracy at the best-validation iteration.
    pub best_train_accuracy: f64,
}

/// The cos/sin design on a fixed set of points: `cos` and `sin` planes
/// of `theta = X W^T`, materialized once per iteration.
struct CosSinDesign {
    j: usize,
    k: usize,
    cos: Vec<f64>,
    sin: Vec<f64>,
}

impl CosSinDesign {
    fn build(points: &[f64], freqs: &[f64], dim: usize) -> Self {
        let theta = phase_matrix(points, freqs, dim);
        let j = points.len() / dim;
        let k = freqs.len() / dim;
        let mut cos = vec![0.0; theta.len()];
        let mut sin = vec![0.0; theta.len()];
        cos.par_chunks_mut(4096)
            .zip(sin.par_chunks_mut(4096))
            .zip(theta.par_chunks(4096))
            .for_each(|((c_chunk, s_chunk), t_chunk)| {
                for ((c, s), &t) in c_chunk.iter_mut().zip(s_chunk.iter_mut()).zip(t_chunk) {
                    let (sv, cv) = t.sin_cos();
                    *c = cv;
                    *s = sv;
                }
            });
        CosSinDesign { j, k, cos, sin }
    }

    /// Network outputs for packed weights `w = bhat + i bcheck`.
    fn apply(&self, w: &[C64]) -> Vec<f64> {
        debug_assert_eq!(w.len(), self.k);
        let k = self.k;
        (0..self.j)
            .into_par_iter()
            .map(|j| {
                let c_row = &self.cos[j * k..(j + 1) * k];
                let s_row = &self.sin[j * k..(j + 1) * k];
                let mut acc = 0.0;
                for ((&c, &s), wk) in c_row.iter().zip(s_row).zip(w) {
                    acc += wk.re * c + wk.im * s;
                }
                acc
            })
            .collect()
    }

    /// Packed adjoint `(sum_j r_j cos_jk) + i (sum_j r_j sin_jk)`.
    ///
    /// Parallel partials over fixed row blocks, combined in block order,
    /// so the result does not depend on the thread count.
    fn adjoint(&self, r: &[f64]) -> Vec<C64> {
        debug_assert_eq!(r.len(), self.j);
        let k = self.k;
        const BLOCK: usize = 1024;
        let partials: Vec<Vec<C64>> = r
            .par_chunks(BLOCK)
            .enumerate()
            .map(|(b, r_block)| {
                let mut acc = vec![C64::new(0.0, 0.0); k];
                let row0 = b * BLOCK;
                for (dj, &rj) in r_block.iter().enumerate() {
                    let j = row0 + dj;
                    let c_row = &self.cos[j * k..(j + 1) * k];
                    let s_row = &self.sin[j * k..(j + 1) * k];
                    for ((a, &c), &s) in acc.iter_mut().zip(c_row).zip(s_row) {
                        a.re += rj * c;
                        a.im += rj * s;
                    }
                }
                acc
            })
            .collect();
        let mut out = vec![C64::new(0.0, 0.0); k];
        for p in partials {
            for (o, v) in out.iter_mut().zip(p) {
                *o += v;
            }
        }
        out
    }

    /// CG solve of the ridge normal equations in packed form.
    fn solve(&self, y: &[f64], lambda: f64, rel_tol: f64, max_iters: usize) -> Result<CgOutcome> {
        let j = self.j as f64;
        let mut b = self.adjoint(y);
        for v in b.iter_mut() {
            *v /= j;
        }
        let op = |w: &[C64]| {
            let pred = self.apply(w);
            let mut out = self.adjoint(&pred);
            for (o, wk) in out.iter_mut().zip(w) {
                *o = *o / j + lambda * wk;
            }
            out
        };
        cg_core(op, &b, rel_tol, max_iters)
    }
}

struct DigitState {
    digit: u8,
    freqs: Vec<f64>,
    weights: Vec<C64>,
    walk_rng: RngStream,
    resample_rng: RngStream,
    /// {0,1} regression targets on the training split.
    targets: Vec<f64>,
}

fn binary_accuracy(preds: &[f64], targets: &[f64]) -> f64 {
    let correct = preds
        .iter()
        .zip(targets)
        .filter(|(&p, &t)| (p > 0.5) == (t > 0.5))
        .count();
    correct as f64 / preds.len().max(1) as f64
}

fn multiclass_accuracy(outputs: &[Vec<f64>], digits: &[u8], labels: &[u8]) -> f64 {
    let mut scores = vec![0.0; outputs.len()];
    let mut correct = 0usize;
    for (j, &label) in labels.iter().enumerate() {
        for (s, out) in scores.iter_mut().zip(outputs) {
            *s = out[j];
        }
        if digits[argmax_first(&scores)] == label {
            correct += 1;
        }
    }
    correct as f64 / labels.len().max(1) as f64
}

/// Row indices whose label belongs to the digit list.
pub fn filter_digits(labels: &IdxLabels, digits: &[u8]) -> Vec<usize> {
    labels
        .labels
        .iter()
        .enumerate()
        .filter(|(_, l)| digits.contains(l))
        .map(|(i, _)| i)
        .collect()
}

/// Train one cos/sin network per digit in lockstep and retain the
/// weights of the iteration with the best joint validation accuracy.
pub fn train_one_vs_all(
    train_images: &IdxImages,
    train_labels: &IdxLabels,
    val_images: &IdxImages,
    val_labels: &IdxLabels,
    config: &MnistConfig,
) -> Result<(OneVsAllEnsemble, MnistHistory)> {
    config.validate()?;
    if train_images.count != train_labels.count || val_images.count != val_labels.count {
        return Err(Error::DimensionMismatch(
            "image and label counts differ".into(),
        ));
    }
    if train_images.dim() != val_images.dim() {
        return Err(Error::DimensionMismatch(
            "training and validation image shapes differ".into(),
        ));
    }

    // Restrict both splits to the digits being trained.
    let train_keep = filter_digits(train_labels, &config.digits);
    let val_keep = filter_digits(val_labels, &config.digits);
    if train_keep.is_empty() || val_keep.is_empty() {
        return Err(Error::Degenerate(
            "no samples with the requested digits in one of the splits".into(),
        ));
    }
    let train_x = train_images.select(&train_keep);
    let train_y = train_labels.select(&train_keep);
    let val_x = val_images.select(&val_keep);
    let val_y = val_labels.select(&val_keep);

    let dim = train_x.dim();
    let root = RngStream::new(config.seed).child("digit");
    let mut states: Vec<DigitState> = config
        .digits
        .iter()
        .map(|&digit| {
            let stream = root.child_index(digit as u64);
            DigitState {
                digit,
                freqs: vec![0.0; config.k * dim],
                weights: vec![C64::new(0.0, 0.0); config.k],
                walk_rng: stream.child("walk"),
                resample_rng: stream.child("resample"),
                targets: train_y
                    .labels
                    .iter()
                    .map(|&l| if l == digit { 1.0 } else { 0.0 })
                    .collect(),
            }
        })
        .collect();

    let val_targets: Vec<Vec<f64>> = config
        .digits
        .iter()
        .map(|&digit| {
            val_y.labels.iter().map(|&l| if l == digit { 1.0 } else { 0.0 }).collect()
        })
        .collect();

    let mut history = MnistHistory::default();
    let mut best: Option<(usize, f64, f64, Vec<(Vec<f64>, Vec<C64>)>)> = None;

    for iteration in 1..=config.iterations {
        let mut train_outputs = Vec::with_capacity(states.len());
        let mut val_outputs = Vec::with_capacity(states.len());
        let mut cg_counts = Vec::with_capacity(states.len());

        for state in states.iter_mut() {
            for c in state.freqs.iter_mut() {
                *c += config.delta * state.walk_rng.standard_normal();
            }
            let design = CosSinDesign::build(&train_x.pixels, &state.freqs, dim);
            let outcome =
                design.solve(&state.targets, config.lambda, config.cg_rel_tol, config.cg_max_iters)?;
            if !outcome.converged {
                return Err(Error::Solver(format!(
                    "digit {}: CG failed to converge at iteration {iteration}: relative residual {:.3e} after {} iterations",
                    state.digit, outcome.rel_residual, outcome.iters
                )));
            }
            state.weights = outcome.amps;
            cg_counts.push(outcome.iters);
            train_outputs.push(design.apply(&state.weights));
            let val_design = CosSinDesign::build(&val_x.pixels, &state.freqs, dim);
            val_outputs.push(val_design.apply(&state.weights));
        }

        for (i, state) in states.iter().enumerate() {
            history.per_digit.push(DigitIterationRecord {
                iteration,
                digit: state.digit,
                train_acc: binary_accuracy(&train_outputs[i], &state.targets),
                val_acc: binary_accuracy(&val_outputs[i], &val_targets[i]),
                cg_iters: cg_counts[i],
            });
        }
        let train_mc = multiclass_accuracy(&train_outputs, &config.digits, &train_y.labels);
        let val_mc = multiclass_accuracy(&val_outputs, &config.digits, &val_y.labels);
        history.multiclass.push(MulticlassRecord {
            iteration,
            train_acc: train_mc,
            val_acc: val_mc,
        });
        if best.as_ref().is_none_or(|(_, v, _, _)| val_mc > *v) {
            let snapshot = states
                .iter()
                .map(|s| (s.freqs.clone(), s.weights.clone()))
                .collect();
            best = Some((iteration, val_mc, train_mc, snapshot));
        }

        // Resample each network's frequencies by weight magnitude.
        for state in states.iter_mut() {
            let total: f64 = state.weights.iter().map(|w| w.norm()).sum();
            if !(total > 0.0) {
                return Err(Error::Degenerate(format!(
                    "digit {}: all weights vanish at iteration {iteration}; resampling is undefined",
                    state.digit
                )));
            }
            let probs: Vec<f64> = state.weights.iter().map(|w| w.norm() / total).collect();
            let picks = multinomial_resample(&probs, config.k, &mut state.resample_rng)?;
            let mut freqs = Vec::with_capacity(state.freqs.len());
            for &p in &picks {
                freqs.extend_from_slice(&state.freqs[p * dim..(p + 1) * dim]);
            }
            state.freqs = freqs;
        }
    }

    let (best_iteration, best_val, best_train, snapshot) =
        best.expect("at least one iteration ran");
    history.best_iteration = best_iteration;
    history.best_val_accuracy = best_val;
    history.best_train_accuracy = best_train;

    let models = config
        .digits
        .iter()
        .zip(snapshot)
        .map(|(_, (freqs, weights))| CosSinModel {
            dim,
            freqs,
            cos_weights: weights.iter().map(|w| w.re).collect(),
            sin_weights: weights.iter().map(|w| w.im).collect(),
        })
        .collect();
    Ok((OneVsAllEnsemble { digits: config.digits.clone(), models }, history))
}
