//! Amplitude aggregation, cutoff distributions, resampling, and the random
//! walk proposals that drive the adaptive frequency search.
//!
//! Resampling draws consume the stream in a documented order (cutoff draws
//! first, then base-distribution draws) so a seed fully determines the
//! output.

use std::collections::HashMap;

use crate::error::{Error, Result};
use crate::model::{C64, FrequencySet, LatticeSpec};
use crate::rng::RngStream;

/// Amplitude cutoff threshold and base-distribution mixing ratio.
#[derive(Clone, Copy, Debug)]
pub struct CutoffConfig {
    pub epsilon: f64,
    pub q_epsilon: f64,
}

impl CutoffConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.epsilon >= 0.0) {
            return Err(Error::Config(format!("epsilon must be nonnegative, got {}", self.epsilon)));
        }
        if !(0.0..1.0).contains(&self.q_epsilon) {
            return Err(Error::Config(format!(
                "q_epsilon must lie in [0, 1), got {}",
                self.q_epsilon
            )));
        }
        Ok(())
    }
}

/// Random walk proposal family.
#[derive(Clone, Copy, Debug)]
pub enum WalkMode {
    Continuous,
    LatticeProjected(LatticeSpec),
    AdaptiveCovariance { eps_hat: f64 },
}

#[derive(Clone, Copy, Debug)]
pub struct WalkConfig {
    /// Step size: standard deviation of the Gaussian perturbation.
    pub delta: f64,
    pub mode: WalkMode,
}

impl WalkConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.delta > 0.0) {
            return Err(Error::Config(format!("delta must be positive, got {}", self.delta)));
        }
        if let WalkMode::AdaptiveCovariance { eps_hat } = self.mode {
            if !(eps_hat > 0.0) {
                return Err(Error::Config(format!("eps_hat must be positive, got {eps_hat}")));
            }
        }
        Ok(())
    }
}

/// Amplitudes grouped by exact frequency coincidence, in first-seen order.
#[derive(Clone, Debug)]
pub struct AggregatedAmplitudes {
    /// Group id of each original feature index.
    pub group_of: Vec<usize>,
    /// First original feature index of each group (its representative).
    pub reps: Vec<usize>,
    /// Sum of amplitudes over each group.
    pub aggregate: Vec<C64>,
    /// Member count of each group.
    pub multiplicity: Vec<usize>,
}

impl AggregatedAmplitudes {
    pub fn num_groups(&self) -> usize {
        self.reps.len()
    }

    /// Total feature count, equal to the original K.
    pub fn total(&self) -> usize {
        self.group_of.len()
    }
}

fn frequency_keys(freqs: &FrequencySet) -> Vec<Vec<u64>> {
    let d = freqs.dim();
    match freqs {
        // Bit-exact coordinates: duplicates only arise from resampling
        // copying values verbatim, so bit equality is the right equivalence.
        FrequencySet::Continuous { coords, .. } => coords
            .chunks(d)
            .map(|row| row.iter().map(|c| c.to_bits()).collect())
            .collect(),
        FrequencySet::Lattice { indices, .. } => indices
            .chunks(d)
            .map(|row| row.iter().map(|&n| n as u64).collect())
            .collect(),
    }
}

/// Groups coinciding frequencies and sums their amplitudes.
pub fn aggregate_equal_frequencies(freqs: &FrequencySet, amps: &[C64]) -> AggregatedAmplitudes {
    assert_eq!(freqs.len(), amps.len(), "amplitude count must equal K");
    let keys = frequency_keys(freqs);
    let mut ids: HashMap<&[u64], usize> = HashMap::with_capacity(keys.len());
    let mut group_of = Vec::with_capacity(keys.len());
    let mut reps = Vec::new();
    let mut aggregate: Vec<C64> = Vec::new();
    let mut multiplicity: Vec<usize> = Vec::new();
    for (k, key) in keys.iter().enumerate() {
        let id = *ids.entry(key.as_slice()).or_insert_with(|| {
            reps.push(k);
            aggregate.push(C64::new(0.0, 0.0));
            multiplicity.push(0);
            reps.len() - 1
        });
        group_of.push(id);
        aggregate[id] += amps[k];
        multiplicity[id] += 1;
    }
    AggregatedAmplitudes { group_of, reps, aggregate, multiplicity }
}

/// Probability distribution over the groups surviving an amplitude cutoff.
#[derive(Clone, Debug)]
pub struct CutoffDistribution {
    /// Surviving group ids, in group order.
    pub groups: Vec<usize>,
    /// Probability of each surviving group; sums to 1.
    pub probs: Vec<f64>,
}

/// Normalized aggregated amplitudes over the groups with `|aggregate| >= epsilon`.
pub fn cutoff_distribution(agg: &AggregatedAmplitudes, epsilon: f64) -> Result<CutoffDistribution> {
    let mut groups = Vec::new();
    let mut weights = Vec::new();
    let mut total = 0.0;
    for (n, b) in agg.aggregate.iter().enumerate() {
        let w = b.norm();
        if w >= epsilon && w > 0.0 {
            groups.push(n);
            weights.push(w);
            total += w;
        }
    }
    if groups.is_empty() || total <= 0.0 {
        return Err(Error::EmptyCutoff { epsilon });
    }
    let probs = weights.into_iter().map(|w| w / total).collect();
    Ok(CutoffDistribution { groups, probs })
}

/// `count` independent draws with replacement from a categorical distribution.
pub fn multinomial_resample(probs: &[f64], count: usize, rng: &mut RngStream) -> Result<Vec<usize>> {
    if probs.is_empty() {
        return Err(Error::InvalidProbabilities("empty probability vector".into()));
    }
    let mut total = 0.0;
    for &p in probs {
        if !p.is_finite() || p < 0.0 {
            return Err(Error::InvalidProbabilities(format!("entry {p} is not a probability")));
        }
        total += p;
    }
    if (total - 1.0).abs() > 1e-9 {
        return Err(Error::InvalidProbabilities(format!("probabilities sum to {total}")));
    }
    let mut cum = Vec::with_capacity(probs.len());
    let mut acc = 0.0;
    for &p in probs {
        acc += p;
        cum.push(acc);
    }
    let mut out = Vec::with_capacity(count);
    for _ in 0..count {
        // Scaling the uniform by the actual total makes the last interval
        // close exactly despite rounding in the prefix sums.
        let target = rng.uniform() * total;
        let idx = cum.partition_point(|&c| c <= target).min(probs.len() - 1);
        out.push(idx);
    }
    Ok(out)
}

/// Result of a mixed resampling round.
#[derive(Debug)]
pub struct MixedResampleOutcome {
    pub freqs: FrequencySet,
    /// Count drawn from the cutoff distribution.
    pub from_cutoff: usize,
    /// Count drawn fresh from the base distribution.
    pub fresh: usize,
}

/// Draws `K - ceil(K q_epsilon)` frequencies from the cutoff distribution
/// followed by `ceil(K q_epsilon)` fresh draws from the base distribution.
///
/// The base sampler is only invoked when the fresh count is positive.
pub fn mixed_resample(
    freqs: &FrequencySet,
    agg: &AggregatedAmplitudes,
    cfg: &CutoffConfig,
    base_sampler: &mut dyn FnMut(usize, &mut RngStream) -> Result<FrequencySet>,
    k: usize,
    rng: &mut RngStream,
) -> Result<MixedResampleOutcome> {
    cfg.validate()?;
    // floor on the cutoff share, complement on the fresh share: the two
    // always add to K even when K*q_epsilon is on a rounding boundary.
    let from_cutoff = (k as f64 * (1.0 - cfg.q_epsilon)).floor() as usize;
    let fresh = k - from_cutoff;
    let dist = cutoff_distribution(agg, cfg.epsilon)?;
    let picks = multinomial_resample(&dist.probs, from_cutoff, rng)?;
    let rows: Vec<usize> = picks.iter().map(|&i| agg.reps[dist.groups[i]]).collect();
    let mut out = freqs.select_rows(&rows);
    if fresh > 0 {
        let extra = base_sampler(fresh, rng)?;
        if extra.len() != fresh {
            return Err(Error::Config(format!(
                "base sampler returned {} frequencies, expected {fresh}",
                extra.len()
            )));
        }
        out = concat_freqs(&out, &extra)?;
    }
    Ok(MixedResampleOutcome { freqs: out, from_cutoff, fresh })
}

fn concat_freqs(a: &FrequencySet, b: &FrequencySet) -> Result<FrequencySet> {
    if a.dim() != b.dim() {
        return Err(Error::DimensionMismatch(format!(
            "cannot concatenate frequency sets of dimensions {} and {}",
            a.dim(),
            b.dim()
        )));
    }
    match (a, b) {
        (
            FrequencySet::Continuous { dim, coords },
            FrequencySet::Continuous { coords: more, .. },
        ) => {
            let mut all = coords.clone();
            all.extend_from_slice(more);
            Ok(FrequencySet::continuous(*dim, all))
        }
        (
            FrequencySet::Lattice { spec, dim, indices },
            FrequencySet::Lattice { spec: spec2, indices: more, .. },
        ) => {
            if spec.period() != spec2.period() {
                return Err(Error::Config("lattice periods differ between sets".into()));
            }
            let mut all = indices.clone();
            all.extend_from_slice(more);
            Ok(FrequencySet::lattice(*spec, *dim, all))
        }
        _ => Err(Error::Config("cannot mix lattice and continuous frequency sets".into())),
    }
}

/// Per-feature resampling over weights `|amps[k]|` zeroed below `epsilon`,
/// without aggregation or base mixing; the rule of the adaptive-walk loop.
pub fn simple_cutoff_resample(
    freqs: &FrequencySet,
    amps: &[C64],
    epsilon: f64,
    rng: &mut RngStream,
) -> Result<FrequencySet> {
    assert_eq!(freqs.len(), amps.len());
    let mut weights: Vec<f64> = amps.iter().map(|a| a.norm()).collect();
    let mut total: f64 = weights.iter().filter(|&&w| w >= epsilon).sum();
    if total <= 0.0 {
        // No amplitude survives: fall back to no cutoff for this round.
        total = weights.iter().sum();
        if total <= 0.0 {
            return Err(Error::EmptyCutoff { epsilon });
        }
    } else {
        for w in weights.iter_mut() {
            if *w < epsilon {
                *w = 0.0;
            }
        }
    }
    let probs: Vec<f64> = weights.iter().map(|w| w / total).collect();
    let picks = multinomial_resample(&probs, freqs.len(), rng)?;
    Ok(freqs.select_rows(&picks))
}

/// Gaussian perturbation of every coordinate; continuous sets only.
pub fn random_walk_step(
    freqs: &FrequencySet,
    cfg: &WalkConfig,
    rng: &mut RngStream,
) -> Result<FrequencySet> {
    cfg.validate()?;
    match freqs {
        FrequencySet::Continuous { dim, coords } => {
            let mut out = coords.clone();
            for c in out.iter_mut() {
                *c += cfg.delta * rng.standard_normal();
            }
            Ok(FrequencySet::continuous(*dim, out))
        }
        FrequencySet::Lattice { .. } => Err(Error::Config(
            "continuous walk requires a continuous frequency set".into(),
        )),
    }
}

/// Half-away-from-zero rounding of a coordinate to the nearest lattice index.
fn round_to_index(coord: f64, spacing: f64) -> i64 {
    (coord / spacing).round() as i64
}

/// Gaussian perturbation followed by projection to the nearest lattice point.
pub fn lattice_walk_step(
    freqs: &FrequencySet,
    cfg: &WalkConfig,
    rng: &mut RngStream,
) -> Result<FrequencySet> {
    cfg.validate()?;
    let spec = match cfg.mode {
        WalkMode::LatticeProjected(spec) => spec,
        _ => return Err(Error::Config("lattice walk requires LatticeProjected mode".into())),
    };
    match freqs {
        FrequencySet::Lattice { spec: fspec, dim, indices } => {
            if fspec.period() != spec.period() {
                return Err(Error::Config("walk lattice period differs from the frequency set".into()));
            }
            let h = spec.spacing();
            let mut out = Vec::with_capacity(indices.len());
            for &n in indices {
                let c = n as f64 * h + cfg.delta * rng.standard_normal();
                out.push(round_to_index(c, h));
            }
            Ok(FrequencySet::lattice(spec, *dim, out))
        }
        FrequencySet::Continuous { .. } => {
            Err(Error::Config("lattice walk requires a lattice frequency set".into()))
        }
    }
}

/// Running record of per-iteration frequency covariances and their mean.
#[derive(Clone, Debug)]
pub struct CovarianceState {
    dim: usize,
    /// One d x d covariance per recorded iteration, row-major.
    per_iteration: Vec<Vec<f64>>,
}

impl CovarianceState {
    pub fn new(dim: usize) -> Self {
        Self { dim, per_iteration: Vec::new() }
    }

    pub fn iterations(&self) -> usize {
        self.per_iteration.len()
    }

    /// Arithmetic mean of the recorded covariances; identity before the
    /// first update.
    pub fn running_average(&self) -> Vec<f64> {
        let d = self.dim;
        if self.per_iteration.is_empty() {
            let mut eye = vec![0.0; d * d];
            for i in 0..d {
                eye[i * d + i] = 1.0;
            }
            return eye;
        }
        let mut avg = vec![0.0; d * d];
        for c in &self.per_iteration {
            for (a, v) in avg.iter_mut().zip(c) {
                *a += v;
            }
        }
        let n = self.per_iteration.len() as f64;
        for a in avg.iter_mut() {
            *a /= n;
        }
        avg
    }

    #[cfg(test)]
    fn push_raw(&mut self, c: Vec<f64>) {
        assert_eq!(c.len(), self.dim * self.dim);
        self.per_iteration.push(c);
    }
}

/// Appends the empirical covariance (about the empirical mean, with `1/K`
/// normalization) of the current frequencies.
pub fn update_covariance(cov: &mut CovarianceState, freqs: &FrequencySet) -> Result<()> {
    let d = freqs.dim();
    if d != cov.dim {
        return Err(Error::DimensionMismatch("covariance dimension differs from frequencies".into()));
    }
    let k = freqs.len();
    if k == 0 {
        return Err(Error::Degenerate("covariance of an empty frequency set".into()));
    }
    let dense = freqs.to_dense();
    let mut mean = vec![0.0; d];
    for row in dense.chunks(d) {
        for (m, &x) in mean.iter_mut().zip(row) {
            *m += x;
        }
    }
    for m in mean.iter_mut() {
        *m /= k as f64;
    }
    let mut c = vec![0.0; d * d];
    for row in dense.chunks(d) {
        for i in 0..d {
            let di = row[i] - mean[i];
            for j in 0..d {
                c[i * d + j] += di * (row[j] - mean[j]);
            }
        }
    }
    for v in c.iter_mut() {
        *v /= k as f64;
    }
    cov.per_iteration.push(c);
    Ok(())
}

/// Dense lower-triangular Cholesky factor of a small SPD matrix.
fn small_cholesky(a: &[f64], d: usize) -> Result<Vec<f64>> {
    let mut l = vec![0.0; d * d];
    for i in 0..d {
        for j in 0..=i {
            let mut s = a[i * d + j];
            for t in 0..j {
                s -= l[i * d + t] * l[j * d + t];
            }
            if i == j {
                if !(s > 0.0) {
                    return Err(Error::Solver(format!(
                        "covariance factorization failed at pivot {i} (value {s:e})"
                    )));
                }
                l[i * d + i] = s.sqrt();
            } else {
                l[i * d + j] = s / l[j * d + j];
            }
        }
    }
    Ok(l)
}

/// Gaussian perturbation with covariance `delta^2 (C + eps_hat I)` where `C`
/// is the running average covariance.
pub fn adaptive_walk_step(
    freqs: &FrequencySet,
    cfg: &WalkConfig,
    cov: &CovarianceState,
    rng: &mut RngStream,
) -> Result<FrequencySet> {
    cfg.validate()?;
    let eps_hat = match cfg.mode {
        WalkMode::AdaptiveCovariance { eps_hat } => eps_hat,
        _ => return Err(Error::Config("adaptive walk requires AdaptiveCovariance mode".into())),
    };
    match freqs {
        FrequencySet::Continuous { dim, coords } => {
            let d = *dim;
            if cov.dim != d {
                return Err(Error::DimensionMismatch(
                    "covariance dimension differs from frequencies".into(),
                ));
            }
            let mut c = cov.running_average();
            for i in 0..d {
                c[i * d + i] += eps_hat;
            }
            let l = small_cholesky(&c, d)?;
            let mut out = coords.clone();
            let mut z = vec![0.0; d];
            for row in out.chunks_mut(d) {
                for zi in z.iter_mut() {
                    *zi = rng.standard_normal();
                }
                for i in 0..d {
                    let mut step = 0.0;
                    for t in 0..=i {
                        step += l[i * d + t] * z[t];
                    }
                    row[i] += cfg.delta * step;
                }
            }
            Ok(FrequencySet::continuous(d, out))
        }
        FrequencySet::Lattice { .. } => {
            Err(Error::Config("adaptive walk requires a continuous frequency set".into()))
        }
    }
}
