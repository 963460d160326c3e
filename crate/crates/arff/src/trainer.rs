//! The adaptive resampling loop: alternate a random-walk perturbation of
//! the frequencies, a regularized least-squares solve for the
//! amplitudes, and an amplitude-weighted resampling of the frequencies.
//!
//! Three variants are provided. `Continuous` walks and resamples in
//! `R^d` with plain per-feature weights. `Lattice` walks on a Fourier
//! lattice and resamples from the cutoff distribution over distinct
//! frequencies, optionally mixing in fresh draws from the base
//! distribution. `Adaptive` walks in `R^d` with a step covariance
//! learned from past frequency populations and uses a simplified
//! per-feature cutoff.

use std::time::Instant;

use crate::error::{Error, Result};
use crate::linalg::{
    apply_design, cg_with_design, dense_solve, newton_with_design, Design, SolverConfig,
};
use crate::model::{relative_l2_error, C64, Dataset, FrequencySet, RffModel};
use crate::rng::RngStream;
use crate::sampler::{
    adaptive_walk_step, aggregate_equal_frequencies, lattice_walk_step, mixed_resample,
    multinomial_resample, random_walk_step, simple_cutoff_resample, update_covariance,
    CovarianceState, CutoffConfig, WalkConfig, WalkMode,
};
use crate::targets::{sample_base, BaseDistribution, TabulatedDistribution};

/// Which resampling variant to run.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Algorithm {
    /// Continuous frequencies, per-feature resampling weights, no cutoff.
    Continuous,
    /// Lattice frequencies, cutoff distribution over distinct
    /// frequencies, optional fresh-draw mixing.
    Lattice,
    /// Continuous frequencies, covariance-adapted walk, simplified cutoff.
    Adaptive,
}

/// How the initial frequency set is produced.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum InitMode {
    /// All frequencies start at the origin (the default; introduces no
    /// extra hyperparameters).
    ZeroFrequencies,
    /// Draw the initial frequencies from the base distribution.
    FromBase,
}

#[derive(Debug, Clone)]
pub struct TrainConfig {
    pub algorithm: Algorithm,
    /// Number of features K.
    pub k: usize,
    /// Number of resampling iterations N (a final solve follows).
    pub iterations: usize,
    pub walk: WalkConfig,
    pub cutoff: CutoffConfig,
    pub solver: SolverConfig,
    /// Distribution for fresh frequency draws (initialization and, for
    /// the lattice variant, the `q_epsilon` share of each resample).
    pub base: BaseDistribution,
    pub init: InitMode,
    /// Fraction of the provided data held out for validation, in (0, 1).
    pub validation_fraction: f64,
    pub seed: u64,
    /// Snapshot cadence in iterations; `None` means `ceil(N / 20)`,
    /// `Some(1)` keeps the full history.
    pub snapshot_stride: Option<usize>,
    /// When set, the total-variation distance between the resampled
    /// frequencies and this reference is recorded after every resample.
    pub track_optimal: Option<TabulatedDistribution>,
    /// Test-mode invariant check: every 50th iteration, re-solve densely
    /// and require coinciding frequencies to carry equal amplitudes.
    pub verify_equal_amplitudes: bool,
}

impl TrainConfig {
    pub fn new(
        algorithm: Algorithm,
        k: usize,
        iterations: usize,
        walk: WalkConfig,
        cutoff: CutoffConfig,
        solver: SolverConfig,
        base: BaseDistribution,
        seed: u64,
    ) -> Self {
        TrainConfig {
            algorithm,
            k,
            iterations,
            walk,
            cutoff,
            solver,
            base,
            init: InitMode::ZeroFrequencies,
            validation_fraction: 0.2,
            seed,
            snapshot_stride: None,
            track_optimal: None,
            verify_equal_amplitudes: false,
        }
    }

    /// Effective snapshot cadence.
    pub fn snapshot_cadence(&self) -> usize {
        match self.snapshot_stride {
            Some(s) => s.max(1),
            None => self.iterations.div_ceil(20).max(1),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.k == 0 {
            return Err(Error::Config("K must be at least 1".into()));
        }
        if self.iterations == 0 {
            return Err(Error::Config("iteration count must be at least 1".into()));
        }
        if !(self.validation_fraction > 0.0 && self.validation_fraction < 1.0) {
            return Err(Error::Config(format!(
                "validation fraction must lie in (0, 1), got {}",
                self.validation_fraction
            )));
        }
        self.walk.validate()?;
        self.cutoff.validate()?;
        match (self.algorithm, &self.walk.mode) {
            (Algorithm::Continuous, WalkMode::Continuous)
            | (Algorithm::Lattice, WalkMode::LatticeProjected(_))
            | (Algorithm::Adaptive, WalkMode::AdaptiveCovariance { .. }) => {}
            (alg, mode) => {
                return Err(Error::Config(format!(
                    "walk mode {mode:?} does not match algorithm {alg:?}"
                )))
            }
        }
        match (self.algorithm, &self.base) {
            (Algorithm::Continuous | Algorithm::Adaptive, BaseDistribution::StandardNormal { .. }) => {}
            (Algorithm::Lattice, BaseDistribution::LatticeProjectedNormal { .. })
            | (Algorithm::Lattice, BaseDistribution::Tabulated(_)) => {}
            (alg, _) => {
                return Err(Error::Config(format!(
                    "base distribution kind does not match algorithm {alg:?}"
                )))
            }
        }
        Ok(())
    }
}

/// One timed stage of the loop.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Phase {
    Walk,
    Solve,
    Resample,
    /// The extra solve after the last resampling iteration.
    Final,
}

impl Phase {
    pub fn as_str(self) -> &'static str {
        match self {
            Phase::Walk => "walk",
            Phase::Solve => "solve",
            Phase::Resample => "resample",
            Phase::Final => "final",
        }
    }
}

/// One row of the run log. Error and solver fields are present on solve
/// rows only.
#[derive(Debug, Clone)]
pub struct PhaseRecord {
    pub iteration: usize,
    pub phase: Phase,
    pub train_rel_err: Option<f64>,
    pub val_rel_err: Option<f64>,
    pub cg_iters: Option<usize>,
    pub wall_ms: f64,
}

/// Frequencies and amplitude moduli as they entered a solve.
#[derive(Debug, Clone)]
pub struct FrequencySnapshot {
    pub iteration: usize,
    pub freqs: FrequencySet,
    pub abs_amps: Vec<f64>,
}

#[derive(Debug, Clone, Default)]
pub struct RunHistory {
    /// Per-phase rows in execution order.
    pub records: Vec<PhaseRecord>,
    pub snapshots: Vec<FrequencySnapshot>,
    /// Relative error on the held-out test set, when one was provided.
    pub test_rel_err: Option<f64>,
    /// `(iteration, tv)` after each resample, when tracking is enabled.
    pub tv_to_reference: Vec<(usize, f64)>,
    pub warnings: Vec<String>,
}

impl RunHistory {
    /// Solve rows (the regular iterations plus the final solve), in order.
    pub fn solve_records(&self) -> impl Iterator<Item = &PhaseRecord> {
        self.records
            .iter()
            .filter(|r| matches!(r.phase, Phase::Solve | Phase::Final))
    }

    pub fn train_errors(&self) -> Vec<f64> {
        self.solve_records().filter_map(|r| r.train_rel_err).collect()
    }

    pub fn val_errors(&self) -> Vec<f64> {
        self.solve_records().filter_map(|r| r.val_rel_err).collect()
    }

    pub fn final_train_err(&self) -> Option<f64> {
        self.solve_records().last().and_then(|r| r.train_rel_err)
    }

    pub fn final_val_err(&self) -> Option<f64> {
        self.solve_records().last().and_then(|r| r.val_rel_err)
    }
}

/// Deterministic seeded holdout split: `floor(fraction * n)` validation
/// indices chosen by partial Fisher-Yates, both halves returned sorted.
pub fn validation_split(
    n: usize,
    fraction: f64,
    rng: &mut RngStream,
) -> Result<(Vec<usize>, Vec<usize>)> {
    let n_val = (fraction * n as f64).floor() as usize;
    if n_val == 0 || n_val >= n {
        return Err(Error::Config(format!(
            "validation split of {n} rows at fraction {fraction} leaves an empty side"
        )));
    }
    let mut idx: Vec<usize> = (0..n).collect();
    for i in 0..n_val {
        let pick = i + ((rng.uniform() * (n - i) as f64) as usize).min(n - i - 1);
        idx.swap(i, pick);
    }
    let mut val: Vec<usize> = idx[..n_val].to_vec();
    let mut train: Vec<usize> = idx[n_val..].to_vec();
    val.sort_unstable();
    train.sort_unstable();
    Ok((train, val))
}

struct SolveResult {
    amps: Vec<C64>,
    cg_iters: usize,
}

fn solve_amplitudes(
    design: &Design,
    targets: &[C64],
    solver: &SolverConfig,
    iteration: usize,
) -> Result<SolveResult> {
    if solver.lambda2 > 0.0 {
        let out = newton_with_design(design, targets, solver).map_err(|e| {
            Error::Solver(format!("iteration {iteration}: {e}"))
        })?;
        Ok(SolveResult { amps: out.amps, cg_iters: out.cg_iters })
    } else {
        let out = cg_with_design(design, targets, solver)?;
        if !out.converged {
            return Err(Error::Solver(format!(
                "CG failed to converge at iteration {iteration}: relative residual {:.3e} after {} iterations",
                out.rel_residual, out.iters
            )));
        }
        Ok(SolveResult { amps: out.amps, cg_iters: out.iters })
    }
}

/// Dense re-solve and equal-amplitude check over duplicate frequencies.
fn verify_equal_amplitudes_dense(
    freqs: &FrequencySet,
    train: &Dataset,
    lambda1: f64,
    iteration: usize,
) -> Result<()> {
    let dense = dense_solve(freqs, train, lambda1)?;
    let agg = aggregate_equal_frequencies(freqs, &dense);
    for g in 0..agg.num_groups() {
        let m = agg.multiplicity[g];
        if m < 2 {
            continue;
        }
        let mean = agg.aggregate[g] / m as f64;
        for (feature, &group) in agg.group_of.iter().enumerate() {
            if group == g {
                let dev = (dense[feature] - mean).norm();
                if dev > 1e-8 * (1.0 + mean.norm()) {
                    return Err(Error::Degenerate(format!(
                        "iteration {iteration}: duplicated frequency group {g} has unequal amplitudes (deviation {dev:.3e})"
                    )));
                }
            }
        }
    }
    Ok(())
}

/// Run the full resampling loop and return the final model together
/// with the per-iteration history.
pub fn run(
    config: &TrainConfig,
    dataset: &Dataset,
    test_set: Option<&Dataset>,
) -> Result<(RffModel, RunHistory)> {
    config.validate()?;
    let dim = dataset.dim;
    if let Some(t) = test_set {
        if t.dim != dim {
            return Err(Error::DimensionMismatch(format!(
                "test set dimension {} differs from training dimension {dim}",
                t.dim
            )));
        }
    }

    let root = RngStream::new(config.seed);
    let mut walk_rng = root.child("walk");
    let mut resample_rng = root.child("resample");
    let mut split_rng = root.child("split");
    let mut init_rng = root.child("init");

    let (train_idx, val_idx) =
        validation_split(dataset.len(), config.validation_fraction, &mut split_rng)?;
    let train = dataset.select_rows(&train_idx);
    let val = dataset.select_rows(&val_idx);

    let mut freqs = match config.init {
        InitMode::ZeroFrequencies => match (config.algorithm, &config.base) {
            (Algorithm::Lattice, BaseDistribution::LatticeProjectedNormal { spec, .. }) => {
                FrequencySet::zeros_lattice(config.k, dim, *spec)
            }
            (Algorithm::Lattice, BaseDistribution::Tabulated(tab)) => {
                FrequencySet::zeros_lattice(config.k, dim, tab.lattice_spec())
            }
            _ => FrequencySet::zeros_continuous(config.k, dim),
        },
        InitMode::FromBase => sample_base(&config.base, config.k, dim, &mut init_rng)?,
    };

    let mut cov = CovarianceState::new(dim);
    let mut history = RunHistory::default();
    let cadence = config.snapshot_cadence();
    let n = config.iterations;
    let mut final_state: Option<(FrequencySet, Vec<C64>)> = None;

    for iteration in 1..=n + 1 {
        let is_final = iteration == n + 1;

        if !is_final {
            let t0 = Instant::now();
            freqs = match config.algorithm {
                Algorithm::Continuous => random_walk_step(&freqs, &config.walk, &mut walk_rng)?,
                Algorithm::Lattice => lattice_walk_step(&freqs, &config.walk, &mut walk_rng)?,
                Algorithm::Adaptive => {
                    adaptive_walk_step(&freqs, &config.walk, &cov, &mut walk_rng)?
                }
            };
            history.records.push(PhaseRecord {
                iteration,
                phase: Phase::Walk,
                train_rel_err: None,
                val_rel_err: None,
                cg_iters: None,
                wall_ms: t0.elapsed().as_secs_f64() * 1e3,
            });
        }

        let t0 = Instant::now();
        let design = Design::build(&train.inputs, &freqs.to_dense(), dim);
        let solved = solve_amplitudes(&design, &train.targets, &config.solver, iteration)?;
        let train_pred = design.apply(&solved.amps);
        let train_err = relative_l2_error(&train_pred, &train.targets)?;
        let val_pred = apply_design(&freqs, &val.inputs, &solved.amps)?;
        let val_err = relative_l2_error(&val_pred, &val.targets)?;
        history.records.push(PhaseRecord {
            iteration,
            phase: if is_final { Phase::Final } else { Phase::Solve },
            train_rel_err: Some(train_err),
            val_rel_err: Some(val_err),
            cg_iters: Some(solved.cg_iters),
            wall_ms: t0.elapsed().as_secs_f64() * 1e3,
        });

        if is_final || iteration == 1 || iteration % cadence == 0 {
            history.snapshots.push(FrequencySnapshot {
                iteration,
                freqs: freqs.clone(),
                abs_amps: solved.amps.iter().map(|a| a.norm()).collect(),
            });
        }

        // Dense invariant check on a thinned schedule; the quartic term
        // breaks the plain normal equations, so it only applies at
        // lambda2 = 0.
        if config.verify_equal_amplitudes
            && config.solver.lambda2 == 0.0
            && (iteration - 1) % 50 == 0
        {
            verify_equal_amplitudes_dense(&freqs, &train, config.solver.lambda1, iteration)?;
        }

        if is_final {
            final_state = Some((freqs.clone(), solved.amps));
            break;
        }

        let t0 = Instant::now();
        freqs = resample(config, &freqs, &solved.amps, &mut resample_rng, &mut history)?;
        debug_assert_eq!(freqs.len(), config.k, "resampling must conserve K");
        if config.algorithm == Algorithm::Adaptive {
            update_covariance(&mut cov, &freqs)?;
        }
        if let Some(reference) = &config.track_optimal {
            if matches!(freqs, FrequencySet::Lattice { .. }) {
                let tv = tv_distance_to_optimal(&freqs, reference)?;
                history.tv_to_reference.push((iteration, tv));
            }
        }
        history.records.push(PhaseRecord {
            iteration,
            phase: Phase::Resample,
            train_rel_err: None,
            val_rel_err: None,
            cg_iters: None,
            wall_ms: t0.elapsed().as_secs_f64() * 1e3,
        });
    }

    let (freqs, amps) = final_state.expect("loop always ends in a final solve");
    if let Some(test) = test_set {
        let pred = apply_design(&freqs, &test.inputs, &amps)?;
        history.test_rel_err = Some(relative_l2_error(&pred, &test.targets)?);
    }
    Ok((RffModel::new(freqs, amps), history))
}

fn resample(
    config: &TrainConfig,
    freqs: &FrequencySet,
    amps: &[C64],
    rng: &mut RngStream,
    history: &mut RunHistory,
) -> Result<FrequencySet> {
    match config.algorithm {
        Algorithm::Continuous => {
            let total: f64 = amps.iter().map(|a| a.norm()).sum();
            if !(total > 0.0) {
                return Err(Error::Degenerate(
                    "all amplitudes vanish; per-feature resampling weights are undefined"
                        .into(),
                ));
            }
            let probs: Vec<f64> = amps.iter().map(|a| a.norm() / total).collect();
            let picks = multinomial_resample(&probs, config.k, rng)?;
            Ok(freqs.select_rows(&picks))
        }
        Algorithm::Lattice => {
            let agg = aggregate_equal_frequencies(freqs, amps);
            let base = &config.base;
            let dim = freqs.dim();
            let mut base_sampler =
                |count: usize, r: &mut RngStream| sample_base(base, count, dim, r);
            match mixed_resample(freqs, &agg, &config.cutoff, &mut base_sampler, config.k, rng)
            {
                Ok(out) => Ok(out.freqs),
                Err(Error::EmptyCutoff { epsilon }) => {
                    // Nothing survived the threshold; redo this round
                    // without a cutoff rather than aborting the run.
                    history.warnings.push(format!(
                        "cutoff epsilon {epsilon:.3e} removed every frequency; resampling without cutoff"
                    ));
                    let relaxed = CutoffConfig { epsilon: 0.0, ..config.cutoff };
                    let out = mixed_resample(
                        freqs,
                        &agg,
                        &relaxed,
                        &mut base_sampler,
                        config.k,
                        rng,
                    )?;
                    Ok(out.freqs)
                }
                Err(e) => Err(e),
            }
        }
        Algorithm::Adaptive => {
            simple_cutoff_resample(freqs, amps, config.cutoff.epsilon, rng)
        }
    }
}

/// Histogram of frequency projections `v . omega` over a fixed range.
#[derive(Debug, Clone, PartialEq)]
pub struct ProjectedHistogram {
    pub lo: f64,
    pub hi: f64,
    pub counts: Vec<usize>,
    pub underflow: usize,
    pub overflow: usize,
}

impl ProjectedHistogram {
    pub fn total(&self) -> usize {
        self.counts.iter().sum::<usize>() + self.underflow + self.overflow
    }

    /// Fraction of mass per bin (under/overflow excluded from the
    /// numerator, included in the denominator).
    pub fn normalized(&self) -> Vec<f64> {
        let total = self.total().max(1) as f64;
        self.counts.iter().map(|&c| c as f64 / total).collect()
    }
}

/// Bin the projections of the frequencies onto a unit direction.
pub fn histogram_projected(
    freqs: &FrequencySet,
    v: &[f64],
    bins: usize,
    range: (f64, f64),
) -> Result<ProjectedHistogram> {
    if v.len() != freqs.dim() {
        return Err(Error::DimensionMismatch(format!(
            "direction has dimension {}, frequencies have {}",
            v.len(),
            freqs.dim()
        )));
    }
    let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if (norm - 1.0).abs() > 1e-12 {
        return Err(Error::Config(format!(
            "projection direction must be a unit vector (norm {norm:.3e})"
        )));
    }
    let (lo, hi) = range;
    if !(hi > lo) || bins == 0 {
        return Err(Error::Config("histogram needs a nonempty range and bins >= 1".into()));
    }
    let dense = freqs.to_dense();
    let d = freqs.dim();
    let mut counts = vec![0usize; bins];
    let mut underflow = 0usize;
    let mut overflow = 0usize;
    let scale = bins as f64 / (hi - lo);
    for row in dense.chunks(d) {
        let p: f64 = row.iter().zip(v).map(|(a, b)| a * b).sum();
        if p < lo {
            underflow += 1;
        } else if p >= hi {
            overflow += 1;
        } else {
            let bin = (((p - lo) * scale) as usize).min(bins - 1);
            counts[bin] += 1;
        }
    }
    Ok(ProjectedHistogram { lo, hi, counts, underflow, overflow })
}

/// Total-variation distance between the empirical distribution of a
/// lattice frequency set and a tabulated reference. Mass outside the
/// reference's box counts fully toward the distance.
pub fn tv_distance_to_optimal(
    freqs: &FrequencySet,
    reference: &TabulatedDistribution,
) -> Result<f64> {
    let FrequencySet::Lattice { spec, dim, indices } = freqs else {
        return Err(Error::Config(
            "total-variation comparison requires lattice frequencies".into(),
        ));
    };
    if *dim != reference.dim() {
        return Err(Error::DimensionMismatch(format!(
            "frequency dimension {dim} vs reference dimension {}",
            reference.dim()
        )));
    }
    if spec.period() != reference.lattice_spec().period() {
        return Err(Error::Config(
            "frequency lattice period differs from the reference's".into(),
        ));
    }
    let k = freqs.len();
    if k == 0 {
        return Err(Error::Degenerate("empty frequency set".into()));
    }
    let n_max = reference.n_max();
    let side = (2 * n_max + 1) as usize;
    let cells = side.pow(*dim as u32);
    let mut empirical = vec![0usize; cells];
    let mut outside = 0usize;
    'rows: for row in indices.chunks(*dim) {
        let mut flat = 0usize;
        for &ni in row {
            if ni.abs() > n_max {
                outside += 1;
                continue 'rows;
            }
            flat = flat * side + (ni + n_max) as usize;
        }
        empirical[flat] += 1;
    }
    let kf = k as f64;
    let mut tv = outside as f64 / kf;
    for (count, &p) in empirical.iter().zip(reference.probabilities()) {
        tv += (*count as f64 / kf - p).abs();
    }
    Ok(0.5 * tv)
}
