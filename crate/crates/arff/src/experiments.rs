//! Named experiment presets and the runners that execute them.
//!
//! A preset is a list of sweep points, each carrying a fully resolved
//! [`RunSpec`]. Running a preset writes one history CSV and one metadata
//! echo per point plus a combined `sweep.csv`. Desk scale shrinks the
//! full-size parameters to something a single core finishes in minutes;
//! the default mapping divides J and K by 8 and the iteration count by 4,
//! and each builder documents where it deviates from that rule.

use std::fs;
use std::path::Path;

use rayon::prelude::*;

use crate::classify::{self, MnistConfig};
use crate::config::{metadata_ini, RunSpec};
use crate::error::{Error, Result};
use crate::linalg::SolverConfig;
use crate::model::LatticeSpec;
use crate::output::{self, AccuracyRow};
use crate::rng::RngStream;
use crate::sampler::{CutoffConfig, WalkConfig, WalkMode};
use crate::targets::{
    self, compute_fourier_table, noise_std_for_nsr, optimal_distribution, sample_dataset,
    sample_dataset_with_clean, BaseDistribution, FourierCoefficientTable, TargetKind, TargetSpec,
};
use crate::trainer::{self, Algorithm, InitMode, RunHistory, TrainConfig};

/// Lattice period `q = 2L` shared by the periodic presets.
const PERIOD_Q: f64 = 12.0;
/// Covariance regularizer for the adaptive walk.
const EPS_HAT: f64 = 1e-3;
/// Training-noise level used by the figure presets.
const FIGURE_NOISE: f64 = 1.0 / 64.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PresetName {
    Test1,
    Test2,
    Test3,
    Test4,
    Test5,
    Test6,
    Test7,
    Test8,
    FigF29,
    FigF27,
    FigAlg3,
    Mnist,
}

impl PresetName {
    pub fn all() -> &'static [PresetName] {
        use PresetName::*;
        &[
            Test1, Test2, Test3, Test4, Test5, Test6, Test7, Test8, FigF29, FigF27, FigAlg3,
            Mnist,
        ]
    }

    pub fn as_str(self) -> &'static str {
        match self {
            PresetName::Test1 => "test1",
            PresetName::Test2 => "test2",
            PresetName::Test3 => "test3",
            PresetName::Test4 => "test4",
            PresetName::Test5 => "test5",
            PresetName::Test6 => "test6",
            PresetName::Test7 => "test7",
            PresetName::Test8 => "test8",
            PresetName::FigF29 => "fig_f29",
            PresetName::FigF27 => "fig_f27",
            PresetName::FigAlg3 => "fig_alg3",
            PresetName::Mnist => "mnist",
        }
    }

    pub fn parse(name: &str) -> Result<PresetName> {
        PresetName::all()
            .iter()
            .copied()
            .find(|p| p.as_str() == name)
            .ok_or_else(|| {
                let valid: Vec<&str> = PresetName::all().iter().map(|p| p.as_str()).collect();
                Error::Config(format!(
                    "unknown experiment {name:?}; valid names: {}",
                    valid.join(", ")
                ))
            })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Scale {
    Full,
    Desk,
}

impl Scale {
    pub fn as_str(self) -> &'static str {
        match self {
            Scale::Full => "full",
            Scale::Desk => "desk",
        }
    }

    pub fn parse(name: &str) -> Result<Scale> {
        match name {
            "full" => Ok(Scale::Full),
            "desk" => Ok(Scale::Desk),
            other => Err(Error::Config(format!(
                "unknown scale {other:?}; valid scales: desk, full"
            ))),
        }
    }
}

/// One run of a sweep: a resolved spec plus the bookkeeping that ends up
/// in `sweep.csv`.
#[derive(Debug, Clone)]
pub struct SweepPoint {
    /// Unique within the preset; prefixes the per-point output files.
    pub label: String,
    /// Sub-block of the sweep ("main" unless the preset has several).
    pub group: &'static str,
    /// Algorithm name: "continuous", "lattice", or "adaptive".
    pub variant: &'static str,
    /// Name of the swept parameter.
    pub param: &'static str,
    /// Value of the swept parameter at this point.
    pub value: f64,
    /// When set, `noise_std` is derived from the drawn clean targets so
    /// the empirical noise-to-signal ratio matches this value.
    pub target_nsr: Option<f64>,
    pub emit_snapshots: bool,
    /// Record the total-variation distance to the preset's reference
    /// distribution after every resample.
    pub track_optimal: bool,
    pub spec: RunSpec,
}

#[derive(Debug, Clone)]
pub struct Preset {
    pub name: PresetName,
    pub scale: Scale,
    pub points: Vec<SweepPoint>,
    /// Spectrum table behind the tracked reference distribution, written
    /// alongside the sweep output when present.
    pub optimal_table: Option<FourierCoefficientTable>,
}

/// One row of `sweep.csv`.
#[derive(Debug, Clone, PartialEq)]
pub struct SweepRow {
    pub label: String,
    pub group: String,
    pub variant: String,
    pub param: String,
    pub value: f64,
    pub k: usize,
    pub j: usize,
    pub iterations: usize,
    /// Resolved noise level (after any NSR derivation).
    pub noise_std: f64,
    pub train_err: f64,
    pub val_err: f64,
    pub test_err: Option<f64>,
}

pub const SWEEP_HEADER: &str =
    "label,group,variant,param,value,k,j,iterations,noise_std,train_err,val_err,test_err";

fn fmt_float(v: f64) -> String {
    format!("{v}")
}

/// Per-point seed: a SplitMix64 scramble of the preset seed and the point
/// index, so points are decorrelated but the whole sweep is replayable
/// from one number.
fn point_seed(base: u64, index: u64) -> u64 {
    let mut z = base.wrapping_add(0x9E37_79B9_7F4A_7C15u64.wrapping_mul(index + 1));
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

fn eps_of(c: f64, k: usize) -> f64 {
    c / (k as f64).sqrt()
}

fn lambda_of(c: f64, k: usize, j: usize) -> f64 {
    c * k as f64 / (j as f64).sqrt()
}

fn variant_name(alg: Algorithm) -> &'static str {
    match alg {
        Algorithm::Continuous => "continuous",
        Algorithm::Lattice => "lattice",
        Algorithm::Adaptive => "adaptive",
    }
}

/// Oscillatory periodic target, direction drawn once per preset.
fn sine_target(dim: usize, seed: u64) -> Result<TargetSpec> {
    let mut rng = RngStream::new(seed).child("target-direction");
    TargetSpec::new(
        TargetKind::SineIntegral,
        targets::direction_random(dim, &mut rng),
        0.1,
        Some(LatticeSpec::new(PERIOD_Q)?),
    )
}

/// Kinked target, direction drawn once per preset.
fn bump_target(dim: usize, seed: u64, sharpness: f64, periodic: bool) -> Result<TargetSpec> {
    let mut rng = RngStream::new(seed).child("target-direction");
    let period = if periodic { Some(LatticeSpec::new(PERIOD_Q)?) } else { None };
    TargetSpec::new(TargetKind::Bump, targets::direction_random(dim, &mut rng), sharpness, period)
}

/// Fixed two-dimensional direction used by the figure presets, normalized
/// from its four-digit decimal form.
fn figure_direction() -> Vec<f64> {
    let (a, b) = (0.3308_f64, 0.9437_f64);
    let norm = (a * a + b * b).sqrt();
    vec![a / norm, b / norm]
}

fn figure_target(periodic: bool) -> Result<TargetSpec> {
    let period = if periodic { Some(LatticeSpec::new(PERIOD_Q)?) } else { None };
    TargetSpec::new(TargetKind::Bump, figure_direction(), 0.1, period)
}

/// Everything a preset builder states about one point; turned into a
/// validated [`SweepPoint`] by [`make_point`].
struct PointCfg {
    group: &'static str,
    param: &'static str,
    value: f64,
    algorithm: Algorithm,
    target: TargetSpec,
    k: usize,
    j: usize,
    iterations: usize,
    delta: f64,
    epsilon: f64,
    lambda1: f64,
    lambda2: f64,
    noise_std: f64,
    target_nsr: Option<f64>,
    test_samples: usize,
    init: InitMode,
    emit_snapshots: bool,
    track_optimal: bool,
}

impl PointCfg {
    fn new(algorithm: Algorithm, target: TargetSpec, k: usize, j: usize, n: usize) -> Self {
        PointCfg {
            group: "main",
            param: "k",
            value: k as f64,
            algorithm,
            target,
            k,
            j,
            iterations: n,
            delta: 0.5,
            epsilon: 0.0,
            lambda1: 0.0,
            lambda2: 0.0,
            noise_std: 0.0,
            target_nsr: None,
            test_samples: j / 2,
            init: InitMode::ZeroFrequencies,
            emit_snapshots: false,
            track_optimal: false,
        }
    }
}

fn make_point(index: usize, preset_seed: u64, cfg: PointCfg) -> Result<SweepPoint> {
    let variant = variant_name(cfg.algorithm);
    let (mode, base) = match cfg.algorithm {
        Algorithm::Continuous => {
            (WalkMode::Continuous, BaseDistribution::StandardNormal { scale: 1.0 })
        }
        Algorithm::Adaptive => (
            WalkMode::AdaptiveCovariance { eps_hat: EPS_HAT },
            BaseDistribution::StandardNormal { scale: 1.0 },
        ),
        Algorithm::Lattice => {
            let spec = cfg.target.period.ok_or_else(|| {
                Error::Config("lattice sweep point on a non-periodic target".into())
            })?;
            (
                WalkMode::LatticeProjected(spec),
                BaseDistribution::LatticeProjectedNormal { scale: 1.0, spec },
            )
        }
    };
    let walk = WalkConfig { delta: cfg.delta, mode };
    let cutoff = CutoffConfig { epsilon: cfg.epsilon, q_epsilon: 0.0 };
    let solver = SolverConfig {
        lambda1: cfg.lambda1,
        lambda2: cfg.lambda2,
        ..SolverConfig::default()
    };
    let mut train = TrainConfig::new(
        cfg.algorithm,
        cfg.k,
        cfg.iterations,
        walk,
        cutoff,
        solver,
        base,
        point_seed(preset_seed, index as u64),
    );
    train.init = cfg.init;
    train.validate()?;
    let label = if cfg.group == "main" {
        format!("{variant}-{}-{index:02}", cfg.param)
    } else {
        format!("{}-{variant}-{}-{index:02}", cfg.group, cfg.param)
    };
    Ok(SweepPoint {
        label,
        group: cfg.group,
        variant,
        param: cfg.param,
        value: cfg.value,
        target_nsr: cfg.target_nsr,
        emit_snapshots: cfg.emit_snapshots,
        track_optimal: cfg.track_optimal,
        spec: RunSpec {
            target: cfg.target,
            samples: cfg.j,
            test_samples: cfg.test_samples,
            noise_std: cfg.noise_std,
            train,
        },
    })
}

/// Builds the named preset at the given scale. The seed decorrelates the
/// random target direction and every point's run; two calls with equal
/// arguments build identical presets.
pub fn build_preset(name: PresetName, scale: Scale, seed: u64) -> Result<Preset> {
    let desk = scale == Scale::Desk;
    // Default desk shrinkage; overridden below where the desk protocol
    // pins its own numbers.
    let dk = |k: usize| if desk { k / 8 } else { k };
    let dj = |j: usize| if desk { j / 8 } else { j };
    let dn = |n: usize| if desk { n.div_ceil(4) } else { n };
    let n = dn(100);

    let mut cfgs: Vec<PointCfg> = Vec::new();
    let mut optimal_table = None;

    match name {
        PresetName::Test1 => {
            // Step-size sweep for both lattice walks. The desk list is the
            // three-decade spread whose middle entry should win.
            let target = sine_target(4, seed)?;
            let (k, j) = (dk(2500), dj(8000));
            let deltas: &[f64] =
                if desk { &[0.02, 0.2, 2.0] } else { &[0.02, 0.1, 0.5, 2.5] };
            for alg in [Algorithm::Lattice, Algorithm::Adaptive] {
                for &delta in deltas {
                    let mut c = PointCfg::new(alg, target.clone(), k, j, n);
                    c.param = "delta";
                    c.value = delta;
                    c.delta = delta;
                    c.epsilon = eps_of(1.0 / 200.0, k);
                    c.lambda1 = lambda_of(1.0 / 100.0, k, j);
                    cfgs.push(c);
                }
            }
        }
        PresetName::Test2 => {
            if desk {
                // Desk protocol: the slope study. Two-dimensional periodic
                // kinked target, lattice walk only, four feature counts.
                // Desk-only overrides: a broader kink (0.5 instead of 0.1),
                // because from a zero start the walk cannot cross the sharp
                // target's spectral extent in the 25 passes this point budget
                // allows, which would hide the 1/K trend behind the sampler's
                // transient; and a lighter ridge (1/40 instead of 1/20), which
                // keeps the regularization floor below the trend at K = 2500.
                let target = bump_target(2, seed, 0.5, true)?;
                let j = 5000;
                for &k in &[312usize, 625, 1250, 2500] {
                    let mut c = PointCfg::new(Algorithm::Lattice, target.clone(), k, j, 25);
                    c.delta = 0.5;
                    c.epsilon = eps_of(1.0 / 200.0, k);
                    c.lambda1 = lambda_of(1.0 / 40.0, k, j);
                    cfgs.push(c);
                }
            } else {
                let sine = sine_target(4, seed)?;
                let bump = bump_target(4, seed, 0.1, false)?;
                let j = 20000;
                let ks = [312usize, 625, 1250, 2500, 5000, 10000];
                for &k in &ks {
                    let mut c = PointCfg::new(Algorithm::Lattice, sine.clone(), k, j, n);
                    c.delta = 0.5;
                    c.epsilon = eps_of(1.0 / 200.0, k);
                    c.lambda1 = lambda_of(1.0 / 20.0, k, j);
                    cfgs.push(c);
                }
                for alg in [Algorithm::Continuous, Algorithm::Adaptive] {
                    for &k in &ks {
                        let mut c = PointCfg::new(alg, bump.clone(), k, j, n);
                        c.delta = 0.2;
                        if alg == Algorithm::Adaptive {
                            c.epsilon = eps_of(1.0 / 200.0, k);
                        }
                        c.lambda1 = lambda_of(1.0 / 20.0, k, j);
                        cfgs.push(c);
                    }
                }
            }
        }
        PresetName::Test3 => {
            // Convergence-speed comparison of the two free-space walks on
            // the same run; the interesting output is the history files.
            let target = bump_target(4, seed, 0.1, false)?;
            let (k, j) = (dk(5000), dj(20000));
            for alg in [Algorithm::Continuous, Algorithm::Adaptive] {
                let mut c = PointCfg::new(alg, target.clone(), k, j, n);
                c.delta = 0.2;
                if alg == Algorithm::Adaptive {
                    c.epsilon = eps_of(1.0 / 200.0, k);
                }
                c.lambda1 = lambda_of(1.0 / 20.0, k, j);
                cfgs.push(c);
            }
        }
        PresetName::Test4 => {
            // Sample-size dependence: noiseless, noisy, and an
            // overparameterized block with K larger than J.
            let target = sine_target(4, seed)?;
            let k = dk(2500);
            let js: &[usize] = &[dj(2000), dj(8000), dj(32000)];
            for (group, s) in [("main", 0.0), ("noisy", 2.5e-3)] {
                for &j in js {
                    let mut c = PointCfg::new(Algorithm::Lattice, target.clone(), k, j, n);
                    c.group = group;
                    c.param = "j";
                    c.value = j as f64;
                    c.delta = 0.2;
                    c.epsilon = eps_of(1.0 / 200.0, k);
                    c.lambda1 = lambda_of(1.0 / 20.0, k, j);
                    c.noise_std = s;
                    cfgs.push(c);
                }
            }
            let k_over = dk(20000);
            for &j in &[dj(5000), dj(10000), dj(20000)] {
                let mut c = PointCfg::new(Algorithm::Lattice, target.clone(), k_over, j, n);
                c.group = "overparam";
                c.param = "j";
                c.value = j as f64;
                c.delta = 0.2;
                c.epsilon = eps_of(1.0 / 200.0, k_over);
                c.lambda1 = lambda_of(1.0 / 20.0, k_over, j);
                cfgs.push(c);
            }
        }
        PresetName::Test5 => {
            // Cutoff sweep from none up to the cutoff that would prune
            // everything below the equal-amplitude level over 20.
            let target = sine_target(4, seed)?;
            let (k, j) = (dk(2500), dj(8000));
            for &c_eps in &[0.0, 1.0 / 200.0, 1.0 / 60.0, 1.0 / 20.0] {
                let mut c = PointCfg::new(Algorithm::Lattice, target.clone(), k, j, n);
                c.param = "epsilon";
                c.value = eps_of(c_eps, k);
                c.delta = 0.5;
                c.epsilon = eps_of(c_eps, k);
                c.lambda1 = lambda_of(1.0 / 20.0, k, j);
                cfgs.push(c);
            }
        }
        PresetName::Test6 => {
            let target = sine_target(4, seed)?;
            let (k, j) = (dk(2500), dj(8000));
            for &c_lam in &[1.0 / 500.0, 1.0 / 100.0, 1.0 / 20.0, 1.0 / 4.0] {
                let mut c = PointCfg::new(Algorithm::Adaptive, target.clone(), k, j, n);
                c.param = "lambda1";
                c.value = lambda_of(c_lam, k, j);
                c.delta = 0.5;
                c.epsilon = eps_of(1.0 / 200.0, k);
                c.lambda1 = lambda_of(c_lam, k, j);
                cfgs.push(c);
            }
        }
        PresetName::Test7 => {
            // Quartic-penalty sweep; positive values switch the inner
            // solver to the damped Newton path.
            let target = sine_target(4, seed)?;
            let (k, j) = (dk(1250), dj(4000));
            for &lambda2 in &[0.0, 0.1, 1.0, 10.0] {
                let mut c = PointCfg::new(Algorithm::Adaptive, target.clone(), k, j, n);
                c.param = "lambda2";
                c.value = lambda2;
                c.delta = 0.5;
                c.epsilon = eps_of(1.0 / 200.0, k);
                c.lambda1 = lambda_of(1.0 / 20.0, k, j);
                c.lambda2 = lambda2;
                cfgs.push(c);
            }
        }
        PresetName::Test8 => {
            if desk {
                // Desk protocol: two-dimensional target, noise pinned by
                // its target noise-to-signal ratio instead of a literal s.
                let target = sine_target(2, seed)?;
                let (k, j) = (1250usize, 6000usize);
                for &nsr in &[0.0025, 0.01, 0.04] {
                    let mut c = PointCfg::new(Algorithm::Lattice, target.clone(), k, j, 25);
                    c.param = "nsr";
                    c.value = nsr;
                    c.delta = 0.5;
                    c.epsilon = eps_of(1.0 / 200.0, k);
                    c.lambda1 = lambda_of(1.0 / 100.0, k, j);
                    c.target_nsr = Some(nsr);
                    cfgs.push(c);
                }
            } else {
                let target = sine_target(4, seed)?;
                let (k, j) = (10000usize, 50000usize);
                for &s in &[0.025, 0.05, 0.1] {
                    let mut c = PointCfg::new(Algorithm::Lattice, target.clone(), k, j, n);
                    c.param = "s";
                    c.value = s;
                    c.delta = 0.5;
                    c.epsilon = eps_of(1.0 / 200.0, k);
                    c.lambda1 = lambda_of(1.0 / 100.0, k, j);
                    c.noise_std = s;
                    cfgs.push(c);
                }
            }
        }
        PresetName::FigF29 => {
            // Free-space walk on the two-dimensional kinked target with
            // more features than data points.
            let target = figure_target(false)?;
            let (k, j) = (dk(22500), dj(15000));
            let mut c = PointCfg::new(Algorithm::Continuous, target, k, j, dn(200));
            c.delta = 0.5;
            c.lambda1 = lambda_of(1.0 / 100.0, k, j);
            c.noise_std = FIGURE_NOISE;
            c.test_samples = 0;
            c.init = InitMode::FromBase;
            c.emit_snapshots = true;
            cfgs.push(c);
        }
        PresetName::FigF27 => {
            // Lattice version of the same study, tracked against the
            // target's own spectrum on the frequency lattice.
            let target = figure_target(true)?;
            let (k, j) = (dk(22500), dj(15000));
            let mut c = PointCfg::new(Algorithm::Lattice, target.clone(), k, j, dn(200));
            c.delta = 0.2;
            c.epsilon = eps_of(1.0 / 200.0, k);
            c.lambda1 = lambda_of(1.0 / 500.0, k, j);
            c.noise_std = FIGURE_NOISE;
            c.test_samples = 0;
            c.init = InitMode::FromBase;
            c.emit_snapshots = true;
            c.track_optimal = true;
            cfgs.push(c);
            // The spectrum decays like |n|^-2 along the kink direction, so
            // a generous index box keeps the truncated tail small.
            optimal_table = Some(compute_fourier_table(&target, 96, 512)?);
        }
        PresetName::FigAlg3 => {
            // Adaptive walk against the plain free-space walk at the same
            // short horizon; neither uses a cutoff here.
            let target = figure_target(false)?;
            let (k, j) = (dk(22500), dj(15000));
            for alg in [Algorithm::Adaptive, Algorithm::Continuous] {
                let mut c = PointCfg::new(alg, target.clone(), k, j, dn(30));
                c.delta = 0.5;
                c.lambda1 = lambda_of(1.0 / 100.0, k, j);
                c.noise_std = FIGURE_NOISE;
                c.test_samples = 0;
                c.init = InitMode::FromBase;
                c.emit_snapshots = true;
                cfgs.push(c);
            }
        }
        PresetName::Mnist => {
            return Err(Error::Config(
                "the mnist preset needs image data; run `arff mnist` with the four IDX paths"
                    .into(),
            ));
        }
    }

    let points = cfgs
        .into_iter()
        .enumerate()
        .map(|(i, c)| make_point(i, seed, c))
        .collect::<Result<Vec<_>>>()?;
    Ok(Preset { name, scale, points, optimal_table })
}

/// Noise level that hits `nsr` on this spec's training draw: the clean
/// targets are drawn from the same stream the run will use, so the run's
/// empirical ratio matches in expectation.
pub fn resolve_noise_std(spec: &RunSpec, nsr: f64) -> Result<f64> {
    let mut rng = RngStream::new(spec.train.seed).child("data");
    let (_, clean) = sample_dataset_with_clean(&spec.target, spec.samples, 0.0, &mut rng)?;
    let mean_sq = clean.iter().map(|c| c * c).sum::<f64>() / clean.len() as f64;
    noise_std_for_nsr(nsr, mean_sq)
}

/// Draws the datasets named by `spec` and trains on them. The training
/// set comes from the seed's "data" stream and the noise-free test set
/// from "test-data", so a spec replays bit-identically from its echo.
pub fn execute_run(spec: &RunSpec) -> Result<(crate::model::RffModel, RunHistory)> {
    let mut data_rng = RngStream::new(spec.train.seed).child("data");
    let dataset = sample_dataset(&spec.target, spec.samples, spec.noise_std, &mut data_rng)?;
    let test = if spec.test_samples > 0 {
        let mut test_rng = RngStream::new(spec.train.seed).child("test-data");
        Some(sample_dataset(&spec.target, spec.test_samples, 0.0, &mut test_rng)?)
    } else {
        None
    };
    trainer::run(&spec.train, &dataset, test.as_ref())
}

/// Single-config run for the `train` command: writes exactly
/// `history.csv`, `model.csv`, and `metadata.ini` into `out_dir`.
pub fn run_config(spec: &RunSpec, out_dir: &Path, timings: bool) -> Result<()> {
    fs::create_dir_all(out_dir)?;
    let (model, history) = execute_run(spec)?;
    output::write_history(&out_dir.join("history.csv"), &history, timings)?;
    output::write_model(&out_dir.join("model.csv"), &model)?;
    output::write_atomic(&out_dir.join("metadata.ini"), metadata_ini(spec)?.as_bytes())?;
    Ok(())
}

fn run_point(
    point: &SweepPoint,
    reference: Option<&crate::targets::TabulatedDistribution>,
    out_dir: &Path,
    timings: bool,
) -> Result<SweepRow> {
    let mut spec = point.spec.clone();
    if let Some(nsr) = point.target_nsr {
        spec.noise_std = resolve_noise_std(&spec, nsr)?;
    }
    if point.track_optimal {
        spec.train.track_optimal = reference.cloned();
    }
    let (_, history) = execute_run(&spec)?;
    let base = out_dir.join(&point.label);
    let prefix = base.to_string_lossy();
    output::write_history(&format!("{prefix}_history.csv").as_ref(), &history, timings)?;
    // The echo omits the tracking table, which only adds the tv file and
    // never changes the run itself.
    spec.train.track_optimal = None;
    output::write_atomic(
        &format!("{prefix}_metadata.ini").as_ref(),
        metadata_ini(&spec)?.as_bytes(),
    )?;
    if point.emit_snapshots {
        for snap in &history.snapshots {
            output::write_atomic(
                &format!("{prefix}_snapshot_{}.csv", snap.iteration).as_ref(),
                output::snapshot_csv(snap).as_bytes(),
            )?;
        }
    }
    if !history.tv_to_reference.is_empty() {
        let mut tv = String::from("iteration,tv\n");
        for &(iter, dist) in &history.tv_to_reference {
            tv.push_str(&format!("{iter},{}\n", fmt_float(dist)));
        }
        output::write_atomic(&format!("{prefix}_tv.csv").as_ref(), tv.as_bytes())?;
    }
    let train_err = history
        .final_train_err()
        .ok_or_else(|| Error::Degenerate(format!("run {} produced no solve rows", point.label)))?;
    let val_err = history
        .final_val_err()
        .ok_or_else(|| Error::Degenerate(format!("run {} produced no solve rows", point.label)))?;
    Ok(SweepRow {
        label: point.label.clone(),
        group: point.group.to_string(),
        variant: point.variant.to_string(),
        param: point.param.to_string(),
        value: point.value,
        k: spec.train.k,
        j: spec.samples,
        iterations: spec.train.iterations,
        noise_std: spec.noise_std,
        train_err,
        val_err,
        test_err: history.test_rel_err,
    })
}

/// Runs every point of the preset, writing per-point files into
/// `out_dir`. Points run in parallel under the current thread pool; the
/// returned rows are in preset order regardless of scheduling.
pub fn run_points(preset: &Preset, out_dir: &Path, timings: bool) -> Result<Vec<SweepRow>> {
    fs::create_dir_all(out_dir)?;
    let reference = match &preset.optimal_table {
        Some(table) => Some(optimal_distribution(table)?),
        None => None,
    };
    preset
        .points
        .par_iter()
        .map(|point| run_point(point, reference.as_ref(), out_dir, timings))
        .collect()
}

pub fn sweep_csv(rows: &[SweepRow]) -> String {
    let mut out = String::from(SWEEP_HEADER);
    out.push('\n');
    for r in rows {
        let test = r.test_err.map(fmt_float).unwrap_or_default();
        out.push_str(&format!(
            "{},{},{},{},{},{},{},{},{},{},{},{}\n",
            r.label,
            r.group,
            r.variant,
            r.param,
            fmt_float(r.value),
            r.k,
            r.j,
            r.iterations,
            fmt_float(r.noise_std),
            fmt_float(r.train_err),
            fmt_float(r.val_err),
            test,
        ));
    }
    out
}

pub fn parse_sweep(text: &str) -> Result<Vec<SweepRow>> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .from_reader(text.as_bytes());
    let mut rows = Vec::new();
    let mut records = reader.records();
    let header = records
        .next()
        .ok_or_else(|| Error::Format("empty sweep file".into()))??;
    let got: Vec<&str> = header.iter().collect();
    if got.join(",") != SWEEP_HEADER {
        return Err(Error::Format(format!(
            "sweep header mismatch: expected {SWEEP_HEADER:?}, got {:?}",
            got.join(",")
        )));
    }
    for record in records {
        let record = record?;
        if record.len() != 12 {
            return Err(Error::Format(format!(
                "sweep row has {} fields, expected 12",
                record.len()
            )));
        }
        let f = |i: usize, what: &str| -> Result<f64> {
            record[i]
                .parse::<f64>()
                .map_err(|_| Error::Format(format!("bad {what} {:?} in sweep row", &record[i])))
        };
        let u = |i: usize, what: &str| -> Result<usize> {
            record[i]
                .parse::<usize>()
                .map_err(|_| Error::Format(format!("bad {what} {:?} in sweep row", &record[i])))
        };
        rows.push(SweepRow {
            label: record[0].to_string(),
            group: record[1].to_string(),
            variant: record[2].to_string(),
            param: record[3].to_string(),
            value: f(4, "value")?,
            k: u(5, "k")?,
            j: u(6, "j")?,
            iterations: u(7, "iterations")?,
            noise_std: f(8, "noise_std")?,
            train_err: f(9, "train_err")?,
            val_err: f(10, "val_err")?,
            test_err: if record[11].is_empty() { None } else { Some(f(11, "test_err")?) },
        });
    }
    Ok(rows)
}

/// Builds and runs a preset, writing per-point files, the combined
/// `sweep.csv`, and (for tracked presets) the reference spectrum table.
pub fn run_experiment(
    name: PresetName,
    scale: Scale,
    seed: u64,
    out_dir: &Path,
    timings: bool,
) -> Result<Vec<SweepRow>> {
    let preset = build_preset(name, scale, seed)?;
    fs::create_dir_all(out_dir)?;
    if let Some(table) = &preset.optimal_table {
        output::write_table(&out_dir.join("optimal_table.csv"), table)?;
    }
    let rows = run_points(&preset, out_dir, timings)?;
    output::write_atomic(&out_dir.join("sweep.csv"), sweep_csv(&rows).as_bytes())?;
    Ok(rows)
}

/// What the oracle command tabulates.
#[derive(Debug, Clone)]
pub enum OracleTarget {
    Spec(TargetSpec),
    /// A single cosine mode `cos(omega . x)` with `omega` at this lattice
    /// index; its spectrum is two entries of 1/2 at the conjugate pair.
    CosineMode { spec: LatticeSpec, dim: usize, index: Vec<i64> },
}

#[derive(Debug, Clone)]
pub struct OracleSummary {
    /// `(sum |f_hat|)^2`, the rate constant of the optimal density.
    pub c_p_star: f64,
    pub sum_abs: f64,
    /// `sum |f_hat|^2` over the table box.
    pub parseval_mass: f64,
    /// Mean of `f^2` on the quadrature grid; Parseval says the mass
    /// above approaches this as the box and grid grow.
    pub grid_mean_square: f64,
    pub entries: usize,
    pub n_max: i64,
    pub grid: usize,
    /// Largest coefficient change when the grid is doubled.
    pub refine_delta: Option<f64>,
}

/// Tabulates the target's lattice spectrum and its summary diagnostics.
pub fn run_oracle(
    target: &OracleTarget,
    n_max: i64,
    grid: usize,
    refine: bool,
) -> Result<(FourierCoefficientTable, OracleSummary)> {
    let build = |grid: usize| -> Result<(FourierCoefficientTable, f64)> {
        match target {
            OracleTarget::Spec(spec) => Ok((
                targets::compute_fourier_table(spec, n_max, grid)?,
                targets::grid_mean_square(spec, grid)?,
            )),
            OracleTarget::CosineMode { spec, dim, index } => {
                if index.len() != *dim {
                    return Err(Error::DimensionMismatch(format!(
                        "cosine index has {} components, dim is {dim}",
                        index.len()
                    )));
                }
                if index.iter().any(|&n| n.abs() > n_max) {
                    return Err(Error::Config(format!(
                        "cosine index {index:?} lies outside the table box n_max = {n_max}"
                    )));
                }
                let spacing = spec.spacing();
                let omega: Vec<f64> = index.iter().map(|&n| spacing * n as f64).collect();
                let f = |x: &[f64]| {
                    let phase: f64 = omega.iter().zip(x).map(|(w, xi)| w * xi).sum();
                    phase.cos()
                };
                Ok((
                    targets::compute_fourier_table_of(&f, *spec, *dim, n_max, grid)?,
                    targets::grid_mean_square_of(&f, *spec, *dim, grid)?,
                ))
            }
        }
    };
    let (table, grid_mean_square) = build(grid)?;
    let sum_abs: f64 = table.coefficients().iter().map(|c| c.norm()).sum();
    let refine_delta = if refine {
        let (fine, _) = build(2 * grid)?;
        let delta = table
            .coefficients()
            .iter()
            .zip(fine.coefficients())
            .map(|(a, b)| (a - b).norm())
            .fold(0.0f64, f64::max);
        Some(delta)
    } else {
        None
    };
    let summary = OracleSummary {
        c_p_star: sum_abs * sum_abs,
        sum_abs,
        parseval_mass: table.parseval_mass(),
        grid_mean_square,
        entries: table.len(),
        n_max,
        grid,
        refine_delta,
    };
    Ok((table, summary))
}

/// The four IDX files of the digit-classification task.
#[derive(Debug, Clone)]
pub struct MnistPaths {
    pub train_images: std::path::PathBuf,
    pub train_labels: std::path::PathBuf,
    pub test_images: std::path::PathBuf,
    pub test_labels: std::path::PathBuf,
}

/// Loads the IDX files, carves a validation sixth off the training split,
/// trains the one-vs-all ensemble, and writes per-digit histories, the
/// multiclass history, and `accuracy.csv` into `out_dir`. Returns the
/// (train, validation, test) accuracies at the best-validation iteration.
pub fn run_mnist(
    paths: &MnistPaths,
    scale: Scale,
    seed: u64,
    out_dir: &Path,
) -> Result<(f64, f64, f64)> {
    let config = match scale {
        Scale::Desk => MnistConfig::desk(seed),
        Scale::Full => MnistConfig::full(seed),
    };
    run_mnist_with_config(paths, &config, scale, out_dir)
}

pub fn run_mnist_with_config(
    paths: &MnistPaths,
    config: &MnistConfig,
    scale: Scale,
    out_dir: &Path,
) -> Result<(f64, f64, f64)> {
    let images = classify::load_idx_images(&fs::read(&paths.train_images)?)?;
    let labels = classify::load_idx_labels(&fs::read(&paths.train_labels)?)?;
    let test_images = classify::load_idx_images(&fs::read(&paths.test_images)?)?;
    let test_labels = classify::load_idx_labels(&fs::read(&paths.test_labels)?)?;
    if images.count != labels.count || test_images.count != test_labels.count {
        return Err(Error::DimensionMismatch(
            "image and label counts differ".into(),
        ));
    }

    // One sixth of the training split is held out for validation.
    let mut split_rng = RngStream::new(config.seed).child("mnist-split");
    let (train_idx, val_idx) = trainer::validation_split(images.count, 1.0 / 6.0, &mut split_rng)?;
    let train_images = images.select(&train_idx);
    let train_labels = labels.select(&train_idx);
    let val_images = images.select(&val_idx);
    let val_labels = labels.select(&val_idx);

    let (ensemble, history) =
        classify::train_one_vs_all(&train_images, &train_labels, &val_images, &val_labels, config)?;

    // Test accuracy over the digits actually trained.
    let keep = classify::filter_digits(&test_labels, &config.digits);
    if keep.is_empty() {
        return Err(Error::Degenerate(
            "test split has no samples with the trained digits".into(),
        ));
    }
    let test_acc = classify::accuracy(&ensemble, &test_images.select(&keep), &test_labels.select(&keep))?;

    fs::create_dir_all(out_dir)?;
    for &digit in &config.digits {
        let rows: Vec<(usize, f64, f64, usize)> = history
            .per_digit
            .iter()
            .filter(|r| r.digit == digit)
            .map(|r| (r.iteration, r.train_acc, r.val_acc, r.cg_iters))
            .collect();
        output::write_atomic(
            &out_dir.join(format!("digit_{digit}_history.csv")),
            output::digit_history_csv(&rows).as_bytes(),
        )?;
    }
    let mut multi = String::from("iteration,train_acc,val_acc\n");
    for r in &history.multiclass {
        multi.push_str(&format!(
            "{},{},{}\n",
            r.iteration,
            fmt_float(r.train_acc),
            fmt_float(r.val_acc)
        ));
    }
    output::write_atomic(&out_dir.join("multiclass_history.csv"), multi.as_bytes())?;

    let rows = vec![
        AccuracyRow {
            split: "train".into(),
            accuracy: history.best_train_accuracy,
            iteration: history.best_iteration,
        },
        AccuracyRow {
            split: "validation".into(),
            accuracy: history.best_val_accuracy,
            iteration: history.best_iteration,
        },
        AccuracyRow { split: "test".into(), accuracy: test_acc, iteration: history.best_iteration },
    ];
    output::write_accuracy(&out_dir.join("accuracy.csv"), &rows)?;

    let digits: Vec<String> = config.digits.iter().map(|d| d.to_string()).collect();
    let meta = format!(
        "[meta]\ntool = arff {}\nseed = {}\nscale = {}\ndigits = {}\nk = {}\niterations = {}\ndelta = {}\nlambda = {}\n",
        env!("CARGO_PKG_VERSION"),
        config.seed,
        scale.as_str(),
        digits.join(" "),
        config.k,
        config.iterations,
        fmt_float(config.delta),
        fmt_float(config.lambda),
    );
    output::write_atomic(&out_dir.join("metadata.ini"), meta.as_bytes())?;

    Ok((history.best_train_accuracy, history.best_val_accuracy, test_acc))
}
