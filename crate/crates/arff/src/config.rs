//! Flat INI-style run configuration.
//!
//! A run is described by five sections, `[target]`, `[train]`, `[walk]`,
//! `[cutoff]`, and `[solver]`, each holding plain `key = value` pairs.
//! Values are literal numbers or small enums; nothing is computed at
//! parse time, so a file echoed by [`run_spec_to_ini`] reproduces the
//! run bit-for-bit.

use std::collections::HashMap;

use crate::error::{Error, Result};
use crate::linalg::SolverConfig;
use crate::model::LatticeSpec;
use crate::rng::RngStream;
use crate::sampler::{CutoffConfig, WalkConfig, WalkMode};
use crate::targets::{
    direction_axis, direction_random, BaseDistribution, TargetKind, TargetSpec,
};
use crate::trainer::{Algorithm, InitMode, TrainConfig};

/// A fully resolved run description: target, data sizes, and trainer
/// configuration.
#[derive(Debug, Clone)]
pub struct RunSpec {
    pub target: TargetSpec,
    /// Training sample count J (split internally into train/validation).
    pub samples: usize,
    /// Held-out test sample count; 0 disables the test evaluation.
    pub test_samples: usize,
    /// Noise standard deviation added to training targets.
    pub noise_std: f64,
    pub train: TrainConfig,
}

impl RunSpec {
    pub fn dim(&self) -> usize {
        self.target.dim()
    }
}

const VALID_SECTIONS: &[(&str, &[&str])] = &[
    (
        "target",
        &["kind", "dim", "direction", "sharpness", "period", "samples", "test_samples", "noise_std"],
    ),
    (
        "train",
        &[
            "algorithm",
            "k",
            "iterations",
            "seed",
            "validation_fraction",
            "init",
            "snapshot_stride",
            "base_scale",
        ],
    ),
    ("walk", &["delta", "eps_hat"]),
    ("cutoff", &["epsilon", "q_epsilon"]),
    ("solver", &["lambda1", "lambda2", "cg_rel_tol", "cg_max_iters", "newton_tol", "newton_max_iters"]),
];

fn section_keys(name: &str) -> Option<&'static [&'static str]> {
    VALID_SECTIONS.iter().find(|(s, _)| *s == name).map(|(_, keys)| *keys)
}

fn levenshtein(a: &str, b: &str) -> usize {
    let a: Vec<char> = a.chars().collect();
    let b: Vec<char> = b.chars().collect();
    let mut prev: Vec<usize> = (0..=b.len()).collect();
    let mut cur = vec![0usize; b.len() + 1];
    for (i, &ca) in a.iter().enumerate() {
        cur[0] = i + 1;
        for (j, &cb) in b.iter().enumerate() {
            let sub = prev[j] + usize::from(ca != cb);
            cur[j + 1] = sub.min(prev[j + 1] + 1).min(cur[j] + 1);
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    prev[b.len()]
}

fn nearest_key(key: &str, valid: &[&str]) -> &'static str {
    let mut best = valid[0];
    let mut best_d = usize::MAX;
    for &v in valid {
        let d = levenshtein(key, v);
        if d < best_d {
            best = v;
            best_d = d;
        }
    }
    // The candidates are 'static string literals from the schema table.
    VALID_SECTIONS
        .iter()
        .flat_map(|(_, keys)| keys.iter())
        .find(|k| **k == best)
        .copied()
        .expect("schema key")
}

type RawSections = Vec<(String, Vec<(String, String)>)>;

fn parse_ini(text: &str) -> Result<RawSections> {
    let mut sections: RawSections = Vec::new();
    for (idx, raw) in text.lines().enumerate() {
        let line = raw.trim();
        let lineno = idx + 1;
        if line.is_empty() || line.starts_with('#') || line.starts_with(';') {
            continue;
        }
        if let Some(rest) = line.strip_prefix('[') {
            let name = rest.strip_suffix(']').ok_or_else(|| {
                Error::Config(format!("line {lineno}: malformed section header {line:?}"))
            })?;
            sections.push((name.trim().to_string(), Vec::new()));
        } else if let Some((k, v)) = line.split_once('=') {
            let Some(last) = sections.last_mut() else {
                return Err(Error::Config(format!(
                    "line {lineno}: key {:?} appears before any [section] header",
                    k.trim()
                )));
            };
            last.1.push((k.trim().to_string(), v.trim().to_string()));
        } else {
            return Err(Error::Config(format!(
                "line {lineno}: expected `key = value` or `[section]`, got {line:?}"
            )));
        }
    }
    Ok(sections)
}

/// Key-value view of one section with typed getters.
struct Section<'a> {
    name: &'a str,
    map: HashMap<&'a str, &'a str>,
}

impl<'a> Section<'a> {
    fn empty(name: &'a str) -> Self {
        Section { name, map: HashMap::new() }
    }

    fn get(&self, key: &str) -> Option<&'a str> {
        self.map.get(key).copied()
    }

    fn required(&self, key: &str) -> Result<&'a str> {
        self.get(key).ok_or_else(|| {
            Error::Config(format!("missing required key `{key}` in [{}]", self.name))
        })
    }

    fn parse<T: std::str::FromStr>(&self, key: &str, value: &str, what: &str) -> Result<T> {
        value.parse().map_err(|_| {
            Error::Config(format!(
                "key `{key}` in [{}]: cannot parse {value:?} as {what}",
                self.name
            ))
        })
    }

    fn f64_or(&self, key: &str, default: f64) -> Result<f64> {
        match self.get(key) {
            Some(v) => self.parse(key, v, "a number"),
            None => Ok(default),
        }
    }

    fn usize_or(&self, key: &str, default: usize) -> Result<usize> {
        match self.get(key) {
            Some(v) => self.parse(key, v, "a nonnegative integer"),
            None => Ok(default),
        }
    }

    fn required_f64(&self, key: &str) -> Result<f64> {
        self.parse(key, self.required(key)?, "a number")
    }

    fn required_usize(&self, key: &str) -> Result<usize> {
        self.parse(key, self.required(key)?, "a nonnegative integer")
    }
}

/// Validate section and key names, collecting every unknown key into a
/// single error so a config full of typos is reported in one pass.
fn validate_names(sections: &RawSections) -> Result<()> {
    let mut complaints: Vec<String> = Vec::new();
    for (name, entries) in sections {
        if name == "meta" {
            continue;
        }
        let Some(valid) = section_keys(name) else {
            let all: Vec<String> =
                VALID_SECTIONS.iter().map(|(s, _)| format!("[{s}]")).collect();
            return Err(Error::Config(format!(
                "unknown section [{name}]; valid sections are {}",
                all.join(", ")
            )));
        };
        let mut seen: HashMap<&str, ()> = HashMap::new();
        for (key, _) in entries {
            if seen.insert(key.as_str(), ()).is_some() {
                return Err(Error::Config(format!("duplicate key `{key}` in [{name}]")));
            }
            if !valid.contains(&key.as_str()) {
                complaints.push(format!(
                    "unknown key `{key}` in [{name}]; nearest valid key is `{}`",
                    nearest_key(key, valid)
                ));
            }
        }
    }
    if complaints.is_empty() {
        Ok(())
    } else {
        Err(Error::Config(complaints.join("\n")))
    }
}

fn normalize_direction(mut v: Vec<f64>) -> Result<Vec<f64>> {
    let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if !norm.is_finite() || norm <= 1e-12 {
        return Err(Error::Config("direction vector has (near-)zero length".into()));
    }
    // Skip the division when already unit so reparsing an echoed config
    // cannot drift the stored bits.
    if (norm - 1.0).abs() > 1e-12 {
        for x in v.iter_mut() {
            *x /= norm;
        }
    }
    Ok(v)
}

/// Parse a run config, optionally overriding the seed (the `ARFF_SEED`
/// hook). The override applies before `direction = random` is resolved.
fn target_from_section(target_s: &Section, seed: Option<u64>) -> Result<TargetSpec> {
    let kind = match target_s.required("kind")? {
        "bump" => TargetKind::Bump,
        "sine_integral" => TargetKind::SineIntegral,
        other => {
            return Err(Error::Config(format!(
                "unknown target kind `{other}`; valid kinds are `bump` and `sine_integral`"
            )))
        }
    };
    let dim: usize = target_s.required_usize("dim")?;
    if dim == 0 {
        return Err(Error::Config("dim must be at least 1".into()));
    }
    let sharpness = target_s.required_f64("sharpness")?;
    let period = match target_s.get("period") {
        Some(v) => Some(LatticeSpec::new(target_s.parse("period", v, "a number")?)?),
        None => None,
    };
    let direction = match target_s.required("direction")? {
        "axis" => direction_axis(dim),
        "random" => {
            let seed = seed.ok_or_else(|| {
                Error::Config(
                    "direction = random needs a seed; set ARFF_SEED or a [train] seed".into(),
                )
            })?;
            let mut rng = RngStream::new(seed).child("direction");
            direction_random(dim, &mut rng)
        }
        list => {
            let parts: Result<Vec<f64>> = list
                .split(',')
                .map(|p| target_s.parse("direction", p.trim(), "a number"))
                .collect();
            let v = parts?;
            if v.len() != dim {
                return Err(Error::Config(format!(
                    "direction has {} components, dim is {dim}",
                    v.len()
                )));
            }
            normalize_direction(v)?
        }
    };
    TargetSpec::new(kind, direction, sharpness, period)
}

/// Reads just the `[target]` section of a config, for tools that need a
/// target but no training setup. A random direction takes its seed from
/// the override or a `[train]` seed when one is present.
pub fn parse_target_spec(text: &str, seed_override: Option<u64>) -> Result<TargetSpec> {
    let raw = parse_ini(text)?;
    validate_names(&raw)?;
    let mut target_s = Section::empty("target");
    let mut train_seed: Option<&str> = None;
    for (name, entries) in &raw {
        for (k, v) in entries {
            if name == "target" {
                target_s.map.insert(k.as_str(), v.as_str());
            } else if name == "train" && k == "seed" {
                train_seed = Some(v.as_str());
            }
        }
    }
    if target_s.map.is_empty() {
        return Err(Error::Config("missing section [target]".into()));
    }
    let seed = match (seed_override, train_seed) {
        (Some(s), _) => Some(s),
        (None, Some(v)) => Some(target_s.parse("seed", v, "an unsigned integer")?),
        (None, None) => None,
    };
    target_from_section(&target_s, seed)
}

pub fn parse_run_spec_with_seed(text: &str, seed_override: Option<u64>) -> Result<RunSpec> {
    let raw = parse_ini(text)?;
    validate_names(&raw)?;
    let mut by_name: HashMap<&str, Section> = HashMap::new();
    for (name, entries) in &raw {
        if name == "meta" {
            continue;
        }
        let section = by_name
            .entry(name.as_str())
            .or_insert_with(|| Section::empty(name.as_str()));
        for (k, v) in entries {
            section.map.insert(k.as_str(), v.as_str());
        }
    }
    for required in ["target", "train", "walk", "solver"] {
        if !by_name.contains_key(required) {
            return Err(Error::Config(format!("missing section [{required}]")));
        }
    }
    let target_s = &by_name["target"];
    let train_s = &by_name["train"];
    let walk_s = &by_name["walk"];
    let solver_s = &by_name["solver"];
    let cutoff_s = by_name.get("cutoff").cloned().unwrap_or_else(|| Section::empty("cutoff"));

    let seed: u64 = match seed_override {
        Some(s) => s,
        None => train_s.parse("seed", train_s.required("seed")?, "an unsigned integer")?,
    };

    // Target section.
    let target = target_from_section(target_s, Some(seed))?;
    let period = target.period;
    let samples = target_s.required_usize("samples")?;
    let test_samples = target_s.usize_or("test_samples", 0)?;
    let noise_std = target_s.f64_or("noise_std", 0.0)?;
    if noise_std < 0.0 {
        return Err(Error::Config(format!("noise_std must be nonnegative, got {noise_std}")));
    }

    // Train section.
    let algorithm = match train_s.required("algorithm")? {
        "continuous" => Algorithm::Continuous,
        "lattice" => Algorithm::Lattice,
        "adaptive" => Algorithm::Adaptive,
        other => {
            return Err(Error::Config(format!(
                "unknown algorithm `{other}`; valid algorithms are `continuous`, `lattice`, `adaptive`"
            )))
        }
    };
    let k = train_s.required_usize("k")?;
    let iterations = train_s.required_usize("iterations")?;
    let validation_fraction = train_s.f64_or("validation_fraction", 0.2)?;
    let init = match train_s.get("init").unwrap_or("zero") {
        "zero" => InitMode::ZeroFrequencies,
        "base" => InitMode::FromBase,
        other => {
            return Err(Error::Config(format!(
                "unknown init mode `{other}`; valid modes are `zero` and `base`"
            )))
        }
    };
    let snapshot_stride = match train_s.get("snapshot_stride") {
        Some(v) => {
            let s: usize = train_s.parse("snapshot_stride", v, "a positive integer")?;
            if s == 0 {
                return Err(Error::Config(
                    "snapshot_stride must be positive; omit the key for the default cadence".into(),
                ));
            }
            Some(s)
        }
        None => None,
    };
    let base_scale = train_s.f64_or("base_scale", 1.0)?;

    // Walk + cutoff + solver sections.
    let delta = walk_s.required_f64("delta")?;
    let eps_hat = walk_s.f64_or("eps_hat", 1e-3)?;
    let mode = match algorithm {
        Algorithm::Continuous => WalkMode::Continuous,
        Algorithm::Lattice => {
            let spec = period.ok_or_else(|| {
                Error::Config(
                    "the lattice algorithm needs a periodic target; set `period` in [target]"
                        .into(),
                )
            })?;
            WalkMode::LatticeProjected(spec)
        }
        Algorithm::Adaptive => WalkMode::AdaptiveCovariance { eps_hat },
    };
    let walk = WalkConfig { delta, mode };
    let cutoff = CutoffConfig {
        epsilon: cutoff_s.f64_or("epsilon", 0.0)?,
        q_epsilon: cutoff_s.f64_or("q_epsilon", 0.0)?,
    };
    let defaults = SolverConfig::default();
    let solver = SolverConfig {
        lambda1: solver_s.required_f64("lambda1")?,
        lambda2: solver_s.f64_or("lambda2", defaults.lambda2)?,
        cg_rel_tol: solver_s.f64_or("cg_rel_tol", defaults.cg_rel_tol)?,
        cg_max_iters: solver_s.usize_or("cg_max_iters", defaults.cg_max_iters)?,
        newton_tol: solver_s.f64_or("newton_tol", defaults.newton_tol)?,
        newton_max_iters: solver_s.usize_or("newton_max_iters", defaults.newton_max_iters)?,
    };
    let base = match algorithm {
        Algorithm::Continuous | Algorithm::Adaptive => {
            BaseDistribution::StandardNormal { scale: base_scale }
        }
        Algorithm::Lattice => BaseDistribution::LatticeProjectedNormal {
            scale: base_scale,
            spec: period.expect("checked above"),
        },
    };

    let mut train = TrainConfig::new(algorithm, k, iterations, walk, cutoff, solver, base, seed);
    train.init = init;
    train.validation_fraction = validation_fraction;
    train.snapshot_stride = snapshot_stride;
    train.validate()?;
    if samples == 0 {
        return Err(Error::Config("samples must be at least 1".into()));
    }
    Ok(RunSpec { target, samples, test_samples, noise_std, train })
}

pub fn parse_run_spec(text: &str) -> Result<RunSpec> {
    parse_run_spec_with_seed(text, None)
}

fn fmt_float(v: f64) -> String {
    format!("{v}")
}

/// Echo a run spec as INI text. Parsing the echo reproduces the spec
/// exactly, including a resolved `direction = random`.
pub fn run_spec_to_ini(spec: &RunSpec) -> Result<String> {
    let (algorithm, eps_hat) = match spec.train.walk.mode {
        WalkMode::Continuous => ("continuous", 1e-3),
        WalkMode::LatticeProjected(_) => ("lattice", 1e-3),
        WalkMode::AdaptiveCovariance { eps_hat } => ("adaptive", eps_hat),
    };
    let base_scale = match &spec.train.base {
        BaseDistribution::StandardNormal { scale } => *scale,
        BaseDistribution::LatticeProjectedNormal { scale, .. } => *scale,
        BaseDistribution::Tabulated(_) => {
            return Err(Error::Unsupported(
                "tabulated base distributions have no INI representation".into(),
            ))
        }
    };
    let mut out = String::new();
    out.push_str("[target]\n");
    out.push_str(&format!(
        "kind = {}\n",
        match spec.target.kind {
            TargetKind::Bump => "bump",
            TargetKind::SineIntegral => "sine_integral",
        }
    ));
    out.push_str(&format!("dim = {}\n", spec.dim()));
    let direction: Vec<String> = spec.target.direction.iter().map(|c| fmt_float(*c)).collect();
    out.push_str(&format!("direction = {}\n", direction.join(",")));
    out.push_str(&format!("sharpness = {}\n", fmt_float(spec.target.sharpness)));
    if let Some(p) = spec.target.period {
        out.push_str(&format!("period = {}\n", fmt_float(p.period())));
    }
    out.push_str(&format!("samples = {}\n", spec.samples));
    out.push_str(&format!("test_samples = {}\n", spec.test_samples));
    out.push_str(&format!("noise_std = {}\n", fmt_float(spec.noise_std)));

    out.push_str("\n[train]\n");
    out.push_str(&format!("algorithm = {algorithm}\n"));
    out.push_str(&format!("k = {}\n", spec.train.k));
    out.push_str(&format!("iterations = {}\n", spec.train.iterations));
    out.push_str(&format!("seed = {}\n", spec.train.seed));
    out.push_str(&format!(
        "validation_fraction = {}\n",
        fmt_float(spec.train.validation_fraction)
    ));
    out.push_str(&format!(
        "init = {}\n",
        match spec.train.init {
            InitMode::ZeroFrequencies => "zero",
            InitMode::FromBase => "base",
        }
    ));
    if let Some(s) = spec.train.snapshot_stride {
        out.push_str(&format!("snapshot_stride = {s}\n"));
    }
    out.push_str(&format!("base_scale = {}\n", fmt_float(base_scale)));

    out.push_str("\n[walk]\n");
    out.push_str(&format!("delta = {}\n", fmt_float(spec.train.walk.delta)));
    if algorithm == "adaptive" {
        out.push_str(&format!("eps_hat = {}\n", fmt_float(eps_hat)));
    }

    out.push_str("\n[cutoff]\n");
    out.push_str(&format!("epsilon = {}\n", fmt_float(spec.train.cutoff.epsilon)));
    out.push_str(&format!("q_epsilon = {}\n", fmt_float(spec.train.cutoff.q_epsilon)));

    out.push_str("\n[solver]\n");
    let s = &spec.train.solver;
    out.push_str(&format!("lambda1 = {}\n", fmt_float(s.lambda1)));
    out.push_str(&format!("lambda2 = {}\n", fmt_float(s.lambda2)));
    out.push_str(&format!("cg_rel_tol = {}\n", fmt_float(s.cg_rel_tol)));
    out.push_str(&format!("cg_max_iters = {}\n", s.cg_max_iters));
    out.push_str(&format!("newton_tol = {}\n", fmt_float(s.newton_tol)));
    out.push_str(&format!("newton_max_iters = {}\n", s.newton_max_iters));
    Ok(out)
}

/// The metadata record written next to run outputs: tool version and
/// seed up front, then the full config echo for bit-identical replay.
pub fn metadata_ini(spec: &RunSpec) -> Result<String> {
    let mut out = String::new();
    out.push_str("[meta]\n");
    out.push_str(&format!("tool = arff {}\n", env!("CARGO_PKG_VERSION")));
    out.push_str(&format!("seed = {}\n\n", spec.train.seed));
    out.push_str(&run_spec_to_ini(spec)?);
    Ok(out)
}

/// Parse a metadata record back into the run spec it describes.
pub fn parse_metadata(text: &str) -> Result<RunSpec> {
    parse_run_spec(text)
}

impl Clone for Section<'_> {
    fn clone(&self) -> Self {
        Section { name: self.name, map: self.map.clone() }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn minimal() -> String {
        "\
[target]
kind = bump
dim = 1
direction = axis
sharpness = 0.5
samples = 100

[train]
algorithm = continuous
k = 16
iterations = 2
seed = 7

[walk]
delta = 0.5

[solver]
lambda1 = 0.01
"
        .to_string()
    }

    #[test]
    fn minimal_config_parses_with_defaults() {
        let spec = parse_run_spec(&minimal()).unwrap();
        assert_eq!(spec.dim(), 1);
        assert_eq!(spec.samples, 100);
        assert_eq!(spec.test_samples, 0);
        assert_eq!(spec.noise_std, 0.0);
        assert_eq!(spec.train.k, 16);
        assert_eq!(spec.train.seed, 7);
        assert_eq!(spec.train.validation_fraction, 0.2);
        assert_eq!(spec.train.cutoff.epsilon, 0.0);
        assert_eq!(spec.train.solver.cg_rel_tol, 1e-3);
        assert!(matches!(spec.train.init, InitMode::ZeroFrequencies));
        assert!(spec.train.snapshot_stride.is_none());
    }

    #[test]
    fn echo_is_a_fixed_point() {
        let text = "\
[target]
kind = sine_integral
dim = 2
direction = 0.3308,0.9437
sharpness = 0.1
period = 12
samples = 800
test_samples = 400
noise_std = 0.05

[train]
algorithm = lattice
k = 64
iterations = 5
seed = 11
validation_fraction = 0.25
init = base

[walk]
delta = 0.2

[cutoff]
epsilon = 0.000707
q_epsilon = 0.1

[solver]
lambda1 = 0.002828
lambda2 = 0.5
";
        let spec = parse_run_spec(text).unwrap();
        // The explicit direction is normalized to unit length.
        let norm: f64 = spec.target.direction.iter().map(|x| x * x).sum::<f64>().sqrt();
        assert!((norm - 1.0).abs() < 1e-12);
        let echo = run_spec_to_ini(&spec).unwrap();
        let spec2 = parse_run_spec(&echo).unwrap();
        let echo2 = run_spec_to_ini(&spec2).unwrap();
        assert_eq!(echo, echo2);
        for (a, b) in spec.target.direction.iter().zip(&spec2.target.direction) {
            assert_eq!(a.to_bits(), b.to_bits());
        }
        assert_eq!(spec.train.solver.lambda1.to_bits(), spec2.train.solver.lambda1.to_bits());
    }

    #[test]
    fn unknown_key_suggests_the_nearest_valid_one() {
        let text = minimal().replace("lambda1 = 0.01", "lamda1 = 0.01");
        let err = parse_run_spec(&text).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("`lamda1`"), "{msg}");
        assert!(msg.contains("`lambda1`"), "{msg}");
    }

    #[test]
    fn all_unknown_keys_are_listed_together() {
        let text = minimal()
            .replace("delta = 0.5", "delta = 0.5\ndeltta = 1")
            .replace("k = 16", "k = 16\nkk = 3");
        let err = parse_run_spec(&text).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("`deltta`"), "{msg}");
        assert!(msg.contains("`kk`"), "{msg}");
    }

    #[test]
    fn unknown_section_names_the_valid_ones() {
        let text = minimal() + "\n[tragets]\nkind = bump\n";
        let err = parse_run_spec(&text).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("[tragets]"), "{msg}");
        assert!(msg.contains("[target]"), "{msg}");
    }

    #[test]
    fn missing_required_key_names_key_and_section() {
        let text = minimal().replace("sharpness = 0.5\n", "");
        let err = parse_run_spec(&text).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("`sharpness`") && msg.contains("[target]"), "{msg}");
    }

    #[test]
    fn duplicate_keys_are_rejected() {
        let text = minimal().replace("delta = 0.5", "delta = 0.5\ndelta = 0.7");
        let err = parse_run_spec(&text).unwrap_err();
        assert!(err.to_string().contains("duplicate"), "{err}");
    }

    #[test]
    fn lattice_algorithm_requires_a_period() {
        let text = minimal().replace("algorithm = continuous", "algorithm = lattice");
        let err = parse_run_spec(&text).unwrap_err();
        assert!(err.to_string().contains("period"), "{err}");
    }

    #[test]
    fn random_direction_is_seed_deterministic() {
        let base = minimal()
            .replace("direction = axis", "direction = random")
            .replace("dim = 1", "dim = 3");
        let a = parse_run_spec(&base).unwrap();
        let b = parse_run_spec(&base).unwrap();
        assert_eq!(
            a.target.direction.iter().map(|x| x.to_bits()).collect::<Vec<_>>(),
            b.target.direction.iter().map(|x| x.to_bits()).collect::<Vec<_>>()
        );
        let c = parse_run_spec(&base.replace("seed = 7", "seed = 8")).unwrap();
        assert_ne!(a.target.direction, c.target.direction);
        // The echo pins the resolved direction, so replay does not depend
        // on the seed again.
        let echo = run_spec_to_ini(&a).unwrap();
        let replay = parse_run_spec(&echo).unwrap();
        assert_eq!(
            a.target.direction.iter().map(|x| x.to_bits()).collect::<Vec<_>>(),
            replay.target.direction.iter().map(|x| x.to_bits()).collect::<Vec<_>>()
        );
    }

    #[test]
    fn seed_override_applies_before_direction_resolution() {
        let base = minimal()
            .replace("direction = axis", "direction = random")
            .replace("dim = 1", "dim = 3");
        let overridden = parse_run_spec_with_seed(&base, Some(8)).unwrap();
        let native = parse_run_spec(&base.replace("seed = 7", "seed = 8")).unwrap();
        assert_eq!(overridden.train.seed, 8);
        assert_eq!(
            overridden.target.direction.iter().map(|x| x.to_bits()).collect::<Vec<_>>(),
            native.target.direction.iter().map(|x| x.to_bits()).collect::<Vec<_>>()
        );
    }

    #[test]
    fn malformed_lines_report_their_number() {
        let text = "[target]\nkind bump\n";
        let err = parse_run_spec(text).unwrap_err();
        assert!(err.to_string().contains("line 2"), "{err}");

        let text = "kind = bump\n";
        let err = parse_run_spec(text).unwrap_err();
        assert!(err.to_string().contains("before any"), "{err}");
    }

    #[test]
    fn bad_numbers_name_the_key() {
        let text = minimal().replace("k = 16", "k = sixteen");
        let err = parse_run_spec(&text).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("`k`") && msg.contains("sixteen"), "{msg}");
    }

    #[test]
    fn metadata_round_trips() {
        let spec = parse_run_spec(&minimal()).unwrap();
        let meta = metadata_ini(&spec).unwrap();
        assert!(meta.starts_with("[meta]\n"));
        assert!(meta.contains("seed = 7"));
        let replay = parse_metadata(&meta).unwrap();
        assert_eq!(run_spec_to_ini(&spec).unwrap(), run_spec_to_ini(&replay).unwrap());
    }

    #[test]
    fn comments_and_blank_lines_are_ignored() {
        let text = minimal().replace(
            "[walk]\n",
            "# random walk parameters\n; alternate comment style\n\n[walk]\n",
        );
        assert!(parse_run_spec(&text).is_ok());
    }

    #[test]
    fn target_only_configs_parse_without_training_sections() {
        let text = "[target]\nkind = bump\ndim = 2\ndirection = axis\nsharpness = 0.5\nperiod = 12\n";
        let target = parse_target_spec(text, None).unwrap();
        assert_eq!(target.dim(), 2);
        assert!(target.period.is_some());

        // A full run config is also acceptable; its [train] seed resolves
        // a random direction the same way parse_run_spec does.
        let full = minimal().replace("direction = axis", "direction = random");
        let from_train = parse_target_spec(&full, None).unwrap();
        assert_eq!(from_train.direction, parse_run_spec(&full).unwrap().target.direction);

        let random = text.replace("direction = axis", "direction = random");
        let err = parse_target_spec(&random, None).unwrap_err();
        assert!(err.to_string().contains("ARFF_SEED"));
        let a = parse_target_spec(&random, Some(3)).unwrap();
        let b = parse_target_spec(&random, Some(99)).unwrap();
        assert_ne!(a.direction, b.direction);
        assert!(parse_target_spec("[solver]\nlambda1 = 1\n", None).is_err());
    }
}
