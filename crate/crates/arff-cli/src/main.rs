use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use arff::config;
use arff::experiments::{self, MnistPaths, OracleTarget, PresetName, Scale};
use arff::output;
use arff::{Error, Result};

#[derive(Parser)]
#[command(
    name = "arff",
    version,
    about = "Adaptive random Fourier features: training, sweep presets, and spectrum oracles"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train one model from a config file.
    ///
    /// Writes history.csv, model.csv, and metadata.ini into the output
    /// directory. The metadata echo re-runs the job bit-identically.
    Train(TrainArgs),
    /// Run a named experiment preset.
    ///
    /// Writes one history CSV and metadata echo per sweep point plus a
    /// combined sweep.csv.
    Experiment(ExperimentArgs),
    /// Tabulate a periodic target's spectrum on the frequency lattice.
    ///
    /// Writes the coefficient table CSV and prints one summary line with
    /// the optimal-density rate constant and Parseval diagnostics.
    Oracle(OracleArgs),
    /// Train the one-vs-all digit classifier from IDX image files.
    Mnist(MnistArgs),
}

#[derive(Args)]
struct TrainArgs {
    /// Config file ([target], [train], [walk], [cutoff], [solver]).
    #[arg(short = 'c', long = "config")]
    config: PathBuf,
    /// Output directory.
    #[arg(short = 'o', long = "out")]
    out: PathBuf,
    /// Record real per-phase wall times instead of zeros. Timed output is
    /// not byte-reproducible across runs.
    #[arg(long)]
    timings: bool,
}

#[derive(Args)]
struct ExperimentArgs {
    /// Preset name (test1..test8, fig_f29, fig_f27, fig_alg3).
    name: String,
    /// "desk" for the shrunk single-core protocol, "full" for the
    /// full-size parameters.
    #[arg(long, default_value = "desk")]
    scale: String,
    /// Output directory.
    #[arg(short = 'o', long = "out")]
    out: PathBuf,
    /// Concurrent sweep points (results do not depend on this).
    #[arg(long, default_value_t = 1)]
    jobs: usize,
    /// Base seed for the whole sweep; ARFF_SEED overrides it.
    #[arg(long, default_value_t = 1)]
    seed: u64,
    /// Record real per-phase wall times instead of zeros.
    #[arg(long)]
    timings: bool,
}

#[derive(Args)]
struct OracleArgs {
    /// Config file; only [target] is read (a training config works too).
    #[arg(short = 'c', long = "config")]
    config: PathBuf,
    /// Index cutoff per axis: the table covers {-nmax..nmax}^d.
    #[arg(long)]
    nmax: i64,
    /// Output CSV path.
    #[arg(short = 'o', long = "out")]
    out: PathBuf,
    /// Quadrature grid points per axis (default max(4 nmax, 64)).
    #[arg(long)]
    grid: Option<usize>,
    /// Tabulate the single cosine mode with this comma-separated lattice
    /// index instead of the config target (its period and dim still set
    /// the lattice).
    #[arg(long, value_name = "N1,N2,...")]
    cos: Option<String>,
    /// Re-run on a doubled grid and report the largest coefficient change.
    #[arg(long)]
    refine: bool,
}

#[derive(Args)]
struct MnistArgs {
    /// Training images, IDX format (optionally gzipped).
    #[arg(long)]
    images: PathBuf,
    /// Training labels, IDX format.
    #[arg(long)]
    labels: PathBuf,
    /// Held-out test images.
    #[arg(long = "test-images")]
    test_images: PathBuf,
    /// Held-out test labels.
    #[arg(long = "test-labels")]
    test_labels: PathBuf,
    /// "desk" trains digits 0,1,2,8 at K=2000; "full" trains all ten
    /// digits at full size.
    #[arg(long, default_value = "desk")]
    scale: String,
    /// Output directory.
    #[arg(short = 'o', long = "out")]
    out: PathBuf,
    /// Seed; ARFF_SEED overrides it.
    #[arg(long, default_value_t = 1)]
    seed: u64,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err}");
            ExitCode::from(err.exit_code() as u8)
        }
    }
}

/// `ARFF_SEED` overrides every config or flag seed when set.
fn env_seed() -> Result<Option<u64>> {
    match std::env::var("ARFF_SEED") {
        Ok(v) => v
            .trim()
            .parse::<u64>()
            .map(Some)
            .map_err(|_| Error::Config(format!("ARFF_SEED must be an unsigned integer, got {v:?}"))),
        Err(std::env::VarError::NotPresent) => Ok(None),
        Err(std::env::VarError::NotUnicode(_)) => {
            Err(Error::Config("ARFF_SEED is not valid UTF-8".into()))
        }
    }
}

fn run(command: Command) -> Result<()> {
    match command {
        Command::Train(args) => {
            let text = std::fs::read_to_string(&args.config)?;
            let spec = config::parse_run_spec_with_seed(&text, env_seed()?)?;
            experiments::run_config(&spec, &args.out, args.timings)?;
            println!(
                "wrote history.csv, model.csv, metadata.ini to {}",
                args.out.display()
            );
            Ok(())
        }
        Command::Experiment(args) => {
            let name = PresetName::parse(&args.name)?;
            let scale = Scale::parse(&args.scale)?;
            if args.jobs == 0 {
                return Err(Error::Config("--jobs must be at least 1".into()));
            }
            rayon::ThreadPoolBuilder::new()
                .num_threads(args.jobs)
                .build_global()
                .map_err(|e| Error::Config(format!("failed to size the thread pool: {e}")))?;
            let seed = env_seed()?.unwrap_or(args.seed);
            let rows = experiments::run_experiment(name, scale, seed, &args.out, args.timings)?;
            for row in &rows {
                let test = row
                    .test_err
                    .map(|t| format!(" test={t:.3e}"))
                    .unwrap_or_default();
                println!(
                    "{}: k={} j={} train={:.3e} val={:.3e}{}",
                    row.label, row.k, row.j, row.train_err, row.val_err, test
                );
            }
            println!("wrote {} sweep points to {}", rows.len(), args.out.display());
            Ok(())
        }
        Command::Oracle(args) => {
            let text = std::fs::read_to_string(&args.config)?;
            let spec = config::parse_target_spec(&text, env_seed()?)?;
            let target = match &args.cos {
                Some(list) => {
                    let lattice = spec.period.ok_or_else(|| {
                        Error::Config(
                            "the oracle needs a periodic target; set `period` in [target]".into(),
                        )
                    })?;
                    let index: Result<Vec<i64>> = list
                        .split(',')
                        .map(|p| {
                            p.trim().parse::<i64>().map_err(|_| {
                                Error::Config(format!("bad cosine index component {p:?}"))
                            })
                        })
                        .collect();
                    OracleTarget::CosineMode { spec: lattice, dim: spec.dim(), index: index? }
                }
                None => OracleTarget::Spec(spec),
            };
            let grid = args.grid.unwrap_or(((4 * args.nmax.max(0)) as usize).max(64));
            let (table, summary) = experiments::run_oracle(&target, args.nmax, grid, args.refine)?;
            output::write_table(&args.out, &table)?;
            let refine = summary
                .refine_delta
                .map(|d| format!("; refine_delta = {d:.17e}"))
                .unwrap_or_default();
            println!(
                "C_p* = {:.17e}; sum_abs = {:.17e}; parseval_mass = {:.17e}; grid_mean_square = {:.17e}; entries = {}; n_max = {}; grid = {}{}",
                summary.c_p_star,
                summary.sum_abs,
                summary.parseval_mass,
                summary.grid_mean_square,
                summary.entries,
                summary.n_max,
                summary.grid,
                refine
            );
            Ok(())
        }
        Command::Mnist(args) => {
            let scale = Scale::parse(&args.scale)?;
            let seed = env_seed()?.unwrap_or(args.seed);
            let paths = MnistPaths {
                train_images: args.images,
                train_labels: args.labels,
                test_images: args.test_images,
                test_labels: args.test_labels,
            };
            let (train, val, test) = experiments::run_mnist(&paths, scale, seed, &args.out)?;
            println!(
                "best-validation accuracies: train={train:.4} validation={val:.4} test={test:.4}"
            );
            println!("wrote per-digit histories and accuracy.csv to {}", args.out.display());
            Ok(())
        }
    }
}
