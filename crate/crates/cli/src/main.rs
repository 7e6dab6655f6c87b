//! `tec`: generate data, train, predict, benchmark and tune tensor ensemble
//! classifiers.
//!
//! Exit codes: 0 success, 2 usage error, 3 data or I/O error, 4 numerical
//! failure.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use tec_core::datagen::{generate, SimModel, SimModelSpec};
use tec_core::ensemble::Bandwidth;
use tec_core::harness::{self, EvalReport, RunConfig, TargetDims, TuneGrid};
use tec_core::io;
use tec_core::projection::Scaling;
use tec_core::{Dataset, TecError};

#[derive(Parser)]
#[command(name = "tec", version, about = "Tensor ensemble classifier")]
struct Cli {
    /// Worker threads (0 = all cores).
    #[arg(long, global = true, env = "TEC_THREADS", default_value_t = 0)]
    threads: usize,

    /// Print machine-readable JSON instead of a table.
    #[arg(long, global = true)]
    json: bool,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a simulated dataset archive.
    Gen {
        #[arg(long)]
        model: SimModel,
        #[arg(long, default_value_t = 100)]
        per_class: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train an ensemble on a dataset archive and write a model archive.
    Train {
        /// Dataset archive directory.
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        run: RunArgs,
    },
    /// Predict labels for a dataset archive.
    Predict {
        /// Dataset archive directory.
        data: PathBuf,
        /// Model archive directory.
        #[arg(long)]
        model: PathBuf,
        /// Write one `label tau` line per sample to this file.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Repeated random train/test splits.
    Benchmark {
        #[command(flatten)]
        source: DataSource,
        #[command(flatten)]
        run: RunArgs,
        /// Also write the JSON report here.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Cross-validated choice of b, then gamma.
    Tune {
        #[command(flatten)]
        source: DataSource,
        #[command(flatten)]
        run: RunArgs,
        /// Ensemble sizes to try: `lo..hi` (inclusive) or a comma list.
        #[arg(long, default_value = "2..20")]
        b_grid: String,
        /// Gamma grid spacing over [-1, 1].
        #[arg(long, default_value_t = 0.1)]
        gamma_step: f64,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Args)]
struct DataSource {
    /// Dataset archive directory; omit to generate from `--model`.
    data: Option<PathBuf>,
    /// Simulation model to generate when no archive is given.
    #[arg(long, required_unless_present = "data")]
    model: Option<SimModel>,
    #[arg(long, default_value_t = 100)]
    per_class: usize,
    /// Seed of generated data (defaults to `--seed`).
    #[arg(long)]
    data_seed: Option<u64>,
}

#[derive(Clone, Copy, ValueEnum)]
enum ScalingArg {
    Unit,
    InvSqrtP,
}

#[derive(Args)]
struct RunArgs {
    /// CP rank for decomposing dense inputs.
    #[arg(long, default_value_t = 3)]
    rank: usize,
    #[arg(long, default_value_t = 1e-2)]
    lambda: f64,
    #[arg(long, default_value_t = 5)]
    b: usize,
    #[arg(long, default_value_t = 0.0, allow_negative_numbers = true)]
    gamma: f64,
    /// Target dims as a fraction of each mode dim.
    #[arg(long, default_value_t = 0.7, conflicts_with = "proj_dims")]
    proj_frac: f64,
    /// Explicit target dims, comma separated.
    #[arg(long, value_delimiter = ',')]
    proj_dims: Option<Vec<usize>>,
    /// `median`, one bandwidth, or one per mode (comma separated).
    #[arg(long, default_value = "median")]
    bandwidth: String,
    #[arg(long, value_enum, default_value_t = ScalingArg::InvSqrtP)]
    scaling: ScalingArg,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 100)]
    splits: usize,
    #[arg(long, default_value_t = 140)]
    train_size: usize,
    #[arg(long, default_value_t = 60)]
    test_size: usize,
    #[arg(long, default_value_t = 5)]
    folds: usize,
}

enum Failure {
    Usage(String),
    /// A failed run, with the configuration echoed for diagnosis.
    Run(TecError, Option<String>),
}

impl From<TecError> for Failure {
    fn from(e: TecError) -> Self {
        Failure::Run(e, None)
    }
}

fn echo(config: &RunConfig) -> impl FnOnce(TecError) -> Failure + '_ {
    move |e| Failure::Run(e, Some(serde_json::to_string(config).expect("config serializes")))
}

type CliResult<T> = Result<T, Failure>;

impl RunArgs {
    fn config(&self) -> CliResult<RunConfig> {
        let bandwidth = if self.bandwidth.eq_ignore_ascii_case("median") {
            Bandwidth::Median
        } else {
            let values = self
                .bandwidth
                .split(',')
                .map(|s| s.trim().parse::<f64>())
                .collect::<Result<Vec<_>, _>>()
                .map_err(|_| Failure::Usage(format!("bad --bandwidth {:?}", self.bandwidth)))?;
            Bandwidth::Fixed(values)
        };
        let config = RunConfig {
            rank: self.rank,
            lambda: self.lambda,
            b: self.b,
            gamma: self.gamma,
            target: match &self.proj_dims {
                Some(d) => TargetDims::Explicit(d.clone()),
                None => TargetDims::Fraction(self.proj_frac),
            },
            bandwidth,
            scaling: match self.scaling {
                ScalingArg::Unit => Scaling::UnitVariance,
                ScalingArg::InvSqrtP => Scaling::InvSqrtP,
            },
            seed: self.seed,
            splits: self.splits,
            train_size: self.train_size,
            test_size: self.test_size,
            folds: self.folds,
        };
        config.validate().map_err(|e| Failure::Usage(e.to_string()))?;
        Ok(config)
    }
}

impl DataSource {
    fn load(&self, default_seed: u64) -> CliResult<Dataset> {
        match (&self.data, self.model) {
            (Some(path), _) => Ok(io::read_dataset(path)?),
            (None, Some(model)) => Ok(generate(&SimModelSpec {
                model,
                samples_per_class: self.per_class,
                seed: self.data_seed.unwrap_or(default_seed),
            })?),
            (None, None) => Err(Failure::Usage("give a dataset archive or --model".into())),
        }
    }
}

fn parse_b_grid(text: &str) -> CliResult<Vec<usize>> {
    let bad = || Failure::Usage(format!("bad --b-grid {text:?}"));
    let values: Vec<usize> = if let Some((lo, hi)) = text.split_once("..") {
        let lo: usize = lo.trim().parse().map_err(|_| bad())?;
        let hi: usize = hi.trim().parse().map_err(|_| bad())?;
        (lo..=hi).collect()
    } else {
        text.split(',')
            .map(|s| s.trim().parse().map_err(|_| bad()))
            .collect::<CliResult<_>>()?
    };
    if values.is_empty() || values.contains(&0) {
        return Err(bad());
    }
    Ok(values)
}

fn gamma_grid(step: f64) -> CliResult<Vec<f64>> {
    if !(step > 0.0 && step <= 2.0) {
        return Err(Failure::Usage(format!("--gamma-step {step} not in (0, 2]")));
    }
    let count = (2.0 / step + 1e-9).floor() as i64;
    // Integer multiples keep grid points such as 0 exact.
    Ok((0..=count)
        .map(|i| -1.0 + i as f64 * step)
        .map(|g| (g * 1e12).round() / 1e12)
        .collect())
}

fn write_text(path: &Path, text: &str) -> CliResult<()> {
    std::fs::write(path, text).map_err(|source| {
        Failure::Run(
            TecError::Io {
                path: path.to_path_buf(),
                source,
            },
            None,
        )
    })
}

fn to_json<T: serde::Serialize>(value: &T) -> String {
    serde_json::to_string_pretty(value).expect("report serializes")
}

fn render_eval(r: &EvalReport) -> String {
    let mut s = String::new();
    let _ = writeln!(s, "splits      {}", r.split_errors.len());
    let _ = writeln!(s, "train/test  {}/{}", r.config.train_size, r.config.test_size);
    let _ = writeln!(s, "mean error  {:.2}%", r.mean_error);
    let _ = writeln!(s, "S.E.        {:.2}", r.std_error);
    let _ = writeln!(s, "wall        {:.2}s", r.wall_seconds);
    let t = &r.timings;
    let _ = writeln!(
        s,
        "phases      decompose {:.2}s  project+gram {:.2}s  solve {:.2}s  predict {:.2}s",
        t.decompose, t.project_gram, t.solve, t.predict
    );
    s
}

fn run(cli: Cli) -> CliResult<()> {
    match cli.command {
        Command::Gen {
            model,
            per_class,
            seed,
            out,
        } => {
            if per_class == 0 {
                return Err(Failure::Usage("--per-class must be at least 1".into()));
            }
            let ds = generate(&SimModelSpec {
                model,
                samples_per_class: per_class,
                seed,
            })?;
            io::write_dataset(&out, &ds)?;
            if cli.json {
                println!("{}", serde_json::json!({ "out": out, "samples": ds.len(), "model": model }));
            } else {
                println!("wrote {} {} samples to {}", ds.len(), model, out.display());
            }
        }
        Command::Train { data, out, run } => {
            let config = run.config()?;
            let ds = io::read_dataset(&data)?;
            let (model, meta, report) = harness::train(&ds, &config).map_err(echo(&config))?;
            io::write_model(&out, &model, &meta)?;
            if cli.json {
                println!("{}", to_json(&report));
            } else {
                println!("member  iterations  converged  objective     project+gram  solve");
                for (i, m) in report.members.iter().enumerate() {
                    println!(
                        "{i:>6}  {:>10}  {:>9}  {:<12.6e}  {:>11.3}s  {:>.3}s",
                        m.iterations, m.converged, m.objective, m.project_gram_seconds, m.solve_seconds
                    );
                }
                println!(
                    "trained on {} samples in {:.2}s (decompose {:.2}s); model written to {}",
                    report.n_train,
                    report.wall_seconds,
                    report.timings.decompose,
                    out.display()
                );
            }
        }
        Command::Predict { data, model, out } => {
            let (tec, meta) = io::read_model(&model)?;
            let ds = io::read_dataset(&data)?;
            let p = harness::predict(&tec, &meta, &ds)?;
            let mut lines = String::new();
            for (y, tau) in p.labels.iter().zip(&p.tau) {
                let _ = writeln!(lines, "{y} {tau}");
            }
            if let Some(path) = &out {
                write_text(path, &lines)?;
            }
            if cli.json {
                println!("{}", to_json(&p));
            } else {
                if out.is_none() {
                    print!("{lines}");
                }
                match p.error {
                    Some(e) => println!("error {e:.2}% on {} samples", p.labels.len()),
                    None => println!("predicted {} samples (no labels)", p.labels.len()),
                }
            }
        }
        Command::Benchmark { source, run, out } => {
            let config = run.config()?;
            let ds = source.load(config.seed)?;
            let report = harness::benchmark(&ds, &config).map_err(echo(&config))?;
            if let Some(path) = &out {
                write_text(path, &to_json(&report))?;
            }
            if cli.json {
                println!("{}", to_json(&report));
            } else {
                print!("{}", render_eval(&report));
            }
        }
        Command::Tune {
            source,
            run,
            b_grid,
            gamma_step,
            out,
        } => {
            let config = run.config()?;
            let grid = TuneGrid {
                b_values: parse_b_grid(&b_grid)?,
                gammas: gamma_grid(gamma_step)?,
            };
            let ds = source.load(config.seed)?;
            let report = harness::tune(&ds, &config, &grid).map_err(echo(&config))?;
            if let Some(path) = &out {
                write_text(path, &to_json(&report))?;
            }
            if cli.json {
                println!("{}", to_json(&report));
            } else {
                println!("stage 1 (gamma = 0)");
                for row in &report.stage1 {
                    println!("  b {:>3}  error {:>6.2}%", row.b, row.mean_error);
                }
                println!("stage 2 (b = {})", report.best_b);
                for row in &report.stage2 {
                    println!("  gamma {:>5.2}  error {:>6.2}%", row.gamma, row.mean_error);
                }
                println!("best b {}  gamma {}", report.best_b, report.best_gamma);
            }
        }
    }
    Ok(())
}

fn exit_code(e: &TecError) -> u8 {
    match e {
        TecError::InvalidArgument { .. } => 2,
        e if e.is_numeric() => 4,
        _ => 3,
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let pool = match rayon::ThreadPoolBuilder::new().num_threads(cli.threads).build() {
        Ok(pool) => pool,
        Err(e) => {
            eprintln!("tec: cannot start thread pool: {e}");
            return ExitCode::from(4);
        }
    };
    match pool.install(|| run(cli)) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Usage(msg)) => {
            eprintln!("tec: {msg}");
            ExitCode::from(2)
        }
        Err(Failure::Run(e, config)) => {
            eprintln!("tec: {e}");
            if let Some(config) = config {
                eprintln!("tec: config {config}");
            }
            ExitCode::from(exit_code(&e))
        }
    }
}
