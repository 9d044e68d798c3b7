use std::io::Write;
use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{bail, Context};
use chrono::NaiveTime;
use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;

use jumpstat::harness::{
    emit_histogram, run_bimodal_study, run_experiment_with_threads, ExperimentSpec,
};
use jumpstat::ingest::{
    clean_ticks, load_ticks, resample_previous_tick, CleanOptions, LoadOptions, Rejection,
    SessionSpec,
};
use jumpstat::jumptest::{evaluate, CutoffStyle, NullHypothesis, TestConfig, VarianceEstimator};
use jumpstat::moments::{gaussian_abs_moment, gaussian_cross_moment, variance_scale_m};
use jumpstat::simulate::{simulate_path, PathSpec};
use jumpstat::variation::{Calendar, TimeUnit};
use jumpstat::{Error, IncrementSeries};

const OUTPUT_SCHEMA_VERSION: u32 = 1;

/// Test for jumps in high-frequency prices by comparing realized power
/// variations at two sampling frequencies.
#[derive(Debug, Parser)]
#[command(name = "jumpstat", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Run the jump tests on a tick file or a simulated path; prints JSON.
    Test(TestArgs),
    /// Simulate one path and write `time,price,jump_flag` CSV.
    Simulate(SimulateArgs),
    /// Run a Monte Carlo experiment described by a TOML file; prints the report JSON.
    Experiment(ExperimentArgs),
    /// Print the Gaussian moment constants for (p, k).
    Moments(MomentArgs),
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum NullArg {
    #[value(name = "no_jumps", alias = "no-jumps")]
    NoJumps,
    Jumps,
    Both,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum UnitArg {
    Years,
    Days,
    Seconds,
}

impl From<UnitArg> for TimeUnit {
    fn from(u: UnitArg) -> Self {
        match u {
            UnitArg::Years => TimeUnit::Years,
            UnitArg::Days => TimeUnit::Days,
            UnitArg::Seconds => TimeUnit::Seconds,
        }
    }
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum EstimatorArg {
    Truncated,
    Multipower,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum CutoffArg {
    Gaussian,
    Chebyshev,
}

#[derive(Debug, Args)]
struct TestOptions {
    /// Power p of the variations (the tests need p > 3).
    #[arg(long, default_value_t = 4.0)]
    p: f64,
    /// Ratio k between the coarse and fine sampling intervals.
    #[arg(long, default_value_t = 2)]
    k: usize,
    /// Significance level.
    #[arg(long, default_value_t = 0.05)]
    level: f64,
    /// Truncation level alpha in alpha * delta^varpi; estimated from the data when omitted.
    #[arg(long)]
    alpha: Option<f64>,
    /// Multiple of the estimated volatility used when alpha is estimated.
    #[arg(long, default_value_t = 5.0)]
    sigma_multiple: f64,
    /// Truncation exponent varpi.
    #[arg(long, default_value_t = 0.47)]
    varpi: f64,
    /// Local window half-width k_n, or `auto` for ceil(50 delta^{-1/4}).
    #[arg(long, default_value = "auto")]
    window: String,
    /// Time unit in which the automatic window rule reads delta.
    #[arg(long, value_enum, default_value = "days")]
    window_unit: UnitArg,
    /// Variance estimator under the no-jump null.
    #[arg(long, value_enum, default_value = "truncated")]
    variance_estimator: EstimatorArg,
    /// Cut-off rule under the jump null.
    #[arg(long, value_enum, default_value = "gaussian")]
    cutoff_style: CutoffArg,
    /// Null hypothesis to test.
    #[arg(long, value_enum, default_value = "both")]
    null: NullArg,
}

#[derive(Debug, Args)]
struct TestArgs {
    /// Tick CSV with header `timestamp,price`.
    #[arg(
        long,
        conflicts_with = "simulate",
        required_unless_present = "simulate"
    )]
    input: Option<PathBuf>,
    /// Path specification (TOML) to simulate instead of reading a file.
    #[arg(long)]
    simulate: Option<PathBuf>,
    /// Calendar-time sampling interval in seconds.
    #[arg(long, default_value_t = 5)]
    sample_seconds: u32,
    /// Session open (HH:MM[:SS]).
    #[arg(long, default_value = "09:30")]
    open: String,
    /// Session close (HH:MM[:SS]).
    #[arg(long, default_value = "16:00")]
    close: String,
    /// Unit of the sampling interval for file input.
    #[arg(long, value_enum, default_value = "years")]
    time_unit: UnitArg,
    /// Outlier multiple of the median absolute log-return used by cleaning.
    #[arg(long, default_value_t = 10.0)]
    outlier_multiple: f64,
    /// Largest tolerated fraction of unparseable rows.
    #[arg(long, default_value_t = 0.01)]
    max_malformed_fraction: f64,
    /// Seed override for simulated input.
    #[arg(long)]
    seed: Option<u64>,
    #[command(flatten)]
    options: TestOptions,
}

#[derive(Debug, Args)]
struct SimulateArgs {
    /// Path specification (TOML).
    #[arg(long)]
    spec: PathBuf,
    /// Output CSV; stdout when omitted.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Debug, Args)]
struct ExperimentArgs {
    /// Experiment specification (TOML).
    #[arg(long)]
    spec: PathBuf,
    /// Write the report JSON here instead of stdout.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Write histogram CSVs and a JSON summary next to this CSV path.
    #[arg(long)]
    histogram: Option<PathBuf>,
    /// Root seed override.
    #[arg(long)]
    seed: Option<u64>,
    /// Number of paths override.
    #[arg(long)]
    n_paths: Option<usize>,
    /// Worker threads (default: all cores). Results do not depend on it.
    #[arg(long)]
    threads: Option<usize>,
    /// Keep paths without jumps (disables jump conditioning).
    #[arg(long)]
    bimodal: bool,
    /// Include every path's results in the report.
    #[arg(long)]
    per_path: bool,
}

#[derive(Debug, Args)]
struct MomentArgs {
    #[arg(long, default_value_t = 4.0)]
    p: f64,
    #[arg(long, default_value_t = 2)]
    k: u32,
    /// Print JSON instead of a table.
    #[arg(long)]
    json: bool,
}

fn parse_time(raw: &str) -> anyhow::Result<NaiveTime> {
    NaiveTime::parse_from_str(raw, "%H:%M:%S")
        .or_else(|_| NaiveTime::parse_from_str(raw, "%H:%M"))
        .map_err(|_| Error::Config(format!("invalid time of day `{raw}`")).into())
}

impl TestOptions {
    fn config(&self, series_unit: TimeUnit) -> anyhow::Result<TestConfig> {
        let window_kn = match self.window.as_str() {
            "auto" => None,
            n => Some(
                n.parse()
                    .map_err(|_| Error::Config(format!("invalid --window `{n}`")))?,
            ),
        };
        Ok(TestConfig {
            p: self.p,
            k: self.k,
            level: self.level,
            alpha: self.alpha,
            sigma_multiple: self.sigma_multiple,
            varpi: self.varpi,
            window_kn,
            variance_estimator: match self.variance_estimator {
                EstimatorArg::Truncated => VarianceEstimator::Truncated,
                EstimatorArg::Multipower => VarianceEstimator::Multipower,
            },
            series_unit,
            window_unit: self.window_unit.into(),
            calendar: Calendar::default(),
        })
    }

    fn nulls(&self) -> Vec<NullHypothesis> {
        match self.null {
            NullArg::NoJumps => vec![NullHypothesis::NoJumps],
            NullArg::Jumps => vec![NullHypothesis::Jumps],
            NullArg::Both => vec![NullHypothesis::NoJumps, NullHypothesis::Jumps],
        }
    }

    fn cutoff_style(&self) -> CutoffStyle {
        match self.cutoff_style {
            CutoffArg::Gaussian => CutoffStyle::Gaussian,
            CutoffArg::Chebyshev => CutoffStyle::Chebyshev,
        }
    }
}

#[derive(Serialize)]
struct Source {
    kind: &'static str,
    path: PathBuf,
    time_unit: TimeUnit,
    delta: f64,
    n_increments: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    ticks_loaded: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    ticks_used: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    reordered_rows: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    malformed_rows: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    skipped_grid_points: Option<usize>,
    #[serde(skip_serializing_if = "Vec::is_empty")]
    rejections: Vec<Rejection>,
    #[serde(skip_serializing_if = "Option::is_none")]
    seed: Option<u64>,
}

#[derive(Serialize)]
struct TestOutput {
    schema_version: u32,
    source: Source,
    truncation_alpha: f64,
    varpi: f64,
    window_kn: usize,
    results: Vec<jumpstat::TestResult>,
}

fn read_toml<T: serde::de::DeserializeOwned>(path: &PathBuf) -> anyhow::Result<T> {
    let text =
        std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    toml::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())).into())
}

fn load_series(args: &TestArgs) -> anyhow::Result<(IncrementSeries, Source, TimeUnit)> {
    if let Some(spec_path) = &args.simulate {
        let mut spec: PathSpec = read_toml(spec_path)?;
        if let Some(seed) = args.seed {
            spec.seed = seed;
        }
        let sim = simulate_path(&spec)?;
        let source = Source {
            kind: "simulated",
            path: spec_path.clone(),
            time_unit: TimeUnit::Years,
            delta: sim.series.delta(),
            n_increments: sim.series.len(),
            ticks_loaded: None,
            ticks_used: None,
            reordered_rows: None,
            malformed_rows: None,
            skipped_grid_points: None,
            rejections: Vec::new(),
            seed: Some(spec.seed),
        };
        return Ok((sim.series, source, TimeUnit::Years));
    }
    let input = args
        .input
        .as_ref()
        .expect("clap enforces --input or --simulate");
    let session = SessionSpec {
        open: parse_time(&args.open)?,
        close: parse_time(&args.close)?,
        sample_seconds: args.sample_seconds,
    };
    let loaded = load_ticks(
        input,
        &LoadOptions {
            max_malformed_fraction: args.max_malformed_fraction,
        },
    )?;
    let (ticks, mut log) = clean_ticks(
        &loaded.ticks,
        &CleanOptions {
            outlier_multiple: args.outlier_multiple,
        },
    );
    let mut rejections = loaded.rejected.clone();
    rejections.append(&mut log);
    let unit: TimeUnit = args.time_unit.into();
    let resampled = resample_previous_tick(&ticks, &session, unit, &Calendar::default())?;
    let source = Source {
        kind: "ticks",
        path: input.clone(),
        time_unit: unit,
        delta: resampled.series.delta(),
        n_increments: resampled.series.len(),
        ticks_loaded: Some(loaded.ticks.len() + loaded.rejected.len()),
        ticks_used: Some(ticks.len()),
        reordered_rows: Some(loaded.reordered),
        malformed_rows: Some(loaded.malformed.len()),
        skipped_grid_points: Some(resampled.skipped_grid_points),
        rejections,
        seed: None,
    };
    Ok((resampled.series, source, unit))
}

fn cmd_test(args: &TestArgs, out: &mut dyn Write) -> anyhow::Result<()> {
    let (series, source, unit) = load_series(args)?;
    let cfg = args.options.config(unit)?;
    let nulls = args.options.nulls();
    for &null in &nulls {
        cfg.validate_for(null)?;
    }
    let rule = cfg.truncation_rule(&series)?;
    let mut results = Vec::new();
    for null in nulls {
        let eval = evaluate(&series, &cfg, null)?;
        results.push(eval.decide(cfg.level, args.options.cutoff_style())?);
    }
    let output = TestOutput {
        schema_version: OUTPUT_SCHEMA_VERSION,
        source,
        truncation_alpha: rule.alpha,
        varpi: rule.varpi,
        window_kn: cfg.window_for(&series),
        results,
    };
    serde_json::to_writer_pretty(&mut *out, &output)?;
    writeln!(out)?;
    Ok(())
}

fn cmd_simulate(args: &SimulateArgs, out: &mut dyn Write) -> anyhow::Result<()> {
    let mut spec: PathSpec = read_toml(&args.spec)?;
    if let Some(seed) = args.seed {
        spec.seed = seed;
    }
    let path = simulate_path(&spec)?;
    match &args.out {
        Some(target) => path.write_csv_file(&spec.calendar, target)?,
        None => path.write_csv(&spec.calendar, out)?,
    }
    Ok(())
}

fn cmd_experiment(args: &ExperimentArgs, out: &mut dyn Write) -> anyhow::Result<()> {
    let mut spec: ExperimentSpec = read_toml(&args.spec)?;
    if let Some(seed) = args.seed {
        spec.path.seed = seed;
    }
    if let Some(n) = args.n_paths {
        spec.n_paths = n;
    }
    spec.keep_per_path |= args.per_path;
    let threads = args.threads.unwrap_or_else(|| {
        std::thread::available_parallelism()
            .map(|n| n.get())
            .unwrap_or(1)
    });
    let report = if args.bimodal {
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build()?;
        pool.install(|| run_bimodal_study(&spec))?
    } else {
        run_experiment_with_threads(&spec, threads)?
    };
    if let Some(target) = &args.histogram {
        emit_histogram(&report, target)?;
    }
    match &args.out {
        Some(path) => {
            let file = std::fs::File::create(path)
                .with_context(|| format!("creating {}", path.display()))?;
            serde_json::to_writer_pretty(file, &report)?;
        }
        None => {
            serde_json::to_writer_pretty(&mut *out, &report)?;
            writeln!(out)?;
        }
    }
    Ok(())
}

#[derive(Serialize)]
struct MomentTable {
    p: f64,
    k: u32,
    m_p: f64,
    m_2p: f64,
    m_kp: f64,
    variance_scale: f64,
}

fn cmd_moments(args: &MomentArgs, out: &mut dyn Write) -> anyhow::Result<()> {
    if args.k < 2 {
        bail!(Error::Config(format!("k must be >= 2, got {}", args.k)));
    }
    let table = MomentTable {
        p: args.p,
        k: args.k,
        m_p: gaussian_abs_moment(args.p)?,
        m_2p: gaussian_abs_moment(2.0 * args.p)?,
        m_kp: gaussian_cross_moment(args.k, args.p)?,
        variance_scale: variance_scale_m(args.p, args.k)?,
    };
    if args.json {
        serde_json::to_writer_pretty(&mut *out, &table)?;
        writeln!(out)?;
    } else {
        let (p, k) = (args.p, args.k);
        writeln!(out, "m_{p} = {}", table.m_p)?;
        writeln!(out, "m_{} = {}", 2.0 * p, table.m_2p)?;
        writeln!(out, "m_{{{k},{p}}} = {}", table.m_kp)?;
        writeln!(out, "M({p},{k}) = {}", table.variance_scale)?;
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let stdout = std::io::stdout();
    let mut out = stdout.lock();
    let result = match &cli.command {
        Command::Test(a) => cmd_test(a, &mut out),
        Command::Simulate(a) => cmd_simulate(a, &mut out),
        Command::Experiment(a) => cmd_experiment(a, &mut out),
        Command::Moments(a) => cmd_moments(a, &mut out),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            let config = matches!(e.downcast_ref::<Error>(), Some(Error::Config(_)));
            ExitCode::from(if config { 2 } else { 1 })
        }
    }
}
