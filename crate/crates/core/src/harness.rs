//! Monte Carlo experiments: simulate many paths, test each, aggregate.
//!
//! Paths are generated and tested in parallel, but every path owns its
//! random streams and the aggregation walks the outcomes in path order, so a
//! report depends only on the [`ExperimentSpec`].

use std::io::Write;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};

use crate::error::{Error, Result};
use crate::jumptest::{evaluate, CutoffStyle, NullHypothesis, TestConfig, TestResult};
use crate::simulate::{simulate_conditioned, JumpModel, PathSpec};
use crate::variation::switch_statistic;

pub const REPORT_SCHEMA_VERSION: u32 = 1;

/// Levels at which rejection rates are always reported.
pub const REPORTED_LEVELS: [f64; 2] = [0.10, 0.05];

/// Upper bound on automatically chosen histogram bins.
const MAX_AUTO_BINS: usize = 500;

fn default_nulls() -> Vec<NullHypothesis> {
    vec![NullHypothesis::NoJumps, NullHypothesis::Jumps]
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentSpec {
    /// Template for every path; its `seed` is the experiment's root seed.
    pub path: PathSpec,
    pub n_paths: usize,
    #[serde(default)]
    pub test: TestConfig,
    #[serde(default = "default_nulls")]
    pub nulls: Vec<NullHypothesis>,
    #[serde(default)]
    pub cutoff_style: CutoffStyle,
    /// Fixed bin count; Freedman–Diaconis when absent.
    #[serde(default)]
    pub histogram_bins: Option<usize>,
    #[serde(default)]
    pub keep_per_path: bool,
}

impl ExperimentSpec {
    pub fn new(
        path: PathSpec,
        n_paths: usize,
        test: TestConfig,
        nulls: Vec<NullHypothesis>,
    ) -> Self {
        Self {
            path,
            n_paths,
            test,
            nulls,
            cutoff_style: CutoffStyle::Gaussian,
            histogram_bins: None,
            keep_per_path: false,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_paths == 0 {
            return Err(Error::config("n_paths must be >= 1"));
        }
        if self.nulls.is_empty() {
            return Err(Error::config("at least one null hypothesis must be tested"));
        }
        if let Some(bins) = self.histogram_bins {
            if bins < 2 {
                return Err(Error::config("histogram_bins must be >= 2"));
            }
        }
        self.path.validate()?;
        for &null in &self.nulls {
            self.test.validate_for(null)?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Histogram {
    /// `counts.len() + 1` bin edges; empty when there were no finite values.
    pub edges: Vec<f64>,
    pub counts: Vec<u64>,
    /// Values left out because they were not finite.
    pub non_finite: usize,
}

impl Histogram {
    pub fn build(values: &[f64], bins: Option<usize>) -> Self {
        let mut finite: Vec<f64> = values.iter().copied().filter(|v| v.is_finite()).collect();
        let non_finite = values.len() - finite.len();
        if finite.is_empty() {
            return Self {
                edges: Vec::new(),
                counts: Vec::new(),
                non_finite,
            };
        }
        finite.sort_by(f64::total_cmp);
        let (mut lo, mut hi) = (finite[0], finite[finite.len() - 1]);
        if hi <= lo {
            lo -= 0.5;
            hi += 0.5;
        }
        let bins = bins.unwrap_or_else(|| freedman_diaconis_bins(&finite, lo, hi));
        let width = (hi - lo) / bins as f64;
        let edges: Vec<f64> = (0..=bins)
            .map(|i| if i == bins { hi } else { lo + i as f64 * width })
            .collect();
        let mut counts = vec![0u64; bins];
        for v in finite {
            let idx = (((v - lo) / width) as usize).min(bins - 1);
            counts[idx] += 1;
        }
        Self {
            edges,
            counts,
            non_finite,
        }
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }

    /// Count divided by total count times bin width; integrates to one.
    pub fn densities(&self) -> Vec<f64> {
        let total = self.total() as f64;
        self.counts
            .iter()
            .zip(self.edges.windows(2))
            .map(|(&c, e)| c as f64 / (total * (e[1] - e[0])))
            .collect()
    }

    pub fn write_csv<W: Write>(&self, out: W) -> std::io::Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["bin_left", "bin_right", "count", "density"])?;
        for ((e, c), d) in self
            .edges
            .windows(2)
            .zip(&self.counts)
            .zip(self.densities())
        {
            w.write_record([
                e[0].to_string(),
                e[1].to_string(),
                c.to_string(),
                d.to_string(),
            ])?;
        }
        w.flush()
    }
}

/// Linear-interpolation quantile of sorted data.
fn quantile_sorted(sorted: &[f64], q: f64) -> f64 {
    let pos = q * (sorted.len() - 1) as f64;
    let i = pos.floor() as usize;
    let frac = pos - i as f64;
    if i + 1 < sorted.len() {
        sorted[i] + frac * (sorted[i + 1] - sorted[i])
    } else {
        sorted[i]
    }
}

fn freedman_diaconis_bins(sorted: &[f64], lo: f64, hi: f64) -> usize {
    let n = sorted.len() as f64;
    let iqr = quantile_sorted(sorted, 0.75) - quantile_sorted(sorted, 0.25);
    let bins = if iqr > 0.0 {
        let h = 2.0 * iqr / n.cbrt();
        ((hi - lo) / h).ceil() as usize
    } else {
        // Sturges
        (n.log2().ceil() as usize) + 1
    };
    bins.clamp(2, MAX_AUTO_BINS)
}

/// Kolmogorov–Smirnov distance between the empirical law of `values` and
/// `N(0, 1)`. Infinite values are legitimate sample points.
pub fn ks_distance_normal(values: &[f64]) -> f64 {
    let mut xs: Vec<f64> = values.iter().copied().filter(|v| !v.is_nan()).collect();
    if xs.is_empty() {
        return f64::NAN;
    }
    xs.sort_by(f64::total_cmp);
    let normal = Normal::standard();
    let n = xs.len() as f64;
    xs.iter()
        .enumerate()
        .map(|(i, &x)| {
            let f = normal.cdf(x);
            (f - i as f64 / n).max((i as f64 + 1.0) / n - f)
        })
        .fold(0.0, f64::max)
}

/// Critical value of the KS distance at level `alpha` for `n` draws, from the
/// Kolmogorov limit with Stephens' finite-sample correction.
pub fn ks_critical_value(n: usize, alpha: f64) -> f64 {
    let c = (-(alpha / 2.0).ln() / 2.0).sqrt();
    let rn = (n as f64).sqrt();
    c / (rn + 0.12 + 0.11 / rn)
}

/// Rejection frequency and its Monte Carlo standard error.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Rate {
    pub level: f64,
    pub rate: f64,
    pub standard_error: f64,
}

impl Rate {
    fn new(level: f64, rejected: usize, evaluated: usize) -> Self {
        let (rate, standard_error) = if evaluated > 0 {
            let r = rejected as f64 / evaluated as f64;
            (r, (r * (1.0 - r) / evaluated as f64).sqrt())
        } else {
            (f64::NAN, f64::NAN)
        };
        Self {
            level,
            rate,
            standard_error,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NullReport {
    pub null: NullHypothesis,
    pub cutoff_style: CutoffStyle,
    /// Decisions at the configured level.
    pub level: f64,
    pub rejected: usize,
    pub accepted: usize,
    pub excluded: usize,
    pub rejection_rate: f64,
    pub rejection_rate_10: f64,
    pub rejection_rate_5: f64,
    /// Standard errors of the 10% and 5% rates.
    pub mc_standard_errors: [f64; 2],
    pub mean_standardized: f64,
    pub ks_distance: f64,
    pub ks_critical_1pct: f64,
    pub standardized_histogram: Histogram,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PathRecord {
    pub path: u64,
    pub attempts: u32,
    pub jump_count: Option<usize>,
    pub has_jump: bool,
    pub statistic: Option<f64>,
    pub results: Vec<TestResult>,
    pub errors: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentReport {
    pub schema_version: u32,
    pub n_paths: usize,
    /// Paths whose statistic could not be computed.
    pub n_excluded: usize,
    pub mean_statistic: f64,
    pub statistic_histogram: Histogram,
    /// Paths with no price jump (only meaningful for Poisson overlays and
    /// jump-free models).
    pub jump_free_paths: usize,
    pub mean_statistic_jump_free: Option<f64>,
    pub mean_statistic_with_jumps: Option<f64>,
    pub total_attempts: u64,
    pub tests: Vec<NullReport>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub per_path: Option<Vec<PathRecord>>,
}

impl ExperimentReport {
    pub fn null(&self, null: NullHypothesis) -> Option<&NullReport> {
        self.tests.iter().find(|t| t.null == null)
    }

    /// Statistics of the evaluated paths, in path order. Needs `per_path`.
    pub fn statistics(&self) -> Vec<f64> {
        self.per_path
            .iter()
            .flatten()
            .filter_map(|r| r.statistic)
            .collect()
    }
}

struct PathOutcome {
    record: PathRecord,
    /// Per tested null: (statistic, standardized, reject at each reported
    /// level, reject at configured level), or the error.
    decisions: Vec<std::result::Result<Decisions, String>>,
}

struct Decisions {
    standardized: f64,
    reported: [bool; 2],
    reject: bool,
}

fn run_path(spec: &ExperimentSpec, path: u64) -> Result<PathOutcome> {
    let sim = simulate_conditioned(&spec.path, spec.path.seed, path)?;
    let jump_free = match spec.path.jumps {
        Some(JumpModel::Cauchy(c)) => c.theta == 0.0,
        _ => !sim.has_jump(),
    };
    let mut record = PathRecord {
        path,
        attempts: sim.attempts,
        jump_count: sim.jump_count,
        has_jump: !jump_free,
        statistic: None,
        results: Vec::new(),
        errors: Vec::new(),
    };
    let mut decisions = Vec::with_capacity(spec.nulls.len());
    match switch_statistic(&sim.series, spec.test.p, spec.test.k) {
        Ok(s) => record.statistic = Some(s),
        Err(e) if e.is_path_level() => {
            record.errors.push(e.to_string());
            return Ok(PathOutcome { record, decisions });
        }
        Err(e) => return Err(e),
    }
    for &null in &spec.nulls {
        match evaluate(&sim.series, &spec.test, null) {
            Ok(eval) => {
                let result = eval.decide(spec.test.level, spec.cutoff_style)?;
                let mut reported = [false; 2];
                for (flag, &level) in reported.iter_mut().zip(&REPORTED_LEVELS) {
                    *flag = eval.rejects(eval.cutoff(level, spec.cutoff_style)?);
                }
                decisions.push(Ok(Decisions {
                    standardized: result.standardized,
                    reported,
                    reject: result.reject,
                }));
                record.results.push(result);
            }
            Err(e) if e.is_path_level() => {
                record.errors.push(format!("{null}: {e}"));
                decisions.push(Err(e.to_string()));
            }
            Err(e) => return Err(e),
        }
    }
    Ok(PathOutcome { record, decisions })
}

fn mean(values: impl IntoIterator<Item = f64>) -> Option<f64> {
    let (sum, n) = values
        .into_iter()
        .fold((0.0, 0usize), |(s, n), v| (s + v, n + 1));
    (n > 0).then(|| sum / n as f64)
}

fn aggregate(spec: &ExperimentSpec, outcomes: Vec<PathOutcome>) -> ExperimentReport {
    let statistics: Vec<f64> = outcomes.iter().filter_map(|o| o.record.statistic).collect();
    let n_excluded = outcomes.len() - statistics.len();
    let jump_free_paths = outcomes.iter().filter(|o| !o.record.has_jump).count();
    let by_jump = |jumped: bool| {
        mean(
            outcomes
                .iter()
                .filter(|o| o.record.has_jump == jumped)
                .filter_map(|o| o.record.statistic),
        )
    };

    let tests = spec
        .nulls
        .iter()
        .enumerate()
        .map(|(idx, &null)| {
            let mut standardized = Vec::new();
            let (mut rejected, mut accepted, mut excluded) = (0, 0, 0);
            let mut reported = [0usize; 2];
            for o in &outcomes {
                match o.decisions.get(idx) {
                    Some(Ok(d)) => {
                        standardized.push(d.standardized);
                        if d.reject {
                            rejected += 1;
                        } else {
                            accepted += 1;
                        }
                        for (count, &flag) in reported.iter_mut().zip(&d.reported) {
                            *count += flag as usize;
                        }
                    }
                    _ => excluded += 1,
                }
            }
            let evaluated = rejected + accepted;
            let rate_10 = Rate::new(REPORTED_LEVELS[0], reported[0], evaluated);
            let rate_5 = Rate::new(REPORTED_LEVELS[1], reported[1], evaluated);
            NullReport {
                null,
                cutoff_style: spec.cutoff_style,
                level: spec.test.level,
                rejected,
                accepted,
                excluded,
                rejection_rate: Rate::new(spec.test.level, rejected, evaluated).rate,
                rejection_rate_10: rate_10.rate,
                rejection_rate_5: rate_5.rate,
                mc_standard_errors: [rate_10.standard_error, rate_5.standard_error],
                mean_standardized: mean(standardized.iter().copied().filter(|v| v.is_finite()))
                    .unwrap_or(f64::NAN),
                ks_distance: ks_distance_normal(&standardized),
                ks_critical_1pct: ks_critical_value(evaluated, 0.01),
                standardized_histogram: Histogram::build(&standardized, spec.histogram_bins),
            }
        })
        .collect();

    ExperimentReport {
        schema_version: REPORT_SCHEMA_VERSION,
        n_paths: outcomes.len(),
        n_excluded,
        mean_statistic: mean(statistics.iter().copied()).unwrap_or(f64::NAN),
        statistic_histogram: Histogram::build(&statistics, spec.histogram_bins),
        jump_free_paths,
        mean_statistic_jump_free: by_jump(false),
        mean_statistic_with_jumps: by_jump(true),
        total_attempts: outcomes.iter().map(|o| o.record.attempts as u64).sum(),
        tests,
        per_path: spec
            .keep_per_path
            .then(|| outcomes.into_iter().map(|o| o.record).collect()),
    }
}

/// Runs the experiment on the global rayon pool.
pub fn run_experiment(spec: &ExperimentSpec) -> Result<ExperimentReport> {
    spec.validate()?;
    let outcomes = (0..spec.n_paths as u64)
        .into_par_iter()
        .map(|path| run_path(spec, path))
        .collect::<Result<Vec<_>>>()?;
    Ok(aggregate(spec, outcomes))
}

/// Runs the experiment on a dedicated pool of `threads` workers.
pub fn run_experiment_with_threads(
    spec: &ExperimentSpec,
    threads: usize,
) -> Result<ExperimentReport> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build()
        .map_err(|e| Error::config(format!("thread pool: {e}")))?;
    pool.install(|| run_experiment(spec))
}

/// Same pipeline with jump conditioning switched off, so paths without jumps
/// stay in the sample.
pub fn run_bimodal_study(spec: &ExperimentSpec) -> Result<ExperimentReport> {
    let mut unconditioned = spec.clone();
    if let Some(JumpModel::Poisson(p)) = unconditioned.path.jumps.as_mut() {
        p.condition_on_jump = false;
    }
    run_experiment(&unconditioned)
}

fn sibling(target: &Path, suffix: &str) -> PathBuf {
    let stem = target
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "histogram".into());
    target.with_file_name(format!("{stem}{suffix}"))
}

fn write_file(
    path: &Path,
    f: impl FnOnce(&mut std::io::BufWriter<std::fs::File>) -> std::io::Result<()>,
) -> Result<()> {
    let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = std::io::BufWriter::new(file);
    f(&mut w)
        .and_then(|_| w.flush())
        .map_err(|e| Error::io(path, e))
}

/// Writes the statistic histogram to `target` as CSV, one standardized
/// histogram per tested null next to it (`<stem>.<null>.standardized.csv`),
/// and a JSON summary sidecar (`<stem>.json`). Returns the written paths.
pub fn emit_histogram(report: &ExperimentReport, target: &Path) -> Result<Vec<PathBuf>> {
    let mut written = Vec::new();
    write_file(target, |w| report.statistic_histogram.write_csv(w))?;
    written.push(target.to_path_buf());
    for t in &report.tests {
        let path = sibling(target, &format!(".{}.standardized.csv", t.null));
        write_file(&path, |w| t.standardized_histogram.write_csv(w))?;
        written.push(path);
    }
    let sidecar = sibling(target, ".json");
    let mut summary = report.clone();
    summary.per_path = None;
    write_file(&sidecar, |w| {
        serde_json::to_writer_pretty(&mut *w, &summary).map_err(std::io::Error::other)?;
        writeln!(w)
    })?;
    written.push(sidecar);
    Ok(written)
}
