//! Data-generating processes for Monte Carlo studies.
//!
//! The log-price follows a Heston-type stochastic volatility diffusion,
//! `d log X = -v/2 dt + sqrt(v) dW`, `dv = kappa (beta - v) dt + gamma sqrt(v) dB`,
//! `corr(dW, dB) = rho`, discretized by full-truncation Euler with
//! `substeps` steps per observation interval. On top of it the simulator can
//! add compound Poisson or Cauchy jumps in the price, proportional
//! compound Poisson jumps in the variance, and i.i.d. additive noise at the
//! observation times.
//!
//! Model rates are per year; intensities are given per day and converted
//! through the [`Calendar`].
//!
//! Each random ingredient draws from its own ChaCha stream keyed by
//! `(seed, path, attempt)`, so switching one ingredient off leaves the others
//! bit-for-bit unchanged, and path `i` of an experiment is the same whatever
//! order or thread it is generated on.

use std::io::Write;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Cauchy, Distribution, Exp, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::variation::{grid_cells, Calendar, IncrementSeries, TimeUnit};

/// Cap on regenerations when conditioning a path on containing a jump.
const MAX_CONDITIONING_ATTEMPTS: u32 = 10_000;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SvParams {
    /// Long-run variance, per year.
    pub beta: f64,
    /// Volatility of variance.
    pub gamma: f64,
    /// Mean-reversion speed, per year.
    pub kappa: f64,
    pub rho: f64,
    /// Initial variance; defaults to `beta`.
    #[serde(default)]
    pub v0: Option<f64>,
}

impl SvParams {
    /// Annualized parameters of a liquid stock: `beta^{1/2} = 0.4`,
    /// `gamma = 0.5`, `kappa = 5`, `rho = -0.5`.
    pub fn liquid_stock() -> Self {
        Self {
            beta: 0.16,
            gamma: 0.5,
            kappa: 5.0,
            rho: -0.5,
            v0: None,
        }
    }

    pub fn with_long_run_vol(mut self, vol: f64) -> Self {
        self.beta = vol * vol;
        self
    }

    pub fn initial_variance(&self) -> f64 {
        self.v0.unwrap_or(self.beta)
    }

    fn validate(&self) -> Result<()> {
        if !(self.beta > 0.0) {
            return Err(Error::config(format!(
                "beta must be > 0, got {}",
                self.beta
            )));
        }
        if !(self.gamma >= 0.0) {
            return Err(Error::config(format!(
                "gamma must be >= 0, got {}",
                self.gamma
            )));
        }
        if !(self.kappa > 0.0) {
            return Err(Error::config(format!(
                "kappa must be > 0, got {}",
                self.kappa
            )));
        }
        if !(self.rho.abs() <= 1.0) {
            return Err(Error::config(format!(
                "rho must be in [-1, 1], got {}",
                self.rho
            )));
        }
        if !(self.initial_variance() > 0.0) {
            return Err(Error::config("initial variance must be > 0"));
        }
        Ok(())
    }
}

/// Compound Poisson price jumps of size `jump_scale * U`, `U` uniform on
/// `[-2, -1] ∪ [1, 2]`, so `E J^2 = 7/3 jump_scale^2`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PoissonJumpParams {
    /// Jumps per day.
    pub lambda: f64,
    pub jump_scale: f64,
    /// Regenerate paths that contain no jump.
    #[serde(default)]
    pub condition_on_jump: bool,
}

impl PoissonJumpParams {
    /// Jump scale such that the jumps contribute `jump_share` of an annual
    /// total variance `total_variance`: `(7/3) J_S^2 lambda = share * total`.
    pub fn from_variance_budget(
        total_variance: f64,
        jump_share: f64,
        lambda_per_day: f64,
        calendar: &Calendar,
    ) -> Self {
        let lambda_per_year = lambda_per_day * calendar.days_per_year;
        let jump_scale = if lambda_per_year > 0.0 {
            (jump_share * total_variance * 3.0 / (7.0 * lambda_per_year)).sqrt()
        } else {
            0.0
        };
        Self {
            lambda: lambda_per_day,
            jump_scale,
            condition_on_jump: false,
        }
    }

    pub fn conditioned(mut self) -> Self {
        self.condition_on_jump = true;
        self
    }

    fn validate(&self) -> Result<()> {
        if !(self.lambda >= 0.0) || !(self.jump_scale >= 0.0) {
            return Err(Error::config("Poisson lambda and jump_scale must be >= 0"));
        }
        Ok(())
    }
}

/// `theta * Y` with `Y` a Cauchy process, `E exp(iuY_t) = exp(-t|u|/2)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CauchyParams {
    pub theta: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum JumpModel {
    Poisson(PoissonJumpParams),
    Cauchy(CauchyParams),
}

/// Proportional compound Poisson jumps in the variance, `v -> v (1 + J)`,
/// `J` uniform on `[-max_relative, max_relative]`, independent of the price
/// jumps.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VolJumpParams {
    /// Jumps per day.
    pub intensity: f64,
    #[serde(default = "default_max_relative")]
    pub max_relative: f64,
}

fn default_max_relative() -> f64 {
    0.30
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NoiseParams {
    /// Standard deviation of the additive log-price noise.
    pub std_dev: f64,
}

/// Observation grid: either a number of trading days sampled every
/// `sample_seconds`, or an explicit horizon and interval in years.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Grid {
    Intraday { days: f64, sample_seconds: f64 },
    Explicit { horizon_t: f64, delta: f64 },
}

impl Grid {
    /// `(horizon_t, delta)` in years.
    pub fn horizon_and_delta(&self, calendar: &Calendar) -> (f64, f64) {
        match *self {
            Grid::Intraday {
                days,
                sample_seconds,
            } => (
                calendar.convert(days, TimeUnit::Days, TimeUnit::Years),
                calendar.convert(sample_seconds, TimeUnit::Seconds, TimeUnit::Years),
            ),
            Grid::Explicit { horizon_t, delta } => (horizon_t, delta),
        }
    }
}

fn default_substeps() -> usize {
    10
}

fn default_initial_price() -> f64 {
    100.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PathSpec {
    pub sv: SvParams,
    #[serde(default)]
    pub jumps: Option<JumpModel>,
    #[serde(default)]
    pub vol_jumps: Option<VolJumpParams>,
    #[serde(default)]
    pub noise: Option<NoiseParams>,
    pub grid: Grid,
    #[serde(default)]
    pub seed: u64,
    /// Euler steps per observation interval.
    #[serde(default = "default_substeps")]
    pub substeps: usize,
    #[serde(default = "default_initial_price")]
    pub initial_price: f64,
    #[serde(default)]
    pub calendar: Calendar,
}

impl PathSpec {
    /// One trading day sampled every `sample_seconds` under `sv`.
    pub fn intraday(sv: SvParams, sample_seconds: f64) -> Self {
        Self {
            sv,
            jumps: None,
            vol_jumps: None,
            noise: None,
            grid: Grid::Intraday {
                days: 1.0,
                sample_seconds,
            },
            seed: 0,
            substeps: default_substeps(),
            initial_price: default_initial_price(),
            calendar: Calendar::default(),
        }
    }

    pub fn with_jumps(mut self, jumps: JumpModel) -> Self {
        self.jumps = Some(jumps);
        self
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn horizon_and_delta(&self) -> (f64, f64) {
        self.grid.horizon_and_delta(&self.calendar)
    }

    pub fn n_observations(&self) -> usize {
        let (t, delta) = self.horizon_and_delta();
        grid_cells(t, delta)
    }

    pub fn conditions_on_jump(&self) -> bool {
        matches!(
            self.jumps,
            Some(JumpModel::Poisson(PoissonJumpParams {
                condition_on_jump: true,
                ..
            }))
        )
    }

    pub fn validate(&self) -> Result<()> {
        self.sv.validate()?;
        let (t, delta) = self.horizon_and_delta();
        if !(t > 0.0) || !t.is_finite() || !(delta > 0.0) || !delta.is_finite() {
            return Err(Error::config("horizon and sampling interval must be > 0"));
        }
        if grid_cells(t, delta) == 0 {
            return Err(Error::config("sampling interval exceeds the horizon"));
        }
        if self.substeps == 0 {
            return Err(Error::config("substeps must be >= 1"));
        }
        if !(self.initial_price > 0.0) {
            return Err(Error::config("initial_price must be > 0"));
        }
        match self.jumps {
            Some(JumpModel::Poisson(p)) => {
                p.validate()?;
                if p.condition_on_jump && !(p.lambda > 0.0 && p.jump_scale > 0.0) {
                    return Err(Error::config(
                        "condition_on_jump needs lambda > 0 and jump_scale > 0",
                    ));
                }
            }
            Some(JumpModel::Cauchy(c)) if !(c.theta >= 0.0) => {
                return Err(Error::config("Cauchy theta must be >= 0"));
            }
            _ => {}
        }
        if let Some(vj) = self.vol_jumps {
            if !(vj.intensity >= 0.0) || !(vj.max_relative >= 0.0 && vj.max_relative < 1.0) {
                return Err(Error::config(
                    "vol-jump intensity must be >= 0 and max_relative in [0, 1)",
                ));
            }
        }
        if let Some(noise) = self.noise {
            if !(noise.std_dev >= 0.0) {
                return Err(Error::config("noise std_dev must be >= 0"));
            }
        }
        Ok(())
    }
}

/// Identifies the random streams of one simulated path.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct StreamKey {
    pub seed: u64,
    pub path: u64,
    pub attempt: u32,
}

impl StreamKey {
    pub fn new(seed: u64, path: u64) -> Self {
        Self {
            seed,
            path,
            attempt: 0,
        }
    }

    pub fn rng(&self, stream: Stream) -> ChaCha8Rng {
        let mut key = [0u8; 32];
        key[..8].copy_from_slice(&self.seed.to_le_bytes());
        key[8..16].copy_from_slice(&self.path.to_le_bytes());
        key[16..20].copy_from_slice(&self.attempt.to_le_bytes());
        key[24..32].copy_from_slice(b"jumpstat");
        let mut rng = ChaCha8Rng::from_seed(key);
        rng.set_stream(stream as u64);
        rng
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stream {
    Diffusion = 0,
    PriceJumps = 1,
    VolJumps = 2,
    Noise = 3,
}

/// A pair of standard normals with correlation `rho`.
pub fn correlated_normals<R: Rng + ?Sized>(rng: &mut R, rho: f64) -> (f64, f64) {
    let z1: f64 = rng.sample(StandardNormal);
    let z2: f64 = rng.sample(StandardNormal);
    (z1, rho * z1 + (1.0 - rho * rho).max(0.0).sqrt() * z2)
}

/// Arrival times of a Poisson process with rate `rate` on `[0, horizon]`.
pub fn poisson_arrivals<R: Rng + ?Sized>(rng: &mut R, rate: f64, horizon: f64) -> Vec<f64> {
    let mut times = Vec::new();
    if !(rate > 0.0) {
        return times;
    }
    let exp = Exp::new(rate).expect("positive rate");
    let mut t = exp.sample(rng);
    while t <= horizon {
        times.push(t);
        t += exp.sample(rng);
    }
    times
}

/// `jump_scale * U`, `U` uniform on `[-2, -1] ∪ [1, 2]`.
fn poisson_jump_size<R: Rng + ?Sized>(rng: &mut R, jump_scale: f64) -> f64 {
    let magnitude = 1.0 + rng.random::<f64>();
    if rng.random::<bool>() {
        jump_scale * magnitude
    } else {
        -jump_scale * magnitude
    }
}

/// Price jumps (time, size) of the compound Poisson overlay on `[0, horizon]`.
fn poisson_jumps(
    params: &PoissonJumpParams,
    calendar: &Calendar,
    horizon: f64,
    key: &StreamKey,
) -> Vec<(f64, f64)> {
    let mut rng = key.rng(Stream::PriceJumps);
    let rate = params.lambda * calendar.days_per_year;
    let times = poisson_arrivals(&mut rng, rate, horizon);
    times
        .into_iter()
        .map(|t| (t, poisson_jump_size(&mut rng, params.jump_scale)))
        .collect()
}

/// Number of compound Poisson price jumps on the observed horizon of the
/// path identified by `key`, or `None` when the model has no Poisson part.
pub fn poisson_jump_count(spec: &PathSpec, key: &StreamKey) -> Option<usize> {
    match spec.jumps {
        Some(JumpModel::Poisson(params)) => {
            let (_, delta) = spec.horizon_and_delta();
            let observed = spec.n_observations() as f64 * delta;
            Some(poisson_jumps(&params, &spec.calendar, observed, key).len())
        }
        _ => None,
    }
}

/// Adds one independent `N(0, std_dev^2)` draw to each observation.
pub fn add_noise<R: Rng + ?Sized>(
    observations: &[f64],
    noise: &NoiseParams,
    rng: &mut R,
) -> Vec<f64> {
    observations
        .iter()
        .map(|&x| {
            let z: f64 = rng.sample(StandardNormal);
            if noise.std_dev > 0.0 {
                x + noise.std_dev * z
            } else {
                x
            }
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimulatedPath {
    /// Observed log-price increments, delta in years.
    pub series: IncrementSeries,
    /// Observed log-prices at the `n + 1` grid times.
    pub log_prices: Vec<f64>,
    /// Whether a price jump occurred inside each observation interval.
    pub jump_flags: Vec<bool>,
    /// Number of Poisson price jumps; `None` for jump-free or Cauchy models.
    pub jump_count: Option<usize>,
    /// Variance state (after truncation at zero) at the grid times.
    pub variance: Vec<f64>,
    /// Regenerations needed to satisfy `condition_on_jump`.
    pub attempts: u32,
}

impl SimulatedPath {
    pub fn prices(&self) -> Vec<f64> {
        self.log_prices.iter().map(|x| x.exp()).collect()
    }

    pub fn has_jump(&self) -> bool {
        self.jump_flags.iter().any(|&f| f)
    }

    /// Writes `time,price,jump_flag` rows, time in seconds from the start.
    pub fn write_csv<W: Write>(&self, calendar: &Calendar, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        let to_io = |e: csv::Error| Error::io("<csv>", std::io::Error::other(e));
        w.write_record(["time", "price", "jump_flag"])
            .map_err(to_io)?;
        let dt = calendar.convert(self.series.delta(), TimeUnit::Years, TimeUnit::Seconds);
        for (i, lp) in self.log_prices.iter().enumerate() {
            let flag = i > 0 && self.jump_flags[i - 1];
            w.write_record([
                format!("{}", i as f64 * dt),
                format!("{}", lp.exp()),
                (flag as u8).to_string(),
            ])
            .map_err(to_io)?;
        }
        w.flush().map_err(|e| Error::io("<csv>", e))?;
        Ok(())
    }

    pub fn write_csv_file(&self, calendar: &Calendar, path: &Path) -> Result<()> {
        let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        self.write_csv(calendar, std::io::BufWriter::new(file))
            .map_err(|e| match e {
                Error::Io { source, .. } => Error::io(path, source),
                other => other,
            })
    }
}

/// Simulates path 0 of `spec` (its own seed), honoring `condition_on_jump`.
pub fn simulate_path(spec: &PathSpec) -> Result<SimulatedPath> {
    simulate_conditioned(spec, spec.seed, 0)
}

/// Simulates path `path` of the experiment rooted at `seed`, regenerating
/// with fresh attempt numbers while the path is required to jump and does not.
pub fn simulate_conditioned(spec: &PathSpec, seed: u64, path: u64) -> Result<SimulatedPath> {
    spec.validate()?;
    let mut key = StreamKey::new(seed, path);
    loop {
        if !spec.conditions_on_jump() || poisson_jump_count(spec, &key).unwrap_or(0) > 0 {
            let mut out = simulate_with_key(spec, &key)?;
            out.attempts = key.attempt + 1;
            return Ok(out);
        }
        key.attempt += 1;
        if key.attempt >= MAX_CONDITIONING_ATTEMPTS {
            return Err(Error::config(format!(
                "no path with a jump after {MAX_CONDITIONING_ATTEMPTS} attempts"
            )));
        }
    }
}

/// Simulates exactly the path identified by `key`, without conditioning.
pub fn simulate_with_key(spec: &PathSpec, key: &StreamKey) -> Result<SimulatedPath> {
    spec.validate()?;
    let (_, delta) = spec.horizon_and_delta();
    let n = spec.n_observations();
    let observed_horizon = n as f64 * delta;
    let substeps = spec.substeps;
    let dt = delta / substeps as f64;
    let sqrt_dt = dt.sqrt();
    let sv = spec.sv;

    let mut jump_incr = vec![0.0; n];
    let mut jump_flags = vec![false; n];
    let mut jump_count = None;
    let mut cauchy = None;
    match spec.jumps {
        Some(JumpModel::Poisson(params)) => {
            let jumps = poisson_jumps(&params, &spec.calendar, observed_horizon, key);
            jump_count = Some(jumps.len());
            for (t, size) in jumps {
                let i = ((t / delta) as usize).min(n - 1);
                jump_incr[i] += size;
                jump_flags[i] = true;
            }
        }
        Some(JumpModel::Cauchy(params)) if params.theta > 0.0 => {
            let dist = Cauchy::new(0.0, dt / 2.0)
                .map_err(|e| Error::config(format!("Cauchy scale: {e}")))?;
            cauchy = Some((params.theta, dist, key.rng(Stream::PriceJumps)));
            jump_flags.iter_mut().for_each(|f| *f = true);
        }
        _ => {}
    }

    // (time, relative size) of variance jumps
    let vol_jumps: Vec<(f64, f64)> = match spec.vol_jumps {
        Some(vj) if vj.intensity > 0.0 => {
            let mut rng = key.rng(Stream::VolJumps);
            let times = poisson_arrivals(
                &mut rng,
                vj.intensity * spec.calendar.days_per_year,
                observed_horizon,
            );
            times
                .into_iter()
                .map(|t| (t, vj.max_relative * (2.0 * rng.random::<f64>() - 1.0)))
                .collect()
        }
        _ => Vec::new(),
    };
    let mut next_vol_jump = 0;

    let mut rng = key.rng(Stream::Diffusion);
    let mut v = sv.initial_variance();
    let mut increments = Vec::with_capacity(n);
    let mut variance = Vec::with_capacity(n + 1);
    variance.push(v.max(0.0));
    for (i, &jump) in jump_incr.iter().enumerate() {
        let mut diffusion = 0.0;
        let mut cauchy_part = 0.0;
        for s in 0..substeps {
            let (z1, z2) = correlated_normals(&mut rng, sv.rho);
            let vp = v.max(0.0);
            let vol = vp.sqrt();
            diffusion += -0.5 * vp * dt + vol * sqrt_dt * z1;
            v += sv.kappa * (sv.beta - vp) * dt + sv.gamma * vol * sqrt_dt * z2;
            let step_end = (i * substeps + s + 1) as f64 * dt;
            while next_vol_jump < vol_jumps.len() && vol_jumps[next_vol_jump].0 <= step_end {
                v *= 1.0 + vol_jumps[next_vol_jump].1;
                next_vol_jump += 1;
            }
            if let Some((theta, dist, crng)) = cauchy.as_mut() {
                cauchy_part += *theta * dist.sample(crng);
            }
        }
        increments.push(diffusion + (jump + cauchy_part));
        variance.push(v.max(0.0));
    }

    let mut log_prices = Vec::with_capacity(n + 1);
    let mut level = spec.initial_price.ln();
    log_prices.push(level);
    for x in &increments {
        level += x;
        log_prices.push(level);
    }

    if let Some(noise) = spec.noise.filter(|nz| nz.std_dev > 0.0) {
        let mut nrng = key.rng(Stream::Noise);
        let eps = add_noise(&vec![0.0; n + 1], &noise, &mut nrng);
        for (i, x) in increments.iter_mut().enumerate() {
            *x += eps[i + 1] - eps[i];
        }
        for (lp, e) in log_prices.iter_mut().zip(&eps) {
            *lp += e;
        }
    }

    Ok(SimulatedPath {
        series: IncrementSeries::new(increments, delta)?,
        log_prices,
        jump_flags,
        jump_count,
        variance,
        attempts: 1,
    })
}
