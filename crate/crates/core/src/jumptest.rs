//! Standardized switch statistics and the two one-sided tests.
//!
//! Under the null of no jumps the switch statistic concentrates at
//! `k^{p/2-1}` and small values reject; under the null of jumps it
//! concentrates at 1 and large values reject. Each null has its own
//! estimator of the conditional asymptotic variance.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::moments::variance_scale_m;
use crate::variation::{
    default_window, local_jump_variance, multipower_variation, power_variation, switch_statistic,
    truncated_variation, Calendar, IncrementSeries, TimeUnit, TruncationRule,
};

/// Number of truncated re-estimation passes when `alpha` is bootstrapped.
const AUTO_TRUNCATION_PASSES: usize = 2;

/// Upper-tail standard normal quantile: returns `z` with `P(U > z) = alpha`.
///
/// Acklam's rational approximation followed by one Halley step against the
/// complementary error function.
pub fn normal_quantile(alpha: f64) -> Result<f64> {
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(Error::domain(format!(
            "quantile level must be in (0, 1), got {alpha}"
        )));
    }
    let lower = lower_normal_quantile(1.0 - alpha);
    Ok(lower)
}

fn lower_normal_quantile(prob: f64) -> f64 {
    const A: [f64; 6] = [
        -3.969_683_028_665_376e1,
        2.209_460_984_245_205e2,
        -2.759_285_104_469_687e2,
        1.383_577_518_672_69e2,
        -3.066_479_806_614_716e1,
        2.506_628_277_459_239,
    ];
    const B: [f64; 5] = [
        -5.447_609_879_822_406e1,
        1.615_858_368_580_409e2,
        -1.556_989_798_598_866e2,
        6.680_131_188_771_972e1,
        -1.328_068_155_288_572e1,
    ];
    const C: [f64; 6] = [
        -7.784_894_002_430_293e-3,
        -3.223_964_580_411_365e-1,
        -2.400_758_277_161_838,
        -2.549_732_539_343_734,
        4.374_664_141_464_968,
        2.938_163_982_698_783,
    ];
    const D: [f64; 4] = [
        7.784_695_709_041_462e-3,
        3.224_671_290_700_398e-1,
        2.445_134_137_142_996,
        3.754_408_661_907_416,
    ];
    const P_LOW: f64 = 0.024_25;

    if prob == 0.5 {
        return 0.0;
    }
    let x = if prob < P_LOW {
        let q = (-2.0 * prob.ln()).sqrt();
        (((((C[0] * q + C[1]) * q + C[2]) * q + C[3]) * q + C[4]) * q + C[5])
            / ((((D[0] * q + D[1]) * q + D[2]) * q + D[3]) * q + 1.0)
    } else if prob <= 1.0 - P_LOW {
        let q = prob - 0.5;
        let r = q * q;
        (((((A[0] * r + A[1]) * r + A[2]) * r + A[3]) * r + A[4]) * r + A[5]) * q
            / (((((B[0] * r + B[1]) * r + B[2]) * r + B[3]) * r + B[4]) * r + 1.0)
    } else {
        let q = (-2.0 * (1.0 - prob).ln()).sqrt();
        -(((((C[0] * q + C[1]) * q + C[2]) * q + C[3]) * q + C[4]) * q + C[5])
            / ((((D[0] * q + D[1]) * q + D[2]) * q + D[3]) * q + 1.0)
    };
    // Halley refinement
    let e = 0.5 * statrs::function::erf::erfc(-x / std::f64::consts::SQRT_2) - prob;
    let u = e * (2.0 * std::f64::consts::PI).sqrt() * (x * x / 2.0).exp();
    x - u / (1.0 + x * u / 2.0)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NullHypothesis {
    NoJumps,
    Jumps,
}

impl fmt::Display for NullHypothesis {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            NullHypothesis::NoJumps => "no_jumps",
            NullHypothesis::Jumps => "jumps",
        })
    }
}

/// Estimator of `int sigma^{2p} / (int sigma^p)^2` under the no-jump null.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum VarianceEstimator {
    #[default]
    Truncated,
    Multipower,
}

/// Cut-off rule under the jump null.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum CutoffStyle {
    /// `1 + sqrt(V / level)`: conservative, valid even when price and
    /// volatility jump together.
    Chebyshev,
    /// `1 + z_level sqrt(V)`: exact level when price and volatility have no
    /// common jumps.
    #[default]
    Gaussian,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TestConfig {
    pub p: f64,
    pub k: usize,
    /// Significance level of the test.
    pub level: f64,
    /// Truncation level `alpha` in `alpha * delta^varpi`, in increment units
    /// per `series_unit^varpi`. `None` bootstraps it from the data.
    pub alpha: Option<f64>,
    /// Multiple of the estimated volatility used when `alpha` is bootstrapped.
    pub sigma_multiple: f64,
    pub varpi: f64,
    /// Half-width of the local window for `D`. `None` uses
    /// `ceil(50 delta^{-1/4})` with delta in `window_unit`.
    pub window_kn: Option<usize>,
    pub variance_estimator: VarianceEstimator,
    /// Unit of the series' sampling interval.
    pub series_unit: TimeUnit,
    /// Unit in which the automatic window rule reads delta.
    pub window_unit: TimeUnit,
    pub calendar: Calendar,
}

impl Default for TestConfig {
    fn default() -> Self {
        Self {
            p: 4.0,
            k: 2,
            level: 0.05,
            alpha: None,
            sigma_multiple: 5.0,
            varpi: 0.47,
            window_kn: None,
            variance_estimator: VarianceEstimator::Truncated,
            series_unit: TimeUnit::Years,
            window_unit: TimeUnit::Days,
            calendar: Calendar::default(),
        }
    }
}

impl TestConfig {
    /// Checks the parameter ranges required to test `null`.
    pub fn validate_for(&self, null: NullHypothesis) -> Result<()> {
        if !(self.p > 3.0) || !self.p.is_finite() {
            return Err(Error::config(format!(
                "the tests need p > 3, got {}",
                self.p
            )));
        }
        if self.k < 2 {
            return Err(Error::config(format!("k must be >= 2, got {}", self.k)));
        }
        if !(self.level > 0.0 && self.level < 1.0) {
            return Err(Error::config(format!(
                "level must be in (0, 1), got {}",
                self.level
            )));
        }
        if let Some(alpha) = self.alpha {
            if !(alpha > 0.0) || !alpha.is_finite() {
                return Err(Error::config(format!(
                    "truncation alpha must be > 0, got {alpha}"
                )));
            }
        } else if !(self.sigma_multiple > 0.0) {
            return Err(Error::config("sigma_multiple must be > 0"));
        }
        if self.window_kn == Some(0) {
            return Err(Error::config("window_kn must be >= 1"));
        }
        let uses_truncation = match null {
            NullHypothesis::Jumps => true,
            NullHypothesis::NoJumps => self.variance_estimator == VarianceEstimator::Truncated,
        };
        if uses_truncation {
            let lower = match null {
                NullHypothesis::Jumps => 0.0,
                NullHypothesis::NoJumps => 0.5 - 1.0 / self.p,
            };
            if !(self.varpi > lower && self.varpi < 0.5) {
                return Err(Error::config(format!(
                    "varpi must lie in ({lower}, 0.5) for the {null} null, got {}",
                    self.varpi
                )));
            }
        }
        Ok(())
    }

    /// The truncation rule for `series`, bootstrapping `alpha` when it is not
    /// fixed: a first pass thresholds at `sigma_multiple` times the realized
    /// volatility, later passes at `sigma_multiple` times the truncated one.
    pub fn truncation_rule(&self, series: &IncrementSeries) -> Result<TruncationRule> {
        if let Some(alpha) = self.alpha {
            return TruncationRule::new(alpha, self.varpi);
        }
        let horizon = series.horizon();
        let realized = power_variation(series, 2.0)?;
        if !(realized > 0.0) {
            return Err(Error::degenerate(
                "realized variance is zero; cannot bootstrap truncation",
            ));
        }
        let mut rule = TruncationRule::new(
            self.sigma_multiple * (realized / horizon).sqrt(),
            self.varpi,
        )?;
        for _ in 0..AUTO_TRUNCATION_PASSES {
            let truncated = truncated_variation(series, 2.0, &rule)?;
            if !(truncated > 0.0) {
                break;
            }
            rule = TruncationRule::new(
                self.sigma_multiple * (truncated / horizon).sqrt(),
                self.varpi,
            )?;
        }
        Ok(rule)
    }

    pub fn window_for(&self, series: &IncrementSeries) -> usize {
        self.window_kn.unwrap_or_else(|| {
            let delta = self
                .calendar
                .convert(series.delta(), self.series_unit, self.window_unit);
            default_window(delta)
        })
    }

    /// Limit of the switch statistic on continuous paths, `k^{p/2-1}`.
    pub fn continuous_center(&self) -> f64 {
        (self.k as f64).powf(self.p / 2.0 - 1.0)
    }
}

/// Conditional variance estimate under the jump null:
/// `delta (k-1) p^2 D(2p-2) / (2 B(p)^2)`.
pub fn variance_jump_null(series: &IncrementSeries, cfg: &TestConfig) -> Result<f64> {
    if !(cfg.p > 3.0) {
        return Err(Error::config(format!(
            "jump-null variance needs p > 3, got {}",
            cfg.p
        )));
    }
    let b = power_variation(series, cfg.p)?;
    if !(b > 0.0) {
        return Err(Error::degenerate("power variation is zero"));
    }
    let rule = cfg.truncation_rule(series)?;
    let d = local_jump_variance(series, 2.0 * cfg.p - 2.0, cfg.window_for(series), &rule)?;
    let p = cfg.p;
    Ok(series.delta() * (cfg.k as f64 - 1.0) * p * p * d / (2.0 * b * b))
}

/// Conditional variance estimate under the no-jump null,
/// `delta M(p,k) A(2p) / A(p)^2`, with `A` either truncated or multipower.
pub fn variance_nojump_null(series: &IncrementSeries, cfg: &TestConfig) -> Result<f64> {
    let p = cfg.p;
    if !(p >= 2.0) {
        return Err(Error::config(format!(
            "no-jump-null variance needs p >= 2, got {p}"
        )));
    }
    let k = u32::try_from(cfg.k).map_err(|_| Error::config("k out of range"))?;
    let m = variance_scale_m(p, k)?;
    let (num, den) = match cfg.variance_estimator {
        VarianceEstimator::Truncated => {
            let rule = cfg.truncation_rule(series)?;
            (
                truncated_variation(series, 2.0 * p, &rule)?,
                truncated_variation(series, p, &rule)?,
            )
        }
        VarianceEstimator::Multipower => {
            let floor = p.floor() as usize;
            let r = p / (floor as f64 + 1.0);
            (
                multipower_variation(series, r, 2 * floor + 2)?,
                multipower_variation(series, r, floor + 1)?,
            )
        }
    };
    if !(den > 0.0) {
        return Err(Error::degenerate(
            "integrated-volatility estimate in the denominator is zero",
        ));
    }
    Ok(series.delta() * m * num / (den * den))
}

/// Statistic and variance estimate for one null, before any decision.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Evaluation {
    pub null: NullHypothesis,
    pub statistic: f64,
    pub variance: f64,
    pub center: f64,
    pub n: usize,
}

impl Evaluation {
    pub fn cutoff(&self, level: f64, style: CutoffStyle) -> Result<f64> {
        let sd = self.variance.sqrt();
        Ok(match (self.null, style) {
            (NullHypothesis::NoJumps, _) => self.center - normal_quantile(level)? * sd,
            (NullHypothesis::Jumps, CutoffStyle::Gaussian) => {
                self.center + normal_quantile(level)? * sd
            }
            (NullHypothesis::Jumps, CutoffStyle::Chebyshev) => {
                if !(level > 0.0 && level < 1.0) {
                    return Err(Error::domain(format!(
                        "level must be in (0, 1), got {level}"
                    )));
                }
                self.center + (self.variance / level).sqrt()
            }
        })
    }

    pub fn rejects(&self, cutoff: f64) -> bool {
        match self.null {
            NullHypothesis::NoJumps => self.statistic < cutoff,
            NullHypothesis::Jumps => self.statistic > cutoff,
        }
    }

    pub fn standardized(&self) -> f64 {
        (self.statistic - self.center) / self.variance.sqrt()
    }

    pub fn decide(&self, level: f64, style: CutoffStyle) -> Result<TestResult> {
        let cutoff = self.cutoff(level, style)?;
        Ok(TestResult {
            statistic: self.statistic,
            variance: self.variance,
            cutoff,
            reject: self.rejects(cutoff),
            null: self.null,
            n: self.n,
            standardized: self.standardized(),
            level,
        })
    }
}

/// Outcome of one test on one series. Serializes flat.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TestResult {
    pub statistic: f64,
    pub variance: f64,
    pub cutoff: f64,
    pub reject: bool,
    pub null: NullHypothesis,
    pub n: usize,
    /// `(statistic - center) / sqrt(variance)`; not finite when the
    /// variance estimate is zero (serialized as `null`).
    pub standardized: f64,
    pub level: f64,
}

pub fn evaluate_no_jump_null(series: &IncrementSeries, cfg: &TestConfig) -> Result<Evaluation> {
    cfg.validate_for(NullHypothesis::NoJumps)?;
    let statistic = switch_statistic(series, cfg.p, cfg.k)?;
    let variance = variance_nojump_null(series, cfg)?;
    Ok(Evaluation {
        null: NullHypothesis::NoJumps,
        statistic,
        variance,
        center: cfg.continuous_center(),
        n: series.len(),
    })
}

pub fn evaluate_jump_null(series: &IncrementSeries, cfg: &TestConfig) -> Result<Evaluation> {
    cfg.validate_for(NullHypothesis::Jumps)?;
    let statistic = switch_statistic(series, cfg.p, cfg.k)?;
    let variance = variance_jump_null(series, cfg)?;
    Ok(Evaluation {
        null: NullHypothesis::Jumps,
        statistic,
        variance,
        center: 1.0,
        n: series.len(),
    })
}

pub fn evaluate(
    series: &IncrementSeries,
    cfg: &TestConfig,
    null: NullHypothesis,
) -> Result<Evaluation> {
    match null {
        NullHypothesis::NoJumps => evaluate_no_jump_null(series, cfg),
        NullHypothesis::Jumps => evaluate_jump_null(series, cfg),
    }
}

/// Tests the null "the path is continuous on [0, t]"; rejects for small
/// values of the switch statistic.
pub fn test_no_jump_null(series: &IncrementSeries, cfg: &TestConfig) -> Result<TestResult> {
    evaluate_no_jump_null(series, cfg)?.decide(cfg.level, CutoffStyle::Gaussian)
}

/// Tests the null "the path jumped on [0, t]"; rejects for large values of
/// the switch statistic.
pub fn test_jump_null(
    series: &IncrementSeries,
    cfg: &TestConfig,
    cutoff_style: CutoffStyle,
) -> Result<TestResult> {
    evaluate_jump_null(series, cfg)?.decide(cfg.level, cutoff_style)
}
