//! Realized measures built from a regular grid of increments.
//!
//! All estimators here take an [`IncrementSeries`] and are pure functions of
//! it. Sums use Neumaier compensation: the switch statistic is a ratio of two
//! sums that are close in magnitude, and long series make naive rounding
//! visible.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::moments::gaussian_abs_moment;

/// Relative slack used when deciding how many whole grid cells fit in a horizon.
const GRID_EPS: f64 = 1e-9;

/// Number of whole cells of width `delta` in `[0, horizon]`.
pub fn grid_cells(horizon: f64, delta: f64) -> usize {
    (horizon / delta * (1.0 + GRID_EPS)).floor() as usize
}

/// Time unit in which deltas, horizons, and model rates are expressed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum TimeUnit {
    #[default]
    Years,
    Days,
    Seconds,
}

/// Trading calendar linking the time units.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Calendar {
    pub days_per_year: f64,
    pub seconds_per_day: f64,
}

impl Default for Calendar {
    fn default() -> Self {
        Self {
            days_per_year: 252.0,
            seconds_per_day: 23_400.0,
        }
    }
}

impl Calendar {
    pub fn seconds_per(&self, unit: TimeUnit) -> f64 {
        match unit {
            TimeUnit::Years => self.days_per_year * self.seconds_per_day,
            TimeUnit::Days => self.seconds_per_day,
            TimeUnit::Seconds => 1.0,
        }
    }

    pub fn convert(&self, value: f64, from: TimeUnit, to: TimeUnit) -> f64 {
        if from == to {
            value
        } else {
            value * self.seconds_per(from) / self.seconds_per(to)
        }
    }
}

/// Neumaier-compensated running sum.
#[derive(Debug, Clone, Copy, Default)]
pub(crate) struct CompensatedSum {
    sum: f64,
    carry: f64,
}

impl CompensatedSum {
    pub(crate) fn add(&mut self, x: f64) {
        let t = self.sum + x;
        if self.sum.abs() >= x.abs() {
            self.carry += (self.sum - t) + x;
        } else {
            self.carry += (x - t) + self.sum;
        }
        self.sum = t;
    }

    pub(crate) fn value(&self) -> f64 {
        self.sum + self.carry
    }
}

impl FromIterator<f64> for CompensatedSum {
    fn from_iter<I: IntoIterator<Item = f64>>(iter: I) -> Self {
        let mut acc = CompensatedSum::default();
        for x in iter {
            acc.add(x);
        }
        acc
    }
}

pub(crate) fn compensated_sum<I: IntoIterator<Item = f64>>(iter: I) -> f64 {
    iter.into_iter().collect::<CompensatedSum>().value()
}

/// `|x|^p`, using integer powers when `p` is a small integer.
#[inline]
pub(crate) fn abs_pow(x: f64, p: f64) -> f64 {
    let a = x.abs();
    if p.fract() == 0.0 && p <= 64.0 {
        a.powi(p as i32)
    } else {
        a.powf(p)
    }
}

/// Increments of a process observed on the regular grid `i * delta`,
/// `i = 0..=n`, over `[0, horizon]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IncrementSeries {
    increments: Vec<f64>,
    delta: f64,
    horizon: f64,
}

impl IncrementSeries {
    /// Series whose horizon is exactly `increments.len() * delta`.
    pub fn new(increments: Vec<f64>, delta: f64) -> Result<Self> {
        check_delta(delta)?;
        let horizon = increments.len() as f64 * delta;
        Ok(Self {
            increments,
            delta,
            horizon,
        })
    }

    /// Series over `[0, horizon]`; increments beyond `floor(horizon / delta)`
    /// are discarded.
    pub fn with_horizon(mut increments: Vec<f64>, delta: f64, horizon: f64) -> Result<Self> {
        check_delta(delta)?;
        if !(horizon > 0.0) || !horizon.is_finite() {
            return Err(Error::domain(format!("horizon must be > 0, got {horizon}")));
        }
        let cells = grid_cells(horizon, delta);
        if increments.len() > cells {
            increments.truncate(cells);
        }
        Ok(Self {
            increments,
            delta,
            horizon,
        })
    }

    pub fn increments(&self) -> &[f64] {
        &self.increments
    }

    pub fn into_increments(self) -> Vec<f64> {
        self.increments
    }

    pub fn len(&self) -> usize {
        self.increments.len()
    }

    pub fn is_empty(&self) -> bool {
        self.increments.is_empty()
    }

    pub fn delta(&self) -> f64 {
        self.delta
    }

    pub fn horizon(&self) -> f64 {
        self.horizon
    }

    /// The series of `c * increment`.
    pub fn scaled(&self, c: f64) -> Self {
        Self {
            increments: self.increments.iter().map(|x| c * x).collect(),
            delta: self.delta,
            horizon: self.horizon,
        }
    }
}

fn check_delta(delta: f64) -> Result<()> {
    if !(delta > 0.0) || !delta.is_finite() {
        return Err(Error::domain(format!(
            "sampling interval must be > 0, got {delta}"
        )));
    }
    Ok(())
}

/// Truncation level `alpha * delta^varpi` separating diffusive increments
/// from jumps.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TruncationRule {
    pub alpha: f64,
    pub varpi: f64,
}

impl TruncationRule {
    pub fn new(alpha: f64, varpi: f64) -> Result<Self> {
        if !(alpha > 0.0) || !alpha.is_finite() {
            return Err(Error::domain(format!(
                "truncation alpha must be > 0, got {alpha}"
            )));
        }
        if !(varpi > 0.0 && varpi < 0.5) {
            return Err(Error::domain(format!(
                "truncation varpi must be in (0, 1/2), got {varpi}"
            )));
        }
        Ok(Self { alpha, varpi })
    }

    pub fn threshold(&self, delta: f64) -> f64 {
        self.alpha * delta.powf(self.varpi)
    }
}

/// Aggregates `k` consecutive increments, giving the increments on the
/// coarse grid `i * k * delta`. A trailing partial block is dropped.
pub fn subsample(series: &IncrementSeries, k: usize) -> Result<IncrementSeries> {
    if k < 2 {
        return Err(Error::domain(format!(
            "subsampling factor must be >= 2, got {k}"
        )));
    }
    let coarse = series
        .increments
        .chunks_exact(k)
        .map(|block| compensated_sum(block.iter().copied()))
        .collect();
    Ok(IncrementSeries {
        increments: coarse,
        delta: series.delta * k as f64,
        horizon: series.horizon,
    })
}

/// `B(p, delta) = sum |dX_i|^p`.
pub fn power_variation(series: &IncrementSeries, p: f64) -> Result<f64> {
    if !(p > 0.0) || !p.is_finite() {
        return Err(Error::domain(format!("power must be > 0, got {p}")));
    }
    Ok(compensated_sum(
        series.increments.iter().map(|&x| abs_pow(x, p)),
    ))
}

/// `S(p, k, delta) = B(p, k delta) / B(p, delta)`.
pub fn switch_statistic(series: &IncrementSeries, p: f64, k: usize) -> Result<f64> {
    let fine = power_variation(series, p)?;
    if !(fine > 0.0) {
        return Err(Error::degenerate(
            "fine-scale power variation is zero; the observed path is constant",
        ));
    }
    let coarse = power_variation(&subsample(series, k)?, p)?;
    Ok(coarse / fine)
}

/// Truncated realized `p`-th variation, normalized to estimate
/// `int |sigma_s|^p ds`.
pub fn truncated_variation(series: &IncrementSeries, p: f64, rule: &TruncationRule) -> Result<f64> {
    if !(p >= 2.0) || !p.is_finite() {
        return Err(Error::domain(format!(
            "truncated variation needs p >= 2, got {p}"
        )));
    }
    let cut = rule.threshold(series.delta);
    let raw = compensated_sum(
        series
            .increments
            .iter()
            .filter(|x| x.abs() <= cut)
            .map(|&x| abs_pow(x, p)),
    );
    Ok(series.delta.powf(1.0 - p / 2.0) / gaussian_abs_moment(p)? * raw)
}

/// Multipower variation: normalized sums of products of `q` adjacent
/// `|dX|^r`, estimating `int |sigma_s|^{q r} ds` on continuous paths.
pub fn multipower_variation(series: &IncrementSeries, r: f64, q: usize) -> Result<f64> {
    if !(r > 0.0 && r < 2.0) {
        return Err(Error::domain(format!(
            "multipower exponent must be in (0, 2), got {r}"
        )));
    }
    if q == 0 {
        return Err(Error::domain("multipower order q must be >= 1"));
    }
    let n = series.len();
    if n < q {
        return Err(Error::InsufficientData {
            needed: q,
            available: n,
        });
    }
    let powered: Vec<f64> = series.increments.iter().map(|&x| abs_pow(x, r)).collect();
    let raw = compensated_sum(powered.windows(q).map(|w| w.iter().product::<f64>()));
    let qf = q as f64;
    let norm = series.delta.powf(1.0 - qf * r / 2.0) / gaussian_abs_moment(r)?.powi(q as i32);
    Ok(norm * raw)
}

/// Local-window estimator of `sum |jump|^p (sigma_{s-}^2 + sigma_s^2)`.
///
/// For each increment `i`, the truncated squared increments with index
/// `j != i`, `|i - j| <= window_kn` and `1 <= j <= n` are summed. Windows are
/// clipped at both ends of the series.
pub fn local_jump_variance(
    series: &IncrementSeries,
    p: f64,
    window_kn: usize,
    rule: &TruncationRule,
) -> Result<f64> {
    if !(p > 0.0) || !p.is_finite() {
        return Err(Error::domain(format!("power must be > 0, got {p}")));
    }
    if window_kn == 0 {
        return Err(Error::domain("local window k_n must be >= 1"));
    }
    let n = series.len();
    let cut = rule.threshold(series.delta);
    let kept: Vec<f64> = series
        .increments
        .iter()
        .map(|&x| if x.abs() <= cut { x * x } else { 0.0 })
        .collect();
    // prefix[i] = compensated sum of kept[0..i]
    let mut prefix = Vec::with_capacity(n + 1);
    let mut acc = CompensatedSum::default();
    prefix.push(0.0);
    for &v in &kept {
        acc.add(v);
        prefix.push(acc.value());
    }
    let mut total = CompensatedSum::default();
    for (i, &x) in series.increments.iter().enumerate() {
        if x == 0.0 {
            continue;
        }
        let lo = i.saturating_sub(window_kn);
        let hi = (i + window_kn).min(n - 1);
        let neighbours = (prefix[hi + 1] - prefix[lo] - kept[i]).max(0.0);
        total.add(abs_pow(x, p) * neighbours);
    }
    Ok(total.value() / (window_kn as f64 * series.delta))
}

/// `ceil(50 delta^{-1/4})`, with `delta` in whichever unit the caller has
/// chosen for the window rule.
pub fn default_window(delta: f64) -> usize {
    let kn = (50.0 * delta.powf(-0.25)).ceil();
    if kn.is_finite() && kn >= 1.0 {
        kn as usize
    } else {
        1
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use std::f64::consts::PI;

    fn series(xs: &[f64]) -> IncrementSeries {
        IncrementSeries::new(xs.to_vec(), 1.0).unwrap()
    }

    fn no_cut() -> TruncationRule {
        TruncationRule::new(1e12, 0.25).unwrap()
    }

    #[test]
    fn horizon_truncates_extra_increments() {
        let s = IncrementSeries::with_horizon(vec![1.0; 10], 0.5, 2.0).unwrap();
        assert_eq!(s.len(), 4);
        let s = IncrementSeries::with_horizon(vec![1.0; 10], 1.0 / 3.0, 1.0).unwrap();
        assert_eq!(s.len(), 3);
        assert!(IncrementSeries::new(vec![], 0.0).is_err());
    }

    #[test]
    fn calendar_conversion() {
        let cal = Calendar::default();
        assert_relative_eq!(
            cal.convert(1.0, TimeUnit::Days, TimeUnit::Seconds),
            23_400.0
        );
        assert_relative_eq!(
            cal.convert(1.0 / 252.0, TimeUnit::Years, TimeUnit::Days),
            1.0,
            max_relative = 1e-14
        );
    }

    #[test]
    fn subsample_examples() {
        let s = subsample(&series(&[1.0, -1.0, 2.0, 0.0]), 2).unwrap();
        assert_eq!(s.increments(), &[0.0, 2.0]);
        assert_eq!(s.delta(), 2.0);
        assert_eq!(s.horizon(), 4.0);
        let s = subsample(&series(&[1.0, 1.0, 1.0]), 2).unwrap();
        assert_eq!(s.increments(), &[2.0]);
        assert!(matches!(
            subsample(&series(&[1.0]), 1),
            Err(Error::Domain(_))
        ));
    }

    #[test]
    fn power_variation_examples() {
        let s = series(&[1.0, -1.0, 2.0]);
        assert_eq!(power_variation(&s, 2.0).unwrap(), 6.0);
        assert_eq!(power_variation(&s, 4.0).unwrap(), 18.0);
        assert_eq!(power_variation(&series(&[0.0; 5]), 3.3).unwrap(), 0.0);
        assert_eq!(power_variation(&series(&[]), 4.0).unwrap(), 0.0);
        assert!(power_variation(&s, 0.0).is_err());
    }

    #[test]
    fn switch_statistic_examples() {
        let c = 0.37;
        assert_relative_eq!(
            switch_statistic(&series(&[c; 4]), 4.0, 2).unwrap(),
            8.0,
            max_relative = 1e-14
        );
        assert_eq!(
            switch_statistic(&series(&[5.0, 0.0, 0.0, 0.0]), 4.0, 2).unwrap(),
            1.0
        );
        assert!(matches!(
            switch_statistic(&series(&[0.0; 8]), 4.0, 2),
            Err(Error::DegeneratePath(_))
        ));
    }

    #[test]
    fn truncated_variation_examples() {
        let s = series(&[0.1, 5.0, 0.1]);
        let rule = TruncationRule::new(1.0, 0.3).unwrap();
        assert_relative_eq!(
            truncated_variation(&s, 2.0, &rule).unwrap(),
            0.02,
            max_relative = 1e-12
        );
        let tiny = TruncationRule::new(0.01, 0.3).unwrap();
        assert_eq!(truncated_variation(&s, 2.0, &tiny).unwrap(), 0.0);
        assert_eq!(
            truncated_variation(&s, 2.0, &no_cut()).unwrap(),
            power_variation(&s, 2.0).unwrap()
        );
        assert!(truncated_variation(&s, 1.5, &rule).is_err());
    }

    #[test]
    fn multipower_examples() {
        let s = series(&[1.0, 1.0, 1.0]);
        // 2 / m_1^2 with m_1 = sqrt(2/pi)
        assert_relative_eq!(
            multipower_variation(&s, 1.0, 2).unwrap(),
            PI,
            max_relative = 1e-12
        );
        let t = IncrementSeries::new(vec![0.3, -1.2, 0.7, 2.0], 0.25).unwrap();
        let r = 0.8;
        let expected = t.delta().powf(1.0 - r / 2.0) / gaussian_abs_moment(r).unwrap()
            * power_variation(&t, r).unwrap();
        assert_relative_eq!(
            multipower_variation(&t, r, 1).unwrap(),
            expected,
            max_relative = 1e-12
        );
        let z = series(&[1.0, 0.0, 1.0, 1.0]);
        // only the last window (1,1) survives
        assert_relative_eq!(
            multipower_variation(&z, 1.0, 2).unwrap(),
            PI / 2.0,
            max_relative = 1e-12
        );
        assert!(matches!(
            multipower_variation(&series(&[1.0]), 1.0, 2),
            Err(Error::InsufficientData {
                needed: 2,
                available: 1
            })
        ));
        assert!(multipower_variation(&s, 2.0, 1).is_err());
    }

    #[test]
    fn local_jump_variance_examples() {
        let s = series(&[1.0, 2.0, 1.0]);
        assert_eq!(local_jump_variance(&s, 2.0, 1, &no_cut()).unwrap(), 16.0);
        let tiny = TruncationRule::new(0.5, 0.3).unwrap();
        assert_eq!(local_jump_variance(&s, 4.0, 1, &tiny).unwrap(), 0.0);
        assert_eq!(
            local_jump_variance(&series(&[3.0]), 4.0, 5, &no_cut()).unwrap(),
            0.0
        );
        assert!(local_jump_variance(&s, 4.0, 0, &no_cut()).is_err());
    }

    fn local_jump_variance_brute(xs: &[f64], delta: f64, p: f64, kn: usize, cut: f64) -> f64 {
        let n = xs.len() as i64;
        let mut total = 0.0;
        for i in 0..n {
            let mut inner = 0.0;
            for j in 0..n {
                if j != i && (i - j).abs() <= kn as i64 && xs[j as usize].abs() <= cut {
                    inner += xs[j as usize].powi(2);
                }
            }
            total += xs[i as usize].abs().powf(p) * inner;
        }
        total / (kn as f64 * delta)
    }

    #[test]
    fn local_jump_variance_matches_brute_force() {
        let xs: Vec<f64> = (0..57)
            .map(|i| ((i * 37 % 23) as f64 - 11.0) / 7.0)
            .collect();
        let delta = 0.01;
        let s = IncrementSeries::new(xs.clone(), delta).unwrap();
        let rule = TruncationRule::new(8.0, 0.4).unwrap();
        for kn in [1, 3, 10, 60] {
            let fast = local_jump_variance(&s, 6.0, kn, &rule).unwrap();
            let slow = local_jump_variance_brute(&xs, delta, 6.0, kn, rule.threshold(delta));
            assert_relative_eq!(fast, slow, max_relative = 1e-12);
        }
    }

    #[test]
    fn default_window_examples() {
        assert_eq!(default_window(1.0 / 23_400.0), 619);
        assert_eq!(default_window(1.0), 50);
        assert_eq!(default_window(1.0 / 16.0), 100);
    }

    #[test]
    fn compensated_sum_recovers_small_terms() {
        let mut xs = vec![1e16];
        xs.extend(std::iter::repeat_n(1.0, 1000));
        xs.push(-1e16);
        assert_eq!(compensated_sum(xs.iter().copied()), 1000.0);
    }
}
