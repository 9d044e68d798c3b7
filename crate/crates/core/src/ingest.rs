//! Transaction data: loading, minimal cleaning, and calendar-time sampling.
//!
//! Input is a CSV file with header `timestamp,price`. Timestamps are either
//! epoch seconds or ISO-8601 date-times; date-times with an offset are read
//! in their local (exchange) clock, naive ones as given. Session times are
//! compared against that clock.

use std::io::Read;
use std::path::Path;

use chrono::{DateTime, NaiveDateTime, NaiveTime, Timelike};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::variation::{Calendar, IncrementSeries, TimeUnit};

const SECONDS_PER_CALENDAR_DAY: f64 = 86_400.0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TickRecord {
    /// Seconds since the epoch.
    pub timestamp: f64,
    pub price: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RejectReason {
    NonPositivePrice,
    BounceBackOutlier,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Rejection {
    /// 1-based line in the source file, when known.
    pub line: Option<usize>,
    pub timestamp: f64,
    pub price: f64,
    pub reason: RejectReason,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MalformedRow {
    pub line: usize,
    pub message: String,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LoadOptions {
    /// Largest tolerated fraction of unparseable data rows.
    pub max_malformed_fraction: f64,
}

impl Default for LoadOptions {
    fn default() -> Self {
        Self {
            max_malformed_fraction: 0.01,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct LoadedTicks {
    /// Valid ticks, sorted by timestamp.
    pub ticks: Vec<TickRecord>,
    /// Rows with a nonpositive price, handed to the cleaning log.
    pub rejected: Vec<Rejection>,
    pub malformed: Vec<MalformedRow>,
    /// Rows whose timestamp precedes one already seen.
    pub reordered: usize,
}

/// Parses epoch seconds or an ISO-8601 date-time into seconds.
pub fn parse_timestamp(raw: &str) -> Option<f64> {
    let raw = raw.trim();
    if let Ok(x) = raw.parse::<f64>() {
        return x.is_finite().then_some(x);
    }
    let naive = if let Ok(dt) = DateTime::parse_from_rfc3339(raw) {
        dt.naive_local()
    } else {
        ["%Y-%m-%dT%H:%M:%S%.f", "%Y-%m-%d %H:%M:%S%.f"]
            .iter()
            .find_map(|fmt| NaiveDateTime::parse_from_str(raw, fmt).ok())?
    };
    let utc = naive.and_utc();
    Some(utc.timestamp() as f64 + utc.nanosecond() as f64 * 1e-9)
}

pub fn parse_ticks<R: Read>(reader: R, source: &Path, opts: &LoadOptions) -> Result<LoadedTicks> {
    let mut csv = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .flexible(true)
        .from_reader(reader);
    let parse_err = |message: String| Error::Parse {
        path: source.to_path_buf(),
        message,
    };
    let headers = match csv.headers() {
        Ok(h) => h.clone(),
        Err(e) if is_empty_input(&e) => return Ok(LoadedTicks::default()),
        Err(e) => return Err(parse_err(e.to_string())),
    };
    if headers.is_empty() {
        return Ok(LoadedTicks::default());
    }
    let column = |name: &str| {
        headers
            .iter()
            .position(|h| h.eq_ignore_ascii_case(name))
            .ok_or_else(|| parse_err(format!("missing column `{name}`")))
    };
    let (ts_col, price_col) = (column("timestamp")?, column("price")?);

    let mut out = LoadedTicks::default();
    let mut rows = 0usize;
    let mut last_ts = f64::NEG_INFINITY;
    for (idx, record) in csv.records().enumerate() {
        let line = idx + 2;
        rows += 1;
        let record = match record {
            Ok(r) => r,
            Err(e) => {
                out.malformed.push(MalformedRow {
                    line,
                    message: e.to_string(),
                });
                continue;
            }
        };
        let ts = record.get(ts_col).and_then(parse_timestamp);
        let price = record
            .get(price_col)
            .and_then(|p| p.parse::<f64>().ok())
            .filter(|p| p.is_finite());
        let (Some(timestamp), Some(price)) = (ts, price) else {
            out.malformed.push(MalformedRow {
                line,
                message: format!(
                    "cannot parse `{}`",
                    record.iter().collect::<Vec<_>>().join(",")
                ),
            });
            continue;
        };
        if timestamp < last_ts {
            out.reordered += 1;
        }
        last_ts = last_ts.max(timestamp);
        if price > 0.0 {
            out.ticks.push(TickRecord { timestamp, price });
        } else {
            out.rejected.push(Rejection {
                line: Some(line),
                timestamp,
                price,
                reason: RejectReason::NonPositivePrice,
            });
        }
    }
    if rows > 0 && out.malformed.len() as f64 > opts.max_malformed_fraction * rows as f64 {
        let first = &out.malformed[0];
        return Err(parse_err(format!(
            "{} of {rows} rows unparseable (first at line {}: {})",
            out.malformed.len(),
            first.line,
            first.message
        )));
    }
    out.ticks
        .sort_by(|a, b| a.timestamp.total_cmp(&b.timestamp));
    Ok(out)
}

fn is_empty_input(e: &csv::Error) -> bool {
    matches!(e.kind(), csv::ErrorKind::Io(io) if io.kind() == std::io::ErrorKind::UnexpectedEof)
}

pub fn load_ticks(path: &Path, opts: &LoadOptions) -> Result<LoadedTicks> {
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    parse_ticks(std::io::BufReader::new(file), path, opts)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CleanOptions {
    /// A tick is a bounce-back outlier when the log-returns into and out of
    /// it have opposite signs and both exceed this multiple of the median
    /// nonzero absolute log-return.
    pub outlier_multiple: f64,
}

impl Default for CleanOptions {
    fn default() -> Self {
        Self {
            outlier_multiple: 10.0,
        }
    }
}

fn median(mut xs: Vec<f64>) -> Option<f64> {
    if xs.is_empty() {
        return None;
    }
    xs.sort_by(f64::total_cmp);
    let mid = xs.len() / 2;
    Some(if xs.len().is_multiple_of(2) {
        0.5 * (xs[mid - 1] + xs[mid])
    } else {
        xs[mid]
    })
}

/// Drops nonpositive prices and isolated spikes that revert on the next
/// tick. Every dropped tick is logged once.
pub fn clean_ticks(ticks: &[TickRecord], opts: &CleanOptions) -> (Vec<TickRecord>, Vec<Rejection>) {
    let mut log = Vec::new();
    let mut valid = Vec::with_capacity(ticks.len());
    for t in ticks {
        if t.price > 0.0 && t.price.is_finite() {
            valid.push(*t);
        } else {
            log.push(Rejection {
                line: None,
                timestamp: t.timestamp,
                price: t.price,
                reason: RejectReason::NonPositivePrice,
            });
        }
    }
    let returns: Vec<f64> = valid
        .windows(2)
        .map(|w| (w[1].price / w[0].price).ln())
        .collect();
    let scale = median(
        returns
            .iter()
            .map(|r| r.abs())
            .filter(|&r| r > 0.0)
            .collect(),
    );
    let Some(scale) = scale else {
        return (valid, log);
    };
    let limit = opts.outlier_multiple * scale;
    let mut kept = Vec::with_capacity(valid.len());
    for (i, t) in valid.iter().enumerate() {
        let spike = i > 0 && i + 1 < valid.len() && {
            let (r_in, r_out) = (returns[i - 1], returns[i]);
            r_in.abs() > limit && r_out.abs() > limit && r_in * r_out < 0.0
        };
        if spike {
            log.push(Rejection {
                line: None,
                timestamp: t.timestamp,
                price: t.price,
                reason: RejectReason::BounceBackOutlier,
            });
        } else {
            kept.push(*t);
        }
    }
    (kept, log)
}

/// Trading session and sampling frequency.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SessionSpec {
    pub open: NaiveTime,
    pub close: NaiveTime,
    pub sample_seconds: u32,
}

impl Default for SessionSpec {
    fn default() -> Self {
        Self {
            open: NaiveTime::from_hms_opt(9, 30, 0).expect("valid time"),
            close: NaiveTime::from_hms_opt(16, 0, 0).expect("valid time"),
            sample_seconds: 5,
        }
    }
}

impl SessionSpec {
    pub fn validate(&self) -> Result<()> {
        if self.open >= self.close {
            return Err(Error::config("session open must precede close"));
        }
        if self.sample_seconds == 0 {
            return Err(Error::config("sample_seconds must be >= 1"));
        }
        Ok(())
    }

    /// Number of whole sampling intervals in the session.
    pub fn intervals(&self) -> usize {
        let length = (self.close - self.open).num_seconds();
        (length / self.sample_seconds as i64) as usize
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Resampled {
    pub series: IncrementSeries,
    /// Epoch seconds of the first grid point used.
    pub start: f64,
    /// Leading grid points with no trade at or before them.
    pub skipped_grid_points: usize,
    /// Log-prices at the grid points used.
    pub log_prices: Vec<f64>,
}

/// Samples the last trade at or before each grid time `open + i *
/// sample_seconds` on the day of the first tick and returns the log-price
/// increments, with delta converted to `unit`.
pub fn resample_previous_tick(
    ticks: &[TickRecord],
    session: &SessionSpec,
    unit: TimeUnit,
    calendar: &Calendar,
) -> Result<Resampled> {
    session.validate()?;
    let first = ticks
        .first()
        .ok_or_else(|| Error::EmptySession("no ticks".into()))?;
    let day_start = (first.timestamp / SECONDS_PER_CALENDAR_DAY).floor() * SECONDS_PER_CALENDAR_DAY;
    let open = day_start + session.open.num_seconds_from_midnight() as f64;
    let step = session.sample_seconds as f64;
    let intervals = session.intervals();

    let mut grid_prices = Vec::with_capacity(intervals + 1);
    let mut skipped = 0;
    let mut cursor = 0;
    let mut last: Option<f64> = None;
    for i in 0..=intervals {
        let g = open + i as f64 * step;
        while cursor < ticks.len() && ticks[cursor].timestamp <= g {
            last = Some(ticks[cursor].price);
            cursor += 1;
        }
        match last {
            Some(p) => grid_prices.push(p.ln()),
            None => skipped += 1,
        }
    }
    if grid_prices.len() < 2 {
        return Err(Error::EmptySession(format!(
            "fewer than two grid points between {} and {} have a prior trade",
            session.open, session.close
        )));
    }
    let increments = grid_prices.windows(2).map(|w| w[1] - w[0]).collect();
    let delta = calendar.convert(step, TimeUnit::Seconds, unit);
    Ok(Resampled {
        series: IncrementSeries::new(increments, delta)?,
        start: open + skipped as f64 * step,
        skipped_grid_points: skipped,
        log_prices: grid_prices,
    })
}
