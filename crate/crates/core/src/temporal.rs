//! Timestamp to batch index mapping and Z levels.

use std::fmt;
use std::str::FromStr;

use chrono::{DateTime, Datelike, Duration, Months, Utc};
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum TemporalError {
    #[error("timestamp {t} is before the origin {origin}")]
    BeforeOrigin { t: DateTime<Utc>, origin: DateTime<Utc> },
    #[error("cannot parse timestep {0:?}; expected `<count> <unit>` with unit s|min|h|d|mo|y")]
    BadTimestep(String),
    #[error("timestep count must be at least 1")]
    ZeroCount,
    #[error("batch index overflow")]
    Overflow,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TimeUnit {
    Seconds,
    Minutes,
    Hours,
    Days,
    Months,
    Years,
}

impl TimeUnit {
    fn suffix(self) -> &'static str {
        match self {
            TimeUnit::Seconds => "s",
            TimeUnit::Minutes => "min",
            TimeUnit::Hours => "h",
            TimeUnit::Days => "d",
            TimeUnit::Months => "mo",
            TimeUnit::Years => "y",
        }
    }

    fn from_suffix(s: &str) -> Option<Self> {
        Some(match s {
            "s" => TimeUnit::Seconds,
            "min" => TimeUnit::Minutes,
            "h" => TimeUnit::Hours,
            "d" => TimeUnit::Days,
            "mo" => TimeUnit::Months,
            "y" => TimeUnit::Years,
            _ => return None,
        })
    }

    fn seconds(self) -> Option<i64> {
        match self {
            TimeUnit::Seconds => Some(1),
            TimeUnit::Minutes => Some(60),
            TimeUnit::Hours => Some(3_600),
            TimeUnit::Days => Some(86_400),
            TimeUnit::Months | TimeUnit::Years => None,
        }
    }
}

/// Batch width `T`: `count` units. Month and year widths follow the calendar.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct TimestepSpec {
    /// Start of batch 0. `None` resolves to the earliest timestamp of the dataset.
    #[serde(default)]
    pub origin: Option<DateTime<Utc>>,
    pub unit: TimeUnit,
    pub count: u32,
}

impl TimestepSpec {
    pub fn new(count: u32, unit: TimeUnit) -> Result<Self, TemporalError> {
        if count == 0 {
            return Err(TemporalError::ZeroCount);
        }
        Ok(TimestepSpec {
            origin: None,
            unit,
            count,
        })
    }

    pub fn with_origin(mut self, origin: DateTime<Utc>) -> Self {
        self.origin = Some(origin);
        self
    }

    fn months_per_step(&self) -> Option<u32> {
        match self.unit {
            TimeUnit::Months => Some(self.count),
            TimeUnit::Years => Some(self.count * 12),
            _ => None,
        }
    }

    /// Start instant of batch `index`.
    pub fn batch_start(&self, origin: DateTime<Utc>, index: usize) -> Option<DateTime<Utc>> {
        match self.months_per_step() {
            Some(m) => {
                let months = u32::try_from(index).ok()?.checked_mul(m)?;
                origin.checked_add_months(Months::new(months))
            }
            None => {
                let secs = self.unit.seconds()? * i64::from(self.count);
                origin.checked_add_signed(Duration::seconds(secs.checked_mul(index as i64)?))
            }
        }
    }
}

impl FromStr for TimestepSpec {
    type Err = TemporalError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let bad = || TemporalError::BadTimestep(s.to_string());
        let t = s.trim();
        let split = t.find(|c: char| !c.is_ascii_digit()).ok_or_else(bad)?;
        let count: u32 = t[..split].parse().map_err(|_| bad())?;
        let unit = TimeUnit::from_suffix(t[split..].trim()).ok_or_else(bad)?;
        TimestepSpec::new(count, unit)
    }
}

impl fmt::Display for TimestepSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} {}", self.count, self.unit.suffix())
    }
}

/// Index of the half-open interval `[origin + i*T, origin + (i+1)*T)` holding `t`.
pub fn assign_batch(t: DateTime<Utc>, origin: DateTime<Utc>, spec: &TimestepSpec) -> Result<usize, TemporalError> {
    if t < origin {
        return Err(TemporalError::BeforeOrigin { t, origin });
    }
    match spec.months_per_step() {
        Some(step) => {
            let months = (t.year() - origin.year()) * 12 + t.month() as i32 - origin.month() as i32;
            let mut i = (months.max(0) as u32 / step) as usize;
            // Day clamping (Jan 31 + 1 month) can leave the estimate off by one either way.
            while i > 0 && spec.batch_start(origin, i).map_or(true, |s| s > t) {
                i -= 1;
            }
            while spec.batch_start(origin, i + 1).is_some_and(|s| s <= t) {
                i += 1;
            }
            Ok(i)
        }
        None => {
            let width = spec.unit.seconds().expect("fixed unit") as i128 * spec.count as i128 * 1_000_000_000;
            let elapsed = t - origin;
            let nanos = elapsed.num_seconds() as i128 * 1_000_000_000 + elapsed.subsec_nanos() as i128;
            usize::try_from(nanos / width).map_err(|_| TemporalError::Overflow)
        }
    }
}

/// Z level of a batch.
pub fn z_coordinate(batch_index: usize, z_spacing: f64) -> f64 {
    batch_index as f64 * z_spacing
}
