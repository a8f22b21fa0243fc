//! Timezone-free timetable instants.
//!
//! A [`ServiceTime`] is a service date plus an offset in seconds from that
//! date's midnight. Offsets may exceed 24 hours (GTFS style) so a train that
//! runs past midnight keeps its original service date.

use std::cmp::Ordering;
use std::fmt;

use chrono::{Datelike, Duration, NaiveDate, NaiveDateTime, Timelike, Weekday};
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{Error, Result};

const DAY_SECONDS: i64 = 86_400;

#[derive(Debug, Clone, Copy)]
pub struct ServiceTime {
    date: NaiveDate,
    seconds: i64,
}

impl ServiceTime {
    pub fn new(date: NaiveDate, seconds: i64) -> Self {
        Self { date, seconds }
    }

    pub fn from_hms(date: NaiveDate, h: i64, m: i64, s: i64) -> Self {
        Self::new(date, h * 3600 + m * 60 + s)
    }

    /// Parses either an ISO 8601 date-time (`2024-03-01T13:26:00`, also with a
    /// space separator) or a clock time `HH:MM[:SS]` relative to `service_date`.
    pub fn parse(text: &str, service_date: NaiveDate) -> Result<Self> {
        let text = text.trim();
        if text.contains('-') {
            let dt = NaiveDateTime::parse_from_str(text, "%Y-%m-%dT%H:%M:%S")
                .or_else(|_| NaiveDateTime::parse_from_str(text, "%Y-%m-%d %H:%M:%S"))
                .or_else(|_| NaiveDateTime::parse_from_str(text, "%Y-%m-%dT%H:%M"))
                .map_err(|e| Error::Parse(format!("timestamp {text:?}: {e}")))?;
            let day_offset = (dt.date() - service_date).num_days();
            let secs = dt.time().num_seconds_from_midnight() as i64;
            return Ok(Self::new(service_date, day_offset * DAY_SECONDS + secs));
        }
        let parts: Vec<&str> = text.split(':').collect();
        if !(2..=3).contains(&parts.len()) {
            return Err(Error::Parse(format!("clock time {text:?}")));
        }
        let mut fields = [0i64; 3];
        for (slot, part) in fields.iter_mut().zip(&parts) {
            *slot = part
                .parse()
                .map_err(|_| Error::Parse(format!("clock time {text:?}")))?;
        }
        if fields[1] >= 60 || fields[2] >= 60 || fields.iter().any(|v| *v < 0) {
            return Err(Error::Parse(format!("clock time {text:?}")));
        }
        Ok(Self::from_hms(service_date, fields[0], fields[1], fields[2]))
    }

    pub fn service_date(&self) -> NaiveDate {
        self.date
    }

    /// Seconds since midnight of the service date (may exceed 86 400).
    pub fn offset_seconds(&self) -> i64 {
        self.seconds
    }

    fn absolute_seconds(&self) -> i64 {
        self.date.num_days_from_ce() as i64 * DAY_SECONDS + self.seconds
    }

    /// Signed minutes from `earlier` to `self`.
    pub fn minutes_since(&self, earlier: &ServiceTime) -> f64 {
        (self.absolute_seconds() - earlier.absolute_seconds()) as f64 / 60.0
    }

    pub fn plus_minutes(&self, minutes: f64) -> Self {
        Self::new(self.date, self.seconds + (minutes * 60.0).round() as i64)
    }

    /// Calendar date on which this instant falls.
    pub fn calendar_date(&self) -> NaiveDate {
        self.date + Duration::days(self.seconds.div_euclid(DAY_SECONDS))
    }

    /// Hour of the local 24h clock, 0..=23.
    pub fn clock_hour(&self) -> u32 {
        (self.seconds.rem_euclid(DAY_SECONDS) / 3600) as u32
    }

    pub fn is_weekend(&self) -> bool {
        matches!(self.calendar_date().weekday(), Weekday::Sat | Weekday::Sun)
    }

    pub fn month(&self) -> u32 {
        self.calendar_date().month()
    }

    /// `HH:MM:SS` relative to the service date; hours may exceed 23.
    pub fn clock_string(&self) -> String {
        let sign = if self.seconds < 0 { "-" } else { "" };
        let s = self.seconds.abs();
        format!("{sign}{:02}:{:02}:{:02}", s / 3600, (s / 60) % 60, s % 60)
    }
}

impl PartialEq for ServiceTime {
    fn eq(&self, other: &Self) -> bool {
        self.absolute_seconds() == other.absolute_seconds()
    }
}

impl Eq for ServiceTime {}

impl PartialOrd for ServiceTime {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for ServiceTime {
    fn cmp(&self, other: &Self) -> Ordering {
        self.absolute_seconds().cmp(&other.absolute_seconds())
    }
}

impl fmt::Display for ServiceTime {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} {}", self.date, self.clock_string())
    }
}

/// Serialized as `"YYYY-MM-DD HH:MM:SS"` with the offset relative to the date.
impl Serialize for ServiceTime {
    fn serialize<S: Serializer>(&self, serializer: S) -> std::result::Result<S::Ok, S::Error> {
        serializer.serialize_str(&self.to_string())
    }
}

impl<'de> Deserialize<'de> for ServiceTime {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> std::result::Result<Self, D::Error> {
        let text = String::deserialize(deserializer)?;
        let (date, clock) = text
            .split_once(' ')
            .ok_or_else(|| serde::de::Error::custom(format!("timestamp {text:?}")))?;
        let date = NaiveDate::parse_from_str(date, "%Y-%m-%d").map_err(serde::de::Error::custom)?;
        let negative = clock.starts_with('-');
        let t = ServiceTime::parse(clock.trim_start_matches('-'), date)
            .map_err(serde::de::Error::custom)?;
        Ok(if negative {
            ServiceTime::new(date, -t.seconds)
        } else {
            t
        })
    }
}
