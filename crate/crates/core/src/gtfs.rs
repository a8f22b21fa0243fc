//! Minimal GTFS subset reader producing a [`RuntimeTable`].
//!
//! Only `trips.txt`, `stop_times.txt` and `calendar_dates.txt` are read.
//! The train id of a trip is its `trip_short_name` (falling back to
//! `trip_id`), and active dates come from `calendar_dates.txt` rows with
//! `exception_type = 1`.

use std::collections::{BTreeMap, HashMap};
use std::path::Path;

use chrono::NaiveDate;
use serde::Deserialize;

use crate::data::{csv_reader, RuntimeKey, RuntimeTable};
use crate::error::{Error, Result};
use crate::time::ServiceTime;

#[derive(Debug, Deserialize)]
struct TripRow {
    trip_id: String,
    service_id: String,
    #[serde(default)]
    trip_short_name: Option<String>,
}

#[derive(Debug, Deserialize)]
struct StopTimeRow {
    trip_id: String,
    arrival_time: String,
    departure_time: String,
    stop_id: String,
    stop_sequence: u32,
}

#[derive(Debug, Deserialize)]
struct CalendarDateRow {
    service_id: String,
    date: String,
    exception_type: u8,
}

/// Hours from the first departure to each stop, in stop-sequence order.
pub fn trip_runtimes(stop_times: &[(u32, String, String, String)]) -> Result<Vec<(String, f64)>> {
    let anchor = NaiveDate::from_ymd_opt(2000, 1, 1).expect("valid date");
    let mut sorted: Vec<_> = stop_times.iter().collect();
    sorted.sort_by_key(|(seq, ..)| *seq);
    let Some((_, _, first_dep, _)) = sorted.first() else {
        return Ok(Vec::new());
    };
    let start = ServiceTime::parse(first_dep, anchor)?;
    sorted
        .iter()
        .map(|(_, arr, _, stop)| {
            let t = ServiceTime::parse(arr, anchor)?;
            Ok((stop.clone(), t.minutes_since(&start) / 60.0))
        })
        .collect()
}

pub fn read_runtime_table(dir: &Path) -> Result<RuntimeTable> {
    let mut trips = HashMap::new();
    for row in csv_reader(&dir.join("trips.txt"))?.deserialize() {
        let row: TripRow = row?;
        let train_id = row
            .trip_short_name
            .filter(|s| !s.is_empty())
            .unwrap_or_else(|| row.trip_id.clone());
        trips.insert(row.trip_id, (row.service_id, train_id));
    }

    let mut dates: HashMap<String, Vec<NaiveDate>> = HashMap::new();
    for row in csv_reader(&dir.join("calendar_dates.txt"))?.deserialize() {
        let row: CalendarDateRow = row?;
        if row.exception_type != 1 {
            continue;
        }
        let date = NaiveDate::parse_from_str(&row.date, "%Y%m%d")
            .map_err(|e| Error::Parse(format!("calendar date {:?}: {e}", row.date)))?;
        dates.entry(row.service_id).or_default().push(date);
    }

    let mut stops: BTreeMap<String, Vec<(u32, String, String, String)>> = BTreeMap::new();
    for row in csv_reader(&dir.join("stop_times.txt"))?.deserialize() {
        let row: StopTimeRow = row?;
        stops.entry(row.trip_id).or_default().push((
            row.stop_sequence,
            row.arrival_time,
            row.departure_time,
            row.stop_id,
        ));
    }

    let mut entries = Vec::new();
    for (trip_id, stop_times) in &stops {
        let Some((service_id, train_id)) = trips.get(trip_id) else {
            return Err(Error::DataIntegrity(format!("stop_times references unknown trip {trip_id}")));
        };
        let runtimes = trip_runtimes(stop_times)?;
        let total = runtimes.last().map(|(_, h)| *h).unwrap_or(0.0);
        for date in dates.get(service_id).into_iter().flatten() {
            for (station, to_here) in &runtimes {
                entries.push((
                    RuntimeKey {
                        train_id: train_id.clone(),
                        service_date: *date,
                        station: station.clone(),
                    },
                    *to_here,
                    total,
                ));
            }
        }
    }
    RuntimeTable::from_entries(entries)
}
