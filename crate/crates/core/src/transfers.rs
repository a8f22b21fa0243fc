//! Transfer enumeration, reached/missed labels and transfer-model features.

use std::collections::BTreeMap;
use std::path::Path;

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};

use crate::data::{classify_train_type, csv_reader, csv_writer, RuleSet, TrainEvent, TrainType};
use crate::error::{Error, Result};
use crate::time::ServiceTime;

/// Transfer window on planned transfer time, minutes, both ends inclusive.
pub const MIN_PTT: f64 = 3.0;
pub const MAX_PTT: f64 = 60.0;
/// Minimum actual gap between arrival and departure for a reached transfer.
pub const MIN_ACTUAL_GAP: f64 = 3.0;
/// Arriving trains with a total runtime below this many hours are "short".
pub const SHORT_TRAIN_HOURS: f64 = 2.0;

pub const FEATURE_NAMES: [&str; 7] = [
    "ptt",
    "prev_ptt_diff",
    "weekend",
    "arr_intercity_hour",
    "arr_short_train",
    "arr_intercity_winter",
    "dep_intercity_train",
];
pub const PTT_FEATURE: usize = 0;
pub const PREV_PTT_DIFF_FEATURE: usize = 1;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TransferFeatures {
    pub ptt: f64,
    pub prev_ptt_diff: Option<f64>,
    pub weekend: bool,
    pub arr_intercity_hour: u32,
    pub arr_short_train: bool,
    pub arr_intercity_winter: bool,
    pub dep_intercity_train: bool,
}

impl TransferFeatures {
    /// Dense vector in [`FEATURE_NAMES`] order; NA becomes NaN.
    pub fn to_vector(&self) -> Vec<f64> {
        let flag = |b: bool| if b { 1.0 } else { 0.0 };
        vec![
            self.ptt,
            self.prev_ptt_diff.unwrap_or(f64::NAN),
            flag(self.weekend),
            self.arr_intercity_hour as f64,
            flag(self.arr_short_train),
            flag(self.arr_intercity_winter),
            flag(self.dep_intercity_train),
        ]
    }
}

/// What the features need to know about the incoming train.
#[derive(Debug, Clone, Copy)]
pub struct ArrivingTrain {
    pub train_type: TrainType,
    pub scheduled_arrival: ServiceTime,
    pub total_runtime: Option<f64>,
}

#[derive(Debug, Clone, Copy)]
pub struct DepartingTrain {
    pub train_type: TrainType,
    pub scheduled_departure: ServiceTime,
}

pub fn planned_transfer_time(arr: &ArrivingTrain, dep: &DepartingTrain) -> f64 {
    dep.scheduled_departure.minutes_since(&arr.scheduled_arrival)
}

/// Features for an arrival/departure pair. `prev_ptt` is the planned transfer
/// time of a previously missed transfer at the same station, if any.
/// A missing total runtime is treated as not short.
pub fn transfer_features(
    arr: &ArrivingTrain,
    dep: &DepartingTrain,
    prev_ptt: Option<f64>,
) -> TransferFeatures {
    let ptt = planned_transfer_time(arr, dep);
    let intercity = arr.train_type.is_intercity();
    let month = arr.scheduled_arrival.month();
    TransferFeatures {
        ptt,
        prev_ptt_diff: prev_ptt.map(|p| ptt - p),
        weekend: arr.scheduled_arrival.is_weekend(),
        arr_intercity_hour: if intercity {
            arr.scheduled_arrival.clock_hour()
        } else {
            0
        },
        arr_short_train: arr.total_runtime.is_some_and(|h| h < SHORT_TRAIN_HOURS),
        arr_intercity_winter: intercity && matches!(month, 12 | 1 | 2),
        dep_intercity_train: dep.train_type.is_intercity(),
    }
}

pub fn build_features(
    arr: &ArrivingTrain,
    dep: &DepartingTrain,
    prev_transfer: Option<&TransferRecord>,
) -> TransferFeatures {
    transfer_features(arr, dep, prev_transfer.map(|p| p.ptt))
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct EventKey {
    pub train_id: String,
    pub service_date: NaiveDate,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TransferRecord {
    pub station: String,
    pub arrival: EventKey,
    pub departure: EventKey,
    pub ptt: f64,
    /// Actual departure minus actual arrival, minutes; `None` when either
    /// actual time is missing.
    pub actual_gap: Option<f64>,
    pub features: TransferFeatures,
}

impl TransferRecord {
    pub fn reached(&self) -> Option<bool> {
        label_reached(self)
    }

    /// Training target: 1 for a missed transfer, 0 for reached.
    pub fn missed_label(&self) -> Option<f64> {
        self.reached().map(|r| if r { 0.0 } else { 1.0 })
    }
}

pub fn label_reached(rec: &TransferRecord) -> Option<bool> {
    rec.actual_gap.map(|gap| gap >= MIN_ACTUAL_GAP)
}

pub fn reached_from_actuals(actual_arrival: ServiceTime, actual_departure: ServiceTime) -> bool {
    actual_departure.minutes_since(&actual_arrival) >= MIN_ACTUAL_GAP
}

fn arriving(event: &TrainEvent, rules: &RuleSet) -> Option<ArrivingTrain> {
    Some(ArrivingTrain {
        train_type: classify_train_type(event, rules),
        scheduled_arrival: event.scheduled_arrival?,
        total_runtime: event.total_runtime,
    })
}

fn departing(event: &TrainEvent, rules: &RuleSet) -> Option<DepartingTrain> {
    Some(DepartingTrain {
        train_type: classify_train_type(event, rules),
        scheduled_departure: event.scheduled_departure?,
    })
}

/// All (arrival, departure) pairs at one station whose planned transfer time
/// lies in `[MIN_PTT, MAX_PTT]`, excluding pairs of the same train. Output is
/// ordered by arrival input order, then departure time.
pub fn enumerate_transfers(
    arrivals: &[TrainEvent],
    departures: &[TrainEvent],
    rules: &RuleSet,
) -> Vec<TransferRecord> {
    let mut deps: Vec<(&TrainEvent, DepartingTrain)> = departures
        .iter()
        .filter_map(|e| departing(e, rules).map(|d| (e, d)))
        .collect();
    deps.sort_by(|a, b| {
        a.1.scheduled_departure
            .cmp(&b.1.scheduled_departure)
            .then_with(|| a.0.train_id.cmp(&b.0.train_id))
    });

    let mut out = Vec::new();
    for arr_event in arrivals {
        let Some(arr) = arriving(arr_event, rules) else {
            continue;
        };
        let earliest = arr.scheduled_arrival.plus_minutes(MIN_PTT);
        let start = deps.partition_point(|(_, d)| d.scheduled_departure < earliest);
        for (dep_event, dep) in &deps[start..] {
            let ptt = planned_transfer_time(&arr, dep);
            if ptt > MAX_PTT {
                break;
            }
            if dep_event.train_id == arr_event.train_id || dep_event.station != arr_event.station {
                continue;
            }
            let actual_gap = match (arr_event.actual_arrival, dep_event.actual_departure) {
                (Some(a), Some(d)) => Some(d.minutes_since(&a)),
                _ => None,
            };
            out.push(TransferRecord {
                station: arr_event.station.clone(),
                arrival: EventKey {
                    train_id: arr_event.train_id.clone(),
                    service_date: arr_event.service_date,
                },
                departure: EventKey {
                    train_id: dep_event.train_id.clone(),
                    service_date: dep_event.service_date,
                },
                ptt,
                actual_gap,
                features: transfer_features(&arr, dep, None),
            });
        }
    }
    out
}

/// Alternative-transfer records: each missed transfer is paired with every
/// later candidate departure of the same arrival, which is copied with
/// `prev_ptt_diff` set relative to the missed one.
pub fn alternative_records(first_attempts: &[TransferRecord]) -> Vec<TransferRecord> {
    let mut by_arrival: BTreeMap<(&str, &EventKey), Vec<&TransferRecord>> = BTreeMap::new();
    for rec in first_attempts {
        by_arrival
            .entry((rec.station.as_str(), &rec.arrival))
            .or_default()
            .push(rec);
    }
    let mut out = Vec::new();
    for group in by_arrival.values_mut() {
        group.sort_by(|a, b| a.ptt.total_cmp(&b.ptt));
        for (i, missed) in group.iter().enumerate() {
            if missed.reached() != Some(false) {
                continue;
            }
            for later in &group[i + 1..] {
                if later.ptt <= missed.ptt {
                    continue;
                }
                let mut alt = (*later).clone();
                alt.features.prev_ptt_diff = Some(later.ptt - missed.ptt);
                out.push(alt);
            }
        }
    }
    out
}

/// Transfer dataset for a whole corpus: first attempts at every station
/// followed by their alternative records.
pub fn build_transfer_dataset(events: &[TrainEvent], rules: &RuleSet) -> Vec<TransferRecord> {
    let mut by_station: BTreeMap<&str, Vec<&TrainEvent>> = BTreeMap::new();
    for event in events {
        by_station.entry(&event.station).or_default().push(event);
    }
    let mut out = Vec::new();
    for station_events in by_station.values() {
        let owned: Vec<TrainEvent> = station_events.iter().map(|e| (*e).clone()).collect();
        let arrivals: Vec<TrainEvent> = owned
            .iter()
            .filter(|e| e.scheduled_arrival.is_some())
            .cloned()
            .collect();
        let departures: Vec<TrainEvent> = owned
            .into_iter()
            .filter(|e| e.scheduled_departure.is_some())
            .collect();
        let first = enumerate_transfers(&arrivals, &departures, rules);
        let alts = alternative_records(&first);
        out.extend(first);
        out.extend(alts);
    }
    out
}

#[derive(Debug, Serialize, Deserialize)]
struct TransferRow {
    station: String,
    arr_train_id: String,
    arr_service_date: NaiveDate,
    dep_train_id: String,
    dep_service_date: NaiveDate,
    ptt: f64,
    prev_ptt_diff: Option<f64>,
    weekend: u8,
    arr_intercity_hour: u32,
    arr_short_train: u8,
    arr_intercity_winter: u8,
    dep_intercity_train: u8,
    actual_gap: Option<f64>,
    reached: Option<u8>,
}

fn flag(b: bool) -> u8 {
    b as u8
}

fn parse_flag(v: u8, name: &str) -> Result<bool> {
    match v {
        0 => Ok(false),
        1 => Ok(true),
        _ => Err(Error::Parse(format!("{name} must be 0 or 1, got {v}"))),
    }
}

pub fn write_transfers_csv(
    path: &Path,
    records: &[TransferRecord],
    header_comment: Option<&str>,
) -> Result<()> {
    let mut writer = csv_writer(path, header_comment)?;
    for r in records {
        let f = &r.features;
        writer.serialize(TransferRow {
            station: r.station.clone(),
            arr_train_id: r.arrival.train_id.clone(),
            arr_service_date: r.arrival.service_date,
            dep_train_id: r.departure.train_id.clone(),
            dep_service_date: r.departure.service_date,
            ptt: r.ptt,
            prev_ptt_diff: f.prev_ptt_diff,
            weekend: flag(f.weekend),
            arr_intercity_hour: f.arr_intercity_hour,
            arr_short_train: flag(f.arr_short_train),
            arr_intercity_winter: flag(f.arr_intercity_winter),
            dep_intercity_train: flag(f.dep_intercity_train),
            actual_gap: r.actual_gap,
            reached: r.reached().map(flag),
        })?;
    }
    writer.flush().map_err(|e| Error::io(path, e))?;
    Ok(())
}

pub fn read_transfers_csv(path: &Path) -> Result<Vec<TransferRecord>> {
    let mut reader = csv_reader(path)?;
    let mut out = Vec::new();
    for row in reader.deserialize() {
        let row: TransferRow = row?;
        let features = TransferFeatures {
            ptt: row.ptt,
            prev_ptt_diff: row.prev_ptt_diff,
            weekend: parse_flag(row.weekend, "weekend")?,
            arr_intercity_hour: row.arr_intercity_hour,
            arr_short_train: parse_flag(row.arr_short_train, "arr_short_train")?,
            arr_intercity_winter: parse_flag(row.arr_intercity_winter, "arr_intercity_winter")?,
            dep_intercity_train: parse_flag(row.dep_intercity_train, "dep_intercity_train")?,
        };
        let mut actual_gap = row.actual_gap;
        // Synthetic or externally labelled rows may carry only the label.
        if actual_gap.is_none() {
            if let Some(r) = row.reached {
                actual_gap = Some(if parse_flag(r, "reached")? { MIN_ACTUAL_GAP } else { 0.0 });
            }
        }
        out.push(TransferRecord {
            station: row.station,
            arrival: EventKey {
                train_id: row.arr_train_id,
                service_date: row.arr_service_date,
            },
            departure: EventKey {
                train_id: row.dep_train_id,
                service_date: row.dep_service_date,
            },
            ptt: row.ptt,
            actual_gap,
            features,
        });
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn date() -> NaiveDate {
        // Tuesday
        NaiveDate::from_ymd_opt(2024, 7, 16).unwrap()
    }

    fn ev(train: &str, arr: Option<&str>, dep: Option<&str>) -> TrainEvent {
        let t = |s: Option<&str>| s.map(|s| ServiceTime::parse(s, date()).unwrap());
        TrainEvent {
            train_id: train.into(),
            operator: "SJ".into(),
            train_category: "Regional".into(),
            station: "Av".into(),
            service_date: date(),
            scheduled_arrival: t(arr),
            scheduled_departure: t(dep),
            actual_arrival: t(arr),
            actual_departure: t(dep),
            origin: "O".into(),
            destination: "D".into(),
            runtime_to_here: Some(1.0),
            total_runtime: Some(3.0),
        }
    }

    #[test]
    fn window_selects_13_minute_pair() {
        let arrivals = vec![ev("a", Some("13:26"), None)];
        let deps = vec![
            ev("b", None, Some("13:28")),
            ev("c", None, Some("13:39")),
            ev("d", None, Some("14:30")),
        ];
        let recs = enumerate_transfers(&arrivals, &deps, &RuleSet::default());
        assert_eq!(recs.len(), 1);
        assert_eq!(recs[0].departure.train_id, "c");
        assert_eq!(recs[0].ptt, 13.0);
    }

    #[test]
    fn window_bounds_inclusive_and_same_train_excluded() {
        let arrivals = vec![ev("a", Some("10:00"), Some("10:05"))];
        let deps = vec![
            ev("a", Some("10:00"), Some("10:05")),
            ev("x", None, Some("10:03")),
            ev("y", None, Some("11:00")),
            ev("z", None, Some("11:00:01")),
            ev("w", None, Some("10:02:59")),
        ];
        let recs = enumerate_transfers(&arrivals, &deps, &RuleSet::default());
        let ptts: Vec<f64> = recs.iter().map(|r| r.ptt).collect();
        assert_eq!(ptts, vec![3.0, 60.0]);
    }

    fn rec_with_gap(gap: Option<f64>) -> TransferRecord {
        let arr = ArrivingTrain {
            train_type: TrainType::Regional,
            scheduled_arrival: ServiceTime::from_hms(date(), 12, 0, 0),
            total_runtime: None,
        };
        let dep = DepartingTrain {
            train_type: TrainType::Regional,
            scheduled_departure: ServiceTime::from_hms(date(), 12, 10, 0),
        };
        TransferRecord {
            station: "S".into(),
            arrival: EventKey { train_id: "a".into(), service_date: date() },
            departure: EventKey { train_id: "b".into(), service_date: date() },
            ptt: 10.0,
            actual_gap: gap,
            features: transfer_features(&arr, &dep, None),
        }
    }

    #[test]
    fn reached_labels() {
        let t = |h, m| ServiceTime::from_hms(date(), h, m, 0);
        assert!(reached_from_actuals(t(12, 0), t(12, 3)));
        assert!(!reached_from_actuals(t(12, 0), t(12, 2)));
        assert!(!reached_from_actuals(t(12, 5), t(12, 0)));
        assert_eq!(label_reached(&rec_with_gap(Some(3.0))), Some(true));
        assert_eq!(label_reached(&rec_with_gap(Some(2.99))), Some(false));
        assert_eq!(label_reached(&rec_with_gap(None)), None);
    }

    #[test]
    fn feature_rules() {
        let ic = ArrivingTrain {
            train_type: TrainType::Intercity,
            scheduled_arrival: ServiceTime::from_hms(date(), 14, 37, 0),
            total_runtime: Some(3.5),
        };
        let dep = DepartingTrain {
            train_type: TrainType::Regional,
            scheduled_departure: ServiceTime::from_hms(date(), 14, 47, 0),
        };
        let f = transfer_features(&ic, &dep, None);
        assert_eq!(f.arr_intercity_hour, 14);
        assert!(!f.weekend && !f.arr_short_train && !f.arr_intercity_winter && !f.dep_intercity_train);
        assert_eq!(f.prev_ptt_diff, None);

        let regional = ArrivingTrain { train_type: TrainType::Regional, ..ic };
        assert_eq!(transfer_features(&regional, &dep, None).arr_intercity_hour, 0);

        let winter = ArrivingTrain {
            scheduled_arrival: ServiceTime::from_hms(NaiveDate::from_ymd_opt(2024, 1, 13).unwrap(), 9, 0, 0),
            total_runtime: Some(1.5),
            ..ic
        };
        let wdep = DepartingTrain {
            train_type: TrainType::Intercity,
            scheduled_departure: winter.scheduled_arrival.plus_minutes(30.0),
        };
        let f = transfer_features(&winter, &wdep, None);
        assert!(f.arr_intercity_winter && f.weekend && f.arr_short_train && f.dep_intercity_train);
    }

    #[test]
    fn prev_ptt_diff_from_missed_transfer() {
        let arr = ArrivingTrain {
            train_type: TrainType::Regional,
            scheduled_arrival: ServiceTime::from_hms(date(), 12, 0, 0),
            total_runtime: Some(1.0),
        };
        let dep = DepartingTrain {
            train_type: TrainType::Regional,
            scheduled_departure: ServiceTime::from_hms(date(), 12, 30, 0),
        };
        let missed = rec_with_gap(Some(0.0));
        assert_eq!(build_features(&arr, &dep, Some(&missed)).prev_ptt_diff, Some(20.0));
        assert_eq!(build_features(&arr, &dep, None).prev_ptt_diff, None);
    }

    #[test]
    fn alternatives_follow_missed_transfers() {
        let mut arr = ev("a", Some("10:00"), None);
        arr.actual_arrival = Some(ServiceTime::from_hms(date(), 10, 15, 0));
        let deps = vec![
            ev("b", None, Some("10:10")),
            ev("c", None, Some("10:16")),
            ev("d", None, Some("10:40")),
        ];
        let first = enumerate_transfers(&[arr], &deps, &RuleSet::default());
        let reached: Vec<_> = first.iter().map(|r| r.reached().unwrap()).collect();
        assert_eq!(reached, vec![false, false, true]);
        let alts = alternative_records(&first);
        let diffs: Vec<_> = alts
            .iter()
            .map(|r| (r.departure.train_id.as_str(), r.features.prev_ptt_diff.unwrap()))
            .collect();
        assert_eq!(diffs, vec![("c", 6.0), ("d", 30.0), ("d", 24.0)]);
        assert!(alts.iter().all(|r| r.features.prev_ptt_diff.unwrap() > 0.0));
    }

    #[test]
    fn csv_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("t.csv");
        let mut a = rec_with_gap(Some(1.5));
        a.features.prev_ptt_diff = Some(4.0);
        let recs = vec![a, rec_with_gap(None)];
        write_transfers_csv(&path, &recs, None).unwrap();
        assert_eq!(read_transfers_csv(&path).unwrap(), recs);
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #[test]
            fn every_record_in_window(
                arr_min in prop::collection::vec(300i64..1200, 1..10),
                dep_min in prop::collection::vec(300i64..1300, 1..20),
            ) {
                let at = |m: i64| format!("{:02}:{:02}", m / 60, m % 60);
                let arrivals: Vec<_> = arr_min.iter().enumerate()
                    .map(|(i, m)| ev(&format!("a{i}"), Some(&at(*m)), None)).collect();
                let deps: Vec<_> = dep_min.iter().enumerate()
                    .map(|(i, m)| ev(&format!("d{i}"), None, Some(&at(*m)))).collect();
                let recs = enumerate_transfers(&arrivals, &deps, &RuleSet::default());
                let expected = arr_min.iter()
                    .map(|a| dep_min.iter().filter(|d| (3..=60).contains(&(*d - a))).count())
                    .sum::<usize>();
                prop_assert_eq!(recs.len(), expected);
                for r in &recs {
                    prop_assert!(r.ptt >= MIN_PTT && r.ptt <= MAX_PTT);
                }
            }
        }
    }
}
