//! Train stop events: ingestion, delay computation, train-type rules and
//! the filtering applied before any model sees the data.

use std::collections::btree_map::Entry;
use std::collections::BTreeMap;
use std::path::Path;

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::time::ServiceTime;

/// One train stopping at one station.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainEvent {
    pub train_id: String,
    pub operator: String,
    pub train_category: String,
    pub station: String,
    pub service_date: NaiveDate,
    pub scheduled_arrival: Option<ServiceTime>,
    pub scheduled_departure: Option<ServiceTime>,
    pub actual_arrival: Option<ServiceTime>,
    pub actual_departure: Option<ServiceTime>,
    pub origin: String,
    pub destination: String,
    /// Hours from the origin to this station.
    pub runtime_to_here: Option<f64>,
    /// Hours from origin to final destination.
    pub total_runtime: Option<f64>,
}

impl TrainEvent {
    pub fn arrival_delay(&self) -> Result<ArrivalDelay> {
        compute_delay(self.scheduled_arrival, self.actual_arrival)
    }

    pub fn departure_delay(&self) -> Result<ArrivalDelay> {
        compute_delay(self.scheduled_departure, self.actual_departure)
    }

    /// Key used to join against a [`RuntimeTable`].
    pub fn runtime_key(&self) -> RuntimeKey {
        RuntimeKey {
            train_id: self.train_id.clone(),
            service_date: self.service_date,
            station: self.station.clone(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum TrainType {
    Intercity,
    Regional,
    Excluded,
}

impl TrainType {
    pub fn is_intercity(self) -> bool {
        self == TrainType::Intercity
    }
}

/// Signed delay in minutes.
#[derive(Debug, Clone, Copy, PartialEq, PartialOrd, Serialize, Deserialize)]
pub struct ArrivalDelay(pub f64);

impl ArrivalDelay {
    pub fn minutes(self) -> f64 {
        self.0
    }
}

pub fn compute_delay(
    scheduled: Option<ServiceTime>,
    actual: Option<ServiceTime>,
) -> Result<ArrivalDelay> {
    match (scheduled, actual) {
        (Some(s), Some(a)) => Ok(ArrivalDelay(a.minutes_since(&s))),
        (None, _) => Err(Error::MissingData("scheduled time".into())),
        (_, None) => Err(Error::MissingData("actual time".into())),
    }
}

/// Operator/category rules deciding which trains are intercity, regional or
/// excluded from the analysis altogether.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RuleSet {
    /// Operators whose every train counts as intercity.
    pub intercity_operators: Vec<String>,
    /// Per-operator categories that count as intercity.
    pub intercity_categories: BTreeMap<String, Vec<String>>,
    /// Categories dropped from the data (night, museum and special trains).
    pub excluded_categories: Vec<String>,
    /// Categories known to be regional. Anything unlisted still defaults to
    /// regional but is counted as unknown.
    pub regional_categories: Vec<String>,
}

impl Default for RuleSet {
    fn default() -> Self {
        let strings = |xs: &[&str]| xs.iter().map(|s| s.to_string()).collect::<Vec<_>>();
        Self {
            intercity_operators: strings(&["Snälltåget", "VR"]),
            intercity_categories: BTreeMap::from([("SJ".to_string(), strings(&["IC", "Snabbtåg"]))]),
            excluded_categories: strings(&["Nattåg", "Museitåg", "Specialtåg", "Chartertåg"]),
            regional_categories: strings(&["Regional", "Regionaltåg", "Pendeltåg", "Lokaltåg"]),
        }
    }
}

fn same_label(a: &str, b: &str) -> bool {
    a.trim().to_lowercase() == b.trim().to_lowercase()
}

fn listed(list: &[String], label: &str) -> bool {
    list.iter().any(|l| same_label(l, label))
}

impl RuleSet {
    pub fn from_json_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Ok(serde_json::from_str(&text)?)
    }

    pub fn classify(&self, operator: &str, category: &str) -> TrainType {
        if listed(&self.excluded_categories, category) {
            return TrainType::Excluded;
        }
        if listed(&self.intercity_operators, operator) {
            return TrainType::Intercity;
        }
        let ic_category = self
            .intercity_categories
            .iter()
            .any(|(op, cats)| same_label(op, operator) && listed(cats, category));
        if ic_category {
            TrainType::Intercity
        } else {
            TrainType::Regional
        }
    }

    /// Whether the category appears anywhere in the rule set.
    pub fn is_known(&self, operator: &str, category: &str) -> bool {
        listed(&self.excluded_categories, category)
            || listed(&self.regional_categories, category)
            || listed(&self.intercity_operators, operator)
            || self.intercity_categories.values().any(|c| listed(c, category))
    }
}

pub fn classify_train_type(event: &TrainEvent, rules: &RuleSet) -> TrainType {
    rules.classify(&event.operator, &event.train_category)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DropReason {
    ExcludedTrainType,
    InconsistentSchedule,
    MissingRuntime,
    FaultyRuntime,
    MissingActual,
    ImplausibleDelay,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FilterConfig {
    pub min_delay_minutes: f64,
    pub max_delay_minutes: f64,
    #[serde(default)]
    pub rules: RuleSet,
}

impl Default for FilterConfig {
    fn default() -> Self {
        Self {
            min_delay_minutes: -60.0,
            max_delay_minutes: 600.0,
            rules: RuleSet::default(),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct FilterReport {
    pub input: usize,
    pub kept: usize,
    pub dropped: BTreeMap<DropReason, usize>,
    /// Kept or dropped events whose category is not named by the rule set.
    pub unknown_categories: usize,
}

impl FilterReport {
    pub fn dropped_total(&self) -> usize {
        self.dropped.values().sum()
    }
}

/// First reason an event fails the filter, if any.
pub fn drop_reason(event: &TrainEvent, config: &FilterConfig) -> Option<DropReason> {
    if classify_train_type(event, &config.rules) == TrainType::Excluded {
        return Some(DropReason::ExcludedTrainType);
    }
    match (event.scheduled_arrival, event.scheduled_departure) {
        (None, None) => return Some(DropReason::InconsistentSchedule),
        (Some(a), Some(d)) if d < a => return Some(DropReason::InconsistentSchedule),
        _ => {}
    }
    let (to_here, total) = match (event.runtime_to_here, event.total_runtime) {
        (Some(h), Some(t)) => (h, t),
        _ => return Some(DropReason::MissingRuntime),
    };
    if !(to_here.is_finite() && total.is_finite()) || to_here < 0.0 || total < to_here {
        return Some(DropReason::FaultyRuntime);
    }
    let arrival = event.scheduled_arrival.map(|_| event.arrival_delay());
    let departure = event.scheduled_departure.map(|_| event.departure_delay());
    let mut delays = Vec::with_capacity(2);
    for delay in [arrival, departure].into_iter().flatten() {
        match delay {
            Ok(d) => delays.push(d.minutes()),
            Err(_) => return Some(DropReason::MissingActual),
        }
    }
    let plausible = |d: f64| {
        d.is_finite() && d >= config.min_delay_minutes && d <= config.max_delay_minutes
    };
    if !delays.into_iter().all(plausible) {
        return Some(DropReason::ImplausibleDelay);
    }
    None
}

pub fn filter_events(
    events: Vec<TrainEvent>,
    config: &FilterConfig,
) -> (Vec<TrainEvent>, FilterReport) {
    let mut report = FilterReport {
        input: events.len(),
        ..FilterReport::default()
    };
    let mut kept = Vec::with_capacity(events.len());
    for event in events {
        if !config.rules.is_known(&event.operator, &event.train_category) {
            report.unknown_categories += 1;
        }
        match drop_reason(&event, config) {
            Some(reason) => *report.dropped.entry(reason).or_default() += 1,
            None => kept.push(event),
        }
    }
    report.kept = kept.len();
    (kept, report)
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct RuntimeKey {
    pub train_id: String,
    pub service_date: NaiveDate,
    pub station: String,
}

/// `(train, service date, station) -> (runtime to here, total runtime)` in hours.
#[derive(Debug, Clone, Default)]
pub struct RuntimeTable {
    entries: BTreeMap<RuntimeKey, (f64, f64)>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct RuntimeRow {
    train_id: String,
    service_date: NaiveDate,
    station: String,
    runtime_to_here_h: f64,
    total_runtime_h: f64,
}

impl RuntimeTable {
    /// Identical duplicate rows are tolerated; conflicting ones are not.
    pub fn from_entries(
        rows: impl IntoIterator<Item = (RuntimeKey, f64, f64)>,
    ) -> Result<Self> {
        let mut entries = BTreeMap::new();
        for (key, to_here, total) in rows {
            match entries.entry(key) {
                Entry::Vacant(slot) => {
                    slot.insert((to_here, total));
                }
                Entry::Occupied(slot) => {
                    if *slot.get() != (to_here, total) {
                        let k = slot.key();
                        return Err(Error::DataIntegrity(format!(
                            "conflicting runtimes for train {} on {} at {}",
                            k.train_id, k.service_date, k.station
                        )));
                    }
                }
            }
        }
        Ok(Self { entries })
    }

    pub fn get(&self, key: &RuntimeKey) -> Option<(f64, f64)> {
        self.entries.get(key).copied()
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn read_csv(path: &Path) -> Result<Self> {
        let mut reader = csv_reader(path)?;
        let mut rows = Vec::new();
        for row in reader.deserialize() {
            let row: RuntimeRow = row?;
            rows.push((
                RuntimeKey {
                    train_id: row.train_id,
                    service_date: row.service_date,
                    station: row.station,
                },
                row.runtime_to_here_h,
                row.total_runtime_h,
            ));
        }
        Self::from_entries(rows)
    }

    pub fn write_csv(&self, path: &Path, header_comment: Option<&str>) -> Result<()> {
        let mut writer = csv_writer(path, header_comment)?;
        for (key, (to_here, total)) in &self.entries {
            writer.serialize(RuntimeRow {
                train_id: key.train_id.clone(),
                service_date: key.service_date,
                station: key.station.clone(),
                runtime_to_here_h: *to_here,
                total_runtime_h: *total,
            })?;
        }
        writer.flush().map_err(|e| Error::io(path, e))?;
        Ok(())
    }
}

/// Fills runtimes from the table. Unmatched events keep absent runtimes and
/// are later dropped by [`filter_events`].
pub fn join_runtimes(events: Vec<TrainEvent>, table: &RuntimeTable) -> Vec<TrainEvent> {
    events
        .into_iter()
        .map(|mut event| {
            if let Some((to_here, total)) = table.get(&event.runtime_key()) {
                event.runtime_to_here = Some(to_here);
                event.total_runtime = Some(total);
            }
            event
        })
        .collect()
}

/// Flat CSV row. Times are clock strings relative to `service_date`, or
/// ISO 8601 date-times on input.
#[derive(Debug, Clone, Serialize, Deserialize)]
struct EventRow {
    train_id: String,
    operator: String,
    category: String,
    station: String,
    service_date: NaiveDate,
    sched_arr: Option<String>,
    sched_dep: Option<String>,
    act_arr: Option<String>,
    act_dep: Option<String>,
    origin: String,
    destination: String,
    #[serde(default)]
    runtime_to_here_h: Option<f64>,
    #[serde(default)]
    total_runtime_h: Option<f64>,
}

fn parse_opt_time(text: &Option<String>, date: NaiveDate) -> Result<Option<ServiceTime>> {
    match text.as_deref().map(str::trim) {
        None | Some("") | Some("NA") => Ok(None),
        Some(t) => ServiceTime::parse(t, date).map(Some),
    }
}

impl EventRow {
    fn into_event(self) -> Result<TrainEvent> {
        let date = self.service_date;
        Ok(TrainEvent {
            scheduled_arrival: parse_opt_time(&self.sched_arr, date)?,
            scheduled_departure: parse_opt_time(&self.sched_dep, date)?,
            actual_arrival: parse_opt_time(&self.act_arr, date)?,
            actual_departure: parse_opt_time(&self.act_dep, date)?,
            train_id: self.train_id,
            operator: self.operator,
            train_category: self.category,
            station: self.station,
            service_date: date,
            origin: self.origin,
            destination: self.destination,
            runtime_to_here: self.runtime_to_here_h,
            total_runtime: self.total_runtime_h,
        })
    }

    fn from_event(event: &TrainEvent) -> Self {
        let clock = |t: &Option<ServiceTime>| t.map(|t| t.clock_string());
        Self {
            train_id: event.train_id.clone(),
            operator: event.operator.clone(),
            category: event.train_category.clone(),
            station: event.station.clone(),
            service_date: event.service_date,
            sched_arr: clock(&event.scheduled_arrival),
            sched_dep: clock(&event.scheduled_departure),
            act_arr: clock(&event.actual_arrival),
            act_dep: clock(&event.actual_departure),
            origin: event.origin.clone(),
            destination: event.destination.clone(),
            runtime_to_here_h: event.runtime_to_here,
            total_runtime_h: event.total_runtime,
        }
    }
}

pub(crate) fn csv_reader(path: &Path) -> Result<csv::Reader<std::fs::File>> {
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    Ok(csv::ReaderBuilder::new().comment(Some(b'#')).from_reader(file))
}

pub(crate) fn csv_writer(
    path: &Path,
    header_comment: Option<&str>,
) -> Result<csv::Writer<std::fs::File>> {
    use std::io::Write;
    let mut file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    if let Some(comment) = header_comment {
        writeln!(file, "# {comment}").map_err(|e| Error::io(path, e))?;
    }
    Ok(csv::Writer::from_writer(file))
}

/// Reads events with the columns `train_id, operator, category, station,
/// service_date, sched_arr, sched_dep, act_arr, act_dep, origin, destination`
/// and optionally `runtime_to_here_h, total_runtime_h`.
pub fn read_events_csv(path: &Path) -> Result<Vec<TrainEvent>> {
    let mut reader = csv_reader(path)?;
    let mut events = Vec::new();
    for (line, row) in reader.deserialize::<EventRow>().enumerate() {
        let event = row?
            .into_event()
            .map_err(|e| Error::Parse(format!("{} row {}: {e}", path.display(), line + 1)))?;
        events.push(event);
    }
    Ok(events)
}

pub fn write_events_csv(
    path: &Path,
    events: &[TrainEvent],
    header_comment: Option<&str>,
) -> Result<()> {
    let mut writer = csv_writer(path, header_comment)?;
    for event in events {
        writer.serialize(EventRow::from_event(event))?;
    }
    writer.flush().map_err(|e| Error::io(path, e))?;
    Ok(())
}
