//! Monte Carlo sampling of the arrival delay of a planned journey.
//!
//! A journey is walked transfer by transfer. At each transfer the transfer
//! model gives the probability of reaching the planned connection; a miss
//! asks an [`AlternativesProvider`] for a replacement plan from the current
//! station, and the next attempt carries the planned-transfer-time
//! difference to the missed one. Once the destination is reached the delay
//! model draws the arrival delay of the last train used, and the sample is
//! that delay plus the schedule shift caused by any re-planning.

use std::collections::BTreeMap;
use std::fmt;
use std::path::Path;

use chrono::NaiveDate;
use rand::Rng as _;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{RuleSet, TrainEvent, TrainType};
use crate::delay::{DelayFeatures, MixturePosterior};
use crate::error::{Error, Result};
use crate::gbt::BoostedModel;
use crate::rng::{stream_rng, Rng};
use crate::time::ServiceTime;
use crate::transfers::{transfer_features, ArrivingTrain, DepartingTrain, TransferFeatures, MAX_PTT, MIN_PTT};

/// Consecutive misses at one station after which a journey is abandoned.
pub const MISS_CUTOFF: usize = 3;

/// One train ridden from `board` to `alight`.
#[derive(Debug, Clone, PartialEq)]
pub struct Leg {
    pub train_id: String,
    pub operator: String,
    pub category: String,
    pub train_type: TrainType,
    pub board: String,
    pub alight: String,
    pub departure: ServiceTime,
    pub arrival: ServiceTime,
    /// Hours from the train's origin to its final destination.
    pub total_runtime: f64,
}

impl Leg {
    pub fn arriving(&self) -> ArrivingTrain {
        ArrivingTrain {
            train_type: self.train_type,
            scheduled_arrival: self.arrival,
            total_runtime: Some(self.total_runtime),
        }
    }

    pub fn departing(&self) -> DepartingTrain {
        DepartingTrain {
            train_type: self.train_type,
            scheduled_departure: self.departure,
        }
    }

    pub fn delay_features(&self) -> DelayFeatures {
        DelayFeatures::for_arrival(self.train_type, self.arrival, self.total_runtime)
    }

    /// The same leg `minutes` later.
    pub fn shifted(&self, minutes: f64) -> Leg {
        Leg {
            departure: self.departure.plus_minutes(minutes),
            arrival: self.arrival.plus_minutes(minutes),
            ..self.clone()
        }
    }
}

/// Planned path of `legs`: train ids joined by `>`.
pub fn path_signature(legs: &[Leg]) -> String {
    legs.iter().map(|l| l.train_id.as_str()).collect::<Vec<_>>().join(">")
}

#[derive(Debug, Clone, PartialEq)]
pub struct JourneySpec {
    legs: Vec<Leg>,
}

impl JourneySpec {
    /// Validates that legs connect, run forward in time and that every
    /// transfer lies in the planned-transfer-time window.
    pub fn new(legs: Vec<Leg>) -> Result<Self> {
        if legs.is_empty() {
            return Err(Error::Config("journey has no legs".into()));
        }
        for (i, leg) in legs.iter().enumerate() {
            if leg.arrival <= leg.departure {
                return Err(Error::Config(format!("leg {i} ({}) does not arrive after it departs", leg.train_id)));
            }
        }
        for (i, pair) in legs.windows(2).enumerate() {
            let (a, b) = (&pair[0], &pair[1]);
            if a.alight != b.board {
                return Err(Error::Config(format!(
                    "leg {i} alights at {} but leg {} boards at {}",
                    a.alight,
                    i + 1,
                    b.board
                )));
            }
            let ptt = b.departure.minutes_since(&a.arrival);
            if !(MIN_PTT..=MAX_PTT).contains(&ptt) {
                return Err(Error::Config(format!(
                    "transfer at {} has planned transfer time {ptt} min outside [{MIN_PTT}, {MAX_PTT}]",
                    a.alight
                )));
            }
        }
        Ok(Self { legs })
    }

    pub fn legs(&self) -> &[Leg] {
        &self.legs
    }

    pub fn destination(&self) -> &str {
        &self.legs.last().expect("non-empty").alight
    }

    pub fn scheduled_final_arrival(&self) -> ServiceTime {
        self.legs.last().expect("non-empty").arrival
    }

    pub fn signature(&self) -> String {
        path_signature(&self.legs)
    }

    pub fn from_json(text: &str, rules: &RuleSet) -> Result<Self> {
        let input: JourneyInput = serde_json::from_str(text)?;
        let legs = input
            .legs
            .into_iter()
            .map(|l| l.into_leg(rules))
            .collect::<Result<Vec<_>>>()?;
        Self::new(legs)
    }

    pub fn load(path: &Path, rules: &RuleSet) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text, rules)
    }

    pub fn to_json(&self, config_hash: Option<&str>) -> Result<String> {
        let input = JourneyInput {
            legs: self.legs.iter().map(LegInput::from_leg).collect(),
            config_hash: config_hash.map(str::to_string),
        };
        Ok(serde_json::to_string_pretty(&input)?)
    }
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct JourneyInput {
    legs: Vec<LegInput>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    config_hash: Option<String>,
}

/// Leg as written in journey files; times are `HH:MM[:SS]` on the service
/// date, hours past 24 allowed.
#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct LegInput {
    train_id: String,
    operator: String,
    category: String,
    service_date: NaiveDate,
    board: String,
    alight: String,
    departure: String,
    arrival: String,
    total_runtime_h: f64,
}

impl LegInput {
    fn into_leg(self, rules: &RuleSet) -> Result<Leg> {
        Ok(Leg {
            train_type: rules.classify(&self.operator, &self.category),
            departure: ServiceTime::parse(&self.departure, self.service_date)?,
            arrival: ServiceTime::parse(&self.arrival, self.service_date)?,
            train_id: self.train_id,
            operator: self.operator,
            category: self.category,
            board: self.board,
            alight: self.alight,
            total_runtime: self.total_runtime_h,
        })
    }

    fn from_leg(leg: &Leg) -> Self {
        Self {
            train_id: leg.train_id.clone(),
            operator: leg.operator.clone(),
            category: leg.category.clone(),
            service_date: leg.departure.service_date(),
            board: leg.board.clone(),
            alight: leg.alight.clone(),
            departure: leg.departure.clock_string(),
            arrival: leg.arrival.clock_string(),
            total_runtime_h: leg.total_runtime,
        }
    }
}

/// Probability of reaching a connection.
pub trait TransferModel: Sync {
    fn reach_probability(&self, features: &TransferFeatures) -> f64;
}

impl TransferModel for BoostedModel {
    fn reach_probability(&self, features: &TransferFeatures) -> f64 {
        1.0 - self
            .predict_features(features)
            .expect("transfer model was trained on the transfer feature schema")
    }
}

/// Every transfer is reached with the same probability.
#[derive(Debug, Clone, Copy)]
pub struct ConstantTransfer(pub f64);

impl TransferModel for ConstantTransfer {
    fn reach_probability(&self, _: &TransferFeatures) -> f64 {
        self.0
    }
}

/// Arrival delay of the final train used.
pub trait DelayModel: Sync {
    fn sample_final_delay(&self, leg: &Leg, rng: &mut Rng) -> f64;
}

impl DelayModel for MixturePosterior {
    fn sample_final_delay(&self, leg: &Leg, rng: &mut Rng) -> f64 {
        let x = self.feature_set.covariates(&leg.delay_features());
        self.sample_delay(&x, rng)
    }
}

/// Every train arrives exactly `0.0` minutes late, or any fixed value.
#[derive(Debug, Clone, Copy)]
pub struct FixedDelay(pub f64);

impl DelayModel for FixedDelay {
    fn sample_final_delay(&self, _: &Leg, _: &mut Rng) -> f64 {
        self.0
    }
}

/// Replacement route after a missed connection.
pub trait AlternativesProvider: Sync {
    /// `so_far` is the journey actually taken followed by the missed leg;
    /// `downstream` the planned legs after the missed one. Returns legs from
    /// the missed leg's boarding station to `destination`, or `None`.
    fn alternative(&self, so_far: &[Leg], downstream: &[Leg], destination: &str) -> Option<Vec<Leg>>;
}

/// Clock-face service: the missed leg and everything after it run again
/// `minutes` later. Replacement trains are named `<id>@+<minutes>`.
#[derive(Debug, Clone, Copy)]
pub struct ShiftedAlternatives {
    pub minutes: f64,
}

impl AlternativesProvider for ShiftedAlternatives {
    fn alternative(&self, so_far: &[Leg], downstream: &[Leg], _: &str) -> Option<Vec<Leg>> {
        let missed = so_far.last()?;
        Some(
            std::iter::once(missed)
                .chain(downstream)
                .map(|l| Leg {
                    train_id: format!("{}@+{}", l.train_id, self.minutes),
                    ..l.shifted(self.minutes)
                })
                .collect(),
        )
    }
}

/// No alternatives: every miss abandons the journey.
#[derive(Debug, Clone, Copy)]
pub struct NoAlternatives;

impl AlternativesProvider for NoAlternatives {
    fn alternative(&self, _: &[Leg], _: &[Leg], _: &str) -> Option<Vec<Leg>> {
        None
    }
}

/// Scheduled legs indexed by `(board, alight)` and sorted by departure.
#[derive(Debug, Clone, Default)]
pub struct Timetable {
    by_pair: BTreeMap<(String, String), Vec<Leg>>,
}

impl Timetable {
    pub fn from_legs(legs: impl IntoIterator<Item = Leg>) -> Self {
        let mut by_pair: BTreeMap<(String, String), Vec<Leg>> = BTreeMap::new();
        for leg in legs {
            by_pair.entry((leg.board.clone(), leg.alight.clone())).or_default().push(leg);
        }
        for legs in by_pair.values_mut() {
            legs.sort_by(|a, b| a.departure.cmp(&b.departure).then_with(|| a.train_id.cmp(&b.train_id)));
        }
        Self { by_pair }
    }

    /// Every ride between two stops of the same train run, from scheduled
    /// times. Excluded train types are skipped.
    pub fn from_events(events: &[TrainEvent], rules: &RuleSet) -> Self {
        let mut runs: BTreeMap<(&str, NaiveDate), Vec<&TrainEvent>> = BTreeMap::new();
        for e in events {
            runs.entry((&e.train_id, e.service_date)).or_default().push(e);
        }
        let mut legs = Vec::new();
        for stops in runs.values_mut() {
            let train_type = rules.classify(&stops[0].operator, &stops[0].train_category);
            if train_type == TrainType::Excluded {
                continue;
            }
            stops.sort_by_key(|e| e.scheduled_departure.or(e.scheduled_arrival));
            let runtime = stops.iter().find_map(|e| e.total_runtime).unwrap_or_else(|| {
                let first = stops.iter().find_map(|e| e.scheduled_departure);
                let last = stops.iter().rev().find_map(|e| e.scheduled_arrival);
                match (first, last) {
                    (Some(f), Some(l)) => l.minutes_since(&f) / 60.0,
                    _ => 0.0,
                }
            });
            for (i, from) in stops.iter().enumerate() {
                let Some(departure) = from.scheduled_departure else { continue };
                for to in &stops[i + 1..] {
                    let Some(arrival) = to.scheduled_arrival else { continue };
                    if arrival <= departure {
                        continue;
                    }
                    legs.push(Leg {
                        train_id: from.train_id.clone(),
                        operator: from.operator.clone(),
                        category: from.train_category.clone(),
                        train_type,
                        board: from.station.clone(),
                        alight: to.station.clone(),
                        departure,
                        arrival,
                        total_runtime: runtime,
                    });
                }
            }
        }
        Self::from_legs(legs)
    }

    /// Every leg, grouped by station pair and sorted by departure within each.
    pub fn legs(&self) -> impl Iterator<Item = &Leg> + '_ {
        self.by_pair.values().flatten()
    }

    pub fn n_legs(&self) -> usize {
        self.by_pair.values().map(Vec::len).sum()
    }

    /// Earliest leg between the stations departing after `after` (or at
    /// it, if `inclusive`) on the same service date.
    pub fn next_departure(
        &self,
        board: &str,
        alight: &str,
        after: ServiceTime,
        inclusive: bool,
        exclude_train: Option<&str>,
    ) -> Option<&Leg> {
        let legs = self.by_pair.get(&(board.to_string(), alight.to_string()))?;
        legs.iter().find(|l| {
            l.departure.service_date() == after.service_date()
                && (l.departure > after || (inclusive && l.departure == after))
                && exclude_train != Some(l.train_id.as_str())
        })
    }
}

/// Takes the next train on the missed station pair, then keeps each later
/// planned leg if it is still reachable with the minimum transfer time,
/// or else the next train on that leg's station pair that is.
#[derive(Debug, Clone)]
pub struct NextTrainAlternatives {
    pub timetable: Timetable,
}

impl AlternativesProvider for NextTrainAlternatives {
    fn alternative(&self, so_far: &[Leg], downstream: &[Leg], _: &str) -> Option<Vec<Leg>> {
        let missed = so_far.last()?;
        let first = self
            .timetable
            .next_departure(&missed.board, &missed.alight, missed.departure, false, Some(&missed.train_id))?;
        let mut legs = vec![first.clone()];
        for planned in downstream {
            let ready = legs.last().expect("non-empty").arrival.plus_minutes(MIN_PTT);
            if planned.departure >= ready {
                legs.push(planned.clone());
            } else {
                let next = self
                    .timetable
                    .next_departure(&planned.board, &planned.alight, ready, true, None)?;
                legs.push(next.clone());
            }
        }
        Some(legs)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NaReason {
    /// Too many consecutive misses at one station.
    Cutoff,
    NoAlternative,
}

impl fmt::Display for NaReason {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            NaReason::Cutoff => "cutoff",
            NaReason::NoAlternative => "no_alternative",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DelaySample {
    /// Minutes after the planned arrival; `None` when the journey was abandoned.
    pub delay: Option<f64>,
    /// Trains actually used.
    pub path: String,
    pub na_reason: Option<NaReason>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DelaySampleSet {
    pub planned_path: String,
    pub samples: Vec<DelaySample>,
}

impl DelaySampleSet {
    pub fn delays(&self) -> Vec<Option<f64>> {
        self.samples.iter().map(|s| s.delay).collect()
    }

    pub fn na_fraction(&self) -> f64 {
        if self.samples.is_empty() {
            return 0.0;
        }
        self.samples.iter().filter(|s| s.delay.is_none()).count() as f64 / self.samples.len() as f64
    }

    pub fn write_csv(&self, path: &Path, header_comment: Option<&str>) -> Result<()> {
        let mut w = crate::data::csv_writer(path, header_comment)?;
        w.write_record(["sample_index", "delay_minutes_or_NA", "path_signature"])?;
        for (i, s) in self.samples.iter().enumerate() {
            let delay = s.delay.map_or_else(|| "NA".to_string(), |d| d.to_string());
            w.write_record([i.to_string(), delay, s.path.clone()])?;
        }
        w.flush().map_err(|e| Error::io(path, e))
    }

    pub fn read_csv(path: &Path, planned_path: &str) -> Result<Self> {
        let mut r = crate::data::csv_reader(path)?;
        let mut samples = Vec::new();
        for row in r.records() {
            let row = row?;
            let field = |i: usize| row.get(i).unwrap_or("");
            let delay = match field(1) {
                "NA" => None,
                t => Some(t.parse::<f64>().map_err(|_| Error::Parse(format!("bad delay '{t}'")))?),
            };
            samples.push(DelaySample {
                delay,
                path: field(2).to_string(),
                na_reason: None,
            });
        }
        Ok(Self {
            planned_path: planned_path.to_string(),
            samples,
        })
    }
}

fn abandoned(taken: &[Leg], reason: NaReason) -> DelaySample {
    DelaySample {
        delay: None,
        path: path_signature(taken),
        na_reason: Some(reason),
    }
}

/// One realization of the journey's arrival delay.
pub fn sample_journey_delay(
    plan: &JourneySpec,
    transfer: &dyn TransferModel,
    delay: &dyn DelayModel,
    alternatives: &dyn AlternativesProvider,
    rng: &mut Rng,
) -> DelaySample {
    let destination = plan.destination();
    let mut remaining: Vec<Leg> = plan.legs[1..].to_vec();
    let mut taken = vec![plan.legs[0].clone()];
    let mut missed_ptt: Option<f64> = None;
    let mut misses_here = 0;

    while taken.last().expect("non-empty").alight != destination {
        if remaining.is_empty() {
            return abandoned(&taken, NaReason::NoAlternative);
        }
        let arriving = taken.last().expect("non-empty");
        let next = &remaining[0];
        let features = transfer_features(&arriving.arriving(), &next.departing(), missed_ptt);
        let p = transfer.reach_probability(&features).clamp(0.0, 1.0);
        if rng.random_bool(p) {
            taken.push(remaining.remove(0));
            missed_ptt = None;
            misses_here = 0;
            continue;
        }
        misses_here += 1;
        if misses_here >= MISS_CUTOFF {
            return abandoned(&taken, NaReason::Cutoff);
        }
        missed_ptt = Some(features.ptt);
        let mut so_far = taken.clone();
        so_far.push(remaining[0].clone());
        match alternatives.alternative(&so_far, &remaining[1..], destination) {
            Some(legs) if !legs.is_empty() => remaining = legs,
            _ => return abandoned(&taken, NaReason::NoAlternative),
        }
    }

    let last = taken.last().expect("non-empty");
    let shift = last.arrival.minutes_since(&plan.scheduled_final_arrival());
    DelaySample {
        delay: Some(shift + delay.sample_final_delay(last, rng)),
        path: path_signature(&taken),
        na_reason: None,
    }
}

/// `n` independent realizations; sample `i` uses RNG stream `i` of `seed`,
/// so the set does not depend on thread scheduling.
pub fn sample_many(
    plan: &JourneySpec,
    transfer: &dyn TransferModel,
    delay: &dyn DelayModel,
    alternatives: &dyn AlternativesProvider,
    n: usize,
    seed: u64,
) -> DelaySampleSet {
    let samples = (0..n as u64)
        .into_par_iter()
        .map(|i| {
            let mut rng = stream_rng(seed, i);
            sample_journey_delay(plan, transfer, delay, alternatives, &mut rng)
        })
        .collect();
    DelaySampleSet {
        planned_path: plan.signature(),
        samples,
    }
}
