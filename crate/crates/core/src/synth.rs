//! Synthetic corpora with known ground truth.
//!
//! Events come from a small corridor network of timetabled lines whose
//! arrival delays are drawn from a known delay distribution. Labelled
//! transfers come from a logistic miss model over the transfer features.
//! Both generators are reproducible from the seed alone.

use chrono::{Days, NaiveDate};
use rand::Rng as _;
use rand_distr::{Distribution, Exp, Gamma, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{RuntimeKey, RuntimeTable, TrainEvent, TrainType};
use crate::delay::{DelayFeatures, FeatureSet, MixtureCoefficients};
use crate::error::{Error, Result};
use crate::rng::{stream_rng, Rng};
use crate::time::ServiceTime;
use crate::transfers::{EventKey, TransferFeatures, TransferRecord, MAX_PTT, MIN_ACTUAL_GAP, MIN_PTT};

/// Logistic miss model: `logit P(miss) = intercept + sum coef * feature`,
/// with a missing `prev_ptt_diff` contributing nothing.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TransferTruth {
    pub intercept: f64,
    /// Must be non-positive.
    pub ptt: f64,
    pub prev_ptt_diff: f64,
    pub weekend: f64,
    pub arr_intercity_hour: f64,
    pub arr_short_train: f64,
    pub arr_intercity_winter: f64,
    pub dep_intercity_train: f64,
}

impl Default for TransferTruth {
    /// About 5.5% misses overall, never above 30%.
    fn default() -> Self {
        Self {
            intercept: -1.5,
            ptt: -0.06,
            prev_ptt_diff: 0.0,
            weekend: 0.15,
            arr_intercity_hour: 0.01,
            arr_short_train: -0.25,
            arr_intercity_winter: 0.2,
            dep_intercity_train: 0.2,
        }
    }
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

impl TransferTruth {
    /// Constant miss probability `p`.
    pub fn constant(p: f64) -> Self {
        Self {
            intercept: (p / (1.0 - p)).ln(),
            ptt: 0.0,
            prev_ptt_diff: 0.0,
            weekend: 0.0,
            arr_intercity_hour: 0.0,
            arr_short_train: 0.0,
            arr_intercity_winter: 0.0,
            dep_intercity_train: 0.0,
        }
    }

    pub fn miss_probability(&self, f: &TransferFeatures) -> f64 {
        let flag = |b: bool| b as u8 as f64;
        sigmoid(
            self.intercept
                + self.ptt * f.ptt
                + self.prev_ptt_diff * f.prev_ptt_diff.unwrap_or(0.0)
                + self.weekend * flag(f.weekend)
                + self.arr_intercity_hour * f.arr_intercity_hour as f64
                + self.arr_short_train * flag(f.arr_short_train)
                + self.arr_intercity_winter * flag(f.arr_intercity_winter)
                + self.dep_intercity_train * flag(f.dep_intercity_train),
        )
    }
}

/// Distribution of the shifted arrival delay `z = delay + shift`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum DelayTruth {
    Mixture {
        feature_set: FeatureSet,
        coefficients: MixtureCoefficients,
    },
    /// Feature-free gamma, outside the model family.
    Gamma { shape: f64, scale: f64 },
}

impl DelayTruth {
    /// Regression coefficients reported for the fitted delay model.
    pub fn reference() -> Self {
        DelayTruth::Mixture {
            feature_set: FeatureSet::Full,
            coefficients: MixtureCoefficients {
                pi1: 0.28,
                mu1: vec![2.03, 0.15, 0.03, 0.47],
                log_sigma1: vec![-0.45, 0.04, 0.35, 0.26],
                mu2: vec![1.79, 0.01, 0.01, 0.12],
                log_sigma2: vec![-1.64, 0.13, 0.19, 0.35],
            },
        }
    }

    /// Intercepts of [`DelayTruth::reference`] without covariates.
    pub fn reference_intercepts() -> Self {
        DelayTruth::Mixture {
            feature_set: FeatureSet::InterceptOnly,
            coefficients: MixtureCoefficients::intercept_only(0.28, 2.03, -0.45, 1.79, -1.64),
        }
    }

    pub fn sample_shifted(&self, f: &DelayFeatures, rng: &mut Rng) -> f64 {
        match self {
            DelayTruth::Mixture {
                feature_set,
                coefficients,
            } => {
                let x = feature_set.covariates(f);
                let c = if rng.random::<f64>() < coefficients.pi1 { 1 } else { 2 };
                let (mu, sigma) = coefficients.component(c, &x);
                let e: f64 = rng.sample(StandardNormal);
                (mu + sigma * e).exp()
            }
            DelayTruth::Gamma { shape, scale } => Gamma::new(*shape, *scale)
                .expect("valid gamma parameters")
                .sample(rng),
        }
    }

    /// Closed-form mean of the shifted delay.
    pub fn mean_shifted(&self, f: &DelayFeatures) -> f64 {
        match self {
            DelayTruth::Mixture {
                feature_set,
                coefficients,
            } => coefficients.mean(&feature_set.covariates(f)),
            DelayTruth::Gamma { shape, scale } => shape * scale,
        }
    }

    fn validate(&self) -> Result<()> {
        match self {
            DelayTruth::Mixture {
                feature_set,
                coefficients,
            } => {
                if coefficients.n_covariates() != feature_set.len()
                    || [&coefficients.log_sigma1, &coefficients.mu2, &coefficients.log_sigma2]
                        .iter()
                        .any(|b| b.len() != coefficients.mu1.len())
                {
                    return Err(Error::Config("synth: delay coefficients do not match the feature set".into()));
                }
                if !(0.0..=1.0).contains(&coefficients.pi1) {
                    return Err(Error::Config("synth: pi1 must lie in [0, 1]".into()));
                }
            }
            DelayTruth::Gamma { shape, scale } => {
                if !(*shape > 0.0 && *scale > 0.0) {
                    return Err(Error::Config("synth: gamma shape and scale must be positive".into()));
                }
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SynthConfig {
    pub seed: u64,
    pub start_date: NaiveDate,
    pub stations: usize,
    pub lines: usize,
    /// Departures per line and day, evenly spaced.
    pub trains_per_day: usize,
    pub first_departure_hour: u32,
    pub last_departure_hour: u32,
    /// Share of lines run as intercity services.
    pub intercity_share: f64,
    /// Share of labelled transfers that are second attempts.
    pub second_attempt_share: f64,
    pub transfer: TransferTruth,
    pub delay: DelayTruth,
    /// Minutes subtracted from the shifted delay draw.
    pub shift: f64,
    /// Delays above this many minutes are redrawn, so every event passes
    /// the default plausibility filter.
    pub max_delay_minutes: f64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            start_date: NaiveDate::from_ymd_opt(2024, 1, 8).expect("valid date"),
            stations: 10,
            lines: 12,
            trains_per_day: 16,
            first_departure_hour: 5,
            last_departure_hour: 22,
            intercity_share: 0.4,
            second_attempt_share: 0.1,
            transfer: TransferTruth::default(),
            delay: DelayTruth::reference(),
            shift: 6.0,
            max_delay_minutes: 600.0,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(format!("synth: {m}")));
        if self.stations < 3 {
            return bad("need at least three stations");
        }
        if self.lines == 0 || self.trains_per_day == 0 {
            return bad("lines and trains_per_day must be positive");
        }
        if self.first_departure_hour >= self.last_departure_hour || self.last_departure_hour > 30 {
            return bad("departure hours must satisfy first < last <= 30");
        }
        if self.transfer.ptt > 0.0 {
            return bad("the PTT coefficient must be non-positive");
        }
        if !(0.0..=1.0).contains(&self.intercity_share) || !(0.0..=1.0).contains(&self.second_attempt_share) {
            return bad("shares must lie in [0, 1]");
        }
        if !(self.shift >= 0.0 && self.max_delay_minutes > 0.0) {
            return bad("shift must be non-negative and max_delay_minutes positive");
        }
        self.delay.validate()
    }
}

#[derive(Debug, Clone)]
struct Line {
    name: String,
    operator: &'static str,
    category: &'static str,
    train_type: TrainType,
    stops: Vec<usize>,
    /// Minutes from the previous stop, 0 for the first.
    run_minutes: Vec<i64>,
    offset_minutes: i64,
}

const DWELL_MINUTES: i64 = 2;

pub fn station_name(i: usize) -> String {
    format!("S{i:02}")
}

/// The line network is fixed by the seed and shared by all days.
fn build_lines(config: &SynthConfig) -> Vec<Line> {
    let mut rng = stream_rng(config.seed, u64::MAX);
    let segment: Vec<i64> = (0..config.stations - 1).map(|_| rng.random_range(8..=25)).collect();
    let span = i64::from(config.last_departure_hour - config.first_departure_hour) * 60;
    let headway = (span / config.trains_per_day as i64).max(1);
    (0..config.lines)
        .map(|l| {
            let len = rng.random_range(3..=config.stations.min(8));
            let start = rng.random_range(0..=config.stations - len);
            let mut stops: Vec<usize> = (start..start + len).collect();
            if rng.random_bool(0.5) {
                stops.reverse();
            }
            let intercity = rng.random_bool(config.intercity_share);
            let (operator, category, speed) = if intercity {
                if rng.random_bool(0.5) {
                    ("SJ", "Snabbtåg", 0.8)
                } else {
                    ("Snälltåget", "IC", 0.85)
                }
            } else {
                ("Mälartåg", "Regional", 1.0)
            };
            let run_minutes = std::iter::once(0)
                .chain(stops.windows(2).map(|w| {
                    let seg = segment[w[0].min(w[1])] as f64;
                    ((seg * speed).round() as i64).max(4)
                }))
                .collect();
            Line {
                name: format!("L{l:02}"),
                operator,
                category,
                train_type: if intercity { TrainType::Intercity } else { TrainType::Regional },
                stops,
                run_minutes,
                offset_minutes: rng.random_range(0..headway),
            }
        })
        .collect()
}

fn clamp_delay(config: &SynthConfig, f: &DelayFeatures, rng: &mut Rng) -> f64 {
    loop {
        let delay = config.delay.sample_shifted(f, rng) - config.shift;
        if delay <= config.max_delay_minutes {
            return delay;
        }
    }
}

/// Seconds, rounded, never earlier than `-shift` minutes.
fn delay_seconds(delay_minutes: f64, shift: f64) -> i64 {
    ((delay_minutes * 60.0).round() as i64).max((-shift * 60.0).ceil() as i64)
}

fn generate_day(config: &SynthConfig, lines: &[Line], day: u64) -> Vec<TrainEvent> {
    let date = config.start_date + Days::new(day);
    let mut rng = stream_rng(config.seed, day);
    let span = i64::from(config.last_departure_hour - config.first_departure_hour) * 60;
    let headway = (span / config.trains_per_day as i64).max(1);
    let late_start: Exp<f64> = Exp::new(0.5).expect("positive rate");
    let mut events = Vec::new();
    for line in lines {
        let total_minutes: i64 = line.run_minutes.iter().sum::<i64>() + DWELL_MINUTES * (line.stops.len() as i64 - 2);
        let total_runtime = total_minutes as f64 / 60.0;
        let origin = station_name(line.stops[0]);
        let destination = station_name(*line.stops.last().expect("line has stops"));
        for k in 0..config.trains_per_day {
            let first_dep = i64::from(config.first_departure_hour) * 3600
                + (line.offset_minutes + k as i64 * headway) * 60;
            let train_id = format!("{}{:03}", line.name, k);
            let mut t = first_dep;
            // Departure delay carried out of the previous stop, seconds.
            let mut carried: i64 = if rng.random_bool(0.7) {
                0
            } else {
                (late_start.sample(&mut rng) * 60.0).round() as i64
            };
            for (i, &station) in line.stops.iter().enumerate() {
                let last = i + 1 == line.stops.len();
                let (sched_arr, act_arr) = if i == 0 {
                    (None, None)
                } else {
                    t += line.run_minutes[i] * 60;
                    let arr = ServiceTime::new(date, t);
                    let f = DelayFeatures::for_arrival(line.train_type, arr, total_runtime);
                    let delay = delay_seconds(clamp_delay(config, &f, &mut rng), config.shift);
                    (Some(arr), Some(ServiceTime::new(date, t + delay)))
                };
                let (sched_dep, act_dep) = if last {
                    (None, None)
                } else {
                    if i > 0 {
                        t += DWELL_MINUTES * 60;
                    }
                    let dep = ServiceTime::new(date, t);
                    let actual = match act_arr {
                        Some(a) => (a.offset_seconds() + 60).max(t),
                        None => t + carried,
                    };
                    carried = actual - t;
                    (Some(dep), Some(ServiceTime::new(date, actual)))
                };
                let to_here = (t - first_dep - if last || i == 0 { 0 } else { DWELL_MINUTES * 60 }) as f64 / 3600.0;
                events.push(TrainEvent {
                    train_id: train_id.clone(),
                    operator: line.operator.to_string(),
                    train_category: line.category.to_string(),
                    station: station_name(station),
                    service_date: date,
                    scheduled_arrival: sched_arr,
                    scheduled_departure: sched_dep,
                    actual_arrival: act_arr,
                    actual_departure: act_dep,
                    origin: origin.clone(),
                    destination: destination.clone(),
                    runtime_to_here: Some(to_here),
                    total_runtime: Some(total_runtime),
                });
            }
        }
    }
    events
}

/// Stop events for `days` consecutive service days starting at
/// `config.start_date`, with runtimes filled in.
pub fn generate_events(config: &SynthConfig, days: usize) -> Result<Vec<TrainEvent>> {
    config.validate()?;
    let lines = build_lines(config);
    let per_day: Vec<Vec<TrainEvent>> = (0..days as u64)
        .into_par_iter()
        .map(|d| generate_day(config, &lines, d))
        .collect();
    Ok(per_day.into_iter().flatten().collect())
}

/// Runtime table matching generated events, for exercising the join.
pub fn runtime_table(events: &[TrainEvent]) -> Result<RuntimeTable> {
    RuntimeTable::from_entries(events.iter().filter_map(|e| {
        Some((
            RuntimeKey {
                train_id: e.train_id.clone(),
                service_date: e.service_date,
                station: e.station.clone(),
            },
            e.runtime_to_here?,
            e.total_runtime?,
        ))
    }))
}

/// Labelled transfers with features drawn independently over realistic
/// ranges and the label drawn from the logistic truth. Returns the records
/// and the true miss probability of each.
pub fn generate_labeled_transfers(config: &SynthConfig, n: usize, stream: u64) -> Result<(Vec<TransferRecord>, Vec<f64>)> {
    config.validate()?;
    let mut rng = stream_rng(config.seed, stream);
    let mut records = Vec::with_capacity(n);
    let mut truth = Vec::with_capacity(n);
    let (lo, hi) = (MIN_PTT as i64, MAX_PTT as i64);
    for i in 0..n {
        let ptt = rng.random_range(lo..=hi) as f64;
        let prev_ptt_diff = rng
            .random_bool(config.second_attempt_share)
            .then(|| ptt - rng.random_range(lo..=hi) as f64);
        let arr_intercity = rng.random_bool(0.4);
        let date = config.start_date + Days::new(rng.random_range(0..365));
        let features = TransferFeatures {
            ptt,
            prev_ptt_diff,
            weekend: rng.random_bool(2.0 / 7.0),
            arr_intercity_hour: if arr_intercity { rng.random_range(5..=23) } else { 0 },
            arr_short_train: rng.random_bool(0.3),
            arr_intercity_winter: arr_intercity && rng.random_bool(0.25),
            dep_intercity_train: rng.random_bool(0.4),
        };
        let p = config.transfer.miss_probability(&features);
        let missed = rng.random_bool(p);
        records.push(TransferRecord {
            station: station_name(i % config.stations),
            arrival: EventKey {
                train_id: format!("A{i}"),
                service_date: date,
            },
            departure: EventKey {
                train_id: format!("D{i}"),
                service_date: date,
            },
            ptt,
            actual_gap: Some(if missed { 0.0 } else { MIN_ACTUAL_GAP.max(ptt) }),
            features,
        });
        truth.push(p);
    }
    Ok((records, truth))
}

/// AUROC of the generating probabilities by exhaustive comparison of every
/// positive/negative pair; the best any classifier can do in expectation.
pub fn bayes_ceiling_auroc(truth: &[f64], missed: &[bool]) -> f64 {
    let pos: Vec<f64> = truth.iter().zip(missed).filter(|(_, &m)| m).map(|(p, _)| *p).collect();
    let neg: Vec<f64> = truth.iter().zip(missed).filter(|(_, &m)| !m).map(|(p, _)| *p).collect();
    let wins: f64 = pos
        .par_iter()
        .map(|&p| {
            neg.iter()
                .map(|&q| match p.partial_cmp(&q) {
                    Some(std::cmp::Ordering::Greater) => 1.0,
                    Some(std::cmp::Ordering::Equal) => 0.5,
                    _ => 0.0,
                })
                .sum::<f64>()
        })
        .collect::<Vec<f64>>()
        .iter()
        .sum();
    wins / (pos.len() as f64 * neg.len() as f64)
}

/// Delay observations drawn directly from the delay truth at the given
/// features, as raw (unshifted) minutes.
pub fn sample_delays(config: &SynthConfig, features: &[DelayFeatures], stream: u64) -> Vec<f64> {
    let mut rng = stream_rng(config.seed, stream);
    features
        .iter()
        .map(|f| clamp_delay(config, f, &mut rng))
        .collect()
}
