//! The command-line pipeline: each command reads its declared inputs, writes
//! its outputs into the run directory and stamps them with the config hash.

use std::fmt;
use std::path::PathBuf;

use chrono::{Days, NaiveDate};
use serde::Serialize;

use crate::config::{AlternativesKind, RunConfig};
use crate::data::{
    csv_writer, filter_events, join_runtimes, read_events_csv, write_events_csv, RuleSet, RuntimeTable, TrainEvent,
};
use crate::delay::{elpd, fit_mcmc, observations_from_events, qq_points, MixturePosterior};
use crate::error::{Error, Result};
use crate::gbt::{default_grid, grid_search_cv, train, transfer_monotone_spec, BoostedModel, Dataset};
use crate::gtfs::read_runtime_table;
use crate::journey::{
    sample_many, AlternativesProvider, JourneySpec, NextTrainAlternatives, NoAlternatives, Timetable,
};
use crate::metrics::{auroc, calibration_bins, reliability_report};
use crate::rng::seeded;
use crate::synth::{generate_events, generate_labeled_transfers, runtime_table};
use crate::transfers::{build_transfer_dataset, read_transfers_csv, write_transfers_csv, FEATURE_NAMES, MAX_PTT};

pub const EVENTS: &str = "events.csv";
pub const RUNTIMES: &str = "runtimes.csv";
pub const HOLDOUT_EVENTS: &str = "events_holdout.csv";
pub const LABELED_TRANSFERS: &str = "transfers_labeled.csv";
pub const JOURNEY: &str = "journey.json";
pub const EVENTS_CLEAN: &str = "events_clean.csv";
pub const FILTER_REPORT: &str = "filter_report.json";
pub const TRANSFERS: &str = "transfers.csv";
pub const TRANSFER_MODEL: &str = "transfer_model.json";
pub const TRANSFER_CV: &str = "transfer_cv.csv";
pub const TRANSFER_IMPORTANCE: &str = "transfer_importance.csv";
pub const DELAY_POSTERIOR: &str = "delay_posterior.json";
pub const DELAY_DIAGNOSTICS: &str = "delay_diagnostics.csv";
pub const DELAY_SAMPLES: &str = "delay_samples.csv";
pub const RELIABILITY_REPORT: &str = "reliability_report.json";
pub const EVALUATION: &str = "evaluation.json";
pub const CALIBRATION: &str = "calibration.csv";
pub const QQ: &str = "qq.csv";

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Command {
    SynthGen,
    Ingest,
    BuildTransfers,
    TrainTransfer,
    TrainDelay,
    PredictJourney,
    Evaluate,
}

impl Command {
    pub const ALL: [Command; 7] = [
        Command::SynthGen,
        Command::Ingest,
        Command::BuildTransfers,
        Command::TrainTransfer,
        Command::TrainDelay,
        Command::PredictJourney,
        Command::Evaluate,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Command::SynthGen => "synth-gen",
            Command::Ingest => "ingest",
            Command::BuildTransfers => "build-transfers",
            Command::TrainTransfer => "train-transfer",
            Command::TrainDelay => "train-delay",
            Command::PredictJourney => "predict-journey",
            Command::Evaluate => "evaluate",
        }
    }
}

impl fmt::Display for Command {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// A configured run: the effective config, its hash and the output directory.
pub struct Run {
    pub config: RunConfig,
    pub hash: String,
}

impl Run {
    pub fn new(config: &RunConfig) -> Result<Self> {
        config.validate()?;
        Ok(Self {
            config: config.effective(),
            hash: config.hash()?,
        })
    }

    fn out(&self, name: &str) -> PathBuf {
        self.config.out_dir.join(name)
    }

    fn input(&self, configured: &Option<PathBuf>, default_name: &str) -> PathBuf {
        configured.clone().unwrap_or_else(|| self.out(default_name))
    }

    fn comment(&self) -> String {
        format!("config_hash={}", self.hash)
    }

    fn rules(&self) -> &RuleSet {
        &self.config.filter.rules
    }

    /// Runs one command and returns the files it wrote.
    pub fn execute(&self, command: Command) -> Result<Vec<PathBuf>> {
        let dir = &self.config.out_dir;
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        match command {
            Command::SynthGen => self.synth_gen(),
            Command::Ingest => self.ingest(),
            Command::BuildTransfers => self.build_transfers(),
            Command::TrainTransfer => self.train_transfer(),
            Command::TrainDelay => self.train_delay(),
            Command::PredictJourney => self.predict_journey(),
            Command::Evaluate => self.evaluate(),
        }
    }

    fn write_json(&self, name: &str, value: &impl Serialize) -> Result<PathBuf> {
        let mut value = serde_json::to_value(value)?;
        if let serde_json::Value::Object(map) = &mut value {
            map.insert("config_hash".into(), self.hash.clone().into());
        }
        let path = self.out(name);
        let text = serde_json::to_string_pretty(&value)? + "\n";
        std::fs::write(&path, text).map_err(|e| Error::io(&path, e))?;
        Ok(path)
    }

    fn write_rows(&self, name: &str, header: &[&str], rows: impl IntoIterator<Item = Vec<String>>) -> Result<PathBuf> {
        let path = self.out(name);
        let mut w = csv_writer(&path, Some(&self.comment()))?;
        w.write_record(header)?;
        for row in rows {
            w.write_record(row)?;
        }
        w.flush().map_err(|e| Error::io(&path, e))?;
        Ok(path)
    }

    fn synth_gen(&self) -> Result<Vec<PathBuf>> {
        let synth = &self.config.synth;
        let gen = &synth.generator;
        let all = generate_events(gen, synth.days + synth.holdout_days)?;
        let cutoff = gen.start_date + Days::new(synth.days as u64);
        let (train_events, holdout): (Vec<TrainEvent>, Vec<TrainEvent>) =
            all.into_iter().partition(|e| e.service_date < cutoff);
        let comment = self.comment();

        let runtimes = self.out(RUNTIMES);
        runtime_table(&train_events)?.write_csv(&runtimes, Some(&comment))?;
        // Raw events come without runtimes; `ingest` joins them back.
        let stripped: Vec<TrainEvent> = train_events
            .iter()
            .cloned()
            .map(|mut e| {
                e.runtime_to_here = None;
                e.total_runtime = None;
                e
            })
            .collect();
        let events = self.out(EVENTS);
        write_events_csv(&events, &stripped, Some(&comment))?;
        let holdout_path = self.out(HOLDOUT_EVENTS);
        write_events_csv(&holdout_path, &holdout, Some(&comment))?;

        let (labeled, _) = generate_labeled_transfers(gen, synth.labeled_transfers, 0)?;
        let labeled_path = self.out(LABELED_TRANSFERS);
        write_transfers_csv(&labeled_path, &labeled, Some(&comment))?;

        let journey = pick_journey(&train_events, self.rules(), gen.start_date)?;
        let journey_path = self.out(JOURNEY);
        let text = journey.to_json(Some(&self.hash))? + "\n";
        std::fs::write(&journey_path, text).map_err(|e| Error::io(&journey_path, e))?;
        Ok(vec![events, runtimes, holdout_path, labeled_path, journey_path])
    }

    fn ingest(&self) -> Result<Vec<PathBuf>> {
        let paths = &self.config.paths;
        let events = read_events_csv(&self.input(&paths.events, EVENTS))?;
        let table = match &paths.gtfs {
            Some(dir) => read_runtime_table(dir)?,
            None => RuntimeTable::read_csv(&self.input(&paths.runtimes, RUNTIMES))?,
        };
        let (kept, report) = filter_events(join_runtimes(events, &table), &self.config.filter);
        let clean = self.out(EVENTS_CLEAN);
        write_events_csv(&clean, &kept, Some(&self.comment()))?;
        Ok(vec![clean, self.write_json(FILTER_REPORT, &report)?])
    }

    fn clean_events(&self) -> Result<Vec<TrainEvent>> {
        read_events_csv(&self.out(EVENTS_CLEAN))
    }

    fn build_transfers(&self) -> Result<Vec<PathBuf>> {
        let records = build_transfer_dataset(&self.clean_events()?, self.rules());
        let path = self.out(TRANSFERS);
        write_transfers_csv(&path, &records, Some(&self.comment()))?;
        Ok(vec![path])
    }

    fn train_transfer(&self) -> Result<Vec<PathBuf>> {
        let section = &self.config.transfer;
        let records = read_transfers_csv(&self.input(&self.config.paths.transfers, TRANSFERS))?;
        let data = Dataset::from_transfers(&records)?;
        let monotone = transfer_monotone_spec();
        let seed = section.params.seed;
        let mut written = Vec::new();
        let params = if section.cross_validate {
            let (best, scores) = grid_search_cv(&data, &default_grid(seed), &monotone, section.cv_folds, seed)?;
            let rows = scores.iter().map(|s| {
                let c = &s.config;
                let folds: Vec<String> = s.fold_auroc.iter().map(f64::to_string).collect();
                vec![
                    c.nrounds.to_string(),
                    c.max_depth.to_string(),
                    c.eta.to_string(),
                    c.min_child_weight.to_string(),
                    c.lambda.to_string(),
                    s.mean_auroc.to_string(),
                    folds.join(";"),
                ]
            });
            let header = ["nrounds", "max_depth", "eta", "min_child_weight", "lambda", "mean_auroc", "fold_auroc"];
            written.push(self.write_rows(TRANSFER_CV, &header, rows)?);
            best
        } else {
            section.params.clone()
        };
        let mut model = train(&data, &params, &monotone)?;
        model.config_hash = Some(self.hash.clone());
        written.push(self.write_json(TRANSFER_MODEL, &model)?);
        let importance = model
            .feature_importance()
            .into_iter()
            .map(|(name, gain)| vec![name, gain.to_string()]);
        written.push(self.write_rows(TRANSFER_IMPORTANCE, &["feature", "total_gain"], importance)?);
        Ok(written)
    }

    fn train_delay(&self) -> Result<Vec<PathBuf>> {
        let data = observations_from_events(&self.clean_events()?, self.rules());
        let mut post = fit_mcmc(&data, &self.config.delay)?;
        post.config_hash = Some(self.hash.clone());
        let posterior = self.write_json(DELAY_POSTERIOR, &post)?;
        let rows = post.diagnostics.iter().map(|d| {
            vec![
                d.name.clone(),
                d.mean.to_string(),
                d.sd.to_string(),
                d.q025.to_string(),
                d.q975.to_string(),
                d.rhat.to_string(),
                d.ess.to_string(),
                d.degenerate.to_string(),
            ]
        });
        let header = ["parameter", "mean", "sd", "q025", "q975", "rhat", "ess", "degenerate"];
        let diagnostics = self.write_rows(DELAY_DIAGNOSTICS, &header, rows)?;
        if !post.accepted {
            return Err(Error::NotAccepted(format!(
                "R-hat or ESS thresholds missed; see {}",
                diagnostics.display()
            )));
        }
        Ok(vec![posterior, diagnostics])
    }

    fn load_transfer_model(&self) -> Result<BoostedModel> {
        let model = BoostedModel::load(&self.out(TRANSFER_MODEL))?;
        if model.feature_names != FEATURE_NAMES {
            return Err(Error::Schema {
                expected: FEATURE_NAMES.len(),
                got: model.feature_names.len(),
            });
        }
        Ok(model)
    }

    fn load_posterior(&self) -> Result<MixturePosterior> {
        MixturePosterior::load(&self.out(DELAY_POSTERIOR))
    }

    fn predict_journey(&self) -> Result<Vec<PathBuf>> {
        let plan = JourneySpec::load(&self.input(&self.config.paths.journey, JOURNEY), self.rules())?;
        let transfer = self.load_transfer_model()?;
        let post = self.load_posterior()?;
        if !post.accepted && !self.config.journey.allow_unaccepted {
            return Err(Error::NotAccepted(
                "delay posterior failed its convergence checks; set journey.allow_unaccepted to use it".into(),
            ));
        }
        let alternatives: Box<dyn AlternativesProvider> = match self.config.journey.alternatives {
            AlternativesKind::NextTrain => Box::new(NextTrainAlternatives {
                timetable: Timetable::from_events(&self.clean_events()?, self.rules()),
            }),
            AlternativesKind::None => Box::new(NoAlternatives),
        };
        let set = sample_many(
            &plan,
            &transfer,
            &post,
            alternatives.as_ref(),
            self.config.samples,
            self.config.journey_seed(),
        );
        let samples = self.out(DELAY_SAMPLES);
        set.write_csv(&samples, Some(&self.comment()))?;
        Ok(vec![samples, self.write_json(RELIABILITY_REPORT, &reliability_report(&set))?])
    }

    fn evaluate(&self) -> Result<Vec<PathBuf>> {
        let path = self.input(&self.config.paths.holdout_events, HOLDOUT_EVENTS);
        let (events, _) = filter_events(read_events_csv(&path)?, &self.config.filter);
        let settings = &self.config.evaluate;

        let model = self.load_transfer_model()?;
        let data = Dataset::from_transfers(&build_transfer_dataset(&events, self.rules()))?;
        let labels: Vec<bool> = data.labels().collect();
        let scores = model.predict_dataset(&data);
        let transfer_auroc = auroc(&scores, &labels)?;
        let bins = calibration_bins(&scores, &labels, settings.calibration_bins)?;
        let opt = |v: Option<f64>| v.map_or_else(|| "NA".to_string(), |v| v.to_string());
        let rows = bins.bins.iter().map(|b| {
            vec![
                b.lower.to_string(),
                b.upper.to_string(),
                b.count.to_string(),
                opt(b.mean_predicted),
                opt(b.observed_frequency),
            ]
        });
        let header = ["lower", "upper", "count", "mean_predicted", "observed_frequency"];
        let calibration = self.write_rows(CALIBRATION, &header, rows)?;

        let post = self.load_posterior()?;
        let holdout = observations_from_events(&events, self.rules());
        if holdout.is_empty() {
            return Err(Error::MissingData("no held-out arrivals to evaluate the delay model on".into()));
        }
        let total_elpd = elpd(&post, &holdout);
        // One predictive draw per held-out arrival at its own covariates.
        let mut rng = seeded(self.config.evaluate_seed());
        let predicted: Vec<f64> = holdout
            .iter()
            .map(|o| post.sample_delay(&post.feature_set.covariates(&o.features), &mut rng))
            .collect();
        let observed: Vec<f64> = holdout.iter().map(|o| o.delay).collect();
        let qq = qq_points(&observed, &predicted, settings.qq_levels);
        let qq_max = qq.iter().map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        let k = settings.qq_levels as f64;
        let rows = qq.iter().enumerate().map(|(i, (a, b))| {
            vec![((i as f64 + 0.5) / k).to_string(), a.to_string(), b.to_string()]
        });
        let qq_path = self.write_rows(QQ, &["probability", "observed", "predicted"], rows)?;

        let summary = Evaluation {
            transfer: TransferEvaluation {
                n: labels.len(),
                missed: labels.iter().filter(|&&l| l).count(),
                auroc: transfer_auroc,
                calibration_max_deviation: bins.max_deviation(),
            },
            delay: DelayEvaluation {
                n: holdout.len(),
                elpd: total_elpd,
                elpd_per_observation: total_elpd / holdout.len() as f64,
                qq_max_abs_deviation: qq_max,
            },
        };
        Ok(vec![self.write_json(EVALUATION, &summary)?, calibration, qq_path])
    }
}

#[derive(Debug, Serialize)]
struct Evaluation {
    transfer: TransferEvaluation,
    delay: DelayEvaluation,
}

#[derive(Debug, Serialize)]
struct TransferEvaluation {
    n: usize,
    missed: usize,
    auroc: f64,
    calibration_max_deviation: f64,
}

#[derive(Debug, Serialize)]
struct DelayEvaluation {
    n: usize,
    elpd: f64,
    elpd_per_observation: f64,
    qq_max_abs_deviation: f64,
}

/// A two-leg morning journey on `date`: the earliest leg leaving from 07:00
/// that connects to a different train within 5 to 30 minutes, heading away
/// from where the first leg started.
pub fn pick_journey(events: &[TrainEvent], rules: &RuleSet, date: NaiveDate) -> Result<JourneySpec> {
    let timetable = Timetable::from_events(events, rules);
    let mut firsts: Vec<_> = timetable
        .legs()
        .filter(|l| l.departure.service_date() == date && l.departure.clock_hour() >= 7)
        .collect();
    firsts.sort_by(|a, b| {
        (a.departure, &a.train_id, &a.board, &a.alight).cmp(&(b.departure, &b.train_id, &b.board, &b.alight))
    });
    for first in firsts {
        let second = timetable
            .legs()
            .filter(|l| {
                let ptt = l.departure.minutes_since(&first.arrival);
                l.board == first.alight
                    && l.train_id != first.train_id
                    && l.alight != first.board
                    && (5.0..=30.0_f64.min(MAX_PTT)).contains(&ptt)
            })
            .min_by(|a, b| (a.departure, &a.train_id, &a.alight).cmp(&(b.departure, &b.train_id, &b.alight)));
        if let Some(second) = second {
            return JourneySpec::new(vec![first.clone(), second.clone()]);
        }
    }
    Err(Error::MissingData(format!("no two-leg journey found on {date}")))
}

/// Resolves a command name such as `train-delay`.
pub fn parse_command(name: &str) -> Option<Command> {
    Command::ALL.into_iter().find(|c| c.name() == name)
}

/// Files a command reads, for error context.
pub fn describe_inputs(run: &Run, command: Command) -> Vec<PathBuf> {
    let p = &run.config.paths;
    let out = |n: &str| run.out(n);
    match command {
        Command::SynthGen => Vec::new(),
        Command::Ingest => vec![
            run.input(&p.events, EVENTS),
            p.gtfs.clone().unwrap_or_else(|| run.input(&p.runtimes, RUNTIMES)),
        ],
        Command::BuildTransfers | Command::TrainDelay => vec![out(EVENTS_CLEAN)],
        Command::TrainTransfer => vec![run.input(&p.transfers, TRANSFERS)],
        Command::PredictJourney => vec![
            run.input(&p.journey, JOURNEY),
            out(TRANSFER_MODEL),
            out(DELAY_POSTERIOR),
            out(EVENTS_CLEAN),
        ],
        Command::Evaluate => vec![
            run.input(&p.holdout_events, HOLDOUT_EVENTS),
            out(TRANSFER_MODEL),
            out(DELAY_POSTERIOR),
        ],
    }
}

/// Every file name a full synthetic chain leaves in the output directory.
pub fn chain_outputs() -> &'static [&'static str] {
    &[
        EVENTS,
        RUNTIMES,
        HOLDOUT_EVENTS,
        LABELED_TRANSFERS,
        JOURNEY,
        EVENTS_CLEAN,
        FILTER_REPORT,
        TRANSFERS,
        TRANSFER_MODEL,
        TRANSFER_CV,
        TRANSFER_IMPORTANCE,
        DELAY_POSTERIOR,
        DELAY_DIAGNOSTICS,
        DELAY_SAMPLES,
        RELIABILITY_REPORT,
        EVALUATION,
        CALIBRATION,
        QQ,
    ]
}
