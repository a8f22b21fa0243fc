//! Run configuration for the command-line pipeline.
//!
//! One TOML document holds every setting. All randomness comes from the
//! top-level `seed`: each stage gets `seed + offset` (transfer model 0,
//! delay model 1, generator 2, journey sampling 3, evaluation 4), so section
//! tables must not set their own `seed`.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::data::FilterConfig;
use crate::delay::McmcConfig;
use crate::error::{Error, Result};
use crate::gbt::TrainConfig;
use crate::synth::SynthConfig;

pub const TRANSFER_SEED_OFFSET: u64 = 0;
pub const DELAY_SEED_OFFSET: u64 = 1;
pub const SYNTH_SEED_OFFSET: u64 = 2;
pub const JOURNEY_SEED_OFFSET: u64 = 3;
pub const EVALUATE_SEED_OFFSET: u64 = 4;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub seed: u64,
    /// Journey samples drawn by `predict-journey`.
    pub samples: usize,
    pub out_dir: PathBuf,
    pub paths: Paths,
    pub filter: FilterConfig,
    pub transfer: TransferSection,
    pub delay: McmcConfig,
    pub synth: SynthSection,
    pub journey: JourneySection,
    pub evaluate: EvaluateSection,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            samples: 1000,
            out_dir: PathBuf::from("out"),
            paths: Paths::default(),
            filter: FilterConfig::default(),
            transfer: TransferSection::default(),
            delay: McmcConfig::default(),
            synth: SynthSection::default(),
            journey: JourneySection::default(),
            evaluate: EvaluateSection::default(),
        }
    }
}

/// Input files. Unset entries default to the matching file in `out_dir`,
/// which is where the earlier pipeline command wrote it.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Paths {
    /// Raw stop events for `ingest`.
    pub events: Option<PathBuf>,
    /// Runtime table CSV joined onto the events.
    pub runtimes: Option<PathBuf>,
    /// GTFS directory used instead of `runtimes` when set.
    pub gtfs: Option<PathBuf>,
    /// Labelled transfers for `train-transfer`.
    pub transfers: Option<PathBuf>,
    /// Held-out raw events (with runtimes) for `evaluate`.
    pub holdout_events: Option<PathBuf>,
    pub journey: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TransferSection {
    /// Pick hyperparameters by stratified cross-validation over the default
    /// grid; otherwise train with `params`.
    pub cross_validate: bool,
    pub cv_folds: usize,
    pub params: TrainConfig,
}

impl Default for TransferSection {
    fn default() -> Self {
        Self {
            cross_validate: true,
            cv_folds: 5,
            params: TrainConfig::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SynthSection {
    /// Days of training events.
    pub days: usize,
    /// Days of held-out events following the training days.
    pub holdout_days: usize,
    /// Transfers in the ground-truth labelled file.
    pub labeled_transfers: usize,
    pub generator: SynthConfig,
}

impl Default for SynthSection {
    fn default() -> Self {
        Self {
            days: 14,
            holdout_days: 3,
            labeled_transfers: 20_000,
            generator: SynthConfig::default(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AlternativesKind {
    /// Re-plan onto the next scheduled trains.
    NextTrain,
    /// A miss abandons the journey.
    None,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct JourneySection {
    /// Use a delay posterior that missed its convergence thresholds.
    pub allow_unaccepted: bool,
    pub alternatives: AlternativesKind,
}

impl Default for JourneySection {
    fn default() -> Self {
        Self {
            allow_unaccepted: false,
            alternatives: AlternativesKind::NextTrain,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvaluateSection {
    pub calibration_bins: usize,
    pub qq_levels: usize,
}

impl Default for EvaluateSection {
    fn default() -> Self {
        Self {
            calibration_bins: 10,
            qq_levels: 99,
        }
    }
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let config: Self = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        let section_seeds = [
            ("transfer.params", config.transfer.params.seed),
            ("delay", config.delay.seed),
            ("synth.generator", config.synth.generator.seed),
        ];
        for (section, seed) in section_seeds {
            if seed != 0 {
                return Err(Error::Config(format!(
                    "[{section}] sets seed = {seed}; set the top-level seed instead"
                )));
            }
        }
        Ok(config)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml(&text)
    }

    /// Copy with stage seeds filled in from the top-level seed.
    pub fn effective(&self) -> Self {
        let mut c = self.clone();
        c.transfer.params.seed = self.seed + TRANSFER_SEED_OFFSET;
        c.delay.seed = self.seed + DELAY_SEED_OFFSET;
        c.synth.generator.seed = self.seed + SYNTH_SEED_OFFSET;
        c
    }

    pub fn journey_seed(&self) -> u64 {
        self.seed + JOURNEY_SEED_OFFSET
    }

    pub fn evaluate_seed(&self) -> u64 {
        self.seed + EVALUATE_SEED_OFFSET
    }

    pub fn validate(&self) -> Result<()> {
        if self.samples == 0 {
            return Err(Error::Config("samples must be positive".into()));
        }
        if self.transfer.cv_folds < 2 {
            return Err(Error::Config("transfer.cv_folds must be at least 2".into()));
        }
        if self.synth.days == 0 {
            return Err(Error::Config("synth.days must be positive".into()));
        }
        if self.evaluate.calibration_bins < 2 || self.evaluate.qq_levels < 2 {
            return Err(Error::Config("evaluate bins and levels must be at least 2".into()));
        }
        self.transfer.params.validate()?;
        self.delay.validate()?;
        self.synth.generator.validate()
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    /// SHA-256 of the effective configuration. The output directory is left
    /// out, so the same run written to two places carries the same hash.
    pub fn hash(&self) -> Result<String> {
        let mut c = self.effective();
        c.out_dir = PathBuf::new();
        Ok(hex::encode(Sha256::digest(c.to_toml()?.as_bytes())))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_document_gives_defaults() {
        assert_eq!(RunConfig::from_toml("").unwrap(), RunConfig::default());
    }

    #[test]
    fn unknown_keys_are_rejected() {
        assert!(RunConfig::from_toml("sead = 3").is_err());
        assert!(RunConfig::from_toml("[delay]\nwarmpu = 10").is_err());
        assert!(RunConfig::from_toml("[nope]\n").is_err());
    }

    #[test]
    fn partial_sections_keep_other_defaults() {
        let c = RunConfig::from_toml("[filter]\n[transfer.params]\neta = 0.05\n[synth.generator.transfer]\nptt = -0.1").unwrap();
        assert_eq!(c.filter, FilterConfig::default());
        assert_eq!(c.transfer.params.eta, 0.05);
        assert_eq!(c.transfer.params.nrounds, TrainConfig::default().nrounds);
        assert_eq!(c.synth.generator.transfer.ptt, -0.1);
        assert_eq!(c.synth.generator.transfer.intercept, SynthConfig::default().transfer.intercept);
    }

    #[test]
    fn section_seed_is_rejected() {
        let err = RunConfig::from_toml("[delay]\nseed = 4").unwrap_err();
        assert!(matches!(err, Error::Config(_)));
    }

    #[test]
    fn seeds_flow_from_top_level() {
        let c = RunConfig::from_toml("seed = 10").unwrap().effective();
        assert_eq!(c.transfer.params.seed, 10);
        assert_eq!(c.delay.seed, 11);
        assert_eq!(c.synth.generator.seed, 12);
        assert_eq!(c.journey_seed(), 13);
    }

    #[test]
    fn effective_config_round_trips_through_toml() {
        let c = RunConfig::from_toml("seed = 3\nsamples = 50\n[synth]\ndays = 2").unwrap();
        let text = c.to_toml().unwrap();
        assert_eq!(RunConfig::from_toml(&text).unwrap(), c);
    }

    #[test]
    fn hash_ignores_out_dir_but_not_settings() {
        let a = RunConfig::default();
        let b = RunConfig {
            out_dir: "elsewhere".into(),
            ..RunConfig::default()
        };
        let c = RunConfig {
            seed: 1,
            ..RunConfig::default()
        };
        assert_eq!(a.hash().unwrap(), b.hash().unwrap());
        assert_ne!(a.hash().unwrap(), c.hash().unwrap());
        assert_eq!(a.hash().unwrap().len(), 64);
    }
}
