//! Gradient-boosted decision trees for binary classification.
//!
//! Second-order boosting on the logistic loss with exact greedy split
//! enumeration. Missing values (NaN) are routed by a default direction
//! learned per split, and per-feature monotone constraints are enforced by
//! rejecting violating splits and clamping child weights to the interval
//! implied by their ancestors.

mod booster;
mod cv;
mod tree;

pub use booster::{train, BoostedModel, MODEL_FORMAT_VERSION};
pub use cv::{default_grid, REGULARISATION_GRID, grid_search_cv, stratified_folds, CvScore};
pub use tree::Tree;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::transfers::{TransferRecord, FEATURE_NAMES, PTT_FEATURE};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub nrounds: usize,
    pub max_depth: usize,
    pub eta: f64,
    pub subsample: f64,
    /// Minimum loss reduction required to keep a split.
    pub gamma: f64,
    /// L2 penalty on leaf weights.
    pub lambda: f64,
    /// Minimum hessian sum in each child.
    pub min_child_weight: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            nrounds: 500,
            max_depth: 5,
            eta: 0.1,
            subsample: 0.8,
            gamma: 0.1,
            lambda: 1.0,
            min_child_weight: 1.0,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |what: &str| Err(Error::Config(format!("transfer model: {what}")));
        if self.max_depth == 0 {
            return bad("max_depth must be positive");
        }
        if !(self.eta >= 0.0 && self.eta.is_finite()) {
            return bad("eta must be finite and non-negative");
        }
        if !(self.subsample > 0.0 && self.subsample <= 1.0) {
            return bad("subsample must lie in (0, 1]");
        }
        if !(self.gamma >= 0.0 && self.lambda >= 0.0 && self.min_child_weight >= 0.0) {
            return bad("gamma, lambda and min_child_weight must be non-negative");
        }
        Ok(())
    }
}

/// Per-feature monotone direction of the model output (log-odds of the
/// positive class): -1 non-increasing, 0 free, +1 non-decreasing.
pub type MonotoneSpec = Vec<i8>;

/// Transfer-model constraint: miss probability never rises with PTT.
pub fn transfer_monotone_spec() -> MonotoneSpec {
    let mut spec = vec![0; FEATURE_NAMES.len()];
    spec[PTT_FEATURE] = -1;
    spec
}

/// Column-major feature matrix with binary labels (1.0 = positive).
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    columns: Vec<Vec<f64>>,
    labels: Vec<f64>,
    feature_names: Vec<String>,
}

impl Dataset {
    pub fn from_rows(rows: &[Vec<f64>], labels: &[bool], feature_names: Vec<String>) -> Result<Self> {
        if rows.len() != labels.len() {
            return Err(Error::Config(format!(
                "{} rows for {} labels",
                rows.len(),
                labels.len()
            )));
        }
        let width = feature_names.len();
        let mut columns = vec![Vec::with_capacity(rows.len()); width];
        for row in rows {
            if row.len() != width {
                return Err(Error::Schema {
                    expected: width,
                    got: row.len(),
                });
            }
            for (col, v) in columns.iter_mut().zip(row) {
                col.push(*v);
            }
        }
        Ok(Self {
            columns,
            labels: labels.iter().map(|&l| if l { 1.0 } else { 0.0 }).collect(),
            feature_names,
        })
    }

    /// Labelled transfers with "missed" as the positive class. Records
    /// without a label are skipped.
    pub fn from_transfers(records: &[TransferRecord]) -> Result<Self> {
        let mut rows = Vec::with_capacity(records.len());
        let mut labels = Vec::with_capacity(records.len());
        for rec in records {
            if let Some(reached) = rec.reached() {
                rows.push(rec.features.to_vector());
                labels.push(!reached);
            }
        }
        Self::from_rows(&rows, &labels, FEATURE_NAMES.iter().map(|s| s.to_string()).collect())
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn n_features(&self) -> usize {
        self.columns.len()
    }

    pub fn feature_names(&self) -> &[String] {
        &self.feature_names
    }

    pub fn labels(&self) -> impl Iterator<Item = bool> + '_ {
        self.labels.iter().map(|&l| l > 0.5)
    }

    pub(crate) fn label(&self, row: usize) -> f64 {
        self.labels[row]
    }

    pub(crate) fn column(&self, feature: usize) -> &[f64] {
        &self.columns[feature]
    }

    pub fn row(&self, row: usize) -> Vec<f64> {
        self.columns.iter().map(|c| c[row]).collect()
    }

    pub fn subset(&self, rows: &[usize]) -> Self {
        Self {
            columns: self
                .columns
                .iter()
                .map(|c| rows.iter().map(|&r| c[r]).collect())
                .collect(),
            labels: rows.iter().map(|&r| self.labels[r]).collect(),
            feature_names: self.feature_names.clone(),
        }
    }

    pub fn positives(&self) -> usize {
        self.labels.iter().filter(|&&l| l > 0.5).count()
    }
}
