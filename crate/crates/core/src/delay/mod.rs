//! Bayesian two-component lognormal mixture regression for arrival delays.
//!
//! A delay `d` (minutes, possibly negative) is shifted to `z = d + shift`
//! and modelled as
//!
//! ```text
//! p(z | x) = pi1 * LN(z; mu1(x), sigma1(x)) + pi2 * LN(z; mu2(x), sigma2(x))
//! mu_c(x)        = b_c0 + sum_j b_cj x_j
//! log sigma_c(x) = s_c0 + sum_j s_cj x_j
//! ```
//!
//! Every regression coefficient has a N(0, 1) prior and `(pi1, pi2)` a flat
//! Dirichlet(1, 1) prior. Component 1 is identified as the high-variance
//! component by requiring `s_10 > s_20`.

mod diagnostics;
mod mcmc;
mod predictive;

pub use diagnostics::{ess, rhat, split_chains, Rhat};
pub use mcmc::{fit_mcmc, McmcConfig, ParamSummary};
pub use predictive::{elpd, posterior_predictive_sample, qq_points};

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::data::{TrainEvent, TrainType};
use crate::error::{Error, Result};
use crate::time::ServiceTime;

pub const POSTERIOR_FORMAT_VERSION: u32 = 1;
/// Shifted responses at or below zero are replaced by this value.
pub const CLAMPED_RESPONSE: f64 = 0.01;

const HALF_LN_2PI: f64 = 0.918_938_533_204_672_8;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DelayFeatures {
    /// Hours from origin to final destination.
    pub total_runtime: f64,
    /// Intercity arriving in [09:00, 18:00).
    pub mid_day_afternoon_intercity: bool,
    /// Intercity arriving in [18:00, 05:00).
    pub evening_night_intercity: bool,
}

impl DelayFeatures {
    pub fn for_arrival(train_type: TrainType, scheduled_arrival: ServiceTime, total_runtime: f64) -> Self {
        let hour = scheduled_arrival.clock_hour();
        let intercity = train_type.is_intercity();
        Self {
            total_runtime,
            mid_day_afternoon_intercity: intercity && (9..18).contains(&hour),
            evening_night_intercity: intercity && (hour >= 18 || hour < 5),
        }
    }

    pub fn from_event(event: &TrainEvent, train_type: TrainType) -> Option<Self> {
        Some(Self::for_arrival(train_type, event.scheduled_arrival?, event.total_runtime?))
    }
}

/// Which covariates enter the linear predictors.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FeatureSet {
    InterceptOnly,
    /// `total_runtime`, `mid_day_afternoon_intercity`, `evening_night_intercity`.
    Full,
}

impl FeatureSet {
    pub fn len(self) -> usize {
        match self {
            FeatureSet::InterceptOnly => 0,
            FeatureSet::Full => 3,
        }
    }

    pub fn is_empty(self) -> bool {
        self.len() == 0
    }

    pub fn names(self) -> &'static [&'static str] {
        match self {
            FeatureSet::InterceptOnly => &[],
            FeatureSet::Full => &["total_runtime", "mid_day_afternoon_intercity", "evening_night_intercity"],
        }
    }

    pub fn covariates(self, f: &DelayFeatures) -> Vec<f64> {
        match self {
            FeatureSet::InterceptOnly => Vec::new(),
            FeatureSet::Full => vec![
                f.total_runtime,
                f.mid_day_afternoon_intercity as u8 as f64,
                f.evening_night_intercity as u8 as f64,
            ],
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Components {
    One,
    Two,
}

/// One draw of all regression coefficients. Each vector holds the intercept
/// followed by one slope per covariate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MixtureCoefficients {
    pub pi1: f64,
    pub mu1: Vec<f64>,
    pub log_sigma1: Vec<f64>,
    pub mu2: Vec<f64>,
    pub log_sigma2: Vec<f64>,
}

fn linear(beta: &[f64], x: &[f64]) -> f64 {
    beta[0] + beta[1..].iter().zip(x).map(|(b, v)| b * v).sum::<f64>()
}

impl MixtureCoefficients {
    pub fn intercept_only(pi1: f64, mu1: f64, log_sigma1: f64, mu2: f64, log_sigma2: f64) -> Self {
        Self {
            pi1,
            mu1: vec![mu1],
            log_sigma1: vec![log_sigma1],
            mu2: vec![mu2],
            log_sigma2: vec![log_sigma2],
        }
    }

    /// Single lognormal: all weight on component 1.
    pub fn single(mu: Vec<f64>, log_sigma: Vec<f64>) -> Self {
        Self {
            pi1: 1.0,
            mu2: mu.clone(),
            log_sigma2: log_sigma.clone(),
            mu1: mu,
            log_sigma1: log_sigma,
        }
    }

    pub fn n_covariates(&self) -> usize {
        self.mu1.len() - 1
    }

    pub fn pi2(&self) -> f64 {
        1.0 - self.pi1
    }

    /// `(mu, sigma)` of component `c` (1 or 2) at covariates `x`.
    pub fn component(&self, c: usize, x: &[f64]) -> (f64, f64) {
        match c {
            1 => (linear(&self.mu1, x), linear(&self.log_sigma1, x).exp()),
            2 => (linear(&self.mu2, x), linear(&self.log_sigma2, x).exp()),
            _ => panic!("component index {c} out of range"),
        }
    }

    /// Closed-form mean of the (unshifted) mixture at `x`.
    pub fn mean(&self, x: &[f64]) -> f64 {
        let m = |c| {
            let (mu, s): (f64, f64) = self.component(c, x);
            (mu + 0.5 * s * s).exp()
        };
        let second = if self.pi2() > 0.0 { self.pi2() * m(2) } else { 0.0 };
        self.pi1 * m(1) + second
    }

    pub(crate) fn to_row(&self) -> Vec<f64> {
        let mut row = Vec::with_capacity(1 + 4 * self.mu1.len());
        row.push(self.pi1);
        for block in [&self.mu1, &self.log_sigma1, &self.mu2, &self.log_sigma2] {
            row.extend_from_slice(block);
        }
        row
    }

    pub(crate) fn from_row(row: &[f64], k: usize) -> Self {
        let w = k + 1;
        let block = |i: usize| row[1 + i * w..1 + (i + 1) * w].to_vec();
        Self {
            pi1: row[0],
            mu1: block(0),
            log_sigma1: block(1),
            mu2: block(2),
            log_sigma2: block(3),
        }
    }

    fn validate_shape(&self, x: &[f64]) -> Result<()> {
        let w = x.len() + 1;
        let ok = [&self.mu1, &self.log_sigma1, &self.mu2, &self.log_sigma2]
            .iter()
            .all(|b| b.len() == w);
        if !ok {
            return Err(Error::Schema {
                expected: self.mu1.len() - 1,
                got: x.len(),
            });
        }
        Ok(())
    }
}

pub(crate) fn lognormal_log_density(ln_z: f64, mu: f64, log_sigma: f64) -> f64 {
    let t = (ln_z - mu) * (-log_sigma).exp();
    -ln_z - log_sigma - HALF_LN_2PI - 0.5 * t * t
}

pub(crate) fn log_sum_exp2(a: f64, b: f64) -> f64 {
    let m = a.max(b);
    if m == f64::NEG_INFINITY {
        return m;
    }
    m + ((a - m).exp() + (b - m).exp()).ln()
}

/// Log-density of the mixture at a flat coefficient row (see
/// [`MixtureCoefficients::to_row`]).
pub(crate) fn row_log_density(row: &[f64], k: usize, ln_z: f64, x: &[f64]) -> f64 {
    let w = k + 1;
    let lin = |i: usize| linear(&row[1 + i * w..1 + (i + 1) * w], x);
    let pi1 = row[0];
    let c1 = pi1.ln() + lognormal_log_density(ln_z, lin(0), lin(1));
    if pi1 >= 1.0 {
        return c1;
    }
    let c2 = (1.0 - pi1).ln() + lognormal_log_density(ln_z, lin(2), lin(3));
    log_sum_exp2(c1, c2)
}

/// `log p(z | x, theta)` for a shifted delay `z > 0`.
pub fn mixture_log_density(z: f64, x: &[f64], theta: &MixtureCoefficients) -> Result<f64> {
    if !(z > 0.0) || !z.is_finite() {
        return Err(Error::Domain(format!("lognormal mixture needs z > 0, got {z}")));
    }
    theta.validate_shape(x)?;
    if !(0.0..=1.0).contains(&theta.pi1) {
        return Err(Error::Domain(format!("mixing weight {} outside [0, 1]", theta.pi1)));
    }
    Ok(row_log_density(&theta.to_row(), x.len(), z.ln(), x))
}

/// Delay observation as used for fitting and scoring.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DelayObservation {
    pub delay: f64,
    pub features: DelayFeatures,
}

/// Delay observations for every arrival event with a runtime.
pub fn observations_from_events(
    events: &[TrainEvent],
    rules: &crate::data::RuleSet,
) -> Vec<DelayObservation> {
    events
        .iter()
        .filter_map(|e| {
            let delay = e.arrival_delay().ok()?.minutes();
            let train_type = crate::data::classify_train_type(e, rules);
            Some(DelayObservation {
                delay,
                features: DelayFeatures::from_event(e, train_type)?,
            })
        })
        .collect()
}

/// MCMC draws of the mixture regression plus convergence diagnostics.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MixturePosterior {
    pub format_version: u32,
    pub components: Components,
    pub feature_set: FeatureSet,
    /// Minutes added to delays before the lognormal likelihood.
    pub shift: f64,
    pub parameter_names: Vec<String>,
    /// Kept draws per chain; each row is `[pi1, mu1.., log_sigma1.., mu2.., log_sigma2..]`.
    pub chains: Vec<Vec<Vec<f64>>>,
    pub diagnostics: Vec<ParamSummary>,
    /// Per-chain acceptance rate of each update block after warmup.
    pub acceptance: Vec<Vec<f64>>,
    /// All R-hat and ESS thresholds met.
    pub accepted: bool,
    pub n_observations: usize,
    /// Observations whose shifted response was clamped to [`CLAMPED_RESPONSE`].
    pub clamped: usize,
    /// Hash of the run configuration that produced this file.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub config_hash: Option<String>,
}

impl MixturePosterior {
    /// Posterior concentrated on a single coefficient set.
    pub fn point_mass(theta: MixtureCoefficients, shift: f64, feature_set: FeatureSet) -> Self {
        assert_eq!(theta.n_covariates(), feature_set.len(), "coefficient shape");
        let components = if theta.pi1 >= 1.0 { Components::One } else { Components::Two };
        Self {
            format_version: POSTERIOR_FORMAT_VERSION,
            components,
            feature_set,
            shift,
            parameter_names: parameter_names(feature_set),
            chains: vec![vec![theta.to_row()]],
            diagnostics: Vec::new(),
            acceptance: Vec::new(),
            accepted: true,
            n_observations: 0,
            clamped: 0,
            config_hash: None,
        }
    }

    pub fn n_covariates(&self) -> usize {
        self.feature_set.len()
    }

    pub fn draws(&self) -> impl Iterator<Item = &[f64]> + '_ {
        self.chains.iter().flatten().map(|r| r.as_slice())
    }

    pub fn n_draws(&self) -> usize {
        self.chains.iter().map(Vec::len).sum()
    }

    pub fn draw(&self, index: usize) -> MixtureCoefficients {
        let row = self.draws().nth(index).expect("draw index in range");
        MixtureCoefficients::from_row(row, self.n_covariates())
    }

    pub(crate) fn flat_draws(&self) -> Vec<&[f64]> {
        self.draws().collect()
    }

    /// Posterior mean of each flat parameter.
    pub fn mean_row(&self) -> Vec<f64> {
        let n = self.n_draws() as f64;
        let mut mean = vec![0.0; self.parameter_names.len()];
        for row in self.draws() {
            for (m, v) in mean.iter_mut().zip(row) {
                *m += v / n;
            }
        }
        mean
    }

    pub fn shifted_response(&self, delay: f64) -> f64 {
        let z = delay + self.shift;
        if z > 0.0 {
            z
        } else {
            CLAMPED_RESPONSE
        }
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let post: Self = serde_json::from_str(text)?;
        if post.format_version != POSTERIOR_FORMAT_VERSION {
            return Err(Error::Parse(format!(
                "unsupported posterior format version {}",
                post.format_version
            )));
        }
        let width = 1 + 4 * (post.n_covariates() + 1);
        if post.n_draws() == 0 || post.draws().any(|r| r.len() != width) {
            return Err(Error::Parse("posterior draw matrix has the wrong shape".into()));
        }
        Ok(post)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_json()?).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text)
    }
}

pub fn parameter_names(feature_set: FeatureSet) -> Vec<String> {
    let mut names = vec!["pi1".to_string()];
    let terms: Vec<&str> = std::iter::once("intercept").chain(feature_set.names().iter().copied()).collect();
    for block in ["mu1", "log_sigma1", "mu2", "log_sigma2"] {
        for t in &terms {
            names.push(format!("{block}[{t}]"));
        }
    }
    names
}
