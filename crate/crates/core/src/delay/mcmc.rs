//! Adaptive random-walk Metropolis-within-Gibbs for the mixture regression.
//!
//! Parameters are updated in blocks: the location coefficients and the
//! log-scale coefficients of each component, the logit of `pi1`, and a final
//! joint block over everything. Each block proposes from a Gaussian whose
//! covariance is learned from the chain's own history in a series of
//! doubling warmup windows, with a Robbins-Monro step-size controller
//! aiming at the usual optimal acceptance rate for the block dimension.
//! Adaptation stops at the end of warmup, so kept draws come from a fixed
//! Markov kernel.

use rand::Rng as _;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{
    diagnostics, lognormal_log_density, log_sum_exp2, parameter_names, Components, DelayObservation,
    FeatureSet, MixturePosterior, CLAMPED_RESPONSE, POSTERIOR_FORMAT_VERSION,
};
use crate::error::{Error, Result};
use crate::metrics::quantile_sorted;
use crate::rng::{stream_rng, Rng};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct McmcConfig {
    pub chains: usize,
    pub warmup: usize,
    /// Kept draws per chain.
    pub draws: usize,
    /// Sweeps per kept draw after warmup.
    pub thin: usize,
    pub components: Components,
    pub feature_set: FeatureSet,
    /// Minutes added to each delay before fitting.
    pub shift: f64,
    /// Clamp non-positive shifted responses instead of failing.
    pub clamp_nonpositive: bool,
    pub rhat_max: f64,
    /// Minimum total effective sample size per parameter.
    pub ess_min: f64,
    pub seed: u64,
}

impl Default for McmcConfig {
    fn default() -> Self {
        Self {
            chains: 4,
            warmup: 1000,
            draws: 1000,
            thin: 5,
            components: Components::Two,
            feature_set: FeatureSet::Full,
            shift: 6.0,
            clamp_nonpositive: true,
            rhat_max: 1.01,
            ess_min: 400.0,
            seed: 0,
        }
    }
}

impl McmcConfig {
    pub fn validate(&self) -> Result<()> {
        if self.chains == 0 || self.draws == 0 || self.thin == 0 {
            return Err(Error::Config("mcmc: chains, draws and thin must be positive".into()));
        }
        if !self.shift.is_finite() {
            return Err(Error::Config("mcmc: shift must be finite".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParamSummary {
    pub name: String,
    pub mean: f64,
    pub sd: f64,
    pub q025: f64,
    pub q975: f64,
    pub rhat: f64,
    pub ess: f64,
    /// Zero within-chain variance, so R-hat was set to 1 by convention.
    pub degenerate: bool,
}

impl ParamSummary {
    pub fn covers(&self, value: f64) -> bool {
        self.q025 <= value && value <= self.q975
    }
}

struct Problem {
    ln_z: Vec<f64>,
    /// Row-major covariates, `k` per observation.
    x: Vec<f64>,
    k: usize,
    two: bool,
}

impl Problem {
    fn width(&self) -> usize {
        self.k + 1
    }

    /// Start index of coefficient block `b` (0 mu1, 1 ls1, 2 mu2, 3 ls2).
    fn block_start(&self, b: usize) -> usize {
        1 + b * self.width()
    }

    fn dim(&self) -> usize {
        1 + 4 * self.width()
    }

    fn active(&self) -> Vec<usize> {
        if self.two {
            (0..self.dim()).collect()
        } else {
            (1..self.block_start(2)).collect()
        }
    }

    fn blocks(&self) -> Vec<Vec<usize>> {
        let w = self.width();
        let coef = |b: usize| (self.block_start(b)..self.block_start(b) + w).collect::<Vec<_>>();
        let mut blocks = vec![coef(0), coef(1)];
        if self.two {
            blocks.extend([coef(2), coef(3), vec![0]]);
        }
        blocks.push(self.active());
        blocks
    }

    fn linear(&self, theta: &[f64], block: usize, i: usize) -> f64 {
        let s = self.block_start(block);
        let beta = &theta[s..s + self.width()];
        let x = &self.x[i * self.k..(i + 1) * self.k];
        beta[0] + beta[1..].iter().zip(x).map(|(b, v)| b * v).sum::<f64>()
    }

    /// Component log-densities (without the weight) for every observation.
    fn component(&self, theta: &[f64], c: usize, out: &mut [f64]) {
        let (mu_b, ls_b) = (2 * c, 2 * c + 1);
        for (i, o) in out.iter_mut().enumerate() {
            *o = lognormal_log_density(self.ln_z[i], self.linear(theta, mu_b, i), self.linear(theta, ls_b, i));
        }
    }

    fn log_weights(&self, theta: &[f64]) -> (f64, f64) {
        if self.two {
            let u = theta[0];
            (-softplus(-u), -softplus(u))
        } else {
            (0.0, f64::NEG_INFINITY)
        }
    }

    fn log_likelihood(&self, theta: &[f64], c1: &[f64], c2: &[f64]) -> f64 {
        let (l1, l2) = self.log_weights(theta);
        if !self.two {
            return c1.iter().sum();
        }
        c1.iter().zip(c2).map(|(a, b)| log_sum_exp2(l1 + a, l2 + b)).sum()
    }

    fn log_prior(&self, theta: &[f64]) -> f64 {
        if self.two && theta[self.block_start(1)] <= theta[self.block_start(3)] {
            return f64::NEG_INFINITY;
        }
        let mut lp = 0.0;
        for i in self.active() {
            if i == 0 {
                // Flat prior on pi1 expressed on the logit scale.
                let (l1, l2) = self.log_weights(theta);
                lp += l1 + l2;
            } else {
                lp -= 0.5 * theta[i] * theta[i];
            }
        }
        lp
    }

    /// Flat output row with `pi1` on the probability scale. The one-component
    /// model mirrors component 1 into component 2 with zero weight.
    fn output_row(&self, theta: &[f64]) -> Vec<f64> {
        let mut row = theta.to_vec();
        if self.two {
            row[0] = sigmoid(theta[0]);
        } else {
            row[0] = 1.0;
            let (s1, s2, w) = (self.block_start(0), self.block_start(2), 2 * self.width());
            row.copy_within(s1..s1 + w, s2);
        }
        row
    }
}

fn softplus(x: f64) -> f64 {
    if x > 0.0 {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

fn target_acceptance(dim: usize) -> f64 {
    match dim {
        1 => 0.44,
        2 => 0.35,
        3 => 0.28,
        _ => 0.234,
    }
}

/// End points of the covariance-learning windows inside `warmup`.
fn adaptation_windows(warmup: usize) -> Vec<usize> {
    if warmup < 40 {
        return Vec::new();
    }
    let init = warmup * 15 / 100;
    let last = warmup - warmup / 10;
    let mut ends = Vec::new();
    let (mut start, mut width) = (init, 25.max(warmup / 40));
    while start < last {
        let mut end = start + width;
        if end + 2 * width > last {
            end = last;
        }
        ends.push(end);
        start = end;
        width *= 2;
    }
    ends
}

fn cholesky(a: &[f64], d: usize) -> Option<Vec<f64>> {
    let mut l = vec![0.0; d * d];
    for i in 0..d {
        for j in 0..=i {
            let s: f64 = (0..j).map(|p| l[i * d + p] * l[j * d + p]).sum();
            if i == j {
                let v = a[i * d + i] - s;
                if !(v > 0.0) {
                    return None;
                }
                l[i * d + j] = v.sqrt();
            } else {
                l[i * d + j] = (a[i * d + j] - s) / l[j * d + j];
            }
        }
    }
    Some(l)
}

struct Block {
    idx: Vec<usize>,
    chol: Vec<f64>,
    log_scale: f64,
    /// Updates since the step size was last reset.
    age: usize,
    accepted: usize,
    tried: usize,
}

impl Block {
    fn new(idx: Vec<usize>) -> Self {
        let d = idx.len();
        let mut chol = vec![0.0; d * d];
        for i in 0..d {
            chol[i * d + i] = 0.05;
        }
        Self {
            idx,
            chol,
            log_scale: 0.0,
            age: 0,
            accepted: 0,
            tried: 0,
        }
    }

    fn dim(&self) -> usize {
        self.idx.len()
    }

    /// Replaces the proposal shape with a regularized window covariance.
    fn set_covariance(&mut self, full: &[f64], n_total: usize, window: usize) {
        let d = self.dim();
        let w = window as f64;
        let mut a = vec![0.0; d * d];
        for (i, &p) in self.idx.iter().enumerate() {
            for (j, &q) in self.idx.iter().enumerate() {
                a[i * d + j] = full[p * n_total + q] * w / (w + 5.0);
            }
            a[i * d + i] += 1e-6 * 5.0 / (w + 5.0);
        }
        if let Some(chol) = cholesky(&a, d) {
            self.chol = chol;
            self.log_scale = (2.38 / (d as f64).sqrt()).ln();
            self.age = 0;
        }
    }

    fn propose(&self, theta: &[f64], rng: &mut Rng) -> Vec<f64> {
        let d = self.dim();
        let e: Vec<f64> = (0..d).map(|_| rng.sample(StandardNormal)).collect();
        let scale = self.log_scale.exp();
        let mut next = theta.to_vec();
        for (i, &p) in self.idx.iter().enumerate() {
            let step: f64 = (0..=i).map(|j| self.chol[i * d + j] * e[j]).sum();
            next[p] += scale * step;
        }
        next
    }

    fn adapt(&mut self, accept_prob: f64) {
        self.age += 1;
        let rate = (self.age as f64 + 10.0).powf(-0.6);
        self.log_scale += rate * (accept_prob - target_acceptance(self.dim()));
    }
}

struct ChainState {
    theta: Vec<f64>,
    c1: Vec<f64>,
    c2: Vec<f64>,
    log_lik: f64,
    log_prior: f64,
}

struct ChainOutput {
    draws: Vec<Vec<f64>>,
    acceptance: Vec<f64>,
}

fn initial_theta(problem: &Problem, rng: &mut Rng) -> Vec<f64> {
    let n = problem.ln_z.len() as f64;
    let mean = problem.ln_z.iter().sum::<f64>() / n;
    let var = problem.ln_z.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0).max(1.0);
    let log_sd = 0.5 * var.max(1e-4).ln();
    let mut jitter = |sd: f64| sd * rng.sample::<f64, _>(StandardNormal);
    let mut theta = vec![0.0; problem.dim()];
    theta[0] = (0.3f64 / 0.7).ln() + jitter(0.5);
    for b in 0..4 {
        let s = problem.block_start(b);
        theta[s] = match b {
            0 => mean + 0.2 + jitter(0.2),
            1 => log_sd + 0.3 + jitter(0.2),
            2 => mean + jitter(0.2),
            _ => log_sd - 0.7 + jitter(0.2),
        };
        for j in 1..problem.width() {
            theta[s + j] = jitter(0.05);
        }
    }
    if problem.two && theta[problem.block_start(1)] <= theta[problem.block_start(3)] {
        let (a, b) = (problem.block_start(1), problem.block_start(3));
        theta.swap(a, b);
        theta[a] += 0.1;
    }
    theta
}

fn run_chain(problem: &Problem, config: &McmcConfig, chain: usize) -> ChainOutput {
    let mut rng = stream_rng(config.seed, chain as u64);
    let n = problem.ln_z.len();
    let dim = problem.dim();
    let theta = initial_theta(problem, &mut rng);
    let mut c1 = vec![0.0; n];
    let mut c2 = vec![0.0; n];
    problem.component(&theta, 0, &mut c1);
    if problem.two {
        problem.component(&theta, 1, &mut c2);
    }
    let mut state = ChainState {
        log_lik: problem.log_likelihood(&theta, &c1, &c2),
        log_prior: problem.log_prior(&theta),
        theta,
        c1,
        c2,
    };

    let mut blocks: Vec<Block> = problem.blocks().into_iter().map(Block::new).collect();
    let windows = adaptation_windows(config.warmup);
    let mut window_draws: Vec<Vec<f64>> = Vec::new();
    let mut draws = Vec::with_capacity(config.draws);
    let mut scratch1 = vec![0.0; n];
    let mut scratch2 = vec![0.0; n];

    for iter in 0..config.warmup + config.draws * config.thin {
        let warming = iter < config.warmup;
        for block in blocks.iter_mut() {
            let proposal = block.propose(&state.theta, &mut rng);
            let log_prior = problem.log_prior(&proposal);
            let touches = |c: usize| {
                let (lo, hi) = (problem.block_start(2 * c), problem.block_start(2 * c + 2));
                block.idx.iter().any(|&p| (lo..hi).contains(&p))
            };
            let (t1, t2) = (touches(0), problem.two && touches(1));
            let mut log_accept = f64::NEG_INFINITY;
            let mut log_lik = f64::NEG_INFINITY;
            if log_prior.is_finite() {
                let c1 = if t1 {
                    problem.component(&proposal, 0, &mut scratch1);
                    &scratch1
                } else {
                    &state.c1
                };
                let c2 = if t2 {
                    problem.component(&proposal, 1, &mut scratch2);
                    &scratch2
                } else {
                    &state.c2
                };
                log_lik = problem.log_likelihood(&proposal, c1, c2);
                log_accept = log_lik + log_prior - state.log_lik - state.log_prior;
                if log_accept.is_nan() {
                    log_accept = f64::NEG_INFINITY;
                }
            }
            let accept_prob = log_accept.min(0.0).exp();
            let accept = rng.random::<f64>() < accept_prob;
            if accept {
                state.theta = proposal;
                state.log_lik = log_lik;
                state.log_prior = log_prior;
                if t1 {
                    std::mem::swap(&mut state.c1, &mut scratch1);
                }
                if t2 {
                    std::mem::swap(&mut state.c2, &mut scratch2);
                }
            }
            if warming {
                block.adapt(accept_prob);
            } else {
                block.tried += 1;
                block.accepted += accept as usize;
            }
        }

        if warming {
            let in_window = windows.first().is_some_and(|_| iter >= config.warmup * 15 / 100);
            if in_window {
                window_draws.push(state.theta.clone());
            }
            if windows.contains(&(iter + 1)) {
                let cov = covariance(&window_draws, dim);
                for block in blocks.iter_mut() {
                    block.set_covariance(&cov, dim, window_draws.len());
                }
                window_draws.clear();
            }
        } else if (iter - config.warmup + 1) % config.thin == 0 {
            draws.push(problem.output_row(&state.theta));
        }
    }

    ChainOutput {
        draws,
        acceptance: blocks
            .iter()
            .map(|b| b.accepted as f64 / b.tried.max(1) as f64)
            .collect(),
    }
}

fn covariance(rows: &[Vec<f64>], dim: usize) -> Vec<f64> {
    let n = rows.len() as f64;
    let mut mean = vec![0.0; dim];
    for r in rows {
        for (m, v) in mean.iter_mut().zip(r) {
            *m += v / n;
        }
    }
    let mut cov = vec![0.0; dim * dim];
    for r in rows {
        for i in 0..dim {
            let di = r[i] - mean[i];
            for j in 0..=i {
                cov[i * dim + j] += di * (r[j] - mean[j]);
            }
        }
    }
    let denom = (n - 1.0).max(1.0);
    for i in 0..dim {
        for j in 0..=i {
            let v = cov[i * dim + j] / denom;
            cov[i * dim + j] = v;
            cov[j * dim + i] = v;
        }
    }
    cov
}

/// Samples the posterior of the mixture regression.
///
/// Delays are shifted by `config.shift`; a shifted value at or below zero
/// is clamped to [`CLAMPED_RESPONSE`] (and counted) unless clamping is
/// disabled, in which case it is a domain error. Chains run in parallel on
/// independent RNG streams, so the result depends only on the seed.
pub fn fit_mcmc(data: &[DelayObservation], config: &McmcConfig) -> Result<MixturePosterior> {
    config.validate()?;
    if data.len() < 2 {
        return Err(Error::InsufficientData {
            needed: 2,
            got: data.len(),
        });
    }
    let k = config.feature_set.len();
    let mut ln_z = Vec::with_capacity(data.len());
    let mut x = Vec::with_capacity(data.len() * k);
    let mut clamped = 0;
    for obs in data {
        let mut z = obs.delay + config.shift;
        if !z.is_finite() {
            return Err(Error::Domain(format!("non-finite delay {}", obs.delay)));
        }
        if z <= 0.0 {
            if !config.clamp_nonpositive {
                return Err(Error::Domain(format!(
                    "shifted delay {z} is not positive; increase the shift"
                )));
            }
            z = CLAMPED_RESPONSE;
            clamped += 1;
        }
        ln_z.push(z.ln());
        x.extend(config.feature_set.covariates(&obs.features));
    }
    let problem = Problem {
        ln_z,
        x,
        k,
        two: config.components == Components::Two,
    };

    let outputs: Vec<ChainOutput> = (0..config.chains)
        .into_par_iter()
        .map(|c| run_chain(&problem, config, c))
        .collect();

    let names = parameter_names(config.feature_set);
    let mut summaries = Vec::new();
    for p in problem.active() {
        let chains: Vec<Vec<f64>> = outputs
            .iter()
            .map(|o| o.draws.iter().map(|r| r[p]).collect())
            .collect();
        summaries.push(summarize(&names[p], &chains));
    }
    let accepted = summaries
        .iter()
        .all(|s| s.rhat < config.rhat_max && s.ess > config.ess_min);

    Ok(MixturePosterior {
        format_version: POSTERIOR_FORMAT_VERSION,
        components: config.components,
        feature_set: config.feature_set,
        shift: config.shift,
        parameter_names: names,
        acceptance: outputs.iter().map(|o| o.acceptance.clone()).collect(),
        chains: outputs.into_iter().map(|o| o.draws).collect(),
        diagnostics: summaries,
        accepted,
        n_observations: data.len(),
        clamped,
        config_hash: None,
    })
}

fn summarize(name: &str, chains: &[Vec<f64>]) -> ParamSummary {
    let pooled: Vec<f64> = chains.iter().flatten().copied().collect();
    let n = pooled.len() as f64;
    let mean = pooled.iter().sum::<f64>() / n;
    let sd = (pooled.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0).max(1.0)).sqrt();
    let mut sorted = pooled;
    sorted.sort_by(f64::total_cmp);
    let (rhat, ess) = if chains.len() >= 2 && chains[0].len() >= 4 {
        (diagnostics::rhat(chains), diagnostics::ess(chains))
    } else {
        (
            diagnostics::Rhat {
                value: f64::NAN,
                degenerate: false,
            },
            f64::NAN,
        )
    };
    ParamSummary {
        name: name.to_string(),
        mean,
        sd,
        q025: quantile_sorted(&sorted, 0.025),
        q975: quantile_sorted(&sorted, 0.975),
        rhat: rhat.value,
        ess,
        degenerate: rhat.degenerate,
    }
}
