use rand::Rng as _;
use rand_distr::StandardNormal;

use super::{log_sum_exp2, row_log_density, DelayFeatures, DelayObservation, MixturePosterior};
use crate::metrics::{quantile_sorted, sorted_copy};
use crate::rng::Rng;

impl MixturePosterior {
    /// One predictive delay (minutes) at covariates `x`: a uniformly chosen
    /// draw, a component by weight, a lognormal value, minus the shift.
    pub fn sample_delay(&self, x: &[f64], rng: &mut Rng) -> f64 {
        let total = self.n_draws();
        let mut index = rng.random_range(0..total);
        let row = self
            .chains
            .iter()
            .find_map(|c| {
                if index < c.len() {
                    Some(&c[index])
                } else {
                    index -= c.len();
                    None
                }
            })
            .expect("posterior has draws");
        let k = self.n_covariates();
        let w = k + 1;
        let comp = if rng.random::<f64>() < row[0] { 0 } else { 2 };
        let lin = |b: usize| {
            let beta = &row[1 + b * w..1 + (b + 1) * w];
            beta[0] + beta[1..].iter().zip(x).map(|(c, v)| c * v).sum::<f64>()
        };
        let (mu, log_sigma) = (lin(comp), lin(comp + 1));
        let e: f64 = rng.sample(StandardNormal);
        (mu + log_sigma.exp() * e).exp() - self.shift
    }
}

pub fn posterior_predictive_sample(
    post: &MixturePosterior,
    features: &DelayFeatures,
    n: usize,
    rng: &mut Rng,
) -> Vec<f64> {
    let x = post.feature_set.covariates(features);
    (0..n).map(|_| post.sample_delay(&x, rng)).collect()
}

/// Out-of-sample expected log pointwise predictive density,
/// `sum_i log mean_s p(z_i | x_i, theta_s)`.
pub fn elpd(post: &MixturePosterior, holdout: &[DelayObservation]) -> f64 {
    let draws = post.flat_draws();
    let log_s = (draws.len() as f64).ln();
    let k = post.n_covariates();
    holdout
        .iter()
        .map(|obs| {
            let ln_z = post.shifted_response(obs.delay).ln();
            let x = post.feature_set.covariates(&obs.features);
            let lse = draws
                .iter()
                .map(|row| row_log_density(row, k, ln_z, &x))
                .fold(f64::NEG_INFINITY, log_sum_exp2);
            lse - log_s
        })
        .sum()
}

/// Type-7 quantile pairs at probabilities `(i - 0.5) / k`, `i = 1..=k`.
pub fn qq_points(sample_a: &[f64], sample_b: &[f64], k: usize) -> Vec<(f64, f64)> {
    assert!(!sample_a.is_empty() && !sample_b.is_empty(), "qq needs non-empty samples");
    assert!(k >= 2, "qq needs at least two levels");
    let (a, b) = (sorted_copy(sample_a), sorted_copy(sample_b));
    (1..=k)
        .map(|i| {
            let p = (i as f64 - 0.5) / k as f64;
            (quantile_sorted(&a, p), quantile_sorted(&b, p))
        })
        .collect()
}
