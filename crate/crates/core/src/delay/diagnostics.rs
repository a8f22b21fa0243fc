//! Split-chain convergence diagnostics.

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Rhat {
    pub value: f64,
    /// Zero within-chain variance; `value` is 1 by convention.
    pub degenerate: bool,
}

/// Splits every chain into its first and second half, dropping the middle
/// draw of odd-length chains.
pub fn split_chains(chains: &[Vec<f64>]) -> Vec<&[f64]> {
    let mut out = Vec::with_capacity(2 * chains.len());
    for c in chains {
        let half = c.len() / 2;
        out.push(&c[..half]);
        out.push(&c[c.len() - half..]);
    }
    out
}

fn mean(x: &[f64]) -> f64 {
    x.iter().sum::<f64>() / x.len() as f64
}

fn variance(x: &[f64]) -> f64 {
    let m = mean(x);
    x.iter().map(|v| (v - m).powi(2)).sum::<f64>() / (x.len() as f64 - 1.0)
}

struct Pooled {
    within: f64,
    var_plus: f64,
}

fn pooled(split: &[&[f64]]) -> Pooled {
    let n = split[0].len() as f64;
    let means: Vec<f64> = split.iter().map(|c| mean(c)).collect();
    let within = split.iter().map(|c| variance(c)).sum::<f64>() / split.len() as f64;
    let between = n * variance(&means);
    Pooled {
        within,
        var_plus: (n - 1.0) / n * within + between / n,
    }
}

/// Split R-hat. Needs at least two chains of at least four draws.
pub fn rhat(chains: &[Vec<f64>]) -> Rhat {
    assert!(chains.len() >= 2, "rhat needs at least two chains");
    assert!(chains.iter().all(|c| c.len() >= 4), "rhat needs at least four draws per chain");
    let split = split_chains(chains);
    let p = pooled(&split);
    if !(p.within > 0.0) {
        return Rhat {
            value: 1.0,
            degenerate: true,
        };
    }
    Rhat {
        value: (p.var_plus / p.within).sqrt(),
        degenerate: false,
    }
}

/// Biased autocovariance at `lag`.
fn autocov(x: &[f64], m: f64, lag: usize) -> f64 {
    let n = x.len();
    (0..n - lag).map(|i| (x[i] - m) * (x[i + lag] - m)).sum::<f64>() / n as f64
}

/// Effective sample size across all chains: split chains, multi-chain
/// autocorrelation estimate and Geyer's initial monotone sequence.
pub fn ess(chains: &[Vec<f64>]) -> f64 {
    let split = split_chains(chains);
    let m = split.len();
    let n = split[0].len();
    let total = (m * n) as f64;
    if n < 2 {
        return f64::NAN;
    }
    let p = pooled(&split);
    if !(p.within > 0.0) {
        return total;
    }
    let means: Vec<f64> = split.iter().map(|c| mean(c)).collect();
    let rho = |lag: usize| {
        if lag == 0 {
            return 1.0;
        }
        let mean_acov = split
            .iter()
            .zip(&means)
            .map(|(c, &mu)| autocov(c, mu, lag))
            .sum::<f64>()
            / m as f64;
        1.0 - (p.within - mean_acov) / p.var_plus
    };

    let mut sum_pairs = 0.0;
    let mut prev_pair = f64::INFINITY;
    let mut t = 0;
    while t + 1 < n {
        let pair = rho(t) + rho(t + 1);
        if pair <= 0.0 {
            break;
        }
        let pair = pair.min(prev_pair);
        sum_pairs += pair;
        prev_pair = pair;
        t += 2;
    }
    let tau = (-1.0 + 2.0 * sum_pairs).max(1.0 / total.log10());
    total / tau
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::stream_rng;
    use rand::Rng as _;
    use rand_distr::StandardNormal;

    fn normal_chains(c: usize, s: usize, offsets: &[f64]) -> Vec<Vec<f64>> {
        (0..c)
            .map(|i| {
                let mut rng = stream_rng(11, i as u64);
                (0..s).map(|_| offsets[i] + rng.sample::<f64, _>(StandardNormal)).collect()
            })
            .collect()
    }

    #[test]
    fn iid_chains_converge() {
        let chains = normal_chains(4, 10_000, &[0.0; 4]);
        let r = rhat(&chains);
        assert!(!r.degenerate);
        assert!((0.999..=1.005).contains(&r.value), "{}", r.value);
        let e = ess(&chains);
        assert!(e >= 0.8 * 40_000.0, "{e}");
    }

    #[test]
    fn separated_chains_detected() {
        let chains = normal_chains(2, 1000, &[0.0, 10.0]);
        assert!(rhat(&chains).value > 1.1);
    }

    #[test]
    fn constant_chains_are_degenerate() {
        let chains = vec![vec![2.5; 100], vec![2.5; 100]];
        let r = rhat(&chains);
        assert_eq!(r.value, 1.0);
        assert!(r.degenerate);
    }

    #[test]
    fn autocorrelated_chain_has_reduced_ess() {
        // AR(1) with phi = 0.9 has integrated autocorrelation time 19.
        let chains: Vec<Vec<f64>> = (0..4)
            .map(|i| {
                let mut rng = stream_rng(5, i);
                let mut v = 0.0;
                (0..20_000)
                    .map(|_| {
                        v = 0.9 * v + rng.sample::<f64, _>(StandardNormal);
                        v
                    })
                    .collect()
            })
            .collect();
        let e = ess(&chains);
        let expected = 80_000.0 / 19.0;
        assert!((e / expected - 1.0).abs() < 0.2, "{e} vs {expected}");
    }
}
