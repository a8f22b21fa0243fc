//! Evaluation metrics for the transfer model, the delay model and whole
//! journeys.
//!
//! Quantiles everywhere use linear interpolation between order statistics
//! (Hyndman & Fan type 7), so QQ tables and buffer times agree.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::journey::DelaySampleSet;

/// Type-7 quantile of an ascending slice.
pub fn quantile_sorted(sorted: &[f64], p: f64) -> f64 {
    assert!(!sorted.is_empty(), "quantile of an empty sample");
    assert!((0.0..=1.0).contains(&p), "probability {p} outside [0, 1]");
    let h = (sorted.len() - 1) as f64 * p;
    let lo = h.floor() as usize;
    let hi = (lo + 1).min(sorted.len() - 1);
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

pub fn sorted_copy(values: &[f64]) -> Vec<f64> {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    v
}

pub fn quantile(values: &[f64], p: f64) -> f64 {
    quantile_sorted(&sorted_copy(values), p)
}

/// Area under the ROC curve from average ranks; tied scores count one half.
/// `labels[i]` is true for the positive class.
pub fn auroc(scores: &[f64], labels: &[bool]) -> Result<f64> {
    if scores.len() != labels.len() {
        return Err(Error::Undefined(format!(
            "{} scores for {} labels",
            scores.len(),
            labels.len()
        )));
    }
    let n_pos = labels.iter().filter(|l| **l).count();
    let n_neg = labels.len() - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return Err(Error::Undefined("AUROC needs both classes".into()));
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));

    let mut rank_sum_pos = 0.0;
    let mut i = 0;
    while i < order.len() {
        let mut j = i + 1;
        while j < order.len() && scores[order[j]] == scores[order[i]] {
            j += 1;
        }
        // 1-based ranks i+1 ..= j share their average
        let avg_rank = (i + 1 + j) as f64 / 2.0;
        let positives = order[i..j].iter().filter(|&&k| labels[k]).count();
        rank_sum_pos += avg_rank * positives as f64;
        i = j;
    }
    let n_pos = n_pos as f64;
    Ok((rank_sum_pos - n_pos * (n_pos + 1.0) / 2.0) / (n_pos * n_neg as f64))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CalibrationBin {
    pub lower: f64,
    pub upper: f64,
    pub count: usize,
    /// `None` for an empty bin.
    pub mean_predicted: Option<f64>,
    pub observed_frequency: Option<f64>,
}

impl CalibrationBin {
    pub fn is_empty(&self) -> bool {
        self.count == 0
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CalibrationBins {
    pub bins: Vec<CalibrationBin>,
}

impl CalibrationBins {
    /// Largest |mean predicted - observed frequency| over occupied bins.
    pub fn max_deviation(&self) -> f64 {
        self.bins
            .iter()
            .filter_map(|b| Some((b.mean_predicted? - b.observed_frequency?).abs()))
            .fold(0.0, f64::max)
    }

    pub fn total_count(&self) -> usize {
        self.bins.iter().map(|b| b.count).sum()
    }
}

/// Equal-width reliability-diagram bins over `[0, 1]`. A score of exactly 1
/// lands in the last bin.
pub fn calibration_bins(scores: &[f64], labels: &[bool], bins: usize) -> Result<CalibrationBins> {
    if bins < 2 {
        return Err(Error::Config(format!("need at least 2 calibration bins, got {bins}")));
    }
    if scores.len() != labels.len() {
        return Err(Error::Undefined("scores and labels differ in length".into()));
    }
    let mut sum_pred = vec![0.0; bins];
    let mut positives = vec![0usize; bins];
    let mut counts = vec![0usize; bins];
    for (&s, &l) in scores.iter().zip(labels) {
        let idx = ((s.clamp(0.0, 1.0) * bins as f64) as usize).min(bins - 1);
        sum_pred[idx] += s;
        positives[idx] += l as usize;
        counts[idx] += 1;
    }
    let width = 1.0 / bins as f64;
    let bins = (0..bins)
        .map(|i| {
            let count = counts[i];
            let occupied = count > 0;
            CalibrationBin {
                lower: i as f64 * width,
                upper: if i + 1 == bins { 1.0 } else { (i + 1) as f64 * width },
                count,
                mean_predicted: occupied.then(|| sum_pred[i] / count as f64),
                observed_frequency: occupied.then(|| positives[i] as f64 / count as f64),
            }
        })
        .collect();
    Ok(CalibrationBins { bins })
}

/// Fraction of journey samples that used exactly the planned trains.
/// NA samples count as not reached.
pub fn reliability_rating(samples: &DelaySampleSet) -> f64 {
    if samples.samples.is_empty() {
        return 0.0;
    }
    let on_plan = samples
        .samples
        .iter()
        .filter(|s| s.delay.is_some() && s.path == samples.planned_path)
        .count();
    on_plan as f64 / samples.samples.len() as f64
}

pub const MIN_RBT_SAMPLES: usize = 20;

/// `q(upper_pct) - q(50)` over the non-NA delays.
pub fn reliability_buffer_time(delays: &[Option<f64>], upper_pct: f64) -> Result<f64> {
    let present: Vec<f64> = delays.iter().flatten().copied().collect();
    if present.len() < MIN_RBT_SAMPLES {
        return Err(Error::InsufficientData {
            needed: MIN_RBT_SAMPLES,
            got: present.len(),
        });
    }
    if !(50.0..=100.0).contains(&upper_pct) {
        return Err(Error::Config(format!("upper percentile {upper_pct} outside [50, 100]")));
    }
    let sorted = sorted_copy(&present);
    Ok(quantile_sorted(&sorted, upper_pct / 100.0) - quantile_sorted(&sorted, 0.5))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReliabilityReport {
    pub samples: usize,
    pub reliability_rating: f64,
    /// `None` when fewer than [`MIN_RBT_SAMPLES`] journeys completed.
    pub reliability_buffer_time: Option<f64>,
    pub na_fraction: f64,
    /// `(probability, delay)` pairs over completed journeys.
    pub quantiles: Vec<(f64, f64)>,
}

pub const REPORT_QUANTILES: [f64; 7] = [0.05, 0.1, 0.25, 0.5, 0.75, 0.9, 0.95];

pub fn reliability_report(samples: &DelaySampleSet) -> ReliabilityReport {
    let delays: Vec<Option<f64>> = samples.samples.iter().map(|s| s.delay).collect();
    let completed = sorted_copy(&delays.iter().flatten().copied().collect::<Vec<_>>());
    let n = delays.len();
    ReliabilityReport {
        samples: n,
        reliability_rating: reliability_rating(samples),
        reliability_buffer_time: reliability_buffer_time(&delays, 95.0).ok(),
        na_fraction: if n == 0 {
            0.0
        } else {
            (n - completed.len()) as f64 / n as f64
        },
        quantiles: if completed.is_empty() {
            Vec::new()
        } else {
            REPORT_QUANTILES
                .iter()
                .map(|&p| (p, quantile_sorted(&completed, p)))
                .collect()
        },
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryStats {
    pub n: usize,
    pub min: f64,
    pub median: f64,
    pub mean: f64,
    pub max: f64,
    /// Sample variance (n - 1 denominator).
    pub variance: f64,
    /// Moment skewness m3 / m2^1.5; `None` for a constant sample.
    pub skewness: Option<f64>,
    /// Raw moment kurtosis m4 / m2^2 (3 for a normal); `None` for a constant sample.
    pub kurtosis: Option<f64>,
}

pub fn summary_stats(values: &[f64]) -> Result<SummaryStats> {
    if values.len() < 2 {
        return Err(Error::InsufficientData {
            needed: 2,
            got: values.len(),
        });
    }
    let n = values.len() as f64;
    let sorted = sorted_copy(values);
    let mean = values.iter().sum::<f64>() / n;
    let (mut m2, mut m3, mut m4) = (0.0, 0.0, 0.0);
    for v in values {
        let d = v - mean;
        let d2 = d * d;
        m2 += d2;
        m3 += d2 * d;
        m4 += d2 * d2;
    }
    let variance = m2 / (n - 1.0);
    let (m2, m3, m4) = (m2 / n, m3 / n, m4 / n);
    let degenerate = m2 <= f64::EPSILON * mean.abs().max(1.0).powi(2);
    Ok(SummaryStats {
        n: values.len(),
        min: sorted[0],
        median: quantile_sorted(&sorted, 0.5),
        mean,
        max: sorted[sorted.len() - 1],
        variance: if degenerate { 0.0 } else { variance },
        skewness: (!degenerate).then(|| m3 / m2.powf(1.5)),
        kurtosis: (!degenerate).then(|| m4 / (m2 * m2)),
    })
}

/// Two-sample Kolmogorov–Smirnov statistic.
pub fn ks_statistic(a: &[f64], b: &[f64]) -> f64 {
    let a = sorted_copy(a);
    let b = sorted_copy(b);
    let (na, nb) = (a.len() as f64, b.len() as f64);
    let (mut i, mut j) = (0, 0);
    let mut d: f64 = 0.0;
    while i < a.len() && j < b.len() {
        let x = a[i].min(b[j]);
        while i < a.len() && a[i] <= x {
            i += 1;
        }
        while j < b.len() && b[j] <= x {
            j += 1;
        }
        d = d.max((i as f64 / na - j as f64 / nb).abs());
    }
    d
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::journey::{DelaySample, DelaySampleSet};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn brute_force_auroc(scores: &[f64], labels: &[bool]) -> f64 {
        let mut wins = 0.0;
        let mut pairs = 0.0;
        for (i, &li) in labels.iter().enumerate() {
            if !li {
                continue;
            }
            for (j, &lj) in labels.iter().enumerate() {
                if lj {
                    continue;
                }
                pairs += 1.0;
                if scores[i] > scores[j] {
                    wins += 1.0;
                } else if scores[i] == scores[j] {
                    wins += 0.5;
                }
            }
        }
        wins / pairs
    }

    #[test]
    fn auroc_examples() {
        assert_eq!(auroc(&[0.9, 0.1], &[true, false]).unwrap(), 1.0);
        assert_eq!(auroc(&[0.3; 6], &[true, false, true, false, false, true]).unwrap(), 0.5);
        assert!(matches!(auroc(&[0.1, 0.2], &[true, true]), Err(Error::Undefined(_))));
    }

    #[test]
    fn auroc_matches_brute_force_with_ties() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..20 {
            let scores: Vec<f64> = (0..50).map(|_| (rng.random_range(0..10) as f64) / 10.0).collect();
            let mut labels: Vec<bool> = (0..50).map(|_| rng.random_bool(0.4)).collect();
            labels[0] = true;
            labels[1] = false;
            let fast = auroc(&scores, &labels).unwrap();
            assert!((fast - brute_force_auroc(&scores, &labels)).abs() < 1e-12);
        }
    }

    #[test]
    fn auroc_label_flip_complements() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let scores: Vec<f64> = (0..80).map(|_| rng.random()).collect();
        let labels: Vec<bool> = (0..80).map(|i| i % 3 == 0).collect();
        let flipped: Vec<bool> = labels.iter().map(|l| !l).collect();
        let total = auroc(&scores, &labels).unwrap() + auroc(&scores, &flipped).unwrap();
        assert!((total - 1.0).abs() < 1e-12);
    }

    #[test]
    fn calibration_edge_cases() {
        let bins = calibration_bins(&[1.0, 1.0, 1.0], &[true, true, true], 10).unwrap();
        let occupied: Vec<_> = bins.bins.iter().filter(|b| !b.is_empty()).collect();
        assert_eq!(occupied.len(), 1);
        assert_eq!(occupied[0].observed_frequency, Some(1.0));
        assert_eq!(occupied[0].upper, 1.0);
        assert!(bins.bins[0].mean_predicted.is_none());
        assert_eq!(bins.max_deviation(), 0.0);
        assert_eq!(bins.total_count(), 3);
        assert!(calibration_bins(&[0.5], &[true], 1).is_err());
        let empty = calibration_bins(&[], &[], 10).unwrap();
        assert!(empty.bins.iter().all(|b| b.is_empty()));
        assert_eq!(empty.max_deviation(), 0.0);
    }

    #[test]
    fn calibrated_scores_stay_within_binomial_tolerance() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let n = 50_000;
        let scores: Vec<f64> = (0..n).map(|_| rng.random()).collect();
        let labels: Vec<bool> = scores.iter().map(|&s| rng.random_bool(s)).collect();
        let bins = calibration_bins(&scores, &labels, 10).unwrap();
        for b in &bins.bins {
            // 4 standard errors of a binomial frequency at its worst case p=0.5.
            let tol = 4.0 * (0.25 / b.count as f64).sqrt();
            let dev = (b.mean_predicted.unwrap() - b.observed_frequency.unwrap()).abs();
            assert!(dev <= tol, "bin {b:?}");
        }
        assert!(bins.max_deviation() <= 0.05);
    }

    fn set(delays: &[Option<f64>], paths: &[&str], planned: &str) -> DelaySampleSet {
        DelaySampleSet {
            planned_path: planned.into(),
            samples: delays
                .iter()
                .zip(paths)
                .map(|(d, p)| DelaySample {
                    delay: *d,
                    path: p.to_string(),
                    na_reason: None,
                })
                .collect(),
        }
    }

    #[test]
    fn rating_counts_planned_paths() {
        let mut delays = vec![Some(1.0); 1000];
        let mut paths = vec!["A>B"; 1000];
        for i in 0..100 {
            paths[i] = "A>C";
        }
        let s = set(&delays, &paths, "A>B");
        assert!((reliability_rating(&s) - 0.9).abs() < 1e-12);
        delays.iter_mut().for_each(|d| *d = None);
        assert_eq!(reliability_rating(&set(&delays, &paths, "A>B")), 0.0);
    }

    fn type7_oracle(values: &[f64], p: f64) -> f64 {
        // Independent formulation: the k-th order statistic (1-based) sits at
        // probability (k-1)/(n-1); interpolate between the bracketing pair.
        let mut v = values.to_vec();
        v.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let n = v.len();
        for k in 1..n {
            let p_lo = (k - 1) as f64 / (n - 1) as f64;
            let p_hi = k as f64 / (n - 1) as f64;
            if p >= p_lo && p <= p_hi {
                let w = (p - p_lo) / (p_hi - p_lo);
                return v[k - 1] * (1.0 - w) + v[k] * w;
            }
        }
        v[n - 1]
    }

    #[test]
    fn rbt_examples() {
        let grid: Vec<Option<f64>> = (0..1000).map(|i| Some(i as f64)).collect();
        let values: Vec<f64> = grid.iter().flatten().copied().collect();
        let expected = type7_oracle(&values, 0.95) - type7_oracle(&values, 0.5);
        assert!((expected - 449.55).abs() < 1e-9);
        assert!((reliability_buffer_time(&grid, 95.0).unwrap() - expected).abs() < 1e-9);

        let constant = vec![Some(7.0); 30];
        assert_eq!(reliability_buffer_time(&constant, 95.0).unwrap(), 0.0);

        let short = vec![Some(1.0); 19];
        assert!(matches!(
            reliability_buffer_time(&short, 95.0),
            Err(Error::InsufficientData { needed: 20, got: 19 })
        ));
    }

    #[test]
    fn rbt_monotone_in_upper_percentile() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let d: Vec<Option<f64>> = (0..200).map(|_| Some(rng.random::<f64>() * 30.0)).collect();
        let mut last = f64::NEG_INFINITY;
        for pct in [50.0, 60.0, 75.0, 90.0, 95.0, 99.0, 100.0] {
            let r = reliability_buffer_time(&d, pct).unwrap();
            assert!(r >= last);
            last = r;
        }
    }

    #[test]
    fn summary_of_constant_flags_undefined() {
        let s = summary_stats(&[4.0; 10]).unwrap();
        assert_eq!(s.variance, 0.0);
        assert!(s.skewness.is_none() && s.kurtosis.is_none());
        assert!(summary_stats(&[1.0]).is_err());
    }

    #[test]
    fn summary_matches_direct_moments() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let values: Vec<f64> = (0..5000)
            .map(|_| {
                let u: f64 = rng.random();
                if u < 0.3 { (2.0 + rng.random::<f64>()).exp() } else { rng.random::<f64>() * 3.0 - 1.0 }
            })
            .collect();
        let s = summary_stats(&values).unwrap();
        let n = values.len() as f64;
        let mean = values.iter().sum::<f64>() / n;
        let moment = |k: i32| values.iter().map(|v| (v - mean).powi(k)).sum::<f64>() / n;
        let skew = moment(3) / moment(2).powf(1.5);
        let kurt = moment(4) / moment(2).powi(2);
        assert!((s.mean - mean).abs() < 1e-9);
        assert!((s.variance - moment(2) * n / (n - 1.0)).abs() < 1e-9);
        assert!((s.skewness.unwrap() - skew).abs() < 1e-9);
        assert!((s.kurtosis.unwrap() - kurt).abs() < 1e-9);
    }

    #[test]
    fn normal_moments() {
        use rand_distr::{Distribution, StandardNormal};
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let v: Vec<f64> = (0..1_000_000).map(|_| StandardNormal.sample(&mut rng)).collect();
        let s = summary_stats(&v).unwrap();
        assert!(s.skewness.unwrap().abs() < 0.02);
        assert!((s.kurtosis.unwrap() - 3.0).abs() < 0.1);
    }

    #[test]
    fn ks_of_identical_and_disjoint() {
        let a = [1.0, 2.0, 3.0];
        assert_eq!(ks_statistic(&a, &a), 0.0);
        assert_eq!(ks_statistic(&a, &[10.0, 11.0]), 1.0);
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #[test]
            fn auroc_invariant_under_monotone_transform(
                pairs in prop::collection::vec((0.0f64..1.0, prop::bool::ANY), 2..60)
            ) {
                let scores: Vec<f64> = pairs.iter().map(|p| p.0).collect();
                let labels: Vec<bool> = pairs.iter().map(|p| p.1).collect();
                prop_assume!(labels.iter().any(|l| *l) && labels.iter().any(|l| !*l));
                let transformed: Vec<f64> = scores.iter().map(|s| (3.0 * s).exp() - 7.0).collect();
                let a = auroc(&scores, &labels).unwrap();
                let b = auroc(&transformed, &labels).unwrap();
                prop_assert!((a - b).abs() < 1e-12);
            }

            #[test]
            fn rbt_shift_invariant(
                values in prop::collection::vec(-10.0f64..100.0, 20..80),
                shift in -50.0f64..50.0,
            ) {
                let a: Vec<Option<f64>> = values.iter().map(|v| Some(*v)).collect();
                let b: Vec<Option<f64>> = values.iter().map(|v| Some(v + shift)).collect();
                let ra = reliability_buffer_time(&a, 95.0).unwrap();
                let rb = reliability_buffer_time(&b, 95.0).unwrap();
                prop_assert!((ra - rb).abs() < 1e-9);
                prop_assert!(ra >= 0.0);
            }
        }
    }
}
