use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{train, Dataset, TrainConfig};
use crate::error::{Error, Result};
use crate::metrics::auroc;
use crate::rng::seeded;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CvScore {
    pub config: TrainConfig,
    pub fold_auroc: Vec<f64>,
    pub mean_auroc: f64,
}

/// Assigns each row a fold in `0..k`, dealing positives and negatives
/// separately after a seeded shuffle.
pub fn stratified_folds(data: &Dataset, k: usize, seed: u64) -> Vec<usize> {
    let mut rng = seeded(seed);
    let (mut pos, mut neg): (Vec<usize>, Vec<usize>) = (0..data.len()).partition(|&r| data.label(r) > 0.5);
    pos.shuffle(&mut rng);
    neg.shuffle(&mut rng);
    let mut fold = vec![0; data.len()];
    for class in [pos, neg] {
        for (i, r) in class.into_iter().enumerate() {
            fold[r] = i % k;
        }
    }
    fold
}

/// Leaf regularisation pairs `(min_child_weight, lambda)` searched by
/// [`default_grid`]: the library defaults and a strongly shrunk variant that
/// suits rare positives.
pub const REGULARISATION_GRID: [(f64, f64); 2] = [(1.0, 1.0), (50.0, 50.0)];

/// Table of candidate configurations around the reference setting
/// (500 rounds, depth 5, eta 0.1, subsample 0.8, gamma 0.1).
pub fn default_grid(seed: u64) -> Vec<TrainConfig> {
    let mut grid = Vec::new();
    for (min_child_weight, lambda) in REGULARISATION_GRID {
        for nrounds in [250, 500] {
            for max_depth in [4, 5, 6] {
                for eta in [0.05, 0.1] {
                    grid.push(TrainConfig {
                        nrounds,
                        max_depth,
                        eta,
                        min_child_weight,
                        lambda,
                        seed,
                        ..TrainConfig::default()
                    });
                }
            }
        }
    }
    grid
}

/// k-fold stratified cross-validation over `grid`, scored by mean
/// out-of-fold AUROC. Ties go to the smaller `(nrounds, max_depth)`.
pub fn grid_search_cv(
    data: &Dataset,
    grid: &[TrainConfig],
    monotone: &[i8],
    k: usize,
    seed: u64,
) -> Result<(TrainConfig, Vec<CvScore>)> {
    if k < 2 {
        return Err(Error::Config(format!("cross-validation needs k >= 2, got {k}")));
    }
    if grid.is_empty() {
        return Err(Error::Config("empty hyperparameter grid".into()));
    }
    let positives = data.positives();
    if positives < 2 * k || data.len() - positives < 2 * k {
        return Err(Error::DegenerateLabels);
    }
    let fold = stratified_folds(data, k, seed);
    let splits: Vec<(Dataset, Dataset)> = (0..k)
        .map(|f| {
            let (held, kept): (Vec<usize>, Vec<usize>) = (0..data.len()).partition(|&r| fold[r] == f);
            (data.subset(&kept), data.subset(&held))
        })
        .collect();

    let jobs: Vec<(usize, usize)> = (0..grid.len()).flat_map(|c| (0..k).map(move |f| (c, f))).collect();
    let results: Vec<Result<f64>> = jobs
        .par_iter()
        .map(|&(c, f)| {
            let (fit, held) = &splits[f];
            let model = train(fit, &grid[c], monotone)?;
            let labels: Vec<bool> = held.labels().collect();
            auroc(&model.predict_dataset(held), &labels)
        })
        .collect();

    let mut scores: Vec<CvScore> = grid
        .iter()
        .map(|config| CvScore {
            config: config.clone(),
            fold_auroc: Vec::with_capacity(k),
            mean_auroc: 0.0,
        })
        .collect();
    for (&(c, _), result) in jobs.iter().zip(results) {
        scores[c].fold_auroc.push(result?);
    }
    for s in &mut scores {
        s.mean_auroc = s.fold_auroc.iter().sum::<f64>() / k as f64;
    }

    let best = scores
        .iter()
        .max_by(|a, b| {
            a.mean_auroc
                .total_cmp(&b.mean_auroc)
                .then_with(|| {
                    (b.config.nrounds, b.config.max_depth).cmp(&(a.config.nrounds, a.config.max_depth))
                })
        })
        .map(|s| s.config.clone())
        .expect("grid is non-empty");
    Ok((best, scores))
}
