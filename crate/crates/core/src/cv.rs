//! Seeded k-fold cross-validation over an explicit hyper-parameter grid.

use alloc::vec;
use alloc::vec::Vec;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::data::MaskedDataset;
use crate::error::{invalid, Error, Result};
use crate::metrics;
use crate::seed;

/// Fold index of every row: rows are shuffled with `seed` and dealt out
/// round-robin, so fold sizes differ by at most one.
pub fn fold_assignment(n: usize, folds: usize, seed: u64) -> Result<Vec<usize>> {
    if folds < 2 {
        return Err(invalid("folds", "must be at least 2"));
    }
    if n < folds {
        return Err(invalid("folds", "must not exceed the number of rows"));
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut seed::rng(seed));
    let mut out = vec![0; n];
    for (pos, &i) in order.iter().enumerate() {
        out[i] = pos % folds;
    }
    Ok(out)
}

/// `(train, validation)` row indices per fold, each sorted.
pub fn fold_indices(n: usize, folds: usize, seed: u64) -> Result<Vec<(Vec<usize>, Vec<usize>)>> {
    let assign = fold_assignment(n, folds, seed)?;
    Ok((0..folds)
        .map(|f| {
            let (valid, train): (Vec<usize>, Vec<usize>) = (0..n).partition(|&i| assign[i] == f);
            (train, valid)
        })
        .collect())
}

/// Validation score, higher is better.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CvMetric {
    /// Negative mean squared error.
    NegMse,
    /// Area under the ROC curve; folds with a single class are skipped.
    Auc,
}

impl CvMetric {
    pub fn for_dataset(ds: &MaskedDataset) -> Self {
        if ds.has_binary_target() {
            Self::Auc
        } else {
            Self::NegMse
        }
    }

    /// `None` when the fold cannot be scored.
    pub fn score(&self, y: &[f64], pred: &[f64]) -> Option<f64> {
        match self {
            Self::NegMse => metrics::mse(y, pred).ok().map(|v| -v),
            Self::Auc => metrics::auc(y, pred).ok(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CvResult<P> {
    pub best_index: usize,
    pub best: P,
    pub score: f64,
    /// Mean validation score per grid point; `None` where every fold failed.
    pub scores: Vec<Option<f64>>,
}

/// Selects the grid point with the highest mean validation score.
/// `fit_predict(point, train, valid)` returns predictions for `valid`.
/// A point whose fit fails on a fold loses that fold; a point with no
/// scored fold is not eligible. Ties go to the earliest grid point.
pub fn kfold_cv<P, F>(ds: &MaskedDataset, grid: &[P], folds: usize, seed: u64, metric: CvMetric, mut fit_predict: F) -> Result<CvResult<P>>
where
    P: Clone,
    F: FnMut(&P, &MaskedDataset, &MaskedDataset) -> Result<Vec<f64>>,
{
    if grid.is_empty() {
        return Err(invalid("grid", "must not be empty"));
    }
    let splits = fold_indices(ds.n(), folds, seed)?;
    let parts: Vec<(MaskedDataset, MaskedDataset)> = splits.iter().map(|(t, v)| (ds.subset(t), ds.subset(v))).collect();
    let mut scores = Vec::with_capacity(grid.len());
    for point in grid {
        let mut sum = 0.0;
        let mut count = 0usize;
        for (train, valid) in &parts {
            let Ok(pred) = fit_predict(point, train, valid) else {
                continue;
            };
            if let Some(s) = metric.score(valid.y(), &pred) {
                sum += s;
                count += 1;
            }
        }
        scores.push((count > 0).then(|| sum / count as f64));
    }
    let mut best: Option<(usize, f64)> = None;
    for (i, s) in scores.iter().enumerate() {
        if let Some(s) = *s {
            if best.is_none_or(|(_, b)| s > b) {
                best = Some((i, s));
            }
        }
    }
    let (best_index, score) = best.ok_or_else(|| Error::Degenerate("no grid point could be scored".into()))?;
    Ok(CvResult {
        best_index,
        best: grid[best_index].clone(),
        score,
        scores,
    })
}
