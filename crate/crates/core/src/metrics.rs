use alloc::vec::Vec;

use crate::error::{Error, Result};

fn check_lengths(y: &[f64], yhat: &[f64]) -> Result<()> {
    if y.len() != yhat.len() {
        return Err(Error::DimensionMismatch {
            what: "predictions",
            expected: y.len(),
            got: yhat.len(),
        });
    }
    Ok(())
}

pub fn mse(y: &[f64], yhat: &[f64]) -> Result<f64> {
    check_lengths(y, yhat)?;
    if y.is_empty() {
        return Err(Error::Empty);
    }
    Ok(y.iter().zip(yhat).map(|(a, b)| (a - b) * (a - b)).sum::<f64>() / y.len() as f64)
}

/// `1 - SS_res / SS_tot`.
pub fn r_squared(y: &[f64], yhat: &[f64]) -> Result<f64> {
    check_lengths(y, yhat)?;
    if y.len() < 2 {
        return Err(Error::Degenerate("R^2 needs at least two observations".into()));
    }
    let mean = y.iter().sum::<f64>() / y.len() as f64;
    let ss_tot: f64 = y.iter().map(|v| (v - mean) * (v - mean)).sum();
    if ss_tot <= 0.0 {
        return Err(Error::Degenerate("R^2 of a constant target".into()));
    }
    let ss_res: f64 = y.iter().zip(yhat).map(|(a, b)| (a - b) * (a - b)).sum();
    Ok(1.0 - ss_res / ss_tot)
}

/// Area under the ROC curve via the rank statistic, ties at mid-ranks.
/// Labels are read as positive when `> 0.5`.
pub fn auc(y: &[f64], scores: &[f64]) -> Result<f64> {
    check_lengths(y, scores)?;
    let n_pos = y.iter().filter(|v| **v > 0.5).count();
    let n_neg = y.len() - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return Err(Error::Degenerate("AUC needs both classes".into()));
    }
    let mut order: Vec<usize> = (0..y.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    let mut rank_sum = 0.0;
    let mut start = 0;
    while start < order.len() {
        let mut end = start + 1;
        while end < order.len() && scores[order[end]] == scores[order[start]] {
            end += 1;
        }
        // ranks start..end (1-based start+1..=end) share their average
        let mid = (start + 1 + end) as f64 / 2.0;
        rank_sum += mid * order[start..end].iter().filter(|&&i| y[i] > 0.5).count() as f64;
        start = end;
    }
    let (p, q) = (n_pos as f64, n_neg as f64);
    Ok((rank_sum - p * (p + 1.0) / 2.0) / (p * q))
}

/// `2 * AUC - 1`.
pub fn scaled_auc(y: &[f64], scores: &[f64]) -> Result<f64> {
    Ok(2.0 * auc(y, scores)? - 1.0)
}
