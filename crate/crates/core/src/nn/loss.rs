//! Softmax cross-entropy and the row-wise helpers built on it.

use crate::error::{Error, Result};
use crate::tensor::Tensor;

fn check_labels(logits: &Tensor, labels: &[usize]) -> Result<usize> {
    if logits.shape().len() != 2 {
        return Err(Error::shape(format!(
            "logits must be 2-D, got {:?}",
            logits.shape()
        )));
    }
    let classes = logits.shape()[1];
    if labels.len() != logits.rows() {
        return Err(Error::InvalidInput(format!(
            "{} labels for {} logit rows",
            labels.len(),
            logits.rows()
        )));
    }
    if let Some(&bad) = labels.iter().find(|&&y| y >= classes) {
        return Err(Error::InvalidInput(format!(
            "label {bad} out of range for {classes} classes"
        )));
    }
    Ok(classes)
}

fn log_sum_exp(row: &[f64]) -> f64 {
    let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    max + row.iter().map(|z| (z - max).exp()).sum::<f64>().ln()
}

/// Index of the largest entry; ties go to the lowest index.
pub fn argmax(row: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in row.iter().enumerate().skip(1) {
        if v > row[best] {
            best = i;
        }
    }
    best
}

pub fn softmax_row(row: &[f64]) -> Vec<f64> {
    let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = row.iter().map(|z| (z - max).exp()).collect();
    let total: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / total).collect()
}

/// Mean negative log-likelihood over the rows, and its gradient with respect to the logits.
pub fn cross_entropy(logits: &Tensor, labels: &[usize]) -> Result<(f64, Tensor)> {
    check_labels(logits, labels)?;
    let b = logits.rows() as f64;
    let mut grad = Tensor::zeros(logits.shape());
    let mut total = 0.0;
    for (i, &y) in labels.iter().enumerate() {
        let row = logits.row(i);
        total += log_sum_exp(row) - row[y];
        let g = grad.row_mut(i);
        for (gj, pj) in g.iter_mut().zip(softmax_row(row)) {
            *gj = pj / b;
        }
        g[y] -= 1.0 / b;
    }
    Ok((total / b, grad))
}

/// Unaveraged per-row losses `-log softmax(z)[y]`.
pub fn per_example_losses(logits: &Tensor, labels: &[usize]) -> Result<Vec<f64>> {
    check_labels(logits, labels)?;
    Ok(labels
        .iter()
        .enumerate()
        .map(|(i, &y)| {
            let row = logits.row(i);
            log_sum_exp(row) - row[y]
        })
        .collect())
}

/// True for rows that are classified correctly with softmax probability at least
/// `threshold` on the true class.
///
/// The probability test is evaluated as `sum_j exp(z_j - z_y) * threshold <= 1`,
/// which avoids the rounding of a division at the boundary.
pub fn confidence_mask(logits: &Tensor, labels: &[usize], threshold: f64) -> Result<Vec<bool>> {
    check_labels(logits, labels)?;
    Ok(labels
        .iter()
        .enumerate()
        .map(|(i, &y)| {
            let row = logits.row(i);
            if argmax(row) != y {
                return false;
            }
            let ratio_sum: f64 = row.iter().map(|z| (z - row[y]).exp()).sum();
            ratio_sum * threshold <= 1.0
        })
        .collect())
}
