//! Involvement-aware segmentation loss restricted to the needle footprint.
//!
//! Benign cores: every footprint pixel has target 0. Cancer cores: footprint
//! pixels are ranked by predicted probability; the top `round(involvement * n)`
//! (at least one) get target 1, the rest target 0. The loss is the mean
//! binary cross-entropy over footprint pixels only.

use ndarray::ArrayView2;

use super::decoder::Heatmap;
use crate::datamodel::{Involvement, IsupGrade};
use crate::error::{Error, Result};
use crate::nn::{sigmoid, softplus};

const BCE_CLAMP: f64 = 1e-12;

/// Number of footprint pixels labelled positive.
pub fn positive_count(grade: IsupGrade, involvement: Involvement, n: usize) -> usize {
    if !grade.is_cancer() || n == 0 {
        0
    } else {
        ((involvement.fraction() * n as f64).round() as usize).clamp(1, n)
    }
}

/// Targets for scores given in footprint order; ties keep the earlier pixel first.
pub fn topk_targets(scores: &[f64], positives: usize) -> Vec<f64> {
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]).then(a.cmp(&b)));
    let mut t = vec![0.0; scores.len()];
    for &i in &order[..positives] {
        t[i] = 1.0;
    }
    t
}

pub fn seg_loss(
    heatmap: &Heatmap,
    needle_mask: ArrayView2<bool>,
    grade: IsupGrade,
    involvement: Involvement,
) -> Result<f64> {
    if heatmap.shape() != needle_mask.dim() {
        return Err(Error::Shape(format!(
            "heatmap {:?} vs mask {:?}",
            heatmap.shape(),
            needle_mask.dim()
        )));
    }
    let probs: Vec<f64> = heatmap
        .probs
        .iter()
        .zip(needle_mask.iter())
        .filter(|(_, &m)| m)
        .map(|(&p, _)| p)
        .collect();
    if probs.is_empty() {
        return Err(Error::Empty("needle mask".into()));
    }
    let targets = topk_targets(&probs, positive_count(grade, involvement, probs.len()));
    let total: f64 = probs
        .iter()
        .zip(&targets)
        .map(|(&p, &y)| {
            let p = p.clamp(BCE_CLAMP, 1.0 - BCE_CLAMP);
            -(y * p.ln() + (1.0 - y) * (1.0 - p).ln())
        })
        .sum();
    Ok(total / probs.len() as f64)
}

/// Same loss on pixel logits, with `dL/dlogit`.
pub fn seg_loss_logits(logits: &[f64], grade: IsupGrade, involvement: Involvement) -> Result<(f64, Vec<f64>)> {
    if logits.is_empty() {
        return Err(Error::Empty("needle mask".into()));
    }
    let n = logits.len() as f64;
    let targets = topk_targets(logits, positive_count(grade, involvement, logits.len()));
    let mut loss = 0.0;
    let grad = logits
        .iter()
        .zip(&targets)
        .map(|(&u, &y)| {
            loss += softplus(u) - y * u;
            (sigmoid(u) - y) / n
        })
        .collect();
    Ok((loss / n, grad))
}
