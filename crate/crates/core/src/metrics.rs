//! ROC-AUC, PR-AUC (average precision) and LogLoss.

use serde::{Deserialize, Serialize};

use crate::error::{MletError, Result};

/// Probabilities are clamped to `[EPS, 1 - EPS]` before taking logs.
pub const LOGLOSS_CLAMP: f64 = 1e-15;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalResult {
    pub auc: f64,
    pub pr_auc: f64,
    pub logloss: f64,
    pub n_pos: usize,
    pub n_neg: usize,
}

fn check_inputs(scores: &[f64], labels: &[u8]) -> Result<(usize, usize)> {
    if scores.len() != labels.len() {
        return Err(MletError::InvalidArgument(format!(
            "{} scores but {} labels",
            scores.len(),
            labels.len()
        )));
    }
    if scores.iter().any(|s| s.is_nan()) {
        return Err(MletError::InvalidArgument("NaN score".into()));
    }
    if labels.iter().any(|&y| y > 1) {
        return Err(MletError::InvalidArgument("labels must be 0 or 1".into()));
    }
    let pos = labels.iter().filter(|&&y| y == 1).count();
    Ok((pos, labels.len() - pos))
}

/// Indices sorted by ascending score; stable, so ties keep input order.
fn ascending(scores: &[f64]) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..scores.len()).collect();
    idx.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    idx
}

/// Mann-Whitney AUC with tied scores sharing their mid-rank.
pub fn roc_auc(scores: &[f64], labels: &[u8]) -> Result<f64> {
    let (pos, neg) = check_inputs(scores, labels)?;
    if pos == 0 || neg == 0 {
        return Err(MletError::MetricUndefined("roc_auc needs both classes"));
    }
    let order = ascending(scores);
    let mut rank_sum = 0.0;
    let mut start = 0;
    while start < order.len() {
        let mut end = start + 1;
        while end < order.len() && scores[order[end]] == scores[order[start]] {
            end += 1;
        }
        // ranks start+1 ..= end share the mid-rank
        let mid = (start + 1 + end) as f64 / 2.0;
        let group_pos = order[start..end]
            .iter()
            .filter(|&&i| labels[i] == 1)
            .count();
        rank_sum += mid * group_pos as f64;
        start = end;
    }
    let (p, n) = (pos as f64, neg as f64);
    Ok((rank_sum - p * (p + 1.0) / 2.0) / (p * n))
}

/// Average precision: sum over distinct score thresholds (highest first) of
/// precision at the threshold times the recall gained there. Tied scores
/// form one threshold.
pub fn pr_auc(scores: &[f64], labels: &[u8]) -> Result<f64> {
    let (pos, _) = check_inputs(scores, labels)?;
    if pos == 0 {
        return Err(MletError::MetricUndefined("pr_auc needs a positive sample"));
    }
    let mut order = ascending(scores);
    order.reverse();
    let (mut tp, mut fp, mut ap) = (0usize, 0usize, 0.0);
    let mut start = 0;
    while start < order.len() {
        let mut end = start + 1;
        while end < order.len() && scores[order[end]] == scores[order[start]] {
            end += 1;
        }
        let group_tp = order[start..end]
            .iter()
            .filter(|&&i| labels[i] == 1)
            .count();
        tp += group_tp;
        fp += end - start - group_tp;
        if group_tp > 0 {
            ap += (group_tp as f64 / pos as f64) * (tp as f64 / (tp + fp) as f64);
        }
        start = end;
    }
    Ok(ap)
}

/// Mean binary cross-entropy.
pub fn logloss(scores: &[f64], labels: &[u8]) -> Result<f64> {
    check_inputs(scores, labels)?;
    if scores.is_empty() {
        return Err(MletError::MetricUndefined("logloss of an empty set"));
    }
    let total: f64 = scores
        .iter()
        .zip(labels)
        .map(|(&p, &y)| {
            let p = p.clamp(LOGLOSS_CLAMP, 1.0 - LOGLOSS_CLAMP);
            if y == 1 {
                -p.ln()
            } else {
                -(1.0 - p).ln()
            }
        })
        .sum();
    Ok(total / scores.len() as f64)
}

pub fn evaluate(scores: &[f64], labels: &[u8]) -> Result<EvalResult> {
    let (n_pos, n_neg) = check_inputs(scores, labels)?;
    Ok(EvalResult {
        auc: roc_auc(scores, labels)?,
        pr_auc: pr_auc(scores, labels)?,
        logloss: logloss(scores, labels)?,
        n_pos,
        n_neg,
    })
}
