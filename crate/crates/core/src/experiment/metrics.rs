//! Classification metrics. Percentages are on a 0-100 scale.

use crate::error::{Error, Result};

fn check(preds: usize, labels: usize) -> Result<()> {
    if preds != labels {
        return Err(Error::Dimension(format!("{preds} predictions for {labels} labels")));
    }
    if labels == 0 {
        return Err(Error::UndefinedMetric("metric over zero samples".into()));
    }
    Ok(())
}

pub fn accuracy(preds: &[usize], labels: &[usize]) -> Result<f64> {
    check(preds.len(), labels.len())?;
    let hits = preds.iter().zip(labels).filter(|(p, l)| p == l).count();
    Ok(100.0 * hits as f64 / labels.len() as f64)
}

/// Area under the ROC curve from class-1 scores, via midranks
/// (Mann-Whitney U); tied scores count one half.
pub fn roc_auc(scores: &[f64], labels: &[usize]) -> Result<f64> {
    check(scores.len(), labels.len())?;
    if let Some(s) = scores.iter().find(|s| !s.is_finite()) {
        return Err(Error::NonFinite(format!("score {s}")));
    }
    let n_pos = labels.iter().filter(|&&l| l == 1).count() as u64;
    let n_neg = labels.len() as u64 - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return Err(Error::UndefinedMetric("AUC needs both classes among the labels".into()));
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    // twice the rank sum of positives, so midranks stay integral
    let mut rank2_pos = 0u64;
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && scores[order[j + 1]] == scores[order[i]] {
            j += 1;
        }
        let mid2 = (i + 1 + j + 1) as u64;
        rank2_pos += mid2 * order[i..=j].iter().filter(|&&k| labels[k] == 1).count() as u64;
        i = j + 1;
    }
    let u2 = rank2_pos - n_pos * (n_pos + 1);
    Ok(u2 as f64 / (2 * n_pos * n_neg) as f64)
}

/// Unweighted mean over `k` classes of per-class F1 = 2TP / (2TP + FP + FN),
/// with 0/0 taken as 0.
pub fn macro_f1(preds: &[usize], labels: &[usize], k: usize) -> Result<f64> {
    check(preds.len(), labels.len())?;
    if let Some(bad) = preds.iter().chain(labels).find(|&&v| v >= k) {
        return Err(Error::Parameter(format!("class {bad} outside 0..{k}")));
    }
    let mut total = 0.0;
    for c in 0..k {
        let (mut tp, mut fp, mut fn_) = (0usize, 0usize, 0usize);
        for (&p, &l) in preds.iter().zip(labels) {
            match (p == c, l == c) {
                (true, true) => tp += 1,
                (true, false) => fp += 1,
                (false, true) => fn_ += 1,
                _ => {}
            }
        }
        let denom = 2 * tp + fp + fn_;
        if denom > 0 {
            total += 2.0 * tp as f64 / denom as f64;
        }
    }
    Ok(100.0 * total / k as f64)
}
