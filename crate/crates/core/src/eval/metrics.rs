use crate::error::{Error, Result};
use crate::task::TaskKind;

/// Cut-off of the ranking metric.
pub const MRR_CUTOFF: usize = 5;

/// One-based rank of `target`: labels scoring strictly higher, and labels
/// with an equal score and a lower id, come first.
pub fn rank_of(scores: &[f64], target: usize) -> Result<usize> {
    let s = *scores.get(target).ok_or(Error::Vocabulary {
        id: target,
        bound: scores.len(),
    })?;
    let ahead = scores
        .iter()
        .enumerate()
        .filter(|&(i, &v)| v > s || (v == s && i < target))
        .count();
    Ok(ahead + 1)
}

/// Reciprocal rank of `target`, or 0 when it ranks below `n`.
pub fn mrr_at_n(scores: &[f64], target: usize, n: usize) -> Result<f64> {
    if n == 0 {
        return Err(Error::Metric("cut-off must be at least 1".into()));
    }
    let rank = rank_of(scores, target)?;
    Ok(if rank <= n { 1.0 / rank as f64 } else { 0.0 })
}

/// Index of the highest score, lowest index on ties.
pub fn argmax(scores: &[f64]) -> Option<usize> {
    let mut best: Option<usize> = None;
    for (i, &s) in scores.iter().enumerate() {
        if best.is_none_or(|b| s > scores[b]) {
            best = Some(i);
        }
    }
    best
}

pub fn classification_accuracy(predictions: &[usize], labels: &[usize]) -> Result<f64> {
    if predictions.len() != labels.len() {
        return Err(Error::dim("classification_accuracy", "instances", labels.len(), predictions.len()));
    }
    if labels.is_empty() {
        return Err(Error::Metric("accuracy of zero instances".into()));
    }
    let correct = predictions.iter().zip(labels).filter(|(p, l)| p == l).count();
    Ok(correct as f64 / labels.len() as f64)
}

/// The task kind's metric, averaged over instances.
pub fn metric_value(kind: TaskKind, scores: &[Vec<f64>], targets: &[usize]) -> Result<f64> {
    if scores.len() != targets.len() {
        return Err(Error::dim("metric_value", "instances", targets.len(), scores.len()));
    }
    if targets.is_empty() {
        return Err(Error::Metric(format!("{} of zero instances", kind.metric_name())));
    }
    match kind {
        TaskKind::Autoregressive | TaskKind::Ranking => {
            let mut total = 0.0;
            for (s, &t) in scores.iter().zip(targets) {
                total += mrr_at_n(s, t, MRR_CUTOFF)?;
            }
            Ok(total / targets.len() as f64)
        }
        TaskKind::Classification => {
            let predictions: Vec<usize> = scores.iter().map(|s| argmax(s).unwrap_or(0)).collect();
            classification_accuracy(&predictions, targets)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn strict_maximum_scores_one() {
        assert_eq!(mrr_at_n(&[0.1, 0.9, 0.2], 1, 5).unwrap(), 1.0);
    }

    #[test]
    fn rank_six_is_cut_off() {
        let scores = [6.0, 5.0, 4.0, 3.0, 2.0, 1.0];
        assert_eq!(mrr_at_n(&scores, 5, 5).unwrap(), 0.0);
        assert_eq!(mrr_at_n(&scores, 5, 6).unwrap(), 1.0 / 6.0);
    }

    #[test]
    fn ties_rank_lower_ids_first() {
        assert_eq!(rank_of(&[0.5, 0.5, 0.5], 0).unwrap(), 1);
        assert_eq!(rank_of(&[0.5, 0.5, 0.5], 2).unwrap(), 3);
    }

    #[test]
    fn target_out_of_range() {
        assert!(matches!(mrr_at_n(&[1.0], 3, 5), Err(Error::Vocabulary { .. })));
    }

    #[test]
    fn accuracy_cases() {
        assert_eq!(classification_accuracy(&[1, 2], &[1, 2]).unwrap(), 1.0);
        assert_eq!(classification_accuracy(&[0, 0], &[1, 2]).unwrap(), 0.0);
        assert_eq!(classification_accuracy(&[1, 2, 3, 4], &[1, 2, 3, 0]).unwrap(), 0.75);
        assert!(matches!(classification_accuracy(&[], &[]), Err(Error::Metric(_))));
    }
}
