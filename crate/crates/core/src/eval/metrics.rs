//! Ranking metrics with exact tie handling.

use std::cmp::Ordering;

use crate::error::{Error, Result};

/// `(score, positives, negatives)` per distinct score, ascending.
fn tie_groups(scores: &[f64], labels: &[bool]) -> Result<Vec<(f64, usize, usize)>> {
    if scores.len() != labels.len() {
        return Err(Error::Precondition(format!("{} scores but {} labels", scores.len(), labels.len())));
    }
    if scores.iter().any(|s| s.is_nan()) {
        return Err(Error::Precondition("NaN score".into()));
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].partial_cmp(&scores[b]).unwrap_or(Ordering::Equal));
    let mut groups: Vec<(f64, usize, usize)> = Vec::new();
    for i in order {
        let (pos, neg) = (usize::from(labels[i]), usize::from(!labels[i]));
        match groups.last_mut() {
            Some(g) if g.0 == scores[i] => {
                g.1 += pos;
                g.2 += neg;
            }
            _ => groups.push((scores[i], pos, neg)),
        }
    }
    Ok(groups)
}

/// Probability that a random positive outscores a random negative, ties
/// counted one half.
pub fn roc_auc(scores: &[f64], labels: &[bool]) -> Result<f64> {
    let groups = tie_groups(scores, labels)?;
    let n_pos: usize = groups.iter().map(|g| g.1).sum();
    let n_neg: usize = groups.iter().map(|g| g.2).sum();
    if n_pos == 0 || n_neg == 0 {
        return Err(Error::Precondition("roc_auc needs both classes".into()));
    }
    let mut neg_below = 0.0;
    let mut wins = 0.0;
    for &(_, pos, neg) in &groups {
        wins += pos as f64 * (neg_below + 0.5 * neg as f64);
        neg_below += neg as f64;
    }
    Ok(wins / (n_pos as f64 * n_neg as f64))
}

/// Average precision. Tied scores form one threshold step: every positive
/// in a tie group sees the precision of the whole group admitted at once.
pub fn pr_auc(scores: &[f64], labels: &[bool]) -> Result<f64> {
    let groups = tie_groups(scores, labels)?;
    let n_pos: usize = groups.iter().map(|g| g.1).sum();
    if n_pos == 0 {
        return Err(Error::Precondition("pr_auc needs at least one positive".into()));
    }
    let (mut tp, mut seen, mut ap) = (0usize, 0usize, 0.0);
    for &(_, pos, neg) in groups.iter().rev() {
        tp += pos;
        seen += pos + neg;
        if pos > 0 {
            ap += pos as f64 * (tp as f64 / seen as f64);
        }
    }
    Ok(ap / n_pos as f64)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn hand_example() {
        let s = [0.1, 0.4, 0.35, 0.8];
        let y = [false, false, true, true];
        assert_eq!(roc_auc(&s, &y).unwrap(), 0.75);
        // ranks: 0.8 (+) P=1, 0.4 (-), 0.35 (+) P=2/3 → AP = (1 + 2/3)/2
        assert!((pr_auc(&s, &y).unwrap() - 5.0 / 6.0).abs() < 1e-15);
    }

    #[test]
    fn separation_and_ties() {
        let y = [false, true, false, true];
        assert_eq!(roc_auc(&[0.0, 1.0, 0.1, 0.9], &y).unwrap(), 1.0);
        assert_eq!(pr_auc(&[0.0, 1.0, 0.1, 0.9], &y).unwrap(), 1.0);
        assert_eq!(roc_auc(&[0.3; 4], &y).unwrap(), 0.5);
        // all tied: precision of the single step is the prevalence
        let y = [true, false, false, false, true];
        assert!((pr_auc(&[0.7; 5], &y).unwrap() - 0.4).abs() < 1e-15);
    }

    #[test]
    fn errors() {
        assert!(roc_auc(&[0.1, 0.2], &[true, true]).is_err());
        assert!(pr_auc(&[0.1, 0.2], &[false, false]).is_err());
        assert!(roc_auc(&[0.1], &[true, false]).is_err());
        assert!(roc_auc(&[f64::NAN, 0.2], &[true, false]).is_err());
        assert!(pr_auc(&[0.1], &[true]).is_ok());
    }

    #[test]
    fn negated_scores_complement() {
        let s = [0.2, 0.2, 0.5, 0.9, 0.1, 0.5];
        let y = [true, false, false, true, false, true];
        let neg: Vec<f64> = s.iter().map(|v| -v).collect();
        assert!((roc_auc(&s, &y).unwrap() + roc_auc(&neg, &y).unwrap() - 1.0).abs() < 1e-15);
        let cubed: Vec<f64> = s.iter().map(|v| v * v * v + 3.0).collect();
        assert_eq!(roc_auc(&s, &y).unwrap(), roc_auc(&cubed, &y).unwrap());
    }
}
