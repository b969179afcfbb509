//! Ranking metrics for link prediction.

use crate::error::{bail, Result};

fn check_scores(pos: &[f64], neg: &[f64]) -> Result<()> {
    if pos.is_empty() || neg.is_empty() {
        bail!(InvalidArgument, "metrics need positives and negatives ({} / {})", pos.len(), neg.len());
    }
    if pos.iter().chain(neg).any(|s| s.is_nan()) {
        bail!(InvalidArgument, "scores contain NaN");
    }
    Ok(())
}

/// Mann–Whitney statistic: the chance a positive outranks a negative, ties
/// counting half.
pub fn auc(pos: &[f64], neg: &[f64]) -> Result<f64> {
    check_scores(pos, neg)?;
    let mut sorted = neg.to_vec();
    sorted.sort_by(f64::total_cmp);
    // twice the statistic, kept integral until the final division
    let mut twice: u128 = 0;
    for &p in pos {
        let below = sorted.partition_point(|n| *n < p);
        let not_above = sorted.partition_point(|n| *n <= p);
        twice += 2 * below as u128 + (not_above - below) as u128;
    }
    Ok(twice as f64 / (2.0 * pos.len() as f64 * neg.len() as f64))
}

/// Average precision over the descending ranking. Negatives go first among
/// equal scores.
pub fn ap(pos: &[f64], neg: &[f64]) -> Result<f64> {
    check_scores(pos, neg)?;
    let mut items: Vec<(f64, bool)> = pos.iter().map(|s| (*s, true)).chain(neg.iter().map(|s| (*s, false))).collect();
    items.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)));
    let mut hits = 0usize;
    let mut total = 0.0;
    for (rank, (_, is_pos)) in items.iter().enumerate() {
        if *is_pos {
            hits += 1;
            total += hits as f64 / (rank + 1) as f64;
        }
    }
    Ok(total / pos.len() as f64)
}

/// Reciprocal rank of one positive among its negatives; ties count half.
pub fn reciprocal_rank(pos: f64, neg: &[f64]) -> f64 {
    let above = neg.iter().filter(|n| **n > pos).count() as f64;
    let tied = neg.iter().filter(|n| **n == pos).count() as f64;
    1.0 / (1.0 + above + 0.5 * tied)
}

/// MRR with a fixed negative count per positive.
pub fn mrr(pos: &[f64], neg: &[Vec<f64>], expected_negatives: usize) -> Result<f64> {
    if pos.len() != neg.len() {
        bail!(Dimension, "{} positives but {} negative lists", pos.len(), neg.len());
    }
    if pos.is_empty() {
        bail!(InvalidArgument, "mrr needs at least one positive");
    }
    if let Some(bad) = neg.iter().find(|n| n.len() != expected_negatives) {
        bail!(InvalidArgument, "expected {expected_negatives} negatives per positive, got {}", bad.len());
    }
    Ok(pos.iter().zip(neg).map(|(p, n)| reciprocal_rank(*p, n)).sum::<f64>() / pos.len() as f64)
}
