//! Rank metrics: MRR against sampled negatives and ROC-AUC.

use std::cmp::Ordering;

/// Reciprocal rank of one positive among its negatives. Ties count half:
/// `rank = 1 + #greater + #equal / 2`.
pub fn reciprocal_rank(pos: f64, negatives: &[f64]) -> f64 {
    let mut greater = 0usize;
    let mut equal = 0usize;
    for &s in negatives {
        match s.partial_cmp(&pos) {
            Some(Ordering::Greater) => greater += 1,
            Some(Ordering::Equal) => equal += 1,
            _ => {}
        }
    }
    1.0 / (1.0 + greater as f64 + 0.5 * equal as f64)
}

/// Mean reciprocal rank; `negatives` holds `k` scores per positive, row-major.
/// `None` when there are no positives.
pub fn mrr_from_scores(positives: &[f64], negatives: &[f64], k: usize) -> Option<f64> {
    if positives.is_empty() {
        return None;
    }
    assert_eq!(
        negatives.len(),
        positives.len() * k,
        "k negatives per positive"
    );
    let total: f64 = positives
        .iter()
        .enumerate()
        .map(|(i, &p)| reciprocal_rank(p, &negatives[i * k..(i + 1) * k]))
        .sum();
    Some(total / positives.len() as f64)
}

/// ROC-AUC as the Mann-Whitney statistic with midranks for ties.
/// `None` unless both classes are present.
pub fn auc(scores: &[f64], labels: &[bool]) -> Option<f64> {
    assert_eq!(scores.len(), labels.len());
    let n_pos = labels.iter().filter(|&&l| l).count();
    let n_neg = labels.len() - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return None;
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    let mut rank_sum_pos = 0.0;
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && scores[order[j + 1]] == scores[order[i]] {
            j += 1;
        }
        // 1-based ranks i+1..=j+1 share their mean.
        let mid = (i + j + 2) as f64 / 2.0;
        for &idx in &order[i..=j] {
            if labels[idx] {
                rank_sum_pos += mid;
            }
        }
        i = j + 1;
    }
    let np = n_pos as f64;
    Some((rank_sum_pos - np * (np + 1.0) / 2.0) / (np * n_neg as f64))
}
