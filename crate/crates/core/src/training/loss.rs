use crate::encoding::squared_distance;

/// Hinged triplet ranking loss on squared descriptor distances.
pub fn triplet_loss(dist_pos_sq: f64, dist_neg_sq: f64, margin: f64) -> f64 {
    (dist_pos_sq - dist_neg_sq + margin).max(0.0)
}

/// Mean of the triplet losses of one query, its positive and every negative.
pub fn tuple_loss(query: &[f64], positive: &[f64], negatives: &[&[f64]], margin: f64) -> f64 {
    if negatives.is_empty() {
        return 0.0;
    }
    let dp = squared_distance(query, positive);
    negatives
        .iter()
        .map(|n| triplet_loss(dp, squared_distance(query, n), margin))
        .sum::<f64>()
        / negatives.len() as f64
}
