//! Per-point weights and hard top-k selection.

use crate::error::{Error, Result};

pub const WEIGHT_MIN: f64 = 1e-5;
pub const WEIGHT_MAX: f64 = 1.0 - 1e-7;

/// Clamp applied to weights before they enter a loss.
pub fn clamp_weight(w: f64) -> f64 {
    w.clamp(WEIGHT_MIN, WEIGHT_MAX)
}

/// Sigmoid outputs for every point of one patch.
#[derive(Debug, Clone, PartialEq)]
pub struct WeightVector {
    pub values: Vec<f64>,
    pub patch_id: usize,
}

/// The `k` highest-weighted points, in descending weight order.
#[derive(Debug, Clone, PartialEq)]
pub struct Selection {
    pub k: usize,
    pub indices: Vec<usize>,
    pub weights: Vec<f64>,
}

/// Sorts by descending weight (ties by ascending index) and keeps `k`.
///
/// With `force_center`, point 0 is always kept, displacing the lowest
/// selected weight if needed; the result stays sorted by weight.
pub fn top_k_select(weights: &WeightVector, k: usize, force_center: bool) -> Result<Selection> {
    let r = weights.values.len();
    if k == 0 || k > r {
        return Err(Error::invalid(format!(
            "selection size {k} must be in 1..={r}"
        )));
    }
    let mut order: Vec<usize> = (0..r).collect();
    order.sort_by(|&a, &b| {
        weights.values[b]
            .total_cmp(&weights.values[a])
            .then(a.cmp(&b))
    });
    order.truncate(k);
    if force_center && !order.contains(&0) {
        order[k - 1] = 0;
        order.sort_by(|&a, &b| {
            weights.values[b]
                .total_cmp(&weights.values[a])
                .then(a.cmp(&b))
        });
    }
    Ok(Selection {
        k,
        weights: order.iter().map(|&i| weights.values[i]).collect(),
        indices: order,
    })
}
