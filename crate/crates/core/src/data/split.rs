use rand::seq::SliceRandom;

use crate::error::{Error, Result};
use crate::rng::stream_rng;

pub const DEFAULT_FRACTIONS: [f64; 3] = [0.6, 0.2, 0.2];

/// Seeded shuffle followed by contiguous train/validation/test slices.
pub fn split<T: Clone>(items: &[T], fractions: [f64; 3], seed: u64) -> Result<(Vec<T>, Vec<T>, Vec<T>)> {
    if fractions.iter().any(|f| !(0.0..=1.0).contains(f)) || (fractions.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
        return Err(Error::invalid(format!("split fractions {fractions:?} must be in [0, 1] and sum to 1")));
    }
    let n = items.len();
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut stream_rng(seed, "split", 0));

    let n_train = ((fractions[0] * n as f64).round() as usize).min(n);
    let n_val = ((((fractions[0] + fractions[1]) * n as f64).round() as usize).min(n)).saturating_sub(n_train);
    let pick = |range: std::ops::Range<usize>| order[range].iter().map(|&i| items[i].clone()).collect::<Vec<T>>();
    let parts = (
        pick(0..n_train),
        pick(n_train..n_train + n_val),
        pick(n_train + n_val..n),
    );
    if n > 0 && (parts.0.is_empty() || parts.1.is_empty() || parts.2.is_empty()) {
        log::warn!(
            "split of {n} items left an empty part ({}, {}, {})",
            parts.0.len(),
            parts.1.len(),
            parts.2.len()
        );
    }
    Ok(parts)
}
