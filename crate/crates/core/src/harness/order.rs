//! When each position gets committed.

use serde::{Deserialize, Serialize};

use crate::decoder::DecodeTrace;
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OrderStats {
    /// Rank correlation between position and commit step; 1 is strictly
    /// left to right.
    pub order_correlation: f64,
    /// Earliest answer commit step over the number of executed steps.
    pub answer_commit_fraction: f64,
}

fn average_ranks(values: &[f64]) -> Vec<f64> {
    let mut idx: Vec<usize> = (0..values.len()).collect();
    idx.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
    let mut ranks = vec![0.0; values.len()];
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && values[idx[j + 1]] == values[idx[i]] {
            j += 1;
        }
        let rank = (i + j) as f64 / 2.0 + 1.0;
        for &k in &idx[i..=j] {
            ranks[k] = rank;
        }
        i = j + 1;
    }
    ranks
}

/// Spearman correlation with average ranks; 0 when either side is constant.
pub(crate) fn rank_correlation(x: &[f64], y: &[f64]) -> f64 {
    let (rx, ry) = (average_ranks(x), average_ranks(y));
    let n = x.len() as f64;
    let (mx, my) = (rx.iter().sum::<f64>() / n, ry.iter().sum::<f64>() / n);
    let mut sxy = 0.0;
    let mut sxx = 0.0;
    let mut syy = 0.0;
    for (a, b) in rx.iter().zip(&ry) {
        sxy += (a - mx) * (b - my);
        sxx += (a - mx) * (a - mx);
        syy += (b - my) * (b - my);
    }
    if sxx == 0.0 || syy == 0.0 {
        return 0.0;
    }
    (sxy / (sxx * syy).sqrt()).clamp(-1.0, 1.0)
}

pub fn decoding_order_stats(trace: &DecodeTrace, answer_positions: &[usize]) -> Result<OrderStats> {
    let order = trace.commit_order();
    let committed: Vec<(usize, usize)> = order
        .iter()
        .enumerate()
        .filter_map(|(p, s)| s.map(|s| (p, s)))
        .collect();
    if committed.is_empty() || trace.steps_executed == 0 {
        return Err(Error::InvalidArgument("trace has no commits".into()));
    }
    let (pos, step): (Vec<f64>, Vec<f64>) =
        committed.iter().map(|&(p, s)| (p as f64, s as f64)).unzip();
    let earliest = answer_positions
        .iter()
        .filter_map(|&p| order.get(p).copied().flatten())
        .min()
        .ok_or_else(|| Error::InvalidArgument("no answer position was decoded".into()))?;
    Ok(OrderStats {
        order_correlation: rank_correlation(&pos, &step),
        answer_commit_fraction: earliest as f64 / trace.steps_executed as f64,
    })
}
