//! Small statistical helpers shared by the sweeps.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// One-sided exact sign test: `P(X >= wins)` for `X ~ Bin(wins + losses, 1/2)`.
pub fn sign_test_p_value(wins: usize, losses: usize) -> f64 {
    let n = wins + losses;
    if n == 0 {
        return 1.0;
    }
    let mut log_pmf = -(n as f64) * std::f64::consts::LN_2;
    let mut terms = Vec::with_capacity(n + 1);
    for i in 0..=n {
        if i >= wins {
            terms.push(log_pmf);
        }
        if i < n {
            log_pmf += ((n - i) as f64).ln() - ((i + 1) as f64).ln();
        }
    }
    let top = terms.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    (top.exp() * terms.iter().map(|t| (t - top).exp()).sum::<f64>()).min(1.0)
}

/// Smallest grid value from which the accuracy range over the rest of the
/// grid stays below `delta`.
pub fn plateau_point(grid: &[usize], accuracy: &[f64], delta: f64) -> Option<usize> {
    if grid.is_empty() || grid.len() != accuracy.len() {
        return None;
    }
    (0..grid.len())
        .find(|&i| {
            let tail = &accuracy[i..];
            let hi = tail.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let lo = tail.iter().cloned().fold(f64::INFINITY, f64::min);
            hi - lo < delta
        })
        .map(|i| grid[i])
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Boundaries {
    /// Largest difficulty solved at least 90% of the time.
    pub cfrb: Option<usize>,
    /// Largest difficulty solved at least 10% of the time.
    pub cirb: Option<usize>,
}

pub fn reasoning_boundaries(accuracy_by_difficulty: &BTreeMap<usize, f64>) -> Result<Boundaries> {
    if accuracy_by_difficulty.is_empty() {
        return Err(Error::InvalidArgument("no difficulty levels".into()));
    }
    let largest = |t: f64| {
        accuracy_by_difficulty
            .iter()
            .filter(|(_, &a)| a >= t)
            .map(|(&d, _)| d)
            .next_back()
    };
    Ok(Boundaries {
        cfrb: largest(0.9),
        cirb: largest(0.1),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn plateau_example() {
        let grid = [1, 2, 3, 4, 5];
        assert_eq!(
            plateau_point(&grid, &[0.2, 0.5, 0.7, 0.71, 0.71], 0.02),
            Some(3)
        );
    }

    #[test]
    fn boundary_examples() {
        let map: BTreeMap<usize, f64> = [(1, 0.95), (2, 0.92), (3, 0.4), (4, 0.05)].into();
        let b = reasoning_boundaries(&map).unwrap();
        assert_eq!((b.cfrb, b.cirb), (Some(2), Some(3)));
        let all: BTreeMap<usize, f64> = [(1, 0.95), (2, 0.92)].into();
        let b = reasoning_boundaries(&all).unwrap();
        assert_eq!((b.cfrb, b.cirb), (Some(2), Some(2)));
        let none: BTreeMap<usize, f64> = [(1, 0.05)].into();
        assert_eq!(reasoning_boundaries(&none).unwrap().cirb, None);
        assert!(reasoning_boundaries(&BTreeMap::new()).is_err());
    }

    #[test]
    fn sign_test_values() {
        assert!((sign_test_p_value(3, 0) - 0.125).abs() < 1e-15);
        assert!((sign_test_p_value(1, 1) - 0.75).abs() < 1e-15);
        assert_eq!(sign_test_p_value(0, 0), 1.0);
        assert!(sign_test_p_value(40, 10) < 1e-4);
    }
}
