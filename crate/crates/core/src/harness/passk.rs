//! The unbiased pass@k estimator.

use crate::error::{Error, Result};

/// `C(n, k)`, `None` on overflow.
pub fn binomial(n: u64, k: u64) -> Option<u128> {
    if k > n {
        return Some(0);
    }
    let k = k.min(n - k);
    let mut acc: u128 = 1;
    for i in 0..k {
        // acc * (n - i) is divisible by (i + 1) after the multiplication.
        acc = acc.checked_mul((n - i) as u128)? / (i + 1) as u128;
    }
    Some(acc)
}

fn check(n: u64, c: u64, k: u64) -> Result<()> {
    if c > n {
        return Err(Error::InvalidArgument(format!("c = {c} exceeds n = {n}")));
    }
    if k == 0 || k > n {
        return Err(Error::InvalidArgument(format!("k = {k} outside [1, {n}]")));
    }
    Ok(())
}

/// `1 - C(n-c, k) / C(n, k)` as an exact fraction `(numerator, denominator)`.
pub fn pass_at_k_ratio(n: u64, c: u64, k: u64) -> Result<(u128, u128)> {
    check(n, c, k)?;
    let overflow = || Error::InvalidArgument(format!("C({n}, {k}) overflows"));
    let total = binomial(n, k).ok_or_else(overflow)?;
    let miss = binomial(n - c, k).ok_or_else(overflow)?;
    Ok((total - miss, total))
}

/// Probability that at least one of `k` samples drawn without replacement
/// from `n` (of which `c` are correct) is correct.
pub fn pass_at_k(n: u64, c: u64, k: u64) -> Result<f64> {
    check(n, c, k)?;
    if n - c < k {
        return Ok(1.0);
    }
    let miss: f64 = (n - c + 1..=n).map(|i| 1.0 - k as f64 / i as f64).product();
    Ok(1.0 - miss)
}
