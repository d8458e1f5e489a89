//! Deterministic seed derivation.
//!
//! Every random draw in the crate is keyed by a `u64` derived from the
//! master seed and a short path of integers (grid index, run index, ...).

const GOLDEN: u64 = 0x9E37_79B9_7F4A_7C15;

fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(GOLDEN);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Mix `master` with each element of `path` in order.
pub fn derive(master: u64, path: &[u64]) -> u64 {
    path.iter()
        .fold(splitmix(master), |acc, &p| splitmix(acc ^ splitmix(p)))
}
