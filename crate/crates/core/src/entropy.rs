//! Information-theoretic measures on task models.
//!
//! Entropies are in bits. `0 log 0` is taken as `0`.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::task::TabularMarkovModel;

const SUM_TOL: f64 = 1e-12;

/// A probability vector over `0..m`.
#[derive(Debug, Clone, PartialEq)]
pub struct DiscreteDistribution {
    probs: Vec<f64>,
}

impl DiscreteDistribution {
    pub fn new(probs: Vec<f64>) -> Result<Self> {
        if probs.is_empty() {
            return Err(Error::InvalidArgument("empty distribution".into()));
        }
        if probs.iter().any(|p| !p.is_finite() || *p < 0.0) {
            return Err(Error::InvalidArgument(
                "negative or non-finite probability".into(),
            ));
        }
        let total: f64 = probs.iter().sum();
        if (total - 1.0).abs() > SUM_TOL {
            return Err(Error::InvalidArgument(format!(
                "probabilities sum to {total}"
            )));
        }
        Ok(DiscreteDistribution { probs })
    }

    pub fn uniform(m: usize) -> Self {
        DiscreteDistribution {
            probs: vec![1.0 / m as f64; m],
        }
    }

    pub fn point(m: usize, at: usize) -> Self {
        let mut probs = vec![0.0; m];
        probs[at] = 1.0;
        DiscreteDistribution { probs }
    }

    pub fn probs(&self) -> &[f64] {
        &self.probs
    }

    pub fn len(&self) -> usize {
        self.probs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.probs.is_empty()
    }

    pub fn max_prob(&self) -> f64 {
        self.probs.iter().cloned().fold(0.0, f64::max)
    }
}

pub(crate) fn entropy_bits(p: &[f64]) -> f64 {
    -p.iter()
        .filter(|&&x| x > 0.0)
        .map(|&x| x * x.log2())
        .sum::<f64>()
}

pub fn shannon_entropy(d: &DiscreteDistribution) -> f64 {
    entropy_bits(&d.probs)
}

/// `-log2 max_i p_i`.
pub fn min_entropy(d: &DiscreteDistribution) -> f64 {
    -d.max_prob().log2()
}

pub fn binary_entropy(p: f64) -> Result<f64> {
    if !(0.0..=1.0).contains(&p) {
        return Err(Error::InvalidArgument(format!("{p} is not a probability")));
    }
    Ok(entropy_bits(&[p, 1.0 - p]))
}

/// `H_b(p_max) + (1 - p_max) log2(m - 1)`: the largest entropy a law on
/// `m` outcomes can have when its mode has mass `p_max`.
pub fn fano_upper_bound(p_max: f64, m: usize) -> Result<f64> {
    if m == 0 {
        return Err(Error::InvalidArgument("m must be positive".into()));
    }
    if p_max > 1.0 || p_max < 1.0 / m as f64 - SUM_TOL {
        return Err(Error::InvalidArgument(format!(
            "p_max = {p_max} outside [1/{m}, 1]"
        )));
    }
    if m == 1 {
        return Ok(0.0);
    }
    Ok(binary_entropy(p_max.min(1.0))? + (1.0 - p_max) * ((m - 1) as f64).log2())
}

pub fn cross_entropy(p: &DiscreteDistribution, q: &DiscreteDistribution) -> Result<f64> {
    same_support(p, q)?;
    Ok(-p
        .probs
        .iter()
        .zip(&q.probs)
        .filter(|(&a, _)| a > 0.0)
        .map(|(&a, &b)| a * b.log2())
        .sum::<f64>())
}

pub fn kl_divergence(p: &DiscreteDistribution, q: &DiscreteDistribution) -> Result<f64> {
    same_support(p, q)?;
    Ok(p.probs
        .iter()
        .zip(&q.probs)
        .filter(|(&a, _)| a > 0.0)
        .map(|(&a, &b)| a * (a / b).log2())
        .sum())
}

fn same_support(p: &DiscreteDistribution, q: &DiscreteDistribution) -> Result<()> {
    if p.len() != q.len() {
        return Err(Error::InvalidArgument(
            "distributions differ in size".into(),
        ));
    }
    Ok(())
}

fn check_mesh(m: usize, mesh: usize) -> Result<()> {
    if mesh == 0 || m % mesh != 0 {
        return Err(Error::InvalidArgument(format!(
            "mesh {mesh} does not divide {m}"
        )));
    }
    Ok(())
}

/// Push a law forward through `s -> s / mesh`.
pub fn coarsen_distribution(d: &DiscreteDistribution, mesh: usize) -> Result<DiscreteDistribution> {
    check_mesh(d.len(), mesh)?;
    Ok(DiscreteDistribution {
        probs: d.probs.chunks(mesh).map(|c| c.iter().sum()).collect(),
    })
}

/// Lump states into cells of `mesh` consecutive ids. Each cell's outgoing
/// row averages its members' rows, weighted by the initial law (uniformly
/// when the cell has no initial mass).
pub fn coarsen_model(model: &TabularMarkovModel, mesh: usize) -> Result<TabularMarkovModel> {
    let m = model.num_states();
    check_mesh(m, mesh)?;
    let cells = m / mesh;
    let init = model.initial();
    let mut initial = vec![0.0; cells];
    let mut t = vec![0.0; cells * cells];
    for c in 0..cells {
        let members = c * mesh..(c + 1) * mesh;
        let mass: f64 = init[members.clone()].iter().sum();
        initial[c] = mass;
        for i in members {
            let weight = if mass > 0.0 {
                init[i] / mass
            } else {
                1.0 / mesh as f64
            };
            for (j, x) in model.row(i).iter().enumerate() {
                t[c * cells + j / mesh] += weight * x;
            }
        }
    }
    for row in t.chunks_mut(cells) {
        let total: f64 = row.iter().sum();
        row.iter_mut().for_each(|x| *x /= total);
    }
    TabularMarkovModel::new(initial, t, model.length())
}

/// Cyclic neighbours of `s` within `radius`, excluding `s`.
pub fn punctured_ball(s: usize, radius: usize, m: usize) -> Result<Vec<usize>> {
    if radius == 0 {
        return Err(Error::InvalidArgument("radius must be positive".into()));
    }
    if 2 * radius + 1 > m {
        return Err(Error::InvalidArgument(format!(
            "radius {radius} wraps around {m} states"
        )));
    }
    let mut out: Vec<usize> = (1..=radius)
        .flat_map(|d| [(s + m - d) % m, (s + d) % m])
        .collect();
    out.sort_unstable();
    Ok(out)
}

/// How the reference outcome `y*` for `S_1 = s1` is chosen.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Reference {
    /// Most probable `S_k`, lowest id on ties.
    Mode,
    /// One draw of `S_k` with the given seed.
    Sampled(u64),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SensitivityPoint {
    pub radius: usize,
    pub mean_reference_prob: f64,
}

/// For each radius, the mean probability that `S_k` hits the reference
/// outcome of `s1` when the chain starts from a neighbour of `s1` instead.
pub fn sensitivity_profile(
    model: &TabularMarkovModel,
    s1: usize,
    k: usize,
    radii: &[usize],
    reference: Reference,
) -> Result<Vec<SensitivityPoint>> {
    if radii.windows(2).any(|w| w[0] >= w[1]) {
        return Err(Error::InvalidArgument(
            "radii must be strictly increasing".into(),
        ));
    }
    let base = model.skip_conditional(s1, k)?;
    let y = match reference {
        Reference::Mode => base
            .iter()
            .enumerate()
            .fold(0, |best, (i, &x)| if x > base[best] { i } else { best }),
        Reference::Sampled(seed) => {
            let u: f64 = ChaCha8Rng::seed_from_u64(seed).gen();
            let mut acc = 0.0;
            base.iter()
                .position(|&x| {
                    acc += x;
                    u < acc
                })
                .unwrap_or(base.len() - 1)
        }
    };
    radii
        .iter()
        .map(|&r| {
            let ball = punctured_ball(s1, r, model.num_states())?;
            let total = ball
                .iter()
                .map(|&s| model.skip_conditional(s, k).map(|row| row[y]))
                .sum::<Result<f64>>()?;
            Ok(SensitivityPoint {
                radius: r,
                mean_reference_prob: total / ball.len() as f64,
            })
        })
        .collect()
}

/// `E_{s1} E_{s1' in ball(s1, radius)} H(phi(S_k) | phi(S_1) = phi(s1'))`
/// where `phi` lumps states into cells of `mesh` consecutive ids and `S_1`
/// is spread over its cell by the initial law. With `mesh = 1` this is
/// the mean row entropy of `T^(k-1)` over punctured neighbourhoods.
pub fn mean_skip_entropy(
    model: &TabularMarkovModel,
    k: usize,
    radius: usize,
    mesh: usize,
) -> Result<f64> {
    let m = model.num_states();
    check_mesh(m, mesh)?;
    if k < 2 || k > model.length() {
        return Err(Error::InvalidArgument(format!(
            "k must lie in [2, {}], got {k}",
            model.length()
        )));
    }
    let power = model.transition_power(k - 1);
    let init = model.initial();
    let cell_entropy: Vec<f64> = (0..m / mesh)
        .map(|c| {
            let members = c * mesh..(c + 1) * mesh;
            let mass: f64 = init[members.clone()].iter().sum();
            let mut row = vec![0.0; m / mesh];
            for i in members {
                let weight = if mass > 0.0 {
                    init[i] / mass
                } else {
                    1.0 / mesh as f64
                };
                for (j, x) in power[i * m..(i + 1) * m].iter().enumerate() {
                    row[j / mesh] += weight * x;
                }
            }
            entropy_bits(&row)
        })
        .collect();
    let mut total = 0.0;
    for (s1, &p) in init.iter().enumerate() {
        if p == 0.0 {
            continue;
        }
        let ball = punctured_ball(s1, radius, m)?;
        let inner: f64 = ball.iter().map(|&s| cell_entropy[s / mesh]).sum();
        total += p * inner / ball.len() as f64;
    }
    Ok(total)
}

/// `mean_skip_entropy(serial) - mean_skip_entropy(parallel)`.
pub fn skip_entropy_gap(
    serial: &TabularMarkovModel,
    parallel: &TabularMarkovModel,
    k: usize,
    radius: usize,
    mesh: usize,
) -> Result<f64> {
    if serial.num_states() != parallel.num_states() {
        return Err(Error::InvalidArgument(
            "models differ in state count".into(),
        ));
    }
    Ok(mean_skip_entropy(serial, k, radius, mesh)? - mean_skip_entropy(parallel, k, radius, mesh)?)
}
