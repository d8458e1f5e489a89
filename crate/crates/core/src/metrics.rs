//! Step-level metrics over token chains.
//!
//! Tokens are embedded as seeded random unit vectors, so scores are
//! reproducible but not comparable to scores computed with learned
//! embeddings.

use std::collections::BTreeMap;
use std::io::Write;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::posterior::chain_log_likelihood;
use crate::seed;
use crate::task::TabularMarkovModel;

/// An ordered list of steps, each a list of token ids.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct StepChain {
    steps: Vec<Vec<usize>>,
}

impl StepChain {
    pub fn new(steps: Vec<Vec<usize>>) -> Result<Self> {
        if steps.is_empty() {
            return Err(Error::InvalidArgument("chain has no steps".into()));
        }
        if steps.iter().any(Vec::is_empty) {
            return Err(Error::InvalidArgument("chain has an empty step".into()));
        }
        Ok(StepChain { steps })
    }

    pub fn steps(&self) -> &[Vec<usize>] {
        &self.steps
    }

    pub fn len(&self) -> usize {
        self.steps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.steps.is_empty()
    }

    pub fn tokens(&self) -> Vec<usize> {
        self.steps.concat()
    }

    /// One chain per blank-line separated block, one step per line.
    /// Lines starting with `#` are ignored.
    pub fn parse_many(text: &str) -> Result<Vec<StepChain>> {
        let mut chains = Vec::new();
        let mut current: Vec<Vec<usize>> = Vec::new();
        for (n, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.starts_with('#') {
                continue;
            }
            if line.is_empty() {
                if !current.is_empty() {
                    chains.push(StepChain::new(std::mem::take(&mut current))?);
                }
                continue;
            }
            let step = line
                .split_whitespace()
                .map(|t| {
                    t.parse()
                        .map_err(|_| Error::Parse(format!("line {}: bad token `{t}`", n + 1)))
                })
                .collect::<Result<Vec<usize>>>()?;
            current.push(step);
        }
        if !current.is_empty() {
            chains.push(StepChain::new(current)?);
        }
        Ok(chains)
    }

    pub fn to_text(&self) -> String {
        let mut s = String::new();
        for step in &self.steps {
            let line: Vec<String> = step.iter().map(usize::to_string).collect();
            s.push_str(&line.join(" "));
            s.push('\n');
        }
        s
    }
}

/// Deterministic token embeddings.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Embedder {
    dimension: usize,
    seed: u64,
}

impl Embedder {
    pub fn new(dimension: usize, seed: u64) -> Result<Self> {
        if dimension == 0 {
            return Err(Error::InvalidArgument(
                "embedding dimension must be positive".into(),
            ));
        }
        Ok(Embedder { dimension, seed })
    }

    pub fn dimension(&self) -> usize {
        self.dimension
    }

    pub fn token(&self, token: usize) -> Vec<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed::derive(self.seed, &[token as u64]));
        loop {
            let v: Vec<f64> = (0..self.dimension)
                .map(|_| rng.gen_range(-1.0..1.0))
                .collect();
            let norm = dot(&v, &v).sqrt();
            if norm > 1e-6 {
                return v.into_iter().map(|x| x / norm).collect();
            }
        }
    }

    /// Mean of the token vectors, renormalised.
    pub fn step(&self, tokens: &[usize]) -> Result<Vec<f64>> {
        let mut acc = vec![0.0; self.dimension];
        for &t in tokens {
            for (a, x) in acc.iter_mut().zip(self.token(t)) {
                *a += x;
            }
        }
        let norm = dot(&acc, &acc).sqrt();
        if norm == 0.0 {
            return Err(Error::InvalidArgument(
                "step embedding is the zero vector".into(),
            ));
        }
        Ok(acc.into_iter().map(|x| x / norm).collect())
    }
}

fn dot(u: &[f64], v: &[f64]) -> f64 {
    u.iter().zip(v).map(|(a, b)| a * b).sum()
}

pub fn cosine_similarity(u: &[f64], v: &[f64]) -> Result<f64> {
    if u.len() != v.len() {
        return Err(Error::InvalidArgument("vectors differ in dimension".into()));
    }
    let (uu, vv) = (dot(u, u), dot(v, v));
    if uu == 0.0 || vv == 0.0 {
        return Err(Error::InvalidArgument("zero vector".into()));
    }
    Ok((dot(u, v) / (uu * vv).sqrt()).clamp(-1.0, 1.0))
}

fn normalized(cos: f64) -> f64 {
    (1.0 + cos) / 2.0
}

fn best_alignment(target: &[f64], candidates: &[Vec<f64>]) -> Result<f64> {
    let mut best = f64::NEG_INFINITY;
    for c in candidates {
        best = best.max(cosine_similarity(target, c)?);
    }
    Ok(normalized(best))
}

fn embed_steps(chain: &[Vec<usize>], emb: &Embedder) -> Result<Vec<Vec<f64>>> {
    chain.iter().map(|s| emb.step(s)).collect()
}

/// `(1 + max_j cos(h_i, s_j)) / 2`.
pub fn step_alignment(step: &[usize], source: &StepChain, emb: &Embedder) -> Result<f64> {
    best_alignment(&emb.step(step)?, &embed_steps(&source.steps, emb)?)
}

fn mean_alignment(from: &StepChain, into: &StepChain, emb: &Embedder) -> Result<f64> {
    let targets = embed_steps(&into.steps, emb)?;
    let mut total = 0.0;
    for s in embed_steps(&from.steps, emb)? {
        total += best_alignment(&s, &targets)?;
    }
    Ok(total / from.len() as f64)
}

/// Mean step alignment of `h` against the reference chain.
pub fn reasoning_alignment(h: &StepChain, reference: &StepChain, emb: &Embedder) -> Result<f64> {
    mean_alignment(h, reference, emb)
}

/// One minus the largest mean token-level overlap of a step with any
/// earlier step. Single-step chains score 1.
pub fn repetition_word(h: &StepChain, emb: &Embedder) -> Result<f64> {
    if h.len() < 2 {
        return Ok(1.0);
    }
    let vectors: Vec<Vec<Vec<f64>>> = h
        .steps
        .iter()
        .map(|s| s.iter().map(|&t| emb.token(t)).collect())
        .collect();
    let mut worst: f64 = 0.0;
    for i in 1..vectors.len() {
        for j in 0..i {
            let mut total = 0.0;
            for tok in &vectors[i] {
                total += best_alignment(tok, &vectors[j])?;
            }
            worst = worst.max(total / vectors[i].len() as f64);
        }
    }
    Ok(1.0 - worst)
}

/// Average of source-to-hypothesis and hypothesis-to-source coverage.
pub fn informativeness(h: &StepChain, source: &StepChain, emb: &Embedder) -> Result<f64> {
    Ok((mean_alignment(source, h, emb)? + mean_alignment(h, source, emb)?) / 2.0)
}

/// Empirical unigram entropy in bits.
pub fn token_entropy(tokens: &[usize]) -> Result<f64> {
    if tokens.is_empty() {
        return Err(Error::InvalidArgument("no tokens".into()));
    }
    let mut counts: BTreeMap<usize, usize> = BTreeMap::new();
    for &t in tokens {
        *counts.entry(t).or_default() += 1;
    }
    // Group tokens sharing a count: each group contributes
    // (members * count / n) * log2(n / count).
    let mut by_count: BTreeMap<usize, usize> = BTreeMap::new();
    for &c in counts.values() {
        *by_count.entry(c).or_default() += 1;
    }
    let n = tokens.len() as f64;
    Ok(by_count
        .iter()
        .map(|(&c, &members)| (members * c) as f64 / n * (n / c as f64).log2())
        .sum())
}

/// Geometric mean of the inverse chain-rule factors, `exp(-mean ln p)`;
/// infinite when a factor vanishes. Equal factors are grouped, so a
/// model whose factors all equal `p` scores exactly `1 / p`.
pub fn perplexity(model: &TabularMarkovModel, trajectory: &[usize]) -> Result<f64> {
    if chain_log_likelihood(model, trajectory)? == f64::NEG_INFINITY {
        return Ok(f64::INFINITY);
    }
    let mut factors: BTreeMap<u64, usize> = BTreeMap::new();
    *factors
        .entry(model.initial()[trajectory[0]].to_bits())
        .or_default() += 1;
    for w in trajectory.windows(2) {
        *factors
            .entry(model.entry(w[0], w[1]).to_bits())
            .or_default() += 1;
    }
    let n = trajectory.len() as f64;
    Ok(factors
        .iter()
        .map(|(&bits, &count)| (1.0 / f64::from_bits(bits)).powf(count as f64 / n))
        .product())
}

/// A single `(chain id, metric, value)` row.
#[derive(Debug, Clone, PartialEq)]
pub struct MetricRow {
    pub chain: usize,
    pub metric: &'static str,
    pub value: f64,
}

/// Score every hypothesis chain. `sources` holds either one chain shared
/// by all hypotheses or one per hypothesis; `references` likewise.
pub fn score_chains(
    hypotheses: &[StepChain],
    sources: &[StepChain],
    references: &[StepChain],
    emb: &Embedder,
) -> Result<Vec<MetricRow>> {
    let pick = |pool: &[StepChain], i: usize, what: &str| -> Result<Option<StepChain>> {
        match pool.len() {
            0 => Ok(None),
            1 => Ok(Some(pool[0].clone())),
            n if n == hypotheses.len() => Ok(Some(pool[i].clone())),
            n => Err(Error::InvalidArgument(format!(
                "{n} {what} chains for {} hypotheses",
                hypotheses.len()
            ))),
        }
    };
    let mut rows = Vec::new();
    for (i, h) in hypotheses.iter().enumerate() {
        let mut push = |metric, value| {
            rows.push(MetricRow {
                chain: i,
                metric,
                value,
            })
        };
        push("token_entropy", token_entropy(&h.tokens())?);
        push("repetition_word", repetition_word(h, emb)?);
        if let Some(s) = pick(sources, i, "source")? {
            push("informativeness", informativeness(h, &s, emb)?);
        }
        if let Some(r) = pick(references, i, "reference")? {
            push("reasoning_alignment", reasoning_alignment(h, &r, emb)?);
        }
    }
    Ok(rows)
}

/// CSV with columns `chain_id,metric,value`.
pub fn write_metric_csv(rows: &[MetricRow], mut w: impl Write) -> std::io::Result<()> {
    writeln!(w, "chain_id,metric,value")?;
    for r in rows {
        writeln!(w, "{},{},{:.12}", r.chain, r.metric, r.value)?;
    }
    Ok(())
}
