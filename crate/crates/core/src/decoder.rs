//! Masked-diffusion decoding over a task model.
//!
//! The sequence is split into blocks decoded left to right. Inside a block,
//! each step computes exact posteriors for the current partial sequence,
//! commits the `ceil(remaining / steps_left)` most confident masked
//! positions, and records the argmax snapshot of the whole sequence.
//! The revision strategy additionally re-opens the committed positions the
//! model is least sure about (given everything else) and re-predicts each
//! of them, in position order, from the rest of the sequence.

use std::io::Write;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::posterior::{lowest_argmax, ForwardBackward, MaskedSequence, PosteriorTable};
use crate::seed;
use crate::task::TabularMarkovModel;

/// Confidences closer than this are treated as tied.
const CONFIDENCE_QUANTUM: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Strategy {
    LowConfidence,
    Random,
    Revision,
}

impl std::fmt::Display for Strategy {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Strategy::LowConfidence => "low_confidence",
            Strategy::Random => "random",
            Strategy::Revision => "revision",
        })
    }
}

/// Early stopping on snapshot stability.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EarlyStop {
    pub enabled: bool,
    pub threshold: f64,
    pub patience: usize,
}

impl Default for EarlyStop {
    fn default() -> Self {
        EarlyStop {
            enabled: false,
            threshold: 0.99,
            patience: 3,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecodeConfig {
    pub total_steps: usize,
    pub block_length: usize,
    pub temperature: f64,
    pub strategy: Strategy,
    pub revision_budget: usize,
    pub early_stop: EarlyStop,
    pub seed: u64,
    pub max_length: usize,
}

impl DecodeConfig {
    pub fn new(total_steps: usize, block_length: usize) -> Self {
        DecodeConfig {
            total_steps,
            block_length,
            temperature: 0.0,
            strategy: Strategy::LowConfidence,
            revision_budget: 0,
            early_stop: EarlyStop::default(),
            seed: 0,
            max_length: usize::MAX,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::Config(msg));
        if self.total_steps == 0 {
            return bad("total_steps must be positive".into());
        }
        if self.block_length == 0 {
            return bad("block_length must be positive".into());
        }
        if !self.temperature.is_finite() || self.temperature < 0.0 {
            return bad(format!(
                "temperature must be finite and non-negative, got {}",
                self.temperature
            ));
        }
        if self.strategy == Strategy::Revision && self.revision_budget == 0 {
            return bad("the revision strategy needs revision_budget >= 1".into());
        }
        if self.early_stop.enabled {
            if self.early_stop.patience == 0 {
                return bad("patience must be positive".into());
            }
            if !(0.0..=1.0).contains(&self.early_stop.threshold) {
                return bad(format!(
                    "early-stop threshold {} outside [0, 1]",
                    self.early_stop.threshold
                ));
            }
        }
        Ok(())
    }
}

/// One executed decoding step.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    /// 1-based global step index.
    pub step: usize,
    pub block: usize,
    /// Committed tokens plus argmax predictions everywhere else.
    pub snapshot: Vec<usize>,
    pub committed: Vec<usize>,
    pub tokens: Vec<usize>,
    /// Marginal confidence of each committed position when it was picked.
    pub confidences: Vec<f64>,
    pub reopened: Vec<usize>,
    pub overlap: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecodeTrace {
    pub steps: Vec<StepRecord>,
    pub overlap_ratios: Vec<f64>,
    pub stop_step: usize,
    pub steps_executed: usize,
    pub early_stopped: bool,
    pub initial_mask: Vec<usize>,
    pub final_sequence: Vec<usize>,
}

impl DecodeTrace {
    fn empty(final_sequence: Vec<usize>) -> Self {
        DecodeTrace {
            steps: Vec::new(),
            overlap_ratios: Vec::new(),
            stop_step: 0,
            steps_executed: 0,
            early_stopped: false,
            initial_mask: Vec::new(),
            final_sequence,
        }
    }

    /// Step at which each position was first committed, `None` for prompt
    /// positions.
    pub fn commit_order(&self) -> Vec<Option<usize>> {
        let mut order = vec![None; self.final_sequence.len()];
        for rec in &self.steps {
            for &p in &rec.committed {
                order[p].get_or_insert(rec.step);
            }
        }
        order
    }

    pub fn mean_confidence(rec: &StepRecord) -> f64 {
        if rec.confidences.is_empty() {
            f64::NAN
        } else {
            rec.confidences.iter().sum::<f64>() / rec.confidences.len() as f64
        }
    }

    /// One JSON object per step.
    pub fn write_jsonl(&self, mut w: impl Write) -> std::io::Result<()> {
        for rec in &self.steps {
            serde_json::to_writer(&mut w, rec)?;
            writeln!(w)?;
        }
        Ok(())
    }

    /// CSV with columns `step,committed_count,mean_confidence,overlap_ratio`.
    pub fn write_csv(&self, mut w: impl Write) -> std::io::Result<()> {
        writeln!(w, "step,committed_count,mean_confidence,overlap_ratio")?;
        for rec in &self.steps {
            let conf = Self::mean_confidence(rec);
            let conf = if conf.is_nan() {
                String::new()
            } else {
                format!("{conf:.12}")
            };
            let overlap = rec.overlap.map(|o| format!("{o:.12}")).unwrap_or_default();
            writeln!(
                w,
                "{},{},{},{}",
                rec.step,
                rec.committed.len(),
                conf,
                overlap
            )?;
        }
        Ok(())
    }
}

/// Fraction of `updated` positions whose snapshot value did not change.
pub fn overlap_ratio(prev: &[usize], curr: &[usize], updated: &[usize]) -> Result<f64> {
    if prev.len() != curr.len() {
        return Err(Error::InvalidArgument(format!(
            "snapshots differ in length: {} vs {}",
            prev.len(),
            curr.len()
        )));
    }
    if updated.is_empty() {
        return Err(Error::EmptyComparison);
    }
    if let Some(&p) = updated.iter().find(|&&p| p >= curr.len()) {
        return Err(Error::InvalidArgument(format!("position {p} out of range")));
    }
    let same = updated.iter().filter(|&&p| prev[p] == curr[p]).count();
    Ok(same as f64 / updated.len() as f64)
}

/// True once the last `patience` ratios all reach `threshold`.
pub fn des_should_stop(history: &[f64], threshold: f64, patience: usize) -> bool {
    patience > 0
        && history.len() >= patience
        && history[history.len() - patience..]
            .iter()
            .all(|&r| r >= threshold)
}

/// Draw a state from `p` sharpened by `1 / temperature`; temperature zero
/// takes the argmax with the lowest id winning ties.
pub fn sample_token(p: &[f64], temperature: f64, rng: &mut impl Rng) -> usize {
    if temperature == 0.0 {
        return lowest_argmax(p);
    }
    let peak = p.iter().cloned().fold(0.0, f64::max);
    let weights: Vec<f64> = p
        .iter()
        .map(|&x| {
            if x > 0.0 {
                ((x / peak).ln() / temperature).exp()
            } else {
                0.0
            }
        })
        .collect();
    let total: f64 = weights.iter().sum();
    let u = rng.gen::<f64>() * total;
    let mut acc = 0.0;
    let mut last = 0;
    for (i, &x) in weights.iter().enumerate() {
        if x > 0.0 {
            acc += x;
            last = i;
            if u < acc {
                return i;
            }
        }
    }
    last
}

fn quantize(conf: f64) -> u64 {
    (conf / CONFIDENCE_QUANTUM).round() as u64
}

/// Pick `n` of the masked `candidates` and draw a token for each.
///
/// Confidence ties are broken by a random key, so equally certain positions
/// are chosen in random order. Returns `(position, token)` sorted by
/// position.
pub fn select_commits(
    table: &PosteriorTable,
    candidates: &[usize],
    n: usize,
    strategy: Strategy,
    temperature: f64,
    rng: &mut impl Rng,
) -> Vec<(usize, usize)> {
    let mut chosen: Vec<usize> = match strategy {
        Strategy::Random => candidates
            .choose_multiple(rng, n.min(candidates.len()))
            .copied()
            .collect(),
        Strategy::LowConfidence | Strategy::Revision => {
            let mut keyed: Vec<(u64, u64, usize)> = candidates
                .iter()
                .map(|&p| (quantize(table.confidence(p)), rng.gen::<u64>(), p))
                .collect();
            keyed.sort_by(|a, b| b.0.cmp(&a.0).then(a.1.cmp(&b.1)));
            keyed.into_iter().take(n).map(|(_, _, p)| p).collect()
        }
    };
    chosen.sort_unstable();
    chosen
        .into_iter()
        .map(|p| (p, sample_token(table.probs(p), temperature, rng)))
        .collect()
}

/// Committed positions in `block` whose current token the model doubts
/// most, judged from everything else. At most `budget`, all below 1.
fn select_reopen(
    model: &TabularMarkovModel,
    seq: &MaskedSequence,
    decoded: &[usize],
    budget: usize,
) -> Result<Vec<usize>> {
    let committed: Vec<usize> = decoded
        .iter()
        .copied()
        .filter(|&p| !seq.is_masked(p))
        .collect();
    if committed.is_empty() {
        return Ok(Vec::new());
    }
    let fb = ForwardBackward::run(model, seq)?;
    let mut scored: Vec<(f64, usize)> = committed
        .into_iter()
        .map(|p| (fb.leave_one_out(p)[seq.token(p).unwrap()], p))
        .filter(|&(c, _)| c < 1.0 - CONFIDENCE_QUANTUM)
        .collect();
    scored.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
    let mut out: Vec<usize> = scored.into_iter().take(budget).map(|(_, p)| p).collect();
    out.sort_unstable();
    Ok(out)
}

/// Re-predict position `p` from every other token.
fn redraw(
    model: &TabularMarkovModel,
    seq: &MaskedSequence,
    p: usize,
    temperature: f64,
    rng: &mut impl Rng,
) -> Result<usize> {
    let fb = ForwardBackward::run(model, seq)?;
    Ok(sample_token(&fb.leave_one_out(p), temperature, rng))
}

fn split_steps(total: usize, blocks: usize) -> Vec<usize> {
    (0..blocks)
        .map(|b| total / blocks + usize::from(b < total % blocks))
        .collect()
}

/// Decode every masked position of `prompt` under `model`.
pub fn diffusion_decode(
    model: &TabularMarkovModel,
    prompt: &MaskedSequence,
    cfg: &DecodeConfig,
) -> Result<DecodeTrace> {
    cfg.validate()?;
    if prompt.len() > cfg.max_length {
        return Err(Error::Config(format!(
            "sequence length {} exceeds max_length {}",
            prompt.len(),
            cfg.max_length
        )));
    }
    if prompt.len() != model.length() {
        return Err(Error::InvalidArgument(format!(
            "prompt has length {}, model expects {}",
            prompt.len(),
            model.length()
        )));
    }
    let initial_mask = prompt.mask_set();
    if initial_mask.is_empty() {
        return Err(Error::InvalidArgument(
            "prompt has no masked positions".into(),
        ));
    }

    let len = prompt.len();
    let blocks: Vec<(usize, Vec<usize>)> = (0..len)
        .step_by(cfg.block_length)
        .enumerate()
        .map(|(b, start)| {
            (
                b,
                (start..(start + cfg.block_length).min(len)).collect::<Vec<_>>(),
            )
        })
        .filter(|(_, pos)| pos.iter().any(|&p| prompt.is_masked(p)))
        .collect();
    if cfg.total_steps < blocks.len() {
        return Err(Error::Config(format!(
            "total_steps = {} is fewer than the {} blocks that need decoding",
            cfg.total_steps,
            blocks.len()
        )));
    }
    let budget = split_steps(cfg.total_steps, blocks.len());

    let mut seq = prompt.clone();
    let mut steps = Vec::new();
    let mut overlap_ratios = Vec::new();
    let mut prev_snapshot: Option<Vec<usize>> = None;
    let mut early_stopped = false;

    for ((block, positions), &block_steps) in blocks.iter().zip(&budget) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed::derive(cfg.seed, &[*block as u64]));
        let decoded: Vec<usize> = positions
            .iter()
            .copied()
            .filter(|&p| prompt.is_masked(p))
            .collect();
        let mut history = Vec::new();
        for s in 0..block_steps {
            let masked: Vec<usize> = decoded
                .iter()
                .copied()
                .filter(|&p| seq.is_masked(p))
                .collect();
            let reopen = if cfg.strategy == Strategy::Revision {
                select_reopen(model, &seq, &decoded, cfg.revision_budget)?
            } else {
                Vec::new()
            };
            if masked.is_empty() && reopen.is_empty() {
                break;
            }
            let mut working = seq.clone();
            reopen.iter().for_each(|&p| working.mask(p));
            let table = ForwardBackward::run(model, &working)?.table();

            let n = masked.len().div_ceil(block_steps - s);
            let picks = select_commits(&table, &masked, n, cfg.strategy, cfg.temperature, &mut rng);

            let mut snapshot = table.argmax_all().to_vec();
            let mut committed = Vec::with_capacity(picks.len());
            let mut tokens = Vec::with_capacity(picks.len());
            let mut confidences = Vec::with_capacity(picks.len());
            for &(p, tok) in &picks {
                seq.set(p, tok);
                snapshot[p] = tok;
                committed.push(p);
                tokens.push(tok);
                confidences.push(table.confidence(p));
            }
            for &p in &reopen {
                let tok = redraw(model, &seq, p, cfg.temperature, &mut rng)?;
                seq.set(p, tok);
                snapshot[p] = tok;
            }
            let mut updated: Vec<usize> = committed.iter().chain(&reopen).copied().collect();
            updated.sort_unstable();

            let overlap = match &prev_snapshot {
                Some(prev) => Some(overlap_ratio(prev, &snapshot, &updated)?),
                None => None,
            };
            if let Some(r) = overlap {
                overlap_ratios.push(r);
                history.push(r);
            }
            prev_snapshot = Some(snapshot.clone());
            steps.push(StepRecord {
                step: steps.len() + 1,
                block: *block,
                snapshot,
                committed,
                tokens,
                confidences,
                reopened: reopen,
                overlap,
            });

            let settled = decoded.iter().all(|&p| !seq.is_masked(p));
            if cfg.early_stop.enabled
                && settled
                && s + 1 < block_steps
                && des_should_stop(&history, cfg.early_stop.threshold, cfg.early_stop.patience)
            {
                early_stopped = true;
                break;
            }
        }
    }

    let final_sequence = seq
        .to_states()
        .ok_or_else(|| Error::InvalidArgument("decoding left masked positions".into()))?;
    let executed = steps.len();
    Ok(DecodeTrace {
        steps,
        overlap_ratios,
        stop_step: executed,
        steps_executed: executed,
        early_stopped,
        initial_mask,
        final_sequence,
    })
}

/// Left-to-right decoding, one position per step. The masked positions
/// must form a suffix.
pub fn autoregressive_decode(
    model: &TabularMarkovModel,
    prompt: &MaskedSequence,
    temperature: f64,
    seed: u64,
) -> Result<DecodeTrace> {
    if prompt.len() != model.length() {
        return Err(Error::InvalidArgument(format!(
            "prompt has length {}, model expects {}",
            prompt.len(),
            model.length()
        )));
    }
    if !temperature.is_finite() || temperature < 0.0 {
        return Err(Error::Config(format!("bad temperature {temperature}")));
    }
    let mask = prompt.mask_set();
    let Some(&first) = mask.first() else {
        return Ok(DecodeTrace::empty(prompt.to_states().unwrap_or_default()));
    };
    if mask.len() != prompt.len() - first {
        return Err(Error::InvalidArgument(
            "masked positions are not a suffix".into(),
        ));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut seq = prompt.clone();
    let mut steps: Vec<StepRecord> = Vec::new();
    let mut overlap_ratios = Vec::new();
    for &p in &mask {
        let table = ForwardBackward::run(model, &seq)?.table();
        let tok = sample_token(table.probs(p), temperature, &mut rng);
        seq.set(p, tok);
        let mut snapshot = table.argmax_all().to_vec();
        snapshot[p] = tok;
        let overlap = match steps.last() {
            Some(prev) => Some(overlap_ratio(&prev.snapshot, &snapshot, &[p])?),
            None => None,
        };
        overlap_ratios.extend(overlap);
        steps.push(StepRecord {
            step: steps.len() + 1,
            block: 0,
            snapshot,
            committed: vec![p],
            tokens: vec![tok],
            confidences: vec![table.confidence(p)],
            reopened: Vec::new(),
            overlap,
        });
    }
    let executed = steps.len();
    Ok(DecodeTrace {
        steps,
        overlap_ratios,
        stop_step: executed,
        steps_executed: executed,
        early_stopped: false,
        initial_mask: mask,
        final_sequence: seq.to_states().expect("every position committed"),
    })
}
