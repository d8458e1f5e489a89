//! Exact posterior marginals for partially observed trajectories.
//!
//! Forward-backward with per-step normalisation. The forward pass keeps
//! both the predictive message (before the evidence at `t` is applied) and
//! the filtered one, so leave-one-out marginals come for free.

use std::fmt;
use std::io::Write;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::task::TabularMarkovModel;

/// A trajectory with some positions hidden.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct MaskedSequence {
    tokens: Vec<Option<usize>>,
}

impl MaskedSequence {
    pub fn new(tokens: Vec<Option<usize>>) -> Self {
        MaskedSequence { tokens }
    }

    pub fn fully_masked(length: usize) -> Self {
        MaskedSequence {
            tokens: vec![None; length],
        }
    }

    /// Observe the first `observed` states and hide the rest.
    pub fn from_prefix(states: &[usize], observed: usize) -> Self {
        MaskedSequence {
            tokens: states
                .iter()
                .enumerate()
                .map(|(i, &s)| (i < observed).then_some(s))
                .collect(),
        }
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn token(&self, i: usize) -> Option<usize> {
        self.tokens[i]
    }

    pub fn tokens(&self) -> &[Option<usize>] {
        &self.tokens
    }

    pub fn is_masked(&self, i: usize) -> bool {
        self.tokens[i].is_none()
    }

    pub fn set(&mut self, i: usize, state: usize) {
        self.tokens[i] = Some(state);
    }

    pub fn mask(&mut self, i: usize) {
        self.tokens[i] = None;
    }

    pub fn mask_set(&self) -> Vec<usize> {
        (0..self.len()).filter(|&i| self.is_masked(i)).collect()
    }

    pub fn masked_count(&self) -> usize {
        self.tokens.iter().filter(|t| t.is_none()).count()
    }

    /// The full trajectory, if nothing is masked.
    pub fn to_states(&self) -> Option<Vec<usize>> {
        self.tokens.iter().copied().collect()
    }

    fn check(&self, model: &TabularMarkovModel) -> Result<()> {
        if self.len() != model.length() {
            return Err(Error::InvalidArgument(format!(
                "sequence has length {}, model expects {}",
                self.len(),
                model.length()
            )));
        }
        if let Some(s) = self
            .tokens
            .iter()
            .flatten()
            .find(|&&s| s >= model.num_states())
        {
            return Err(Error::InvalidArgument(format!("state {s} out of range")));
        }
        Ok(())
    }
}

impl fmt::Display for MaskedSequence {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for (i, t) in self.tokens.iter().enumerate() {
            if i > 0 {
                f.write_str(" ")?;
            }
            match t {
                Some(s) => write!(f, "{s}")?,
                None => f.write_str("_")?,
            }
        }
        Ok(())
    }
}

impl FromStr for MaskedSequence {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        s.split_whitespace()
            .map(|tok| match tok {
                "_" => Ok(None),
                n => n
                    .parse()
                    .map(Some)
                    .map_err(|_| Error::Parse(format!("bad token `{n}`"))),
            })
            .collect::<Result<_>>()
            .map(MaskedSequence::new)
    }
}

/// Per-position marginals. Observed positions hold a point mass.
/// Probabilities within this of the maximum count as tied.
pub const TIE_TOLERANCE: f64 = 1e-12;

/// Index of the largest entry; near-ties go to the lowest index.
pub fn lowest_argmax(p: &[f64]) -> usize {
    let peak = p.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    p.iter()
        .position(|&x| x >= peak - TIE_TOLERANCE)
        .unwrap_or(0)
}

#[derive(Debug, Clone, PartialEq)]
pub struct PosteriorTable {
    m: usize,
    probs: Vec<f64>,
    confidence: Vec<f64>,
    argmax: Vec<usize>,
}

impl PosteriorTable {
    fn from_rows(m: usize, probs: Vec<f64>) -> Self {
        let (confidence, argmax) = probs
            .chunks(m)
            .map(|row| {
                let peak = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                (peak, lowest_argmax(row))
            })
            .unzip();
        PosteriorTable {
            m,
            probs,
            confidence,
            argmax,
        }
    }

    pub fn len(&self) -> usize {
        self.confidence.len()
    }

    pub fn is_empty(&self) -> bool {
        self.confidence.is_empty()
    }

    pub fn num_states(&self) -> usize {
        self.m
    }

    pub fn probs(&self, i: usize) -> &[f64] {
        &self.probs[i * self.m..(i + 1) * self.m]
    }

    /// Largest marginal probability at position `i`.
    pub fn confidence(&self, i: usize) -> f64 {
        self.confidence[i]
    }

    /// Most probable state at `i`, lowest id on ties.
    pub fn argmax(&self, i: usize) -> usize {
        self.argmax[i]
    }

    pub fn argmax_all(&self) -> &[usize] {
        &self.argmax
    }

    /// CSV with columns `position,state,probability`.
    pub fn write_csv(&self, mut w: impl Write) -> std::io::Result<()> {
        writeln!(w, "position,state,probability")?;
        for i in 0..self.len() {
            for (s, p) in self.probs(i).iter().enumerate() {
                writeln!(w, "{i},{s},{p:.17e}")?;
            }
        }
        Ok(())
    }
}

fn normalize(v: &mut [f64]) -> f64 {
    let total: f64 = v.iter().sum();
    if total > 0.0 {
        v.iter_mut().for_each(|x| *x /= total);
    }
    total
}

/// Forward-backward messages for one masked sequence.
pub struct ForwardBackward {
    m: usize,
    /// Forward message before the evidence at `t`.
    predicted: Vec<f64>,
    /// Forward message after the evidence at `t`.
    filtered: Vec<f64>,
    /// Backward message, evidence strictly after `t`.
    backward: Vec<f64>,
}

impl ForwardBackward {
    pub fn run(model: &TabularMarkovModel, seq: &MaskedSequence) -> Result<Self> {
        seq.check(model)?;
        let (m, len) = (model.num_states(), seq.len());
        let kernel = model.kernel();
        let mut predicted = vec![0.0; len * m];
        let mut filtered = vec![0.0; len * m];
        let mut backward = vec![0.0; len * m];

        predicted[..m].copy_from_slice(model.initial());
        for t in 0..len {
            if t > 0 {
                kernel.push_forward(
                    &filtered[(t - 1) * m..t * m],
                    &mut predicted[t * m..(t + 1) * m],
                );
                normalize(&mut predicted[t * m..(t + 1) * m]);
            }
            let f = &mut filtered[t * m..(t + 1) * m];
            match seq.token(t) {
                None => f.copy_from_slice(&predicted[t * m..(t + 1) * m]),
                Some(s) => {
                    f.iter_mut().for_each(|x| *x = 0.0);
                    f[s] = predicted[t * m + s];
                }
            }
            if normalize(f) <= 0.0 {
                return Err(Error::Contradiction);
            }
        }

        backward[(len - 1) * m..].iter_mut().for_each(|x| *x = 1.0);
        let mut weighted = vec![0.0; m];
        for t in (0..len - 1).rev() {
            let next = &backward[(t + 1) * m..(t + 2) * m];
            match seq.token(t + 1) {
                None => weighted.copy_from_slice(next),
                Some(s) => {
                    weighted.iter_mut().for_each(|x| *x = 0.0);
                    weighted[s] = next[s];
                }
            }
            let out = &mut backward[t * m..(t + 1) * m];
            kernel.pull_back(&weighted, out);
            let peak = out.iter().cloned().fold(0.0, f64::max);
            if peak <= 0.0 {
                return Err(Error::Contradiction);
            }
            out.iter_mut().for_each(|x| *x /= peak);
        }

        Ok(ForwardBackward {
            m,
            predicted,
            filtered,
            backward,
        })
    }

    fn combine(&self, forward: &[f64], t: usize) -> Vec<f64> {
        let beta = &self.backward[t * self.m..(t + 1) * self.m];
        let mut p: Vec<f64> = forward.iter().zip(beta).map(|(a, b)| a * b).collect();
        normalize(&mut p);
        p
    }

    /// Marginal of position `t` given every observed token.
    pub fn marginal(&self, t: usize) -> Vec<f64> {
        self.combine(&self.filtered[t * self.m..(t + 1) * self.m], t)
    }

    /// Marginal of position `t` given every observed token except its own.
    pub fn leave_one_out(&self, t: usize) -> Vec<f64> {
        self.combine(&self.predicted[t * self.m..(t + 1) * self.m], t)
    }

    pub fn table(&self) -> PosteriorTable {
        let len = self.filtered.len() / self.m;
        let probs = (0..len).flat_map(|t| self.marginal(t)).collect();
        PosteriorTable::from_rows(self.m, probs)
    }
}

/// Posterior marginals of every position given the unmasked ones.
pub fn masked_posteriors(
    model: &TabularMarkovModel,
    seq: &MaskedSequence,
) -> Result<PosteriorTable> {
    Ok(ForwardBackward::run(model, seq)?.table())
}

/// `ln p(states)`, `-inf` when some factor vanishes.
pub fn sequence_log_likelihood(model: &TabularMarkovModel, states: &[usize]) -> Result<f64> {
    if states.len() != model.length() {
        return Err(Error::InvalidArgument(format!(
            "trajectory has length {}, model expects {}",
            states.len(),
            model.length()
        )));
    }
    chain_log_likelihood(model, states)
}

/// Chain-rule log-likelihood of a trajectory of any positive length.
pub(crate) fn chain_log_likelihood(model: &TabularMarkovModel, states: &[usize]) -> Result<f64> {
    if states.is_empty() {
        return Err(Error::InvalidArgument("empty trajectory".into()));
    }
    if let Some(&s) = states.iter().find(|&&s| s >= model.num_states()) {
        return Err(Error::InvalidArgument(format!("state {s} out of range")));
    }
    // Same accumulation order as the sampler, so the two agree bitwise.
    let mut total = model.initial()[states[0]].ln();
    for w in states.windows(2) {
        total += model.entry(w[0], w[1]).ln();
    }
    Ok(total)
}

/// Fill every masked position with its marginal argmax.
pub fn greedy_fill(model: &TabularMarkovModel, seq: &MaskedSequence) -> Result<Vec<usize>> {
    let table = masked_posteriors(model, seq)?;
    Ok((0..seq.len())
        .map(|i| seq.token(i).unwrap_or_else(|| table.argmax(i)))
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::task::TaskSpec;

    #[test]
    fn display_and_parse() {
        let seq: MaskedSequence = "4 _ _ 7".parse().unwrap();
        assert_eq!(seq.mask_set(), vec![1, 2]);
        assert_eq!(seq.to_string(), "4 _ _ 7");
        assert!("4 x".parse::<MaskedSequence>().is_err());
    }

    #[test]
    fn observed_positions_are_point_masses() {
        let model = TaskSpec::serial(8, 3, 1, 0.2, 5).build().unwrap();
        let seq: MaskedSequence = "2 _ 5 _ _".parse().unwrap();
        let table = masked_posteriors(&model, &seq).unwrap();
        assert_eq!(table.probs(0)[2], 1.0);
        assert_eq!(table.probs(2)[5], 1.0);
        assert_eq!(table.confidence(2), 1.0);
    }

    #[test]
    fn noiseless_serial_fills_deterministically() {
        let model = TaskSpec::serial(8, 3, 1, 0.0, 4).build().unwrap();
        let seq: MaskedSequence = "2 _ _ _".parse().unwrap();
        let table = masked_posteriors(&model, &seq).unwrap();
        assert_eq!(greedy_fill(&model, &seq).unwrap(), vec![2, 7, 6, 3]);
        for t in 1..4 {
            assert_eq!(table.confidence(t), 1.0);
        }
    }

    #[test]
    fn contradiction_is_reported() {
        let model = TaskSpec::serial(8, 3, 1, 0.0, 3).build().unwrap();
        let seq: MaskedSequence = "2 _ 0".parse().unwrap();
        assert!(matches!(
            masked_posteriors(&model, &seq),
            Err(Error::Contradiction)
        ));
    }

    #[test]
    fn fully_masked_gives_stationary_uniform() {
        let model = TaskSpec::serial(8, 3, 1, 0.1, 4).build().unwrap();
        let table = masked_posteriors(&model, &MaskedSequence::fully_masked(4)).unwrap();
        for t in 0..4 {
            for &p in table.probs(t) {
                assert!((p - 0.125).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn leave_one_out_ignores_own_token() {
        let model = TaskSpec::serial(8, 3, 1, 0.2, 4).build().unwrap();
        let a: MaskedSequence = "2 7 6 _".parse().unwrap();
        let b: MaskedSequence = "2 1 6 _".parse().unwrap();
        let fa = ForwardBackward::run(&model, &a).unwrap().leave_one_out(1);
        let fb = ForwardBackward::run(&model, &b).unwrap().leave_one_out(1);
        for (x, y) in fa.iter().zip(&fb) {
            assert!((x - y).abs() < 1e-15);
        }
        let mut hidden = a.clone();
        hidden.mask(1);
        let direct = masked_posteriors(&model, &hidden).unwrap();
        for (x, y) in fa.iter().zip(direct.probs(1)) {
            assert!((x - y).abs() < 1e-14);
        }
    }

    #[test]
    fn log_likelihood_of_uniform_chain() {
        let model = TabularMarkovModel::new(vec![0.25; 4], vec![0.25; 16], 3).unwrap();
        let ll = sequence_log_likelihood(&model, &[0, 1, 2]).unwrap();
        assert!((ll - 3.0 * 0.25f64.ln()).abs() < 1e-15);
        assert!(sequence_log_likelihood(&model, &[0, 1]).is_err());
        let det = TaskSpec::serial(4, 1, 0, 0.0, 2).build().unwrap();
        assert_eq!(
            sequence_log_likelihood(&det, &[0, 1]).unwrap(),
            f64::NEG_INFINITY
        );
    }
}
