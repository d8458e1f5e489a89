//! Inference-time scaling experiments.
//!
//! Each run samples a ground-truth trajectory from the task model, hides
//! everything after the prompt, and decodes with the learner's view of
//! the task. A run is correct when every answer position matches the
//! trajectory it was generated from.

mod frontier;
mod order;
mod passk;
mod stats;
mod sweep;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::decoder::{diffusion_decode, DecodeConfig};
use crate::error::{Error, Result};
use crate::posterior::MaskedSequence;
use crate::seed;
use crate::task::{sample_trajectory, TabularMarkovModel, TaskSpec};

pub use frontier::{efficiency_frontier, FrontierReport};
pub use order::{decoding_order_stats, OrderStats};
pub use passk::{binomial, pass_at_k, pass_at_k_ratio};
pub use stats::{plateau_point, reasoning_boundaries, sign_test_p_value, Boundaries};
pub use sweep::{
    depth_sweep, sweep_diffusion, sweep_parallel, sweep_sequential, Axis, OverDiffusion,
    PassAtKTable, ScalingReport,
};

const TAG_INSTANCE: u64 = 1;
const TAG_DECODE: u64 = 2;

/// How the decoder's model departs from the task that generated the data.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Learner {
    /// Inputs are misread as a neighbour within this radius ...
    pub jitter_radius: usize,
    /// ... with this probability.
    pub jitter_rate: f64,
    /// Mass every row leaks into `leak_state`.
    pub leak: f64,
    pub leak_state: usize,
    /// Uniform mass mixed into every row last.
    pub smoothing: f64,
}

impl Learner {
    pub fn exact() -> Self {
        Learner::default()
    }

    pub fn jitter(radius: usize, rate: f64) -> Self {
        Learner {
            jitter_radius: radius,
            jitter_rate: rate,
            ..Learner::default()
        }
    }

    pub fn leaky(state: usize, leak: f64) -> Self {
        Learner {
            leak,
            leak_state: state,
            ..Learner::default()
        }
    }

    pub fn apply(&self, model: &TabularMarkovModel) -> Result<TabularMarkovModel> {
        let mut out = model.clone();
        if self.jitter_radius > 0 && self.jitter_rate > 0.0 {
            out = out.with_input_jitter(self.jitter_radius, self.jitter_rate)?;
        }
        if self.leak > 0.0 {
            out = out.with_absorbing_leak(self.leak_state, self.leak)?;
        }
        if self.smoothing > 0.0 {
            out = out.with_smoothing(self.smoothing)?;
        }
        Ok(out)
    }
}

/// Everything needed to generate and decode runs.
#[derive(Debug, Clone, PartialEq)]
pub struct Scenario {
    pub task: TaskSpec,
    pub learner: Learner,
    pub decode: DecodeConfig,
    /// Number of leading positions shown to the decoder.
    pub prompt_length: usize,
    pub master_seed: u64,
}

impl Scenario {
    pub fn new(task: TaskSpec, learner: Learner, decode: DecodeConfig, master_seed: u64) -> Self {
        Scenario {
            task,
            learner,
            decode,
            prompt_length: 1,
            master_seed,
        }
    }

    pub fn with_task(&self, task: TaskSpec) -> Self {
        Scenario {
            task,
            ..self.clone()
        }
    }

    pub fn with_decode(&self, decode: DecodeConfig) -> Self {
        Scenario {
            decode,
            ..self.clone()
        }
    }

    fn validate(&self) -> Result<()> {
        self.task.validate()?;
        self.decode.validate()?;
        if self.prompt_length == 0 || self.prompt_length >= self.task.length {
            return Err(Error::Config(format!(
                "prompt_length must lie in [1, {}), got {}",
                self.task.length, self.prompt_length
            )));
        }
        Ok(())
    }

    /// Models used to generate data and to decode.
    pub fn models(&self) -> Result<(TabularMarkovModel, TabularMarkovModel)> {
        self.validate()?;
        let truth = self.task.build()?;
        let learner = self.learner.apply(&truth)?;
        Ok((truth, learner))
    }

    pub fn instance_seed(&self, run: usize) -> u64 {
        seed::derive(self.master_seed, &[TAG_INSTANCE, run as u64])
    }

    pub fn decode_seed(&self, point: usize, run: usize) -> u64 {
        seed::derive(self.master_seed, &[TAG_DECODE, point as u64, run as u64])
    }

    /// Ground truth and prompt for run `run`.
    pub fn instance(&self, truth: &TabularMarkovModel, run: usize) -> (Vec<usize>, MaskedSequence) {
        let sample = sample_trajectory(truth, self.instance_seed(run));
        let prompt = MaskedSequence::from_prefix(&sample.states, self.prompt_length);
        (sample.states, prompt)
    }
}

/// Outcome of one decode.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub task_id: usize,
    pub grid_value: usize,
    pub seed: u64,
    pub correct: bool,
    pub steps_executed: usize,
    pub output_length: usize,
    pub early_stopped: bool,
    pub commit_order: Vec<Option<usize>>,
}

pub(crate) fn answers_match(truth: &[usize], decoded: &[usize], answers: &[usize]) -> bool {
    answers.iter().all(|&p| truth[p] == decoded[p])
}

/// Decode run `run` of `scenario` at grid point `point`.
pub fn run_once(
    scenario: &Scenario,
    truth_model: &TabularMarkovModel,
    learner_model: &TabularMarkovModel,
    point: usize,
    grid_value: usize,
    run: usize,
) -> Result<RunRecord> {
    let (truth, prompt) = scenario.instance(truth_model, run);
    let mut cfg = scenario.decode.clone();
    cfg.seed = scenario.decode_seed(point, run);
    let trace = diffusion_decode(learner_model, &prompt, &cfg)?;
    Ok(RunRecord {
        task_id: run,
        grid_value,
        seed: cfg.seed,
        correct: answers_match(
            &truth,
            &trace.final_sequence,
            &scenario.task.answer_positions(),
        ),
        steps_executed: trace.steps_executed,
        output_length: trace.initial_mask.len(),
        early_stopped: trace.early_stopped,
        commit_order: trace.commit_order(),
    })
}

/// `runs` independent decodes of one configuration, in run order.
pub fn run_batch(
    scenario: &Scenario,
    point: usize,
    grid_value: usize,
    runs: usize,
) -> Result<Vec<RunRecord>> {
    let (truth, learner) = scenario.models()?;
    (0..runs)
        .into_par_iter()
        .map(|r| run_once(scenario, &truth, &learner, point, grid_value, r))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn runs_are_reproducible() {
        let sc = Scenario::new(
            TaskSpec::serial(16, 3, 1, 0.1, 8),
            Learner::exact(),
            DecodeConfig {
                temperature: 1.0,
                ..DecodeConfig::new(7, 8)
            },
            11,
        );
        let a = run_batch(&sc, 0, 7, 20).unwrap();
        assert_eq!(a, run_batch(&sc, 0, 7, 20).unwrap());
        assert!(a.iter().all(|r| r.steps_executed <= 7));
    }

    #[test]
    fn prompt_must_leave_something_to_decode() {
        let mut sc = Scenario::new(
            TaskSpec::serial(16, 3, 1, 0.1, 4),
            Learner::exact(),
            DecodeConfig::new(3, 4),
            0,
        );
        sc.prompt_length = 4;
        assert!(sc.models().is_err());
    }
}
