//! Markov-chain testbed for comparing parallel and sequential scaling of
//! masked diffusion decoders.
//!
//! Tasks are tabular Markov chains whose structure is either *serial*
//! (each step depends on the exact previous state) or *parallel* (inputs
//! are bucketed, so coarse information suffices). Decoders run on exact
//! posteriors, which makes every accuracy figure checkable against a
//! closed-form oracle.

pub mod config;
pub mod decoder;
pub mod entropy;
pub mod error;
pub mod harness;
pub mod manifest;
pub mod metrics;
pub mod pipeline;
pub mod plot;
pub mod posterior;
pub mod seed;
pub mod task;

pub use config::ExperimentConfig;
pub use decoder::{
    autoregressive_decode, des_should_stop, diffusion_decode, overlap_ratio, select_commits,
    DecodeConfig, DecodeTrace, EarlyStop, StepRecord, Strategy,
};
pub use entropy::{
    binary_entropy, coarsen_distribution, coarsen_model, cross_entropy, fano_upper_bound,
    kl_divergence, mean_skip_entropy, min_entropy, sensitivity_profile, shannon_entropy,
    skip_entropy_gap, DiscreteDistribution, Reference,
};
pub use error::{Error, Result};
pub use harness::{
    pass_at_k, run_batch, sweep_diffusion, sweep_parallel, sweep_sequential, Axis, Learner,
    RunRecord, ScalingReport, Scenario,
};
pub use manifest::RunManifest;
pub use metrics::{
    cosine_similarity, informativeness, perplexity, reasoning_alignment, repetition_word,
    score_chains, step_alignment, token_entropy, Embedder, MetricRow, StepChain,
};
pub use pipeline::Command;
pub use plot::{emit_plot, PlotStyle};
pub use posterior::{
    greedy_fill, masked_posteriors, sequence_log_likelihood, ForwardBackward, MaskedSequence,
    PosteriorTable,
};
pub use task::{
    build_parallel_task, build_serial_task, sample_trajectory, TabularMarkovModel, TaskKind,
    TaskSpec, TrajectorySample,
};
