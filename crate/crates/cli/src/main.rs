use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use psclab_core::config::{parse_value, set_value, ExperimentConfig, REFERENCE_CONFIG};
use psclab_core::pipeline::{self, Command};
use psclab_core::{Error, Result};

/// Parallel vs sequential scaling laboratory for masked diffusion decoders.
///
/// Settings come from a TOML config (the bundled reference config when
/// --config is absent). Every other flag overrides the config key of the
/// same name.
#[derive(Parser, Debug)]
#[command(name = "psclab", version)]
struct Cli {
    #[command(subcommand)]
    command: Cmd,
    /// Config file.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[command(flatten)]
    keys: Keys,
}

#[derive(Subcommand, Debug, Clone, Copy)]
enum Cmd {
    /// Build the task, learner model, and sample trajectories.
    TaskGen,
    /// Decode one prompt and export its trace.
    Decode,
    /// Skip-entropy table for the task pair.
    Entropy,
    /// Run a scaling sweep.
    Sweep,
    /// Score step chains.
    Metrics,
    /// Re-render a saved sweep report.
    Report,
}

impl From<Cmd> for Command {
    fn from(c: Cmd) -> Self {
        match c {
            Cmd::TaskGen => Command::TaskGen,
            Cmd::Decode => Command::Decode,
            Cmd::Entropy => Command::Entropy,
            Cmd::Sweep => Command::Sweep,
            Cmd::Metrics => Command::Metrics,
            Cmd::Report => Command::Report,
        }
    }
}

#[derive(Args, Debug, Default)]
struct Keys {
    #[arg(long, global = true)]
    master_seed: Option<u64>,
    /// Worker threads, 0 for all cores.
    #[arg(long, global = true)]
    workers: Option<usize>,

    /// serial or parallel.
    #[arg(long, global = true, help_heading = "Task")]
    kind: Option<String>,
    #[arg(long, global = true, help_heading = "Task")]
    m: Option<usize>,
    #[arg(long, global = true, help_heading = "Task")]
    a: Option<usize>,
    #[arg(long, global = true, allow_hyphen_values = true, help_heading = "Task")]
    b: Option<i64>,
    #[arg(long, global = true, help_heading = "Task")]
    w: Option<usize>,
    #[arg(long, global = true, help_heading = "Task")]
    eta: Option<f64>,
    #[arg(long, global = true, help_heading = "Task")]
    length: Option<usize>,
    #[arg(long, global = true, num_args = 1.., help_heading = "Task")]
    answer_positions: Option<Vec<usize>>,

    #[arg(long, global = true, help_heading = "Learner")]
    jitter_radius: Option<usize>,
    #[arg(long, global = true, help_heading = "Learner")]
    jitter_rate: Option<f64>,
    #[arg(long, global = true, help_heading = "Learner")]
    leak: Option<f64>,
    #[arg(long, global = true, help_heading = "Learner")]
    leak_state: Option<usize>,
    #[arg(long, global = true, help_heading = "Learner")]
    smoothing: Option<f64>,

    #[arg(
        long,
        global = true,
        visible_alias = "total-steps",
        help_heading = "Decode"
    )]
    diffusion_steps: Option<usize>,
    #[arg(long, global = true, help_heading = "Decode")]
    block_length: Option<usize>,
    #[arg(long, global = true, help_heading = "Decode")]
    temperature: Option<f64>,
    /// low_confidence, random or revision.
    #[arg(long, global = true, help_heading = "Decode")]
    strategy: Option<String>,
    #[arg(long, global = true, help_heading = "Decode")]
    revision_budget: Option<usize>,
    #[arg(long, global = true, num_args = 0..=1, default_missing_value = "true", help_heading = "Decode")]
    early_stop: Option<bool>,
    #[arg(long, global = true, help_heading = "Decode")]
    early_stop_threshold: Option<f64>,
    #[arg(long, global = true, help_heading = "Decode")]
    patience: Option<usize>,
    #[arg(long, global = true, help_heading = "Decode")]
    seed: Option<u64>,
    #[arg(
        long,
        global = true,
        visible_alias = "max-length",
        help_heading = "Decode"
    )]
    gen_length: Option<usize>,
    #[arg(long, global = true, help_heading = "Decode")]
    prompt_length: Option<usize>,
    /// Token line with `_` for masks, e.g. "4 _ _ 7".
    #[arg(long, global = true, help_heading = "Decode")]
    prompt: Option<String>,

    /// parallel, diffusion or sequential.
    #[arg(long, global = true, help_heading = "Sweep")]
    axis: Option<String>,
    #[arg(long, global = true, num_args = 1.., help_heading = "Sweep")]
    grid: Option<Vec<usize>>,
    #[arg(long, global = true, help_heading = "Sweep")]
    runs: Option<usize>,
    #[arg(long, global = true, num_args = 1.., help_heading = "Sweep")]
    temperatures: Option<Vec<f64>>,
    #[arg(long, global = true, help_heading = "Sweep")]
    k_max: Option<usize>,
    #[arg(long, global = true, help_heading = "Sweep")]
    samples: Option<usize>,
    #[arg(long, global = true, help_heading = "Sweep")]
    prompts: Option<usize>,
    #[arg(long, global = true, help_heading = "Sweep")]
    depth: Option<usize>,
    #[arg(long, global = true, help_heading = "Sweep")]
    plateau_delta: Option<f64>,

    #[arg(long, global = true, num_args = 2, help_heading = "Entropy")]
    pair: Option<Vec<String>>,
    #[arg(long, global = true, help_heading = "Entropy")]
    k: Option<usize>,
    #[arg(long, global = true, help_heading = "Entropy")]
    radius: Option<usize>,
    #[arg(long, global = true, help_heading = "Entropy")]
    mesh: Option<usize>,

    #[arg(long, global = true, help_heading = "Metrics")]
    hypotheses: Option<String>,
    #[arg(long, global = true, help_heading = "Metrics")]
    sources: Option<String>,
    #[arg(long, global = true, help_heading = "Metrics")]
    references: Option<String>,
    #[arg(long, global = true, help_heading = "Metrics")]
    embedding_dimension: Option<usize>,
    #[arg(long, global = true, help_heading = "Metrics")]
    embedding_seed: Option<u64>,

    /// Output directory; defaults to $PSCLAB_OUT_DIR, then ./psclab-out.
    #[arg(long, short = 'o', global = true, help_heading = "Output")]
    directory: Option<String>,
    #[arg(long, global = true, num_args = 1.., help_heading = "Output")]
    formats: Option<Vec<String>>,
    #[arg(long, global = true, num_args = 0..=1, default_missing_value = "true", help_heading = "Output")]
    plot: Option<bool>,
    /// Report JSON for the report command.
    #[arg(long, global = true, help_heading = "Output")]
    input: Option<String>,
}

impl Keys {
    fn overrides(&self) -> Result<Vec<(&'static str, toml::Value)>> {
        let mut out = Vec::new();
        macro_rules! put {
            ($($path:literal => $field:ident),* $(,)?) => {$(
                if let Some(v) = &self.$field {
                    let value = toml::Value::try_from(v)
                        .map_err(|e| Error::Config(format!("{}: {e}", $path)))?;
                    out.push(($path, value));
                }
            )*};
        }
        put!(
            "master_seed" => master_seed,
            "workers" => workers,
            "task.kind" => kind,
            "task.m" => m,
            "task.a" => a,
            "task.b" => b,
            "task.w" => w,
            "task.eta" => eta,
            "task.length" => length,
            "task.answer_positions" => answer_positions,
            "learner.jitter_radius" => jitter_radius,
            "learner.jitter_rate" => jitter_rate,
            "learner.leak" => leak,
            "learner.leak_state" => leak_state,
            "learner.smoothing" => smoothing,
            "decode.diffusion_steps" => diffusion_steps,
            "decode.block_length" => block_length,
            "decode.temperature" => temperature,
            "decode.strategy" => strategy,
            "decode.revision_budget" => revision_budget,
            "decode.early_stop" => early_stop,
            "decode.early_stop_threshold" => early_stop_threshold,
            "decode.patience" => patience,
            "decode.seed" => seed,
            "decode.gen_length" => gen_length,
            "decode.prompt_length" => prompt_length,
            "decode.prompt" => prompt,
            "sweep.axis" => axis,
            "sweep.grid" => grid,
            "sweep.runs" => runs,
            "sweep.temperatures" => temperatures,
            "sweep.k_max" => k_max,
            "sweep.samples" => samples,
            "sweep.prompts" => prompts,
            "sweep.depth" => depth,
            "sweep.plateau_delta" => plateau_delta,
            "entropy.pair" => pair,
            "entropy.k" => k,
            "entropy.radius" => radius,
            "entropy.mesh" => mesh,
            "metrics.hypotheses" => hypotheses,
            "metrics.sources" => sources,
            "metrics.references" => references,
            "metrics.embedding_dimension" => embedding_dimension,
            "metrics.embedding_seed" => embedding_seed,
            "output.directory" => directory,
            "output.formats" => formats,
            "output.plot" => plot,
            "output.input" => input,
        );
        Ok(out)
    }
}

fn load(cli: &Cli) -> Result<ExperimentConfig> {
    let text = match &cli.config {
        Some(path) => std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?,
        None => REFERENCE_CONFIG.to_string(),
    };
    let mut value = parse_value(&text)?;
    for (path, v) in cli.keys.overrides()? {
        set_value(&mut value, path, v)?;
    }
    ExperimentConfig::from_value(value)
}

fn execute(cli: &Cli) -> Result<()> {
    let cfg = load(cli)?;
    let dir = pipeline::output_dir(&cfg);
    let manifest = pipeline::run(cli.command.into(), &cfg, &dir)?;
    println!(
        "{}: wrote {} files to {} in {:.2}s",
        manifest.command,
        manifest.files.len() + 1,
        dir.display(),
        manifest.wall_clock_seconds
    );
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match execute(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("psclab: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
