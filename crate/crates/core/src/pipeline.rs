//! Command execution: compute every artifact in memory, then write them
//! and the manifest.

use std::path::{Path, PathBuf};
use std::time::Instant;

use crate::config::ExperimentConfig;
use crate::decoder::diffusion_decode;
use crate::entropy::mean_skip_entropy;
use crate::error::{Error, Result};
use crate::harness::{sweep_diffusion, sweep_parallel, sweep_sequential, Axis, ScalingReport};
use crate::manifest::{write_atomic, RunManifest};
use crate::metrics::{score_chains, write_metric_csv, Embedder, StepChain};
use crate::plot::{emit_plot, render_svg, Chart, PlotStyle, Series};
use crate::posterior::masked_posteriors;
use crate::task::TaskKind;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Command {
    TaskGen,
    Decode,
    Entropy,
    Sweep,
    Metrics,
    Report,
}

impl Command {
    pub fn name(self) -> &'static str {
        match self {
            Command::TaskGen => "task-gen",
            Command::Decode => "decode",
            Command::Entropy => "entropy",
            Command::Sweep => "sweep",
            Command::Metrics => "metrics",
            Command::Report => "report",
        }
    }
}

/// Named file contents produced by a command.
pub type Artifacts = Vec<(String, Vec<u8>)>;

fn csv_bytes(f: impl FnOnce(&mut Vec<u8>) -> std::io::Result<()>) -> Vec<u8> {
    let mut buf = Vec::new();
    f(&mut buf).expect("writing to memory cannot fail");
    buf
}

/// Output directory: the config value, else the environment default,
/// else `psclab-out`.
pub fn output_dir(cfg: &ExperimentConfig) -> PathBuf {
    cfg.output
        .directory
        .clone()
        .or_else(|| std::env::var(crate::config::OUT_DIR_ENV).ok())
        .unwrap_or_else(|| "psclab-out".into())
        .into()
}

/// Run `command` and return its artifacts without touching the disk
/// (apart from reading inputs). `dir` is where `report` looks for
/// `report.json` when no input is configured.
pub fn build_artifacts(command: Command, cfg: &ExperimentConfig, dir: &Path) -> Result<Artifacts> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(cfg.workers)
        .build()
        .map_err(|e| Error::Config(e.to_string()))?;
    pool.install(|| match command {
        Command::TaskGen => task_gen(cfg),
        Command::Decode => decode(cfg),
        Command::Entropy => entropy(cfg),
        Command::Sweep => sweep(cfg),
        Command::Metrics => metrics(cfg),
        Command::Report => report(cfg, dir),
    })
}

/// Run `command`, write its artifacts into `dir`, and write the manifest last.
pub fn run(command: Command, cfg: &ExperimentConfig, dir: &Path) -> Result<RunManifest> {
    let start = Instant::now();
    let config_text = cfg.to_toml();
    let mut artifacts = build_artifacts(command, cfg, dir)?;
    artifacts.push(("config.toml".into(), config_text.clone().into_bytes()));
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut manifest = RunManifest::new(command.name(), &config_text, cfg.master_seed);
    for (name, bytes) in &artifacts {
        write_atomic(&dir.join(name), bytes)?;
        manifest.record(name, bytes);
    }
    manifest.wall_clock_seconds = start.elapsed().as_secs_f64();
    manifest.write(dir)?;
    Ok(manifest)
}

fn task_gen(cfg: &ExperimentConfig) -> Result<Artifacts> {
    let scenario = cfg.scenario()?;
    let (truth, learner) = scenario.models()?;
    let mut samples = String::new();
    for r in 0..cfg.sweep.runs {
        let (states, _) = scenario.instance(&truth, r);
        let line: Vec<String> = states.iter().map(usize::to_string).collect();
        samples.push_str(&line.join(" "));
        samples.push('\n');
    }
    Ok(vec![
        ("task.toml".into(), cfg.task.to_config_string().into_bytes()),
        ("model.txt".into(), truth.to_matrix_text().into_bytes()),
        (
            "learner_model.txt".into(),
            learner.to_matrix_text().into_bytes(),
        ),
        ("samples.txt".into(), samples.into_bytes()),
    ])
}

fn decode(cfg: &ExperimentConfig) -> Result<Artifacts> {
    let scenario = cfg.scenario()?;
    let (truth, learner) = scenario.models()?;
    let (reference, prompt) = match &cfg.decode.prompt {
        Some(text) => (None, cfg.prompt_sequence(text)?),
        None => {
            let (states, prompt) = scenario.instance(&truth, 0);
            (Some(states), prompt)
        }
    };
    let posteriors = masked_posteriors(&learner, &prompt)?;
    let trace = diffusion_decode(&learner, &prompt, &scenario.decode)?;
    let mut text = format!("prompt {prompt}\n");
    let decoded: Vec<String> = trace.final_sequence.iter().map(usize::to_string).collect();
    text.push_str(&format!("decoded {}\n", decoded.join(" ")));
    if let Some(states) = reference {
        let line: Vec<String> = states.iter().map(usize::to_string).collect();
        text.push_str(&format!("truth {}\n", line.join(" ")));
    }
    let mut out = vec![
        ("decoded.txt".into(), text.into_bytes()),
        ("trace.jsonl".into(), csv_bytes(|w| trace.write_jsonl(w))),
    ];
    if cfg.output.wants("csv") {
        out.push(("trace.csv".into(), csv_bytes(|w| trace.write_csv(w))));
        out.push((
            "posteriors.csv".into(),
            csv_bytes(|w| posteriors.write_csv(w)),
        ));
    }
    Ok(out)
}

/// One row of the entropy table.
#[derive(Debug, Clone, PartialEq)]
pub struct EntropyRow {
    pub kind: String,
    pub m: usize,
    pub a_or_w: Option<usize>,
    pub eta: f64,
    pub k: usize,
    pub epsilon: usize,
    pub value: f64,
}

/// Mean skip entropy of both tasks in the pair and their gap, for
/// `k = 2..=entropy.k`.
pub fn entropy_rows(cfg: &ExperimentConfig) -> Result<Vec<EntropyRow>> {
    let e = &cfg.entropy;
    let length = cfg.task.length.max(e.k);
    let specs: Vec<_> = e
        .pair
        .iter()
        .map(|&kind| cfg.task.with_kind(kind).with_length(length))
        .collect();
    let models = specs
        .iter()
        .map(|s| s.build())
        .collect::<Result<Vec<_>>>()?;
    let mut rows = Vec::new();
    for k in 2..=e.k {
        let values = models
            .iter()
            .map(|m| mean_skip_entropy(m, k, e.radius, e.mesh))
            .collect::<Result<Vec<_>>>()?;
        for (spec, &value) in specs.iter().zip(&values) {
            rows.push(EntropyRow {
                kind: spec.kind.to_string(),
                m: spec.m,
                a_or_w: Some(match spec.kind {
                    TaskKind::Serial => spec.a,
                    TaskKind::Parallel => spec.w,
                }),
                eta: spec.eta,
                k,
                epsilon: e.radius,
                value,
            });
        }
        rows.push(EntropyRow {
            kind: "gap".into(),
            m: cfg.task.m,
            a_or_w: None,
            eta: cfg.task.eta,
            k,
            epsilon: e.radius,
            value: values[0] - values[1],
        });
    }
    Ok(rows)
}

pub fn write_entropy_csv(rows: &[EntropyRow], mut w: impl std::io::Write) -> std::io::Result<()> {
    writeln!(w, "kind,m,a_or_w,eta,k,epsilon,value")?;
    for r in rows {
        let aw = r.a_or_w.map(|x| x.to_string()).unwrap_or_default();
        writeln!(
            w,
            "{},{},{aw},{},{},{},{:.12}",
            r.kind, r.m, r.eta, r.k, r.epsilon, r.value
        )?;
    }
    Ok(())
}

fn entropy(cfg: &ExperimentConfig) -> Result<Artifacts> {
    let rows = entropy_rows(cfg)?;
    let mut out = vec![(
        "entropy.csv".into(),
        csv_bytes(|w| write_entropy_csv(&rows, w)),
    )];
    if cfg.output.plot {
        let mut series: Vec<Series> = Vec::new();
        for r in &rows {
            let label = if r.kind == "gap" {
                "gap".to_string()
            } else {
                format!("{} skip entropy", r.kind)
            };
            match series.iter_mut().find(|s| s.label == label) {
                Some(s) => s.points.push((r.k as f64, r.value)),
                None => series.push(Series {
                    label,
                    points: vec![(r.k as f64, r.value)],
                }),
            }
        }
        let chart = Chart {
            title: "skip-conditional entropy".into(),
            x_label: "skip distance k (steps)".into(),
            y_label: "entropy (bits)".into(),
            log_x: false,
            series,
        };
        out.push(("entropy.svg".into(), render_svg(&chart)?.into_bytes()));
    }
    Ok(out)
}

/// Run the sweep selected by `sweep.axis`.
pub fn scaling_report(cfg: &ExperimentConfig) -> Result<ScalingReport> {
    let scenario = cfg.scenario()?;
    let s = &cfg.sweep;
    match s.axis {
        Axis::Diffusion => sweep_diffusion(&scenario, &s.grid, s.runs),
        Axis::Parallel => sweep_parallel(&scenario, s.prompts, s.k_max, &s.temperatures, s.samples),
        Axis::Sequential => sweep_sequential(&scenario, &s.grid, s.depth, s.runs, s.plateau_delta),
    }
}

fn report_artifacts(cfg: &ExperimentConfig, report: &ScalingReport) -> Result<Artifacts> {
    let mut out: Artifacts = Vec::new();
    if cfg.output.wants("json") {
        out.push((
            "report.json".into(),
            format!("{}\n", report.to_json()).into_bytes(),
        ));
    }
    if cfg.output.wants("csv") {
        out.push(("report.csv".into(), csv_bytes(|w| report.write_csv(w))));
    }
    if cfg.output.plot {
        out.push((
            "report.svg".into(),
            emit_plot(report, PlotStyle::Accuracy)?.into_bytes(),
        ));
    }
    Ok(out)
}

fn sweep(cfg: &ExperimentConfig) -> Result<Artifacts> {
    report_artifacts(cfg, &scaling_report(cfg)?)
}

fn read_text(path: &str) -> Result<String> {
    std::fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

fn metrics(cfg: &ExperimentConfig) -> Result<Artifacts> {
    let m = &cfg.metrics;
    let hyp = m
        .hypotheses
        .as_deref()
        .ok_or_else(|| Error::Config("metrics.hypotheses is not set".into()))?;
    let load = |p: &Option<String>| -> Result<Vec<StepChain>> {
        match p {
            Some(p) => StepChain::parse_many(&read_text(p)?),
            None => Ok(Vec::new()),
        }
    };
    let hypotheses = StepChain::parse_many(&read_text(hyp)?)?;
    let emb = Embedder::new(m.embedding_dimension, m.embedding_seed)?;
    let rows = score_chains(&hypotheses, &load(&m.sources)?, &load(&m.references)?, &emb)?;
    Ok(vec![(
        "metrics.csv".into(),
        csv_bytes(|w| write_metric_csv(&rows, w)),
    )])
}

fn report(cfg: &ExperimentConfig, dir: &Path) -> Result<Artifacts> {
    let input = match &cfg.output.input {
        Some(p) => PathBuf::from(p),
        None => dir.join("report.json"),
    };
    let text = std::fs::read_to_string(&input).map_err(|e| Error::io(&input, e))?;
    let report = ScalingReport::from_json(&text)?;
    let mut out: Artifacts = Vec::new();
    if cfg.output.wants("csv") {
        out.push(("report.csv".into(), csv_bytes(|w| report.write_csv(w))));
    }
    out.push((
        "report.svg".into(),
        emit_plot(&report, PlotStyle::Accuracy)?.into_bytes(),
    ));
    out.push((
        "steps.svg".into(),
        emit_plot(&report, PlotStyle::Steps)?.into_bytes(),
    ));
    Ok(out)
}
