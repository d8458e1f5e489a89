//! The three scaling axes: parallel samples, diffusion steps, and
//! sequential length.

use std::collections::BTreeMap;
use std::io::Write;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::passk::pass_at_k;
use super::stats::{plateau_point, sign_test_p_value};
use super::{answers_match, run_batch, RunRecord, Scenario};
use crate::decoder::diffusion_decode;
use crate::error::{Error, Result};
use crate::posterior::MaskedSequence;
use crate::seed;
use crate::task::sample_trajectory;

const TAG_SAMPLE: u64 = 3;
const TAG_SEQUENTIAL: u64 = 4;

/// Significance level for the paired over-diffusion test.
pub const OVER_DIFFUSION_ALPHA: f64 = 0.01;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Axis {
    Parallel,
    Diffusion,
    Sequential,
}

impl std::fmt::Display for Axis {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Axis::Parallel => "parallel",
            Axis::Diffusion => "diffusion",
            Axis::Sequential => "sequential",
        })
    }
}

/// Paired comparison of the last grid point against the peak.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OverDiffusion {
    pub peak_index: usize,
    /// Runs correct at the peak but wrong at the last point.
    pub peak_only: usize,
    /// Runs wrong at the peak but correct at the last point.
    pub last_only: usize,
    pub p_value: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PassAtKTable {
    pub temperatures: Vec<f64>,
    pub ks: Vec<usize>,
    /// `curves[t][i]`: mean over prompts of pass@`ks[i]` at temperature `t`.
    pub curves: Vec<Vec<f64>>,
    /// Mean of each curve over `ks`.
    pub areas: Vec<f64>,
    pub best_temperature: f64,
    pub prompts: usize,
    pub samples: usize,
    /// `correct[t][p]`: correct samples for prompt `p` at temperature `t`.
    pub correct: Vec<Vec<usize>>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ReportFlags {
    pub over_diffusion_detected: bool,
    pub plateau_point: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScalingReport {
    pub axis: Axis,
    pub master_seed: u64,
    pub grid: Vec<usize>,
    pub accuracy: Vec<f64>,
    pub correct: Vec<usize>,
    pub runs: Vec<usize>,
    pub mean_steps: Vec<f64>,
    pub mean_output_length: Vec<f64>,
    pub pass_at_k: Option<PassAtKTable>,
    pub over_diffusion: Option<OverDiffusion>,
    pub flags: ReportFlags,
    #[serde(skip)]
    pub records: Vec<Vec<RunRecord>>,
}

impl ScalingReport {
    fn from_records(
        axis: Axis,
        master_seed: u64,
        grid: &[usize],
        records: Vec<Vec<RunRecord>>,
    ) -> Self {
        let mean = |rs: &[RunRecord], f: fn(&RunRecord) -> usize| {
            rs.iter().map(f).sum::<usize>() as f64 / rs.len() as f64
        };
        let correct: Vec<usize> = records
            .iter()
            .map(|rs| rs.iter().filter(|r| r.correct).count())
            .collect();
        let runs: Vec<usize> = records.iter().map(Vec::len).collect();
        ScalingReport {
            axis,
            master_seed,
            grid: grid.to_vec(),
            accuracy: correct
                .iter()
                .zip(&runs)
                .map(|(&c, &n)| c as f64 / n as f64)
                .collect(),
            correct,
            runs,
            mean_steps: records
                .iter()
                .map(|rs| mean(rs, |r| r.steps_executed))
                .collect(),
            mean_output_length: records
                .iter()
                .map(|rs| mean(rs, |r| r.output_length))
                .collect(),
            pass_at_k: None,
            over_diffusion: None,
            flags: ReportFlags::default(),
            records,
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report always serializes")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::Parse(e.to_string()))
    }

    /// CSV with one row per grid point and series.
    pub fn write_csv(&self, mut w: impl Write) -> std::io::Result<()> {
        writeln!(
            w,
            "axis,series,grid,accuracy,correct,runs,mean_steps,mean_output_length"
        )?;
        for i in 0..self.grid.len() {
            writeln!(
                w,
                "{},accuracy,{},{:.12},{},{},{:.6},{:.6}",
                self.axis,
                self.grid[i],
                self.accuracy[i],
                self.correct[i],
                self.runs[i],
                self.mean_steps[i],
                self.mean_output_length[i]
            )?;
        }
        if let Some(table) = &self.pass_at_k {
            for (t, curve) in table.temperatures.iter().zip(&table.curves) {
                for (k, v) in table.ks.iter().zip(curve) {
                    writeln!(w, "{},pass@k t={t},{k},{v:.12},,,,", self.axis)?;
                }
            }
        }
        Ok(())
    }
}

fn check_grid(grid: &[usize]) -> Result<()> {
    if grid.is_empty() {
        return Err(Error::Config("empty grid".into()));
    }
    if grid.windows(2).any(|w| w[0] >= w[1]) {
        return Err(Error::Config("grid must be strictly ascending".into()));
    }
    Ok(())
}

fn check_runs(runs: usize) -> Result<()> {
    if runs == 0 {
        return Err(Error::Config("runs must be positive".into()));
    }
    Ok(())
}

/// Paired test of the last grid point against the best one.
fn detect_over_diffusion(report: &ScalingReport) -> Option<OverDiffusion> {
    let last = report.grid.len().checked_sub(1)?;
    let peak = (0..=last).fold(0, |b, i| {
        if report.accuracy[i] > report.accuracy[b] {
            i
        } else {
            b
        }
    });
    if peak == last {
        return None;
    }
    let (at_peak, at_last) = (&report.records[peak], &report.records[last]);
    let peak_only = at_peak
        .iter()
        .zip(at_last)
        .filter(|(a, b)| a.correct && !b.correct)
        .count();
    let last_only = at_peak
        .iter()
        .zip(at_last)
        .filter(|(a, b)| !a.correct && b.correct)
        .count();
    Some(OverDiffusion {
        peak_index: peak,
        peak_only,
        last_only,
        p_value: sign_test_p_value(peak_only, last_only),
    })
}

/// Decode the same prompts at every step count in `grid`.
pub fn sweep_diffusion(scenario: &Scenario, grid: &[usize], runs: usize) -> Result<ScalingReport> {
    check_grid(grid)?;
    check_runs(runs)?;
    let records = grid
        .iter()
        .enumerate()
        .map(|(i, &steps)| {
            let mut decode = scenario.decode.clone();
            decode.total_steps = steps;
            run_batch(&scenario.with_decode(decode), i, steps, runs)
        })
        .collect::<Result<Vec<_>>>()?;
    let mut report =
        ScalingReport::from_records(Axis::Diffusion, scenario.master_seed, grid, records);
    report.over_diffusion = detect_over_diffusion(&report);
    report.flags.over_diffusion_detected = report
        .over_diffusion
        .as_ref()
        .is_some_and(|o| o.p_value < OVER_DIFFUSION_ALPHA);
    Ok(report)
}

/// `samples` decodes per prompt per temperature, summarised as pass@k for
/// `k = 1..=k_max`.
pub fn sweep_parallel(
    scenario: &Scenario,
    prompts: usize,
    k_max: usize,
    temperatures: &[f64],
    samples: usize,
) -> Result<ScalingReport> {
    check_runs(prompts)?;
    if k_max == 0 || k_max > samples {
        return Err(Error::Config(format!(
            "k_max = {k_max} must lie in [1, samples = {samples}]"
        )));
    }
    if temperatures.is_empty() {
        return Err(Error::Config("empty temperature grid".into()));
    }
    let (truth_model, learner) = scenario.models()?;
    let answers = scenario.task.answer_positions();
    let instances: Vec<_> = (0..prompts)
        .map(|p| scenario.instance(&truth_model, p))
        .collect();

    let mut correct = Vec::with_capacity(temperatures.len());
    let mut steps_total = 0usize;
    for (ti, &t) in temperatures.iter().enumerate() {
        let mut cfg = scenario.decode.clone();
        cfg.temperature = t;
        let outcomes: Vec<(bool, usize)> = (0..prompts * samples)
            .into_par_iter()
            .map(|idx| {
                let (p, j) = (idx / samples, idx % samples);
                let (truth, prompt) = &instances[p];
                let mut cfg = cfg.clone();
                cfg.seed = seed::derive(
                    scenario.master_seed,
                    &[TAG_SAMPLE, ti as u64, p as u64, j as u64],
                );
                let trace = diffusion_decode(&learner, prompt, &cfg)?;
                Ok((
                    answers_match(truth, &trace.final_sequence, &answers),
                    trace.steps_executed,
                ))
            })
            .collect::<Result<_>>()?;
        steps_total += outcomes.iter().map(|o| o.1).sum::<usize>();
        correct.push(
            outcomes
                .chunks(samples)
                .map(|c| c.iter().filter(|o| o.0).count())
                .collect::<Vec<_>>(),
        );
    }

    let ks: Vec<usize> = (1..=k_max).collect();
    let curves: Vec<Vec<f64>> = correct
        .iter()
        .map(|per_prompt| {
            ks.iter()
                .map(|&k| {
                    per_prompt
                        .iter()
                        .map(|&c| pass_at_k(samples as u64, c as u64, k as u64))
                        .sum::<Result<f64>>()
                        .map(|s| s / prompts as f64)
                })
                .collect::<Result<Vec<_>>>()
        })
        .collect::<Result<_>>()?;
    let areas: Vec<f64> = curves
        .iter()
        .map(|c| c.iter().sum::<f64>() / c.len() as f64)
        .collect();
    let best = (0..areas.len()).fold(0, |b, i| if areas[i] > areas[b] { i } else { b });
    let pooled: usize = correct[best].iter().sum();
    let n = prompts * samples;
    let mean_steps = steps_total as f64 / (n * temperatures.len()) as f64;
    let masked = (scenario.task.length - scenario.prompt_length) as f64;

    Ok(ScalingReport {
        axis: Axis::Parallel,
        master_seed: scenario.master_seed,
        grid: ks.clone(),
        accuracy: curves[best].clone(),
        correct: vec![pooled; ks.len()],
        runs: vec![n; ks.len()],
        mean_steps: vec![mean_steps; ks.len()],
        mean_output_length: vec![masked; ks.len()],
        pass_at_k: Some(PassAtKTable {
            temperatures: temperatures.to_vec(),
            ks,
            curves,
            areas,
            best_temperature: temperatures[best],
            prompts,
            samples,
            correct,
        }),
        over_diffusion: None,
        flags: ReportFlags::default(),
        records: Vec::new(),
    })
}

/// Vary the generation length with steps matched to it. The answer is the
/// state `depth` transitions after the prompt; when the canvas is too short
/// to reach it, the last generated token stands in as the answer.
pub fn sweep_sequential(
    scenario: &Scenario,
    lengths: &[usize],
    depth: usize,
    runs: usize,
    delta: f64,
) -> Result<ScalingReport> {
    check_grid(lengths)?;
    check_runs(runs)?;
    if lengths[0] < 2 {
        return Err(Error::Config("lengths must be at least 2".into()));
    }
    if scenario.prompt_length != 1 {
        return Err(Error::Config(
            "the sequential sweep prompts with the first state only".into(),
        ));
    }
    let horizon = (*lengths.last().unwrap()).max(depth + 1);
    let truth_model = scenario.task.with_length(horizon).build()?;
    let truths: Vec<Vec<usize>> = (0..runs)
        .map(|r| sample_trajectory(&truth_model, scenario.instance_seed(r)).states)
        .collect();

    let records = lengths
        .iter()
        .enumerate()
        .map(|(i, &len)| {
            let learner = scenario
                .learner
                .apply(&scenario.task.with_length(len).build()?)?;
            let mut cfg = scenario.decode.clone();
            cfg.total_steps = len - 1;
            cfg.block_length = len;
            let answer = depth.min(len - 1);
            (0..runs)
                .into_par_iter()
                .map(|r| {
                    let truth = &truths[r];
                    let prompt = MaskedSequence::from_prefix(&truth[..len], 1);
                    let mut cfg = cfg.clone();
                    cfg.seed =
                        seed::derive(scenario.master_seed, &[TAG_SEQUENTIAL, i as u64, r as u64]);
                    let trace = diffusion_decode(&learner, &prompt, &cfg)?;
                    Ok(RunRecord {
                        task_id: r,
                        grid_value: len,
                        seed: cfg.seed,
                        correct: trace.final_sequence[answer] == truth[depth],
                        steps_executed: trace.steps_executed,
                        output_length: len - 1,
                        early_stopped: trace.early_stopped,
                        commit_order: trace.commit_order(),
                    })
                })
                .collect::<Result<Vec<_>>>()
        })
        .collect::<Result<Vec<_>>>()?;
    let mut report =
        ScalingReport::from_records(Axis::Sequential, scenario.master_seed, lengths, records);
    report.flags.plateau_point = plateau_point(&report.grid, &report.accuracy, delta);
    Ok(report)
}

/// Accuracy at answering the state `d` transitions after the prompt, for
/// each `d` in `depths`, decoding `d` positions in `d` steps.
pub fn depth_sweep(
    scenario: &Scenario,
    depths: &[usize],
    runs: usize,
) -> Result<BTreeMap<usize, f64>> {
    check_grid(depths)?;
    check_runs(runs)?;
    if depths[0] == 0 {
        return Err(Error::Config("depths must be positive".into()));
    }
    depths
        .iter()
        .enumerate()
        .map(|(i, &d)| {
            let mut task = scenario.task.with_length(d + 1);
            task.answer_positions = vec![d];
            let mut decode = scenario.decode.clone();
            decode.total_steps = d;
            decode.block_length = d + 1;
            let mut sc = scenario.with_task(task).with_decode(decode);
            sc.prompt_length = 1;
            let records = run_batch(&sc, i, d, runs)?;
            Ok((
                d,
                records.iter().filter(|r| r.correct).count() as f64 / runs as f64,
            ))
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::decoder::DecodeConfig;
    use crate::harness::Learner;
    use crate::task::TaskSpec;

    fn scenario(task: TaskSpec) -> Scenario {
        let len = task.length;
        Scenario::new(task, Learner::exact(), DecodeConfig::new(len - 1, len), 5)
    }

    #[test]
    fn noiseless_serial_is_always_solved() {
        let sc = scenario(TaskSpec::serial(16, 3, 1, 0.0, 8));
        let rep = sweep_diffusion(&sc, &[1, 2, 4, 7], 30).unwrap();
        assert_eq!(rep.accuracy, vec![1.0; 4]);
        assert!(!rep.flags.over_diffusion_detected);
        assert!(sweep_diffusion(&sc, &[], 30).is_err());
        assert!(sweep_diffusion(&sc, &[2, 1], 30).is_err());
    }

    #[test]
    fn extra_steps_are_inert_for_commit_only_greedy() {
        let sc = scenario(TaskSpec::serial(16, 3, 1, 0.2, 8));
        let rep = sweep_diffusion(&sc, &[7, 14, 28], 40).unwrap();
        assert_eq!(rep.mean_steps, vec![7.0; 3]);
        assert_eq!(rep.correct[0], rep.correct[1]);
        assert_eq!(rep.correct[1], rep.correct[2]);
        assert!(!rep.flags.over_diffusion_detected);
    }

    #[test]
    fn parallel_sweep_saturates_when_everything_is_right() {
        let sc = scenario(TaskSpec::parallel(16, 4, 0, 0.0, 6));
        let rep = sweep_parallel(&sc, 3, 4, &[0.5, 1.0], 6).unwrap();
        assert_eq!(rep.accuracy, vec![1.0; 4]);
        assert!(sweep_parallel(&sc, 3, 7, &[0.5], 6).is_err());
    }

    #[test]
    fn parallel_bucket_task_is_flat_in_length() {
        let sc = scenario(TaskSpec::parallel(32, 8, 0, 0.0, 8));
        let rep = sweep_sequential(&sc, &[2, 4, 8, 12], 6, 40, 0.02).unwrap();
        assert_eq!(rep.accuracy, vec![1.0; 4]);
        assert_eq!(rep.flags.plateau_point, Some(2));
    }

    #[test]
    fn report_json_round_trips() {
        let sc = scenario(TaskSpec::serial(16, 3, 1, 0.2, 8));
        let rep = sweep_diffusion(&sc, &[2, 7], 10).unwrap();
        let back = ScalingReport::from_json(&rep.to_json()).unwrap();
        assert_eq!(back.accuracy, rep.accuracy);
        assert_eq!(back.grid, rep.grid);
    }
}
