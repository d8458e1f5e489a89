//! Accuracy over a (length, steps) grid and the cheapest step count that
//! stays close to the best.

use std::io::Write;

use serde::{Deserialize, Serialize};

use super::{run_batch, Scenario};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrontierReport {
    pub lengths: Vec<usize>,
    pub steps: Vec<usize>,
    /// `accuracy[l][s]`.
    pub accuracy: Vec<Vec<f64>>,
    pub masked: Vec<usize>,
    /// Per length, the smallest step count within `tolerance` of the best.
    pub minimal_steps: Vec<usize>,
    pub tolerance: f64,
    pub runs: usize,
    pub master_seed: u64,
}

impl FrontierReport {
    pub fn write_csv(&self, mut w: impl Write) -> std::io::Result<()> {
        writeln!(w, "length,steps,accuracy,masked,minimal_steps")?;
        for (li, &len) in self.lengths.iter().enumerate() {
            for (si, &s) in self.steps.iter().enumerate() {
                writeln!(
                    w,
                    "{len},{s},{:.12},{},{}",
                    self.accuracy[li][si], self.masked[li], self.minimal_steps[li]
                )?;
            }
        }
        Ok(())
    }
}

pub fn efficiency_frontier(
    scenario: &Scenario,
    steps: &[usize],
    lengths: &[usize],
    runs: usize,
    tolerance: f64,
) -> Result<FrontierReport> {
    for grid in [steps, lengths] {
        if grid.is_empty() || grid.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::Config(
                "grids must be non-empty and strictly ascending".into(),
            ));
        }
    }
    if steps[0] == 0 || runs == 0 {
        return Err(Error::Config("steps and runs must be positive".into()));
    }
    let mut accuracy = Vec::with_capacity(lengths.len());
    let mut masked = Vec::with_capacity(lengths.len());
    let mut minimal = Vec::with_capacity(lengths.len());
    for (li, &len) in lengths.iter().enumerate() {
        let sc = scenario.with_task(scenario.task.with_length(len));
        let row = steps
            .iter()
            .enumerate()
            .map(|(si, &s)| {
                let mut decode = sc.decode.clone();
                decode.total_steps = s;
                decode.block_length = len;
                let recs = run_batch(&sc.with_decode(decode), li * steps.len() + si, s, runs)?;
                Ok(recs.iter().filter(|r| r.correct).count() as f64 / runs as f64)
            })
            .collect::<Result<Vec<f64>>>()?;
        let best = row.iter().cloned().fold(0.0, f64::max);
        let first = row.iter().position(|&a| a >= best - tolerance).unwrap_or(0);
        minimal.push(steps[first]);
        masked.push(len - sc.prompt_length);
        accuracy.push(row);
    }
    Ok(FrontierReport {
        lengths: lengths.to_vec(),
        steps: steps.to_vec(),
        accuracy,
        masked,
        minimal_steps: minimal,
        tolerance,
        runs,
        master_seed: scenario.master_seed,
    })
}
