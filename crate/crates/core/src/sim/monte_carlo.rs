use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};

use super::controller::ControllerKind;
use super::metrics::{compute_metrics, Metrics};
use super::runner::{run_scenario, SimConfig};
use super::scenario::Scenario;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunResult {
    pub seed: u64,
    pub metrics: Metrics,
    pub failure: Option<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Stats {
    pub mean: f64,
    pub min: f64,
    pub max: f64,
}

impl Stats {
    fn of(values: impl Iterator<Item = f64>) -> Option<Self> {
        let v: Vec<f64> = values.collect();
        if v.is_empty() {
            return None;
        }
        Some(Self {
            mean: v.iter().sum::<f64>() / v.len() as f64,
            min: v.iter().copied().fold(f64::INFINITY, f64::min),
            max: v.iter().copied().fold(f64::NEG_INFINITY, f64::max),
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ControllerSummary {
    pub controller: ControllerKind,
    pub runs: Vec<RunResult>,
    /// Seeds whose run stopped on a solver error; excluded from the statistics.
    pub invalid_seeds: Vec<u64>,
    pub collisions: Option<Stats>,
    pub avg_speed: Option<Stats>,
    pub min_distance: Option<Stats>,
}

/// `n_runs` seeded runs per controller (seeds `base_seed..base_seed + n_runs`),
/// executed in parallel. Results do not depend on scheduling.
pub fn monte_carlo(
    scenario: &Scenario,
    controllers: &[ControllerKind],
    n_runs: usize,
    base_seed: u64,
    config: &SimConfig,
) -> Result<Vec<ControllerSummary>> {
    if n_runs == 0 {
        return Err(invalid("runs", "must be at least 1"));
    }
    scenario.validate()?;
    config.validate()?;
    let jobs: Vec<(ControllerKind, u64)> = controllers
        .iter()
        .flat_map(|&c| (0..n_runs as u64).map(move |i| (c, base_seed + i)))
        .collect();
    let results: Vec<(ControllerKind, RunResult)> = jobs
        .par_iter()
        .map(|&(c, seed)| {
            let log = run_scenario(scenario, c, seed, config)?;
            let metrics = compute_metrics(&log)?;
            Ok((
                c,
                RunResult {
                    seed,
                    metrics,
                    failure: log.failure,
                },
            ))
        })
        .collect::<Result<_>>()?;

    Ok(controllers
        .iter()
        .map(|&c| {
            let runs: Vec<RunResult> = results
                .iter()
                .filter(|(k, _)| *k == c)
                .map(|(_, r)| r.clone())
                .collect();
            let valid = || runs.iter().filter(|r| r.failure.is_none());
            ControllerSummary {
                controller: c,
                invalid_seeds: runs
                    .iter()
                    .filter(|r| r.failure.is_some())
                    .map(|r| r.seed)
                    .collect(),
                collisions: Stats::of(valid().map(|r| r.metrics.collision_count as f64)),
                avg_speed: Stats::of(valid().map(|r| r.metrics.avg_speed)),
                min_distance: Stats::of(valid().filter_map(|r| r.metrics.min_distance)),
                runs,
            }
        })
        .collect())
}
