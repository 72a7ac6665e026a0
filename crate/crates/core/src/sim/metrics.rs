use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};
use crate::flops;

use super::controller::FilterStatus;
use super::runner::SimulationLog;

/// Centre distance below which two vehicles count as colliding (m).
pub const COLLISION_THRESHOLD: f64 = 2.0;

/// Lateral distance to the target lane centre that counts as a completed lane change (m).
pub const LANE_CHANGE_TOLERANCE: f64 = 0.2;

/// A contiguous run of ticks with some obstacle closer than the threshold.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CollisionEvent {
    pub start: f64,
    pub end: f64,
    pub min_distance: f64,
}

/// One event per maximal interval where the minimum distance is below `threshold`.
pub fn detect_collision(log: &SimulationLog, threshold: f64) -> Result<Vec<CollisionEvent>> {
    if !(threshold > 0.0) {
        return Err(invalid("threshold", "must be positive"));
    }
    let times: Vec<f64> = log.records.iter().map(|r| r.t).collect();
    Ok(collision_events(&times, &log.min_distances(), threshold))
}

pub fn collision_events(times: &[f64], distances: &[f64], threshold: f64) -> Vec<CollisionEvent> {
    let mut events = Vec::new();
    let mut open: Option<CollisionEvent> = None;
    for (&t, &d) in times.iter().zip(distances) {
        if d < threshold {
            match open.as_mut() {
                Some(e) => {
                    e.end = t;
                    e.min_distance = e.min_distance.min(d);
                }
                None => {
                    open = Some(CollisionEvent {
                        start: t,
                        end: t,
                        min_distance: d,
                    })
                }
            }
        } else if let Some(e) = open.take() {
            events.push(e);
        }
    }
    events.extend(open);
    events
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub collision_count: usize,
    /// Smallest centre distance to any obstacle; absent without obstacles.
    pub min_distance: Option<f64>,
    pub avg_speed: f64,
    /// `max_k ‖u_k − u_{k−1}‖` over the applied controls.
    pub max_control_change: f64,
    /// First time within tolerance of the target lane, for lane-change references.
    pub lane_change_time: Option<f64>,
    pub steps: usize,
    pub flops_total: u64,
    /// Mean counted operations per control tick.
    pub flops_per_step: f64,
    pub flops_peak_step: u64,
    pub interactions_total: u64,
    /// Operations of one field interaction; constant by construction.
    pub flops_per_interaction: f64,
    pub solver_iterations: usize,
    pub filter_corrections: usize,
    pub filter_infeasible: usize,
    pub valid: bool,
}

pub fn compute_metrics(log: &SimulationLog) -> Result<Metrics> {
    if log.records.is_empty() {
        return Err(invalid("log", "no records"));
    }
    let n = log.records.len();
    let dists = log.min_distances();
    let min_distance = dists.iter().copied().fold(f64::INFINITY, f64::min);
    let times: Vec<f64> = log.records.iter().map(|r| r.t).collect();
    let collision_count = collision_events(&times, &dists, COLLISION_THRESHOLD).len();
    let avg_speed = log.records.iter().map(|r| r.state.v).sum::<f64>() / n as f64;
    let max_control_change = log
        .records
        .windows(2)
        .map(|w| {
            let (a, b) = (w[0].control, w[1].control);
            ((b.a - a.a).powi(2) + (b.v_y - a.v_y).powi(2)).sqrt()
        })
        .fold(0.0, f64::max);
    let lane_change_time = log.target_y.and_then(|y| {
        log.records
            .iter()
            .find(|r| (r.state.y - y).abs() <= LANE_CHANGE_TOLERANCE)
            .map(|r| r.t)
    });
    let flops_total: u64 = log.records.iter().map(|r| r.diagnostics.flops.flops).sum();
    let interactions_total: u64 = log
        .records
        .iter()
        .map(|r| r.diagnostics.flops.interactions)
        .sum();
    Ok(Metrics {
        collision_count,
        min_distance: min_distance.is_finite().then_some(min_distance),
        avg_speed,
        max_control_change,
        lane_change_time,
        steps: n,
        flops_total,
        flops_per_step: flops_total as f64 / n as f64,
        flops_peak_step: log
            .records
            .iter()
            .map(|r| r.diagnostics.flops.flops)
            .max()
            .unwrap_or(0),
        interactions_total,
        flops_per_interaction: if interactions_total == 0 {
            0.0
        } else {
            flops::INTERACTION as f64
        },
        solver_iterations: log.records.iter().map(|r| r.diagnostics.iterations).sum(),
        filter_corrections: log
            .records
            .iter()
            .filter(|r| r.filter == FilterStatus::Corrected)
            .count(),
        filter_infeasible: log
            .records
            .iter()
            .filter(|r| r.filter == FilterStatus::Infeasible)
            .count(),
        valid: log.is_valid(),
    })
}
