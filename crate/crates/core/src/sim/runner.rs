use serde::{Deserialize, Serialize};

use crate::dynamics::{step, ControlInput, VehicleState};
use crate::error::Result;
use crate::mpc::{Diagnostics, PlannerConfig};

use super::controller::{CbfParams, Controller, ControllerKind, FilterStatus};
use super::scenario::{ReferenceGenerator, Scenario};
use super::traffic::{Traffic, UncertaintyModel};

/// Everything a closed-loop run needs besides the scenario.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SimConfig {
    pub planner: PlannerConfig,
    pub cbf: CbfParams,
    /// Acceleration noise on the surrounding vehicles; none when unset.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub uncertainty: Option<UncertaintyModel>,
}

impl SimConfig {
    pub fn validate(&self) -> Result<()> {
        self.planner.validate()?;
        self.cbf.validate()?;
        if let Some(u) = &self.uncertainty {
            u.validate()?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub t: f64,
    pub state: VehicleState,
    pub control: ControlInput,
    /// Planner output before any safety filter.
    pub nominal: ControlInput,
    pub filter: FilterStatus,
    /// Obstacle positions at `t`, in scenario order.
    pub obstacles: Vec<[f64; 2]>,
    pub diagnostics: Diagnostics,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimulationLog {
    pub scenario: String,
    pub controller: ControllerKind,
    pub seed: u64,
    pub dt: f64,
    pub obstacle_ids: Vec<u32>,
    /// Target lane centre when the reference is a lane change.
    pub target_y: Option<f64>,
    pub records: Vec<StepRecord>,
    /// Set when the run stopped early on a solver error.
    pub failure: Option<String>,
}

impl SimulationLog {
    pub fn is_valid(&self) -> bool {
        self.failure.is_none()
    }

    /// Per-tick minimum distance over all obstacles (infinite with none).
    pub fn min_distances(&self) -> Vec<f64> {
        self.records
            .iter()
            .map(|r| {
                r.diagnostics
                    .distances
                    .iter()
                    .copied()
                    .fold(f64::INFINITY, f64::min)
            })
            .collect()
    }
}

/// Runs the closed loop for the scenario's duration. The seed drives the
/// traffic noise only; without noise every seed gives the same log.
pub fn run_scenario(
    scenario: &Scenario,
    controller: ControllerKind,
    seed: u64,
    config: &SimConfig,
) -> Result<SimulationLog> {
    scenario.validate()?;
    config.validate()?;
    let mut planner_cfg = config.planner.clone();
    planner_cfg.dt = scenario.dt;
    let (lo, hi) = scenario.lanes.ego_band();
    planner_cfg.bounds = planner_cfg.bounds.with_band(lo, hi);
    let mut ctrl = Controller::new(
        controller,
        &planner_cfg,
        config.cbf.clone(),
        scenario.lanes.centers.clone(),
    )?;
    let model = ctrl.planner().model().clone();
    let horizon = planner_cfg.horizon;
    let mut reference =
        ReferenceGenerator::new(scenario.reference.clone(), scenario.lanes.clone())?;
    let mut traffic = Traffic::new(
        &scenario.obstacles,
        &scenario.replay,
        scenario.dt,
        config.uncertainty,
        seed,
    );
    let target_y = scenario
        .reference
        .target_lane()
        .map(|l| scenario.lanes.centers[l]);

    let steps = scenario.steps();
    let mut log = SimulationLog {
        scenario: scenario.name.clone(),
        controller,
        seed,
        dt: scenario.dt,
        obstacle_ids: scenario.obstacle_ids(),
        target_y,
        records: Vec::with_capacity(steps),
        failure: None,
    };
    let mut s = scenario.ego;
    for k in 0..steps {
        let t = k as f64 * scenario.dt;
        let obstacles = traffic.current();
        let r = reference.reference(t, &s, &obstacles, horizon, scenario.dt);
        let out = match ctrl.step(&s, &obstacles, &r) {
            Ok(out) => out,
            Err(e) => {
                log.failure = Some(format!("t = {t}: {e}"));
                break;
            }
        };
        log.records.push(StepRecord {
            t,
            state: s,
            control: out.applied,
            nominal: out.nominal,
            filter: out.filter,
            obstacles: obstacles
                .iter()
                .map(|o| [o.position[0], o.position[1]])
                .collect(),
            diagnostics: out.diagnostics,
        });
        s = step(s, out.applied, &model)?.clamp_speed();
        traffic.advance();
    }
    Ok(log)
}
