//! Closed-loop simulation: scenarios, surrounding traffic, baseline
//! controllers, metrics and Monte Carlo suites.

mod controller;
mod metrics;
mod monte_carlo;
mod replay;
mod runner;
mod scenario;
mod traffic;

pub use controller::{
    cbf_filter, CbfParams, ControlOutput, Controller, ControllerKind, FilterStatus,
};
pub use metrics::{
    collision_events, compute_metrics, detect_collision, CollisionEvent, Metrics,
    COLLISION_THRESHOLD, LANE_CHANGE_TOLERANCE,
};
pub use monte_carlo::{monte_carlo, ControllerSummary, RunResult, Stats};
pub use replay::{read_tracks, ReplayTrack};
pub use runner::{run_scenario, SimConfig, SimulationLog, StepRecord};
pub use scenario::{
    highway, overtake, preset, scenario1, scenario2, uncertainty, LaneGeometry, ReferenceGenerator,
    ReferenceSpec, Scenario, PRESETS,
};
pub use traffic::{propagate_obstacles, Traffic, UncertaintyModel};
