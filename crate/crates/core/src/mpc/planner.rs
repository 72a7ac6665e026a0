use std::collections::BTreeMap;

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use crate::dynamics::{
    build_prediction_matrices, ControlInput, LinearModel, PredictionMatrices, ReferenceTrajectory,
    VehicleState, DEFAULT_DT, DEFAULT_HORIZON, INPUT_DIM,
};
use crate::error::{invalid, Error, Result};
use crate::flops::{self, FlopCounter, FlopSnapshot};
use crate::risk_ellipse::{risk_metric, time_to_collision, EllipseParams, RiskEllipse};
use crate::risk_field::{
    distance, update_and_evolve, EvolutionMode, HistoryBuffer, Obstacle, RiskField,
    RiskFieldParams, RiskTerm,
};

use super::{
    build_quadratic, solve, BoxConstraints, MpcWeights, Problem, SolveOutcome, SolverConfig,
};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PlannerConfig {
    pub horizon: usize,
    pub dt: f64,
    pub weights: MpcWeights,
    pub bounds: BoxConstraints,
    pub risk: RiskFieldParams,
    pub evolution: EvolutionMode,
    pub ellipse: EllipseParams,
    /// Scale each obstacle's gain by the ellipse risk metric at the current
    /// relative position.
    pub use_ellipse: bool,
    pub solver: SolverConfig,
    /// Also start the solver from lane-directed initial guesses whenever the
    /// risk term is active at the warm-started solution.
    pub multistart: bool,
    /// Time constant (s) of the lateral approach in lane-directed starts.
    pub lane_approach_time: f64,
}

impl Default for PlannerConfig {
    fn default() -> Self {
        Self {
            horizon: DEFAULT_HORIZON,
            dt: DEFAULT_DT,
            weights: MpcWeights::default(),
            bounds: BoxConstraints::default(),
            risk: RiskFieldParams::default(),
            evolution: EvolutionMode::Sigmoid,
            ellipse: EllipseParams::default(),
            use_ellipse: true,
            solver: SolverConfig::default(),
            multistart: true,
            lane_approach_time: 1.5,
        }
    }
}

impl PlannerConfig {
    pub fn validate(&self) -> Result<()> {
        if self.horizon == 0 {
            return Err(invalid("horizon", "must be at least 1"));
        }
        if !(self.dt.is_finite() && self.dt > 0.0) {
            return Err(invalid("dt", "must be positive"));
        }
        if !(self.lane_approach_time.is_finite() && self.lane_approach_time > 0.0) {
            return Err(invalid("lane_approach_time", "must be positive"));
        }
        self.weights.validate()?;
        self.bounds.validate()?;
        self.risk.validate()?;
        self.ellipse.validate()?;
        self.solver.validate()
    }
}

/// Per-tick record of what the planner saw and did.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Diagnostics {
    /// Solver iterations summed over all starts.
    pub iterations: usize,
    pub starts: usize,
    pub cost: f64,
    pub grad_norm: f64,
    pub converged: bool,
    pub active_constraints: usize,
    /// Field value at the current state with this tick's frozen terms.
    pub risk: f64,
    /// Per obstacle, in input order.
    pub distances: Vec<f64>,
    pub etas: Vec<f64>,
    pub gains: Vec<f64>,
    pub flops: FlopSnapshot,
}

/// Distance, evolution factor and gain of one obstacle at a tick.
pub type TermInfo = (f64, f64, f64);

/// Receding-horizon controller with its own distance histories and warm start.
#[derive(Debug)]
pub struct Planner {
    config: PlannerConfig,
    model: LinearModel,
    prediction: PredictionMatrices,
    lane_centers: Vec<f64>,
    histories: BTreeMap<u32, HistoryBuffer>,
    warm: Option<DVector<f64>>,
    counter: FlopCounter,
}

impl Planner {
    pub fn new(config: PlannerConfig, lane_centers: Vec<f64>) -> Result<Self> {
        config.validate()?;
        let model = LinearModel::new(config.dt)?;
        let prediction = build_prediction_matrices(&model, config.horizon)?;
        Ok(Self {
            config,
            model,
            prediction,
            lane_centers,
            histories: BTreeMap::new(),
            warm: None,
            counter: FlopCounter::new(),
        })
    }

    pub fn config(&self) -> &PlannerConfig {
        &self.config
    }

    pub fn model(&self) -> &LinearModel {
        &self.model
    }

    pub fn prediction(&self) -> &PredictionMatrices {
        &self.prediction
    }

    pub fn flops(&self) -> FlopSnapshot {
        self.counter.snapshot()
    }

    pub fn history(&self, id: u32) -> Option<&HistoryBuffer> {
        self.histories.get(&id)
    }

    /// Updates histories with the current distances and freezes this tick's
    /// field terms. Returns the field together with `(d, η, gain)` per obstacle.
    pub fn freeze_field(
        &mut self,
        s0: &VehicleState,
        obstacles: &[Obstacle],
    ) -> Result<(RiskField, Vec<TermInfo>)> {
        let params = &self.config.risk;
        let mut terms = Vec::with_capacity(obstacles.len());
        let mut info = Vec::with_capacity(obstacles.len());
        for obs in obstacles {
            obs.validate()?;
            let d = distance(s0, &obs.position);
            let history = self
                .histories
                .entry(obs.id)
                .or_insert_with(|| HistoryBuffer::new(params.n_history));
            let (_, eta) = update_and_evolve(
                history,
                d,
                self.config.evolution,
                params,
                Some(&self.counter),
            );
            let mut gain = params.gain_for(obs);
            if self.config.use_ellipse {
                gain *= ellipse_weight(s0, obs, eta, &self.config.ellipse)?;
                self.counter.add(flops::ELLIPSE);
            }
            terms.push(RiskTerm {
                position: obs.position,
                velocity: obs.velocity,
                gain,
                eta,
            });
            info.push((d, eta, gain));
        }
        Ok((RiskField::new(terms, self.config.dt, params.clone()), info))
    }

    /// One receding-horizon step: returns the first input of the optimised sequence.
    pub fn step(
        &mut self,
        s0: &VehicleState,
        obstacles: &[Obstacle],
        reference: &ReferenceTrajectory,
    ) -> Result<(ControlInput, Diagnostics)> {
        if !s0.is_finite() {
            return Err(invalid("ego state", "must be finite"));
        }
        if reference.horizon() != self.config.horizon {
            return Err(Error::Dimension {
                expected: self.config.horizon,
                actual: reference.horizon(),
            });
        }
        let before = self.counter.snapshot();
        let (field, info) = self.freeze_field(s0, obstacles)?;
        let quadratic = build_quadratic(&self.prediction, &self.config.weights, *s0, reference)?;
        let dim = self.config.horizon * INPUT_DIM;
        let problem = Problem {
            quadratic: &quadratic,
            prediction: &self.prediction,
            s0: *s0,
            field: Some(&field),
            gamma: self.config.weights.gamma,
            bounds: &self.config.bounds,
            state_penalty: self.config.solver.state_penalty,
        };

        let warm = self
            .warm
            .take()
            .map(|u| shift(&u))
            .unwrap_or_else(|| DVector::zeros(dim));
        let mut best = solve(&problem, &self.config.solver, &warm, Some(&self.counter))?;
        let mut iterations = best.iterations;
        let mut starts = 1;
        if self.config.multistart && problem.risk_at(&best.u) > 0.0 {
            for start in self.lane_starts(s0, &warm) {
                let candidate = solve(&problem, &self.config.solver, &start, Some(&self.counter))?;
                iterations += candidate.iterations;
                starts += 1;
                if candidate.value < best.value {
                    best = candidate;
                }
            }
        }

        let risk = field.value(s0, 0);
        let SolveOutcome {
            u,
            value,
            projected_grad_norm,
            converged,
            active_constraints,
            ..
        } = best;
        let applied = ControlInput::new(u[0], u[1]);
        self.warm = Some(u);
        let diagnostics = Diagnostics {
            iterations,
            starts,
            cost: value,
            grad_norm: projected_grad_norm,
            converged,
            active_constraints,
            risk,
            distances: info.iter().map(|i| i.0).collect(),
            etas: info.iter().map(|i| i.1).collect(),
            gains: info.iter().map(|i| i.2).collect(),
            flops: self.counter.snapshot().since(before),
        };
        Ok((applied, diagnostics))
    }

    /// Initial guesses steering laterally toward each lane centre while
    /// keeping the warm start's longitudinal inputs.
    fn lane_starts(&self, s0: &VehicleState, warm: &DVector<f64>) -> Vec<DVector<f64>> {
        let b = &self.config.bounds;
        let (y_min, y_max) = b.y_range();
        let dt = self.config.dt;
        let tau = self.config.lane_approach_time;
        self.lane_centers
            .iter()
            .filter(|&&c| c >= y_min && c <= y_max)
            .map(|&c| {
                let mut u = warm.clone();
                let mut y = s0.y;
                for k in 0..self.config.horizon {
                    let vy = ((c - y) / tau).clamp(b.vy_min, b.vy_max);
                    u[k * INPUT_DIM + 1] = vy;
                    y += vy * dt;
                }
                u
            })
            .collect()
    }

    /// Drops histories and the warm start.
    pub fn reset(&mut self) {
        self.histories.clear();
        self.warm = None;
    }
}

/// Shift by one step and repeat the last input.
fn shift(u: &DVector<f64>) -> DVector<f64> {
    let n = u.len();
    let mut out = DVector::zeros(n);
    if n >= INPUT_DIM {
        out.rows_mut(0, n - INPUT_DIM)
            .copy_from(&u.rows(INPUT_DIM, n - INPUT_DIM));
        out.rows_mut(n - INPUT_DIM, INPUT_DIM)
            .copy_from(&u.rows(n - INPUT_DIM, INPUT_DIM));
    }
    out
}

/// Ellipse risk metric of the ego position with respect to a closing
/// obstacle; 1 when the obstacle is not being closed in on.
fn ellipse_weight(s0: &VehicleState, obs: &Obstacle, eta: f64, p: &EllipseParams) -> Result<f64> {
    let v_obs = obs.velocity[0];
    let Some(ttc) = time_to_collision(s0.x, obs.position[0], s0.v, v_obs) else {
        return Ok(1.0);
    };
    let e = RiskEllipse::from_kinematics(obs.position, obs.width, s0.v, v_obs, ttc, p.twh, eta, p);
    Ok(risk_metric(e.risk_factor(&s0.position())?, p.alpha_decay))
}
