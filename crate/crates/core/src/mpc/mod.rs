//! Receding-horizon optimisation: quadratic tracking cost plus the
//! nonconvex risk field, minimised by projected gradient over box-bounded
//! controls.

mod planner;
mod quadratic;
mod solver;

use nalgebra::{Matrix2, Matrix3};
use serde::{Deserialize, Serialize};

use crate::dynamics::{ControlInput, VehicleState};
use crate::error::{invalid, Result};

pub use planner::{Diagnostics, Planner, PlannerConfig};
pub use quadratic::{build_quadratic, total_cost, tracking_cost, QuadraticForm};
pub use solver::{solve, Problem, SolveOutcome, SolverConfig};

/// Diagonal cost weights of the horizon objective.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MpcWeights {
    /// Stage state weight diagonal `(x, y, v)`.
    pub q: [f64; 3],
    /// Input weight diagonal `(a, v_y)`.
    pub r: [f64; 2],
    /// Terminal state weight diagonal.
    pub q_terminal: [f64; 3],
    /// Weight of the risk field.
    pub gamma: f64,
}

impl Default for MpcWeights {
    fn default() -> Self {
        let q = [0.1, 1.0, 1.0];
        Self {
            q,
            r: [1.0, 1.0],
            q_terminal: q.map(|w| 10.0 * w),
            gamma: 120.0,
        }
    }
}

impl MpcWeights {
    pub fn q_matrix(&self) -> Matrix3<f64> {
        Matrix3::from_diagonal(&self.q.into())
    }

    pub fn r_matrix(&self) -> Matrix2<f64> {
        Matrix2::from_diagonal(&self.r.into())
    }

    pub fn q_terminal_matrix(&self) -> Matrix3<f64> {
        Matrix3::from_diagonal(&self.q_terminal.into())
    }

    pub fn validate(&self) -> Result<()> {
        if self
            .q
            .iter()
            .chain(&self.q_terminal)
            .any(|w| !(w.is_finite() && *w >= 0.0))
        {
            return Err(invalid(
                "weights.q",
                "state weights must be finite and >= 0",
            ));
        }
        if self.r.iter().any(|w| !(w.is_finite() && *w > 0.0)) {
            return Err(invalid("weights.r", "input weights must be positive"));
        }
        if !(self.gamma.is_finite() && self.gamma >= 0.0) {
            return Err(invalid("weights.gamma", "must be >= 0"));
        }
        Ok(())
    }
}

/// Axis-aligned input box (enforced by projection) and state box (enforced
/// by a quadratic penalty on predicted states).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BoxConstraints {
    pub a_min: f64,
    pub a_max: f64,
    pub vy_min: f64,
    pub vy_max: f64,
    pub v_max: f64,
    /// Lateral band; unset edges are filled from the scenario's drivable band.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub y_min: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub y_max: Option<f64>,
}

impl Default for BoxConstraints {
    fn default() -> Self {
        Self {
            a_min: -6.0,
            a_max: 3.0,
            vy_min: -2.5,
            vy_max: 2.5,
            v_max: 50.0,
            y_min: None,
            y_max: None,
        }
    }
}

impl BoxConstraints {
    pub fn validate(&self) -> Result<()> {
        let pairs = [
            ("bounds.a", self.a_min, self.a_max),
            ("bounds.vy", self.vy_min, self.vy_max),
            ("bounds.v", 0.0, self.v_max),
            (
                "bounds.y",
                self.y_min.unwrap_or(f64::MIN),
                self.y_max.unwrap_or(f64::MAX),
            ),
        ];
        for (name, lo, hi) in pairs {
            if !(lo.is_finite() && hi.is_finite() && lo <= hi) {
                return Err(invalid(name, format!("need lo <= hi, got [{lo}, {hi}]")));
            }
        }
        Ok(())
    }

    /// Fills unset lateral edges from a drivable band.
    pub fn with_band(mut self, lo: f64, hi: f64) -> Self {
        self.y_min.get_or_insert(lo);
        self.y_max.get_or_insert(hi);
        self
    }

    pub fn y_range(&self) -> (f64, f64) {
        (
            self.y_min.unwrap_or(f64::NEG_INFINITY),
            self.y_max.unwrap_or(f64::INFINITY),
        )
    }

    pub fn clamp_input(&self, u: ControlInput) -> ControlInput {
        ControlInput::new(
            u.a.clamp(self.a_min, self.a_max),
            u.v_y.clamp(self.vy_min, self.vy_max),
        )
    }

    /// Lower/upper bound of stacked control entry `i`.
    pub fn input_bounds(&self, i: usize) -> (f64, f64) {
        if i.is_multiple_of(2) {
            (self.a_min, self.a_max)
        } else {
            (self.vy_min, self.vy_max)
        }
    }

    /// Penalty `Σ violation²` of one state and its gradient.
    pub fn state_violation(&self, s: &VehicleState) -> (f64, [f64; 3]) {
        let mut value = 0.0;
        let mut grad = [0.0; 3];
        let (y_min, y_max) = self.y_range();
        let y_excess = if s.y < y_min {
            s.y - y_min
        } else if s.y > y_max {
            s.y - y_max
        } else {
            0.0
        };
        let v_excess = if s.v < 0.0 {
            s.v
        } else if s.v > self.v_max {
            s.v - self.v_max
        } else {
            0.0
        };
        value += y_excess * y_excess + v_excess * v_excess;
        grad[1] = 2.0 * y_excess;
        grad[2] = 2.0 * v_excess;
        (value, grad)
    }
}
