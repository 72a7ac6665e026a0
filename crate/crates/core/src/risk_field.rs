//! Repulsive risk potential fields.
//!
//! The classical field of an obstacle at distance `d` is
//! `φ(d) = 1/max(d, ε) − 1/d_safe` inside `d_safe` and zero outside. The
//! evolutionary variant scales each obstacle's contribution by
//! `η = 1 + λ·σ((d̄ − d)/d_safe)` where `d̄` is the mean executed distance over
//! the last `N_H` control ticks, so approaching obstacles weigh more than
//! receding ones at the same distance.

use std::collections::VecDeque;

use nalgebra::{Vector2, Vector3};
use serde::{Deserialize, Serialize};

use crate::dynamics::VehicleState;
use crate::error::{invalid, Result};
use crate::flops::{self, FlopCounter};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Obstacle {
    pub id: u32,
    /// Initial position (m).
    pub position: Vector2<f64>,
    /// Constant velocity (m/s).
    pub velocity: Vector2<f64>,
    /// Vehicle width `w_obs` (m).
    #[serde(default = "default_width")]
    pub width: f64,
    /// Per-obstacle field gain; falls back to [`RiskFieldParams::alpha`].
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gain: Option<f64>,
}

fn default_width() -> f64 {
    2.0
}

impl Obstacle {
    pub fn new(id: u32, position: [f64; 2], velocity: [f64; 2]) -> Self {
        Self {
            id,
            position: Vector2::from(position),
            velocity: Vector2::from(velocity),
            width: default_width(),
            gain: None,
        }
    }

    pub fn with_width(mut self, width: f64) -> Self {
        self.width = width;
        self
    }

    /// Constant-velocity position after `k` steps of `dt`.
    pub fn position_at(&self, k: usize, dt: f64) -> Vector2<f64> {
        self.position + self.velocity * (k as f64 * dt)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.width.is_finite() && self.width > 0.0) {
            return Err(invalid(
                format!("obstacle[{}].width", self.id),
                "must be positive",
            ));
        }
        if !(self.velocity.iter().all(|v| v.is_finite())
            && self.position.iter().all(|v| v.is_finite()))
        {
            return Err(invalid(
                format!("obstacle[{}]", self.id),
                "position and velocity must be finite",
            ));
        }
        if let Some(g) = self.gain {
            if !(g.is_finite() && g >= 0.0) {
                return Err(invalid(
                    format!("obstacle[{}].gain", self.id),
                    "must be >= 0",
                ));
            }
        }
        Ok(())
    }
}

/// How the per-obstacle amplification `η` is computed from the distance history.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EvolutionMode {
    /// `η = 1 + λ·σ((d̄ − d)/d_safe)`.
    #[default]
    Sigmoid,
    /// `η = 1 + λ·[d̄ > d]`, the non-smooth indicator variant.
    Indicator,
    /// `η ≡ 1`: the static field.
    Static,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RiskFieldParams {
    /// Default per-obstacle gain `α_i`.
    pub alpha: f64,
    /// Field radius (m).
    pub d_safe: f64,
    /// Distance clamp (m).
    pub epsilon: f64,
    /// Evolution amplitude.
    pub lambda: f64,
    /// History window length in control ticks.
    pub n_history: usize,
}

impl Default for RiskFieldParams {
    fn default() -> Self {
        Self {
            alpha: 1.0,
            d_safe: 10.0,
            epsilon: 0.1,
            lambda: 2.0,
            n_history: 10,
        }
    }
}

impl RiskFieldParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.epsilon.is_finite() && self.epsilon > 0.0) {
            return Err(invalid("risk.epsilon", "must be > 0"));
        }
        if !(self.d_safe.is_finite() && self.d_safe > self.epsilon) {
            return Err(invalid("risk.d_safe", "must exceed epsilon"));
        }
        if !(self.lambda.is_finite() && self.lambda >= 0.0) {
            return Err(invalid("risk.lambda", "must be >= 0"));
        }
        if !(self.alpha.is_finite() && self.alpha >= 0.0) {
            return Err(invalid("risk.alpha", "must be >= 0"));
        }
        if self.n_history == 0 {
            return Err(invalid("risk.n_history", "must be at least 1"));
        }
        Ok(())
    }

    pub fn gain_for(&self, obstacle: &Obstacle) -> f64 {
        obstacle.gain.unwrap_or(self.alpha)
    }
}

/// Fixed-capacity window of the most recent executed distances.
#[derive(Debug, Clone, PartialEq)]
pub struct HistoryBuffer {
    capacity: usize,
    values: VecDeque<f64>,
}

impl HistoryBuffer {
    pub fn new(capacity: usize) -> Self {
        let capacity = capacity.max(1);
        Self {
            capacity,
            values: VecDeque::with_capacity(capacity),
        }
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// Pushes `d`, evicting the oldest entry when full, and returns the mean
    /// of the stored entries.
    pub fn push(&mut self, d: f64) -> f64 {
        if self.values.len() == self.capacity {
            self.values.pop_front();
        }
        self.values.push_back(d);
        self.mean().unwrap_or(d)
    }

    pub fn mean(&self) -> Option<f64> {
        if self.values.is_empty() {
            None
        } else {
            Some(self.values.iter().sum::<f64>() / self.values.len() as f64)
        }
    }
}

/// Planar distance between the vehicle position and `p`.
pub fn distance(s: &VehicleState, p: &Vector2<f64>) -> f64 {
    (s.position() - p).norm()
}

/// Classical repulsive field `φ(d)`.
pub fn rpf_value(d: f64, params: &RiskFieldParams) -> f64 {
    if d < params.d_safe {
        1.0 / d.max(params.epsilon) - 1.0 / params.d_safe
    } else {
        0.0
    }
}

/// `dφ/dd`; zero beyond `d_safe` and inside the `ε` clamp.
pub fn rpf_derivative(d: f64, params: &RiskFieldParams) -> f64 {
    if d < params.d_safe && d > params.epsilon {
        -1.0 / (d * d)
    } else {
        0.0
    }
}

pub fn sigmoid(z: f64) -> f64 {
    1.0 / (1.0 + (-z).exp())
}

/// Sigmoid evolution factor.
pub fn evolution_factor(d_bar: f64, d: f64, params: &RiskFieldParams) -> f64 {
    1.0 + params.lambda * sigmoid((d_bar - d) / params.d_safe)
}

pub fn evolution_factor_with(
    mode: EvolutionMode,
    d_bar: f64,
    d: f64,
    params: &RiskFieldParams,
) -> f64 {
    match mode {
        EvolutionMode::Sigmoid => evolution_factor(d_bar, d, params),
        EvolutionMode::Indicator => {
            if d_bar > d {
                1.0 + params.lambda
            } else {
                1.0
            }
        }
        EvolutionMode::Static => 1.0,
    }
}

/// One obstacle's contribution to the field, frozen for a control tick.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RiskTerm {
    /// Obstacle position at horizon step 0.
    pub position: Vector2<f64>,
    pub velocity: Vector2<f64>,
    /// `α_i`, possibly scaled by the ellipse risk metric.
    pub gain: f64,
    /// Evolution factor `η_i`.
    pub eta: f64,
}

impl RiskTerm {
    pub fn position_at(&self, k: usize, dt: f64) -> Vector2<f64> {
        self.position + self.velocity * (k as f64 * dt)
    }
}

/// A tick's frozen field: obstacle terms plus the sampling period used to
/// propagate them across the horizon.
#[derive(Debug, Clone, PartialEq)]
pub struct RiskField {
    pub terms: Vec<RiskTerm>,
    pub dt: f64,
    pub params: RiskFieldParams,
}

impl RiskField {
    pub fn new(terms: Vec<RiskTerm>, dt: f64, params: RiskFieldParams) -> Self {
        Self { terms, dt, params }
    }

    /// `V_ERPF(s_k) = Σ η_i α_i φ(d_i)`.
    pub fn value(&self, s: &VehicleState, k: usize) -> f64 {
        erpf_value(s, &self.terms, k, self.dt, &self.params)
    }

    /// Same sum with every `η_i` replaced by one.
    pub fn static_value(&self, s: &VehicleState, k: usize) -> f64 {
        self.terms
            .iter()
            .map(|t| t.gain * rpf_value(distance(s, &t.position_at(k, self.dt)), &self.params))
            .sum()
    }

    pub fn gradient(&self, s: &VehicleState, k: usize) -> Vector3<f64> {
        erpf_gradient(s, &self.terms, k, self.dt, &self.params)
    }

    /// Value and position gradient in one pass, counted as one interaction
    /// per obstacle.
    pub fn evaluate(
        &self,
        s: &VehicleState,
        k: usize,
        counter: Option<&FlopCounter>,
    ) -> (f64, Vector3<f64>) {
        let mut value = 0.0;
        let mut grad = Vector3::zeros();
        for t in &self.terms {
            let delta = s.position() - t.position_at(k, self.dt);
            let d = delta.norm();
            let w = t.eta * t.gain;
            value += w * rpf_value(d, &self.params);
            let slope = rpf_derivative(d, &self.params);
            if slope != 0.0 {
                let f = w * slope / d;
                grad[0] += f * delta[0];
                grad[1] += f * delta[1];
            }
        }
        if let Some(c) = counter {
            c.add_interactions(self.terms.len() as u64);
        }
        (value, grad)
    }
}

pub fn erpf_value(
    s: &VehicleState,
    terms: &[RiskTerm],
    k: usize,
    dt: f64,
    params: &RiskFieldParams,
) -> f64 {
    terms
        .iter()
        .map(|t| t.eta * t.gain * rpf_value(distance(s, &t.position_at(k, dt)), params))
        .sum()
}

/// Analytic `(∂V/∂x, ∂V/∂y, 0)` with each `η_i` held constant.
pub fn erpf_gradient(
    s: &VehicleState,
    terms: &[RiskTerm],
    k: usize,
    dt: f64,
    params: &RiskFieldParams,
) -> Vector3<f64> {
    let mut grad = Vector3::zeros();
    for t in terms {
        let delta = s.position() - t.position_at(k, dt);
        let d = delta.norm();
        let slope = rpf_derivative(d, params);
        if slope != 0.0 {
            let f = t.eta * t.gain * slope / d;
            grad[0] += f * delta[0];
            grad[1] += f * delta[1];
        }
    }
    grad
}

/// Per-obstacle distance history owned by the closed loop.
#[derive(Debug, Clone)]
pub struct ObstacleHistory {
    pub id: u32,
    pub buffer: HistoryBuffer,
}

/// Pushes the executed distance and returns `(d̄, η)` for the tick.
pub fn update_and_evolve(
    history: &mut HistoryBuffer,
    d: f64,
    mode: EvolutionMode,
    params: &RiskFieldParams,
    counter: Option<&FlopCounter>,
) -> (f64, f64) {
    let d_bar = history.push(d);
    if let Some(c) = counter {
        c.add(flops::HISTORY_MEAN + flops::EVOLUTION_FACTOR);
    }
    (d_bar, evolution_factor_with(mode, d_bar, d, params))
}
