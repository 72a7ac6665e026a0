//! Discrete-time point-mass vehicle model.
//!
//! State `s = (x, y, v)` with longitudinal speed `v`, input `u = (a, v_y)`.
//! Over a sampling period `dt`:
//!
//! ```text
//! x' = x + v dt      y' = y + v_y dt      v' = v + a dt
//! ```
//!
//! Stacking convention used everywhere in the crate: states are
//! `[s0; s1; ...; sN]` (3 rows per block), controls `[u0; ...; u_{N-1}]`
//! (2 rows per block).

use nalgebra::{DMatrix, DVector, Matrix3, Matrix3x2, Vector2, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{ensure_finite, invalid, Result};

pub const STATE_DIM: usize = 3;
pub const INPUT_DIM: usize = 2;

pub const DEFAULT_DT: f64 = 0.1;
pub const DEFAULT_HORIZON: usize = 30;

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct VehicleState {
    /// Longitudinal position (m).
    pub x: f64,
    /// Lateral position (m).
    pub y: f64,
    /// Longitudinal speed (m/s).
    pub v: f64,
}

impl VehicleState {
    pub const fn new(x: f64, y: f64, v: f64) -> Self {
        Self { x, y, v }
    }

    pub fn position(&self) -> Vector2<f64> {
        Vector2::new(self.x, self.y)
    }

    pub fn to_vector(self) -> Vector3<f64> {
        Vector3::new(self.x, self.y, self.v)
    }

    pub fn from_vector(v: &Vector3<f64>) -> Self {
        Self::new(v[0], v[1], v[2])
    }

    pub fn is_finite(&self) -> bool {
        self.x.is_finite() && self.y.is_finite() && self.v.is_finite()
    }

    /// Same state with the speed clamped at zero from below.
    pub fn clamp_speed(self) -> Self {
        Self {
            v: self.v.max(0.0),
            ..self
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct ControlInput {
    /// Longitudinal acceleration (m/s²).
    pub a: f64,
    /// Lateral velocity command (m/s).
    pub v_y: f64,
}

impl ControlInput {
    pub const fn new(a: f64, v_y: f64) -> Self {
        Self { a, v_y }
    }

    pub fn to_vector(self) -> Vector2<f64> {
        Vector2::new(self.a, self.v_y)
    }

    pub fn is_finite(&self) -> bool {
        self.a.is_finite() && self.v_y.is_finite()
    }
}

/// The linear model `s' = A s + B u` for a fixed sampling period.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearModel {
    dt: f64,
    a: Matrix3<f64>,
    b: Matrix3x2<f64>,
}

impl LinearModel {
    pub fn new(dt: f64) -> Result<Self> {
        if !(dt.is_finite() && dt > 0.0) {
            return Err(invalid(
                "dt",
                format!("must be positive and finite, got {dt}"),
            ));
        }
        #[rustfmt::skip]
        let a = Matrix3::new(
            1.0, 0.0, dt,
            0.0, 1.0, 0.0,
            0.0, 0.0, 1.0,
        );
        #[rustfmt::skip]
        let b = Matrix3x2::new(
            0.0, 0.0,
            0.0, dt,
            dt,  0.0,
        );
        Ok(Self { dt, a, b })
    }

    pub fn dt(&self) -> f64 {
        self.dt
    }

    pub fn a(&self) -> &Matrix3<f64> {
        &self.a
    }

    pub fn b(&self) -> &Matrix3x2<f64> {
        &self.b
    }

    fn apply(&self, s: VehicleState, u: ControlInput) -> VehicleState {
        VehicleState::from_vector(&(self.a * s.to_vector() + self.b * u.to_vector()))
    }
}

/// One step of the linear model. No speed clamping is applied here; the
/// closed loop clamps executed states with [`VehicleState::clamp_speed`].
pub fn step(s: VehicleState, u: ControlInput, model: &LinearModel) -> Result<VehicleState> {
    ensure_finite("state.x", s.x)?;
    ensure_finite("state.y", s.y)?;
    ensure_finite("state.v", s.v)?;
    ensure_finite("control.a", u.a)?;
    ensure_finite("control.v_y", u.v_y)?;
    Ok(model.apply(s, u))
}

/// Iterates [`step`] over a control sequence, returning `U.len() + 1` states.
pub fn rollout(
    s0: VehicleState,
    controls: &[ControlInput],
    model: &LinearModel,
) -> Result<Vec<VehicleState>> {
    let mut states = Vec::with_capacity(controls.len() + 1);
    states.push(s0);
    let mut s = s0;
    for &u in controls {
        s = step(s, u, model)?;
        states.push(s);
    }
    Ok(states)
}

/// Reference states over a horizon, `N + 1` entries.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReferenceTrajectory {
    pub states: Vec<VehicleState>,
}

impl ReferenceTrajectory {
    pub fn horizon(&self) -> usize {
        self.states.len().saturating_sub(1)
    }

    /// Stacked `[s0_ref; ...; sN_ref]`.
    pub fn stacked(&self) -> DVector<f64> {
        DVector::from_iterator(
            self.states.len() * STATE_DIM,
            self.states.iter().flat_map(|s| [s.x, s.y, s.v]),
        )
    }
}

/// Linear lateral ramp from `y1` to `y2` across the horizon, constant speed.
pub fn lane_change_reference(
    y1: f64,
    y2: f64,
    v_ref: f64,
    x0: f64,
    horizon: usize,
    dt: f64,
) -> Result<ReferenceTrajectory> {
    if horizon == 0 {
        return Err(invalid("horizon", "must be at least 1"));
    }
    let n = horizon as f64;
    let states = (0..=horizon)
        .map(|k| {
            let kf = k as f64;
            let y = if k == horizon {
                y2
            } else {
                y1 + (kf / n) * (y2 - y1)
            };
            VehicleState::new(x0 + v_ref * kf * dt, y, v_ref)
        })
        .collect();
    Ok(ReferenceTrajectory { states })
}

/// Stacked maps `S = calA s0 + calB U` over a horizon.
#[derive(Debug, Clone, PartialEq)]
pub struct PredictionMatrices {
    pub horizon: usize,
    /// `(N+1)·3 × 3`
    pub state_map: DMatrix<f64>,
    /// `(N+1)·3 × N·2`, strictly lower block-triangular.
    pub input_map: DMatrix<f64>,
}

impl PredictionMatrices {
    pub fn predict(&self, s0: VehicleState, controls: &DVector<f64>) -> DVector<f64> {
        &self.state_map * s0.to_vector() + &self.input_map * controls
    }
}

pub fn build_prediction_matrices(
    model: &LinearModel,
    horizon: usize,
) -> Result<PredictionMatrices> {
    if horizon == 0 {
        return Err(invalid("horizon", "must be at least 1"));
    }
    let rows = (horizon + 1) * STATE_DIM;
    let mut state_map = DMatrix::zeros(rows, STATE_DIM);
    // powers[j] = A^j
    let mut powers = Vec::with_capacity(horizon + 1);
    powers.push(Matrix3::identity());
    for j in 1..=horizon {
        powers.push(model.a * powers[j - 1]);
    }
    for (r, p) in powers.iter().enumerate() {
        state_map
            .fixed_view_mut::<3, 3>(r * STATE_DIM, 0)
            .copy_from(p);
    }

    let mut input_map = DMatrix::zeros(rows, horizon * INPUT_DIM);
    let ab: Vec<Matrix3x2<f64>> = powers.iter().map(|p| p * model.b).collect();
    for r in 1..=horizon {
        for c in 0..r {
            input_map
                .fixed_view_mut::<3, 2>(r * STATE_DIM, c * INPUT_DIM)
                .copy_from(&ab[r - 1 - c]);
        }
    }
    Ok(PredictionMatrices {
        horizon,
        state_map,
        input_map,
    })
}

/// Flattens a control sequence into the stacked `U` vector.
pub fn stack_controls(controls: &[ControlInput]) -> DVector<f64> {
    DVector::from_iterator(
        controls.len() * INPUT_DIM,
        controls.iter().flat_map(|u| [u.a, u.v_y]),
    )
}

pub fn unstack_controls(u: &DVector<f64>) -> Vec<ControlInput> {
    u.as_slice()
        .chunks_exact(INPUT_DIM)
        .map(|c| ControlInput::new(c[0], c[1]))
        .collect()
}

pub fn unstack_states(s: &DVector<f64>) -> Vec<VehicleState> {
    s.as_slice()
        .chunks_exact(STATE_DIM)
        .map(|c| VehicleState::new(c[0], c[1], c[2]))
        .collect()
}
