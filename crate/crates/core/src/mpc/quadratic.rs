use nalgebra::{DMatrix, DVector};

use crate::dynamics::{
    rollout, ControlInput, LinearModel, PredictionMatrices, ReferenceTrajectory, VehicleState,
    INPUT_DIM, STATE_DIM,
};
use crate::error::{Error, Result};
use crate::risk_field::RiskField;

use super::MpcWeights;

/// Tracking and input cost as `½UᵀHU + gᵀU + constant`.
#[derive(Debug, Clone, PartialEq)]
pub struct QuadraticForm {
    pub h: DMatrix<f64>,
    pub g: DVector<f64>,
    /// `‖calA s0 − S_ref‖²` under the stacked state weight.
    pub constant: f64,
}

impl QuadraticForm {
    pub fn value(&self, u: &DVector<f64>) -> f64 {
        0.5 * u.dot(&(&self.h * u)) + self.g.dot(u) + self.constant
    }

    pub fn dim(&self) -> usize {
        self.g.len()
    }

    /// Minimiser of the unconstrained quadratic, `−H⁻¹g`.
    pub fn unconstrained_minimizer(&self) -> Option<DVector<f64>> {
        self.h.clone().cholesky().map(|c| -c.solve(&self.g))
    }
}

fn stacked_state_weights(weights: &MpcWeights, horizon: usize) -> DVector<f64> {
    DVector::from_iterator(
        (horizon + 1) * STATE_DIM,
        (0..=horizon).flat_map(|k| {
            if k < horizon {
                weights.q
            } else {
                weights.q_terminal
            }
        }),
    )
}

/// `H = 2(calBᵀ calQ calB + calR)`, `g = 2 calBᵀ calQ (calA s0 − S_ref)`.
pub fn build_quadratic(
    pred: &PredictionMatrices,
    weights: &MpcWeights,
    s0: VehicleState,
    reference: &ReferenceTrajectory,
) -> Result<QuadraticForm> {
    let n = pred.horizon;
    if reference.states.len() != n + 1 {
        return Err(Error::Dimension {
            expected: n + 1,
            actual: reference.states.len(),
        });
    }
    let qdiag = stacked_state_weights(weights, n);
    let residual = &pred.state_map * s0.to_vector() - reference.stacked();

    // calQ calB without materialising the diagonal.
    let mut qb = pred.input_map.clone();
    for (i, mut row) in qb.row_iter_mut().enumerate() {
        row *= qdiag[i];
    }
    let mut h = pred.input_map.transpose() * &qb;
    for i in 0..n * INPUT_DIM {
        h[(i, i)] += weights.r[i % INPUT_DIM];
    }
    h *= 2.0;
    // Exact symmetry regardless of accumulation order.
    let h = (&h + h.transpose()) * 0.5;

    let weighted_residual = residual.component_mul(&qdiag);
    let g = pred.input_map.transpose() * &weighted_residual * 2.0;
    let constant = residual.dot(&weighted_residual);
    Ok(QuadraticForm { h, g, constant })
}

/// Tracking and input cost summed stage by stage over an explicit rollout.
pub fn tracking_cost(
    controls: &[ControlInput],
    s0: VehicleState,
    reference: &ReferenceTrajectory,
    weights: &MpcWeights,
    model: &LinearModel,
) -> Result<f64> {
    let n = controls.len();
    if reference.states.len() != n + 1 {
        return Err(Error::Dimension {
            expected: n + 1,
            actual: reference.states.len(),
        });
    }
    let states = rollout(s0, controls, model)?;
    let weighted = |s: &VehicleState, r: &VehicleState, w: &[f64; 3]| {
        w[0] * (s.x - r.x).powi(2) + w[1] * (s.y - r.y).powi(2) + w[2] * (s.v - r.v).powi(2)
    };
    let mut cost = 0.0;
    for k in 0..n {
        cost += weighted(&states[k], &reference.states[k], &weights.q);
        cost += weights.r[0] * controls[k].a.powi(2) + weights.r[1] * controls[k].v_y.powi(2);
    }
    cost += weighted(&states[n], &reference.states[n], &weights.q_terminal);
    Ok(cost)
}

/// Full horizon cost: tracking, input and `γ·V_ERPF(s_k)` for `k < N`.
pub fn total_cost(
    controls: &[ControlInput],
    s0: VehicleState,
    reference: &ReferenceTrajectory,
    field: Option<&RiskField>,
    weights: &MpcWeights,
    model: &LinearModel,
) -> Result<f64> {
    let mut cost = tracking_cost(controls, s0, reference, weights, model)?;
    if let Some(field) = field {
        if weights.gamma != 0.0 {
            let states = rollout(s0, controls, model)?;
            let risk: f64 = states[..controls.len()]
                .iter()
                .enumerate()
                .map(|(k, s)| field.value(s, k))
                .sum();
            cost += weights.gamma * risk;
        }
    }
    Ok(cost)
}
