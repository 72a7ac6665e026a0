use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use crate::dynamics::{PredictionMatrices, VehicleState, STATE_DIM};
use crate::error::{invalid, Error, Result};
use crate::flops::FlopCounter;
use crate::risk_field::RiskField;

use super::{BoxConstraints, QuadraticForm};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SolverConfig {
    pub max_iters: usize,
    /// Tolerance on the projected-gradient norm.
    pub tol: f64,
    /// Armijo sufficient-decrease slope.
    pub armijo: f64,
    /// Step shrink factor during backtracking.
    pub shrink: f64,
    pub max_backtracks: usize,
    /// Weight of the quadratic penalty on predicted states leaving the state box.
    pub state_penalty: f64,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self {
            max_iters: 200,
            tol: 1e-6,
            armijo: 1e-4,
            shrink: 0.5,
            max_backtracks: 40,
            state_penalty: 1e3,
        }
    }
}

impl SolverConfig {
    pub fn validate(&self) -> Result<()> {
        if self.max_iters == 0 {
            return Err(invalid("solver.max_iters", "must be at least 1"));
        }
        if !(self.tol > 0.0) {
            return Err(invalid("solver.tol", "must be positive"));
        }
        if !(self.armijo > 0.0 && self.armijo < 1.0) {
            return Err(invalid("solver.armijo", "must lie in (0, 1)"));
        }
        if !(self.shrink > 0.0 && self.shrink < 1.0) {
            return Err(invalid("solver.shrink", "must lie in (0, 1)"));
        }
        if !(self.state_penalty.is_finite() && self.state_penalty >= 0.0) {
            return Err(invalid("solver.state_penalty", "must be >= 0"));
        }
        Ok(())
    }
}

/// The horizon problem: quadratic tracking cost, weighted risk field over the
/// predicted states `s_0 … s_{N−1}`, and the state-box penalty over
/// `s_1 … s_N`, minimised over the control box.
#[derive(Debug, Clone, Copy)]
pub struct Problem<'a> {
    pub quadratic: &'a QuadraticForm,
    pub prediction: &'a PredictionMatrices,
    pub s0: VehicleState,
    pub field: Option<&'a RiskField>,
    pub gamma: f64,
    pub bounds: &'a BoxConstraints,
    pub state_penalty: f64,
}

impl Problem<'_> {
    fn risk_active(&self) -> bool {
        self.gamma != 0.0 && self.field.is_some_and(|f| !f.terms.is_empty())
    }

    /// Objective value and gradient with respect to the stacked controls.
    pub fn evaluate(&self, u: &DVector<f64>, counter: Option<&FlopCounter>) -> (f64, DVector<f64>) {
        let n = self.prediction.horizon;
        let hu = &self.quadratic.h * u;
        let mut value = 0.5 * u.dot(&hu) + self.quadratic.g.dot(u) + self.quadratic.constant;
        let mut grad = hu + &self.quadratic.g;
        let dim = u.len() as u64;
        let mut flops = 2 * dim * dim + 6 * dim;

        let check_states = self.risk_active() || self.state_penalty != 0.0;
        if check_states {
            let stacked = self.prediction.predict(self.s0, u);
            let rows = stacked.len() as u64;
            flops += 2 * rows * (dim + 3);
            let mut state_grad = DVector::zeros(stacked.len());
            let mut any = false;
            for k in 0..=n {
                let base = k * STATE_DIM;
                let s = VehicleState::new(stacked[base], stacked[base + 1], stacked[base + 2]);
                if k < n && self.risk_active() {
                    let field = self.field.expect("risk_active implies a field");
                    let (v, g) = field.evaluate(&s, k, counter);
                    if v != 0.0 || g[0] != 0.0 || g[1] != 0.0 {
                        value += self.gamma * v;
                        state_grad[base] += self.gamma * g[0];
                        state_grad[base + 1] += self.gamma * g[1];
                        any = true;
                    }
                }
                if k > 0 && self.state_penalty != 0.0 {
                    let (p, pg) = self.bounds.state_violation(&s);
                    if p != 0.0 {
                        value += self.state_penalty * p;
                        for i in 0..STATE_DIM {
                            state_grad[base + i] += self.state_penalty * pg[i];
                        }
                        any = true;
                    }
                }
            }
            if any {
                grad += self.prediction.input_map.tr_mul(&state_grad);
                flops += 2 * rows * dim;
            }
        }
        if let Some(c) = counter {
            c.add(flops);
        }
        (value, grad)
    }

    /// Sum of `γ·V(s_k)` over the horizon at `u`.
    pub fn risk_at(&self, u: &DVector<f64>) -> f64 {
        let Some(field) = self.field.filter(|_| self.risk_active()) else {
            return 0.0;
        };
        let stacked = self.prediction.predict(self.s0, u);
        (0..self.prediction.horizon)
            .map(|k| {
                let b = k * STATE_DIM;
                field.value(
                    &VehicleState::new(stacked[b], stacked[b + 1], stacked[b + 2]),
                    k,
                )
            })
            .sum::<f64>()
            * self.gamma
    }

    pub fn project(&self, u: &mut DVector<f64>) {
        for (i, v) in u.iter_mut().enumerate() {
            let (lo, hi) = self.bounds.input_bounds(i);
            *v = v.clamp(lo, hi);
        }
    }

    fn projected_gradient_norm(&self, u: &DVector<f64>, grad: &DVector<f64>) -> f64 {
        let mut trial = u - grad;
        self.project(&mut trial);
        (trial - u).norm()
    }

    fn active_constraints(&self, u: &DVector<f64>) -> usize {
        u.iter()
            .enumerate()
            .filter(|&(i, &v)| {
                let (lo, hi) = self.bounds.input_bounds(i);
                v <= lo || v >= hi
            })
            .count()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SolveOutcome {
    pub u: DVector<f64>,
    pub value: f64,
    pub iterations: usize,
    pub evaluations: usize,
    pub projected_grad_norm: f64,
    pub converged: bool,
    pub active_constraints: usize,
    /// Objective after every accepted iterate, starting with the projected initial point.
    pub trace: Vec<f64>,
}

/// Projected gradient with Barzilai–Borwein trial steps and monotone Armijo
/// backtracking along the projection arc.
pub fn solve(
    problem: &Problem<'_>,
    config: &SolverConfig,
    u_init: &DVector<f64>,
    counter: Option<&FlopCounter>,
) -> Result<SolveOutcome> {
    let dim = problem.quadratic.dim();
    if u_init.len() != dim {
        return Err(Error::Dimension {
            expected: dim,
            actual: u_init.len(),
        });
    }
    let mut u = u_init.clone();
    problem.project(&mut u);
    let (mut f, mut grad) = problem.evaluate(&u, counter);
    let mut evaluations = 1;
    check_finite(f, &grad, &u, 0)?;
    let mut trace = vec![f];

    // Gershgorin bound on the largest eigenvalue of H for the first step.
    let row_bound = problem
        .quadratic
        .h
        .row_iter()
        .map(|r| r.iter().map(|v| v.abs()).sum::<f64>())
        .fold(0.0, f64::max);
    let mut step = 1.0 / row_bound.max(1e-12);
    const STEP_MIN: f64 = 1e-12;
    const STEP_MAX: f64 = 1e6;

    let mut pg_norm = problem.projected_gradient_norm(&u, &grad);
    let mut iterations = 0;
    let mut converged = pg_norm < config.tol;
    while !converged && iterations < config.max_iters {
        iterations += 1;
        let mut alpha = step;
        let mut accepted = None;
        for _ in 0..=config.max_backtracks {
            let mut trial = &u - &grad * alpha;
            problem.project(&mut trial);
            let direction = &trial - &u;
            let slope = grad.dot(&direction);
            let (f_trial, g_trial) = problem.evaluate(&trial, counter);
            evaluations += 1;
            check_finite(f_trial, &g_trial, &trial, iterations)?;
            if f_trial <= f + config.armijo * slope {
                accepted = Some((trial, f_trial, g_trial));
                break;
            }
            alpha *= config.shrink;
        }
        let Some((u_next, f_next, g_next)) = accepted else {
            // No sufficient decrease at any step length: stationary to working precision.
            break;
        };
        debug_assert!(f_next <= f, "objective increased: {f} -> {f_next}");
        // Progress below rounding level, typically an iterate parked on the
        // field's d_safe kink where the gradient never vanishes.
        let stalled = f_next >= f;
        let s = &u_next - &u;
        let y = &g_next - &grad;
        let sy = s.dot(&y);
        step = if sy > 0.0 {
            (sy / y.dot(&y)).clamp(STEP_MIN, STEP_MAX)
        } else {
            (alpha * 2.0).min(STEP_MAX)
        };
        u = u_next;
        f = f_next;
        grad = g_next;
        trace.push(f);
        pg_norm = problem.projected_gradient_norm(&u, &grad);
        converged = pg_norm < config.tol;
        if stalled {
            break;
        }
    }

    Ok(SolveOutcome {
        active_constraints: problem.active_constraints(&u),
        u,
        value: f,
        iterations,
        evaluations,
        projected_grad_norm: pg_norm,
        converged,
        trace,
    })
}

fn check_finite(f: f64, grad: &DVector<f64>, u: &DVector<f64>, iteration: usize) -> Result<()> {
    if !f.is_finite() {
        return Err(Error::NonFinite {
            what: "objective",
            iteration,
            iterate: u.as_slice().to_vec(),
        });
    }
    if grad.iter().any(|g| !g.is_finite()) {
        return Err(Error::NonFinite {
            what: "gradient",
            iteration,
            iterate: u.as_slice().to_vec(),
        });
    }
    Ok(())
}
