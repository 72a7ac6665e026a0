use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::dynamics::{ControlInput, ReferenceTrajectory, VehicleState};
use crate::error::{invalid, Error, Result};
use crate::mpc::{BoxConstraints, Diagnostics, Planner, PlannerConfig};
use crate::risk_field::{EvolutionMode, Obstacle};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ControllerKind {
    /// Evolutionary field; η follows the configured evolution mode.
    ErpfMpc,
    /// Same pipeline with η ≡ 1.
    RpfMpc,
    /// Tracking only, γ = 0.
    PlainMpc,
    /// Plain MPC followed by the barrier-function safety filter.
    CbfFilter,
}

impl ControllerKind {
    pub const ALL: [ControllerKind; 4] = [
        ControllerKind::ErpfMpc,
        ControllerKind::RpfMpc,
        ControllerKind::PlainMpc,
        ControllerKind::CbfFilter,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Self::ErpfMpc => "erpf_mpc",
            Self::RpfMpc => "rpf_mpc",
            Self::PlainMpc => "plain_mpc",
            Self::CbfFilter => "cbf_filter",
        }
    }

    /// Planner configuration this controller runs with.
    pub fn planner_config(self, base: &PlannerConfig) -> PlannerConfig {
        let mut cfg = base.clone();
        match self {
            Self::ErpfMpc => {}
            Self::RpfMpc => cfg.evolution = EvolutionMode::Static,
            Self::PlainMpc | Self::CbfFilter => cfg.weights.gamma = 0.0,
        }
        cfg
    }
}

impl fmt::Display for ControllerKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for ControllerKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "erpf" | "erpf_mpc" => Ok(Self::ErpfMpc),
            "rpf" | "rpf_mpc" => Ok(Self::RpfMpc),
            "plain" | "mpc" | "plain_mpc" => Ok(Self::PlainMpc),
            "cbf" | "cbf_filter" => Ok(Self::CbfFilter),
            _ => Err(Error::Unknown {
                kind: "controller",
                name: s.to_string(),
            }),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CbfParams {
    /// Class-K gain in `ḣ + κh ≥ 0`.
    pub kappa: f64,
    /// Barrier radius; falls back to the field's `d_safe`.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub d_safe: Option<f64>,
}

impl Default for CbfParams {
    fn default() -> Self {
        Self {
            kappa: 1.0,
            d_safe: None,
        }
    }
}

impl CbfParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.kappa.is_finite() && self.kappa > 0.0) {
            return Err(invalid("cbf.kappa", "must be positive"));
        }
        if let Some(d) = self.d_safe {
            if !(d.is_finite() && d > 0.0) {
                return Err(invalid("cbf.d_safe", "must be positive"));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FilterStatus {
    /// Nominal input already safe (or no filter).
    Passed,
    /// Nominal input corrected.
    Corrected,
    /// No input satisfies every barrier; maximum braking applied.
    Infeasible,
}

/// Half-plane `c·u ≥ r` over `u = (a, v_y)`.
#[derive(Debug, Clone, Copy)]
struct HalfPlane {
    c: [f64; 2],
    r: f64,
}

impl HalfPlane {
    fn slack(&self, u: [f64; 2]) -> f64 {
        self.c[0] * u[0] + self.c[1] * u[1] - self.r
    }

    /// Closest point to `p` on the boundary line.
    fn project(&self, p: [f64; 2]) -> Option<[f64; 2]> {
        let nn = self.c[0] * self.c[0] + self.c[1] * self.c[1];
        if nn == 0.0 {
            return None;
        }
        let t = self.slack(p) / nn;
        Some([p[0] - t * self.c[0], p[1] - t * self.c[1]])
    }

    fn intersect(&self, other: &HalfPlane) -> Option<[f64; 2]> {
        let det = self.c[0] * other.c[1] - self.c[1] * other.c[0];
        if det.abs() < 1e-12 {
            return None;
        }
        Some([
            (self.r * other.c[1] - self.c[1] * other.r) / det,
            (self.c[0] * other.r - self.r * other.c[0]) / det,
        ])
    }
}

/// Barrier rows `ḣ_i + κ h_i ≥ 0`, `h_i = d_i² − d_safe²`, with
/// `ḣ_i = 2(Δx (v + a·dt − v_ix) + Δy (v_y − v_iy))` for the relative
/// position `Δ = ego − obstacle`.
fn barrier_rows(
    s: &VehicleState,
    obstacles: &[Obstacle],
    d_safe: f64,
    kappa: f64,
    dt: f64,
) -> Vec<HalfPlane> {
    obstacles
        .iter()
        .map(|o| {
            let dx = s.x - o.position[0];
            let dy = s.y - o.position[1];
            let h = dx * dx + dy * dy - d_safe * d_safe;
            HalfPlane {
                c: [2.0 * dx * dt, 2.0 * dy],
                r: -kappa * h - 2.0 * dx * (s.v - o.velocity[0]) + 2.0 * dy * o.velocity[1],
            }
        })
        .collect()
}

/// Minimally invasive correction: the input closest to `nominal` inside the
/// box and every barrier half-plane. The two-variable QP is solved exactly
/// by checking the box projection, the projections onto each constraint
/// line and every pairwise vertex.
pub fn cbf_filter(
    s: &VehicleState,
    nominal: ControlInput,
    obstacles: &[Obstacle],
    bounds: &BoxConstraints,
    params: &CbfParams,
    d_safe: f64,
    dt: f64,
) -> (ControlInput, FilterStatus) {
    const TOL: f64 = 1e-9;
    let d = params.d_safe.unwrap_or(d_safe);
    let barriers = barrier_rows(s, obstacles, d, params.kappa, dt);
    let mut rows = barriers.clone();
    rows.extend([
        HalfPlane {
            c: [1.0, 0.0],
            r: bounds.a_min,
        },
        HalfPlane {
            c: [-1.0, 0.0],
            r: -bounds.a_max,
        },
        HalfPlane {
            c: [0.0, 1.0],
            r: bounds.vy_min,
        },
        HalfPlane {
            c: [0.0, -1.0],
            r: -bounds.vy_max,
        },
    ]);
    let feasible = |u: [f64; 2]| rows.iter().all(|h| h.slack(u) >= -TOL * (1.0 + h.r.abs()));
    let target = [nominal.a, nominal.v_y];
    let clipped = bounds.clamp_input(nominal);
    let clipped = [clipped.a, clipped.v_y];
    if barriers.iter().all(|h| h.slack(clipped) >= 0.0) {
        let status = if clipped == target {
            FilterStatus::Passed
        } else {
            FilterStatus::Corrected
        };
        return (ControlInput::new(clipped[0], clipped[1]), status);
    }

    let mut candidates: Vec<[f64; 2]> = rows.iter().filter_map(|h| h.project(target)).collect();
    for i in 0..rows.len() {
        for j in i + 1..rows.len() {
            if let Some(p) = rows[i].intersect(&rows[j]) {
                candidates.push(p);
            }
        }
    }
    let cost = |u: &[f64; 2]| (u[0] - target[0]).powi(2) + (u[1] - target[1]).powi(2);
    let best = candidates
        .into_iter()
        .filter(|u| feasible(*u))
        .min_by(|a, b| cost(a).total_cmp(&cost(b)));
    match best {
        Some(u) => {
            // Vertices may sit a rounding error outside the box.
            let u = bounds.clamp_input(ControlInput::new(u[0], u[1]));
            (u, FilterStatus::Corrected)
        }
        None => (
            ControlInput::new(bounds.a_min, 0.0),
            FilterStatus::Infeasible,
        ),
    }
}

/// A planner plus the optional safety filter.
#[derive(Debug)]
pub struct Controller {
    kind: ControllerKind,
    planner: Planner,
    cbf: CbfParams,
}

/// What one control tick produced.
#[derive(Debug, Clone, PartialEq)]
pub struct ControlOutput {
    pub applied: ControlInput,
    pub nominal: ControlInput,
    pub filter: FilterStatus,
    pub diagnostics: Diagnostics,
}

impl Controller {
    pub fn new(
        kind: ControllerKind,
        base: &PlannerConfig,
        cbf: CbfParams,
        lane_centers: Vec<f64>,
    ) -> Result<Self> {
        cbf.validate()?;
        Ok(Self {
            kind,
            planner: Planner::new(kind.planner_config(base), lane_centers)?,
            cbf,
        })
    }

    pub fn kind(&self) -> ControllerKind {
        self.kind
    }

    pub fn planner(&self) -> &Planner {
        &self.planner
    }

    pub fn step(
        &mut self,
        s: &VehicleState,
        obstacles: &[Obstacle],
        reference: &ReferenceTrajectory,
    ) -> Result<ControlOutput> {
        let (nominal, diagnostics) = self.planner.step(s, obstacles, reference)?;
        let (applied, filter) = if self.kind == ControllerKind::CbfFilter {
            let cfg = self.planner.config();
            cbf_filter(
                s,
                nominal,
                obstacles,
                &cfg.bounds,
                &self.cbf,
                cfg.risk.d_safe,
                cfg.dt,
            )
        } else {
            (nominal, FilterStatus::Passed)
        };
        Ok(ControlOutput {
            applied,
            nominal,
            filter,
            diagnostics,
        })
    }
}
