//! Collision risk ellipses built from time-to-collision (TTC) and the time
//! window of hazard (TWH).
//!
//! The ellipse is centred on the obstacle and axis-aligned with the lane:
//! the semi-major axis `a` is the longitudinal reach, the semi-minor axis `b`
//! the lateral uncertainty. The normalised elliptic distance (ERF) maps to a
//! risk metric in `(0, 1]` that saturates at 1 inside the ellipse.

use nalgebra::Vector2;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};

/// Evolution-factor level above which an obstacle's ellipse is flagged.
pub const EF_ALERT_THRESHOLD: f64 = 2.2;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EllipseParams {
    /// Hard cap on the semi-major axis (m).
    pub a_cap: f64,
    /// Hard cap on the semi-minor axis (m).
    pub b_cap: f64,
    /// Maximum feasible deceleration (m/s²).
    pub a_max_decel: f64,
    /// Planning-horizon duration `N·dt` (s).
    pub t_horizon: f64,
    /// Lateral motion budget (m).
    pub d_lat_max: f64,
    /// Decay rate of the exponential risk metric.
    pub alpha_decay: f64,
    /// Hazard window used by the closed loop (s).
    pub twh: f64,
}

impl Default for EllipseParams {
    fn default() -> Self {
        Self {
            a_cap: 50.0,
            b_cap: 10.0,
            a_max_decel: 6.0,
            t_horizon: 3.0,
            d_lat_max: 3.5,
            alpha_decay: 2.0,
            twh: 0.5,
        }
    }
}

impl EllipseParams {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("ellipse.a_cap", self.a_cap),
            ("ellipse.b_cap", self.b_cap),
            ("ellipse.a_max_decel", self.a_max_decel),
            ("ellipse.t_horizon", self.t_horizon),
            ("ellipse.d_lat_max", self.d_lat_max),
            ("ellipse.alpha_decay", self.alpha_decay),
        ] {
            if !(v.is_finite() && v > 0.0) {
                return Err(invalid(name, "must be positive"));
            }
        }
        if !(self.twh.is_finite() && self.twh >= 0.0) {
            return Err(invalid("ellipse.twh", "must be >= 0"));
        }
        Ok(())
    }
}

/// `(x_obs − x_ego)/(v_ego − v_obs)`; `None` when the ego is not closing in
/// on an obstacle ahead of it.
pub fn time_to_collision(x_ego: f64, x_obs: f64, v_ego: f64, v_obs: f64) -> Option<f64> {
    let closing = v_ego - v_obs;
    let gap = x_obs - x_ego;
    if closing > 0.0 && gap >= 0.0 {
        Some(gap / closing)
    } else {
        None
    }
}

/// Longitudinal reach, limited by the braking-feasible distance over the
/// horizon and by `a_cap`.
pub fn semi_major(v_ego: f64, v_obs: f64, ttc: f64, p: &EllipseParams) -> f64 {
    let v_rel = (v_ego - v_obs).abs();
    let reach = (v_ego - v_obs) * ttc;
    let feasible = v_rel * p.t_horizon + 0.5 * p.a_max_decel * p.t_horizon * p.t_horizon;
    reach.min(feasible).min(p.a_cap).max(0.0)
}

/// Lateral extent: half the obstacle width combined with the lateral drift
/// over the hazard window, bounded by `d_lat_max` and `b_cap`.
pub fn semi_minor(w_obs: f64, v_ego: f64, v_obs: f64, twh: f64, p: &EllipseParams) -> f64 {
    let half = 0.5 * w_obs;
    let lateral = ((v_ego - v_obs) * twh).clamp(0.0, p.d_lat_max);
    (half * half + lateral * lateral).sqrt().min(p.b_cap)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RiskEllipse {
    pub center: Vector2<f64>,
    /// Semi-major axis along the lane (m).
    pub a: f64,
    /// Semi-minor axis across the lane (m).
    pub b: f64,
}

impl RiskEllipse {
    /// Ellipse for a closing obstacle. The semi-major axis is floored at the
    /// obstacle width; `scale` (the evolution factor) inflates both axes
    /// before the caps are re-applied.
    #[allow(clippy::too_many_arguments)]
    pub fn from_kinematics(
        center: Vector2<f64>,
        w_obs: f64,
        v_ego: f64,
        v_obs: f64,
        ttc: f64,
        twh: f64,
        scale: f64,
        p: &EllipseParams,
    ) -> Self {
        let a = semi_major(v_ego, v_obs, ttc, p).max(w_obs.min(p.a_cap));
        let b = semi_minor(w_obs, v_ego, v_obs, twh, p);
        Self {
            center,
            a: (a * scale).min(p.a_cap),
            b: (b * scale).min(p.b_cap),
        }
    }

    pub fn aspect_ratio(&self) -> f64 {
        self.a / self.b
    }

    pub fn risk_factor(&self, point: &Vector2<f64>) -> Result<f64> {
        ellipse_risk_factor(&(point - self.center), self)
    }
}

/// `sqrt((x/a)² + (y/b)²)` for a point relative to the ellipse centre.
pub fn ellipse_risk_factor(rel: &Vector2<f64>, e: &RiskEllipse) -> Result<f64> {
    if !(e.a > 0.0 && e.b > 0.0) {
        return Err(invalid(
            "ellipse axes",
            format!("must be positive, got a={} b={}", e.a, e.b),
        ));
    }
    Ok(((rel[0] / e.a).powi(2) + (rel[1] / e.b).powi(2)).sqrt())
}

/// 1 inside the ellipse, `e^{−α(ERF−1)}` outside.
pub fn risk_metric(erf: f64, alpha_decay: f64) -> f64 {
    if erf <= 1.0 {
        1.0
    } else {
        (-alpha_decay * (erf - 1.0)).exp()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SweepCell {
    pub ttc: f64,
    pub twh: f64,
    pub a: f64,
    pub b: f64,
    pub aspect_ratio: f64,
}

/// Axis table over a TTC × TWH grid (TTC-major order) at fixed relative speed.
pub fn aspect_ratio_sweep(
    ttc_grid: &[f64],
    twh_grid: &[f64],
    v_rel: f64,
    w_obs: f64,
    p: &EllipseParams,
) -> Result<Vec<SweepCell>> {
    if ttc_grid.is_empty() || twh_grid.is_empty() {
        return Err(invalid("sweep grid", "TTC and TWH grids must be non-empty"));
    }
    if !(w_obs > 0.0) {
        return Err(invalid("w_obs", "must be positive"));
    }
    let mut cells = Vec::with_capacity(ttc_grid.len() * twh_grid.len());
    for &ttc in ttc_grid {
        for &twh in twh_grid {
            let e =
                RiskEllipse::from_kinematics(Vector2::zeros(), w_obs, v_rel, 0.0, ttc, twh, 1.0, p);
            cells.push(SweepCell {
                ttc,
                twh,
                a: e.a,
                b: e.b,
                aspect_ratio: e.aspect_ratio(),
            });
        }
    }
    Ok(cells)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    fn params() -> EllipseParams {
        EllipseParams::default()
    }

    #[test]
    fn ttc_examples() {
        assert_abs_diff_eq!(
            time_to_collision(0.0, 50.0, 30.0, 12.0).unwrap(),
            50.0 / 18.0,
            epsilon = 1e-12
        );
        assert_eq!(time_to_collision(0.0, 50.0, 20.0, 20.0), None);
        assert_eq!(time_to_collision(10.0, 10.0, 25.0, 20.0), Some(0.0));
        assert_eq!(time_to_collision(60.0, 50.0, 30.0, 12.0), None);
    }

    #[test]
    fn semi_major_examples() {
        let p = params();
        let ttc = 50.0 / 18.0;
        assert_abs_diff_eq!(semi_major(30.0, 12.0, ttc, &p), 50.0, epsilon = 1e-9);
        assert_abs_diff_eq!(semi_major(10.0, 0.0, 4.0, &p), 40.0, epsilon = 1e-12);
        assert_eq!(semi_major(10.0, 0.0, 0.0, &p), 0.0);
        let e = RiskEllipse::from_kinematics(Vector2::zeros(), 2.0, 10.0, 0.0, 0.0, 0.0, 1.0, &p);
        assert_eq!(e.a, 2.0);
    }

    #[test]
    fn semi_minor_examples() {
        let p = params();
        assert_eq!(semi_minor(2.0, 30.0, 12.0, 0.0, &p), 1.0);
        assert_abs_diff_eq!(
            semi_minor(2.0, 18.0, 0.0, 0.5, &p),
            (1.0f64 + 3.5 * 3.5).sqrt(),
            epsilon = 1e-12
        );
        assert_abs_diff_eq!(
            semi_minor(2.0, 10.0, 0.0, 0.2, &p),
            5.0f64.sqrt(),
            epsilon = 1e-12
        );
    }

    #[test]
    fn erf_and_metric_examples() {
        let e = RiskEllipse {
            center: Vector2::zeros(),
            a: 3.0,
            b: 4.0,
        };
        assert_eq!(ellipse_risk_factor(&Vector2::zeros(), &e).unwrap(), 0.0);
        assert_eq!(
            ellipse_risk_factor(&Vector2::new(3.0, 0.0), &e).unwrap(),
            1.0
        );
        assert_abs_diff_eq!(
            ellipse_risk_factor(&Vector2::new(3.0, 4.0), &e).unwrap(),
            2f64.sqrt(),
            epsilon = 1e-12
        );
        let degenerate = RiskEllipse {
            center: Vector2::zeros(),
            a: 0.0,
            b: 4.0,
        };
        assert!(ellipse_risk_factor(&Vector2::zeros(), &degenerate).is_err());

        assert_eq!(risk_metric(1.0, 2.0), 1.0);
        assert_eq!(risk_metric(0.5, 2.0), 1.0);
        assert_abs_diff_eq!(risk_metric(2.0, 2.0), (-2.0f64).exp(), epsilon = 1e-15);
    }

    #[test]
    fn sweep_reference_cell() {
        let cells = aspect_ratio_sweep(&[4.0], &[0.2], 10.0, 2.0, &params()).unwrap();
        assert_abs_diff_eq!(cells[0].a, 40.0, epsilon = 1e-12);
        assert_abs_diff_eq!(cells[0].b, 5f64.sqrt(), epsilon = 1e-12);
        assert!(cells[0].aspect_ratio > 5.0);
        assert!(aspect_ratio_sweep(&[], &[0.2], 10.0, 2.0, &params()).is_err());
    }

    #[test]
    fn sweep_large_twh_approaches_cap_ratio() {
        let p = EllipseParams {
            d_lat_max: 50.0,
            ..params()
        };
        let cells = aspect_ratio_sweep(&[4.0], &[0.1, 1.0, 10.0, 100.0], 10.0, 2.0, &p).unwrap();
        assert!(cells
            .windows(2)
            .all(|w| w[1].aspect_ratio <= w[0].aspect_ratio));
        assert_abs_diff_eq!(cells[3].aspect_ratio, 40.0 / p.b_cap, epsilon = 1e-12);
    }

    proptest! {
        #[test]
        fn caps_and_floors_hold(
            v_ego in 0.0..80.0f64, v_obs in 0.0..80.0f64, ttc in 0.0..50.0f64,
            twh in 0.0..20.0f64, w in 0.5..4.0f64, scale in 1.0..4.0f64,
        ) {
            let p = params();
            let e = RiskEllipse::from_kinematics(Vector2::zeros(), w, v_ego, v_obs, ttc, twh, scale, &p);
            prop_assert!(e.a > 0.0 && e.a <= p.a_cap);
            prop_assert!(e.b >= 0.5 * w && e.b <= p.b_cap);
        }

        #[test]
        fn erf_scale_invariant(x in -50.0..50.0f64, y in -50.0..50.0f64, a in 0.1..50.0f64, b in 0.1..10.0f64, c in 0.01..100.0f64) {
            let e = RiskEllipse { center: Vector2::zeros(), a, b };
            let ec = RiskEllipse { center: Vector2::zeros(), a: c * a, b: c * b };
            let r1 = ellipse_risk_factor(&Vector2::new(x, y), &e).unwrap();
            let r2 = ellipse_risk_factor(&Vector2::new(c * x, c * y), &ec).unwrap();
            prop_assert!((r1 - r2).abs() <= 1e-12 * (1.0 + r1));
        }

        #[test]
        fn metric_bounded_and_decreasing(e1 in 0.0..20.0f64, e2 in 0.0..20.0f64, alpha in 0.1..5.0f64) {
            let r1 = risk_metric(e1, alpha);
            let r2 = risk_metric(e2, alpha);
            prop_assert!(r1 > 0.0 && r1 <= 1.0);
            if e1 > 1.0 && e2 > e1 + 1e-9 { prop_assert!(r2 < r1); }
        }
    }
}
