use nalgebra::Vector2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};
use crate::risk_field::Obstacle;

use super::replay::ReplayTrack;

/// Per-step longitudinal acceleration noise of the surrounding vehicles,
/// uniform in `[−accel_bound, accel_bound]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct UncertaintyModel {
    pub accel_bound: f64,
}

impl Default for UncertaintyModel {
    fn default() -> Self {
        Self { accel_bound: 1.5 }
    }
}

impl UncertaintyModel {
    pub fn none() -> Self {
        Self { accel_bound: 0.0 }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.accel_bound.is_finite() && self.accel_bound >= 0.0) {
            return Err(invalid("uncertainty.accel_bound", "must be >= 0"));
        }
        Ok(())
    }
}

/// Constant-velocity positions `p_i(0) + v_i·k·dt`.
pub fn propagate_obstacles(obstacles: &[Obstacle], k: usize, dt: f64) -> Vec<Vector2<f64>> {
    obstacles.iter().map(|o| o.position_at(k, dt)).collect()
}

/// Surrounding traffic over one run. Noisy vehicles carry their deviation
/// from the nominal constant-velocity path, so zero noise reproduces the
/// deterministic positions exactly.
#[derive(Debug, Clone)]
pub struct Traffic {
    initial: Vec<Obstacle>,
    velocity: Vec<f64>,
    offset: Vec<f64>,
    replay: Vec<ReplayTrack>,
    noise: Option<(UncertaintyModel, ChaCha8Rng)>,
    dt: f64,
    k: usize,
}

impl Traffic {
    pub fn new(
        obstacles: &[Obstacle],
        replay: &[ReplayTrack],
        dt: f64,
        noise: Option<UncertaintyModel>,
        seed: u64,
    ) -> Self {
        Self {
            initial: obstacles.to_vec(),
            velocity: obstacles.iter().map(|o| o.velocity[0]).collect(),
            offset: vec![0.0; obstacles.len()],
            replay: replay.to_vec(),
            noise: noise.map(|m| (m, ChaCha8Rng::seed_from_u64(seed))),
            dt,
            k: 0,
        }
    }

    /// Obstacles as observed at the current tick: position and current velocity.
    pub fn current(&self) -> Vec<Obstacle> {
        let t = self.k as f64 * self.dt;
        let mut out: Vec<Obstacle> = self
            .initial
            .iter()
            .enumerate()
            .map(|(i, o)| {
                let mut p = o.position_at(self.k, self.dt);
                p[0] += self.offset[i];
                Obstacle {
                    position: p,
                    velocity: Vector2::new(self.velocity[i], o.velocity[1]),
                    ..o.clone()
                }
            })
            .collect();
        out.extend(self.replay.iter().map(|r| r.obstacle(t)));
        out
    }

    /// Advances one tick: perturb each longitudinal velocity, then integrate.
    pub fn advance(&mut self) {
        if let Some((model, rng)) = self.noise.as_mut() {
            for (i, o) in self.initial.iter().enumerate() {
                let a = if model.accel_bound > 0.0 {
                    rng.gen_range(-model.accel_bound..=model.accel_bound)
                } else {
                    0.0
                };
                self.velocity[i] = (self.velocity[i] + a * self.dt).max(0.0);
                self.offset[i] += (self.velocity[i] - o.velocity[0]) * self.dt;
            }
        }
        self.k += 1;
    }
}
