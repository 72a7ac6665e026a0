use std::collections::BTreeMap;
use std::io::Read;

use nalgebra::Vector2;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};
use crate::risk_field::Obstacle;

/// One recorded vehicle: time-stamped positions, strictly increasing in time.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ReplayTrack {
    pub id: u32,
    /// `(t, x, y)` samples.
    pub samples: Vec<[f64; 3]>,
    #[serde(default = "default_width")]
    pub width: f64,
}

fn default_width() -> f64 {
    2.0
}

#[derive(Debug, Deserialize)]
struct Row {
    t: f64,
    vehicle_id: u32,
    x: f64,
    y: f64,
}

impl ReplayTrack {
    pub fn new(id: u32, mut samples: Vec<[f64; 3]>) -> Result<Self> {
        samples.sort_by(|a, b| a[0].total_cmp(&b[0]));
        if samples.is_empty() {
            return Err(invalid(format!("track[{id}]"), "no samples"));
        }
        if samples.iter().flatten().any(|v| !v.is_finite()) {
            return Err(invalid(format!("track[{id}]"), "non-finite sample"));
        }
        if samples.windows(2).any(|w| w[0][0] == w[1][0]) {
            return Err(invalid(format!("track[{id}]"), "duplicate timestamps"));
        }
        Ok(Self {
            id,
            samples,
            width: default_width(),
        })
    }

    /// Index of the segment used at time `t`, clamped to the recorded range.
    fn segment(&self, t: f64) -> usize {
        let n = self.samples.len();
        if n < 2 {
            return 0;
        }
        let upper = self.samples.partition_point(|s| s[0] <= t);
        upper.clamp(1, n - 1) - 1
    }

    /// Linearly interpolated position; held at the first/last sample outside the record.
    pub fn position(&self, t: f64) -> Vector2<f64> {
        let n = self.samples.len();
        if n == 1 || t <= self.samples[0][0] {
            let s = self.samples[0];
            return Vector2::new(s[1], s[2]);
        }
        if t >= self.samples[n - 1][0] {
            let s = self.samples[n - 1];
            return Vector2::new(s[1], s[2]);
        }
        let i = self.segment(t);
        let (a, b) = (self.samples[i], self.samples[i + 1]);
        let w = (t - a[0]) / (b[0] - a[0]);
        Vector2::new(a[1] + w * (b[1] - a[1]), a[2] + w * (b[2] - a[2]))
    }

    /// Finite-difference velocity of the segment containing `t`.
    pub fn velocity(&self, t: f64) -> Vector2<f64> {
        if self.samples.len() < 2 {
            return Vector2::zeros();
        }
        let i = self.segment(t);
        let (a, b) = (self.samples[i], self.samples[i + 1]);
        let h = b[0] - a[0];
        Vector2::new((b[1] - a[1]) / h, (b[2] - a[2]) / h)
    }

    pub fn obstacle(&self, t: f64) -> Obstacle {
        Obstacle {
            id: self.id,
            position: self.position(t),
            velocity: self.velocity(t),
            width: self.width,
            gain: None,
        }
    }

    /// Positions resampled on a uniform grid `t0 + k·dt`, `k < steps`.
    pub fn resample(&self, t0: f64, dt: f64, steps: usize) -> Vec<Vector2<f64>> {
        (0..steps)
            .map(|k| self.position(t0 + k as f64 * dt))
            .collect()
    }
}

/// Reads `t,vehicle_id,x,y` rows into one track per vehicle, ordered by id.
pub fn read_tracks<R: Read>(reader: R) -> Result<Vec<ReplayTrack>> {
    let mut rdr = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_reader(reader);
    let headers = rdr.headers()?.clone();
    let expected = ["t", "vehicle_id", "x", "y"];
    if headers.iter().collect::<Vec<_>>() != expected {
        return Err(invalid(
            "replay header",
            format!(
                "expected `t,vehicle_id,x,y`, got `{}`",
                headers.iter().collect::<Vec<_>>().join(",")
            ),
        ));
    }
    let mut by_id: BTreeMap<u32, Vec<[f64; 3]>> = BTreeMap::new();
    for row in rdr.deserialize() {
        let row: Row = row?;
        by_id
            .entry(row.vehicle_id)
            .or_default()
            .push([row.t, row.x, row.y]);
    }
    by_id
        .into_iter()
        .map(|(id, samples)| ReplayTrack::new(id, samples))
        .collect()
}
