use serde::{Deserialize, Serialize};

use crate::dynamics::{ReferenceTrajectory, VehicleState};
use crate::error::{invalid, Error, Result};
use crate::risk_field::Obstacle;

use super::replay::ReplayTrack;

/// Straight parallel lanes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LaneGeometry {
    /// Lane centre `y` coordinates, ascending (m).
    pub centers: Vec<f64>,
    pub width: f64,
    /// Distance the ego centre keeps from the band edge (m).
    #[serde(default = "default_margin")]
    pub margin: f64,
}

fn default_margin() -> f64 {
    0.5
}

impl LaneGeometry {
    pub fn new(centers: Vec<f64>, width: f64) -> Self {
        Self {
            centers,
            width,
            margin: default_margin(),
        }
    }

    /// Drivable band `[lo, hi]` spanned by the lanes.
    pub fn band(&self) -> (f64, f64) {
        let lo = self.centers.first().copied().unwrap_or(0.0) - 0.5 * self.width;
        let hi = self.centers.last().copied().unwrap_or(0.0) + 0.5 * self.width;
        (lo, hi)
    }

    /// Band available to the ego centre.
    pub fn ego_band(&self) -> (f64, f64) {
        let (lo, hi) = self.band();
        (lo + self.margin, hi - self.margin)
    }

    pub fn center(&self, lane: usize) -> Result<f64> {
        self.centers.get(lane).copied().ok_or_else(|| {
            invalid(
                "lane",
                format!("index {lane} out of range for {} lanes", self.centers.len()),
            )
        })
    }

    pub fn validate(&self) -> Result<()> {
        if self.centers.is_empty() {
            return Err(invalid("lanes.centers", "need at least one lane"));
        }
        if self.centers.windows(2).any(|w| !(w[0] < w[1])) {
            return Err(invalid("lanes.centers", "must be strictly ascending"));
        }
        if !(self.width.is_finite() && self.width > 0.0) {
            return Err(invalid("lanes.width", "must be positive"));
        }
        if !(self.margin >= 0.0 && 2.0 * self.margin < self.width) {
            return Err(invalid("lanes.margin", "must lie in [0, width/2)"));
        }
        Ok(())
    }
}

/// How the reference trajectory is generated each tick.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum ReferenceSpec {
    LaneKeep {
        lane: usize,
        speed: f64,
    },
    /// Lateral ramp from lane `from` to lane `to` over `[start, start + duration]` (s).
    LaneChange {
        from: usize,
        to: usize,
        speed: f64,
        start: f64,
        duration: f64,
    },
    /// Travel in `lane`; when a slower vehicle ahead in that lane comes within
    /// `trigger_gap`, ramp over to `passing_lane`, and ramp back once the ego
    /// leads it by `return_gap`.
    Overtake {
        lane: usize,
        passing_lane: usize,
        speed: f64,
        trigger_gap: f64,
        return_gap: f64,
        duration: f64,
    },
}

impl ReferenceSpec {
    pub fn speed(&self) -> f64 {
        match *self {
            Self::LaneKeep { speed, .. }
            | Self::LaneChange { speed, .. }
            | Self::Overtake { speed, .. } => speed,
        }
    }

    /// Lane the ego should end up in, if the reference describes a lane change.
    pub fn target_lane(&self) -> Option<usize> {
        match *self {
            Self::LaneChange { to, .. } => Some(to),
            _ => None,
        }
    }

    fn validate(&self, lanes: &LaneGeometry) -> Result<()> {
        let speed = self.speed();
        if !(speed.is_finite() && speed >= 0.0) {
            return Err(invalid("reference.speed", "must be >= 0"));
        }
        match *self {
            Self::LaneKeep { lane, .. } => {
                lanes.center(lane)?;
            }
            Self::LaneChange {
                from,
                to,
                start,
                duration,
                ..
            } => {
                lanes.center(from)?;
                lanes.center(to)?;
                if !(start.is_finite() && start >= 0.0) {
                    return Err(invalid("reference.start", "must be >= 0"));
                }
                if !(duration.is_finite() && duration > 0.0) {
                    return Err(invalid("reference.duration", "must be positive"));
                }
            }
            Self::Overtake {
                lane,
                passing_lane,
                trigger_gap,
                return_gap,
                duration,
                ..
            } => {
                lanes.center(lane)?;
                lanes.center(passing_lane)?;
                if lane == passing_lane {
                    return Err(invalid("reference.passing_lane", "must differ from lane"));
                }
                for (name, v) in [
                    ("reference.trigger_gap", trigger_gap),
                    ("reference.return_gap", return_gap),
                    ("reference.duration", duration),
                ] {
                    if !(v.is_finite() && v > 0.0) {
                        return Err(invalid(name, "must be positive"));
                    }
                }
            }
        }
        Ok(())
    }
}

/// Lateral ramp between two lane centres.
#[derive(Debug, Clone, Copy, PartialEq)]
struct Ramp {
    from: f64,
    to: f64,
    start: f64,
    duration: f64,
}

impl Ramp {
    fn hold(y: f64) -> Self {
        Self {
            from: y,
            to: y,
            start: 0.0,
            duration: 1.0,
        }
    }

    fn at(&self, t: f64) -> f64 {
        let s = ((t - self.start) / self.duration).clamp(0.0, 1.0);
        if s >= 1.0 {
            self.to
        } else {
            self.from + s * (self.to - self.from)
        }
    }
}

/// Per-run reference generator. Stateless for lane keeping and lane changes;
/// the overtaking schedule remembers its current phase.
#[derive(Debug, Clone)]
pub struct ReferenceGenerator {
    spec: ReferenceSpec,
    lanes: LaneGeometry,
    ramp: Ramp,
    passing: Option<u32>,
}

impl ReferenceGenerator {
    pub fn new(spec: ReferenceSpec, lanes: LaneGeometry) -> Result<Self> {
        spec.validate(&lanes)?;
        let ramp = match spec {
            ReferenceSpec::LaneKeep { lane, .. } => Ramp::hold(lanes.center(lane)?),
            ReferenceSpec::LaneChange {
                from,
                to,
                start,
                duration,
                ..
            } => Ramp {
                from: lanes.center(from)?,
                to: lanes.center(to)?,
                start,
                duration,
            },
            ReferenceSpec::Overtake { lane, .. } => Ramp::hold(lanes.center(lane)?),
        };
        Ok(Self {
            spec,
            lanes,
            ramp,
            passing: None,
        })
    }

    /// Reference over the horizon from time `t`, anchored at the ego's
    /// current longitudinal position.
    pub fn reference(
        &mut self,
        t: f64,
        ego: &VehicleState,
        obstacles: &[Obstacle],
        horizon: usize,
        dt: f64,
    ) -> ReferenceTrajectory {
        if let ReferenceSpec::Overtake { .. } = self.spec {
            self.update_overtake(t, ego, obstacles);
        }
        let speed = self.spec.speed();
        let states = (0..=horizon)
            .map(|k| {
                let tk = k as f64 * dt;
                VehicleState::new(ego.x + speed * tk, self.ramp.at(t + tk), speed)
            })
            .collect();
        ReferenceTrajectory { states }
    }

    fn update_overtake(&mut self, t: f64, ego: &VehicleState, obstacles: &[Obstacle]) {
        let ReferenceSpec::Overtake {
            lane,
            passing_lane,
            speed,
            trigger_gap,
            return_gap,
            duration,
        } = self.spec
        else {
            return;
        };
        let home = self.lanes.centers[lane];
        let pass = self.lanes.centers[passing_lane];
        let half = 0.5 * self.lanes.width;
        let current = self.ramp.at(t);
        match self.passing {
            None => {
                let blocker = obstacles
                    .iter()
                    .filter(|o| (o.position[1] - home).abs() < half && o.velocity[0] < speed)
                    .filter(|o| {
                        let gap = o.position[0] - ego.x;
                        gap > 0.0 && gap < trigger_gap
                    })
                    .min_by(|a, b| a.position[0].total_cmp(&b.position[0]));
                if let Some(b) = blocker {
                    self.passing = Some(b.id);
                    self.ramp = Ramp {
                        from: current,
                        to: pass,
                        start: t,
                        duration,
                    };
                }
            }
            Some(id) => {
                let cleared = obstacles
                    .iter()
                    .find(|o| o.id == id)
                    .is_none_or(|o| ego.x - o.position[0] > return_gap);
                if cleared {
                    self.passing = None;
                    self.ramp = Ramp {
                        from: current,
                        to: home,
                        start: t,
                        duration,
                    };
                }
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scenario {
    pub name: String,
    pub ego: VehicleState,
    #[serde(default)]
    pub obstacles: Vec<Obstacle>,
    pub lanes: LaneGeometry,
    pub reference: ReferenceSpec,
    /// Simulated time (s).
    pub duration: f64,
    pub dt: f64,
    /// Recorded obstacle tracks replacing constant-velocity propagation.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub replay: Vec<ReplayTrack>,
}

impl Scenario {
    /// Number of control ticks, `duration/dt`.
    pub fn steps(&self) -> usize {
        (self.duration / self.dt).round() as usize
    }

    pub fn validate(&self) -> Result<()> {
        self.lanes.validate()?;
        if !(self.dt.is_finite() && self.dt > 0.0) {
            return Err(invalid("scenario.dt", "must be positive"));
        }
        if !(self.duration.is_finite() && self.duration > 0.0) {
            return Err(invalid("scenario.duration", "must be positive"));
        }
        let ratio = self.duration / self.dt;
        if (ratio - ratio.round()).abs() > 1e-9 * ratio.max(1.0) {
            return Err(invalid(
                "scenario.duration",
                format!(
                    "{} s is not a whole number of {} s ticks",
                    self.duration, self.dt
                ),
            ));
        }
        if !self.ego.is_finite() || self.ego.v < 0.0 {
            return Err(invalid("scenario.ego", "must be finite with v >= 0"));
        }
        let (lo, hi) = self.lanes.band();
        for o in &self.obstacles {
            o.validate()?;
            if o.position[1] < lo || o.position[1] > hi {
                return Err(invalid(
                    format!("obstacle[{}].position", o.id),
                    format!(
                        "y = {} outside the drivable band [{lo}, {hi}]",
                        o.position[1]
                    ),
                ));
            }
        }
        let mut ids: Vec<u32> = self.obstacles.iter().map(|o| o.id).collect();
        ids.extend(self.replay.iter().map(|r| r.id));
        ids.sort_unstable();
        if ids.windows(2).any(|w| w[0] == w[1]) {
            return Err(invalid("scenario.obstacles", "obstacle ids must be unique"));
        }
        self.reference.validate(&self.lanes)
    }

    pub fn obstacle_ids(&self) -> Vec<u32> {
        self.obstacles
            .iter()
            .map(|o| o.id)
            .chain(self.replay.iter().map(|r| r.id))
            .collect()
    }
}

fn two_lanes() -> LaneGeometry {
    LaneGeometry::new(vec![1.75, 5.25], 3.5)
}

fn hdv(id: u32, x: f64, y: f64, v: f64) -> Obstacle {
    Obstacle::new(id, [x, y], [v, 0.0])
}

/// Lane change from lane 1 to lane 2 past a slow vehicle, with a second
/// vehicle already in the target lane.
pub fn scenario1() -> Scenario {
    Scenario {
        name: "scenario1".into(),
        ego: VehicleState::new(0.0, 1.75, 30.0),
        obstacles: vec![hdv(1, 50.0, 1.75, 12.0), hdv(2, 40.0, 5.25, 20.0)],
        lanes: two_lanes(),
        reference: ReferenceSpec::LaneChange {
            from: 0,
            to: 1,
            speed: 30.0,
            start: 0.0,
            duration: 3.0,
        },
        duration: 15.0,
        dt: 0.1,
        replay: Vec::new(),
    }
}

/// Two-lane highway: the ego cruises at 35 m/s in the inner lane behind two
/// 15 m/s vehicles; the outer lane carries a 30 m/s and a 15 m/s vehicle.
/// The reference only keeps the inner lane, so any overtaking comes from the
/// planner itself.
pub fn scenario2() -> Scenario {
    Scenario {
        name: "scenario2".into(),
        ego: VehicleState::new(0.0, 1.75, 35.0),
        obstacles: vec![
            hdv(1, 50.0, 1.75, 15.0),
            hdv(2, 80.0, 1.75, 15.0),
            hdv(3, 40.0, 5.25, 30.0),
            hdv(4, 100.0, 5.25, 15.0),
        ],
        lanes: two_lanes(),
        reference: ReferenceSpec::LaneKeep {
            lane: 0,
            speed: 35.0,
        },
        duration: 20.0,
        dt: 0.1,
        replay: Vec::new(),
    }
}

/// Fast ego among three vehicles with uncertain accelerations.
pub fn uncertainty() -> Scenario {
    Scenario {
        name: "uncertainty".into(),
        ego: VehicleState::new(5.0, 1.75, 45.0),
        obstacles: vec![
            hdv(1, 55.0, 1.75, 15.0),
            hdv(2, 45.0, 5.25, 30.0),
            hdv(3, 85.0, 1.75, 15.0),
        ],
        lanes: two_lanes(),
        reference: ReferenceSpec::LaneKeep {
            lane: 0,
            speed: 45.0,
        },
        duration: 10.0,
        dt: 0.1,
        replay: Vec::new(),
    }
}

/// Single leading vehicle overtaken through a scheduled lane switch.
pub fn overtake() -> Scenario {
    Scenario {
        name: "overtake".into(),
        ego: VehicleState::new(0.0, 1.75, 30.0),
        obstacles: vec![hdv(1, 40.0, 1.75, 20.0)],
        lanes: two_lanes(),
        reference: ReferenceSpec::Overtake {
            lane: 0,
            passing_lane: 1,
            speed: 30.0,
            trigger_gap: 35.0,
            return_gap: 15.0,
            duration: 3.0,
        },
        duration: 15.0,
        dt: 0.1,
        replay: Vec::new(),
    }
}

/// Three-lane highway with five surrounding vehicles: two ahead, one behind,
/// one alongside in the left lane and one ahead in the left lane.
pub fn highway() -> Scenario {
    Scenario {
        name: "highway".into(),
        ego: VehicleState::new(0.0, 5.25, 30.0),
        obstacles: vec![
            hdv(2, 45.0, 5.25, 22.0),
            hdv(3, 30.0, 1.75, 24.0),
            hdv(4, -30.0, 5.25, 30.0),
            hdv(5, 5.0, 8.75, 29.0),
            hdv(6, 80.0, 8.75, 22.0),
        ],
        lanes: LaneGeometry::new(vec![1.75, 5.25, 8.75], 3.5),
        reference: ReferenceSpec::LaneKeep {
            lane: 1,
            speed: 30.0,
        },
        duration: 15.0,
        dt: 0.1,
        replay: Vec::new(),
    }
}

pub const PRESETS: [&str; 5] = [
    "scenario1",
    "scenario2",
    "uncertainty",
    "overtake",
    "highway",
];

pub fn preset(name: &str) -> Result<Scenario> {
    match name {
        "scenario1" => Ok(scenario1()),
        "scenario2" => Ok(scenario2()),
        "uncertainty" => Ok(uncertainty()),
        "overtake" => Ok(overtake()),
        "highway" => Ok(highway()),
        _ => Err(Error::Unknown {
            kind: "scenario preset",
            name: name.to_string(),
        }),
    }
}
