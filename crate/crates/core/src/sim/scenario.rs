//! Scenario files: route, ego start, scripted agents and the planner surrogate script.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::dynamics::VehicleState;
use crate::geometry::{Point, Polyline};
use crate::potential::ObstacleClass;

use super::SimError;

pub const SCHEMA: &str = "pfmpc-scenario/1";

/// A polyline given either point by point or as a chain of straights and arcs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum PathSpec {
    Points {
        points: Vec<Point>,
    },
    Segments {
        start: Point,
        heading_deg: f64,
        #[serde(default = "default_spacing")]
        spacing: f64,
        segments: Vec<Segment>,
    },
}

fn default_spacing() -> f64 {
    1.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum Segment {
    Straight {
        length: f64,
    },
    /// Positive `angle_deg` turns left.
    Arc {
        radius: f64,
        angle_deg: f64,
    },
}

impl PathSpec {
    pub fn resolve(&self) -> Result<Vec<Point>, SimError> {
        match self {
            PathSpec::Points { points } => Ok(points.clone()),
            PathSpec::Segments {
                start,
                heading_deg,
                spacing,
                segments,
            } => {
                if !(*spacing > 0.0) {
                    return Err(SimError::Scenario("path spacing must be > 0".into()));
                }
                let mut pts = vec![*start];
                let mut p = *start;
                let mut h = heading_deg.to_radians();
                for seg in segments {
                    match *seg {
                        Segment::Straight { length } => {
                            let n = (length / spacing).ceil().max(1.0) as usize;
                            let ds = length / n as f64;
                            for _ in 0..n {
                                p = [p[0] + ds * h.cos(), p[1] + ds * h.sin()];
                                pts.push(p);
                            }
                        }
                        Segment::Arc { radius, angle_deg } => {
                            if !(radius > 0.0) {
                                return Err(SimError::Scenario("arc radius must be > 0".into()));
                            }
                            let total = angle_deg.to_radians();
                            let side = total.signum();
                            let c = [
                                p[0] - side * radius * h.sin(),
                                p[1] + side * radius * h.cos(),
                            ];
                            let n = (radius * total.abs() / spacing).ceil().max(1.0) as usize;
                            let h0 = h;
                            for i in 1..=n {
                                let hi = h0 + total * i as f64 / n as f64;
                                p = [
                                    c[0] + side * radius * hi.sin(),
                                    c[1] - side * radius * hi.cos(),
                                ];
                                pts.push(p);
                            }
                            h = h0 + total;
                        }
                    }
                }
                Ok(pts)
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EgoStart {
    pub x: f64,
    pub y: f64,
    pub heading_deg: f64,
    #[serde(default)]
    pub speed: f64,
}

impl EgoStart {
    pub fn state(&self) -> VehicleState {
        VehicleState::new(
            self.x,
            self.y,
            self.heading_deg.to_radians(),
            self.speed,
            0.0,
            0.0,
        )
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum AgentMotion {
    ConstantVelocity {
        x: f64,
        y: f64,
        heading_deg: f64,
        #[serde(default)]
        speed: f64,
    },
    /// `[t, x, y, heading_deg]` rows, linearly interpolated and held at the ends.
    Keyframes { frames: Vec<[f64; 4]> },
    /// Travel along a path; `speed_profile` rows are `[t, v]`, linear in between.
    Path {
        path: PathSpec,
        speed_profile: Vec<[f64; 2]>,
        #[serde(default)]
        start_s: f64,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AgentSpec {
    pub id: String,
    pub class: ObstacleClass,
    pub length: f64,
    pub width: f64,
    pub motion: AgentMotion,
}

/// Step schedule: `[t, value]` rows, each value held until the next row.
pub type Schedule = Vec<[f64; 2]>;

pub fn schedule_at(schedule: &[[f64; 2]], t: f64, default: f64) -> f64 {
    schedule
        .iter()
        .take_while(|r| r[0] <= t + 1e-9)
        .last()
        .map_or(default, |r| r[1])
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum FlawKind {
    /// First waypoint pushed `offset` meters further ahead along the path.
    WaypointOffset { offset: f64 },
    /// Waypoints follow `path` instead of the route, leading into the
    /// oncoming agent.
    DeadlockPath { path: PathSpec },
    /// Waypoints follow `path`, which cuts the inside of a turn.
    CornerCut { path: PathSpec },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Flaw {
    pub t_start: f64,
    pub t_end: f64,
    #[serde(flatten)]
    pub kind: FlawKind,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SurrogateSpec {
    pub target_speed: f64,
    pub waypoint_count: usize,
    pub waypoint_spacing: f64,
    /// Distance of the first waypoint ahead of the ego's route projection.
    #[serde(default)]
    pub first_waypoint_distance: f64,
    #[serde(default)]
    pub waypoint_noise_std: f64,
    #[serde(default)]
    pub p_on_road: Schedule,
    #[serde(default)]
    pub p_red_light: Schedule,
    #[serde(default)]
    pub p_stop_junction: Schedule,
    #[serde(default)]
    pub flaws: Vec<Flaw>,
}

/// Red phase of a stop line at route arc length `s`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RedLight {
    pub s: f64,
    pub t_start: f64,
    pub t_end: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioSpec {
    pub schema: String,
    pub name: String,
    #[serde(default)]
    pub description: String,
    pub route: PathSpec,
    pub ego_start: EgoStart,
    #[serde(default)]
    pub agents: Vec<AgentSpec>,
    pub surrogate: SurrogateSpec,
    pub duration_max: f64,
    #[serde(default = "default_success_radius")]
    pub success_radius: f64,
    #[serde(default)]
    pub red_lights: Vec<RedLight>,
}

fn default_success_radius() -> f64 {
    2.0
}

impl ScenarioSpec {
    pub fn from_toml_str(text: &str) -> Result<Self, SimError> {
        let spec: ScenarioSpec =
            toml::from_str(text).map_err(|e| SimError::Scenario(e.to_string()))?;
        spec.validate()?;
        Ok(spec)
    }

    pub fn load(path: &Path) -> Result<Self, SimError> {
        let text = std::fs::read_to_string(path).map_err(|e| SimError::Io {
            path: path.display().to_string(),
            message: e.to_string(),
        })?;
        Self::from_toml_str(&text).map_err(|e| match e {
            SimError::Scenario(m) => SimError::Scenario(format!("{}: {m}", path.display())),
            other => other,
        })
    }

    pub fn validate(&self) -> Result<(), SimError> {
        let bad = |m: String| Err(SimError::Scenario(m));
        if self.schema != SCHEMA {
            return bad(format!(
                "unsupported schema {:?}, expected {SCHEMA:?}",
                self.schema
            ));
        }
        if Polyline::new(&self.route.resolve()?).len() < 2 {
            return bad("route needs at least 2 distinct points".into());
        }
        if !(self.duration_max > 0.0) {
            return bad("duration_max must be > 0".into());
        }
        if !(self.success_radius > 0.0) {
            return bad("success_radius must be > 0".into());
        }
        let s = &self.surrogate;
        if !(s.target_speed >= 0.0) || s.waypoint_count < 2 || !(s.waypoint_spacing > 0.0) {
            return bad(
                "surrogate needs target_speed >= 0, waypoint_count >= 2, spacing > 0".into(),
            );
        }
        if !(s.waypoint_noise_std >= 0.0) {
            return bad("waypoint_noise_std must be >= 0".into());
        }
        for flaw in &s.flaws {
            if let FlawKind::DeadlockPath { path } | FlawKind::CornerCut { path } = &flaw.kind {
                if Polyline::new(&path.resolve()?).len() < 2 {
                    return bad("flaw path needs at least 2 distinct points".into());
                }
            }
        }
        for a in &self.agents {
            if !(a.length > 0.0 && a.width > 0.0) {
                return bad(format!("agent {} needs positive length and width", a.id));
            }
            Agent::new(a)?;
        }
        Ok(())
    }
}

/// Pose and velocity of an agent at one instant.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AgentPose {
    pub center: Point,
    pub heading: f64,
    pub velocity: [f64; 2],
}

#[derive(Debug, Clone)]
enum Motion {
    Constant {
        start: Point,
        heading: f64,
        speed: f64,
    },
    Keyframes(Vec<[f64; 4]>),
    Path {
        line: Polyline,
        profile: Vec<[f64; 2]>,
        start_s: f64,
    },
}

/// A scripted agent with its motion resolved for fast queries.
#[derive(Debug, Clone)]
pub struct Agent {
    pub id: String,
    pub class: ObstacleClass,
    pub length: f64,
    pub width: f64,
    motion: Motion,
}

fn speed_at(profile: &[[f64; 2]], t: f64) -> f64 {
    match profile.iter().position(|r| r[0] > t) {
        None => profile.last().map_or(0.0, |r| r[1]),
        Some(0) => profile[0][1],
        Some(i) => {
            let [t0, v0] = profile[i - 1];
            let [t1, v1] = profile[i];
            v0 + (v1 - v0) * (t - t0) / (t1 - t0)
        }
    }
}

/// Distance travelled by time `t` under a piecewise-linear speed profile
/// (constant before the first and after the last row).
fn distance_at(profile: &[[f64; 2]], t: f64) -> f64 {
    let Some(first) = profile.first() else {
        return 0.0;
    };
    if t <= first[0] {
        return first[1] * t.max(0.0);
    }
    let mut d = first[1] * first[0].max(0.0);
    for w in profile.windows(2) {
        let [t0, v0] = w[0];
        let [t1, v1] = w[1];
        if t <= t0 {
            break;
        }
        let te = t.min(t1);
        let ve = v0 + (v1 - v0) * (te - t0) / (t1 - t0);
        d += 0.5 * (v0 + ve) * (te - t0);
    }
    let last = profile[profile.len() - 1];
    if t > last[0] {
        d += last[1] * (t - last[0]);
    }
    d
}

impl Agent {
    pub fn new(spec: &AgentSpec) -> Result<Self, SimError> {
        let err = |m: &str| SimError::Scenario(format!("agent {}: {m}", spec.id));
        let motion = match &spec.motion {
            AgentMotion::ConstantVelocity {
                x,
                y,
                heading_deg,
                speed,
            } => Motion::Constant {
                start: [*x, *y],
                heading: heading_deg.to_radians(),
                speed: *speed,
            },
            AgentMotion::Keyframes { frames } => {
                if frames.is_empty() {
                    return Err(err("keyframes must not be empty"));
                }
                if frames.windows(2).any(|w| !(w[1][0] > w[0][0])) {
                    return Err(err("keyframe times must increase"));
                }
                Motion::Keyframes(frames.clone())
            }
            AgentMotion::Path {
                path,
                speed_profile,
                start_s,
            } => {
                let line = Polyline::new(&path.resolve()?);
                if line.len() < 2 {
                    return Err(err("path needs at least 2 distinct points"));
                }
                if speed_profile.is_empty() {
                    return Err(err("speed_profile must not be empty"));
                }
                if speed_profile.windows(2).any(|w| !(w[1][0] > w[0][0])) {
                    return Err(err("speed_profile times must increase"));
                }
                Motion::Path {
                    line,
                    profile: speed_profile.clone(),
                    start_s: *start_s,
                }
            }
        };
        Ok(Self {
            id: spec.id.clone(),
            class: spec.class,
            length: spec.length,
            width: spec.width,
            motion,
        })
    }

    pub fn pose_at(&self, t: f64) -> AgentPose {
        match &self.motion {
            Motion::Constant {
                start,
                heading,
                speed,
            } => {
                let (s, c) = heading.sin_cos();
                AgentPose {
                    center: [start[0] + speed * t * c, start[1] + speed * t * s],
                    heading: *heading,
                    velocity: [speed * c, speed * s],
                }
            }
            Motion::Keyframes(frames) => {
                let pose = |f: &[f64; 4]| ([f[1], f[2]], f[3].to_radians());
                let i = frames.iter().position(|f| f[0] > t);
                let (center, heading, velocity) = match i {
                    None => {
                        let (c, h) = pose(&frames[frames.len() - 1]);
                        (c, h, [0.0, 0.0])
                    }
                    Some(0) => {
                        let (c, h) = pose(&frames[0]);
                        (c, h, [0.0, 0.0])
                    }
                    Some(i) => {
                        let a = &frames[i - 1];
                        let b = &frames[i];
                        let span = b[0] - a[0];
                        let u = (t - a[0]) / span;
                        let dh = crate::geometry::normalize_angle((b[3] - a[3]).to_radians());
                        (
                            [a[1] + u * (b[1] - a[1]), a[2] + u * (b[2] - a[2])],
                            a[3].to_radians() + u * dh,
                            [(b[1] - a[1]) / span, (b[2] - a[2]) / span],
                        )
                    }
                };
                AgentPose {
                    center,
                    heading,
                    velocity,
                }
            }
            Motion::Path {
                line,
                profile,
                start_s,
            } => {
                let s = (start_s + distance_at(profile, t)).min(line.length());
                let heading = line.heading_at(s);
                let v = if s >= line.length() {
                    0.0
                } else {
                    speed_at(profile, t)
                };
                AgentPose {
                    center: line.point_at(s),
                    heading,
                    velocity: [v * heading.cos(), v * heading.sin()],
                }
            }
        }
    }
}
