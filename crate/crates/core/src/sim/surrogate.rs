//! Scripted stand-in for the learned planner: emits waypoints, detected
//! obstacles and probability signals in the ego frame.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::dynamics::VehicleState;
use crate::geometry::{Point, Polyline};
use crate::potential::{ObstacleDescriptor, PfGains};
use crate::reference::{to_ego, PlannerOutput};

use super::scenario::{schedule_at, Agent, AgentPose, FlawKind, SurrogateSpec};
use super::SimError;

/// Tracks the ego's arc-length position along a path without jumping between
/// laps or nearby branches.
#[derive(Debug, Clone)]
pub struct PathTracker {
    pub line: Polyline,
    s: Option<f64>,
    back: f64,
    ahead: f64,
}

impl PathTracker {
    pub fn new(line: Polyline, back: f64, ahead: f64) -> Self {
        Self {
            line,
            s: None,
            back,
            ahead,
        }
    }

    pub fn update(&mut self, p: Point) -> f64 {
        let proj = match self.s {
            None => self.line.project(p),
            Some(s) => self.line.project_window(p, s - self.back, s + self.ahead),
        };
        let s = proj.map_or(0.0, |q| q.s);
        self.s = Some(s);
        s
    }
}

pub struct Surrogate {
    spec: SurrogateSpec,
    route: PathTracker,
    flaw_paths: Vec<Option<PathTracker>>,
    rng: ChaCha8Rng,
    noise: Option<Normal<f64>>,
    perception_range: f64,
}

impl Surrogate {
    pub fn new(
        spec: &SurrogateSpec,
        route: &[Point],
        seed: u64,
        perception_range: f64,
    ) -> Result<Self, SimError> {
        let flaw_paths = spec
            .flaws
            .iter()
            .map(|f| match &f.kind {
                FlawKind::DeadlockPath { path } | FlawKind::CornerCut { path } => Ok(Some(
                    PathTracker::new(Polyline::new(&path.resolve()?), 2.0, 10.0),
                )),
                FlawKind::WaypointOffset { .. } => Ok(None),
            })
            .collect::<Result<Vec<_>, SimError>>()?;
        let noise = if spec.waypoint_noise_std > 0.0 {
            Some(
                Normal::new(0.0, spec.waypoint_noise_std)
                    .map_err(|e| SimError::Scenario(e.to_string()))?,
            )
        } else {
            None
        };
        Ok(Self {
            spec: spec.clone(),
            route: PathTracker::new(Polyline::new(route), 2.0, 10.0),
            flaw_paths,
            rng: ChaCha8Rng::seed_from_u64(seed),
            noise,
            perception_range,
        })
    }

    pub fn emit(
        &mut self,
        t: f64,
        ego: &VehicleState,
        agents: &[(Agent, AgentPose)],
        gains: &PfGains,
    ) -> PlannerOutput {
        let p = ego.position();
        let route_s = self.route.update(p);
        let mut offset = self.spec.first_waypoint_distance;
        let mut source: Option<usize> = None;
        for (i, flaw) in self.spec.flaws.iter().enumerate() {
            if t < flaw.t_start || t >= flaw.t_end {
                continue;
            }
            match flaw.kind {
                FlawKind::WaypointOffset { offset: o } => offset += o,
                _ => source = Some(i),
            }
        }
        let (line, s0) = match source {
            Some(i) => {
                let tracker = self.flaw_paths[i]
                    .as_mut()
                    .expect("path flaw has a tracker");
                let s = tracker.update(p);
                (&tracker.line, s)
            }
            None => (&self.route.line, route_s),
        };

        let mut waypoints = Vec::with_capacity(self.spec.waypoint_count);
        for i in 0..self.spec.waypoint_count {
            let s = s0 + offset + i as f64 * self.spec.waypoint_spacing;
            let mut w = line.point_at(s);
            if let Some(n) = &self.noise {
                let h = line.heading_at(s);
                let e = n.sample(&mut self.rng);
                w = [w[0] - e * h.sin(), w[1] + e * h.cos()];
            }
            waypoints.push(w);
        }

        let obstacles = agents
            .iter()
            .filter(|(_, pose)| {
                (pose.center[0] - p[0]).hypot(pose.center[1] - p[1]) <= self.perception_range
            })
            .map(|(a, pose)| {
                ObstacleDescriptor::from_footprint(
                    a.class,
                    pose.center,
                    pose.heading,
                    a.length,
                    a.width,
                    pose.velocity,
                    gains,
                )
            })
            .collect();

        let global = PlannerOutput {
            waypoints,
            obstacles,
            p_red_light: schedule_at(&self.spec.p_red_light, t, 0.0),
            p_stop_junction: schedule_at(&self.spec.p_stop_junction, t, 0.0),
            p_on_road: schedule_at(&self.spec.p_on_road, t, 1.0),
            target_speed: self.spec.target_speed,
        };
        to_ego(&global, (ego.px, ego.py, ego.phi))
    }
}
