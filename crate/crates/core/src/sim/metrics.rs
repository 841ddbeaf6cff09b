//! Route completion, infraction penalties and the per-run metrics record.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::geometry::{Point, Polyline};
use crate::potential::ObstacleClass;

use super::surrogate::PathTracker;

/// Per-event score multipliers (`[infractions]` config section).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct InfractionTable {
    pub pedestrian: f64,
    pub cyclist: f64,
    pub vehicle: f64,
    #[serde(rename = "static")]
    pub static_obstacle: f64,
    pub red_light: f64,
}

impl Default for InfractionTable {
    fn default() -> Self {
        Self {
            pedestrian: 0.50,
            cyclist: 0.60,
            vehicle: 0.60,
            static_obstacle: 0.65,
            red_light: 0.70,
        }
    }
}

impl InfractionTable {
    pub fn validate(&self) -> Result<(), String> {
        let all = [
            self.pedestrian,
            self.cyclist,
            self.vehicle,
            self.static_obstacle,
            self.red_light,
        ];
        if all.iter().any(|v| !(0.0..=1.0).contains(v)) {
            return Err("infraction multipliers must lie in [0, 1]".into());
        }
        Ok(())
    }

    pub fn multiplier(&self, kind: InfractionKind) -> f64 {
        match kind {
            InfractionKind::Collision(ObstacleClass::Pedestrian) => self.pedestrian,
            InfractionKind::Collision(ObstacleClass::Cyclist) => self.cyclist,
            InfractionKind::Collision(ObstacleClass::Vehicle) => self.vehicle,
            InfractionKind::Collision(ObstacleClass::Static) => self.static_obstacle,
            InfractionKind::RedLight => self.red_light,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InfractionKind {
    Collision(ObstacleClass),
    RedLight,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InfractionEvent {
    pub kind: InfractionKind,
    pub time: f64,
    pub position: Point,
    /// Agent involved, for collisions.
    pub agent: Option<String>,
}

/// Product of the per-event multipliers; 1.0 with no events.
pub fn infraction_score(events: &[InfractionEvent], table: &InfractionTable) -> f64 {
    events.iter().map(|e| table.multiplier(e.kind)).product()
}

/// Monotone route progress from a sequence of ego positions.
#[derive(Debug, Clone)]
pub struct RouteProgress {
    tracker: PathTracker,
    best: f64,
}

impl RouteProgress {
    pub fn new(route: &[Point]) -> Self {
        Self {
            tracker: PathTracker::new(Polyline::new(route), 5.0, 10.0),
            best: 0.0,
        }
    }

    pub fn length(&self) -> f64 {
        self.tracker.line.length()
    }

    pub fn update(&mut self, p: Point) -> f64 {
        let s = self.tracker.update(p);
        self.best = self.best.max(s);
        self.best
    }

    pub fn distance_to_end(&self, p: Point) -> f64 {
        let end = self.tracker.line.points()[self.tracker.line.len() - 1];
        (p[0] - end[0]).hypot(p[1] - end[1])
    }

    pub fn fraction(&self) -> f64 {
        let len = self.length();
        if len <= 0.0 {
            return 0.0;
        }
        (self.best / len).clamp(0.0, 1.0)
    }
}

/// Arc-length fraction of `route` covered by the trace, never decreasing.
pub fn route_completion(route: &[Point], trace: &[Point]) -> f64 {
    let mut rp = RouteProgress::new(route);
    for &p in trace {
        rp.update(p);
    }
    rp.fraction()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimMetrics {
    pub name: String,
    pub controller: String,
    pub seed: u64,
    pub route_completion: f64,
    pub infraction_score: f64,
    pub driving_score: f64,
    pub events: Vec<InfractionEvent>,
    /// Smallest box-to-box gap to any agent; `None` without agents.
    pub min_obstacle_distance: Option<f64>,
    pub min_distance_by_agent: BTreeMap<String, f64>,
    pub deadlock: bool,
    pub success: bool,
    pub sim_time: f64,
    pub valid: bool,
    pub abort_reason: Option<String>,
    pub wall_time_s: Option<f64>,
}

impl SimMetrics {
    pub fn collisions(&self) -> usize {
        self.events
            .iter()
            .filter(|e| matches!(e.kind, InfractionKind::Collision(_)))
            .count()
    }
}
