//! Closed-loop run: agents, surrogate, controller, plant, collisions and metrics.

use std::collections::BTreeMap;
use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::config::Config;
use crate::controller::DrivingController;
use crate::dynamics::{step, ControlInput, VehicleState};
use crate::geometry::OrientedBox;
use crate::mpc::CostBreakdown;

use super::metrics::{
    infraction_score, InfractionEvent, InfractionKind, RouteProgress, SimMetrics,
};
use super::scenario::{Agent, AgentPose, ScenarioSpec};
use super::surrogate::Surrogate;
use super::SimError;

/// World settings (`[sim]` config section).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SimConfig {
    pub deadlock_speed: f64,
    pub deadlock_time: f64,
    /// Agents farther than this from the ego are not reported by the surrogate.
    pub perception_range: f64,
}

impl Default for SimConfig {
    fn default() -> Self {
        Self {
            deadlock_speed: 0.1,
            deadlock_time: 30.0,
            perception_range: 50.0,
        }
    }
}

/// One tick of the trajectory log.
#[derive(Debug, Clone, PartialEq)]
pub struct LogRow {
    pub t: f64,
    pub state: VehicleState,
    pub control: ControlInput,
    pub breakdown: CostBreakdown,
    pub f_o: f64,
    pub d_safety: Option<f64>,
    pub k_o: f64,
    pub red_light_brake: bool,
    pub junction_slow: bool,
    pub emergency: bool,
    pub iterations: usize,
    pub converged: bool,
    pub route_completion: f64,
}

pub const LOG_HEADER: [&str; 25] = [
    "t",
    "px",
    "py",
    "phi",
    "vx",
    "vy",
    "omega",
    "accel",
    "steer",
    "cost_total",
    "cost_tracking",
    "cost_smoothness",
    "cost_effort",
    "cost_obstacle",
    "cost_front",
    "cost_bounds",
    "f_o",
    "d_safety",
    "k_o",
    "red_light_brake",
    "junction_slow",
    "emergency",
    "iterations",
    "converged",
    "route_completion",
];

pub fn write_log_csv<W: Write>(rows: &[LogRow], out: W) -> std::io::Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(LOG_HEADER)?;
    let f = |v: f64| format!("{v:.6}");
    let b = |v: bool| if v { "1".to_string() } else { "0".to_string() };
    for r in rows {
        let s = &r.state;
        let c = &r.breakdown;
        w.write_record([
            format!("{:.2}", r.t),
            f(s.px),
            f(s.py),
            f(s.phi),
            f(s.vx),
            f(s.vy),
            f(s.omega),
            f(r.control.accel),
            f(r.control.steer),
            f(c.total()),
            f(c.tracking),
            f(c.smoothness),
            f(c.effort),
            f(c.obstacle),
            f(c.front),
            f(c.bounds),
            f(r.f_o),
            r.d_safety.map(f).unwrap_or_default(),
            f(r.k_o),
            b(r.red_light_brake),
            b(r.junction_slow),
            b(r.emergency),
            r.iterations.to_string(),
            b(r.converged),
            f(r.route_completion),
        ])?;
    }
    w.flush()
}

#[derive(Debug, Clone)]
pub struct SimOutcome {
    pub metrics: SimMetrics,
    pub log: Vec<LogRow>,
}

fn ego_box(x: &VehicleState, cfg: &Config) -> OrientedBox {
    OrientedBox::new(x.position(), x.phi, cfg.vehicle.length, cfg.vehicle.width)
}

/// Runs one scenario to completion, deadlock or timeout.
///
/// A controller or plant failure ends the run early with `valid = false`.
pub fn run(
    scenario: &ScenarioSpec,
    controller: &mut dyn DrivingController,
    config: &Config,
    seed: u64,
    controller_name: &str,
) -> Result<SimOutcome, SimError> {
    scenario.validate()?;
    let params = &config.vehicle;
    let dt = params.dt;
    let route = scenario.route.resolve()?;
    let agents: Vec<Agent> = scenario
        .agents
        .iter()
        .map(Agent::new)
        .collect::<Result<_, _>>()?;
    let mut surrogate = Surrogate::new(
        &scenario.surrogate,
        &route,
        seed,
        config.sim.perception_range,
    )?;
    let mut progress = RouteProgress::new(&route);

    let mut ego = scenario.ego_start.state();
    let mut events = Vec::new();
    let mut in_contact = vec![false; agents.len()];
    let mut min_by_agent: BTreeMap<String, f64> = BTreeMap::new();
    let mut red_done = vec![false; scenario.red_lights.len()];
    let mut log = Vec::new();
    let mut stall = 0.0;
    let mut deadlock = false;
    let mut success = false;
    let mut abort_reason = None;
    let mut last_s = 0.0;
    let mut t = 0.0;

    let steps = (scenario.duration_max / dt).round() as usize;
    for k in 0..=steps {
        t = k as f64 * dt;
        let poses: Vec<(Agent, AgentPose)> =
            agents.iter().map(|a| (a.clone(), a.pose_at(t))).collect();

        let eb = ego_box(&ego, config);
        for (i, (a, pose)) in poses.iter().enumerate() {
            let ab = OrientedBox::new(pose.center, pose.heading, a.length, a.width);
            let overlap = eb.overlaps(&ab);
            if overlap && !in_contact[i] {
                events.push(InfractionEvent {
                    kind: InfractionKind::Collision(a.class),
                    time: t,
                    position: ego.position(),
                    agent: Some(a.id.clone()),
                });
            }
            in_contact[i] = overlap;
            let d = eb.distance(&ab);
            let e = min_by_agent.entry(a.id.clone()).or_insert(f64::INFINITY);
            *e = e.min(d);
        }

        let s = progress.update(ego.position());
        for (i, light) in scenario.red_lights.iter().enumerate() {
            let red = t >= light.t_start && t < light.t_end;
            if !red_done[i] && red && last_s < light.s && s >= light.s {
                red_done[i] = true;
                events.push(InfractionEvent {
                    kind: InfractionKind::RedLight,
                    time: t,
                    position: ego.position(),
                    agent: None,
                });
            }
        }
        last_s = s;
        if progress.fraction() > 0.9
            && progress.distance_to_end(ego.position()) <= scenario.success_radius
        {
            success = true;
            break;
        }

        if ego.speed() < config.sim.deadlock_speed {
            stall += dt;
        } else {
            stall = 0.0;
        }
        if stall >= config.sim.deadlock_time - 1e-9 {
            deadlock = true;
            break;
        }
        if k == steps {
            break;
        }

        let planner = surrogate.emit(t, &ego, &poses, &config.pf);
        let report = match controller.control_cycle(&ego, &planner) {
            Ok(r) => r,
            Err(e) => {
                abort_reason = Some(format!("controller failed at t={t:.2}: {e}"));
                break;
            }
        };
        let control = params.clamp_control(report.control);
        log.push(LogRow {
            t,
            state: ego,
            control,
            breakdown: report.breakdown,
            f_o: report.f_o,
            d_safety: report.d_safety,
            k_o: report.k_o,
            red_light_brake: report.red_light_brake,
            junction_slow: report.junction_slow,
            emergency: report.emergency,
            iterations: report.iterations,
            converged: report.converged,
            route_completion: progress.fraction(),
        });
        match step(&ego, &control, params) {
            Ok(mut next) => {
                // The plant does not reverse under braking.
                if next.vx < 0.0 {
                    next.vx = 0.0;
                }
                ego = next;
            }
            Err(e) => {
                abort_reason = Some(format!("plant failed at t={t:.2}: {e}"));
                break;
            }
        }
    }

    let rc = if success { 1.0 } else { progress.fraction() };
    let is = infraction_score(&events, &config.infractions);
    let min_obstacle_distance = min_by_agent.values().copied().reduce(f64::min);
    Ok(SimOutcome {
        metrics: SimMetrics {
            name: scenario.name.clone(),
            controller: controller_name.to_string(),
            seed,
            route_completion: rc,
            infraction_score: is,
            driving_score: rc * is,
            events,
            min_obstacle_distance,
            min_distance_by_agent: min_by_agent,
            deadlock: deadlock && !success,
            success,
            sim_time: t,
            valid: abort_reason.is_none(),
            abort_reason,
            wall_time_s: None,
        },
        log,
    })
}
