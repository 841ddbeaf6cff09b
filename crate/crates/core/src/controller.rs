//! Per-cycle controllers driven by planner output: the MPC safety controller
//! and a PID / pure-pursuit tracking baseline.

use serde::{Deserialize, Serialize};

use crate::dynamics::{ControlInput, VehicleParams, VehicleState};
use crate::geometry::{normalize_angle, Point, Polyline};
use crate::mpc::{
    modulated_tracking_weights, solve, CostBreakdown, CostContext, MpcConfig, MpcError, MpcSolution,
};
use crate::potential::{
    effective_obstacle_gain, obstacle_potential, select_front_obstacle, PfGains,
};
use crate::reference::{
    build_reference, gate_controls, to_global, GateThresholds, PlannerOutput, ReferenceError,
    ReferenceTrajectory,
};

/// What a controller decided on one cycle, plus diagnostics for the log.
#[derive(Debug, Clone, PartialEq)]
pub struct CycleReport {
    pub control: ControlInput,
    /// Set when the planner output was unusable and a full stop was commanded.
    pub emergency: bool,
    pub red_light_brake: bool,
    pub junction_slow: bool,
    pub k_o: f64,
    pub tracking_weights: [f64; 6],
    /// Obstacle potential at the ego's current position.
    pub f_o: f64,
    pub d_safety: Option<f64>,
    pub breakdown: CostBreakdown,
    pub iterations: usize,
    pub converged: bool,
}

pub trait DrivingController: Send {
    fn control_cycle(
        &mut self,
        ego: &VehicleState,
        planner: &PlannerOutput,
    ) -> Result<CycleReport, MpcError>;
}

/// Planner path as seen from the ego: its position followed by the waypoints.
pub fn corridor_path(ego: &VehicleState, waypoints: &[Point]) -> ReferenceTrajectory {
    let mut states = vec![*ego];
    states.extend(
        waypoints
            .iter()
            .map(|w| VehicleState::new(w[0], w[1], 0.0, 0.0, 0.0, 0.0)),
    );
    ReferenceTrajectory {
        states,
        target_speed: 0.0,
    }
}

fn emergency_report(params: &VehicleParams) -> CycleReport {
    CycleReport {
        control: ControlInput::new(params.u_min[0], 0.0),
        emergency: true,
        red_light_brake: false,
        junction_slow: false,
        k_o: 0.0,
        tracking_weights: [0.0; 6],
        f_o: 0.0,
        d_safety: None,
        breakdown: CostBreakdown::default(),
        iterations: 0,
        converged: false,
    }
}

/// Receding-horizon safety controller. Holds the warm start, the last applied
/// control and any pending junction slow-down between cycles.
#[derive(Debug, Clone)]
pub struct SafetyController {
    pub params: VehicleParams,
    pub gains: PfGains,
    pub mpc: MpcConfig,
    pub gates: GateThresholds,
    previous: Option<MpcSolution>,
    u_prev: ControlInput,
    speed_scale: f64,
}

impl SafetyController {
    pub fn new(
        params: VehicleParams,
        gains: PfGains,
        mpc: MpcConfig,
        gates: GateThresholds,
    ) -> Self {
        Self {
            params,
            gains,
            mpc,
            gates,
            previous: None,
            u_prev: ControlInput::ZERO,
            speed_scale: 1.0,
        }
    }

    pub fn previous_solution(&self) -> Option<&MpcSolution> {
        self.previous.as_ref()
    }

    pub fn reset(&mut self) {
        self.previous = None;
        self.u_prev = ControlInput::ZERO;
        self.speed_scale = 1.0;
    }
}

impl DrivingController for SafetyController {
    fn control_cycle(
        &mut self,
        ego: &VehicleState,
        planner: &PlannerOutput,
    ) -> Result<CycleReport, MpcError> {
        let global = to_global(planner, (ego.px, ego.py, ego.phi));
        let target = global.target_speed * self.speed_scale;
        let reference = match build_reference(
            &global.waypoints,
            ego,
            target,
            self.mpc.horizon,
            self.params.dt,
        ) {
            Ok(r) => r,
            Err(ReferenceError::TooFewWaypoints(_)) | Err(ReferenceError::NonFiniteWaypoint(_)) => {
                self.previous = None;
                self.u_prev = ControlInput::new(self.params.u_min[0], 0.0);
                return Ok(emergency_report(&self.params));
            }
            Err(ReferenceError::BadTargetSpeed(v)) => {
                return Err(MpcError::InvalidConfig(format!("bad target speed {v}")))
            }
        };

        let halfwidth = self.gains.corridor_halfwidth(self.params.width);
        let d_safety = select_front_obstacle(
            ego,
            &corridor_path(ego, &global.waypoints),
            &global.obstacles,
            halfwidth,
        );
        let p = global.p_on_road;
        let ctx = CostContext::new(
            *ego,
            &reference,
            &global.obstacles,
            &self.gains,
            &self.mpc,
            &self.params,
            p,
            self.u_prev,
            d_safety,
        );
        let solution = solve(&ctx, self.previous.as_ref())?;
        let gate = gate_controls(solution.controls[0], &global, &self.gates, &self.params);
        let k_o = effective_obstacle_gain(self.gains.k_base, p);
        let f_o = obstacle_potential(ego.px, ego.py, &global.obstacles, &self.gains, k_o).value;

        self.speed_scale = gate.next_speed_scale;
        self.u_prev = gate.control;
        let report = CycleReport {
            control: gate.control,
            emergency: false,
            red_light_brake: gate.red_light_brake,
            junction_slow: gate.junction_slow(),
            k_o,
            tracking_weights: modulated_tracking_weights(&self.mpc.w_x, p),
            f_o,
            d_safety,
            breakdown: solution.cost_breakdown,
            iterations: solution.iterations,
            converged: solution.converged,
        };
        self.previous = Some(solution);
        Ok(report)
    }
}

/// Baseline tuning (`[baseline]` config section).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BaselineConfig {
    pub kp: f64,
    pub ki: f64,
    pub kd: f64,
    pub integral_limit: f64,
    /// Full brake when the front obstacle is closer than this (center distance, m).
    pub stop_distance: f64,
    pub lookahead_min: f64,
    /// Lookahead grows by this many meters per m/s of speed.
    pub lookahead_gain: f64,
}

impl Default for BaselineConfig {
    fn default() -> Self {
        Self {
            kp: 1.0,
            ki: 0.1,
            kd: 0.0,
            integral_limit: 5.0,
            stop_distance: 8.0,
            lookahead_min: 3.0,
            lookahead_gain: 0.5,
        }
    }
}

/// Longitudinal PID on speed with a hard stop rule, lateral pure pursuit.
#[derive(Debug, Clone)]
pub struct TrackingPid {
    pub params: VehicleParams,
    pub config: BaselineConfig,
    pub gains: PfGains,
    pub gates: GateThresholds,
    integral: f64,
    last_error: Option<f64>,
    speed_scale: f64,
}

impl TrackingPid {
    pub fn new(
        params: VehicleParams,
        config: BaselineConfig,
        gains: PfGains,
        gates: GateThresholds,
    ) -> Self {
        Self {
            params,
            config,
            gains,
            gates,
            integral: 0.0,
            last_error: None,
            speed_scale: 1.0,
        }
    }

    fn pure_pursuit(&self, ego: &VehicleState, path: &Polyline) -> f64 {
        let Some(proj) = path.project(ego.position()) else {
            return 0.0;
        };
        let ld =
            (self.config.lookahead_min + self.config.lookahead_gain * ego.vx.max(0.0)).max(1e-3);
        let target = path.point_at(proj.s + ld);
        let alpha = normalize_angle((target[1] - ego.py).atan2(target[0] - ego.px) - ego.phi);
        let dist = (target[0] - ego.px).hypot(target[1] - ego.py).max(1e-3);
        (2.0 * self.params.wheelbase() * alpha.sin() / dist).atan()
    }
}

impl DrivingController for TrackingPid {
    fn control_cycle(
        &mut self,
        ego: &VehicleState,
        planner: &PlannerOutput,
    ) -> Result<CycleReport, MpcError> {
        let global = to_global(planner, (ego.px, ego.py, ego.phi));
        let path = Polyline::new(&global.waypoints);
        if path.len() < 2 {
            self.integral = 0.0;
            self.last_error = None;
            return Ok(emergency_report(&self.params));
        }
        let dt = self.params.dt;
        let target = global.target_speed * self.speed_scale;
        let error = target - ego.vx;
        let lim = self.config.integral_limit;
        self.integral = (self.integral + error * dt).clamp(-lim, lim);
        let deriv = self.last_error.map_or(0.0, |e| (error - e) / dt);
        self.last_error = Some(error);
        let mut accel =
            self.config.kp * error + self.config.ki * self.integral + self.config.kd * deriv;

        let halfwidth = self.gains.corridor_halfwidth(self.params.width);
        let d_safety = select_front_obstacle(
            ego,
            &corridor_path(ego, &global.waypoints),
            &global.obstacles,
            halfwidth,
        );
        if d_safety.is_some_and(|d| d < self.config.stop_distance) {
            accel = self.params.u_min[0];
            self.integral = 0.0;
        }
        let steer = self.pure_pursuit(ego, &path);
        let control = self.params.clamp_control(ControlInput::new(accel, steer));
        let gate = gate_controls(control, &global, &self.gates, &self.params);
        self.speed_scale = gate.next_speed_scale;

        let p = global.p_on_road;
        let k_o = effective_obstacle_gain(self.gains.k_base, p);
        Ok(CycleReport {
            control: gate.control,
            emergency: false,
            red_light_brake: gate.red_light_brake,
            junction_slow: gate.junction_slow(),
            k_o,
            tracking_weights: [0.0; 6],
            f_o: obstacle_potential(ego.px, ego.py, &global.obstacles, &self.gains, k_o).value,
            d_safety,
            breakdown: CostBreakdown::default(),
            iterations: 0,
            converged: true,
        })
    }
}
