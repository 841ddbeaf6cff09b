//! Receding-horizon trajectory optimization over the dynamic bicycle model.
//!
//! The objective combines state tracking, control smoothness, control effort,
//! the elliptic obstacle potential and the front-obstacle cost, plus a
//! quadratic penalty on state-bound violations. It is minimized over the
//! control sequence by single shooting: the state trajectory is always the
//! rollout of the controls, gradients come from an adjoint sweep through the
//! analytic model Jacobians, and control bounds are kept by projection.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dynamics::{
    jacobians, rollout, ControlInput, DynamicsError, VehicleParams, VehicleState, CONTROL_DIM,
    STATE_DIM,
};
use crate::geometry::normalize_angle;
use crate::potential::{
    effective_obstacle_gain, obstacle_potential, FrontSpeed, ObstacleDescriptor, ObstacleMotion,
    PfGains,
};
use crate::reference::ReferenceTrajectory;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MpcError {
    #[error("control sequence has {got} entries, horizon is {expected}")]
    HorizonMismatch { expected: usize, got: usize },
    #[error(transparent)]
    Dynamics(#[from] DynamicsError),
    #[error("invalid MPC configuration: {0}")]
    InvalidConfig(String),
}

/// Solver and cost-weight settings (`[mpc]` config section).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MpcConfig {
    pub horizon: usize,
    /// Tracking weights for `[px, py, phi, vx, vy, omega]`; the first three are
    /// scaled by `p_on_road + 0.5` each cycle.
    pub w_x: [f64; STATE_DIM],
    pub w_du: [f64; CONTROL_DIM],
    pub w_u: [f64; CONTROL_DIM],
    pub max_iters: usize,
    /// Stop when the largest scaled control update falls below this.
    pub step_tolerance: f64,
    /// Stop when the relative cost decrease of an iteration falls below this.
    pub cost_tolerance: f64,
    /// Sufficient-decrease constant of the backtracking line search.
    pub armijo_c: f64,
    pub backtrack_factor: f64,
    pub max_backtracks: usize,
    /// Weight of the quadratic penalty on state-bound violations.
    pub bound_weight: f64,
    /// Extra constant-steer initial guesses tried alongside the warm and cold starts.
    pub seed_steers: Vec<f64>,
}

impl Default for MpcConfig {
    fn default() -> Self {
        Self {
            horizon: 20,
            w_x: [15.0, 15.0, 10.0, 5.0, 1.0, 1.0],
            w_du: [1.0, 10.0],
            w_u: [0.5, 0.5],
            max_iters: 300,
            step_tolerance: 1e-6,
            cost_tolerance: 1e-9,
            armijo_c: 1e-4,
            backtrack_factor: 0.5,
            max_backtracks: 40,
            bound_weight: 1000.0,
            seed_steers: vec![],
        }
    }
}

impl MpcConfig {
    pub fn validate(&self) -> Result<(), MpcError> {
        let bad = |m: &str| Err(MpcError::InvalidConfig(m.to_string()));
        if self.horizon < 2 {
            return bad("horizon must be >= 2");
        }
        let weights = self.w_x.iter().chain(&self.w_du).chain(&self.w_u);
        if weights.into_iter().any(|w| !(w.is_finite() && *w >= 0.0)) {
            return bad("weights must be finite and >= 0");
        }
        if !(self.step_tolerance > 0.0 && self.cost_tolerance > 0.0) {
            return bad("tolerances must be > 0");
        }
        if !(self.armijo_c > 0.0 && self.armijo_c < 1.0) {
            return bad("armijo_c must lie in (0, 1)");
        }
        if !(self.backtrack_factor > 0.0 && self.backtrack_factor < 1.0) {
            return bad("backtrack_factor must lie in (0, 1)");
        }
        if !(self.bound_weight >= 0.0) {
            return bad("bound_weight must be >= 0");
        }
        Ok(())
    }
}

/// Tracking weights with the position and yaw entries scaled by `p_on_road + 0.5`.
pub fn modulated_tracking_weights(w_x: &[f64; STATE_DIM], p_on_road: f64) -> [f64; STATE_DIM] {
    let mut w = *w_x;
    for wi in w.iter_mut().take(3) {
        *wi *= p_on_road + 0.5;
    }
    w
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct CostBreakdown {
    pub tracking: f64,
    pub smoothness: f64,
    pub effort: f64,
    /// Obstacle potential summed over the predicted positions.
    pub obstacle: f64,
    /// Front-obstacle cost summed over the horizon.
    pub front: f64,
    /// State-bound penalty.
    pub bounds: f64,
}

impl CostBreakdown {
    pub fn total(&self) -> f64 {
        self.tracking + self.smoothness + self.effort + self.obstacle + self.front + self.bounds
    }
}

/// Everything the objective depends on besides the control sequence.
#[derive(Debug, Clone)]
pub struct CostContext<'a> {
    pub state0: VehicleState,
    pub reference: &'a ReferenceTrajectory,
    /// Obstacles in the global frame at the current time.
    pub obstacles: &'a [ObstacleDescriptor],
    pub gains: &'a PfGains,
    pub config: &'a MpcConfig,
    pub params: &'a VehicleParams,
    /// Effective obstacle gain before class scaling.
    pub k_o: f64,
    pub tracking_weights: [f64; STATE_DIM],
    /// Distance to the front obstacle, if any.
    pub d_safety: Option<f64>,
    /// Control applied on the previous cycle.
    pub u_prev: ControlInput,
}

impl<'a> CostContext<'a> {
    /// Builds a context applying the on-road modulation of the obstacle gain and
    /// tracking weights.
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        state0: VehicleState,
        reference: &'a ReferenceTrajectory,
        obstacles: &'a [ObstacleDescriptor],
        gains: &'a PfGains,
        config: &'a MpcConfig,
        params: &'a VehicleParams,
        p_on_road: f64,
        u_prev: ControlInput,
        d_safety: Option<f64>,
    ) -> Self {
        Self {
            state0,
            reference,
            obstacles,
            gains,
            config,
            params,
            k_o: effective_obstacle_gain(gains.k_base, p_on_road),
            tracking_weights: modulated_tracking_weights(&config.w_x, p_on_road),
            d_safety,
            u_prev,
        }
    }

    pub fn horizon(&self) -> usize {
        self.config.horizon
    }

    fn obstacles_at(&self, k: usize, buf: &mut Vec<ObstacleDescriptor>) {
        buf.clear();
        let t = k as f64 * self.params.dt;
        match self.gains.obstacle_motion {
            ObstacleMotion::ConstantVelocity => {
                buf.extend(self.obstacles.iter().map(|o| o.advanced(t)))
            }
            ObstacleMotion::Frozen => buf.extend_from_slice(self.obstacles),
        }
    }

    fn front_scale(&self) -> f64 {
        match self.d_safety {
            Some(d) => self.gains.k_c / (d + self.gains.d_epsilon),
            None => 0.0,
        }
    }

    fn front_speed(&self, states: &[VehicleState], k: usize) -> f64 {
        match self.gains.front_speed {
            FrontSpeed::Current => self.state0.vx,
            FrontSpeed::Predicted => states[k].vx,
        }
    }

    fn reference_state(&self, k: usize) -> &VehicleState {
        let n = self.reference.states.len();
        &self.reference.states[k.min(n - 1)]
    }

    /// Stage cost on a state and its gradient (accumulated into `grad`).
    fn state_terms(
        &self,
        k: usize,
        x: &VehicleState,
        obs: &[ObstacleDescriptor],
        br: &mut CostBreakdown,
        grad: Option<&mut [f64; STATE_DIM]>,
    ) {
        let r = self.reference_state(k).to_array();
        let xa = x.to_array();
        let w = &self.tracking_weights;
        let mut g = [0.0; STATE_DIM];
        for i in 0..STATE_DIM {
            let mut e = r[i] - xa[i];
            if i == 2 {
                e = normalize_angle(e);
            }
            br.tracking += w[i] * e * e;
            g[i] -= 2.0 * w[i] * e;
        }

        let pf = obstacle_potential(x.px, x.py, obs, self.gains, self.k_o);
        br.obstacle += pf.value;
        g[0] += pf.grad[0];
        g[1] += pf.grad[1];

        let bw = self.config.bound_weight;
        if bw > 0.0 {
            for i in 0..STATE_DIM {
                let hi = xa[i] - self.params.x_max[i];
                let lo = self.params.x_min[i] - xa[i];
                if hi > 0.0 {
                    br.bounds += bw * hi * hi;
                    g[i] += 2.0 * bw * hi;
                } else if lo > 0.0 {
                    br.bounds += bw * lo * lo;
                    g[i] -= 2.0 * bw * lo;
                }
            }
        }
        if let Some(out) = grad {
            for i in 0..STATE_DIM {
                out[i] += g[i];
            }
        }
    }

    fn evaluate_states(&self, controls: &[ControlInput], states: &[VehicleState]) -> CostBreakdown {
        let mut br = CostBreakdown::default();
        let mut obs = Vec::with_capacity(self.obstacles.len());
        for (k, x) in states.iter().enumerate() {
            self.obstacles_at(k, &mut obs);
            self.state_terms(k, x, &obs, &mut br, None);
        }
        let fc = self.front_scale();
        let mut prev = self.u_prev.to_array();
        for (k, u) in controls.iter().enumerate() {
            let ua = u.to_array();
            for j in 0..CONTROL_DIM {
                let du = ua[j] - prev[j];
                br.smoothness += self.config.w_du[j] * du * du;
                br.effort += self.config.w_u[j] * ua[j] * ua[j];
            }
            br.front += fc * ua[0] * self.front_speed(states, k);
            prev = ua;
        }
        br
    }

    fn check_len(&self, controls: &[ControlInput]) -> Result<(), MpcError> {
        if controls.len() != self.horizon() {
            return Err(MpcError::HorizonMismatch {
                expected: self.horizon(),
                got: controls.len(),
            });
        }
        Ok(())
    }

    /// Total cost and its per-term breakdown.
    pub fn evaluate_cost(
        &self,
        controls: &[ControlInput],
    ) -> Result<(f64, CostBreakdown), MpcError> {
        self.check_len(controls)?;
        let states = rollout(&self.state0, controls, self.params)?;
        let br = self.evaluate_states(controls, &states);
        Ok((br.total(), br))
    }

    /// Cost, breakdown and gradient w.r.t. each control, by an adjoint sweep.
    pub fn cost_gradient(
        &self,
        controls: &[ControlInput],
    ) -> Result<(f64, CostBreakdown, Vec<[f64; CONTROL_DIM]>), MpcError> {
        self.check_len(controls)?;
        let n = controls.len();
        let states = rollout(&self.state0, controls, self.params)?;
        let mut br = CostBreakdown::default();
        let mut obs = Vec::with_capacity(self.obstacles.len());
        let fc = self.front_scale();

        // State-cost gradients for every k.
        let mut gx = vec![[0.0; STATE_DIM]; n + 1];
        for (k, x) in states.iter().enumerate() {
            self.obstacles_at(k, &mut obs);
            self.state_terms(k, x, &obs, &mut br, Some(&mut gx[k]));
        }

        let mut gu = vec![[0.0; CONTROL_DIM]; n];
        let mut prev = self.u_prev.to_array();
        for k in 0..n {
            let ua = controls[k].to_array();
            for j in 0..CONTROL_DIM {
                let du = ua[j] - prev[j];
                br.smoothness += self.config.w_du[j] * du * du;
                br.effort += self.config.w_u[j] * ua[j] * ua[j];
                gu[k][j] += 2.0 * self.config.w_du[j] * du + 2.0 * self.config.w_u[j] * ua[j];
                if k > 0 {
                    gu[k - 1][j] -= 2.0 * self.config.w_du[j] * du;
                }
            }
            br.front += fc * ua[0] * self.front_speed(&states, k);
            gu[k][0] += fc * self.front_speed(&states, k);
            if self.gains.front_speed == FrontSpeed::Predicted {
                gx[k][3] += fc * ua[0];
            }
            prev = ua;
        }

        // Adjoint sweep.
        let mut lambda = gx[n];
        for k in (0..n).rev() {
            let (a, b) = jacobians(&states[k], &controls[k], self.params)?;
            for j in 0..CONTROL_DIM {
                gu[k][j] += (0..STATE_DIM).map(|i| b[i][j] * lambda[i]).sum::<f64>();
            }
            let mut next = gx[k];
            for (j, nj) in next.iter_mut().enumerate() {
                *nj += (0..STATE_DIM).map(|i| a[i][j] * lambda[i]).sum::<f64>();
            }
            lambda = next;
        }
        Ok((br.total(), br, gu))
    }
}

/// Optimized control sequence and its prediction.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MpcSolution {
    pub controls: Vec<ControlInput>,
    pub predicted_states: Vec<VehicleState>,
    pub total_cost: f64,
    pub cost_breakdown: CostBreakdown,
    pub iterations: usize,
    pub converged: bool,
}

impl MpcSolution {
    /// Shifted-left copy of the controls with the last one duplicated, resized to `horizon`.
    pub fn shifted_controls(&self, horizon: usize) -> Vec<ControlInput> {
        let mut c: Vec<ControlInput> = self.controls.iter().skip(1).copied().collect();
        let last = self.controls.last().copied().unwrap_or_default();
        c.resize(horizon, last);
        c
    }
}

fn project(u: [f64; CONTROL_DIM], params: &VehicleParams) -> [f64; CONTROL_DIM] {
    [
        u[0].clamp(params.u_min[0], params.u_max[0]),
        u[1].clamp(params.u_min[1], params.u_max[1]),
    ]
}

struct Descent {
    controls: Vec<ControlInput>,
    cost: f64,
    iterations: usize,
    converged: bool,
}

/// Projected-gradient descent with Barzilai-Borwein step guesses and
/// monotone Armijo backtracking, in control coordinates scaled by the bound range.
fn descend(ctx: &CostContext<'_>, init: Vec<ControlInput>) -> Result<Descent, MpcError> {
    let cfg = ctx.config;
    let params = ctx.params;
    let range: [f64; CONTROL_DIM] =
        std::array::from_fn(|j| (params.u_max[j] - params.u_min[j]).max(1e-9));
    let n = init.len();

    let mut u: Vec<[f64; CONTROL_DIM]> =
        init.iter().map(|c| project(c.to_array(), params)).collect();
    let as_controls = |u: &[[f64; CONTROL_DIM]]| -> Vec<ControlInput> {
        u.iter().map(|&a| ControlInput::from_array(a)).collect()
    };
    let (mut cost, _, mut grad) = ctx.cost_gradient(&as_controls(&u))?;

    let scaled_inf = |g: &[[f64; CONTROL_DIM]]| {
        g.iter()
            .flat_map(|gk| (0..CONTROL_DIM).map(move |j| (gk[j] * range[j]).abs()))
            .fold(0.0, f64::max)
    };
    let gmax = scaled_inf(&grad);
    if gmax == 0.0 {
        return Ok(Descent {
            controls: as_controls(&u),
            cost,
            iterations: 0,
            converged: true,
        });
    }
    // First trial step moves the steepest control by a tenth of its range.
    let mut alpha = 0.1 / gmax;
    let mut iterations = 0;
    let mut converged = false;

    while iterations < cfg.max_iters {
        iterations += 1;
        let mut accepted = None;
        let mut a = alpha;
        for _ in 0..=cfg.max_backtracks {
            let trial: Vec<[f64; CONTROL_DIM]> = (0..n)
                .map(|k| {
                    project(
                        std::array::from_fn(|j| u[k][j] - a * range[j] * range[j] * grad[k][j]),
                        params,
                    )
                })
                .collect();
            let mut decrease = 0.0;
            let mut step_inf: f64 = 0.0;
            for k in 0..n {
                for j in 0..CONTROL_DIM {
                    let d = trial[k][j] - u[k][j];
                    decrease += grad[k][j] * d;
                    step_inf = step_inf.max((d / range[j]).abs());
                }
            }
            if step_inf < cfg.step_tolerance {
                // Projected gradient is stationary at this scale.
                accepted = Some((trial, cost, step_inf, true));
                break;
            }
            let (c, _) = ctx.evaluate_cost(&as_controls(&trial))?;
            if c <= cost + cfg.armijo_c * decrease {
                accepted = Some((trial, c, step_inf, false));
                break;
            }
            a *= cfg.backtrack_factor;
        }

        let Some((trial, new_cost, step_inf, stationary)) = accepted else {
            // Line search failed to find a decrease.
            break;
        };
        if stationary {
            converged = true;
            break;
        }
        let (_, _, new_grad) = ctx.cost_gradient(&as_controls(&trial))?;

        // Barzilai-Borwein step from the scaled displacement and gradient change.
        let mut ss = 0.0;
        let mut sy = 0.0;
        for k in 0..n {
            for j in 0..CONTROL_DIM {
                let s = (trial[k][j] - u[k][j]) / range[j];
                let y = (new_grad[k][j] - grad[k][j]) * range[j];
                ss += s * s;
                sy += s * y;
            }
        }
        alpha = if sy > 1e-300 { ss / sy } else { a * 2.0 };
        alpha = alpha.clamp(1e-12, 1e6);

        let rel_decrease = (cost - new_cost) / cost.abs().max(1.0);
        u = trial;
        cost = new_cost;
        grad = new_grad;
        if step_inf < cfg.step_tolerance || rel_decrease < cfg.cost_tolerance {
            converged = true;
            break;
        }
    }
    Ok(Descent {
        controls: as_controls(&u),
        cost,
        iterations,
        converged,
    })
}

/// Minimizes the objective over the control sequence.
///
/// Starts from the shifted warm start when one is given and from zero controls
/// otherwise, plus any configured constant-steer seeds; the lowest-cost result wins.
pub fn solve(
    ctx: &CostContext<'_>,
    warm_start: Option<&MpcSolution>,
) -> Result<MpcSolution, MpcError> {
    ctx.config.validate()?;
    let n = ctx.horizon();
    let mut starts: Vec<Vec<ControlInput>> = Vec::new();
    if let Some(ws) = warm_start {
        starts.push(ws.shifted_controls(n));
    }
    starts.push(vec![ControlInput::ZERO; n]);
    for &steer in &ctx.config.seed_steers {
        starts.push(vec![ControlInput::new(0.0, steer); n]);
    }

    let mut best: Option<Descent> = None;
    let mut total_iters = 0;
    for init in starts {
        let d = descend(ctx, init)?;
        total_iters += d.iterations;
        if best.as_ref().is_none_or(|b| d.cost < b.cost) {
            best = Some(d);
        }
    }
    let best = best.expect("at least one start");
    let predicted_states = rollout(&ctx.state0, &best.controls, ctx.params)?;
    let (total_cost, cost_breakdown) = ctx.evaluate_cost(&best.controls)?;
    Ok(MpcSolution {
        controls: best.controls,
        predicted_states,
        total_cost,
        cost_breakdown,
        iterations: total_iters,
        converged: best.converged,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::potential::ObstacleClass;

    fn ctx_parts() -> (VehicleParams, PfGains, MpcConfig) {
        (
            VehicleParams::default(),
            PfGains::default(),
            MpcConfig::default(),
        )
    }

    fn reference_from(states: Vec<VehicleState>) -> ReferenceTrajectory {
        ReferenceTrajectory {
            target_speed: states[0].vx,
            states,
        }
    }

    #[test]
    fn zero_cost_at_rest() {
        let (p, g, c) = ctx_parts();
        let x0 = VehicleState::default();
        let r = reference_from(vec![x0; c.horizon + 1]);
        let ctx = CostContext::new(x0, &r, &[], &g, &c, &p, 0.5, ControlInput::ZERO, None);
        let (total, br) = ctx
            .evaluate_cost(&vec![ControlInput::ZERO; c.horizon])
            .unwrap();
        assert_eq!(total, 0.0);
        assert_eq!(br, CostBreakdown::default());
        let sol = solve(&ctx, None).unwrap();
        assert!(sol.total_cost < 1e-12);
        assert!(sol.converged);
        assert!(sol
            .controls
            .iter()
            .all(|u| u.accel.abs() < 1e-9 && u.steer.abs() < 1e-9));
    }

    #[test]
    fn far_obstacle_contribution() {
        // One obstacle at normalized squared distance 1e6 from a stationary ego:
        // each of the N+1 predicted positions contributes K_o / 1e6.
        let (p, g, mut c) = ctx_parts();
        c.horizon = 2;
        let x0 = VehicleState::default();
        let r = reference_from(vec![x0; 3]);
        let a = 2.0;
        let obs = [ObstacleDescriptor {
            class: ObstacleClass::Vehicle,
            cx: 1000.0 * a,
            cy: 0.0,
            theta: 0.0,
            half_len_a: a,
            half_wid_b: 1.0,
            speed_x: 0.0,
            speed_y: 0.0,
        }];
        let ctx = CostContext::new(x0, &r, &obs, &g, &c, &p, 0.5, ControlInput::ZERO, None);
        let (_, br) = ctx.evaluate_cost(&[ControlInput::ZERO; 2]).unwrap();
        let ko = g.k_base;
        assert!((br.obstacle - 3.0 * ko / 1e6).abs() < 1e-15);
    }

    #[test]
    fn pure_position_offset_tracking() {
        let (p, g, c) = ctx_parts();
        let x0 = VehicleState::default();
        let delta = 0.7;
        let r = reference_from(vec![
            VehicleState::new(delta, 0.0, 0.0, 0.0, 0.0, 0.0);
            c.horizon + 1
        ]);
        let ctx = CostContext::new(x0, &r, &[], &g, &c, &p, 0.5, ControlInput::ZERO, None);
        let (total, br) = ctx
            .evaluate_cost(&vec![ControlInput::ZERO; c.horizon])
            .unwrap();
        let expect = (c.horizon + 1) as f64 * c.w_x[0] * delta * delta;
        assert!((br.tracking - expect).abs() < 1e-12);
        assert!((total - expect).abs() < 1e-12);
    }

    #[test]
    fn weights_follow_on_road_probability() {
        let w = modulated_tracking_weights(&[15.0, 15.0, 10.0, 5.0, 1.0, 1.0], 1.0);
        assert_eq!(w, [22.5, 22.5, 15.0, 5.0, 1.0, 1.0]);
        let w = modulated_tracking_weights(&[15.0, 15.0, 10.0, 5.0, 1.0, 1.0], 0.0);
        assert_eq!(w, [7.5, 7.5, 5.0, 5.0, 1.0, 1.0]);
    }

    #[test]
    fn recovers_reachable_reference() {
        let (p, g, mut c) = ctx_parts();
        c.w_u = [0.0; 2];
        c.w_du = [0.0; 2];
        let x0 = VehicleState::new(0.0, 0.0, 0.0, 8.0, 0.0, 0.0);
        let u_true = vec![ControlInput::new(0.5, 0.05); c.horizon];
        let states = rollout(&x0, &u_true, &p).unwrap();
        let r = reference_from(states);
        let ctx = CostContext::new(
            x0,
            &r,
            &[],
            &g,
            &c,
            &p,
            0.5,
            ControlInput::new(0.5, 0.05),
            None,
        );
        let sol = solve(&ctx, None).unwrap();
        assert!(
            sol.cost_breakdown.tracking < 1e-3,
            "{:?}",
            sol.cost_breakdown
        );
        for u in &sol.controls {
            assert!((u.steer - 0.05).abs() < 0.02, "{u:?}");
        }
        assert_eq!(
            sol.predicted_states,
            rollout(&x0, &sol.controls, &p).unwrap()
        );
        assert!((sol.total_cost - sol.cost_breakdown.total()).abs() < 1e-9);
    }

    #[test]
    fn rejects_wrong_horizon() {
        let (p, g, c) = ctx_parts();
        let x0 = VehicleState::default();
        let r = reference_from(vec![x0; c.horizon + 1]);
        let ctx = CostContext::new(x0, &r, &[], &g, &c, &p, 0.5, ControlInput::ZERO, None);
        assert!(matches!(
            ctx.evaluate_cost(&[ControlInput::ZERO; 3]),
            Err(MpcError::HorizonMismatch { .. })
        ));
    }

    #[test]
    fn warm_start_shift() {
        let sol = MpcSolution {
            controls: vec![
                ControlInput::new(1.0, 0.0),
                ControlInput::new(2.0, 0.0),
                ControlInput::new(3.0, 0.0),
            ],
            predicted_states: vec![],
            total_cost: 0.0,
            cost_breakdown: CostBreakdown::default(),
            iterations: 0,
            converged: true,
        };
        let s = sol.shifted_controls(3);
        assert_eq!(
            s.iter().map(|u| u.accel).collect::<Vec<_>>(),
            vec![2.0, 3.0, 3.0]
        );
    }

    fn fd_check(ctx: &CostContext<'_>, controls: &[ControlInput]) {
        let (_, _, g) = ctx.cost_gradient(controls).unwrap();
        for k in 0..controls.len() {
            for j in 0..CONTROL_DIM {
                let h = 1e-6;
                let mut up = controls.to_vec();
                let mut dn = controls.to_vec();
                let mut a = up[k].to_array();
                a[j] += h;
                up[k] = ControlInput::from_array(a);
                let mut b = dn[k].to_array();
                b[j] -= h;
                dn[k] = ControlInput::from_array(b);
                let fd = (ctx.evaluate_cost(&up).unwrap().0 - ctx.evaluate_cost(&dn).unwrap().0)
                    / (2.0 * h);
                let tol = 1e-4 * fd.abs().max(g[k][j].abs()).max(1.0);
                assert!(
                    (fd - g[k][j]).abs() < tol,
                    "k={k} j={j} fd={fd} an={}",
                    g[k][j]
                );
            }
        }
    }

    proptest::proptest! {
        #![proptest_config(proptest::prelude::ProptestConfig::with_cases(48))]
        #[test]
        fn gradient_matches_finite_differences(
            vx in 2.0..15.0f64,
            ox in 4.0..20.0f64, oy in -3.0..3.0f64, oth in -1.5..1.5f64,
            ovx in -3.0..3.0f64,
            seed in proptest::collection::vec((-5.0..2.5f64, -0.4..0.4f64), 8),
            d in proptest::option::of(1.0..30.0f64),
            predicted in proptest::bool::ANY,
        ) {
            let p = VehicleParams::default();
            let front_speed = if predicted { FrontSpeed::Predicted } else { FrontSpeed::Current };
            let g = PfGains { k_c: 50.0, front_speed, ..PfGains::default() };
            let c = MpcConfig { horizon: 8, ..MpcConfig::default() };
            let x0 = VehicleState::new(0.0, 0.3, 0.05, vx, 0.2, 0.05);
            let r = reference_from(
                (0..=8).map(|k| VehicleState::new(k as f64, 0.0, 0.0, 8.0, 0.0, 0.0)).collect(),
            );
            let obs = [ObstacleDescriptor {
                class: ObstacleClass::Cyclist,
                cx: ox, cy: oy, theta: oth,
                half_len_a: 3.0, half_wid_b: 1.5,
                speed_x: ovx, speed_y: 0.0,
            }];
            let ctx = CostContext::new(x0, &r, &obs, &g, &c, &p, 0.3, ControlInput::new(0.2, 0.0), d);
            let controls: Vec<ControlInput> = seed.iter().map(|&(a, s)| ControlInput::new(a, s)).collect();
            fd_check(&ctx, &controls);
        }
    }

    #[test]
    fn gradient_with_bound_penalty() {
        // Hard braking from low speed drives predicted vx below zero.
        let p = VehicleParams::default();
        let g = PfGains::default();
        let c = MpcConfig {
            horizon: 6,
            ..MpcConfig::default()
        };
        let x0 = VehicleState::new(0.0, 0.0, 0.0, 1.5, 0.0, 0.0);
        let r = reference_from(vec![x0; 7]);
        let ctx = CostContext::new(x0, &r, &[], &g, &c, &p, 0.5, ControlInput::ZERO, None);
        let controls = vec![ControlInput::new(-6.0, 0.1); 6];
        let (_, br, _) = ctx.cost_gradient(&controls).unwrap();
        assert!(br.bounds > 0.0);
        fd_check(&ctx, &controls);
    }
}
