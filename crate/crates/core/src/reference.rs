//! Planner output handling: frame transform, spline reference generation and
//! traffic-signal gates.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dynamics::{ControlInput, VehicleParams, VehicleState};
use crate::geometry::{dist, normalize_angle, Point};
use crate::potential::ObstacleDescriptor;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ReferenceError {
    #[error("need at least 2 distinct waypoints, got {0}")]
    TooFewWaypoints(usize),
    #[error("target speed must be finite and non-negative, got {0}")]
    BadTargetSpeed(f64),
    #[error("non-finite waypoint at index {0}")]
    NonFiniteWaypoint(usize),
}

/// What the upstream planner hands to the safety controller each cycle.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
pub struct PlannerOutput {
    pub waypoints: Vec<Point>,
    pub obstacles: Vec<ObstacleDescriptor>,
    pub p_red_light: f64,
    pub p_stop_junction: f64,
    pub p_on_road: f64,
    /// Desired cruising speed for the reference (m/s).
    pub target_speed: f64,
}

/// Rotates by `phi` and translates by `(px, py)`: ego frame to global frame.
pub fn to_global(output: &PlannerOutput, ego_pose: (f64, f64, f64)) -> PlannerOutput {
    let (px, py, phi) = ego_pose;
    let (s, c) = phi.sin_cos();
    let tf = |p: Point| [px + c * p[0] - s * p[1], py + s * p[0] + c * p[1]];
    PlannerOutput {
        waypoints: output.waypoints.iter().map(|&p| tf(p)).collect(),
        obstacles: output
            .obstacles
            .iter()
            .map(|o| {
                let [cx, cy] = tf([o.cx, o.cy]);
                ObstacleDescriptor {
                    cx,
                    cy,
                    theta: normalize_angle(o.theta + phi),
                    speed_x: c * o.speed_x - s * o.speed_y,
                    speed_y: s * o.speed_x + c * o.speed_y,
                    ..*o
                }
            })
            .collect(),
        ..output.clone()
    }
}

/// Inverse of [`to_global`].
pub fn to_ego(output: &PlannerOutput, ego_pose: (f64, f64, f64)) -> PlannerOutput {
    let (px, py, phi) = ego_pose;
    let (s, c) = phi.sin_cos();
    let tf = |p: Point| {
        let dx = p[0] - px;
        let dy = p[1] - py;
        [c * dx + s * dy, -s * dx + c * dy]
    };
    PlannerOutput {
        waypoints: output.waypoints.iter().map(|&p| tf(p)).collect(),
        obstacles: output
            .obstacles
            .iter()
            .map(|o| {
                let [cx, cy] = tf([o.cx, o.cy]);
                ObstacleDescriptor {
                    cx,
                    cy,
                    theta: normalize_angle(o.theta - phi),
                    speed_x: c * o.speed_x + s * o.speed_y,
                    speed_y: -s * o.speed_x + c * o.speed_y,
                    ..*o
                }
            })
            .collect(),
        ..output.clone()
    }
}

/// Catmull-Rom spline through a set of points, parameterized by cumulative chord length.
///
/// Each segment is a cubic Hermite patch whose end tangents are finite
/// differences of the neighbouring points, so the curve is C¹ and passes
/// through every input point.
#[derive(Debug, Clone)]
pub struct CatmullRom {
    points: Vec<Point>,
    knots: Vec<f64>,
    tangents: Vec<Point>,
    // arc-length lookup: per segment, (param, arc length) samples
    arc_table: Vec<Vec<(f64, f64)>>,
    seg_arc_start: Vec<f64>,
    total_arc: f64,
}

const ARC_SAMPLES: usize = 32;

/// Position, first and second derivative with respect to the chord parameter.
#[derive(Debug, Clone, Copy)]
pub struct SplineSample {
    pub pos: Point,
    pub d1: Point,
    pub d2: Point,
}

impl SplineSample {
    pub fn heading(&self) -> f64 {
        self.d1[1].atan2(self.d1[0])
    }

    /// Signed curvature (positive turns left).
    pub fn curvature(&self) -> f64 {
        let speed = self.d1[0].hypot(self.d1[1]);
        if speed < 1e-12 {
            return 0.0;
        }
        (self.d1[0] * self.d2[1] - self.d1[1] * self.d2[0]) / speed.powi(3)
    }
}

impl CatmullRom {
    pub fn new(waypoints: &[Point]) -> Result<Self, ReferenceError> {
        let mut points: Vec<Point> = Vec::with_capacity(waypoints.len());
        for (i, &p) in waypoints.iter().enumerate() {
            if !(p[0].is_finite() && p[1].is_finite()) {
                return Err(ReferenceError::NonFiniteWaypoint(i));
            }
            if points.last().is_none_or(|&q| dist(p, q) > 1e-9) {
                points.push(p);
            }
        }
        let n = points.len();
        if n < 2 {
            return Err(ReferenceError::TooFewWaypoints(n));
        }
        let mut knots = vec![0.0; n];
        for i in 1..n {
            knots[i] = knots[i - 1] + dist(points[i - 1], points[i]);
        }
        let diff = |i: usize, j: usize| {
            let dt = knots[j] - knots[i];
            [
                (points[j][0] - points[i][0]) / dt,
                (points[j][1] - points[i][1]) / dt,
            ]
        };
        // End tangents come from the parabola through the three outermost points.
        let end_tangent = |a: usize, b: usize, c: usize| {
            let h0 = knots[b] - knots[a];
            let h1 = knots[c] - knots[b];
            let ca = -(2.0 * h0 + h1) / (h0 * (h0 + h1));
            let cb = (h0 + h1) / (h0 * h1);
            let cc = -h0 / (h1 * (h0 + h1));
            [
                ca * points[a][0] + cb * points[b][0] + cc * points[c][0],
                ca * points[a][1] + cb * points[b][1] + cc * points[c][1],
            ]
        };
        let tangents = (0..n)
            .map(|i| {
                if n == 2 {
                    diff(0, 1)
                } else if i == 0 {
                    end_tangent(0, 1, 2)
                } else if i == n - 1 {
                    end_tangent(n - 1, n - 2, n - 3)
                } else {
                    diff(i - 1, i + 1)
                }
            })
            .collect();
        let mut spline = Self {
            points,
            knots,
            tangents,
            arc_table: Vec::new(),
            seg_arc_start: Vec::new(),
            total_arc: 0.0,
        };
        spline.build_arc_table();
        Ok(spline)
    }

    pub fn points(&self) -> &[Point] {
        &self.points
    }

    pub fn knots(&self) -> &[f64] {
        &self.knots
    }

    pub fn param_end(&self) -> f64 {
        *self.knots.last().unwrap()
    }

    pub fn arc_length(&self) -> f64 {
        self.total_arc
    }

    fn segment(&self, t: f64) -> usize {
        let n = self.points.len();
        match self.knots.binary_search_by(|k| k.total_cmp(&t)) {
            Ok(i) => i.min(n - 2),
            Err(i) => i.saturating_sub(1).min(n - 2),
        }
    }

    /// Evaluates the spline at chord parameter `t`, clamped to the knot range.
    pub fn eval(&self, t: f64) -> SplineSample {
        let t = t.clamp(0.0, self.param_end());
        let i = self.segment(t);
        let h = self.knots[i + 1] - self.knots[i];
        let u = (t - self.knots[i]) / h;
        let (p0, p1) = (self.points[i], self.points[i + 1]);
        let (m0, m1) = (self.tangents[i], self.tangents[i + 1]);
        let u2 = u * u;
        let u3 = u2 * u;
        let h00 = 2.0 * u3 - 3.0 * u2 + 1.0;
        let h10 = u3 - 2.0 * u2 + u;
        let h01 = -2.0 * u3 + 3.0 * u2;
        let h11 = u3 - u2;
        let d00 = 6.0 * u2 - 6.0 * u;
        let d10 = 3.0 * u2 - 4.0 * u + 1.0;
        let d01 = -6.0 * u2 + 6.0 * u;
        let d11 = 3.0 * u2 - 2.0 * u;
        let s00 = 12.0 * u - 6.0;
        let s10 = 6.0 * u - 4.0;
        let s01 = -12.0 * u + 6.0;
        let s11 = 6.0 * u - 2.0;
        let comb = |a: f64, b: f64, c: f64, d: f64, k: usize| {
            a * p0[k] + b * h * m0[k] + c * p1[k] + d * h * m1[k]
        };
        SplineSample {
            pos: [comb(h00, h10, h01, h11, 0), comb(h00, h10, h01, h11, 1)],
            d1: [
                comb(d00, d10, d01, d11, 0) / h,
                comb(d00, d10, d01, d11, 1) / h,
            ],
            d2: [
                comb(s00, s10, s01, s11, 0) / (h * h),
                comb(s00, s10, s01, s11, 1) / (h * h),
            ],
        }
    }

    fn speed(&self, t: f64) -> f64 {
        let d = self.eval(t).d1;
        d[0].hypot(d[1])
    }

    fn build_arc_table(&mut self) {
        // 3-point Gauss-Legendre on each sub-interval.
        const GL: [(f64, f64); 3] = [
            (-0.774_596_669_241_483_4, 5.0 / 9.0),
            (0.0, 8.0 / 9.0),
            (0.774_596_669_241_483_4, 5.0 / 9.0),
        ];
        let mut acc = 0.0;
        for i in 0..self.points.len() - 1 {
            let (t0, t1) = (self.knots[i], self.knots[i + 1]);
            let step = (t1 - t0) / ARC_SAMPLES as f64;
            let mut table = Vec::with_capacity(ARC_SAMPLES + 1);
            self.seg_arc_start.push(acc);
            table.push((t0, acc));
            for k in 0..ARC_SAMPLES {
                let a = t0 + k as f64 * step;
                let mid = a + 0.5 * step;
                let len: f64 = GL
                    .iter()
                    .map(|(x, w)| w * self.speed(mid + 0.5 * step * x))
                    .sum::<f64>()
                    * 0.5
                    * step;
                acc += len;
                table.push((if k + 1 == ARC_SAMPLES { t1 } else { a + step }, acc));
            }
            self.arc_table.push(table);
        }
        self.total_arc = acc;
    }

    /// Arc length from the start to chord parameter `t`.
    pub fn arc_at(&self, t: f64) -> f64 {
        let t = t.clamp(0.0, self.param_end());
        let i = self.segment(t);
        let table = &self.arc_table[i];
        let pos = table
            .partition_point(|(p, _)| *p <= t)
            .clamp(1, table.len() - 1);
        let (ta, sa) = table[pos - 1];
        let (tb, sb) = table[pos];
        if tb <= ta {
            return sa;
        }
        // integrate the remainder exactly enough with Simpson on a short interval
        let dt = t - ta;
        if dt <= 0.0 {
            return sa;
        }
        let simpson = dt / 6.0 * (self.speed(ta) + 4.0 * self.speed(ta + 0.5 * dt) + self.speed(t));
        (sa + simpson).min(sb)
    }

    /// Chord parameter at arc length `s` (clamped to the curve).
    pub fn param_at_arc(&self, s: f64) -> f64 {
        if s <= 0.0 {
            return 0.0;
        }
        if s >= self.total_arc {
            return self.param_end();
        }
        let seg = self
            .seg_arc_start
            .partition_point(|&a| a <= s)
            .saturating_sub(1);
        let table = &self.arc_table[seg];
        let pos = table
            .partition_point(|(_, a)| *a <= s)
            .clamp(1, table.len() - 1);
        let (ta, sa) = table[pos - 1];
        let (tb, sb) = table[pos];
        let mut t = if sb > sa {
            ta + (s - sa) / (sb - sa) * (tb - ta)
        } else {
            ta
        };
        for _ in 0..3 {
            let sp = self.speed(t);
            if sp < 1e-12 {
                break;
            }
            t = (t - (self.arc_at(t) - s) / sp).clamp(ta, tb);
        }
        t
    }

    /// Chord parameter of the point on the curve closest to `p`.
    pub fn closest_param(&self, p: Point) -> f64 {
        let mut best_t = 0.0;
        let mut best_d = f64::INFINITY;
        for i in 0..self.points.len() - 1 {
            let (t0, t1) = (self.knots[i], self.knots[i + 1]);
            for k in 0..=ARC_SAMPLES {
                let t = t0 + (t1 - t0) * k as f64 / ARC_SAMPLES as f64;
                let d = dist(self.eval(t).pos, p);
                if d < best_d {
                    best_d = d;
                    best_t = t;
                }
            }
        }
        // Newton refinement on the squared distance.
        let mut t = best_t;
        for _ in 0..8 {
            let s = self.eval(t);
            let rx = s.pos[0] - p[0];
            let ry = s.pos[1] - p[1];
            let g = rx * s.d1[0] + ry * s.d1[1];
            let h = s.d1[0] * s.d1[0] + s.d1[1] * s.d1[1] + rx * s.d2[0] + ry * s.d2[1];
            if h <= 1e-12 {
                break;
            }
            let next = (t - g / h).clamp(0.0, self.param_end());
            if (next - t).abs() < 1e-12 {
                t = next;
                break;
            }
            t = next;
        }
        if dist(self.eval(t).pos, p) <= best_d {
            t
        } else {
            best_t
        }
    }
}

/// Time-indexed reference states for the MPC horizon (global frame).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReferenceTrajectory {
    pub states: Vec<VehicleState>,
    pub target_speed: f64,
}

impl ReferenceTrajectory {
    pub fn horizon(&self) -> usize {
        self.states.len().saturating_sub(1)
    }
}

/// Samples `horizon + 1` reference states from a spline through the waypoints,
/// spaced `target_speed · dt` apart in arc length starting at the ego's closest point.
pub fn build_reference(
    waypoints_global: &[Point],
    ego: &VehicleState,
    target_speed: f64,
    horizon: usize,
    dt: f64,
) -> Result<ReferenceTrajectory, ReferenceError> {
    if !(target_speed.is_finite() && target_speed >= 0.0) {
        return Err(ReferenceError::BadTargetSpeed(target_speed));
    }
    let spline = CatmullRom::new(waypoints_global)?;
    let t0 = spline.closest_param(ego.position());
    let s0 = spline.arc_at(t0);
    let total = spline.arc_length();
    let end = spline.eval(spline.param_end());
    let end_heading = end.heading();
    let step = target_speed * dt;

    let states = (0..=horizon)
        .map(|k| {
            let s = s0 + k as f64 * step;
            if s > total + 1e-12 {
                let extra = s - total;
                let (sh, ch) = end_heading.sin_cos();
                VehicleState::new(
                    end.pos[0] + extra * ch,
                    end.pos[1] + extra * sh,
                    normalize_angle(end_heading),
                    target_speed,
                    0.0,
                    0.0,
                )
            } else {
                let t = if k == 0 { t0 } else { spline.param_at_arc(s) };
                let sample = spline.eval(t);
                VehicleState::new(
                    sample.pos[0],
                    sample.pos[1],
                    normalize_angle(sample.heading()),
                    target_speed,
                    0.0,
                    sample.curvature() * target_speed,
                )
            }
        })
        .collect();
    Ok(ReferenceTrajectory {
        states,
        target_speed,
    })
}

/// Traffic-signal thresholds (`[gates]` config section).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GateThresholds {
    pub red_threshold: f64,
    pub junction_threshold: f64,
    pub junction_slow_factor: f64,
}

impl Default for GateThresholds {
    fn default() -> Self {
        Self {
            red_threshold: 0.5,
            junction_threshold: 0.5,
            junction_slow_factor: 0.5,
        }
    }
}

/// Result of applying the traffic gates to a control.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GateOutcome {
    pub control: ControlInput,
    pub red_light_brake: bool,
    /// Scale to apply to the target speed on the next cycle (1.0 when inactive).
    pub next_speed_scale: f64,
}

impl GateOutcome {
    pub fn junction_slow(&self) -> bool {
        self.next_speed_scale != 1.0
    }
}

pub fn gate_controls(
    control: ControlInput,
    output: &PlannerOutput,
    thresholds: &GateThresholds,
    params: &VehicleParams,
) -> GateOutcome {
    let red = output.p_red_light > thresholds.red_threshold;
    let control = if red {
        ControlInput::new(params.u_min[0], control.steer)
    } else {
        control
    };
    let next_speed_scale = if output.p_stop_junction > thresholds.junction_threshold {
        thresholds.junction_slow_factor
    } else {
        1.0
    };
    GateOutcome {
        control,
        red_light_brake: red,
        next_speed_scale,
    }
}
