//! Elliptic repulsive obstacle potentials and the front-obstacle ACC cost.

use serde::{Deserialize, Serialize};

use crate::dynamics::VehicleState;
use crate::geometry::Polyline;
use crate::reference::ReferenceTrajectory;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ObstacleClass {
    Vehicle,
    Cyclist,
    Pedestrian,
    Static,
}

impl ObstacleClass {
    pub fn as_str(&self) -> &'static str {
        match self {
            ObstacleClass::Vehicle => "vehicle",
            ObstacleClass::Cyclist => "cyclist",
            ObstacleClass::Pedestrian => "pedestrian",
            ObstacleClass::Static => "static",
        }
    }
}

/// One detected obstacle: pose, ellipse semi-axes and velocity.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ObstacleDescriptor {
    pub class: ObstacleClass,
    pub cx: f64,
    pub cy: f64,
    pub theta: f64,
    /// Semi-major axis, along `theta`.
    pub half_len_a: f64,
    /// Semi-minor axis.
    pub half_wid_b: f64,
    pub speed_x: f64,
    pub speed_y: f64,
}

impl ObstacleDescriptor {
    /// Ellipse sized from a physical footprint using the configured axis scales.
    pub fn from_footprint(
        class: ObstacleClass,
        center: [f64; 2],
        theta: f64,
        length: f64,
        width: f64,
        velocity: [f64; 2],
        gains: &PfGains,
    ) -> Self {
        let a = length * gains.axis_len_scale;
        let b = width * gains.axis_wid_scale;
        Self {
            class,
            cx: center[0],
            cy: center[1],
            theta,
            half_len_a: a.max(b),
            half_wid_b: b.min(a),
            speed_x: velocity[0],
            speed_y: velocity[1],
        }
    }

    pub fn is_valid(&self) -> bool {
        self.half_len_a > 0.0 && self.half_wid_b > 0.0 && self.half_len_a >= self.half_wid_b
    }

    /// Constant-velocity prediction `t` seconds ahead.
    pub fn advanced(&self, t: f64) -> Self {
        Self {
            cx: self.cx + self.speed_x * t,
            cy: self.cy + self.speed_y * t,
            ..*self
        }
    }
}

/// How the ego offset is mapped into the obstacle's ellipse frame.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum EllipseRotation {
    /// Proper rotation of the offset into the obstacle frame.
    #[default]
    Rigid,
    /// Diagonal offset matrix times the rotation matrix, rows summed:
    /// `x_rot = cx + dx·(cosθ + sinθ)`, `y_rot = cy + dy·(cosθ − sinθ)`.
    DiagonalOffset,
}

/// How obstacles move across the prediction horizon.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum ObstacleMotion {
    #[default]
    ConstantVelocity,
    Frozen,
}

/// Which speed multiplies each step's acceleration in the front-obstacle cost.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum FrontSpeed {
    /// Predicted speed at the same step.
    #[default]
    Predicted,
    /// Speed measured at the start of the cycle. Braking is then rewarded equally
    /// at every step, so the plan tends to postpone it.
    Current,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ClassScale {
    pub vehicle: f64,
    pub cyclist: f64,
    pub pedestrian: f64,
    #[serde(rename = "static")]
    pub static_obstacle: f64,
}

impl Default for ClassScale {
    fn default() -> Self {
        Self {
            vehicle: 1.0,
            cyclist: 2.0,
            pedestrian: 3.0,
            static_obstacle: 1.0,
        }
    }
}

impl ClassScale {
    pub fn of(&self, class: ObstacleClass) -> f64 {
        match class {
            ObstacleClass::Vehicle => self.vehicle,
            ObstacleClass::Cyclist => self.cyclist,
            ObstacleClass::Pedestrian => self.pedestrian,
            ObstacleClass::Static => self.static_obstacle,
        }
    }
}

/// Potential-field gains and shape constants (`[pf]` config section).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PfGains {
    /// Base obstacle gain before on-road modulation.
    pub k_base: f64,
    pub class_scale: ClassScale,
    /// Front-obstacle (ACC) cost gain.
    pub k_c: f64,
    /// Guard added to the front-obstacle distance.
    pub d_epsilon: f64,
    /// Normalized squared distance below which the potential saturates.
    pub cap_distance_sq: f64,
    pub axis_len_scale: f64,
    pub axis_wid_scale: f64,
    /// Added to half the ego width to form the front-obstacle corridor.
    pub corridor_margin: f64,
    pub ellipse_rotation: EllipseRotation,
    pub obstacle_motion: ObstacleMotion,
    pub front_speed: FrontSpeed,
}

impl Default for PfGains {
    fn default() -> Self {
        Self {
            k_base: 1000.0,
            class_scale: ClassScale::default(),
            k_c: 400.0,
            d_epsilon: 0.001,
            cap_distance_sq: 0.1,
            axis_len_scale: 2.0,
            axis_wid_scale: 1.25,
            corridor_margin: 0.5,
            ellipse_rotation: EllipseRotation::Rigid,
            obstacle_motion: ObstacleMotion::ConstantVelocity,
            front_speed: FrontSpeed::Predicted,
        }
    }
}

impl PfGains {
    pub fn validate(&self) -> Result<(), String> {
        let cs = &self.class_scale;
        let nonneg = [
            ("k_base", self.k_base),
            ("k_c", self.k_c),
            ("class_scale.vehicle", cs.vehicle),
            ("class_scale.static", cs.static_obstacle),
        ];
        for (name, v) in nonneg {
            if !(v.is_finite() && v >= 0.0) {
                return Err(format!("pf.{name} must be >= 0"));
            }
        }
        if !(cs.pedestrian >= cs.cyclist && cs.cyclist >= cs.vehicle) {
            return Err("pf.class_scale must satisfy pedestrian >= cyclist >= vehicle".into());
        }
        let positive = [
            ("d_epsilon", self.d_epsilon),
            ("cap_distance_sq", self.cap_distance_sq),
            ("axis_len_scale", self.axis_len_scale),
            ("axis_wid_scale", self.axis_wid_scale),
        ];
        for (name, v) in positive {
            if !(v.is_finite() && v > 0.0) {
                return Err(format!("pf.{name} must be > 0"));
            }
        }
        if !(self.corridor_margin >= 0.0) {
            return Err("pf.corridor_margin must be >= 0".into());
        }
        Ok(())
    }

    /// Saturated value of a single term, `K_o / cap_distance_sq`.
    pub fn cap_value(&self, k_o: f64) -> f64 {
        k_o / self.cap_distance_sq
    }

    pub fn corridor_halfwidth(&self, ego_width: f64) -> f64 {
        0.5 * ego_width + self.corridor_margin
    }

    pub fn zeroed(&self) -> Self {
        Self {
            k_base: 0.0,
            k_c: 0.0,
            ..self.clone()
        }
    }
}

/// Obstacle gain modulated by the on-road probability: `K / (p + 0.5)`.
pub fn effective_obstacle_gain(k_base: f64, p_on_road: f64) -> f64 {
    k_base / (p_on_road + 0.5)
}

/// Ego position mapped into the ellipse frame of `obstacle` (still expressed around its center).
pub fn rotate_into_ellipse(
    ego_x: f64,
    ego_y: f64,
    obstacle: &ObstacleDescriptor,
    mode: EllipseRotation,
) -> (f64, f64) {
    let dx = ego_x - obstacle.cx;
    let dy = ego_y - obstacle.cy;
    let (s, c) = obstacle.theta.sin_cos();
    match mode {
        EllipseRotation::Rigid => (obstacle.cx + c * dx + s * dy, obstacle.cy - s * dx + c * dy),
        EllipseRotation::DiagonalOffset => (obstacle.cx + dx * (c + s), obstacle.cy + dy * (c - s)),
    }
}

/// Normalized squared ellipse distance and its gradient w.r.t. the ego position.
fn normalized_distance(
    ego: [f64; 2],
    o: &ObstacleDescriptor,
    mode: EllipseRotation,
) -> (f64, [f64; 2]) {
    let (xr, yr) = rotate_into_ellipse(ego[0], ego[1], o, mode);
    let qx = xr - o.cx;
    let qy = yr - o.cy;
    let a2 = o.half_len_a * o.half_len_a;
    let b2 = o.half_wid_b * o.half_wid_b;
    let n = qx * qx / a2 + qy * qy / b2;
    let gx = 2.0 * qx / a2;
    let gy = 2.0 * qy / b2;
    let (s, c) = o.theta.sin_cos();
    let grad = match mode {
        EllipseRotation::Rigid => [gx * c - gy * s, gx * s + gy * c],
        EllipseRotation::DiagonalOffset => [gx * (c + s), gy * (c - s)],
    };
    (n, grad)
}

/// Value of the obstacle potential at one point.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct PotentialValue {
    pub value: f64,
    /// Gradient w.r.t. the ego position.
    pub grad: [f64; 2],
    /// True when at least one term hit the saturation cap.
    pub capped: bool,
}

/// Sum of class-scaled elliptic repulsive terms at `(ego_x, ego_y)`.
pub fn obstacle_potential(
    ego_x: f64,
    ego_y: f64,
    obstacles: &[ObstacleDescriptor],
    gains: &PfGains,
    k_o_effective: f64,
) -> PotentialValue {
    let mut out = PotentialValue::default();
    if k_o_effective == 0.0 {
        return out;
    }
    for o in obstacles {
        let k = gains.class_scale.of(o.class) * k_o_effective;
        if k == 0.0 {
            continue;
        }
        let (n, g) = normalized_distance([ego_x, ego_y], o, gains.ellipse_rotation);
        if n < gains.cap_distance_sq {
            out.value += gains.cap_value(k);
            out.capped = true;
        } else {
            out.value += k / n;
            let f = -k / (n * n);
            out.grad[0] += f * g[0];
            out.grad[1] += f * g[1];
        }
    }
    out
}

/// Front-obstacle cost `K_c · accel · speed / (d + eps)`; zero when there is no front obstacle.
pub fn front_obstacle_cost(
    accel_cmd: f64,
    ego_speed: f64,
    d_safety: Option<f64>,
    gains: &PfGains,
) -> f64 {
    match d_safety {
        Some(d) => gains.k_c * accel_cmd * ego_speed / (d + gains.d_epsilon),
        None => 0.0,
    }
}

/// Distance to the nearest obstacle whose center lies within `corridor_halfwidth`
/// of the reference polyline and in front of the ego.
pub fn select_front_obstacle(
    ego: &VehicleState,
    reference: &ReferenceTrajectory,
    obstacles: &[ObstacleDescriptor],
    corridor_halfwidth: f64,
) -> Option<f64> {
    let pts: Vec<[f64; 2]> = reference.states.iter().map(|s| s.position()).collect();
    let line = Polyline::new(&pts);
    let (s, c) = ego.phi.sin_cos();
    obstacles
        .iter()
        .filter(|o| {
            let ahead = (o.cx - ego.px) * c + (o.cy - ego.py) * s > 0.0;
            ahead
                && line
                    .project([o.cx, o.cy])
                    .is_some_and(|p| p.distance <= corridor_halfwidth)
        })
        .map(|o| (o.cx - ego.px).hypot(o.cy - ego.py))
        .min_by(f64::total_cmp)
}
