//! Discrete-time dynamic bicycle model.
//!
//! The lateral rows use a semi-implicit discretization with linear tire
//! forces, which stays stable for large steps and frequent speed changes.
//! Near standstill the lateral rows are blended into a kinematic bicycle so
//! that the vehicle can stop and start cleanly.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::normalize_angle;

pub const STATE_DIM: usize = 6;
pub const CONTROL_DIM: usize = 2;

pub type StateMatrix = [[f64; STATE_DIM]; STATE_DIM];
pub type ControlMatrix = [[f64; CONTROL_DIM]; STATE_DIM];

#[derive(Debug, Error, Clone, PartialEq)]
pub enum DynamicsError {
    #[error("non-finite vehicle state component `{0}`")]
    NonFiniteState(&'static str),
    #[error("non-finite control component `{0}`")]
    NonFiniteControl(&'static str),
    #[error("rollout failed at step {index}: {source}")]
    Rollout {
        index: usize,
        #[source]
        source: Box<DynamicsError>,
    },
    #[error("invalid vehicle parameters: {0}")]
    InvalidParams(String),
}

/// Pose in the global frame, velocities in the body frame.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct VehicleState {
    pub px: f64,
    pub py: f64,
    pub phi: f64,
    pub vx: f64,
    pub vy: f64,
    pub omega: f64,
}

impl VehicleState {
    pub const FIELDS: [&'static str; STATE_DIM] = ["px", "py", "phi", "vx", "vy", "omega"];

    pub fn new(px: f64, py: f64, phi: f64, vx: f64, vy: f64, omega: f64) -> Self {
        Self {
            px,
            py,
            phi,
            vx,
            vy,
            omega,
        }
    }

    pub fn at_rest(px: f64, py: f64, phi: f64) -> Self {
        Self::new(px, py, phi, 0.0, 0.0, 0.0)
    }

    pub fn to_array(&self) -> [f64; STATE_DIM] {
        [self.px, self.py, self.phi, self.vx, self.vy, self.omega]
    }

    pub fn from_array(x: [f64; STATE_DIM]) -> Self {
        Self::new(x[0], x[1], x[2], x[3], x[4], x[5])
    }

    pub fn position(&self) -> [f64; 2] {
        [self.px, self.py]
    }

    pub fn speed(&self) -> f64 {
        self.vx.hypot(self.vy)
    }

    pub fn check_finite(&self) -> Result<(), DynamicsError> {
        for (v, name) in self.to_array().into_iter().zip(Self::FIELDS) {
            if !v.is_finite() {
                return Err(DynamicsError::NonFiniteState(name));
            }
        }
        Ok(())
    }
}

/// Longitudinal acceleration and front-wheel steering angle.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct ControlInput {
    pub accel: f64,
    pub steer: f64,
}

impl ControlInput {
    pub const ZERO: ControlInput = ControlInput {
        accel: 0.0,
        steer: 0.0,
    };

    pub fn new(accel: f64, steer: f64) -> Self {
        Self { accel, steer }
    }

    pub fn to_array(&self) -> [f64; CONTROL_DIM] {
        [self.accel, self.steer]
    }

    pub fn from_array(u: [f64; CONTROL_DIM]) -> Self {
        Self::new(u[0], u[1])
    }
}

/// Serialized form of [`VehicleParams`]; validation happens on conversion.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct VehicleParamsDef {
    pub mass: f64,
    pub lf: f64,
    pub lr: f64,
    /// Front cornering stiffness, negative by convention (N/rad).
    pub kf: f64,
    /// Rear cornering stiffness, negative by convention (N/rad).
    pub kr: f64,
    pub iz: f64,
    pub dt: f64,
    /// Lower control bounds `[accel, steer]`.
    pub u_min: [f64; CONTROL_DIM],
    pub u_max: [f64; CONTROL_DIM],
    /// State bounds `[px, py, phi, vx, vy, omega]`, enforced as soft penalties by the MPC.
    pub x_min: [f64; STATE_DIM],
    pub x_max: [f64; STATE_DIM],
    pub width: f64,
    pub length: f64,
    /// Speed above which the dynamic lateral rows are used unblended (m/s).
    pub vx_guard: f64,
    /// Speed below which the kinematic fallback is used exclusively (m/s).
    pub vx_blend_start: f64,
}

impl Default for VehicleParamsDef {
    fn default() -> Self {
        Self {
            mass: 1845.0,
            lf: 1.265,
            lr: 1.682,
            kf: -128_916.0,
            kr: -85_944.0,
            iz: 4175.0,
            dt: 0.1,
            u_min: [-6.0, -0.5],
            u_max: [3.0, 0.5],
            x_min: [
                f64::NEG_INFINITY,
                f64::NEG_INFINITY,
                f64::NEG_INFINITY,
                0.0,
                -5.0,
                -2.0,
            ],
            x_max: [f64::INFINITY, f64::INFINITY, f64::INFINITY, 20.0, 5.0, 2.0],
            width: 1.9,
            length: 4.8,
            vx_guard: 0.5,
            vx_blend_start: 0.25,
        }
    }
}

/// Validated vehicle constants with the derived coupling term `l = lf·kf − lr·kr` cached.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "VehicleParamsDef", into = "VehicleParamsDef")]
pub struct VehicleParams {
    def: VehicleParamsDef,
    l: f64,
}

impl Default for VehicleParams {
    fn default() -> Self {
        Self::new(VehicleParamsDef::default()).expect("default vehicle parameters are valid")
    }
}

impl TryFrom<VehicleParamsDef> for VehicleParams {
    type Error = DynamicsError;

    fn try_from(def: VehicleParamsDef) -> Result<Self, Self::Error> {
        Self::new(def)
    }
}

impl From<VehicleParams> for VehicleParamsDef {
    fn from(p: VehicleParams) -> Self {
        p.def
    }
}

impl std::ops::Deref for VehicleParams {
    type Target = VehicleParamsDef;

    fn deref(&self) -> &VehicleParamsDef {
        &self.def
    }
}

impl VehicleParams {
    pub fn new(def: VehicleParamsDef) -> Result<Self, DynamicsError> {
        let positive = [
            ("mass", def.mass),
            ("iz", def.iz),
            ("lf", def.lf),
            ("lr", def.lr),
            ("dt", def.dt),
            ("width", def.width),
            ("length", def.length),
        ];
        for (name, v) in positive {
            if !(v.is_finite() && v > 0.0) {
                return Err(DynamicsError::InvalidParams(format!(
                    "{name} must be positive and finite, got {v}"
                )));
            }
        }
        if !(def.kf.is_finite() && def.kr.is_finite()) {
            return Err(DynamicsError::InvalidParams(
                "cornering stiffness must be finite".into(),
            ));
        }
        for i in 0..CONTROL_DIM {
            if def.u_min[i] > def.u_max[i] {
                return Err(DynamicsError::InvalidParams(format!(
                    "u_min[{i}] exceeds u_max[{i}]"
                )));
            }
        }
        for i in 0..STATE_DIM {
            if def.x_min[i] > def.x_max[i] {
                return Err(DynamicsError::InvalidParams(format!(
                    "x_min[{i}] exceeds x_max[{i}]"
                )));
            }
        }
        if !(def.vx_blend_start >= 0.0 && def.vx_guard > def.vx_blend_start) {
            return Err(DynamicsError::InvalidParams(
                "need 0 <= vx_blend_start < vx_guard".into(),
            ));
        }
        let l = def.lf * def.kf - def.lr * def.kr;
        Ok(Self { def, l })
    }

    pub fn def(&self) -> &VehicleParamsDef {
        &self.def
    }

    /// Derived coupling term `lf·kf − lr·kr`.
    pub fn l(&self) -> f64 {
        self.l
    }

    pub fn wheelbase(&self) -> f64 {
        self.def.lf + self.def.lr
    }

    pub fn clamp_control(&self, u: ControlInput) -> ControlInput {
        ControlInput::new(
            u.accel.clamp(self.u_min[0], self.u_max[0]),
            u.steer.clamp(self.u_min[1], self.u_max[1]),
        )
    }

    pub fn control_in_bounds(&self, u: &ControlInput) -> bool {
        let a = u.to_array();
        (0..CONTROL_DIM).all(|i| a[i] >= self.u_min[i] && a[i] <= self.u_max[i])
    }

    /// Weight of the dynamic lateral rows: 0 below the blend start, 1 above the guard.
    fn blend(&self, vx: f64) -> (f64, f64) {
        let lo = self.def.vx_blend_start;
        let hi = self.def.vx_guard;
        if vx <= lo {
            (0.0, 0.0)
        } else if vx >= hi {
            (1.0, 0.0)
        } else {
            ((vx - lo) / (hi - lo), 1.0 / (hi - lo))
        }
    }
}

/// Result of a single model step.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepOutcome {
    pub state: VehicleState,
    /// True when the kinematic low-speed fallback contributed to the update.
    pub low_speed_fallback: bool,
}

struct LateralRows {
    vy: f64,
    omega: f64,
    // partials of vy' and omega' w.r.t. (vx, vy, omega, steer)
    d_vy: [f64; 4],
    d_omega: [f64; 4],
    fallback: bool,
}

fn lateral_rows(x: &[f64; STATE_DIM], u: &[f64; CONTROL_DIM], p: &VehicleParams) -> LateralRows {
    let (_, _, _, vx, vy, w) = (x[0], x[1], x[2], x[3], x[4], x[5]);
    let delta = u[1];
    let dt = p.dt;
    let (m, iz, lf, lr, kf, kr, l) = (p.mass, p.iz, p.lf, p.lr, p.kf, p.kr, p.l);

    let (s, ds) = p.blend(vx);

    // Kinematic fallback: no lateral slip, yaw rate from the steering geometry.
    let wb = p.wheelbase();
    let tan_d = delta.tan();
    let w_kin = vx * tan_d / wb;
    let dw_kin_dvx = tan_d / wb;
    let dw_kin_dd = vx * (1.0 + tan_d * tan_d) / wb;

    let den1 = m * vx - (kf + kr) * dt;
    let den2 = iz * vx - (lf * lf * kf + lr * lr * kr) * dt;
    if s == 0.0 || den1.abs() < 1e-9 || den2.abs() < 1e-9 {
        return LateralRows {
            vy: 0.0,
            omega: w_kin,
            d_vy: [0.0; 4],
            d_omega: [dw_kin_dvx, 0.0, 0.0, dw_kin_dd],
            fallback: true,
        };
    }

    let num1 = m * vx * vy + l * w * dt - kf * delta * vx * dt - m * vx * vx * w * dt;
    let vy_dyn = num1 / den1;
    let dn1 = [
        m * vy - kf * delta * dt - 2.0 * m * vx * w * dt,
        m * vx,
        l * dt - m * vx * vx * dt,
        -kf * vx * dt,
    ];
    let d_vy_dyn = [
        (dn1[0] * den1 - num1 * m) / (den1 * den1),
        dn1[1] / den1,
        dn1[2] / den1,
        dn1[3] / den1,
    ];

    let num2 = iz * vx * w + l * vy * dt - lf * kf * delta * vx * dt;
    let w_dyn = num2 / den2;
    let dn2 = [
        iz * w - lf * kf * delta * dt,
        l * dt,
        iz * vx,
        -lf * kf * vx * dt,
    ];
    let d_w_dyn = [
        (dn2[0] * den2 - num2 * iz) / (den2 * den2),
        dn2[1] / den2,
        dn2[2] / den2,
        dn2[3] / den2,
    ];

    if s == 1.0 {
        return LateralRows {
            vy: vy_dyn,
            omega: w_dyn,
            d_vy: d_vy_dyn,
            d_omega: d_w_dyn,
            fallback: false,
        };
    }

    let vy_new = s * vy_dyn;
    let w_new = s * w_dyn + (1.0 - s) * w_kin;
    let mut d_vy = d_vy_dyn.map(|d| s * d);
    d_vy[0] += ds * vy_dyn;
    let d_omega = [
        s * d_w_dyn[0] + (1.0 - s) * dw_kin_dvx + ds * (w_dyn - w_kin),
        s * d_w_dyn[1],
        s * d_w_dyn[2],
        s * d_w_dyn[3] + (1.0 - s) * dw_kin_dd,
    ];
    LateralRows {
        vy: vy_new,
        omega: w_new,
        d_vy,
        d_omega,
        fallback: true,
    }
}

fn check_inputs(state: &VehicleState, control: &ControlInput) -> Result<(), DynamicsError> {
    state.check_finite()?;
    if !control.accel.is_finite() {
        return Err(DynamicsError::NonFiniteControl("accel"));
    }
    if !control.steer.is_finite() {
        return Err(DynamicsError::NonFiniteControl("steer"));
    }
    Ok(())
}

/// Advances the state by one step of length `params.dt`.
pub fn step_with_flags(
    state: &VehicleState,
    control: &ControlInput,
    params: &VehicleParams,
) -> Result<StepOutcome, DynamicsError> {
    check_inputs(state, control)?;
    let x = state.to_array();
    let u = control.to_array();
    let dt = params.dt;
    let (sin_p, cos_p) = x[2].sin_cos();
    let lat = lateral_rows(&x, &u, params);
    let next = VehicleState {
        px: x[0] + (x[3] * cos_p - x[4] * sin_p) * dt,
        py: x[1] + (x[4] * cos_p + x[3] * sin_p) * dt,
        phi: normalize_angle(x[2] + x[5] * dt),
        vx: x[3] + u[0] * dt,
        vy: lat.vy,
        omega: lat.omega,
    };
    next.check_finite()?;
    Ok(StepOutcome {
        state: next,
        low_speed_fallback: lat.fallback,
    })
}

pub fn step(
    state: &VehicleState,
    control: &ControlInput,
    params: &VehicleParams,
) -> Result<VehicleState, DynamicsError> {
    step_with_flags(state, control, params).map(|o| o.state)
}

/// Propagates `state0` through `controls`; the result has `controls.len() + 1` states.
pub fn rollout(
    state0: &VehicleState,
    controls: &[ControlInput],
    params: &VehicleParams,
) -> Result<Vec<VehicleState>, DynamicsError> {
    let mut states = Vec::with_capacity(controls.len() + 1);
    states.push(*state0);
    let mut x = *state0;
    for (index, u) in controls.iter().enumerate() {
        x = step(&x, u, params).map_err(|e| DynamicsError::Rollout {
            index,
            source: Box::new(e),
        })?;
        states.push(x);
    }
    Ok(states)
}

/// Analytic state and control Jacobians of [`step`].
pub fn jacobians(
    state: &VehicleState,
    control: &ControlInput,
    params: &VehicleParams,
) -> Result<(StateMatrix, ControlMatrix), DynamicsError> {
    check_inputs(state, control)?;
    let x = state.to_array();
    let u = control.to_array();
    let dt = params.dt;
    let (sin_p, cos_p) = x[2].sin_cos();
    let (vx, vy) = (x[3], x[4]);
    let lat = lateral_rows(&x, &u, params);

    let mut a = [[0.0; STATE_DIM]; STATE_DIM];
    let mut b = [[0.0; CONTROL_DIM]; STATE_DIM];

    a[0][0] = 1.0;
    a[0][2] = (-vx * sin_p - vy * cos_p) * dt;
    a[0][3] = cos_p * dt;
    a[0][4] = -sin_p * dt;

    a[1][1] = 1.0;
    a[1][2] = (-vy * sin_p + vx * cos_p) * dt;
    a[1][3] = sin_p * dt;
    a[1][4] = cos_p * dt;

    a[2][2] = 1.0;
    a[2][5] = dt;

    a[3][3] = 1.0;
    b[3][0] = dt;

    a[4][3] = lat.d_vy[0];
    a[4][4] = lat.d_vy[1];
    a[4][5] = lat.d_vy[2];
    b[4][1] = lat.d_vy[3];

    a[5][3] = lat.d_omega[0];
    a[5][4] = lat.d_omega[1];
    a[5][5] = lat.d_omega[2];
    b[5][1] = lat.d_omega[3];

    Ok((a, b))
}
