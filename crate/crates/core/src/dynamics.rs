//! Coupled quadrotor and bearing-vector image dynamics.
//!
//! The controller state is `x = [v_w, q_wb, q_cl, d]` (12 numbers) and the
//! input is `u = [c, ω_b]` (4 numbers). World position never appears here:
//! the landmark enters only through its bearing `q_cl` and distance `d`.
//!
//! The model is written once over [`Real`] so the same code yields values
//! (`f64`) and exact Jacobians ([`Dual`]).

use nalgebra::{Matrix3, SMatrix, SVector, Vector2};
use serde::{Deserialize, Serialize};

use crate::geometry::{bearing_n, bearing_tangent_basis, TangentVec2, UnitQuaternion, Vec3};
use crate::kernel::{
    add3, cross, dot3, lift3, lift4, normalize4, quat_rate, quat_rate_body, rotate, rotate_inv,
    scale3, Dual, Real, Q4, V3,
};

pub const GRAVITY: f64 = 9.81;
/// Lower clamp on the feature distance after each integration step (m).
pub const D_FLOOR: f64 = 0.05;

pub const NX: usize = 12;
pub const NU: usize = 4;

pub type StateVec = [f64; NX];
pub type InputVec = [f64; NU];
pub type MatA = SMatrix<f64, NX, NX>;
pub type MatB = SMatrix<f64, NX, NU>;

/// Controller state: world velocity, body attitude, landmark bearing and distance.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct QuadVisualState {
    pub v_w: Vec3,
    pub q_wb: UnitQuaternion,
    pub q_cl: UnitQuaternion,
    pub d: f64,
}

impl QuadVisualState {
    pub fn to_array(&self) -> StateVec {
        let a = self.q_wb.coords();
        let b = self.q_cl.coords();
        [
            self.v_w.x, self.v_w.y, self.v_w.z, a[0], a[1], a[2], a[3], b[0], b[1], b[2], b[3],
            self.d,
        ]
    }

    /// Rebuilds a state; quaternion parts are normalized.
    pub fn from_array(x: &StateVec) -> Self {
        Self {
            v_w: Vec3::new(x[0], x[1], x[2]),
            q_wb: UnitQuaternion::from_coords([x[3], x[4], x[5], x[6]]),
            q_cl: UnitQuaternion::from_coords([x[7], x[8], x[9], x[10]]),
            d: x[11],
        }
    }

    pub fn validate(&self) -> Result<(), String> {
        if !(self.d > 0.0 && self.d.is_finite()) {
            return Err(format!("distance must be positive, got {}", self.d));
        }
        if !self.v_w.iter().all(|v| v.is_finite()) {
            return Err("velocity is not finite".into());
        }
        for (name, q) in [("q_wb", self.q_wb), ("q_cl", self.q_cl)] {
            if (q.norm() - 1.0).abs() > 1e-9 {
                return Err(format!("{name} is not unit-norm ({})", q.norm()));
            }
        }
        Ok(())
    }
}

/// Mass-normalized collective thrust (m/s²) and body rates (rad/s).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ControlInput {
    pub c: f64,
    pub omega_b: Vec3,
}

impl ControlInput {
    pub fn new(c: f64, omega_b: Vec3) -> Self {
        Self { c, omega_b }
    }

    pub fn hover() -> Self {
        Self {
            c: GRAVITY,
            omega_b: Vec3::zeros(),
        }
    }

    pub fn to_array(&self) -> InputVec {
        [self.c, self.omega_b.x, self.omega_b.y, self.omega_b.z]
    }

    pub fn from_array(u: &InputVec) -> Self {
        Self {
            c: u[0],
            omega_b: Vec3::new(u[1], u[2], u[3]),
        }
    }
}

/// Camera mounting: position in the body frame and camera-to-body rotation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CameraExtrinsics {
    pub p_b_cb: Vec3,
    pub q_bc: UnitQuaternion,
}

impl CameraExtrinsics {
    /// Forward-looking camera: optical axis along body `+x`, image `x` to the
    /// right (body `-y`), image `y` down (body `-z`).
    pub fn forward_looking(offset: Vec3) -> Self {
        Self {
            p_b_cb: offset,
            q_bc: UnitQuaternion::new_normalize(0.5, -0.5, 0.5, -0.5),
        }
    }

    pub fn identity() -> Self {
        Self {
            p_b_cb: Vec3::zeros(),
            q_bc: UnitQuaternion::IDENTITY,
        }
    }
}

impl Default for CameraExtrinsics {
    fn default() -> Self {
        Self::forward_looking(Vec3::new(0.1, 0.0, 0.0))
    }
}

/// Linear and angular velocity of the camera, in the camera frame.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct CameraTwist {
    pub v_c: Vec3,
    pub omega_c: Vec3,
}

/// Time derivative of [`QuadVisualState`]; quaternion rates are raw 4-vectors.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StateDerivative {
    pub dv_w: Vec3,
    pub dq_wb: [f64; 4],
    pub dq_cl: [f64; 4],
    pub dd: f64,
}

impl StateDerivative {
    pub fn to_array(&self) -> StateVec {
        let (a, b) = (self.dq_wb, self.dq_cl);
        [
            self.dv_w.x,
            self.dv_w.y,
            self.dv_w.z,
            a[0],
            a[1],
            a[2],
            a[3],
            b[0],
            b[1],
            b[2],
            b[3],
            self.dd,
        ]
    }

    fn from_array(x: &StateVec) -> Self {
        Self {
            dv_w: Vec3::new(x[0], x[1], x[2]),
            dq_wb: [x[3], x[4], x[5], x[6]],
            dq_cl: [x[7], x[8], x[9], x[10]],
            dd: x[11],
        }
    }
}

fn v3(v: &Vec3) -> [f64; 3] {
    [v.x, v.y, v.z]
}

fn to_vec3(v: &[f64; 3]) -> Vec3 {
    Vec3::new(v[0], v[1], v[2])
}

// ---------------------------------------------------------------------------
// scalar-generic model

pub(crate) fn quad_dynamics_raw<T: Real>(q_wb: &Q4<T>, c: T, omega_b: &V3<T>) -> (V3<T>, Q4<T>) {
    let zero = T::cst(0.0);
    let thrust = rotate(q_wb, &[zero, zero, c]);
    let dv = add3(&thrust, &[zero, zero, T::cst(-GRAVITY)]);
    (dv, quat_rate_body(q_wb, omega_b))
}

pub(crate) fn camera_twist_raw<T: Real>(
    v_w: &V3<T>,
    omega_b: &V3<T>,
    q_wb: &Q4<T>,
    ext: &CameraExtrinsics,
) -> (V3<T>, V3<T>) {
    let q_bc: Q4<T> = lift4(&ext.q_bc.coords());
    let lever = cross(omega_b, &lift3(&v3(&ext.p_b_cb)));
    let v_b = add3(&rotate_inv(q_wb, v_w), &lever);
    (rotate_inv(&q_bc, &v_b), rotate_inv(&q_bc, omega_b))
}

/// Returns the tangent rate `u_μ`, the full quaternion rate of `q_cl` and `ḋ`.
pub(crate) fn image_dynamics_raw<T: Real>(
    q_cl: &Q4<T>,
    d: T,
    v_c: &V3<T>,
    omega_c: &V3<T>,
) -> ([T; 2], Q4<T>, T) {
    let (zero, one) = (T::cst(0.0), T::cst(1.0));
    let n = rotate(q_cl, &[zero, zero, one]);
    let nx = rotate(q_cl, &[one, zero, zero]);
    let ny = rotate(q_cl, &[zero, one, zero]);
    let nv = cross(&n, v_c);
    let w = [
        -omega_c[0] - nv[0] / d,
        -omega_c[1] - nv[1] / d,
        -omega_c[2] - nv[2] / d,
    ];
    let mu = [dot3(&nx, &w), dot3(&ny, &w)];
    let rate = add3(&scale3(&nx, mu[0]), &scale3(&ny, mu[1]));
    (mu, quat_rate(&rate, q_cl), -dot3(&n, v_c))
}

pub(crate) fn full_dynamics_raw<T: Real>(
    x: &[T; NX],
    u: &[T; NU],
    ext: &CameraExtrinsics,
) -> [T; NX] {
    let v_w = [x[0], x[1], x[2]];
    let q_wb = [x[3], x[4], x[5], x[6]];
    let q_cl = [x[7], x[8], x[9], x[10]];
    let omega_b = [u[1], u[2], u[3]];
    let (dv, dq_wb) = quad_dynamics_raw(&q_wb, u[0], &omega_b);
    let (v_c, omega_c) = camera_twist_raw(&v_w, &omega_b, &q_wb, ext);
    let (_, dq_cl, dd) = image_dynamics_raw(&q_cl, x[11], &v_c, &omega_c);
    [
        dv[0], dv[1], dv[2], dq_wb[0], dq_wb[1], dq_wb[2], dq_wb[3], dq_cl[0], dq_cl[1], dq_cl[2],
        dq_cl[3], dd,
    ]
}

fn axpy<T: Real>(x: &[T; NX], k: &[T; NX], h: T) -> [T; NX] {
    let mut out = *x;
    for i in 0..NX {
        out[i] += k[i] * h;
    }
    out
}

/// One classical RK4 step followed by quaternion renormalization and the
/// distance floor.
pub(crate) fn rk4_raw<T: Real>(
    x: &[T; NX],
    u: &[T; NU],
    dt: f64,
    ext: &CameraExtrinsics,
) -> [T; NX] {
    let h = T::cst(dt);
    let half = T::cst(0.5 * dt);
    let k1 = full_dynamics_raw(x, u, ext);
    let k2 = full_dynamics_raw(&axpy(x, &k1, half), u, ext);
    let k3 = full_dynamics_raw(&axpy(x, &k2, half), u, ext);
    let k4 = full_dynamics_raw(&axpy(x, &k3, h), u, ext);
    let sixth = T::cst(dt / 6.0);
    let two = T::cst(2.0);
    let mut out = *x;
    for i in 0..NX {
        out[i] += sixth * (k1[i] + two * k2[i] + two * k3[i] + k4[i]);
    }
    let a = normalize4(&[out[3], out[4], out[5], out[6]]);
    let b = normalize4(&[out[7], out[8], out[9], out[10]]);
    out[3..7].copy_from_slice(&a);
    out[7..11].copy_from_slice(&b);
    if out[11].re() < D_FLOOR {
        out[11] = T::cst(D_FLOOR);
    }
    out
}

// ---------------------------------------------------------------------------
// public typed surface

/// Translational and attitude dynamics without position.
pub fn quad_dynamics(v_w: &Vec3, q_wb: &UnitQuaternion, u: &ControlInput) -> (Vec3, [f64; 4]) {
    let _ = v_w; // velocity does not feed back without drag
    let (dv, dq) = quad_dynamics_raw(&q_wb.coords(), u.c, &v3(&u.omega_b));
    (to_vec3(&dv), dq)
}

pub fn camera_twist(
    v_w: &Vec3,
    omega_b: &Vec3,
    q_wb: &UnitQuaternion,
    ext: &CameraExtrinsics,
) -> CameraTwist {
    let (v_c, omega_c) = camera_twist_raw(&v3(v_w), &v3(omega_b), &q_wb.coords(), ext);
    CameraTwist {
        v_c: to_vec3(&v_c),
        omega_c: to_vec3(&omega_c),
    }
}

/// Minimal bearing dynamics. Returns the tangent rate and `ḋ`; the quaternion
/// rate used for integration is `½ [0; N(q) u_μ] ⊗ q`.
pub fn image_dynamics(q_cl: &UnitQuaternion, d: f64, twist: &CameraTwist) -> (TangentVec2, f64) {
    let (mu, _, dd) = image_dynamics_raw(&q_cl.coords(), d, &v3(&twist.v_c), &v3(&twist.omega_c));
    (TangentVec2 { a: mu[0], b: mu[1] }, dd)
}

/// Quaternion rate of the bearing from its tangent rate.
pub fn bearing_rate(q_cl: &UnitQuaternion, mu: &TangentVec2) -> [f64; 4] {
    let rate = bearing_tangent_basis(q_cl) * Vector2::new(mu.a, mu.b);
    quat_rate(&v3(&rate), &q_cl.coords())
}

pub fn full_dynamics(
    x: &QuadVisualState,
    u: &ControlInput,
    ext: &CameraExtrinsics,
) -> StateDerivative {
    StateDerivative::from_array(&full_dynamics_raw(&x.to_array(), &u.to_array(), ext))
}

pub fn rk4_step(
    x: &QuadVisualState,
    u: &ControlInput,
    dt: f64,
    ext: &CameraExtrinsics,
) -> QuadVisualState {
    QuadVisualState::from_array(&rk4_raw(&x.to_array(), &u.to_array(), dt, ext))
}

/// Flat-coordinate RK4 step as used by the solver.
pub fn rk4_step_flat(x: &StateVec, u: &InputVec, dt: f64, ext: &CameraExtrinsics) -> StateVec {
    rk4_raw(x, u, dt, ext)
}

fn seed(x: &StateVec, u: &InputVec) -> ([Dual<16>; NX], [Dual<16>; NU]) {
    let xs = std::array::from_fn(|i| Dual::variable(x[i], i));
    let us = std::array::from_fn(|i| Dual::variable(u[i], NX + i));
    (xs, us)
}

fn split_jacobian(out: &[Dual<16>; NX]) -> (MatA, MatB) {
    let a = MatA::from_fn(|r, c| out[r].eps[c]);
    let b = MatB::from_fn(|r, c| out[r].eps[NX + c]);
    (a, b)
}

/// `∂f/∂x` and `∂f/∂u` of [`full_dynamics`] on flat coordinates, quaternions
/// taken as raw 4-vectors.
pub fn dynamics_jacobians(
    x: &QuadVisualState,
    u: &ControlInput,
    ext: &CameraExtrinsics,
) -> (MatA, MatB) {
    let (xs, us) = seed(&x.to_array(), &u.to_array());
    split_jacobian(&full_dynamics_raw(&xs, &us, ext))
}

/// The RK4 map and its exact sensitivities, including renormalization.
pub fn rk4_step_jacobians(
    x: &StateVec,
    u: &InputVec,
    dt: f64,
    ext: &CameraExtrinsics,
) -> (StateVec, MatA, MatB) {
    let (xs, us) = seed(x, u);
    let out = rk4_raw(&xs, &us, dt, ext);
    let (a, b) = split_jacobian(&out);
    (std::array::from_fn(|i| out[i].re), a, b)
}

// ---------------------------------------------------------------------------
// feature propagation in a moving camera

/// Classical point-feature kinematics in homogeneous coordinates: returns
/// `(u̇, v̇)` and `Ż` for a static point at depth `z`.
pub fn homogeneous_image_dynamics(
    s: &crate::geometry::HomogeneousImagePoint,
    z: f64,
    twist: &CameraTwist,
) -> ([f64; 2], f64) {
    let (u, v) = (s.u, s.v);
    let (vx, vy, vz) = (twist.v_c.x, twist.v_c.y, twist.v_c.z);
    let (wx, wy, wz) = (twist.omega_c.x, twist.omega_c.y, twist.omega_c.z);
    let du = -vx / z + u * vz / z + u * v * wx - (1.0 + u * u) * wy + v * wz;
    let dv = -vy / z + v * vz / z + (1.0 + v * v) * wx - u * v * wy - u * wz;
    let dz = -vz - z * (wx * v - wy * u);
    ([du, dv], dz)
}

/// Bearing feature `(q_cl, d)` advanced one RK4 step under a constant twist.
pub fn propagate_bearing(
    q_cl: &UnitQuaternion,
    d: f64,
    twist: &CameraTwist,
    dt: f64,
) -> (UnitQuaternion, f64) {
    let (v_c, w_c) = (v3(&twist.v_c), v3(&twist.omega_c));
    let f = |y: &[f64; 5]| -> [f64; 5] {
        let (_, dq, dd) = image_dynamics_raw(&[y[0], y[1], y[2], y[3]], y[4], &v_c, &w_c);
        [dq[0], dq[1], dq[2], dq[3], dd]
    };
    let c = q_cl.coords();
    let y = rk4_generic(&[c[0], c[1], c[2], c[3], d], dt, f);
    (
        UnitQuaternion::from_coords([y[0], y[1], y[2], y[3]]),
        y[4].max(D_FLOOR),
    )
}

/// Homogeneous feature `(u, v, Z)` advanced one RK4 step under a constant twist.
pub fn propagate_homogeneous(
    s: &crate::geometry::HomogeneousImagePoint,
    z: f64,
    twist: &CameraTwist,
    dt: f64,
) -> (crate::geometry::HomogeneousImagePoint, f64) {
    let f = |y: &[f64; 3]| -> [f64; 3] {
        let (ds, dz) = homogeneous_image_dynamics(
            &crate::geometry::HomogeneousImagePoint::new(y[0], y[1]),
            y[2],
            twist,
        );
        [ds[0], ds[1], dz]
    };
    let y = rk4_generic(&[s.u, s.v, z], dt, f);
    (
        crate::geometry::HomogeneousImagePoint::new(y[0], y[1]),
        y[2],
    )
}

fn rk4_generic<const M: usize>(
    y: &[f64; M],
    h: f64,
    f: impl Fn(&[f64; M]) -> [f64; M],
) -> [f64; M] {
    let step = |base: &[f64; M], k: &[f64; M], s: f64| -> [f64; M] {
        std::array::from_fn(|i| base[i] + s * k[i])
    };
    let k1 = f(y);
    let k2 = f(&step(y, &k1, 0.5 * h));
    let k3 = f(&step(y, &k2, 0.5 * h));
    let k4 = f(&step(y, &k3, h));
    std::array::from_fn(|i| y[i] + h / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]))
}

/// Closed-form position of a static point seen from a camera moving with a
/// constant body twist: solves `Ṗ = -v_c - ω_c × P` exactly.
pub fn propagate_point_exact(p0: &Vec3, twist: &CameraTwist, t: f64) -> Vec3 {
    let w = twist.omega_c;
    let a = -crate::geometry::skew(&w);
    let a2 = a * a;
    let wn = w.norm();
    let theta = wn * t;
    let (exp_at, integral) = if theta.abs() < 1e-6 {
        (
            Matrix3::identity() + a * t + a2 * (0.5 * t * t),
            Matrix3::identity() * t + a * (0.5 * t * t) + a2 * (t * t * t / 6.0),
        )
    } else {
        (
            Matrix3::identity() + a * (theta.sin() / wn) + a2 * ((1.0 - theta.cos()) / (wn * wn)),
            Matrix3::identity() * t
                + a * ((1.0 - theta.cos()) / (wn * wn))
                + a2 * ((theta - theta.sin()) / (wn * wn * wn)),
        )
    };
    exp_at * p0 - integral * twist.v_c
}

/// Bearing frame consistent with a camera-frame point: `n(q)·|p| = p`.
pub fn feature_state_from_point(p: &Vec3) -> Option<(UnitQuaternion, f64)> {
    let s = crate::geometry::to_homogeneous(p).ok()?;
    Some((crate::geometry::bearing_from_image(&s), p.norm()))
}

/// Camera-frame point reconstructed from a bearing and distance.
pub fn point_from_feature(q_cl: &UnitQuaternion, d: f64) -> Vec3 {
    bearing_n(q_cl) * d
}

pub fn state_vector(x: &StateVec) -> SVector<f64, NX> {
    SVector::from_column_slice(x)
}
