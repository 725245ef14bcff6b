//! Stage objectives and path constraints.
//!
//! Every objective is a weighted sum of squares, so the solver consumes them
//! as a residual vector `r(x)` with `L(x) = ‖r(x)‖²`. The residual layout is
//!
//! | rows  | term                                   |
//! |-------|----------------------------------------|
//! | 0..2  | compensated image error `s_c* − s*`     |
//! | 2     | distance error `d − d*`                 |
//! | 3..5  | perception `s_c` (uncompensated)        |
//! | 5..8  | velocity error `v_w − v*`               |
//! | 8..12 | attitude error `q_wb − q*` (sign-aligned) |

use nalgebra::{SMatrix, SVector};
use serde::{Deserialize, Serialize};

use crate::dynamics::{ControlInput, QuadVisualState, StateVec, NX};
use crate::geometry::{
    bearing_n, to_homogeneous, GeometryError, HomogeneousImagePoint, UnitQuaternion, Vec3,
    EPS_DEPTH,
};
use crate::kernel::{lift4, quat_mul, rotate, Dual, Real, Q4};

/// Cost charged for a stage whose feature cannot be projected.
pub const PENALTY_CEILING: f64 = 1e6;
/// Visibility residual reported for an unprojectable feature.
pub const DEGENERATE_VIOLATION: f64 = 1e3;
/// Upper distance used by the dynamic image weight (m).
pub const D_CAP: f64 = 10.0;

pub const NR: usize = 12;

/// Diagonal weights of the three objectives.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CostWeights {
    pub q_s: [f64; 2],
    pub q_d: f64,
    pub q_p: [f64; 2],
    pub q_v: [f64; 3],
    pub q_q: [f64; 4],
}

impl Default for CostWeights {
    fn default() -> Self {
        Self {
            q_s: [1.0, 1.0],
            q_d: 1.0,
            q_p: [2.0, 2.0],
            q_v: [0.1, 0.1, 0.1],
            q_q: [0.0, 0.5, 0.5, 5.0],
        }
    }
}

impl CostWeights {
    pub fn validate(&self) -> Result<(), String> {
        let all = self
            .q_s
            .iter()
            .chain(std::iter::once(&self.q_d))
            .chain(&self.q_p)
            .chain(&self.q_v)
            .chain(&self.q_q);
        for w in all {
            if !(*w >= 0.0 && w.is_finite()) {
                return Err(format!("weights must be finite and non-negative, got {w}"));
            }
        }
        Ok(())
    }

    pub fn without_perception(mut self) -> Self {
        self.q_p = [0.0; 2];
        self
    }
}

/// Image-plane visibility box and actuation limits.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Bounds {
    pub s_min: [f64; 2],
    pub s_max: [f64; 2],
    pub c_min: f64,
    pub c_max: f64,
    pub omega_min: [f64; 3],
    pub omega_max: [f64; 3],
}

impl Default for Bounds {
    fn default() -> Self {
        Self {
            s_min: [-1.0; 2],
            s_max: [1.0; 2],
            c_min: 2.0,
            c_max: 20.0,
            omega_min: [-3.0; 3],
            omega_max: [3.0; 3],
        }
    }
}

impl Bounds {
    pub fn validate(&self) -> Result<(), String> {
        let pairs = [
            (self.s_min[0], self.s_max[0]),
            (self.s_min[1], self.s_max[1]),
            (self.c_min, self.c_max),
            (self.omega_min[0], self.omega_max[0]),
            (self.omega_min[1], self.omega_max[1]),
            (self.omega_min[2], self.omega_max[2]),
        ];
        if pairs.iter().any(|(lo, hi)| !(lo < hi)) {
            return Err("every lower bound must be strictly below its upper bound".into());
        }
        if self.c_min < 0.0 {
            return Err("minimum thrust must be non-negative".into());
        }
        Ok(())
    }

    pub fn input_lower(&self) -> [f64; 4] {
        [
            self.c_min,
            self.omega_min[0],
            self.omega_min[1],
            self.omega_min[2],
        ]
    }

    pub fn input_upper(&self) -> [f64; 4] {
        [
            self.c_max,
            self.omega_max[0],
            self.omega_max[1],
            self.omega_max[2],
        ]
    }

    pub fn contains_input(&self, u: &ControlInput) -> bool {
        let (lo, hi, a) = (self.input_lower(), self.input_upper(), u.to_array());
        (0..4).all(|i| lo[i] <= a[i] && a[i] <= hi[i])
    }

    pub fn contains_image(&self, s: &HomogeneousImagePoint) -> bool {
        self.s_min[0] <= s.u && s.u <= self.s_max[0] && self.s_min[1] <= s.v && s.v <= self.s_max[1]
    }
}

/// Targets for one horizon node.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ReferencePoint {
    pub s_star: HomogeneousImagePoint,
    pub d_star: f64,
    pub v_star: Vec3,
    pub q_star: UnitQuaternion,
}

impl ReferencePoint {
    pub fn validate(&self) -> Result<(), String> {
        if !(self.d_star > 0.0 && self.d_star.is_finite()) {
            return Err(format!(
                "reference distance must be positive, got {}",
                self.d_star
            ));
        }
        Ok(())
    }
}

// ---------------------------------------------------------------------------

fn project<T: Real>(n: &[T; 3]) -> Option<[T; 2]> {
    if n[2].re() <= EPS_DEPTH {
        return None;
    }
    Some([n[0] / n[2], n[1] / n[2]])
}

fn ez<T: Real>() -> [T; 3] {
    [T::cst(0.0), T::cst(0.0), T::cst(1.0)]
}

fn compensated_image_raw<T: Real>(
    q_wb: &Q4<T>,
    q_cl: &Q4<T>,
    q_bc: &UnitQuaternion,
) -> Option<[T; 2]> {
    let bc: Q4<T> = lift4(&q_bc.coords());
    let cb: Q4<T> = lift4(&q_bc.inverse().coords());
    let q = quat_mul(&quat_mul(&quat_mul(&cb, q_wb), &bc), q_cl);
    project(&rotate(&q, &ez()))
}

fn image_raw<T: Real>(q_cl: &Q4<T>) -> Option<[T; 2]> {
    project(&rotate(q_cl, &ez()))
}

/// Weighted residuals of one stage. The second value is the constant penalty
/// for any term whose projection is degenerate (its rows are left at zero).
pub(crate) fn stage_residuals_raw<T: Real>(
    x: &[T; NX],
    r: &ReferencePoint,
    w: &CostWeights,
    q_bc: &UnitQuaternion,
) -> ([T; NR], f64) {
    let zero = T::cst(0.0);
    let mut out = [zero; NR];
    let mut penalty = 0.0;
    let q_wb = [x[3], x[4], x[5], x[6]];
    let q_cl = [x[7], x[8], x[9], x[10]];

    match compensated_image_raw(&q_wb, &q_cl, q_bc) {
        Some(s) => {
            out[0] = T::cst(w.q_s[0].sqrt()) * (s[0] - T::cst(r.s_star.u));
            out[1] = T::cst(w.q_s[1].sqrt()) * (s[1] - T::cst(r.s_star.v));
            out[2] = T::cst(w.q_d.sqrt()) * (x[11] - T::cst(r.d_star));
        }
        None => penalty += PENALTY_CEILING,
    }

    if w.q_p != [0.0; 2] {
        match image_raw(&q_cl) {
            Some(s) => {
                out[3] = T::cst(w.q_p[0].sqrt()) * s[0];
                out[4] = T::cst(w.q_p[1].sqrt()) * s[1];
            }
            None => penalty += PENALTY_CEILING,
        }
    }

    for i in 0..3 {
        out[5 + i] = T::cst(w.q_v[i].sqrt()) * (x[i] - T::cst(r.v_star[i]));
    }
    let qs = r.q_star.coords();
    let dot: f64 = (0..4).map(|i| q_wb[i].re() * qs[i]).sum();
    let sign = if dot < 0.0 { -1.0 } else { 1.0 };
    for i in 0..4 {
        out[8 + i] = T::cst(w.q_q[i].sqrt()) * (q_wb[i] * T::cst(sign) - T::cst(qs[i]));
    }
    (out, penalty)
}

pub(crate) fn visibility_raw<T: Real>(q_cl: &Q4<T>, b: &Bounds) -> Option<[T; 4]> {
    let s = image_raw(q_cl)?;
    Some([
        s[0] - T::cst(b.s_min[0]),
        s[1] - T::cst(b.s_min[1]),
        T::cst(b.s_max[0]) - s[0],
        T::cst(b.s_max[1]) - s[1],
    ])
}

// ---------------------------------------------------------------------------
// typed surface

/// Image of the feature as seen by a camera whose body has identity attitude.
pub fn rotation_compensated_image(
    q_wb: &UnitQuaternion,
    q_cl: &UnitQuaternion,
    q_bc: &UnitQuaternion,
) -> Result<HomogeneousImagePoint, GeometryError> {
    let q = q_bc.inverse() * *q_wb * *q_bc * *q_cl;
    to_homogeneous(&bearing_n(&q))
}

/// Uncompensated image coordinate `[n(q_cl)]_z`.
pub fn feature_image(q_cl: &UnitQuaternion) -> Result<HomogeneousImagePoint, GeometryError> {
    to_homogeneous(&bearing_n(q_cl))
}

pub fn visual_servo_cost(
    x: &QuadVisualState,
    r: &ReferencePoint,
    w: &CostWeights,
    q_bc: &UnitQuaternion,
) -> f64 {
    let Ok(s) = rotation_compensated_image(&x.q_wb, &x.q_cl, q_bc) else {
        return PENALTY_CEILING;
    };
    let (du, dv) = (s.u - r.s_star.u, s.v - r.s_star.v);
    w.q_s[0] * du * du + w.q_s[1] * dv * dv + w.q_d * (x.d - r.d_star).powi(2)
}

pub fn perception_cost(x: &QuadVisualState, w: &CostWeights) -> f64 {
    if w.q_p == [0.0; 2] {
        return 0.0;
    }
    match feature_image(&x.q_cl) {
        Ok(s) => w.q_p[0] * s.u * s.u + w.q_p[1] * s.v * s.v,
        Err(_) => PENALTY_CEILING,
    }
}

pub fn action_cost(x: &QuadVisualState, r: &ReferencePoint, w: &CostWeights) -> f64 {
    let dv = x.v_w - r.v_star;
    let velocity: f64 = (0..3).map(|i| w.q_v[i] * dv[i] * dv[i]).sum();
    let q = if x.q_wb.dot(&r.q_star) < 0.0 {
        x.q_wb.negated()
    } else {
        x.q_wb
    };
    let (a, b) = (q.coords(), r.q_star.coords());
    let attitude: f64 = (0..4).map(|i| w.q_q[i] * (a[i] - b[i]).powi(2)).sum();
    velocity + attitude
}

pub fn stage_cost(
    x: &QuadVisualState,
    r: &ReferencePoint,
    w: &CostWeights,
    q_bc: &UnitQuaternion,
) -> f64 {
    visual_servo_cost(x, r, w, q_bc) + perception_cost(x, w) + action_cost(x, r, w)
}

/// Stage cost on flat coordinates, quaternions taken as given (not normalized).
pub fn stage_cost_flat(
    x: &StateVec,
    r: &ReferencePoint,
    w: &CostWeights,
    q_bc: &UnitQuaternion,
) -> f64 {
    let (res, penalty) = stage_residuals_raw(x, r, w, q_bc);
    res.iter().map(|v| v * v).sum::<f64>() + penalty
}

/// Residuals, their Jacobian w.r.t. the flat state and the degeneracy penalty.
pub fn stage_residual_jacobian(
    x: &StateVec,
    r: &ReferencePoint,
    w: &CostWeights,
    q_bc: &UnitQuaternion,
) -> (SVector<f64, NR>, SMatrix<f64, NR, NX>, f64) {
    let xs: [Dual<NX>; NX] = std::array::from_fn(|i| Dual::variable(x[i], i));
    let (res, penalty) = stage_residuals_raw(&xs, r, w, q_bc);
    (
        SVector::from_fn(|i, _| res[i].re),
        SMatrix::from_fn(|i, j| res[i].eps[j]),
        penalty,
    )
}

/// Gradient of [`stage_cost_flat`].
pub fn stage_cost_gradient(
    x: &StateVec,
    r: &ReferencePoint,
    w: &CostWeights,
    q_bc: &UnitQuaternion,
) -> SVector<f64, NX> {
    let (res, jac, _) = stage_residual_jacobian(x, r, w, q_bc);
    2.0 * jac.transpose() * res
}

/// Image-weight scaling by the squared measured distance, clamped to
/// `[1, D_CAP²]`, so image and distance errors carry comparable metric weight.
pub fn dynamic_visual_weight(d_measured: f64, base: [f64; 2]) -> [f64; 2] {
    let k = (d_measured * d_measured).clamp(1.0, D_CAP * D_CAP);
    [base[0] * k, base[1] * k]
}

/// `(s_c − s_min; s_max − s_c)`; all entries are non-negative iff the feature
/// is inside the visibility box.
pub fn visibility_residual(x: &QuadVisualState, b: &Bounds) -> [f64; 4] {
    visibility_residual_flat(&x.to_array(), b)
}

pub fn visibility_residual_flat(x: &StateVec, b: &Bounds) -> [f64; 4] {
    visibility_raw(&[x[7], x[8], x[9], x[10]], b).unwrap_or([-DEGENERATE_VIOLATION; 4])
}

/// Visibility residual and its Jacobian w.r.t. the flat state.
pub fn visibility_jacobian(x: &StateVec, b: &Bounds) -> ([f64; 4], SMatrix<f64, 4, NX>) {
    let q: [Dual<4>; 4] = std::array::from_fn(|i| Dual::variable(x[7 + i], i));
    match visibility_raw(&q, b) {
        Some(g) => (
            std::array::from_fn(|i| g[i].re),
            SMatrix::from_fn(|i, j| {
                if (7..11).contains(&j) {
                    g[i].eps[j - 7]
                } else {
                    0.0
                }
            }),
        ),
        None => ([-DEGENERATE_VIOLATION; 4], SMatrix::zeros()),
    }
}

pub fn clamp_input(u: &ControlInput, b: &Bounds) -> ControlInput {
    let (lo, hi, a) = (b.input_lower(), b.input_upper(), u.to_array());
    ControlInput::from_array(&std::array::from_fn(|i| a[i].clamp(lo[i], hi[i])))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dynamics::CameraExtrinsics;
    use crate::geometry::{bearing_from_image, image_from_bearing};
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    fn reference() -> ReferencePoint {
        ReferencePoint {
            s_star: HomogeneousImagePoint::new(0.1, -0.2),
            d_star: 3.0,
            v_star: Vec3::new(0.5, 0.0, 0.0),
            q_star: UnitQuaternion::from_yaw(0.3),
        }
    }

    fn state_at(r: &ReferencePoint) -> QuadVisualState {
        QuadVisualState {
            v_w: r.v_star,
            q_wb: UnitQuaternion::IDENTITY,
            q_cl: bearing_from_image(&r.s_star),
            d: r.d_star,
        }
    }

    fn arb_quat() -> impl Strategy<Value = UnitQuaternion> {
        prop::array::uniform4(-1.0..1.0f64).prop_filter_map("non-degenerate", |c| {
            UnitQuaternion::try_new(c[0], c[1], c[2], c[3])
        })
    }

    #[test]
    fn compensation_cases() {
        let q_cl = bearing_from_image(&HomogeneousImagePoint::new(0.3, -0.4));
        let q_bc = CameraExtrinsics::default().q_bc;
        assert_eq!(
            rotation_compensated_image(&UnitQuaternion::IDENTITY, &q_cl, &q_bc).unwrap(),
            image_from_bearing(&q_cl).unwrap()
        );
        let yaw = UnitQuaternion::from_yaw(0.7);
        let s =
            rotation_compensated_image(&yaw, &UnitQuaternion::IDENTITY, &UnitQuaternion::IDENTITY)
                .unwrap();
        assert_relative_eq!(s.u, 0.0, epsilon = 1e-15);
        assert_relative_eq!(s.v, 0.0, epsilon = 1e-15);

        // 10° pitch with an identity camera: e_z tilted about body y
        let pitch = UnitQuaternion::from_axis_angle(&Vec3::y(), 10f64.to_radians());
        let s = rotation_compensated_image(
            &pitch,
            &UnitQuaternion::IDENTITY,
            &UnitQuaternion::IDENTITY,
        )
        .unwrap();
        let m = pitch.to_rotation_matrix() * Vec3::z();
        assert_relative_eq!(s.u, m.x / m.z, epsilon = 1e-14);
        assert_relative_eq!(s.u, 10f64.to_radians().tan(), epsilon = 1e-14);
        assert_relative_eq!(s.v, 0.0, epsilon = 1e-15);
    }

    #[test]
    fn visual_servo_cases() {
        let w = CostWeights {
            q_d: 2.0,
            ..CostWeights::default()
        };
        let r = ReferencePoint {
            v_star: Vec3::zeros(),
            q_star: UnitQuaternion::IDENTITY,
            ..reference()
        };
        let q_bc = UnitQuaternion::IDENTITY;
        let mut x = state_at(&r);
        assert_relative_eq!(visual_servo_cost(&x, &r, &w, &q_bc), 0.0, epsilon = 1e-24);
        x.d = r.d_star + 1.0;
        assert_relative_eq!(visual_servo_cost(&x, &r, &w, &q_bc), 2.0, epsilon = 1e-12);

        let x1 = QuadVisualState {
            q_cl: bearing_from_image(&HomogeneousImagePoint::new(0.2, -0.2)),
            ..state_at(&r)
        };
        let x2 = QuadVisualState {
            q_cl: bearing_from_image(&HomogeneousImagePoint::new(0.3, -0.2)),
            ..state_at(&r)
        };
        let c1 = visual_servo_cost(&x1, &r, &w, &q_bc);
        let c2 = visual_servo_cost(&x2, &r, &w, &q_bc);
        assert_relative_eq!(c2, 4.0 * c1, max_relative = 1e-9);
    }

    #[test]
    fn perception_cases() {
        let w = CostWeights {
            q_p: [4.0, 4.0],
            ..CostWeights::default()
        };
        let mut x = state_at(&reference());
        x.q_cl = UnitQuaternion::IDENTITY;
        assert_eq!(perception_cost(&x, &w), 0.0);
        x.q_cl = bearing_from_image(&HomogeneousImagePoint::new(0.5, 0.0));
        assert_relative_eq!(perception_cost(&x, &w), 1.0, epsilon = 1e-12);
        let before = perception_cost(&x, &w);
        x.q_wb = UnitQuaternion::new_normalize(0.2, 0.9, -0.3, 0.1);
        assert_eq!(perception_cost(&x, &w), before);
        x.q_cl = UnitQuaternion::from_axis_angle(&Vec3::x(), std::f64::consts::PI);
        assert_eq!(perception_cost(&x, &w), PENALTY_CEILING);
    }

    #[test]
    fn action_cases() {
        let w = CostWeights {
            q_v: [3.0, 1.0, 1.0],
            ..CostWeights::default()
        };
        let r = reference();
        let mut x = state_at(&r);
        x.q_wb = r.q_star;
        assert_eq!(action_cost(&x, &r, &w), 0.0);
        x.q_wb = r.q_star.negated();
        assert_eq!(action_cost(&x, &r, &w), 0.0);
        x.v_w = r.v_star + Vec3::x();
        assert_relative_eq!(action_cost(&x, &r, &w), 3.0, epsilon = 1e-15);
    }

    #[test]
    fn dynamic_weight_cases() {
        let base = [0.5, 2.0];
        assert_eq!(dynamic_visual_weight(1.0, base), base);
        assert_eq!(dynamic_visual_weight(0.3, base), base);
        assert_eq!(dynamic_visual_weight(3.0, base), [4.5, 18.0]);
        assert_eq!(dynamic_visual_weight(100.0, base), [50.0, 200.0]);
    }

    #[test]
    fn visibility_cases() {
        let b = Bounds::default();
        let mut x = state_at(&reference());
        x.q_cl = UnitQuaternion::IDENTITY;
        assert_eq!(visibility_residual(&x, &b), [1.0, 1.0, 1.0, 1.0]);
        x.q_cl = bearing_from_image(&HomogeneousImagePoint::new(1.0, 0.0));
        let g = visibility_residual(&x, &b);
        assert_relative_eq!(g[0], 2.0, epsilon = 1e-12);
        assert_relative_eq!(g[2], 0.0, epsilon = 1e-12);
        x.q_cl = bearing_from_image(&HomogeneousImagePoint::new(1.2, 0.0));
        assert_relative_eq!(visibility_residual(&x, &b)[2], -0.2, epsilon = 1e-12);
        x.q_cl = UnitQuaternion::from_axis_angle(&Vec3::x(), std::f64::consts::PI);
        assert!(visibility_residual(&x, &b).iter().all(|&g| g < 0.0));
    }

    #[test]
    fn clamp_cases() {
        let b = Bounds::default();
        let u = ControlInput::new(9.0, Vec3::new(0.5, -1.0, 2.0));
        assert_eq!(clamp_input(&u, &b), u);
        assert_eq!(
            clamp_input(&ControlInput::new(100.0, Vec3::zeros()), &b).c,
            20.0
        );
        assert_eq!(
            clamp_input(&ControlInput::new(9.0, Vec3::new(-10.0, 0.0, 0.0)), &b)
                .omega_b
                .x,
            -3.0
        );
    }

    #[test]
    fn validation() {
        assert!(Bounds::default().validate().is_ok());
        let bad = Bounds {
            c_min: 5.0,
            c_max: 4.0,
            ..Bounds::default()
        };
        assert!(bad.validate().is_err());
        let w = CostWeights {
            q_d: -1.0,
            ..CostWeights::default()
        };
        assert!(w.validate().is_err());
    }

    proptest! {
        #[test]
        fn costs_are_nonnegative(q_wb in arb_quat(), q_cl in arb_quat(), d in 0.1..20.0f64, v in prop::array::uniform3(-5.0..5.0f64)) {
            let x = QuadVisualState { v_w: Vec3::from(v), q_wb, q_cl, d };
            let (r, w) = (reference(), CostWeights::default());
            let q_bc = CameraExtrinsics::default().q_bc;
            prop_assert!(visual_servo_cost(&x, &r, &w, &q_bc) >= 0.0);
            prop_assert!(perception_cost(&x, &w) >= 0.0);
            prop_assert!(action_cost(&x, &r, &w) >= 0.0);
            let flipped = QuadVisualState { q_wb: q_wb.negated(), ..x };
            prop_assert_eq!(action_cost(&x, &r, &w), action_cost(&flipped, &r, &w));
        }

        #[test]
        fn visibility_sign_matches_box_test(u in -2.0..2.0f64, v in -2.0..2.0f64) {
            let b = Bounds::default();
            let x = QuadVisualState { q_cl: bearing_from_image(&HomogeneousImagePoint::new(u, v)), ..state_at(&reference()) };
            let s = feature_image(&x.q_cl).unwrap();
            let inside = b.s_min[0] <= s.u && s.u <= b.s_max[0] && b.s_min[1] <= s.v && s.v <= b.s_max[1];
            prop_assert_eq!(visibility_residual(&x, &b).iter().all(|&g| g >= 0.0), inside);
        }

        #[test]
        fn typed_and_flat_costs_agree(q_wb in arb_quat(), q_cl in arb_quat(), d in 0.1..20.0f64) {
            let x = QuadVisualState { v_w: Vec3::new(0.3, -1.0, 0.2), q_wb, q_cl, d };
            let (r, w) = (reference(), CostWeights::default());
            let q_bc = CameraExtrinsics::default().q_bc;
            let typed = stage_cost(&x, &r, &w, &q_bc);
            let flat = stage_cost_flat(&x.to_array(), &r, &w, &q_bc);
            prop_assert!((typed - flat).abs() <= 1e-9 * (1.0 + typed.abs()));
        }
    }
}
