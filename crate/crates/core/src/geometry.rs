//! Quaternion algebra and bearing vectors on the unit sphere.
//!
//! A bearing is stored as a unit quaternion `q` whose action on `e_z` gives the
//! unit vector towards the feature. The rotated `e_x`, `e_y` span the tangent
//! plane at that bearing, which is where the minimal image dynamics live.
//!
//! Conventions: Hamilton product, storage order `(w, x, y, z)`, and
//! `q ⊙ v` denotes the active rotation `q [0; v] q*`.

use std::ops::Mul;

use nalgebra::{Matrix3, Matrix3x2, Vector3};
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub type Vec3 = Vector3<f64>;

/// Projections with depth at or below this are treated as degenerate.
pub const EPS_DEPTH: f64 = 1e-6;
/// `angle_axis_between` rejects inputs whose dot product is within this of -1.
pub const EPS_ANTIPARALLEL: f64 = 1e-9;

const SMALL_ANGLE: f64 = 1e-8;

#[derive(Debug, Clone, Copy, PartialEq, Error)]
pub enum GeometryError {
    #[error("degenerate projection: depth {depth:e} is not in front of the image plane")]
    DegenerateProjection { depth: f64 },
    #[error("antiparallel vectors (dot = {dot}): rotation axis undefined")]
    AntiparallelInput { dot: f64 },
}

/// Rotation stored as a unit quaternion `(w, x, y, z)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "[f64; 4]", into = "[f64; 4]")]
pub struct UnitQuaternion {
    w: f64,
    x: f64,
    y: f64,
    z: f64,
}

impl UnitQuaternion {
    pub const IDENTITY: Self = Self {
        w: 1.0,
        x: 0.0,
        y: 0.0,
        z: 0.0,
    };

    /// Normalizes the given coefficients. Returns `None` for a zero or
    /// non-finite input.
    pub fn try_new(w: f64, x: f64, y: f64, z: f64) -> Option<Self> {
        let n = (w * w + x * x + y * y + z * z).sqrt();
        if !n.is_finite() || n < 1e-300 {
            return None;
        }
        Some(Self {
            w: w / n,
            x: x / n,
            y: y / n,
            z: z / n,
        })
    }

    /// Like [`try_new`](Self::try_new) but panics on a zero quaternion.
    pub fn new_normalize(w: f64, x: f64, y: f64, z: f64) -> Self {
        Self::try_new(w, x, y, z).expect("cannot normalize a zero or non-finite quaternion")
    }

    pub fn from_coords(c: [f64; 4]) -> Self {
        Self::new_normalize(c[0], c[1], c[2], c[3])
    }

    pub fn from_axis_angle(axis: &Vec3, angle: f64) -> Self {
        let n = axis.norm();
        if n == 0.0 {
            return Self::IDENTITY;
        }
        quat_exp(&(axis * (angle / n)))
    }

    /// Yaw-only rotation about world `z`.
    pub fn from_yaw(yaw: f64) -> Self {
        Self::from_axis_angle(&Vec3::z(), yaw)
    }

    pub fn w(&self) -> f64 {
        self.w
    }
    pub fn x(&self) -> f64 {
        self.x
    }
    pub fn y(&self) -> f64 {
        self.y
    }
    pub fn z(&self) -> f64 {
        self.z
    }

    pub fn coords(&self) -> [f64; 4] {
        [self.w, self.x, self.y, self.z]
    }

    pub fn vector_part(&self) -> Vec3 {
        Vec3::new(self.x, self.y, self.z)
    }

    pub fn norm(&self) -> f64 {
        (self.w * self.w + self.x * self.x + self.y * self.y + self.z * self.z).sqrt()
    }

    pub fn inverse(&self) -> Self {
        Self {
            w: self.w,
            x: -self.x,
            y: -self.y,
            z: -self.z,
        }
    }

    /// The other member of the double cover.
    pub fn negated(&self) -> Self {
        Self {
            w: -self.w,
            x: -self.x,
            y: -self.y,
            z: -self.z,
        }
    }

    pub fn dot(&self, other: &Self) -> f64 {
        self.w * other.w + self.x * other.x + self.y * other.y + self.z * other.z
    }

    /// Equality as rotations, i.e. modulo sign.
    pub fn same_rotation(&self, other: &Self) -> bool {
        self.dot(other).abs() >= 1.0 - 1e-9
    }

    pub fn rotate(&self, v: &Vec3) -> Vec3 {
        quat_rotate(self, v)
    }

    pub fn to_rotation_matrix(&self) -> Matrix3<f64> {
        let (w, x, y, z) = (self.w, self.x, self.y, self.z);
        Matrix3::new(
            1.0 - 2.0 * (y * y + z * z),
            2.0 * (x * y - w * z),
            2.0 * (x * z + w * y),
            2.0 * (x * y + w * z),
            1.0 - 2.0 * (x * x + z * z),
            2.0 * (y * z - w * x),
            2.0 * (x * z - w * y),
            2.0 * (y * z + w * x),
            1.0 - 2.0 * (x * x + y * y),
        )
    }

    /// Rotation angle in `[0, π]`.
    pub fn angle(&self) -> f64 {
        2.0 * self.vector_part().norm().atan2(self.w.abs())
    }

    /// Heading of the rotated body `x` axis projected on the world `xy` plane.
    pub fn yaw(&self) -> f64 {
        let fwd = self.rotate(&Vec3::x());
        fwd.y.atan2(fwd.x)
    }
}

impl Default for UnitQuaternion {
    fn default() -> Self {
        Self::IDENTITY
    }
}

impl Mul for UnitQuaternion {
    type Output = UnitQuaternion;
    fn mul(self, rhs: Self) -> Self {
        quat_mul(&self, &rhs)
    }
}

impl From<UnitQuaternion> for [f64; 4] {
    fn from(q: UnitQuaternion) -> Self {
        q.coords()
    }
}

impl TryFrom<[f64; 4]> for UnitQuaternion {
    type Error = String;
    fn try_from(c: [f64; 4]) -> Result<Self, Self::Error> {
        Self::try_new(c[0], c[1], c[2], c[3]).ok_or_else(|| format!("invalid quaternion {c:?}"))
    }
}

/// Normalized image-plane point `(u, v, 1)`; the third coordinate is implicit.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct HomogeneousImagePoint {
    pub u: f64,
    pub v: f64,
}

impl HomogeneousImagePoint {
    pub const CENTER: Self = Self { u: 0.0, v: 0.0 };

    pub fn new(u: f64, v: f64) -> Self {
        Self { u, v }
    }

    pub fn to_vec3(&self) -> Vec3 {
        Vec3::new(self.u, self.v, 1.0)
    }

    pub fn distance_to(&self, other: &Self) -> f64 {
        (self.u - other.u).hypot(self.v - other.v)
    }
}

/// Coordinates in the tangent plane of a bearing, w.r.t. the columns of `N(q)`.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct TangentVec2 {
    pub a: f64,
    pub b: f64,
}

pub fn quat_mul(q1: &UnitQuaternion, q2: &UnitQuaternion) -> UnitQuaternion {
    let p = crate::kernel::quat_mul(&q1.coords(), &q2.coords());
    UnitQuaternion::from_coords(p)
}

pub fn quat_rotate(q: &UnitQuaternion, v: &Vec3) -> Vec3 {
    // v + 2w (r × v) + 2 r × (r × v)
    let r = q.vector_part();
    let t = 2.0 * r.cross(v);
    v + q.w * t + r.cross(&t)
}

/// Bearing vector `q ⊙ e_z`.
pub fn bearing_n(q: &UnitQuaternion) -> Vec3 {
    quat_rotate(q, &Vec3::z())
}

/// Tangent basis `[q ⊙ e_x, q ⊙ e_y]` at the bearing `q`.
pub fn bearing_tangent_basis(q: &UnitQuaternion) -> Matrix3x2<f64> {
    Matrix3x2::from_columns(&[quat_rotate(q, &Vec3::x()), quat_rotate(q, &Vec3::y())])
}

/// `[v]_z`: perspective division onto the normalized image plane.
pub fn to_homogeneous(v: &Vec3) -> Result<HomogeneousImagePoint, GeometryError> {
    if v.z <= EPS_DEPTH || !v.z.is_finite() {
        return Err(GeometryError::DegenerateProjection { depth: v.z });
    }
    Ok(HomogeneousImagePoint {
        u: v.x / v.z,
        v: v.y / v.z,
    })
}

/// Rotation vector taking `b` onto `a`: angle `acos(b·a)` about `b × a`.
pub fn angle_axis_between(a: &Vec3, b: &Vec3) -> Result<Vec3, GeometryError> {
    let dot = b.dot(a);
    if dot <= -1.0 + EPS_ANTIPARALLEL {
        return Err(GeometryError::AntiparallelInput { dot });
    }
    let axis = b.cross(a);
    let s = axis.norm();
    if s == 0.0 {
        return Ok(Vec3::zeros());
    }
    // atan2 equals acos(b·a) for unit inputs and keeps precision near 0.
    let angle = s.atan2(dot);
    Ok(axis * (angle / s))
}

/// Minimal-twist bearing quaternion of an image point.
pub fn bearing_from_image(s: &HomogeneousImagePoint) -> UnitQuaternion {
    let p = s.to_vec3().normalize();
    let r = angle_axis_between(&p, &Vec3::z()).expect("image points lie in front of the camera");
    quat_exp(&r)
}

pub fn image_from_bearing(q: &UnitQuaternion) -> Result<HomogeneousImagePoint, GeometryError> {
    to_homogeneous(&bearing_n(q))
}

pub fn skew(v: &Vec3) -> Matrix3<f64> {
    Matrix3::new(0.0, -v.z, v.y, v.z, 0.0, -v.x, -v.y, v.x, 0.0)
}

/// Exponential map from a rotation vector to a unit quaternion.
pub fn quat_exp(r: &Vec3) -> UnitQuaternion {
    let theta = r.norm();
    if theta < SMALL_ANGLE {
        let h = 0.5 * r;
        return UnitQuaternion::new_normalize(1.0 - theta * theta / 8.0, h.x, h.y, h.z);
    }
    let half = 0.5 * theta;
    let k = half.sin() / theta;
    UnitQuaternion::new_normalize(half.cos(), k * r.x, k * r.y, k * r.z)
}

/// Inverse of [`quat_exp`] on the shortest arc.
pub fn quat_log(q: &UnitQuaternion) -> Vec3 {
    let q = if q.w() < 0.0 { q.negated() } else { *q };
    let v = q.vector_part();
    let s = v.norm();
    if s < SMALL_ANGLE {
        return 2.0 * v;
    }
    v * (2.0 * s.atan2(q.w()) / s)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;
    use std::f64::consts::{FRAC_PI_2, FRAC_PI_4, PI};

    // Independent rotation matrix built from axis-angle via Rodrigues.
    fn rodrigues(axis: &Vec3, angle: f64) -> Matrix3<f64> {
        let k = axis.normalize();
        let kx = Matrix3::new(0.0, -k.z, k.y, k.z, 0.0, -k.x, -k.y, k.x, 0.0);
        Matrix3::identity() + angle.sin() * kx + (1.0 - angle.cos()) * kx * kx
    }

    fn arb_quat() -> impl Strategy<Value = UnitQuaternion> {
        (-1.0..1.0f64, -1.0..1.0f64, -1.0..1.0f64, -1.0..1.0f64)
            .prop_filter("non-degenerate", |(w, x, y, z)| {
                w * w + x * x + y * y + z * z > 1e-3
            })
            .prop_map(|(w, x, y, z)| UnitQuaternion::new_normalize(w, x, y, z))
    }

    fn arb_vec(scale: f64) -> impl Strategy<Value = Vec3> {
        (-scale..scale, -scale..scale, -scale..scale).prop_map(|(x, y, z)| Vec3::new(x, y, z))
    }

    #[test]
    fn quat_mul_identity_and_inverse() {
        let q = UnitQuaternion::new_normalize(0.3, -0.2, 0.9, 0.1);
        assert!((UnitQuaternion::IDENTITY * q).same_rotation(&q));
        assert!((q * q.inverse()).same_rotation(&UnitQuaternion::IDENTITY));
    }

    #[test]
    fn quarter_turns_compose_to_half_turn() {
        let q90 = UnitQuaternion::from_axis_angle(&Vec3::z(), FRAC_PI_2);
        let composed = (q90 * q90).to_rotation_matrix();
        let expected = rodrigues(&Vec3::z(), FRAC_PI_2) * rodrigues(&Vec3::z(), FRAC_PI_2);
        assert_relative_eq!(composed, expected, epsilon = 1e-12);
        assert!((q90 * q90).same_rotation(&UnitQuaternion::from_axis_angle(&Vec3::z(), PI)));
    }

    #[test]
    fn rotate_axis_aligned() {
        let v = Vec3::new(1.0, 2.0, 3.0);
        assert_relative_eq!(UnitQuaternion::IDENTITY.rotate(&v), v);
        let qx = UnitQuaternion::from_axis_angle(&Vec3::x(), FRAC_PI_2);
        assert_relative_eq!(
            qx.rotate(&Vec3::z()),
            Vec3::new(0.0, -1.0, 0.0),
            epsilon = 1e-15
        );
    }

    #[test]
    fn bearing_basics() {
        assert_relative_eq!(bearing_n(&UnitQuaternion::IDENTITY), Vec3::z());
        let qy = UnitQuaternion::from_axis_angle(&Vec3::y(), FRAC_PI_2);
        assert_relative_eq!(bearing_n(&qy), Vec3::x(), epsilon = 1e-15);
        let n = bearing_tangent_basis(&UnitQuaternion::IDENTITY);
        assert_eq!(n.column(0), Vec3::x());
        assert_eq!(n.column(1), Vec3::y());
    }

    #[test]
    fn projection_cases() {
        assert_eq!(
            to_homogeneous(&Vec3::new(0.0, 0.0, 5.0)).unwrap(),
            HomogeneousImagePoint::new(0.0, 0.0)
        );
        assert_eq!(
            to_homogeneous(&Vec3::new(2.0, -1.0, 2.0)).unwrap(),
            HomogeneousImagePoint::new(1.0, -0.5)
        );
        assert!(matches!(
            to_homogeneous(&Vec3::new(1.0, 1.0, 0.0)),
            Err(GeometryError::DegenerateProjection { .. })
        ));
    }

    #[test]
    fn angle_axis_cases() {
        assert_eq!(
            angle_axis_between(&Vec3::z(), &Vec3::z()).unwrap(),
            Vec3::zeros()
        );
        let a = Vec3::new(1.0, 0.0, 1.0).normalize();
        let r = angle_axis_between(&a, &Vec3::z()).unwrap();
        assert_relative_eq!(r, Vec3::new(0.0, FRAC_PI_4, 0.0), epsilon = 1e-15);
        assert_relative_eq!(quat_exp(&r).rotate(&Vec3::z()), a, epsilon = 1e-15);
        assert!(matches!(
            angle_axis_between(&-Vec3::z(), &Vec3::z()),
            Err(GeometryError::AntiparallelInput { .. })
        ));
    }

    #[test]
    fn image_bearing_cases() {
        assert_eq!(
            bearing_from_image(&HomogeneousImagePoint::CENTER),
            UnitQuaternion::IDENTITY
        );
        let q = bearing_from_image(&HomogeneousImagePoint::new(1.0, 0.0));
        assert!(q.same_rotation(&UnitQuaternion::from_axis_angle(&Vec3::y(), FRAC_PI_4)));
        let s =
            image_from_bearing(&UnitQuaternion::from_axis_angle(&Vec3::y(), FRAC_PI_4)).unwrap();
        assert_relative_eq!(s.u, 1.0, epsilon = 1e-15);
        assert_relative_eq!(s.v, 0.0, epsilon = 1e-15);
        assert!(image_from_bearing(&UnitQuaternion::from_axis_angle(&Vec3::x(), PI)).is_err());
    }

    #[test]
    fn skew_cases() {
        assert_eq!(skew(&Vec3::z()) * Vec3::x(), Vec3::y());
        let v = Vec3::new(0.3, -1.2, 2.0);
        assert_eq!(skew(&v) * v, Vec3::zeros());
        assert_eq!(skew(&v) + skew(&v).transpose(), Matrix3::zeros());
    }

    #[test]
    fn exp_cases() {
        assert_eq!(quat_exp(&Vec3::zeros()), UnitQuaternion::IDENTITY);
        let q = quat_exp(&Vec3::new(0.0, 0.0, FRAC_PI_2));
        assert_relative_eq!(q.rotate(&Vec3::x()), Vec3::y(), epsilon = 1e-15);
        let tiny = quat_exp(&Vec3::new(1e-10, 0.0, 0.0));
        assert_relative_eq!(tiny.x(), 5e-11, epsilon = 1e-20);
    }

    #[test]
    fn coefficient_arrays_are_normalized() {
        assert_eq!(
            UnitQuaternion::try_from([2.0, 0.0, 0.0, 0.0]).unwrap(),
            UnitQuaternion::IDENTITY
        );
        assert!(UnitQuaternion::try_from([0.0; 4]).is_err());
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(1000))]

        #[test]
        fn rotate_matches_rotation_matrix(axis in arb_vec(1.0), angle in -PI..PI, v in arb_vec(10.0)) {
            prop_assume!(axis.norm() > 1e-3);
            let q = UnitQuaternion::from_axis_angle(&axis, angle);
            let expected = rodrigues(&axis, angle) * v;
            prop_assert!((q.rotate(&v) - expected).norm() < 1e-12 * (1.0 + v.norm()));
            prop_assert!((q.rotate(&v).norm() - v.norm()).abs() < 1e-12 * (1.0 + v.norm()));
        }

        #[test]
        fn bearing_frame_is_orthonormal(q in arb_quat()) {
            let n = bearing_n(&q);
            let nn = bearing_tangent_basis(&q);
            prop_assert!((n.norm() - 1.0).abs() < 1e-12);
            prop_assert!((nn.transpose() * n).norm() < 1e-12);
            prop_assert!((nn.transpose() * nn - nalgebra::Matrix2::identity()).norm() < 1e-12);
        }

        #[test]
        fn image_round_trip(u in -10.0..10.0f64, v in -10.0..10.0f64) {
            let s = HomogeneousImagePoint::new(u, v);
            let back = image_from_bearing(&bearing_from_image(&s)).unwrap();
            prop_assert!((back.u - u).abs() < 1e-9 && (back.v - v).abs() < 1e-9);
        }

        #[test]
        fn distance_and_bearing_reconstruct_position(x in -5.0..5.0f64, y in -5.0..5.0f64, z in 0.1..10.0f64) {
            let p = Vec3::new(x, y, z);
            let q = bearing_from_image(&to_homogeneous(&p).unwrap());
            let rebuilt = bearing_n(&q) * p.norm();
            prop_assert!((rebuilt - p).norm() <= 1e-9 * p.norm());
        }

        #[test]
        fn exp_of_negated_is_inverse(r in arb_vec(3.0)) {
            prop_assert!(quat_exp(&-r).same_rotation(&quat_exp(&r).inverse()));
        }

        #[test]
        fn exp_of_angle_axis_maps_b_onto_a(a in arb_vec(1.0), b in arb_vec(1.0)) {
            prop_assume!(a.norm() > 1e-2 && b.norm() > 1e-2);
            let (a, b) = (a.normalize(), b.normalize());
            prop_assume!(a.dot(&b) > -0.999);
            let r = angle_axis_between(&a, &b).unwrap();
            prop_assert!((quat_exp(&r).rotate(&b) - a).norm() < 1e-9);
        }

        #[test]
        fn quat_mul_matches_matrix_product(p in arb_quat(), q in arb_quat()) {
            let lhs = (p * q).to_rotation_matrix();
            let rhs = p.to_rotation_matrix() * q.to_rotation_matrix();
            prop_assert!((lhs - rhs).norm() < 1e-12);
            prop_assert!(((p * q).norm() - 1.0).abs() < 1e-9);
        }
    }
}
