//! Scalar-generic building blocks shared by the model and the costs.
//!
//! Everything here works on plain arrays over a [`Real`] so the same code can
//! be evaluated on `f64` or on forward-mode [`Dual`] numbers. Quaternions are
//! raw `[w, x, y, z]` 4-vectors: nothing normalizes them implicitly, so
//! derivatives w.r.t. the raw coordinates are well defined.

use std::ops::{Add, AddAssign, Div, Mul, Neg, Sub, SubAssign};

pub trait Real:
    Copy
    + Add<Output = Self>
    + Sub<Output = Self>
    + Mul<Output = Self>
    + Div<Output = Self>
    + Neg<Output = Self>
    + AddAssign
    + SubAssign
{
    fn cst(v: f64) -> Self;
    /// Value part, derivatives dropped.
    fn re(&self) -> f64;
    fn sqrt(self) -> Self;
}

impl Real for f64 {
    #[inline]
    fn cst(v: f64) -> Self {
        v
    }
    #[inline]
    fn re(&self) -> f64 {
        *self
    }
    #[inline]
    fn sqrt(self) -> Self {
        f64::sqrt(self)
    }
}

/// Forward-mode dual number carrying `N` directional derivatives.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Dual<const N: usize> {
    pub re: f64,
    pub eps: [f64; N],
}

impl<const N: usize> Dual<N> {
    pub fn constant(re: f64) -> Self {
        Self { re, eps: [0.0; N] }
    }

    /// Independent variable number `i`.
    pub fn variable(re: f64, i: usize) -> Self {
        let mut eps = [0.0; N];
        eps[i] = 1.0;
        Self { re, eps }
    }
}

impl<const N: usize> Add for Dual<N> {
    type Output = Self;
    #[inline]
    fn add(mut self, rhs: Self) -> Self {
        self += rhs;
        self
    }
}

impl<const N: usize> AddAssign for Dual<N> {
    #[inline]
    fn add_assign(&mut self, rhs: Self) {
        self.re += rhs.re;
        for (a, b) in self.eps.iter_mut().zip(rhs.eps.iter()) {
            *a += b;
        }
    }
}

impl<const N: usize> Sub for Dual<N> {
    type Output = Self;
    #[inline]
    fn sub(mut self, rhs: Self) -> Self {
        self -= rhs;
        self
    }
}

impl<const N: usize> SubAssign for Dual<N> {
    #[inline]
    fn sub_assign(&mut self, rhs: Self) {
        self.re -= rhs.re;
        for (a, b) in self.eps.iter_mut().zip(rhs.eps.iter()) {
            *a -= b;
        }
    }
}

impl<const N: usize> Mul for Dual<N> {
    type Output = Self;
    #[inline]
    fn mul(self, rhs: Self) -> Self {
        let mut eps = [0.0; N];
        for i in 0..N {
            eps[i] = self.eps[i] * rhs.re + self.re * rhs.eps[i];
        }
        Self {
            re: self.re * rhs.re,
            eps,
        }
    }
}

impl<const N: usize> Div for Dual<N> {
    type Output = Self;
    #[inline]
    fn div(self, rhs: Self) -> Self {
        let inv = 1.0 / rhs.re;
        let re = self.re * inv;
        let mut eps = [0.0; N];
        for i in 0..N {
            eps[i] = (self.eps[i] - re * rhs.eps[i]) * inv;
        }
        Self { re, eps }
    }
}

impl<const N: usize> Neg for Dual<N> {
    type Output = Self;
    #[inline]
    fn neg(self) -> Self {
        let mut eps = self.eps;
        eps.iter_mut().for_each(|e| *e = -*e);
        Self { re: -self.re, eps }
    }
}

impl<const N: usize> Real for Dual<N> {
    #[inline]
    fn cst(v: f64) -> Self {
        Self::constant(v)
    }
    #[inline]
    fn re(&self) -> f64 {
        self.re
    }
    #[inline]
    fn sqrt(self) -> Self {
        let r = self.re.sqrt();
        let k = 0.5 / r;
        let mut eps = self.eps;
        eps.iter_mut().for_each(|e| *e *= k);
        Self { re: r, eps }
    }
}

pub type V3<T> = [T; 3];
pub type Q4<T> = [T; 4];

#[inline]
pub fn lift3<T: Real>(v: &[f64; 3]) -> V3<T> {
    [T::cst(v[0]), T::cst(v[1]), T::cst(v[2])]
}

#[inline]
pub fn lift4<T: Real>(q: &[f64; 4]) -> Q4<T> {
    [T::cst(q[0]), T::cst(q[1]), T::cst(q[2]), T::cst(q[3])]
}

#[inline]
pub fn add3<T: Real>(a: &V3<T>, b: &V3<T>) -> V3<T> {
    [a[0] + b[0], a[1] + b[1], a[2] + b[2]]
}

#[inline]
pub fn sub3<T: Real>(a: &V3<T>, b: &V3<T>) -> V3<T> {
    [a[0] - b[0], a[1] - b[1], a[2] - b[2]]
}

#[inline]
pub fn scale3<T: Real>(a: &V3<T>, k: T) -> V3<T> {
    [a[0] * k, a[1] * k, a[2] * k]
}

#[inline]
pub fn dot3<T: Real>(a: &V3<T>, b: &V3<T>) -> T {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
}

#[inline]
pub fn cross<T: Real>(a: &V3<T>, b: &V3<T>) -> V3<T> {
    [
        a[1] * b[2] - a[2] * b[1],
        a[2] * b[0] - a[0] * b[2],
        a[0] * b[1] - a[1] * b[0],
    ]
}

/// Hamilton product.
#[inline]
pub fn quat_mul<T: Real>(a: &Q4<T>, b: &Q4<T>) -> Q4<T> {
    let [aw, ax, ay, az] = *a;
    let [bw, bx, by, bz] = *b;
    [
        aw * bw - ax * bx - ay * by - az * bz,
        aw * bx + ax * bw + ay * bz - az * by,
        aw * by - ax * bz + ay * bw + az * bx,
        aw * bz + ax * by - ay * bx + az * bw,
    ]
}

/// `½ [0; ω] ⊗ q`.
#[inline]
pub fn quat_rate<T: Real>(omega: &V3<T>, q: &Q4<T>) -> Q4<T> {
    let half = T::cst(0.5);
    let p = quat_mul(&[T::cst(0.0), omega[0], omega[1], omega[2]], q);
    [p[0] * half, p[1] * half, p[2] * half, p[3] * half]
}

/// `½ q ⊗ [0; ω]`: attitude rate for an angular velocity given in the
/// rotated (body) frame.
#[inline]
pub fn quat_rate_body<T: Real>(q: &Q4<T>, omega: &V3<T>) -> Q4<T> {
    let half = T::cst(0.5);
    let p = quat_mul(q, &[T::cst(0.0), omega[0], omega[1], omega[2]]);
    [p[0] * half, p[1] * half, p[2] * half, p[3] * half]
}

/// `q [0; v] q*` written as the homogeneous rotation matrix of the raw `q`
/// (scales by `|q|²` off the unit sphere).
#[inline]
pub fn rotate<T: Real>(q: &Q4<T>, v: &V3<T>) -> V3<T> {
    let m = rot_matrix(q);
    [
        m[0][0] * v[0] + m[0][1] * v[1] + m[0][2] * v[2],
        m[1][0] * v[0] + m[1][1] * v[1] + m[1][2] * v[2],
        m[2][0] * v[0] + m[2][1] * v[1] + m[2][2] * v[2],
    ]
}

/// `q* [0; v] q`, the transpose of [`rotate`].
#[inline]
pub fn rotate_inv<T: Real>(q: &Q4<T>, v: &V3<T>) -> V3<T> {
    let m = rot_matrix(q);
    [
        m[0][0] * v[0] + m[1][0] * v[1] + m[2][0] * v[2],
        m[0][1] * v[0] + m[1][1] * v[1] + m[2][1] * v[2],
        m[0][2] * v[0] + m[1][2] * v[1] + m[2][2] * v[2],
    ]
}

#[inline]
pub fn rot_matrix<T: Real>(q: &Q4<T>) -> [[T; 3]; 3] {
    let [w, x, y, z] = *q;
    let two = T::cst(2.0);
    let (ww, xx, yy, zz) = (w * w, x * x, y * y, z * z);
    [
        [
            ww + xx - yy - zz,
            two * (x * y - w * z),
            two * (x * z + w * y),
        ],
        [
            two * (x * y + w * z),
            ww - xx + yy - zz,
            two * (y * z - w * x),
        ],
        [
            two * (x * z - w * y),
            two * (y * z + w * x),
            ww - xx - yy + zz,
        ],
    ]
}

#[inline]
pub fn normalize4<T: Real>(q: &Q4<T>) -> Q4<T> {
    let n = (q[0] * q[0] + q[1] * q[1] + q[2] * q[2] + q[3] * q[3]).sqrt();
    [q[0] / n, q[1] / n, q[2] / n, q[3] / n]
}
