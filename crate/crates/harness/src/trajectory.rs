//! Reference trajectories for the tracking scenarios.

use std::f64::consts::PI;

use vpc_core::geometry::Vec3;
use vpc_core::simulator::{Trajectory, TrajectorySample};

/// Accelerate, cruise, decelerate along a path of given length. Falls back to
/// a triangular profile when the path is too short to reach `v_max`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrapezoidProfile {
    pub length: f64,
    pub v_max: f64,
    pub a_max: f64,
}

impl TrapezoidProfile {
    pub fn new(length: f64, v_max: f64, a_max: f64) -> Self {
        assert!(
            length > 0.0 && v_max > 0.0 && a_max > 0.0,
            "profile parameters must be positive"
        );
        Self {
            length,
            v_max,
            a_max,
        }
    }

    /// Speed actually reached.
    pub fn peak_speed(&self) -> f64 {
        self.v_max.min((self.length * self.a_max).sqrt())
    }

    fn ramp_time(&self) -> f64 {
        self.peak_speed() / self.a_max
    }

    fn cruise_time(&self) -> f64 {
        let v = self.peak_speed();
        (self.length - v * v / self.a_max) / v
    }

    pub fn duration(&self) -> f64 {
        2.0 * self.ramp_time() + self.cruise_time()
    }

    /// Arc length and speed at time `t`, held at the end after `duration`.
    pub fn at(&self, t: f64) -> (f64, f64) {
        let (v, a) = (self.peak_speed(), self.a_max);
        let (tr, tc) = (self.ramp_time(), self.cruise_time());
        if t <= 0.0 {
            (0.0, 0.0)
        } else if t < tr {
            (0.5 * a * t * t, a * t)
        } else if t < tr + tc {
            (0.5 * a * tr * tr + v * (t - tr), v)
        } else if t < 2.0 * tr + tc {
            let r = 2.0 * tr + tc - t;
            (self.length - 0.5 * a * r * r, a * r)
        } else {
            (self.length, 0.0)
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Heading {
    /// Look at the arc center.
    FaceCenter,
    Fixed(f64),
}

/// Horizontal circular arc traversed with a trapezoidal speed profile.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ArcTrajectory {
    pub center: Vec3,
    pub radius: f64,
    pub start_angle: f64,
    /// Signed swept angle; positive is counter-clockwise seen from above.
    pub sweep: f64,
    pub heading: Heading,
    pub profile: TrapezoidProfile,
}

impl ArcTrajectory {
    pub fn new(
        center: Vec3,
        radius: f64,
        start_angle: f64,
        sweep: f64,
        heading: Heading,
        v_max: f64,
        a_max: f64,
    ) -> Self {
        let profile = TrapezoidProfile::new(radius * sweep.abs(), v_max, a_max);
        Self {
            center,
            radius,
            start_angle,
            sweep,
            heading,
            profile,
        }
    }

    /// Quarter circle of radius 8 around the landmark, centered on the
    /// point 8 m in front of it and facing it throughout.
    pub fn quarter_circle(landmark: Vec3, v_max: f64, a_max: f64) -> Self {
        Self::new(
            landmark,
            8.0,
            0.75 * PI,
            0.5 * PI,
            Heading::FaceCenter,
            v_max,
            a_max,
        )
    }

    /// Full circle of radius 4 about `(0, 0, 3)` flown at zero heading.
    pub fn full_circle(v_max: f64, a_max: f64) -> Self {
        Self::new(
            Vec3::new(0.0, 0.0, 3.0),
            4.0,
            0.0,
            2.0 * PI,
            Heading::Fixed(0.0),
            v_max,
            a_max,
        )
    }
}

impl Trajectory for ArcTrajectory {
    fn sample(&self, t: f64) -> TrajectorySample {
        let (s, ds) = self.profile.at(t);
        let dir = self.sweep.signum();
        let th = self.start_angle + dir * s / self.radius;
        let (sin, cos) = th.sin_cos();
        let heading = match self.heading {
            Heading::FaceCenter => th + PI,
            Heading::Fixed(h) => h,
        };
        TrajectorySample {
            position: self.center + Vec3::new(cos, sin, 0.0) * self.radius,
            velocity: Vec3::new(-sin, cos, 0.0) * (dir * ds),
            heading,
        }
    }

    fn duration(&self) -> f64 {
        self.profile.duration()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    #[test]
    fn trapezoid_reaches_length_and_stops() {
        let p = TrapezoidProfile::new(12.0, 3.0, 12.0);
        assert_relative_eq!(p.peak_speed(), 3.0);
        let (s, v) = p.at(p.duration());
        assert_relative_eq!(s, 12.0, epsilon = 1e-12);
        assert_eq!(v, 0.0);
        assert_eq!(p.at(p.duration() + 5.0), (12.0, 0.0));
    }

    #[test]
    fn short_path_gives_triangle() {
        let p = TrapezoidProfile::new(1.0, 10.0, 4.0);
        assert_relative_eq!(p.peak_speed(), 2.0);
        assert_relative_eq!(p.duration(), 1.0);
    }

    #[test]
    fn quarter_circle_geometry() {
        let lm = Vec3::new(6.0, 0.0, 3.0);
        let arc = ArcTrajectory::quarter_circle(lm, 3.0, 12.0);
        let mid = arc.sample(0.5 * arc.duration());
        assert_relative_eq!(mid.position, Vec3::new(-2.0, 0.0, 3.0), epsilon = 1e-9);
        assert_relative_eq!(mid.heading.rem_euclid(2.0 * PI), 0.0, epsilon = 1e-9);
        for k in 0..=20 {
            let s = arc.sample(k as f64 * arc.duration() / 20.0);
            assert_relative_eq!((s.position - lm).norm(), 8.0, epsilon = 1e-9);
            assert!(s.velocity.dot(&(s.position - lm)).abs() < 1e-9);
        }
    }

    proptest! {
        #[test]
        fn profile_is_monotone_and_bounded(len in 0.5f64..40.0, v in 0.5f64..10.0, a in 0.5f64..15.0) {
            let p = TrapezoidProfile::new(len, v, a);
            let mut prev = 0.0;
            let steps = 400;
            for k in 0..=steps {
                let t = k as f64 * p.duration() / steps as f64;
                let (s, ds) = p.at(t);
                prop_assert!(s + 1e-12 >= prev);
                prop_assert!(ds <= v + 1e-12 && ds >= 0.0);
                prop_assert!(s <= len + 1e-9);
                prev = s;
            }
            prop_assert!((p.at(p.duration()).0 - len).abs() < 1e-9);
        }

        #[test]
        fn arc_velocity_is_the_position_derivative(t in 0.0f64..6.0) {
            let arc = ArcTrajectory::quarter_circle(Vec3::new(6.0, 0.0, 3.0), 4.0, 12.0);
            let h = 1e-6;
            let fd = (arc.sample(t + h).position - arc.sample(t - h).position) / (2.0 * h);
            prop_assert!((fd - arc.sample(t).velocity).norm() < 1e-4);
        }
    }
}
