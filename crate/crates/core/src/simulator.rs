//! Ground-truth plant, camera observation and the closed control loop.
//!
//! The plant carries the world position; the controller only ever receives a
//! [`QuadVisualState`], which has no position field.

use std::time::Instant;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::costs::{rotation_compensated_image, Bounds, ReferencePoint};
use crate::dynamics::{CameraExtrinsics, ControlInput, QuadVisualState, GRAVITY};
use crate::geometry::{
    bearing_from_image, bearing_n, quat_exp, to_homogeneous, HomogeneousImagePoint, UnitQuaternion,
    Vec3, EPS_DEPTH,
};
use crate::kernel::{normalize4, quat_rate_body, rotate};
use crate::ocp::{MpcController, OcpError, SolveStatus};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PlantState {
    pub p_w: Vec3,
    pub v_w: Vec3,
    pub q_wb: UnitQuaternion,
}

impl PlantState {
    pub fn at_rest(p_w: Vec3, yaw: f64) -> Self {
        Self {
            p_w,
            v_w: Vec3::zeros(),
            q_wb: UnitQuaternion::from_yaw(yaw),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Landmark {
    pub p_w_lw: Vec3,
    /// Only used for gate rendering and metrics.
    pub q_wl: UnitQuaternion,
}

impl Landmark {
    pub fn at(p_w_lw: Vec3) -> Self {
        Self {
            p_w_lw,
            q_wl: UnitQuaternion::IDENTITY,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NoiseModel {
    pub sigma_v: f64,
    pub sigma_att: f64,
    pub sigma_d_rel: f64,
    pub sigma_px: f64,
    pub seed: u64,
}

impl Default for NoiseModel {
    fn default() -> Self {
        Self {
            sigma_v: 0.0,
            sigma_att: 0.0,
            sigma_d_rel: 0.0,
            sigma_px: 0.0,
            seed: 0,
        }
    }
}

impl NoiseModel {
    pub fn validate(&self) -> Result<(), String> {
        for (name, v) in [
            ("sigma_v", self.sigma_v),
            ("sigma_att", self.sigma_att),
            ("sigma_d_rel", self.sigma_d_rel),
            ("sigma_px", self.sigma_px),
        ] {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(format!(
                    "{name} must be a finite non-negative number, got {v}"
                ));
            }
        }
        Ok(())
    }

    pub fn is_zero(&self) -> bool {
        self.sigma_v == 0.0
            && self.sigma_att == 0.0
            && self.sigma_d_rel == 0.0
            && self.sigma_px == 0.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Error)]
pub enum SimError {
    #[error("feature lost: depth {depth:.3} m, image ({u:.3}, {v:.3})")]
    FeatureLost { depth: f64, u: f64, v: f64 },
    #[error("landmark is not visible from waypoint ({x:.3}, {y:.3}, {z:.3})")]
    ReferenceInfeasible { x: f64, y: f64, z: f64 },
}

// ---------------------------------------------------------------------------
// plant

fn plant_derivative(p: &[f64; 10], u: &ControlInput) -> [f64; 10] {
    let q = [p[6], p[7], p[8], p[9]];
    let acc = rotate(&q, &[0.0, 0.0, u.c]);
    let dq = quat_rate_body(&q, &[u.omega_b.x, u.omega_b.y, u.omega_b.z]);
    [
        p[3],
        p[4],
        p[5],
        acc[0],
        acc[1],
        acc[2] - GRAVITY,
        dq[0],
        dq[1],
        dq[2],
        dq[3],
    ]
}

/// One RK4 step of position, velocity and attitude.
pub fn plant_step(ps: &PlantState, u: &ControlInput, dt: f64) -> PlantState {
    let q = ps.q_wb.coords();
    let x = [
        ps.p_w.x, ps.p_w.y, ps.p_w.z, ps.v_w.x, ps.v_w.y, ps.v_w.z, q[0], q[1], q[2], q[3],
    ];
    let add = |a: &[f64; 10], k: &[f64; 10], h: f64| -> [f64; 10] {
        std::array::from_fn(|i| a[i] + h * k[i])
    };
    let k1 = plant_derivative(&x, u);
    let k2 = plant_derivative(&add(&x, &k1, 0.5 * dt), u);
    let k3 = plant_derivative(&add(&x, &k2, 0.5 * dt), u);
    let k4 = plant_derivative(&add(&x, &k3, dt), u);
    let y: [f64; 10] =
        std::array::from_fn(|i| x[i] + dt / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]));
    PlantState {
        p_w: Vec3::new(y[0], y[1], y[2]),
        v_w: Vec3::new(y[3], y[4], y[5]),
        q_wb: UnitQuaternion::from_coords(normalize4(&[y[6], y[7], y[8], y[9]])),
    }
}

/// Camera position and orientation in the world.
pub fn camera_pose(
    p_w: &Vec3,
    q_wb: &UnitQuaternion,
    ext: &CameraExtrinsics,
) -> (Vec3, UnitQuaternion) {
    (p_w + q_wb.rotate(&ext.p_b_cb), *q_wb * ext.q_bc)
}

/// Landmark coordinates in the camera frame.
pub fn landmark_in_camera(
    p_w: &Vec3,
    q_wb: &UnitQuaternion,
    lm: &Landmark,
    ext: &CameraExtrinsics,
) -> Vec3 {
    let (p_c, q_wc) = camera_pose(p_w, q_wb, ext);
    q_wc.inverse().rotate(&(lm.p_w_lw - p_c))
}

/// Measurement noise source; draws nothing when the model is noise-free.
#[derive(Debug, Clone)]
pub struct Sensor {
    pub noise: NoiseModel,
    /// Image region the camera can see. Leaving it loses the feature.
    pub fov: Bounds,
    rng: ChaCha8Rng,
}

impl Sensor {
    pub fn new(noise: NoiseModel, fov: Bounds) -> Self {
        Self {
            noise,
            fov,
            rng: ChaCha8Rng::seed_from_u64(noise.seed),
        }
    }

    fn gauss(&mut self, sigma: f64) -> f64 {
        if sigma == 0.0 {
            return 0.0;
        }
        let z: f64 = StandardNormal.sample(&mut self.rng);
        sigma * z
    }

    fn gauss3(&mut self, sigma: f64) -> Vec3 {
        Vec3::new(self.gauss(sigma), self.gauss(sigma), self.gauss(sigma))
    }
}

pub fn observe(
    ps: &PlantState,
    lm: &Landmark,
    ext: &CameraExtrinsics,
    sensor: &mut Sensor,
) -> Result<QuadVisualState, SimError> {
    let r = landmark_in_camera(&ps.p_w, &ps.q_wb, lm, ext);
    let lost = |u, v| SimError::FeatureLost { depth: r.z, u, v };
    if r.z <= EPS_DEPTH {
        return Err(lost(f64::NAN, f64::NAN));
    }
    let s = HomogeneousImagePoint::new(r.x / r.z, r.y / r.z);
    if !sensor.fov.contains_image(&s) {
        return Err(lost(s.u, s.v));
    }
    let n = &sensor.noise;
    let (sv, sa, sd, sp) = (n.sigma_v, n.sigma_att, n.sigma_d_rel, n.sigma_px);
    let v_w = ps.v_w + sensor.gauss3(sv);
    let q_wb = ps.q_wb * quat_exp(&sensor.gauss3(sa));
    let s_meas = HomogeneousImagePoint::new(s.u + sensor.gauss(sp), s.v + sensor.gauss(sp));
    let d = r.norm() * (1.0 + sensor.gauss(sd));
    Ok(QuadVisualState {
        v_w,
        q_wb,
        q_cl: bearing_from_image(&s_meas),
        d: d.max(EPS_DEPTH),
    })
}

/// Reference for a waypoint: the feature as seen from a level body at
/// `heading_ref`, expressed in the rotation-compensated frame that the
/// visual servoing cost compares against.
pub fn make_reference_from_waypoint(
    wp: &Vec3,
    v_ref: &Vec3,
    heading_ref: f64,
    lm: &Landmark,
    ext: &CameraExtrinsics,
) -> Result<ReferencePoint, SimError> {
    let q_star = UnitQuaternion::from_yaw(heading_ref);
    let infeasible = SimError::ReferenceInfeasible {
        x: wp.x,
        y: wp.y,
        z: wp.z,
    };
    let r = landmark_in_camera(wp, &q_star, lm, ext);
    if r.z <= EPS_DEPTH {
        return Err(infeasible);
    }
    let q_cl = bearing_from_image(&to_homogeneous(&r).map_err(|_| infeasible)?);
    let s_star = rotation_compensated_image(&q_star, &q_cl, &ext.q_bc).map_err(|_| infeasible)?;
    Ok(ReferencePoint {
        s_star,
        d_star: r.norm(),
        v_star: *v_ref,
        q_star,
    })
}

// ---------------------------------------------------------------------------
// references

/// Supplies the `N + 1` reference points of a horizon starting at `t`.
pub trait ReferenceSource {
    fn reference_at(&self, t: f64) -> ReferencePoint;

    fn horizon(&self, t: f64, n: usize, dt: f64) -> Vec<ReferencePoint> {
        (0..=n)
            .map(|k| self.reference_at(t + k as f64 * dt))
            .collect()
    }
}

#[derive(Debug, Clone, Copy)]
pub struct StaticReference(pub ReferencePoint);

impl ReferenceSource for StaticReference {
    fn reference_at(&self, _t: f64) -> ReferencePoint {
        self.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrajectorySample {
    pub position: Vec3,
    pub velocity: Vec3,
    pub heading: f64,
}

pub trait Trajectory {
    fn sample(&self, t: f64) -> TrajectorySample;
    fn duration(&self) -> f64;
}

/// Waypoint stream converted to image references on the fly. Every sample
/// on the control grid (plus one horizon) is checked at construction.
pub struct TrajectoryReference<T: Trajectory> {
    pub trajectory: T,
    pub landmark: Landmark,
    pub extrinsics: CameraExtrinsics,
}

impl<T: Trajectory> TrajectoryReference<T> {
    pub fn new(
        trajectory: T,
        landmark: Landmark,
        extrinsics: CameraExtrinsics,
        check_dt: f64,
        check_until: f64,
    ) -> Result<Self, SimError> {
        let steps = (check_until / check_dt).ceil() as usize;
        for k in 0..=steps {
            let s = trajectory.sample(k as f64 * check_dt);
            make_reference_from_waypoint(
                &s.position,
                &s.velocity,
                s.heading,
                &landmark,
                &extrinsics,
            )?;
        }
        Ok(Self {
            trajectory,
            landmark,
            extrinsics,
        })
    }
}

impl<T: Trajectory> ReferenceSource for TrajectoryReference<T> {
    fn reference_at(&self, t: f64) -> ReferencePoint {
        let s = self.trajectory.sample(t);
        make_reference_from_waypoint(
            &s.position,
            &s.velocity,
            s.heading,
            &self.landmark,
            &self.extrinsics,
        )
        .expect("trajectory was checked at construction")
    }
}

// ---------------------------------------------------------------------------
// closed loop

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimConfig {
    /// Control period (s).
    pub control_period: f64,
    /// Plant integration substep (s).
    pub plant_dt: f64,
    pub duration: f64,
    /// Speed above which the run counts as crashed (m/s).
    pub divergence_speed: f64,
    /// Camera field of view in normalized image coordinates.
    pub sensor_bounds: [f64; 2],
    /// Record wall-clock solve times. Off by default so logs are reproducible.
    pub timing: bool,
}

impl Default for SimConfig {
    fn default() -> Self {
        Self {
            control_period: 0.05,
            plant_dt: 0.001,
            duration: 10.0,
            divergence_speed: 30.0,
            sensor_bounds: [1.0, 1.0],
            timing: false,
        }
    }
}

impl SimConfig {
    pub fn validate(&self) -> Result<(), String> {
        for (name, v) in [
            ("control_period", self.control_period),
            ("plant_dt", self.plant_dt),
            ("duration", self.duration),
            ("divergence_speed", self.divergence_speed),
            ("sensor_bounds[0]", self.sensor_bounds[0]),
            ("sensor_bounds[1]", self.sensor_bounds[1]),
        ] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(format!("{name} must be positive, got {v}"));
            }
        }
        if self.plant_dt > self.control_period {
            return Err("plant_dt must not exceed control_period".into());
        }
        Ok(())
    }

    pub fn ticks(&self) -> usize {
        (self.duration / self.control_period).round() as usize
    }

    pub fn substeps(&self) -> usize {
        ((self.control_period / self.plant_dt).round() as usize).max(1)
    }

    pub fn fov(&self) -> Bounds {
        Bounds {
            s_min: [-self.sensor_bounds[0], -self.sensor_bounds[1]],
            s_max: self.sensor_bounds,
            ..Bounds::default()
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Outcome {
    Completed,
    FeatureLost { t: f64 },
    Diverged { t: f64 },
}

impl Outcome {
    pub fn label(&self) -> &'static str {
        match self {
            Outcome::Completed => "success",
            Outcome::FeatureLost { .. } => "feature_lost",
            Outcome::Diverged { .. } => "diverged",
        }
    }
}

/// One control tick.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LogRow {
    pub t: f64,
    pub plant: PlantState,
    pub measurement: QuadVisualState,
    pub input: ControlInput,
    /// Uncompensated feature image.
    pub s_c: HomogeneousImagePoint,
    pub d: f64,
    pub d_ref: f64,
    pub solve_ms: f64,
    pub kkt: f64,
    pub sqp_iters: usize,
    pub status: SolveStatus,
    pub max_slack: f64,
    /// Feature inside the visibility bounds of the optimization problem.
    pub visible: bool,
    /// Every returned input of the solve was inside the input box.
    pub inputs_in_box: bool,
}

#[derive(Debug, Clone)]
pub struct RunLog {
    pub rows: Vec<LogRow>,
    pub outcome: Outcome,
    pub final_plant: PlantState,
    /// Observation after the last tick, if the feature was still in view.
    pub final_measurement: Option<QuadVisualState>,
    pub final_reference: ReferencePoint,
    pub control_period: f64,
}

impl RunLog {
    pub fn success(&self) -> bool {
        self.outcome == Outcome::Completed
    }
}

fn plant_ok(ps: &PlantState, cfg: &SimConfig) -> bool {
    let finite = ps.p_w.iter().chain(ps.v_w.iter()).all(|v| v.is_finite());
    finite && ps.v_w.norm() <= cfg.divergence_speed
}

/// Fixed-rate loop: observe, solve, apply the first input across the plant
/// substeps. Failures end the run and are recorded in the outcome.
pub fn run_closed_loop(
    initial: PlantState,
    landmark: &Landmark,
    reference: &dyn ReferenceSource,
    controller: &mut MpcController,
    cfg: &SimConfig,
    noise: NoiseModel,
) -> Result<RunLog, OcpError> {
    cfg.validate().map_err(OcpError::InvalidData)?;
    noise.validate().map_err(OcpError::InvalidData)?;
    controller.reset();
    let ext = controller.config.extrinsics;
    let bounds = controller.config.bounds;
    let (n, dt) = (
        controller.config.params.horizon,
        controller.config.params.dt,
    );
    let mut sensor = Sensor::new(noise, cfg.fov());
    let mut ps = initial;
    let mut rows = Vec::with_capacity(cfg.ticks());
    let mut outcome = Outcome::Completed;
    let substeps = cfg.substeps();
    let plant_dt = cfg.control_period / substeps as f64;

    for tick in 0..cfg.ticks() {
        let t = tick as f64 * cfg.control_period;
        let meas = match observe(&ps, landmark, &ext, &mut sensor) {
            Ok(m) => m,
            Err(_) => {
                outcome = Outcome::FeatureLost { t };
                break;
            }
        };
        let refs = reference.horizon(t, n, dt);
        let clock = cfg.timing.then(Instant::now);
        let (u, sol) = controller.controller_step(&meas, &refs)?;
        let solve_ms = clock.map_or(0.0, |c| c.elapsed().as_secs_f64() * 1e3);

        let s_c = to_homogeneous(&bearing_n(&meas.q_cl))
            .unwrap_or(HomogeneousImagePoint::new(f64::NAN, f64::NAN));
        rows.push(LogRow {
            t,
            plant: ps,
            measurement: meas,
            input: u,
            s_c,
            d: meas.d,
            d_ref: refs[0].d_star,
            solve_ms,
            kkt: sol.kkt,
            sqp_iters: sol.sqp_iters,
            status: sol.status,
            max_slack: sol.max_slack(),
            visible: bounds.contains_image(&s_c),
            inputs_in_box: sol.inputs.iter().all(|v| bounds.contains_input(v))
                && bounds.contains_input(&u),
        });

        for _ in 0..substeps {
            ps = plant_step(&ps, &u, plant_dt);
        }
        if !plant_ok(&ps, cfg) {
            outcome = Outcome::Diverged {
                t: t + cfg.control_period,
            };
            break;
        }
    }

    let final_measurement = match outcome {
        Outcome::Completed => {
            let m = observe(&ps, landmark, &ext, &mut sensor).ok();
            if m.is_none() {
                outcome = Outcome::FeatureLost {
                    t: cfg.ticks() as f64 * cfg.control_period,
                };
            }
            m
        }
        _ => None,
    };
    Ok(RunLog {
        rows,
        outcome,
        final_plant: ps,
        final_measurement,
        final_reference: reference.reference_at(cfg.ticks() as f64 * cfg.control_period),
        control_period: cfg.control_period,
    })
}
