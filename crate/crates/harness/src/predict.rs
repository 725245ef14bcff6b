//! Open-loop feature prediction: bearing model versus homogeneous model,
//! both against the closed-form motion of the point.

use serde::{Deserialize, Serialize};

use vpc_core::dynamics::{
    feature_state_from_point, propagate_bearing, propagate_homogeneous, propagate_point_exact,
    CameraTwist,
};
use vpc_core::geometry::{image_from_bearing, to_homogeneous, HomogeneousImagePoint, Vec3};

use crate::config::PredictConfig;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictReport {
    pub times: Vec<f64>,
    /// Image-plane error of the bearing prediction against exact geometry.
    pub bearing_error: Vec<f64>,
    /// Same for the homogeneous prediction.
    pub homogeneous_error: Vec<f64>,
    /// Distance between the two predictions.
    pub discrepancy: Vec<f64>,
    pub max_bearing_error: f64,
    pub max_homogeneous_error: f64,
    pub max_discrepancy: f64,
    /// Step at which the point left the front half-space, if it did.
    pub stopped_at: Option<usize>,
}

pub fn compare(cfg: &PredictConfig) -> PredictReport {
    let twist = CameraTwist {
        v_c: Vec3::from(cfg.v_c),
        omega_c: Vec3::from(cfg.omega_c),
    };
    let p0 = Vec3::from(cfg.point);
    let steps = (cfg.horizon / cfg.dt).round() as usize;
    let (mut q, mut d) = feature_state_from_point(&p0).expect("point in front of the camera");
    let mut s = to_homogeneous(&p0).expect("point in front of the camera");
    let mut z = p0.z;

    let mut out = PredictReport {
        times: vec![0.0],
        bearing_error: vec![0.0],
        homogeneous_error: vec![0.0],
        discrepancy: vec![0.0],
        max_bearing_error: 0.0,
        max_homogeneous_error: 0.0,
        max_discrepancy: 0.0,
        stopped_at: None,
    };
    for k in 1..=steps {
        (q, d) = propagate_bearing(&q, d, &twist, cfg.dt);
        (s, z) = propagate_homogeneous(&s, z, &twist, cfg.dt);
        let t = k as f64 * cfg.dt;
        let truth = to_homogeneous(&propagate_point_exact(&p0, &twist, t));
        let (Ok(truth), Ok(sb)) = (truth, image_from_bearing(&q)) else {
            out.stopped_at = Some(k);
            break;
        };
        let dist = |a: &HomogeneousImagePoint, b: &HomogeneousImagePoint| a.distance_to(b);
        out.times.push(t);
        out.bearing_error.push(dist(&sb, &truth));
        out.homogeneous_error.push(dist(&s, &truth));
        out.discrepancy.push(dist(&sb, &s));
    }
    let max = |v: &[f64]| v.iter().copied().fold(0.0, f64::max);
    out.max_bearing_error = max(&out.bearing_error);
    out.max_homogeneous_error = max(&out.homogeneous_error);
    out.max_discrepancy = max(&out.discrepancy);
    out
}
