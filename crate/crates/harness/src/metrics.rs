//! Run metrics. Everything here is a pure function of the log, so results
//! can be re-evaluated offline from the CSV columns.

use serde::{Deserialize, Serialize};

use vpc_core::costs::{rotation_compensated_image, Bounds};
use vpc_core::dynamics::CameraExtrinsics;
use vpc_core::geometry::Vec3;
use vpc_core::ocp::SolveStatus;
use vpc_core::simulator::RunLog;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    /// `success`, `feature_lost` or `diverged`.
    pub outcome: String,
    /// Time of the failure, if any (s).
    pub failure_time: Option<f64>,
    pub ticks: usize,
    /// RMS of `d - d*` over all ticks (m).
    pub rms_distance_error: f64,
    /// Largest `|z - z_0|` of the vehicle (m).
    pub max_altitude_deviation: f64,
    /// Smallest distance of the feature to the visibility box edge, in
    /// normalized image units. Negative when the box was left.
    pub min_border_margin: f64,
    /// Largest `max(|u|, |v|)` of the feature.
    pub max_abs_image: f64,
    /// Ticks with the feature outside the visibility box.
    pub fov_violations: usize,
    /// `|d - d*|` after the last tick (m); absent if the feature was lost.
    pub final_distance_error: Option<f64>,
    /// Distance of the rotation-compensated feature to `s*` after the last tick.
    pub final_image_error: Option<f64>,
    pub mean_solve_ms: f64,
    pub max_solve_ms: f64,
    pub solves: usize,
    /// Solves that reached the KKT tolerance.
    pub converged_solves: usize,
    /// Of those, solves with every visibility slack exactly zero.
    pub zero_slack_solves: usize,
    /// Every returned input over the whole run lay inside the input box.
    pub inputs_in_box: bool,
    pub trajectory: TrajectorySummary,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrajectorySummary {
    pub start: [f64; 3],
    pub end: [f64; 3],
    pub path_length: f64,
    pub max_speed: f64,
    pub mean_speed: f64,
    /// First time the lateral (y) position error to `goal` stays below 10 %
    /// of its initial value; absent when no goal applies or never reached.
    pub settle_time_y: Option<f64>,
    /// Same for the longitudinal (x) error.
    pub settle_time_x: Option<f64>,
}

fn border_margin(u: f64, v: f64, b: &Bounds) -> f64 {
    (b.s_max[0] - u)
        .min(u - b.s_min[0])
        .min(b.s_max[1] - v)
        .min(v - b.s_min[1])
}

/// Earliest time after which `err(t)` stays within 10 % of `err(0)`.
fn settle_time(times: &[f64], err: &[f64]) -> Option<f64> {
    let e0 = err.first()?.abs();
    if e0 < 1e-9 {
        return Some(0.0);
    }
    let last_out = err.iter().rposition(|e| e.abs() > 0.1 * e0);
    match last_out {
        None => Some(0.0),
        Some(k) if k + 1 < times.len() => Some(times[k + 1]),
        Some(_) => None,
    }
}

pub fn compute(
    log: &RunLog,
    bounds: &Bounds,
    ext: &CameraExtrinsics,
    goal: Option<Vec3>,
) -> Metrics {
    let rows = &log.rows;
    let n = rows.len().max(1) as f64;
    let z0 = rows
        .first()
        .map_or(log.final_plant.p_w.z, |r| r.plant.p_w.z);
    let start = rows.first().map_or(log.final_plant.p_w, |r| r.plant.p_w);

    let rms = (rows.iter().map(|r| (r.d - r.d_ref).powi(2)).sum::<f64>() / n).sqrt();
    let mut positions: Vec<Vec3> = rows.iter().map(|r| r.plant.p_w).collect();
    positions.push(log.final_plant.p_w);
    let alt = positions
        .iter()
        .map(|p| (p.z - z0).abs())
        .fold(0.0, f64::max);
    let margin = rows
        .iter()
        .map(|r| border_margin(r.s_c.u, r.s_c.v, bounds))
        .fold(f64::INFINITY, f64::min);
    let max_abs = rows
        .iter()
        .map(|r| r.s_c.u.abs().max(r.s_c.v.abs()))
        .fold(0.0, f64::max);

    let (final_d, final_s) = match log.final_measurement {
        Some(m) => {
            let r = &log.final_reference;
            let s = rotation_compensated_image(&m.q_wb, &m.q_cl, &ext.q_bc).ok();
            (
                Some((m.d - r.d_star).abs()),
                s.map(|s| s.distance_to(&r.s_star)),
            )
        }
        None => (None, None),
    };

    let solve: Vec<f64> = rows.iter().map(|r| r.solve_ms).collect();
    let converged: Vec<_> = rows
        .iter()
        .filter(|r| r.status == SolveStatus::Converged)
        .collect();
    let speeds: Vec<f64> = rows.iter().map(|r| r.plant.v_w.norm()).collect();
    let path: f64 = positions.windows(2).map(|w| (w[1] - w[0]).norm()).sum();

    let times: Vec<f64> = rows.iter().map(|r| r.t).collect();
    let (settle_y, settle_x) = match goal {
        Some(g) => {
            let ey: Vec<f64> = rows.iter().map(|r| r.plant.p_w.y - g.y).collect();
            let ex: Vec<f64> = rows.iter().map(|r| r.plant.p_w.x - g.x).collect();
            (settle_time(&times, &ey), settle_time(&times, &ex))
        }
        None => (None, None),
    };

    let failure_time = match log.outcome {
        vpc_core::simulator::Outcome::Completed => None,
        vpc_core::simulator::Outcome::FeatureLost { t }
        | vpc_core::simulator::Outcome::Diverged { t } => Some(t),
    };

    Metrics {
        outcome: log.outcome.label().to_string(),
        failure_time,
        ticks: rows.len(),
        rms_distance_error: rms,
        max_altitude_deviation: alt,
        min_border_margin: if margin.is_finite() { margin } else { 0.0 },
        max_abs_image: max_abs,
        fov_violations: rows.iter().filter(|r| !r.visible).count(),
        final_distance_error: final_d,
        final_image_error: final_s,
        mean_solve_ms: solve.iter().sum::<f64>() / n,
        max_solve_ms: solve.iter().copied().fold(0.0, f64::max),
        solves: rows.len(),
        converged_solves: converged.len(),
        zero_slack_solves: converged.iter().filter(|r| r.max_slack == 0.0).count(),
        inputs_in_box: rows.iter().all(|r| r.inputs_in_box),
        trajectory: TrajectorySummary {
            start: start.into(),
            end: log.final_plant.p_w.into(),
            path_length: path,
            max_speed: speeds.iter().copied().fold(0.0, f64::max),
            mean_speed: speeds.iter().sum::<f64>() / n,
            settle_time_y: settle_y,
            settle_time_x: settle_x,
        },
    }
}
