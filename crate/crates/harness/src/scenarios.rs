//! Scenario runners. Each returns the logs and metrics of its runs; writing
//! files is left to [`crate::output`].

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use vpc_core::costs::ReferencePoint;
use vpc_core::dynamics::CameraExtrinsics;
use vpc_core::geometry::Vec3;
use vpc_core::ocp::{MpcController, OcpError};
use vpc_core::simulator::{
    make_reference_from_waypoint, run_closed_loop, Landmark, NoiseModel, PlantState, RunLog,
    SimConfig, SimError, StaticReference, Trajectory, TrajectoryReference,
};

use crate::config::{InitialPose, ScenarioConfig, ScenarioKind};
use crate::metrics::{self, Metrics};
use crate::predict::{self, PredictReport};
use crate::trajectory::ArcTrajectory;

#[derive(Debug, Error)]
pub enum ScenarioError {
    #[error(transparent)]
    Solver(#[from] OcpError),
    #[error("{0}")]
    Reference(#[from] SimError),
}

pub struct RunRecord {
    pub name: String,
    pub log: RunLog,
    pub metrics: Metrics,
}

/// One speed and mode of the success sweep.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepCell {
    pub speed: f64,
    pub perception: bool,
    pub trials: usize,
    pub successes: usize,
    pub rate: f64,
    /// Outcome label of the first failed lap of each trial (`success` when none failed).
    pub outcomes: Vec<String>,
    /// Largest `max(|u|, |v|)` over every lap of every trial.
    pub max_abs_image: f64,
    /// Every applied input of every lap was inside the input box.
    pub inputs_in_box: bool,
}

pub struct ScenarioReport {
    pub config: ScenarioConfig,
    pub runs: Vec<RunRecord>,
    pub sweep: Option<Vec<SweepCell>>,
    pub predict: Option<PredictReport>,
}

fn landmark(cfg: &ScenarioConfig) -> Landmark {
    Landmark::at(Vec3::from(cfg.landmark))
}

fn start_state(p: &InitialPose) -> PlantState {
    PlantState::at_rest(Vec3::from(p.position), p.heading_deg.to_radians())
}

/// Body position, level at zero heading, whose camera sees the landmark on
/// its optical axis at distance `d`.
pub fn gate_goal(lm: &Landmark, ext: &CameraExtrinsics, d: f64) -> Vec3 {
    let axis = ext.q_bc.rotate(&Vec3::z());
    lm.p_w_lw - axis * d - ext.p_b_cb
}

fn gate_reference(cfg: &ScenarioConfig) -> Result<(ReferencePoint, Vec3), SimError> {
    let lm = landmark(cfg);
    let goal = gate_goal(&lm, &cfg.extrinsics, cfg.goal_distance);
    let r = make_reference_from_waypoint(&goal, &Vec3::zeros(), 0.0, &lm, &cfg.extrinsics)?;
    Ok((r, goal))
}

fn simulate(
    cfg: &ScenarioConfig,
    perception: bool,
    start: PlantState,
    reference: &dyn vpc_core::simulator::ReferenceSource,
    sim: &SimConfig,
    noise: NoiseModel,
) -> Result<RunLog, OcpError> {
    let mut ctrl = MpcController::new(cfg.controller(perception))?;
    run_closed_loop(start, &landmark(cfg), reference, &mut ctrl, sim, noise)
}

fn record(cfg: &ScenarioConfig, name: String, log: RunLog, goal: Option<Vec3>) -> RunRecord {
    let metrics = metrics::compute(&log, &cfg.bounds, &cfg.extrinsics, goal);
    RunRecord { name, log, metrics }
}

pub fn gate_reaching(cfg: &ScenarioConfig) -> Result<Vec<RunRecord>, ScenarioError> {
    let (r, goal) = gate_reference(cfg)?;
    let noise = NoiseModel {
        seed: cfg.seed,
        ..cfg.noise
    };
    cfg.poses
        .iter()
        .enumerate()
        .map(|(i, pose)| {
            let log = simulate(
                cfg,
                cfg.perception,
                start_state(pose),
                &StaticReference(r),
                &cfg.sim,
                noise,
            )?;
            Ok(record(cfg, format!("pose_{}", i + 1), log, Some(goal)))
        })
        .collect()
}

pub fn hover(cfg: &ScenarioConfig) -> Result<Vec<RunRecord>, ScenarioError> {
    let lm = landmark(cfg);
    let pose = &cfg.poses[0];
    let start = start_state(pose);
    let r = make_reference_from_waypoint(
        &start.p_w,
        &Vec3::zeros(),
        pose.heading_deg.to_radians(),
        &lm,
        &cfg.extrinsics,
    )?;
    let noise = NoiseModel {
        seed: cfg.seed,
        ..cfg.noise
    };
    let log = simulate(
        cfg,
        cfg.perception,
        start,
        &StaticReference(r),
        &cfg.sim,
        noise,
    )?;
    Ok(vec![record(cfg, "hover".into(), log, Some(start.p_w))])
}

fn arc_for(cfg: &ScenarioConfig, speed: f64) -> ArcTrajectory {
    match cfg.scenario {
        ScenarioKind::FullCircle => ArcTrajectory::full_circle(speed, cfg.accel_limit()),
        _ => ArcTrajectory::quarter_circle(Vec3::from(cfg.landmark), speed, cfg.accel_limit()),
    }
}

/// One pass over the arc at `speed`, starting at rest on its first point.
fn track(
    cfg: &ScenarioConfig,
    speed: f64,
    perception: bool,
    noise: NoiseModel,
) -> Result<RunLog, ScenarioError> {
    let arc = arc_for(cfg, speed);
    let sim = SimConfig {
        duration: arc.duration() + cfg.settle_time,
        ..cfg.sim
    };
    let horizon = cfg.ocp.horizon as f64 * cfg.ocp.dt;
    let reference = TrajectoryReference::new(
        arc,
        landmark(cfg),
        cfg.extrinsics,
        cfg.ocp.dt,
        sim.duration + horizon,
    )?;
    let s0 = arc.sample(0.0);
    let start = PlantState::at_rest(s0.position, s0.heading);
    Ok(simulate(cfg, perception, start, &reference, &sim, noise)?)
}

pub fn tracking(cfg: &ScenarioConfig) -> Result<Vec<RunRecord>, ScenarioError> {
    let noise = NoiseModel {
        seed: cfg.seed,
        ..cfg.noise
    };
    cfg.speeds
        .iter()
        .map(|&v| {
            let log = track(cfg, v, cfg.perception, noise)?;
            Ok(record(cfg, format!("speed_{v:.1}"), log, None))
        })
        .collect()
}

/// Seed of one lap, independent of the perception mode so both modes see
/// the same noise.
pub fn lap_seed(base: u64, speed_index: usize, trial: usize, lap: usize) -> u64 {
    let mut z = base
        .wrapping_add((speed_index as u64) << 40)
        .wrapping_add((trial as u64) << 16)
        .wrapping_add(lap as u64)
        .wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

struct TrialResult {
    outcome: &'static str,
    max_abs_image: f64,
    inputs_in_box: bool,
}

fn sweep_trial(
    cfg: &ScenarioConfig,
    si: usize,
    perception: bool,
    trial: usize,
) -> Result<TrialResult, ScenarioError> {
    let mut worst = 0.0f64;
    let mut in_box = true;
    for lap in 0..cfg.laps {
        let noise = NoiseModel {
            seed: lap_seed(cfg.seed, si, trial, lap),
            ..cfg.noise
        };
        let log = track(cfg, cfg.speeds[si], perception, noise)?;
        let m = metrics::compute(&log, &cfg.bounds, &cfg.extrinsics, None);
        worst = worst.max(m.max_abs_image);
        in_box &= m.inputs_in_box;
        if !log.success() {
            return Ok(TrialResult {
                outcome: log.outcome.label(),
                max_abs_image: worst,
                inputs_in_box: in_box,
            });
        }
    }
    Ok(TrialResult {
        outcome: "success",
        max_abs_image: worst,
        inputs_in_box: in_box,
    })
}

/// Success rate per speed, with and without the perception objective. A
/// trial succeeds when `laps` consecutive passes end without losing the
/// feature or diverging.
pub fn success_sweep(cfg: &ScenarioConfig) -> Result<Vec<SweepCell>, ScenarioError> {
    let cells: Vec<(usize, bool)> = (0..cfg.speeds.len())
        .flat_map(|si| [(si, true), (si, false)])
        .collect();
    let jobs: Vec<(usize, bool, usize)> = cells
        .iter()
        .flat_map(|&(si, p)| (0..cfg.trials).map(move |t| (si, p, t)))
        .collect();
    let results: Vec<TrialResult> = jobs
        .par_iter()
        .map(|&(si, p, t)| sweep_trial(cfg, si, p, t))
        .collect::<Result<_, _>>()?;
    Ok(cells
        .iter()
        .zip(results.chunks(cfg.trials))
        .map(|(&(si, perception), trials)| {
            let successes = trials.iter().filter(|t| t.outcome == "success").count();
            SweepCell {
                speed: cfg.speeds[si],
                perception,
                trials: trials.len(),
                successes,
                rate: successes as f64 / trials.len() as f64,
                outcomes: trials.iter().map(|t| t.outcome.to_string()).collect(),
                max_abs_image: trials.iter().map(|t| t.max_abs_image).fold(0.0, f64::max),
                inputs_in_box: trials.iter().all(|t| t.inputs_in_box),
            }
        })
        .collect())
}

pub fn run_scenario(cfg: &ScenarioConfig) -> Result<ScenarioReport, ScenarioError> {
    let mut report = ScenarioReport {
        config: cfg.clone(),
        runs: Vec::new(),
        sweep: None,
        predict: None,
    };
    match cfg.scenario {
        ScenarioKind::GateReaching => report.runs = gate_reaching(cfg)?,
        ScenarioKind::QuarterCircle | ScenarioKind::FullCircle => report.runs = tracking(cfg)?,
        ScenarioKind::Hover => report.runs = hover(cfg)?,
        ScenarioKind::SuccessSweep => report.sweep = Some(success_sweep(cfg)?),
        ScenarioKind::PredictCompare => report.predict = Some(predict::compare(&cfg.predict)),
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use vpc_core::geometry::HomogeneousImagePoint;

    #[test]
    fn gate_goal_sees_the_landmark_centered() {
        let cfg = ScenarioConfig::defaults(ScenarioKind::GateReaching);
        let (r, goal) = gate_reference(&cfg).unwrap();
        assert!((goal - Vec3::new(3.9, 0.0, 3.0)).norm() < 1e-12);
        assert!(r.s_star.distance_to(&HomogeneousImagePoint::CENTER) < 1e-12);
        assert!((r.d_star - 2.0).abs() < 1e-12);
    }

    #[test]
    fn lap_seeds_are_distinct() {
        let mut seen = std::collections::HashSet::new();
        for si in 0..3 {
            for t in 0..20 {
                for lap in 0..3 {
                    assert!(seen.insert(lap_seed(7, si, t, lap)));
                }
            }
        }
    }

    #[test]
    fn quarter_circle_start_reference() {
        let cfg = ScenarioConfig::defaults(ScenarioKind::QuarterCircle);
        let arc = arc_for(&cfg, 3.0);
        let s = arc.sample(0.0);
        let r = make_reference_from_waypoint(
            &s.position,
            &s.velocity,
            s.heading,
            &landmark(&cfg),
            &cfg.extrinsics,
        )
        .unwrap();
        // 8 m to the landmark minus the camera lever arm; the compensated
        // image sits 45 degrees off the zero-heading axis.
        assert!((r.d_star - 7.9).abs() < 1e-9);
        assert!(r.s_star.distance_to(&HomogeneousImagePoint::new(1.0, 0.0)) < 1e-9);
    }
}
