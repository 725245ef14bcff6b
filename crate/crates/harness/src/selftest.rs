//! Quick numerical self-checks run by `vpc selftest`.

use vpc_core::costs::{Bounds, CostWeights, ReferencePoint};
use vpc_core::dynamics::{camera_twist, CameraExtrinsics, QuadVisualState, GRAVITY};
use vpc_core::geometry::{HomogeneousImagePoint, UnitQuaternion, Vec3};
use vpc_core::ocp::{build_problem, solve, OcpParams};

use crate::config::{PredictConfig, ScenarioConfig, ScenarioKind};
use crate::{oracles, predict};

pub struct Check {
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
}

/// Bearing and distance rates against central differences of the exact
/// point motion.
fn image_rates() -> Check {
    let worst = oracles::image_dynamics_error(200, 1, 1e-4);
    Check {
        name: "image dynamics match exact point motion",
        passed: worst < 1e-6,
        detail: format!("max deviation {worst:.2e} over 200 configurations"),
    }
}

fn jacobians() -> Check {
    let worst = oracles::jacobian_error(10, 2);
    Check {
        name: "model derivatives match finite differences",
        passed: worst < 1e-5,
        detail: format!("max relative deviation {worst:.2e} over 10 points"),
    }
}

fn hover() -> Check {
    let params = OcpParams::default();
    let x0 = QuadVisualState {
        v_w: Vec3::zeros(),
        q_wb: UnitQuaternion::IDENTITY,
        q_cl: UnitQuaternion::IDENTITY,
        d: 2.0,
    };
    let r = ReferencePoint {
        s_star: HomogeneousImagePoint::CENTER,
        d_star: 2.0,
        v_star: Vec3::zeros(),
        q_star: UnitQuaternion::IDENTITY,
    };
    let problem = build_problem(
        x0,
        vec![r; params.horizon + 1],
        CostWeights::default(),
        Bounds::default(),
        CameraExtrinsics::default(),
        params,
    );
    let Ok(problem) = problem else {
        return Check {
            name: "hover is a fixed point",
            passed: false,
            detail: "problem rejected".into(),
        };
    };
    let sol = solve(&problem, None);
    let u = sol.inputs[0];
    Check {
        name: "hover is a fixed point",
        passed: (u.c - GRAVITY).abs() < 0.1 && u.omega_b.norm() < 0.01 && sol.sqp_iters <= 5,
        detail: format!(
            "c = {:.4}, |w| = {:.2e}, {} iterations",
            u.c,
            u.omega_b.norm(),
            sol.sqp_iters
        ),
    }
}

fn twist_consistency() -> Check {
    let ext = CameraExtrinsics::default();
    let t = camera_twist(
        &Vec3::new(1.0, 0.0, 0.0),
        &Vec3::zeros(),
        &UnitQuaternion::IDENTITY,
        &ext,
    );
    let along_axis = (t.v_c - Vec3::new(0.0, 0.0, 1.0)).norm();
    Check {
        name: "forward flight moves the camera along its optical axis",
        passed: along_axis < 1e-12,
        detail: format!("deviation {along_axis:.1e}"),
    }
}

fn prediction() -> Check {
    let r = predict::compare(&PredictConfig::default());
    Check {
        name: "bearing and homogeneous predictions agree",
        passed: r.max_discrepancy < 1e-4
            && r.max_bearing_error < 1e-5
            && r.max_homogeneous_error < 1e-5,
        detail: format!(
            "discrepancy {:.2e}, errors {:.2e} / {:.2e}",
            r.max_discrepancy, r.max_bearing_error, r.max_homogeneous_error
        ),
    }
}

fn defaults() -> Check {
    let bad: Vec<_> = ScenarioKind::ALL
        .iter()
        .filter(|k| ScenarioConfig::defaults(**k).validate().is_err())
        .map(|k| k.name())
        .collect();
    Check {
        name: "default configurations are valid",
        passed: bad.is_empty(),
        detail: if bad.is_empty() {
            "all kinds".into()
        } else {
            bad.join(", ")
        },
    }
}

pub fn run_all() -> Vec<Check> {
    vec![
        defaults(),
        twist_consistency(),
        image_rates(),
        jacobians(),
        prediction(),
        hover(),
    ]
}
