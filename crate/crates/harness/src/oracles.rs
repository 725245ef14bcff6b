//! Independent numerical oracles: finite differences of exact geometry and of
//! the model functions, and a random multi-start bound for the solver. Used by
//! `vpc selftest` and the acceptance suite.

use nalgebra::{SMatrix, SVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use vpc_core::costs::{
    stage_cost_flat, stage_cost_gradient, stage_residual_jacobian, visibility_jacobian,
    visibility_residual_flat, Bounds, CostWeights, ReferencePoint,
};
use vpc_core::dynamics::{
    dynamics_jacobians, feature_state_from_point, full_dynamics, image_dynamics,
    propagate_point_exact, rk4_step_flat, rk4_step_jacobians, CameraExtrinsics, CameraTwist,
    ControlInput, InputVec, QuadVisualState, StateVec, NU, NX,
};
use vpc_core::geometry::{
    bearing_from_image, bearing_n, bearing_tangent_basis, HomogeneousImagePoint, UnitQuaternion,
    Vec3,
};
use vpc_core::ocp::{build_problem, rollout, solve, OcpParams, OcpProblem};

fn uniform3(rng: &mut ChaCha8Rng, r: f64) -> Vec3 {
    Vec3::new(
        rng.random_range(-r..r),
        rng.random_range(-r..r),
        rng.random_range(-r..r),
    )
}

/// A camera-frame point in front of the camera and a constant camera twist.
pub fn random_feature(rng: &mut ChaCha8Rng) -> (Vec3, CameraTwist) {
    let z = rng.random_range(1.0..8.0);
    let p = Vec3::new(
        rng.random_range(-0.9..0.9) * z,
        rng.random_range(-0.9..0.9) * z,
        z,
    );
    let twist = CameraTwist {
        v_c: uniform3(rng, 2.0),
        omega_c: uniform3(rng, 2.0),
    };
    (p, twist)
}

/// Largest absolute gap between the analytic bearing and distance rates and
/// central differences (step `h`) of the exact point motion.
pub fn image_dynamics_error(samples: usize, seed: u64, h: f64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst = 0.0f64;
    for _ in 0..samples {
        let (p, twist) = random_feature(&mut rng);
        let (q, d) = feature_state_from_point(&p).expect("point in front of the camera");
        let (mu, dd) = image_dynamics(&q, d, &twist);
        let n_dot =
            (bearing_tangent_basis(&q) * nalgebra::Vector2::new(mu.a, mu.b)).cross(&bearing_n(&q));
        let (pp, pm) = (
            propagate_point_exact(&p, &twist, h),
            propagate_point_exact(&p, &twist, -h),
        );
        let fd_n = (pp.normalize() - pm.normalize()) / (2.0 * h);
        let fd_d = (pp.norm() - pm.norm()) / (2.0 * h);
        worst = worst.max((n_dot - fd_n).amax()).max((dd - fd_d).abs());
    }
    worst
}

/// Random controller state: moderate tilt and yaw, feature inside the image.
pub fn random_state(rng: &mut ChaCha8Rng) -> QuadVisualState {
    let roll_about_axis = UnitQuaternion::from_axis_angle(&Vec3::z(), rng.random_range(-3.0..3.0));
    let s = HomogeneousImagePoint::new(rng.random_range(-0.9..0.9), rng.random_range(-0.9..0.9));
    QuadVisualState {
        v_w: uniform3(rng, 3.0),
        q_wb: UnitQuaternion::from_yaw(rng.random_range(-0.5..0.5))
            * UnitQuaternion::from_axis_angle(&uniform3(rng, 1.0), rng.random_range(0.0..0.5)),
        q_cl: bearing_from_image(&s) * roll_about_axis,
        d: rng.random_range(0.5..8.0),
    }
}

pub fn random_input(rng: &mut ChaCha8Rng, b: &Bounds) -> ControlInput {
    let (lo, hi) = (b.input_lower(), b.input_upper());
    ControlInput::from_array(&std::array::from_fn(|i| rng.random_range(lo[i]..hi[i])))
}

pub fn random_reference(rng: &mut ChaCha8Rng) -> ReferencePoint {
    ReferencePoint {
        s_star: HomogeneousImagePoint::new(
            rng.random_range(-0.5..0.5),
            rng.random_range(-0.5..0.5),
        ),
        d_star: rng.random_range(1.0..5.0),
        v_star: uniform3(rng, 2.0),
        q_star: UnitQuaternion::from_yaw(rng.random_range(-0.5..0.5)),
    }
}

fn rel_gap(analytic: f64, fd: f64) -> f64 {
    (analytic - fd).abs() / fd.abs().max(1.0)
}

fn bump(x: &StateVec, i: usize, h: f64) -> StateVec {
    let mut y = *x;
    y[i] += h;
    y
}

/// `I − q qᵀ` on both quaternion blocks: the derivative of normalization at a
/// unit quaternion, which the typed state applies on construction.
fn normalization_projector(x: &StateVec) -> SMatrix<f64, NX, NX> {
    let mut p = SMatrix::<f64, NX, NX>::identity();
    for start in [3, 7] {
        for r in 0..4 {
            for c in 0..4 {
                p[(start + r, start + c)] -= x[start + r] * x[start + c];
            }
        }
    }
    p
}

/// Largest relative gap between the model's derivatives and central
/// differences: RK4 step sensitivities, continuous dynamics Jacobians, stage
/// cost gradient and visibility Jacobian.
pub fn jacobian_error(samples: usize, seed: u64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let ext = CameraExtrinsics::default();
    let (bounds, weights) = (Bounds::default(), CostWeights::default());
    let (h, dt) = (1e-6, 0.05);
    let mut worst = 0.0f64;
    for _ in 0..samples {
        let xs = random_state(&mut rng);
        let us = random_input(&mut rng, &bounds);
        let r = random_reference(&mut rng);
        let (x, u) = (xs.to_array(), us.to_array());

        let (_, a, b) = rk4_step_jacobians(&x, &u, dt, &ext);
        for j in 0..NX {
            let (fp, fm) = (
                rk4_step_flat(&bump(&x, j, h), &u, dt, &ext),
                rk4_step_flat(&bump(&x, j, -h), &u, dt, &ext),
            );
            for i in 0..NX {
                worst = worst.max(rel_gap(a[(i, j)], (fp[i] - fm[i]) / (2.0 * h)));
            }
        }
        for j in 0..NU {
            let mut up: InputVec = u;
            let mut um: InputVec = u;
            up[j] += h;
            um[j] -= h;
            let (fp, fm) = (
                rk4_step_flat(&x, &up, dt, &ext),
                rk4_step_flat(&x, &um, dt, &ext),
            );
            for i in 0..NX {
                worst = worst.max(rel_gap(b[(i, j)], (fp[i] - fm[i]) / (2.0 * h)));
            }
        }

        let (ac, bc) = dynamics_jacobians(&xs, &us, &ext);
        let ac = ac * normalization_projector(&x);
        let f = |x: &StateVec, u: &ControlInput| {
            full_dynamics(&QuadVisualState::from_array(x), u, &ext).to_array()
        };
        for j in 0..NX {
            let (fp, fm) = (f(&bump(&x, j, h), &us), f(&bump(&x, j, -h), &us));
            for i in 0..NX {
                worst = worst.max(rel_gap(ac[(i, j)], (fp[i] - fm[i]) / (2.0 * h)));
            }
        }
        for j in 0..NU {
            let mut up = u;
            let mut um = u;
            up[j] += h;
            um[j] -= h;
            let (fp, fm) = (
                f(&x, &ControlInput::from_array(&up)),
                f(&x, &ControlInput::from_array(&um)),
            );
            for i in 0..NX {
                worst = worst.max(rel_gap(bc[(i, j)], (fp[i] - fm[i]) / (2.0 * h)));
            }
        }

        let grad: SVector<f64, NX> = stage_cost_gradient(&x, &r, &weights, &ext.q_bc);
        let (_, jv) = visibility_jacobian(&x, &bounds);
        // the degeneracy penalty is piecewise constant; differencing it only adds roundoff
        let smooth = |y: &StateVec| {
            stage_residual_jacobian(y, &r, &weights, &ext.q_bc)
                .0
                .norm_squared()
        };
        for j in 0..NX {
            let (xp, xm) = (bump(&x, j, h), bump(&x, j, -h));
            let fd = (smooth(&xp) - smooth(&xm)) / (2.0 * h);
            worst = worst.max(rel_gap(grad[j], fd));
            let (gp, gm) = (
                visibility_residual_flat(&xp, &bounds),
                visibility_residual_flat(&xm, &bounds),
            );
            for i in 0..4 {
                worst = worst.max(rel_gap(jv[(i, j)], (gp[i] - gm[i]) / (2.0 * h)));
            }
        }
    }
    worst
}

/// Three-step problem from a moving, tilted state with the feature off-center
/// and too far away.
pub fn small_instance() -> OcpProblem {
    let params = OcpParams {
        horizon: 3,
        max_sqp_iters: 100,
        ..OcpParams::default()
    };
    let x0 = QuadVisualState {
        v_w: Vec3::new(0.6, -0.3, 0.1),
        q_wb: UnitQuaternion::from_axis_angle(&Vec3::new(0.2, 1.0, 0.3), 0.12),
        q_cl: bearing_from_image(&HomogeneousImagePoint::new(0.25, -0.15)),
        d: 3.0,
    };
    let r = ReferencePoint {
        s_star: HomogeneousImagePoint::CENTER,
        d_star: 2.0,
        v_star: Vec3::zeros(),
        q_star: UnitQuaternion::IDENTITY,
    };
    build_problem(
        x0,
        vec![r; params.horizon + 1],
        CostWeights::default(),
        Bounds::default(),
        CameraExtrinsics::default(),
        params,
    )
    .expect("valid instance")
}

/// Penalized objective of a rollout of `us`: integrated stage cost plus the
/// slack price of every visibility violation.
pub fn rollout_objective(p: &OcpProblem, us: &[InputVec]) -> f64 {
    let xs = rollout(&p.x0.to_array(), us, p.params.dt, &p.extrinsics);
    let q_bc = &p.extrinsics.q_bc;
    xs[1..]
        .iter()
        .zip(&p.refs[1..])
        .map(|(x, r)| {
            let viol: f64 = visibility_residual_flat(x, &p.bounds)
                .iter()
                .map(|g| (-g).max(0.0))
                .sum();
            stage_cost_flat(x, r, &p.weights, q_bc) * p.params.dt + p.params.slack_weight * viol
        })
        .sum()
}

/// Solver objective on `p` and the best of `samples` uniform input sequences.
pub fn multistart_gap(p: &OcpProblem, samples: usize, seed: u64) -> (f64, f64) {
    let sol = solve(p, None);
    let us: Vec<InputVec> = sol.inputs.iter().map(|u| u.to_array()).collect();
    let solver = rollout_objective(p, &us);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = p.params.horizon;
    let best = (0..samples)
        .map(|_| {
            let us: Vec<InputVec> = (0..n)
                .map(|_| random_input(&mut rng, &p.bounds).to_array())
                .collect();
            rollout_objective(p, &us)
        })
        .fold(f64::INFINITY, f64::min);
    (solver, best)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn oracles_are_tight_on_small_samples() {
        assert!(image_dynamics_error(50, 1, 1e-4) < 1e-6);
        assert!(jacobian_error(5, 2) < 1e-5);
    }

    #[test]
    fn projector_annihilates_the_quaternions() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let x = random_state(&mut rng).to_array();
        let v = normalization_projector(&x) * SVector::<f64, NX>::from_column_slice(&x);
        assert!(v.rows(3, 8).amax() < 1e-15);
        assert_eq!(v[0], x[0]);
        assert_eq!(v[11], x[11]);
    }

    #[test]
    fn rollout_objective_matches_solver_cost() {
        let p = small_instance();
        let sol = solve(&p, None);
        let us: Vec<InputVec> = sol.inputs.iter().map(|u| u.to_array()).collect();
        let slack: f64 = sol.slacks.iter().flatten().sum();
        let direct = sol.cost + p.params.slack_weight * slack;
        assert!((rollout_objective(&p, &us) - direct).abs() < 1e-9 * direct.max(1.0));
    }
}
