//! Multiple-shooting transcription of the visual servoing OCP and a
//! Gauss-Newton SQP solver for it.
//!
//! Decision variables are the inputs `u_0..u_{N-1}` and the shooting states
//! `x_1..x_N` (`x_0` is the measurement). The objective is the right-endpoint
//! rectangle rule `dt Σ_{k=1..N} L(x_k)`: `x_0` cannot be changed and `L` does
//! not depend on `u`. Each iteration linearizes the RK4 map, condenses the
//! state increments onto the inputs and solves one [`SoftBoxQp`]. Steps are
//! globalized by an Armijo backtracking search on
//!
//! ```text
//! φ = J(x) + w Σ max(0, −g(x)) + μ Σ ‖f(x_k, u_k) − x_{k+1}‖₁
//! ```
//!
//! The returned states are always an exact RK4 rollout of the returned inputs.

use nalgebra::{DMatrix, DVector, SMatrix, SVector};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::costs::{
    clamp_input, dynamic_visual_weight, stage_cost_flat, stage_residual_jacobian,
    visibility_jacobian, visibility_residual_flat, Bounds, CostWeights, ReferencePoint, NR,
};
use crate::dynamics::{
    rk4_step_flat, rk4_step_jacobians, CameraExtrinsics, ControlInput, InputVec, MatA, MatB,
    QuadVisualState, StateVec, D_FLOOR, NU, NX,
};
use crate::qp::{QpStatus, SoftBoxQp};

/// Defects above this are closed by re-rolling the states from `x0`.
pub const SHOOTING_TOL: f64 = 1e-8;
const QP_MAX_ITERS: usize = 100;
const ARMIJO: f64 = 1e-4;
const MAX_BACKTRACKS: usize = 20;
/// Levenberg-Marquardt damping relative to the largest Hessian diagonal.
const LM_DAMPING: f64 = 1e-8;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OcpParams {
    /// Number of shooting intervals.
    #[serde(alias = "N")]
    pub horizon: usize,
    /// Shooting step (s).
    pub dt: f64,
    pub max_sqp_iters: usize,
    pub qp_tol: f64,
    /// L1 penalty on visibility violations.
    pub slack_weight: f64,
    /// A solve reports `Converged` once the KKT residual drops below this.
    pub kkt_tol: f64,
}

impl Default for OcpParams {
    fn default() -> Self {
        Self {
            horizon: 20,
            dt: 0.05,
            max_sqp_iters: 10,
            qp_tol: 1e-9,
            slack_weight: 1e3,
            kkt_tol: 1e-6,
        }
    }
}

impl OcpParams {
    pub fn validate(&self) -> Result<(), String> {
        if self.horizon < 1 {
            return Err("horizon must be at least 1".into());
        }
        if !(self.dt > 0.0 && self.dt.is_finite()) {
            return Err(format!("dt must be positive, got {}", self.dt));
        }
        if self.max_sqp_iters < 1 {
            return Err("max_sqp_iters must be at least 1".into());
        }
        for (name, v) in [
            ("qp_tol", self.qp_tol),
            ("slack_weight", self.slack_weight),
            ("kkt_tol", self.kkt_tol),
        ] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(format!("{name} must be positive, got {v}"));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum OcpError {
    #[error("expected {expected} reference points, got {got}")]
    BadReferenceLength { expected: usize, got: usize },
    #[error("invalid initial state: {0}")]
    InvalidInitialState(String),
    #[error("invalid problem data: {0}")]
    InvalidData(String),
}

#[derive(Debug, Clone)]
pub struct OcpProblem {
    pub x0: QuadVisualState,
    pub refs: Vec<ReferencePoint>,
    /// Weights with the distance-dependent image scaling already applied.
    pub weights: CostWeights,
    pub bounds: Bounds,
    pub extrinsics: CameraExtrinsics,
    pub params: OcpParams,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SolveStatus {
    Converged,
    MaxIters,
    Infeasible,
}

/// Diagnostics of one accepted (or rejected) SQP step.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SqpIterate {
    /// Merit before and after the step, both under the same penalty `μ`.
    pub merit_before: f64,
    pub merit_after: f64,
    pub mu: f64,
    pub step_length: f64,
    pub max_defect: f64,
    pub accepted: bool,
}

#[derive(Debug, Clone)]
pub struct OcpSolution {
    pub inputs: Vec<ControlInput>,
    pub states: Vec<QuadVisualState>,
    /// `dt Σ L(x_k)` over the returned states.
    pub cost: f64,
    pub kkt: f64,
    pub sqp_iters: usize,
    pub status: SolveStatus,
    /// Visibility violations `max(0, −g(x_k))` for `k = 1..=N`.
    pub slacks: Vec<[f64; 4]>,
    pub iterates: Vec<SqpIterate>,
}

impl OcpSolution {
    pub fn slacks_are_zero(&self) -> bool {
        self.slacks.iter().all(|s| s.iter().all(|v| *v == 0.0))
    }

    pub fn max_slack(&self) -> f64 {
        self.slacks.iter().flatten().fold(0.0, |a, b| a.max(*b))
    }
}

pub fn build_problem(
    x0: QuadVisualState,
    refs: Vec<ReferencePoint>,
    weights: CostWeights,
    bounds: Bounds,
    extrinsics: CameraExtrinsics,
    params: OcpParams,
) -> Result<OcpProblem, OcpError> {
    params.validate().map_err(OcpError::InvalidData)?;
    if refs.len() != params.horizon + 1 {
        return Err(OcpError::BadReferenceLength {
            expected: params.horizon + 1,
            got: refs.len(),
        });
    }
    x0.validate().map_err(OcpError::InvalidInitialState)?;
    weights.validate().map_err(OcpError::InvalidData)?;
    bounds.validate().map_err(OcpError::InvalidData)?;
    for r in &refs {
        r.validate().map_err(OcpError::InvalidData)?;
    }
    let weights = CostWeights {
        q_s: dynamic_visual_weight(x0.d, weights.q_s),
        ..weights
    };
    Ok(OcpProblem {
        x0,
        refs,
        weights,
        bounds,
        extrinsics,
        params,
    })
}

// ---------------------------------------------------------------------------
// trajectory evaluation

/// RK4 rollout `x_0..x_N` of a flat input sequence.
pub fn rollout(
    x0: &StateVec,
    inputs: &[InputVec],
    dt: f64,
    ext: &CameraExtrinsics,
) -> Vec<StateVec> {
    let mut xs = Vec::with_capacity(inputs.len() + 1);
    xs.push(*x0);
    for u in inputs {
        let next = rk4_step_flat(xs.last().unwrap(), u, dt, ext);
        xs.push(next);
    }
    xs
}

fn trajectory_cost(p: &OcpProblem, xs: &[StateVec]) -> f64 {
    let q_bc = &p.extrinsics.q_bc;
    (1..xs.len())
        .map(|k| stage_cost_flat(&xs[k], &p.refs[k], &p.weights, q_bc))
        .sum::<f64>()
        * p.params.dt
}

fn violation(g: &[f64; 4]) -> f64 {
    g.iter().map(|v| (-v).max(0.0)).sum()
}

fn visibility_violation(p: &OcpProblem, xs: &[StateVec]) -> f64 {
    xs[1..]
        .iter()
        .map(|x| violation(&visibility_residual_flat(x, &p.bounds)))
        .sum()
}

fn defects(p: &OcpProblem, us: &[InputVec], xs: &[StateVec]) -> Vec<StateVec> {
    (0..us.len())
        .map(|k| {
            let f = rk4_step_flat(&xs[k], &us[k], p.params.dt, &p.extrinsics);
            std::array::from_fn(|i| f[i] - xs[k + 1][i])
        })
        .collect()
}

fn max_abs(e: &[StateVec]) -> f64 {
    e.iter().flatten().fold(0.0, |a, b| a.max(b.abs()))
}

fn merit(p: &OcpProblem, us: &[InputVec], xs: &[StateVec], mu: f64) -> f64 {
    let l1: f64 = defects(p, us, xs).iter().flatten().map(|v| v.abs()).sum();
    trajectory_cost(p, xs) + p.params.slack_weight * visibility_violation(p, xs) + mu * l1
}

// ---------------------------------------------------------------------------
// linearization and condensing

struct Linearization {
    /// `e_{k+1} = f(x_k, u_k) − x_{k+1}`.
    defects: Vec<StateVec>,
    a: Vec<MatA>,
    /// Residuals and their Jacobians for `x_1..x_N` (index `k − 1`).
    r: Vec<SVector<f64, NR>>,
    jr: Vec<SMatrix<f64, NR, NX>>,
    vis: Vec<[f64; 4]>,
    jvis: Vec<SMatrix<f64, 4, NX>>,
    /// `δx_k = G_k δU + c_k` for `k = 1..N` (index `k − 1`); `G_k` is
    /// stored as its nonzero blocks `j < k`.
    g: Vec<Vec<SMatrix<f64, NX, NU>>>,
    c: Vec<SVector<f64, NX>>,
}

fn linearize(p: &OcpProblem, us: &[InputVec], xs: &[StateVec]) -> Linearization {
    let n = us.len();
    let (dt, ext) = (p.params.dt, &p.extrinsics);
    let mut defects = Vec::with_capacity(n);
    let mut a: Vec<MatA> = Vec::with_capacity(n);
    let mut b: Vec<MatB> = Vec::with_capacity(n);
    for k in 0..n {
        let (f, ak, bk) = rk4_step_jacobians(&xs[k], &us[k], dt, ext);
        defects.push(std::array::from_fn(|i| f[i] - xs[k + 1][i]));
        a.push(ak);
        b.push(bk);
    }

    let mut r = Vec::with_capacity(n);
    let mut jr = Vec::with_capacity(n);
    let mut vis = Vec::with_capacity(n);
    let mut jvis = Vec::with_capacity(n);
    for k in 1..=n {
        let (rk, jk, _) =
            stage_residual_jacobian(&xs[k], &p.refs[k], &p.weights, &p.extrinsics.q_bc);
        r.push(rk);
        jr.push(jk);
        let (gk, sk) = visibility_jacobian(&xs[k], &p.bounds);
        vis.push(gk);
        jvis.push(sk);
    }

    let mut g: Vec<Vec<SMatrix<f64, NX, NU>>> = Vec::with_capacity(n);
    let mut c: Vec<SVector<f64, NX>> = Vec::with_capacity(n);
    for k in 0..n {
        let e = SVector::<f64, NX>::from_column_slice(&defects[k]);
        let mut row: Vec<SMatrix<f64, NX, NU>> = Vec::with_capacity(k + 1);
        let ck = if k == 0 {
            e
        } else {
            row.extend(g[k - 1].iter().map(|blk| a[k] * blk));
            a[k] * c[k - 1] + e
        };
        row.push(b[k]);
        g.push(row);
        c.push(ck);
    }

    Linearization {
        defects,
        a,
        r,
        jr,
        vis,
        jvis,
        g,
        c,
    }
}

/// `M G_k` as a dense `rows × 4N` matrix.
fn times_g<const R: usize>(
    m: &SMatrix<f64, R, NX>,
    blocks: &[SMatrix<f64, NX, NU>],
    n: usize,
) -> DMatrix<f64> {
    let mut out = DMatrix::zeros(R, NU * n);
    for (j, blk) in blocks.iter().enumerate() {
        out.view_mut((0, NU * j), (R, NU)).copy_from(&(m * blk));
    }
    out
}

fn build_qp(p: &OcpProblem, us: &[InputVec], lin: &Linearization) -> SoftBoxQp {
    let n = us.len();
    let nv = NU * n;
    let dt = p.params.dt;
    let nr = lin.r.first().map_or(0, |r| r.len());
    // Stage residual Jacobians stacked into one matrix so H needs a single product.
    let mut s = DMatrix::<f64>::zeros(nr * n, nv);
    let mut res = DVector::<f64>::zeros(nr * n);
    let mut a = DMatrix::<f64>::zeros(4 * n, nv);
    let mut b = DVector::<f64>::zeros(4 * n);

    for k in 0..n {
        s.view_mut((nr * k, 0), (nr, nv))
            .copy_from(&times_g(&lin.jr[k], &lin.g[k], n));
        res.rows_mut(nr * k, nr)
            .copy_from(&(lin.r[k] + lin.jr[k] * lin.c[k]));

        let sg = times_g(&lin.jvis[k], &lin.g[k], n);
        let sc = lin.jvis[k] * lin.c[k];
        for i in 0..4 {
            a.row_mut(4 * k + i).copy_from(&(-sg.row(i)));
            b[4 * k + i] = lin.vis[k][i] + sc[i];
        }
    }
    let st = s.transpose();
    let mut h = DMatrix::<f64>::zeros(nv, nv);
    h.gemm(2.0 * dt, &st, &s, 0.0);
    let grad = (2.0 * dt) * (&st * res);
    let scale = 1.0 + h.diagonal().amax();
    for i in 0..nv {
        h[(i, i)] += LM_DAMPING * scale;
    }

    let (lo, hi) = (p.bounds.input_lower(), p.bounds.input_upper());
    let lb = DVector::from_fn(nv, |i, _| lo[i % NU] - us[i / NU][i % NU]);
    let ub = DVector::from_fn(nv, |i, _| hi[i % NU] - us[i / NU][i % NU]);
    SoftBoxQp {
        h,
        g: grad,
        lb,
        ub,
        a,
        b,
        penalty: p.params.slack_weight,
    }
}

struct Step {
    du: Vec<InputVec>,
    dx: Vec<SVector<f64, NX>>,
    /// Decrease of cost and visibility penalty predicted by the QP model.
    predicted: f64,
    /// Infinity norm of the shooting costates.
    costate_norm: f64,
    /// `‖H δU‖∞`: the Lagrangian gradient under the QP multiplier estimates.
    stationarity: f64,
}

fn compute_step(p: &OcpProblem, us: &[InputVec], lin: &Linearization) -> Option<Step> {
    let n = us.len();
    let qp = build_qp(p, us, lin);
    let sol = qp.solve(p.params.qp_tol, QP_MAX_ITERS);
    if sol.status == QpStatus::NumericalFailure || sol.x.iter().any(|v| !v.is_finite()) {
        return None;
    }
    let dt = p.params.dt;
    let w = p.params.slack_weight;

    let dx: Vec<SVector<f64, NX>> = (0..n)
        .map(|k| {
            let mut v = lin.c[k];
            for (j, blk) in lin.g[k].iter().enumerate() {
                v += blk
                    * SVector::<f64, NU>::from_column_slice(
                        &sol.x.as_slice()[NU * j..NU * (j + 1)],
                    );
            }
            v
        })
        .collect();

    let mut model0 = 0.0;
    let mut model1 = 0.0;
    for k in 0..n {
        model0 += dt * lin.r[k].norm_squared() + w * violation(&lin.vis[k]);
        model1 += dt * (lin.r[k] + lin.jr[k] * dx[k]).norm_squared();
        let lin_vis = lin.jvis[k] * dx[k];
        model1 += w * violation(&std::array::from_fn(|i| lin.vis[k][i] + lin_vis[i]));
    }
    // costates of the shooting constraints, backward from the last stage
    let mut lambda = SVector::<f64, NX>::zeros();
    let mut costate_norm: f64 = 0.0;
    for k in (0..n).rev() {
        let nu =
            SVector::<f64, 4>::from_column_slice(&sol.row_multipliers.as_slice()[4 * k..4 * k + 4]);
        let mut next = 2.0 * dt * lin.jr[k].transpose() * (lin.r[k] + lin.jr[k] * dx[k])
            - lin.jvis[k].transpose() * nu;
        if k + 1 < n {
            next += lin.a[k + 1].transpose() * lambda;
        }
        lambda = next;
        costate_norm = costate_norm.max(lambda.amax());
    }

    let du: Vec<InputVec> = (0..n)
        .map(|k| std::array::from_fn(|i| sol.x[NU * k + i]))
        .collect();
    Some(Step {
        du,
        dx,
        predicted: model0 - model1,
        costate_norm,
        stationarity: (&qp.h * &sol.x).amax(),
    })
}

fn apply_step(
    p: &OcpProblem,
    us: &[InputVec],
    xs: &[StateVec],
    step: &Step,
    alpha: f64,
) -> (Vec<InputVec>, Vec<StateVec>) {
    let (lo, hi) = (p.bounds.input_lower(), p.bounds.input_upper());
    let new_us = us
        .iter()
        .zip(&step.du)
        .map(|(u, du)| std::array::from_fn(|i| (u[i] + alpha * du[i]).clamp(lo[i], hi[i])))
        .collect();
    let mut new_xs = Vec::with_capacity(xs.len());
    new_xs.push(xs[0]);
    for (x, dx) in xs[1..].iter().zip(&step.dx) {
        let mut y: StateVec = std::array::from_fn(|i| x[i] + alpha * dx[i]);
        retract(&mut y);
        new_xs.push(y);
    }
    (new_us, new_xs)
}

/// Back onto the state manifold: unit quaternions, distance above the floor.
fn retract(x: &mut StateVec) {
    for range in [3..7, 7..11] {
        let n = x[range.clone()].iter().map(|v| v * v).sum::<f64>().sqrt();
        if n > 0.0 {
            x[range].iter_mut().for_each(|v| *v /= n);
        }
    }
    x[11] = x[11].max(D_FLOOR);
}

fn finite(xs: &[StateVec]) -> bool {
    xs.iter().flatten().all(|v| v.is_finite())
}

/// Max-norm of the stationarity and feasibility residuals. Stationarity is
/// measured through the QP step, which vanishes exactly at a KKT point of the
/// transcribed problem; feasibility is the largest shooting defect.
fn kkt_at(p: &OcpProblem, us: &[InputVec], xs: &[StateVec]) -> (f64, Option<Step>) {
    let lin = linearize(p, us, xs);
    let defect = max_abs(&lin.defects);
    let step = compute_step(p, us, &lin);
    let stationarity = step.as_ref().map_or(f64::INFINITY, |s| s.stationarity);
    (stationarity.max(defect), step)
}

pub fn kkt_residual(problem: &OcpProblem, solution: &OcpSolution) -> f64 {
    let us: Vec<InputVec> = solution.inputs.iter().map(|u| u.to_array()).collect();
    let mut xs: Vec<StateVec> = solution.states.iter().map(|x| x.to_array()).collect();
    xs[0] = problem.x0.to_array();
    kkt_at(problem, &us, &xs).0
}

fn initial_inputs(p: &OcpProblem, warm: Option<&OcpSolution>) -> Vec<InputVec> {
    let n = p.params.horizon;
    let hover = clamp_input(&ControlInput::hover(), &p.bounds).to_array();
    match warm {
        Some(w) if w.inputs.len() == n => w
            .inputs
            .iter()
            .map(|u| clamp_input(u, &p.bounds).to_array())
            .collect(),
        _ => vec![hover; n],
    }
}

/// Solves the problem from the warm start's inputs (or hover inputs), with
/// shooting states initialized by a rollout from `x0`.
pub fn solve(problem: &OcpProblem, warm: Option<&OcpSolution>) -> OcpSolution {
    let p = problem;
    let x0 = p.x0.to_array();
    let mut us = initial_inputs(p, warm);
    let mut xs = rollout(&x0, &us, p.params.dt, &p.extrinsics);
    let mut mu: f64 = 1.0;
    let mut iterates = Vec::new();
    let mut sqp_iters = 0;
    let mut kkt = f64::INFINITY;
    let mut converged = false;

    if finite(&xs) {
        for _ in 0..p.params.max_sqp_iters {
            let (k, step) = kkt_at(p, &us, &xs);
            kkt = k;
            if kkt <= p.params.kkt_tol {
                converged = true;
                break;
            }
            let Some(mut step) = step else { break };
            mu = mu.max(1.5 * step.costate_norm + 1.0);
            let l1: f64 = defects(p, &us, &xs).iter().flatten().map(|v| v.abs()).sum();
            step.predicted += mu * l1;

            let phi0 = merit(p, &us, &xs, mu);
            let mut alpha = 1.0;
            let mut accepted = None;
            for _ in 0..=MAX_BACKTRACKS {
                let (nu, nx) = apply_step(p, &us, &xs, &step, alpha);
                if finite(&nx) {
                    let phi = merit(p, &nu, &nx, mu);
                    if phi <= phi0 - ARMIJO * alpha * step.predicted.max(0.0) {
                        accepted = Some((nu, nx, phi));
                        break;
                    }
                }
                alpha *= 0.5;
            }
            sqp_iters += 1;
            match accepted {
                Some((nu, nx, phi)) => {
                    us = nu;
                    xs = nx;
                    iterates.push(SqpIterate {
                        merit_before: phi0,
                        merit_after: phi,
                        mu,
                        step_length: alpha,
                        max_defect: max_abs(&defects(p, &us, &xs)),
                        accepted: true,
                    });
                    kkt = f64::INFINITY;
                }
                None => {
                    iterates.push(SqpIterate {
                        merit_before: phi0,
                        merit_after: phi0,
                        mu,
                        step_length: 0.0,
                        max_defect: max_abs(&defects(p, &us, &xs)),
                        accepted: false,
                    });
                    break;
                }
            }
        }
    }

    // close remaining shooting gaps so the states are an exact rollout
    if !finite(&xs) || max_abs(&defects(p, &us, &xs)) > SHOOTING_TOL {
        xs = rollout(&x0, &us, p.params.dt, &p.extrinsics);
        kkt = f64::INFINITY;
        converged = false;
    }
    let cost = trajectory_cost(p, &xs);
    let feasible = finite(&xs) && us.iter().flatten().all(|v| v.is_finite()) && cost.is_finite();
    if feasible && !kkt.is_finite() {
        kkt = kkt_at(p, &us, &xs).0;
        converged = kkt <= p.params.kkt_tol;
    }

    let status = if !feasible {
        SolveStatus::Infeasible
    } else if converged {
        SolveStatus::Converged
    } else {
        SolveStatus::MaxIters
    };
    OcpSolution {
        inputs: us.iter().map(ControlInput::from_array).collect(),
        states: xs.iter().map(QuadVisualState::from_array).collect(),
        cost: if feasible { cost } else { f64::INFINITY },
        kkt,
        sqp_iters,
        status,
        slacks: xs[1..]
            .iter()
            .map(|x| visibility_residual_flat(x, &p.bounds).map(|g| (-g).max(0.0)))
            .collect(),
        iterates,
    }
}

/// Receding-horizon shift: drop the first input, repeat the last one and
/// re-roll the states from the previous `states[1]`.
pub fn shift_warm_start(prev: &OcpSolution, dt: f64, ext: &CameraExtrinsics) -> OcpSolution {
    let n = prev.inputs.len();
    let mut inputs: Vec<ControlInput> = prev.inputs.iter().skip(1).copied().collect();
    if let Some(last) = prev.inputs.last() {
        inputs.push(*last);
    }
    let start = prev.states.get(1).or(prev.states.first()).copied();
    let states = match start {
        Some(x) => {
            let us: Vec<InputVec> = inputs.iter().map(|u| u.to_array()).collect();
            rollout(&x.to_array(), &us, dt, ext)
                .iter()
                .map(QuadVisualState::from_array)
                .collect()
        }
        None => Vec::new(),
    };
    OcpSolution {
        inputs,
        states,
        cost: f64::NAN,
        kkt: f64::NAN,
        sqp_iters: 0,
        status: prev.status,
        slacks: vec![[0.0; 4]; n],
        iterates: Vec::new(),
    }
}

// ---------------------------------------------------------------------------
// receding-horizon controller

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
#[serde(default)]
pub struct ControllerConfig {
    pub weights: CostWeights,
    pub bounds: Bounds,
    pub extrinsics: CameraExtrinsics,
    pub params: OcpParams,
}

/// Single-owner MPC loop state: the previous solution used for warm starts.
#[derive(Debug, Clone)]
pub struct MpcController {
    pub config: ControllerConfig,
    prev: Option<OcpSolution>,
}

impl MpcController {
    pub fn new(config: ControllerConfig) -> Result<Self, OcpError> {
        config.params.validate().map_err(OcpError::InvalidData)?;
        config.weights.validate().map_err(OcpError::InvalidData)?;
        config.bounds.validate().map_err(OcpError::InvalidData)?;
        Ok(Self { config, prev: None })
    }

    pub fn reset(&mut self) {
        self.prev = None;
    }

    pub fn previous(&self) -> Option<&OcpSolution> {
        self.prev.as_ref()
    }

    /// One control cycle. Returns the clamped first input and the solution.
    /// An infeasible solve falls back to the next input queued by the
    /// previous cycle, or to hover when there is none.
    pub fn controller_step(
        &mut self,
        measurement: &QuadVisualState,
        refs: &[ReferencePoint],
    ) -> Result<(ControlInput, OcpSolution), OcpError> {
        let cfg = self.config;
        let problem = build_problem(
            *measurement,
            refs.to_vec(),
            cfg.weights,
            cfg.bounds,
            cfg.extrinsics,
            cfg.params,
        )?;
        let warm = self
            .prev
            .as_ref()
            .filter(|s| s.inputs.len() >= 2)
            .map(|s| shift_warm_start(s, cfg.params.dt, &cfg.extrinsics));
        let sol = solve(&problem, warm.as_ref());
        if sol.status == SolveStatus::Infeasible {
            let fallback = match &self.prev {
                Some(prev) if prev.inputs.len() >= 2 => prev.inputs[1],
                _ => ControlInput::hover(),
            };
            self.prev = warm;
            return Ok((clamp_input(&fallback, &cfg.bounds), sol));
        }
        let u = clamp_input(&sol.inputs[0], &cfg.bounds);
        self.prev = Some(sol.clone());
        Ok((u, sol))
    }
}
