//! Dense QP with box bounds and L1-softened linear inequalities.
//!
//! ```text
//! minimize    ½ xᵀHx + gᵀx + w Σ σᵢ
//! subject to  lb ≤ x ≤ ub
//!             aᵢᵀx − σᵢ ≤ bᵢ,  σᵢ ≥ 0
//! ```
//!
//! Solved with a Mehrotra predictor-corrector interior point method. The
//! slack variables `σ` enter the Newton system diagonally and are eliminated,
//! so every iteration factors a single `n × n` matrix. The returned `x` is
//! projected onto the box, so box bounds hold exactly.

use nalgebra::{Cholesky, DMatrix, DVector};

#[derive(Debug, Clone)]
pub struct SoftBoxQp {
    pub h: DMatrix<f64>,
    pub g: DVector<f64>,
    pub lb: DVector<f64>,
    pub ub: DVector<f64>,
    /// Soft rows, `m × n`.
    pub a: DMatrix<f64>,
    pub b: DVector<f64>,
    pub penalty: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum QpStatus {
    Solved,
    MaxIterations,
    NumericalFailure,
}

#[derive(Debug, Clone)]
pub struct QpSolution {
    pub x: DVector<f64>,
    /// Row violations `max(0, aᵢᵀx − bᵢ)` at the returned `x`.
    pub sigma: DVector<f64>,
    /// Multipliers of the soft rows, each in `[0, penalty]`.
    pub row_multipliers: DVector<f64>,
    /// Upper minus lower box multipliers.
    pub box_multipliers: DVector<f64>,
    pub iterations: usize,
    pub status: QpStatus,
}

impl SoftBoxQp {
    pub fn dim(&self) -> usize {
        self.g.len()
    }

    pub fn rows(&self) -> usize {
        self.b.len()
    }

    /// Exact penalized objective at `x`.
    pub fn objective(&self, x: &DVector<f64>) -> f64 {
        let quad = 0.5 * x.dot(&(&self.h * x)) + self.g.dot(x);
        let viol: f64 = (&self.a * x - &self.b).iter().map(|v| v.max(0.0)).sum();
        quad + self.penalty * viol
    }

    pub fn solve(&self, tol: f64, max_iter: usize) -> QpSolution {
        Ipm::new(self).run(tol, max_iter)
    }
}

struct Ipm<'a> {
    qp: &'a SoftBoxQp,
    at: DMatrix<f64>,
    x: DVector<f64>,
    sigma: DVector<f64>,
    // slacks and duals of the four inequality groups:
    // x ≤ ub, lb ≤ x, a x − σ ≤ b, σ ≥ 0
    s: [DVector<f64>; 4],
    z: [DVector<f64>; 4],
}

struct Residuals {
    rx: DVector<f64>,
    rsig: DVector<f64>,
    r: [DVector<f64>; 4],
}

struct Step {
    dx: DVector<f64>,
    dsig: DVector<f64>,
    ds: [DVector<f64>; 4],
    dz: [DVector<f64>; 4],
}

impl<'a> Ipm<'a> {
    fn new(qp: &'a SoftBoxQp) -> Self {
        let (n, m) = (qp.dim(), qp.rows());
        let x = DVector::from_fn(n, |i, _| 0.0f64.clamp(qp.lb[i], qp.ub[i]));
        let ax = &qp.a * &x;
        let sigma = DVector::from_fn(m, |i, _| (ax[i] - qp.b[i]).max(0.0) + 1.0);
        let s = [
            DVector::from_fn(n, |i, _| (qp.ub[i] - x[i]).max(1.0)),
            DVector::from_fn(n, |i, _| (x[i] - qp.lb[i]).max(1.0)),
            DVector::from_fn(m, |i, _| (qp.b[i] + sigma[i] - ax[i]).max(1.0)),
            sigma.map(|v| v.max(1.0)),
        ];
        let z = [
            DVector::from_element(n, 1.0),
            DVector::from_element(n, 1.0),
            DVector::from_element(m, 0.5 * qp.penalty.max(1e-8)),
            DVector::from_element(m, 0.5 * qp.penalty.max(1e-8)),
        ];
        Self {
            qp,
            at: qp.a.transpose(),
            x,
            sigma,
            s,
            z,
        }
    }

    fn total(&self) -> usize {
        2 * self.qp.dim() + 2 * self.qp.rows()
    }

    fn mu(&self) -> f64 {
        let sz: f64 = (0..4).map(|j| self.s[j].dot(&self.z[j])).sum();
        sz / self.total().max(1) as f64
    }

    fn residuals(&self) -> Residuals {
        let qp = self.qp;
        let rx = &qp.h * &self.x + &qp.g + &self.z[0] - &self.z[1] + &self.at * &self.z[2];
        let rsig = DVector::from_element(qp.rows(), qp.penalty) - &self.z[2] - &self.z[3];
        let r = [
            &self.x - &qp.ub + &self.s[0],
            &qp.lb - &self.x + &self.s[1],
            &qp.a * &self.x - &self.sigma - &qp.b + &self.s[2],
            -&self.sigma + &self.s[3],
        ];
        Residuals { rx, rsig, r }
    }

    fn run(mut self, tol: f64, max_iter: usize) -> QpSolution {
        let qp = self.qp;
        let scale_x = 1.0 + qp.g.amax();
        let scale_p = 1.0 + qp.b.amax().max(qp.ub.amax()).max(qp.lb.amax());
        let mut status = QpStatus::MaxIterations;
        let mut iterations = 0;

        for it in 0..max_iter {
            iterations = it;
            let res = self.residuals();
            let dual_inf = res.rx.amax().max(res.rsig.amax() / (1.0 + qp.penalty)) / scale_x;
            let primal_inf = res.r.iter().map(|r| r.amax()).fold(0.0, f64::max) / scale_p;
            let mu = self.mu();
            if dual_inf < tol && primal_inf < tol && mu < tol {
                status = QpStatus::Solved;
                break;
            }

            let d: [DVector<f64>; 4] = std::array::from_fn(|j| self.z[j].component_div(&self.s[j]));
            let Some(factor) = self.factor(&d) else {
                status = QpStatus::NumericalFailure;
                break;
            };

            // predictor
            let rc_aff: [DVector<f64>; 4] =
                std::array::from_fn(|j| self.s[j].component_mul(&self.z[j]));
            let aff = self.newton_step(&factor, &d, &res, &rc_aff);
            let alpha_aff = self.max_step(&aff, 1.0);
            let mu_aff: f64 = (0..4)
                .map(|j| {
                    (&self.s[j] + alpha_aff * &aff.ds[j])
                        .dot(&(&self.z[j] + alpha_aff * &aff.dz[j]))
                })
                .sum::<f64>()
                / self.total().max(1) as f64;
            let centering = (mu_aff / mu).powi(3).min(1.0);

            // corrector
            let rc: [DVector<f64>; 4] = std::array::from_fn(|j| {
                let mut v =
                    self.s[j].component_mul(&self.z[j]) + aff.ds[j].component_mul(&aff.dz[j]);
                v.add_scalar_mut(-centering * mu);
                v
            });
            let step = self.newton_step(&factor, &d, &res, &rc);
            let alpha = self.max_step(&step, 0.99);

            self.x.axpy(alpha, &step.dx, 1.0);
            self.sigma.axpy(alpha, &step.dsig, 1.0);
            for j in 0..4 {
                self.s[j].axpy(alpha, &step.ds[j], 1.0);
                self.z[j].axpy(alpha, &step.dz[j], 1.0);
            }
            iterations = it + 1;
        }

        // snap strongly active bounds
        let x = DVector::from_fn(qp.dim(), |i, _| {
            if self.z[0][i] > 1e3 * self.s[0][i] {
                qp.ub[i]
            } else if self.z[1][i] > 1e3 * self.s[1][i] {
                qp.lb[i]
            } else {
                self.x[i].clamp(qp.lb[i], qp.ub[i])
            }
        });
        let sigma = (&qp.a * &x - &qp.b).map(|v| v.max(0.0));
        QpSolution {
            x,
            sigma,
            row_multipliers: self.z[2].map(|v| v.clamp(0.0, qp.penalty)),
            box_multipliers: &self.z[0] - &self.z[1],
            iterations,
            status,
        }
    }

    /// Factor `H + D₁ + D₂ + Aᵀ diag(D₃D₄/(D₃+D₄)) A`.
    fn factor(&self, d: &[DVector<f64>; 4]) -> Option<Cholesky<f64, nalgebra::Dyn>> {
        let qp = self.qp;
        let f = DVector::from_fn(qp.rows(), |i, _| d[2][i] * d[3][i] / (d[2][i] + d[3][i]));
        let mut fa = qp.a.clone();
        for (i, mut row) in fa.row_iter_mut().enumerate() {
            row *= f[i];
        }
        let build = |reg: f64| {
            let mut k = qp.h.clone();
            k.gemm(1.0, &self.at, &fa, 1.0);
            for i in 0..qp.dim() {
                k[(i, i)] += d[0][i] + d[1][i] + reg;
            }
            k
        };
        let k = build(0.0);
        let scale = 1.0 + k.diagonal().amax();
        if let Some(c) = Cholesky::new(k) {
            return Some(c);
        }
        let mut reg = 1e-12 * scale;
        for _ in 0..5 {
            if let Some(c) = Cholesky::new(build(reg)) {
                return Some(c);
            }
            reg *= 100.0;
        }
        None
    }

    fn newton_step(
        &self,
        factor: &Cholesky<f64, nalgebra::Dyn>,
        d: &[DVector<f64>; 4],
        res: &Residuals,
        rc: &[DVector<f64>; 4],
    ) -> Step {
        let qp = self.qp;
        // Δz_j = D_j (C_j Δv) + h_j
        let h: [DVector<f64>; 4] = std::array::from_fn(|j| {
            d[j].component_mul(&res.r[j]) - rc[j].component_div(&self.s[j])
        });
        let e = (&d[2] + &d[3]).map(|v| 1.0 / v);
        let rho = -&res.rsig + &h[2] + &h[3];
        let rhs = -&res.rx - &h[0] + &h[1]
            - &self.at * (&h[2] - d[2].component_mul(&e).component_mul(&rho));
        let dx = factor.solve(&rhs);
        let adx = &qp.a * &dx;
        let dsig = e.component_mul(&(&rho + d[2].component_mul(&adx)));

        let cdv = [dx.clone(), -&dx, &adx - &dsig, -&dsig];
        let dz: [DVector<f64>; 4] = std::array::from_fn(|j| d[j].component_mul(&cdv[j]) + &h[j]);
        let ds: [DVector<f64>; 4] = std::array::from_fn(|j| -&res.r[j] - &cdv[j]);
        Step { dx, dsig, ds, dz }
    }

    fn max_step(&self, step: &Step, fraction: f64) -> f64 {
        let mut alpha: f64 = 1.0;
        for j in 0..4 {
            for (v, dv) in self.s[j]
                .iter()
                .zip(step.ds[j].iter())
                .chain(self.z[j].iter().zip(step.dz[j].iter()))
            {
                if *dv < 0.0 {
                    alpha = alpha.min(-fraction * v / dv);
                }
            }
        }
        alpha.min(1.0)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    fn qp(
        h: &[f64],
        g: &[f64],
        lb: &[f64],
        ub: &[f64],
        a: &[f64],
        b: &[f64],
        penalty: f64,
    ) -> SoftBoxQp {
        let n = g.len();
        SoftBoxQp {
            h: DMatrix::from_row_slice(n, n, h),
            g: DVector::from_row_slice(g),
            lb: DVector::from_row_slice(lb),
            ub: DVector::from_row_slice(ub),
            a: DMatrix::from_row_slice(b.len(), n, a),
            b: DVector::from_row_slice(b),
            penalty,
        }
    }

    #[test]
    fn interior_solution_is_newton_point() {
        let p = qp(
            &[4.0, 1.0, 1.0, 2.0],
            &[-1.0, -1.0],
            &[-10.0, -10.0],
            &[10.0, 10.0],
            &[],
            &[],
            1.0,
        );
        let sol = p.solve(1e-10, 50);
        assert_eq!(sol.status, QpStatus::Solved);
        let expected = p.h.clone().lu().solve(&-p.g.clone()).unwrap();
        assert_relative_eq!(sol.x, expected, epsilon = 1e-8);
    }

    #[test]
    fn active_box_is_hit_exactly() {
        let p = qp(&[1.0], &[-5.0], &[-1.0], &[2.0], &[], &[], 1.0);
        let sol = p.solve(1e-10, 50);
        assert_eq!(sol.x[0], 2.0);
        assert_relative_eq!(sol.box_multipliers[0], 3.0, epsilon = 1e-6);
    }

    #[test]
    fn soft_row_with_large_penalty_is_hard() {
        // min ½(x-3)² s.t. x ≤ 1 (soft, w = 100) → x = 1, multiplier 2
        let p = qp(&[1.0], &[-3.0], &[-10.0], &[10.0], &[1.0], &[1.0], 100.0);
        let sol = p.solve(1e-10, 50);
        assert_relative_eq!(sol.x[0], 1.0, epsilon = 1e-7);
        assert!(sol.sigma[0] < 1e-7);
        assert_relative_eq!(sol.row_multipliers[0], 2.0, epsilon = 1e-6);
    }

    #[test]
    fn soft_row_with_small_penalty_is_violated() {
        // min ½(x-3)² + 0.5 max(0, x - 1) → x = 2.5
        let p = qp(&[1.0], &[-3.0], &[-10.0], &[10.0], &[1.0], &[1.0], 0.5);
        let sol = p.solve(1e-10, 50);
        assert_relative_eq!(sol.x[0], 2.5, epsilon = 1e-7);
        assert_relative_eq!(sol.sigma[0], 1.5, epsilon = 1e-7);
    }

    fn grid_minimum(p: &SoftBoxQp, steps: usize) -> f64 {
        let mut best = f64::INFINITY;
        for i in 0..=steps {
            for j in 0..=steps {
                let x = DVector::from_vec(vec![
                    p.lb[0] + (p.ub[0] - p.lb[0]) * i as f64 / steps as f64,
                    p.lb[1] + (p.ub[1] - p.lb[1]) * j as f64 / steps as f64,
                ]);
                best = best.min(p.objective(&x));
            }
        }
        best
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]

        #[test]
        fn matches_grid_search_in_two_dimensions(
            l in prop::array::uniform3(-2.0..2.0f64),
            g in prop::array::uniform2(-3.0..3.0f64),
            a in prop::array::uniform4(-1.0..1.0f64),
            b in prop::array::uniform2(-0.5..0.5f64),
            w in 0.1..5.0f64,
        ) {
            // H = LLᵀ + 0.1 I
            let lm = DMatrix::from_row_slice(2, 2, &[l[0], 0.0, l[1], l[2]]);
            let h = &lm * lm.transpose() + DMatrix::identity(2, 2) * 0.1;
            let p = SoftBoxQp {
                h,
                g: DVector::from_row_slice(&g),
                lb: DVector::from_row_slice(&[-1.0, -0.5]),
                ub: DVector::from_row_slice(&[1.5, 1.0]),
                a: DMatrix::from_row_slice(2, 2, &a),
                b: DVector::from_row_slice(&b),
                penalty: w,
            };
            let sol = p.solve(1e-10, 80);
            prop_assert_eq!(sol.status, QpStatus::Solved);
            prop_assert!((0..2).all(|i| p.lb[i] <= sol.x[i] && sol.x[i] <= p.ub[i]));
            let grid = grid_minimum(&p, 400);
            let obj = p.objective(&sol.x);
            // the grid can only be worse than the optimum, by at most its resolution
            prop_assert!(obj <= grid + 1e-9, "ipm {} grid {}", obj, grid);
            prop_assert!(grid - obj < 0.05, "ipm {} grid {}", obj, grid);
        }
    }
}
