//! Dense primal-dual interior-point method for convex problems with a sum of
//! squares objective, linear equalities, and linear or convex-quadratic
//! inequality rows.
//!
//! The method is an infeasible-start Mehrotra predictor-corrector on the
//! slack formulation `g(x) + s = 0, s ≥ 0`. Each iteration factors the
//! reduced saddle-point system once and reuses it for both directions.

use nalgebra::{DMatrix, DVector};
use thiserror::Error;

/// `Σ cᵢ x_{jᵢ} + constant`.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct LinearForm {
    pub coeffs: Vec<(usize, f64)>,
    pub constant: f64,
}

impl LinearForm {
    pub fn constant(value: f64) -> Self {
        Self {
            coeffs: Vec::new(),
            constant: value,
        }
    }

    pub fn var(index: usize, coeff: f64) -> Self {
        Self {
            coeffs: vec![(index, coeff)],
            constant: 0.0,
        }
    }

    /// Builds a form from a dense coefficient row placed at `offset`.
    pub fn from_dense(row: &[f64], offset: usize, constant: f64) -> Self {
        Self {
            coeffs: row
                .iter()
                .enumerate()
                .filter(|(_, c)| **c != 0.0)
                .map(|(j, &c)| (offset + j, c))
                .collect(),
            constant,
        }
    }

    pub fn with_term(mut self, index: usize, coeff: f64) -> Self {
        self.coeffs.push((index, coeff));
        self
    }

    pub fn plus_constant(mut self, c: f64) -> Self {
        self.constant += c;
        self
    }

    pub fn scaled(&self, factor: f64) -> Self {
        Self {
            coeffs: self.coeffs.iter().map(|&(j, c)| (j, c * factor)).collect(),
            constant: self.constant * factor,
        }
    }

    pub fn negated(&self) -> Self {
        self.scaled(-1.0)
    }

    pub fn eval(&self, x: &DVector<f64>) -> f64 {
        self.coeffs
            .iter()
            .fold(self.constant, |acc, &(j, c)| acc + c * x[j])
    }

    fn add_scaled_to(&self, factor: f64, out: &mut DVector<f64>) {
        for &(j, c) in &self.coeffs {
            out[j] += factor * c;
        }
    }

    fn max_index(&self) -> Option<usize> {
        self.coeffs.iter().map(|&(j, _)| j).max()
    }
}

/// `Σ wₖ (aₖ·x + bₖ)² + c·x + d` with `wₖ ≥ 0`.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct QuadForm {
    pub squares: Vec<(f64, LinearForm)>,
    pub linear: LinearForm,
}

impl QuadForm {
    pub fn linear(form: LinearForm) -> Self {
        Self {
            squares: Vec::new(),
            linear: form,
        }
    }

    pub fn add_square(&mut self, weight: f64, form: LinearForm) {
        if weight != 0.0 {
            self.squares.push((weight, form));
        }
    }

    pub fn add_linear(&mut self, form: &LinearForm) {
        self.linear.coeffs.extend_from_slice(&form.coeffs);
        self.linear.constant += form.constant;
    }

    pub fn is_linear(&self) -> bool {
        self.squares.is_empty()
    }

    pub fn eval(&self, x: &DVector<f64>) -> f64 {
        self.squares
            .iter()
            .map(|(w, a)| {
                let r = a.eval(x);
                w * r * r
            })
            .sum::<f64>()
            + self.linear.eval(x)
    }

    fn gradient_into(&self, x: &DVector<f64>, out: &mut DVector<f64>) {
        for (w, a) in &self.squares {
            a.add_scaled_to(2.0 * w * a.eval(x), out);
        }
        self.linear.add_scaled_to(1.0, out);
    }

    fn gradient(&self, x: &DVector<f64>) -> DVector<f64> {
        let mut g = DVector::zeros(x.len());
        self.gradient_into(x, &mut g);
        g
    }

    fn add_hessian_to(&self, factor: f64, out: &mut DMatrix<f64>) {
        for (w, a) in &self.squares {
            let f = 2.0 * w * factor;
            for &(i, ci) in &a.coeffs {
                for &(j, cj) in &a.coeffs {
                    out[(i, j)] += f * ci * cj;
                }
            }
        }
    }

    fn max_index(&self) -> Option<usize> {
        self.squares
            .iter()
            .filter_map(|(_, a)| a.max_index())
            .chain(self.linear.max_index())
            .max()
    }
}

/// `min f(x)` subject to `eᵢ(x) = 0` and `gᵢ(x) ≤ 0`.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Qp {
    pub dim: usize,
    pub objective: QuadForm,
    pub equalities: Vec<LinearForm>,
    pub inequalities: Vec<QuadForm>,
}

impl Qp {
    pub fn new(dim: usize) -> Self {
        Self {
            dim,
            ..Self::default()
        }
    }

    pub fn add_bounds(&mut self, index: usize, lower: f64, upper: f64) {
        if lower.is_finite() {
            self.inequalities
                .push(QuadForm::linear(LinearForm::var(index, -1.0).plus_constant(lower)));
        }
        if upper.is_finite() {
            self.inequalities
                .push(QuadForm::linear(LinearForm::var(index, 1.0).plus_constant(-upper)));
        }
    }

    /// Adds `|form| ≤ bound` as two linear rows.
    pub fn add_abs_bound(&mut self, form: &LinearForm, bound: f64) {
        self.inequalities
            .push(QuadForm::linear(form.clone().plus_constant(-bound)));
        self.inequalities
            .push(QuadForm::linear(form.negated().plus_constant(-bound)));
    }

    /// Zero point with each of `vars` (in order) raised until every row where
    /// it enters linearly with a negative coefficient holds with margin 1.
    /// Intended for epigraph and slack variables, which makes the start
    /// feasible for the rows they bound.
    pub fn lifted_start(&self, vars: &[usize]) -> DVector<f64> {
        let mut x = DVector::zeros(self.dim);
        for &j in vars {
            let mut raise = 0.0f64;
            for row in &self.inequalities {
                if row.squares.iter().any(|(_, f)| f.coeffs.iter().any(|&(k, _)| k == j)) {
                    continue;
                }
                let c: f64 = row
                    .linear
                    .coeffs
                    .iter()
                    .filter(|&&(k, _)| k == j)
                    .map(|&(_, c)| c)
                    .sum();
                if c < 0.0 {
                    raise = raise.max((row.eval(&x) + 1.0) / -c);
                }
            }
            x[j] += raise;
        }
        x
    }

    fn check(&self) -> Result<(), QpError> {
        let too_big = |m: Option<usize>| m.is_some_and(|j| j >= self.dim);
        if too_big(self.objective.max_index())
            || self.equalities.iter().any(|e| too_big(e.max_index()))
            || self.inequalities.iter().any(|g| too_big(g.max_index()))
        {
            return Err(QpError::BadIndex);
        }
        let negative = |q: &QuadForm| q.squares.iter().any(|(w, _)| *w < 0.0);
        if negative(&self.objective) || self.inequalities.iter().any(negative) {
            return Err(QpError::NotConvex);
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct QpOptions {
    /// Tolerance on primal and (relative) dual residuals.
    pub tol: f64,
    /// Target on the duality gap, relative to `1 + |f|`.
    pub gap_tol: f64,
    pub max_iters: usize,
}

impl Default for QpOptions {
    fn default() -> Self {
        Self {
            tol: 1e-9,
            gap_tol: 1e-10,
            max_iters: 100,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct QpSolution {
    pub x: DVector<f64>,
    pub objective: f64,
    /// Lagrangian lower bound `f + yᵀe(x) + λᵀg(x)` on the optimum.
    pub dual_bound: f64,
    pub gap: f64,
    /// Max-norm of the stationarity, primal feasibility and complementarity
    /// residuals, each relative to its own scale.
    pub kkt_residual: f64,
    pub iterations: usize,
    pub converged: bool,
    pub eq_multipliers: DVector<f64>,
    pub ineq_multipliers: DVector<f64>,
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum QpError {
    #[error("problem is infeasible (primal residual {residual:e})")]
    Infeasible { residual: f64 },
    #[error("no convergence within {} iterations (KKT residual {:e})", .best.iterations, .best.kkt_residual)]
    MaxIterations { best: Box<QpSolution> },
    #[error("variable index out of range")]
    BadIndex,
    #[error("objective or constraint has a negative square weight")]
    NotConvex,
    #[error("KKT system is singular")]
    Singular,
}

const REGULARIZATION: f64 = 1e-11;
const MULTIPLIER_BLOWUP: f64 = 1e13;
/// Iterations at negligible complementarity without reducing
/// `res_p + res_d + μ` before giving up.
const STALL_ITERS: usize = 6;
const FLOOR_MU: f64 = 1e-10;
const MIN_LINE_STEP: f64 = 1e-4;

/// Per-iteration state derived from the current primal point.
struct Eval {
    f: f64,
    grad_f: DVector<f64>,
    g: DVector<f64>,
    jac: DMatrix<f64>,
    r_e: DVector<f64>,
}

/// Primal-dual interior-point method (Mehrotra predictor-corrector) with an
/// infeasible start. Curved rows add a residual line search. A run that ends
/// unconverged is restarted once from its best point with fresh slacks.
pub fn solve_qp(
    qp: &Qp,
    start: Option<&DVector<f64>>,
    opts: &QpOptions,
) -> Result<QpSolution, QpError> {
    qp.check()?;
    let best = match interior_point(qp, start, opts) {
        Attempt::Converged(sol) => return Ok(sol),
        Attempt::Singular => return Err(QpError::Singular),
        Attempt::Failed(first) => match interior_point(qp, Some(&first.x), opts) {
            Attempt::Converged(sol) => return Ok(sol),
            Attempt::Failed(second) if second.kkt_residual < first.kkt_residual => second,
            _ => first,
        },
    };
    let residual = qp
        .equalities
        .iter()
        .map(|e| e.eval(&best.x).abs())
        .chain(qp.inequalities.iter().map(|g| g.eval(&best.x)))
        .fold(0.0f64, f64::max);
    if residual > opts.tol.sqrt() {
        return Err(QpError::Infeasible { residual });
    }
    Err(QpError::MaxIterations {
        best: Box::new(best),
    })
}

enum Attempt {
    Converged(QpSolution),
    Failed(QpSolution),
    Singular,
}

fn interior_point(qp: &Qp, start: Option<&DVector<f64>>, opts: &QpOptions) -> Attempt {
    let n = qp.dim;
    let me = qp.equalities.len();
    let mi = qp.inequalities.len();

    let mut e_mat = DMatrix::zeros(me, n);
    for (r, form) in qp.equalities.iter().enumerate() {
        for &(j, c) in &form.coeffs {
            e_mat[(r, j)] += c;
        }
    }
    let mut hess_f = DMatrix::zeros(n, n);
    qp.objective.add_hessian_to(1.0, &mut hess_f);

    let evaluate = |x: &DVector<f64>| -> Eval {
        let mut jac = DMatrix::zeros(mi, n);
        let mut g = DVector::zeros(mi);
        for (i, row) in qp.inequalities.iter().enumerate() {
            g[i] = row.eval(x);
            let grad = row.gradient(x);
            jac.row_mut(i).copy_from(&grad.transpose());
        }
        Eval {
            f: qp.objective.eval(x),
            grad_f: qp.objective.gradient(x),
            g,
            jac,
            r_e: DVector::from_iterator(me, qp.equalities.iter().map(|e| e.eval(x))),
        }
    };

    let mut x = start.cloned().unwrap_or_else(|| DVector::zeros(n));
    let mut y = DVector::zeros(me);
    let first = evaluate(&x);
    let mut s = first.g.map(|gi| (-gi).max(1.0));
    let mut lam = DVector::from_element(mi, 1.0);

    let nonlinear = qp.inequalities.iter().any(|row| !row.is_linear());
    let mut best: Option<QpSolution> = None;
    let mut stalled = 0;
    let mut best_progress = f64::INFINITY;
    for iter in 0..=opts.max_iters {
        let ev = evaluate(&x);
        let eq_force = e_mat.transpose() * &y;
        let ineq_force = ev.jac.transpose() * &lam;
        let r_d = &ev.grad_f + &eq_force + &ineq_force;
        let r_i = &ev.g + &s;
        let comp = s.dot(&lam);
        let mu = if mi > 0 { comp / mi as f64 } else { 0.0 };

        let res_p = ev.r_e.amax().max(r_i.amax());
        let res_d = r_d.amax();
        let dual_bound = ev.f + y.dot(&ev.r_e) + lam.dot(&ev.g);
        let gap = ev.f - dual_bound;
        let comp_max = s.component_mul(&lam).amax();
        let scale_d = 1.0 + ev.grad_f.amax().max(eq_force.amax()).max(ineq_force.amax());
        let kkt = (res_p / (1.0 + x.amax()))
            .max(res_d / scale_d)
            .max(comp_max / (1.0 + ev.f.abs()));
        let converged = res_p <= opts.tol * (1.0 + x.amax())
            && res_d <= opts.tol * scale_d
            && gap.abs() <= opts.gap_tol * (1.0 + ev.f.abs());
        let sol = QpSolution {
            x: x.clone(),
            objective: ev.f,
            dual_bound,
            gap,
            kkt_residual: kkt,
            iterations: iter,
            converged,
            eq_multipliers: y.clone(),
            ineq_multipliers: lam.clone(),
        };
        if converged {
            return Attempt::Converged(sol);
        }
        let progress = res_p + res_d + mu;
        if progress < best_progress {
            best_progress = progress;
            stalled = 0;
        } else if mu <= FLOOR_MU * (1.0 + ev.f.abs()) {
            stalled += 1;
        }
        if best.as_ref().is_none_or(|b| sol.kkt_residual < b.kkt_residual) {
            best = Some(sol);
        }
        if iter == opts.max_iters || stalled >= STALL_ITERS {
            break;
        }
        if lam.amax() > MULTIPLIER_BLOWUP {
            break;
        }

        // Newton system in augmented form [K Eᵀ Jᵀ; E −δI 0; J 0 −D] with
        // K = H + Σ λᵢ∇²gᵢ and D = S/Λ + δI. It is factored through the reduced
        // matrix [K + JᵀD⁻¹J, Eᵀ; E, −δI] and refined against the augmented
        // residual, since recovering dλ through D⁻¹ alone loses accuracy.
        let mut k = hess_f.clone();
        for (i, row) in qp.inequalities.iter().enumerate() {
            if !row.is_linear() {
                row.add_hessian_to(lam[i], &mut k);
            }
        }
        let d_inv = s.zip_map(&lam, |si, li| 1.0 / (si / li + REGULARIZATION));
        let scaled_j = DMatrix::from_fn(mi, n, |i, j| ev.jac[(i, j)] * d_inv[i]);
        let dim = n + me;
        let mut reduced = DMatrix::zeros(dim, dim);
        reduced
            .view_mut((0, 0), (n, n))
            .copy_from(&(&k + ev.jac.transpose() * &scaled_j));
        reduced.view_mut((0, n), (n, me)).copy_from(&e_mat.transpose());
        reduced.view_mut((n, 0), (me, n)).copy_from(&e_mat);
        for i in 0..n {
            reduced[(i, i)] += REGULARIZATION;
            k[(i, i)] += REGULARIZATION;
        }
        for i in n..dim {
            reduced[(i, i)] -= REGULARIZATION;
        }
        let lu = reduced.lu();
        let jac_t = ev.jac.transpose();

        let solve_reduced = |r1: &DVector<f64>, r2: &DVector<f64>, r3: &DVector<f64>| {
            let mut rhs = DVector::zeros(dim);
            rhs.rows_mut(0, n)
                .copy_from(&(r1 + &jac_t * r3.component_mul(&d_inv)));
            rhs.rows_mut(n, me).copy_from(r2);
            let sol = lu.solve(&rhs)?;
            let dx = sol.rows(0, n).into_owned();
            let dy = sol.rows(n, me).into_owned();
            let dlam = (&ev.jac * &dx - r3).component_mul(&d_inv);
            Some((dx, dy, dlam))
        };

        let direction = |r_c: &DVector<f64>| -> Option<[DVector<f64>; 4]> {
            let r1 = -&r_d;
            let r2 = -&ev.r_e;
            let r3 = -&r_i + r_c.component_div(&lam);
            let (mut dx, mut dy, mut dlam) = solve_reduced(&r1, &r2, &r3)?;
            for _ in 0..2 {
                let e1 = &r1 - (&k * &dx + e_mat.transpose() * &dy + &jac_t * &dlam);
                let e2 = &r2 - (&e_mat * &dx - &dy * REGULARIZATION);
                let e3 = &r3 - (&ev.jac * &dx - dlam.component_div(&d_inv));
                let (cx, cy, cl) = solve_reduced(&e1, &e2, &e3)?;
                dx += cx;
                dy += cy;
                dlam += cl;
            }
            if dx.iter().chain(dlam.iter()).any(|v| !v.is_finite()) {
                return None;
            }
            let ds = -(r_c + s.component_mul(&dlam)).component_div(&lam);
            Some([dx, dy, dlam, ds])
        };

        let max_step = |v: &DVector<f64>, dv: &DVector<f64>, tau: f64| {
            v.iter()
                .zip(dv.iter())
                .filter(|(_, d)| **d < 0.0)
                .map(|(vi, di)| -tau * vi / di)
                .fold(1.0f64, f64::min)
        };

        let mut sigma = 0.0;
        let step = if mi == 0 {
            direction(&DVector::zeros(0))
        } else {
            let rc_aff = s.component_mul(&lam);
            let Some([_, _, dlam_a, ds_a]) = direction(&rc_aff) else {
                break;
            };
            let alpha_a = max_step(&s, &ds_a, 1.0).min(max_step(&lam, &dlam_a, 1.0));
            let mu_aff = (&s + &ds_a * alpha_a).dot(&(&lam + &dlam_a * alpha_a)) / mi as f64;
            sigma = (mu_aff / mu).clamp(0.0, 1.0).powi(3);
            let rc = rc_aff + ds_a.component_mul(&dlam_a) - DVector::from_element(mi, sigma * mu);
            direction(&rc)
        };
        let Some(mut d) = step else {
            if iter == 0 {
                return Attempt::Singular;
            }
            break;
        };

        let tau = (1.0 - mu).clamp(0.99, 0.9999);
        let boundary = |d: &[DVector<f64>; 4]| {
            if mi == 0 {
                1.0
            } else {
                max_step(&s, &d[3], tau).min(max_step(&lam, &d[2], tau))
            }
        };
        let mut alpha = boundary(&d);
        if nonlinear {
            // curved rows can turn a full step into a large primal residual:
            // backtrack on the norm of the centered KKT residual
            let merit = |a: f64, d: &[DVector<f64>; 4], target: f64| {
                let xa = &x + &d[0] * a;
                let ya = &y + &d[1] * a;
                let la = &lam + &d[2] * a;
                let sa = &s + &d[3] * a;
                let ev = evaluate(&xa);
                let r_d = &ev.grad_f + e_mat.transpose() * &ya + ev.jac.transpose() * &la;
                let r_c = sa.component_mul(&la).add_scalar(-target);
                (r_d.norm_squared()
                    + ev.r_e.norm_squared()
                    + (&ev.g + &sa).norm_squared()
                    + r_c.norm_squared())
                .sqrt()
            };
            let search = |d: &[DVector<f64>; 4], target: f64, full_only: bool| {
                let base = merit(0.0, d, target);
                let mut a = boundary(d);
                while a >= MIN_LINE_STEP {
                    if merit(a, d, target) <= (1.0 - 0.01 * a) * base {
                        return Some(a);
                    }
                    if full_only {
                        return None;
                    }
                    a *= 0.5;
                }
                None
            };
            // the corrected step is kept only if it is accepted in full;
            // otherwise backtrack along the affine, then the centered, Newton
            // direction
            if search(&d, sigma * mu, true).is_none() {
                let mut fallback = None;
                for target in [0.0, sigma.max(0.1) * mu] {
                    let rc = s.component_mul(&lam).add_scalar(-target);
                    let Some(newton) = direction(&rc) else {
                        continue;
                    };
                    if let Some(a) = search(&newton, target, false) {
                        fallback = Some((newton, a));
                        break;
                    }
                    if fallback.is_none() {
                        let a = boundary(&newton).min(MIN_LINE_STEP);
                        fallback = Some((newton, a));
                    }
                }
                if let Some((newton, a)) = fallback {
                    d = newton;
                    alpha = a;
                }
            }
        }
        let [dx, dy, dlam, ds] = d;
        x += &dx * alpha;
        y += &dy * alpha;
        lam += &dlam * alpha;
        s += &ds * alpha;
    }

    Attempt::Failed(best.expect("at least one iterate"))
}
