//! The FIE/MHE window problem in single-shooting form.
//!
//! The decision is `(χ₀, ω₀..ω_{T−1})`; states follow by forward simulation
//! and the fitting errors are `ν_τ = y_τ − h(χ_τ)`. Internally the decision is
//! scaled so that the admissible boxes become `[−1, 1]`:
//! `χ₀ = x̄ + r_x u_x`, `ω_τ = r_w u_{w,τ}`.
//!
//! Affine models give one convex QP. Nonlinear models are solved by
//! sequential convexification: the dynamics are linearized along the current
//! trajectory, the convex loss is kept exact, and the step is safeguarded by
//! an infinity-norm trust region, an Armijo line search, and an elastic
//! penalty on the linearized state and noise bounds.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::qp::{solve_qp, LinearForm, Qp, QpError, QpOptions, QpSolution, QuadForm};
use crate::cost::{eval_cost, CostSpec, StageForm, StageLoss, StateBound};
use crate::systems::SystemModel;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum WindowError {
    #[error("window needs at least one measurement")]
    NoMeasurements,
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    #[error("arrival exponent a2 = {0} is not supported by the solver (only 2)")]
    UnsupportedCost(f64),
    #[error("model `{0}` is not affine")]
    NonlinearModel(String),
    #[error("window problem is infeasible: {0}")]
    Infeasible(QpError),
    #[error(transparent)]
    Qp(QpError),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SolverOptions {
    /// Stationarity/feasibility tolerance reported as convergence for nonlinear windows.
    pub kkt_tol: f64,
    pub max_outer_iters: usize,
    /// Number of starts for nonlinear windows (the first is the warm start or the prior).
    pub restarts: usize,
    pub seed: u64,
    #[serde(skip)]
    pub qp: QpOptions,
}

impl Default for SolverOptions {
    fn default() -> Self {
        Self {
            kkt_tol: 1e-6,
            max_outer_iters: 100,
            restarts: 5,
            seed: 0,
            qp: QpOptions::default(),
        }
    }
}

/// One FIE/MHE window: measurements `y_{t−T}..y_t` and the prior for `x_{t−T}`.
#[derive(Debug, Clone)]
pub struct WindowProblem<'a> {
    pub model: &'a SystemModel,
    pub cost: &'a CostSpec,
    pub prior: DVector<f64>,
    pub measurements: &'a [DVector<f64>],
    /// Adds equalities forcing all disturbance channels to coincide.
    pub identical_disturbances: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SolveReport {
    /// `(χ₀, ω₀, …, ω_{T−1})` in physical units.
    pub decision: DVector<f64>,
    pub objective: f64,
    pub kkt_residual: f64,
    pub iterations: usize,
    pub converged: bool,
    pub restarts_used: usize,
    /// Lagrangian lower bound from the last QP solved, when it certifies the
    /// optimum (affine models).
    pub dual_bound: Option<f64>,
    pub duality_gap: Option<f64>,
    /// Largest violation of the state and noise bounds at the returned point.
    pub max_violation: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct WindowSolution {
    pub report: SolveReport,
    pub states: Vec<DVector<f64>>,
    pub omega: Vec<DVector<f64>>,
    pub nu: Vec<DVector<f64>>,
}

impl WindowSolution {
    /// The estimate of the state at the end of the window.
    pub fn last_state(&self) -> &DVector<f64> {
        self.states.last().expect("window has at least one state")
    }
}

/// Trajectory and first-order sensitivities along a scaled decision `u`.
struct Linearization {
    states: Vec<DVector<f64>>,
    nu: Vec<DVector<f64>>,
    /// `∂χ_τ/∂u`
    state_jac: Vec<DMatrix<f64>>,
    /// `∂ν_τ/∂u`
    nu_jac: Vec<DMatrix<f64>>,
}

/// Positions of the auxiliary QP variables after the decision block.
#[derive(Debug, Clone, Copy)]
struct Layout {
    e_w: Option<usize>,
    e_v: Option<usize>,
    m_w: Option<usize>,
    m_v: Option<usize>,
    zeta: Option<usize>,
    total: usize,
}

impl Layout {
    /// Auxiliary variables in dependency order: the 1-norm splits before
    /// the epigraph variables bounding their sums.
    fn auxiliary(&self) -> Vec<usize> {
        let first = [self.e_w, self.e_v, self.m_w, self.m_v, self.zeta]
            .into_iter()
            .flatten()
            .min()
            .unwrap_or(self.total);
        (first..self.total).collect()
    }
}

/// The convex QP of an affine window and how to read its solution.
#[derive(Debug, Clone)]
pub struct EpigraphQp {
    pub qp: Qp,
    /// Interior-friendly start: zero decision, auxiliaries above their rows.
    pub start: DVector<f64>,
    x_scale: f64,
    w_scale: f64,
    prior: DVector<f64>,
    n: usize,
    decision_dim: usize,
}

impl EpigraphQp {
    /// The physical decision `(χ₀, ω)` encoded in a QP point.
    pub fn decision(&self, x: &DVector<f64>) -> DVector<f64> {
        let mut z = x.rows(0, self.decision_dim).into_owned();
        for i in 0..self.decision_dim {
            z[i] = if i < self.n {
                self.prior[i] + self.x_scale * z[i]
            } else {
                self.w_scale * z[i]
            };
        }
        z
    }
}

impl<'a> WindowProblem<'a> {
    pub fn horizon(&self) -> usize {
        self.measurements.len().saturating_sub(1)
    }

    pub fn decision_dim(&self) -> usize {
        self.model.state_dim() + self.horizon() * self.model.disturbance_dim()
    }

    fn x_scale(&self) -> f64 {
        match self.cost.x_bound {
            Some(StateBound::Box(r) | StateBound::Ball(r)) => r,
            None => 1.0,
        }
    }

    fn w_scale(&self) -> f64 {
        self.cost.w_bound.unwrap_or(1.0)
    }

    fn validate(&self) -> Result<(), WindowError> {
        if self.measurements.is_empty() {
            return Err(WindowError::NoMeasurements);
        }
        let (n, p) = (self.model.state_dim(), self.model.output_dim());
        if self.prior.len() != n {
            return Err(WindowError::Dimension(format!(
                "prior has {} entries, model state has {n}",
                self.prior.len()
            )));
        }
        if let Some(y) = self.measurements.iter().find(|y| y.len() != p) {
            return Err(WindowError::Dimension(format!(
                "measurement has {} entries, model output has {p}",
                y.len()
            )));
        }
        if self.cost.arrival.a2 != 2.0 {
            return Err(WindowError::UnsupportedCost(self.cost.arrival.a2));
        }
        Ok(())
    }

    fn to_scaled(&self, decision: &DVector<f64>) -> DVector<f64> {
        let n = self.model.state_dim();
        let (rx, rw) = (self.x_scale(), self.w_scale());
        DVector::from_fn(decision.len(), |i, _| {
            if i < n {
                (decision[i] - self.prior[i]) / rx
            } else {
                decision[i] / rw
            }
        })
    }

    fn to_physical(&self, u: &DVector<f64>) -> DVector<f64> {
        let n = self.model.state_dim();
        let (rx, rw) = (self.x_scale(), self.w_scale());
        DVector::from_fn(u.len(), |i, _| {
            if i < n {
                self.prior[i] + rx * u[i]
            } else {
                rw * u[i]
            }
        })
    }

    /// States, disturbances and fitting errors generated by a physical decision.
    pub fn trajectory(
        &self,
        decision: &DVector<f64>,
    ) -> (Vec<DVector<f64>>, Vec<DVector<f64>>, Vec<DVector<f64>>) {
        let n = self.model.state_dim();
        let g = self.model.disturbance_dim();
        let x0 = decision.rows(0, n).into_owned();
        let omega: Vec<DVector<f64>> = (0..self.horizon())
            .map(|k| decision.rows(n + k * g, g).into_owned())
            .collect();
        let states = self.model.simulate(&x0, &omega);
        let nu = states
            .iter()
            .zip(self.measurements)
            .map(|(x, y)| y - self.model.h(x))
            .collect();
        (states, omega, nu)
    }

    /// Direct evaluation of the window cost at a physical decision.
    pub fn objective_at(&self, decision: &DVector<f64>) -> f64 {
        let (states, omega, nu) = self.trajectory(decision);
        let d0 = &states[0] - &self.prior;
        eval_cost(self.cost, self.horizon(), &d0, &omega, &nu)
            .map(|v| if v.is_finite() { v } else { f64::INFINITY })
            .unwrap_or(f64::INFINITY)
    }

    /// Largest excess over the state box (after the first state) and the noise box.
    pub fn violation_at(&self, decision: &DVector<f64>) -> f64 {
        let (states, _, nu) = self.trajectory(decision);
        self.violation(&states, &nu)
    }

    fn violation(&self, states: &[DVector<f64>], nu: &[DVector<f64>]) -> f64 {
        let lo = self.model.lower_bounds();
        let hi = self.model.upper_bounds();
        let mut worst = 0.0f64;
        for x in states.iter().skip(1) {
            for j in 0..x.len() {
                worst = worst.max(lo[j] - x[j]).max(x[j] - hi[j]);
            }
            if x.iter().any(|v| !v.is_finite()) {
                return f64::INFINITY;
            }
        }
        if let Some(vb) = self.cost.v_bound {
            for v in nu {
                worst = worst.max(v.amax() - vb);
            }
        }
        worst
    }

    fn linearize(&self, u: &DVector<f64>) -> Linearization {
        let n = self.model.state_dim();
        let g = self.model.disturbance_dim();
        let dim = u.len();
        let (rx, rw) = (self.x_scale(), self.w_scale());
        let decision = self.to_physical(u);
        let (states, omega, nu) = self.trajectory(&decision);
        let mut state_jac = Vec::with_capacity(states.len());
        let mut s = DMatrix::zeros(n, dim);
        for i in 0..n {
            s[(i, i)] = rx;
        }
        state_jac.push(s.clone());
        for (k, w) in omega.iter().enumerate() {
            let fx = self.model.fx(&states[k], w);
            let fw = self.model.fw(&states[k], w);
            let mut next = fx * &s;
            next.view_mut((0, n + k * g), (n, g))
                .zip_apply(&fw, |a, b| *a += rw * b);
            s = next;
            state_jac.push(s.clone());
        }
        let nu_jac = states
            .iter()
            .zip(&state_jac)
            .map(|(x, sj)| -(self.model.hx(x) * sj))
            .collect();
        Linearization {
            states,
            nu,
            state_jac,
            nu_jac,
        }
    }

    fn layout(&self, elastic: bool) -> Layout {
        let t = self.horizon();
        let (g, p) = (self.model.disturbance_dim(), self.model.output_dim());
        let stage = &self.cost.stage;
        let mut next = self.decision_dim();
        let mut take = |count: usize| {
            let start = next;
            next += count;
            start
        };
        let e_w = (t > 0 && matches!(stage.loss_w, StageLoss::OneNorm(_))).then(|| take(t * g));
        let e_v = matches!(stage.loss_v, StageLoss::OneNorm(_)).then(|| take((t + 1) * p));
        let weighted = stage.form == StageForm::Weighted;
        let m_w = (weighted && t > 0 && stage.lambda_w < 1.0).then(|| take(1));
        let m_v = (weighted && stage.lambda_v < 1.0).then(|| take(1));
        let zeta = elastic.then(|| take(1));
        Layout {
            e_w,
            e_v,
            m_w,
            m_v,
            zeta,
            total: next,
        }
    }

    /// Convex model of the window around the scaled point `u` in the step `d`.
    /// With `trust` the step is limited to `|d|_∞ ≤ trust`; with `penalty` the
    /// state and noise bounds are softened by a shared slack `ζ ≥ 0` costing
    /// `penalty·ζ`.
    fn subproblem(
        &self,
        u: &DVector<f64>,
        lin: &Linearization,
        trust: Option<f64>,
        penalty: Option<f64>,
    ) -> Qp {
        let n = self.model.state_dim();
        let (g, p) = (self.model.disturbance_dim(), self.model.output_dim());
        let t = self.horizon();
        let dim = self.decision_dim();
        let (rx, rw) = (self.x_scale(), self.w_scale());
        let layout = self.layout(penalty.is_some());
        let mut qp = Qp::new(layout.total);
        let stage = &self.cost.stage;

        // arrival: c₂ decay(T) |r_x (u_x + d_x)|²
        let arrival_w = self.cost.arrival.c2 * self.cost.arrival.decay_factor(t) * rx * rx;
        for i in 0..n {
            qp.objective
                .add_square(arrival_w, LinearForm::var(i, 1.0).plus_constant(u[i]));
        }

        let (avg_w, avg_v) = match stage.form {
            StageForm::Classic => (1.0, 1.0),
            StageForm::Weighted => (
                if t > 0 { stage.lambda_w / t as f64 } else { 0.0 },
                stage.lambda_v / (t + 1) as f64,
            ),
        };

        // disturbance terms, ω_{τ,j} = r_w (u + d)
        for k in 0..t {
            let comps: Vec<LinearForm> = (0..g)
                .map(|j| {
                    let idx = n + k * g + j;
                    LinearForm::var(idx, rw).plus_constant(rw * u[idx])
                })
                .collect();
            let base = layout.e_w.map(|s| s + k * g);
            self.add_stage(&mut qp, &comps, stage.loss_w, avg_w, base, layout.m_w);
        }
        if let Some(m) = layout.m_w {
            qp.objective.linear.coeffs.push((m, 1.0 - stage.lambda_w));
        }

        // fitting errors, ν_τ ≈ ν̄_τ + (∂ν_τ/∂u) d
        let mut nu_forms = Vec::with_capacity(t + 1);
        for tau in 0..=t {
            let jac = &lin.nu_jac[tau];
            let comps: Vec<LinearForm> = (0..p)
                .map(|j| {
                    let row: Vec<f64> = jac.row(j).iter().cloned().collect();
                    LinearForm::from_dense(&row, 0, lin.nu[tau][j])
                })
                .collect();
            let base = layout.e_v.map(|s| s + tau * p);
            self.add_stage(&mut qp, &comps, stage.loss_v, avg_v, base, layout.m_v);
            nu_forms.push(comps);
        }
        if let Some(m) = layout.m_v {
            qp.objective.linear.coeffs.push((m, 1.0 - stage.lambda_v));
        }

        let soften = |form: LinearForm| match layout.zeta {
            Some(z) => form.with_term(z, -1.0),
            None => form,
        };
        if let (Some(z), Some(rho)) = (layout.zeta, penalty) {
            qp.objective.linear.coeffs.push((z, rho));
            qp.add_bounds(z, 0.0, f64::INFINITY);
        }

        if let Some(vb) = self.cost.v_bound {
            for comps in &nu_forms {
                for form in comps {
                    qp.inequalities
                        .push(QuadForm::linear(soften(form.clone().plus_constant(-vb))));
                    qp.inequalities
                        .push(QuadForm::linear(soften(form.negated().plus_constant(-vb))));
                }
            }
        }

        // first state: scaled bound and model box, both exact
        let lo = self.model.lower_bounds();
        let hi = self.model.upper_bounds();
        for i in 0..n {
            let mut l = (lo[i] - self.prior[i]) / rx - u[i];
            let mut h = (hi[i] - self.prior[i]) / rx - u[i];
            if let Some(StateBound::Box(_)) = self.cost.x_bound {
                l = l.max(-1.0 - u[i]);
                h = h.min(1.0 - u[i]);
            }
            if let Some(tr) = trust {
                l = l.max(-tr);
                h = h.min(tr);
            }
            qp.add_bounds(i, l, h);
        }
        if let Some(StateBound::Ball(_)) = self.cost.x_bound {
            let mut ball = QuadForm::linear(LinearForm::constant(-1.0));
            for i in 0..n {
                ball.add_square(1.0, LinearForm::var(i, 1.0).plus_constant(u[i]));
            }
            qp.inequalities.push(ball);
        }
        // later states: linearized model box
        for tau in 1..=t {
            for j in 0..n {
                if !(lo[j].is_finite() || hi[j].is_finite()) {
                    continue;
                }
                let row: Vec<f64> = lin.state_jac[tau].row(j).iter().cloned().collect();
                let x = LinearForm::from_dense(&row, 0, lin.states[tau][j]);
                if lo[j].is_finite() {
                    qp.inequalities
                        .push(QuadForm::linear(soften(x.negated().plus_constant(lo[j]))));
                }
                if hi[j].is_finite() {
                    qp.inequalities
                        .push(QuadForm::linear(soften(x.plus_constant(-hi[j]))));
                }
            }
        }
        for i in n..dim {
            let (mut l, mut h) = match self.cost.w_bound {
                Some(_) => (-1.0 - u[i], 1.0 - u[i]),
                None => (f64::NEG_INFINITY, f64::INFINITY),
            };
            if let Some(tr) = trust {
                l = l.max(-tr);
                h = h.min(tr);
            }
            qp.add_bounds(i, l, h);
        }
        if self.identical_disturbances {
            for k in 0..t {
                let first = n + k * g;
                for j in 1..g {
                    qp.equalities.push(
                        LinearForm::var(first + j, 1.0)
                            .with_term(first, -1.0)
                            .plus_constant(u[first + j] - u[first]),
                    );
                }
            }
        }
        qp
    }

    /// Adds one stage loss `l(c)` for the component forms `c`: `avg·l` to the
    /// objective and `l ≤ m` when a max variable is present.
    fn add_stage(
        &self,
        qp: &mut Qp,
        comps: &[LinearForm],
        loss: StageLoss,
        avg: f64,
        abs_base: Option<usize>,
        max_var: Option<usize>,
    ) {
        match loss {
            StageLoss::Quadratic(q) => {
                for c in comps {
                    qp.objective.add_square(avg * q, c.clone());
                }
                if let Some(m) = max_var {
                    let mut row = QuadForm::linear(LinearForm::var(m, -1.0));
                    for c in comps {
                        row.add_square(q, c.clone());
                    }
                    qp.inequalities.push(row);
                }
            }
            StageLoss::OneNorm(q) => {
                let base = abs_base.expect("layout reserves 1-norm splits");
                let mut total = LinearForm::default();
                for (j, c) in comps.iter().enumerate() {
                    let e = base + j;
                    qp.inequalities
                        .push(QuadForm::linear(c.clone().with_term(e, -1.0)));
                    qp.inequalities
                        .push(QuadForm::linear(c.negated().with_term(e, -1.0)));
                    total.coeffs.push((e, q));
                }
                qp.objective.add_linear(&total.scaled(avg));
                if let Some(m) = max_var {
                    qp.inequalities
                        .push(QuadForm::linear(total.with_term(m, -1.0)));
                }
            }
        }
    }
}

/// The exact epigraph QP of an affine window; its optimum equals the window optimum.
pub fn build_epigraph_qp(p: &WindowProblem) -> Result<EpigraphQp, WindowError> {
    p.validate()?;
    if !p.model.is_affine() {
        return Err(WindowError::NonlinearModel(p.model.name().to_string()));
    }
    let u = DVector::zeros(p.decision_dim());
    let lin = p.linearize(&u);
    let qp = p.subproblem(&u, &lin, None, None);
    let start = qp.lifted_start(&p.layout(false).auxiliary());
    Ok(EpigraphQp {
        qp,
        start,
        x_scale: p.x_scale(),
        w_scale: p.w_scale(),
        prior: p.prior.clone(),
        n: p.model.state_dim(),
        decision_dim: p.decision_dim(),
    })
}

pub fn solve_window(
    p: &WindowProblem,
    warm_start: Option<&DVector<f64>>,
    opts: &SolverOptions,
) -> Result<WindowSolution, WindowError> {
    p.validate()?;
    if let Some(ws) = warm_start {
        if ws.len() != p.decision_dim() {
            return Err(WindowError::Dimension(format!(
                "warm start has {} entries, window decision has {}",
                ws.len(),
                p.decision_dim()
            )));
        }
    }
    let report = if p.model.is_affine() {
        solve_affine(p, opts)?
    } else {
        solve_nonlinear(p, warm_start, opts)?
    };
    let (states, omega, nu) = p.trajectory(&report.decision);
    Ok(WindowSolution {
        report,
        states,
        omega,
        nu,
    })
}

fn solve_affine(p: &WindowProblem, opts: &SolverOptions) -> Result<SolveReport, WindowError> {
    let epi = build_epigraph_qp(p)?;
    let (sol, converged) = match solve_qp(&epi.qp, Some(&epi.start), &opts.qp) {
        Ok(sol) => (sol, true),
        Err(QpError::MaxIterations { best }) => {
            let ok = best.kkt_residual <= opts.kkt_tol;
            (*best, ok)
        }
        Err(e @ QpError::Infeasible { .. }) => return Err(WindowError::Infeasible(e)),
        Err(e) => return Err(WindowError::Qp(e)),
    };
    let decision = epi.decision(&sol.x);
    Ok(SolveReport {
        objective: p.objective_at(&decision),
        max_violation: p.violation_at(&decision),
        decision,
        kkt_residual: sol.kkt_residual,
        iterations: sol.iterations,
        converged,
        restarts_used: 1,
        dual_bound: Some(sol.dual_bound),
        duality_gap: Some(sol.gap),
    })
}

const ARMIJO: f64 = 1e-4;
const MIN_STEP_FRACTION: f64 = 1.0 / 1024.0;
const MAX_RESTORATIONS: usize = 3;
const FEASIBILITY_TOL: f64 = 1e-8;

fn solve_nonlinear(
    p: &WindowProblem,
    warm_start: Option<&DVector<f64>>,
    opts: &SolverOptions,
) -> Result<SolveReport, WindowError> {
    let dim = p.decision_dim();
    let n = p.model.state_dim();
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let mut starts = Vec::with_capacity(opts.restarts.max(1));
    starts.push(match warm_start {
        Some(ws) => project_start(p, &p.to_scaled(ws)),
        None => DVector::zeros(dim),
    });
    for _ in 1..opts.restarts.max(1) {
        let mut u = DVector::zeros(dim);
        for i in 0..n {
            u[i] = rng.random_range(-1.0..=1.0);
        }
        starts.push(project_start(p, &u));
    }

    let mut best: Option<SolveReport> = None;
    let mut last_err = None;
    for start in &starts {
        match scp(p, start, opts) {
            Ok(rep) => {
                let key = |r: &SolveReport| (r.max_violation > 1e-6, r.objective);
                let better = best.as_ref().is_none_or(|b| {
                    let (kb, kr) = (key(b), key(&rep));
                    kr.0 < kb.0 || (kr.0 == kb.0 && kr.1 < kb.1)
                });
                if better {
                    best = Some(rep);
                }
            }
            Err(e) => last_err = Some(e),
        }
    }
    match best {
        Some(mut rep) => {
            rep.restarts_used = starts.len();
            Ok(rep)
        }
        None => Err(last_err.expect("at least one start")),
    }
}

/// Clips a scaled start into the hard bounds on the first state and disturbances.
fn project_start(p: &WindowProblem, u: &DVector<f64>) -> DVector<f64> {
    let n = p.model.state_dim();
    let rx = p.x_scale();
    let lo = p.model.lower_bounds();
    let hi = p.model.upper_bounds();
    let mut out = u.clone();
    match p.cost.x_bound {
        Some(StateBound::Box(_)) => {
            for i in 0..n {
                out[i] = out[i].clamp(-1.0, 1.0);
            }
        }
        Some(StateBound::Ball(_)) => {
            let norm = out.rows(0, n).norm();
            if norm > 1.0 {
                for i in 0..n {
                    out[i] /= norm;
                }
            }
        }
        None => {}
    }
    for i in 0..n {
        let l = (lo[i] - p.prior[i]) / rx;
        let h = (hi[i] - p.prior[i]) / rx;
        out[i] = out[i].clamp(l.min(h), h.max(l));
    }
    if p.cost.w_bound.is_some() {
        for i in n..out.len() {
            out[i] = out[i].clamp(-1.0, 1.0);
        }
    }
    if p.identical_disturbances {
        let g = p.model.disturbance_dim();
        for k in 0..p.horizon() {
            let first = n + k * g;
            for j in 1..g {
                out[first + j] = out[first];
            }
        }
    }
    out
}

fn solve_sub(qp: &Qp, start: &DVector<f64>, opts: &QpOptions) -> Result<QpSolution, WindowError> {
    match solve_qp(qp, Some(start), opts) {
        Ok(sol) => Ok(sol),
        Err(QpError::MaxIterations { best }) => Ok(*best),
        Err(e @ QpError::Infeasible { .. }) => Err(WindowError::Infeasible(e)),
        Err(e) => Err(WindowError::Qp(e)),
    }
}

/// One sequential-convexification run from a scaled start.
fn scp(p: &WindowProblem, start: &DVector<f64>, opts: &SolverOptions) -> Result<SolveReport, WindowError> {
    let dim = p.decision_dim();
    let mut u = start.clone();
    let objective = |u: &DVector<f64>| p.objective_at(&p.to_physical(u));
    let violation = |u: &DVector<f64>| p.violation_at(&p.to_physical(u)).max(0.0);
    let mut rho = 10.0 * objective(&u).max(1.0);
    if !rho.is_finite() {
        rho = 1e6;
    }
    let mut iterations = 0;
    let mut kkt = f64::INFINITY;
    let mut converged = false;

    for restoration in 0..=MAX_RESTORATIONS {
        let merit = |u: &DVector<f64>| objective(u) + rho * violation(u);
        let mut trust = 1.0f64;
        let mut phi = merit(&u);
        converged = false;
        while iterations < opts.max_outer_iters {
            iterations += 1;
            let lin = p.linearize(&u);
            let qp = p.subproblem(&u, &lin, Some(trust), Some(rho));
            let qp_start = qp.lifted_start(&p.layout(true).auxiliary());
            let sol = solve_sub(&qp, &qp_start, &opts.qp)?;
            let d = sol.x.rows(0, dim).into_owned();
            let pred = phi - sol.objective;
            let step = d.amax();
            kkt = sol.kkt_residual.max(pred.max(0.0) / (1.0 + phi.abs()));
            if pred <= 1e-12 * (1.0 + phi.abs()) || step <= 1e-12 {
                converged = true;
                break;
            }
            let mut alpha = 1.0;
            let mut accepted = None;
            while alpha >= MIN_STEP_FRACTION {
                let trial = &u + &d * alpha;
                let val = merit(&trial);
                if val.is_finite() && val <= phi - ARMIJO * alpha * pred {
                    accepted = Some((trial, val));
                    break;
                }
                alpha *= 0.5;
            }
            let Some((trial, val)) = accepted else {
                trust *= 0.5;
                if trust < 1e-12 {
                    break;
                }
                continue;
            };
            let decrease = phi - val;
            let moved = alpha * step;
            u = trial;
            phi = val;
            if alpha == 1.0 && step >= 0.99 * trust {
                trust *= 1.5;
            } else if alpha < 1.0 {
                trust = (trust * 0.5).max(moved);
            }
            if moved <= 1e-9 * (1.0 + u.amax()) && decrease <= 1e-10 * (1.0 + phi.abs()) {
                converged = true;
                break;
            }
        }
        if violation(&u) <= FEASIBILITY_TOL || restoration == MAX_RESTORATIONS {
            break;
        }
        rho *= 10.0;
    }
    let decision = p.to_physical(&u);
    let max_violation = violation(&u);
    Ok(SolveReport {
        objective: objective(&u),
        decision,
        kkt_residual: kkt,
        iterations,
        converged: converged && max_violation <= FEASIBILITY_TOL && kkt <= opts.kkt_tol,
        restarts_used: 1,
        dual_bound: None,
        duality_gap: None,
        max_violation,
    })
}
