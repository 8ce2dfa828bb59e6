//! Inner convex solver shared by the precoder and phase-shift subproblems.
//!
//! Both subproblems have the same shape after the quadratic-transform
//! relaxation: maximize `sum_j log2(1 + s_j)` (plus an optional proximal term
//! `-lambda ||v - t||^2`) over a complex vector `v` and nonnegative slacks
//! `s`, subject to concave-quadratic constraints
//!
//! ```text
//! g(v, s) = c + 2 Re(a^H v) - v^H Q v + r^T s >= 0
//! ```
//!
//! with `Q` positive semidefinite, and optionally a power ball `||v|| <= R`.
//! The solver runs an augmented Lagrangian over the inequality constraints
//! with projected gradient ascent and Armijo backtracking inside. Slack-cap
//! constraints (`r = -1` on one slack) are repaired after the solve: slacks
//! are set to the exact surrogate values at the returned `v`, clamped at
//! zero, which keeps every accepted step honest about its objective.

use ndarray::{Array1, Array2};
use num_complex::Complex64;

/// What a constraint means to the post-solve repair step.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) enum ConstraintKind {
    /// Caps slack `idx`: the constraint carries coefficient -1 on it and the
    /// slack is repaired to the minimum surrogate value across its cappers.
    SlackCap(usize),
    /// Anything else (QoS rows); evaluated after repair for feasibility.
    Qos,
}

/// Concave quadratic `g(v, s) = offset + 2 Re(lin^H v) - v^H Q v + sum r_i s_i`
/// with `Q` stored structurally as rank-one blocks, a diagonal, and dense
/// blocks.
#[derive(Debug, Clone)]
pub(crate) struct ConcaveQuadratic {
    pub offset: f64,
    pub lin: Array1<Complex64>,
    /// `(block offset, u, coef)`: contributes `-coef |u^H v_block|^2`.
    pub rank_one: Vec<(usize, Array1<Complex64>, f64)>,
    /// Full-length diagonal: contributes `-sum_m d_m |v_m|^2`.
    pub diag: Option<Array1<f64>>,
    /// `(block offset, M)`: contributes `-v_block^H M v_block`, M Hermitian PSD.
    pub dense: Vec<(usize, Array2<Complex64>)>,
    /// Sparse linear slack terms `(slack index, coefficient)`.
    pub slack: Vec<(usize, f64)>,
    pub kind: ConstraintKind,
}

impl ConcaveQuadratic {
    pub fn value(&self, v: &[Complex64], s: &[f64]) -> f64 {
        let mut g = self.offset;
        for (a, x) in self.lin.iter().zip(v) {
            g += 2.0 * (a.conj() * x).re;
        }
        for (off, u, coef) in &self.rank_one {
            let mut dot = Complex64::new(0.0, 0.0);
            for (a, x) in u.iter().zip(&v[*off..*off + u.len()]) {
                dot += a.conj() * x;
            }
            g -= coef * dot.norm_sqr();
        }
        if let Some(d) = &self.diag {
            for (dm, x) in d.iter().zip(v) {
                g -= dm * x.norm_sqr();
            }
        }
        for (off, m) in &self.dense {
            let n = m.nrows();
            let block = &v[*off..*off + n];
            let mut quad = 0.0;
            for i in 0..n {
                // Diagonal term plus twice the real part of the upper triangle.
                quad += m[(i, i)].re * block[i].norm_sqr();
                for j in i + 1..n {
                    quad += 2.0 * (block[i].conj() * m[(i, j)] * block[j]).re;
                }
            }
            g -= quad;
        }
        for (idx, coef) in &self.slack {
            g += coef * s[*idx];
        }
        g
    }

    /// Accumulate `weight * grad g` into the packed complex gradient `gv` and
    /// the slack gradient `gs`.
    pub fn add_grad(&self, v: &[Complex64], weight: f64, gv: &mut [Complex64], gs: &mut [f64]) {
        for ((g, a), _) in gv.iter_mut().zip(self.lin.iter()).zip(v) {
            *g += 2.0 * weight * a;
        }
        for (off, u, coef) in &self.rank_one {
            let mut dot = Complex64::new(0.0, 0.0);
            for (a, x) in u.iter().zip(&v[*off..*off + u.len()]) {
                dot += a.conj() * x;
            }
            let scale = 2.0 * weight * coef;
            for (g, a) in gv[*off..*off + u.len()].iter_mut().zip(u.iter()) {
                *g -= scale * a * dot;
            }
        }
        if let Some(d) = &self.diag {
            for ((g, dm), x) in gv.iter_mut().zip(d.iter()).zip(v) {
                *g -= 2.0 * weight * dm * x;
            }
        }
        for (off, m) in &self.dense {
            let n = m.nrows();
            let block = &v[*off..*off + n];
            for i in 0..n {
                let mut mv = Complex64::new(0.0, 0.0);
                for j in 0..n {
                    mv += m[(i, j)] * block[j];
                }
                gv[*off + i] -= 2.0 * weight * mv;
            }
        }
        for (idx, coef) in &self.slack {
            gs[*idx] += weight * coef;
        }
    }
}

/// Smooth part of the objective: `sum_j w_j log2(1 + s_j) - lambda ||v - t||^2`.
#[derive(Debug, Clone)]
pub(crate) struct SolverObjective {
    pub slack_weight: Vec<f64>,
    pub prox_lambda: f64,
    pub prox_target: Option<Array1<Complex64>>,
}

impl SolverObjective {
    pub fn slack_only(n_slacks: usize) -> Self {
        Self {
            slack_weight: vec![1.0; n_slacks],
            prox_lambda: 0.0,
            prox_target: None,
        }
    }

    pub fn value(&self, v: &[Complex64], s: &[f64]) -> f64 {
        let mut f = 0.0;
        for (w, x) in self.slack_weight.iter().zip(s) {
            f += w * (1.0 + x).log2();
        }
        if let Some(t) = &self.prox_target {
            let mut d = 0.0;
            for (x, ti) in v.iter().zip(t.iter()) {
                d += (x - ti).norm_sqr();
            }
            f -= self.prox_lambda * d;
        }
        f
    }

    pub fn add_grad(&self, v: &[Complex64], s: &[f64], gv: &mut [Complex64], gs: &mut [f64]) {
        let ln2 = std::f64::consts::LN_2;
        for ((g, w), x) in gs.iter_mut().zip(&self.slack_weight).zip(s) {
            *g += w / ((1.0 + x) * ln2);
        }
        if let Some(t) = &self.prox_target {
            for ((g, x), ti) in gv.iter_mut().zip(v).zip(t.iter()) {
                *g -= 2.0 * self.prox_lambda * (x - ti);
            }
        }
    }
}

/// One maximization instance.
#[derive(Debug, Clone)]
pub(crate) struct ConvexSubproblem {
    pub objective: SolverObjective,
    pub constraints: Vec<ConcaveQuadratic>,
    /// `||v|| <= radius` enforced by projection when present.
    pub ball_radius: Option<f64>,
    pub dim: usize,
    pub n_slacks: usize,
}

/// Tunables of the inner solver. The augmented-Lagrangian fields extend the
/// basic projected-gradient controls.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct ConvexSolveConfig {
    /// Projected-gradient steps per augmented-Lagrangian round.
    pub max_inner_iters: usize,
    /// Stop when the scaled projected step falls below this.
    pub gradient_tolerance: f64,
    /// Acceptable constraint violation at the returned point.
    pub constraint_tolerance: f64,
    /// Armijo sufficient-ascent factor.
    pub armijo_c: f64,
    /// Step halving factor of the backtracking line search.
    pub backtrack: f64,
    /// Growth applied to the accepted step between iterations.
    pub step_growth: f64,
    pub max_al_rounds: usize,
    pub penalty_init: f64,
    pub penalty_growth: f64,
    pub penalty_max: f64,
}

impl Default for ConvexSolveConfig {
    fn default() -> Self {
        Self {
            max_inner_iters: 200,
            gradient_tolerance: 1e-7,
            constraint_tolerance: 1e-6,
            armijo_c: 1e-4,
            backtrack: 0.5,
            step_growth: 2.0,
            max_al_rounds: 14,
            penalty_init: 10.0,
            penalty_growth: 4.0,
            penalty_max: 1e8,
        }
    }
}

/// Multipliers, penalty weight, and step size carried between warm-started
/// solves of the same subproblem family.
#[derive(Debug, Clone)]
pub(crate) struct SolverWarmState {
    pub multipliers: Vec<f64>,
    pub penalty: f64,
    pub step: f64,
}

impl SolverWarmState {
    pub fn new() -> Self {
        Self {
            multipliers: Vec::new(),
            penalty: 0.0,
            step: 0.0,
        }
    }

    fn prepare(&mut self, n_constraints: usize, cfg: &ConvexSolveConfig) {
        if self.multipliers.len() != n_constraints {
            self.multipliers = vec![0.0; n_constraints];
            self.penalty = cfg.penalty_init;
            self.step = 1.0;
        }
        if !(self.penalty > 0.0) {
            self.penalty = cfg.penalty_init;
        }
        if !(self.step > 0.0) {
            self.step = 1.0;
        }
    }
}

/// Result of [`solve_and_repair`]: the primal point with exact repaired
/// slacks, the repaired objective, and feasibility diagnostics.
#[derive(Debug, Clone)]
pub(crate) struct StepResult {
    pub v: Array1<Complex64>,
    pub slacks: Vec<f64>,
    /// Smooth objective at the repaired point (log terms plus prox).
    pub objective: f64,
    /// Worst violation over QoS rows at the repaired point.
    pub qos_residual: f64,
    pub feasible: bool,
    pub al_rounds: usize,
    pub pga_steps: usize,
}

fn project(
    v: &mut [Complex64],
    s: &mut [f64],
    ball_radius: Option<f64>,
) {
    if let Some(r) = ball_radius {
        let norm_sq: f64 = v.iter().map(|x| x.norm_sqr()).sum();
        if norm_sq > r * r {
            let scale = r / norm_sq.sqrt();
            for x in v.iter_mut() {
                *x *= scale;
            }
        }
    }
    for x in s.iter_mut() {
        if *x < 0.0 {
            *x = 0.0;
        }
    }
}

/// Augmented objective `M = F - sum_j psi(g_j; y_j, sigma)` with the
/// Rockafellar inequality term `psi(g) = (max(0, y - sigma g)^2 - y^2) / (2 sigma)`.
fn augmented_value(
    problem: &ConvexSubproblem,
    v: &[Complex64],
    s: &[f64],
    y: &[f64],
    sigma: f64,
) -> f64 {
    let mut m = problem.objective.value(v, s);
    for (con, yj) in problem.constraints.iter().zip(y) {
        let g = con.value(v, s);
        let active = (yj - sigma * g).max(0.0);
        m -= (active * active - yj * yj) / (2.0 * sigma);
    }
    m
}

fn augmented_grad(
    problem: &ConvexSubproblem,
    v: &[Complex64],
    s: &[f64],
    y: &[f64],
    sigma: f64,
    gv: &mut [Complex64],
    gs: &mut [f64],
) {
    gv.iter_mut().for_each(|x| *x = Complex64::new(0.0, 0.0));
    gs.iter_mut().for_each(|x| *x = 0.0);
    problem.objective.add_grad(v, s, gv, gs);
    for (con, yj) in problem.constraints.iter().zip(y) {
        let g = con.value(v, s);
        let active = (yj - sigma * g).max(0.0);
        if active > 0.0 {
            con.add_grad(v, active, gv, gs);
        }
    }
}

/// Maximize the subproblem from `(v0, s0)` and repair the slacks.
pub(crate) fn solve_and_repair(
    problem: &ConvexSubproblem,
    v0: &Array1<Complex64>,
    s0: &[f64],
    cfg: &ConvexSolveConfig,
    warm: &mut SolverWarmState,
) -> StepResult {
    debug_assert_eq!(v0.len(), problem.dim);
    debug_assert_eq!(s0.len(), problem.n_slacks);
    warm.prepare(problem.constraints.len(), cfg);

    let mut v: Vec<Complex64> = v0.to_vec();
    let mut s: Vec<f64> = s0.to_vec();
    project(&mut v, &mut s, problem.ball_radius);

    let mut gv = vec![Complex64::new(0.0, 0.0); problem.dim];
    let mut gs = vec![0.0; problem.n_slacks];
    let mut total_steps = 0usize;
    let mut rounds = 0usize;
    let mut prev_viol = f64::INFINITY;

    for round in 0..cfg.max_al_rounds {
        rounds = round + 1;
        let sigma = warm.penalty;
        let y = warm.multipliers.clone();
        let mut m_cur = augmented_value(problem, &v, &s, &y, sigma);

        let mut alpha = warm.step;
        for _ in 0..cfg.max_inner_iters {
            total_steps += 1;
            augmented_grad(problem, &v, &s, &y, sigma, &mut gv, &mut gs);
            // Backtracking projected ascent step.
            let mut accepted = false;
            let mut step_norm = 0.0;
            while alpha > 1e-18 {
                let mut v_new: Vec<Complex64> =
                    v.iter().zip(&gv).map(|(x, g)| x + alpha * g).collect();
                let mut s_new: Vec<f64> = s.iter().zip(&gs).map(|(x, g)| x + alpha * g).collect();
                project(&mut v_new, &mut s_new, problem.ball_radius);
                let mut inner = 0.0;
                for ((x_new, x), g) in v_new.iter().zip(&v).zip(&gv) {
                    inner += (g.conj() * (x_new - x)).re;
                }
                for ((x_new, x), g) in s_new.iter().zip(&s).zip(&gs) {
                    inner += g * (x_new - x);
                }
                if inner <= 0.0 {
                    // Stationary against the feasible set.
                    break;
                }
                let m_new = augmented_value(problem, &v_new, &s_new, &y, sigma);
                if m_new >= m_cur + cfg.armijo_c * inner {
                    step_norm = v_new
                        .iter()
                        .zip(&v)
                        .map(|(a, b)| (a - b).norm_sqr())
                        .sum::<f64>()
                        + s_new
                            .iter()
                            .zip(&s)
                            .map(|(a, b)| (a - b) * (a - b))
                            .sum::<f64>();
                    v = v_new;
                    s = s_new;
                    let improved = m_new - m_cur;
                    m_cur = m_new;
                    accepted = true;
                    if improved < 1e-12 * (1.0 + m_cur.abs()) {
                        alpha = 0.0; // objective stalled
                    }
                    break;
                }
                alpha *= cfg.backtrack;
            }
            if !accepted || alpha == 0.0 {
                break;
            }
            if step_norm.sqrt() < cfg.gradient_tolerance * alpha.max(1e-12) {
                break;
            }
            alpha *= cfg.step_growth;
            warm.step = alpha;
        }

        // Multiplier update and penalty schedule.
        let mut maxviol = 0.0f64;
        for (j, con) in problem.constraints.iter().enumerate() {
            let g = con.value(&v, &s);
            warm.multipliers[j] = (warm.multipliers[j] - sigma * g).max(0.0);
            maxviol = maxviol.max(-g);
        }
        if maxviol <= cfg.constraint_tolerance {
            break;
        }
        if maxviol > 0.25 * prev_viol {
            warm.penalty = (warm.penalty * cfg.penalty_growth).min(cfg.penalty_max);
        }
        prev_viol = maxviol;
    }

    // Slack repair: set every capped slack to its exact surrogate minimum.
    let mut repaired = vec![f64::INFINITY; problem.n_slacks];
    let zero_s = vec![0.0; problem.n_slacks];
    for con in &problem.constraints {
        if let ConstraintKind::SlackCap(idx) = con.kind {
            let surrogate = con.value(&v, &zero_s);
            repaired[idx] = repaired[idx].min(surrogate);
        }
    }
    for (r, old) in repaired.iter_mut().zip(&s) {
        if !r.is_finite() {
            *r = *old; // slack without a capping row keeps its solver value
        }
        if *r < 0.0 {
            *r = 0.0;
        }
    }
    let mut qos_residual = 0.0f64;
    for con in &problem.constraints {
        if con.kind == ConstraintKind::Qos {
            qos_residual = qos_residual.max(-con.value(&v, &repaired));
        }
    }
    let v = Array1::from_vec(v);
    let objective = problem.objective.value(v.as_slice().unwrap(), &repaired);
    StepResult {
        feasible: qos_residual <= cfg.constraint_tolerance,
        v,
        slacks: repaired,
        objective,
        qos_residual,
        al_rounds: rounds,
        pga_steps: total_steps,
    }
}
