//! Phase-shift subproblem for fixed precoders: ADMM splitting between a
//! convexified free-modulus reflection variable and the coupled
//! amplitude-phase manifold.
//!
//! With `Lambda_k = G^H diag(f_k)` the effective channel is `h_k = Lambda_k phi`,
//! so every SINR becomes a ratio of quadratics in `phi` with PSD denominators
//! `P = Lambda^H B Lambda`. The ADMM iteration alternates
//!
//! 1. a convex maximization of the relaxed objective minus the penalty
//!    `lambda ||phi_tilde - phi + nu||^2` over the free variable `phi`,
//! 2. an element-wise projection of `phi - nu` onto the manifold
//!    `{beta(theta) e^{j theta}}` by dense line search with golden-section
//!    refinement,
//! 3. the scaled dual update `nu <- nu + phi_tilde - phi`.
//!
//! The loop keeps the best manifold-feasible point it has seen (including its
//! starting point), so callers never lose objective by running it.

use ndarray::{Array1, Array2};
use num_complex::Complex64;
use std::f64::consts::PI;

use crate::channel::ChannelRealization;
use crate::error::{Result, RismaError};
use crate::precoder::Precoders;
use crate::rate::{cascade_matrix, ImpairmentProfile, Scheme};
use crate::ris::{wrap_angle, PhaseVector, RisHardwareProfile};
use crate::solver::{
    solve_and_repair, ConcaveQuadratic, ConstraintKind, ConvexSolveConfig, ConvexSubproblem,
    SolverObjective, SolverWarmState,
};

/// Precomputed line-search table for one hardware profile.
///
/// The projection objective at a grid angle `t` against a target `v` is
/// `beta(t)^2 - 2 (Re(v) beta cos t + Im(v) beta sin t) + |v|^2`; everything
/// except the target is fixed per profile, so the grid is built once and
/// scanned per element.
#[derive(Debug, Clone)]
pub struct ProjectionGrid {
    profile: RisHardwareProfile,
    theta: Vec<f64>,
    beta_sq: Vec<f64>,
    beta_cos: Vec<f64>,
    beta_sin: Vec<f64>,
    /// Coupling absent: the manifold is the unit circle and the projection
    /// has the closed form `theta = arg(target)`.
    unit_modulus: bool,
}

impl ProjectionGrid {
    pub fn new(profile: &RisHardwareProfile, points: usize) -> Self {
        assert!(points >= 8, "projection grid needs at least 8 points");
        let unit_modulus = profile.rho() == 0.0 || profile.alpha() == 0.0;
        let mut theta = Vec::with_capacity(points);
        let mut beta_sq = Vec::with_capacity(points);
        let mut beta_cos = Vec::with_capacity(points);
        let mut beta_sin = Vec::with_capacity(points);
        for i in 0..points {
            let t = -PI + 2.0 * PI * i as f64 / points as f64;
            let b = profile.amplitude(t);
            theta.push(t);
            beta_sq.push(b * b);
            beta_cos.push(b * t.cos());
            beta_sin.push(b * t.sin());
        }
        Self {
            profile: *profile,
            theta,
            beta_sq,
            beta_cos,
            beta_sin,
            unit_modulus,
        }
    }

    /// Squared distance `|beta(t) e^{jt} - target|^2`.
    fn objective(&self, t: f64, target: Complex64) -> f64 {
        let b = self.profile.amplitude(t);
        b * b - 2.0 * b * (target.re * t.cos() + target.im * t.sin()) + target.norm_sqr()
    }

    /// Angle minimizing the distance from `target` to the manifold.
    pub fn project_scalar(&self, target: Complex64) -> f64 {
        if self.unit_modulus {
            // arg(0) = 0 keeps the degenerate target deterministic.
            return target.arg();
        }
        let n = self.theta.len();
        let mut best = 0usize;
        let mut best_val = f64::INFINITY;
        for i in 0..n {
            // |v|^2 is constant across the scan; skip it.
            let val = self.beta_sq[i]
                - 2.0 * (target.re * self.beta_cos[i] + target.im * self.beta_sin[i]);
            if val < best_val {
                best_val = val;
                best = i;
            }
        }
        // Golden-section refinement on the bracketing interval.
        let golden = 0.5 * (3.0 - 5f64.sqrt());
        let step = 2.0 * PI / n as f64;
        let mut lo = self.theta[best] - step;
        let mut hi = self.theta[best] + step;
        let mut x1 = lo + golden * (hi - lo);
        let mut x2 = hi - golden * (hi - lo);
        let mut f1 = self.objective(x1, target);
        let mut f2 = self.objective(x2, target);
        for _ in 0..48 {
            if f1 <= f2 {
                hi = x2;
                x2 = x1;
                f2 = f1;
                x1 = lo + golden * (hi - lo);
                f1 = self.objective(x1, target);
            } else {
                lo = x1;
                x1 = x2;
                f1 = f2;
                x2 = hi - golden * (hi - lo);
                f2 = self.objective(x2, target);
            }
        }
        let refined = if f1 <= f2 { x1 } else { x2 };
        let coarse = self.theta[best];
        // Keep the grid winner on exact ties to honor the smaller-canonical-
        // angle tie-break.
        let (theta, _) = if self.objective(refined, target) < self.objective(coarse, target) - 1e-12
        {
            (refined, ())
        } else {
            (coarse, ())
        };
        wrap_angle(theta)
    }

    /// Project a whole target vector; returns the phases and the manifold
    /// reflection coefficients.
    pub fn project(&self, targets: &[Complex64]) -> (PhaseVector, Vec<Complex64>) {
        let mut theta = Vec::with_capacity(targets.len());
        let mut phi = Vec::with_capacity(targets.len());
        for &t in targets {
            let angle = self.project_scalar(t);
            theta.push(angle);
            phi.push(Complex64::from_polar(self.profile.amplitude(angle), angle));
        }
        (
            PhaseVector::new(theta).expect("projection produces finite angles"),
            phi,
        )
    }
}

/// Default dense line-search resolution.
pub const PROJECTION_GRID_POINTS: usize = 4096;

/// Element-wise projection of `phi - nu` onto the coupled amplitude-phase
/// manifold, solved independently per element by dense line search with
/// golden-section refinement.
pub fn project_to_manifold(
    profile: &RisHardwareProfile,
    phi: &[Complex64],
    nu: &[Complex64],
    grid: Option<&ProjectionGrid>,
) -> (PhaseVector, Vec<Complex64>) {
    let owned;
    let grid = match grid {
        Some(g) => g,
        None => {
            owned = ProjectionGrid::new(profile, PROJECTION_GRID_POINTS);
            &owned
        }
    };
    let targets: Vec<Complex64> = phi.iter().zip(nu).map(|(p, n)| p - n).collect();
    grid.project(&targets)
}

/// Per-user quadratic forms of the phase subproblem for RSMA/SDMA.
#[derive(Debug, Clone)]
pub struct QuadraticForms {
    /// `Lambda_k = G^H diag(f_k)`, M x N.
    pub lambda: Vec<Array2<Complex64>>,
    /// `P_c,k = Lambda_k^H B_c,k Lambda_k`, N x N Hermitian PSD.
    pub p_common: Vec<Array2<Complex64>>,
    /// `P_k = Lambda_k^H B_k Lambda_k`.
    pub p_private: Vec<Array2<Complex64>>,
    /// `B_c,k = m_r A + m_t (1+m_r) diag(A) + sum_i w_i w_i^H` (M x M).
    pub b_common: Vec<Array2<Complex64>>,
    /// `B_k` adds `delta_sic^2 w_c w_c^H` and drops the own stream.
    pub b_private: Vec<Array2<Complex64>>,
    /// `Lambda_k^H w_c`: the common numerator is `|lin_common^H phi|^2`.
    pub lin_common: Vec<Array1<Complex64>>,
    pub lin_private: Vec<Array1<Complex64>>,
    /// `(1 + m_r) sigma_k^2`.
    pub sigma_eff: Vec<f64>,
}

fn outer(v: &Array1<Complex64>) -> Array2<Complex64> {
    let m = v.len();
    Array2::from_shape_fn((m, m), |(i, j)| v[i] * v[j].conj())
}

fn hermitianize(p: &mut Array2<Complex64>) {
    let n = p.nrows();
    for i in 0..n {
        for j in i..n {
            let avg = 0.5 * (p[(i, j)] + p[(j, i)].conj());
            p[(i, j)] = avg;
            p[(j, i)] = avg.conj();
        }
    }
}

fn sandwich(lambda: &Array2<Complex64>, b: &Array2<Complex64>) -> Array2<Complex64> {
    // Lambda^H B Lambda with Lambda M x N.
    let t = b.dot(lambda); // M x N
    let mut p = Array2::zeros((lambda.ncols(), lambda.ncols()));
    for i in 0..lambda.ncols() {
        for j in 0..lambda.ncols() {
            let mut acc = Complex64::new(0.0, 0.0);
            for m in 0..lambda.nrows() {
                acc += lambda[(m, i)].conj() * t[(m, j)];
            }
            p[(i, j)] = acc;
        }
    }
    hermitianize(&mut p);
    p
}

fn matvec_adj(lambda: &Array2<Complex64>, w: &Array1<Complex64>) -> Array1<Complex64> {
    // Lambda^H w, length N.
    let (m, n) = lambda.dim();
    Array1::from_shape_fn(n, |i| {
        let mut acc = Complex64::new(0.0, 0.0);
        for row in 0..m {
            acc += lambda[(row, i)].conj() * w[row];
        }
        acc
    })
}

/// Build the RSMA/SDMA quadratic forms for the current precoders.
pub fn build_quadratic_forms(
    realization: &ChannelRealization,
    precoders: &Precoders,
    imp: &ImpairmentProfile,
) -> Result<QuadraticForms> {
    let m = realization.m_antennas();
    if precoders.m_antennas() != m || precoders.k_users() != realization.k_users() {
        return Err(RismaError::DimensionMismatch(
            "precoders do not match the channel dimensions".into(),
        ));
    }
    let k_users = realization.k_users();
    let mtilde = imp.m_t * (1.0 + imp.m_r);
    let delta_sq = imp.delta_sic * imp.delta_sic;

    let common_outer = outer(&precoders.w_c);
    let private_outers: Vec<Array2<Complex64>> = precoders.w.iter().map(outer).collect();
    let mut a = common_outer.clone();
    for po in &private_outers {
        a += po;
    }
    // m_r A + m_t (1 + m_r) diag(A), shared by every B matrix.
    let mut hwi = a.mapv(|x| imp.m_r * x);
    for i in 0..m {
        hwi[(i, i)] += mtilde * a[(i, i)];
    }
    let mut b_common_base = hwi.clone();
    for po in &private_outers {
        b_common_base += po;
    }

    let mut forms = QuadraticForms {
        lambda: Vec::with_capacity(k_users),
        p_common: Vec::with_capacity(k_users),
        p_private: Vec::with_capacity(k_users),
        b_common: Vec::with_capacity(k_users),
        b_private: Vec::with_capacity(k_users),
        lin_common: Vec::with_capacity(k_users),
        lin_private: Vec::with_capacity(k_users),
        sigma_eff: realization
            .noise_power
            .iter()
            .map(|s| (1.0 + imp.m_r) * s)
            .collect(),
    };
    for k in 0..k_users {
        let lambda = cascade_matrix(realization, k);
        let mut b_private = hwi.clone();
        b_private += &common_outer.mapv(|x| delta_sq * x);
        for (i, po) in private_outers.iter().enumerate() {
            if i != k {
                b_private += po;
            }
        }
        forms.p_common.push(sandwich(&lambda, &b_common_base));
        forms.p_private.push(sandwich(&lambda, &b_private));
        forms.lin_common.push(matvec_adj(&lambda, &precoders.w_c));
        forms.lin_private.push(matvec_adj(&lambda, &precoders.w[k]));
        forms.b_common.push(b_common_base.clone());
        forms.b_private.push(b_private);
        forms.lambda.push(lambda);
    }
    Ok(forms)
}

/// NOMA quadratic forms, indexed by decode position.
#[derive(Debug, Clone)]
pub struct NomaForms {
    pub order: Vec<usize>,
    pub lambda: Vec<Array2<Complex64>>,
    /// `p[pos][row]`: denominator form of stream `pos` decoded at position
    /// `pos + row` (the last position has a single row).
    pub p: Vec<Vec<Array2<Complex64>>>,
    pub lin: Vec<Vec<Array1<Complex64>>>,
    pub sigma_eff: Vec<f64>,
}

/// Build NOMA phase forms; precoders are user-indexed and reordered here.
pub fn build_noma_quadratic_forms(
    realization: &ChannelRealization,
    w: &[Array1<Complex64>],
    imp: &ImpairmentProfile,
    order: &[usize],
) -> Result<NomaForms> {
    let k_users = realization.k_users();
    if w.len() != k_users || order.len() != k_users {
        return Err(RismaError::DimensionMismatch(
            "NOMA forms need one precoder per user".into(),
        ));
    }
    let m = realization.m_antennas();
    let mtilde = imp.m_t * (1.0 + imp.m_r);
    let delta_sq = imp.delta_sic * imp.delta_sic;
    let w_ord: Vec<&Array1<Complex64>> = order.iter().map(|&u| &w[u]).collect();
    let outers: Vec<Array2<Complex64>> = w_ord.iter().map(|wk| outer(wk)).collect();
    let mut b = Array2::<Complex64>::zeros((m, m));
    for o in &outers {
        b += o;
    }
    let mut hwi = b.mapv(|x| imp.m_r * x);
    for i in 0..m {
        hwi[(i, i)] += mtilde * b[(i, i)];
    }
    let lambda_ord: Vec<Array2<Complex64>> = order
        .iter()
        .map(|&u| cascade_matrix(realization, u))
        .collect();
    let sigma_eff: Vec<f64> = order
        .iter()
        .map(|&u| (1.0 + imp.m_r) * realization.noise_power[u])
        .collect();

    let mut p_all = Vec::with_capacity(k_users);
    let mut lin_all = Vec::with_capacity(k_users);
    for pos in 0..k_users {
        let mut b_pos = hwi.clone();
        if pos + 1 == k_users {
            for o in outers.iter().take(k_users - 1) {
                b_pos += &o.mapv(|x| delta_sq * x);
            }
        } else {
            for (i, o) in outers.iter().enumerate() {
                if i > pos {
                    b_pos += o;
                } else {
                    b_pos += &o.mapv(|x| delta_sq * x);
                }
            }
        }
        let decoders: Vec<usize> = if pos + 1 == k_users {
            vec![k_users - 1]
        } else {
            (pos..k_users).collect()
        };
        let mut p_rows = Vec::with_capacity(decoders.len());
        let mut lin_rows = Vec::with_capacity(decoders.len());
        for &l in &decoders {
            p_rows.push(sandwich(&lambda_ord[l], &b_pos));
            lin_rows.push(matvec_adj(&lambda_ord[l], w_ord[pos]));
        }
        p_all.push(p_rows);
        lin_all.push(lin_rows);
    }
    Ok(NomaForms {
        order: order.to_vec(),
        lambda: lambda_ord,
        p: p_all,
        lin: lin_all,
        sigma_eff,
    })
}

fn quad_form(p: &Array2<Complex64>, v: &[Complex64]) -> f64 {
    let n = p.nrows();
    let mut acc = 0.0;
    for i in 0..n {
        acc += p[(i, i)].re * v[i].norm_sqr();
        for j in i + 1..n {
            acc += 2.0 * (v[i].conj() * p[(i, j)] * v[j]).re;
        }
    }
    acc
}

fn lin_dot(a: &Array1<Complex64>, v: &[Complex64]) -> Complex64 {
    a.iter().zip(v).map(|(x, y)| x.conj() * y).sum()
}

/// The phase subproblem of one scheme, bound to its quadratic forms.
#[derive(Debug, Clone, Copy)]
pub enum PhaseProblem<'a> {
    RsmaLike {
        forms: &'a QuadraticForms,
        scheme: Scheme,
    },
    Noma {
        forms: &'a NomaForms,
    },
}

/// Multipliers of the phase-space surrogates.
#[derive(Debug, Clone, PartialEq)]
pub struct PhaseMultipliers {
    pub common: Vec<Complex64>,
    pub private: Vec<Complex64>,
    /// NOMA table aligned with `NomaForms::lin`.
    pub noma: Vec<Vec<Complex64>>,
}

impl<'a> PhaseProblem<'a> {
    pub fn n_elements(&self) -> usize {
        match self {
            PhaseProblem::RsmaLike { forms, .. } => forms.lambda[0].ncols(),
            PhaseProblem::Noma { forms } => forms.lambda[0].ncols(),
        }
    }

    pub fn k_users(&self) -> usize {
        match self {
            PhaseProblem::RsmaLike { forms, .. } => forms.lambda.len(),
            PhaseProblem::Noma { forms } => forms.lambda.len(),
        }
    }

    fn has_common(&self) -> bool {
        matches!(
            self,
            PhaseProblem::RsmaLike {
                scheme: Scheme::Rsma,
                ..
            }
        )
    }

    fn n_slacks(&self) -> usize {
        self.k_users() + usize::from(self.has_common())
    }

    fn first_private_slack(&self) -> usize {
        usize::from(self.has_common())
    }

    /// Per-user SINRs at a reflection vector.
    fn sinrs(&self, phi: &[Complex64]) -> (Vec<f64>, Vec<f64>) {
        match self {
            PhaseProblem::RsmaLike { forms, .. } => {
                let k_users = forms.lambda.len();
                let mut gc = Vec::with_capacity(k_users);
                let mut gp = Vec::with_capacity(k_users);
                for k in 0..k_users {
                    let den_c = quad_form(&forms.p_common[k], phi) + forms.sigma_eff[k];
                    let den_p = quad_form(&forms.p_private[k], phi) + forms.sigma_eff[k];
                    gc.push(lin_dot(&forms.lin_common[k], phi).norm_sqr() / den_c);
                    gp.push(lin_dot(&forms.lin_private[k], phi).norm_sqr() / den_p);
                }
                (gc, gp)
            }
            PhaseProblem::Noma { forms } => {
                let k_users = forms.lambda.len();
                let mut stream = Vec::with_capacity(k_users);
                for pos in 0..k_users {
                    let mut worst = f64::INFINITY;
                    for (row, lin) in forms.lin[pos].iter().enumerate() {
                        let den = quad_form(&forms.p[pos][row], phi)
                            + forms.sigma_eff[if pos + 1 == k_users {
                                k_users - 1
                            } else {
                                pos + row
                            }];
                        worst = worst.min(lin_dot(lin, phi).norm_sqr() / den);
                    }
                    stream.push(worst);
                }
                (vec![0.0; k_users], stream)
            }
        }
    }

    /// True relaxed objective at a reflection vector: common term (RSMA only)
    /// plus per-user private terms.
    pub fn true_objective(&self, phi: &[Complex64]) -> f64 {
        let (gc, gp) = self.sinrs(phi);
        let common = if self.has_common() {
            (1.0 + gc.iter().copied().fold(f64::INFINITY, f64::min)).log2()
        } else {
            0.0
        };
        common + gp.iter().map(|g| (1.0 + g).log2()).sum::<f64>()
    }

    /// Worst QoS violation of the true SINRs against `xi/K + xi_k >= gamma_th`.
    pub fn qos_residual(&self, phi: &[Complex64], gamma_th: f64) -> f64 {
        let (gc, gp) = self.sinrs(phi);
        let xi = if self.has_common() {
            gc.iter().copied().fold(f64::INFINITY, f64::min).max(0.0)
        } else {
            0.0
        };
        let k = self.k_users() as f64;
        gp.iter()
            .map(|g| (gamma_th - (xi / k + g)).max(0.0))
            .fold(0.0, f64::max)
    }

    /// Quadratic-transform multipliers refreshed at the current `phi`.
    pub fn update_multipliers(&self, phi: &[Complex64]) -> PhaseMultipliers {
        match self {
            PhaseProblem::RsmaLike { forms, .. } => {
                let k_users = forms.lambda.len();
                let mut common = Vec::with_capacity(k_users);
                let mut private = Vec::with_capacity(k_users);
                for k in 0..k_users {
                    let den_c = quad_form(&forms.p_common[k], phi) + forms.sigma_eff[k];
                    let den_p = quad_form(&forms.p_private[k], phi) + forms.sigma_eff[k];
                    common.push(lin_dot(&forms.lin_common[k], phi) / den_c);
                    private.push(lin_dot(&forms.lin_private[k], phi) / den_p);
                }
                PhaseMultipliers {
                    common,
                    private,
                    noma: vec![],
                }
            }
            PhaseProblem::Noma { forms } => {
                let k_users = forms.lambda.len();
                let mut noma = Vec::with_capacity(k_users);
                for pos in 0..k_users {
                    let mut rows = Vec::with_capacity(forms.lin[pos].len());
                    for (row, lin) in forms.lin[pos].iter().enumerate() {
                        let sig = forms.sigma_eff[if pos + 1 == k_users {
                            k_users - 1
                        } else {
                            pos + row
                        }];
                        let den = quad_form(&forms.p[pos][row], phi) + sig;
                        rows.push(lin_dot(lin, phi) / den);
                    }
                    noma.push(rows);
                }
                PhaseMultipliers {
                    common: vec![],
                    private: vec![],
                    noma,
                }
            }
        }
    }

    /// Assemble the surrogate constraints `h(mu, phi) >= xi` plus QoS rows.
    fn constraints(&self, mu: &PhaseMultipliers, gamma_th: f64) -> Vec<ConcaveQuadratic> {
        let n = self.n_elements();
        let k_users = self.k_users();
        let first_private = self.first_private_slack();
        let mut cons = Vec::new();
        let surrogate = |lin: &Array1<Complex64>,
                         p: &Array2<Complex64>,
                         sigma: f64,
                         mu: Complex64,
                         slack_idx: usize| {
            let mu_sq = mu.norm_sqr();
            ConcaveQuadratic {
                offset: -mu_sq * sigma,
                lin: lin.mapv(|x| mu * x),
                rank_one: vec![],
                diag: None,
                dense: vec![(0, p.mapv(|x| mu_sq * x))],
                slack: vec![(slack_idx, -1.0)],
                kind: ConstraintKind::SlackCap(slack_idx),
            }
        };
        match self {
            PhaseProblem::RsmaLike { forms, .. } => {
                for k in 0..k_users {
                    if self.has_common() {
                        cons.push(surrogate(
                            &forms.lin_common[k],
                            &forms.p_common[k],
                            forms.sigma_eff[k],
                            mu.common[k],
                            0,
                        ));
                    }
                    cons.push(surrogate(
                        &forms.lin_private[k],
                        &forms.p_private[k],
                        forms.sigma_eff[k],
                        mu.private[k],
                        first_private + k,
                    ));
                }
            }
            PhaseProblem::Noma { forms } => {
                for pos in 0..k_users {
                    for (row, lin) in forms.lin[pos].iter().enumerate() {
                        let sig = forms.sigma_eff[if pos + 1 == k_users {
                            k_users - 1
                        } else {
                            pos + row
                        }];
                        cons.push(surrogate(
                            lin,
                            &forms.p[pos][row],
                            sig,
                            mu.noma[pos][row],
                            pos,
                        ));
                    }
                }
            }
        }
        for k in 0..k_users {
            let mut slack = Vec::new();
            if self.has_common() {
                slack.push((0usize, 1.0 / k_users as f64));
            }
            slack.push((first_private + k, 1.0));
            cons.push(ConcaveQuadratic {
                offset: -gamma_th,
                lin: Array1::zeros(n),
                rank_one: vec![],
                diag: None,
                dense: vec![],
                slack,
                kind: ConstraintKind::Qos,
            });
        }
        cons
    }
}

/// ADMM primal/dual state.
#[derive(Debug, Clone, PartialEq)]
pub struct AdmmState {
    pub phi: Array1<Complex64>,
    pub phi_tilde: Array1<Complex64>,
    pub nu: Array1<Complex64>,
    pub lambda: f64,
}

impl AdmmState {
    /// Start the splitting at a manifold point: `phi = phi_tilde`, zero dual.
    pub fn from_reflection(phi_tilde: Vec<Complex64>, lambda: f64) -> Self {
        let phi_tilde = Array1::from_vec(phi_tilde);
        Self {
            phi: phi_tilde.clone(),
            phi_tilde,
            nu: Array1::zeros(0),
            lambda,
        }
        .with_zero_dual()
    }

    fn with_zero_dual(mut self) -> Self {
        self.nu = Array1::zeros(self.phi.len());
        self
    }

    pub fn primal_residual(&self) -> f64 {
        self.phi_tilde
            .iter()
            .zip(self.phi.iter())
            .map(|(a, b)| (a - b).norm_sqr())
            .sum::<f64>()
            .sqrt()
    }
}

/// Result of the relaxed phi maximization.
#[derive(Debug, Clone)]
pub struct PhiStep {
    pub phi: Array1<Complex64>,
    pub slacks: Vec<f64>,
    /// `Q(slacks) - lambda ||phi - (phi_tilde + nu)||^2` at the repaired point.
    pub augmented_objective: f64,
    pub feasible: bool,
    pub qos_residual: f64,
}

/// Solve the relaxed phi subproblem at fixed multipliers: maximize the slack
/// objective minus the scaled penalty, subject to the surrogate and QoS rows.
/// Never returns an augmented objective below the warm start's.
pub fn solve_phi_step(
    problem: &PhaseProblem,
    mu: &PhaseMultipliers,
    admm: &AdmmState,
    gamma_th: f64,
    cfg: &ConvexSolveConfig,
    warm_solver: &mut SolverWarmState,
) -> PhiStep {
    let n = problem.n_elements();
    let n_slacks = problem.n_slacks();
    let cons = problem.constraints(mu, gamma_th);
    let target: Array1<Complex64> = &admm.phi_tilde + &admm.nu;
    let objective = SolverObjective {
        slack_weight: vec![1.0; n_slacks],
        prox_lambda: admm.lambda,
        prox_target: Some(target.clone()),
    };
    // Warm slacks: exact surrogate values at the current phi.
    let zero = vec![0.0; n_slacks];
    let mut s0 = vec![f64::INFINITY; n_slacks];
    for con in &cons {
        if let ConstraintKind::SlackCap(idx) = con.kind {
            s0[idx] = s0[idx].min(con.value(admm.phi.as_slice().unwrap(), &zero));
        }
    }
    s0.iter_mut().for_each(|x| {
        if !x.is_finite() || *x < 0.0 {
            *x = 0.0;
        }
    });
    let warm_aug = objective.value(admm.phi.as_slice().unwrap(), &s0);
    let subproblem = ConvexSubproblem {
        objective,
        constraints: cons,
        ball_radius: None,
        dim: n,
        n_slacks,
    };
    let out = solve_and_repair(&subproblem, &admm.phi, &s0, cfg, warm_solver);
    let solver_aug = subproblem
        .objective
        .value(out.v.as_slice().unwrap(), &out.slacks);
    if solver_aug >= warm_aug - 1e-9 {
        PhiStep {
            phi: out.v,
            slacks: out.slacks,
            augmented_objective: solver_aug,
            feasible: out.feasible,
            qos_residual: out.qos_residual,
        }
    } else {
        let mut qos = 0.0f64;
        for con in &subproblem.constraints {
            if con.kind == ConstraintKind::Qos {
                qos = qos.max(-con.value(admm.phi.as_slice().unwrap(), &s0));
            }
        }
        PhiStep {
            phi: admm.phi.clone(),
            slacks: s0,
            augmented_objective: warm_aug,
            feasible: qos <= cfg.constraint_tolerance,
            qos_residual: qos,
        }
    }
}

/// Controls of the ADMM loop.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct AdmmConfig {
    pub max_iters: usize,
    /// Primal stop: `||phi_tilde - phi|| < primal_tolerance * sqrt(N)`.
    pub primal_tolerance: f64,
    /// Objective stop on the true manifold objective.
    pub objective_tolerance: f64,
    /// Penalty weight of the splitting.
    pub lambda: f64,
    pub grid_points: usize,
    pub record_trace: bool,
    pub solve: ConvexSolveConfig,
}

impl Default for AdmmConfig {
    fn default() -> Self {
        Self {
            max_iters: 100,
            primal_tolerance: 1e-4,
            objective_tolerance: 1e-5,
            lambda: 1.0,
            grid_points: PROJECTION_GRID_POINTS,
            record_trace: false,
            solve: ConvexSolveConfig::default(),
        }
    }
}

/// Per-iteration ADMM diagnostics.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize)]
pub struct AdmmIterStats {
    pub iteration: usize,
    pub primal_residual: f64,
    /// True manifold objective after the projection.
    pub objective: f64,
    pub augmented_objective: f64,
}

/// ADMM output: always a manifold-feasible phase vector, the best seen.
#[derive(Debug, Clone)]
pub struct AdmmOutcome {
    pub theta: PhaseVector,
    pub phi_tilde: Vec<Complex64>,
    /// True objective at `theta`.
    pub objective: f64,
    pub qos_feasible: bool,
    pub converged: bool,
    pub iterations: usize,
    pub final_primal_residual: f64,
    pub trace: Vec<AdmmIterStats>,
}

/// Run the ADMM splitting from an initial phase vector. The returned phases
/// are the best manifold-feasible iterate encountered, including the start,
/// so the true objective never regresses.
pub fn admm_loop(
    problem: &PhaseProblem,
    profile: &RisHardwareProfile,
    init: &PhaseVector,
    gamma_th: f64,
    cfg: &AdmmConfig,
) -> Result<AdmmOutcome> {
    let n = problem.n_elements();
    if init.len() != n {
        return Err(RismaError::DimensionMismatch(format!(
            "initial phases have {} entries for {} elements",
            init.len(),
            n
        )));
    }
    let grid = ProjectionGrid::new(profile, cfg.grid_points);
    let phi0: Vec<Complex64> = init
        .as_slice()
        .iter()
        .map(|&t| Complex64::from_polar(profile.amplitude(t), t))
        .collect();
    let mut state = AdmmState::from_reflection(phi0.clone(), cfg.lambda);

    let mut best_theta = init.clone();
    let mut best_phi = phi0;
    let mut best_obj = problem.true_objective(&best_phi);
    let mut best_feasible =
        problem.qos_residual(&best_phi, gamma_th) <= cfg.solve.constraint_tolerance;
    let mut prev_obj = best_obj;

    let mut warm_solver = SolverWarmState::new();
    let mut trace = Vec::new();
    let mut converged = false;
    let mut iterations = 0;
    for iteration in 0..cfg.max_iters {
        iterations = iteration + 1;
        // Multipliers refreshed at the current relaxed point.
        let mu = problem.update_multipliers(state.phi.as_slice().unwrap());
        let step = solve_phi_step(problem, &mu, &state, gamma_th, &cfg.solve, &mut warm_solver);
        state.phi = step.phi;
        let (theta, phi_tilde) = project_to_manifold(
            profile,
            state.phi.as_slice().unwrap(),
            state.nu.as_slice().unwrap(),
            Some(&grid),
        );
        state.phi_tilde = Array1::from_vec(phi_tilde.clone());
        state.nu = &state.nu + &state.phi_tilde - &state.phi;

        let objective = problem.true_objective(&phi_tilde);
        let feasible = problem.qos_residual(&phi_tilde, gamma_th) <= cfg.solve.constraint_tolerance;
        let improves = match (feasible, best_feasible) {
            (true, false) => true,
            (true, true) => objective > best_obj,
            (false, false) => objective > best_obj,
            (false, true) => false,
        };
        if improves {
            best_obj = objective;
            best_theta = theta;
            best_phi = phi_tilde;
            best_feasible = feasible;
        }
        let primal = state.primal_residual();
        if cfg.record_trace {
            trace.push(AdmmIterStats {
                iteration,
                primal_residual: primal,
                objective,
                augmented_objective: step.augmented_objective,
            });
        }
        if primal < cfg.primal_tolerance * (n as f64).sqrt()
            && (objective - prev_obj).abs() < cfg.objective_tolerance
        {
            converged = true;
            break;
        }
        prev_obj = objective;
    }
    Ok(AdmmOutcome {
        theta: best_theta,
        phi_tilde: best_phi,
        objective: best_obj,
        qos_feasible: best_feasible,
        converged,
        iterations,
        final_primal_residual: state.primal_residual(),
        trace,
    })
}
