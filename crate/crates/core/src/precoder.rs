//! Precoder subproblem for fixed RIS phases: fractional-programming
//! relaxation with closed-form multiplier updates and an inner convex solve.
//!
//! Each SINR constraint `gamma >= xi` is replaced by its quadratic-transform
//! surrogate `2 Re(mu^* h^H w) - |mu|^2 D(w) >= xi`, where `D` is the full
//! interference-plus-distortion denominator (a convex quadratic in the
//! stacked precoders). At the closed-form multiplier
//!
//! ```text
//! mu* = h^H w / D(w)
//! ```
//!
//! the surrogate equals the true SINR, and for any fixed `mu` it lower-bounds
//! it, so alternating multiplier updates with the convex solve ascends the
//! true objective. SDMA runs the same machinery with the common stream
//! removed; NOMA mirrors it on the ordered-SIC SINR set.

use ndarray::Array1;
use num_complex::Complex64;

use crate::error::{Result, RismaError};
use crate::rate::{
    distortion_powers, noma_rates, noma_sinrs, rsma_rates, rsma_sinrs, ImpairmentProfile, Scheme,
};
use crate::solver::{
    solve_and_repair, ConcaveQuadratic, ConstraintKind, ConvexSubproblem, SolverObjective,
    SolverWarmState, StepResult,
};
pub use crate::solver::ConvexSolveConfig;

/// Common and private precoding vectors.
#[derive(Debug, Clone, PartialEq)]
pub struct Precoders {
    pub w_c: Array1<Complex64>,
    pub w: Vec<Array1<Complex64>>,
}

impl Precoders {
    pub fn m_antennas(&self) -> usize {
        self.w_c.len()
    }

    pub fn k_users(&self) -> usize {
        self.w.len()
    }

    pub fn total_power(&self) -> f64 {
        self.w_c.iter().map(|v| v.norm_sqr()).sum::<f64>()
            + self
                .w
                .iter()
                .map(|wk| wk.iter().map(|v| v.norm_sqr()).sum::<f64>())
                .sum::<f64>()
    }

    pub fn common_power(&self) -> f64 {
        self.w_c.iter().map(|v| v.norm_sqr()).sum()
    }

    /// Maximum-ratio warm start: private beams along the effective channels,
    /// the common beam along their normalized sum, 10% of the budget on the
    /// common stream (none for SDMA/NOMA).
    pub fn mrt_init(h: &[Array1<Complex64>], p_max: f64, scheme: Scheme) -> Self {
        let m = h[0].len();
        let k_users = h.len();
        let common_fraction = match scheme {
            Scheme::Rsma => 0.1,
            Scheme::Sdma | Scheme::Noma => 0.0,
        };
        let normalize = |v: &Array1<Complex64>| -> Array1<Complex64> {
            let norm = v.iter().map(|x| x.norm_sqr()).sum::<f64>().sqrt();
            if norm > 0.0 {
                v.mapv(|x| x / norm)
            } else {
                let mut e = Array1::zeros(v.len());
                e[0] = Complex64::new(1.0, 0.0);
                e
            }
        };
        let mut sum_h = Array1::<Complex64>::zeros(m);
        for hk in h {
            sum_h += hk;
        }
        let w_c = normalize(&sum_h).mapv(|x| x * (common_fraction * p_max).sqrt());
        let per_private = ((1.0 - common_fraction) * p_max / k_users as f64).sqrt();
        let w = h
            .iter()
            .map(|hk| normalize(hk).mapv(|x| x * per_private))
            .collect();
        Self { w_c, w }
    }

    fn stack(&self, scheme: Scheme) -> Array1<Complex64> {
        let m = self.m_antennas();
        let blocks: Vec<&Array1<Complex64>> = match scheme {
            Scheme::Rsma => std::iter::once(&self.w_c).chain(self.w.iter()).collect(),
            Scheme::Sdma | Scheme::Noma => self.w.iter().collect(),
        };
        let mut v = Array1::zeros(m * blocks.len());
        for (b, block) in blocks.iter().enumerate() {
            for i in 0..m {
                v[b * m + i] = block[i];
            }
        }
        v
    }

    fn unstack(v: &Array1<Complex64>, m: usize, k_users: usize, scheme: Scheme) -> Self {
        let has_common = matches!(scheme, Scheme::Rsma);
        let slice = |b: usize| Array1::from_iter(v.iter().skip(b * m).take(m).copied());
        let w_c = if has_common {
            slice(0)
        } else {
            Array1::zeros(m)
        };
        let first_private = usize::from(has_common);
        let w = (0..k_users).map(|k| slice(first_private + k)).collect();
        Self { w_c, w }
    }
}

/// Quadratic-transform multipliers for the RSMA constraint set.
#[derive(Debug, Clone, PartialEq)]
pub struct FpMultipliers {
    pub mu_c: Vec<Complex64>,
    pub mu_p: Vec<Complex64>,
}

/// Slack variables of the relaxed problem: the common-SINR slack and the
/// per-user private slacks, all nonnegative.
#[derive(Debug, Clone, PartialEq)]
pub struct SlackVariables {
    pub xi: f64,
    pub xi_k: Vec<f64>,
}

fn cdot(a: &Array1<Complex64>, b: &Array1<Complex64>) -> Complex64 {
    a.iter().zip(b.iter()).map(|(x, y)| x.conj() * y).sum()
}

/// Closed-form multiplier update: `mu = h^H w / D(w)` for every common and
/// private constraint; at these values the surrogate equals the true SINR.
pub fn update_multipliers(
    h: &[Array1<Complex64>],
    w_c: &Array1<Complex64>,
    w: &[Array1<Complex64>],
    imp: &ImpairmentProfile,
    sigma_sq: &[f64],
) -> FpMultipliers {
    let mut mu_c = Vec::with_capacity(h.len());
    let mut mu_p = Vec::with_capacity(h.len());
    for (k, hk) in h.iter().enumerate() {
        let (phi_c, phi_p) = distortion_powers(hk, w_c, w, imp, sigma_sq[k]);
        let gains: Vec<f64> = w.iter().map(|wi| cdot(hk, wi).norm_sqr()).collect();
        let all: f64 = gains.iter().sum();
        mu_c.push(cdot(hk, w_c) / (all + phi_c));
        mu_p.push(cdot(hk, &w[k]) / (all - gains[k] + phi_p));
    }
    FpMultipliers { mu_c, mu_p }
}

/// NOMA multipliers, one per (decode position, decoding user) pair.
#[derive(Debug, Clone, PartialEq)]
pub(crate) struct NomaMultipliers {
    /// `mu[p][l - p]` for position `p` decoded at position `l`; the last
    /// position has the single entry `mu[K-1][0]`.
    pub mu: Vec<Vec<Complex64>>,
}

/// NOMA denominator of stream `p` decoded at position `l` (channels and
/// precoders already in decode order).
fn noma_denominator(
    h_l: &Array1<Complex64>,
    w_ord: &[Array1<Complex64>],
    imp: &ImpairmentProfile,
    sigma_sq: f64,
    p: usize,
) -> f64 {
    let k_users = w_ord.len();
    let delta_sq = imp.delta_sic * imp.delta_sic;
    let gains: Vec<f64> = w_ord.iter().map(|wi| cdot(h_l, wi).norm_sqr()).collect();
    let mtilde = imp.m_t * (1.0 + imp.m_r);
    let diag: f64 = h_l
        .iter()
        .enumerate()
        .map(|(m, hm)| hm.norm_sqr() * w_ord.iter().map(|wi| wi[m].norm_sqr()).sum::<f64>())
        .sum();
    let hwi = imp.m_r * gains.iter().sum::<f64>() + mtilde * diag + (1.0 + imp.m_r) * sigma_sq;
    if p + 1 == k_users {
        hwi + delta_sq * gains[..k_users - 1].iter().sum::<f64>()
    } else {
        hwi + gains[p + 1..].iter().sum::<f64>() + delta_sq * gains[..=p].iter().sum::<f64>()
    }
}

pub(crate) fn update_noma_multipliers(
    h_ord: &[Array1<Complex64>],
    w_ord: &[Array1<Complex64>],
    imp: &ImpairmentProfile,
    sigma_ord: &[f64],
) -> NomaMultipliers {
    let k_users = h_ord.len();
    let mut mu = Vec::with_capacity(k_users);
    for p in 0..k_users {
        let decoders: Vec<usize> = if p + 1 == k_users {
            vec![k_users - 1]
        } else {
            (p..k_users).collect()
        };
        mu.push(
            decoders
                .into_iter()
                .map(|l| {
                    let d = noma_denominator(&h_ord[l], w_ord, imp, sigma_ord[l], p);
                    cdot(&h_ord[l], &w_ord[p]) / d
                })
                .collect(),
        );
    }
    NomaMultipliers { mu }
}

/// Slack layout per scheme: RSMA carries the common slack at index 0.
fn slack_layout(scheme: Scheme, k_users: usize) -> (usize, usize) {
    match scheme {
        Scheme::Rsma => (k_users + 1, 1),
        Scheme::Sdma | Scheme::Noma => (k_users, 0),
    }
}

/// Tile a per-antenna weight across every precoder block.
fn tiled_diag(per_antenna: &[f64], blocks: usize) -> Array1<f64> {
    let m = per_antenna.len();
    Array1::from_shape_fn(m * blocks, |i| per_antenna[i % m])
}

/// Assemble the w-space surrogate constraint set for a scheme.
fn assemble_w_constraints(
    scheme: Scheme,
    h: &[Array1<Complex64>],
    imp: &ImpairmentProfile,
    rsma_mu: Option<&FpMultipliers>,
    noma_mu: Option<&NomaMultipliers>,
    gamma_th: f64,
    sigma_sq: &[f64],
) -> Vec<ConcaveQuadratic> {
    let k_users = h.len();
    let m = h[0].len();
    let has_common = matches!(scheme, Scheme::Rsma);
    let blocks = k_users + usize::from(has_common);
    let dim = m * blocks;
    let (n_slacks, first_private_slack) = slack_layout(scheme, k_users);
    let mtilde = imp.m_t * (1.0 + imp.m_r);
    let delta_sq = imp.delta_sic * imp.delta_sic;
    let mut cons = Vec::new();

    let lin_at = |block: usize, v: &Array1<Complex64>| {
        let mut lin = Array1::zeros(dim);
        for i in 0..m {
            lin[block * m + i] = v[i];
        }
        lin
    };
    let habs =
        |hk: &Array1<Complex64>| -> Vec<f64> { hk.iter().map(|x| x.norm_sqr()).collect() };

    match scheme {
        Scheme::Rsma | Scheme::Sdma => {
            let mu = rsma_mu.expect("RSMA-style multipliers required");
            for k in 0..k_users {
                let hk = &h[k];
                let noise = -(1.0 + imp.m_r) * sigma_sq[k];
                if has_common {
                    // Common surrogate: caps the common slack (index 0).
                    let mu_sq = mu.mu_c[k].norm_sqr();
                    let mut rank_one = vec![(0usize, hk.clone(), mu_sq * imp.m_r)];
                    for i in 0..k_users {
                        rank_one.push(((1 + i) * m, hk.clone(), mu_sq * (1.0 + imp.m_r)));
                    }
                    cons.push(ConcaveQuadratic {
                        offset: mu_sq * noise,
                        lin: lin_at(0, &hk.mapv(|x| mu.mu_c[k] * x)),
                        rank_one,
                        diag: (mtilde > 0.0).then(|| {
                            tiled_diag(&habs(hk), blocks).mapv(|d| d * mu_sq * mtilde)
                        }),
                        dense: vec![],
                        slack: vec![(0, -1.0)],
                        kind: ConstraintKind::SlackCap(0),
                    });
                }
                // Private surrogate.
                let mu_sq = mu.mu_p[k].norm_sqr();
                let own_block = usize::from(has_common) + k;
                let mut rank_one = Vec::with_capacity(blocks);
                if has_common {
                    rank_one.push((0usize, hk.clone(), mu_sq * (delta_sq + imp.m_r)));
                }
                for i in 0..k_users {
                    let coef = if i == k {
                        imp.m_r
                    } else {
                        1.0 + imp.m_r
                    };
                    rank_one.push(((usize::from(has_common) + i) * m, hk.clone(), mu_sq * coef));
                }
                cons.push(ConcaveQuadratic {
                    offset: mu_sq * noise,
                    lin: lin_at(own_block, &hk.mapv(|x| mu.mu_p[k] * x)),
                    rank_one,
                    diag: (mtilde > 0.0)
                        .then(|| tiled_diag(&habs(hk), blocks).mapv(|d| d * mu_sq * mtilde)),
                    dense: vec![],
                    slack: vec![(first_private_slack + k, -1.0)],
                    kind: ConstraintKind::SlackCap(first_private_slack + k),
                });
            }
        }
        Scheme::Noma => {
            let mu_tbl = noma_mu.expect("NOMA multipliers required");
            for p in 0..k_users {
                let decoders: Vec<usize> = if p + 1 == k_users {
                    vec![k_users - 1]
                } else {
                    (p..k_users).collect()
                };
                for (row, &l) in decoders.iter().enumerate() {
                    let hl = &h[l];
                    let mu = mu_tbl.mu[p][row];
                    let mu_sq = mu.norm_sqr();
                    let mut rank_one = Vec::with_capacity(k_users);
                    for i in 0..k_users {
                        let sic = if p + 1 == k_users {
                            if i < k_users - 1 {
                                delta_sq
                            } else {
                                0.0
                            }
                        } else if i > p {
                            1.0
                        } else {
                            delta_sq
                        };
                        rank_one.push((i * m, hl.clone(), mu_sq * (imp.m_r + sic)));
                    }
                    cons.push(ConcaveQuadratic {
                        offset: -mu_sq * (1.0 + imp.m_r) * sigma_sq[l],
                        lin: lin_at(p, &hl.mapv(|x| mu * x)),
                        rank_one,
                        diag: (mtilde > 0.0)
                            .then(|| tiled_diag(&habs(hl), blocks).mapv(|d| d * mu_sq * mtilde)),
                        dense: vec![],
                        slack: vec![(p, -1.0)],
                        kind: ConstraintKind::SlackCap(p),
                    });
                }
            }
        }
    }

    // QoS rows: xi/K + xi_k >= gamma_th, degenerating to xi_k >= gamma_th
    // when there is no common stream.
    for k in 0..k_users {
        let mut slack = Vec::new();
        if has_common {
            slack.push((0usize, 1.0 / k_users as f64));
        }
        slack.push((first_private_slack + k, 1.0));
        cons.push(ConcaveQuadratic {
            offset: -gamma_th,
            lin: Array1::zeros(dim),
            rank_one: vec![],
            diag: None,
            dense: vec![],
            slack,
            kind: ConstraintKind::Qos,
        });
    }
    let _ = n_slacks;
    cons
}

/// Surrogate slack values at a stacked point: minimum capped value per slack,
/// clamped at zero.
fn repair_slacks(cons: &[ConcaveQuadratic], v: &Array1<Complex64>, n_slacks: usize) -> Vec<f64> {
    let zero = vec![0.0; n_slacks];
    let mut s = vec![f64::INFINITY; n_slacks];
    for con in cons {
        if let ConstraintKind::SlackCap(idx) = con.kind {
            s[idx] = s[idx].min(con.value(v.as_slice().unwrap(), &zero));
        }
    }
    s.iter_mut().for_each(|x| {
        if !x.is_finite() || *x < 0.0 {
            *x = 0.0;
        }
    });
    s
}

fn slack_objective(slacks: &[f64]) -> f64 {
    slacks.iter().map(|s| (1.0 + s).log2()).sum()
}

/// Result of one inner convex solve of the precoder subproblem.
#[derive(Debug, Clone)]
pub struct PrecoderStep {
    pub precoders: Precoders,
    pub slacks: SlackVariables,
    /// Relaxed objective `log2(1+xi) + sum_k log2(1+xi_k)` at the repaired
    /// slacks.
    pub objective: f64,
    pub qos_residual: f64,
    pub feasible: bool,
}

pub(crate) struct WStepInputs<'a> {
    pub scheme: Scheme,
    pub h: &'a [Array1<Complex64>],
    pub imp: &'a ImpairmentProfile,
    pub p_max: f64,
    pub gamma_th: f64,
    pub sigma_sq: &'a [f64],
}

pub(crate) fn solve_w_step(
    inputs: &WStepInputs,
    rsma_mu: Option<&FpMultipliers>,
    noma_mu: Option<&NomaMultipliers>,
    warm: &Precoders,
    cfg: &ConvexSolveConfig,
    warm_solver: &mut SolverWarmState,
) -> PrecoderStep {
    let k_users = inputs.h.len();
    let m = inputs.h[0].len();
    let cons = assemble_w_constraints(
        inputs.scheme,
        inputs.h,
        inputs.imp,
        rsma_mu,
        noma_mu,
        inputs.gamma_th,
        inputs.sigma_sq,
    );
    let (n_slacks, first_private) = slack_layout(inputs.scheme, k_users);
    let v0 = warm.stack(inputs.scheme);
    let s0 = repair_slacks(&cons, &v0, n_slacks);
    let warm_objective = slack_objective(&s0);
    let problem = ConvexSubproblem {
        objective: SolverObjective::slack_only(n_slacks),
        constraints: cons,
        ball_radius: Some(inputs.p_max.sqrt()),
        dim: v0.len(),
        n_slacks,
    };
    let out: StepResult = solve_and_repair(&problem, &v0, &s0, cfg, warm_solver);
    // Ascent guarantee: never hand back less than the warm start.
    let (v, slacks, objective, qos_residual, feasible) =
        if out.objective >= warm_objective - 1e-9 {
            (out.v, out.slacks, out.objective, out.qos_residual, out.feasible)
        } else {
            let mut qos = 0.0f64;
            for con in &problem.constraints {
                if con.kind == ConstraintKind::Qos {
                    qos = qos.max(-con.value(v0.as_slice().unwrap(), &s0));
                }
            }
            let feasible = qos <= cfg.constraint_tolerance;
            (v0, s0, warm_objective, qos, feasible)
        };
    let precoders = Precoders::unstack(&v, m, k_users, inputs.scheme);
    let (xi, xi_k) = match inputs.scheme {
        Scheme::Rsma => (slacks[0], slacks[1..].to_vec()),
        Scheme::Sdma | Scheme::Noma => (0.0, slacks[first_private..].to_vec()),
    };
    PrecoderStep {
        precoders,
        slacks: SlackVariables { xi, xi_k },
        objective,
        qos_residual,
        feasible,
    }
}

/// Solve the RSMA precoder subproblem once at fixed multipliers.
///
/// The returned point satisfies the power budget exactly (projection), its
/// slacks are the exact surrogate values at the returned precoders, and the
/// relaxed objective never falls below the warm start's by more than 1e-9.
pub fn solve_precoder_step(
    h: &[Array1<Complex64>],
    imp: &ImpairmentProfile,
    p_max: f64,
    gamma_th: f64,
    sigma_sq: &[f64],
    multipliers: &FpMultipliers,
    warm: &Precoders,
    cfg: &ConvexSolveConfig,
) -> PrecoderStep {
    solve_w_step(
        &WStepInputs {
            scheme: Scheme::Rsma,
            h,
            imp,
            p_max,
            gamma_th,
            sigma_sq,
        },
        Some(multipliers),
        None,
        warm,
        cfg,
        &mut SolverWarmState::new(),
    )
}

/// Per-iteration record of the FP loop.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize)]
pub struct FpIterStats {
    pub iteration: usize,
    /// True-SINR objective after the iteration.
    pub objective: f64,
    pub qos_residual: f64,
}

/// Output of the full FP loop.
#[derive(Debug, Clone)]
pub struct FpOutcome {
    pub precoders: Precoders,
    pub slacks: SlackVariables,
    /// True-SINR objective of the final precoders.
    pub objective: f64,
    pub trace: Vec<FpIterStats>,
    pub feasible: bool,
    pub qos_residual: f64,
}

/// Loop controls for the FP alternation.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct FpLoopConfig {
    pub outer_iters: usize,
    /// Stop when the true objective changes by less than this.
    pub q_tolerance: f64,
    pub solve: ConvexSolveConfig,
}

impl Default for FpLoopConfig {
    fn default() -> Self {
        Self {
            outer_iters: 40,
            q_tolerance: 1e-5,
            solve: ConvexSolveConfig::default(),
        }
    }
}

/// True-SINR objective of a scheme at the current precoders.
pub(crate) fn scheme_objective(
    scheme: Scheme,
    h: &[Array1<Complex64>],
    precoders: &Precoders,
    imp: &ImpairmentProfile,
    sigma_sq: &[f64],
    noma_order: Option<&[usize]>,
) -> f64 {
    match scheme {
        Scheme::Rsma | Scheme::Sdma => {
            rsma_rates(&rsma_sinrs(h, &precoders.w_c, &precoders.w, imp, sigma_sq)).sum_rate
        }
        Scheme::Noma => {
            let order = noma_order.expect("NOMA objective needs a decoding order");
            let sinrs = noma_sinrs(h, &precoders.w, imp, sigma_sq, order)
                .expect("valid NOMA evaluation");
            noma_rates(&sinrs, h.len()).sum_rate
        }
    }
}

/// FP loop for any scheme. For NOMA the channels are reordered internally by
/// the supplied decoding order, and the returned precoders are mapped back to
/// user indexing.
pub(crate) fn fp_loop_for(
    scheme: Scheme,
    h: &[Array1<Complex64>],
    imp: &ImpairmentProfile,
    p_max: f64,
    gamma_th: f64,
    sigma_sq: &[f64],
    init: Precoders,
    noma_order: Option<&[usize]>,
    cfg: &FpLoopConfig,
    warm_solver: &mut SolverWarmState,
) -> FpOutcome {
    // Work in decode order for NOMA.
    let (h_work, sigma_work, order): (Vec<Array1<Complex64>>, Vec<f64>, Option<Vec<usize>>) =
        match scheme {
            Scheme::Noma => {
                let order = noma_order.expect("NOMA needs a decoding order").to_vec();
                (
                    order.iter().map(|&u| h[u].clone()).collect(),
                    order.iter().map(|&u| sigma_sq[u]).collect(),
                    Some(order),
                )
            }
            _ => (h.to_vec(), sigma_sq.to_vec(), None),
        };
    let to_work = |p: &Precoders| -> Precoders {
        match &order {
            Some(o) => Precoders {
                w_c: p.w_c.clone(),
                w: o.iter().map(|&u| p.w[u].clone()).collect(),
            },
            None => p.clone(),
        }
    };
    let to_user = |p: &Precoders| -> Precoders {
        match &order {
            Some(o) => {
                let mut w = vec![Array1::zeros(p.m_antennas()); p.k_users()];
                for (pos, &u) in o.iter().enumerate() {
                    w[u] = p.w[pos].clone();
                }
                Precoders {
                    w_c: p.w_c.clone(),
                    w,
                }
            }
            None => p.clone(),
        }
    };
    // Identity order in work space for objective evaluation.
    let work_order: Vec<usize> = (0..h.len()).collect();
    let obj = |p: &Precoders| {
        scheme_objective(
            scheme,
            &h_work,
            p,
            imp,
            &sigma_work,
            order.as_ref().map(|_| work_order.as_slice()),
        )
    };

    let mut current = to_work(&init);
    let mut q_prev = obj(&current);
    let mut trace = Vec::new();
    let mut last_residual = f64::INFINITY;
    let mut feasible = false;
    let inputs = WStepInputs {
        scheme,
        h: &h_work,
        imp,
        p_max,
        gamma_th,
        sigma_sq: &sigma_work,
    };
    for iteration in 0..cfg.outer_iters {
        let (rsma_mu, noma_mu) = match scheme {
            Scheme::Rsma | Scheme::Sdma => (
                Some(update_multipliers(
                    &h_work,
                    &current.w_c,
                    &current.w,
                    imp,
                    &sigma_work,
                )),
                None,
            ),
            Scheme::Noma => (
                None,
                Some(update_noma_multipliers(
                    &h_work,
                    &current.w,
                    imp,
                    &sigma_work,
                )),
            ),
        };
        let step = solve_w_step(
            &inputs,
            rsma_mu.as_ref(),
            noma_mu.as_ref(),
            &current,
            &cfg.solve,
            warm_solver,
        );
        current = step.precoders;
        last_residual = step.qos_residual;
        feasible = step.feasible;
        let q_new = obj(&current);
        trace.push(FpIterStats {
            iteration,
            objective: q_new,
            qos_residual: step.qos_residual,
        });
        if (q_new - q_prev).abs() < cfg.q_tolerance {
            q_prev = q_new;
            break;
        }
        q_prev = q_new;
    }
    let precoders = to_user(&current);
    let slacks = final_slacks(scheme, &h_work, &current, imp, &sigma_work, &work_order);
    FpOutcome {
        precoders,
        slacks,
        objective: q_prev,
        trace,
        feasible,
        qos_residual: last_residual,
    }
}

/// Slacks at the true SINR values of the final point.
fn final_slacks(
    scheme: Scheme,
    h: &[Array1<Complex64>],
    precoders: &Precoders,
    imp: &ImpairmentProfile,
    sigma_sq: &[f64],
    work_order: &[usize],
) -> SlackVariables {
    match scheme {
        Scheme::Rsma | Scheme::Sdma => {
            let s = rsma_sinrs(h, &precoders.w_c, &precoders.w, imp, sigma_sq);
            let xi = if matches!(scheme, Scheme::Rsma) {
                s.gamma_c.iter().copied().fold(f64::INFINITY, f64::min)
            } else {
                0.0
            };
            SlackVariables {
                xi: xi.max(0.0),
                xi_k: s.gamma_p,
            }
        }
        Scheme::Noma => {
            let sinrs = noma_sinrs(h, &precoders.w, imp, sigma_sq, work_order)
                .expect("valid NOMA evaluation");
            SlackVariables {
                xi: 0.0,
                xi_k: sinrs.stream_sinr,
            }
        }
    }
}

/// RSMA FP loop: alternates multiplier updates with the convex solve until
/// the true objective stalls. Signals QoS infeasibility when the final point
/// cannot satisfy the threshold.
pub fn precoder_fp_loop(
    h: &[Array1<Complex64>],
    imp: &ImpairmentProfile,
    p_max: f64,
    gamma_th: f64,
    sigma_sq: &[f64],
    init: Precoders,
    cfg: &FpLoopConfig,
) -> Result<FpOutcome> {
    let out = fp_loop_for(
        Scheme::Rsma,
        h,
        imp,
        p_max,
        gamma_th,
        sigma_sq,
        init,
        None,
        cfg,
        &mut SolverWarmState::new(),
    );
    if !out.feasible {
        return Err(RismaError::QosInfeasible {
            residual: out.qos_residual,
        });
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;
    use num_complex::Complex64 as C;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn c(re: f64, im: f64) -> C {
        C::new(re, im)
    }

    fn random_vec(rng: &mut impl Rng, len: usize, scale: f64) -> Array1<C> {
        Array1::from_shape_fn(len, |_| {
            c(
                scale * rng.gen_range(-1.0..1.0),
                scale * rng.gen_range(-1.0..1.0),
            )
        })
    }

    fn random_instance(
        rng: &mut impl Rng,
        k_users: usize,
        m: usize,
        scale: f64,
    ) -> (Vec<Array1<C>>, Vec<f64>) {
        let h = (0..k_users).map(|_| random_vec(rng, m, scale)).collect();
        let sigma = vec![scale * scale; k_users];
        (h, sigma)
    }

    #[test]
    fn multiplier_scalar_case() {
        let h = vec![array![c(1.0, 0.0)]];
        let w_c = array![c(1.0, 0.0)];
        let w = vec![array![c(1.0, 0.0)]];
        let mu = update_multipliers(&h, &w_c, &w, &ImpairmentProfile::ideal(), &[1.0]);
        assert!((mu.mu_c[0] - c(0.5, 0.0)).norm() < 1e-15);
        assert!((mu.mu_p[0] - c(1.0, 0.0)).norm() < 1e-15);
    }

    #[test]
    fn zero_common_precoder_zeroes_common_multipliers() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let (h, sigma) = random_instance(&mut rng, 2, 4, 1.0);
        let w: Vec<_> = (0..2).map(|_| random_vec(&mut rng, 4, 1.0)).collect();
        let mu = update_multipliers(&h, &Array1::zeros(4), &w, &ImpairmentProfile::ideal(), &sigma);
        assert!(mu.mu_c.iter().all(|m| m.norm() == 0.0));
    }

    /// Surrogate value via the assembled constraint at zero slacks.
    fn surrogates_at(
        h: &[Array1<C>],
        imp: &ImpairmentProfile,
        mu: &FpMultipliers,
        sigma: &[f64],
        precoders: &Precoders,
    ) -> (Vec<f64>, Vec<f64>) {
        let cons = assemble_w_constraints(Scheme::Rsma, h, imp, Some(mu), None, 0.0, sigma);
        let v = precoders.stack(Scheme::Rsma);
        let zero = vec![0.0; h.len() + 1];
        let mut sc = Vec::new();
        let mut sp = Vec::new();
        for con in &cons {
            match con.kind {
                ConstraintKind::SlackCap(0) => sc.push(con.value(v.as_slice().unwrap(), &zero)),
                ConstraintKind::SlackCap(_) => sp.push(con.value(v.as_slice().unwrap(), &zero)),
                ConstraintKind::Qos => {}
            }
        }
        (sc, sp)
    }

    #[test]
    fn surrogate_is_tight_at_updated_multipliers() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..100 {
            let (h, sigma) = random_instance(&mut rng, 2, 4, 1.0);
            let precoders = Precoders {
                w_c: random_vec(&mut rng, 4, 1.0),
                w: (0..2).map(|_| random_vec(&mut rng, 4, 1.0)).collect(),
            };
            let imp = ImpairmentProfile::new(0.02, 0.03, 0.3).unwrap();
            let mu = update_multipliers(&h, &precoders.w_c, &precoders.w, &imp, &sigma);
            let sinrs = rsma_sinrs(&h, &precoders.w_c, &precoders.w, &imp, &sigma);
            let (sc, sp) = surrogates_at(&h, &imp, &mu, &sigma, &precoders);
            for k in 0..2 {
                assert!(
                    (sc[k] - sinrs.gamma_c[k]).abs() <= 1e-10 * (1.0 + sinrs.gamma_c[k]),
                    "common surrogate {} vs SINR {}",
                    sc[k],
                    sinrs.gamma_c[k]
                );
                assert!((sp[k] - sinrs.gamma_p[k]).abs() <= 1e-10 * (1.0 + sinrs.gamma_p[k]));
            }
        }
    }

    #[test]
    fn surrogate_lower_bounds_for_perturbed_multipliers() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let (h, sigma) = random_instance(&mut rng, 2, 4, 1.0);
        let precoders = Precoders {
            w_c: random_vec(&mut rng, 4, 1.0),
            w: (0..2).map(|_| random_vec(&mut rng, 4, 1.0)).collect(),
        };
        let imp = ImpairmentProfile::new(0.01, 0.02, 0.5).unwrap();
        let sinrs = rsma_sinrs(&h, &precoders.w_c, &precoders.w, &imp, &sigma);
        let base = update_multipliers(&h, &precoders.w_c, &precoders.w, &imp, &sigma);
        for _ in 0..100 {
            let perturb = |m: &C| m + c(rng.gen_range(-0.5..0.5), rng.gen_range(-0.5..0.5));
            let mu = FpMultipliers {
                mu_c: base.mu_c.iter().map(&perturb).collect(),
                mu_p: base.mu_p.iter().map(&perturb).collect(),
            };
            let (sc, sp) = surrogates_at(&h, &imp, &mu, &sigma, &precoders);
            for k in 0..2 {
                assert!(sc[k] <= sinrs.gamma_c[k] + 1e-10);
                assert!(sp[k] <= sinrs.gamma_p[k] + 1e-10);
            }
        }
    }

    #[test]
    fn single_user_power_split_matches_grid_oracle() {
        // K = 1, M = 1, ideal hardware, h = 1, P = 1, gamma_th = 0: any power
        // split attains Q = log2(2).
        let h = vec![array![c(1.0, 0.0)]];
        let sigma = [1.0];
        let imp = ImpairmentProfile::ideal();
        // Brute-force oracle over the power split.
        let mut best = f64::NEG_INFINITY;
        for i in 0..=1000 {
            let pc = i as f64 / 1000.0;
            let pp = 1.0 - pc;
            let q = (1.0 + pc / (pp + 1.0)).log2() + (1.0 + pp).log2();
            best = best.max(q);
        }
        assert!((best - 1.0).abs() < 1e-12);
        let init = Precoders::mrt_init(&h, 1.0, Scheme::Rsma);
        let out = precoder_fp_loop(&h, &imp, 1.0, 0.0, &sigma, init, &FpLoopConfig::default())
            .unwrap();
        assert!(
            (out.objective - best).abs() < 1e-3,
            "Q = {} vs oracle {best}",
            out.objective
        );
    }

    #[test]
    fn warm_start_at_optimum_is_a_fixed_point() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let (h, sigma) = random_instance(&mut rng, 2, 4, 1.0);
        let imp = ImpairmentProfile::new(0.01, 0.01, 0.1).unwrap();
        let cfg = FpLoopConfig::default();
        let init = Precoders::mrt_init(&h, 1.0, Scheme::Rsma);
        let first = precoder_fp_loop(&h, &imp, 1.0, 0.0, &sigma, init, &cfg).unwrap();
        // Re-run one step from the converged point.
        let mu = update_multipliers(&h, &first.precoders.w_c, &first.precoders.w, &imp, &sigma);
        let step = solve_w_step(
            &WStepInputs {
                scheme: Scheme::Rsma,
                h: &h,
                imp: &imp,
                p_max: 1.0,
                gamma_th: 0.0,
                sigma_sq: &sigma,
            },
            Some(&mu),
            None,
            &first.precoders,
            &cfg.solve,
            &mut SolverWarmState::new(),
        );
        let q_warm = scheme_objective(Scheme::Rsma, &h, &first.precoders, &imp, &sigma, None);
        let q_new = scheme_objective(Scheme::Rsma, &h, &step.precoders, &imp, &sigma, None);
        assert!(q_new >= q_warm - 1e-9);
        assert!((q_new - q_warm).abs() < 1e-4, "fixed point drifted: {q_warm} -> {q_new}");
    }

    #[test]
    fn fp_objective_is_nondecreasing_across_seeds() {
        for seed in 0..100 {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let (h, sigma) = random_instance(&mut rng, 2, 2, 1.0);
            let imp = ImpairmentProfile::new(0.02, 0.02, 0.2).unwrap();
            let init = Precoders::mrt_init(&h, 1.0, Scheme::Rsma);
            let q0 = scheme_objective(Scheme::Rsma, &h, &init, &imp, &sigma, None);
            let out = precoder_fp_loop(&h, &imp, 1.0, 0.0, &sigma, init, &FpLoopConfig::default())
                .unwrap();
            let mut prev = q0;
            for it in &out.trace {
                assert!(
                    it.objective >= prev - 1e-9,
                    "seed {seed}: Q decreased {prev} -> {}",
                    it.objective
                );
                prev = it.objective;
            }
        }
    }

    #[test]
    fn default_solve_matches_long_run_oracle() {
        // Long-run oracle: same algorithm at 10x tighter tolerances and a
        // bigger iteration budget.
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        let (h, sigma) = random_instance(&mut rng, 2, 4, 1.0);
        for imp in [
            ImpairmentProfile::ideal(),
            ImpairmentProfile::new(0.02, 0.03, 0.4).unwrap(),
        ] {
            let init = Precoders::mrt_init(&h, 1.0, Scheme::Rsma);
            let fast =
                precoder_fp_loop(&h, &imp, 1.0, 0.0, &sigma, init.clone(), &FpLoopConfig::default())
                    .unwrap();
            let tight = FpLoopConfig {
                outer_iters: 400,
                q_tolerance: 1e-6,
                solve: ConvexSolveConfig {
                    max_inner_iters: 2000,
                    gradient_tolerance: 1e-8,
                    constraint_tolerance: 1e-7,
                    max_al_rounds: 30,
                    ..ConvexSolveConfig::default()
                },
            };
            let oracle = precoder_fp_loop(&h, &imp, 1.0, 0.0, &sigma, init, &tight).unwrap();
            assert!(
                (fast.objective - oracle.objective).abs() < 1e-4,
                "fast {} vs oracle {}",
                fast.objective,
                oracle.objective
            );
        }
    }

    #[test]
    fn objective_is_scale_invariant_at_link_budget_scales() {
        // h -> c h with sigma -> c^2 sigma leaves all SINRs unchanged; the
        // solver must behave identically at realistic link-budget scales.
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        let (h, sigma) = random_instance(&mut rng, 2, 4, 1.0);
        let imp = ImpairmentProfile::new(0.01, 0.01, 0.2).unwrap();
        let unit = precoder_fp_loop(
            &h,
            &imp,
            1.0,
            0.5,
            &sigma,
            Precoders::mrt_init(&h, 1.0, Scheme::Rsma),
            &FpLoopConfig::default(),
        )
        .unwrap();
        let scale = 1e-7;
        let h_small: Vec<Array1<C>> = h.iter().map(|hk| hk.mapv(|x| x * scale)).collect();
        let sigma_small: Vec<f64> = sigma.iter().map(|s| s * scale * scale).collect();
        let small = precoder_fp_loop(
            &h_small,
            &imp,
            1.0,
            0.5,
            &sigma_small,
            Precoders::mrt_init(&h_small, 1.0, Scheme::Rsma),
            &FpLoopConfig::default(),
        )
        .unwrap();
        assert!(
            (unit.objective - small.objective).abs() < 1e-5 * (1.0 + unit.objective.abs()),
            "unit-scale Q {} vs link-budget-scale Q {}",
            unit.objective,
            small.objective
        );
    }

    #[test]
    fn impossible_qos_is_signaled() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let (h, sigma) = random_instance(&mut rng, 2, 2, 1.0);
        let imp = ImpairmentProfile::ideal();
        let init = Precoders::mrt_init(&h, 1.0, Scheme::Rsma);
        let err = precoder_fp_loop(&h, &imp, 1.0, 1e9, &sigma, init, &FpLoopConfig::default());
        assert!(matches!(err, Err(RismaError::QosInfeasible { .. })));
    }

    #[test]
    fn power_budget_is_respected() {
        let mut rng = ChaCha8Rng::seed_from_u64(25);
        let (h, sigma) = random_instance(&mut rng, 2, 4, 1.0);
        let imp = ImpairmentProfile::new(0.03, 0.01, 0.6).unwrap();
        for p_max in [0.5, 1.0, 4.0] {
            let out = precoder_fp_loop(
                &h,
                &imp,
                p_max,
                0.0,
                &sigma,
                Precoders::mrt_init(&h, p_max, Scheme::Rsma),
                &FpLoopConfig::default(),
            )
            .unwrap();
            assert!(out.precoders.total_power() <= p_max * (1.0 + 1e-9));
        }
    }

    #[test]
    fn sdma_keeps_common_stream_empty() {
        let mut rng = ChaCha8Rng::seed_from_u64(29);
        let (h, sigma) = random_instance(&mut rng, 2, 4, 1.0);
        let imp = ImpairmentProfile::new(0.01, 0.01, 0.9).unwrap();
        let out = fp_loop_for(
            Scheme::Sdma,
            &h,
            &imp,
            1.0,
            0.0,
            &sigma,
            Precoders::mrt_init(&h, 1.0, Scheme::Sdma),
            None,
            &FpLoopConfig::default(),
            &mut SolverWarmState::new(),
        );
        assert_eq!(out.precoders.common_power(), 0.0);
        assert!(out.objective > 0.0);
    }

    #[test]
    fn noma_loop_improves_over_init() {
        let mut rng = ChaCha8Rng::seed_from_u64(33);
        let (h, sigma) = random_instance(&mut rng, 2, 4, 1.0);
        let imp = ImpairmentProfile::new(0.01, 0.01, 0.1).unwrap();
        let order = crate::rate::descending_gain_order(&h);
        let init = Precoders::mrt_init(&h, 1.0, Scheme::Noma);
        let q0 = scheme_objective(Scheme::Noma, &h, &init, &imp, &sigma, Some(&order));
        let out = fp_loop_for(
            Scheme::Noma,
            &h,
            &imp,
            1.0,
            0.0,
            &sigma,
            init,
            Some(&order),
            &FpLoopConfig::default(),
            &mut SolverWarmState::new(),
        );
        assert!(out.objective >= q0 - 1e-9, "NOMA: {q0} -> {}", out.objective);
        assert!(out.precoders.common_power() == 0.0);
    }
}
