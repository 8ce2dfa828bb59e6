//! Alternating optimization between precoders and RIS phases, plus the
//! baseline designs used for robustness comparisons.
//!
//! One outer iteration solves the precoder subproblem by the FP loop at fixed
//! phases, then the phase subproblem by ADMM at fixed precoders. Both
//! subsolvers are warm-started from the current iterate and never return a
//! worse point under the optimizer's model, so the objective trace is
//! nondecreasing and, being bounded by the power budget, converges.
//!
//! The robustness flags control which imperfections the optimizer models.
//! Baselines deliberately misspecify the model (ideal RIS, zero HWI, perfect
//! SIC); the final report is always evaluated under the true hardware model.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use std::f64::consts::PI;

use crate::channel::ChannelRealization;
use crate::error::Result;
use crate::phase::{
    admm_loop, build_noma_quadratic_forms, build_quadratic_forms, AdmmConfig, PhaseProblem,
};
use crate::precoder::{fp_loop_for, FpLoopConfig, Precoders};
use crate::rate::{
    descending_gain_order, effective_channels_from_phi, evaluate_noma, evaluate_rsma,
    BeamformingState, ImpairmentProfile, RateReport, RisMode, Scheme,
};
use crate::ris::{reflection_vector, PhaseVector, RisHardwareProfile};
use crate::solver::SolverWarmState;

/// Which imperfections the optimizer models. Evaluation always uses the true
/// model regardless.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub struct RobustnessFlags {
    pub model_hwi: bool,
    pub model_sic: bool,
    pub model_coupling: bool,
}

impl RobustnessFlags {
    /// Fully robust: every imperfection modeled.
    pub fn all() -> Self {
        Self {
            model_hwi: true,
            model_sic: true,
            model_coupling: true,
        }
    }

    /// The non-robust reference design: models HWI but ignores imperfect SIC
    /// and amplitude-phase coupling.
    pub fn hwi_only() -> Self {
        Self {
            model_hwi: true,
            model_sic: false,
            model_coupling: false,
        }
    }

    /// Ignores the amplitude-phase coupling only.
    pub fn ideal_ris() -> Self {
        Self {
            model_hwi: true,
            model_sic: true,
            model_coupling: false,
        }
    }
}

/// Outer-loop configuration.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct AoConfig {
    pub scheme: Scheme,
    pub flags: RobustnessFlags,
    pub max_outer_iters: usize,
    /// Stop when the model objective changes by less than this (bits/s/Hz).
    pub outer_tolerance: f64,
    pub p_max: f64,
    pub gamma_th: f64,
    /// Force the NOMA decoding order to user-index order instead of the
    /// default descending effective-channel-gain order.
    pub force_index_order: bool,
    pub fp: FpLoopConfig,
    pub admm: AdmmConfig,
}

impl AoConfig {
    pub fn new(scheme: Scheme, p_max: f64, gamma_th: f64) -> Self {
        Self {
            scheme,
            flags: RobustnessFlags::all(),
            max_outer_iters: 30,
            outer_tolerance: 1e-4,
            p_max,
            gamma_th,
            force_index_order: false,
            fp: FpLoopConfig::default(),
            admm: AdmmConfig::default(),
        }
    }
}

/// One outer-iteration record.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize)]
pub struct AoIter {
    pub iteration: usize,
    /// Objective under the optimizer's model.
    pub model_sum_rate: f64,
    /// Sum rate of the same iterate under the true hardware model.
    pub true_sum_rate: f64,
    pub common_power: f64,
    pub admm_primal_residual: f64,
    pub fp_iterations: usize,
}

/// Full AO result: the designed state, its trace, and the true-model report.
#[derive(Debug, Clone)]
pub struct AoOutcome {
    pub state: BeamformingState,
    pub trace: Vec<AoIter>,
    /// Evaluation of the final state under the true hardware model.
    pub report: RateReport,
    /// Whether the optimizer's final point met the QoS threshold.
    pub qos_feasible: bool,
    pub qos_residual: f64,
    pub outer_iterations: usize,
    pub converged: bool,
}

/// Fraction of transmit power on the common stream.
pub fn common_stream_share(state: &BeamformingState) -> f64 {
    let total = state.total_power();
    if total <= 0.0 {
        return 0.0;
    }
    state.w_c.iter().map(|v| v.norm_sqr()).sum::<f64>() / total
}

fn masked_impairments(imp: &ImpairmentProfile, flags: &RobustnessFlags) -> ImpairmentProfile {
    ImpairmentProfile {
        m_t: if flags.model_hwi { imp.m_t } else { 0.0 },
        m_r: if flags.model_hwi { imp.m_r } else { 0.0 },
        delta_sic: if flags.model_sic { imp.delta_sic } else { 0.0 },
    }
}

fn random_phases(n: usize, rng: &mut impl Rng) -> PhaseVector {
    PhaseVector::new((0..n).map(|_| rng.gen_range(-PI..PI)).collect())
        .expect("uniform draws are finite")
}

/// Evaluate a finished design under the true hardware model.
pub fn evaluate_true_model(
    realization: &ChannelRealization,
    state: &BeamformingState,
    profile: &RisHardwareProfile,
    true_imp: &ImpairmentProfile,
    scheme: Scheme,
    force_index_order: bool,
) -> Result<RateReport> {
    let deployed = BeamformingState {
        ris_mode: RisMode::Practical,
        ..state.clone()
    };
    match scheme {
        Scheme::Rsma | Scheme::Sdma => evaluate_rsma(realization, &deployed, true_imp, profile),
        Scheme::Noma => {
            let forced: Vec<usize> = (0..realization.k_users()).collect();
            evaluate_noma(
                realization,
                &deployed,
                true_imp,
                profile,
                force_index_order.then_some(forced.as_slice()),
            )
        }
    }
}

/// Run the alternating optimization from an optional warm-start state.
///
/// `seed` controls the random phase initialization (ignored when a warm
/// start is supplied). QoS infeasibility is reported in the outcome rather
/// than aborting: campaigns skip robust-infeasible trials while baselines
/// keep their best-effort designs.
pub fn run_ao_from(
    realization: &ChannelRealization,
    profile: &RisHardwareProfile,
    true_imp: &ImpairmentProfile,
    config: &AoConfig,
    seed: u64,
    init: Option<&BeamformingState>,
) -> Result<AoOutcome> {
    let n = realization.n_elements();
    let imp_opt = masked_impairments(true_imp, &config.flags);
    let design_profile = if config.flags.model_coupling {
        *profile
    } else {
        RisHardwareProfile::ideal()
    };
    let design_mode = if config.flags.model_coupling {
        RisMode::Practical
    } else {
        RisMode::Ideal
    };

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut theta = match init {
        Some(s) => s.theta.clone(),
        None => random_phases(n, &mut rng),
    };
    let reflect = |theta: &PhaseVector| reflection_vector(&design_profile, theta).phi;
    let mut h = effective_channels_from_phi(realization, &reflect(&theta))?;
    let mut precoders = match init {
        Some(s) => Precoders {
            w_c: s.w_c.clone(),
            w: s.w.clone(),
        },
        None => Precoders::mrt_init(&h, config.p_max, config.scheme),
    };
    // NOMA decode order fixed for the whole optimization run.
    let noma_order: Option<Vec<usize>> = match config.scheme {
        Scheme::Noma => Some(if config.force_index_order {
            (0..realization.k_users()).collect()
        } else {
            descending_gain_order(&h)
        }),
        _ => None,
    };

    let mut warm_w = SolverWarmState::new();
    let mut trace: Vec<AoIter> = Vec::new();
    let mut f_prev = f64::NEG_INFINITY;
    let mut qos_feasible = false;
    let mut qos_residual = f64::INFINITY;
    let mut converged = false;
    let mut outer_iterations = 0;

    for iteration in 0..config.max_outer_iters {
        outer_iterations = iteration + 1;
        // Precoder block at fixed phases.
        let fp = fp_loop_for(
            config.scheme,
            &h,
            &imp_opt,
            config.p_max,
            config.gamma_th,
            &realization.noise_power,
            precoders,
            noma_order.as_deref(),
            &config.fp,
            &mut warm_w,
        );
        precoders = fp.precoders;
        qos_feasible = fp.feasible;
        qos_residual = fp.qos_residual;

        // Phase block at fixed precoders.
        let (model_sum_rate, admm_residual) = match config.scheme {
            Scheme::Rsma | Scheme::Sdma => {
                let forms = build_quadratic_forms(realization, &precoders, &imp_opt)?;
                let problem = PhaseProblem::RsmaLike {
                    forms: &forms,
                    scheme: config.scheme,
                };
                let out = admm_loop(
                    &problem,
                    &design_profile,
                    &theta,
                    config.gamma_th,
                    &config.admm,
                )?;
                theta = out.theta;
                qos_feasible = qos_feasible && out.qos_feasible;
                (out.objective, out.final_primal_residual)
            }
            Scheme::Noma => {
                let order = noma_order.as_deref().expect("NOMA order is set");
                let forms =
                    build_noma_quadratic_forms(realization, &precoders.w, &imp_opt, order)?;
                let problem = PhaseProblem::Noma { forms: &forms };
                let out = admm_loop(
                    &problem,
                    &design_profile,
                    &theta,
                    config.gamma_th,
                    &config.admm,
                )?;
                theta = out.theta;
                qos_feasible = qos_feasible && out.qos_feasible;
                (out.objective, out.final_primal_residual)
            }
        };
        h = effective_channels_from_phi(realization, &reflect(&theta))?;

        // True-model snapshot of the current iterate for the trace.
        let snapshot = BeamformingState {
            w_c: precoders.w_c.clone(),
            w: precoders.w.clone(),
            theta: theta.clone(),
            ris_mode: design_mode,
        };
        let true_sum_rate = evaluate_true_model(
            realization,
            &snapshot,
            profile,
            true_imp,
            config.scheme,
            config.force_index_order,
        )?
        .sum_rate;
        trace.push(AoIter {
            iteration,
            model_sum_rate,
            true_sum_rate,
            common_power: precoders.common_power(),
            admm_primal_residual: admm_residual,
            fp_iterations: fp.trace.len(),
        });
        if (model_sum_rate - f_prev).abs() < config.outer_tolerance {
            converged = true;
            break;
        }
        f_prev = model_sum_rate;
    }

    let state = BeamformingState {
        w_c: precoders.w_c,
        w: precoders.w,
        theta,
        ris_mode: design_mode,
    };
    let report = evaluate_true_model(
        realization,
        &state,
        profile,
        true_imp,
        config.scheme,
        config.force_index_order,
    )?;
    Ok(AoOutcome {
        state,
        trace,
        report,
        qos_feasible,
        qos_residual,
        outer_iterations,
        converged,
    })
}

/// Run the alternating optimization with the default initialization.
pub fn run_ao(
    realization: &ChannelRealization,
    profile: &RisHardwareProfile,
    true_imp: &ImpairmentProfile,
    config: &AoConfig,
    seed: u64,
) -> Result<AoOutcome> {
    run_ao_from(realization, profile, true_imp, config, seed, None)
}

/// Run a baseline: the same machinery under a deliberately misspecified
/// model (scheme and robustness flags override the template config). The
/// report inside the outcome is the true-model evaluation; infeasible
/// optimizer runs keep their best-effort state.
pub fn run_baseline(
    realization: &ChannelRealization,
    profile: &RisHardwareProfile,
    true_imp: &ImpairmentProfile,
    template: &AoConfig,
    scheme: Scheme,
    flags: RobustnessFlags,
    seed: u64,
) -> Result<AoOutcome> {
    let config = AoConfig {
        scheme,
        flags,
        ..template.clone()
    };
    run_ao(realization, profile, true_imp, &config, seed)
}

/// Loose sanity cap on any reported sum rate: (K+1) point-to-point capacities
/// at the best effective channel.
pub fn sum_rate_upper_bound(
    realization: &ChannelRealization,
    state: &BeamformingState,
    profile: &RisHardwareProfile,
    p_max: f64,
) -> f64 {
    let deployed = BeamformingState {
        ris_mode: RisMode::Practical,
        ..state.clone()
    };
    let h = effective_channels_from_phi(realization, &deployed.reflection(profile))
        .expect("dimensions already validated");
    let best: f64 = h
        .iter()
        .zip(&realization.noise_power)
        .map(|(hk, sigma)| hk.iter().map(|v| v.norm_sqr()).sum::<f64>() / sigma)
        .fold(0.0, f64::max);
    let k = realization.k_users() as f64;
    (k + 1.0) * (1.0 + p_max * best).log2()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::channel::{draw_channel, FadingSpec, ScenarioGeometry};
    use ndarray::Array1;
    use num_complex::Complex64;

    fn small_setup(
        n: usize,
        m: usize,
        k: usize,
        seed: u64,
    ) -> (ChannelRealization, RisHardwareProfile, ImpairmentProfile) {
        let geom = ScenarioGeometry {
            n_elements: n,
            m_antennas: m,
            k_users: k,
            ..ScenarioGeometry::reference()
        };
        let realization = draw_channel(&geom, &FadingSpec::rician(), 1e-14, seed).unwrap();
        (
            realization,
            RisHardwareProfile::reference(),
            ImpairmentProfile::new(0.01, 0.01, 0.04).unwrap(),
        )
    }

    fn fast_config(scheme: Scheme) -> AoConfig {
        let mut cfg = AoConfig::new(scheme, 1.0, 0.0);
        cfg.max_outer_iters = 12;
        cfg
    }

    #[test]
    fn tiny_instance_matches_exhaustive_grid() {
        // K = 1, M = 1, N = 1, ideal hardware: the optimum is the best
        // amplitude times the best power split, found by brute force.
        let (realization, profile, _) = small_setup(1, 1, 1, 3);
        let imp = ImpairmentProfile::ideal();
        let g0 = realization.g[(0, 0)];
        let f0 = realization.f[0][0];
        let sigma = realization.noise_power[0];
        let mut oracle = f64::NEG_INFINITY;
        for ti in 0..2000 {
            let t = -PI + 2.0 * PI * ti as f64 / 2000.0;
            let gain = (g0.conj() * f0).norm_sqr() * profile.amplitude(t).powi(2) / sigma;
            for pi in 0..=100 {
                let pc = pi as f64 / 100.0;
                let pp = 1.0 - pc;
                let q = (1.0 + pc * gain / (pp * gain + 1.0)).log2() + (1.0 + pp * gain).log2();
                oracle = oracle.max(q);
            }
        }
        let cfg = fast_config(Scheme::Rsma);
        let out = run_ao(&realization, &profile, &imp, &cfg, 7).unwrap();
        assert!(
            (out.report.sum_rate - oracle).abs() < 1e-2 * oracle,
            "AO {} vs exhaustive {oracle}",
            out.report.sum_rate
        );
    }

    #[test]
    fn trace_is_monotone_when_model_matches_truth() {
        for seed in 0..10 {
            let (realization, profile, imp) = small_setup(8, 4, 2, 50 + seed);
            let cfg = fast_config(Scheme::Rsma);
            let out = run_ao(&realization, &profile, &imp, &cfg, seed).unwrap();
            let mut prev = f64::NEG_INFINITY;
            for it in &out.trace {
                assert!(
                    it.model_sum_rate >= prev - 1e-8,
                    "seed {seed}: trace decreased {prev} -> {}",
                    it.model_sum_rate
                );
                // Flags all true: model and true rates coincide.
                assert!(
                    (it.model_sum_rate - it.true_sum_rate).abs() < 1e-9,
                    "model {} vs true {}",
                    it.model_sum_rate,
                    it.true_sum_rate
                );
                prev = it.model_sum_rate;
            }
            assert!(out.report.sum_rate > 0.0);
        }
    }

    #[test]
    fn warm_started_rerun_is_a_fixed_point() {
        let (realization, profile, imp) = small_setup(8, 4, 2, 77);
        let cfg = fast_config(Scheme::Rsma);
        let first = run_ao(&realization, &profile, &imp, &cfg, 1).unwrap();
        let mut one_shot = cfg.clone();
        one_shot.max_outer_iters = 1;
        let second =
            run_ao_from(&realization, &profile, &imp, &one_shot, 1, Some(&first.state)).unwrap();
        assert!(
            (second.report.sum_rate - first.report.sum_rate).abs() < 1e-6,
            "fixed point drifted {} -> {}",
            first.report.sum_rate,
            second.report.sum_rate
        );
    }

    #[test]
    fn baseline_with_all_flags_equals_run_ao() {
        let (realization, profile, imp) = small_setup(6, 3, 2, 91);
        let cfg = fast_config(Scheme::Rsma);
        let direct = run_ao(&realization, &profile, &imp, &cfg, 5).unwrap();
        let baseline = run_baseline(
            &realization,
            &profile,
            &imp,
            &cfg,
            Scheme::Rsma,
            RobustnessFlags::all(),
            5,
        )
        .unwrap();
        assert_eq!(direct.report.sum_rate, baseline.report.sum_rate);
        assert_eq!(direct.state.theta, baseline.state.theta);
    }

    #[test]
    fn sdma_report_has_no_common_rate() {
        let (realization, profile, imp) = small_setup(6, 3, 2, 101);
        let cfg = fast_config(Scheme::Sdma);
        let out = run_ao(&realization, &profile, &imp, &cfg, 9).unwrap();
        assert_eq!(out.report.common_rate, 0.0);
        assert_eq!(common_stream_share(&out.state), 0.0);
        assert!(out.report.sum_rate > 0.0);
    }

    #[test]
    fn common_stream_share_extremes() {
        let (realization, _, _) = small_setup(4, 2, 2, 111);
        let theta = PhaseVector::new(vec![0.0; 4]).unwrap();
        let all_common = BeamformingState {
            w_c: Array1::from_vec(vec![Complex64::new(1.0, 0.0), Complex64::new(0.0, 0.0)]),
            w: vec![Array1::zeros(2); 2],
            theta: theta.clone(),
            ris_mode: RisMode::Practical,
        };
        assert_eq!(common_stream_share(&all_common), 1.0);
        let empty = BeamformingState {
            w_c: Array1::zeros(2),
            w: vec![Array1::zeros(2); 2],
            theta,
            ris_mode: RisMode::Practical,
        };
        assert_eq!(common_stream_share(&empty), 0.0);
        let _ = realization;
    }

    #[test]
    fn rsma_warm_started_from_sdma_dominates_it() {
        let (realization, profile, imp) = small_setup(8, 4, 2, 121);
        let cfg_sdma = fast_config(Scheme::Sdma);
        let sdma = run_ao(&realization, &profile, &imp, &cfg_sdma, 3).unwrap();
        let cfg_rsma = fast_config(Scheme::Rsma);
        let rsma =
            run_ao_from(&realization, &profile, &imp, &cfg_rsma, 3, Some(&sdma.state)).unwrap();
        assert!(
            rsma.report.sum_rate >= sdma.report.sum_rate - 1e-6,
            "RSMA {} fell below SDMA {}",
            rsma.report.sum_rate,
            sdma.report.sum_rate
        );
    }

    #[test]
    fn noma_pipeline_runs_and_reports() {
        let (realization, profile, imp) = small_setup(6, 3, 2, 131);
        let cfg = fast_config(Scheme::Noma);
        let out = run_ao(&realization, &profile, &imp, &cfg, 11).unwrap();
        assert_eq!(out.report.common_rate, 0.0);
        assert!(out.report.sum_rate > 0.0);
        assert!(out.state.w.iter().all(|w| w.len() == 3));
        // Forced index order also runs.
        let mut forced = cfg.clone();
        forced.force_index_order = true;
        let out2 = run_ao(&realization, &profile, &imp, &forced, 11).unwrap();
        assert!(out2.report.sum_rate > 0.0);
    }

    #[test]
    fn reports_respect_the_loose_upper_bound() {
        for seed in 0..5 {
            let (realization, profile, imp) = small_setup(8, 4, 2, 140 + seed);
            let cfg = fast_config(Scheme::Rsma);
            let out = run_ao(&realization, &profile, &imp, &cfg, seed).unwrap();
            let bound = sum_rate_upper_bound(&realization, &out.state, &profile, cfg.p_max);
            assert!(
                out.report.sum_rate <= bound,
                "sum rate {} above cap {bound}",
                out.report.sum_rate
            );
        }
    }

    #[test]
    fn misspecified_baseline_evaluates_under_true_model() {
        let (realization, profile, _) = small_setup(8, 4, 2, 151);
        // Strong coupling and SIC imperfection so the misspecification bites.
        let imp = ImpairmentProfile::new(0.05, 0.05, 0.5).unwrap();
        let cfg = fast_config(Scheme::Rsma);
        let naive = run_baseline(
            &realization,
            &profile,
            &imp,
            &cfg,
            Scheme::Rsma,
            RobustnessFlags {
                model_hwi: false,
                model_sic: false,
                model_coupling: false,
            },
            13,
        )
        .unwrap();
        // The design state carries the ideal mode, but the report reflects
        // practical amplitudes and true impairments.
        assert_eq!(naive.state.ris_mode, RisMode::Ideal);
        assert!(naive.report.sum_rate > 0.0);
        let bound = sum_rate_upper_bound(&realization, &naive.state, &profile, cfg.p_max);
        assert!(naive.report.sum_rate <= bound);
    }
}
