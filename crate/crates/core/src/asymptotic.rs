//! Asymptotic SNR of ideal-RIS phase designs applied to practical RIS
//! hardware, in the single-antenna-BS scenario with channels `f` and `g`.
//!
//! With ideal elements the optimal phases align every reflected path and the
//! expected receive SNR grows as
//!
//! ```text
//! gamma_I = tau_f^2 tau_g^2 / 16 * (N^2 pi^2 + N (16 - pi^2)) * P / sigma^2.
//! ```
//!
//! Applying those same phases to coupled-amplitude elements scales the
//! coherent sum by `beta(theta*)`; because the aligned phases are uniform on
//! the circle, the degradation factor is governed by the uniform-phase
//! amplitude moments. As `N -> infinity` the ratio tends to `E[beta]^2`,
//! which is what the closed form here exposes; at finite `N` both first and
//! second moments enter. A Monte Carlo estimator validates both expressions
//! and reproduces the square-law growth plots.

use rayon::prelude::*;

use crate::channel::draw_iid_pair;
use crate::error::{Result, RismaError};
use crate::ris::{wrap_angle, RisHardwareProfile};
use crate::stats::mean_and_stderr;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use std::f64::consts::PI;

/// Inputs of the asymptotic study.
#[derive(Debug, Clone)]
pub struct AsymptoticScenario {
    pub n_elements: usize,
    pub tau_f_sq: f64,
    pub tau_g_sq: f64,
    /// `P_max / sigma^2`, linear.
    pub snr_budget: f64,
    /// Taylor truncation order for the amplitude moments.
    pub taylor_order: usize,
    pub profile: RisHardwareProfile,
    /// Optional exponential correlation across RIS elements.
    pub correlation: Option<f64>,
}

impl AsymptoticScenario {
    /// Unit-variance channels, unit SNR budget, order-5 truncation.
    pub fn new(n_elements: usize, profile: RisHardwareProfile) -> Self {
        Self {
            n_elements,
            tau_f_sq: 1.0,
            tau_g_sq: 1.0,
            snr_budget: 1.0,
            taylor_order: 5,
            profile,
            correlation: None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_elements == 0 {
            return Err(RismaError::InvalidParameter("N must be >= 1".into()));
        }
        if self.tau_f_sq <= 0.0 || self.tau_g_sq <= 0.0 || self.snr_budget <= 0.0 {
            return Err(RismaError::InvalidParameter(
                "channel variances and SNR budget must be positive".into(),
            ));
        }
        if self.taylor_order == 0 {
            return Err(RismaError::InvalidParameter(
                "Taylor order must be >= 1".into(),
            ));
        }
        Ok(())
    }
}

/// Closed-form asymptotic SNR of the ideal unit-modulus RIS.
pub fn ideal_asymptotic_snr(scenario: &AsymptoticScenario) -> f64 {
    let n = scenario.n_elements as f64;
    scenario.tau_f_sq * scenario.tau_g_sq * scenario.snr_budget / 16.0
        * (n * n * PI * PI + n * (16.0 - PI * PI))
}

/// Practical-to-ideal asymptotic SNR ratio in the large-`N` limit:
/// `eta = E[beta]^2` with the order-`S` truncated mean.
pub fn eta_ratio(scenario: &AsymptoticScenario) -> f64 {
    let mean = scenario
        .profile
        .taylor_mean_amplitude(scenario.taylor_order);
    mean * mean
}

/// Finite-`N` practical-to-ideal ratio; converges to [`eta_ratio`] as
/// `N -> infinity`:
///
/// ```text
/// eta_N = (pi^2 E[b]^2 + (16 E[b^2] - pi^2 E[b]^2) / N) / (pi^2 + (16 - pi^2) / N)
/// ```
pub fn eta_ratio_finite_n(scenario: &AsymptoticScenario) -> f64 {
    let m1 = scenario
        .profile
        .taylor_mean_amplitude(scenario.taylor_order);
    let m2 = scenario
        .profile
        .taylor_mean_amplitude_sq(scenario.taylor_order);
    let n = scenario.n_elements as f64;
    let pi2 = PI * PI;
    (pi2 * m1 * m1 + (16.0 * m2 - pi2 * m1 * m1) / n) / (pi2 + (16.0 - pi2) / n)
}

/// Monte Carlo estimate with its standard error.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct McEstimate {
    pub mean: f64,
    pub std_error: f64,
    pub trials: usize,
}

impl McEstimate {
    /// |self - reference| measured in standard errors.
    pub fn sigmas_from(&self, reference: f64) -> f64 {
        (self.mean - reference).abs() / self.std_error
    }
}

/// Monte Carlo estimate of the practical asymptotic SNR: draws channel
/// pairs, aligns phases ideally (`theta_n* = -arg(f_n^* g_n)`), applies the
/// coupled amplitudes, and averages the squared coherent sum.
///
/// Trials map to independent RNG streams of the seed, and the reduction is a
/// deterministic pairwise sum over the trial-indexed buffer, so results do
/// not depend on the worker count.
pub fn practical_asymptotic_snr_mc(
    scenario: &AsymptoticScenario,
    trials: usize,
    seed: u64,
) -> Result<McEstimate> {
    scenario.validate()?;
    if trials == 0 {
        return Err(RismaError::InvalidParameter("trials must be >= 1".into()));
    }
    let tau_f = scenario.tau_f_sq.sqrt();
    let tau_g = scenario.tau_g_sq.sqrt();
    let profile = scenario.profile;
    let values: Vec<f64> = (0..trials)
        .into_par_iter()
        .map(|trial| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(trial as u64);
            let (f, g) = draw_iid_pair(
                scenario.n_elements,
                tau_f,
                tau_g,
                scenario.correlation,
                &mut rng,
            );
            let mut coherent = 0.0;
            for (fn_, gn) in f.iter().zip(g.iter()) {
                let theta_star = wrap_angle(-(fn_.conj() * gn).arg());
                coherent += fn_.norm() * profile.amplitude(theta_star) * gn.norm();
            }
            coherent * coherent * scenario.snr_budget
        })
        .collect();
    let (mean, std_error) = mean_and_stderr(&values);
    Ok(McEstimate {
        mean,
        std_error,
        trials,
    })
}
