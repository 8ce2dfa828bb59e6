//! Practical RIS element model.
//!
//! A practical reflecting element cannot hold unit amplitude across its phase
//! range: the reflection amplitude is coupled to the applied phase shift
//! through the parallel-resonant-circuit response
//!
//! ```text
//! beta(theta) = rho * (sin(theta - delta) + 1)^alpha + beta_min,
//! rho = (1 - beta_min) / 2^alpha,
//! ```
//!
//! so `beta` swings between `beta_min` (at `theta = delta - pi/2`) and `1`
//! (at `theta = delta + pi/2`). This module provides the coupling function,
//! reflection-coefficient assembly for both the ideal (unit-modulus) and the
//! practical model, and closed-form truncated-Taylor moments of `beta` under
//! a uniform phase distribution, which drive the asymptotic SNR analysis.

use num_complex::Complex64;
use std::f64::consts::PI;

use crate::error::{Result, RismaError};

/// Circuit constants of a practical RIS element and the derived scale `rho`.
///
/// Immutable after construction; `rho = (1 - beta_min) / 2^alpha` is computed
/// once so the amplitude formula never re-derives it.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RisHardwareProfile {
    beta_min: f64,
    delta: f64,
    alpha: f64,
    rho: f64,
}

impl RisHardwareProfile {
    /// Build a profile from the circuit constants.
    ///
    /// Requires `0 <= beta_min <= 1`, `alpha >= 0`, `delta >= 0`.
    pub fn new(beta_min: f64, delta: f64, alpha: f64) -> Result<Self> {
        if !(0.0..=1.0).contains(&beta_min) || !beta_min.is_finite() {
            return Err(RismaError::InvalidParameter(format!(
                "beta_min must lie in [0, 1], got {beta_min}"
            )));
        }
        if !(alpha >= 0.0 && alpha.is_finite()) {
            return Err(RismaError::InvalidParameter(format!(
                "alpha must be >= 0, got {alpha}"
            )));
        }
        if !(delta >= 0.0 && delta.is_finite()) {
            return Err(RismaError::InvalidParameter(format!(
                "delta must be >= 0, got {delta}"
            )));
        }
        let rho = (1.0 - beta_min) / 2f64.powf(alpha);
        Ok(Self {
            beta_min,
            delta,
            alpha,
            rho,
        })
    }

    /// Unit-amplitude profile: coupling collapses and `beta == 1` everywhere.
    pub fn ideal() -> Self {
        Self::new(1.0, 0.0, 1.0).expect("ideal profile is valid")
    }

    /// Measured constants used throughout the reference experiments:
    /// `beta_min = 0.2`, `delta = 0.43 pi`, `alpha = 1.6`.
    pub fn reference() -> Self {
        Self::new(0.2, 0.43 * PI, 1.6).expect("reference profile is valid")
    }

    pub fn beta_min(&self) -> f64 {
        self.beta_min
    }

    pub fn delta(&self) -> f64 {
        self.delta
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    pub fn rho(&self) -> f64 {
        self.rho
    }

    /// Reflection amplitude `beta(theta)` for any real phase (2*pi-periodic).
    pub fn amplitude(&self, theta: f64) -> f64 {
        self.rho * ((theta - self.delta).sin() + 1.0).powf(self.alpha) + self.beta_min
    }

    /// Closed-form `E[beta]` for `theta ~ Uniform[0, 2pi)` using the order-`s`
    /// truncated Taylor expansion of `(1 + sin)^alpha`:
    ///
    /// ```text
    /// E[beta] = rho * B + beta_min,
    /// B = 1 + sum_{k=1}^{floor(s/2)} prod_{t=0}^{2k-1}(alpha - t) / (2^{2k} (k!)^2).
    /// ```
    pub fn taylor_mean_amplitude(&self, order: usize) -> f64 {
        assert!(order >= 1, "truncation order must be >= 1");
        self.rho * taylor_b(self.alpha, order) + self.beta_min
    }

    /// Closed-form `E[beta^2]` for `theta ~ Uniform[0, 2pi)` at truncation
    /// order `s`.
    ///
    /// Expanding `beta^2 = rho^2 (1+sin)^{2 alpha} + 2 rho beta_min (1+sin)^alpha
    /// + beta_min^2` and averaging the complex-exponential form of the series
    /// termwise (only terms whose oscillatory exponents cancel survive) gives
    ///
    /// ```text
    /// E[beta^2] = rho^2 (2B - 1 + C) + 2 rho beta_min B + beta_min^2,
    /// C = sum over (s1,l1,s2,l2) with s1-2*l1 = 2*l2-s2 of D_{s1,l1} D_{s2,l2}.
    /// ```
    ///
    /// The `D` products are carried in complex arithmetic; the sum is real by
    /// conjugate symmetry and an imaginary residue above 1e-9 panics.
    pub fn taylor_mean_amplitude_sq(&self, order: usize) -> f64 {
        assert!(order >= 1, "truncation order must be >= 1");
        let b = taylor_b(self.alpha, order);
        let c = taylor_c(self.alpha, self.delta, order);
        let scale = 1.0 + self.rho.abs() + self.beta_min;
        assert!(
            c.im.abs() < 1e-9 * scale,
            "imaginary residue {:.3e} in E[beta^2]; the moment must be real",
            c.im
        );
        self.rho * self.rho * (2.0 * b - 1.0 + c.re)
            + 2.0 * self.rho * self.beta_min * b
            + self.beta_min * self.beta_min
    }
}

/// `B = 1 + sum_{k=1}^{floor(s/2)} prod_{t=0}^{2k-1}(alpha - t) / (2^{2k} (k!)^2)`.
fn taylor_b(alpha: f64, order: usize) -> f64 {
    let mut b = 1.0;
    for k in 1..=(order / 2) {
        b += falling_product(alpha, 2 * k) / (4f64.powi(k as i32) * factorial(k).powi(2));
    }
    b
}

/// Series coefficient of `e^{j (s - 2l) theta}` in the order-`s` expansion:
/// `D_{s,l} = prod_{t=0}^{s-1}(alpha-t)/s! * (2j)^{-s} * C(s,l) * (-1)^l * e^{j(2l-s) delta}`.
fn d_coefficient(alpha: f64, delta: f64, s: usize, l: usize) -> Complex64 {
    let two_j_pow = Complex64::new(0.0, 2.0).powi(s as i32);
    let binom = factorial(s) / (factorial(l) * factorial(s - l));
    let sign = if l % 2 == 0 { 1.0 } else { -1.0 };
    let phase = Complex64::from_polar(1.0, (2.0 * l as f64 - s as f64) * delta);
    Complex64::new(falling_product(alpha, s) / factorial(s), 0.0) / two_j_pow * binom * sign * phase
}

/// Cross-term of the squared series: only exponent-cancelling index pairs
/// survive the uniform-phase expectation.
fn taylor_c(alpha: f64, delta: f64, order: usize) -> Complex64 {
    let mut c = Complex64::new(0.0, 0.0);
    for s1 in 1..=order {
        for l1 in 0..=s1 {
            let e1 = s1 as i64 - 2 * l1 as i64;
            let d1 = d_coefficient(alpha, delta, s1, l1);
            for s2 in 1..=order {
                for l2 in 0..=s2 {
                    if e1 == 2 * l2 as i64 - s2 as i64 {
                        c += d1 * d_coefficient(alpha, delta, s2, l2);
                    }
                }
            }
        }
    }
    c
}

fn falling_product(alpha: f64, terms: usize) -> f64 {
    (0..terms).fold(1.0, |acc, t| acc * (alpha - t as f64))
}

fn factorial(n: usize) -> f64 {
    (1..=n).fold(1.0, |acc, k| acc * k as f64)
}

/// Wrap an angle into `[-pi, pi]`.
pub fn wrap_angle(theta: f64) -> f64 {
    let wrapped = (theta + PI).rem_euclid(2.0 * PI) - PI;
    // rem_euclid can land exactly on 2*pi for inputs a hair below it
    if wrapped > PI {
        wrapped - 2.0 * PI
    } else {
        wrapped
    }
}

/// Vector of per-element phase shifts, canonicalized into `[-pi, pi]`.
#[derive(Debug, Clone, PartialEq)]
pub struct PhaseVector {
    theta: Vec<f64>,
}

impl PhaseVector {
    /// Wraps every entry into `[-pi, pi]`; rejects non-finite angles.
    pub fn new(theta: Vec<f64>) -> Result<Self> {
        if theta.iter().any(|t| !t.is_finite()) {
            return Err(RismaError::InvalidParameter(
                "phase shifts must be finite".into(),
            ));
        }
        Ok(Self {
            theta: theta.into_iter().map(wrap_angle).collect(),
        })
    }

    pub fn len(&self) -> usize {
        self.theta.len()
    }

    pub fn is_empty(&self) -> bool {
        self.theta.is_empty()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.theta
    }
}

/// Per-element complex reflection coefficients `phi_n = beta_n e^{j theta_n}`.
#[derive(Debug, Clone, PartialEq)]
pub struct ReflectionVector {
    pub phi: Vec<Complex64>,
}

/// Assemble reflection coefficients under the practical coupling model:
/// `phi_n = beta(theta_n) e^{j theta_n}`.
pub fn reflection_vector(profile: &RisHardwareProfile, theta: &PhaseVector) -> ReflectionVector {
    ReflectionVector {
        phi: theta
            .as_slice()
            .iter()
            .map(|&t| Complex64::from_polar(profile.amplitude(t), t))
            .collect(),
    }
}

/// Assemble unit-modulus reflection coefficients `phi_n = e^{j theta_n}`.
pub fn reflection_vector_ideal(theta: &PhaseVector) -> ReflectionVector {
    ReflectionVector {
        phi: theta
            .as_slice()
            .iter()
            .map(|&t| Complex64::from_polar(1.0, t))
            .collect(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn reference() -> RisHardwareProfile {
        RisHardwareProfile::reference()
    }

    /// Monte Carlo oracle: E[beta^p] over uniform theta draws.
    fn mc_amplitude_moment(profile: &RisHardwareProfile, p: i32, samples: usize, seed: u64) -> f64 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut acc = 0.0;
        for _ in 0..samples {
            let theta = rng.gen_range(0.0..2.0 * PI);
            acc += profile.amplitude(theta).powi(p);
        }
        acc / samples as f64
    }

    #[test]
    fn profile_rejects_invalid_fields() {
        assert!(RisHardwareProfile::new(-0.1, 0.0, 1.0).is_err());
        assert!(RisHardwareProfile::new(1.1, 0.0, 1.0).is_err());
        assert!(RisHardwareProfile::new(0.2, -1.0, 1.0).is_err());
        assert!(RisHardwareProfile::new(0.2, 0.0, -0.5).is_err());
        assert!(RisHardwareProfile::new(0.2, 0.0, f64::NAN).is_err());
    }

    #[test]
    fn rho_matches_definition() {
        let p = reference();
        assert!((p.rho() - 0.8 / 2f64.powf(1.6)).abs() < 1e-16);
    }

    #[test]
    fn amplitude_attains_bounds_at_quadrature_points() {
        let p = reference();
        assert!((p.amplitude(p.delta() + PI / 2.0) - 1.0).abs() < 1e-12);
        assert!((p.amplitude(p.delta() - PI / 2.0) - 0.2).abs() < 1e-12);
    }

    #[test]
    fn amplitude_at_zero_matches_scalar_oracle() {
        // Independent high-precision scalar evaluation of the coupling formula.
        let p = reference();
        assert!((p.amplitude(0.0) - 0.20067949427156972).abs() < 1e-14);
    }

    #[test]
    fn amplitude_is_periodic_and_in_range() {
        let p = reference();
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for _ in 0..1000 {
            let theta = rng.gen_range(-30.0..30.0);
            let b = p.amplitude(theta);
            assert!((0.2..=1.0 + 1e-12).contains(&b), "beta out of range: {b}");
            assert!((b - p.amplitude(theta + 2.0 * PI)).abs() < 1e-12);
        }
    }

    #[test]
    fn degenerate_profiles_have_unit_amplitude() {
        let flat_beta = RisHardwareProfile::new(1.0, 0.3, 2.0).unwrap();
        let flat_alpha = RisHardwareProfile::new(0.4, 0.3, 0.0).unwrap();
        for theta in [-2.0, 0.0, 0.9, 3.0] {
            assert!((flat_beta.amplitude(theta) - 1.0).abs() < 1e-15);
            assert!((flat_alpha.amplitude(theta) - 1.0).abs() < 1e-15);
        }
    }

    #[test]
    fn phase_vector_wraps_into_principal_range() {
        let v = PhaseVector::new(vec![3.0 * PI, -5.0 * PI / 2.0, 0.25]).unwrap();
        for &t in v.as_slice() {
            assert!((-PI..=PI).contains(&t));
        }
        assert!((v.as_slice()[0].abs() - PI).abs() < 1e-12);
        assert!((v.as_slice()[1] + PI / 2.0).abs() < 1e-12);
        assert!(PhaseVector::new(vec![f64::INFINITY]).is_err());
    }

    #[test]
    fn ideal_reflection_has_unit_modulus() {
        let theta = PhaseVector::new(vec![0.0, PI / 2.0]).unwrap();
        let r = reflection_vector_ideal(&theta);
        assert!((r.phi[0] - Complex64::new(1.0, 0.0)).norm() < 1e-15);
        assert!((r.phi[1] - Complex64::new(0.0, 1.0)).norm() < 1e-15);
    }

    #[test]
    fn practical_reflection_collapses_to_ideal_at_unit_floor() {
        let p = RisHardwareProfile::new(1.0, 0.7, 1.3).unwrap();
        let theta = PhaseVector::new(vec![-2.0, -0.4, 0.0, 1.1, 3.0]).unwrap();
        let practical = reflection_vector(&p, &theta);
        let ideal = reflection_vector_ideal(&theta);
        for (a, b) in practical.phi.iter().zip(&ideal.phi) {
            assert!((a - b).norm() < 1e-15);
        }
    }

    #[test]
    fn practical_reflection_hits_amplitude_floor() {
        let p = reference();
        let theta = PhaseVector::new(vec![p.delta() - PI / 2.0]).unwrap();
        let r = reflection_vector(&p, &theta);
        let expected = Complex64::from_polar(0.2, p.delta() - PI / 2.0);
        assert!((r.phi[0] - expected).norm() < 1e-12);
    }

    #[test]
    fn reflection_modulus_matches_amplitude() {
        let p = reference();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let theta = PhaseVector::new((0..64).map(|_| rng.gen_range(-PI..PI)).collect()).unwrap();
        let r = reflection_vector(&p, &theta);
        for (phi, &t) in r.phi.iter().zip(theta.as_slice()) {
            assert!((phi.norm() - p.amplitude(t)).abs() < 1e-12);
        }
    }

    #[test]
    fn mean_amplitude_degenerate_cases() {
        let flat = RisHardwareProfile::new(1.0, 0.3, 2.7).unwrap();
        assert!((flat.taylor_mean_amplitude(5) - 1.0).abs() < 1e-15);
        // alpha = 1: the series truncates; E[beta] = 1/2 exactly at beta_min = 0.
        let linear = RisHardwareProfile::new(0.0, 0.43 * PI, 1.0).unwrap();
        assert!((linear.taylor_mean_amplitude(5) - 0.5).abs() < 1e-15);
    }

    #[test]
    fn mean_amplitude_matches_monte_carlo() {
        let p = reference();
        let theory = p.taylor_mean_amplitude(5);
        let mc = mc_amplitude_moment(&p, 1, 1_000_000, 11);
        assert!(
            (theory - mc).abs() / mc < 0.01,
            "E[beta]: taylor {theory} vs MC {mc}"
        );
    }

    #[test]
    fn mean_amplitude_sq_degenerate_and_exact_cases() {
        let flat = RisHardwareProfile::new(1.0, 0.1, 1.9).unwrap();
        assert!((flat.taylor_mean_amplitude_sq(5) - 1.0).abs() < 1e-15);
        // alpha = 1, beta_min = 0: E[beta^2] = E[(1+sin)^2]/4 = 3/8 exactly.
        let linear = RisHardwareProfile::new(0.0, 0.43 * PI, 1.0).unwrap();
        assert!((linear.taylor_mean_amplitude_sq(5) - 0.375).abs() < 1e-12);
    }

    #[test]
    fn mean_amplitude_sq_matches_monte_carlo() {
        let p = reference();
        let theory = p.taylor_mean_amplitude_sq(5);
        let mc = mc_amplitude_moment(&p, 2, 1_000_000, 13);
        assert!(
            (theory - mc).abs() / mc < 0.02,
            "E[beta^2]: taylor {theory} vs MC {mc}"
        );
        let linear = RisHardwareProfile::new(0.0, 0.43 * PI, 1.0).unwrap();
        let mc_lin = mc_amplitude_moment(&linear, 2, 1_000_000, 17);
        assert!((linear.taylor_mean_amplitude_sq(5) - mc_lin).abs() / mc_lin < 0.02);
    }

    #[test]
    fn moments_satisfy_jensen_and_oracle_on_grid() {
        // beta_min x alpha grid at order 5: E[beta^2] >= E[beta]^2 and both
        // moments agree with a 10^5-sample Monte Carlo oracle.
        let mut seed = 100;
        for &beta_min in &[0.0, 0.2, 0.4, 0.6, 0.8] {
            for &alpha in &[0.5, 1.0, 1.6, 2.2, 3.0] {
                let p = RisHardwareProfile::new(beta_min, 0.43 * PI, alpha).unwrap();
                let m1 = p.taylor_mean_amplitude(5);
                let m2 = p.taylor_mean_amplitude_sq(5);
                assert!(
                    m2 >= m1 * m1 - 1e-9,
                    "Jensen violated at beta_min={beta_min}, alpha={alpha}: {m2} < {}",
                    m1 * m1
                );
                seed += 1;
                let mc1 = mc_amplitude_moment(&p, 1, 100_000, seed);
                let mc2 = mc_amplitude_moment(&p, 2, 100_000, seed + 1000);
                assert!(
                    (m1 - mc1).abs() / mc1 < 0.01,
                    "E[beta] off at beta_min={beta_min}, alpha={alpha}: {m1} vs {mc1}"
                );
                assert!(
                    (m2 - mc2).abs() / mc2 < 0.02,
                    "E[beta^2] off at beta_min={beta_min}, alpha={alpha}: {m2} vs {mc2}"
                );
            }
        }
    }
}
