//! Effective channels, HWI distortion powers, residual-SIC interference,
//! SINRs, and achievable rates for RSMA, SDMA, and NOMA.
//!
//! The transceiver distortion model adds Gaussian noise with power
//! proportional to the signal power at each side: a transmit ratio `m_t`
//! applied per antenna and a receive ratio `m_r` applied to the undistorted
//! received power. Imperfect SIC leaves a residual of every cancelled stream,
//! scaled by `delta_sic^2`. With `A = w_c w_c^H + sum_k w_k w_k^H` the
//! per-user distortion-plus-noise powers are
//!
//! ```text
//! Phi_c,k = h_k^H [m_r A + m_t (1 + m_r) diag(A)] h_k + (1 + m_r) sigma_k^2,
//! Phi_p,k = delta_sic^2 |h_k^H w_c|^2 + Phi_c,k,
//! ```
//!
//! where `diag(A)` keeps only the diagonal of `A`. All powers are carried in
//! watts.

use ndarray::{Array1, Array2};
use num_complex::Complex64;

use crate::channel::ChannelRealization;
use crate::error::{Result, RismaError};
use crate::ris::{reflection_vector, reflection_vector_ideal, PhaseVector, RisHardwareProfile};

/// Multiple-access scheme selector.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Scheme {
    Rsma,
    /// RSMA with the common stream pinned to zero.
    Sdma,
    /// Power-domain superposition with ordered SIC decoding.
    Noma,
}

impl std::fmt::Display for Scheme {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Scheme::Rsma => "rsma",
            Scheme::Sdma => "sdma",
            Scheme::Noma => "noma",
        })
    }
}

/// Transceiver distortion ratios and the SIC imperfection coefficient.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct ImpairmentProfile {
    pub m_t: f64,
    pub m_r: f64,
    pub delta_sic: f64,
}

impl ImpairmentProfile {
    pub fn new(m_t: f64, m_r: f64, delta_sic: f64) -> Result<Self> {
        for (name, v, hi) in [("m_t", m_t, 1.0), ("m_r", m_r, 1.0)] {
            if !(0.0..hi).contains(&v) {
                return Err(RismaError::InvalidParameter(format!(
                    "{name} must lie in [0, 1), got {v}"
                )));
            }
        }
        if !(0.0..=1.0).contains(&delta_sic) {
            return Err(RismaError::InvalidParameter(format!(
                "delta_sic must lie in [0, 1], got {delta_sic}"
            )));
        }
        Ok(Self { m_t, m_r, delta_sic })
    }

    /// Ideal hardware: no distortion, perfect SIC.
    pub fn ideal() -> Self {
        Self {
            m_t: 0.0,
            m_r: 0.0,
            delta_sic: 0.0,
        }
    }
}

/// Which reflection model maps phase shifts to reflection coefficients.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RisMode {
    /// Unit modulus at every element.
    Ideal,
    /// Amplitude coupled to phase through the hardware profile.
    Practical,
}

/// Common precoder, private precoders, RIS phases, and the reflection model
/// under which they were designed.
#[derive(Debug, Clone, PartialEq)]
pub struct BeamformingState {
    pub w_c: Array1<Complex64>,
    pub w: Vec<Array1<Complex64>>,
    pub theta: PhaseVector,
    pub ris_mode: RisMode,
}

impl BeamformingState {
    /// Total transmit power `||w_c||^2 + sum_k ||w_k||^2`.
    pub fn total_power(&self) -> f64 {
        let pc: f64 = self.w_c.iter().map(|v| v.norm_sqr()).sum();
        let pp: f64 = self
            .w
            .iter()
            .map(|wk| wk.iter().map(|v| v.norm_sqr()).sum::<f64>())
            .sum();
        pc + pp
    }

    /// Check the power budget within a 1e-9 relative tolerance.
    pub fn validate_power(&self, p_max: f64) -> Result<()> {
        let total = self.total_power();
        if total > p_max * (1.0 + 1e-9) {
            return Err(RismaError::InvalidParameter(format!(
                "transmit power {total:.6e} exceeds budget {p_max:.6e}"
            )));
        }
        Ok(())
    }

    /// Reflection coefficients of this state under its own model.
    pub fn reflection(&self, profile: &RisHardwareProfile) -> Vec<Complex64> {
        match self.ris_mode {
            RisMode::Ideal => reflection_vector_ideal(&self.theta).phi,
            RisMode::Practical => reflection_vector(profile, &self.theta).phi,
        }
    }
}

/// Per-user SINRs and distortion powers of an RSMA evaluation.
#[derive(Debug, Clone, PartialEq)]
pub struct RsmaSinrs {
    pub gamma_c: Vec<f64>,
    pub gamma_p: Vec<f64>,
    pub phi_c: Vec<f64>,
    pub phi_p: Vec<f64>,
}

/// Achievable-rate report for one evaluation.
///
/// `common_rate = min_k log2(1 + gamma_c,k)` and
/// `sum_rate = common_rate + sum_k private_rates[k]`. For SDMA and NOMA the
/// common entries are structurally zero.
#[derive(Debug, Clone, PartialEq, serde::Serialize)]
pub struct RateReport {
    pub gamma_c: Vec<f64>,
    pub gamma_p: Vec<f64>,
    pub phi_c: Vec<f64>,
    pub phi_p: Vec<f64>,
    pub common_rate: f64,
    pub private_rates: Vec<f64>,
    pub sum_rate: f64,
}

impl RateReport {
    pub fn k_users(&self) -> usize {
        self.gamma_p.len()
    }

    /// CSV column names for a flat one-row-per-evaluation record.
    pub fn csv_header(k_users: usize) -> String {
        let mut cols = vec!["common_rate_bps_hz".to_string(), "sum_rate_bps_hz".to_string()];
        for k in 1..=k_users {
            cols.push(format!("gamma_c_{k}"));
            cols.push(format!("gamma_p_{k}"));
            cols.push(format!("phi_c_{k}_w"));
            cols.push(format!("phi_p_{k}_w"));
            cols.push(format!("rate_p_{k}_bps_hz"));
        }
        cols.join(",")
    }

    pub fn csv_row(&self) -> String {
        let mut cols = vec![format!("{}", self.common_rate), format!("{}", self.sum_rate)];
        for k in 0..self.k_users() {
            cols.push(format!("{}", self.gamma_c[k]));
            cols.push(format!("{}", self.gamma_p[k]));
            cols.push(format!("{}", self.phi_c[k]));
            cols.push(format!("{}", self.phi_p[k]));
            cols.push(format!("{}", self.private_rates[k]));
        }
        cols.join(",")
    }
}

/// Cascaded BS -> RIS -> user channels `h_k = Lambda_k phi` with
/// `Lambda_k = G^H diag(f_k)`, i.e. `h_k^H = f_k^H diag(phi^H) G`.
pub fn effective_channels_from_phi(
    realization: &ChannelRealization,
    phi: &[Complex64],
) -> Result<Vec<Array1<Complex64>>> {
    let n = realization.n_elements();
    let m = realization.m_antennas();
    if phi.len() != n {
        return Err(RismaError::DimensionMismatch(format!(
            "phi has {} entries for {} RIS elements",
            phi.len(),
            n
        )));
    }
    let mut out = Vec::with_capacity(realization.k_users());
    for fk in &realization.f {
        let mut h = Array1::<Complex64>::zeros(m);
        for row in 0..n {
            let scale = fk[row] * phi[row];
            for col in 0..m {
                h[col] += realization.g[(row, col)].conj() * scale;
            }
        }
        out.push(h);
    }
    Ok(out)
}

/// Effective channels of a beamforming state under its reflection model.
pub fn effective_channels(
    realization: &ChannelRealization,
    state: &BeamformingState,
    profile: &RisHardwareProfile,
) -> Result<Vec<Array1<Complex64>>> {
    effective_channels_from_phi(realization, &state.reflection(profile))
}

/// `Lambda_k = G^H diag(f_k)`, the M x N map from reflection coefficients to
/// user-k's effective channel.
pub fn cascade_matrix(realization: &ChannelRealization, user: usize) -> Array2<Complex64> {
    let n = realization.n_elements();
    let m = realization.m_antennas();
    let fk = &realization.f[user];
    Array2::from_shape_fn((m, n), |(row, col)| {
        realization.g[(col, row)].conj() * fk[col]
    })
}

fn beam_gain(h: &Array1<Complex64>, w: &Array1<Complex64>) -> f64 {
    h.iter()
        .zip(w.iter())
        .map(|(a, b)| a.conj() * b)
        .sum::<Complex64>()
        .norm_sqr()
}

/// Distortion-plus-noise powers `(Phi_c,k, Phi_p,k)` for one user.
///
/// Computed matrix-free: `h^H A h` collapses to beam gains and
/// `h^H diag(A) h` to a weighted antenna-power sum, so the result is real by
/// construction; it is asserted finite and nonnegative.
pub fn distortion_powers(
    h: &Array1<Complex64>,
    w_c: &Array1<Complex64>,
    w: &[Array1<Complex64>],
    imp: &ImpairmentProfile,
    sigma_sq: f64,
) -> (f64, f64) {
    let common_gain = beam_gain(h, w_c);
    let private_gains: f64 = w.iter().map(|wk| beam_gain(h, wk)).sum();
    // h^H diag(A) h = sum_m |h_m|^2 A_mm
    let diag_term: f64 = h
        .iter()
        .enumerate()
        .map(|(m, hm)| {
            let a_mm = w_c[m].norm_sqr() + w.iter().map(|wk| wk[m].norm_sqr()).sum::<f64>();
            hm.norm_sqr() * a_mm
        })
        .sum();
    let phi_c = imp.m_r * (common_gain + private_gains)
        + imp.m_t * (1.0 + imp.m_r) * diag_term
        + (1.0 + imp.m_r) * sigma_sq;
    let phi_p = imp.delta_sic * imp.delta_sic * common_gain + phi_c;
    debug_assert!(phi_c.is_finite() && phi_c >= 0.0);
    debug_assert!(phi_p >= 0.0);
    (phi_c, phi_p)
}

/// RSMA SINRs for every user:
///
/// ```text
/// gamma_c,k = |h_k^H w_c|^2 / (sum_i |h_k^H w_i|^2 + Phi_c,k)
/// gamma_p,k = |h_k^H w_k|^2 / (sum_{i != k} |h_k^H w_i|^2 + Phi_p,k)
/// ```
pub fn rsma_sinrs(
    h: &[Array1<Complex64>],
    w_c: &Array1<Complex64>,
    w: &[Array1<Complex64>],
    imp: &ImpairmentProfile,
    sigma_sq: &[f64],
) -> RsmaSinrs {
    let k_users = h.len();
    let mut out = RsmaSinrs {
        gamma_c: Vec::with_capacity(k_users),
        gamma_p: Vec::with_capacity(k_users),
        phi_c: Vec::with_capacity(k_users),
        phi_p: Vec::with_capacity(k_users),
    };
    for k in 0..k_users {
        let hk = &h[k];
        let (phi_c, phi_p) = distortion_powers(hk, w_c, w, imp, sigma_sq[k]);
        let common_gain = beam_gain(hk, w_c);
        let own = beam_gain(hk, &w[k]);
        let all_private: f64 = w.iter().map(|wi| beam_gain(hk, wi)).sum();
        let others = all_private - own;
        out.gamma_c.push(common_gain / (all_private + phi_c));
        out.gamma_p.push(own / (others + phi_p));
        out.phi_c.push(phi_c);
        out.phi_p.push(phi_p);
    }
    out
}

/// Assemble the rate report from RSMA SINRs: per-user `log2(1 + gamma)`,
/// common rate as the minimum across users.
pub fn rsma_rates(sinrs: &RsmaSinrs) -> RateReport {
    let common_rate = sinrs
        .gamma_c
        .iter()
        .map(|g| (1.0 + g).log2())
        .fold(f64::INFINITY, f64::min);
    let common_rate = if common_rate.is_finite() { common_rate } else { 0.0 };
    let private_rates: Vec<f64> = sinrs.gamma_p.iter().map(|g| (1.0 + g).log2()).collect();
    let sum_rate = common_rate + private_rates.iter().sum::<f64>();
    RateReport {
        gamma_c: sinrs.gamma_c.clone(),
        gamma_p: sinrs.gamma_p.clone(),
        phi_c: sinrs.phi_c.clone(),
        phi_p: sinrs.phi_p.clone(),
        common_rate,
        private_rates,
        sum_rate,
    }
}

/// NOMA SINR table under a decoding order.
///
/// `table[k]` holds `gamma_l^k` for `l = k..K` in decode positions; stream k
/// must be decodable at every user that decodes it, so its rate is
/// `log2(1 + min_l gamma_l^k)`. Indices inside refer to decode positions;
/// `order[pos]` maps a position back to the original user.
#[derive(Debug, Clone, PartialEq)]
pub struct NomaSinrs {
    pub order: Vec<usize>,
    pub table: Vec<Vec<f64>>,
    pub stream_sinr: Vec<f64>,
}

/// Decoding positions sorted by descending effective channel gain.
pub fn descending_gain_order(h: &[Array1<Complex64>]) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..h.len()).collect();
    let gains: Vec<f64> = h
        .iter()
        .map(|hk| hk.iter().map(|v| v.norm_sqr()).sum::<f64>())
        .collect();
    idx.sort_by(|&a, &b| gains[b].partial_cmp(&gains[a]).unwrap_or(std::cmp::Ordering::Equal));
    idx
}

/// NOMA SINRs with imperfect SIC. The stream decoded at position k suffers
/// full interference from positions k+1.. and residual interference
/// `delta_sic^2` from the accumulated earlier positions; the last stream sees
/// residuals of all K-1 earlier ones.
pub fn noma_sinrs(
    h: &[Array1<Complex64>],
    w: &[Array1<Complex64>],
    imp: &ImpairmentProfile,
    sigma_sq: &[f64],
    order: &[usize],
) -> Result<NomaSinrs> {
    let k_users = h.len();
    if w.len() != k_users || sigma_sq.len() != k_users {
        return Err(RismaError::DimensionMismatch(
            "NOMA needs one precoder and noise power per user".into(),
        ));
    }
    let mut seen = vec![false; k_users];
    for &u in order {
        if u >= k_users || seen[u] {
            return Err(RismaError::InvalidParameter(
                "decoding order must be a permutation of the users".into(),
            ));
        }
        seen[u] = true;
    }
    if order.len() != k_users {
        return Err(RismaError::InvalidParameter(
            "decoding order must list every user".into(),
        ));
    }

    let delta_sq = imp.delta_sic * imp.delta_sic;
    // gains[pos_l][pos_k] = |h_{order[l]}^H w_{order[k]}|^2
    let gains: Vec<Vec<f64>> = order
        .iter()
        .map(|&l| order.iter().map(|&k| beam_gain(&h[l], &w[k])).collect())
        .collect();
    // HWI-plus-AWGN floor per decode position (no SIC terms).
    let zero_wc = Array1::<Complex64>::zeros(h[0].len());
    let hwi_floor: Vec<f64> = order
        .iter()
        .map(|&l| {
            let (phi_c, _) = distortion_powers(&h[l], &zero_wc, w, imp, sigma_sq[l]);
            phi_c
        })
        .collect();

    let mut table = Vec::with_capacity(k_users);
    let mut stream_sinr = Vec::with_capacity(k_users);
    for k in 0..k_users {
        let mut row = Vec::with_capacity(k_users - k);
        if k + 1 == k_users {
            // Last stream: residuals of all earlier streams only.
            let l = k_users - 1;
            let residual: f64 = (0..k_users - 1).map(|i| delta_sq * gains[l][i]).sum();
            row.push(gains[l][l] / (residual + hwi_floor[l]));
        } else {
            for l in k..k_users {
                let future: f64 = (k + 1..k_users).map(|i| gains[l][i]).sum();
                let residual: f64 = (0..=k).map(|i| delta_sq * gains[l][i]).sum();
                row.push(gains[l][k] / (future + residual + hwi_floor[l]));
            }
        }
        stream_sinr.push(row.iter().copied().fold(f64::INFINITY, f64::min));
        table.push(row);
    }
    Ok(NomaSinrs {
        order: order.to_vec(),
        table,
        stream_sinr,
    })
}

/// NOMA rate report: `sum_rate = sum_k log2(1 + min_l gamma_l^k)`, with the
/// stream rate attributed to the user it serves. Common entries are zero.
pub fn noma_rates(sinrs: &NomaSinrs, k_users: usize) -> RateReport {
    let mut gamma_p = vec![0.0; k_users];
    let mut private_rates = vec![0.0; k_users];
    for (pos, &user) in sinrs.order.iter().enumerate() {
        gamma_p[user] = sinrs.stream_sinr[pos];
        private_rates[user] = (1.0 + sinrs.stream_sinr[pos]).log2();
    }
    let sum_rate = private_rates.iter().sum();
    RateReport {
        gamma_c: vec![0.0; k_users],
        gamma_p,
        phi_c: vec![0.0; k_users],
        phi_p: vec![0.0; k_users],
        common_rate: 0.0,
        private_rates,
        sum_rate,
    }
}

/// Evaluate an RSMA (or SDMA, when `w_c = 0`) state end to end.
pub fn evaluate_rsma(
    realization: &ChannelRealization,
    state: &BeamformingState,
    imp: &ImpairmentProfile,
    profile: &RisHardwareProfile,
) -> Result<RateReport> {
    let h = effective_channels(realization, state, profile)?;
    let sinrs = rsma_sinrs(&h, &state.w_c, &state.w, imp, &realization.noise_power);
    Ok(rsma_rates(&sinrs))
}

/// Evaluate a NOMA state end to end. `forced_order` overrides the default
/// descending-gain decoding order.
pub fn evaluate_noma(
    realization: &ChannelRealization,
    state: &BeamformingState,
    imp: &ImpairmentProfile,
    profile: &RisHardwareProfile,
    forced_order: Option<&[usize]>,
) -> Result<RateReport> {
    let common_power: f64 = state.w_c.iter().map(|v| v.norm_sqr()).sum();
    if common_power > 1e-12 * (1.0 + state.total_power()) {
        return Err(RismaError::InvalidParameter(
            "NOMA state must have a zero common precoder".into(),
        ));
    }
    let h = effective_channels(realization, state, profile)?;
    let default_order;
    let order: &[usize] = match forced_order {
        Some(o) => o,
        None => {
            default_order = descending_gain_order(&h);
            &default_order
        }
    };
    let sinrs = noma_sinrs(&h, &state.w, imp, &realization.noise_power, order)?;
    Ok(noma_rates(&sinrs, h.len()))
}
