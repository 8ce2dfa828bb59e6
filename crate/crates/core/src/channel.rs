//! Channel generation: scenario geometry, large-scale path loss, and
//! small-scale Rayleigh/Rician fading with deterministic seeding.
//!
//! Everything is a pure function of the seed: the same seed reproduces the
//! same realization bit for bit, which is what makes paired Monte Carlo
//! comparisons and byte-identical campaign reruns possible. The base station
//! and the RIS are modeled as half-wavelength uniform linear arrays (BS along
//! the y-axis, RIS along the x-axis) for the line-of-sight component; users
//! are re-drawn uniformly over a disc on the x-y plane for every trial.

use ndarray::{Array1, Array2};
use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use std::f64::consts::PI;
use std::io::{Read, Write};

use crate::error::{Result, RismaError};
use crate::units::db_to_linear;

/// Node positions, user-drop disc, and array sizes for one scenario.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct ScenarioGeometry {
    /// BS position in meters.
    pub bs_position: [f64; 3],
    /// RIS position in meters.
    pub ris_position: [f64; 3],
    /// Center of the user-drop disc in meters.
    pub user_center: [f64; 3],
    /// Radius of the user-drop disc in meters.
    pub user_radius: f64,
    /// Number of single-antenna users.
    pub k_users: usize,
    /// Number of BS antennas.
    pub m_antennas: usize,
    /// Number of RIS elements.
    pub n_elements: usize,
}

impl ScenarioGeometry {
    /// Reference layout: BS at the origin, RIS at (40, 40, 0), users within
    /// an 8 m disc centered at (50, 0, 0); K = 2, M = 8, N = 16.
    pub fn reference() -> Self {
        Self {
            bs_position: [0.0, 0.0, 0.0],
            ris_position: [40.0, 40.0, 0.0],
            user_center: [50.0, 0.0, 0.0],
            user_radius: 8.0,
            k_users: 2,
            m_antennas: 8,
            n_elements: 16,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.k_users == 0 || self.m_antennas == 0 || self.n_elements == 0 {
            return Err(RismaError::InvalidParameter(
                "K, M, N must all be >= 1".into(),
            ));
        }
        if self.user_radius < 0.0 {
            return Err(RismaError::InvalidParameter(
                "user radius must be >= 0".into(),
            ));
        }
        if distance(&self.bs_position, &self.ris_position) <= 0.0
            || distance(&self.ris_position, &self.user_center) <= self.user_radius
        {
            return Err(RismaError::InvalidParameter(
                "node separations must be positive".into(),
            ));
        }
        Ok(())
    }
}

/// Small-scale fading model selector.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FadingModel {
    Rayleigh,
    Rician,
    /// Rician with an extremely strong line-of-sight component.
    RicianLosDominant,
}

/// Small-scale fading parameters.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct FadingSpec {
    pub model: FadingModel,
    /// Rician K-factor, linear. Ignored for Rayleigh.
    pub rician_k_factor: f64,
    /// Exponential spatial correlation coefficient across RIS elements,
    /// `[R]_ij = r^|i-j|`. `None` means independent elements.
    pub correlation: Option<f64>,
}

impl FadingSpec {
    pub fn rayleigh() -> Self {
        Self {
            model: FadingModel::Rayleigh,
            rician_k_factor: 0.0,
            correlation: None,
        }
    }

    /// Rician with the default 3 dB K-factor.
    pub fn rician() -> Self {
        Self {
            model: FadingModel::Rician,
            rician_k_factor: db_to_linear(3.0),
            correlation: None,
        }
    }

    /// LoS-dominant scattering: 20 dB K-factor.
    pub fn rician_los_dominant() -> Self {
        Self {
            model: FadingModel::RicianLosDominant,
            rician_k_factor: db_to_linear(20.0),
            correlation: None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.rician_k_factor < 0.0 {
            return Err(RismaError::InvalidParameter(
                "Rician K-factor must be >= 0".into(),
            ));
        }
        if let Some(r) = self.correlation {
            if !(0.0..1.0).contains(&r) {
                return Err(RismaError::InvalidParameter(
                    "correlation coefficient must lie in [0, 1)".into(),
                ));
            }
        }
        Ok(())
    }

    fn k_factor(&self) -> f64 {
        match self.model {
            FadingModel::Rayleigh => 0.0,
            _ => self.rician_k_factor,
        }
    }
}

/// One draw of the BS->RIS matrix `G` (N x M), the RIS->user vectors `f_k`,
/// and the per-user noise powers in watts.
#[derive(Debug, Clone, PartialEq)]
pub struct ChannelRealization {
    pub g: Array2<Complex64>,
    pub f: Vec<Array1<Complex64>>,
    pub noise_power: Vec<f64>,
    /// User positions of this draw (meters), kept for diagnostics.
    pub user_positions: Vec<[f64; 3]>,
}

impl ChannelRealization {
    pub fn n_elements(&self) -> usize {
        self.g.nrows()
    }

    pub fn m_antennas(&self) -> usize {
        self.g.ncols()
    }

    pub fn k_users(&self) -> usize {
        self.f.len()
    }
}

/// Large-scale path loss in dB: `PL = 37.3 + 22.0 log10(d)`.
pub fn path_loss_db(d: f64) -> Result<f64> {
    if d <= 0.0 || !d.is_finite() {
        return Err(RismaError::InvalidParameter(format!(
            "path loss needs a positive distance, got {d}"
        )));
    }
    Ok(37.3 + 22.0 * d.log10())
}

fn distance(a: &[f64; 3], b: &[f64; 3]) -> f64 {
    ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2) + (a[2] - b[2]).powi(2)).sqrt()
}

fn unit_direction(from: &[f64; 3], to: &[f64; 3]) -> [f64; 3] {
    let d = distance(from, to);
    [
        (to[0] - from[0]) / d,
        (to[1] - from[1]) / d,
        (to[2] - from[2]) / d,
    ]
}

/// Half-wavelength ULA steering vector for a direction cosine `u` along the
/// array axis: entries `e^{j pi m u}`.
fn steering(len: usize, u: f64) -> Array1<Complex64> {
    Array1::from_iter((0..len).map(|m| Complex64::from_polar(1.0, PI * m as f64 * u)))
}

fn standard_complex(rng: &mut impl Rng) -> Complex64 {
    let re: f64 = rng.sample(StandardNormal);
    let im: f64 = rng.sample(StandardNormal);
    Complex64::new(re, im) * std::f64::consts::FRAC_1_SQRT_2
}

/// Apply the AR(1) recursion that realizes the exponential correlation
/// `E[x_i x_j^*] = r^|i-j|` on a unit-variance iid sequence.
fn correlate_in_place(x: &mut [Complex64], r: f64) {
    let innovation = (1.0 - r * r).sqrt();
    for i in 1..x.len() {
        x[i] = r * x[i - 1] + innovation * x[i];
    }
}

/// Draw one channel realization. `noise_power_watts` is the per-user AWGN
/// power. The same seed yields a bit-identical realization.
pub fn draw_channel(
    geometry: &ScenarioGeometry,
    fading: &FadingSpec,
    noise_power_watts: f64,
    seed: u64,
) -> Result<ChannelRealization> {
    geometry.validate()?;
    fading.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = geometry.n_elements;
    let m = geometry.m_antennas;
    let k_users = geometry.k_users;

    // User drop: uniform over the disc by area.
    let mut user_positions = Vec::with_capacity(k_users);
    for _ in 0..k_users {
        let radius = geometry.user_radius * rng.gen::<f64>().sqrt();
        let angle = rng.gen_range(0.0..2.0 * PI);
        user_positions.push([
            geometry.user_center[0] + radius * angle.cos(),
            geometry.user_center[1] + radius * angle.sin(),
            geometry.user_center[2],
        ]);
    }

    let kappa = fading.k_factor();
    let los_scale = (kappa / (kappa + 1.0)).sqrt();
    let nlos_scale = (1.0 / (kappa + 1.0)).sqrt();

    // BS -> RIS matrix.
    let d_bs_ris = distance(&geometry.bs_position, &geometry.ris_position);
    let gain_g = db_to_linear(-path_loss_db(d_bs_ris)?).sqrt();
    let dir_bs_ris = unit_direction(&geometry.bs_position, &geometry.ris_position);
    // BS ULA along y, RIS ULA along x.
    let a_bs = steering(m, dir_bs_ris[1]);
    let a_ris = steering(n, -dir_bs_ris[0]);
    let mut g = Array2::from_shape_fn((n, m), |_| standard_complex(&mut rng));
    if let Some(r) = fading.correlation {
        for mut col in g.columns_mut() {
            correlate_in_place(col.as_slice_mut().expect("column is contiguous"), r);
        }
    }
    for ((i, j), v) in g.indexed_iter_mut() {
        let los = a_ris[i] * a_bs[j].conj();
        *v = gain_g * (los_scale * los + nlos_scale * *v);
    }

    // RIS -> user vectors.
    let mut f = Vec::with_capacity(k_users);
    for pos in &user_positions {
        let d_ris_user = distance(&geometry.ris_position, pos);
        let gain_f = db_to_linear(-path_loss_db(d_ris_user)?).sqrt();
        let dir = unit_direction(&geometry.ris_position, pos);
        let a_user = steering(n, dir[0]);
        let mut fk = Array1::from_shape_fn(n, |_| standard_complex(&mut rng));
        if let Some(r) = fading.correlation {
            correlate_in_place(fk.as_slice_mut().expect("vector is contiguous"), r);
        }
        for (i, v) in fk.iter_mut().enumerate() {
            *v = gain_f * (los_scale * a_user[i] + nlos_scale * *v);
        }
        f.push(fk);
    }

    Ok(ChannelRealization {
        g,
        f,
        noise_power: vec![noise_power_watts; k_users],
        user_positions,
    })
}

/// Draw the SISO-through-RIS pair `f ~ CN(0, tau_f^2 I)`, `g ~ CN(0, tau_g^2 I)`
/// used by the asymptotic analysis, optionally with exponential correlation
/// across elements.
pub fn draw_iid_pair(
    n: usize,
    tau_f: f64,
    tau_g: f64,
    correlation: Option<f64>,
    rng: &mut impl Rng,
) -> (Array1<Complex64>, Array1<Complex64>) {
    let mut f = Array1::from_shape_fn(n, |_| standard_complex(rng));
    let mut g = Array1::from_shape_fn(n, |_| standard_complex(rng));
    if let Some(r) = correlation {
        correlate_in_place(f.as_slice_mut().expect("contiguous"), r);
        correlate_in_place(g.as_slice_mut().expect("contiguous"), r);
    }
    f.mapv_inplace(|v| v * tau_f);
    g.mapv_inplace(|v| v * tau_g);
    (f, g)
}

/// Seeded convenience wrapper around [`draw_iid_pair`].
pub fn draw_iid_pair_seeded(
    n: usize,
    tau_f: f64,
    tau_g: f64,
    correlation: Option<f64>,
    seed: u64,
) -> (Array1<Complex64>, Array1<Complex64>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    draw_iid_pair(n, tau_f, tau_g, correlation, &mut rng)
}

const DUMP_MAGIC: &[u8; 8] = b"RISCHAN1";

/// Debug dump of a realization as a flat binary file.
///
/// Layout (little-endian): magic `RISCHAN1`, u32 N, u32 M, u32 K, u32 dtype
/// tag (0 = complex128), then row-major `G` as interleaved re/im f64, then
/// each `f_k`, then the K noise powers as f64.
pub fn dump_realization(realization: &ChannelRealization, path: &std::path::Path) -> Result<()> {
    let mut buf = Vec::new();
    buf.extend_from_slice(DUMP_MAGIC);
    let (n, m, k) = (
        realization.n_elements() as u32,
        realization.m_antennas() as u32,
        realization.k_users() as u32,
    );
    buf.extend_from_slice(&n.to_le_bytes());
    buf.extend_from_slice(&m.to_le_bytes());
    buf.extend_from_slice(&k.to_le_bytes());
    buf.extend_from_slice(&0u32.to_le_bytes());
    for v in realization.g.iter() {
        buf.extend_from_slice(&v.re.to_le_bytes());
        buf.extend_from_slice(&v.im.to_le_bytes());
    }
    for fk in &realization.f {
        for v in fk.iter() {
            buf.extend_from_slice(&v.re.to_le_bytes());
            buf.extend_from_slice(&v.im.to_le_bytes());
        }
    }
    for &p in &realization.noise_power {
        buf.extend_from_slice(&p.to_le_bytes());
    }
    let mut file = std::fs::File::create(path)
        .map_err(|e| RismaError::io(path.display().to_string(), e))?;
    file.write_all(&buf)
        .map_err(|e| RismaError::io(path.display().to_string(), e))
}

/// Load a realization dumped by [`dump_realization`].
pub fn load_realization(path: &std::path::Path) -> Result<ChannelRealization> {
    let mut bytes = Vec::new();
    std::fs::File::open(path)
        .and_then(|mut f| f.read_to_end(&mut bytes))
        .map_err(|e| RismaError::io(path.display().to_string(), e))?;
    let fail = |msg: &str| RismaError::Config(format!("{}: {msg}", path.display()));
    if bytes.len() < 24 || &bytes[..8] != DUMP_MAGIC {
        return Err(fail("not a channel dump"));
    }
    let word = |i: usize| u32::from_le_bytes(bytes[8 + 4 * i..12 + 4 * i].try_into().unwrap());
    let (n, m, k, tag) = (
        word(0) as usize,
        word(1) as usize,
        word(2) as usize,
        word(3),
    );
    if tag != 0 {
        return Err(fail("unsupported dtype tag"));
    }
    let expected = 24 + 16 * (n * m + n * k) + 8 * k;
    if bytes.len() != expected {
        return Err(fail("truncated channel dump"));
    }
    let mut off = 24;
    let mut next_f64 = |bytes: &[u8]| {
        let v = f64::from_le_bytes(bytes[off..off + 8].try_into().unwrap());
        off += 8;
        v
    };
    let mut next_c = |bytes: &[u8]| {
        let re = next_f64(bytes);
        let im = next_f64(bytes);
        Complex64::new(re, im)
    };
    let g = Array2::from_shape_fn((n, m), |_| next_c(&bytes));
    let f = (0..k)
        .map(|_| Array1::from_shape_fn(n, |_| next_c(&bytes)))
        .collect();
    let noise_power = (0..k).map(|_| next_f64(&bytes)).collect();
    Ok(ChannelRealization {
        g,
        f,
        noise_power,
        user_positions: vec![],
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small_geometry() -> ScenarioGeometry {
        ScenarioGeometry {
            n_elements: 4,
            m_antennas: 2,
            k_users: 2,
            ..ScenarioGeometry::reference()
        }
    }

    #[test]
    fn path_loss_reference_points() {
        assert!((path_loss_db(1.0).unwrap() - 37.3).abs() < 1e-12);
        assert!((path_loss_db(10.0).unwrap() - 59.3).abs() < 1e-12);
        // Scalar oracle at the BS->RIS hop of the reference layout.
        assert!((path_loss_db(56.57).unwrap() - 75.856895932289).abs() < 1e-9);
        assert!(path_loss_db(0.0).is_err());
        assert!(path_loss_db(-3.0).is_err());
    }

    #[test]
    fn doubling_distance_adds_fixed_loss() {
        for d in [0.5, 3.0, 47.0] {
            let delta = path_loss_db(2.0 * d).unwrap() - path_loss_db(d).unwrap();
            assert!((delta - 22.0 * 2f64.log10()).abs() < 1e-12);
        }
    }

    #[test]
    fn same_seed_is_bit_identical() {
        let geom = small_geometry();
        let fading = FadingSpec::rician();
        let a = draw_channel(&geom, &fading, 1e-14, 42).unwrap();
        let b = draw_channel(&geom, &fading, 1e-14, 42).unwrap();
        assert_eq!(a, b);
        let c = draw_channel(&geom, &fading, 1e-14, 43).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn rayleigh_mean_power_matches_path_loss() {
        let geom = small_geometry();
        let fading = FadingSpec::rayleigh();
        let d = distance(&geom.bs_position, &geom.ris_position);
        let pl = db_to_linear(-path_loss_db(d).unwrap());
        let mut acc = 0.0;
        let draws = 100_000;
        for seed in 0..draws {
            let r = draw_channel(&geom, &fading, 1e-14, seed).unwrap();
            acc += r.g.iter().map(|v| v.norm_sqr()).sum::<f64>() / r.g.len() as f64;
        }
        let mean = acc / draws as f64;
        assert!(
            (mean - pl).abs() / pl < 0.02,
            "mean |G|^2 = {mean:.3e}, path loss gain = {pl:.3e}"
        );
    }

    #[test]
    fn rician_los_fraction_matches_k_factor() {
        let geom = small_geometry();
        let fading = FadingSpec::rician();
        let kappa = fading.rician_k_factor;
        let draws = 100_000usize;
        let mut mean = Array2::<Complex64>::zeros((geom.n_elements, geom.m_antennas));
        let mut power = 0.0;
        for seed in 0..draws {
            let r = draw_channel(&geom, &fading, 1e-14, seed as u64).unwrap();
            mean += &r.g;
            power += r.g.iter().map(|v| v.norm_sqr()).sum::<f64>();
        }
        mean.mapv_inplace(|v| v / draws as f64);
        let los_power = mean.iter().map(|v| v.norm_sqr()).sum::<f64>();
        let total_power = power / draws as f64;
        let ratio = los_power / total_power;
        let expected = kappa / (kappa + 1.0);
        assert!(
            (ratio - expected).abs() / expected < 0.02,
            "LoS fraction {ratio} vs K/(K+1) = {expected}"
        );
    }

    #[test]
    fn iid_pair_moments_match_rayleigh_oracle() {
        // E[|f_n|^2] = tau^2 and E[|f_n|] = sqrt(pi)/2 * tau for CN(0, tau^2).
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let n = 64;
        let draws = 20_000;
        let (mut p1, mut p2, mut count) = (0.0, 0.0, 0usize);
        for _ in 0..draws {
            let (f, _) = draw_iid_pair(n, 1.0, 1.0, None, &mut rng);
            for v in f.iter() {
                p1 += v.norm();
                p2 += v.norm_sqr();
                count += 1;
            }
        }
        let mean_abs = p1 / count as f64;
        let mean_sq = p2 / count as f64;
        assert!((mean_sq - 1.0).abs() < 0.01, "E|f|^2 = {mean_sq}");
        let rayleigh_mean = PI.sqrt() / 2.0;
        assert!(
            (mean_abs - rayleigh_mean).abs() / rayleigh_mean < 0.01,
            "E|f| = {mean_abs} vs {rayleigh_mean}"
        );
    }

    #[test]
    fn circular_symmetry_of_components() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let tau = 1.7;
        let (mut re_var, mut im_var, mut cross, mut count) = (0.0, 0.0, 0.0, 0usize);
        for _ in 0..5_000 {
            let (f, _) = draw_iid_pair(32, tau, tau, None, &mut rng);
            for v in f.iter() {
                re_var += v.re * v.re;
                im_var += v.im * v.im;
                cross += v.re * v.im;
                count += 1;
            }
        }
        let half = tau * tau / 2.0;
        assert!((re_var / count as f64 - half).abs() / half < 0.03);
        assert!((im_var / count as f64 - half).abs() / half < 0.03);
        assert!((cross / count as f64).abs() < 0.03 * half);
    }

    #[test]
    fn exponential_correlation_is_realized() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let r = 0.7;
        let n = 64;
        let mut lag = [0.0f64; 3];
        let mut count = 0usize;
        for _ in 0..20_000 {
            let (f, _) = draw_iid_pair(n, 1.0, 1.0, Some(r), &mut rng);
            for i in 0..n - 2 {
                lag[0] += (f[i] * f[i].conj()).re;
                lag[1] += (f[i] * f[i + 1].conj()).re;
                lag[2] += (f[i] * f[i + 2].conj()).re;
                count += 1;
            }
        }
        let norm = lag[0] / count as f64;
        assert!((norm - 1.0).abs() < 0.02);
        assert!((lag[1] / count as f64 / norm - r).abs() < 0.02);
        assert!((lag[2] / count as f64 / norm - r * r).abs() < 0.02);
    }

    #[test]
    fn dump_round_trips() {
        let geom = small_geometry();
        let r = draw_channel(&geom, &FadingSpec::rician(), 1e-14, 7).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("chan.bin");
        dump_realization(&r, &path).unwrap();
        let loaded = load_realization(&path).unwrap();
        assert_eq!(r.g, loaded.g);
        assert_eq!(r.f, loaded.f);
        assert_eq!(r.noise_power, loaded.noise_power);
    }

    #[test]
    fn geometry_validation_rejects_degenerate_layouts() {
        let mut geom = small_geometry();
        geom.k_users = 0;
        assert!(geom.validate().is_err());
        let mut geom = small_geometry();
        geom.ris_position = geom.bs_position;
        assert!(geom.validate().is_err());
        let mut geom = small_geometry();
        geom.user_radius = 100.0; // disc swallows the RIS
        assert!(geom.validate().is_err());
    }
}
