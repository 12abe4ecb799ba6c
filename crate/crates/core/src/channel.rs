//! Wideband geometric channel model with beam squint.
//!
//! A ULA with M elements sees L propagation paths, each with an angle of
//! departure, a delay, and a Gaussian gain. OFDM subcarriers sit on the
//! offset grid Δ, and each subcarrier sees a slightly different steering
//! vector (beam squint) plus a delay-dependent pulse-shape coefficient β.
//! This module synthesizes realizations, exact covariances, noisy training
//! observations, and sample covariance estimates.

use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::linalg::{cis, hermitian_part, CMat, CVec, Cx};
use crate::rulers::TrainingMatrix;

/// Array and OFDM geometry.
#[derive(Debug, Clone, PartialEq)]
pub struct ArrayConfig {
    /// Antenna count.
    pub m: usize,
    /// Element spacing in carrier wavelengths.
    pub d: f64,
    /// Carrier frequency, Hz.
    pub f_c: f64,
    /// Signal bandwidth, Hz. Zero disables beam squint.
    pub b: f64,
    /// Subcarrier count.
    pub n_c: usize,
    /// Delay taps (cyclic-prefix length).
    pub n_taps: usize,
    /// Sample rate, Hz.
    pub f_s: f64,
    /// Raised-cosine roll-off in [0, 1].
    pub rolloff: f64,
}

impl ArrayConfig {
    /// Sample period 1/f_s.
    pub fn t_s(&self) -> f64 {
        1.0 / self.f_s
    }

    /// Largest representable delay (N−1)·T_s.
    pub fn max_delay(&self) -> f64 {
        (self.n_taps - 1) as f64 * self.t_s()
    }

    pub fn validate(&self) -> Result<()> {
        if self.m < 1 || self.n_c < 1 || self.n_taps < 1 {
            return Err(Error::InvalidArgument("M, N_c and N must be at least 1".into()));
        }
        if !(self.d > 0.0) {
            return Err(Error::InvalidArgument("antenna spacing must be positive".into()));
        }
        if !(self.f_c > 0.0) || !(self.f_s > 0.0) || self.b < 0.0 {
            return Err(Error::InvalidArgument("frequencies must be positive".into()));
        }
        if !(0.0..=1.0).contains(&self.rolloff) {
            return Err(Error::InvalidArgument("rolloff must lie in [0,1]".into()));
        }
        Ok(())
    }
}

impl Default for ArrayConfig {
    /// mmWave-ish defaults: half-wavelength ULA, 28 GHz carrier, 1760 MHz
    /// bandwidth and sampling, 16 subcarriers, 8 delay taps.
    fn default() -> Self {
        Self {
            m: 64,
            d: 0.5,
            f_c: 28.0e9,
            b: 1.76e9,
            n_c: 16,
            n_taps: 8,
            f_s: 1.76e9,
            rolloff: 0.25,
        }
    }
}

/// Subcarrier offsets Δ = [0, −1, …, −⌊N_c/2⌋, ⌊(N_c−1)/2⌋, …, 1].
pub fn delta_grid(n_c: usize) -> Vec<i64> {
    let mut delta = Vec::with_capacity(n_c);
    for k in 0..=(n_c / 2) {
        delta.push(-(k as i64));
    }
    for k in (1..=((n_c - 1) / 2)).rev() {
        delta.push(k as i64);
    }
    debug_assert_eq!(delta.len(), n_c);
    delta
}

/// Δ grid together with the physical offsets Δ[ℓ]·B/N_c.
#[derive(Debug, Clone)]
pub struct SubcarrierGrid {
    pub delta: Vec<i64>,
    pub offsets_hz: Vec<f64>,
}

impl SubcarrierGrid {
    pub fn new(n_c: usize, b: f64) -> Self {
        let delta = delta_grid(n_c);
        let offsets_hz = delta.iter().map(|&d| d as f64 * b / n_c as f64).collect();
        Self { delta, offsets_hz }
    }

    pub fn n_c(&self) -> usize {
        self.delta.len()
    }

    /// Index of the mirror subcarrier −ℓ mod N_c.
    pub fn mirror(&self, ell: usize) -> usize {
        (self.n_c() - ell) % self.n_c()
    }
}

/// Standard raised-cosine pulse p(t); the removable singularity at
/// |t| = T_s/(2·rolloff) is evaluated by its limit (π/4)·sinc(1/(2·rolloff)).
pub fn raised_cosine(t: f64, t_s: f64, rolloff: f64) -> f64 {
    let x = t / t_s;
    if rolloff == 0.0 {
        return sinc(x);
    }
    let u = 2.0 * rolloff * x;
    let denom = 1.0 - u * u;
    if denom.abs() < 1e-9 {
        return std::f64::consts::FRAC_PI_4 * sinc(1.0 / (2.0 * rolloff));
    }
    sinc(x) * (std::f64::consts::PI * rolloff * x).cos() / denom
}

/// Normalized sinc: sin(πx)/(πx).
pub fn sinc(x: f64) -> f64 {
    if x == 0.0 {
        1.0
    } else {
        let px = std::f64::consts::PI * x;
        px.sin() / px
    }
}

/// Relative squint offset Δ[ℓ]·B/(N_c·f_c) for a given Δ value.
pub fn squint_rel(cfg: &ArrayConfig, delta: i64) -> f64 {
    delta as f64 * cfg.b / (cfg.n_c as f64 * cfg.f_c)
}

/// Carrier-frequency steering vector: [a(θ)]_m = e^{−j2πd(m−1)sinθ}.
pub fn steering_carrier(theta: f64, cfg: &ArrayConfig) -> CVec {
    steering_with_rel(theta, 0.0, cfg)
}

/// Squinted steering vector for subcarrier ℓ: Γ(θ)[ℓ]·a(θ), where the squint
/// diagonal advances each element phase by the relative offset Δ[ℓ]·B/(N_c·f_c).
pub fn steering(theta: f64, ell: usize, cfg: &ArrayConfig) -> CVec {
    let delta = delta_grid(cfg.n_c)[ell];
    steering_with_rel(theta, squint_rel(cfg, delta), cfg)
}

fn steering_with_rel(theta: f64, rel: f64, cfg: &ArrayConfig) -> CVec {
    let rate = -2.0 * std::f64::consts::PI * cfg.d * theta.sin() * (1.0 - rel);
    CVec::from_fn(cfg.m, |m, _| cis(rate * m as f64))
}

/// Pulse-shape DFT coefficients β[ℓ] = Σ_{n=0}^{N−1} p_rc(nT_s − τ)e^{−j2πℓn/N_c}.
pub fn beta_coeffs(tau: f64, cfg: &ArrayConfig) -> Vec<Cx> {
    let t_s = cfg.t_s();
    let samples: Vec<f64> =
        (0..cfg.n_taps).map(|n| raised_cosine(n as f64 * t_s - tau, t_s, cfg.rolloff)).collect();
    (0..cfg.n_c)
        .map(|ell| {
            let mut acc = Cx::new(0.0, 0.0);
            for (n, &p) in samples.iter().enumerate() {
                let phase = -2.0 * std::f64::consts::PI * (ell * n) as f64 / cfg.n_c as f64;
                acc += Cx::new(p, 0.0) * cis(phase);
            }
            acc
        })
        .collect()
}

/// Per-path gain-variance profile used when drawing random channel parameters.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GainProfile {
    /// σ_l² = 1/L.
    Equal,
    /// σ_l² ∝ e^{−l}, normalized to unit sum.
    Exponential,
}

impl GainProfile {
    pub fn variances(&self, l: usize) -> Vec<f64> {
        let raw: Vec<f64> = match self {
            GainProfile::Equal => vec![1.0; l],
            GainProfile::Exponential => (0..l).map(|i| (-(i as f64)).exp()).collect(),
        };
        let sum: f64 = raw.iter().sum();
        raw.into_iter().map(|v| v / sum).collect()
    }
}

/// Per-path parameters: angles of departure, gain variances, delays.
#[derive(Debug, Clone)]
pub struct ChannelParams {
    pub aods: Vec<f64>,
    pub gain_vars: Vec<f64>,
    pub delays: Vec<f64>,
}

impl ChannelParams {
    /// Build and normalize so that Σσ_l² = 1.
    pub fn new(aods: Vec<f64>, gain_vars: Vec<f64>, delays: Vec<f64>) -> Result<Self> {
        if aods.len() != gain_vars.len() || aods.len() != delays.len() || aods.is_empty() {
            return Err(Error::DimensionMismatch(
                "aods, gain_vars and delays must have equal nonzero length".into(),
            ));
        }
        if gain_vars.iter().any(|&v| v < 0.0) {
            return Err(Error::InvalidArgument("gain variances must be nonnegative".into()));
        }
        let sum: f64 = gain_vars.iter().sum();
        if sum <= 0.0 {
            return Err(Error::InvalidArgument("total path power must be positive".into()));
        }
        let gain_vars = gain_vars.into_iter().map(|v| v / sum).collect();
        Ok(Self { aods, gain_vars, delays })
    }

    pub fn l(&self) -> usize {
        self.aods.len()
    }

    /// Draw L paths uniformly: angles over `angle_range`, delays over
    /// [0, (N−1)T_s], variances from the profile.
    pub fn random<R: Rng>(
        l: usize,
        angle_range: (f64, f64),
        profile: GainProfile,
        cfg: &ArrayConfig,
        rng: &mut R,
    ) -> Self {
        let aods = (0..l).map(|_| rng.gen_range(angle_range.0..=angle_range.1)).collect();
        let delays = (0..l).map(|_| rng.gen_range(0.0..=cfg.max_delay())).collect();
        Self { aods, gain_vars: profile.variances(l), delays }
    }

    pub fn validate(&self, cfg: &ArrayConfig) -> Result<()> {
        let max_tau = cfg.max_delay();
        if self.delays.iter().any(|&t| t < 0.0 || t > max_tau + 1e-12) {
            return Err(Error::InvalidArgument(format!(
                "delays must lie in [0, {max_tau:.3e}]"
            )));
        }
        Ok(())
    }
}

/// Steering dictionary: G equispaced angles with their carrier steering
/// vectors as columns.
#[derive(Debug, Clone)]
pub struct Dictionary {
    angles: Vec<f64>,
    base: CMat,
}

impl Dictionary {
    /// G angles equispaced over [range.0, range.1], endpoints included.
    pub fn uniform(g: usize, range: (f64, f64), cfg: &ArrayConfig) -> Result<Self> {
        if g < 1 {
            return Err(Error::InvalidArgument("dictionary needs at least one angle".into()));
        }
        if !(range.0 < range.1) && g > 1 {
            return Err(Error::InvalidArgument("angle range must be increasing".into()));
        }
        let angles: Vec<f64> = if g == 1 {
            vec![0.5 * (range.0 + range.1)]
        } else {
            (0..g)
                .map(|i| range.0 + (range.1 - range.0) * i as f64 / (g - 1) as f64)
                .collect()
        };
        let base = steering_matrix(&angles, 0.0, cfg);
        Ok(Self { angles, base })
    }

    pub fn g(&self) -> usize {
        self.angles.len()
    }

    pub fn angles(&self) -> &[f64] {
        &self.angles
    }

    /// Carrier-frequency steering matrix Ã (M×G).
    pub fn base(&self) -> &CMat {
        &self.base
    }

    /// Squinted dictionary Ã⊙Υ̃[ℓ] for one subcarrier (M×G).
    pub fn squinted(&self, ell: usize, cfg: &ArrayConfig) -> CMat {
        let delta = delta_grid(cfg.n_c)[ell];
        steering_matrix(&self.angles, squint_rel(cfg, delta), cfg)
    }

    /// Squinted steering matrix restricted to `support` columns (M×|S|).
    pub fn squinted_support(&self, support: &[usize], ell: usize, cfg: &ArrayConfig) -> CMat {
        let delta = delta_grid(cfg.n_c)[ell];
        let angles: Vec<f64> = support.iter().map(|&g| self.angles[g]).collect();
        steering_matrix(&angles, squint_rel(cfg, delta), cfg)
    }
}

fn steering_matrix(angles: &[f64], rel: f64, cfg: &ArrayConfig) -> CMat {
    let rates: Vec<f64> = angles
        .iter()
        .map(|&th| -2.0 * std::f64::consts::PI * cfg.d * th.sin() * (1.0 - rel))
        .collect();
    CMat::from_fn(cfg.m, angles.len(), |m, g| cis(rates[g] * m as f64))
}

/// One coherence-block draw: path gains and the per-subcarrier responses.
#[derive(Debug, Clone)]
pub struct ChannelRealization {
    pub gains: CVec,
    pub freq_response: Vec<CVec>,
}

impl ChannelRealization {
    pub fn n_c(&self) -> usize {
        self.freq_response.len()
    }
}

/// Standard complex Gaussian sample, CN(0, 1).
pub fn cn01<R: Rng>(rng: &mut R) -> Cx {
    let re: f64 = rng.sample(StandardNormal);
    let im: f64 = rng.sample(StandardNormal);
    Cx::new(re * std::f64::consts::FRAC_1_SQRT_2, im * std::f64::consts::FRAC_1_SQRT_2)
}

/// Draw one coherence block: g_l ~ CN(0, σ_l²) and
/// h[ℓ] = Σ_l g_l β_l[ℓ] a(ϑ_l)[ℓ].
pub fn synth_channel<R: Rng>(
    params: &ChannelParams,
    cfg: &ArrayConfig,
    rng: &mut R,
) -> ChannelRealization {
    let l = params.l();
    let gains = CVec::from_fn(l, |i, _| cn01(rng) * Cx::new(params.gain_vars[i].sqrt(), 0.0));
    let betas: Vec<Vec<Cx>> = params.delays.iter().map(|&tau| beta_coeffs(tau, cfg)).collect();
    let delta = delta_grid(cfg.n_c);
    let freq_response = (0..cfg.n_c)
        .map(|ell| {
            let mut h = CVec::zeros(cfg.m);
            for (i, &theta) in params.aods.iter().enumerate() {
                let a = steering_with_rel(theta, squint_rel(cfg, delta[ell]), cfg);
                h += a * (gains[i] * betas[i][ell]);
            }
            h
        })
        .collect();
    ChannelRealization { gains, freq_response }
}

/// What a covariance set describes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CovKind {
    TrueChannel,
    TrueObservation,
    Sample,
    Reconstructed,
}

impl CovKind {
    pub fn as_str(&self) -> &'static str {
        match self {
            CovKind::TrueChannel => "true_channel",
            CovKind::TrueObservation => "true_observation",
            CovKind::Sample => "sample",
            CovKind::Reconstructed => "reconstructed",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "true_channel" => Ok(CovKind::TrueChannel),
            "true_observation" => Ok(CovKind::TrueObservation),
            "sample" => Ok(CovKind::Sample),
            "reconstructed" => Ok(CovKind::Reconstructed),
            other => Err(Error::Parse(format!("unknown covariance kind {other:?}"))),
        }
    }
}

/// Per-subcarrier Hermitian matrices of a common dimension.
#[derive(Debug, Clone)]
pub struct CovarianceSet {
    kind: CovKind,
    mats: Vec<CMat>,
}

impl CovarianceSet {
    pub fn new(kind: CovKind, mats: Vec<CMat>) -> Result<Self> {
        if mats.is_empty() {
            return Err(Error::InvalidArgument("covariance set needs one matrix per subcarrier".into()));
        }
        let dim = mats[0].nrows();
        for m in &mats {
            if m.nrows() != dim || m.ncols() != dim {
                return Err(Error::DimensionMismatch(
                    "covariance matrices must be square and equally sized".into(),
                ));
            }
        }
        Ok(Self { kind, mats })
    }

    pub fn kind(&self) -> CovKind {
        self.kind
    }

    pub fn dim(&self) -> usize {
        self.mats[0].nrows()
    }

    pub fn n_subcarriers(&self) -> usize {
        self.mats.len()
    }

    pub fn mat(&self, ell: usize) -> &CMat {
        &self.mats[ell]
    }

    pub fn mats(&self) -> &[CMat] {
        &self.mats
    }

    /// Largest entrywise deviation from Hermitian symmetry across subcarriers.
    pub fn hermitian_defect(&self) -> f64 {
        self.mats
            .iter()
            .map(|m| (m - m.adjoint()).camax())
            .fold(0.0, f64::max)
    }

    /// Smallest eigenvalue relative to the trace, minimized over subcarriers;
    /// slightly negative values are rounding noise on a PSD matrix.
    pub fn min_eig_over_trace(&self) -> f64 {
        self.mats
            .iter()
            .map(|m| {
                let (vals, _) = crate::linalg::eigh(m);
                let tr: f64 = m.diagonal().iter().map(|c| c.re).sum();
                if tr > 0.0 { vals[vals.len() - 1] / tr } else { 0.0 }
            })
            .fold(f64::INFINITY, f64::min)
    }

    /// CSV export, one entry per line: l,row,col,re,im.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("l,row,col,re,im\n");
        for (ell, m) in self.mats.iter().enumerate() {
            for row in 0..m.nrows() {
                for col in 0..m.ncols() {
                    let v = m[(row, col)];
                    out.push_str(&format!("{ell},{row},{col},{},{}\n", v.re, v.im));
                }
            }
        }
        out
    }

    /// Parse the CSV produced by [`to_csv`]. Dimensions are inferred.
    pub fn from_csv(kind: CovKind, text: &str) -> Result<Self> {
        let mut entries: Vec<(usize, usize, usize, f64, f64)> = Vec::new();
        let mut max_ell = 0usize;
        let mut max_idx = 0usize;
        for (lineno, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with("l,") {
                continue;
            }
            let fields: Vec<&str> = line.split(',').collect();
            if fields.len() != 5 {
                return Err(Error::Parse(format!("line {}: expected 5 fields", lineno + 1)));
            }
            let parse_usize = |s: &str| {
                s.trim().parse::<usize>().map_err(|e| Error::Parse(format!("line {}: {e}", lineno + 1)))
            };
            let parse_f64 = |s: &str| {
                s.trim().parse::<f64>().map_err(|e| Error::Parse(format!("line {}: {e}", lineno + 1)))
            };
            let ell = parse_usize(fields[0])?;
            let row = parse_usize(fields[1])?;
            let col = parse_usize(fields[2])?;
            let re = parse_f64(fields[3])?;
            let im = parse_f64(fields[4])?;
            max_ell = max_ell.max(ell);
            max_idx = max_idx.max(row).max(col);
            entries.push((ell, row, col, re, im));
        }
        if entries.is_empty() {
            return Err(Error::Parse("no covariance entries found".into()));
        }
        let dim = max_idx + 1;
        let mut mats = vec![CMat::zeros(dim, dim); max_ell + 1];
        for (ell, row, col, re, im) in entries {
            mats[ell][(row, col)] = Cx::new(re, im);
        }
        Self::new(kind, mats)
    }

    /// Compact binary export: magic, kind, subcarrier count, dimension, then
    /// little-endian f64 re/im pairs in row-major order.
    pub fn write_binary<W: std::io::Write>(&self, w: &mut W) -> Result<()> {
        w.write_all(b"CVB1")?;
        w.write_all(&[match self.kind {
            CovKind::TrueChannel => 0u8,
            CovKind::TrueObservation => 1,
            CovKind::Sample => 2,
            CovKind::Reconstructed => 3,
        }])?;
        w.write_all(&(self.mats.len() as u32).to_le_bytes())?;
        w.write_all(&(self.dim() as u32).to_le_bytes())?;
        for m in &self.mats {
            for row in 0..m.nrows() {
                for col in 0..m.ncols() {
                    let v = m[(row, col)];
                    w.write_all(&v.re.to_le_bytes())?;
                    w.write_all(&v.im.to_le_bytes())?;
                }
            }
        }
        Ok(())
    }

    pub fn read_binary<R: std::io::Read>(r: &mut R) -> Result<Self> {
        let mut magic = [0u8; 4];
        r.read_exact(&mut magic)?;
        if &magic != b"CVB1" {
            return Err(Error::Parse("bad covariance binary magic".into()));
        }
        let mut kind_byte = [0u8; 1];
        r.read_exact(&mut kind_byte)?;
        let kind = match kind_byte[0] {
            0 => CovKind::TrueChannel,
            1 => CovKind::TrueObservation,
            2 => CovKind::Sample,
            3 => CovKind::Reconstructed,
            k => return Err(Error::Parse(format!("bad covariance kind byte {k}"))),
        };
        let mut quad = [0u8; 4];
        r.read_exact(&mut quad)?;
        let count = u32::from_le_bytes(quad) as usize;
        r.read_exact(&mut quad)?;
        let dim = u32::from_le_bytes(quad) as usize;
        let mut mats = Vec::with_capacity(count);
        let mut oct = [0u8; 8];
        for _ in 0..count {
            let mut m = CMat::zeros(dim, dim);
            for row in 0..dim {
                for col in 0..dim {
                    r.read_exact(&mut oct)?;
                    let re = f64::from_le_bytes(oct);
                    r.read_exact(&mut oct)?;
                    let im = f64::from_le_bytes(oct);
                    m[(row, col)] = Cx::new(re, im);
                }
            }
            mats.push(m);
        }
        Self::new(kind, mats)
    }
}

/// Exact channel covariance C_h[ℓ] = Σ_l σ_l²|β_l[ℓ]|² a(ϑ_l)[ℓ]a(ϑ_l)[ℓ]^H.
pub fn channel_covariance(params: &ChannelParams, cfg: &ArrayConfig) -> CovarianceSet {
    let betas: Vec<Vec<Cx>> = params.delays.iter().map(|&tau| beta_coeffs(tau, cfg)).collect();
    let delta = delta_grid(cfg.n_c);
    let mats = (0..cfg.n_c)
        .map(|ell| {
            let mut c = CMat::zeros(cfg.m, cfg.m);
            for (i, &theta) in params.aods.iter().enumerate() {
                let a = steering_with_rel(theta, squint_rel(cfg, delta[ell]), cfg);
                let w = params.gain_vars[i] * betas[i][ell].norm_sqr();
                // c += w * a a^H without the intermediate matrix
                let m = cfg.m;
                for rr in 0..m {
                    for cc in 0..m {
                        c[(rr, cc)] += Cx::new(w, 0.0) * a[rr] * a[cc].conj();
                    }
                }
            }
            hermitian_part(&c)
        })
        .collect();
    CovarianceSet::new(CovKind::TrueChannel, mats).expect("n_c >= 1")
}

/// Exact observation covariance C_φ[ℓ] = X C_h[ℓ] X^H + σ_v² I.
pub fn observation_covariance(
    c_h: &CovarianceSet,
    x: &TrainingMatrix,
    noise_var: f64,
) -> Result<CovarianceSet> {
    if x.antennas() != c_h.dim() {
        return Err(Error::DimensionMismatch(format!(
            "training has {} columns, covariance dimension is {}",
            x.antennas(),
            c_h.dim()
        )));
    }
    let t = x.t_tr();
    let eye = CMat::identity(t, t);
    let mats = c_h
        .mats()
        .iter()
        .map(|c| x.entries() * c * x.entries().adjoint() + eye.scale(noise_var))
        .collect();
    CovarianceSet::new(CovKind::TrueObservation, mats)
}

/// One noisy training block: φ[ℓ] = X h[ℓ] + v[ℓ] with v ~ CN(0, σ_v² I).
pub fn observe<R: Rng>(
    x: &TrainingMatrix,
    realization: &ChannelRealization,
    noise_var: f64,
    rng: &mut R,
) -> Result<Vec<CVec>> {
    let m = realization.freq_response[0].len();
    if x.antennas() != m {
        return Err(Error::DimensionMismatch(format!(
            "training has {} columns, channel has {} antennas",
            x.antennas(),
            m
        )));
    }
    let sigma = noise_var.sqrt();
    Ok(realization
        .freq_response
        .iter()
        .map(|h| {
            let mut phi = x.entries() * h;
            if noise_var > 0.0 {
                for v in phi.iter_mut() {
                    *v += cn01(rng) * Cx::new(sigma, 0.0);
                }
            }
            phi
        })
        .collect())
}

/// Sample covariance over blocks: Ĉ_φ[ℓ] = (1/K)Σ_k φ_k[ℓ]φ_k[ℓ]^H.
pub fn sample_covariance(observations: &[Vec<CVec>]) -> Result<CovarianceSet> {
    if observations.is_empty() {
        return Err(Error::InvalidArgument("need at least one block".into()));
    }
    let n_c = observations[0].len();
    let dim = observations[0][0].len();
    let k = observations.len();
    let mut mats = vec![CMat::zeros(dim, dim); n_c];
    for block in observations {
        if block.len() != n_c {
            return Err(Error::DimensionMismatch("blocks disagree on subcarrier count".into()));
        }
        for (ell, phi) in block.iter().enumerate() {
            if phi.len() != dim {
                return Err(Error::DimensionMismatch("blocks disagree on dimension".into()));
            }
            let m = &mut mats[ell];
            for rr in 0..dim {
                for cc in 0..dim {
                    m[(rr, cc)] += phi[rr] * phi[cc].conj();
                }
            }
        }
    }
    let scale = Cx::new(1.0 / k as f64, 0.0);
    for m in &mut mats {
        *m *= scale;
    }
    CovarianceSet::new(CovKind::Sample, mats)
}
