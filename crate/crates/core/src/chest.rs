//! Channel estimation from a single training block.
//!
//! Two estimator families: classical LMMSE from the (identified) channel
//! covariance — full form and a low-complexity low-rank form that are the
//! same estimator algebraically — and the delay-gain estimator, which pools
//! all subcarriers into per-path delay and gain parameters so its per-block
//! cost is independent of the antenna count.

use crate::channel::{beta_coeffs, raised_cosine, ArrayConfig, CovarianceSet, Dictionary};
use crate::error::{Error, Result};
use crate::ident::IdentResult;
use crate::linalg::{solve_psd, CMat, CVec, Cx};
use crate::rulers::TrainingMatrix;

/// Per-subcarrier channel estimates ĥ[ℓ].
#[derive(Debug, Clone)]
pub struct ChannelEstimate {
    pub method: EstMethod,
    pub per_ell: Vec<CVec>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EstMethod {
    Lmmse,
    Dg,
}

impl EstMethod {
    pub fn as_str(&self) -> &'static str {
        match self {
            EstMethod::Lmmse => "lmmse",
            EstMethod::Dg => "dg",
        }
    }
}

/// LMMSE application matrices W[ℓ] = Ĉ_h X^H (X Ĉ_h X^H + σ_v²I)⁻¹, so that
/// ĥ[ℓ] = W[ℓ]·φ[ℓ]. The inner solve is Cholesky-backed with a pseudo-inverse
/// fallback, so a rank-deficient noiseless system resolves to the least-norm
/// estimator instead of failing.
pub fn lmmse_weights(x: &TrainingMatrix, c_h: &CovarianceSet, noise_var: f64) -> Result<Vec<CMat>> {
    if x.antennas() != c_h.dim() {
        return Err(Error::DimensionMismatch(format!(
            "training acts on {} antennas, covariance is {}-dimensional",
            x.antennas(),
            c_h.dim()
        )));
    }
    let t = x.t_tr();
    c_h.mats()
        .iter()
        .map(|c| {
            let xc = x.entries() * c; // T×M
            let inner = &xc * x.entries().adjoint() + CMat::identity(t, t).scale(noise_var);
            // W = (A⁻¹ X C)^H since C is Hermitian.
            Ok(solve_psd(&inner, &xc).adjoint())
        })
        .collect()
}

/// Full LMMSE estimator.
pub fn lmmse_estimate(
    phi: &[CVec],
    x: &TrainingMatrix,
    c_h: &CovarianceSet,
    noise_var: f64,
) -> Result<ChannelEstimate> {
    if phi.len() != c_h.n_subcarriers() {
        return Err(Error::DimensionMismatch(format!(
            "{} observations for {} subcarriers",
            phi.len(),
            c_h.n_subcarriers()
        )));
    }
    let weights = lmmse_weights(x, c_h, noise_var)?;
    let per_ell = weights.iter().zip(phi).map(|(w, p)| w * p).collect();
    Ok(ChannelEstimate { method: EstMethod::Lmmse, per_ell })
}

/// Low-rank LMMSE through the matrix inversion lemma: with Ĉ_h[ℓ] = B D B^H
/// only an |S|×|S| system is inverted. Zero-variance support entries are
/// dropped per subcarrier (they contribute nothing to the covariance).
/// Matches `lmmse_estimate` on the equivalent covariance to numerical
/// precision.
pub fn lmmse_estimate_lowrank(
    phi: &[CVec],
    x: &TrainingMatrix,
    basis: &[CMat],
    gains: &[Vec<f64>],
    noise_var: f64,
) -> Result<ChannelEstimate> {
    if phi.len() != basis.len() || phi.len() != gains.len() || phi.is_empty() {
        return Err(Error::DimensionMismatch(
            "observations, bases and gains must cover the same subcarriers".into(),
        ));
    }
    let m = x.antennas();
    let mut per_ell = Vec::with_capacity(phi.len());
    for ((p, b), d) in phi.iter().zip(basis).zip(gains) {
        let kept: Vec<usize> = (0..d.len()).filter(|&i| d[i] > 0.0).collect();
        if kept.is_empty() {
            per_ell.push(CVec::zeros(m));
            continue;
        }
        let b_kept = crate::ident::select_columns(b, &kept);
        let psi = x.entries() * &b_kept; // T×|S'|
        let dk: Vec<f64> = kept.iter().map(|&i| d[i]).collect();
        let u = psi.adjoint() * p;
        let zeta = if noise_var > 0.0 {
            // ζ = σ⁻²D[u − G(D⁻¹ + σ⁻²G)⁻¹σ⁻²u], G = Ψ^HΨ.
            let g = psi.adjoint() * &psi;
            let mut inner = g.scale(1.0 / noise_var);
            for (i, &di) in dk.iter().enumerate() {
                inner[(i, i)] += Cx::new(1.0 / di, 0.0);
            }
            let solved = solve_psd(&inner, &CMat::from_columns(&[u.scale(1.0 / noise_var)]));
            let corrected = &u - &g * solved.column(0).into_owned();
            CVec::from_fn(dk.len(), |i, _| corrected[i] * Cx::new(dk[i] / noise_var, 0.0))
        } else {
            // Noiseless limit: least-norm solve of the full-rank-or-not system.
            let mut cov = CMat::zeros(psi.nrows(), psi.nrows());
            for (i, &di) in dk.iter().enumerate() {
                let col = psi.column(i);
                for rr in 0..psi.nrows() {
                    for cc in 0..psi.nrows() {
                        cov[(rr, cc)] += Cx::new(di, 0.0) * col[rr] * col[cc].conj();
                    }
                }
            }
            let sol = solve_psd(&cov, &CMat::from_columns(&[p.clone()]));
            CVec::from_fn(dk.len(), |i, _| {
                (psi.column(i).adjoint() * sol.column(0))[(0, 0)] * Cx::new(dk[i], 0.0)
            })
        };
        per_ell.push(&b_kept * zeta);
    }
    Ok(ChannelEstimate { method: EstMethod::Lmmse, per_ell })
}

/// MMSE estimate of the per-path gains ζ[ℓ] at one subcarrier:
/// ζ̂ = D̂Ψ^H(ΨD̂Ψ^H + σ_v²I)⁻¹φ.
pub fn gain_mmse(phi: &CVec, psi_s: &CMat, gains: &[f64], noise_var: f64) -> Result<CVec> {
    let (t, l) = psi_s.shape();
    if phi.len() != t || gains.len() != l {
        return Err(Error::DimensionMismatch(format!(
            "phi ({}), psi ({t}×{l}), gains ({})",
            phi.len(),
            gains.len()
        )));
    }
    let mut cov = CMat::identity(t, t).scale(noise_var);
    for (i, &d) in gains.iter().enumerate() {
        if d == 0.0 {
            continue;
        }
        let col = psi_s.column(i);
        for rr in 0..t {
            for cc in 0..t {
                cov[(rr, cc)] += Cx::new(d, 0.0) * col[rr] * col[cc].conj();
            }
        }
    }
    let sol = solve_psd(&cov, &CMat::from_columns(&[phi.clone()]));
    Ok(CVec::from_fn(l, |i, _| {
        (psi_s.column(i).adjoint() * sol.column(0))[(0, 0)] * Cx::new(gains[i], 0.0)
    }))
}

/// Samples of the shaping pulse, p_n(τ) = p_rc(n·T_s − τ) for n = 0..N−1.
pub fn pulse_vector(tau: f64, cfg: &ArrayConfig) -> Vec<f64> {
    (0..cfg.n_taps)
        .map(|n| raised_cosine(n as f64 * cfg.t_s() - tau, cfg.t_s(), cfg.rolloff))
        .collect()
}

/// Delay-domain image of one path's gain trajectory: z = F^H·ζ with F the
/// first N columns of the unitary N_c-point DFT. For an exact trajectory
/// ζ[ℓ] = g·β[ℓ] this returns √N_c·g·p_rc(n·T_s−τ).
pub fn delay_transform(traj: &CVec, cfg: &ArrayConfig) -> Result<CVec> {
    if traj.len() != cfg.n_c {
        return Err(Error::DimensionMismatch(format!(
            "trajectory has {} entries, expected N_c={}",
            traj.len(),
            cfg.n_c
        )));
    }
    if cfg.n_taps > cfg.n_c {
        return Err(Error::InvalidArgument(format!(
            "delay transform needs N ≤ N_c (got N={}, N_c={})",
            cfg.n_taps, cfg.n_c
        )));
    }
    let scale = 1.0 / (cfg.n_c as f64).sqrt();
    Ok(CVec::from_fn(cfg.n_taps, |n, _| {
        let mut acc = Cx::new(0.0, 0.0);
        for ell in 0..cfg.n_c {
            let phase = 2.0 * std::f64::consts::PI * (ell * n) as f64 / cfg.n_c as f64;
            acc += traj[ell] * Cx::new(phase.cos(), phase.sin());
        }
        acc * scale
    }))
}

/// Options for the delay search.
#[derive(Debug, Clone)]
pub struct DelayOpts {
    /// Grid size over [0, (N−1)T_s]; defaults to 20·N.
    pub grid_size: Option<usize>,
    /// One golden-section pass inside the winning interval.
    pub refine: bool,
    /// Restrict the search to the span of the two strongest delay samples
    /// (high-SNR shortcut).
    pub fast: bool,
}

impl Default for DelayOpts {
    fn default() -> Self {
        Self { grid_size: None, refine: true, fast: false }
    }
}

/// A delay estimate; `degenerate` flags an uninformative (flat) objective,
/// in which case the grid minimum is returned.
#[derive(Debug, Clone, Copy)]
pub struct DelayEstimate {
    pub tau: f64,
    pub degenerate: bool,
}

/// Normalized pulse correlation pooled over blocks:
/// D(τ) = Σ_k |p(τ)^H z_k| / (‖p(τ)‖‖z_k‖). Real pulse, so conjugation is
/// immaterial. The true delay maximizes D (Cauchy–Schwarz equality at K=1).
fn delay_objective(tau: f64, z: &[&CVec], cfg: &ArrayConfig) -> f64 {
    let p = pulse_vector(tau, cfg);
    let p_norm = p.iter().map(|v| v * v).sum::<f64>().sqrt();
    if p_norm == 0.0 {
        return 0.0;
    }
    let mut acc = 0.0;
    for zk in z {
        let mut dot = Cx::new(0.0, 0.0);
        for (n, &pn) in p.iter().enumerate() {
            dot += zk[n] * pn;
        }
        acc += dot.norm() / (p_norm * zk.norm());
    }
    acc
}

/// Estimate one path delay from its delay-domain images over K blocks.
pub fn delay_estimate(z: &[CVec], cfg: &ArrayConfig, opts: &DelayOpts) -> Result<DelayEstimate> {
    let grid = opts.grid_size.unwrap_or(20 * cfg.n_taps);
    if grid < 2 {
        return Err(Error::InvalidArgument("delay grid needs at least 2 points".into()));
    }
    let live: Vec<&CVec> = z.iter().filter(|zk| zk.norm() > 0.0).collect();
    if live.is_empty() {
        return Err(Error::DegenerateObservation);
    }
    let horizon = cfg.max_delay();
    let (mut lo, mut hi) = (0.0f64, horizon);
    if opts.fast {
        // Power profile across taps picks the two strongest samples; their
        // span brackets the delay at high SNR.
        let mut power = vec![0.0f64; cfg.n_taps];
        for zk in &live {
            for (n, p) in power.iter_mut().enumerate() {
                *p += zk[n].norm_sqr();
            }
        }
        let mut idx: Vec<usize> = (0..cfg.n_taps).collect();
        idx.sort_by(|&a, &b| power[b].partial_cmp(&power[a]).unwrap().then(a.cmp(&b)));
        let (a, b) = (idx[0].min(idx[1]), idx[0].max(idx[1]));
        lo = a as f64 * cfg.t_s();
        hi = (b as f64 * cfg.t_s()).min(horizon);
        if hi <= lo {
            hi = (lo + cfg.t_s()).min(horizon);
        }
    }
    let step = (hi - lo) / (grid - 1) as f64;
    let mut best = (lo, f64::NEG_INFINITY);
    for i in 0..grid {
        let tau = lo + i as f64 * step;
        let val = delay_objective(tau, &live, cfg);
        if val > best.1 {
            best = (tau, val);
        }
    }
    if best.1 < 1e-12 {
        return Ok(DelayEstimate { tau: lo, degenerate: true });
    }
    let mut tau = best.0;
    if opts.refine {
        let (mut a, mut b) = ((tau - step).max(lo), (tau + step).min(hi));
        // Golden-section ascent on the winning interval.
        let inv_phi = 0.5 * (5.0f64.sqrt() - 1.0);
        let mut c = b - inv_phi * (b - a);
        let mut d = a + inv_phi * (b - a);
        let mut fc = delay_objective(c, &live, cfg);
        let mut fd = delay_objective(d, &live, cfg);
        for _ in 0..80 {
            if fc > fd {
                b = d;
                d = c;
                fd = fc;
                c = b - inv_phi * (b - a);
                fc = delay_objective(c, &live, cfg);
            } else {
                a = c;
                c = d;
                fc = fd;
                d = a + inv_phi * (b - a);
                fd = delay_objective(d, &live, cfg);
            }
            if b - a < 1e-12 * horizon.max(1e-300) {
                break;
            }
        }
        let mid = 0.5 * (a + b);
        if delay_objective(mid, &live, cfg) >= best.1 {
            tau = mid;
        }
    }
    Ok(DelayEstimate { tau, degenerate: false })
}

/// Least-squares path gains from stacked per-subcarrier estimates:
/// ĝ = (stack Θ̂[ℓ])^† (stack ζ̂[ℓ]). The stacked matrix is diagonal per
/// block row, so the solution decouples per path.
pub fn path_gains_lsq(zeta: &[CVec], thetas: &[CVec]) -> Result<CVec> {
    if zeta.len() != thetas.len() || zeta.is_empty() {
        return Err(Error::DimensionMismatch(
            "need one Θ̂ diagonal per subcarrier estimate".into(),
        ));
    }
    let l = thetas[0].len();
    let mut out = CVec::zeros(l);
    for i in 0..l {
        let mut num = Cx::new(0.0, 0.0);
        let mut den = 0.0f64;
        for (zl, th) in zeta.iter().zip(thetas) {
            num += th[i].conj() * zl[i];
            den += th[i].norm_sqr();
        }
        if den == 0.0 {
            return Err(Error::RankDeficient);
        }
        out[i] = num / Cx::new(den, 0.0);
    }
    Ok(out)
}

/// Fitted delay-gain channel model shared by every block of a coherence
/// window.
#[derive(Debug, Clone)]
pub struct DelayGainModel {
    /// τ̂ per support path, in [0, (N−1)T_s].
    pub delays: Vec<f64>,
    /// Diagonals of Θ̂[ℓ] = diag(β̂_l[ℓ]), regenerated from the delays.
    pub thetas: Vec<CVec>,
    /// ĝ_k per observation block.
    pub block_gains: Vec<CVec>,
    /// Per-path flat-objective flags from the delay search.
    pub degenerate: Vec<bool>,
}

/// Fit the delay-gain model: per-block gain MMSE, per-path delay search over
/// all blocks, then per-block least-squares gains. All steps act on
/// T_tr- or |S|-sized objects only — no M-dimensional work.
pub fn dg_fit(
    observations: &[Vec<CVec>],
    psi_s: &[CMat],
    gains: &[Vec<f64>],
    noise_var: f64,
    cfg: &ArrayConfig,
    opts: &DelayOpts,
) -> Result<DelayGainModel> {
    let l = psi_s.first().map(|p| p.ncols()).unwrap_or(0);
    if l == 0 {
        return Err(Error::EmptySupport);
    }
    if observations.is_empty() {
        return Err(Error::InvalidArgument("need at least one observation block".into()));
    }
    // ζ̂_k[ℓ] per block and subcarrier.
    let zetas: Vec<Vec<CVec>> = observations
        .iter()
        .map(|block| {
            block
                .iter()
                .enumerate()
                .map(|(ell, phi)| gain_mmse(phi, &psi_s[ell], &gains[ell], noise_var))
                .collect::<Result<Vec<_>>>()
        })
        .collect::<Result<Vec<_>>>()?;

    let mut delays = Vec::with_capacity(l);
    let mut degenerate = Vec::with_capacity(l);
    for path in 0..l {
        let z: Vec<CVec> = zetas
            .iter()
            .map(|per_ell| {
                let traj = CVec::from_fn(cfg.n_c, |ell, _| per_ell[ell][path]);
                delay_transform(&traj, cfg)
            })
            .collect::<Result<Vec<_>>>()?;
        let est = delay_estimate(&z, cfg, opts)?;
        delays.push(est.tau);
        degenerate.push(est.degenerate);
    }
    let thetas: Vec<CVec> = (0..cfg.n_c)
        .map(|ell| {
            CVec::from_fn(l, |path, _| beta_coeffs(delays[path], cfg)[ell])
        })
        .collect();
    let block_gains = zetas
        .iter()
        .map(|per_ell| path_gains_lsq(per_ell, &thetas))
        .collect::<Result<Vec<_>>>()?;
    Ok(DelayGainModel { delays, thetas, block_gains, degenerate })
}

/// Full delay-gain estimator: fit the model on the identified support, then
/// reconstruct ĥ_k[ℓ] = (Ã_S⊙Υ̃_S[ℓ])·Θ̂[ℓ]·ĝ_k per block.
pub fn dg_estimate(
    observations: &[Vec<CVec>],
    ident: &IdentResult,
    x: &TrainingMatrix,
    dict: &Dictionary,
    cfg: &ArrayConfig,
    noise_var: f64,
    opts: &DelayOpts,
) -> Result<(DelayGainModel, Vec<ChannelEstimate>)> {
    if ident.support.is_empty() {
        return Err(Error::EmptySupport);
    }
    let bases: Vec<CMat> =
        (0..cfg.n_c).map(|ell| dict.squinted_support(&ident.support, ell, cfg)).collect();
    dg_estimate_with_basis(observations, &bases, &ident.gains, x, cfg, noise_var, opts)
}

/// Delay-gain estimation on explicit per-subcarrier steering bases (M×L),
/// for callers whose directions live off the dictionary grid.
pub fn dg_estimate_with_basis(
    observations: &[Vec<CVec>],
    bases: &[CMat],
    gains: &[Vec<f64>],
    x: &TrainingMatrix,
    cfg: &ArrayConfig,
    noise_var: f64,
    opts: &DelayOpts,
) -> Result<(DelayGainModel, Vec<ChannelEstimate>)> {
    if bases.len() != cfg.n_c || bases.iter().any(|b| b.ncols() == 0) {
        return Err(Error::EmptySupport);
    }
    let psi_s: Vec<CMat> = bases.iter().map(|b| x.entries() * b).collect();
    let model = dg_fit(observations, &psi_s, gains, noise_var, cfg, opts)?;
    let estimates = model
        .block_gains
        .iter()
        .map(|g| {
            let per_ell = (0..cfg.n_c)
                .map(|ell| {
                    let weighted =
                        CVec::from_fn(g.len(), |i, _| model.thetas[ell][i] * g[i]);
                    &bases[ell] * weighted
                })
                .collect();
            ChannelEstimate { method: EstMethod::Dg, per_ell }
        })
        .collect();
    Ok((model, estimates))
}
