//! Covariance support identification and gain-variance recovery.
//!
//! Four identifiers share a common output shape: greedy wideband COMP,
//! subspace MUSIC, MUSIC on spatially smoothed coarray statistics (which
//! survives rank-deficient sample covariances, T_tr < L), and a maximum-
//! likelihood baseline driven by a multiplicative fixed point. All of them
//! end with per-subcarrier gain variances on a dictionary support, from which
//! the channel covariance is reconstructed.

use crate::channel::{delta_grid, steering, squint_rel, ArrayConfig, CovKind, CovarianceSet, Dictionary};
use crate::error::{Error, Result};
use crate::linalg::{cis, eigh, hermitian_part, nnls, pinv, CMat, CVec, Cx, RMat, RVec};
use crate::rulers::{Ruler, TrainingMatrix};

/// Identifier tags carried by results and CSV rows.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Algo {
    Wcomp,
    Music,
    SsMusic,
    Ml,
    Genie,
}

impl Algo {
    pub fn as_str(&self) -> &'static str {
        match self {
            Algo::Wcomp => "wcomp",
            Algo::Music => "music",
            Algo::SsMusic => "ss",
            Algo::Ml => "ml",
            Algo::Genie => "genie",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "wcomp" => Ok(Algo::Wcomp),
            "music" => Ok(Algo::Music),
            "ss" | "ss-music" => Ok(Algo::SsMusic),
            "ml" => Ok(Algo::Ml),
            "genie" => Ok(Algo::Genie),
            other => Err(Error::Parse(format!("unknown algorithm {other:?}"))),
        }
    }
}

/// Per-subcarrier measurement matrices Ψ[ℓ] = X·(Ã⊙Υ̃[ℓ]), shape T_tr×G.
#[derive(Debug, Clone)]
pub struct MeasurementMatrices {
    pub per_ell: Vec<CMat>,
}

impl MeasurementMatrices {
    pub fn n_c(&self) -> usize {
        self.per_ell.len()
    }

    pub fn t_tr(&self) -> usize {
        self.per_ell[0].nrows()
    }

    pub fn g(&self) -> usize {
        self.per_ell[0].ncols()
    }

    /// Columns restricted to a support set, one matrix per subcarrier.
    pub fn select(&self, support: &[usize]) -> Vec<CMat> {
        self.per_ell.iter().map(|psi| select_columns(psi, support)).collect()
    }
}

pub(crate) fn select_columns(m: &CMat, cols: &[usize]) -> CMat {
    CMat::from_fn(m.nrows(), cols.len(), |r, c| m[(r, cols[c])])
}

/// Build Ψ[ℓ] for every subcarrier.
pub fn measurement_matrices(
    x: &TrainingMatrix,
    dict: &Dictionary,
    cfg: &ArrayConfig,
) -> Result<MeasurementMatrices> {
    if x.antennas() != cfg.m || dict.base().nrows() != cfg.m {
        return Err(Error::DimensionMismatch(format!(
            "training ({} cols) and dictionary ({} rows) must match M={}",
            x.antennas(),
            dict.base().nrows(),
            cfg.m
        )));
    }
    let per_ell = (0..cfg.n_c).map(|ell| x.entries() * dict.squinted(ell, cfg)).collect();
    Ok(MeasurementMatrices { per_ell })
}

/// Identification output: support, per-subcarrier gain variances, and the
/// reconstructed channel covariance.
#[derive(Debug, Clone)]
pub struct IdentResult {
    pub algo: Algo,
    /// Dictionary indices, ascending.
    pub support: Vec<usize>,
    /// gains[ℓ][i] = estimated variance of support entry i at subcarrier ℓ.
    pub gains: Vec<Vec<f64>>,
    pub reconstructed: CovarianceSet,
}

/// Ĉ_h[ℓ] = (Ã_S⊙Υ̃_S[ℓ]) diag(gains[ℓ]) (Ã_S⊙Υ̃_S[ℓ])^H.
pub fn reconstruct_cov(
    support: &[usize],
    gains: &[Vec<f64>],
    dict: &Dictionary,
    cfg: &ArrayConfig,
) -> CovarianceSet {
    let angles: Vec<f64> = support.iter().map(|&g| dict.angles()[g]).collect();
    reconstruct_from_angles(&angles, gains, cfg)
}

/// Same reconstruction from explicit angles (used by the genie baseline,
/// whose angles need not lie on the dictionary grid).
pub fn reconstruct_from_angles(
    angles: &[f64],
    gains: &[Vec<f64>],
    cfg: &ArrayConfig,
) -> CovarianceSet {
    let mats = (0..cfg.n_c)
        .map(|ell| {
            let mut c = CMat::zeros(cfg.m, cfg.m);
            for (i, &theta) in angles.iter().enumerate() {
                let w = gains[ell][i];
                if w == 0.0 {
                    continue;
                }
                let a = steering(theta, ell, cfg);
                for rr in 0..cfg.m {
                    for cc in 0..cfg.m {
                        c[(rr, cc)] += Cx::new(w, 0.0) * a[rr] * a[cc].conj();
                    }
                }
            }
            hermitian_part(&c)
        })
        .collect();
    CovarianceSet::new(CovKind::Reconstructed, mats).expect("n_c >= 1")
}

/// Greedy wideband COMP.
///
/// `samples[k]` and `psi[k]` pair sample covariances with their measurement
/// matrices; pass single-element slices when the training is constant (the
/// criterion and the gain average over k are then exact with the pooled
/// sample covariance).
pub fn wcomp_identify(
    samples: &[CovarianceSet],
    psi: &[MeasurementMatrices],
    l_hat: usize,
    dict: &Dictionary,
    cfg: &ArrayConfig,
) -> Result<IdentResult> {
    if samples.is_empty() || samples.len() != psi.len() {
        return Err(Error::DimensionMismatch(
            "need one measurement-matrix set per sample covariance set".into(),
        ));
    }
    let g = psi[0].g();
    if l_hat > g {
        return Err(Error::SupportExhausted { requested: l_hat, dict: g });
    }
    let t_tr = psi[0].t_tr();
    if l_hat > t_tr {
        return Err(Error::InvalidArgument(format!(
            "support budget {l_hat} exceeds the training length {t_tr}; residual projections need |S| <= T_tr"
        )));
    }
    let n_c = samples[0].n_subcarriers();
    let n_k = samples.len();

    let mut support: Vec<usize> = Vec::with_capacity(l_hat);
    // Residuals start at the sample covariances themselves.
    let mut residuals: Vec<Vec<CMat>> =
        samples.iter().map(|s| s.mats().to_vec()).collect();

    for _ in 0..l_hat {
        // Criterion: Σ_ℓ Σ_k Re(ψ_j^H R ψ_j), maximized over unused columns.
        let mut crit = vec![0.0f64; g];
        for k in 0..n_k {
            for ell in 0..n_c {
                let p = &psi[k].per_ell[ell];
                let v = &residuals[k][ell] * p; // T×G
                for j in 0..g {
                    let mut acc = Cx::new(0.0, 0.0);
                    for t in 0..p.nrows() {
                        acc += p[(t, j)].conj() * v[(t, j)];
                    }
                    crit[j] += acc.re;
                }
            }
        }
        let mut best = None;
        for j in 0..g {
            if support.contains(&j) {
                continue;
            }
            match best {
                None => best = Some(j),
                Some(b) => {
                    if crit[j] > crit[b] {
                        best = Some(j)
                    }
                }
            }
        }
        let s_n = best.expect("l_hat <= G guarantees a free column");
        support.push(s_n);

        // Residual update: R = Ĉ − P Ĉ P^H with P = Ψ_S Ψ_S^†.
        for k in 0..n_k {
            for ell in 0..n_c {
                let psi_s = select_columns(&psi[k].per_ell[ell], &support);
                let proj = &psi_s * pinv(&psi_s, 0.0).inv; // T×T
                let c_hat = samples[k].mat(ell);
                residuals[k][ell] = c_hat - &proj * c_hat * proj.adjoint();
            }
        }
    }
    support.sort_unstable();

    // Gain variances: D̂_S[ℓ] = (1/K)Σ_k Ψ_S^† Ĉ (Ψ_S^H)^†, diagonal kept,
    // negatives clipped. Khatri–Rao substitute when Ψ_S is rank deficient.
    let mut gains = vec![vec![0.0f64; support.len()]; n_c];
    if !support.is_empty() {
        for ell in 0..n_c {
            let mut acc = vec![0.0f64; support.len()];
            for k in 0..n_k {
                let psi_s = select_columns(&psi[k].per_ell[ell], &support);
                let p = pinv(&psi_s, 0.0);
                let d = if p.rank == support.len() {
                    let mid = &p.inv * samples[k].mat(ell) * p.inv.adjoint();
                    (0..support.len()).map(|i| mid[(i, i)].re).collect::<Vec<_>>()
                } else {
                    khatri_rao_diagonal(&psi_s, samples[k].mat(ell))
                };
                for (a, b) in acc.iter_mut().zip(d) {
                    *a += b;
                }
            }
            for (i, a) in acc.into_iter().enumerate() {
                gains[ell][i] = (a / n_k as f64).max(0.0);
            }
        }
    }
    let reconstructed = reconstruct_cov(&support, &gains, dict, cfg);
    Ok(IdentResult { algo: Algo::Wcomp, support, gains, reconstructed })
}

/// diag(D̂) solving vec(C) ≈ (B*∘B)·d in nonnegative least squares.
///
/// The Khatri–Rao normal equations collapse to Gram(i,j) = |b_i^H b_j|² and
/// rhs_i = b_i^H C b_i, so the t²-row system is never materialized. The
/// nonnegativity constraint is load-bearing: near-parallel columns (a grid
/// oversampling one arc, or two paths at mirror angles) otherwise yield huge
/// ±gain pairs whose cancellation the final clip to zero would destroy.
fn khatri_rao_diagonal(basis: &CMat, c: &CMat) -> Vec<f64> {
    let l = basis.ncols();
    let gram = RMat::from_fn(l, l, |i, j| basis.column(i).dotc(&basis.column(j)).norm_sqr());
    let rhs = RVec::from_fn(l, |i, _| {
        let col = basis.column(i);
        (col.adjoint() * c * col)[(0, 0)].re
    });
    nnls(&gram, &rhs)
}

/// Noise-subspace bases Ū[ℓ] from the T−L̂ smallest eigenpairs of each
/// sample covariance.
fn noise_bases(samples: &CovarianceSet, l_hat: usize) -> Vec<CMat> {
    samples
        .mats()
        .iter()
        .map(|c| {
            let (_, vectors) = eigh(c);
            let dim = c.nrows();
            CMat::from_fn(dim, dim - l_hat, |r, k| vectors[(r, l_hat + k)])
        })
        .collect()
}

/// Support selection by the largest values of J_i = Σ_ℓ 1/‖ψ_i[ℓ]^H Ū[ℓ]‖².
fn music_scores(bases: &[CMat], steering_per_ell: &[CMat]) -> Vec<f64> {
    let g = steering_per_ell[0].ncols();
    let mut scores = vec![0.0f64; g];
    for (u_bar, psi) in bases.iter().zip(steering_per_ell) {
        let w = psi.adjoint() * u_bar; // G×(dim−L̂)
        for i in 0..g {
            let mut nrm = 0.0;
            for c in 0..w.ncols() {
                nrm += w[(i, c)].norm_sqr();
            }
            scores[i] += 1.0 / nrm.max(1e-300);
        }
    }
    scores
}

fn top_indices(scores: &[f64], l_hat: usize) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..scores.len()).collect();
    // Descending score; ties by original index.
    idx.sort_by(|&a, &b| scores[b].partial_cmp(&scores[a]).unwrap().then(a.cmp(&b)));
    let mut s: Vec<usize> = idx.into_iter().take(l_hat).collect();
    s.sort_unstable();
    s
}

/// A candidate column must keep at least this fraction of its norm after
/// projection onto the columns already picked.
const SUPPORT_RESID_TOL: f64 = 1e-2;

/// Peak picking with a linear-independence gate.
///
/// Walking scores in descending order, a candidate joins the support only if
/// its column is not (numerically) inside the span of the columns already
/// taken. A grid that oversamples an arc — uniform angles have near-collapsing
/// sine spacing around broadside — scores a whole neighborhood of one peak
/// highly; without the gate those duplicates crowd out genuine paths and make
/// the gain solve arbitrarily ill-conditioned. Should the gate starve the
/// count, the best remaining scores fill the tail so the support always has
/// `l_hat` entries.
fn gated_top_indices(scores: &[f64], l_hat: usize, cols: &CMat, resid_tol: f64) -> Vec<usize> {
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].partial_cmp(&scores[a]).unwrap().then(a.cmp(&b)));
    let mut picked: Vec<usize> = Vec::with_capacity(l_hat);
    let mut basis: Vec<CVec> = Vec::with_capacity(l_hat);
    for &idx in &order {
        if picked.len() == l_hat {
            break;
        }
        let col: CVec = cols.column(idx).into_owned();
        let mut r = col.clone();
        for q in &basis {
            let coef = q.dotc(&r);
            r -= q * coef;
        }
        if r.norm() >= resid_tol * col.norm().max(1e-300) {
            let n = r.norm();
            basis.push(r.unscale(n));
            picked.push(idx);
        }
    }
    if picked.len() < l_hat {
        for &idx in &order {
            if picked.len() == l_hat {
                break;
            }
            if !picked.contains(&idx) {
                picked.push(idx);
            }
        }
    }
    picked.sort_unstable();
    picked
}

/// Wideband MUSIC support: per-ℓ eigendecomposition, joint pseudo-spectrum,
/// L̂ largest scores. Requires L̂ < T_tr so the noise subspace is nonempty.
pub fn music_support(
    samples: &CovarianceSet,
    psi: &MeasurementMatrices,
    l_hat: usize,
) -> Result<Vec<usize>> {
    let t_tr = samples.dim();
    if l_hat >= t_tr {
        return Err(Error::RankError { requested: l_hat, dim: t_tr });
    }
    if psi.t_tr() != t_tr || psi.n_c() != samples.n_subcarriers() {
        return Err(Error::DimensionMismatch(
            "measurement matrices do not match the sample covariances".into(),
        ));
    }
    let bases = noise_bases(samples, l_hat);
    let scores = music_scores(&bases, &psi.per_ell);
    // Gate on the Δ=0 subcarrier's measured atoms — the same geometry the
    // gain solve sees.
    Ok(gated_top_indices(&scores, l_hat, &psi.per_ell[0], SUPPORT_RESID_TOL))
}

/// How gain variances are solved from a covariance-like matrix.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GainMode {
    /// D̂ = B^†(C−σ_v²I)(B^H)^†, diagonal kept. Fails on ill-conditioned B.
    Direct,
    /// vec(D̂) = (B*∘B)^† vec(C−σ_v²I); works past rank deficiency of B.
    KhatriRao,
}

// Direct recovery squares the basis conditioning; past this the Khatri–Rao
// fallback is strictly better.
const DIRECT_COND_LIMIT: f64 = 1e6;

/// Recover per-subcarrier gain variances from matrices `mats[ℓ]` measured
/// through `bases[ℓ]` (Ψ_S for MUSIC/WCOMP, the truncated steering set for
/// spatial smoothing). σ_v²·I is subtracted inside; negatives are clipped.
pub fn recover_gains(
    mats: &[CMat],
    bases: &[CMat],
    noise_var: f64,
    mode: GainMode,
    mirror_average: bool,
) -> Result<Vec<Vec<f64>>> {
    if mats.len() != bases.len() || mats.is_empty() {
        return Err(Error::DimensionMismatch("need one basis per subcarrier".into()));
    }
    let l = bases[0].ncols();
    let mut gains = Vec::with_capacity(mats.len());
    for (c, b) in mats.iter().zip(bases) {
        let denoised = c - CMat::identity(c.nrows(), c.ncols()).scale(noise_var);
        let raw: Vec<f64> = match mode {
            GainMode::Direct => {
                let p = pinv(b, 0.0);
                if p.rank < l || p.cond > DIRECT_COND_LIMIT {
                    return Err(Error::IllConditioned { cond: p.cond });
                }
                let mid = &p.inv * denoised * p.inv.adjoint();
                (0..l).map(|i| mid[(i, i)].re).collect()
            }
            GainMode::KhatriRao => khatri_rao_diagonal(b, &denoised),
        };
        gains.push(raw);
    }
    if mirror_average {
        mirror_average_gains(&mut gains);
    }
    for per_ell in &mut gains {
        for v in per_ell.iter_mut() {
            *v = v.max(0.0);
        }
    }
    Ok(gains)
}

/// Direct recovery with an automatic Khatri–Rao retry when ill-conditioned.
pub fn recover_gains_auto(
    mats: &[CMat],
    bases: &[CMat],
    noise_var: f64,
    mirror_average: bool,
) -> Result<Vec<Vec<f64>>> {
    match recover_gains(mats, bases, noise_var, GainMode::Direct, mirror_average) {
        Err(Error::IllConditioned { .. }) => {
            recover_gains(mats, bases, noise_var, GainMode::KhatriRao, mirror_average)
        }
        other => other,
    }
}

/// Average gains over mirror subcarrier pairs ℓ and −ℓ mod N_c. ℓ=0 (and
/// ℓ=N_c/2 for even N_c) have no distinct partner and stay untouched.
fn mirror_average_gains(gains: &mut [Vec<f64>]) {
    let n_c = gains.len();
    for ell in 1..n_c {
        let mirror = (n_c - ell) % n_c;
        if mirror <= ell {
            continue; // pair already handled, or self-mirrored
        }
        for i in 0..gains[ell].len() {
            let avg = 0.5 * (gains[ell][i] + gains[mirror][i]);
            gains[ell][i] = avg;
            gains[mirror][i] = avg;
        }
    }
}

/// Gain recovery with an optional forced mode; `None` means direct with an
/// automatic Khatri–Rao retry when ill-conditioned.
fn recover_gains_mode(
    mats: &[CMat],
    bases: &[CMat],
    noise_var: f64,
    mode: Option<GainMode>,
    mirror_average: bool,
) -> Result<Vec<Vec<f64>>> {
    match mode {
        Some(m) => recover_gains(mats, bases, noise_var, m, mirror_average),
        None => recover_gains_auto(mats, bases, noise_var, mirror_average),
    }
}

/// Full MUSIC pipeline: support, gains, reconstruction.
pub fn music_identify(
    samples: &CovarianceSet,
    psi: &MeasurementMatrices,
    l_hat: usize,
    noise_var: f64,
    gain_mode: Option<GainMode>,
    mirror_average: bool,
    dict: &Dictionary,
    cfg: &ArrayConfig,
) -> Result<IdentResult> {
    let support = music_support(samples, psi, l_hat)?;
    let bases = psi.select(&support);
    let gains = recover_gains_mode(samples.mats(), &bases, noise_var, gain_mode, mirror_average)?;
    let reconstructed = reconstruct_cov(&support, &gains, dict, cfg);
    Ok(IdentResult { algo: Algo::Music, support, gains, reconstructed })
}

/// How repeated lags in vec(Ĉ_φ) are folded into the coarray vector.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SmoothingMode {
    /// Average every snapshot of a lag (default; lower variance).
    AverageRepeats,
    /// Keep only the first snapshot per lag, as in the classic construction.
    DiscardRepeats,
}

/// Coarray statistics for one subcarrier.
#[derive(Debug, Clone)]
pub struct SmoothedCoarray {
    /// Lag values −c..c, index z+c.
    pub lags: CVec,
    /// Smoothed matrix Y̌ (subarray dimension c+1).
    pub smoothed: CMat,
    /// √(c+1)·Y̌^{1/2}: equals the truncated covariance A′D̃A′^H + σ_v²I for
    /// exact inputs.
    pub root: CMat,
}

impl SmoothedCoarray {
    pub fn subarray_dim(&self) -> usize {
        self.smoothed.nrows()
    }
}

/// Spatial smoothing front end: reduce vec(Ĉ_φ[ℓ]) to per-lag statistics on
/// the ruler's covered range, average overlapping subvectors, and take the
/// principal square root.
pub fn spatial_smooth(
    samples: &CovarianceSet,
    ruler: &Ruler,
    mode: SmoothingMode,
) -> Result<Vec<SmoothedCoarray>> {
    let t_tr = samples.dim();
    if ruler.mark_count() != t_tr {
        return Err(Error::DimensionMismatch(format!(
            "ruler has {} marks but covariances are {}-dimensional",
            ruler.mark_count(),
            t_tr
        )));
    }
    let c = ruler.complete_up_to();
    let marks = ruler.marks();
    let dim = c + 1;
    let mut out = Vec::with_capacity(samples.n_subcarriers());
    for c_hat in samples.mats() {
        // Per-lag accumulation across vec(Ĉ) in column-major order; entry
        // (i,j) carries lag r_i − r_j.
        let mut sums = vec![Cx::new(0.0, 0.0); 2 * c + 1];
        let mut counts = vec![0usize; 2 * c + 1];
        for j in 0..t_tr {
            for i in 0..t_tr {
                let lag = marks[i] as isize - marks[j] as isize;
                if lag.unsigned_abs() > c {
                    continue; // beyond the contiguous coverage
                }
                let idx = (lag + c as isize) as usize;
                match mode {
                    SmoothingMode::AverageRepeats => {
                        sums[idx] += c_hat[(i, j)];
                        counts[idx] += 1;
                    }
                    SmoothingMode::DiscardRepeats => {
                        if counts[idx] == 0 {
                            sums[idx] = c_hat[(i, j)];
                            counts[idx] = 1;
                        }
                    }
                }
            }
        }
        if let Some(z) = counts.iter().position(|&n| n == 0) {
            return Err(Error::IncompleteRuler { lag: z.abs_diff(c) });
        }
        let lags = CVec::from_fn(2 * c + 1, |z, _| {
            sums[z] / Cx::new(counts[z] as f64, 0.0)
        });
        // Subvector m holds lags p−m for p = 0..c; averaging their outer
        // products gives the smoothed matrix.
        let mut smoothed = CMat::zeros(dim, dim);
        for m in 0..dim {
            let sub = CVec::from_fn(dim, |p, _| lags[(p + c) - m]);
            for rr in 0..dim {
                for cc in 0..dim {
                    smoothed[(rr, cc)] += sub[rr] * sub[cc].conj();
                }
            }
        }
        smoothed = hermitian_part(&smoothed.scale(1.0 / dim as f64));
        let root = crate::linalg::hermitian_sqrt(&smoothed).scale((dim as f64).sqrt());
        out.push(SmoothedCoarray { lags, smoothed, root });
    }
    Ok(out)
}

/// Squinted steering vectors truncated to the subarray dimension, for the
/// dictionary angles (columns) at one subcarrier.
fn truncated_steering(dict: &Dictionary, dim: usize, ell: usize, cfg: &ArrayConfig) -> CMat {
    let delta = delta_grid(cfg.n_c)[ell];
    let rel = squint_rel(cfg, delta);
    CMat::from_fn(dim, dict.g(), |p, g| {
        let rate = -2.0 * std::f64::consts::PI * cfg.d * dict.angles()[g].sin() * (1.0 - rel);
        cis(rate * p as f64)
    })
}

/// MUSIC on the smoothed coarray. Handles the rank-deficient regime
/// T_tr < L as long as L̂ stays below the subarray dimension.
pub fn ss_music_identify(
    samples: &CovarianceSet,
    ruler: &Ruler,
    dict: &Dictionary,
    l_hat: usize,
    noise_var: f64,
    mode: SmoothingMode,
    gain_mode: Option<GainMode>,
    mirror_average: bool,
    cfg: &ArrayConfig,
) -> Result<IdentResult> {
    let coarrays = spatial_smooth(samples, ruler, mode)?;
    let dim = coarrays[0].subarray_dim();
    if l_hat >= dim {
        return Err(Error::RankError { requested: l_hat, dim });
    }
    // Y̌ and its root share eigenvectors, so the subspace split can use the
    // smoothed matrix directly; the root matters for gain recovery.
    let smoothed = CovarianceSet::new(
        CovKind::Sample,
        coarrays.iter().map(|c| c.smoothed.clone()).collect(),
    )?;
    let bases = noise_bases(&smoothed, l_hat);
    let steering_per_ell: Vec<CMat> =
        (0..samples.n_subcarriers()).map(|ell| truncated_steering(dict, dim, ell, cfg)).collect();
    let scores = music_scores(&bases, &steering_per_ell);
    let support = gated_top_indices(&scores, l_hat, &steering_per_ell[0], SUPPORT_RESID_TOL);

    let roots: Vec<CMat> = coarrays.iter().map(|c| c.root.clone()).collect();
    let support_steering: Vec<CMat> =
        steering_per_ell.iter().map(|s| select_columns(s, &support)).collect();
    let gains = recover_gains_mode(&roots, &support_steering, noise_var, gain_mode, mirror_average)?;
    let reconstructed = reconstruct_cov(&support, &gains, dict, cfg);
    Ok(IdentResult { algo: Algo::SsMusic, support, gains, reconstructed })
}

/// Convergence trace of the ML fixed point.
#[derive(Debug, Clone)]
pub struct MlOutcome {
    pub result: IdentResult,
    /// Negative log-likelihood per subcarrier, one entry per iteration.
    pub objectives: Vec<Vec<f64>>,
}

/// ML baseline: minimize log det C + tr(C⁻¹Ĉ) over the nonnegative diagonal
/// D̃ with C = ΨD̃Ψ^H + σ_v²I, via the multiplicative update
/// d_g ← d_g·(ψ_g^H C⁻¹ Ĉ C⁻¹ ψ_g)/(ψ_g^H C⁻¹ ψ_g), run per subcarrier.
pub fn ml_identify_mm(
    samples: &CovarianceSet,
    psi: &MeasurementMatrices,
    l_hat: usize,
    noise_var: f64,
    iters: usize,
    tol: f64,
    dict: &Dictionary,
    cfg: &ArrayConfig,
) -> Result<MlOutcome> {
    let g = psi.g();
    if l_hat > g {
        return Err(Error::SupportExhausted { requested: l_hat, dict: g });
    }
    let n_c = samples.n_subcarriers();
    let t = samples.dim();
    let mut variances: Vec<Vec<f64>> = Vec::with_capacity(n_c);
    let mut objectives = Vec::with_capacity(n_c);

    for ell in 0..n_c {
        let c_hat = samples.mat(ell);
        let p = &psi.per_ell[ell];
        // Matched-filter initialization keeps the fixed point strictly inside
        // the positive orthant wherever the data has energy.
        let mut d: Vec<f64> = (0..g)
            .map(|j| {
                let col = p.column(j);
                let num = (col.adjoint() * c_hat * col)[(0, 0)].re;
                let den = col.norm_squared();
                (num / (den * den).max(1e-300)).max(0.0)
            })
            .collect();
        let mut trace = Vec::new();
        let mut prev_obj = f64::INFINITY;
        for _ in 0..iters {
            let mut c = CMat::identity(t, t).scale(noise_var);
            for j in 0..g {
                if d[j] == 0.0 {
                    continue;
                }
                let col = p.column(j);
                for rr in 0..t {
                    for cc in 0..t {
                        c[(rr, cc)] += Cx::new(d[j], 0.0) * col[rr] * col[cc].conj();
                    }
                }
            }
            let chol = nalgebra::Cholesky::new(hermitian_part(&c))
                .ok_or(Error::SingularCovariance)?;
            // Objective: log det C + tr(C⁻¹Ĉ).
            let logdet: f64 = 2.0 * chol.l().diagonal().iter().map(|x| x.re.ln()).sum::<f64>();
            let solved = chol.solve(c_hat);
            let tr: f64 = solved.diagonal().iter().map(|x| x.re).sum();
            let obj = logdet + tr;
            trace.push(obj);

            let w = chol.solve(p); // C⁻¹Ψ
            for j in 0..g {
                if d[j] == 0.0 {
                    continue;
                }
                let wj = w.column(j);
                let numer = (wj.adjoint() * c_hat * wj)[(0, 0)].re;
                let denom = (p.column(j).adjoint() * wj)[(0, 0)].re;
                if denom > 0.0 {
                    d[j] *= (numer / denom).max(0.0);
                }
            }
            if prev_obj.is_finite() && (prev_obj - obj).abs() <= tol * prev_obj.abs() {
                break;
            }
            prev_obj = obj;
        }
        objectives.push(trace);
        variances.push(d);
    }

    // Support: the L̂ largest total variances across subcarriers.
    let totals: Vec<f64> =
        (0..g).map(|j| variances.iter().map(|v| v[j]).sum()).collect();
    let support = top_indices(&totals, l_hat);
    let gains: Vec<Vec<f64>> = variances
        .iter()
        .map(|v| support.iter().map(|&j| v[j].max(0.0)).collect())
        .collect();
    let reconstructed = reconstruct_cov(&support, &gains, dict, cfg);
    Ok(MlOutcome {
        result: IdentResult { algo: Algo::Ml, support, gains, reconstructed },
        objectives,
    })
}

/// ε for the eigen-gap path-count rule; our calibration, tighter at high SNR.
pub fn default_gap_eps(snr_db: f64) -> f64 {
    if snr_db >= 10.0 {
        1e-2
    } else {
        1e-1
    }
}

/// Estimate the number of paths from the eigen-gap profile of the sample
/// covariances: spectra are summed over subcarriers and L̂ maximizes
/// (λ_i − λ_{i+1})/(λ_{i+1} + ε·λ_1). A gap-free spectrum yields 1.
pub fn estimate_num_paths(samples: &CovarianceSet, eps: f64) -> usize {
    let dim = samples.dim();
    let mut spectrum = vec![0.0f64; dim];
    for c in samples.mats() {
        let (vals, _) = eigh(c);
        for (s, v) in spectrum.iter_mut().zip(vals) {
            *s += v;
        }
    }
    if dim < 2 {
        return 1;
    }
    let lead = spectrum[0].max(1e-300);
    let mut best = (0usize, f64::NEG_INFINITY);
    for i in 0..dim - 1 {
        let ratio = (spectrum[i] - spectrum[i + 1]) / (spectrum[i + 1] + eps * lead);
        if ratio > best.1 {
            best = (i, ratio);
        }
    }
    best.0 + 1
}

/// Upper bound on the Kruskal rank of a dictionary-like matrix: the largest
/// z such that every window of z consecutive columns stays well conditioned
/// (σ_min > tol·σ_max). Consecutive windows are the worst case for steering
/// dictionaries, making this cheap diagnostic meaningful.
pub fn krank_upper_bound(columns: &CMat, window_tol: f64) -> usize {
    let (m, g) = columns.shape();
    let z_max = m.min(g);
    // Column submatrices only improve conditioning, so the test is monotone
    // in z: scan upward until some window fails.
    for z in 1..=z_max {
        for start in 0..=(g - z) {
            let window = columns.columns(start, z);
            // Singular values via the Gram matrix; eigh is the dependable
            // decomposition here and the windows are tiny.
            let gram = window.adjoint() * window;
            let (values, _) = eigh(&gram);
            let s_max = values.first().copied().unwrap_or(0.0).max(0.0).sqrt();
            let s_min = values.last().copied().unwrap_or(0.0).max(0.0).sqrt();
            if s_min <= window_tol * s_max {
                return z - 1;
            }
        }
    }
    z_max
}

/// Genie baseline: angles known exactly (possibly off-grid), gain variances
/// fitted per subcarrier by the Khatri–Rao solver on exact steering vectors.
pub fn genie_identify(
    samples: &CovarianceSet,
    x: &TrainingMatrix,
    aods: &[f64],
    noise_var: f64,
    mirror_average: bool,
    cfg: &ArrayConfig,
) -> Result<IdentResult> {
    let bases: Vec<CMat> = (0..cfg.n_c)
        .map(|ell| {
            let mut cols = CMat::zeros(x.t_tr(), aods.len());
            for (i, &theta) in aods.iter().enumerate() {
                let col = x.entries() * steering(theta, ell, cfg);
                cols.set_column(i, &col);
            }
            cols
        })
        .collect();
    let gains = recover_gains(samples.mats(), &bases, noise_var, GainMode::KhatriRao, mirror_average)?;
    let reconstructed = reconstruct_from_angles(aods, &gains, cfg);
    Ok(IdentResult {
        algo: Algo::Genie,
        support: (0..aods.len()).collect(),
        gains,
        reconstructed,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::channel::{
        beta_coeffs, channel_covariance, observation_covariance, ChannelParams,
    };
    use crate::rulers::{best_ruler_within, training_matrix};

    fn cfg() -> ArrayConfig {
        ArrayConfig { m: 23, n_c: 4, ..ArrayConfig::default() }
    }

    /// Exact observation covariances for on-grid paths, plus ground truth.
    /// The angle range keeps sinθ injective so support recovery is unambiguous
    /// (θ and π−θ share a steering vector on a ULA).
    fn exact_setup(
        cfg: &ArrayConfig,
        g: usize,
        t_marks: usize,
        support: &[usize],
        noise_var: f64,
    ) -> (CovarianceSet, MeasurementMatrices, Dictionary, TrainingMatrix, ChannelParams, Ruler)
    {
        let range = (-std::f64::consts::FRAC_PI_3, std::f64::consts::FRAC_PI_3);
        let dict = Dictionary::uniform(g, range, cfg).unwrap();
        let ruler = best_ruler_within(t_marks, cfg.m - 1).unwrap();
        let x = training_matrix(&ruler, cfg.m).unwrap();
        let aods: Vec<f64> = support.iter().map(|&s| dict.angles()[s]).collect();
        let l = aods.len();
        let delays: Vec<f64> =
            (0..l).map(|i| i as f64 * cfg.max_delay() / l.max(2) as f64).collect();
        let params = ChannelParams::new(aods, vec![1.0; l], delays).unwrap();
        let c_h = channel_covariance(&params, cfg);
        let c_phi = observation_covariance(&c_h, &x, noise_var).unwrap();
        let psi = measurement_matrices(&x, &dict, cfg).unwrap();
        (c_phi, psi, dict, x, params, ruler)
    }

    fn true_gains(params: &ChannelParams, cfg: &ArrayConfig) -> Vec<Vec<f64>> {
        (0..cfg.n_c)
            .map(|ell| {
                params
                    .gain_vars
                    .iter()
                    .zip(&params.delays)
                    .map(|(&v, &tau)| v * beta_coeffs(tau, cfg)[ell].norm_sqr())
                    .collect()
            })
            .collect()
    }

    /// Largest entry error relative to the dominant true gain (entries that
    /// are exactly zero in truth would otherwise blow up the ratio).
    fn max_rel_gain_err(est: &[Vec<f64>], truth: &[Vec<f64>]) -> f64 {
        let scale = truth
            .iter()
            .flat_map(|v| v.iter().cloned())
            .fold(0.0f64, f64::max)
            .max(1e-300);
        let mut worst: f64 = 0.0;
        for (e, t) in est.iter().zip(truth) {
            for (a, b) in e.iter().zip(t) {
                worst = worst.max((a - b).abs() / b.max(1e-9 * scale));
            }
        }
        worst
    }

    #[test]
    fn measurement_matrix_spot_value() {
        let cfg = ArrayConfig { m: 4, n_c: 1, ..ArrayConfig::default() };
        let ruler = Ruler::new(vec![0, 1, 3]).unwrap();
        let x = training_matrix(&ruler, 4).unwrap();
        // Single dictionary angle exactly at π/2.
        let dict = Dictionary::uniform(
            1,
            (std::f64::consts::FRAC_PI_2, std::f64::consts::FRAC_PI_2),
            &cfg,
        )
        .unwrap();
        let psi = measurement_matrices(&x, &dict, &cfg).unwrap();
        assert_eq!(psi.per_ell[0].shape(), (3, 1));
        // d=0.5, sinθ=1 → entries e^{−jπ·mark} at marks 0,1,3.
        let want = [Cx::new(1.0, 0.0), Cx::new(-1.0, 0.0), Cx::new(-1.0, 0.0)];
        for (i, w) in want.iter().enumerate() {
            assert!((psi.per_ell[0][(i, 0)] - w).norm() < 1e-12);
        }
    }

    #[test]
    fn wcomp_recovers_single_path_noiseless() {
        let cfg = cfg();
        let (c_phi, psi, dict, _, params, _) = exact_setup(&cfg, 32, 8, &[11], 0.0);
        let res = wcomp_identify(
            std::slice::from_ref(&c_phi),
            std::slice::from_ref(&psi),
            1,
            &dict,
            &cfg,
        )
        .unwrap();
        assert_eq!(res.support, vec![11]);
        let truth = true_gains(&params, &cfg);
        assert!(max_rel_gain_err(&res.gains, &truth) < 1e-8);
    }

    #[test]
    fn wcomp_three_paths_and_empty_budget() {
        let cfg = cfg();
        let (c_phi, psi, dict, _, _, _) = exact_setup(&cfg, 32, 8, &[4, 15, 27], 0.0);
        let res = wcomp_identify(
            std::slice::from_ref(&c_phi),
            std::slice::from_ref(&psi),
            3,
            &dict,
            &cfg,
        )
        .unwrap();
        assert_eq!(res.support, vec![4, 15, 27]);

        let empty = wcomp_identify(
            std::slice::from_ref(&c_phi),
            std::slice::from_ref(&psi),
            0,
            &dict,
            &cfg,
        )
        .unwrap();
        assert!(empty.support.is_empty());
        assert!(empty.reconstructed.mat(0).norm() < 1e-15);

        assert!(matches!(
            wcomp_identify(std::slice::from_ref(&c_phi), std::slice::from_ref(&psi), 33, &dict, &cfg),
            Err(Error::SupportExhausted { .. })
        ));
    }

    #[test]
    fn music_exact_support_and_rank_guard() {
        let cfg = cfg();
        let (c_phi, psi, dict, _, params, _) = exact_setup(&cfg, 32, 8, &[6, 20], 0.0);
        let s = music_support(&c_phi, &psi, 2).unwrap();
        assert_eq!(s, vec![6, 20]);

        let res = music_identify(&c_phi, &psi, 2, 0.0, None, true, &dict, &cfg).unwrap();
        assert_eq!(res.support, vec![6, 20]);
        let truth = true_gains(&params, &cfg);
        let err = max_rel_gain_err(&res.gains, &truth);
        assert!(err < 1e-6, "gain err {err}: est {:?} truth {:?}", res.gains, truth);

        let t_tr = c_phi.dim();
        assert!(matches!(
            music_support(&c_phi, &psi, t_tr),
            Err(Error::RankError { .. })
        ));
    }

    #[test]
    fn music_support_is_scale_invariant() {
        let cfg = cfg();
        let (c_phi, psi, _, _, _, _) = exact_setup(&cfg, 32, 8, &[6, 20], 0.1);
        let scaled = CovarianceSet::new(
            CovKind::Sample,
            c_phi.mats().iter().map(|m| m.scale(7.5)).collect(),
        )
        .unwrap();
        assert_eq!(
            music_support(&c_phi, &psi, 2).unwrap(),
            music_support(&scaled, &psi, 2).unwrap()
        );
    }

    #[test]
    fn gain_recovery_zero_on_pure_noise() {
        let cfg = cfg();
        let (c_phi, psi, _, _, _, _) = exact_setup(&cfg, 32, 8, &[6, 20], 0.0);
        let noise_var = 0.3;
        let t = c_phi.dim();
        let pure_noise: Vec<CMat> =
            (0..cfg.n_c).map(|_| CMat::identity(t, t).scale(noise_var)).collect();
        let bases = psi.select(&[6, 20]);
        for mode in [GainMode::Direct, GainMode::KhatriRao] {
            let gains = recover_gains(&pure_noise, &bases, noise_var, mode, false).unwrap();
            for per_ell in gains {
                for v in per_ell {
                    assert!(v.abs() < 1e-10);
                }
            }
        }
    }

    #[test]
    fn mirror_averaging_equalizes_pairs() {
        let cfg = cfg();
        let (c_phi, psi, _, _, _, _) = exact_setup(&cfg, 32, 8, &[6, 20], 0.05);
        let bases = psi.select(&[6, 20]);
        let gains = recover_gains(c_phi.mats(), &bases, 0.05, GainMode::KhatriRao, true).unwrap();
        for ell in 1..cfg.n_c {
            let mirror = (cfg.n_c - ell) % cfg.n_c;
            if mirror == ell {
                continue;
            }
            for i in 0..2 {
                assert!((gains[ell][i] - gains[mirror][i]).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn smoothing_lag_count_and_noise_floor() {
        let ruler = Ruler::new(vec![0, 1, 3]).unwrap();
        let noise_var = 0.7;
        let mats: Vec<CMat> = (0..2).map(|_| CMat::identity(3, 3).scale(noise_var)).collect();
        let samples = CovarianceSet::new(CovKind::Sample, mats).unwrap();
        let co = spatial_smooth(&samples, &ruler, SmoothingMode::AverageRepeats).unwrap();
        assert_eq!(co[0].lags.len(), 7); // lags −3..3
        assert_eq!(co[0].subarray_dim(), 4);
        // Pure noise: only lag 0 populated; root = σ_v²·I on the subarray.
        for z in 0..7 {
            let want = if z == 3 { noise_var } else { 0.0 };
            assert!((co[0].lags[z] - Cx::new(want, 0.0)).norm() < 1e-12);
        }
        let eye = CMat::identity(4, 4).scale(noise_var);
        assert!((&co[0].root - &eye).norm() < 1e-8);
    }

    #[test]
    fn coarray_root_identity_on_exact_input() {
        let cfg = cfg();
        let noise_var = 0.2;
        let (c_phi, _, dict, _, params, ruler) = exact_setup(&cfg, 32, 8, &[4, 15, 27], noise_var);
        let co = spatial_smooth(&c_phi, &ruler, SmoothingMode::AverageRepeats).unwrap();
        let dim = co[0].subarray_dim();
        let truth = true_gains(&params, &cfg);
        for ell in 0..cfg.n_c {
            // A′ D̃ A′^H + σ_v²I on the subarray dimension.
            let a = truncated_steering(&dict, dim, ell, &cfg);
            let a_s = select_columns(&a, &[4, 15, 27]);
            let mut want = CMat::identity(dim, dim).scale(noise_var);
            for (i, &w) in truth[ell].iter().enumerate() {
                let col = a_s.column(i).into_owned();
                for rr in 0..dim {
                    for cc in 0..dim {
                        want[(rr, cc)] += Cx::new(w, 0.0) * col[rr] * col[cc].conj();
                    }
                }
            }
            let rel = (&co[ell].root - &want).norm() / want.norm();
            assert!(rel < 1e-8, "ell={ell}: rel={rel}");
            // root² = (c+1)·Y̌.
            let sq = &co[ell].root * &co[ell].root;
            let rel2 = (&sq - &co[ell].smoothed.scale(dim as f64)).norm()
                / co[ell].smoothed.norm().max(1e-300)
                / dim as f64;
            assert!(rel2 < 1e-8);
        }
    }

    #[test]
    fn ss_music_handles_rank_deficiency() {
        // L = 5 paths with only 4 pilot marks: plain MUSIC cannot even form a
        // noise subspace, the coarray can.
        let cfg = ArrayConfig { m: 8, n_c: 4, ..ArrayConfig::default() };
        let range = (-std::f64::consts::FRAC_PI_3, std::f64::consts::FRAC_PI_3);
        let dict = Dictionary::uniform(24, range, &cfg).unwrap();
        let ruler = Ruler::new(vec![0, 1, 4, 6]).unwrap(); // complete to 6
        let x = training_matrix(&ruler, cfg.m).unwrap();
        let support = [2, 7, 12, 17, 22];
        let aods: Vec<f64> = support.iter().map(|&s| dict.angles()[s]).collect();
        let params = ChannelParams::new(
            aods,
            vec![1.0; 5],
            (0..5).map(|i| i as f64 * cfg.max_delay() / 5.0).collect(),
        )
        .unwrap();
        let c_h = channel_covariance(&params, &cfg);
        let c_phi = observation_covariance(&c_h, &x, 0.0).unwrap();
        let res = ss_music_identify(
            &c_phi,
            &ruler,
            &dict,
            5,
            0.0,
            SmoothingMode::AverageRepeats,
            None,
            true,
            &cfg,
        )
        .unwrap();
        assert_eq!(res.support, support.to_vec());
        let truth = true_gains(&params, &cfg);
        assert!(max_rel_gain_err(&res.gains, &truth) < 1e-6);

        let psi = measurement_matrices(&x, &dict, &cfg).unwrap();
        assert!(matches!(music_support(&c_phi, &psi, 5), Err(Error::RankError { .. })));
    }

    #[test]
    fn ml_objective_monotone_and_finds_single_path() {
        let cfg = ArrayConfig { m: 16, n_c: 2, ..cfg() };
        let (c_phi, psi, dict, _, _, _) = exact_setup(&cfg, 24, 8, &[9], 0.1);
        let out = ml_identify_mm(&c_phi, &psi, 1, 0.1, 60, 0.0, &dict, &cfg).unwrap();
        assert_eq!(out.result.support, vec![9]);
        for trace in &out.objectives {
            for w in trace.windows(2) {
                assert!(w[1] <= w[0] + 1e-9 * w[0].abs(), "objective increased: {w:?}");
            }
        }
    }

    #[test]
    fn ml_pure_noise_decays_variances() {
        let cfg = ArrayConfig { m: 16, n_c: 2, ..cfg() };
        let (c_phi, psi, dict, _, _, _) = exact_setup(&cfg, 24, 8, &[9], 0.1);
        let t = c_phi.dim();
        let noise = CovarianceSet::new(
            CovKind::Sample,
            (0..cfg.n_c).map(|_| CMat::identity(t, t).scale(0.1)).collect(),
        )
        .unwrap();
        let out = ml_identify_mm(&noise, &psi, 1, 0.1, 120, 0.0, &dict, &cfg).unwrap();
        let max_gain = out
            .result
            .gains
            .iter()
            .flat_map(|v| v.iter().cloned())
            .fold(0.0f64, f64::max);
        assert!(max_gain < 1e-3, "pure-noise variances should shrink, got {max_gain}");
    }

    #[test]
    fn path_count_from_eigen_gap() {
        let cfg = cfg();
        let (c_phi, _, _, _, _, _) = exact_setup(&cfg, 32, 8, &[4, 15, 27], 0.01);
        assert_eq!(estimate_num_paths(&c_phi, default_gap_eps(20.0)), 3);
        // Identity: no informative gap.
        let eye = CovarianceSet::new(
            CovKind::Sample,
            vec![CMat::identity(6, 6); 2],
        )
        .unwrap();
        assert_eq!(estimate_num_paths(&eye, 1e-2), 1);
        // Scale invariance.
        let scaled = CovarianceSet::new(
            CovKind::Sample,
            c_phi.mats().iter().map(|m| m.scale(3.0)).collect(),
        )
        .unwrap();
        assert_eq!(estimate_num_paths(&scaled, default_gap_eps(20.0)), 3);
    }

    #[test]
    fn krank_bound_edge_cases() {
        // Orthogonal columns: bound reaches the full size.
        let eye = CMat::identity(6, 6);
        assert_eq!(krank_upper_bound(&eye, 1e-6), 6);
        // A duplicated adjacent column collapses the bound to 1.
        let mut dup = CMat::identity(6, 6);
        let col0 = dup.column(0).into_owned();
        dup.set_column(1, &col0);
        assert_eq!(krank_upper_bound(&dup, 1e-6), 1);
    }

    #[test]
    fn krank_bound_on_steering_dictionary() {
        let cfg = ArrayConfig { m: 50, n_c: 1, ..ArrayConfig::default() };
        let dict = Dictionary::uniform(
            100,
            (-std::f64::consts::FRAC_PI_3, std::f64::consts::FRAC_PI_3),
            &cfg,
        )
        .unwrap();
        let z = krank_upper_bound(dict.base(), 1e-6);
        assert!(z >= 1 && z < 50, "bound {z} should be strictly below min(M,G)");
    }

    #[test]
    fn reconstruction_round_trip_on_grid() {
        let cfg = cfg();
        let (_, _, dict, _, params, _) = exact_setup(&cfg, 32, 8, &[4, 15, 27], 0.0);
        let truth = true_gains(&params, &cfg);
        let rebuilt = reconstruct_cov(&[4, 15, 27], &truth, &dict, &cfg);
        let direct = channel_covariance(&params, &cfg);
        for ell in 0..cfg.n_c {
            assert!((rebuilt.mat(ell) - direct.mat(ell)).norm() < 1e-10 * direct.mat(ell).norm());
        }
    }

    #[test]
    fn genie_matches_truth_on_exact_input() {
        let cfg = cfg();
        let (c_phi, _, _, x, params, _) = exact_setup(&cfg, 32, 8, &[4, 15, 27], 0.15);
        let res =
            genie_identify(&c_phi, &x, &params.aods, 0.15, true, &cfg).unwrap();
        let truth = true_gains(&params, &cfg);
        assert!(max_rel_gain_err(&res.gains, &truth) < 1e-6);
    }

    #[test]
    fn khatri_rao_rank_property() {
        use rand::Rng;
        use rand::SeedableRng;
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(1234);
        for _ in 0..20 {
            let t = 6;
            let l = 4;
            let b = CMat::from_fn(t, l, |_, _| {
                Cx::new(rng.gen::<f64>() - 0.5, rng.gen::<f64>() - 0.5)
            });
            let mut kr = CMat::zeros(t * t, l);
            for col in 0..l {
                for j in 0..t {
                    for i in 0..t {
                        kr[(j * t + i, col)] = b[(j, col)].conj() * b[(i, col)];
                    }
                }
            }
            assert_eq!(crate::linalg::pinv(&kr, 1e-10).rank, l);
        }
    }

    #[test]
    fn wcomp_support_scale_invariant() {
        let cfg = cfg();
        let (c_phi, psi, dict, _, _, _) = exact_setup(&cfg, 32, 8, &[4, 15, 27], 0.05);
        let res1 = wcomp_identify(
            std::slice::from_ref(&c_phi),
            std::slice::from_ref(&psi),
            3,
            &dict,
            &cfg,
        )
        .unwrap();
        let scaled = CovarianceSet::new(
            CovKind::Sample,
            c_phi.mats().iter().map(|m| m.scale(4.2)).collect(),
        )
        .unwrap();
        let res2 = wcomp_identify(
            std::slice::from_ref(&scaled),
            std::slice::from_ref(&psi),
            3,
            &dict,
            &cfg,
        )
        .unwrap();
        assert_eq!(res1.support, res2.support);
    }
}
