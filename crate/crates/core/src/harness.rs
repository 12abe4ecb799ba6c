//! Monte-Carlo experiment harness: figure presets at desk and paper scale,
//! a seeded trial runner that is deterministic at any thread count, the NMSE
//! and beamforming-efficiency metrics, CSV emission with a fixed header,
//! static SVG plots, and an empirical complexity profile.
//!
//! Trials are the only parallel axis. Every trial derives its random streams
//! from (seed, trial, block) counters, so results are a pure function of the
//! configuration and aggregation is an ordered reduce over the trial index.

use std::collections::BTreeSet;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::channel::{
    channel_covariance, cn01, steering, synth_channel, ArrayConfig, ChannelParams, CovKind,
    CovarianceSet, Dictionary, GainProfile,
};
use crate::chest::{
    dg_estimate, dg_estimate_with_basis, dg_fit, lmmse_estimate, lmmse_weights, DelayOpts,
};
use crate::error::{Error, Result};
use crate::ident::{
    default_gap_eps, estimate_num_paths, genie_identify, measurement_matrices, ml_identify_mm,
    music_identify, ss_music_identify, wcomp_identify, IdentResult, MeasurementMatrices,
    SmoothingMode,
};
use crate::linalg::{CMat, CVec, Cx};
use crate::rulers::{best_ruler_within, training_matrix, Ruler, TrainingMatrix};

/// Flat key/value scenario description, JSON-compatible. Angles are radians;
/// `angle_range` doubles as the AoD draw range and the dictionary span.
/// `snr_db` defines the noise power as σ_v² = 10^(−snr_db/10) (unit total
/// path power), and is the operating point for single-shot CLI runs; sweep
/// lists in [`ExperimentConfig`] take precedence over it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimConfig {
    #[serde(rename = "M")]
    pub m: usize,
    pub d: f64,
    pub f_c: f64,
    #[serde(rename = "B")]
    pub b: f64,
    #[serde(rename = "N_c")]
    pub n_c: usize,
    #[serde(rename = "N")]
    pub n: usize,
    pub f_s: f64,
    pub rolloff: f64,
    #[serde(rename = "L")]
    pub l: usize,
    pub angle_range: (f64, f64),
    pub gain_profile: String,
    pub snr_db: f64,
    /// Dictionary size; defaults to 2M when absent.
    #[serde(rename = "G", default, skip_serializing_if = "Option::is_none")]
    pub g: Option<usize>,
}

impl SimConfig {
    /// Desk-scale base scenario: small enough for CI, same physics.
    pub fn desk() -> Self {
        Self {
            m: 64,
            d: 0.5,
            f_c: 28.0e9,
            b: 1.76e9,
            n_c: 8,
            n: 8,
            f_s: 1.76e9,
            rolloff: 0.25,
            l: 15,
            angle_range: (std::f64::consts::FRAC_PI_3, 2.0 * std::f64::consts::FRAC_PI_3),
            gain_profile: "equal".into(),
            snr_db: 0.0,
            g: Some(128),
        }
    }

    /// Paper-scale base scenario (M=200; N_c, equal powers and the SNR
    /// normalization are our documented defaults, the source never fixes
    /// them).
    pub fn paper() -> Self {
        Self { m: 200, n_c: 16, g: Some(400), ..Self::desk() }
    }

    pub fn array(&self) -> ArrayConfig {
        ArrayConfig {
            m: self.m,
            d: self.d,
            f_c: self.f_c,
            b: self.b,
            n_c: self.n_c,
            n_taps: self.n,
            f_s: self.f_s,
            rolloff: self.rolloff,
        }
    }

    pub fn grid(&self) -> usize {
        self.g.unwrap_or(2 * self.m)
    }

    pub fn profile(&self) -> Result<GainProfile> {
        match self.gain_profile.as_str() {
            "equal" => Ok(GainProfile::Equal),
            "exponential" => Ok(GainProfile::Exponential),
            other => Err(Error::Parse(format!("unknown gain profile {other:?}"))),
        }
    }

    /// σ_v² for a given SNR under the unit-total-power normalization.
    pub fn noise_var_at(snr_db: f64) -> f64 {
        10f64.powf(-snr_db / 10.0)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::Parse(e.to_string()))
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("flat config serializes")
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Scale {
    Desk,
    Paper,
}

impl Scale {
    pub fn as_str(&self) -> &'static str {
        match self {
            Scale::Desk => "desk",
            Scale::Paper => "paper",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "desk" => Ok(Scale::Desk),
            "paper" => Ok(Scale::Paper),
            other => Err(Error::Parse(format!("unknown scale {other:?}"))),
        }
    }
}

/// One experiment: a scenario, the algorithms to compare, and the sweep axes.
#[derive(Debug, Clone)]
pub struct ExperimentConfig {
    pub id: String,
    pub sim: SimConfig,
    /// Identification names (`wcomp`, `music`, `ss`, `ss-discard`, `ml`,
    /// `genie`) score covariance NMSE; `<ident>+lmmse` / `<ident>+dg` combos
    /// score beamforming efficiency.
    pub algos: Vec<String>,
    pub snr_db: Vec<f64>,
    pub k_list: Vec<usize>,
    pub t_tr: usize,
    pub trials: usize,
    pub seed: u64,
    pub scale: Scale,
    /// Estimate the path count from the eigenvalue gap instead of using L.
    pub auto_paths: bool,
    pub out_csv: Option<PathBuf>,
    pub plot_dir: Option<PathBuf>,
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<()> {
        if self.trials < 1 {
            return Err(Error::InvalidArgument("trials must be at least 1".into()));
        }
        if self.algos.is_empty() || self.snr_db.is_empty() || self.k_list.is_empty() {
            return Err(Error::InvalidArgument(
                "algorithm, SNR and K lists must be non-empty".into(),
            ));
        }
        if !self.k_list.windows(2).all(|w| w[0] < w[1]) || self.k_list[0] == 0 {
            return Err(Error::InvalidArgument(
                "K list must be positive and strictly increasing".into(),
            ));
        }
        for name in &self.algos {
            AlgoSpec::parse(name)?;
        }
        self.sim.array().validate()?;
        self.sim.profile()?;
        if self.sim.l == 0 || self.grid_size() < 2 {
            return Err(Error::InvalidArgument("need L ≥ 1 and a dictionary of ≥ 2 angles".into()));
        }
        Ok(())
    }

    fn grid_size(&self) -> usize {
        self.sim.grid()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum IdentAlgo {
    Wcomp,
    Music,
    Ss(SmoothingMode),
    Ml,
    Genie,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum EstKind {
    Lmmse,
    Dg,
}

/// Parsed algorithm name: bare identification, or identification + estimator.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
struct AlgoSpec {
    ident: IdentAlgo,
    est: Option<EstKind>,
}

impl AlgoSpec {
    fn parse(name: &str) -> Result<Self> {
        let (ident_name, est) = match name.split_once('+') {
            Some((i, "lmmse")) => (i, Some(EstKind::Lmmse)),
            Some((i, "dg")) => (i, Some(EstKind::Dg)),
            Some((_, other)) => {
                return Err(Error::Parse(format!("unknown estimator {other:?} in {name:?}")))
            }
            None => (name, None),
        };
        let ident = match ident_name {
            "wcomp" => IdentAlgo::Wcomp,
            "music" => IdentAlgo::Music,
            "ss" => IdentAlgo::Ss(SmoothingMode::AverageRepeats),
            "ss-discard" => IdentAlgo::Ss(SmoothingMode::DiscardRepeats),
            "ml" => IdentAlgo::Ml,
            "genie" => IdentAlgo::Genie,
            other => return Err(Error::Parse(format!("unknown algorithm {other:?}"))),
        };
        Ok(Self { ident, est })
    }

    fn metric(&self) -> Metric {
        if self.est.is_some() {
            Metric::Eta
        } else {
            Metric::Nmse
        }
    }
}

pub fn preset_names() -> &'static [&'static str] {
    &["fig3", "fig4", "fig5", "figL70", "fig6", "fig7", "fig8"]
}

/// Named figure preset at the requested scale.
///
/// NMSE presets sweep the snapshot count K at 0 and 30 dB; estimation presets
/// fix K=100 and sweep the SNR. `fig4` pins T_tr=50 at both scales, `fig5`
/// uses the scale default (32 desk, 50 paper), `figL70` is the rank-deficient
/// regime (more paths than training dimensions), `fig6` estimates the path
/// count from the eigenvalue gap, and `fig8` raises the path count past the
/// sample-covariance rank.
pub fn preset(name: &str, scale: Scale) -> Result<ExperimentConfig> {
    let mut sim = match scale {
        Scale::Desk => SimConfig::desk(),
        Scale::Paper => SimConfig::paper(),
    };
    let trials = match scale {
        Scale::Desk => 50,
        Scale::Paper => 200,
    };
    let t_default = match scale {
        Scale::Desk => 32,
        Scale::Paper => 50,
    };
    let nmse_ks = vec![5, 10, 20, 50, 100];
    let nmse_snrs = vec![0.0, 30.0];
    let est_snrs = vec![-10.0, -5.0, 0.0, 5.0, 10.0, 20.0];
    let ident_wide = vec!["wcomp".into(), "music".into(), "ss".into(), "genie".into()];

    let mut cfg = ExperimentConfig {
        id: name.to_string(),
        sim: SimConfig::desk(),
        algos: ident_wide.clone(),
        snr_db: nmse_snrs.clone(),
        k_list: nmse_ks.clone(),
        t_tr: t_default,
        trials,
        seed: 42,
        scale,
        auto_paths: false,
        out_csv: None,
        plot_dir: None,
    };

    match name {
        "fig3" => {
            sim.n_c = 1;
            sim.b = 0.0; // narrowband: no beam squint, single subcarrier
            cfg.algos = vec![
                "wcomp".into(),
                "music".into(),
                "ss".into(),
                "ss-discard".into(),
                "ml".into(),
                "genie".into(),
            ];
        }
        "fig4" => cfg.t_tr = 50,
        "fig5" => {}
        "figL70" => {
            // More paths than training dimensions; only the coarray methods
            // apply. Desk keeps the same T_tr < L geometry at its size.
            match scale {
                Scale::Desk => {
                    sim.l = 20;
                    cfg.t_tr = 12;
                }
                Scale::Paper => sim.l = 70,
            }
            cfg.algos = vec!["ss".into(), "genie".into()];
        }
        "fig6" => cfg.auto_paths = true,
        "fig7" => {
            cfg.t_tr = 25;
            cfg.k_list = vec![100];
            cfg.snr_db = est_snrs;
            cfg.algos = ["wcomp", "music", "ss", "genie"]
                .iter()
                .flat_map(|i| [format!("{i}+lmmse"), format!("{i}+dg")])
                .collect();
        }
        "fig8" => {
            sim.l = 35;
            cfg.t_tr = 25;
            cfg.k_list = vec![100];
            cfg.snr_db = est_snrs;
            cfg.algos =
                vec!["ss+lmmse".into(), "ss+dg".into(), "genie+lmmse".into(), "genie+dg".into()];
        }
        other => return Err(Error::Parse(format!("unknown preset {other:?}"))),
    }
    cfg.sim = sim;
    cfg.validate()?;
    Ok(cfg)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Metric {
    Nmse,
    Eta,
}

impl Metric {
    pub fn as_str(&self) -> &'static str {
        match self {
            Metric::Nmse => "nmse",
            Metric::Eta => "eta",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "nmse" => Ok(Metric::Nmse),
            "eta" => Ok(Metric::Eta),
            other => Err(Error::Parse(format!("unknown metric {other:?}"))),
        }
    }
}

/// One aggregated measurement; `trials` counts the successful trials behind
/// the mean and standard error.
#[derive(Debug, Clone, PartialEq)]
pub struct ResultRow {
    pub experiment: String,
    pub algo: String,
    pub snr_db: f64,
    pub k: usize,
    pub t_tr: usize,
    pub l: usize,
    pub metric: Metric,
    pub value: f64,
    pub stderr: f64,
    pub trials: usize,
    pub seed: u64,
}

impl ResultRow {
    pub fn validate(&self) -> Result<()> {
        let ok = match self.metric {
            Metric::Nmse => self.value >= 0.0,
            Metric::Eta => (0.0..=1.0).contains(&self.value),
        };
        if !ok || self.stderr < 0.0 || !self.value.is_finite() {
            return Err(Error::InvalidArgument(format!(
                "out-of-range {} value {} (stderr {})",
                self.metric.as_str(),
                self.value,
                self.stderr
            )));
        }
        Ok(())
    }
}

/// Trials that errored for one (algo, snr, K) cell.
#[derive(Debug, Clone, PartialEq)]
pub struct CellFailures {
    pub algo: String,
    pub snr_db: f64,
    pub k: usize,
    pub count: usize,
    /// Message of the first error, for diagnostics.
    pub first_error: String,
}

#[derive(Debug, Clone)]
pub struct RunOutcome {
    pub rows: Vec<ResultRow>,
    /// Non-empty only when some trials errored; cells where every trial
    /// failed produce no row.
    pub failures: Vec<CellFailures>,
}

impl RunOutcome {
    pub fn total_failures(&self) -> usize {
        self.failures.iter().map(|f| f.count).sum()
    }
}

/// ‖Ĉ−C‖_F²/‖C‖_F², averaged over subcarriers.
pub fn nmse(estimate: &CovarianceSet, truth: &CovarianceSet) -> Result<f64> {
    if estimate.dim() != truth.dim() || estimate.n_subcarriers() != truth.n_subcarriers() {
        return Err(Error::DimensionMismatch(format!(
            "estimate is {}×{} over {} subcarriers, truth {}×{} over {}",
            estimate.dim(),
            estimate.dim(),
            estimate.n_subcarriers(),
            truth.dim(),
            truth.dim(),
            truth.n_subcarriers()
        )));
    }
    let mut acc = 0.0;
    for (e, t) in estimate.mats().iter().zip(truth.mats()) {
        let denom = t.norm_squared();
        if denom == 0.0 {
            return Err(Error::ZeroReference);
        }
        acc += (e - t).norm_squared() / denom;
    }
    Ok(acc / truth.n_subcarriers() as f64)
}

/// |ĥ^H h|/(‖ĥ‖‖h‖), averaged over subcarriers: the fraction of beamforming
/// amplitude retained when pointing with the estimate.
pub fn efficiency(estimate: &[CVec], truth: &[CVec]) -> Result<f64> {
    if estimate.len() != truth.len() || estimate.is_empty() {
        return Err(Error::DimensionMismatch("estimate/truth subcarrier counts differ".into()));
    }
    let mut acc = 0.0;
    for (e, t) in estimate.iter().zip(truth) {
        let tn = t.norm();
        if tn == 0.0 {
            return Err(Error::ZeroVector);
        }
        let en = e.norm();
        if en == 0.0 {
            continue; // a dead estimate earns zero efficiency, not an error
        }
        acc += e.dotc(t).norm() / (en * tn);
    }
    // Cauchy–Schwarz bounds each term by 1; shave rounding overshoot.
    Ok((acc / truth.len() as f64).min(1.0))
}

const ML_ITERS: usize = 120;
const ML_TOL: f64 = 1e-7;
/// Blocks live on streams 1.. within a trial; stream 0 draws the channel
/// parameters.
const STREAM_STRIDE: u64 = 1 << 20;

fn trial_rng(seed: u64, trial: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(trial * STREAM_STRIDE + stream);
    rng
}

struct Scenario {
    arr: ArrayConfig,
    dict: Dictionary,
    ruler: Ruler,
    x: TrainingMatrix,
    psi: MeasurementMatrices,
    profile: GainProfile,
    specs: Vec<AlgoSpec>,
    k_max: usize,
}

fn build_scenario(cfg: &ExperimentConfig) -> Result<Scenario> {
    let arr = cfg.sim.array();
    let dict = Dictionary::uniform(cfg.sim.grid(), cfg.sim.angle_range, &arr)?;
    let ruler = best_ruler_within(cfg.t_tr, arr.m - 1)?;
    let x = training_matrix(&ruler, arr.m)?;
    let psi = measurement_matrices(&x, &dict, &arr)?;
    let specs = cfg.algos.iter().map(|a| AlgoSpec::parse(a)).collect::<Result<Vec<_>>>()?;
    let k_max = *cfg.k_list.last().expect("validated non-empty");
    Ok(Scenario { arr, dict, ruler, x, psi, profile: cfg.sim.profile()?, specs, k_max })
}

/// Everything one trial draws once and shares across cells.
struct TrialData {
    params: ChannelParams,
    c_h: CovarianceSet,
    /// True channel per block and subcarrier.
    hs: Vec<Vec<CVec>>,
    /// Noise-free observations X·h.
    phi0: Vec<Vec<CVec>>,
    /// Unit-variance noise, scaled by σ_v per SNR point.
    noise: Vec<Vec<CVec>>,
}

fn draw_trial(cfg: &ExperimentConfig, scn: &Scenario, trial: u64) -> TrialData {
    let mut rng = trial_rng(cfg.seed, trial, 0);
    let params =
        ChannelParams::random(cfg.sim.l, cfg.sim.angle_range, scn.profile, &scn.arr, &mut rng);
    let c_h = channel_covariance(&params, &scn.arr);
    let t_tr = scn.x.t_tr();
    let mut hs = Vec::with_capacity(scn.k_max);
    let mut phi0 = Vec::with_capacity(scn.k_max);
    let mut noise = Vec::with_capacity(scn.k_max);
    for k in 0..scn.k_max {
        let mut brng = trial_rng(cfg.seed, trial, 1 + k as u64);
        let real = synth_channel(&params, &scn.arr, &mut brng);
        phi0.push(real.freq_response.iter().map(|h| scn.x.entries() * h).collect::<Vec<_>>());
        noise.push(
            (0..scn.arr.n_c)
                .map(|_| CVec::from_fn(t_tr, |_, _| cn01(&mut brng)))
                .collect::<Vec<_>>(),
        );
        hs.push(real.freq_response);
    }
    TrialData { params, c_h, hs, phi0, noise }
}

fn identify(
    spec: IdentAlgo,
    samples: &CovarianceSet,
    scn: &Scenario,
    data: &TrialData,
    l_hat: usize,
    noise_var: f64,
) -> Result<IdentResult> {
    // The gain-symmetry averaging only exists in the wideband model.
    let mirror = scn.arr.n_c > 1;
    match spec {
        IdentAlgo::Wcomp => wcomp_identify(
            std::slice::from_ref(samples),
            std::slice::from_ref(&scn.psi),
            l_hat,
            &scn.dict,
            &scn.arr,
        ),
        IdentAlgo::Music => {
            music_identify(samples, &scn.psi, l_hat, noise_var, None, mirror, &scn.dict, &scn.arr)
        }
        IdentAlgo::Ss(mode) => ss_music_identify(
            samples,
            &scn.ruler,
            &scn.dict,
            l_hat,
            noise_var,
            mode,
            None,
            mirror,
            &scn.arr,
        ),
        IdentAlgo::Ml => ml_identify_mm(
            samples,
            &scn.psi,
            l_hat,
            noise_var,
            ML_ITERS,
            ML_TOL,
            &scn.dict,
            &scn.arr,
        )
        .map(|out| out.result),
        IdentAlgo::Genie => {
            // The genie baseline fits each subcarrier's gains individually; the
            // symmetry averaging is part of what the blind algorithms bring.
            genie_identify(samples, &scn.x, &data.params.aods, noise_var, false, &scn.arr)
        }
    }
}

fn evaluate_cell(
    spec: AlgoSpec,
    samples: &CovarianceSet,
    scn: &Scenario,
    data: &TrialData,
    cfg: &ExperimentConfig,
    snr_db: f64,
    k: usize,
) -> Result<f64> {
    let noise_var = SimConfig::noise_var_at(snr_db);
    let l_hat = if cfg.auto_paths && spec.ident != IdentAlgo::Genie {
        estimate_num_paths(samples, default_gap_eps(snr_db))
    } else {
        cfg.sim.l
    };
    let ident = identify(spec.ident, samples, scn, data, l_hat, noise_var)?;
    let Some(est) = spec.est else {
        return nmse(&ident.reconstructed, &data.c_h);
    };

    let sigma = noise_var.sqrt();
    let obs_block = |kb: usize| -> Vec<CVec> {
        data.phi0[kb]
            .iter()
            .zip(&data.noise[kb])
            .map(|(p, n)| p + n.map(|v| v * Cx::new(sigma, 0.0)))
            .collect()
    };
    let mut acc = 0.0;
    match est {
        EstKind::Lmmse => {
            let weights = lmmse_weights(&scn.x, &ident.reconstructed, noise_var)?;
            for kb in 0..k {
                let phi = obs_block(kb);
                let est: Vec<CVec> =
                    weights.iter().zip(&phi).map(|(w, p)| w * p).collect();
                acc += efficiency(&est, &data.hs[kb])?;
            }
        }
        EstKind::Dg => {
            let obs: Vec<Vec<CVec>> = (0..k).map(obs_block).collect();
            let opts = DelayOpts::default();
            let (_, estimates) = if spec.ident == IdentAlgo::Genie {
                // Genie directions live off the grid; hand DG the exact
                // steering instead of dictionary columns.
                let bases: Vec<CMat> = (0..scn.arr.n_c)
                    .map(|ell| {
                        let mut b = CMat::zeros(scn.arr.m, data.params.aods.len());
                        for (i, &theta) in data.params.aods.iter().enumerate() {
                            b.set_column(i, &steering(theta, ell, &scn.arr));
                        }
                        b
                    })
                    .collect();
                dg_estimate_with_basis(
                    &obs,
                    &bases,
                    &ident.gains,
                    &scn.x,
                    &scn.arr,
                    noise_var,
                    &opts,
                )?
            } else {
                dg_estimate(&obs, &ident, &scn.x, &scn.dict, &scn.arr, noise_var, &opts)?
            };
            for (est, h) in estimates.iter().zip(&data.hs) {
                acc += efficiency(&est.per_ell, h)?;
            }
        }
    }
    Ok(acc / k as f64)
}

fn run_trial(cfg: &ExperimentConfig, scn: &Scenario, trial: u64) -> Vec<Result<f64>> {
    let data = draw_trial(cfg, scn, trial);
    let t_tr = scn.x.t_tr();
    let mut out = Vec::with_capacity(cfg.snr_db.len() * cfg.k_list.len() * scn.specs.len());
    for &snr_db in &cfg.snr_db {
        let sigma = SimConfig::noise_var_at(snr_db).sqrt();
        // Running per-subcarrier sums let every K checkpoint reuse the
        // earlier blocks.
        let mut sums = vec![CMat::zeros(t_tr, t_tr); scn.arr.n_c];
        let mut done = 0usize;
        for &k in &cfg.k_list {
            while done < k {
                for (ell, sum) in sums.iter_mut().enumerate() {
                    let y = &data.phi0[done][ell]
                        + data.noise[done][ell].map(|v| v * Cx::new(sigma, 0.0));
                    *sum += &y * y.adjoint();
                }
                done += 1;
            }
            let mats = sums.iter().map(|s| s.scale(1.0 / k as f64)).collect();
            let samples = CovarianceSet::new(CovKind::Sample, mats)
                .expect("sample covariance dimensions are consistent");
            for &spec in &scn.specs {
                out.push(evaluate_cell(spec, &samples, scn, &data, cfg, snr_db, k));
            }
        }
    }
    out
}

/// Run the full Monte-Carlo sweep. Deterministic for a given configuration:
/// trials own disjoint counter-based random streams and the reduction is
/// ordered, so the thread count never changes the output.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<RunOutcome> {
    cfg.validate()?;
    let scn = build_scenario(cfg)?;
    let per_trial: Vec<Vec<Result<f64>>> =
        (0..cfg.trials as u64).into_par_iter().map(|t| run_trial(cfg, &scn, t)).collect();

    let n_specs = scn.specs.len();
    let mut rows = Vec::new();
    let mut failures = Vec::new();
    for (ai, spec) in scn.specs.iter().enumerate() {
        for (si, &snr_db) in cfg.snr_db.iter().enumerate() {
            for (ki, &k) in cfg.k_list.iter().enumerate() {
                let idx = (si * cfg.k_list.len() + ki) * n_specs + ai;
                let mut values = Vec::new();
                let mut fail = 0usize;
                let mut first_error = String::new();
                for trial in &per_trial {
                    match &trial[idx] {
                        Ok(v) => values.push(*v),
                        Err(e) => {
                            if fail == 0 {
                                first_error = e.to_string();
                            }
                            fail += 1;
                        }
                    }
                }
                if fail > 0 {
                    failures.push(CellFailures {
                        algo: cfg.algos[ai].clone(),
                        snr_db,
                        k,
                        count: fail,
                        first_error,
                    });
                }
                if values.is_empty() {
                    continue;
                }
                let (value, stderr) = mean_stderr(&values);
                let row = ResultRow {
                    experiment: cfg.id.clone(),
                    algo: cfg.algos[ai].clone(),
                    snr_db,
                    k,
                    t_tr: cfg.t_tr,
                    l: cfg.sim.l,
                    metric: spec.metric(),
                    value,
                    stderr,
                    trials: values.len(),
                    seed: cfg.seed,
                };
                row.validate()?;
                rows.push(row);
            }
        }
    }
    Ok(RunOutcome { rows, failures })
}

fn mean_stderr(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    if xs.len() < 2 {
        return (mean, 0.0);
    }
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, (var / n).sqrt())
}

pub const CSV_HEADER: &str = "experiment,algo,snr_db,K,Ttr,L,metric,value,stderr,trials,seed";

pub fn rows_to_csv(rows: &[ResultRow]) -> Result<String> {
    if rows.is_empty() {
        return Err(Error::InvalidArgument("no result rows to emit".into()));
    }
    let mut out = String::from(CSV_HEADER);
    out.push('\n');
    for r in rows {
        if r.experiment.contains(',') || r.algo.contains(',') {
            return Err(Error::InvalidArgument("experiment/algo names must not contain commas".into()));
        }
        writeln!(
            out,
            "{},{},{},{},{},{},{},{},{},{},{}",
            r.experiment,
            r.algo,
            r.snr_db,
            r.k,
            r.t_tr,
            r.l,
            r.metric.as_str(),
            r.value,
            r.stderr,
            r.trials,
            r.seed
        )
        .expect("string write");
    }
    Ok(out)
}

pub fn rows_from_csv(text: &str) -> Result<Vec<ResultRow>> {
    let mut lines = text.lines();
    match lines.next() {
        Some(h) if h.trim_end() == CSV_HEADER => {}
        other => return Err(Error::Parse(format!("bad results header {other:?}"))),
    }
    let mut rows = Vec::new();
    for (no, line) in lines.enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != 11 {
            return Err(Error::Parse(format!("line {}: expected 11 fields", no + 2)));
        }
        let bad = |what: &str| Error::Parse(format!("line {}: bad {what}", no + 2));
        rows.push(ResultRow {
            experiment: fields[0].to_string(),
            algo: fields[1].to_string(),
            snr_db: fields[2].parse().map_err(|_| bad("snr_db"))?,
            k: fields[3].parse().map_err(|_| bad("K"))?,
            t_tr: fields[4].parse().map_err(|_| bad("Ttr"))?,
            l: fields[5].parse().map_err(|_| bad("L"))?,
            metric: Metric::parse(fields[6])?,
            value: fields[7].parse().map_err(|_| bad("value"))?,
            stderr: fields[8].parse().map_err(|_| bad("stderr"))?,
            trials: fields[9].parse().map_err(|_| bad("trials"))?,
            seed: fields[10].parse().map_err(|_| bad("seed"))?,
        });
    }
    Ok(rows)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EmitFormat {
    Csv,
    Svg,
}

/// Write rows as a CSV file (path names the file) or as a set of SVG plots
/// (path names a directory). Returns the files written.
pub fn emit(rows: &[ResultRow], format: EmitFormat, path: &Path) -> Result<Vec<PathBuf>> {
    if rows.is_empty() {
        return Err(Error::InvalidArgument("no result rows to emit".into()));
    }
    match format {
        EmitFormat::Csv => {
            if let Some(dir) = path.parent() {
                if !dir.as_os_str().is_empty() {
                    std::fs::create_dir_all(dir)?;
                }
            }
            std::fs::write(path, rows_to_csv(rows)?)?;
            Ok(vec![path.to_path_buf()])
        }
        EmitFormat::Svg => emit_svg(rows, path),
    }
}

struct PlotSeries {
    label: String,
    /// (x, y, stderr)
    points: Vec<(f64, f64, f64)>,
}

fn emit_svg(rows: &[ResultRow], dir: &Path) -> Result<Vec<PathBuf>> {
    std::fs::create_dir_all(dir)?;
    let mut written = Vec::new();
    let experiments: BTreeSet<&str> = rows.iter().map(|r| r.experiment.as_str()).collect();
    for exp in experiments {
        for metric in [Metric::Nmse, Metric::Eta] {
            let group: Vec<&ResultRow> = rows
                .iter()
                .filter(|r| r.experiment == exp && r.metric == metric)
                .collect();
            if group.is_empty() {
                continue;
            }
            let ks: BTreeSet<usize> = group.iter().map(|r| r.k).collect();
            let algos: BTreeSet<&str> = group.iter().map(|r| r.algo.as_str()).collect();
            let mut snrs: Vec<f64> = group.iter().map(|r| r.snr_db).collect();
            snrs.sort_by(|a, b| a.partial_cmp(b).unwrap());
            snrs.dedup();
            let log_y = metric == Metric::Nmse;
            if ks.len() > 1 {
                // Metric vs K, one plot per SNR point.
                for &snr in &snrs {
                    let series: Vec<PlotSeries> = algos
                        .iter()
                        .map(|a| PlotSeries {
                            label: a.to_string(),
                            points: group
                                .iter()
                                .filter(|r| r.algo == *a && r.snr_db == snr)
                                .map(|r| (r.k as f64, r.value, r.stderr))
                                .collect(),
                        })
                        .filter(|s| !s.points.is_empty())
                        .collect();
                    let title = format!("{exp}: {} vs K at {snr} dB", metric.as_str());
                    let svg = svg_line_plot(&title, "K", metric.as_str(), true, log_y, &series);
                    let file = dir.join(format!("{exp}_{}_snr{snr}.svg", metric.as_str()));
                    std::fs::write(&file, svg)?;
                    written.push(file);
                }
            } else {
                // Metric vs SNR at fixed K.
                for &k in &ks {
                    let series: Vec<PlotSeries> = algos
                        .iter()
                        .map(|a| PlotSeries {
                            label: a.to_string(),
                            points: group
                                .iter()
                                .filter(|r| r.algo == *a && r.k == k)
                                .map(|r| (r.snr_db, r.value, r.stderr))
                                .collect(),
                        })
                        .filter(|s| !s.points.is_empty())
                        .collect();
                    let title = format!("{exp}: {} vs SNR at K={k}", metric.as_str());
                    let svg =
                        svg_line_plot(&title, "SNR (dB)", metric.as_str(), false, log_y, &series);
                    let file = dir.join(format!("{exp}_{}_K{k}.svg", metric.as_str()));
                    std::fs::write(&file, svg)?;
                    written.push(file);
                }
            }
        }
    }
    Ok(written)
}

const PALETTE: [&str; 8] =
    ["#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b", "#e377c2", "#17becf"];

const PLOT_W: f64 = 720.0;
const PLOT_H: f64 = 480.0;
const MARGIN_L: f64 = 80.0;
const MARGIN_R: f64 = 170.0;
const MARGIN_T: f64 = 42.0;
const MARGIN_B: f64 = 56.0;
/// NMSE can be exactly zero in noiseless runs; clamp for the log axis.
const LOG_FLOOR: f64 = 1e-12;

fn svg_line_plot(
    title: &str,
    x_label: &str,
    y_label: &str,
    log_x: bool,
    log_y: bool,
    series: &[PlotSeries],
) -> String {
    let tx = |v: f64| if log_x { v.max(LOG_FLOOR).log10() } else { v };
    let ty = |v: f64| if log_y { v.max(LOG_FLOOR).log10() } else { v };

    let mut xs = Vec::new();
    let mut ys = Vec::new();
    for s in series {
        for &(x, y, e) in &s.points {
            xs.push(tx(x));
            ys.push(ty(y - e));
            ys.push(ty(y + e));
            ys.push(ty(y));
        }
    }
    let (x_lo, x_hi) = padded_range(&xs, 0.04);
    let (y_lo, y_hi) = padded_range(&ys, 0.08);
    let px = |x: f64| MARGIN_L + (x - x_lo) / (x_hi - x_lo) * (PLOT_W - MARGIN_L - MARGIN_R);
    let py = |y: f64| PLOT_H - MARGIN_B - (y - y_lo) / (y_hi - y_lo) * (PLOT_H - MARGIN_T - MARGIN_B);

    let mut svg = String::new();
    let _ = write!(
        svg,
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{PLOT_W}\" height=\"{PLOT_H}\" \
         viewBox=\"0 0 {PLOT_W} {PLOT_H}\" font-family=\"sans-serif\" font-size=\"12\">\n"
    );
    let _ = write!(svg, "<rect width=\"{PLOT_W}\" height=\"{PLOT_H}\" fill=\"white\"/>\n");
    let _ = write!(
        svg,
        "<text x=\"{:.1}\" y=\"24\" text-anchor=\"middle\" font-size=\"15\">{}</text>\n",
        (MARGIN_L + PLOT_W - MARGIN_R) / 2.0,
        xml_escape(title)
    );

    // Axes box.
    let _ = write!(
        svg,
        "<rect x=\"{:.1}\" y=\"{:.1}\" width=\"{:.1}\" height=\"{:.1}\" fill=\"none\" stroke=\"#333\"/>\n",
        MARGIN_L,
        MARGIN_T,
        PLOT_W - MARGIN_L - MARGIN_R,
        PLOT_H - MARGIN_T - MARGIN_B
    );

    for (t, label) in axis_ticks(x_lo, x_hi, log_x) {
        let x = px(t);
        let _ = write!(
            svg,
            "<line x1=\"{x:.1}\" y1=\"{:.1}\" x2=\"{x:.1}\" y2=\"{:.1}\" stroke=\"#ccc\"/>\n",
            MARGIN_T,
            PLOT_H - MARGIN_B
        );
        let _ = write!(
            svg,
            "<text x=\"{x:.1}\" y=\"{:.1}\" text-anchor=\"middle\">{label}</text>\n",
            PLOT_H - MARGIN_B + 18.0
        );
    }
    for (t, label) in axis_ticks(y_lo, y_hi, log_y) {
        let y = py(t);
        let _ = write!(
            svg,
            "<line x1=\"{:.1}\" y1=\"{y:.1}\" x2=\"{:.1}\" y2=\"{y:.1}\" stroke=\"#ccc\"/>\n",
            MARGIN_L,
            PLOT_W - MARGIN_R
        );
        let _ = write!(
            svg,
            "<text x=\"{:.1}\" y=\"{:.1}\" text-anchor=\"end\">{label}</text>\n",
            MARGIN_L - 8.0,
            y + 4.0
        );
    }
    let _ = write!(
        svg,
        "<text x=\"{:.1}\" y=\"{:.1}\" text-anchor=\"middle\">{}</text>\n",
        (MARGIN_L + PLOT_W - MARGIN_R) / 2.0,
        PLOT_H - 14.0,
        xml_escape(x_label)
    );
    let _ = write!(
        svg,
        "<text x=\"20\" y=\"{:.1}\" text-anchor=\"middle\" transform=\"rotate(-90 20 {:.1})\">{}</text>\n",
        (MARGIN_T + PLOT_H - MARGIN_B) / 2.0,
        (MARGIN_T + PLOT_H - MARGIN_B) / 2.0,
        xml_escape(y_label)
    );

    for (i, s) in series.iter().enumerate() {
        let color = PALETTE[i % PALETTE.len()];
        let mut pts = String::new();
        for &(x, y, _) in &s.points {
            let _ = write!(pts, "{:.1},{:.1} ", px(tx(x)), py(ty(y)));
        }
        let _ = write!(
            svg,
            "<polyline points=\"{}\" fill=\"none\" stroke=\"{color}\" stroke-width=\"1.6\"/>\n",
            pts.trim_end()
        );
        for &(x, y, e) in &s.points {
            let cx = px(tx(x));
            if e > 0.0 {
                let y1 = py(ty(y - e));
                let y0 = py(ty(y + e));
                let _ = write!(
                    svg,
                    "<line x1=\"{cx:.1}\" y1=\"{y0:.1}\" x2=\"{cx:.1}\" y2=\"{y1:.1}\" stroke=\"{color}\"/>\n"
                );
            }
            let _ = write!(
                svg,
                "<circle cx=\"{cx:.1}\" cy=\"{:.1}\" r=\"3\" fill=\"{color}\"/>\n",
                py(ty(y))
            );
        }
        // Legend entry.
        let ly = MARGIN_T + 10.0 + i as f64 * 18.0;
        let lx = PLOT_W - MARGIN_R + 12.0;
        let _ = write!(
            svg,
            "<line x1=\"{lx:.1}\" y1=\"{ly:.1}\" x2=\"{:.1}\" y2=\"{ly:.1}\" stroke=\"{color}\" stroke-width=\"2\"/>\n",
            lx + 20.0
        );
        let _ = write!(
            svg,
            "<text x=\"{:.1}\" y=\"{:.1}\">{}</text>\n",
            lx + 26.0,
            ly + 4.0,
            xml_escape(&s.label)
        );
    }
    svg.push_str("</svg>\n");
    svg
}

fn padded_range(values: &[f64], pad: f64) -> (f64, f64) {
    let lo = values.iter().cloned().fold(f64::INFINITY, f64::min);
    let hi = values.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if !lo.is_finite() || !hi.is_finite() {
        return (0.0, 1.0);
    }
    let span = (hi - lo).max(1e-9);
    (lo - pad * span, hi + pad * span)
}

/// Tick positions with labels in the transformed coordinate (log10 when the
/// axis is logarithmic: decade ticks).
fn axis_ticks(lo: f64, hi: f64, log: bool) -> Vec<(f64, String)> {
    let mut out = Vec::new();
    if log {
        let first = lo.ceil() as i64;
        let last = hi.floor() as i64;
        let step = (((last - first).max(0) as usize / 8) + 1) as i64;
        let mut e = first;
        while e <= last {
            out.push((e as f64, format!("1e{e}")));
            e += step;
        }
        if out.is_empty() {
            out.push((lo, fmt_tick(lo)));
            out.push((hi, fmt_tick(hi)));
        }
    } else {
        let n = 5usize;
        for i in 0..=n {
            let t = lo + (hi - lo) * i as f64 / n as f64;
            out.push((t, fmt_tick(t)));
        }
    }
    out
}

fn fmt_tick(v: f64) -> String {
    if v == 0.0 {
        return "0".into();
    }
    let a = v.abs();
    if (1e-3..1e5).contains(&a) {
        let s = format!("{v:.3}");
        s.trim_end_matches('0').trim_end_matches('.').to_string()
    } else {
        format!("{v:.1e}")
    }
}

fn xml_escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

/// Wall-clock per channel estimate across an antenna sweep.
#[derive(Debug, Clone, PartialEq)]
pub struct TimingRow {
    pub algo: String,
    pub m: usize,
    pub seconds: f64,
}

#[derive(Debug, Clone)]
pub struct TimingProfile {
    pub rows: Vec<TimingRow>,
}

impl TimingProfile {
    /// Log-log least-squares slope of time against M for one algorithm.
    pub fn exponent(&self, algo: &str) -> Option<f64> {
        let pts: Vec<(f64, f64)> = self
            .rows
            .iter()
            .filter(|r| r.algo == algo)
            .map(|r| ((r.m as f64).ln(), r.seconds.max(1e-12).ln()))
            .collect();
        if pts.len() < 2 {
            return None;
        }
        let n = pts.len() as f64;
        let sx: f64 = pts.iter().map(|p| p.0).sum();
        let sy: f64 = pts.iter().map(|p| p.1).sum();
        let sxx: f64 = pts.iter().map(|p| p.0 * p.0).sum();
        let sxy: f64 = pts.iter().map(|p| p.0 * p.1).sum();
        Some((n * sxy - sx * sy) / (n * sxx - sx * sx))
    }

    pub fn ratio(&self, algo: &str, m_hi: usize, m_lo: usize) -> Option<f64> {
        let at = |m: usize| {
            self.rows.iter().find(|r| r.algo == algo && r.m == m).map(|r| r.seconds)
        };
        Some(at(m_hi)? / at(m_lo)?)
    }

    pub fn table(&self) -> String {
        let mut out = String::from("algo,M,seconds\n");
        for r in &self.rows {
            let _ = writeln!(out, "{},{},{}", r.algo, r.m, r.seconds);
        }
        out
    }
}

/// Measure per-estimate wall-clock for the two channel estimators across an
/// antenna sweep, with the training length held fixed.
///
/// `dg` times the stage that recovers delays and per-block gains from the
/// training observations — the complete parameterization of the estimates;
/// it never touches an M-dimensional quantity. `lmmse` times the full
/// estimator including weight construction, which is where the M dependence
/// lives.
pub fn timing_profile(m_list: &[usize], seed: u64) -> Result<TimingProfile> {
    if m_list.len() < 2 {
        return Err(Error::InvalidArgument("need at least two antenna counts".into()));
    }
    let t_tr = 16usize;
    let l = 5usize;
    let min_m = *m_list.iter().min().unwrap();
    if min_m <= t_tr {
        return Err(Error::InvalidArgument("antenna counts must exceed the training length".into()));
    }
    let ruler = best_ruler_within(t_tr, min_m - 1)?;
    let blocks = 8usize;
    let reps = 5usize;
    let noise_var = SimConfig::noise_var_at(10.0);
    let mut rows = Vec::new();
    for &m in m_list {
        let mut sim = SimConfig::desk();
        sim.m = m;
        sim.l = l;
        sim.g = Some(2 * m);
        let arr = sim.array();
        let x = training_matrix(&ruler, m)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let params =
            ChannelParams::random(l, sim.angle_range, GainProfile::Equal, &arr, &mut rng);
        let c_h = channel_covariance(&params, &arr);
        let obs: Vec<Vec<CVec>> = (0..blocks)
            .map(|_| {
                let real = synth_channel(&params, &arr, &mut rng);
                real.freq_response
                    .iter()
                    .map(|h| {
                        let mut phi = x.entries() * h;
                        for v in phi.iter_mut() {
                            *v += cn01(&mut rng) * Cx::new(noise_var.sqrt(), 0.0);
                        }
                        phi
                    })
                    .collect()
            })
            .collect();
        let ident = genie_identify(
            &sample_cov_of(&obs),
            &x,
            &params.aods,
            noise_var,
            arr.n_c > 1,
            &arr,
        )?;
        // Genie support indices are placeholders; time DG on the exact
        // steering basis, as the estimation path does.
        let psi_s: Vec<CMat> = (0..arr.n_c)
            .map(|ell| {
                let mut b = CMat::zeros(arr.m, params.aods.len());
                for (i, &theta) in params.aods.iter().enumerate() {
                    b.set_column(i, &steering(theta, ell, &arr));
                }
                x.entries() * b
            })
            .collect();

        let lmmse_secs = time_min(reps, || {
            let _ = lmmse_estimate(&obs[0], &x, &c_h, noise_var).expect("lmmse");
        });
        rows.push(TimingRow { algo: "lmmse".into(), m, seconds: lmmse_secs });

        let opts = DelayOpts::default();
        let dg_secs = time_min(reps, || {
            let _ = dg_fit(&obs, &psi_s, &ident.gains, noise_var, &arr, &opts).expect("dg fit");
        }) / blocks as f64;
        rows.push(TimingRow { algo: "dg".into(), m, seconds: dg_secs });
    }
    Ok(TimingProfile { rows })
}

fn sample_cov_of(obs: &[Vec<CVec>]) -> CovarianceSet {
    crate::channel::sample_covariance(obs).expect("non-empty blocks")
}

fn time_min<F: FnMut()>(reps: usize, mut f: F) -> f64 {
    f(); // warm-up
    let mut best = f64::INFINITY;
    for _ in 0..reps {
        let t = Instant::now();
        f();
        best = best.min(t.elapsed().as_secs_f64());
    }
    best
}
