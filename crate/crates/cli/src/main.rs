//! Command-line front end: ruler design, covariance identification, channel
//! estimation, and canned Monte-Carlo experiments.
//!
//! File formats are deliberately plain. Scenario configs are flat JSON
//! (`{"M":64,"N_c":8,...}`), covariances travel as `l,row,col,re,im` CSV,
//! observation/channel vectors as `block,l,index,re,im` CSV, and
//! identification results as a small JSON document with the reconstructed
//! covariance embedded in CSV form.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};

use covmimo::chest::{dg_estimate, lmmse_estimate_lowrank, lmmse_weights, DelayOpts};
use covmimo::harness::{
    efficiency, emit, preset, preset_names, EmitFormat, RunOutcome, Scale, SimConfig,
};
use covmimo::ident::{
    default_gap_eps, estimate_num_paths, measurement_matrices, ml_identify_mm, music_identify,
    ss_music_identify, wcomp_identify, IdentResult,
};
use covmimo::rulers::{
    best_ruler, best_ruler_within, coprime_ruler, is_complete, training_matrix, wichmann_ruler,
};
use covmimo::{Algo, CovKind, CovarianceSet, CVec, Cx, Dictionary, GainMode, Ruler, SmoothingMode};

#[derive(Parser)]
#[command(name = "covmimo", version, about = "Wideband massive-MIMO covariance identification toolkit")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Construct a sparse complete ruler (training beam pattern)
    Ruler(RulerArgs),
    /// Identify the channel covariance from sample observation covariances
    Identify(IdentifyArgs),
    /// Estimate per-block channels from training observations
    Estimate(EstimateArgs),
    /// Run a canned Monte-Carlo experiment and write CSV/plots
    Experiment(ExperimentArgs),
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(code) => code,
        Err(err) => {
            eprintln!("error: {err:#}");
            ExitCode::FAILURE
        }
    }
}

fn run(cli: Cli) -> Result<ExitCode> {
    match cli.command {
        Command::Ruler(args) => cmd_ruler(args)?,
        Command::Identify(args) => cmd_identify(args)?,
        Command::Estimate(args) => cmd_estimate(args)?,
        Command::Experiment(args) => return cmd_experiment(args),
    }
    Ok(ExitCode::SUCCESS)
}

// ---------------------------------------------------------------- ruler ----

#[derive(Args)]
struct RulerArgs {
    #[command(flatten)]
    source: RulerSource,
    /// Cap the ruler length when searching by mark count
    #[arg(long, value_name = "LEN")]
    max_length: Option<usize>,
    /// Verify completeness by brute force; fail if any lag is missing
    #[arg(long)]
    check_complete: bool,
    /// Output format
    #[arg(long, value_enum, default_value_t = EmitKind::Text)]
    emit: EmitKind,
}

#[derive(Args)]
#[group(required = true, multiple = false)]
struct RulerSource {
    /// Longest known complete ruler with this many marks
    #[arg(long, value_name = "T")]
    marks: Option<usize>,
    /// Wichmann construction W(r,s)
    #[arg(long, value_name = "R,S")]
    wichmann: Option<String>,
    /// Two-level coprime construction from the pair p,q
    #[arg(long, value_name = "P,Q")]
    coprime: Option<String>,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum EmitKind {
    Json,
    Text,
}

fn parse_pair(s: &str, flag: &str) -> Result<(u64, u64)> {
    let (a, b) = s
        .split_once(',')
        .with_context(|| format!("--{flag} takes two comma-separated integers, got {s:?}"))?;
    let parse = |t: &str| {
        t.trim()
            .parse::<u64>()
            .with_context(|| format!("--{flag}: {t:?} is not a nonnegative integer"))
    };
    Ok((parse(a)?, parse(b)?))
}

fn cmd_ruler(args: RulerArgs) -> Result<()> {
    let ruler: Ruler = if let Some(t) = args.source.marks {
        match args.max_length {
            Some(cap) => best_ruler_within(t, cap)?,
            None => best_ruler(t)?,
        }
    } else if let Some(ref rs) = args.source.wichmann {
        let (r, s) = parse_pair(rs, "wichmann")?;
        wichmann_ruler(r as usize, s as usize)
    } else if let Some(ref pq) = args.source.coprime {
        let (p, q) = parse_pair(pq, "coprime")?;
        coprime_ruler(p, q)?
    } else {
        unreachable!("clap enforces one source");
    };

    if args.check_complete && !is_complete(&ruler, ruler.complete_up_to()) {
        bail!(
            "ruler {:?} is not complete up to {}",
            ruler.marks(),
            ruler.complete_up_to()
        );
    }

    match args.emit {
        EmitKind::Json => {
            #[derive(Serialize)]
            struct RulerDoc<'a> {
                marks: &'a [usize],
                length: usize,
                complete_up_to: usize,
            }
            let doc = RulerDoc {
                marks: ruler.marks(),
                length: ruler.length(),
                complete_up_to: ruler.complete_up_to(),
            };
            println!("{}", serde_json::to_string(&doc)?);
        }
        EmitKind::Text => {
            let marks: Vec<String> = ruler.marks().iter().map(|m| m.to_string()).collect();
            println!("marks: {}", marks.join(" "));
            println!("length: {}", ruler.length());
            println!("complete_up_to: {}", ruler.complete_up_to());
            if args.check_complete {
                println!("completeness: verified");
            }
        }
    }
    Ok(())
}

// ------------------------------------------------------------- identify ----

#[derive(Args)]
struct IdentifyArgs {
    /// Flat scenario config JSON
    #[arg(long, value_name = "FILE")]
    config: PathBuf,
    /// Sample observation covariances (l,row,col,re,im CSV)
    #[arg(long, value_name = "FILE")]
    cov: PathBuf,
    /// Identification algorithm
    #[arg(long, value_enum)]
    algo: AlgoArg,
    /// Number of paths: an integer, or "auto" for the eigengap detector
    #[arg(long, default_value = "auto", value_name = "L|auto")]
    paths: String,
    /// Gain recovery for music/ss: direct (with Khatri-Rao retry when
    /// ill-conditioned) or forced khatri-rao
    #[arg(long, value_enum, default_value_t = GainModeArg::Direct)]
    gain_mode: GainModeArg,
    /// Average recovered gains over mirror subcarrier pairs
    #[arg(long)]
    mirror: bool,
    /// Output path for the identification JSON (stdout when omitted)
    #[arg(long, value_name = "FILE")]
    out: Option<PathBuf>,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum AlgoArg {
    Wcomp,
    Music,
    Ss,
    Ml,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum GainModeArg {
    Direct,
    #[value(name = "khatri-rao")]
    KhatriRao,
}

impl GainModeArg {
    /// `None` keeps the automatic direct->Khatri-Rao fallback.
    fn as_mode(self) -> Option<GainMode> {
        match self {
            GainModeArg::Direct => None,
            GainModeArg::KhatriRao => Some(GainMode::KhatriRao),
        }
    }
}

/// Identification result on disk: support and gains as JSON, the
/// reconstructed covariance embedded as CSV text.
#[derive(Serialize, Deserialize)]
struct IdentDoc {
    algo: String,
    support: Vec<usize>,
    gains: Vec<Vec<f64>>,
    reconstructed_csv: String,
}

impl IdentDoc {
    fn from_result(res: &IdentResult) -> Self {
        Self {
            algo: res.algo.as_str().to_string(),
            support: res.support.clone(),
            gains: res.gains.clone(),
            reconstructed_csv: res.reconstructed.to_csv(),
        }
    }

    fn into_result(self) -> Result<IdentResult> {
        let reconstructed =
            CovarianceSet::from_csv(CovKind::Reconstructed, &self.reconstructed_csv)
                .context("embedded covariance CSV")?;
        Ok(IdentResult {
            algo: Algo::parse(&self.algo)?,
            support: self.support,
            gains: self.gains,
            reconstructed,
        })
    }
}

/// Read a flat scenario config.
fn load_sim(path: &Path) -> Result<SimConfig> {
    let text = fs::read_to_string(path)
        .with_context(|| format!("reading config {}", path.display()))?;
    Ok(SimConfig::from_json(&text)?)
}

fn cmd_identify(args: IdentifyArgs) -> Result<()> {
    let sim = load_sim(&args.config)?;
    let arr = sim.array();
    let cov_text = fs::read_to_string(&args.cov)
        .with_context(|| format!("reading covariances {}", args.cov.display()))?;
    let samples = CovarianceSet::from_csv(CovKind::Sample, &cov_text)?;
    if samples.n_subcarriers() != arr.n_c {
        bail!(
            "covariance file has {} subcarriers, config says N_c={}",
            samples.n_subcarriers(),
            arr.n_c
        );
    }
    let t_tr = samples.dim();
    if t_tr > arr.m {
        bail!("covariance dimension {t_tr} exceeds M={}", arr.m);
    }

    let noise_var = SimConfig::noise_var_at(sim.snr_db);
    let l_hat = match args.paths.as_str() {
        "auto" => estimate_num_paths(&samples, default_gap_eps(sim.snr_db)),
        s => s
            .parse::<usize>()
            .with_context(|| format!("--paths wants an integer or \"auto\", got {s:?}"))?,
    };
    if l_hat == 0 {
        bail!("path detector found no signal subspace; pass --paths explicitly");
    }

    let dict = Dictionary::uniform(sim.grid(), sim.angle_range, &arr)?;
    let ruler = best_ruler_within(t_tr, arr.m - 1)?;
    let x = training_matrix(&ruler, arr.m)?;
    let gain_mode = args.gain_mode.as_mode();

    let result = match args.algo {
        AlgoArg::Wcomp => {
            let psi = measurement_matrices(&x, &dict, &arr)?;
            wcomp_identify(
                std::slice::from_ref(&samples),
                std::slice::from_ref(&psi),
                l_hat,
                &dict,
                &arr,
            )?
        }
        AlgoArg::Music => {
            let psi = measurement_matrices(&x, &dict, &arr)?;
            music_identify(&samples, &psi, l_hat, noise_var, gain_mode, args.mirror, &dict, &arr)?
        }
        AlgoArg::Ss => ss_music_identify(
            &samples,
            &ruler,
            &dict,
            l_hat,
            noise_var,
            SmoothingMode::AverageRepeats,
            gain_mode,
            args.mirror,
            &arr,
        )?,
        AlgoArg::Ml => {
            let psi = measurement_matrices(&x, &dict, &arr)?;
            ml_identify_mm(&samples, &psi, l_hat, noise_var, 120, 1e-7, &dict, &arr)?.result
        }
    };

    let json = serde_json::to_string_pretty(&IdentDoc::from_result(&result))?;
    match args.out {
        Some(path) => {
            fs::write(&path, json).with_context(|| format!("writing {}", path.display()))?;
            eprintln!(
                "{}: {} paths on support {:?}",
                result.algo.as_str(),
                result.support.len(),
                result.support
            );
        }
        None => println!("{json}"),
    }
    Ok(())
}

// ------------------------------------------------------------- estimate ----

#[derive(Args)]
struct EstimateArgs {
    /// Flat scenario config JSON
    #[arg(long, value_name = "FILE")]
    config: PathBuf,
    /// Training observations (block,l,index,re,im CSV)
    #[arg(long, value_name = "FILE")]
    obs: PathBuf,
    /// Identification JSON produced by `identify`
    #[arg(long, value_name = "FILE")]
    ident: PathBuf,
    /// Estimator
    #[arg(long, value_enum)]
    method: MethodArg,
    /// Delay search grid size (dg only; defaults to 20 per tap)
    #[arg(long, value_name = "POINTS")]
    delay_grid: Option<usize>,
    /// True channels (block,l,index,re,im CSV) for efficiency scoring
    #[arg(long, value_name = "FILE")]
    truth: Option<PathBuf>,
    /// Output CSV of channel estimates
    #[arg(long, value_name = "FILE")]
    out: PathBuf,
    /// Output CSV of per-subcarrier efficiency (needs --truth)
    #[arg(long, value_name = "FILE")]
    eta_out: Option<PathBuf>,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum MethodArg {
    Lmmse,
    #[value(name = "lmmse-lr")]
    LmmseLr,
    Dg,
}

/// Parse `block,l,index,re,im` CSV into [block][subcarrier] vectors.
fn read_vector_blocks(path: &Path) -> Result<Vec<Vec<CVec>>> {
    let text =
        fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    let mut entries: Vec<(usize, usize, usize, Cx)> = Vec::new();
    let (mut max_block, mut max_ell, mut max_idx) = (0usize, 0usize, 0usize);
    for (lineno, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with("block,") {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != 5 {
            bail!("{}:{}: expected 5 fields", path.display(), lineno + 1);
        }
        let ctx = || format!("{}:{}", path.display(), lineno + 1);
        let block: usize = fields[0].trim().parse().with_context(ctx)?;
        let ell: usize = fields[1].trim().parse().with_context(ctx)?;
        let idx: usize = fields[2].trim().parse().with_context(ctx)?;
        let re: f64 = fields[3].trim().parse().with_context(ctx)?;
        let im: f64 = fields[4].trim().parse().with_context(ctx)?;
        max_block = max_block.max(block);
        max_ell = max_ell.max(ell);
        max_idx = max_idx.max(idx);
        entries.push((block, ell, idx, Cx::new(re, im)));
    }
    if entries.is_empty() {
        bail!("{}: no vector entries found", path.display());
    }
    let dim = max_idx + 1;
    let mut out = vec![vec![CVec::zeros(dim); max_ell + 1]; max_block + 1];
    for (block, ell, idx, v) in entries {
        out[block][ell][idx] = v;
    }
    Ok(out)
}

fn write_vector_blocks(path: &Path, method: &str, blocks: &[Vec<CVec>]) -> Result<()> {
    let mut out = String::from("method,block,l,index,re,im\n");
    for (k, per_ell) in blocks.iter().enumerate() {
        for (ell, v) in per_ell.iter().enumerate() {
            for (i, entry) in v.iter().enumerate() {
                out.push_str(&format!("{method},{k},{ell},{i},{},{}\n", entry.re, entry.im));
            }
        }
    }
    fs::write(path, out).with_context(|| format!("writing {}", path.display()))?;
    Ok(())
}

fn cmd_estimate(args: EstimateArgs) -> Result<()> {
    let sim = load_sim(&args.config)?;
    let arr = sim.array();
    let doc: IdentDoc = serde_json::from_str(
        &fs::read_to_string(&args.ident)
            .with_context(|| format!("reading {}", args.ident.display()))?,
    )
    .context("identification JSON")?;
    let ident = doc.into_result()?;
    if ident.reconstructed.n_subcarriers() != arr.n_c {
        bail!(
            "identification covers {} subcarriers, config says N_c={}",
            ident.reconstructed.n_subcarriers(),
            arr.n_c
        );
    }

    let observations = read_vector_blocks(&args.obs)?;
    for (k, per_ell) in observations.iter().enumerate() {
        if per_ell.len() != arr.n_c {
            bail!("block {k} has {} subcarriers, config says N_c={}", per_ell.len(), arr.n_c);
        }
    }
    let t_tr = observations[0][0].len();
    let ruler = best_ruler_within(t_tr, arr.m - 1)?;
    let x = training_matrix(&ruler, arr.m)?;
    let noise_var = SimConfig::noise_var_at(sim.snr_db);

    let estimates: Vec<Vec<CVec>> = match args.method {
        MethodArg::Lmmse => {
            let weights = lmmse_weights(&x, &ident.reconstructed, noise_var)?;
            observations
                .iter()
                .map(|blk| blk.iter().zip(&weights).map(|(phi, w)| w * phi).collect())
                .collect()
        }
        MethodArg::LmmseLr => {
            let dict = Dictionary::uniform(sim.grid(), sim.angle_range, &arr)?;
            let bases: Vec<_> = (0..arr.n_c)
                .map(|ell| dict.squinted_support(&ident.support, ell, &arr))
                .collect();
            observations
                .iter()
                .map(|blk| {
                    lmmse_estimate_lowrank(blk, &x, &bases, &ident.gains, noise_var)
                        .map(|e| e.per_ell)
                })
                .collect::<covmimo::Result<_>>()?
        }
        MethodArg::Dg => {
            let dict = Dictionary::uniform(sim.grid(), sim.angle_range, &arr)?;
            let opts = DelayOpts { grid_size: args.delay_grid, ..DelayOpts::default() };
            let (_, ests) =
                dg_estimate(&observations, &ident, &x, &dict, &arr, noise_var, &opts)?;
            ests.into_iter().map(|e| e.per_ell).collect()
        }
    };

    let method = match args.method {
        MethodArg::Lmmse => "lmmse",
        MethodArg::LmmseLr => "lmmse-lr",
        MethodArg::Dg => "dg",
    };
    write_vector_blocks(&args.out, method, &estimates)?;

    if let Some(truth_path) = &args.truth {
        let truth = read_vector_blocks(truth_path)?;
        if truth.len() != estimates.len() || truth[0].len() != arr.n_c {
            bail!("truth file does not match the observation blocks");
        }
        let flat_est: Vec<CVec> = estimates.iter().flatten().cloned().collect();
        let flat_truth: Vec<CVec> = truth.iter().flatten().cloned().collect();
        let overall = efficiency(&flat_est, &flat_truth)?;
        if let Some(eta_path) = &args.eta_out {
            let mut csv = String::from("l,eta\n");
            for ell in 0..arr.n_c {
                let est_l: Vec<CVec> =
                    estimates.iter().map(|blk| blk[ell].clone()).collect();
                let truth_l: Vec<CVec> = truth.iter().map(|blk| blk[ell].clone()).collect();
                csv.push_str(&format!("{ell},{}\n", efficiency(&est_l, &truth_l)?));
            }
            fs::write(eta_path, csv)
                .with_context(|| format!("writing {}", eta_path.display()))?;
        }
        eprintln!("{method}: eta {overall:.4} over {} blocks", estimates.len());
    } else if args.eta_out.is_some() {
        bail!("--eta-out needs --truth");
    } else {
        eprintln!("{method}: wrote {} blocks", estimates.len());
    }
    Ok(())
}

// ----------------------------------------------------------- experiment ----

#[derive(Args)]
struct ExperimentArgs {
    /// Experiment preset name
    #[arg(long, value_name = "NAME")]
    preset: String,
    /// Scenario scale
    #[arg(long, value_enum, default_value_t = ScaleArg::Desk)]
    scale: ScaleArg,
    /// Results CSV path
    #[arg(long, value_name = "FILE")]
    out: PathBuf,
    /// Directory for SVG plots (skipped when omitted)
    #[arg(long, value_name = "DIR")]
    plots: Option<PathBuf>,
    /// Base seed for the trial streams
    #[arg(long, default_value_t = 42)]
    seed: u64,
    /// Rayon worker threads (library default when omitted)
    #[arg(long, value_name = "N")]
    threads: Option<usize>,
    /// Flat JSON overriding any subset of the scenario keys
    #[arg(long, value_name = "FILE")]
    config: Option<PathBuf>,
    /// Override the trial count
    #[arg(long, value_name = "N")]
    trials: Option<usize>,
    /// Override the training length
    #[arg(long, value_name = "T")]
    t_tr: Option<usize>,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum ScaleArg {
    Desk,
    Paper,
}

/// Merge a flat JSON override into the preset's scenario config. Unknown
/// keys are rejected rather than silently ignored.
fn apply_override(sim: &SimConfig, path: &Path) -> Result<SimConfig> {
    let text =
        fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    let patch: serde_json::Value = serde_json::from_str(&text).context("override JSON")?;
    let serde_json::Value::Object(patch) = patch else {
        bail!("{}: override must be a JSON object", path.display());
    };
    let mut base = match serde_json::to_value(sim)? {
        serde_json::Value::Object(map) => map,
        _ => unreachable!("flat config serializes to an object"),
    };
    for (key, value) in patch {
        if !base.contains_key(&key) {
            let known: Vec<&String> = base.keys().collect();
            bail!("unknown config key {key:?}; known keys: {known:?}");
        }
        base.insert(key, value);
    }
    Ok(serde_json::from_value(serde_json::Value::Object(base))
        .context("merged config does not parse")?)
}

fn cmd_experiment(args: ExperimentArgs) -> Result<ExitCode> {
    if let Some(n) = args.threads {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .context("rayon thread pool")?;
    }
    let scale = match args.scale {
        ScaleArg::Desk => Scale::Desk,
        ScaleArg::Paper => Scale::Paper,
    };
    let mut cfg = preset(&args.preset, scale)
        .with_context(|| format!("presets: {}", preset_names().join(", ")))?;
    cfg.seed = args.seed;
    if let Some(path) = &args.config {
        cfg.sim = apply_override(&cfg.sim, path)?;
    }
    if let Some(trials) = args.trials {
        cfg.trials = trials;
    }
    if let Some(t_tr) = args.t_tr {
        cfg.t_tr = t_tr;
    }
    cfg.out_csv = Some(args.out.clone());
    cfg.plot_dir = args.plots.clone();
    cfg.validate()?;

    let RunOutcome { rows, failures } = covmimo::harness::run_experiment(&cfg)?;
    let written = emit(&rows, EmitFormat::Csv, &args.out)?;
    let mut plot_files = Vec::new();
    if let Some(dir) = &args.plots {
        plot_files = emit(&rows, EmitFormat::Svg, dir)?;
    }
    eprintln!(
        "{}: {} rows -> {}{}",
        cfg.id,
        rows.len(),
        written[0].display(),
        if plot_files.is_empty() {
            String::new()
        } else {
            format!(", {} plots", plot_files.len())
        }
    );

    if failures.is_empty() {
        Ok(ExitCode::SUCCESS)
    } else {
        let total: usize = failures.iter().map(|f| f.count).sum();
        for f in &failures {
            eprintln!(
                "failed: {} at {} dB K={} ({} trials): {}",
                f.algo, f.snr_db, f.k, f.count, f.first_error
            );
        }
        eprintln!("{total} trial evaluations failed");
        Ok(ExitCode::FAILURE)
    }
}
