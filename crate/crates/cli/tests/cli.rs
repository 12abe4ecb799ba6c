//! End-to-end checks of the covmimo binary: every subcommand runs against
//! files on disk, exactly as a user would drive it.

use std::fs;
use std::path::PathBuf;
use std::process::{Command, Output};

use covmimo::channel::{
    channel_covariance, observation_covariance, observe, synth_channel,
};
use covmimo::harness::{SimConfig, CSV_HEADER};
use covmimo::rulers::{best_ruler_within, training_matrix};
use covmimo::{ChannelParams, Dictionary};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_covmimo"))
}

fn workdir(tag: &str) -> PathBuf {
    let dir = std::env::temp_dir().join(format!("covmimo-cli-{tag}-{}", std::process::id()));
    let _ = fs::remove_dir_all(&dir);
    fs::create_dir_all(&dir).unwrap();
    dir
}

fn stderr_of(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

/// Small sin-injective scenario so grid supports are unambiguous.
fn tiny_sim() -> SimConfig {
    SimConfig {
        m: 16,
        n_c: 4,
        n: 4,
        l: 2,
        g: Some(24),
        angle_range: (-std::f64::consts::FRAC_PI_3, std::f64::consts::FRAC_PI_3),
        snr_db: 40.0,
        ..SimConfig::desk()
    }
}

struct Fixture {
    dir: PathBuf,
    support: Vec<usize>,
}

impl Fixture {
    fn path(&self, name: &str) -> PathBuf {
        self.dir.join(name)
    }
}

/// Plant two on-grid paths, write the config, the exact observation
/// covariance, and six observation blocks with their true channels.
fn fixture(tag: &str) -> Fixture {
    let sim = tiny_sim();
    let arr = sim.array();
    let dict = Dictionary::uniform(sim.grid(), sim.angle_range, &arr).unwrap();
    let support = vec![5, 17];
    let aods: Vec<f64> = support.iter().map(|&i| dict.angles()[i]).collect();
    let t_s = 1.0 / arr.f_s;
    let params = ChannelParams::new(aods, vec![0.5, 0.5], vec![0.0, 2.0 * t_s]).unwrap();
    let c_h = channel_covariance(&params, &arr);
    let ruler = best_ruler_within(8, arr.m - 1).unwrap();
    let x = training_matrix(&ruler, arr.m).unwrap();
    let noise_var = SimConfig::noise_var_at(sim.snr_db);
    let c_phi = observation_covariance(&c_h, &x, noise_var).unwrap();

    let dir = workdir(tag);
    fs::write(dir.join("cfg.json"), sim.to_json()).unwrap();
    fs::write(dir.join("cov.csv"), c_phi.to_csv()).unwrap();

    let mut rng = ChaCha8Rng::seed_from_u64(0x5eed);
    let mut obs_csv = String::from("block,l,index,re,im\n");
    let mut truth_csv = String::from("block,l,index,re,im\n");
    for k in 0..6 {
        let real = synth_channel(&params, &arr, &mut rng);
        let phi = observe(&x, &real, noise_var, &mut rng).unwrap();
        for (ell, v) in phi.iter().enumerate() {
            for (i, c) in v.iter().enumerate() {
                obs_csv.push_str(&format!("{k},{ell},{i},{},{}\n", c.re, c.im));
            }
        }
        for (ell, v) in real.freq_response.iter().enumerate() {
            for (i, c) in v.iter().enumerate() {
                truth_csv.push_str(&format!("{k},{ell},{i},{},{}\n", c.re, c.im));
            }
        }
    }
    fs::write(dir.join("obs.csv"), obs_csv).unwrap();
    fs::write(dir.join("truth.csv"), truth_csv).unwrap();
    Fixture { dir, support }
}

fn identify(fx: &Fixture, algo: &str, extra: &[&str]) -> Output {
    let out_name = format!("ident-{algo}.json");
    bin()
        .args([
            "identify",
            "--config",
            fx.path("cfg.json").to_str().unwrap(),
            "--cov",
            fx.path("cov.csv").to_str().unwrap(),
            "--algo",
            algo,
            "--out",
            fx.path(&out_name).to_str().unwrap(),
        ])
        .args(extra)
        .output()
        .unwrap()
}

fn ident_doc(fx: &Fixture, algo: &str) -> serde_json::Value {
    let text = fs::read_to_string(fx.path(&format!("ident-{algo}.json"))).unwrap();
    serde_json::from_str(&text).unwrap()
}

#[test]
fn ruler_emits_the_documented_json() {
    let out = bin()
        .args(["ruler", "--marks", "16", "--check-complete", "--emit", "json"])
        .output()
        .unwrap();
    assert!(out.status.success(), "{}", stderr_of(&out));
    let doc: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    let obj = doc.as_object().unwrap();
    let mut keys: Vec<&str> = obj.keys().map(|k| k.as_str()).collect();
    keys.sort_unstable();
    assert_eq!(keys, ["complete_up_to", "length", "marks"]);
    assert_eq!(obj["marks"].as_array().unwrap().len(), 16);
    assert_eq!(obj["length"], obj["complete_up_to"]);

    // Wichmann lengths follow the closed form.
    let out = bin().args(["ruler", "--wichmann", "2,3", "--emit", "json"]).output().unwrap();
    assert!(out.status.success());
    let doc: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(doc["length"], 68);
    assert_eq!(doc["marks"].as_array().unwrap().len(), 14);

    // Text mode stays line-oriented.
    let out = bin().args(["ruler", "--coprime", "3,5"]).output().unwrap();
    assert!(out.status.success());
    let text = String::from_utf8(out.stdout).unwrap();
    assert!(text.contains("complete_up_to:"), "{text}");

    // A non-coprime pair is an error, not a silent fallback.
    let out = bin().args(["ruler", "--coprime", "4,6"]).output().unwrap();
    assert!(!out.status.success());
    assert!(stderr_of(&out).contains("coprime"));
}

#[test]
fn identify_recovers_the_planted_support() {
    let fx = fixture("identify");
    for (algo, extra) in [
        ("music", vec!["--mirror"]),
        ("ss", vec!["--mirror"]),
        ("wcomp", vec!["--paths", "2"]),
        ("ml", vec!["--paths", "2"]),
    ] {
        let out = identify(&fx, algo, &extra);
        assert!(out.status.success(), "{algo}: {}", stderr_of(&out));
        let doc = ident_doc(&fx, algo);
        let support: Vec<usize> = doc["support"]
            .as_array()
            .unwrap()
            .iter()
            .map(|v| v.as_u64().unwrap() as usize)
            .collect();
        assert_eq!(support, fx.support, "{algo} missed the planted support");
        assert_eq!(doc["gains"].as_array().unwrap().len(), 4, "{algo}: one gain row per subcarrier");
        assert!(doc["reconstructed_csv"].as_str().unwrap().starts_with("l,row,col,re,im"));
    }

    // Asking for as many paths as training dimensions breaks the subspace
    // split and must fail loudly.
    let out = identify(&fx, "music", &["--paths", "8"]);
    assert!(!out.status.success());
}

#[test]
fn estimate_scores_high_efficiency_on_the_fixture() {
    let fx = fixture("estimate");
    let out = identify(&fx, "music", &["--mirror"]);
    assert!(out.status.success(), "{}", stderr_of(&out));

    let run = |method: &str, extra: &[&str]| -> (Output, PathBuf) {
        let est = fx.path(&format!("est-{method}.csv"));
        let eta = fx.path(&format!("eta-{method}.csv"));
        let out = bin()
            .args([
                "estimate",
                "--config",
                fx.path("cfg.json").to_str().unwrap(),
                "--obs",
                fx.path("obs.csv").to_str().unwrap(),
                "--ident",
                fx.path("ident-music.json").to_str().unwrap(),
                "--method",
                method,
                "--truth",
                fx.path("truth.csv").to_str().unwrap(),
                "--out",
                est.to_str().unwrap(),
                "--eta-out",
                eta.to_str().unwrap(),
            ])
            .args(extra)
            .output()
            .unwrap();
        (out, eta)
    };

    let mut etas = std::collections::HashMap::new();
    for (method, extra) in
        [("lmmse", vec![]), ("lmmse-lr", vec![]), ("dg", vec!["--delay-grid", "100"])]
    {
        let (out, eta_path) = run(method, &extra);
        assert!(out.status.success(), "{method}: {}", stderr_of(&out));
        let eta_csv = fs::read_to_string(&eta_path).unwrap();
        let per_ell: Vec<f64> = eta_csv
            .lines()
            .skip(1)
            .map(|l| l.split(',').nth(1).unwrap().parse().unwrap())
            .collect();
        assert_eq!(per_ell.len(), 4, "{method}: one eta per subcarrier");
        let mean = per_ell.iter().sum::<f64>() / per_ell.len() as f64;
        assert!(mean > 0.9, "{method}: eta {per_ell:?}");
        etas.insert(method.to_string(), mean);

        let est_csv = fs::read_to_string(fx.path(&format!("est-{method}.csv"))).unwrap();
        assert!(est_csv.starts_with("method,block,l,index,re,im"));
        // 6 blocks x 4 subcarriers x 16 antennas plus the header
        assert_eq!(est_csv.lines().count(), 1 + 6 * 4 * 16);
    }
    // The low-rank form is the same estimator factored differently.
    assert!((etas["lmmse"] - etas["lmmse-lr"]).abs() < 0.05);

    // --eta-out without --truth cannot be scored.
    let out = bin()
        .args([
            "estimate",
            "--config",
            fx.path("cfg.json").to_str().unwrap(),
            "--obs",
            fx.path("obs.csv").to_str().unwrap(),
            "--ident",
            fx.path("ident-music.json").to_str().unwrap(),
            "--method",
            "lmmse",
            "--out",
            fx.path("est-x.csv").to_str().unwrap(),
            "--eta-out",
            fx.path("eta-x.csv").to_str().unwrap(),
        ])
        .output()
        .unwrap();
    assert!(!out.status.success());
    assert!(stderr_of(&out).contains("--truth"));
}

#[test]
fn experiment_is_deterministic_across_thread_counts() {
    let dir = workdir("experiment");
    fs::write(dir.join("tiny.json"), tiny_sim().to_json()).unwrap();

    let run = |out_name: &str, threads: &str| -> Output {
        bin()
            .args([
                "experiment",
                "--preset",
                "fig5",
                "--scale",
                "desk",
                "--config",
                dir.join("tiny.json").to_str().unwrap(),
                "--trials",
                "2",
                "--t-tr",
                "8",
                "--seed",
                "9",
                "--out",
                dir.join(out_name).to_str().unwrap(),
                "--plots",
                dir.join("plots").to_str().unwrap(),
                "--threads",
                threads,
            ])
            .output()
            .unwrap()
    };

    let out = run("a.csv", "2");
    assert!(out.status.success(), "{}", stderr_of(&out));
    let a = fs::read_to_string(dir.join("a.csv")).unwrap();
    assert!(a.starts_with(CSV_HEADER), "{}", &a[..a.len().min(120)]);
    // 4 algorithms x 2 SNRs x 5 K points
    assert_eq!(a.lines().count(), 1 + 4 * 2 * 5);

    let svgs: Vec<_> = fs::read_dir(dir.join("plots"))
        .unwrap()
        .map(|e| e.unwrap().file_name().into_string().unwrap())
        .collect();
    assert_eq!(svgs.len(), 2, "one NMSE-vs-K plot per SNR: {svgs:?}");
    assert!(svgs.iter().all(|name| name.starts_with("fig5_nmse_snr") && name.ends_with(".svg")));

    let out = run("b.csv", "1");
    assert!(out.status.success(), "{}", stderr_of(&out));
    let b = fs::read_to_string(dir.join("b.csv")).unwrap();
    assert_eq!(a, b, "results must not depend on the thread count");
}

#[test]
fn experiment_rejects_unknown_override_keys_and_reports_failures() {
    let dir = workdir("experiment-err");
    fs::write(dir.join("bad.json"), r#"{"antennas": 32}"#).unwrap();
    let out = bin()
        .args([
            "experiment",
            "--preset",
            "fig5",
            "--config",
            dir.join("bad.json").to_str().unwrap(),
            "--out",
            dir.join("r.csv").to_str().unwrap(),
        ])
        .output()
        .unwrap();
    assert!(!out.status.success());
    assert!(stderr_of(&out).contains("unknown config key"));

    // Eight paths with eight training dimensions: music fails every trial,
    // the run completes for the other algorithms, and the exit code says so.
    let mut broken = tiny_sim();
    broken.l = 8;
    fs::write(dir.join("broken.json"), broken.to_json()).unwrap();
    let out = bin()
        .args([
            "experiment",
            "--preset",
            "fig5",
            "--config",
            dir.join("broken.json").to_str().unwrap(),
            "--trials",
            "1",
            "--t-tr",
            "8",
            "--out",
            dir.join("r.csv").to_str().unwrap(),
        ])
        .output()
        .unwrap();
    assert!(!out.status.success());
    let errs = stderr_of(&out);
    assert!(errs.contains("music"), "{errs}");
    assert!(dir.join("r.csv").exists(), "partial results are still written");
}
