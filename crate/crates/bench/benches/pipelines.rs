//! Wall-clock profiles of the identification and estimation pipelines on a
//! mid-size scenario, plus the ruler search that seeds every run.

use criterion::{criterion_group, criterion_main, Criterion};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use covmimo::channel::{observe, sample_covariance, synth_channel};
use covmimo::chest::{dg_estimate, lmmse_estimate, DelayOpts};
use covmimo::harness::SimConfig;
use covmimo::ident::{
    measurement_matrices, ml_identify_mm, music_identify, ss_music_identify, wcomp_identify,
};
use covmimo::rulers::{best_ruler_within, training_matrix};
use covmimo::{ChannelParams, CovarianceSet, Dictionary, GainProfile, SmoothingMode};

struct Fixture {
    arr: covmimo::ArrayConfig,
    dict: Dictionary,
    ruler: covmimo::Ruler,
    x: covmimo::TrainingMatrix,
    psi: covmimo::ident::MeasurementMatrices,
    samples: CovarianceSet,
    ident: covmimo::IdentResult,
    observations: Vec<Vec<covmimo::CVec>>,
    noise_var: f64,
    l: usize,
}

fn fixture() -> Fixture {
    let sim = SimConfig {
        m: 32,
        n_c: 4,
        n: 4,
        l: 4,
        g: Some(64),
        snr_db: 10.0,
        ..SimConfig::desk()
    };
    let arr = sim.array();
    let dict = Dictionary::uniform(sim.grid(), sim.angle_range, &arr).unwrap();
    let ruler = best_ruler_within(12, arr.m - 1).unwrap();
    let x = training_matrix(&ruler, arr.m).unwrap();
    let psi = measurement_matrices(&x, &dict, &arr).unwrap();
    let noise_var = SimConfig::noise_var_at(sim.snr_db);

    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let params = ChannelParams::random(sim.l, sim.angle_range, GainProfile::Equal, &arr, &mut rng);
    let observations: Vec<Vec<covmimo::CVec>> = (0..20)
        .map(|_| {
            let real = synth_channel(&params, &arr, &mut rng);
            observe(&x, &real, noise_var, &mut rng).unwrap()
        })
        .collect();
    let samples = sample_covariance(&observations).unwrap();
    let ident = ss_music_identify(
        &samples,
        &ruler,
        &dict,
        sim.l,
        noise_var,
        SmoothingMode::AverageRepeats,
        None,
        true,
        &arr,
    )
    .unwrap();

    let l = sim.l;
    Fixture { arr, dict, ruler, x, psi, samples, ident, observations, noise_var, l }
}

fn bench_rulers(c: &mut Criterion) {
    c.bench_function("ruler/best_within_T16_M64", |b| {
        b.iter(|| best_ruler_within(16, 63).unwrap())
    });
}

fn bench_identify(c: &mut Criterion) {
    let fx = fixture();
    let mut group = c.benchmark_group("identify");
    group.sample_size(20);
    group.bench_function("wcomp", |b| {
        b.iter(|| {
            wcomp_identify(
                std::slice::from_ref(&fx.samples),
                std::slice::from_ref(&fx.psi),
                fx.l,
                &fx.dict,
                &fx.arr,
            )
            .unwrap()
        })
    });
    group.bench_function("music", |b| {
        b.iter(|| {
            music_identify(&fx.samples, &fx.psi, fx.l, fx.noise_var, None, true, &fx.dict, &fx.arr)
                .unwrap()
        })
    });
    group.bench_function("ss", |b| {
        b.iter(|| {
            ss_music_identify(
                &fx.samples,
                &fx.ruler,
                &fx.dict,
                fx.l,
                fx.noise_var,
                SmoothingMode::AverageRepeats,
                None,
                true,
                &fx.arr,
            )
            .unwrap()
        })
    });
    group.bench_function("ml", |b| {
        b.iter(|| {
            ml_identify_mm(&fx.samples, &fx.psi, fx.l, fx.noise_var, 120, 1e-7, &fx.dict, &fx.arr)
                .unwrap()
        })
    });
    group.finish();
}

fn bench_estimate(c: &mut Criterion) {
    let fx = fixture();
    let mut group = c.benchmark_group("estimate");
    group.sample_size(20);
    group.bench_function("lmmse", |b| {
        b.iter(|| {
            lmmse_estimate(&fx.observations[0], &fx.x, &fx.ident.reconstructed, fx.noise_var)
                .unwrap()
        })
    });
    group.bench_function("dg", |b| {
        b.iter(|| {
            dg_estimate(
                &fx.observations,
                &fx.ident,
                &fx.x,
                &fx.dict,
                &fx.arr,
                fx.noise_var,
                &DelayOpts::default(),
            )
            .unwrap()
        })
    });
    group.finish();
}

criterion_group!(benches, bench_rulers, bench_identify, bench_estimate);
criterion_main!(benches);
