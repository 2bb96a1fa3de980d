//! Benchmarks of the hot paths: stimulus synthesis, spectral estimation,
//! scoring with its bootstrap, and the closed-loop simulation.

use criterion::{criterion_group, criterion_main, Criterion};
use num_complex::Complex64;
use swaybench_core::{
    estimate_frf, extract_peaks, fit_reference, generate_prts, passthrough_recording,
    plan_for_recording, run_trial, score_with, weights_from_input, BootstrapConfig, Frf,
    PrtsConfig, ReferenceStats, TrialConfig, WeightVector,
};

fn synthetic_reference() -> (ReferenceStats, Frf) {
    let recording = passthrough_recording(&TrialConfig::default()).unwrap();
    let plan = plan_for_recording(&recording).unwrap();
    let u = extract_peaks(&recording.stimulus_deg, &plan, 2).unwrap();
    let weights: WeightVector = weights_from_input(&u, &plan).unwrap();
    let frfs: Vec<Frf> = (0..30)
        .map(|i| {
            let h = (0..plan.n_bands())
                .map(|k| {
                    let a = (7.0 * ((i + 1) * (k + 1)) as f64).sin();
                    let b = (5.0 * ((i + 1) * (k + 1)) as f64).cos();
                    Complex64::new(1.0 + 0.05 * a, 0.05 * b)
                })
                .collect();
            Frf {
                plan: plan.clone(),
                h,
            }
        })
        .collect();
    let probe = frfs[0].clone();
    (fit_reference(&frfs, &weights).unwrap(), probe)
}

fn bench_stimulus(c: &mut Criterion) {
    let config = PrtsConfig::default();
    c.bench_function("generate_prts_two_periods", |b| {
        b.iter(|| generate_prts(&config).unwrap())
    });
}

fn bench_spectral(c: &mut Criterion) {
    let recording = passthrough_recording(&TrialConfig::default()).unwrap();
    let plan = plan_for_recording(&recording).unwrap();
    c.bench_function("extract_peaks_and_estimate_frf", |b| {
        b.iter(|| {
            let u = extract_peaks(&recording.stimulus_deg, &plan, 2).unwrap();
            let y = extract_peaks(&recording.com_sway_deg, &plan, 2).unwrap();
            estimate_frf(&u, &y, &plan).unwrap()
        })
    });
}

fn bench_scoring(c: &mut Criterion) {
    let (reference, probe) = synthetic_reference();
    let bootstrap = BootstrapConfig::default();
    c.bench_function("score_with_bootstrap_2000", |b| {
        b.iter(|| score_with(&probe, &reference, &bootstrap).unwrap())
    });
}

fn bench_simulation(c: &mut Criterion) {
    let mut config = TrialConfig::default();
    config.stimulus.n_periods = 1;
    config.warmup_periods = 0;
    let mut group = c.benchmark_group("simulation");
    group.sample_size(10);
    group.bench_function("run_trial_one_period", |b| {
        b.iter(|| run_trial(&config).unwrap())
    });
    group.finish();
}

criterion_group!(
    benches,
    bench_stimulus,
    bench_spectral,
    bench_scoring,
    bench_simulation
);
criterion_main!(benches);
