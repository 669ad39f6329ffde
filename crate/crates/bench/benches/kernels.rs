use std::f64::consts::PI;
use std::hint::black_box;

use criterion::{criterion_group, criterion_main, Criterion};
use qfp_core::biphoton::{self, CombGeometry, MEASUREMENT_WINDOW};
use qfp_core::calib::{align_scan, DitherConfig, ScanGrid};
use qfp_core::eom::{eom_operator, RfDrive};
use qfp_core::lattice::default_half_width;
use qfp_core::qfp::{alpha_sweep, beamsplitter_config, compose_qfp, FIFTY_FIFTY_DEPTH};
use qfp_core::rings::PumpFilter;
use qfp_core::tomo::{self, canonical_settings, CountMode, MleOptions};
use qfp_core::{make_lattice, RingParams, WsUnitConfig};

const DNU: f64 = 13.25e9;

fn processor(c: &mut Criterion) {
    let l = make_lattice(193.7e12, DNU, default_half_width(FIFTY_FIFTY_DEPTH)).unwrap();
    c.bench_function("eom_operator", |b| {
        b.iter(|| eom_operator(&RfDrive::new(black_box(FIFTY_FIFTY_DEPTH), 0.3, DNU), &l).unwrap())
    });
    let cfg = beamsplitter_config(1.3 * PI, FIFTY_FIFTY_DEPTH, l, [0, 1]).unwrap();
    c.bench_function("compose_qfp", |b| {
        b.iter(|| compose_qfp(black_box(&cfg)).unwrap())
    });
    let alphas: Vec<f64> = (0..33).map(|i| PI + PI * i as f64 / 32.0).collect();
    c.bench_function("alpha_sweep_33", |b| {
        b.iter(|| alpha_sweep(black_box(&alphas), FIFTY_FIFTY_DEPTH, l, [0, 1]).unwrap())
    });
}

fn walk(c: &mut Criterion) {
    let s = biphoton::comb_state(6, &PumpFilter::reference(), &CombGeometry::reference()).unwrap();
    c.bench_function("walk_jsi", |b| {
        b.iter(|| biphoton::simulate_jsi(black_box(&s), 0.8, MEASUREMENT_WINDOW).unwrap())
    });
}

fn tomography(c: &mut Criterion) {
    let comb =
        biphoton::comb_state(6, &PumpFilter::reference(), &CombGeometry::reference()).unwrap();
    let rho = tomo::carve_bell_state(&comb, 13.5).unwrap();
    let recs = tomo::simulate_counts(
        &rho,
        &canonical_settings(),
        5e3,
        55.0,
        0.8169,
        CountMode::Sampled { seed: 1 },
    )
    .unwrap();
    let opts = MleOptions {
        random_restarts: 0,
        ..MleOptions::default()
    };
    c.bench_function("mle_reconstruct", |b| {
        b.iter(|| tomo::mle_reconstruct(black_box(&recs), &opts).unwrap())
    });
}

fn calibration(c: &mut Criterion) {
    let wl = 1547e-9;
    let u = WsUnitConfig::phase(RingParams::reference_waveshaper(wl), wl, 0.0);
    let lw = u.linewidth();
    let grid = ScanGrid::square((0.0, 0.0), 2.0 * lw, 4);
    let d = DitherConfig::reference(lw);
    c.bench_function("align_scan_9x9", |b| {
        b.iter(|| align_scan(black_box(&u), &grid, &d).unwrap())
    });
}

criterion_group! {
    name = benches;
    config = Criterion::default().sample_size(10);
    targets = processor, walk, tomography, calibration
}
criterion_main!(benches);
