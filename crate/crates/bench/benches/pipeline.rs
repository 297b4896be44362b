use std::hint::black_box;

use criterion::{criterion_group, criterion_main, Criterion};

use qct_core::calibration::{fit_calibration, region_statistics, Statistic};
use qct_core::metrics::asd;
use qct_core::segmentation::{erode_labels, segment_classical, DetectorParams};
use qct_core::stats::mann_whitney_u;
use qct_core::synth::{ground_truth, render_ct, site_scanner, CaseSpec};
use qct_core::volume::phantom_densities;

fn bench(c: &mut Criterion) {
    let spec = CaseSpec::with_scanner(site_scanner("A").unwrap());
    let gt = ground_truth(&spec).unwrap();
    let ct = render_ct(&gt, &spec).unwrap();
    let params = DetectorParams::default();
    let pred = segment_classical(&ct, &params).unwrap();

    c.bench_function("render_ct", |b| b.iter(|| render_ct(black_box(&gt), &spec).unwrap()));
    c.bench_function("segment_classical", |b| {
        b.iter(|| segment_classical(black_box(&ct), &params).unwrap())
    });
    c.bench_function("erode_labels r=3", |b| b.iter(|| erode_labels(black_box(&pred), 3)));
    c.bench_function("asd", |b| b.iter(|| asd(black_box(&pred), &gt).unwrap()));
    c.bench_function("calibrate", |b| {
        b.iter(|| {
            let stats = region_statistics(black_box(&ct), &erode_labels(&pred, 3)).unwrap();
            fit_calibration(&stats, phantom_densities(), Statistic::Mean).unwrap()
        })
    });

    let xs: Vec<f64> = (0..20).map(|i| (i * 37 % 23) as f64 + 0.5).collect();
    let ys: Vec<f64> = (0..20).map(|i| (i * 11 % 29) as f64 + 0.25).collect();
    c.bench_function("mann_whitney_u 20x20", |b| {
        b.iter(|| mann_whitney_u(black_box(&xs), &ys).unwrap())
    });
    c.bench_function("mann_whitney_u 8x8 exact", |b| {
        b.iter(|| mann_whitney_u(black_box(&xs[..8]), &ys[..8]).unwrap())
    });
}

criterion_group!(benches, bench);
criterion_main!(benches);
