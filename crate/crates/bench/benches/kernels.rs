use std::hint::black_box;

use criterion::{criterion_group, criterion_main, Criterion};

use stereocal::cost::{ReconstructionCost, ReprojectionCost};
use stereocal::essential::estimate_essential;
use stereocal::evaluation::{fcp, LabeledScores};
use stereocal::protocol::{calibrate_all, CalibrationSettings};
use stereocal::triangulation::{ray_from_pixel, triangulate, CameraPose};
use stereocal::{minimize, MonteCarloConfig};
use stereocal_bench::fixture;

fn bench_triangulate(c: &mut Criterion) {
    let ds = fixture(0.3, 25);
    let pose = ds.truth.as_ref().unwrap().angles.to_extrinsics();
    let pair = ds.images[0].a;
    c.bench_function("triangulate", |b| {
        b.iter(|| {
            let r1 = ray_from_pixel(&ds.k1, CameraPose::Primary, black_box(&pair.q1));
            let r2 = ray_from_pixel(&ds.k2, CameraPose::Secondary(&pose), black_box(&pair.q2));
            triangulate(&r1, &r2).unwrap()
        })
    });
}

fn bench_costs(c: &mut Criterion) {
    let ds = fixture(0.3, 20);
    let angles = ds.truth.as_ref().unwrap().angles;
    let idx = ds.all_indices();
    let c2 = ds.correspondences_2d(&idx).unwrap();
    let c3 = ds.correspondences_3d(&idx).unwrap();
    let reproj = ReprojectionCost::new(&c2, ds.k1, ds.k2);
    let recon = ReconstructionCost::new(&c3, ds.k1, ds.k2);
    c.bench_function("cost_reprojection_40_pairs", |b| {
        b.iter(|| stereocal::CostFunction::cost(&reproj, black_box(&angles)))
    });
    c.bench_function("cost_reconstruction_20_entries", |b| {
        b.iter(|| stereocal::CostFunction::cost(&recon, black_box(&angles)))
    });
}

fn bench_calibration(c: &mut Criterion) {
    let ds = fixture(0.3, 20);
    let idx = ds.all_indices();
    let c2 = ds.correspondences_2d(&idx).unwrap();
    let truth = ds.truth.as_ref().unwrap().angles;
    let start = truth.with_angles(truth.angles().map(|a| a + 0.003));
    let reproj = ReprojectionCost::new(&c2, ds.k1, ds.k2);
    let mut group = c.benchmark_group("calibration");
    group.sample_size(20);
    group.bench_function("estimate_essential_40_pairs", |b| {
        b.iter(|| estimate_essential(black_box(&c2), &ds.k1, &ds.k2).unwrap())
    });
    group.bench_function("minimize_reprojection", |b| {
        b.iter(|| minimize(black_box(&start), &reproj, &MonteCarloConfig::default()).unwrap())
    });
    group.bench_function("calibrate_all_20_images", |b| {
        b.iter(|| calibrate_all(&ds, black_box(&idx), 0, &CalibrationSettings::default()).unwrap())
    });
    group.finish();
}

fn bench_fcp(c: &mut Criterion) {
    let scores = LabeledScores {
        correct: (0..1000).map(|i| (i as f64 * 0.37).sin()).collect(),
        wrong: (0..9000).map(|i| 1.5 + (i as f64 * 0.11).cos()).collect(),
    };
    c.bench_function("fcp_1000_vs_9000", |b| b.iter(|| fcp(black_box(&scores)).unwrap()));
}

criterion_group!(benches, bench_triangulate, bench_costs, bench_calibration, bench_fcp);
criterion_main!(benches);
