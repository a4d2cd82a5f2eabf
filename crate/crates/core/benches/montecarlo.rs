//! Sequential vs rayon-parallel Monte Carlo batches, plus the per-tick
//! filter and guidance kernels the batches are made of.

use std::hint::black_box;

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use nalgebra::Matrix3;
use sprayer_core::fusion::{self, GpsFix, ProcessNoise, StateEstimate};
use sprayer_core::geodesy::EnuCoord;
use sprayer_core::montecarlo::{montecarlo, Execution};
use sprayer_core::odometry::{Pose2D, WheelIncrement};
use sprayer_core::MissionConfig;

fn batch(c: &mut Criterion) {
    let mut cfg = MissionConfig::demo();
    cfg.max_duration_s = 30.0;
    let mut group = c.benchmark_group("montecarlo_demo_30s");
    group.sample_size(10);
    for runs in [8usize, 32] {
        group.bench_with_input(BenchmarkId::new("sequential", runs), &runs, |b, &n| {
            b.iter(|| montecarlo(black_box(&cfg), n, 1, Execution::Sequential, false).unwrap())
        });
        group.bench_with_input(BenchmarkId::new("parallel", runs), &runs, |b, &n| {
            b.iter(|| montecarlo(black_box(&cfg), n, 1, Execution::Parallel, false).unwrap())
        });
    }
    group.finish();
}

fn filter_tick(c: &mut Criterion) {
    let noise = ProcessNoise::WheelSlip {
        slip_std: 0.02,
        heading_jitter_std_rad: 0.0,
    };
    let inc = WheelIncrement::new(0.004, 0.0041, 0.5).unwrap();
    let fix = GpsFix {
        position: EnuCoord::planar(0.01, -0.02),
        noise_std_m: 0.045,
        timestamp_s: 0.0,
    };
    c.bench_function("ekf_predict_update", |b| {
        let s0 = StateEstimate::new(Pose2D::default(), Matrix3::identity() * 1e-3);
        b.iter(|| {
            let q = noise.covariance(&s0.mean, &inc);
            let s = fusion::predict(black_box(&s0), &inc, &q);
            fusion::update_gps(&s, black_box(&fix))
        })
    });
}

criterion_group!(benches, batch, filter_tick);
criterion_main!(benches);
