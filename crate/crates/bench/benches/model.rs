use criterion::{criterion_group, criterion_main, BatchSize, Criterion};
use rrnn_bench::approach_windows;
use rrnn_core::baselines::Ctrv;
use rrnn_core::neural::LossMode;
use rrnn_core::responsernn::{ModelConfig, ResponseRnn};
use rrnn_core::rollout::Predictor;
use rrnn_core::trajdata::SequenceWindow;
use std::hint::black_box;

fn responsernn(c: &mut Criterion) {
    let (windows, stats) = approach_windows(12, 12);
    let batch: Vec<&SequenceWindow> = windows.iter().take(8).collect();
    let mut group = c.benchmark_group("responsernn");
    group.sample_size(10);
    for width in [32, 128] {
        let cfg = ModelConfig::new(2, 12, 12, LossMode::Velocity).with_width(width);
        let model = ResponseRnn::new(cfg, stats, 0).unwrap();
        group.bench_function(format!("gradient_batch8_w{width}"), |b| b.iter(|| black_box(model.batch_loss_and_gradient(&batch).unwrap())));
        group.bench_function(format!("mean_rollout_w{width}"), |b| b.iter(|| black_box(model.predict_mean(batch[0]).unwrap())));
        let paths: Vec<_> = (0..4).map(|_| batch[0].robot_future().to_vec()).collect();
        group.bench_function(format!("whatif_4_candidates_w{width}"), |b| {
            b.iter_batched(|| paths.clone(), |p| black_box(model.simulate_whatif(batch[0], &p).unwrap()), BatchSize::SmallInput)
        });
    }
    group.finish();
}

fn ctrv(c: &mut Criterion) {
    let (windows, stats) = approach_windows(12, 12);
    let model = Ctrv::new(stats);
    c.bench_function("ctrv_window", |b| b.iter(|| black_box(model.predict(&windows[0]).unwrap())));
}

criterion_group!(benches, responsernn, ctrv);
criterion_main!(benches);
