use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion, Throughput};
use std::hint::black_box;

use cresmd::imaging::textures::texture;
use cresmd::imaging::{apply_blur, jpeg_roundtrip};
use cresmd::model::{forward, ArchConfig, ForwardOptions};
use cresmd::sampler::{make_batch, BetaParams, SamplePlan};
use cresmd::train::batch_gradients;
use cresmd::{DegradationSpace, Model, Tape, Tensor};

fn conv(c: &mut Criterion) {
    let mut g = c.benchmark_group("conv2d_3x3");
    for &(ch, side) in &[(32usize, 24usize), (32, 48), (64, 64)] {
        let x = Tensor::<f32>::from_fn([ch, side, side], |i| (i % 13) as f32 * 0.1);
        let w = Tensor::<f32>::from_fn([ch, ch, 3, 3], |i| (i % 7) as f32 * 0.01 - 0.03);
        g.throughput(Throughput::Elements((2 * ch * ch * 9 * side * side) as u64));
        g.bench_with_input(BenchmarkId::new("forward", format!("{ch}c_{side}px")), &(), |b, _| {
            b.iter(|| {
                let mut tape = Tape::inference();
                let xv = tape.leaf(&x, false);
                let wv = tape.leaf(&w, false);
                black_box(tape.conv2d(xv, wv, None, 1, 1).unwrap());
            })
        });
        g.bench_with_input(BenchmarkId::new("forward_backward", format!("{ch}c_{side}px")), &(), |b, _| {
            b.iter(|| {
                let mut tape = Tape::new();
                let xv = tape.leaf(&x, true);
                let wv = tape.leaf(&w, true);
                let y = tape.conv2d(xv, wv, None, 1, 1).unwrap();
                let s = tape.sum(y).unwrap();
                tape.backward(s).unwrap();
                black_box(tape.grad(wv).map(|g| g[0]));
            })
        });
    }
    g.finish();
}

fn model(c: &mut Criterion) {
    let m = Model::<f32>::new(ArchConfig::desk(), DegradationSpace::desk_2d(), 0).unwrap();
    let mut g = c.benchmark_group("desk_model");
    g.sample_size(10);
    for side in [48usize, 256] {
        let img = texture(1, side, side);
        g.bench_function(format!("restore_{side}px"), |b| {
            b.iter(|| black_box(m.restore(&img, &[0.5, 0.5], ForwardOptions::default()).unwrap()))
        });
    }
    let x = texture(2, 48, 48).to_tensor::<f32>();
    g.bench_function("forward_backward_48px", |b| {
        b.iter(|| {
            let mut tape = Tape::new();
            let w = m.bind(&mut tape, true);
            let xv = tape.leaf(&x, false);
            let z = tape.leaf_owned(Tensor::from_fn([2], |_| 0.5), false);
            let y = forward(&mut tape, &m.arch, &w, xv, Some(z), ForwardOptions::default()).unwrap();
            let t = tape.leaf(&x, false);
            let l = tape.l1_loss(y, t).unwrap();
            tape.backward(l).unwrap();
        })
    });
    let data: Vec<_> = (0..8).map(|i| texture(i, 96, 96)).collect();
    let space = DegradationSpace::desk_2d();
    let plan = SamplePlan::new(2, BetaParams::mild());
    let batch = make_batch(&data, &plan, &space, 48, 8, 0).unwrap();
    g.bench_function("train_step_batch8", |b| b.iter(|| black_box(batch_gradients(&m, &batch).unwrap().0)));
    g.finish();
}

fn degradations(c: &mut Criterion) {
    let img = texture(3, 256, 256);
    let mut g = c.benchmark_group("degradation_256px");
    g.bench_function("blur_r2", |b| b.iter(|| black_box(apply_blur(&img, 2.0).unwrap())));
    g.bench_function("jpeg_q30", |b| b.iter(|| black_box(jpeg_roundtrip(&img, Some(30)).unwrap())));
    g.finish();
}

criterion_group!(benches, conv, model, degradations);
criterion_main!(benches);
