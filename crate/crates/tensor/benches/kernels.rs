//! Sequential vs rayon-parallel execution of the hot kernels.
//!
//! With the default `parallel` feature both modes are measured; built with
//! `--no-default-features` the parallel entries fall back to the sequential
//! path and should time identically.

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use dda_tensor::kernels::{conv, warp};
use dda_tensor::{Exec, Tensor};
use std::hint::black_box;

fn ramp(shape: &[usize], f: f32) -> Tensor<f32> {
    let n = shape.iter().product();
    Tensor::from_vec(shape, (0..n).map(|i| ((i as f32 + 1.0) * f).sin()).collect())
}

const MODES: [(&str, Exec); 2] = [("sequential", Exec::Sequential), ("parallel", Exec::Parallel)];

fn bench_conv(c: &mut Criterion) {
    let mut group = c.benchmark_group("conv2d_3x3");
    for &(batch, ch, size) in &[(4usize, 16usize, 32usize), (4, 64, 8)] {
        let x = ramp(&[batch, ch, size, size], 0.37);
        let w = ramp(&[ch, ch, 3, 3], 0.11);
        let b = ramp(&[ch], 0.5);
        let y = conv::conv2d_forward(Exec::Sequential, &x, &w, Some(&b), 1, 1);
        let label = format!("{batch}x{ch}x{size}x{size}");
        for (name, exec) in MODES {
            group.bench_with_input(BenchmarkId::new(format!("forward/{name}"), &label), &exec, |bch, &e| {
                bch.iter(|| conv::conv2d_forward(e, black_box(&x), &w, Some(&b), 1, 1))
            });
            group.bench_with_input(BenchmarkId::new(format!("backward/{name}"), &label), &exec, |bch, &e| {
                bch.iter(|| conv::conv2d_backward(e, black_box(&x), &w, &y, 1, 1, true))
            });
        }
    }
    group.finish();
}

fn bench_warp(c: &mut Criterion) {
    let mut group = c.benchmark_group("warp");
    let src = ramp(&[8, 1, 64, 64], 0.29);
    let flow = ramp(&[8, 2, 64, 64], 0.013).map(|v| 3.0 * v);
    for (name, exec) in MODES {
        group.bench_function(format!("forward/{name}"), |bch| {
            bch.iter(|| warp::warp_forward(exec, black_box(&src), &flow))
        });
        group.bench_function(format!("backward/{name}"), |bch| {
            bch.iter(|| warp::warp_backward(exec, black_box(&src), &flow, &src))
        });
    }
    group.finish();
}

criterion_group!(benches, bench_conv, bench_warp);
criterion_main!(benches);
