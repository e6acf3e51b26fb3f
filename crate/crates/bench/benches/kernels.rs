use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use moped_bench::normal_tensor;
use moped_core::autodiff::Tape;
use moped_core::kernels::Padding;
use moped_core::nn::{DeterministicModel, ModelGraph};

fn conv_forward_backward(c: &mut Criterion) {
    let mut group = c.benchmark_group("conv2d");
    for &(cin, cout) in &[(1usize, 8usize), (8, 16)] {
        let x = normal_tensor(&[64, 14, 14, cin], 1);
        let w = normal_tensor(&[3, 3, cin, cout], 2);
        group.bench_with_input(BenchmarkId::new("fwd+bwd", format!("{cin}x{cout}")), &(x, w), |b, (x, w)| {
            b.iter(|| {
                let mut tape = Tape::new();
                let xv = tape.constant(x.clone());
                let wv = tape.leaf(w.clone());
                let y = tape.conv2d(xv, wv, 1, Padding::Valid).unwrap();
                let loss = tape.sum(y);
                tape.backward(loss).unwrap()
            })
        });
    }
    group.finish();
}

fn matmul(c: &mut Criterion) {
    let a = normal_tensor(&[64, 400], 3);
    let w = normal_tensor(&[400, 64], 4);
    c.bench_function("matmul 64x400x64", |b| {
        b.iter(|| {
            let mut tape = Tape::new();
            let av = tape.constant(a.clone());
            let wv = tape.leaf(w.clone());
            tape.matmul(av, wv).unwrap()
        })
    });
}

fn scnn_minibatch(c: &mut Criterion) {
    let graph = ModelGraph::scnn([28, 28, 1], 10).unwrap();
    let model = DeterministicModel::init(graph, 0).unwrap();
    let x = normal_tensor(&[64, 28, 28, 1], 5);
    c.bench_function("scnn forward 64", |b| b.iter(|| model.logits(&x).unwrap()));
}

criterion_group!(benches, conv_forward_backward, matmul, scnn_minibatch);
criterion_main!(benches);
