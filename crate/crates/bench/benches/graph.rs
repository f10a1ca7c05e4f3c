use catrelax::{Graph, Tensor};
use criterion::{criterion_group, criterion_main, Criterion};

fn forward_backward(c: &mut Criterion) {
    let a = Tensor::from_fn(&[100, 200], |i| ((i % 17) as f64 - 8.0) * 0.01);
    let w = Tensor::from_fn(&[200, 200], |i| ((i % 13) as f64 - 6.0) * 0.01);
    c.bench_function("matmul_softmax_backward_100x200x200", |b| {
        b.iter(|| {
            let mut g = Graph::new();
            let x = g.constant(a.clone());
            let wv = g.param(w.clone());
            let h = g.matmul(x, wv).unwrap();
            let s = g.softmax(h, 1).unwrap();
            let l = g.sum_all(s).unwrap();
            g.backward(l).unwrap()
        })
    });
}

criterion_group!(benches, forward_backward);
criterion_main!(benches);
