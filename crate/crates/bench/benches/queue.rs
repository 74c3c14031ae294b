use std::hint::black_box;

use criterion::{criterion_group, criterion_main, Criterion};
use flchain_bench::queue_cases;
use flchain_core::queue;

fn bench_queue(c: &mut Criterion) {
    let mut g = c.benchmark_group("queue");
    for (name, q) in queue_cases() {
        g.bench_function(format!("departure_chain/{name}"), |b| {
            b.iter(|| queue::build_departure_chain(black_box(&q)).unwrap())
        });
        g.bench_function(format!("solve/{name}"), |b| b.iter(|| queue::solve(black_box(&q)).unwrap()));
    }
    g.finish();
}

criterion_group!(benches, bench_queue);
criterion_main!(benches);
