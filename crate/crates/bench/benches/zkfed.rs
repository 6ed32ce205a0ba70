use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use skyfed_core::zkfed::{aggregate, create_update, quantize, setup, verify_aggregate, VerificationPolicy, SCALE};

fn zkfed(c: &mut Criterion) {
    let mut group = c.benchmark_group("zkfed");
    group.sample_size(10);
    let clients = 5;
    let zk = setup(Some([9; 32]), clients);
    let signers = zk
        .clients
        .iter()
        .enumerate()
        .map(|(i, k)| (i as u32, k.verifying_key()))
        .collect();
    let policy = VerificationPolicy::new(f64::INFINITY, signers);
    let vk = zk.aggregator.verifying_key();
    for dim in [110usize, 10_000] {
        let mut rng = ChaCha20Rng::seed_from_u64(dim as u64);
        let values: Vec<_> = (0..clients)
            .map(|_| {
                let v: Vec<f64> = (0..dim).map(|_| rng.gen_range(-0.01..0.01)).collect();
                quantize(&v, SCALE)
            })
            .collect();
        group.bench_with_input(BenchmarkId::new("commit", dim), &dim, |b, _| {
            b.iter(|| create_update(&zk.params, &zk.clients[0], 1, 0, &values[0], [1; 32]))
        });
        let subs: Vec<_> = values
            .iter()
            .enumerate()
            .map(|(i, q)| create_update(&zk.params, &zk.clients[i], 1, i as u32, q, [i as u8; 32]))
            .collect();
        group.bench_with_input(BenchmarkId::new("aggregate", dim), &dim, |b, _| {
            b.iter(|| aggregate(&zk.params, 1, dim, &subs, &policy, &zk.aggregator, &mut rng).unwrap())
        });
        let agg = aggregate(&zk.params, 1, dim, &subs, &policy, &zk.aggregator, &mut rng).unwrap();
        let path = agg.inclusion_path(0).unwrap();
        group.bench_with_input(BenchmarkId::new("verify", dim), &dim, |b, _| {
            b.iter(|| verify_aggregate(&zk.params, &vk, &agg.broadcast, &subs[0].0, &path).unwrap())
        });
    }
    group.finish();
}

criterion_group!(benches, zkfed);
criterion_main!(benches);
