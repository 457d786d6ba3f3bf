use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion, Throughput};
use sahash::objective::{total_loss_and_grad, ObjectiveConfig, PairBatch};
use sahash::retrieval::{hamming, rank};
use sahash::simgraph::{build_high_order, build_low_order};
use sahash::HashHeadParams;
use sahash_bench::{codes, features};

fn bench_hamming(c: &mut Criterion) {
    let mut g = c.benchmark_group("hamming");
    for l in [64, 256, 1024] {
        let set = codes(2, l, 1);
        g.bench_with_input(BenchmarkId::from_parameter(l), &l, |b, _| {
            b.iter(|| hamming(set.row(0), set.row(1)).unwrap())
        });
    }
    g.finish();
}

fn bench_rank(c: &mut Criterion) {
    let mut g = c.benchmark_group("rank");
    g.sample_size(20);
    let db_n = 20_000;
    for l in [32, 64] {
        let db = codes(db_n, l, 2);
        let q = codes(16, l, 3);
        let db_ids: Vec<usize> = (0..db_n).collect();
        let q_ids: Vec<usize> = (db_n..db_n + 16).collect();
        g.throughput(Throughput::Elements((16 * db_n) as u64));
        g.bench_with_input(BenchmarkId::from_parameter(l), &l, |b, _| {
            b.iter(|| rank(&q, &q_ids, &db, &db_ids).unwrap())
        });
    }
    g.finish();
}

fn bench_knn(c: &mut Criterion) {
    let mut g = c.benchmark_group("knn");
    g.sample_size(10);
    let feats = features(10, 200, 64);
    g.bench_function("low_order_n2000_k20", |b| b.iter(|| build_low_order(&feats, 20).unwrap()));
    let wl = build_low_order(&feats, 20).unwrap();
    g.bench_function("high_order_n2000_k20", |b| b.iter(|| build_high_order(&wl, 20).unwrap()));
    g.finish();
}

fn bench_head(c: &mut Criterion) {
    let mut g = c.benchmark_group("head");
    let (d, h, l, batch) = (512, 1000, 64, 50);
    let feats = features(5, 10, d);
    let x = feats.select(&(0..batch).collect::<Vec<_>>()).unwrap();
    let params = HashHeadParams::init(d, h, l, 0).unwrap();
    g.bench_function("forward_b50", |b| b.iter(|| params.forward_pass(x.as_slice()).unwrap()));
    let pass = params.forward_pass(x.as_slice()).unwrap();
    let w: Vec<i8> = (0..batch * batch).map(|k| if (k / batch) % 5 == (k % batch) % 5 { 1 } else { -1 }).collect();
    let pb = PairBatch::new((0..batch).collect(), pass.codes.clone(), w).unwrap();
    let cfg = ObjectiveConfig::default();
    g.bench_function("objective_b50", |b| b.iter(|| total_loss_and_grad(&pb, &cfg).unwrap()));
    let eval = total_loss_and_grad(&pb, &cfg).unwrap();
    g.bench_function("backward_b50", |b| {
        b.iter(|| params.backward_from(&pass, x.as_slice(), &eval.grad).unwrap())
    });
    g.finish();
}

criterion_group!(benches, bench_hamming, bench_rank, bench_knn, bench_head);
criterion_main!(benches);
