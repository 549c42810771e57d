use criterion::{criterion_group, criterion_main, BatchSize, Criterion};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use siamtcn_bench::{network, pairs, random_points, random_tensor, synth_windows};
use siamtcn_core::data::batch_of;
use siamtcn_core::eval::{kmeans, match_and_accuracy};
use siamtcn_core::tcn::Conv1d;
use siamtcn_core::train::train_batch;
use siamtcn_core::{KMeansConfig, LossConfig, Mode};

fn conv(c: &mut Criterion) {
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let layer = Conv1d::<f32>::init(&mut rng, 32, 32, 5, 2).unwrap();
    let x = random_tensor(vec![64, 32, 64], 1);
    let g = random_tensor(vec![64, 32, 64], 2);
    c.bench_function("conv1d_forward_64x32x64_k5", |b| {
        b.iter(|| layer.forward(&x).unwrap())
    });
    c.bench_function("conv1d_backward_64x32x64_k5", |b| {
        b.iter(|| layer.backward(&x, &g).unwrap())
    });
}

fn network_passes(c: &mut Criterion) {
    let windows = synth_windows();
    let net = network(windows[0].channels());
    let idx: Vec<usize> = (0..64).collect();
    let x = batch_of(&windows, &idx).unwrap();
    c.bench_function("encoder_forward_eval_b64", |b| {
        b.iter(|| net.forward(&x, Mode::Eval).unwrap())
    });

    let pairs = pairs(&windows, 64);
    let a: Vec<usize> = pairs.iter().map(|p| p.a).collect();
    let bb: Vec<usize> = pairs.iter().map(|p| p.b).collect();
    let x_a = batch_of(&windows, &a).unwrap();
    let x_b = batch_of(&windows, &bb).unwrap();
    let loss = LossConfig::default();
    c.bench_function("train_batch_pairs64", |b| {
        b.iter_batched(
            || net.clone(),
            |mut n| train_batch(&mut n, &x_a, &x_b, &pairs, &loss).unwrap(),
            BatchSize::LargeInput,
        )
    });
}

fn clustering(c: &mut Criterion) {
    let points = random_points(300, 32, 3);
    let cfg = KMeansConfig::new(4, 0);
    c.bench_function("kmeans_300x32_k4", |b| {
        b.iter(|| kmeans(&points, &cfg).unwrap())
    });

    let assign: Vec<usize> = (0..1000).map(|i| (i * 7) % 12).collect();
    let labels: Vec<u32> = (0..1000).map(|i| (i % 12) as u32).collect();
    c.bench_function("hungarian_match_12x12", |b| {
        b.iter(|| match_and_accuracy(&assign, &labels).unwrap())
    });
}

criterion_group!(benches, conv, network_passes, clustering);
criterion_main!(benches);
