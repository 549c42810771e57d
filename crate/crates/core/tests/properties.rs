mod common;

use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use siamtcn_core::data::PairItem;
use siamtcn_core::data::{segment_samples, window_count};
use siamtcn_core::eval::{kmeans, match_and_accuracy, mean_f1, KMeansConfig};
use siamtcn_core::loss::multitask_loss;
use siamtcn_core::tcn::{temporal_max_pool, BatchNorm, Conv1d, TcnBlock, TcnLayer};
use siamtcn_core::train::train_batch;
use siamtcn_core::{
    EmbeddingSet, HeadSpec, LossConfig, Mode, Network, NetworkConfig, SimilarityLabel, Task, Tensor,
};

use common::{brute_force_accuracy, enumerate_window_starts, ramp_stream};

fn embeddings(rng: &mut ChaCha8Rng, n: usize, dims: [usize; 2]) -> EmbeddingSet<f64> {
    let mut s = EmbeddingSet::default();
    for (task, dim) in [Task::Activity, Task::Person].into_iter().zip(dims) {
        let data = (0..n * dim).map(|_| rng.random_range(-1.5..1.5)).collect();
        s.insert(task, Tensor::new(vec![n, dim], data).unwrap());
    }
    s
}

fn labels(rng: &mut ChaCha8Rng, n: usize) -> Vec<SimilarityLabel> {
    (0..n)
        .map(|_| {
            let mut l = SimilarityLabel::new();
            for t in [Task::Activity, Task::Person] {
                if rng.random_bool(0.75) {
                    l = l.with(t, rng.random_bool(0.5));
                }
            }
            l
        })
        .collect()
}

fn loss_cfg(alpha: f64, beta: f64, margin: f64) -> LossConfig {
    let mut cfg = LossConfig {
        margin,
        ..LossConfig::default()
    };
    cfg.weights.insert(Task::Activity, alpha);
    cfg.weights.insert(Task::Person, beta);
    cfg
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn loss_is_symmetric_in_the_pair(seed in any::<u64>(), n in 1usize..6, margin in 0.1f64..3.0) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (a, b) = (embeddings(&mut rng, n, [3, 2]), embeddings(&mut rng, n, [3, 2]));
        let l = labels(&mut rng, n);
        let cfg = loss_cfg(1.0, 0.5, margin);
        let ab = multitask_loss(&a, &b, &l, &cfg).unwrap();
        let ba = multitask_loss(&b, &a, &l, &cfg).unwrap();
        prop_assert_eq!(ab.total, ba.total);
        prop_assert_eq!(&ab.grads_a.by_task, &ba.grads_b.by_task);
    }

    #[test]
    fn total_is_the_weighted_sum_of_task_losses(
        seed in any::<u64>(), n in 1usize..6, alpha in 0.0f64..3.0, beta in 0.0f64..3.0,
    ) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (a, b) = (embeddings(&mut rng, n, [2, 4]), embeddings(&mut rng, n, [2, 4]));
        let l = labels(&mut rng, n);
        let both = multitask_loss(&a, &b, &l, &loss_cfg(alpha, beta, 1.0)).unwrap();
        let act = multitask_loss(&a, &b, &l, &loss_cfg(alpha, 0.0, 1.0)).unwrap();
        let pers = multitask_loss(&a, &b, &l, &loss_cfg(0.0, beta, 1.0)).unwrap();
        prop_assert!((both.total - act.total - pers.total).abs() <= 1e-12 * (1.0 + both.total.abs()));
    }

    #[test]
    fn loss_is_homogeneous_in_the_weights(seed in any::<u64>(), n in 1usize..6, c in 0.0f64..10.0) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (a, b) = (embeddings(&mut rng, n, [2, 2]), embeddings(&mut rng, n, [2, 2]));
        let l = labels(&mut rng, n);
        let base = multitask_loss(&a, &b, &l, &loss_cfg(0.7, 1.3, 1.0)).unwrap();
        let scaled = multitask_loss(&a, &b, &l, &loss_cfg(0.7 * c, 1.3 * c, 1.0)).unwrap();
        prop_assert!((scaled.total - c * base.total).abs() <= 1e-12 * (1.0 + scaled.total.abs()));
    }

    #[test]
    fn masking_a_task_removes_exactly_its_term(seed in any::<u64>(), n in 1usize..6) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (a, b) = (embeddings(&mut rng, n, [3, 3]), embeddings(&mut rng, n, [3, 3]));
        let l = labels(&mut rng, n);
        let masked: Vec<_> = l.iter().map(|x| x.mask(Task::Person)).collect();
        let cfg = loss_cfg(1.0, 1.0, 1.0);
        let full = multitask_loss(&a, &b, &l, &cfg).unwrap();
        let without = multitask_loss(&a, &b, &masked, &cfg).unwrap();
        let pers_term = full.per_task.get(&Task::Person).copied().unwrap_or(0.0);
        prop_assert!((full.total - pers_term - without.total).abs() <= 1e-12 * (1.0 + full.total));
    }

    #[test]
    fn segmentation_count_matches_enumeration(len in 0usize..400, window in 1usize..80, step in 1usize..40) {
        let starts = enumerate_window_starts(len, window, step);
        prop_assert_eq!(window_count(len, window, step), starts.len());
        let windows = segment_samples(&ramp_stream(len), window, step).unwrap();
        let got: Vec<usize> = windows.iter().map(|w| w.source.start).collect();
        prop_assert_eq!(&got, &starts);
        for w in &windows {
            prop_assert_eq!(w.data.data()[0], w.source.start as f32);
        }
    }

    #[test]
    fn hungarian_matches_brute_force(seed in any::<u64>(), k in 1usize..7, n in 1usize..60) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let assign: Vec<usize> = (0..n).map(|_| rng.random_range(0..k)).collect();
        let truth: Vec<u32> = (0..n).map(|_| rng.random_range(0..k as u32)).collect();
        let m = match_and_accuracy(&assign, &truth).unwrap();
        prop_assert!((m.accuracy - brute_force_accuracy(&assign, &truth, k)).abs() < 1e-12);
    }

    #[test]
    fn mean_f1_is_invariant_under_relabelling(seed in any::<u64>(), k in 1usize..6, n in 1usize..50) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let pred: Vec<u32> = (0..n).map(|_| rng.random_range(0..k as u32)).collect();
        let truth: Vec<u32> = (0..n).map(|_| rng.random_range(0..k as u32)).collect();
        let mut relabel: Vec<u32> = (0..k as u32).map(|c| 10 + 3 * c).collect();
        relabel.reverse();
        let p2: Vec<Option<u32>> = pred.iter().map(|&p| Some(relabel[p as usize])).collect();
        let t2: Vec<u32> = truth.iter().map(|&t| relabel[t as usize]).collect();
        let p1: Vec<Option<u32>> = pred.iter().map(|&p| Some(p)).collect();
        let a = mean_f1(&p1, &truth).unwrap().mean_f1;
        let b = mean_f1(&p2, &t2).unwrap().mean_f1;
        prop_assert!((a - b).abs() < 1e-12);
        prop_assert!((0.0..=1.0).contains(&a));
    }

    #[test]
    fn max_pool_commutes_with_even_shifts(seed in any::<u64>(), t in 4usize..20, shift in 1usize..4) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let x: Vec<f64> = (0..t + 2 * shift).map(|_| rng.random_range(-1.0..1.0)).collect();
        let full = Tensor::new(vec![1, 1, x.len()], x.clone()).unwrap();
        let tail = Tensor::new(vec![1, 1, x.len() - 2 * shift], x[2 * shift..].to_vec()).unwrap();
        let (pf, _) = temporal_max_pool(&full).unwrap();
        let (pt, _) = temporal_max_pool(&tail).unwrap();
        prop_assert_eq!(&pf.data()[shift..shift + pt.len()], pt.data());
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(40))]

    #[test]
    fn kmeans_is_deterministic(seed in any::<u64>(), k in 1usize..5) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let pts: Vec<Vec<f64>> = (0..30).map(|_| vec![rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)]).collect();
        let cfg = KMeansConfig::new(k, seed);
        prop_assert_eq!(kmeans(&pts, &cfg).unwrap(), kmeans(&pts, &cfg).unwrap());
    }

    /// An impulse changes a block's eval-mode output only within half the
    /// receptive field on either side.
    #[test]
    fn impulse_stays_inside_receptive_field(
        seed in any::<u64>(), k in prop::sample::select(vec![3usize, 5]), d2 in 1usize..4, pos in 0usize..40,
    ) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let dilations = [1, d2];
        let mut layers = Vec::new();
        for d in dilations {
            layers.push(TcnLayer {
                conv: Conv1d::<f64>::init(&mut rng, 2, 2, k, d).unwrap(),
                norm: BatchNorm::new(2, 0.9, 1e-5).unwrap(),
            });
        }
        let block = TcnBlock::new(layers, None).unwrap();
        let len = 40;
        let base = Tensor::<f64>::zeros(vec![1, 2, len]);
        let mut hit = base.clone();
        hit.data_mut()[pos] = 1.0;
        let (y0, _) = block.forward(&base, Mode::Eval).unwrap();
        let (y1, _) = block.forward(&hit, Mode::Eval).unwrap();
        let cfg = NetworkConfig { kernel: k, dilations: dilations.to_vec(), ..NetworkConfig::default() };
        let reach = (cfg.block_receptive_field() - 1) / 2;
        for c in 0..2 {
            for t in 0..len {
                let changed = y0.data()[c * len + t] != y1.data()[c * len + t];
                if changed {
                    prop_assert!(t.abs_diff(pos) <= reach, "t {t} pos {pos} reach {reach}");
                }
            }
        }
    }

    /// With the person weight at zero, a dual-head network receives the
    /// same encoder and activity-head gradients as an activity-only network.
    #[test]
    fn zero_person_weight_equals_single_task(seed in any::<u64>()) {
        let heads = |tasks: &[Task]| tasks.iter().map(|&task| HeadSpec { task, dim: 3 }).collect();
        let cfg = |tasks: &[Task]| NetworkConfig {
            input_channels: 2,
            block_channels: vec![3, 3],
            kernel: 3,
            heads: heads(tasks),
            ..NetworkConfig::default()
        };
        let mut dual = Network::<f64>::build(cfg(&[Task::Activity, Task::Person]), seed).unwrap();
        let mut single = Network::<f64>::build(cfg(&[Task::Activity]), seed).unwrap();

        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let rand_x = |rng: &mut ChaCha8Rng| Tensor::new(vec![3, 2, 8], (0..48).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap();
        let (xa, xb) = (rand_x(&mut rng), rand_x(&mut rng));
        let pairs: Vec<PairItem> = (0..3).map(|i| PairItem {
            a: i,
            b: i,
            label: SimilarityLabel::new().with(Task::Activity, rng.random_bool(0.5)).with(Task::Person, rng.random_bool(0.5)),
        }).collect();
        let la = train_batch(&mut dual, &xa, &xb, &pairs, &loss_cfg(1.0, 0.0, 1.0)).unwrap();
        let lb = train_batch(&mut single, &xa, &xb, &pairs, &loss_cfg(1.0, 0.0, 1.0)).unwrap();
        prop_assert_eq!(la, lb);

        let dual_params = dual.params_mut();
        let single_params = single.params_mut();
        let shared = single_params.len();
        for (p, q) in dual_params.iter().zip(&single_params) {
            prop_assert_eq!(&p.grad, &q.grad);
        }
        for p in &dual_params[shared..] {
            prop_assert!(p.grad.data().iter().all(|&g| g == 0.0));
        }
    }
}
