use mixconf::augment::{Augmentor, AugmentorConfig};
use mixconf::data::{generate, split, Dataset, DatasetSpec, Generator, SplitSpec};
use mixconf::engine::{build_mixed_pool, generate_pseudo_labels, select_small_loss};
use mixconf::experiment::train_supervised;
use mixconf::metrics::evaluate_probs;
use mixconf::net::{Activation, NetConfig, NetState};
use ndarray::{Array1, Array2, Axis};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn finite_difference_check(activation: Activation) -> f64 {
    let h = 1e-5;
    let mut worst: f64 = 0.0;
    for seed in 0..20u64 {
        let mut net =
            NetState::<f64>::new(&NetConfig::new(vec![2, 8, 8, 3], activation, seed)).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(seed + 500);
        let x = Array2::from_shape_fn((5, 2), |_| rng.random_range(-2.0..2.0));
        let mut t = Array2::from_shape_fn((5, 3), |_| rng.random_range(0.05..1.0));
        let sums = t.sum_axis(Axis(1)).insert_axis(Axis(1));
        t /= &sums;
        let w = Array1::from_vec(vec![0.1, 0.3, 0.2, 0.25, 0.15]);
        let (_, grads) = net.gradients(x.view(), t.view(), w.view()).unwrap();
        let analytic: Vec<f64> = grads
            .iter()
            .flat_map(|l| {
                l.weights
                    .iter()
                    .chain(l.bias.iter())
                    .copied()
                    .collect::<Vec<_>>()
            })
            .collect();
        let base = net.flat_params();
        let objective =
            |net: &NetState<f64>| net.per_sample_loss(x.view(), t.view()).unwrap().dot(&w);
        for i in 0..base.len() {
            let mut p = base.clone();
            p[i] += h;
            net.set_flat_params(&p).unwrap();
            let up = objective(&net);
            p[i] = base[i] - h;
            net.set_flat_params(&p).unwrap();
            let down = objective(&net);
            let numeric = (up - down) / (2.0 * h);
            let rel =
                (analytic[i] - numeric).abs() / analytic[i].abs().max(numeric.abs()).max(1e-6);
            worst = worst.max(rel);
        }
        net.set_flat_params(&base).unwrap();
    }
    worst
}

#[test]
fn backprop_matches_central_differences() {
    for activation in [Activation::Relu, Activation::Tanh] {
        let worst = finite_difference_check(activation);
        assert!(worst < 1e-4, "{activation:?}: {worst}");
    }
}

fn separated_blobs(seed: u64) -> Dataset<f64> {
    generate(&DatasetSpec {
        generator: Generator::GaussianBlobs,
        n_samples: 1200,
        noise_sd: 0.4,
        n_classes: 4,
        seed,
    })
    .unwrap()
}

#[test]
fn well_separated_blobs_are_learned() {
    let data = separated_blobs(3);
    let parts = split(
        &data,
        &SplitSpec {
            n_labeled: 700,
            n_validation: 0,
            n_test: 500,
        },
        4,
    )
    .unwrap();
    let mut net =
        NetState::<f64>::new(&NetConfig::new(vec![2, 32, 32, 4], Activation::Relu, 5)).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    train_supervised(
        &mut net,
        &parts.labeled,
        &Augmentor::Identity,
        1500,
        32,
        0.01,
        &mut rng,
    )
    .unwrap();
    let probs = net.forward(parts.test.x.view()).unwrap();
    let acc = evaluate_probs(probs.view(), &parts.test.y, 15)
        .unwrap()
        .accuracy();
    assert!(acc >= 0.99, "accuracy {acc}");
}

/// Fraction of corrupted pseudo-labels among kept and among dropped mixed
/// unlabeled rows, one synthetic step.
fn corruption_split(
    net: &NetState<f64>,
    pool_x: &Dataset<f64>,
    rng: &mut ChaCha8Rng,
) -> (f64, f64) {
    let n_classes = pool_x.n_classes;
    let idx: Vec<usize> = (0..40).map(|_| rng.random_range(0..pool_x.len())).collect();
    let x_u = pool_x.x.select(Axis(0), &idx);
    let mut labels: Vec<usize> = idx.iter().map(|&i| pool_x.y[i]).collect();
    let corrupted: Vec<bool> = (0..labels.len()).map(|j| j % 10 < 3).collect();
    for (label, &bad) in labels.iter_mut().zip(&corrupted) {
        if bad {
            *label = (*label + rng.random_range(1..n_classes)) % n_classes;
        }
    }
    let lab_idx: Vec<usize> = (0..10).map(|_| rng.random_range(0..pool_x.len())).collect();
    let x_l = pool_x.x.select(Axis(0), &lab_idx);
    let p_l = pool_x.subset(&lab_idx).one_hot();
    let pseudo = generate_pseudo_labels(net, x_u.view(), 4, 0.2, rng).unwrap();
    let augmentor = AugmentorConfig::MixConfG { width: 0.4 }
        .build::<f64>()
        .unwrap();
    let pool = build_mixed_pool(
        x_l.view(),
        p_l.view(),
        &pseudo.augmented,
        &labels,
        &augmentor,
        rng,
    )
    .unwrap();
    let losses = net.per_sample_loss(pool.x.view(), pool.p.view()).unwrap();
    let (mut kept_bad, mut kept, mut dropped_bad, mut dropped) = (0, 0, 0, 0);
    for k in 0..pool.copies {
        let range = pool.unlabeled_block(k);
        let block: Vec<f64> = losses.slice(ndarray::s![range.clone()]).to_vec();
        let chosen = select_small_loss(&block, 28);
        let mut selected = vec![false; block.len()];
        chosen.iter().for_each(|&j| selected[j] = true);
        for (j, &sel) in selected.iter().enumerate() {
            let bad = corrupted[j];
            if sel {
                kept += 1;
                kept_bad += bad as usize;
            } else {
                dropped += 1;
                dropped_bad += bad as usize;
            }
        }
    }
    (
        kept_bad as f64 / kept as f64,
        dropped_bad as f64 / dropped as f64,
    )
}

#[test]
fn small_loss_selection_filters_corrupted_pseudo_labels() {
    let data = separated_blobs(11);
    let mut net =
        NetState::<f64>::new(&NetConfig::new(vec![2, 32, 32, 4], Activation::Relu, 12)).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(13);
    let mixconf = AugmentorConfig::MixConfG { width: 0.4 }
        .build::<f64>()
        .unwrap();
    train_supervised(&mut net, &data, &mixconf, 800, 32, 0.01, &mut rng).unwrap();

    let trials = 100;
    let (mut kept, mut dropped) = (0.0, 0.0);
    for trial in 0..trials {
        let mut rng = ChaCha8Rng::seed_from_u64(1000 + trial);
        let (k, d) = corruption_split(&net, &data, &mut rng);
        kept += k;
        dropped += d;
    }
    let (kept, dropped) = (kept / trials as f64, dropped / trials as f64);
    assert!(kept < dropped, "kept {kept:.3} vs dropped {dropped:.3}");
}
