use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use reldp::graph::{Edge, Features, Graph};
use reldp::oracle::fd_gradient;
use reldp::sampler::{EdgeTuple, NegEdge};
use reldp::synth::{generate, SbmConfig};
use reldp::trainer::{
    checkpoint, dp_train, dp_train_observed, evaluate_ranking, evaluate_with, tuple_loss_grad, EncoderKind,
    EncoderModel, LossSpec, LrSchedule, ScoreKind, TrainConfig,
};

fn rel_err(a: &[f64], b: &[f64]) -> f64 {
    let diff = a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt();
    let scale = a
        .iter()
        .map(|x| x * x)
        .sum::<f64>()
        .sqrt()
        .max(b.iter().map(|x| x * x).sum::<f64>().sqrt());
    if scale == 0.0 {
        0.0
    } else {
        diff / scale
    }
}

fn random_instance(rng: &mut ChaCha20Rng, kind: EncoderKind) -> (EncoderModel, Features, EdgeTuple) {
    let nodes = 8;
    let dim = 5;
    let data = (0..nodes * dim).map(|_| rng.random_range(-1.0..1.0)).collect();
    let features = Features::new(nodes, dim, data).unwrap();
    let model = EncoderModel::init(kind, dim, 4, rng.random()).unwrap();
    let tuple = EdgeTuple {
        positive: Edge::new(0, 1).unwrap(),
        negatives: (2..5)
            .map(|x| NegEdge {
                w: if rng.random::<bool>() { 0 } else { 1 },
                x,
            })
            .collect(),
    };
    (model, features, tuple)
}

#[test]
fn analytic_gradients_match_finite_differences() {
    let mut rng = ChaCha20Rng::seed_from_u64(11);
    let kinds = [EncoderKind::Linear, EncoderKind::TwoLayer { hidden: 6 }];
    let losses = [
        LossSpec::info_nce(),
        LossSpec::hinge(1.0),
        LossSpec {
            score: ScoreKind::Cosine,
            ..LossSpec::info_nce()
        },
    ];
    let mut worst: f64 = 0.0;
    for _ in 0..100 {
        for kind in kinds {
            for loss in &losses {
                let (model, features, tuple) = random_instance(&mut rng, kind);
                let (_, g) = tuple_loss_grad(&model, &features, &tuple, loss).unwrap();
                let fd = fd_gradient(&model, &features, &tuple, loss, 1e-5).unwrap();
                worst = worst.max(rel_err(&g.0, &fd.0));
            }
        }
    }
    assert!(worst < 1e-5, "worst relative error {worst}");
}

#[test]
fn inactive_hinge_gives_zero_both_ways() {
    let features = Features::new(3, 1, vec![1.0, 1.0, -1.0]).unwrap();
    let model = EncoderModel::new(EncoderKind::Linear, 1, 1, vec![1.0]).unwrap();
    let tuple = EdgeTuple {
        positive: Edge::new(0, 1).unwrap(),
        negatives: vec![NegEdge { w: 0, x: 2 }],
    };
    // scores 1 and −1, margin 0.5
    let loss = LossSpec::hinge(0.5);
    let (l, g) = tuple_loss_grad(&model, &features, &tuple, &loss).unwrap();
    assert_eq!(l, 0.0);
    assert!(g.0.iter().all(|x| *x == 0.0));
    let fd = fd_gradient(&model, &features, &tuple, &loss, 1e-5).unwrap();
    assert!(fd.0.iter().all(|x| *x == 0.0));
}

fn zero_feature_ring(n: usize, dim: usize) -> Graph {
    let pairs: Vec<(usize, usize)> = (0..n).map(|i| (i, (i + 1) % n)).collect();
    Graph::from_pairs(n, &pairs)
        .unwrap()
        .with_features(Features::zeros(n, dim))
        .unwrap()
}

#[test]
fn update_noise_has_calibrated_variance() {
    let g = zero_feature_ring(200, 10);
    let (lr, sigma, c, b) = (0.05, 1.3, 0.7, 4);
    let cfg = TrainConfig {
        batch_size: b,
        k_neg: 2,
        sigma,
        clip_c: c,
        lr: LrSchedule::Constant(lr),
        iterations: 10_000,
        out_dim: 10,
        alphas: vec![2.0, 8.0, 32.0],
        seed: 5,
        ..TrainConfig::default()
    };
    let mut prev: Option<Vec<f64>> = None;
    let (mut count, mut sum, mut sum_sq) = (0u64, 0.0, 0.0);
    let mut record = |_: &reldp::trainer::StepRecord, m: &EncoderModel| {
        if let Some(p) = &prev {
            for (w, q) in m.weights.iter().zip(p) {
                let d = w - q;
                count += 1;
                sum += d;
                sum_sq += d * d;
            }
        }
        prev = Some(m.weights.clone());
    };
    let out = dp_train_observed(&g, &cfg, &LossSpec::info_nce(), &mut record).unwrap();
    assert!(out.history.iter().all(|r| r.clipped_norm == 0.0));
    let mean = sum / count as f64;
    let var = sum_sq / count as f64 - mean * mean;
    let want = (lr * sigma * c / b as f64).powi(2);
    assert!((var / want - 1.0).abs() < 0.05, "variance {var}, expected {want}");
    assert!(mean.abs() < 4.0 * (want / count as f64).sqrt());
}

fn small_sbm() -> reldp::synth::SbmDataset {
    generate(&SbmConfig {
        nodes: 80,
        seed: 3,
        ..SbmConfig::default()
    })
    .unwrap()
}

#[test]
fn plain_sgd_decreases_the_monitoring_loss() {
    let d = small_sbm();
    let (capped, _) = reldp::graph::cap_degrees(&d.train, 5, 0).unwrap();
    // every positive in every batch; only the negatives are resampled
    let cfg = TrainConfig {
        batch_size: capped.m(),
        k_neg: 1,
        sigma: 0.0,
        clip_c: f64::INFINITY,
        lr: LrSchedule::Constant(0.002),
        iterations: 50,
        monitor_every: 1,
        out_dim: 4,
        ..TrainConfig::default()
    };
    let out = dp_train(&d.train, &cfg, &LossSpec::info_nce()).unwrap();
    let losses: Vec<f64> = out.history.iter().filter_map(|r| r.monitor_loss).collect();
    assert_eq!(losses.len(), 50);
    for w in losses.windows(2) {
        assert!(w[1] < w[0], "{losses:?}");
    }
}

#[test]
fn clipping_bounds_the_batch_gradient() {
    let d = small_sbm();
    for mode in [reldp::clip::ClipMode::Adaptive, reldp::clip::ClipMode::Standard] {
        let cfg = TrainConfig {
            batch_size: 8,
            k_neg: 2,
            sigma: 0.0,
            clip_c: 0.1,
            clip_mode: mode,
            iterations: 40,
            ..TrainConfig::default()
        };
        let out = dp_train(&d.train, &cfg, &LossSpec::hinge(1.0)).unwrap();
        for r in &out.history {
            let cap = match mode {
                reldp::clip::ClipMode::Adaptive => r.batch_len as f64 * 0.05,
                reldp::clip::ClipMode::Standard => r.batch_len as f64 * 0.1,
            };
            assert!(r.clipped_norm <= cap * (1.0 + 1e-12), "{r:?}");
        }
    }
}

#[test]
fn runs_are_reproducible_and_checkpoints_round_trip() {
    let d = small_sbm();
    let cfg = TrainConfig {
        batch_size: 6,
        k_neg: 3,
        iterations: 30,
        encoder: EncoderKind::TwoLayer { hidden: 5 },
        alphas: vec![2.0, 4.0, 16.0],
        momentum: 0.5,
        ..TrainConfig::default()
    };
    let a = dp_train(&d.train, &cfg, &LossSpec::info_nce()).unwrap();
    let b = dp_train(&d.train, &cfg, &LossSpec::info_nce()).unwrap();
    assert_eq!(a.model, b.model);
    assert_eq!(a.history_csv(), b.history_csv());
    assert_eq!(a.ledger, b.ledger);

    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("model.bin");
    checkpoint::save(&a.model, &path).unwrap();
    assert_eq!(checkpoint::load(&path).unwrap(), a.model);
}

#[test]
fn random_model_ranks_at_chance() {
    // 400 nodes with i.i.d. features; a random encoder has no signal
    let mut rng = ChaCha20Rng::seed_from_u64(2);
    let n = 400;
    let mut pairs = Vec::new();
    while pairs.len() < 10_000 {
        let (a, b) = (rng.random_range(0..n), rng.random_range(0..n));
        if a != b {
            pairs.push((a, b));
        }
    }
    let dim = 6;
    let data = (0..n * dim).map(|_| rng.random_range(-1.0..1.0)).collect();
    let g = Graph::from_pairs(n, &pairs)
        .unwrap()
        .with_features(Features::new(n, dim, data).unwrap())
        .unwrap();
    assert!(g.m() >= 9_000);
    let model = EncoderModel::init(EncoderKind::Linear, dim, 4, 1).unwrap();
    let r = evaluate_ranking(&model, &g, 100, 3, ScoreKind::Dot).unwrap();
    let sd = (0.01 * 0.99 / r.edges as f64).sqrt();
    let mut noise = ChaCha20Rng::seed_from_u64(4);
    let coin = evaluate_with(&g, 100, 3, |_, _| Ok(noise.random::<f64>())).unwrap();
    assert!((coin.prec_at_1 - 0.01).abs() < 4.0 * sd, "{coin:?}");
    assert!((r.prec_at_1 - 0.01).abs() < 4.0 * sd, "{r:?}");
}
