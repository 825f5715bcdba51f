use noised_topk::data::{apply_superclass_noise, generate_longtail, LongTailSpec};
use noised_topk::losses::LossKind;
use noised_topk::metrics::{evaluate_scores, ShotThresholds};
use noised_topk::model::Model;
use noised_topk::noise::rng_from_seed;
use noised_topk::train::{evaluate, train, TrainConfig};
use rand::Rng;

fn cfg(loss: LossKind, k: usize) -> TrainConfig {
    TrainConfig {
        loss,
        k,
        eval_k: k,
        epochs: 6,
        batch_size: 16,
        lr_drop_epochs: vec![4],
        ..TrainConfig::default()
    }
}

#[test]
fn separable_two_class_run() {
    let spec = LongTailSpec::balanced(2, 5, 100, 8.0, 4);
    let ds = generate_longtail(&spec).unwrap();
    let out = train(&ds, &cfg(LossKind::CrossEntropy, 1)).unwrap();
    assert!(out.best.top_k_accuracy >= 0.99, "{:?}", out.best);
}

#[test]
fn separable_three_class_run() {
    let ds = generate_longtail(&LongTailSpec::balanced(3, 6, 60, 6.0, 8)).unwrap();
    let out = train(&ds, &cfg(LossKind::CrossEntropy, 1)).unwrap();
    assert!(out.best.top_k_accuracy >= 0.95, "{:?}", out.best);
}

#[test]
fn identical_runs_are_bit_identical() {
    let ds = generate_longtail(&LongTailSpec::geometric(8, 5, 40, 5, 2.0, 3)).unwrap();
    for loss in [LossKind::NoisedImbalanced, LossKind::SmoothedHinge] {
        let mut c = cfg(loss, 2);
        c.hidden = Some(6);
        c.normalize = true;
        c.score_scale = 8.0;
        let a = train(&ds, &c).unwrap();
        let b = train(&ds, &c).unwrap();
        assert_eq!(a.model, b.model);
        assert_eq!(a.history, b.history);
        c.seed += 1;
        assert_ne!(train(&ds, &c).unwrap().model, a.model);
    }
}

#[test]
fn every_differentiable_loss_trains() {
    let ds = generate_longtail(&LongTailSpec::geometric(6, 4, 30, 5, 3.0, 2)).unwrap();
    for loss in LossKind::ALL {
        let c = cfg(loss, 2);
        match train(&ds, &c) {
            Ok(out) => {
                assert!(loss != LossKind::TopKZeroOne);
                // chance level for top-2 of 6 is 1/3
                assert!(out.best.macro_top_k_accuracy > 0.5, "{loss}: {:?}", out.best);
                assert!(out.history.iter().all(|r| r.train_loss.is_finite()));
            }
            Err(e) => assert_eq!(loss, LossKind::TopKZeroOne, "{loss}: {e}"),
        }
    }
}

#[test]
fn checkpoint_reproduces_metrics() {
    let ds = generate_longtail(&LongTailSpec::geometric(5, 4, 30, 5, 2.0, 6)).unwrap();
    let out = train(&ds, &cfg(LossKind::NoisedBalanced, 2)).unwrap();
    let mut buf = Vec::new();
    out.model.write_checkpoint(&mut buf).unwrap();
    let back = Model::read_checkpoint(buf.as_slice()).unwrap();
    assert_eq!(
        evaluate(&back, &ds.test, 2, &ds.train_counts).unwrap(),
        evaluate(&out.model, &ds.test, 2, &ds.train_counts).unwrap()
    );
}

#[test]
fn superclass_noise_rate() {
    let mut spec = LongTailSpec::balanced(12, 2, 2000, 1.0, 5).with_superclass_size(4);
    spec.val_per_class = 1;
    spec.test_per_class = 1;
    let ds = generate_longtail(&spec).unwrap();
    let noisy = apply_superclass_noise(&ds, 0.5, 17).unwrap();
    let n = ds.train.len() as f64;
    let changed = ds
        .train
        .labels()
        .iter()
        .zip(noisy.train.labels())
        .filter(|(a, b)| a != b)
        .count() as f64;
    let q = 0.5 * (1.0 - 1.0 / 4.0);
    let sigma = (n * q * (1.0 - q)).sqrt();
    assert!((changed - n * q).abs() <= 3.0 * sigma, "{changed} vs {}", n * q);
}

#[test]
fn perfect_scorer_metrics() {
    let labels: Vec<usize> = (0..50).map(|i| i % 5).collect();
    let scores: Vec<Vec<f64>> = labels
        .iter()
        .map(|&y| (0..5).map(|c| if c == y { 1.0 } else { 0.0 }).collect())
        .collect();
    let it = scores.iter().map(Vec::as_slice).zip(labels.iter().copied());
    let r = evaluate_scores(it, 5, 1, &[5, 50, 500, 5, 50], ShotThresholds::default()).unwrap();
    assert_eq!(r.top_k_accuracy, 1.0);
    assert_eq!(r.macro_top_k_accuracy, 1.0);
    assert_eq!((r.per_shot_group.few, r.per_shot_group.medium, r.per_shot_group.many), (Some(1.0), Some(1.0), Some(1.0)));
}

#[test]
fn random_scorer_and_balanced_macro() {
    let (classes, k, per_class) = (10, 3, 1000);
    let mut rng = rng_from_seed(31);
    let labels: Vec<usize> = (0..classes * per_class).map(|i| i % classes).collect();
    let scores: Vec<Vec<f64>> = labels
        .iter()
        .map(|_| (0..classes).map(|_| rng.random::<f64>()).collect())
        .collect();
    let it = scores.iter().map(Vec::as_slice).zip(labels.iter().copied());
    let r = evaluate_scores(it, classes, k, &vec![50; classes], ShotThresholds::default()).unwrap();
    let n = labels.len() as f64;
    let p = k as f64 / classes as f64;
    assert!((r.top_k_accuracy - p).abs() <= 3.0 * (p * (1.0 - p) / n).sqrt());
    assert!((r.macro_top_k_accuracy - r.top_k_accuracy).abs() <= 1e-12);
}
