mod common;

use common::*;
use lctlab::checkpoint;
use lctlab::data::{generate_synthetic, Dataset, SyntheticSpec};
use lctlab::losses::{Class, LambdaVec, LossFamily, LossSpec};
use lctlab::ndmath::Matrix;
use lctlab::optim::OptimizerConfig;
use lctlab::sampler::{LambdaDistribution, LinearPdf};
use lctlab::trainer::*;

fn tiny_network() -> NetworkConfig {
    NetworkConfig {
        hidden: vec![4],
        channels: 3,
        film_hidden: 4,
    }
}

fn point(l: &[f64]) -> LambdaDistribution {
    LambdaDistribution::point(&LambdaVec(l.to_vec()))
}

fn vs_lct() -> LambdaDistribution {
    LambdaDistribution::new(vec![
        LinearPdf::new(0.0, 0.3, 0.0).unwrap(),
        LinearPdf::new(0.0, 3.0, 0.33).unwrap(),
    ])
}

/// One full-batch SGD step equals θ − lr·∇L with ∇L from central differences.
#[test]
fn single_step_matches_finite_difference_update() {
    for (family, lambda) in [
        (LossFamily::Vs, [0.2, 1.0]),
        (LossFamily::Focal, [0.25, 2.0]),
    ] {
        let x = Matrix::new(2, 3, vec![0.5, -1.0, 2.0, -0.3, 0.8, 0.1]).unwrap();
        let ds = Dataset::new(x.clone(), vec![Class::Pos, Class::Neg]).unwrap();
        let mut cfg = TrainConfig::new(Method::Baseline, family, point(&lambda));
        cfg.network = tiny_network();
        cfg.epochs = 1;
        cfg.batch_size = 2;
        cfg.clip_norm = None;
        cfg.optimizer = OptimizerConfig::Sgd {
            lr: 0.1,
            momentum: 0.9,
        };
        cfg.seed = 17;

        let init = init_model(&cfg, &ds).unwrap();
        let spec = LossSpec::new(family, ds.beta());
        let l = LambdaVec(lambda.to_vec());
        let g = numeric_grad(
            |t| batch_loss(&init, t, &x, ds.labels(), &spec, &l, false),
            init.params(),
            1e-6,
        );
        let trained = train(&cfg, &ds).unwrap();
        for ((after, before), gi) in trained.net.params().iter().zip(init.params()).zip(&g) {
            let expected = before - 0.1 * gi;
            assert!(
                (after - expected).abs() < 1e-8,
                "{family}: {after} vs {expected}"
            );
        }
    }
}

fn separable() -> (Dataset, Dataset) {
    generate_synthetic(&SyntheticSpec {
        d: 4,
        separation: 6.0,
        std_minus: 1.0,
        std_plus: 1.0,
        n_majority: 400,
        beta_target: 4.0,
        n_test_per_class: 100,
        balanced_test: true,
        seed: 3,
    })
    .unwrap()
}

#[test]
fn loss_moving_average_decreases() {
    let (train_ds, test_ds) = generate_synthetic(&SyntheticSpec {
        d: 4,
        separation: 2.0,
        std_minus: 1.0,
        std_plus: 1.0,
        n_majority: 400,
        beta_target: 4.0,
        n_test_per_class: 200,
        balanced_test: true,
        seed: 3,
    })
    .unwrap();
    let mut cfg = TrainConfig::new(Method::Lct, LossFamily::Vs, vs_lct());
    cfg.epochs = 60;
    cfg.batch_size = 32;
    cfg.seed = 1;
    let m = train(&cfg, &train_ds).unwrap();
    let losses: Vec<f64> = m.history.iter().map(|h| h.mean_loss).collect();
    let blocks: Vec<f64> = losses
        .chunks(15)
        .map(|c| c.iter().sum::<f64>() / c.len() as f64)
        .collect();
    assert!(blocks.windows(2).all(|w| w[1] < w[0]), "{blocks:?}");
    let rep = evaluate(&m, &test_ds, &[LambdaVec(vec![0.1, 1.0])]).unwrap();
    assert!(rep[0].metrics.auc > 0.85, "{}", rep[0].metrics.auc);
}

#[test]
fn sam_training_differs_from_plain_but_is_reproducible() {
    let (train_ds, _) = separable();
    let mut cfg = TrainConfig::new(Method::Baseline, LossFamily::Vs, point(&[0.1, 1.0]));
    cfg.epochs = 3;
    cfg.network = tiny_network();
    let plain = train(&cfg, &train_ds).unwrap();
    cfg.sam_rho = Some(0.0);
    assert_eq!(
        train(&cfg, &train_ds).unwrap().net.params(),
        plain.net.params()
    );
    cfg.sam_rho = Some(0.05);
    let sam = train(&cfg, &train_ds).unwrap();
    assert_ne!(sam.net.params(), plain.net.params());
    assert_eq!(train(&cfg, &train_ds).unwrap(), sam);
}

#[test]
fn adam_and_focal_lct_train() {
    let (train_ds, _) = separable();
    let dist = LambdaDistribution::new(vec![
        LinearPdf::new(0.25, 0.75, 2.0).unwrap(),
        LinearPdf::new(1.0, 3.0, 0.5).unwrap(),
    ]);
    let mut cfg = TrainConfig::new(Method::Lct, LossFamily::Focal, dist);
    cfg.optimizer = OptimizerConfig::Adam {
        lr: 1e-3,
        beta1: 0.9,
        beta2: 0.999,
        eps: 1e-8,
    };
    cfg.epochs = 4;
    let m = train(&cfg, &train_ds).unwrap();
    assert!(m.history.iter().all(|h| h.mean_loss.is_finite()));
    for h in &m.history {
        assert!(h.lambda_min[0] >= 0.25 && h.lambda_max[0] <= 0.75);
        assert!(h.lambda_min[1] >= 1.0 && h.lambda_max[1] <= 3.0);
    }
}

#[test]
fn checkpoint_round_trip_preserves_predictions() {
    let (train_ds, test_ds) = separable();
    let mut cfg = TrainConfig::new(Method::Lct, LossFamily::Vs, vs_lct());
    cfg.epochs = 3;
    let m = train(&cfg, &train_ds).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("m.ckpt");
    checkpoint::save(&m, &path).unwrap();
    let back = checkpoint::load(&path).unwrap();
    assert_eq!(back, m);
    let grid = [LambdaVec(vec![0.0, 0.0]), LambdaVec(vec![0.3, 4.0])];
    assert_eq!(
        evaluate(&back, &test_ds, &grid).unwrap(),
        evaluate(&m, &test_ds, &grid).unwrap()
    );
}

#[test]
fn trace_has_one_line_per_epoch() {
    let (train_ds, _) = separable();
    let mut cfg = TrainConfig::new(Method::Lct, LossFamily::Vs, vs_lct());
    cfg.epochs = 4;
    cfg.network = tiny_network();
    let mut trace = JsonLinesTrace::new(Vec::new());
    let m = train_with(&cfg, &train_ds, &mut trace).unwrap();
    let text = String::from_utf8(trace.into_inner()).unwrap();
    let logs: Vec<EpochLog> = text
        .lines()
        .map(|l| serde_json::from_str(l).unwrap())
        .collect();
    assert_eq!(logs, m.history);
}

#[test]
fn lct_eval_grid_of_twenty() {
    let (train_ds, test_ds) = separable();
    let mut cfg = TrainConfig::new(Method::Lct, LossFamily::Vs, vs_lct());
    cfg.epochs = 2;
    cfg.network = tiny_network();
    let m = train(&cfg, &train_ds).unwrap();
    let grid =
        lctlab::harness::lambda_grid(&[vec![0.0, 0.1, 0.2, 0.3], vec![0.0, 1.0, 2.0, 3.0, 4.0]]);
    let reports = evaluate(&m, &test_ds, &grid).unwrap();
    assert_eq!(reports.len(), 20);
    let distinct: std::collections::BTreeSet<u64> =
        reports.iter().map(|r| r.metrics.brier.to_bits()).collect();
    assert!(distinct.len() > 1);
}
