use rolfor_core::gamedata::{generate_synthetic, SynthConfig, TrajectorySequence};
use rolfor_core::oracles::OrderingKind;
use rolfor_core::trainer::{
    gradient_probe, pretrain_dist_estimator, train, Checkpoint, ExperimentConfig, Forecaster,
    ModelConfig, PretrainConfig, Variant,
};
use rolfor_core::{Error, Rng};

fn data(n: usize, seed: u64) -> Vec<TrajectorySequence> {
    generate_synthetic(&SynthConfig {
        n_sequences: n,
        seed,
        ..SynthConfig::default()
    })
    .unwrap()
}

fn small(variant: Variant) -> ExperimentConfig {
    ExperimentConfig {
        variant,
        model: ModelConfig {
            score_hidden: vec![8],
            gcn_channels: vec![8, 8],
            decoder_hidden: 8,
            ..ModelConfig::default()
        },
        epochs: 3,
        batch_size: 8,
        learning_rate: 0.003,
        grad_clip: Some(5.0),
        pretrain: PretrainConfig {
            epochs: 5,
            batch_size: 8,
            learning_rate: 0.002,
        },
        ..ExperimentConfig::default()
    }
}

fn marking() -> Variant {
    Variant::Oracle(OrderingKind::BallDistanceMarking)
}

fn bits(c: &Checkpoint) -> Vec<(String, Vec<u64>)> {
    c.tensors
        .iter()
        .map(|(n, t)| (n.clone(), t.data().iter().map(|v| v.to_bits()).collect()))
        .collect()
}

#[test]
fn zero_learning_rate_keeps_weights() {
    let seqs = data(16, 1);
    let config = ExperimentConfig {
        learning_rate: 0.0,
        ..small(marking())
    };
    let out = train(&config, &seqs, None).unwrap();
    let init = Checkpoint::from_model(&config, 0, Rng::new(0).state(), &Forecaster::new(&config, &Rng::new(config.seed)).unwrap());
    assert_eq!(bits(&out.checkpoint), bits(&init));
}

#[test]
fn training_is_bit_reproducible() {
    let seqs = data(24, 2);
    for variant in [marking(), Variant::E2e, Variant::None] {
        let config = small(variant);
        let a = train(&config, &seqs, None).unwrap();
        let b = train(&config, &seqs, None).unwrap();
        assert_eq!(bits(&a.checkpoint), bits(&b.checkpoint));
        assert_eq!(a.history, b.history);
    }
}

#[test]
fn thread_count_does_not_change_results() {
    let seqs = data(24, 3);
    let config = small(Variant::E2e);
    let run = |threads| {
        rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build()
            .unwrap()
            .install(|| train(&config, &seqs, None).unwrap())
    };
    assert_eq!(bits(&run(1).checkpoint), bits(&run(3).checkpoint));
}

#[test]
fn oracle_loss_decreases_early() {
    let seqs = data(200, 4);
    let config = ExperimentConfig {
        epochs: 6,
        batch_size: 16,
        ..small(marking())
    };
    let h = train(&config, &seqs, None).unwrap().history;
    assert!(h.iter().all(|r| r.train_loss.is_finite()));
    // smoothed: two-epoch moving average
    let smooth: Vec<f64> = h.windows(2).map(|w| (w[0].train_loss + w[1].train_loss) / 2.0).collect();
    assert!(smooth.windows(2).all(|w| w[1] <= w[0]), "{h:?}");
}

#[test]
fn small_set_overfits() {
    let seqs = data(10, 5);
    let mut base = small(marking());
    base.epochs = 500;
    base.batch_size = 10;
    base.learning_rate = 0.01;
    base.pretrain.epochs = 100;
    let pretrained = pretrain_dist_estimator(&base, &data(200, 6)).unwrap().0;
    let variants = [
        Variant::None,
        Variant::Oracle(OrderingKind::BallDistance),
        marking(),
        Variant::Oracle(OrderingKind::OracularFuture),
        Variant::EuclDistEst,
        Variant::E2eFinetune,
    ];
    for variant in variants {
        let config = ExperimentConfig { variant, ..base.clone() };
        let init = matches!(variant, Variant::EuclDistEst | Variant::E2eFinetune).then_some(&pretrained);
        let h = train(&config, &seqs, init).unwrap().history;
        let first = h[0].train_loss;
        let last = h.last().unwrap().train_loss;
        assert!(last < 0.05 * first, "{variant}: {first} -> {last}");
    }
}

#[test]
fn finetune_needs_a_checkpoint() {
    let seqs = data(8, 7);
    assert!(matches!(train(&small(Variant::E2eFinetune), &seqs, None), Err(Error::Config(_))));
    assert!(matches!(train(&small(marking()), &[], None), Err(Error::Data(_))));
}

#[test]
fn zero_epoch_pretraining_is_initialization() {
    let mut config = small(Variant::EuclDistEst);
    config.pretrain.epochs = 0;
    let (c, report) = pretrain_dist_estimator(&config, &data(20, 8)).unwrap();
    assert!(report.loss_history.is_empty());
    let fresh = Forecaster::new(&config, &Rng::new(config.seed)).unwrap();
    for (name, t) in fresh.named_params() {
        assert_eq!(c.tensor(&name).unwrap(), t, "{name}");
    }
    assert!(matches!(pretrain_dist_estimator(&config, &[]), Err(Error::Data(_))));
}

#[test]
fn probe_limits_and_determinism() {
    let seqs = data(8, 9);
    let config = ExperimentConfig {
        epochs: 0,
        ..small(Variant::E2e)
    };
    let c = train(&config, &seqs, None).unwrap().checkpoint;
    let rows = gradient_probe(&c, &seqs, &[1e-6, 1.0, 1e6]).unwrap();
    assert_eq!(rows[0].pooled_fraction, 0.0);
    assert!(rows[2].ordernn_grad_norm < 1e-6 * rows[1].ordernn_grad_norm, "{rows:?}");
    assert!(rows[2].gcn_grad_norm > 0.0);
    assert_eq!(rows, gradient_probe(&c, &seqs, &[1e-6, 1.0, 1e6]).unwrap());
    let oracle = train(&ExperimentConfig { epochs: 0, ..small(marking()) }, &seqs, None).unwrap().checkpoint;
    assert!(matches!(gradient_probe(&oracle, &seqs, &[1.0]), Err(Error::Config(_))));
}

#[test]
fn checkpoint_round_trip_after_training() {
    let seqs = data(8, 10);
    let out = train(&small(Variant::E2e), &seqs, None).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("c.bin");
    out.checkpoint.save(&path).unwrap();
    let back = Checkpoint::load(&path).unwrap();
    assert_eq!(back.to_bytes().unwrap(), out.checkpoint.to_bytes().unwrap());
    assert_eq!(bits(&back), bits(&out.checkpoint));
}

#[test]
fn estimator_pretraining_meets_thresholds() {
    let config = ExperimentConfig {
        variant: Variant::EuclDistEst,
        ..ExperimentConfig::default()
    };
    let (_, report) = pretrain_dist_estimator(&config, &data(1000, 9)).unwrap();
    assert!(report.heldout_mse < 0.25, "held-out MSE {}", report.heldout_mse);
    assert!(report.heldout_topk[0] >= 0.85, "held-out top-1 {}", report.heldout_topk[0]);
}
