use super::*;
use crate::corpus::{synthetic_corpus, SyntheticCorpusConfig};
use crate::eval::MaskSource;
use crate::mixer::SnrMode;

fn corpus(n: usize, seconds: f64, seed: u64) -> Vec<Example> {
    synthetic_corpus(
        &SyntheticCorpusConfig {
            n_utterances: n,
            seconds,
            seed,
            snr_mode: SnrMode::standard_random(),
            ..Default::default()
        },
        Execution::Parallel,
    )
    .unwrap()
}

fn mlp(hidden: usize, seed: u64) -> MaskEstimatorParams {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    MaskEstimatorParams::init(&EstimatorSpec::Mlp { hidden: vec![hidden] }, 257, &mut rng).unwrap()
}

fn quick_cfg(epochs: usize) -> TrainConfig {
    TrainConfig {
        learning_rate: 1e-2,
        warmup_steps: 20,
        epochs,
        batch_frames: 32,
        batch_chunks: 4,
        ..TrainConfig::desk()
    }
}

#[test]
fn schedule_examples() {
    let cfg = TrainConfig {
        learning_rate: 0.002,
        warmup_steps: 400,
        ..TrainConfig::default()
    };
    assert_eq!(lr_schedule(400, &cfg), 0.002);
    assert_eq!(lr_schedule(200, &cfg), 0.001);
    assert_eq!(lr_schedule(1600, &cfg), 0.001);
    assert!(lr_schedule(1, &cfg) < lr_schedule(2, &cfg));
    assert!(lr_schedule(800, &cfg) > lr_schedule(801, &cfg));
    let flat = TrainConfig {
        warmup_steps: 0,
        ..cfg
    };
    assert_eq!(lr_schedule(17, &flat), 0.002);
}

#[test]
fn default_matches_reference_settings() {
    let cfg = TrainConfig::default();
    assert_eq!(cfg.learning_rate, 1e-3);
    assert_eq!(cfg.warmup_steps, 30_000);
    assert_eq!(
        cfg.optimizer,
        OptimizerKind::Adam {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8
        }
    );
    assert_eq!(TrainConfig::desk().warmup_steps, 300);
}

#[test]
fn adam_ignores_zero_gradients_and_first_step_is_lr_sized() {
    let p0 = mlp(3, 0);
    let mut p = p0.clone();
    let mut opt = Optimizer::new(OptimizerKind::default());
    for _ in 0..3 {
        opt.step(&mut p, &p0.zeros_like(), 0.1);
    }
    assert_eq!(p, p0);

    // bias-corrected first step moves each parameter by lr * g / (|g| + eps)
    let mut g = p0.zeros_like();
    g.blocks_mut()[0][0] = 4.0;
    g.blocks_mut()[0][1] = -0.5;
    let mut p = p0.clone();
    Optimizer::new(OptimizerKind::default()).step(&mut p, &g, 0.01);
    let d0 = p.blocks()[0].data[0] - p0.blocks()[0].data[0];
    let d1 = p.blocks()[0].data[1] - p0.blocks()[0].data[1];
    assert!((d0 + 0.01 * 4.0 / (4.0 + 1e-8)).abs() < 1e-15);
    assert!((d1 - 0.01 * 0.5 / (0.5 + 1e-8)).abs() < 1e-15);
}

#[test]
fn sgd_step_and_clipping() {
    let p0 = mlp(2, 1);
    let mut g = p0.zeros_like();
    g.blocks_mut()[1][0] = 3.0;
    g.blocks_mut()[1][1] = 4.0;
    let mut p = p0.clone();
    Optimizer::new(OptimizerKind::Sgd).step(&mut p, &g, 0.5);
    assert_eq!(p.blocks()[1].data[0], p0.blocks()[1].data[0] - 1.5);

    let mut h = g.clone();
    let norm = clip_global_norm(Some(&mut h), None::<&mut DsrnetParams>, 1.0);
    assert_eq!(norm, 5.0);
    assert!((h.sq_norm() - 1.0).abs() < 1e-15);
    let mut h = g.clone();
    clip_global_norm(Some(&mut h), None::<&mut DsrnetParams>, 10.0);
    assert_eq!(h, g);
}

#[test]
fn chunks_cover_each_utterance_once() {
    let ex = corpus(3, 0.3, 0);
    let chunks = chunks_of(&ex, 8);
    for (u, e) in ex.iter().enumerate() {
        let mine: Vec<&Chunk> = chunks.iter().filter(|c| c.utt == u).collect();
        assert_eq!(mine.iter().map(|c| c.len).sum::<usize>(), e.n_frames());
        assert!(mine.iter().all(|c| c.len <= 8 && c.start + c.len <= e.n_frames()));
    }
}

#[test]
fn zero_epochs_changes_nothing() {
    let ex = corpus(2, 0.2, 0);
    let p0 = mlp(4, 0);
    let mut p = p0.clone();
    let report = train_se(&ex, &mut p, &quick_cfg(0)).unwrap();
    assert!(report.trace.is_empty());
    assert_eq!(p, p0);
    assert_eq!(report.initial_loss, report.final_loss);
}

#[test]
fn se_training_halves_the_loss_and_stays_above_oracle() {
    let ex = corpus(20, 0.5, 3);
    let mut p = mlp(16, 3);
    // 20 utterances of 63 frames in 32-frame chunks: 40 chunks, 10 steps per epoch
    let report = train_se(&ex, &mut p, &quick_cfg(20)).unwrap();
    assert_eq!(report.steps(), 200);
    assert!(report.final_loss < 0.5 * report.initial_loss, "{} vs {}", report.final_loss, report.initial_loss);
    let oracle = crate::eval::evaluate(&ex, MaskSource::Oracle, None, Execution::Parallel).unwrap();
    assert!(report.final_loss > oracle.mean_spectral_mse_enhanced());
}

#[test]
fn training_is_deterministic_across_execution_modes() {
    let ex = corpus(6, 0.3, 4);
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let se0 = MaskEstimatorParams::init(&EstimatorSpec::Recurrent { layers: 1, hidden: 6 }, 257, &mut rng).unwrap();
    let ds0 = DsrnetParams::init(257, DsrnetInit::ZeroOuter, false, &mut rng);
    let run = |exec| {
        let (mut se, mut ds) = (se0.clone(), ds0.clone());
        let cfg = TrainConfig { exec, ..quick_cfg(2) };
        let r = train_joint(&ex, &mut se, Some(&mut ds), &cfg, &JointLossConfig::default()).unwrap();
        (r.trace, se.checksum(), ds.checksum())
    };
    let a = run(Execution::Sequential);
    let b = run(Execution::Parallel);
    assert_eq!(a, b);
    assert!(!a.0.is_empty());
}

#[test]
fn frozen_regime_keeps_front_end() {
    let ex = corpus(3, 0.2, 5);
    let mut se = mlp(4, 5);
    let before = se.checksum();
    let mut ds = DsrnetParams::init(257, DsrnetInit::ZeroOuter, false, &mut ChaCha8Rng::seed_from_u64(5));
    let ds_before = ds.checksum();
    let cfg = TrainConfig {
        regime: Regime::Frozen,
        ..quick_cfg(2)
    };
    train_joint(&ex, &mut se, Some(&mut ds), &cfg, &JointLossConfig::default()).unwrap();
    assert_eq!(se.checksum(), before);
    assert_ne!(ds.checksum(), ds_before);
}

#[test]
fn refine_network_is_inert_without_refine_or_downstream_terms() {
    let ex = corpus(3, 0.2, 6);
    let mut se = mlp(4, 6);
    let mut ds = DsrnetParams::init(257, DsrnetInit::Random, false, &mut ChaCha8Rng::seed_from_u64(6));
    let ds_before = ds.clone();
    let loss_cfg = JointLossConfig {
        beta: 0.0,
        downstream: DownstreamMode::None,
        ..JointLossConfig::default()
    };
    let report = train_joint(&ex, &mut se, Some(&mut ds), &quick_cfg(1), &loss_cfg).unwrap();
    assert_eq!(ds, ds_before);
    assert!(report.trace.iter().all(|r| r.l_total == loss_cfg.alpha * r.l_enh));
}

#[test]
fn trace_reports_batch_lambda() {
    let ex = corpus(3, 0.2, 7);
    let mut se = mlp(4, 7);
    let mut ds = DsrnetParams::init(257, DsrnetInit::ZeroOuter, false, &mut ChaCha8Rng::seed_from_u64(7));
    let report = train_joint(&ex, &mut se, Some(&mut ds), &quick_cfg(1), &JointLossConfig::default()).unwrap();
    for r in &report.trace {
        let expected = crate::loss::lambda_from_errors(r.e_s_tilde, r.e_n_tilde);
        assert_eq!(r.lambda, expected);
        assert!((0.0..=1.0).contains(&r.lambda));
    }
    let fixed = JointLossConfig {
        lambda_mode: LambdaMode::Fixed(0.5),
        ..JointLossConfig::default()
    };
    let mut se = mlp(4, 7);
    let report = train_joint(&ex, &mut se, Some(&mut ds), &quick_cfg(1), &fixed).unwrap();
    assert!(report.trace.iter().all(|r| r.lambda == 0.5));
}

#[test]
fn end_to_end_gradients_match_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let shape = GradcheckShape::for_component(gradcheck::Component::EndToEnd);
    for e in end_to_end_gradcheck(&mut rng, shape).unwrap() {
        assert!(e.max_rel_err <= 1e-5, "{e:?}");
    }
}

#[test]
fn sweep_is_deterministic_and_one_row_per_value() {
    let ex = corpus(3, 0.2, 8);
    let se = mlp(4, 8);
    let cfg = quick_cfg(1);
    let a = sweep_alpha(&ex, &[1.0, 300.0], &se, &cfg, &JointLossConfig::default()).unwrap();
    let b = sweep_alpha(&ex, &[1.0, 300.0], &se, &cfg, &JointLossConfig::default()).unwrap();
    assert_eq!(a, b);
    assert_eq!(a.iter().map(|r| r.alpha).collect::<Vec<_>>(), vec![1.0, 300.0]);
    assert_eq!(sweep_alpha(&ex, &[50.0], &se, &cfg, &JointLossConfig::default()).unwrap().len(), 1);
    assert!(sweep_alpha(&ex, &[], &se, &cfg, &JointLossConfig::default()).is_err());
}

#[test]
fn rejects_bad_inputs() {
    let ex = corpus(1, 0.1, 0);
    let mut small = MaskEstimatorParams::init(&EstimatorSpec::Mlp { hidden: vec![2] }, 10, &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
    assert!(matches!(train_se(&ex, &mut small, &quick_cfg(1)), Err(Error::ShapeMismatch { .. })));
    let mut se = mlp(2, 0);
    assert!(train_se(&[], &mut se, &quick_cfg(1)).is_err());
    let bad = TrainConfig {
        learning_rate: 0.0,
        ..quick_cfg(1)
    };
    assert!(train_se(&ex, &mut se, &bad).is_err());
}
