use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use sumsr_core::autodiff::{Mat, Tape};
use sumsr_core::checkpoint::{encode_checkpoint, CheckpointStore, MemoryStore, StageKind};
use sumsr_core::dataset::synth_generate;
use sumsr_core::networks::{random_mask, MaskVector, Parameters, Reconstructor, Selector};
use sumsr_core::segmentation::KtsConfig;
use sumsr_core::summarizer::SegmentedVideo;
use sumsr_core::training::{
    run_variant_prepared, train_joint, train_mask_stage, train_reconstructor_stage, train_selector_stage, StageContext,
    TrainingConfig, Variant,
};
use sumsr_core::Error;

fn toy_config(variant: Variant, seed: u64) -> TrainingConfig {
    TrainingConfig {
        variant,
        iterations: 2,
        epochs_per_stage: 3,
        d: 16,
        d_h: 8,
        seed,
        ..TrainingConfig::default()
    }
}

fn toy_videos(n_videos: usize, seed: u64) -> Vec<Mat> {
    synth_generate(n_videos, 24, 16, 1, 0.1, seed)
        .unwrap()
        .dataset
        .videos
        .into_iter()
        .map(|v| v.sequence.features)
        .collect()
}

fn toy_split(seed: u64) -> (Vec<Mat>, Vec<SegmentedVideo>) {
    let data = synth_generate(5, 24, 16, 1, 0.1, seed).unwrap().dataset;
    let train = data.videos[..3].iter().map(|v| v.sequence.features.clone()).collect();
    let val_refs: Vec<_> = data.videos[3..].iter().collect();
    let val = SegmentedVideo::prepare_all(&val_refs, &KtsConfig::default()).unwrap();
    (train, val)
}

/// Mean masked-frame loss of `(r, m)` over fixed seeded masks.
fn fixed_mask_loss(r: &Reconstructor, m: &MaskVector, x: &Mat) -> f64 {
    let mut total = 0.0;
    for seed in 0..20 {
        let masked = random_mask(x, m, 0.15, 1000 + seed).unwrap();
        if masked.masked.is_empty() {
            continue;
        }
        let out = r.reconstruct(&masked.sequence).unwrap();
        total += sumsr_core::losses::mask_loss(&masked.sequence, &out, &masked.masked).unwrap();
    }
    total
}

#[test]
fn one_mask_epoch_lowers_the_mask_loss() {
    let mut wins = 0;
    for seed in 0..5 {
        let mut cfg = toy_config(Variant::SepMinusMa, seed);
        cfg.epochs_per_stage = 1;
        let video = toy_videos(1, seed);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        // the stage draws its helper reconstructor first
        let initial = Reconstructor::new(&mut rng.clone(), 16, 8).unwrap();
        let before = fixed_mask_loss(&initial, &MaskVector::zeros(16, false), &video[0]);
        let out = train_mask_stage(
            StageContext {
                config: &cfg,
                iteration: 1,
            },
            &video,
            &mut rng,
        )
        .unwrap();
        let after = fixed_mask_loss(&out.helper, &out.mask, &video[0]);
        assert!(out.mask.is_finite());
        assert!(out.mask.m.iter().any(|v| *v != 0.0));
        assert_eq!(out.log.epochs.len(), 1);
        if after < before {
            wins += 1;
        }
    }
    assert!(wins >= 4, "mask loss fell in only {wins} of 5 seeds");
}

#[test]
fn mask_stage_belongs_to_sep_minus_ma() {
    let cfg = toy_config(Variant::Joint, 0);
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let err = train_mask_stage(
        StageContext {
            config: &cfg,
            iteration: 1,
        },
        &toy_videos(1, 0),
        &mut rng,
    );
    assert!(matches!(err, Err(Error::Precondition(_))));
}

#[test]
fn reconstructor_training_loss_falls() {
    let mut wins = 0;
    for seed in 0..5 {
        let mut cfg = toy_config(Variant::Sep, seed);
        cfg.epochs_per_stage = 8;
        cfg.learning_rate = 1e-3;
        let train = toy_videos(4, seed);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut rec = Reconstructor::new(&mut rng, 16, 8).unwrap();
        let mut mask = MaskVector::zeros(16, false);
        let out = train_reconstructor_stage(
            StageContext {
                config: &cfg,
                iteration: 1,
            },
            &train,
            &train[..1],
            &mut rec,
            &mut mask,
            false,
            &mut rng,
            |_, _, _| Ok(()),
        )
        .unwrap();
        let first = out.log.epochs.first().unwrap().l_recon.unwrap();
        let last = out.log.epochs.last().unwrap().l_recon.unwrap();
        if last < first {
            wins += 1;
        }
        assert!(mask.m.iter().all(|v| *v == 0.0), "frozen mask moved");
        assert!((1..=8).contains(&out.reference_epoch));
    }
    assert!(wins >= 4, "reconstruction loss fell in only {wins} of 5 seeds");
}

#[test]
fn frozen_mask_is_bit_identical() {
    let cfg = toy_config(Variant::Sep, 3);
    let train = toy_videos(2, 3);
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut rec = Reconstructor::new(&mut rng, 16, 8).unwrap();
    let mut mask = MaskVector::zeros(16, false);
    mask.m.fill(0.25);
    let before = mask.m.clone();
    let out = train_reconstructor_stage(
        StageContext {
            config: &cfg,
            iteration: 1,
        },
        &train,
        &[],
        &mut rec,
        &mut mask,
        false,
        &mut rng,
        |_, _, _| Ok(()),
    )
    .unwrap();
    assert_eq!(mask.m, before);
    assert_eq!(out.reference_epoch, cfg.epochs_per_stage);
    assert!(out.log.epochs.iter().all(|e| e.val_l_recon.is_none()));
}

#[test]
fn selector_stage_moves_mean_score_toward_sigma() {
    let mut wins = 0;
    for seed in 0..5 {
        let mut cfg = toy_config(Variant::Sep, seed);
        cfg.epochs_per_stage = 6;
        cfg.learning_rate = 1e-3;
        let train = toy_videos(3, seed);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut sel = Selector::new(&mut rng, 16, 8, 0.5).unwrap();
        let rec = Reconstructor::new(&mut rng, 16, 8).unwrap();
        let rec_bytes = encode_checkpoint(
            "sep",
            &sumsr_core::checkpoint::CheckpointKey::new(1, StageKind::Reconstructor, 1),
            &sumsr_core::checkpoint::ModelState {
                selector: None,
                reconstructor: Some(rec.clone()),
                mask: MaskVector::zeros(16, false),
            },
        );
        let mask = MaskVector::zeros(16, false);
        let mut means = Vec::new();
        let log = train_selector_stage(
            StageContext {
                config: &cfg,
                iteration: 1,
            },
            &train,
            &mut sel,
            &rec,
            &mask,
            &mut rng,
            |_, s| {
                let mut total = 0.0;
                let mut count = 0;
                for x in &train {
                    let p = s.scores(x)?;
                    total += p.iter().sum::<f64>();
                    count += p.len();
                }
                means.push(total / count as f64);
                Ok(None)
            },
        )
        .unwrap();
        assert_eq!(log.epochs.len(), 6);
        assert_eq!(means.len(), 6);
        let after_bytes = encode_checkpoint(
            "sep",
            &sumsr_core::checkpoint::CheckpointKey::new(1, StageKind::Reconstructor, 1),
            &sumsr_core::checkpoint::ModelState {
                selector: None,
                reconstructor: Some(rec.clone()),
                mask: mask.clone(),
            },
        );
        assert_eq!(rec_bytes, after_bytes);
        if (means[5] - 0.7).abs() < (means[0] - 0.7).abs() {
            wins += 1;
        }
    }
    assert!(wins >= 4, "mean score approached sigma in only {wins} of 5 seeds");
}

#[test]
fn joint_training_lowers_model_loss() {
    let mut wins = 0;
    for seed in 0..5 {
        let mut cfg = toy_config(Variant::Joint, seed);
        cfg.epochs_per_stage = 6;
        cfg.learning_rate = 1e-3;
        let train = toy_videos(3, seed);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut sel = Selector::new(&mut rng, 16, 8, 0.5).unwrap();
        let mut rec = Reconstructor::new(&mut rng, 16, 8).unwrap();
        let mut calls = 0;
        let log = train_joint(
            StageContext {
                config: &cfg,
                iteration: 1,
            },
            &train,
            &mut sel,
            &mut rec,
            &mut rng,
            |_, _, _| {
                calls += 1;
                Ok(None)
            },
        )
        .unwrap();
        assert_eq!(calls, 6);
        assert!(log.mask_after.iter().all(|v| *v == 0.0));
        let first = log.epochs[0].l_model.unwrap();
        let last = log.epochs[5].l_model.unwrap();
        if last < first {
            wins += 1;
        }
    }
    assert!(wins >= 4, "model loss fell in only {wins} of 5 seeds");
}

#[test]
fn non_finite_input_is_a_training_error() {
    let cfg = toy_config(Variant::Sep, 0);
    let mut train = toy_videos(1, 0);
    train[0][[3, 2]] = f64::NAN;
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let mut rec = Reconstructor::new(&mut rng, 16, 8).unwrap();
    let mut mask = MaskVector::zeros(16, false);
    let err = train_reconstructor_stage(
        StageContext {
            config: &cfg,
            iteration: 2,
        },
        &train,
        &[],
        &mut rec,
        &mut mask,
        false,
        &mut rng,
        |_, _, _| Ok(()),
    );
    match err {
        Err(Error::Training {
            iteration,
            stage,
            epoch,
            ..
        }) => {
            assert_eq!((iteration, stage.as_str(), epoch), (2, "reconstructor", 1));
        }
        other => panic!("unexpected {other:?}"),
    }
}

#[test]
fn stage_counts_per_variant() {
    let (train, val) = toy_split(1);
    let expect = [
        (Variant::Joint, vec![(1, StageKind::Joint)]),
        (
            Variant::Sep,
            vec![(1, StageKind::Reconstructor), (1, StageKind::Selector)],
        ),
        (
            Variant::SepMa,
            vec![(1, StageKind::Reconstructor), (1, StageKind::Selector)],
        ),
        (
            Variant::SepMinusMa,
            vec![
                (1, StageKind::Mask),
                (1, StageKind::Reconstructor),
                (1, StageKind::Selector),
            ],
        ),
        (
            Variant::Iter,
            vec![
                (1, StageKind::Reconstructor),
                (1, StageKind::Selector),
                (2, StageKind::Reconstructor),
                (2, StageKind::Selector),
            ],
        ),
    ];
    for (variant, stages) in expect {
        let cfg = toy_config(variant, 1);
        let mut store = MemoryStore::new();
        let run = run_variant_prepared(&cfg, &train, &val, &mut store).unwrap();
        let got: Vec<(usize, StageKind)> = run.stages.iter().map(|s| (s.iteration, s.stage)).collect();
        assert_eq!(got, stages, "{variant}");
        assert_eq!(run.iterations.len(), variant.iterations(cfg.iterations));
        // the mask stage's helper reconstructor is discarded, so it stores nothing
        let stored_stages = stages.iter().filter(|(_, s)| *s != StageKind::Mask).count();
        assert_eq!(store.keys().len(), stored_stages * cfg.epochs_per_stage);
        for s in &run.stages {
            assert_eq!(s.epochs.len(), cfg.epochs_per_stage);
        }
        assert!(run.final_model.selector.is_some());
    }
}

#[test]
fn identical_seeds_give_identical_runs() {
    let (train, val) = toy_split(2);
    let cfg = toy_config(Variant::Iter, 5);
    let mut a = MemoryStore::new();
    let mut b = MemoryStore::new();
    let ra = run_variant_prepared(&cfg, &train, &val, &mut a).unwrap();
    let rb = run_variant_prepared(&cfg, &train, &val, &mut b).unwrap();
    assert_eq!(ra.metrics_csv(), rb.metrics_csv());
    assert_eq!(ra.final_key, rb.final_key);
    assert_eq!(a.get(ra.final_key).unwrap(), b.get(rb.final_key).unwrap());
    for key in a.keys() {
        assert_eq!(a.get(key).unwrap(), b.get(key).unwrap(), "{key:?}");
    }
}

#[test]
fn selected_model_is_the_stored_checkpoint() {
    let (train, val) = toy_split(3);
    let cfg = toy_config(Variant::SepMa, 3);
    let mut store = MemoryStore::new();
    let run = run_variant_prepared(&cfg, &train, &val, &mut store).unwrap();
    let outcome = &run.iterations[0];
    assert_eq!(run.final_iteration, 1);
    assert_eq!(run.final_key, outcome.key());
    let stored = sumsr_core::checkpoint::decode_checkpoint(&store.get(run.final_key).unwrap())
        .unwrap()
        .1;
    assert_eq!(stored, run.final_model);
    assert!((1..=cfg.epochs_per_stage).contains(&outcome.selected_epoch));
    assert_eq!(outcome.val_recon, outcome.record.recon_mean[outcome.selected_epoch - 1]);
    // an untouched tape still works after training; guards against leaked global state
    assert_eq!(Tape::new().len(), 0);
    assert!(run.final_model.selector.as_ref().unwrap().all_finite());
}

#[test]
fn runs_need_validation_videos() {
    let (train, _) = toy_split(4);
    let cfg = toy_config(Variant::Sep, 4);
    let err = run_variant_prepared(&cfg, &train, &[], &mut MemoryStore::new());
    assert!(matches!(err, Err(Error::Precondition(_))));
    let bad = TrainingConfig { sigma: 1.5, ..cfg };
    assert!(matches!(bad.validate(), Err(Error::Config(_))));
}
