use std::sync::atomic::AtomicBool;
use std::sync::Arc;

use super::*;
use crate::data::{generate_synthetic, Dataset, FoldAssignment, SyntheticSpec};
use crate::model::{load_checkpoint, ModelConfig, Variant};
use crate::rng::substream;

fn toy_data(n: usize, seed: u64) -> Dataset {
    let spec = SyntheticSpec {
        n_classes: 2,
        clip_seconds: 0.1,
        ..Default::default()
    };
    generate_synthetic(&spec, n, &mut substream(seed, "data")).unwrap()
}

fn toy_model(variant: Variant) -> ModelConfig {
    ModelConfig {
        n_layers: 2,
        d_model: 16,
        variant,
        n_classes: 2,
        heads: 2,
        d_state: 4,
        ..Default::default()
    }
}

fn quick(epochs: usize) -> TrainConfig {
    TrainConfig {
        epochs,
        batch_size: 8,
        lr: 3e-3,
        aug: AugmentConfig {
            shift_s: 0.02,
            ..Default::default()
        },
        ..Default::default()
    }
}

#[test]
fn config_round_trips_through_kv() {
    let cfg = TrainConfig {
        target_accuracy: Some(0.9),
        mixup_domain: MixupDomain::Waveform,
        seed: 7,
        ..quick(3)
    };
    assert_eq!(TrainConfig::from_kv(&cfg.to_kv()).unwrap(), cfg);
    let mut kv = cfg.to_kv();
    kv.set("lr_min", 1.0);
    assert!(TrainConfig::from_kv(&kv).is_err());
    kv.check_known(TRAIN_KEYS).unwrap();
}

#[test]
fn fold_summary_uses_population_std() {
    assert_eq!(summarize_folds(&[0.5, 1.0]), (0.75, 0.25));
    assert_eq!(summarize_folds(&[0.8; 5]).1, 0.0);
}

#[test]
fn learns_a_separable_task() {
    let train = toy_data(64, 1);
    let test = toy_data(32, 2);
    let cfg = TrainConfig {
        mixup_alpha: 0.0,
        ..quick(8)
    };
    let report =
        train_run::<f64>(&toy_model(Variant::PureMamba), &cfg, &train, &test, None).unwrap();
    assert_eq!(report.records.len(), 16);
    let first = report.records[0].loss;
    let last = report.records[14].loss;
    assert!(last < first, "train loss {first} -> {last}");
    assert!(report.best_accuracy >= 0.9, "{report:?}");
}

#[test]
fn run_directory_contents() {
    let dir = tempfile::tempdir().unwrap();
    let (train, test) = (toy_data(16, 3), toy_data(8, 4));
    let report = train_run::<f32>(
        &toy_model(Variant::Hybrid),
        &quick(2),
        &train,
        &test,
        Some(dir.path()),
    )
    .unwrap();
    let recs = read_metrics(&dir.path().join("metrics.jsonl")).unwrap();
    assert_eq!(recs, report.records);
    assert_eq!(recs.len(), 4);
    assert_eq!(
        recs.iter().map(|r| (r.epoch, r.split)).collect::<Vec<_>>(),
        [
            (0, Split::Train),
            (0, Split::Test),
            (1, Split::Train),
            (1, Split::Test)
        ]
    );
    assert!(recs.iter().all(|r| r.peak_bytes > 0 && r.lr > 0.0));
    assert!(recs[0].grad_norm.is_some() && recs[1].grad_norm.is_none());
    let best = load_checkpoint::<f32>(&dir.path().join("best")).unwrap();
    assert_eq!(best.cfg, toy_model(Variant::Hybrid));
    let summary: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(dir.path().join("summary.json")).unwrap())
            .unwrap();
    assert_eq!(summary["stop"], "completed");
    assert_eq!(summary["epochs_completed"], 2);
}

#[test]
fn resume_reproduces_the_next_epoch() {
    let (train, test) = (toy_data(24, 5), toy_data(8, 6));
    let mcfg = toy_model(Variant::Hybrid);
    let cfg = quick(3);

    let a = tempfile::tempdir().unwrap();
    let mut straight = Trainer::<f64>::new(&mcfg, cfg.clone(), &train, &test)
        .unwrap()
        .with_output(a.path())
        .unwrap();
    straight.run_epochs(2).unwrap();

    let b = tempfile::tempdir().unwrap();
    let mut first = Trainer::<f64>::new(&mcfg, cfg.clone(), &train, &test)
        .unwrap()
        .with_output(b.path())
        .unwrap();
    first.run_epochs(1).unwrap();
    drop(first);
    let mut resumed = Trainer::<f64>::resume(b.path(), cfg, &train, &test).unwrap();
    assert_eq!(resumed.next_epoch(), 1);
    resumed.run_epochs(1).unwrap();

    let (x, y) = (straight.records(), resumed.records());
    assert_eq!(x.len(), y.len());
    for (r, s) in x.iter().zip(y) {
        assert_eq!((r.epoch, r.split), (s.epoch, s.split));
        assert!((r.loss - s.loss).abs() < 1e-6, "{r:?} vs {s:?}");
        assert_eq!(r.accuracy, s.accuracy);
    }
    assert_eq!(
        read_metrics(&b.path().join("metrics.jsonl")).unwrap().len(),
        4
    );
    for (p, q) in straight.model.store.iter().zip(resumed.model.store.iter()) {
        assert_eq!(p.2, q.2, "{}", p.1);
    }
}

#[test]
fn early_termination_is_recorded() {
    let (train, test) = (toy_data(8, 7), toy_data(4, 8));
    let cfg = TrainConfig {
        target_accuracy: Some(0.0),
        ..quick(5)
    };
    let r = train_run::<f32>(
        &toy_model(Variant::PureAttention),
        &cfg,
        &train,
        &test,
        None,
    )
    .unwrap();
    assert_eq!(
        (r.stop, r.epochs_completed, r.epochs_planned),
        (StopReason::TargetAccuracy, 1, 5)
    );

    let cfg = TrainConfig {
        time_budget_s: Some(0.0),
        ..quick(5)
    };
    let r = train_run::<f32>(&toy_model(Variant::PureMamba), &cfg, &train, &test, None).unwrap();
    assert_eq!((r.stop, r.epochs_completed), (StopReason::TimeBudget, 1));

    let flag = Arc::new(AtomicBool::new(true));
    let mut t = Trainer::<f32>::new(&toy_model(Variant::PureMamba), quick(5), &train, &test)
        .unwrap()
        .with_stop_flag(flag);
    let r = t.run().unwrap();
    assert_eq!((r.stop, r.epochs_completed), (StopReason::Interrupted, 1));
}

#[test]
fn divergence_reports_the_step() {
    let (train, test) = (toy_data(8, 9), toy_data(4, 10));
    let mut model = crate::model::Model::<f64>::build(&toy_model(Variant::PureMamba), 0).unwrap();
    let id = model.w_cls;
    model.store.get_mut(id).data_mut()[0] = f64::INFINITY;
    let mut t = Trainer::with_model(model, quick(2), &train, &test).unwrap();
    let err = t.run().unwrap_err();
    assert!(
        matches!(err, crate::Error::Divergence { epoch: 0, step: 1 }),
        "{err}"
    );
}

#[test]
fn spectrogram_runs_with_both_mixup_domains() {
    let spec = SyntheticSpec {
        n_classes: 2,
        clip_seconds: 0.6,
        ..Default::default()
    };
    let train = generate_synthetic(&spec, 6, &mut substream(11, "data")).unwrap();
    let test = generate_synthetic(&spec, 2, &mut substream(12, "data")).unwrap();
    let mcfg = ModelConfig {
        frontend: crate::frontend::FrontendKind::Spectrogram,
        ..toy_model(Variant::Hybrid)
    };
    for domain in [MixupDomain::Input, MixupDomain::Waveform] {
        let cfg = TrainConfig {
            mixup_domain: domain,
            batch_size: 3,
            ..quick(1)
        };
        let r = train_run::<f32>(&mcfg, &cfg, &train, &test, None).unwrap();
        assert!(r.final_loss.is_finite());
    }
}

#[test]
fn cross_validation_trains_every_fold() {
    let data = toy_data(12, 13);
    let folds = FoldAssignment::round_robin(12, 3).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let cv = cross_validate::<f32>(
        &toy_model(Variant::PureMamba),
        &quick(1),
        &data,
        &folds,
        Some(dir.path()),
    )
    .unwrap();
    assert_eq!(cv.fold_accuracies.len(), 3);
    assert_eq!((cv.mean, cv.std), summarize_folds(&cv.fold_accuracies));
    for k in 0..3 {
        assert!(dir.path().join(format!("fold{k}/metrics.jsonl")).exists());
    }
    assert!(dir.path().join("cv_summary.json").exists());
    let single = FoldAssignment::round_robin(12, 1).unwrap();
    assert!(cross_validate::<f32>(
        &toy_model(Variant::PureMamba),
        &quick(1),
        &data,
        &single,
        None
    )
    .is_err());
}
