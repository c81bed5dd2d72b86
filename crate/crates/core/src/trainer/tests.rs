use super::*;
use crate::model::ModelConfig;
use crate::views::{generate_sequence, SynthConfig};

fn tiny_data(sequences: usize, frames: usize) -> Dataset {
    let synth = SynthConfig {
        sequences,
        frames,
        size: 16,
        max_objects: 2,
        max_speed: 1,
    };
    Dataset {
        sequences: (0..sequences)
            .map(|i| generate_sequence(&mut Rng::new(4, domain::SYNTH | i as u64), &synth).frames)
            .collect(),
    }
}

fn micro_cfg() -> TrainConfig {
    let mut cfg = TrainConfig::default();
    cfg.model = ModelConfig::micro();
    cfg.augment.output_size = 8;
    cfg.mask_ratio = 0.75;
    cfg.batch_size = 4;
    cfg.repeated_sampling = 2;
    cfg.steps = Some(6);
    cfg.schedule.warmup_epochs = 1.0;
    cfg.schedule.scale_lr = false;
    cfg.schedule.base_lr = 1e-2;
    cfg.workers = 2;
    cfg
}

#[test]
fn epoch_visits_each_item_repeats_times() {
    let cfg = micro_cfg();
    let plan = Plan::new(&cfg, 10).unwrap();
    assert_eq!(plan.steps_per_epoch, 5);
    let mut seen = vec![0; 10];
    for step in 0..5 {
        let items = plan.batch_items(cfg.seed, step, 2);
        assert_eq!(items.len(), 4);
        assert_eq!(items[0], items[1]);
        assert_eq!(items[2], items[3]);
        items.iter().for_each(|&i| seen[i] += 1);
    }
    assert!(seen.iter().all(|&c| c == 2), "{seen:?}");
    assert_ne!(plan.batch_items(0, 0, 2), plan.batch_items(0, 5, 2), "epochs reshuffle");
}

#[test]
fn repeated_samples_get_distinct_crops() {
    let cfg = micro_cfg();
    let data = tiny_data(3, 2);
    let plan = Plan::new(&cfg, data.items(cfg.strategy)).unwrap();
    let pairs = batch_pairs(&data, &cfg, &plan, 0).unwrap();
    assert_ne!(pairs[0].rect1, pairs[1].rect1);
}

#[test]
fn frame_gap_within_configured_range() {
    let mut cfg = micro_cfg();
    cfg.strategy = Strategy::FramePair;
    cfg.frame_gap = (2, 4);
    let frames: Vec<Image> = (0..8).map(|i| Image::filled(16, 16, [i as f32 / 8.0, 0.0, 0.0])).collect();
    let data = Dataset {
        sequences: vec![frames],
    };
    cfg.augment.hflip_p = 0.0;
    let mut gaps = std::collections::BTreeSet::new();
    for s in 0..200 {
        let pair = sample_views(&data, 0, &cfg, &mut Rng::new(1, s)).unwrap();
        let gap = ((pair.v2.pixel(0, 0)[0] - pair.v1.pixel(0, 0)[0]) * 8.0).round() as i64;
        gaps.insert(gap);
    }
    assert_eq!(gaps.into_iter().collect::<Vec<_>>(), vec![2, 3, 4]);
}

#[test]
fn runs_are_deterministic_across_worker_counts() {
    let data = tiny_data(4, 2);
    let cfg = micro_cfg();
    let a = train_with(&cfg, &data, None, &mut |_| {}).unwrap();
    let b = train_with(&TrainConfig { workers: 1, ..cfg.clone() }, &data, None, &mut |_| {}).unwrap();
    assert_eq!(a.records, b.records);
    assert_eq!(a.records.len(), 6);
    assert!(a.records.iter().all(|r| r.loss.is_finite()));
    for ((_, x), (_, y)) in a.params.weights.named().iter().zip(b.params.weights.named()) {
        assert!(x.bit_eq(y));
    }
}

#[test]
fn log_and_checkpoints_written() {
    let dir = tempfile::tempdir().unwrap();
    let data = tiny_data(4, 2);
    let cfg = TrainConfig {
        checkpoint_every: 3,
        ..micro_cfg()
    };
    let out = train_with(&cfg, &data, Some(dir.path()), &mut |_| {}).unwrap();
    let log = fs::read_to_string(dir.path().join("metrics.log")).unwrap();
    assert_eq!(parse_metrics(&log).unwrap(), out.records);
    assert!(log.lines().next().unwrap().starts_with("step=1 epoch=0 lr=0e0 loss="));
    assert!(dir.path().join("checkpoint_000003.cmae").exists());
    let ck: Checkpoint<f32> = load_checkpoint(&dir.path().join("final.cmae")).unwrap();
    assert_eq!(ck.step, 6);
    assert_eq!(ck.optim.t, 6);
    assert_eq!(ck.config, cfg);
    let before = probe_outputs(&out.params, &cfg).unwrap();
    let after = probe_outputs(&ck.params, &ck.config).unwrap();
    assert!(before.iter().zip(&after).all(|(a, b)| a.to_bits() == b.to_bits()));
}

#[test]
fn undersized_dataset_rejected() {
    let data = tiny_data(1, 1);
    assert!(matches!(train_with(&micro_cfg(), &data, None, &mut |_| {}), Err(TrainError::Data(_))));
}

#[test]
fn nonfinite_loss_aborts_with_dump() {
    let dir = tempfile::tempdir().unwrap();
    let mut data = tiny_data(4, 2);
    for seq in &mut data.sequences {
        for f in seq.iter_mut() {
            *f = Image::filled(16, 16, [f32::NAN, 0.0, 0.0]);
        }
    }
    let err = train_with(&micro_cfg(), &data, Some(dir.path()), &mut |_| {}).unwrap_err();
    assert!(matches!(err, TrainError::NonFinite { step: 1, .. }), "{err}");
    let dump = fs::read_to_string(dir.path().join("nonfinite_step_000001.txt")).unwrap();
    assert!(dump.contains("seed=0"));
}
