//! Generate data on disk, pre-train a tiny model, reload it and evaluate.

use cropmae::model::ModelConfig;
use cropmae::numerics::Tape;
use cropmae::propeval::{evaluate_sequence, format_report, EvalConfig};
use cropmae::trainer::{load_checkpoint, parse_metrics, train, TrainConfig};
use cropmae::views::{scan_dataset, synth_moving_shapes, Strategy, SynthConfig};

fn tiny(data: &std::path::Path, strategy: Strategy) -> TrainConfig {
    let mut cfg = TrainConfig::default();
    cfg.data = data.to_path_buf();
    cfg.strategy = strategy;
    cfg.model = ModelConfig::micro();
    cfg.model.patch.image_size = 16;
    cfg.augment.output_size = 16;
    cfg.batch_size = 4;
    cfg.steps = Some(3);
    cfg.mask_ratio = 0.75;
    cfg.schedule.scale_lr = false;
    cfg.schedule.base_lr = 1e-3;
    cfg
}

#[test]
fn synth_train_reload_evaluate() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data");
    let synth = SynthConfig {
        sequences: 3,
        frames: 4,
        size: 16,
        ..SynthConfig::default()
    };
    assert_eq!(synth_moving_shapes(1, &synth, &data).unwrap(), 3);

    let out = dir.path().join("run");
    let cfg = tiny(&data, Strategy::GlobalToLocal);
    let result = train(&cfg, &out).unwrap();
    let logged = parse_metrics(&std::fs::read_to_string(out.join("metrics.log")).unwrap()).unwrap();
    assert_eq!(logged.len(), 3);
    assert_eq!(logged, result.records);

    let ck = load_checkpoint::<f32>(&out.join("final.cmae")).unwrap();
    assert_eq!(ck.step, 3);
    assert_eq!((ck.config.seed, ck.config.model), (cfg.seed, cfg.model));
    for ((name, a), (_, b)) in ck.params.weights.named().iter().zip(result.params.weights.named()) {
        assert!(a.bit_eq(b), "{name} changed across save/load");
    }

    let seqs = scan_dataset(&data).unwrap();
    let reports: Vec<_> = seqs
        .iter()
        .map(|s| evaluate_sequence(&ck.params, s, &EvalConfig::default()).unwrap())
        .collect();
    for r in &reports {
        assert!((0.0..=1.0).contains(&r.j) && (0.0..=1.0).contains(&r.miou), "{r:?}");
        assert!(r.pck.is_some());
    }
    assert!(format_report(&reports, (0.1, 0.2)).ends_with("sequences=3\n"));

    // The reloaded encoder runs on its own tape.
    let tape = Tape::new();
    let frames = seqs[0].load_frames().unwrap();
    let tokens = ck.params.bind_frozen(&tape).encode(&frames[0], None, false).unwrap().tokens;
    assert_eq!(tokens.shape(), vec![17, 8]);
}

#[test]
fn frame_pair_strategy_trains_on_sequences() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data");
    let synth = SynthConfig {
        sequences: 4,
        frames: 6,
        size: 16,
        ..SynthConfig::default()
    };
    synth_moving_shapes(2, &synth, &data).unwrap();
    let mut cfg = tiny(&data, Strategy::FramePair);
    cfg.frame_gap = (1, 3);
    let result = train(&cfg, &dir.path().join("run")).unwrap();
    assert_eq!(result.plan.items, 4);
    assert!(result.records.iter().all(|r| r.loss.is_finite()));
}
