//! Propagates first-frame masks through generated sequences with a frozen
//! encoder and prints J, F, mIoU and PCK.
//!
//! `cargo run --release --example label_propagation -- [checkpoint.cmae]`
//!
//! Without a checkpoint a freshly initialized desk encoder is used, which
//! mostly shows the pipeline rather than learned correspondence.

use cropmae::model::{ModelConfig, ModelParams};
use cropmae::numerics::{domain, Rng};
use cropmae::propeval::{evaluate_frames, format_report, EvalConfig};
use cropmae::trainer::load_checkpoint;
use cropmae::views::{generate_sequence, SynthConfig};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let params = match std::env::args().nth(1) {
        Some(path) => load_checkpoint::<f32>(path.as_ref())?.params,
        None => ModelParams::init(ModelConfig::desk(), 0)?,
    };
    let synth = SynthConfig {
        size: params.config.patch.image_size,
        ..SynthConfig::default()
    };
    let cfg = EvalConfig::default();
    let mut reports = Vec::new();
    for i in 0..4u64 {
        let seq = generate_sequence(&mut Rng::new(100, domain::SYNTH | i), &synth);
        let r = evaluate_frames(&params, &format!("seq{i}"), &seq.frames, &seq.masks, Some(&seq.keypoints), &cfg)?;
        reports.push(r);
    }
    print!("{}", format_report(&reports, cfg.pck_alphas));
    Ok(())
}
