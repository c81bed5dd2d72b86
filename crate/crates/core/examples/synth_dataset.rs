//! Writes a small moving-shapes dataset and reads it back.
//!
//! `cargo run --example synth_dataset -- [out_dir]`

use std::path::PathBuf;

use cropmae::views::{scan_dataset, synth_moving_shapes, SynthConfig};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let out = PathBuf::from(std::env::args().nth(1).unwrap_or_else(|| "moving_shapes".into()));
    let cfg = SynthConfig {
        sequences: 4,
        ..SynthConfig::default()
    };
    synth_moving_shapes(0, &cfg, &out)?;
    for seq in scan_dataset(&out)? {
        let mask = seq.load_mask(0)?;
        let kps = seq.load_keypoints(0)?;
        println!(
            "{}: {} frames, {} objects, {} keypoints in frame 0",
            seq.name,
            seq.frames.len(),
            mask.max_label(),
            kps.len()
        );
    }
    Ok(())
}
