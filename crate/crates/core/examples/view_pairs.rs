//! Builds one view pair per cropping strategy from a generated frame and
//! writes V1/V2 next to the source.
//!
//! `cargo run --release --example view_pairs -- [out_dir]`

use std::path::PathBuf;

use cropmae::numerics::{domain, Rng};
use cropmae::views::{generate_sequence, generate_view_pair, generate_view_pair_from_frames, save_ppm, AugmentConfig, Strategy, SynthConfig};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let out = PathBuf::from(std::env::args().nth(1).unwrap_or_else(|| "view_pairs".into()));
    std::fs::create_dir_all(&out)?;
    let synth = SynthConfig {
        size: 128,
        ..SynthConfig::default()
    };
    let frames = generate_sequence(&mut Rng::new(3, domain::SYNTH), &synth).frames;
    save_ppm(&frames[0], out.join("source.ppm"))?;
    let aug = AugmentConfig::default();
    let mut rng = Rng::new(3, domain::VIEWS);
    for strategy in [
        Strategy::Same,
        Strategy::Random,
        Strategy::LocalToGlobal,
        Strategy::GlobalToLocal,
        Strategy::FramePair,
    ] {
        let pair = match strategy {
            Strategy::FramePair => generate_view_pair_from_frames(&frames[0], &frames[synth.frames - 1], &aug, &mut rng)?,
            s => generate_view_pair(&frames[0], s, &aug, &mut rng)?,
        };
        println!("{:<16} v1 {:?} flip={}  v2 {:?} flip={}", strategy.to_string(), pair.rect1, pair.flip1, pair.rect2, pair.flip2);
        save_ppm(&pair.v1, out.join(format!("{strategy}_v1.ppm")))?;
        save_ppm(&pair.v2, out.join(format!("{strategy}_v2.ppm")))?;
    }
    println!("wrote {}", out.display());
    Ok(())
}
