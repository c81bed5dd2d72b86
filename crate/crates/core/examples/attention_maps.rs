//! CLS-to-patch attention of every head in the last encoder layer, written
//! as upsampled greyscale images.
//!
//! `cargo run --release --example attention_maps -- [checkpoint.cmae] [out_dir]`

use std::path::PathBuf;

use cropmae::model::{extract_cls_attention, ModelConfig, ModelParams};
use cropmae::numerics::{domain, Rng};
use cropmae::trainer::load_checkpoint;
use cropmae::views::{generate_sequence, save_gray_ppm, save_ppm, SynthConfig};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let args: Vec<String> = std::env::args().skip(1).collect();
    let params = match args.first().filter(|a| a.ends_with(".cmae")) {
        Some(path) => load_checkpoint::<f32>(path.as_ref())?.params,
        None => ModelParams::init(ModelConfig::desk(), 0)?,
    };
    let out = PathBuf::from(args.last().filter(|a| !a.ends_with(".cmae")).map_or("attention_maps", |s| s));
    std::fs::create_dir_all(&out)?;

    let size = params.config.patch.image_size;
    let synth = SynthConfig {
        size,
        frames: 1,
        ..SynthConfig::default()
    };
    let frame = generate_sequence(&mut Rng::new(7, domain::SYNTH), &synth).frames.remove(0);
    save_ppm(&frame, out.join("input.ppm"))?;

    let maps = extract_cls_attention(&params, &frame, None)?;
    let (heads, g) = (maps.shape()[0], maps.shape()[1]);
    for h in 0..heads {
        let m = &maps.data()[h * g * g..(h + 1) * g * g];
        let peak = m.iter().copied().fold(f32::MIN_POSITIVE, f32::max);
        let up: Vec<f32> = (0..size * size)
            .map(|i| m[(i / size) * g / size * g + (i % size) * g / size] / peak)
            .collect();
        save_gray_ppm(&up, size, size, out.join(format!("head_{h:02}.ppm")))?;
        let mass: f32 = m.iter().sum();
        println!("head {h}: patch mass {mass:.3}, peak {peak:.4}");
    }
    println!("wrote {}", out.display());
    Ok(())
}
