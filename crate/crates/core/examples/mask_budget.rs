//! Visible-patch counts per mask ratio and what they cost in attention.
//!
//! `cargo run --example mask_budget`

use cropmae::model::{count_attention_ops, make_mask_plan, resolve_mask_ratio, visible_count, ModelConfig, REFERENCE_PATCHES};
use cropmae::numerics::Rng;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let cfg = ModelConfig::vit_small_16();
    println!("ratio   visible/{REFERENCE_PATCHES}   encoder(V2) MACs");
    for ratio in [0.75, 0.90, 0.95, 0.985, 0.99] {
        let v = visible_count(REFERENCE_PATCHES, ratio);
        let cost = count_attention_ops(&cfg.encoder, &cfg.decoder, &cfg.patch, v);
        println!("{ratio:<7} {v:>4}           {:>12}", cost.encoder_v2);
    }

    // A ratio quoted for 196 patches keeps its visible count on a smaller grid.
    let desk = ModelConfig::desk();
    let n = desk.patch.n_patches();
    let ratio = resolve_mask_ratio(0.985, n)?;
    let plan = make_mask_plan(n, ratio, &mut Rng::new(0, 0))?;
    println!("desk grid: {n} patches, ratio 0.985 -> {ratio:.5}, visible {:?}", plan.visible);
    Ok(())
}
