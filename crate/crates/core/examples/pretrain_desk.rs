//! Desk-scale pre-training on generated moving shapes.
//!
//! `cargo run --release --example pretrain_desk -- [steps] [batch] [lr] [warmup_epochs]`

use std::time::Instant;

use cropmae::numerics::{domain, Rng};
use cropmae::trainer::{train_with, Dataset, TrainConfig};
use cropmae::views::{generate_sequence, SynthConfig};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let args: Vec<f64> = std::env::args().skip(1).map(|a| a.parse()).collect::<Result<_, _>>()?;
    let steps = args.first().copied().unwrap_or(200.0) as u64;
    let batch = args.get(1).copied().unwrap_or(16.0) as usize;
    let lr = args.get(2).copied().unwrap_or(1e-3);
    let warmup = args.get(3).copied().unwrap_or(0.5);

    let synth = SynthConfig::default();
    let data = Dataset {
        sequences: (0..synth.sequences)
            .map(|i| generate_sequence(&mut Rng::new(0, domain::SYNTH | i as u64), &synth).frames)
            .collect(),
    };
    let cfg = TrainConfig {
        batch_size: batch,
        steps: Some(steps),
        ..TrainConfig::default()
    };
    let mut cfg = cfg;
    cfg.schedule.base_lr = lr;
    cfg.schedule.scale_lr = false;
    cfg.schedule.warmup_epochs = warmup;
    let start = Instant::now();
    let out = train_with(&cfg, &data, None, &mut |r| {
        if r.step % 100 == 0 {
            println!("{r}");
        }
    })?;
    let secs = start.elapsed().as_secs_f64();
    println!(
        "{} steps in {secs:.1}s ({:.3}s/step), mask ratio {:.5}",
        out.records.len(),
        secs / out.records.len() as f64,
        out.mask_ratio
    );
    let mean = |r: &[cropmae::trainer::StepRecord]| r.iter().map(|r| r.loss).sum::<f64>() / r.len().max(1) as f64;
    let n = out.records.len();
    let (head, tail) = (mean(&out.records[..n.min(100)]), mean(&out.records[n.saturating_sub(100)..]));
    println!("first-100 mean {head:.4}, last-100 mean {tail:.4}, ratio {:.3}", tail / head);
    Ok(())
}
