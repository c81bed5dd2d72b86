//! Property checks across module boundaries.

use cropmae::model::{make_mask_plan, visible_count};
use cropmae::numerics::Rng;
use cropmae::optim::{lr_at, ScheduleConfig};
use cropmae::propeval::{propagate, FeatureGrid, LabelField, PropagationConfig};
use cropmae::views::ppm::{decode_pgm, decode_ppm, encode_pgm, encode_ppm};
use cropmae::views::{generate_view_pair, AugmentConfig, Image, LabelMap, Strategy};
use proptest::prelude::*;

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn mask_plan_partitions_the_grid(n in 1usize..300, ratio in 0.0f64..0.999, seed in any::<u64>()) {
        let v = visible_count(n, ratio);
        let plan = make_mask_plan(n, ratio, &mut Rng::new(seed, 0));
        if v == 0 {
            prop_assert!(plan.is_err());
            return Ok(());
        }
        let plan = plan.unwrap();
        prop_assert_eq!(plan.visible.len(), v);
        let mut all: Vec<usize> = plan.visible.iter().copied().chain(plan.masked()).collect();
        all.sort_unstable();
        prop_assert_eq!(all, (0..n).collect::<Vec<_>>());
    }

    #[test]
    fn global_to_local_nests(seed in any::<u64>(), h in 16usize..96, w in 16usize..96) {
        let img = Image::filled(h, w, [0.5; 3]);
        let aug = AugmentConfig { output_size: 16, ..AugmentConfig::default() };
        let pair = generate_view_pair(&img, Strategy::GlobalToLocal, &aug, &mut Rng::new(seed, 1)).unwrap();
        prop_assert!(pair.rect1.contains(&pair.rect2), "{:?} ⊄ {:?}", pair.rect2, pair.rect1);
        prop_assert_eq!((pair.v2.height(), pair.v2.width()), (16, 16));
    }

    #[test]
    fn schedule_stays_within_bounds(step in 0u64..5000, spe in 1u64..100) {
        let cfg = ScheduleConfig::default();
        let lr = lr_at(step, spe, &cfg);
        prop_assert!(lr >= 0.0 && lr <= cfg.peak_lr() + 1e-15, "{lr}");
    }

    #[test]
    fn ppm_roundtrip_is_exact_on_8bit_values(h in 1usize..12, w in 1usize..12, seed in any::<u64>()) {
        let mut rng = Rng::new(seed, 2);
        let img = Image::from_fn(h, w, |_, _| [0; 3].map(|_| rng.below(256) as f32 / 255.0));
        let back = decode_ppm(&encode_ppm(&img)).unwrap();
        prop_assert_eq!(back.max_abs_diff(&img), 0.0);
        let labels = LabelMap::new(h, w, (0..h * w).map(|_| rng.below(256) as u8).collect()).unwrap();
        prop_assert_eq!(decode_pgm(&encode_pgm(&labels)).unwrap(), labels);
    }

    #[test]
    fn propagated_scores_are_distributions(seed in any::<u64>(), g in 2usize..6, frames in 2usize..5, k in 2usize..4) {
        let mut rng = Rng::new(seed, 3);
        let grids: Vec<FeatureGrid> = (0..frames)
            .map(|_| FeatureGrid::normalized(g, g, 4, (0..g * g * 4).map(|_| rng.normal() as f32).collect()).unwrap())
            .collect();
        let labels: Vec<u8> = (0..g * g).map(|_| rng.below(k) as u8).collect();
        let first = LabelField::one_hot(g, g, k, &labels).unwrap();
        let cfg = PropagationConfig { top_k: 1 + rng.below(5), queue_len: 2, radius: 1 + rng.below(3), temperature: 0.07 };
        for field in propagate(&grids, &first, &cfg).unwrap() {
            for s in field.data.chunks_exact(k) {
                prop_assert!(s.iter().all(|&v| (0.0..=1.0 + 1e-6).contains(&v)));
                prop_assert!((s.iter().sum::<f32>() - 1.0).abs() < 1e-5);
            }
        }
    }
}
