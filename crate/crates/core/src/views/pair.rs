use std::fmt;
use std::str::FromStr;

use crate::numerics::Rng;

use super::augment::{color_jitter, gaussian_blur, JitterStrength};
use super::crop::{hflip, resize_bilinear, sample_crop_rect, CropRect};
use super::{Image, ViewError};

/// How the context view (V1) and the masked target view (V2) are cropped.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Strategy {
    /// One crop and flip serve as both views.
    Same,
    /// Two independent crops of the source.
    Random,
    /// V2 is a crop of the source, V1 a crop inside V2.
    LocalToGlobal,
    /// V1 is a crop of the source, V2 a crop inside V1.
    GlobalToLocal,
    /// Two frames of a video with one shared crop.
    FramePair,
}

impl Strategy {
    pub const ALL: [Strategy; 5] = [
        Strategy::Same,
        Strategy::Random,
        Strategy::LocalToGlobal,
        Strategy::GlobalToLocal,
        Strategy::FramePair,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            Strategy::Same => "same",
            Strategy::Random => "random",
            Strategy::LocalToGlobal => "local-to-global",
            Strategy::GlobalToLocal => "global-to-local",
            Strategy::FramePair => "frame-pair",
        }
    }
}

impl fmt::Display for Strategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Strategy {
    type Err = ViewError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Strategy::ALL
            .into_iter()
            .find(|st| st.name() == s)
            .ok_or_else(|| ViewError::Param(format!("unknown crop strategy {s:?}")))
    }
}

/// Augmentation settings for both views.
///
/// `area_outer` bounds crops taken from the source image (the `[a, c]` range);
/// `area_inner` bounds crops nested inside another crop, relative to that
/// crop's area (the `[b, d]` range). Random views draw V2 from `area_inner`
/// relative to the source.
#[derive(Clone, Debug, PartialEq)]
pub struct AugmentConfig {
    pub area_outer: (f64, f64),
    pub area_inner: (f64, f64),
    pub aspect: (f64, f64),
    pub hflip_p: f64,
    pub jitter: Option<JitterStrength>,
    pub blur_sigma: Option<(f64, f64)>,
    pub output_size: usize,
}

impl Default for AugmentConfig {
    /// Video-source settings: outer area `[0.5, 1]`, inner `[0.3, 0.6]`,
    /// aspect `[3/4, 4/3]`, flip 0.5, 64-pixel output.
    fn default() -> Self {
        Self {
            area_outer: (0.5, 1.0),
            area_inner: (0.3, 0.6),
            aspect: (3.0 / 4.0, 4.0 / 3.0),
            hflip_p: 0.5,
            jitter: None,
            blur_sigma: None,
            output_size: 64,
        }
    }
}

impl AugmentConfig {
    /// Still-image settings (outer area `[0.1, 1]`).
    pub fn still_images() -> Self {
        Self {
            area_outer: (0.1, 1.0),
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<(), ViewError> {
        let range_ok = |(lo, hi): (f64, f64)| lo > 0.0 && lo <= hi && hi <= 1.0;
        if !range_ok(self.area_outer) || !range_ok(self.area_inner) {
            return Err(ViewError::Param(format!(
                "area ranges {:?} / {:?} must satisfy 0 < lo ≤ hi ≤ 1",
                self.area_outer, self.area_inner
            )));
        }
        if !(self.aspect.0 > 0.0 && self.aspect.0 <= self.aspect.1) {
            return Err(ViewError::Param(format!("aspect range {:?} invalid", self.aspect)));
        }
        if !(0.0..=1.0).contains(&self.hflip_p) {
            return Err(ViewError::Param(format!("flip probability {}", self.hflip_p)));
        }
        if self.output_size == 0 {
            return Err(ViewError::Param("output size must be positive".into()));
        }
        if let Some(j) = &self.jitter {
            if j.brightness < 0.0 || j.contrast < 0.0 || j.saturation < 0.0 {
                return Err(ViewError::Param("jitter strengths must be nonnegative".into()));
            }
        }
        if let Some((lo, hi)) = self.blur_sigma {
            if lo < 0.0 || hi < lo {
                return Err(ViewError::Param(format!("blur sigma range ({lo}, {hi}) invalid")));
            }
        }
        Ok(())
    }
}

/// Context view V1 (never masked) and target view V2 (masked downstream).
#[derive(Clone, Debug, PartialEq)]
pub struct ViewPair {
    pub v1: Image,
    pub v2: Image,
    pub rect1: CropRect,
    pub rect2: CropRect,
    pub flip1: bool,
    pub flip2: bool,
    pub strategy: Strategy,
}

fn render(image: &Image, rect: &CropRect, flip: bool, cfg: &AugmentConfig, rng: &mut Rng) -> Result<Image, ViewError> {
    let size = cfg.output_size;
    let mut view = resize_bilinear(image, rect, size, size)?;
    if flip {
        view = hflip(&view);
    }
    if let Some(j) = &cfg.jitter {
        view = color_jitter(&view, rng, j);
    }
    if let Some(range) = cfg.blur_sigma {
        view = gaussian_blur(&view, rng, range);
    }
    Ok(view)
}

/// Builds a (V1, V2) pair from one image under `strategy`.
///
/// `FramePair` on a single image degenerates to `Same`.
pub fn generate_view_pair(image: &Image, strategy: Strategy, cfg: &AugmentConfig, rng: &mut Rng) -> Result<ViewPair, ViewError> {
    cfg.validate()?;
    let (h, w) = (image.height(), image.width());
    if h < 2 || w < 2 {
        return Err(ViewError::Param(format!("source {h}×{w} smaller than 2×2")));
    }
    let nested = |rng: &mut Rng, outer: &CropRect| {
        let inner = sample_crop_rect(rng, outer.h, outer.w, cfg.area_inner, cfg.aspect);
        outer.compose(&inner)
    };
    let (rect1, rect2) = match strategy {
        Strategy::Same | Strategy::FramePair => {
            let r = sample_crop_rect(rng, h, w, cfg.area_outer, cfg.aspect);
            let flip = rng.bernoulli(cfg.hflip_p);
            let view = render(image, &r, flip, cfg, rng)?;
            return Ok(ViewPair {
                v1: view.clone(),
                v2: view,
                rect1: r,
                rect2: r,
                flip1: flip,
                flip2: flip,
                strategy,
            });
        }
        Strategy::Random => {
            let r1 = sample_crop_rect(rng, h, w, cfg.area_outer, cfg.aspect);
            let r2 = sample_crop_rect(rng, h, w, cfg.area_inner, cfg.aspect);
            (r1, r2)
        }
        Strategy::LocalToGlobal => {
            let r2 = sample_crop_rect(rng, h, w, cfg.area_outer, cfg.aspect);
            (nested(rng, &r2), r2)
        }
        Strategy::GlobalToLocal => {
            let r1 = sample_crop_rect(rng, h, w, cfg.area_outer, cfg.aspect);
            let r2 = nested(rng, &r1);
            (r1, r2)
        }
    };
    let flip1 = rng.bernoulli(cfg.hflip_p);
    let flip2 = rng.bernoulli(cfg.hflip_p);
    let v1 = render(image, &rect1, flip1, cfg, rng)?;
    let v2 = render(image, &rect2, flip2, cfg, rng)?;
    Ok(ViewPair {
        v1,
        v2,
        rect1,
        rect2,
        flip1,
        flip2,
        strategy,
    })
}

/// Builds a pair from two frames of one video with a single shared crop,
/// flip and appearance augmentation. Choosing the frame gap is up to the caller.
pub fn generate_view_pair_from_frames(
    frame_a: &Image,
    frame_b: &Image,
    cfg: &AugmentConfig,
    rng: &mut Rng,
) -> Result<ViewPair, ViewError> {
    cfg.validate()?;
    let (h, w) = (frame_a.height(), frame_a.width());
    if (frame_b.height(), frame_b.width()) != (h, w) {
        return Err(ViewError::Param(format!(
            "frame sizes differ: {h}×{w} vs {}×{}",
            frame_b.height(),
            frame_b.width()
        )));
    }
    let rect = sample_crop_rect(rng, h, w, cfg.area_outer, cfg.aspect);
    let flip = rng.bernoulli(cfg.hflip_p);
    let mut twin = rng.clone();
    let v1 = render(frame_a, &rect, flip, cfg, rng)?;
    let v2 = render(frame_b, &rect, flip, cfg, &mut twin)?;
    Ok(ViewPair {
        v1,
        v2,
        rect1: rect,
        rect2: rect,
        flip1: flip,
        flip2: flip,
        strategy: Strategy::FramePair,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn source(h: usize, w: usize) -> Image {
        Image::from_fn(h, w, |y, x| {
            [
                ((x * 13 + y * 7) % 17) as f32 / 16.0,
                (x as f32 / w as f32),
                (y as f32 / h as f32),
            ]
        })
    }

    #[test]
    fn strategy_names_roundtrip() {
        for s in Strategy::ALL {
            assert_eq!(s.name().parse::<Strategy>().unwrap(), s);
        }
        assert!("diagonal".parse::<Strategy>().is_err());
    }

    #[test]
    fn same_views_are_bitwise_equal() {
        let img = source(40, 50);
        let cfg = AugmentConfig {
            output_size: 16,
            ..AugmentConfig::default()
        };
        for seed in 0..20 {
            let p = generate_view_pair(&img, Strategy::Same, &cfg, &mut Rng::new(seed, 0)).unwrap();
            assert_eq!(p.v1, p.v2);
            assert_eq!(p.rect1, p.rect2);
            assert_eq!(p.flip1, p.flip2);
        }
    }

    #[test]
    fn containment_per_strategy() {
        let img = source(64, 64);
        let cfg = AugmentConfig {
            output_size: 8,
            ..AugmentConfig::default()
        };
        let mut rng = Rng::new(1, 1);
        for _ in 0..2000 {
            let g = generate_view_pair(&img, Strategy::GlobalToLocal, &cfg, &mut rng).unwrap();
            assert!(g.rect1.contains(&g.rect2));
            let l = generate_view_pair(&img, Strategy::LocalToGlobal, &cfg, &mut rng).unwrap();
            assert!(l.rect2.contains(&l.rect1));
            let r = generate_view_pair(&img, Strategy::Random, &cfg, &mut rng).unwrap();
            assert!(r.rect1.fits(64, 64) && r.rect2.fits(64, 64));
        }
    }

    #[test]
    fn output_resolution_and_range() {
        let img = source(30, 45);
        let cfg = AugmentConfig {
            output_size: 12,
            jitter: Some(JitterStrength {
                brightness: 0.4,
                contrast: 0.4,
                saturation: 0.4,
            }),
            blur_sigma: Some((0.1, 1.0)),
            ..AugmentConfig::default()
        };
        let p = generate_view_pair(&img, Strategy::Random, &cfg, &mut Rng::new(2, 2)).unwrap();
        for v in [&p.v1, &p.v2] {
            assert_eq!((v.height(), v.width()), (12, 12));
            assert!(v.data().iter().all(|x| (0.0..=1.0).contains(x)));
        }
    }

    #[test]
    fn generation_is_pure_in_the_stream() {
        let img = source(32, 32);
        let cfg = AugmentConfig {
            output_size: 16,
            ..AugmentConfig::default()
        };
        for s in Strategy::ALL {
            let a = generate_view_pair(&img, s, &cfg, &mut Rng::new(5, 77)).unwrap();
            let b = generate_view_pair(&img, s, &cfg, &mut Rng::new(5, 77)).unwrap();
            assert_eq!(a, b);
        }
    }

    #[test]
    fn flips_are_fair() {
        let img = source(8, 8);
        let cfg = AugmentConfig {
            output_size: 2,
            ..AugmentConfig::default()
        };
        let mut rng = Rng::new(10, 3);
        let trials = 100_000;
        let flips = (0..trials)
            .filter(|_| generate_view_pair(&img, Strategy::Random, &cfg, &mut rng).unwrap().flip2)
            .count();
        let frac = flips as f64 / trials as f64;
        assert!((frac - 0.5).abs() <= 0.01, "{frac}");
    }

    #[test]
    fn frames_degenerate_to_same_and_differ_otherwise() {
        let a = source(24, 24);
        let b = Image::from_fn(24, 24, |y, x| a.pixel(y, (x + 3) % 24));
        let cfg = AugmentConfig {
            output_size: 8,
            ..AugmentConfig::default()
        };
        let same = generate_view_pair_from_frames(&a, &a, &cfg, &mut Rng::new(0, 4)).unwrap();
        assert_eq!(same.v1, same.v2);
        let diff = generate_view_pair_from_frames(&a, &b, &cfg, &mut Rng::new(0, 4)).unwrap();
        assert_ne!(diff.v1, diff.v2);
        assert_eq!(diff.rect1, diff.rect2);

        let small = source(12, 24);
        assert!(generate_view_pair_from_frames(&a, &small, &cfg, &mut Rng::new(0, 0)).is_err());
    }

    #[test]
    fn tiny_source_rejected() {
        let img = Image::filled(1, 5, [0.5; 3]);
        assert!(generate_view_pair(&img, Strategy::Random, &AugmentConfig::default(), &mut Rng::new(0, 0)).is_err());
    }

    #[test]
    fn invalid_ranges_rejected() {
        let cfg = AugmentConfig {
            area_inner: (0.7, 0.6),
            ..AugmentConfig::default()
        };
        assert!(cfg.validate().is_err());
    }
}
