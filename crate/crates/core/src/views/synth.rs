//! Procedural "moving shapes" videos: textured backgrounds with one to three
//! translating rectangles or ellipses, plus instance masks and keypoints.

use std::f32::consts::TAU;
use std::path::Path;

use crate::numerics::{domain, Rng};

use super::dataset::{write_sequence, Keypoint};
use super::{Image, LabelMap, ViewError};

#[derive(Clone, Debug, PartialEq)]
pub struct SynthConfig {
    pub sequences: usize,
    pub frames: usize,
    pub size: usize,
    pub max_objects: usize,
    /// Largest per-frame displacement along each axis, in pixels.
    pub max_speed: i64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            sequences: 200,
            frames: 8,
            size: 64,
            max_objects: 3,
            max_speed: 2,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ShapeKind {
    Rect,
    Ellipse,
}

/// One object's geometry: integer centre at frame 0, half extents, velocity.
#[derive(Clone, Debug, PartialEq)]
pub struct ObjectTrack {
    pub id: u8,
    pub kind: ShapeKind,
    pub center: (i64, i64),
    pub half: (i64, i64),
    pub velocity: (i64, i64),
    color: [f32; 3],
    stripe_period: f32,
}

impl ObjectTrack {
    pub fn center_at(&self, frame: usize) -> (i64, i64) {
        let t = frame as i64;
        (self.center.0 + self.velocity.0 * t, self.center.1 + self.velocity.1 * t)
    }

    fn covers(&self, frame: usize, x: i64, y: i64) -> bool {
        let (cx, cy) = self.center_at(frame);
        let (dx, dy) = (x - cx, y - cy);
        match self.kind {
            ShapeKind::Rect => dx.abs() <= self.half.0 && dy.abs() <= self.half.1,
            ShapeKind::Ellipse => {
                let (hx, hy) = (self.half.0 as f64, self.half.1 as f64);
                (dx as f64 / hx).powi(2) + (dy as f64 / hy).powi(2) <= 1.0
            }
        }
    }

    fn shade(&self, frame: usize, x: i64) -> [f32; 3] {
        let (cx, _) = self.center_at(frame);
        let stripe = 0.85 + 0.15 * (TAU * (x - cx) as f32 / self.stripe_period).cos();
        self.color.map(|c| c * stripe)
    }

    /// Keypoints: centre, then the four half-way points toward the corners.
    pub fn keypoints_at(&self, frame: usize) -> Vec<Keypoint> {
        let (cx, cy) = self.center_at(frame);
        let (qx, qy) = (self.half.0 / 2, self.half.1 / 2);
        let base = (usize::from(self.id) - 1) * 5;
        [(0, 0), (-qx, -qy), (qx, -qy), (-qx, qy), (qx, qy)]
            .iter()
            .enumerate()
            .map(|(j, &(ox, oy))| Keypoint {
                id: base + j,
                x: (cx + ox) as f64,
                y: (cy + oy) as f64,
            })
            .collect()
    }
}

/// An in-memory generated sequence.
#[derive(Clone, Debug)]
pub struct SynthSequence {
    pub frames: Vec<Image>,
    pub masks: Vec<LabelMap>,
    pub keypoints: Vec<Vec<Keypoint>>,
    pub objects: Vec<ObjectTrack>,
}

struct Background {
    base: [f32; 3],
    accent: [f32; 3],
    freq: (f32, f32),
    phase: f32,
    checker: usize,
}

impl Background {
    fn sample(rng: &mut Rng, size: usize) -> Self {
        let color = |rng: &mut Rng| [0; 3].map(|_| rng.uniform_range(0.15, 0.85) as f32);
        let angle = rng.uniform_range(0.0, std::f64::consts::TAU) as f32;
        let cycles = rng.uniform_range(1.0, 3.0) as f32;
        Self {
            base: color(rng),
            accent: color(rng),
            freq: (cycles * angle.cos() / size as f32, cycles * angle.sin() / size as f32),
            phase: rng.uniform_range(0.0, std::f64::consts::TAU) as f32,
            checker: 4 + rng.below(5),
        }
    }

    fn at(&self, y: usize, x: usize) -> [f32; 3] {
        let wave = 0.5 + 0.5 * (TAU * (self.freq.0 * x as f32 + self.freq.1 * y as f32) + self.phase).sin();
        let check = if ((x / self.checker) + (y / self.checker)) % 2 == 0 { 0.06 } else { -0.06 };
        let mut out = [0.0; 3];
        for c in 0..3 {
            out[c] = self.base[c] + (self.accent[c] - self.base[c]) * wave + check;
        }
        out
    }
}

fn sample_object(rng: &mut Rng, id: u8, cfg: &SynthConfig) -> ObjectTrack {
    let size = cfg.size as i64;
    let lo = (size / 10).max(1);
    let hi = (size / 5).max(lo);
    let half = (rng.int_inclusive(lo as usize, hi as usize) as i64, rng.int_inclusive(lo as usize, hi as usize) as i64);
    let span = (cfg.frames.max(1) - 1) as i64;
    let mut axis = |half: i64| -> (i64, i64) {
        let v = rng.int_inclusive(0, (2 * cfg.max_speed) as usize) as i64 - cfg.max_speed;
        // Start positions keeping the whole trajectory inside the frame.
        let start_lo = half - (v * span).min(0);
        let start_hi = size - 1 - half - (v * span).max(0);
        if start_lo <= start_hi {
            (rng.int_inclusive(start_lo as usize, start_hi as usize) as i64, v)
        } else {
            let still_hi = (size - 1 - half).max(half);
            (rng.int_inclusive(half as usize, still_hi as usize) as i64, 0)
        }
    };
    let (cx, vx) = axis(half.0);
    let (cy, vy) = axis(half.1);
    let kind = if rng.bernoulli(0.5) { ShapeKind::Rect } else { ShapeKind::Ellipse };
    let mut color = [0; 3].map(|_| rng.uniform_range(0.0, 1.0) as f32);
    // Saturate one channel so objects stand out from the muted background.
    color[rng.below(3)] = 1.0;
    ObjectTrack {
        id,
        kind,
        center: (cx, cy),
        half,
        velocity: (vx, vy),
        color,
        stripe_period: rng.uniform_range(4.0, 10.0) as f32,
    }
}

/// Generates one sequence; later objects are drawn on top of earlier ones.
pub fn generate_sequence(rng: &mut Rng, cfg: &SynthConfig) -> SynthSequence {
    let bg = Background::sample(rng, cfg.size);
    let count = 1 + rng.below(cfg.max_objects.clamp(1, 3));
    let objects: Vec<ObjectTrack> = (1..=count as u8).map(|id| sample_object(rng, id, cfg)).collect();
    let mut frames = Vec::with_capacity(cfg.frames);
    let mut masks = Vec::with_capacity(cfg.frames);
    let mut keypoints = Vec::with_capacity(cfg.frames);
    for f in 0..cfg.frames {
        let mut mask = LabelMap::filled(cfg.size, cfg.size, 0);
        let frame = Image::from_fn(cfg.size, cfg.size, |y, x| {
            let top = objects
                .iter()
                .rev()
                .find(|o| o.covers(f, x as i64, y as i64));
            match top {
                Some(o) => {
                    mask.data[y * cfg.size + x] = o.id;
                    o.shade(f, x as i64)
                }
                None => bg.at(y, x),
            }
        });
        frames.push(frame);
        masks.push(mask);
        keypoints.push(objects.iter().flat_map(|o| o.keypoints_at(f)).collect());
    }
    SynthSequence {
        frames,
        masks,
        keypoints,
        objects,
    }
}

/// Writes `cfg.sequences` sequences under `out_dir` in the dataset layout.
/// Sequence `i` draws from stream `(seed, SYNTH | i)`, so output is a pure
/// function of `(seed, cfg)`.
pub fn synth_moving_shapes(seed: u64, cfg: &SynthConfig, out_dir: &Path) -> Result<usize, ViewError> {
    if cfg.sequences == 0 || cfg.frames == 0 || cfg.size < 8 {
        return Err(ViewError::Param(format!(
            "need ≥1 sequence, ≥1 frame and size ≥ 8 (got {}, {}, {})",
            cfg.sequences, cfg.frames, cfg.size
        )));
    }
    std::fs::create_dir_all(out_dir)?;
    for i in 0..cfg.sequences {
        let mut rng = Rng::new(seed, domain::SYNTH | i as u64);
        let seq = generate_sequence(&mut rng, cfg);
        write_sequence(&out_dir.join(format!("seq_{i:04}")), &seq.frames, &seq.masks, &seq.keypoints)?;
    }
    Ok(cfg.sequences)
}
