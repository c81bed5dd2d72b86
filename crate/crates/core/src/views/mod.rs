//! Image ingestion, synthetic videos and (V1, V2) view-pair construction.

mod augment;
mod crop;
pub mod dataset;
mod image;
pub mod ppm;
mod pair;
pub mod synth;

pub use augment::{blur_with_sigma, color_jitter, gaussian_blur, gaussian_kernel, JitterStrength};
pub use crop::{hflip, resize_bilinear, sample_crop_rect, CropRect};
pub use dataset::{scan_dataset, Keypoint, SequenceFiles};
pub use image::{Image, LabelMap, CHANNELS};
pub use pair::{generate_view_pair, generate_view_pair_from_frames, AugmentConfig, Strategy, ViewPair};
pub use ppm::{load_pgm, load_ppm, save_gray_ppm, save_pgm, save_ppm};
pub use synth::{generate_sequence, synth_moving_shapes, SynthConfig, SynthSequence};

use thiserror::Error;

#[derive(Debug, Error)]
pub enum ViewError {
    #[error("parse error at byte {offset}: {msg}")]
    Parse { offset: usize, msg: String },
    #[error("invalid parameter: {0}")]
    Param(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}
