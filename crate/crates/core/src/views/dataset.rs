//! On-disk dataset layout:
//!
//! ```text
//! <root>/seq_0000/frame_00000.ppm   colour frame (P6)
//!                /mask_00000.pgm    instance ids (P5), optional
//!                /kp_00000.txt      "id x y" per line, optional
//! ```

use std::fs;
use std::path::{Path, PathBuf};

use super::ppm::{load_pgm, load_ppm, save_pgm, save_ppm};
use super::{Image, LabelMap, ViewError};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Keypoint {
    pub id: usize,
    pub x: f64,
    pub y: f64,
}

pub fn format_keypoints(points: &[Keypoint]) -> String {
    points
        .iter()
        .map(|k| format!("{} {} {}\n", k.id, k.x, k.y))
        .collect()
}

pub fn parse_keypoints(text: &str) -> Result<Vec<Keypoint>, ViewError> {
    let mut offset = 0;
    let mut out = Vec::new();
    for line in text.split_inclusive('\n') {
        let fields: Vec<&str> = line.split_whitespace().collect();
        if !fields.is_empty() {
            let bad = || ViewError::Parse {
                offset,
                msg: format!("keypoint line {:?} is not \"id x y\"", line.trim_end()),
            };
            if fields.len() != 3 {
                return Err(bad());
            }
            out.push(Keypoint {
                id: fields[0].parse().map_err(|_| bad())?,
                x: fields[1].parse().map_err(|_| bad())?,
                y: fields[2].parse().map_err(|_| bad())?,
            });
        }
        offset += line.len();
    }
    Ok(out)
}

/// File names of one sequence directory, in frame order.
#[derive(Clone, Debug, PartialEq)]
pub struct SequenceFiles {
    pub name: String,
    pub dir: PathBuf,
    pub frames: Vec<PathBuf>,
}

impl SequenceFiles {
    pub fn mask_path(&self, frame: usize) -> PathBuf {
        self.dir.join(format!("mask_{frame:05}.pgm"))
    }

    pub fn keypoint_path(&self, frame: usize) -> PathBuf {
        self.dir.join(format!("kp_{frame:05}.txt"))
    }

    pub fn load_frames(&self) -> Result<Vec<Image>, ViewError> {
        self.frames.iter().map(load_ppm).collect()
    }

    pub fn load_mask(&self, frame: usize) -> Result<LabelMap, ViewError> {
        load_pgm(self.mask_path(frame))
    }

    pub fn load_keypoints(&self, frame: usize) -> Result<Vec<Keypoint>, ViewError> {
        parse_keypoints(&fs::read_to_string(self.keypoint_path(frame))?)
    }
}

fn frame_files(dir: &Path) -> Result<Vec<PathBuf>, ViewError> {
    let mut frames: Vec<PathBuf> = fs::read_dir(dir)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| {
            p.file_name()
                .and_then(|n| n.to_str())
                .is_some_and(|n| n.starts_with("frame_") && n.ends_with(".ppm"))
        })
        .collect();
    frames.sort();
    Ok(frames)
}

/// Lists sequences under `root`. A directory that itself holds frames is
/// treated as a single sequence.
pub fn scan_dataset(root: &Path) -> Result<Vec<SequenceFiles>, ViewError> {
    let own = frame_files(root)?;
    if !own.is_empty() {
        let name = root
            .file_name()
            .map_or_else(|| "seq".to_string(), |n| n.to_string_lossy().into_owned());
        return Ok(vec![SequenceFiles {
            name,
            dir: root.to_path_buf(),
            frames: own,
        }]);
    }
    let mut dirs: Vec<PathBuf> = fs::read_dir(root)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| {
            p.is_dir()
                && p.file_name()
                    .and_then(|n| n.to_str())
                    .is_some_and(|n| n.starts_with("seq_"))
        })
        .collect();
    dirs.sort();
    let mut out = Vec::new();
    for dir in dirs {
        let frames = frame_files(&dir)?;
        if !frames.is_empty() {
            out.push(SequenceFiles {
                name: dir.file_name().unwrap().to_string_lossy().into_owned(),
                dir,
                frames,
            });
        }
    }
    Ok(out)
}

pub fn write_sequence(dir: &Path, frames: &[Image], masks: &[LabelMap], keypoints: &[Vec<Keypoint>]) -> Result<(), ViewError> {
    fs::create_dir_all(dir)?;
    for (i, frame) in frames.iter().enumerate() {
        save_ppm(frame, dir.join(format!("frame_{i:05}.ppm")))?;
    }
    for (i, mask) in masks.iter().enumerate() {
        save_pgm(mask, dir.join(format!("mask_{i:05}.pgm")))?;
    }
    for (i, kp) in keypoints.iter().enumerate() {
        fs::write(dir.join(format!("kp_{i:05}.txt")), format_keypoints(kp))?;
    }
    Ok(())
}
