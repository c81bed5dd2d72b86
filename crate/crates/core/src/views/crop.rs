use crate::numerics::Rng;

use super::{Image, ViewError};

const CROP_ATTEMPTS: usize = 10;

/// Axis-aligned crop in source pixel coordinates.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct CropRect {
    pub x: usize,
    pub y: usize,
    pub w: usize,
    pub h: usize,
}

impl CropRect {
    pub fn full(height: usize, width: usize) -> Self {
        Self {
            x: 0,
            y: 0,
            w: width,
            h: height,
        }
    }

    pub fn area(&self) -> usize {
        self.w * self.h
    }

    pub fn fits(&self, height: usize, width: usize) -> bool {
        self.w >= 1 && self.h >= 1 && self.x + self.w <= width && self.y + self.h <= height
    }

    pub fn contains(&self, other: &CropRect) -> bool {
        other.x >= self.x
            && other.y >= self.y
            && other.x + other.w <= self.x + self.w
            && other.y + other.h <= self.y + self.h
    }

    /// Maps a rect expressed relative to `self` back to source coordinates.
    pub fn compose(&self, inner: &CropRect) -> CropRect {
        CropRect {
            x: self.x + inner.x,
            y: self.y + inner.y,
            w: inner.w,
            h: inner.h,
        }
    }
}

/// Random-resized-crop geometry: area fraction uniform in `area_range`, aspect
/// ratio (w/h) log-uniform in `aspect_range`, up to ten placement attempts and
/// then a centred crop at the largest size the bounds allow.
///
/// Extents are floored, so the realised area never exceeds the upper bound.
pub fn sample_crop_rect(
    rng: &mut Rng,
    src_h: usize,
    src_w: usize,
    area_range: (f64, f64),
    aspect_range: (f64, f64),
) -> CropRect {
    let area = (src_h * src_w) as f64;
    let (log_lo, log_hi) = (aspect_range.0.ln(), aspect_range.1.ln());
    for _ in 0..CROP_ATTEMPTS {
        let target = area * rng.uniform_range(area_range.0, area_range.1);
        let aspect = rng.uniform_range(log_lo, log_hi).exp();
        let w = (target * aspect).sqrt().floor() as usize;
        let h = (target / aspect).sqrt().floor() as usize;
        if (1..=src_w).contains(&w) && (1..=src_h).contains(&h) {
            let x = rng.int_inclusive(0, src_w - w);
            let y = rng.int_inclusive(0, src_h - h);
            return CropRect { x, y, w, h };
        }
    }
    fallback_rect(src_h, src_w, area_range.1, aspect_range)
}

fn fallback_rect(src_h: usize, src_w: usize, max_area: f64, aspect_range: (f64, f64)) -> CropRect {
    let src_ratio = src_w as f64 / src_h as f64;
    let aspect = src_ratio.clamp(aspect_range.0, aspect_range.1);
    let (mut w, mut h) = if src_ratio > aspect {
        ((src_h as f64 * aspect).floor(), src_h as f64)
    } else {
        (src_w as f64, (src_w as f64 / aspect).floor())
    };
    let cap = max_area * (src_h * src_w) as f64;
    if w * h > cap {
        let s = (cap / (w * h)).sqrt();
        w = (w * s).floor();
        h = (h * s).floor();
    }
    let w = (w as usize).clamp(1, src_w);
    let h = (h as usize).clamp(1, src_h);
    CropRect {
        x: (src_w - w) / 2,
        y: (src_h - h) / 2,
        w,
        h,
    }
}

/// Bilinear resize of `rect` to `out_h × out_w` (half-pixel centres, edge clamp
/// inside the rect).
pub fn resize_bilinear(image: &Image, rect: &CropRect, out_h: usize, out_w: usize) -> Result<Image, ViewError> {
    if !rect.fits(image.height(), image.width()) {
        return Err(ViewError::Param(format!(
            "crop {rect:?} outside {}×{} image",
            image.height(),
            image.width()
        )));
    }
    if out_h == 0 || out_w == 0 {
        return Err(ViewError::Param("zero output extent".into()));
    }
    let axis = |out: usize, extent: usize| -> Vec<(usize, usize, f32)> {
        let scale = extent as f64 / out as f64;
        (0..out)
            .map(|o| {
                let s = ((o as f64 + 0.5) * scale - 0.5).clamp(0.0, (extent - 1) as f64);
                let i0 = s.floor() as usize;
                let i1 = (i0 + 1).min(extent - 1);
                (i0, i1, (s - i0 as f64) as f32)
            })
            .collect()
    };
    let ys = axis(out_h, rect.h);
    let xs = axis(out_w, rect.w);
    Ok(Image::from_fn(out_h, out_w, |oy, ox| {
        let (y0, y1, wy) = ys[oy];
        let (x0, x1, wx) = xs[ox];
        let p = |y: usize, x: usize| image.pixel(rect.y + y, rect.x + x);
        let (a, b, c, d) = (p(y0, x0), p(y0, x1), p(y1, x0), p(y1, x1));
        let mut out = [0.0; 3];
        for ch in 0..3 {
            let top = a[ch] * (1.0 - wx) + b[ch] * wx;
            let bottom = c[ch] * (1.0 - wx) + d[ch] * wx;
            out[ch] = top * (1.0 - wy) + bottom * wy;
        }
        out
    }))
}

pub fn hflip(image: &Image) -> Image {
    let w = image.width();
    Image::from_fn(image.height(), w, |y, x| image.pixel(y, w - 1 - x))
}
