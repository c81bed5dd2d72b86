use crate::numerics::Rng;

use super::Image;

/// Multiplicative jitter strengths; each factor is drawn from `[1-s, 1+s]`.
#[derive(Clone, Copy, Debug, PartialEq, Default)]
pub struct JitterStrength {
    pub brightness: f64,
    pub contrast: f64,
    pub saturation: f64,
}

fn factor(rng: &mut Rng, s: f64) -> f32 {
    if s <= 0.0 {
        1.0
    } else {
        rng.uniform_range((1.0 - s).max(0.0), 1.0 + s) as f32
    }
}

fn luma(p: [f32; 3]) -> f32 {
    0.299 * p[0] + 0.587 * p[1] + 0.114 * p[2]
}

/// Brightness, then contrast, then saturation; clamped to `[0, 1]` after each.
pub fn color_jitter(image: &Image, rng: &mut Rng, strength: &JitterStrength) -> Image {
    let b = factor(rng, strength.brightness);
    let c = factor(rng, strength.contrast);
    let s = factor(rng, strength.saturation);
    if b == 1.0 && c == 1.0 && s == 1.0 {
        return image.clone();
    }
    let bright = Image::from_fn(image.height(), image.width(), |y, x| image.pixel(y, x).map(|v| v * b));
    let n = (image.height() * image.width()) as f32;
    let mean = (0..image.height())
        .flat_map(|y| (0..image.width()).map(move |x| (y, x)))
        .map(|(y, x)| luma(bright.pixel(y, x)))
        .sum::<f32>()
        / n;
    let contrasted = Image::from_fn(image.height(), image.width(), |y, x| {
        bright.pixel(y, x).map(|v| (v - mean) * c + mean)
    });
    Image::from_fn(image.height(), image.width(), |y, x| {
        let p = contrasted.pixel(y, x);
        let g = luma(p);
        p.map(|v| (v - g) * s + g)
    })
}

/// Normalised 1-D Gaussian kernel truncated at three standard deviations.
pub fn gaussian_kernel(sigma: f64) -> Vec<f32> {
    if sigma <= 0.0 {
        return vec![1.0];
    }
    let radius = (3.0 * sigma).ceil() as i64;
    let raw: Vec<f64> = (-radius..=radius)
        .map(|i| (-(i * i) as f64 / (2.0 * sigma * sigma)).exp())
        .collect();
    let total: f64 = raw.iter().sum();
    raw.iter().map(|w| (w / total) as f32).collect()
}

/// Separable Gaussian blur with edge clamping; sigma drawn from `sigma_range`.
pub fn gaussian_blur(image: &Image, rng: &mut Rng, sigma_range: (f64, f64)) -> Image {
    let sigma = rng.uniform_range(sigma_range.0, sigma_range.1);
    blur_with_sigma(image, sigma)
}

pub fn blur_with_sigma(image: &Image, sigma: f64) -> Image {
    if sigma <= 0.0 {
        return image.clone();
    }
    let kernel = gaussian_kernel(sigma);
    let r = (kernel.len() / 2) as i64;
    let (h, w) = (image.height() as i64, image.width() as i64);
    let pass = |src: &Image, horizontal: bool| {
        Image::from_fn(src.height(), src.width(), |y, x| {
            let mut acc = [0.0f32; 3];
            for (k, &wk) in kernel.iter().enumerate() {
                let off = k as i64 - r;
                let (sy, sx) = if horizontal {
                    (y as i64, (x as i64 + off).clamp(0, w - 1))
                } else {
                    ((y as i64 + off).clamp(0, h - 1), x as i64)
                };
                let p = src.pixel(sy as usize, sx as usize);
                for c in 0..3 {
                    acc[c] += wk * p[c];
                }
            }
            acc
        })
    };
    pass(&pass(image, true), false)
}
