//! Procedural image corpora.
//!
//! [`natural_image`] draws smooth scenes with shapes, oriented texture and
//! grain. [`labeled_image`] draws images whose class is written into the
//! grid of luma block means as a sign pattern of small amplitude, hidden
//! under a random base level and per-pixel texture.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::image::RgbImage;
use crate::taskloss::LabeledImage;

fn rng_for(seed: u64, index: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index as u64);
    rng
}

fn smoothstep(e0: f64, e1: f64, x: f64) -> f64 {
    let t = ((x - e0) / (e1 - e0)).clamp(0.0, 1.0);
    t * t * (3.0 - 2.0 * t)
}

enum Shape {
    Ellipse { cx: f64, cy: f64, rx: f64, ry: f64 },
    Rect { x0: f64, y0: f64, x1: f64, y1: f64 },
}

impl Shape {
    /// Signed distance-like value: negative inside.
    fn distance(&self, x: f64, y: f64) -> f64 {
        match *self {
            Shape::Ellipse { cx, cy, rx, ry } => {
                let (dx, dy) = ((x - cx) / rx, (y - cy) / ry);
                ((dx * dx + dy * dy).sqrt() - 1.0) * rx.min(ry)
            }
            Shape::Rect { x0, y0, x1, y1 } => (x0 - x).max(x - x1).max(y0 - y).max(y - y1),
        }
    }
}

/// One natural-looking RGB scene. `index` selects an independent stream.
pub fn natural_image(width: usize, height: usize, seed: u64, index: usize) -> RgbImage {
    let mut rng = rng_for(seed, index);
    let (w, h) = (width as f64, height as f64);
    let color = |rng: &mut ChaCha8Rng| -> [f64; 3] { std::array::from_fn(|_| rng.gen_range(20.0..235.0)) };
    let c0 = color(&mut rng);
    let c1 = color(&mut rng);
    let angle: f64 = rng.gen_range(0.0..std::f64::consts::TAU);
    let (gx, gy) = (angle.cos(), angle.sin());

    let n_shapes = rng.gen_range(2..7);
    let shapes: Vec<(Shape, [f64; 3], f64)> = (0..n_shapes)
        .map(|_| {
            let shape = if rng.gen_bool(0.5) {
                Shape::Ellipse {
                    cx: rng.gen_range(0.0..w),
                    cy: rng.gen_range(0.0..h),
                    rx: rng.gen_range(0.08..0.4) * w,
                    ry: rng.gen_range(0.08..0.4) * h,
                }
            } else {
                let (x, y) = (rng.gen_range(-0.2..0.9) * w, rng.gen_range(-0.2..0.9) * h);
                Shape::Rect {
                    x0: x,
                    y0: y,
                    x1: x + rng.gen_range(0.1..0.6) * w,
                    y1: y + rng.gen_range(0.1..0.6) * h,
                }
            };
            (shape, color(&mut rng), rng.gen_range(0.4..2.5))
        })
        .collect();

    // Oriented sinusoids with roughly 1/f amplitudes.
    let n_waves = rng.gen_range(3..8);
    let waves: Vec<([f64; 2], f64, f64, [f64; 3])> = (0..n_waves)
        .map(|_| {
            let f: f64 = rng.gen_range(0.015..0.35);
            let th: f64 = rng.gen_range(0.0..std::f64::consts::PI);
            let amp: f64 = rng.gen_range(0.2..1.0) * 1.2 / f;
            let tint: [f64; 3] = std::array::from_fn(|_| rng.gen_range(0.6..1.0));
            let phase = rng.gen_range(0.0..std::f64::consts::TAU);
            ([f * th.cos(), f * th.sin()], phase, amp.min(30.0), tint)
        })
        .collect();
    let grain = Normal::new(0.0, rng.gen_range(0.5..4.0)).expect("positive std");

    let mut data = Vec::with_capacity(width * height * 3);
    for py in 0..height {
        for px in 0..width {
            let (x, y) = (px as f64 + 0.5, py as f64 + 0.5);
            let t = (((x / w - 0.5) * gx + (y / h - 0.5) * gy) + 0.5).clamp(0.0, 1.0);
            let mut rgb: [f64; 3] = std::array::from_fn(|c| c0[c] + (c1[c] - c0[c]) * t);
            for (shape, col, soft) in &shapes {
                let a = 1.0 - smoothstep(-soft, *soft, shape.distance(x, y));
                for c in 0..3 {
                    rgb[c] += a * (col[c] - rgb[c]);
                }
            }
            let mut tex = [0.0; 3];
            for (k, phase, amp, tint) in &waves {
                let v = amp * (std::f64::consts::TAU * (k[0] * x + k[1] * y) + phase).sin();
                for c in 0..3 {
                    tex[c] += v * tint[c];
                }
            }
            let g = grain.sample(&mut rng);
            for c in 0..3 {
                let v = rgb[c] + tex[c] + g + 0.3 * grain.sample(&mut rng);
                data.push(v.round().clamp(0.0, 255.0) as u8);
            }
        }
    }
    RgbImage::new(width, height, data).expect("generated image has valid size")
}

/// `count` natural images of size `size x size`.
pub fn natural_corpus(count: usize, size: usize, seed: u64) -> Vec<RgbImage> {
    (0..count).map(|i| natural_image(size, size, seed, i)).collect()
}

/// Sign pattern of class `class` at block `(bx, by)`.
pub fn class_pattern(class: usize, bx: usize, by: usize) -> f64 {
    let bit = match class % 4 {
        0 => bx,
        1 => by,
        2 => bx + by,
        _ => bx / 2 + by / 2,
    } + class / 4 * (bx * by);
    if bit.is_multiple_of(2) {
        1.0
    } else {
        -1.0
    }
}

/// Amplitude of the class pattern in luma levels.
pub const PATTERN_AMPLITUDE: f64 = 2.0;

/// One labeled image of class `label`.
pub fn labeled_image(size: usize, label: usize, seed: u64, index: usize) -> LabeledImage {
    let mut rng = rng_for(seed ^ 0x5eed_1abe1, index);
    let base = rng.gen_range(70.0..180.0);
    let tint: [f64; 3] = std::array::from_fn(|_| rng.gen_range(-12.0..12.0));
    let noise = Normal::new(0.0, rng.gen_range(8.0..16.0)).expect("positive std");
    let chroma_noise = Normal::new(0.0, 3.0).expect("positive std");
    let f: f64 = rng.gen_range(0.2..0.45);
    let th: f64 = rng.gen_range(0.0..std::f64::consts::PI);
    let phase = rng.gen_range(0.0..std::f64::consts::TAU);
    let amp = rng.gen_range(5.0..15.0);
    let mut data = Vec::with_capacity(size * size * 3);
    for py in 0..size {
        for px in 0..size {
            let pattern = PATTERN_AMPLITUDE * class_pattern(label, px / 8, py / 8);
            let wave = amp * (std::f64::consts::TAU * f * (th.cos() * px as f64 + th.sin() * py as f64) + phase).sin();
            let luma = base + pattern + wave + noise.sample(&mut rng);
            for t in tint {
                let v = luma + t + chroma_noise.sample(&mut rng);
                data.push(v.round().clamp(0.0, 255.0) as u8);
            }
        }
    }
    LabeledImage {
        image: RgbImage::new(size, size, data).expect("generated image has valid size"),
        label,
    }
}

/// Balanced labeled corpus: labels cycle through `0..classes`.
pub fn labeled_corpus(count: usize, size: usize, classes: usize, seed: u64) -> Vec<LabeledImage> {
    (0..count).map(|i| labeled_image(size, i % classes, seed, i)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn generators_are_deterministic_and_distinct() {
        assert_eq!(natural_image(32, 32, 1, 3), natural_image(32, 32, 1, 3));
        assert_ne!(natural_image(32, 32, 1, 3), natural_image(32, 32, 1, 4));
        assert_eq!(labeled_image(32, 2, 9, 0), labeled_image(32, 2, 9, 0));
    }

    #[test]
    fn class_patterns_are_balanced_on_a_4x4_grid() {
        for c in 0..4 {
            let s: f64 = (0..16).map(|i| class_pattern(c, i % 4, i / 4)).sum();
            assert_eq!(s, 0.0);
            for d in 0..c {
                let dot: f64 = (0..16).map(|i| class_pattern(c, i % 4, i / 4) * class_pattern(d, i % 4, i / 4)).sum();
                assert_eq!(dot, 0.0);
            }
        }
    }
}
