//! Synthetic MNIST-like digits: seven-segment glyphs with random shift,
//! slant, scale, and stroke width, anti-aliased onto a square canvas.

use rand::Rng;

use super::ImageBatch;
use crate::error::Result;
use crate::graph::Tensor;
use crate::rng::StreamRng;

// Segment endpoints on a unit glyph box, x to the right, y downwards.
const SEGMENTS: [((f64, f64), (f64, f64)); 7] = [
    ((0.0, 0.0), (1.0, 0.0)), // top
    ((1.0, 0.0), (1.0, 0.5)), // upper right
    ((1.0, 0.5), (1.0, 1.0)), // lower right
    ((0.0, 1.0), (1.0, 1.0)), // bottom
    ((0.0, 0.5), (0.0, 1.0)), // lower left
    ((0.0, 0.0), (0.0, 0.5)), // upper left
    ((0.0, 0.5), (1.0, 0.5)), // middle
];

const DIGIT_SEGMENTS: [&[usize]; 10] = [
    &[0, 1, 2, 3, 4, 5],
    &[1, 2],
    &[0, 1, 6, 4, 3],
    &[0, 1, 6, 2, 3],
    &[5, 6, 1, 2],
    &[0, 5, 6, 2, 3],
    &[0, 5, 4, 3, 2, 6],
    &[0, 1, 2],
    &[0, 1, 2, 3, 4, 5, 6],
    &[0, 1, 2, 3, 5, 6],
];

fn segment_distance(p: (f64, f64), a: (f64, f64), b: (f64, f64)) -> f64 {
    let (dx, dy) = (b.0 - a.0, b.1 - a.1);
    let len2 = dx * dx + dy * dy;
    let t = if len2 == 0.0 {
        0.0
    } else {
        (((p.0 - a.0) * dx + (p.1 - a.1) * dy) / len2).clamp(0.0, 1.0)
    };
    let (cx, cy) = (a.0 + t * dx, a.1 + t * dy);
    ((p.0 - cx).powi(2) + (p.1 - cy).powi(2)).sqrt()
}

/// Render one digit on a `size × size` canvas.
pub fn render_digit(digit: usize, size: usize, rng: &mut StreamRng) -> Vec<f64> {
    let s = size as f64;
    let width = s * rng.gen_range(0.28..0.40);
    let height = s * rng.gen_range(0.55..0.68);
    let cx = s / 2.0 + rng.gen_range(-0.06..0.06) * s;
    let cy = s / 2.0 + rng.gen_range(-0.05..0.05) * s;
    let slant = rng.gen_range(-0.25..0.25);
    let stroke = s * rng.gen_range(0.045..0.075);
    let ink = rng.gen_range(0.85..1.0);
    let place = |(x, y): (f64, f64)| {
        let gx = cx + (x - 0.5) * width + slant * (0.5 - y) * height;
        let gy = cy + (y - 0.5) * height;
        (gx, gy)
    };
    let segs: Vec<_> = DIGIT_SEGMENTS[digit % 10]
        .iter()
        .map(|&i| (place(SEGMENTS[i].0), place(SEGMENTS[i].1)))
        .collect();
    let mut out = vec![0.0; size * size];
    for r in 0..size {
        for c in 0..size {
            let p = (c as f64 + 0.5, r as f64 + 0.5);
            let d = segs
                .iter()
                .map(|&(a, b)| segment_distance(p, a, b))
                .fold(f64::INFINITY, f64::min);
            out[r * size + c] = ink * (stroke - d + 0.5).clamp(0.0, 1.0);
        }
    }
    out
}

/// `n` labelled digits, labels uniform over `0..10`.
pub fn synthetic_digits(n: usize, size: usize, rng: &mut StreamRng) -> Result<ImageBatch> {
    let mut data = Vec::with_capacity(n * size * size);
    let mut labels = Vec::with_capacity(n);
    for _ in 0..n {
        let d = rng.gen_range(0..10);
        labels.push(d);
        data.extend(render_digit(d, size, rng));
    }
    ImageBatch::new(Tensor::new(vec![n, size, size], data)?, Some(labels))
}
