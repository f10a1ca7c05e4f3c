//! Image batches and their preprocessing: IDX loading, binarization,
//! half-image splits, downsampling, and synthetic images.

mod digits;
mod idx;
mod sources;

use std::str::FromStr;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::Tensor;
use crate::rng::StreamRng;

pub use digits::{render_digit, synthetic_digits};
pub use idx::{
    encode_idx_images, encode_idx_labels, load_idx, load_idx_labels, load_idx_pair, parse_idx_images,
    parse_idx_labels, IMAGE_MAGIC, LABEL_MAGIC,
};
pub use sources::{fixture, load_mnist, load_splits, DataSource, Splits, FIXTURE_SEED, FIXTURE_SIZE, MNIST_DIR_ENV};

/// `n × H × W` images with optional integer labels.
#[derive(Debug, Clone, PartialEq)]
pub struct ImageBatch {
    pub images: Tensor,
    pub labels: Option<Vec<usize>>,
}

impl ImageBatch {
    pub fn new(images: Tensor, labels: Option<Vec<usize>>) -> Result<Self> {
        if images.rank() != 3 {
            return Err(Error::shape("ImageBatch", format!("expected [n, H, W], got {:?}", images.shape())));
        }
        let s = images.shape();
        if s[1] == 0 || s[2] == 0 {
            return Err(Error::shape("ImageBatch", format!("empty image dims {:?}", s)));
        }
        if let Some(l) = &labels {
            if l.len() != s[0] {
                return Err(Error::Format(format!("{} labels for {} images", l.len(), s[0])));
            }
        }
        Ok(ImageBatch { images, labels })
    }

    pub fn with_labels(self, labels: Vec<usize>) -> Result<Self> {
        ImageBatch::new(self.images, Some(labels))
    }

    /// `(n, H, W)`.
    pub fn dims(&self) -> (usize, usize, usize) {
        let s = self.images.shape();
        (s[0], s[1], s[2])
    }

    pub fn len(&self) -> usize {
        self.dims().0
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Images as rows of an `[n, H·W]` matrix.
    pub fn flatten(&self) -> Tensor {
        let (n, h, w) = self.dims();
        self.images.reshape(&[n, h * w]).expect("same element count")
    }

    pub fn select(&self, indices: &[usize]) -> ImageBatch {
        let (_, h, w) = self.dims();
        let rows = self.flatten().select_rows(indices);
        let images = rows.reshape(&[indices.len(), h, w]).expect("same element count");
        let labels = self.labels.as_ref().map(|l| indices.iter().map(|&i| l[i]).collect());
        ImageBatch { images, labels }
    }

    /// Images `start..end`.
    pub fn range(&self, start: usize, end: usize) -> ImageBatch {
        self.select(&(start..end).collect::<Vec<_>>())
    }

    pub fn is_binary(&self) -> bool {
        self.images.data().iter().all(|&v| v == 0.0 || v == 1.0)
    }
}

/// How pixel intensities become binary observations.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum Binarization {
    Fixed { threshold: f64 },
    /// Fresh Bernoulli draws for every minibatch.
    Dynamic,
}

impl Default for Binarization {
    fn default() -> Self {
        Binarization::Fixed { threshold: 0.5 }
    }
}

/// Pixels `>= threshold` become 1 (so 0.5 maps to 1 at the default
/// threshold). Already-binary batches come back unchanged.
pub fn binarize_fixed(batch: &ImageBatch, threshold: f64) -> ImageBatch {
    ImageBatch {
        images: batch.images.map(|v| if v >= threshold { 1.0 } else { 0.0 }),
        labels: batch.labels.clone(),
    }
}

/// Each pixel becomes a Bernoulli draw with its intensity as probability.
pub fn binarize_dynamic(batch: &ImageBatch, rng: &mut StreamRng) -> ImageBatch {
    let data = batch
        .images
        .data()
        .iter()
        .map(|&p| if rng.gen::<f64>() < p { 1.0 } else { 0.0 })
        .collect();
    ImageBatch {
        images: Tensor::new(batch.images.shape().to_vec(), data).expect("same shape"),
        labels: batch.labels.clone(),
    }
}

/// Rows `[0, H/2)` and `[H/2, H)`.
pub fn split_halves(batch: &ImageBatch) -> Result<(ImageBatch, ImageBatch)> {
    let (n, h, w) = batch.dims();
    if h % 2 != 0 {
        return Err(Error::InvalidArgument(format!("cannot split {h} rows into halves")));
    }
    let half = h / 2;
    let (mut top, mut bottom) = (Vec::with_capacity(n * half * w), Vec::with_capacity(n * half * w));
    for img in batch.images.data().chunks(h * w) {
        top.extend_from_slice(&img[..half * w]);
        bottom.extend_from_slice(&img[half * w..]);
    }
    let part = |data| ImageBatch {
        images: Tensor::new(vec![n, half, w], data).expect("consistent dims"),
        labels: batch.labels.clone(),
    };
    Ok((part(top), part(bottom)))
}

/// Stack `upper` on top of `lower`, row-wise per image.
pub fn concat_vertical(upper: &ImageBatch, lower: &ImageBatch) -> Result<ImageBatch> {
    let (n, h1, w) = upper.dims();
    let (n2, h2, w2) = lower.dims();
    if n != n2 || w != w2 {
        return Err(Error::shape("concat_vertical", format!("{:?} over {:?}", upper.dims(), lower.dims())));
    }
    let mut data = Vec::with_capacity(n * (h1 + h2) * w);
    for (a, b) in upper.images.data().chunks(h1 * w).zip(lower.images.data().chunks(h2 * w)) {
        data.extend_from_slice(a);
        data.extend_from_slice(b);
    }
    ImageBatch::new(Tensor::new(vec![n, h1 + h2, w], data)?, upper.labels.clone())
}

/// Resize rule: centre each image on a `pad_to × pad_to` canvas (zero
/// padding, or a centred crop when smaller), then halve the resolution
/// `halvings` times by 2×2 block averaging.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct DownsampleRule {
    pub pad_to: usize,
    pub halvings: u32,
}

impl Default for DownsampleRule {
    /// 28×28 → 32×32 → 16×16 → 8×8.
    fn default() -> Self {
        DownsampleRule { pad_to: 32, halvings: 2 }
    }
}

impl DownsampleRule {
    pub fn output_side(&self) -> usize {
        self.pad_to >> self.halvings
    }
}

fn recenter(img: &[f64], h: usize, w: usize, side: usize) -> Vec<f64> {
    let mut out = vec![0.0; side * side];
    // offsets of the source inside the canvas; negative means crop
    let dr = (side as isize - h as isize) / 2;
    let dc = (side as isize - w as isize) / 2;
    for r in 0..side {
        let sr = r as isize - dr;
        if sr < 0 || sr >= h as isize {
            continue;
        }
        for c in 0..side {
            let sc = c as isize - dc;
            if sc >= 0 && sc < w as isize {
                out[r * side + c] = img[sr as usize * w + sc as usize];
            }
        }
    }
    out
}

fn halve(img: &[f64], side: usize) -> Vec<f64> {
    let s = side / 2;
    let mut out = vec![0.0; s * s];
    for r in 0..s {
        for c in 0..s {
            let at = |rr: usize, cc: usize| img[rr * side + cc];
            out[r * s + c] = 0.25 * (at(2 * r, 2 * c) + at(2 * r, 2 * c + 1) + at(2 * r + 1, 2 * c) + at(2 * r + 1, 2 * c + 1));
        }
    }
    out
}

pub fn downsample(batch: &ImageBatch, rule: &DownsampleRule) -> Result<ImageBatch> {
    if rule.pad_to == 0 || !rule.pad_to.is_multiple_of(1 << rule.halvings) {
        return Err(Error::InvalidArgument(format!(
            "canvas {} is not divisible by 2^{}",
            rule.pad_to, rule.halvings
        )));
    }
    let (n, h, w) = batch.dims();
    let out_side = rule.output_side();
    let mut data = Vec::with_capacity(n * out_side * out_side);
    for img in batch.images.data().chunks(h * w) {
        let mut cur = recenter(img, h, w, rule.pad_to);
        let mut side = rule.pad_to;
        for _ in 0..rule.halvings {
            cur = halve(&cur, side);
            side /= 2;
        }
        data.extend(cur);
    }
    ImageBatch::new(Tensor::new(vec![n, out_side, out_side], data)?, batch.labels.clone())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SyntheticKind {
    Stripes,
    RandomBernoulli,
    Blobs,
}

impl FromStr for SyntheticKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "stripes" => Ok(SyntheticKind::Stripes),
            "random_bernoulli" => Ok(SyntheticKind::RandomBernoulli),
            "blobs" => Ok(SyntheticKind::Blobs),
            other => Err(Error::InvalidArgument(format!("unknown synthetic kind `{other}`"))),
        }
    }
}

/// `n` unlabelled `side × side` images.
///
/// Stripes are binary bars of period 4 with a random orientation and
/// phase; random_bernoulli pixels are independent fair coins; blobs are
/// one to three Gaussian bumps with intensities in `[0, 1]`.
pub fn synthetic_batch(kind: SyntheticKind, n: usize, side: usize, rng: &mut StreamRng) -> Result<ImageBatch> {
    let mut data = Vec::with_capacity(n * side * side);
    for _ in 0..n {
        match kind {
            SyntheticKind::Stripes => {
                let vertical: bool = rng.gen();
                let phase = rng.gen_range(0..4);
                for r in 0..side {
                    for c in 0..side {
                        let t = if vertical { c } else { r };
                        data.push(if (t + phase) % 4 < 2 { 1.0 } else { 0.0 });
                    }
                }
            }
            SyntheticKind::RandomBernoulli => {
                data.extend((0..side * side).map(|_| if rng.gen::<bool>() { 1.0 } else { 0.0 }));
            }
            SyntheticKind::Blobs => {
                let s = side as f64;
                let count = rng.gen_range(1..=3);
                let blobs: Vec<(f64, f64, f64)> = (0..count)
                    .map(|_| (rng.gen_range(0.0..s), rng.gen_range(0.0..s), rng.gen_range(0.08..0.2) * s))
                    .collect();
                for r in 0..side {
                    for c in 0..side {
                        let v: f64 = blobs
                            .iter()
                            .map(|&(br, bc, sd)| {
                                let d2 = (r as f64 + 0.5 - br).powi(2) + (c as f64 + 0.5 - bc).powi(2);
                                (-d2 / (2.0 * sd * sd)).exp()
                            })
                            .sum();
                        data.push(v.min(1.0));
                    }
                }
            }
        }
    }
    ImageBatch::new(Tensor::new(vec![n, side, side], data)?, None)
}

/// Replace labels with uniform draws from `0..k`.
pub fn random_labels(batch: &ImageBatch, k: usize, rng: &mut StreamRng) -> Result<ImageBatch> {
    if k == 0 {
        return Err(Error::InvalidArgument("label count must be positive".into()));
    }
    let labels = (0..batch.len()).map(|_| rng.gen_range(0..k)).collect();
    batch.clone().with_labels(labels)
}
