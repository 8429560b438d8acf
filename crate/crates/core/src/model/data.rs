use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::Tensor;
use crate::error::{invalid, Result};
use crate::seeding::{derive_seed, rng_from};

/// Largest number of shape classes the generator can draw.
pub const MAX_SHAPE_CLASSES: usize = 4;

/// Synthetic grayscale images with exact foreground masks.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ToyDataset {
    /// Each image is `[1, height, width]` with values in `[0, 1]`.
    pub images: Vec<Tensor>,
    pub labels: Vec<usize>,
    /// Row-major, `true` on shape pixels.
    pub foreground_masks: Vec<Vec<bool>>,
    pub height: usize,
    pub width: usize,
    pub num_classes: usize,
}

impl ToyDataset {
    pub fn len(&self) -> usize {
        self.images.len()
    }

    pub fn is_empty(&self) -> bool {
        self.images.is_empty()
    }

    /// Splits off the last `n` samples.
    pub fn split_tail(mut self, n: usize) -> (ToyDataset, ToyDataset) {
        let keep = self.len().saturating_sub(n);
        let tail = ToyDataset {
            images: self.images.split_off(keep),
            labels: self.labels.split_off(keep),
            foreground_masks: self.foreground_masks.split_off(keep),
            ..self.clone()
        };
        (self, tail)
    }

    /// Default attack target for sample `i`: the next class cyclically.
    pub fn default_target(&self, i: usize) -> usize {
        (self.labels[i] + 1) % self.num_classes
    }
}

/// Draws `count` images of `size × size` pixels over `num_classes` shapes:
/// filled square, plus, hollow frame and X, in that label order.
///
/// Foreground pixels are bright with a diagonal stripe texture; background
/// pixels are dark uniform noise. Labels cycle so every class appears.
pub fn synth_dataset(seed: u64, count: usize, size: usize, num_classes: usize) -> Result<ToyDataset> {
    if size < 8 {
        return Err(invalid(format!("image size must be at least 8, got {size}")));
    }
    if !(2..=MAX_SHAPE_CLASSES).contains(&num_classes) {
        return Err(invalid(format!(
            "num_classes must be in 2..={MAX_SHAPE_CLASSES}, got {num_classes}"
        )));
    }
    if count < 2 * num_classes {
        return Err(invalid(format!(
            "need at least {} images for {num_classes} classes, got {count}",
            2 * num_classes
        )));
    }
    let mut ds = ToyDataset {
        images: Vec::with_capacity(count),
        labels: Vec::with_capacity(count),
        foreground_masks: Vec::with_capacity(count),
        height: size,
        width: size,
        num_classes,
    };
    for i in 0..count {
        let label = i % num_classes;
        let mut rng = rng_from(derive_seed(seed, &[i as u64]));
        let mask = shape_mask(&mut rng, label, size);
        let phase = rng.gen_range(0..3usize);
        let mut pixels = Vec::with_capacity(size * size);
        for r in 0..size {
            for c in 0..size {
                let noise: f64 = rng.gen_range(0.0..1.0);
                let v = if mask[r * size + c] {
                    let stripe = if (r + c + phase) % 3 == 0 { 0.25 } else { 0.0 };
                    0.65 + stripe + 0.1 * noise
                } else {
                    0.05 + 0.25 * noise
                };
                pixels.push(v.min(1.0));
            }
        }
        ds.images.push(Tensor::from_parts(pixels, vec![1, size, size]));
        ds.labels.push(label);
        ds.foreground_masks.push(mask);
    }
    Ok(ds)
}

fn shape_mask(rng: &mut impl Rng, label: usize, size: usize) -> Vec<bool> {
    let side = rng.gen_range(size / 2..=(3 * size) / 4);
    let r0 = rng.gen_range(0..=size - side);
    let c0 = rng.gen_range(0..=size - side);
    let thick = (side / 3).max(1);
    let mut mask = vec![false; size * size];
    for dr in 0..side {
        for dc in 0..side {
            let inside = match label {
                0 => true,
                1 => {
                    let lo = (side - thick) / 2;
                    (lo..lo + thick).contains(&dr) || (lo..lo + thick).contains(&dc)
                }
                2 => {
                    let t = (side / 4).max(1);
                    dr < t || dc < t || dr >= side - t || dc >= side - t
                }
                _ => dr == dc || dr + dc == side - 1 || dr.abs_diff(dc) == 1 && side > 6,
            };
            if inside {
                mask[(r0 + dr) * size + c0 + dc] = true;
            }
        }
    }
    mask
}
