//! The toy classifier `g(·)`, synthetic shape data and training.

mod classifier;
mod data;
mod train;

pub use classifier::{attack_margin, margin_from_logits, Classifier, InputShape, Layer};
pub use data::{synth_dataset, ToyDataset, MAX_SHAPE_CLASSES};
pub use train::{accuracy, mean_loss, robust_accuracy, train, TrainConfig, TrainMode, TrainReport};

use crate::attacks::{extend_image, FillMode};
use crate::error::Result;

/// Pads every image of `data` by `β` and pads the foreground masks with
/// `false`, producing the inputs the classifier is trained on.
pub fn extend_dataset(data: &ToyDataset, beta: f64, fill: FillMode) -> Result<ToyDataset> {
    let mut out = ToyDataset {
        images: Vec::with_capacity(data.len()),
        labels: data.labels.clone(),
        foreground_masks: Vec::with_capacity(data.len()),
        height: 0,
        width: 0,
        num_classes: data.num_classes,
    };
    for (x, m) in data.images.iter().zip(&data.foreground_masks) {
        let e = extend_image(x, beta, fill)?;
        out.foreground_masks.push(e.extend_bool_map(m)?);
        (out.height, out.width) = e.size();
        out.images.push(e.pixels);
    }
    Ok(out)
}
