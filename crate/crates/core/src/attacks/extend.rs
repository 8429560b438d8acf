//! Border extension: the image is padded so that an attack restricted to
//! the border alone defines the baseline cost.

use serde::{Deserialize, Serialize};

use super::Mask;
use crate::autodiff::Tensor;
use crate::error::{invalid, shape_err, Result};
use crate::model::Classifier;

/// How border pixels are filled.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase", tag = "mode", content = "value")]
pub enum FillMode {
    /// Copy the nearest interior pixel.
    Replicate,
    Constant(f64),
}

/// An image padded on all sides, remembering where the original sits.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExtendedImage {
    /// `[C, H + 2·top, W + 2·left]`.
    pub pixels: Tensor,
    /// `(row, col)` of the interior's top-left corner.
    pub offset: (usize, usize),
    /// `(height, width)` of the interior.
    pub extent: (usize, usize),
    pub fill: FillMode,
}

/// Border width `⌈β·dim/2⌉`, guarding against rounding noise in `β·dim`.
pub fn border_width(beta: f64, dim: usize) -> usize {
    let w = beta * dim as f64 / 2.0;
    (w - 1e-9).ceil().max(0.0) as usize
}

/// Pads `[C, H, W]` by `⌈β·H/2⌉` rows and `⌈β·W/2⌉` columns per side.
pub fn extend_image(image: &Tensor, beta: f64, fill: FillMode) -> Result<ExtendedImage> {
    let (c, h, w) = match *image.shape() {
        [c, h, w] => (c, h, w),
        ref s => return Err(shape_err("extend_image", format!("expected [C, H, W], got {s:?}"))),
    };
    if !(beta > 0.0) || !beta.is_finite() {
        return Err(invalid(format!("β must be positive, got {beta}")));
    }
    let (bt, bl) = (border_width(beta, h), border_width(beta, w));
    let (eh, ew) = (h + 2 * bt, w + 2 * bl);
    let src = image.data();
    let mut out = Vec::with_capacity(c * eh * ew);
    for ch in 0..c {
        for r in 0..eh {
            for col in 0..ew {
                let inside = (bt..bt + h).contains(&r) && (bl..bl + w).contains(&col);
                let v = if inside {
                    src[(ch * h + r - bt) * w + col - bl]
                } else {
                    match fill {
                        FillMode::Constant(v) => v,
                        FillMode::Replicate => {
                            let rr = r.clamp(bt, bt + h - 1) - bt;
                            let cc = col.clamp(bl, bl + w - 1) - bl;
                            src[(ch * h + rr) * w + cc]
                        }
                    }
                };
                out.push(v);
            }
        }
    }
    Ok(ExtendedImage {
        pixels: Tensor::new(out, vec![c, eh, ew])?,
        offset: (bt, bl),
        extent: (h, w),
        fill,
    })
}

impl ExtendedImage {
    pub fn channels(&self) -> usize {
        self.pixels.shape()[0]
    }

    /// `(height, width)` of the padded image.
    pub fn size(&self) -> (usize, usize) {
        (self.pixels.shape()[1], self.pixels.shape()[2])
    }

    /// Flat index into `pixels` of interior coordinate `(r, c)` on channel `ch`.
    pub fn flat_index(&self, ch: usize, r: usize, c: usize) -> usize {
        let (eh, ew) = self.size();
        (ch * eh + r + self.offset.0) * ew + c + self.offset.1
    }

    /// Copies the interior back out.
    pub fn interior(&self) -> Tensor {
        let (h, w) = self.extent;
        let c = self.channels();
        let mut out = Vec::with_capacity(c * h * w);
        for ch in 0..c {
            for r in 0..h {
                for col in 0..w {
                    out.push(self.pixels.data()[self.flat_index(ch, r, col)]);
                }
            }
        }
        Tensor::from_parts(out, vec![c, h, w])
    }

    /// Restricts a tensor shaped like `pixels` to the interior window.
    pub fn crop(&self, t: &Tensor) -> Result<Tensor> {
        if t.shape() != self.pixels.shape() {
            return Err(shape_err("crop", format!("{:?} vs {:?}", t.shape(), self.pixels.shape())));
        }
        let proxy = ExtendedImage {
            pixels: t.clone(),
            ..self.clone()
        };
        Ok(proxy.interior())
    }

    /// Mask over the padded image that is set exactly on border pixels.
    pub fn border_mask(&self) -> Mask {
        let mut bits = vec![true; self.pixels.numel()];
        let (h, w) = self.extent;
        for ch in 0..self.channels() {
            for r in 0..h {
                for c in 0..w {
                    bits[self.flat_index(ch, r, c)] = false;
                }
            }
        }
        Mask {
            bits,
            shape: self.pixels.shape().to_vec(),
        }
    }

    /// Pads an interior-shaped boolean map (row-major `h × w`) with `false`.
    pub fn extend_bool_map(&self, interior: &[bool]) -> Result<Vec<bool>> {
        let (h, w) = self.extent;
        if interior.len() != h * w {
            return Err(shape_err("extend_bool_map", format!("{} values for {h}×{w}", interior.len())));
        }
        let (eh, ew) = self.size();
        let mut out = vec![false; eh * ew];
        for r in 0..h {
            for c in 0..w {
                out[(r + self.offset.0) * ew + c + self.offset.1] = interior[r * w + c];
            }
        }
        Ok(out)
    }

    /// Errors unless `classifier` takes inputs of the padded size.
    pub fn check_classifier(&self, classifier: &Classifier) -> Result<()> {
        let s = classifier.input_shape();
        if s.dims() != self.pixels.shape() {
            return Err(shape_err(
                "extend_image",
                format!(
                    "classifier expects {:?} but the extended image is {:?}",
                    s.dims(),
                    self.pixels.shape()
                ),
            ));
        }
        Ok(())
    }
}
