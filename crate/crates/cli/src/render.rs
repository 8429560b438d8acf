//! PNG rendering of attribution heatmaps and component overlays.

use std::path::Path;

use image::{ImageReader, Rgb, RgbImage};

use advshap::autodiff::Tensor;

use crate::error::{CliError, Result};

/// Color of the largest positive value.
pub const DEEP_RED: [u8; 3] = [165, 0, 38];
/// Color of the most negative value.
pub const DEEP_BLUE: [u8; 3] = [49, 54, 149];
pub const MID: [u8; 3] = [247, 247, 247];

fn lerp(a: [u8; 3], b: [u8; 3], t: f64) -> [u8; 3] {
    let mix = |x: u8, y: u8| (x as f64 + (y as f64 - x as f64) * t).round() as u8;
    [mix(a[0], b[0]), mix(a[1], b[1]), mix(a[2], b[2])]
}

/// Diverging color of `v` on a scale symmetric around zero.
pub fn diverging(v: f64, max_abs: f64) -> [u8; 3] {
    if max_abs <= 0.0 || v == 0.0 {
        return MID;
    }
    let t = (v.abs() / max_abs).min(1.0);
    lerp(MID, if v > 0.0 { DEEP_RED } else { DEEP_BLUE }, t)
}

/// Renders a `rows × cols` map, each cell a `scale × scale` block.
pub fn heatmap(values: &[f64], rows: usize, cols: usize, scale: usize) -> Result<RgbImage> {
    if values.len() != rows * cols || scale == 0 {
        return Err(CliError::Usage(format!("{} values for a {rows}×{cols} map", values.len())));
    }
    if values.iter().any(|v| !v.is_finite()) {
        return Err(CliError::Usage("heatmap values must be finite".into()));
    }
    let max_abs = values.iter().map(|v| v.abs()).fold(0.0, f64::max);
    Ok(RgbImage::from_fn((cols * scale) as u32, (rows * scale) as u32, |x, y| {
        let (r, c) = (y as usize / scale, x as usize / scale);
        Rgb(diverging(values[r * cols + c], max_abs))
    }))
}

pub fn render_heatmap(values: &[f64], rows: usize, cols: usize, scale: usize, path: &Path) -> Result<()> {
    heatmap(values, rows, cols, scale)?.save(path)?;
    Ok(())
}

/// Gray copy of a `[C, H, W]` image (channel mean), scaled up, with each
/// labeled component tinted by a fixed palette. `labels` are given per
/// location; `None` leaves the pixel gray.
pub fn overlay(image: &Tensor, labels: &[Option<usize>], scale: usize) -> Result<RgbImage> {
    let s = image.shape();
    let (c, h, w) = (s[0], s[1], s[2]);
    if labels.len() != h * w || scale == 0 {
        return Err(CliError::Usage(format!("{} labels for a {h}×{w} image", labels.len())));
    }
    const PALETTE: [[u8; 3]; 8] = [
        [228, 26, 28],
        [55, 126, 184],
        [77, 175, 74],
        [152, 78, 163],
        [255, 127, 0],
        [255, 255, 51],
        [166, 86, 40],
        [247, 129, 191],
    ];
    let d = image.data();
    Ok(RgbImage::from_fn((w * scale) as u32, (h * scale) as u32, |x, y| {
        let (r, col) = (y as usize / scale, x as usize / scale);
        let g = (0..c).map(|ch| d[(ch * h + r) * w + col]).sum::<f64>() / c as f64;
        let g = (g.clamp(0.0, 1.0) * 255.0).round() as u8;
        match labels[r * w + col] {
            Some(l) => Rgb(lerp([g, g, g], PALETTE[l % PALETTE.len()], 0.55)),
            None => Rgb([g, g, g]),
        }
    }))
}

/// Reads a PNG or PNM file as a gray `[1, H, W]` tensor in `[0, 1]`.
pub fn load_gray(path: &Path) -> Result<Tensor> {
    let img = ImageReader::open(path)
        .map_err(|e| CliError::io(path, e))?
        .with_guessed_format()
        .map_err(|e| CliError::io(path, e))?
        .decode()?
        .to_luma8();
    let (w, h) = img.dimensions();
    let data = img.pixels().map(|p| p.0[0] as f64 / 255.0).collect();
    Ok(Tensor::new(data, vec![1, h as usize, w as usize])?)
}
