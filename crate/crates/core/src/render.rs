//! Grayscale PGM rendering of weight matrices and mask differences.
//!
//! Binary PGM (P5, maxval 255), one pixel per weight: width = in_features,
//! height = out_features, matrix rows map to image rows. Dependency-free and
//! bit-exact, so images can be diffed in tests.

use std::io::Write;
use std::path::Path;

use crate::error::{Error, Result};
use crate::pruning::PruneMask;
use crate::tensor::Tensor32;

/// Pixel values of a mask-difference image.
pub const DIFF_AGREE_PRUNED: u8 = 0;
pub const DIFF_AGREE_KEPT: u8 = 128;
pub const DIFF_DIFFER: u8 = 255;

pub fn write_pgm(path: &Path, width: usize, height: usize, pixels: &[u8]) -> Result<()> {
    assert_eq!(pixels.len(), width * height);
    let mut out = Vec::with_capacity(pixels.len() + 32);
    write!(out, "P5\n{width} {height}\n255\n").expect("in-memory write");
    out.extend_from_slice(pixels);
    std::fs::write(path, out).map_err(|e| Error::io(path, e))
}

/// Magnitude heat map: `pixel = round(255 * |w| / max|w|)`; an all-zero
/// tensor renders as all-black.
pub fn render_weights(weights: &Tensor32, path: &Path) -> Result<()> {
    let (rows, cols) = weights.dims2()?;
    let max = weights.data().iter().fold(0.0f32, |m, w| m.max(w.abs()));
    let pixels: Vec<u8> = if max == 0.0 {
        vec![0; rows * cols]
    } else {
        weights
            .data()
            .iter()
            .map(|w| (255.0 * w.abs() / max).round() as u8)
            .collect()
    };
    write_pgm(path, cols, rows, &pixels)
}

/// Kept weights render white, pruned ones black.
pub fn render_mask(mask: &PruneMask, path: &Path) -> Result<()> {
    let pixels: Vec<u8> = (0..mask.bit_len())
        .map(|i| if mask.is_kept(i) { 255 } else { 0 })
        .collect();
    write_pgm(path, mask.cols(), mask.rows(), &pixels)
}

/// Difference image between two masks of the same tensor: 255 where the
/// bits differ, 128 where both keep, 0 where both prune.
pub fn render_diff(a: &PruneMask, b: &PruneMask, path: &Path) -> Result<()> {
    if !a.same_shape(b) {
        return Err(Error::ShapeMismatch {
            name: a.name().to_string(),
            expected: vec![a.rows(), a.cols()],
            got: vec![b.rows(), b.cols()],
        });
    }
    let pixels: Vec<u8> = (0..a.bit_len())
        .map(|i| match (a.is_kept(i), b.is_kept(i)) {
            (true, true) => DIFF_AGREE_KEPT,
            (false, false) => DIFF_AGREE_PRUNED,
            _ => DIFF_DIFFER,
        })
        .collect();
    write_pgm(path, a.cols(), a.rows(), &pixels)
}
