//! Basis-function grid rendering.

use std::path::Path;

use image::{GrayImage, Luma};

use crate::error::{invalid, Result};
use crate::types::Dictionary;

/// Tiles every column as a `patch_side`×`patch_side` image in a ⌈√n⌉-wide
/// grid with 1-pixel black separators. Each tile is min-max scaled to
/// [0, 255] on its own; a constant tile is drawn as 128.
pub fn basis_grid_image(phi: &Dictionary, patch_side: usize) -> Result<GrayImage> {
    let m = phi.input_dim();
    if patch_side == 0 || patch_side.checked_mul(patch_side) != Some(m) {
        return Err(invalid(format!("patch side {patch_side} does not match input dim {m}")));
    }
    let n = phi.n_atoms();
    let cols = (n as f64).sqrt().ceil() as usize;
    let cols = if cols * cols < n { cols + 1 } else { cols.max(1) };
    let rows = n.div_ceil(cols);
    let width = cols * patch_side + cols.saturating_sub(1);
    let height = rows * patch_side + rows.saturating_sub(1);
    let mut img = GrayImage::new(width as u32, height.max(1) as u32);
    for k in 0..n {
        let col = phi.matrix().column(k);
        let (lo, hi) = col.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| (lo.min(*v), hi.max(*v)));
        let x0 = (k % cols) * (patch_side + 1);
        let y0 = (k / cols) * (patch_side + 1);
        for r in 0..patch_side {
            for c in 0..patch_side {
                let v = col[r * patch_side + c];
                let level = if hi > lo { ((v - lo) / (hi - lo) * 255.0).round() as u8 } else { 128 };
                img.put_pixel((x0 + c) as u32, (y0 + r) as u32, Luma([level]));
            }
        }
    }
    Ok(img)
}

pub fn render_basis_grid(phi: &Dictionary, patch_side: usize, out_path: impl AsRef<Path>) -> Result<()> {
    basis_grid_image(phi, patch_side)?.save_with_format(out_path, image::ImageFormat::Png)?;
    Ok(())
}
