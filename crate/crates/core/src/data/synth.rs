//! Seeded synthetic images with natural-image-like statistics.
//!
//! The dead-leaves model paints occluding disks with power-law distributed
//! radii and uniform gray levels, which gives scale-invariant, edge-dominated
//! images.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::pgm::Image;
use crate::error::{invalid, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DeadLeaves {
    pub width: usize,
    pub height: usize,
    pub disks: usize,
    pub min_radius: f64,
    pub max_radius: f64,
}

impl DeadLeaves {
    pub fn new(width: usize, height: usize) -> Self {
        DeadLeaves {
            width,
            height,
            disks: (width * height) / 12,
            min_radius: 1.5,
            max_radius: (width.min(height) as f64) / 4.0,
        }
    }

    pub fn render(&self, seed: u64) -> Result<Image> {
        if self.width == 0 || self.height == 0 {
            return Err(invalid("image must be at least 1x1"));
        }
        if !(self.min_radius > 0.0 && self.max_radius >= self.min_radius) {
            return Err(invalid("need 0 < min_radius <= max_radius"));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (w, h) = (self.width, self.height);
        let mut pixels = vec![0.5; w * h];
        let lo = self.min_radius.powi(-2);
        let hi = self.max_radius.powi(-2);
        for _ in 0..self.disks {
            // inverse CDF of a density proportional to r^-3
            let u: f64 = rng.random();
            let r = (lo - u * (lo - hi)).powf(-0.5);
            let cx = rng.random::<f64>() * w as f64;
            let cy = rng.random::<f64>() * h as f64;
            let level: f64 = rng.random();
            let x0 = (cx - r).floor().max(0.0) as usize;
            let x1 = ((cx + r).ceil() as usize).min(w);
            let y0 = (cy - r).floor().max(0.0) as usize;
            let y1 = ((cy + r).ceil() as usize).min(h);
            for y in y0..y1 {
                for x in x0..x1 {
                    let dx = x as f64 + 0.5 - cx;
                    let dy = y as f64 + 0.5 - cy;
                    if dx * dx + dy * dy <= r * r {
                        pixels[y * w + x] = level;
                    }
                }
            }
        }
        Image::new(w, h, box_blur(&pixels, w, h))
    }
}

// 3x3 binomial blur; removes single-pixel aliasing at disk edges
fn box_blur(src: &[f64], w: usize, h: usize) -> Vec<f64> {
    let kernel = [1.0, 2.0, 1.0];
    let mut out = vec![0.0; src.len()];
    for y in 0..h {
        for x in 0..w {
            let mut acc = 0.0;
            let mut norm = 0.0;
            for (dy, ky) in kernel.iter().enumerate() {
                for (dx, kx) in kernel.iter().enumerate() {
                    let (yy, xx) = (y as isize + dy as isize - 1, x as isize + dx as isize - 1);
                    if yy >= 0 && xx >= 0 && (yy as usize) < h && (xx as usize) < w {
                        let k = ky * kx;
                        acc += k * src[yy as usize * w + xx as usize];
                        norm += k;
                    }
                }
            }
            out[y * w + x] = acc / norm;
        }
    }
    out
}

/// `count` dead-leaves images with consecutive seeds starting at `seed`.
pub fn dead_leaves_set(width: usize, height: usize, count: usize, seed: u64) -> Result<Vec<Image>> {
    let model = DeadLeaves::new(width, height);
    (0..count as u64).map(|k| model.render(seed.wrapping_add(k))).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn deterministic_and_bounded() {
        let a = DeadLeaves::new(32, 24).render(5).unwrap();
        let b = DeadLeaves::new(32, 24).render(5).unwrap();
        assert_eq!(a, b);
        assert!(a.pixels().iter().all(|v| (0.0..=1.0).contains(v)));
        let var = {
            let mean = a.pixels().iter().sum::<f64>() / a.pixels().len() as f64;
            a.pixels().iter().map(|v| (v - mean).powi(2)).sum::<f64>() / a.pixels().len() as f64
        };
        assert!(var > 1e-3);
        assert!(DeadLeaves::new(0, 3).render(0).is_err());
    }
}
