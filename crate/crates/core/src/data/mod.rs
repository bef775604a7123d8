//! Image ingestion, patch extraction, ZCA whitening and the OSC1 / OSW1 /
//! OSP1 file formats.

use std::path::Path;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{check_dim, invalid, Error, Result};
use crate::types::{Dictionary, Sample, WhiteningTransform};

pub mod format;
pub mod pgm;
pub mod synth;

pub use pgm::{load_image_pgm, parse_pgm, save_pgm, Image};

use format::{Reader, Writer, DICTIONARY_MAGIC, PATCHES_MAGIC, WHITENING_MAGIC};

/// Square patches stored row-major, one patch per row (`count × side²`).
#[derive(Debug, Clone, PartialEq)]
pub struct PatchSet {
    side: usize,
    data: Vec<f64>,
}

impl PatchSet {
    pub fn new(side: usize, data: Vec<f64>) -> Result<Self> {
        if side == 0 {
            return Err(invalid("patch side must be >= 1"));
        }
        let m = side * side;
        if !data.len().is_multiple_of(m) {
            return Err(invalid(format!("{} values is not a whole number of {m}-pixel patches", data.len())));
        }
        if !data.iter().all(|v| v.is_finite()) {
            return Err(Error::NonFinite("patches"));
        }
        Ok(PatchSet { side, data })
    }

    /// Builds a patch set from a `count × m` row-major matrix; m must be a
    /// perfect square.
    pub fn from_rows(dim: usize, data: Vec<f64>) -> Result<Self> {
        let side = (dim as f64).sqrt().round() as usize;
        if side * side != dim {
            return Err(invalid(format!("patch dimension {dim} is not a perfect square")));
        }
        Self::new(side, data)
    }

    pub fn side(&self) -> usize {
        self.side
    }

    pub fn dim(&self) -> usize {
        self.side * self.side
    }

    pub fn len(&self) -> usize {
        self.data.len() / self.dim()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn patch(&self, i: usize) -> &[f64] {
        let m = self.dim();
        &self.data[i * m..(i + 1) * m]
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    /// Patches as columns of an `m × count` matrix.
    pub fn as_columns(&self) -> DMatrix<f64> {
        DMatrix::from_column_slice(self.dim(), self.len(), &self.data)
    }

    pub fn to_samples(&self) -> Vec<Sample> {
        (0..self.len())
            .map(|i| Sample::from_slice(self.patch(i)).expect("patch values are finite"))
            .collect()
    }

    /// The first `count` patches.
    pub fn truncated(&self, count: usize) -> PatchSet {
        let end = count.min(self.len()) * self.dim();
        PatchSet {
            side: self.side,
            data: self.data[..end].to_vec(),
        }
    }
}

fn push_patch(out: &mut Vec<f64>, img: &Image, side: usize, row: usize, col: usize) {
    let start = out.len();
    for r in row..row + side {
        let base = r * img.width();
        out.extend_from_slice(&img.pixels()[base + col..base + col + side]);
    }
    let patch = &mut out[start..];
    let mean = patch.iter().sum::<f64>() / patch.len() as f64;
    patch.iter_mut().for_each(|v| *v -= mean);
}

/// `count` mean-subtracted patches at uniformly random top-left positions.
pub fn extract_patches(img: &Image, patch_side: usize, count: usize, rng_seed: u64) -> Result<PatchSet> {
    extract_patches_from(std::slice::from_ref(img), patch_side, count, rng_seed)
}

/// As [`extract_patches`], drawing the source image uniformly for each patch.
pub fn extract_patches_from(images: &[Image], patch_side: usize, count: usize, rng_seed: u64) -> Result<PatchSet> {
    if images.is_empty() {
        return Err(invalid("no images to extract patches from"));
    }
    if patch_side == 0 {
        return Err(invalid("patch side must be >= 1"));
    }
    for img in images {
        if img.width() < patch_side || img.height() < patch_side {
            return Err(invalid(format!(
                "image {}x{} is smaller than the {patch_side}x{patch_side} patch",
                img.width(),
                img.height()
            )));
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(rng_seed);
    let mut data = Vec::with_capacity(count * patch_side * patch_side);
    for _ in 0..count {
        let img = &images[rng.random_range(0..images.len())];
        let row = rng.random_range(0..=img.height() - patch_side);
        let col = rng.random_range(0..=img.width() - patch_side);
        push_patch(&mut data, img, patch_side, row, col);
    }
    PatchSet::new(patch_side, data)
}

/// Sample mean and population covariance of the patches.
pub fn patch_covariance(patches: &PatchSet) -> Result<(DVector<f64>, DMatrix<f64>)> {
    if patches.is_empty() {
        return Err(invalid("no patches"));
    }
    let x = patches.as_columns();
    let count = x.ncols() as f64;
    let mean = x.column_mean();
    let mut centered = x;
    for mut col in centered.column_iter_mut() {
        col -= &mean;
    }
    let cov = (&centered * centered.transpose()) / count;
    Ok((mean, cov))
}

/// ZCA whitening `W = E diag((d + eps)^(-1/2)) Eᵀ` from the eigendecomposition
/// of the patch covariance.
pub fn fit_whitening(patches: &PatchSet, eps: f64) -> Result<WhiteningTransform> {
    if !(eps > 0.0) || !eps.is_finite() {
        return Err(invalid(format!("whitening eps must be > 0, got {eps}")));
    }
    let (mean, cov) = patch_covariance(patches)?;
    let eig = cov.symmetric_eigen();
    let scale = eig.eigenvalues.map(|d| 1.0 / (d.max(0.0) + eps).sqrt());
    let e = &eig.eigenvectors;
    let mut w = e * DMatrix::from_diagonal(&scale) * e.transpose();
    let sym = (&w + w.transpose()) * 0.5;
    w.copy_from(&sym);
    WhiteningTransform::new(mean, w)
}

/// `x ↦ W (x - mean)` for every patch.
pub fn apply_whitening(wt: &WhiteningTransform, patches: &PatchSet) -> Result<PatchSet> {
    check_dim("patch dimension", wt.dim(), patches.dim())?;
    let mut x = patches.as_columns();
    for mut col in x.column_iter_mut() {
        col -= wt.mean();
    }
    let y = wt.matrix() * x;
    PatchSet::new(patches.side(), y.as_slice().to_vec())
}

pub fn encode_dictionary(phi: &Dictionary) -> Result<Vec<u8>> {
    let m = phi.matrix();
    let mut w = Writer::new();
    w.matrix_block(&DICTIONARY_MAGIC, m.nrows(), m.ncols(), row_major(m))?;
    Ok(w.finish())
}

pub(crate) fn row_major(m: &DMatrix<f64>) -> impl Iterator<Item = f64> + '_ {
    (0..m.nrows()).flat_map(move |i| (0..m.ncols()).map(move |j| m[(i, j)]))
}

pub(crate) fn from_row_major(rows: usize, cols: usize, values: &[f64]) -> DMatrix<f64> {
    DMatrix::from_row_slice(rows, cols, values)
}

pub(crate) fn decode_dictionary_from(r: &mut Reader<'_>) -> Result<Dictionary> {
    let (rows, cols, values) = r.matrix_block(&DICTIONARY_MAGIC)?;
    Dictionary::from_matrix(from_row_major(rows, cols, &values))
}

/// Decodes an OSC1 dictionary. The orthogonal flag is recovered by checking
/// `ΦᵀΦ = I`; otherwise the columns must be unit-norm.
pub fn decode_dictionary(bytes: &[u8]) -> Result<Dictionary> {
    let mut r = Reader::new(bytes);
    let d = decode_dictionary_from(&mut r)?;
    r.finish()?;
    Ok(d)
}

/// Decodes the matrix of an OSC1 file without dictionary validation.
pub fn decode_matrix(bytes: &[u8]) -> Result<DMatrix<f64>> {
    let mut r = Reader::new(bytes);
    let (rows, cols, values) = r.matrix_block(&DICTIONARY_MAGIC)?;
    r.finish()?;
    Ok(from_row_major(rows, cols, &values))
}

pub fn save_dictionary(path: impl AsRef<Path>, phi: &Dictionary) -> Result<()> {
    format::write_file(path.as_ref(), &encode_dictionary(phi)?)
}

pub fn load_dictionary(path: impl AsRef<Path>) -> Result<Dictionary> {
    decode_dictionary(&format::read_file(path.as_ref())?)
}

/// OSW1: dims `(m + 1, m)`, row 0 the mean, rows 1..=m the matrix.
pub fn encode_whitening(wt: &WhiteningTransform) -> Result<Vec<u8>> {
    let m = wt.dim();
    let rows = m
        .checked_add(1)
        .ok_or_else(|| Error::DimensionOverflow("whitening dim".into()))?;
    let values = wt.mean().iter().copied().chain(row_major(wt.matrix()));
    let mut w = Writer::new();
    w.matrix_block(&WHITENING_MAGIC, rows, m, values)?;
    Ok(w.finish())
}

pub fn decode_whitening(bytes: &[u8]) -> Result<WhiteningTransform> {
    let mut r = Reader::new(bytes);
    let (rows, cols, values) = r.matrix_block(&WHITENING_MAGIC)?;
    r.finish()?;
    if cols == 0 || rows != cols + 1 {
        return Err(Error::Malformed(format!("whitening block must be (m+1) x m, got {rows} x {cols}")));
    }
    let mean = DVector::from_column_slice(&values[..cols]);
    let matrix = from_row_major(cols, cols, &values[cols..]);
    WhiteningTransform::new(mean, matrix)
}

pub fn save_whitening(path: impl AsRef<Path>, wt: &WhiteningTransform) -> Result<()> {
    format::write_file(path.as_ref(), &encode_whitening(wt)?)
}

pub fn load_whitening(path: impl AsRef<Path>) -> Result<WhiteningTransform> {
    decode_whitening(&format::read_file(path.as_ref())?)
}

/// OSP1: dims `(count, m)`, one patch per row.
pub fn encode_patches(patches: &PatchSet) -> Result<Vec<u8>> {
    let mut w = Writer::new();
    w.matrix_block(&PATCHES_MAGIC, patches.len(), patches.dim(), patches.data().iter().copied())?;
    Ok(w.finish())
}

pub fn decode_patches(bytes: &[u8]) -> Result<PatchSet> {
    let mut r = Reader::new(bytes);
    let (_, cols, values) = r.matrix_block(&PATCHES_MAGIC)?;
    r.finish()?;
    PatchSet::from_rows(cols, values)
}

pub fn save_patches(path: impl AsRef<Path>, patches: &PatchSet) -> Result<()> {
    format::write_file(path.as_ref(), &encode_patches(patches)?)
}

pub fn load_patches(path: impl AsRef<Path>) -> Result<PatchSet> {
    decode_patches(&format::read_file(path.as_ref())?)
}
