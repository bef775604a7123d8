//! Sliding-window sparse coding over feature maps.
//!
//! Every valid M×M window of an N×N×B map is flattened to a length M·M·B
//! vector and coded independently against one dictionary. With an
//! orthogonalized Φ and the per-unit ReLU transform this is a valid-mode
//! convolution with kernels Φᵀ, bias -λ and ReLU.

use std::path::Path;

use crate::data::format::{Reader, Writer, FEATURE_MAP_MAGIC};
use crate::error::{check_dim, invalid, Error, Result};
use crate::inference::{nonneg_lasso_iterative_per_unit, per_unit_forward, DEFAULT_MAX_ITER, DEFAULT_TOL};
use crate::par::{map_indices, Exec};
use crate::types::{Dictionary, FeatureMap, RegCoeffs, Sample};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ConvSolver {
    OrthClosedForm,
    GeneralIterative,
}

/// Flattened windows in row-major grid order.
#[derive(Debug, Clone, PartialEq)]
pub struct Windows {
    pub grid_side: usize,
    pub vectors: Vec<Vec<f64>>,
}

/// Number of valid window positions along one axis.
pub fn output_side(n: usize, window: usize, stride: usize) -> Result<usize> {
    if window == 0 || stride == 0 {
        return Err(invalid("window and stride must be >= 1"));
    }
    if window > n {
        return Err(invalid(format!("window {window} larger than map side {n}")));
    }
    Ok((n - window) / stride + 1)
}

fn window_at(map: &FeatureMap, window: usize, i0: usize, j0: usize) -> Vec<f64> {
    let mut v = Vec::with_capacity(window * window * map.channels());
    for u in 0..window {
        for w in 0..window {
            v.extend_from_slice(map.at(i0 + u, j0 + w));
        }
    }
    v
}

pub fn gather_windows(map: &FeatureMap, window: usize, stride: usize) -> Result<Windows> {
    let g = output_side(map.side(), window, stride)?;
    let vectors = (0..g * g)
        .map(|k| window_at(map, window, (k / g) * stride, (k % g) * stride))
        .collect();
    Ok(Windows { grid_side: g, vectors })
}

pub fn sconv_forward(
    map: &FeatureMap,
    phi: &Dictionary,
    reg: &RegCoeffs,
    window: usize,
    stride: usize,
    solver: ConvSolver,
) -> Result<FeatureMap> {
    sconv_forward_with(Exec::default(), map, phi, reg, window, stride, solver)
}

pub fn sconv_forward_with(
    exec: Exec,
    map: &FeatureMap,
    phi: &Dictionary,
    reg: &RegCoeffs,
    window: usize,
    stride: usize,
    solver: ConvSolver,
) -> Result<FeatureMap> {
    let g = output_side(map.side(), window, stride)?;
    check_dim("dictionary input dim (M*M*B)", window * window * map.channels(), phi.input_dim())?;
    let n = phi.n_atoms();
    let lambdas = reg.to_vector(n)?;
    if solver == ConvSolver::OrthClosedForm {
        phi.require_orthogonal()?;
    }
    let coded: Vec<Result<Vec<f64>>> = map_indices(exec, g * g, |k| {
        let x = Sample::from_slice(&window_at(map, window, (k / g) * stride, (k % g) * stride))?;
        let a = match solver {
            ConvSolver::OrthClosedForm => per_unit_forward(phi, &x, reg)?,
            ConvSolver::GeneralIterative => nonneg_lasso_iterative_per_unit(phi, &x, &lambdas, DEFAULT_TOL, DEFAULT_MAX_ITER)?.0,
        };
        Ok(a.into_inner().as_slice().to_vec())
    });
    let mut data = Vec::with_capacity(g * g * n);
    for c in coded {
        data.extend(c?);
    }
    FeatureMap::new(g, n, data)
}

pub fn encode_feature_map(map: &FeatureMap) -> Result<Vec<u8>> {
    let mut w = Writer::new();
    w.magic(&FEATURE_MAP_MAGIC)
        .dim(map.side(), "N")?
        .dim(map.side(), "N")?
        .dim(map.channels(), "B")?;
    w.values(map.data().iter().copied());
    Ok(w.finish())
}

pub fn decode_feature_map(bytes: &[u8]) -> Result<FeatureMap> {
    let mut r = Reader::new(bytes);
    r.magic(&FEATURE_MAP_MAGIC)?;
    let (rows, cols, channels) = (r.u32()?, r.u32()?, r.u32()?);
    if rows != cols {
        return Err(Error::Malformed(format!("feature map must be square, got {rows}x{cols}")));
    }
    let count = rows
        .checked_mul(cols)
        .and_then(|v| v.checked_mul(channels))
        .ok_or_else(|| Error::DimensionOverflow(format!("{rows} x {cols} x {channels}")))?;
    let data = r.values(count)?;
    r.finish()?;
    FeatureMap::new(rows, channels, data)
}

pub fn save_feature_map(path: impl AsRef<Path>, map: &FeatureMap) -> Result<()> {
    Ok(std::fs::write(path, encode_feature_map(map)?)?)
}

pub fn load_feature_map(path: impl AsRef<Path>) -> Result<FeatureMap> {
    decode_feature_map(&std::fs::read(path)?)
}
