//! Sparse coding with orthogonal dictionaries.
//!
//! With an orthonormal dictionary Φ the LASSO and its non-negative variant
//! have closed-form solutions (soft threshold and shifted ReLU of Φᵀx), so a
//! layer of sparse inference is a dense ReLU layer. This crate provides the
//! closed forms, iterative reference solvers, dictionary learning on whitened
//! image patches, stacked layers with a softmax head, sliding-window
//! inference over feature maps, binary formats and a basis-grid renderer.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod data;
pub mod error;
pub mod hier;
pub mod inference;
pub mod learning;
pub mod par;
pub mod sconv;
pub mod types;
pub mod viz;

pub use error::{Error, Result};
pub use par::Exec;
pub use types::{
    CoeffVector, Dictionary, FeatureMap, Lambda, Layer, LayerStack, RegCoeffs, Sample, SignPolicy, WhiteningTransform,
};
