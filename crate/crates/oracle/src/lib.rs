//! Independent reference implementations and the acceptance suite.

#![allow(clippy::needless_range_loop)]

pub mod acceptance;
pub mod refs;
