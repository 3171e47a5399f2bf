//! Numerical building blocks for prompt-conditioned metric depth:
//!
//! - [`geometry`]: pinhole projection of point clouds into depth grids,
//!   unprojection into point maps, analytic synthetic scenes.
//! - [`alignment`]: global affine and pixel-wise scale alignment of a
//!   dense prior to sparse metric samples.
//! - [`prompting`]: sparse prompt sampling and three-channel preparation.
//! - [`losses`]: robust MAE, SSI-MAGE, teacher and student objectives with
//!   analytic gradients and a finite-difference checker.
//! - [`metrics`]: AbsRel/RMSE/MAE/log10/δ accuracy, boundary F1, FOV error.
//! - [`calibration`]: focal length from a point map by IRLS.

// `!(x > 0.0)` is used on purpose: it also rejects NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod alignment;
pub mod calibration;
pub mod error;
pub mod geometry;
pub mod grid;
pub mod losses;
pub mod metrics;
pub mod prompting;

pub use error::{Error, Result};
pub use grid::{DepthGrid, ScalarMap};
