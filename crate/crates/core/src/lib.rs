//! Supervised online change-point detection with learned-metric Sinkhorn
//! divergences.
//!
//! A Mahalanobis ground metric `‖L(x − y)‖²` is learned from labeled change
//! points with a triplet loss on debiased Sinkhorn divergences, then used as
//! the statistic of a sliding-window two-sample test.

pub mod datagen;
pub mod detector;
pub mod error;
pub mod eval;
pub mod experiment;
pub mod io;
pub mod metric;
pub mod ot;
pub mod presets;

pub use error::{Error, Result};
