//! View-invariant pose representations learned from multi-view image pairs.
//!
//! An auto-encoder factors each image into a canonical 3D pose, shared by
//! every camera that sees the same moment, and a viewpoint. The pose
//! encoder is then reused for action classification and movement-quality
//! scoring. See the guide under `book/` for a walk through the pipeline.
//!
//! ```
//! use viewpose::losses::{total_loss, LossWeights};
//!
//! let b = total_loss(0.5, 10.0, 0.25, 0.25, &LossWeights::default())?;
//! assert!((b.total - 1.01).abs() < 1e-12);
//! # Ok::<(), viewpose::Error>(())
//! ```

pub mod checkpoint;
pub mod cli;
pub mod config;
pub mod data;
pub mod downstream;
pub mod error;
pub mod eval;
pub mod geometry;
pub mod image;
pub mod losses;
pub mod model;
pub mod rng;
pub mod trainer;

pub use error::{Error, Result};

// Book chapters compile and run as doctests.
#[cfg(doctest)]
#[doc = include_str!("../../../book/src/introduction.md")]
mod book_introduction {}
#[cfg(doctest)]
#[doc = include_str!("../../../book/src/geometry.md")]
mod book_geometry {}
#[cfg(doctest)]
#[doc = include_str!("../../../book/src/losses.md")]
mod book_losses {}
#[cfg(doctest)]
#[doc = include_str!("../../../book/src/data.md")]
mod book_data {}
#[cfg(doctest)]
#[doc = include_str!("../../../book/src/training.md")]
mod book_training {}
#[cfg(doctest)]
#[doc = include_str!("../../../book/src/downstream.md")]
mod book_downstream {}
#[cfg(doctest)]
#[doc = include_str!("../../../book/src/evaluation.md")]
mod book_evaluation {}
#[cfg(doctest)]
#[doc = include_str!("../../../book/src/cli.md")]
mod book_cli {}
