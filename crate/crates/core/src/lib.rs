//! Probabilistic warp-consistency training for dense semantic matching.
//!
//! The crate is organised bottom-up:
//!
//! - [`ndgraph`]: a small reverse-mode autodiff engine with a finite
//!   difference checker.
//! - [`warp`]: random homography / TPS / affine-TPS warps, bilinear image
//!   warping and training triplet construction.
//! - [`probmap`]: cost volumes, column-stochastic probabilistic mappings with
//!   an optional unmatched state, composition and match extraction.
//! - [`objectives`]: the visibility-masked bipath loss, warp supervision,
//!   negative-pair loss, keypoint losses and the weak / strong composites.
//! - [`synthdata`]: a procedural semantic-matching corpus with exact ground
//!   truth.
//! - [`model`]: a toy convolutional encoder, Adam, the training loop and
//!   checkpoints.
//! - [`evalkit`]: PCK, dense transfer accuracy, sparsification / AUSE and
//!   report emission.
//! - [`gradsuite`]: finite-difference checks of every primitive, loss and
//!   composite objective.
//! - [`config`]: the sectioned `key = value` experiment configuration.

pub mod config;
pub mod error;
pub mod evalkit;
pub mod gradsuite;
pub mod model;
pub mod ndgraph;
pub mod objectives;
pub mod probmap;
pub mod synthdata;
pub mod warp;

pub use error::{Error, Result};
