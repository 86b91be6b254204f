//! Hierarchical self-attention networks for point clouds.
//!
//! The crate contains a small reverse-mode autodiff engine ([`tensor`]), the
//! point-cloud preprocessing layers ([`geometry`]), the attention stacks that
//! aggregate a neighborhood into a feature and expand a feature back into a
//! set ([`attention`]), the classification, part-segmentation and
//! auto-encoding networks built from them ([`models`]), their objectives and
//! metrics, data handling, and a training runtime.

pub mod analysis;
pub mod attention;
pub mod data;
pub mod error;
pub mod geometry;
pub mod layers;
pub mod losses;
pub mod metrics;
pub mod models;
pub mod rng;
pub mod tensor;
pub mod train;

pub use error::{Error, Result};
