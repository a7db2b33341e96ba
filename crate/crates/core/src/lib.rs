//! Boundary-aware semantic segmentation of 3D point clouds.
//!
//! A shared point encoder feeds three decoder streams: boundary detection,
//! interior-direction regression and semantic segmentation. The first two
//! steer the feature upsampling of the third through a guided propagation
//! kernel that suppresses neighbors lying across a predicted boundary.
//!
//! Everything runs on a small reverse-mode autodiff engine ([`tensor`]) over
//! synthetic indoor scenes ([`synthgen`]), so the whole pipeline is
//! reproducible on a laptop CPU.

pub mod cli;
pub mod config;
pub mod error;
pub mod geometry;
pub mod groundtruth;
pub mod io;
pub mod losses;
pub mod metrics;
pub mod network;
pub mod pipeline;
pub mod propagation;
pub mod synthgen;
pub mod tensor;

pub use error::{Error, Result};
