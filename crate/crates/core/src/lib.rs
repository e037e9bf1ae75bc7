//! Learnable functional brain networks from multivariate BOLD-like time series.
//!
//! The pipeline encodes each ROI's series ([`encoder`]), turns the encoded features
//! into a per-sample connectivity graph ([`graphgen`]), and classifies the graph with a
//! graph convolutional network ([`predictor`]). [`harness`] trains and cross-validates
//! the model, and [`analysis`] extracts group-level differences from generated graphs.

pub mod analysis;
pub mod dataset;
pub mod encoder;
pub mod error;
pub mod graphgen;
pub mod harness;
pub mod layers;
pub mod model;
pub mod numerics;
pub mod params;
pub mod predictor;
pub mod selftest;

pub use error::{Error, Result};
