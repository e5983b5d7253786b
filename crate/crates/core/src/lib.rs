//! Decoder-side coarse-to-fine stereo feature alignment.
//!
//! The main view is coded independently by a baseline transform codec; at the
//! decoder, features of the reconstruction are aligned with features of the
//! losslessly available side view in two stages (row-restricted patch
//! matching, then sparse disparity refinement) and fused back into a residual
//! that improves the reconstruction.

pub mod codec;
pub mod error;
pub mod fusion;
pub mod io;
pub mod matcher;
pub mod metrics;
pub mod nn;
pub mod pipeline;
pub mod pyramid;
pub mod refine;
pub mod tensor;
pub mod weights;

pub use error::{Error, Result};
