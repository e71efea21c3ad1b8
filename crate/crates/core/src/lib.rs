//! Multi-scale flow-field instance segmentation for crystal-size measurement in
//! polycrystal micrographs.
//!
//! The pipeline resizes an image to several resolutions, obtains a flow field
//! and foreground map at each, blends them pixel-wise with size-level attention
//! maps so that every crystal is handled at the resolution suited to its size,
//! and recovers instances by following the blended flow. Predictions come from
//! an oracle derived from ground-truth labels (optionally degraded) or from
//! externally produced files.

// Negated comparisons reject NaN along with out-of-range values.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod attention;
pub mod error;
pub mod flowfield;
pub mod grid;
pub mod io;
pub mod metrics;
pub mod pipeline;
pub mod scalespace;
pub mod synth;
pub mod tracker;

pub use error::{Error, Result};
pub use grid::{FlowField, ForegroundMap, Grid, LabelMap, Rect};
