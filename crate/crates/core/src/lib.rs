// SPDX-License-Identifier: Apache-2.0

//! Billboard detection and driver gaze-duration classification.
//!
//! Images go through an exported detector graph (or a deterministic stub),
//! detections are decoded and suppressed, tied to billboard instances, turned
//! into box-geometry and embedding features, and classified as `none`,
//! `medium` or `long` gaze by a tuned soft-voting ensemble. Per-billboard
//! votes and detection/classification metrics sit on top.

pub mod backend;
pub mod classifier;
pub mod cli;
pub mod config;
pub mod dataset;
pub mod detector;
pub mod error;
pub mod evaluation;
pub mod features;
pub mod geometry;
pub mod imaging;
pub mod linalg;
pub mod parallel;
pub mod pipeline;
pub mod render;
pub mod synth;

pub use error::{Error, Result};
pub use geometry::{iou, to_norm, BBox, Detection, GazeClass, LetterboxTransform, NormBBox};
