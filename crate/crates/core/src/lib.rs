//! Geometry and evaluation pipeline for automatic Cobb angle estimation from
//! spinal X-ray landmarks.
//!
//! The crate covers everything downstream of a vertebra detector and a corner
//! regressor:
//!
//! - [`geometry`]: vertebra quads, boxes, and the transforms between crop space
//!   and image space.
//! - [`postprocess`]: crop fractions, detection outlier rejection, vertebra
//!   count enforcement, and polynomial smoothing of landmarks.
//! - [`cobb`]: the three Cobb angles (MT, PT, TL/L) from 68 landmarks.
//! - [`metrics`]: SMAPE and per-angle absolute errors.
//! - [`io`]: landmark/angle CSV and the versioned prediction interchange format.
//! - [`synth`]: synthetic spines with analytically known angles.
//! - [`pipeline`]: the detection → landmarks → angles chain with stage dumps.
//! - [`render`]: SVG overlays of boxes, landmarks and fitted curves.
//!
//! Coordinates are image pixels with the origin at the top-left corner and `y`
//! growing downward, so the topmost vertebra has the smallest `y`.

pub mod cobb;
pub mod error;
pub mod geometry;
pub mod io;
pub mod metrics;
pub mod pipeline;
pub mod postprocess;
pub mod render;
pub mod synth;

pub use cobb::{angle_matrix, cobb_angles, is_s_shape, AngleMatrix, CobbSelection, CobbTriple};
pub use error::{Error, ErrorKind, Result};
pub use geometry::{
    BoundingBox, Detection, ImageDims, Point2, SpineLandmarks, Vec2, VertebraQuad, NUM_VERTEBRAE,
};

pub use metrics::{EvalReport, SmapeVariant};
pub use postprocess::{CropSpec, PolyFit, SmoothMode};
