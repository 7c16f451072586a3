//! Weighted template matching.
//!
//! Scores image windows against eye templates with a weighted correlation
//! coefficient, where a per-pixel weight map (uniform, Gaussian or
//! exponential) decides which template regions dominate the score.
//!
//! - [`matcher`]: reference correlation and exhaustive search.
//! - [`fastmatch`]: the same search from precomputed window sums.
//! - [`weightmaps`]: weight map generators.
//! - [`synth`]: seeded synthetic eye scenes with ground truth.
//! - [`eval`]: detection-rate experiments over template counts and map kinds.
//! - [`io`]: PGM, annotation CSV, weight map and heat map formats.
//! - [`cli`]: the `weightmatch` command line.

pub mod cli;
pub mod error;
pub mod eval;
pub mod fastmatch;
pub mod image;
pub mod io;
pub mod matcher;
pub mod synth;
pub mod weightmaps;

pub use error::{Error, Result};
pub use image::{extract_patch, Eye, GrayImage, Patch, Point, PointF, Rect, Template};
pub use matcher::{
    match_ensemble, match_template, ncc, weighted_ncc, MatchResult, MatchScore, SearchMode,
};
pub use weightmaps::{WeightMap, WeightSpec};
