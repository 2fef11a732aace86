//! Crate-wide error type.

use thiserror::Error;

/// Errors surfaced by the library.
#[derive(Debug, Error)]
pub enum SlamError {
    /// Point is at or behind the near plane; the caller must cull it.
    #[error("point behind camera (z = {z:.3e} <= z_min = {z_min:.3e})")]
    BehindCamera { z: f64, z_min: f64 },

    /// Two buffers that must share dimensions do not.
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    /// Index outside the valid splat range.
    #[error("index {index} out of range (len {len})")]
    IndexOutOfRange { index: usize, len: usize },

    /// Operation requires a non-empty map.
    #[error("map is empty")]
    EmptyMap,

    /// Operation requires a non-empty keyframe buffer.
    #[error("keyframe buffer is empty")]
    EmptyBuffer,

    /// Operation requires a non-empty list.
    #[error("empty list")]
    EmptyList,

    /// A render output was produced from an older map generation.
    #[error("stale render state: output generation {output} != map generation {map}")]
    StaleRenderState { output: u64, map: u64 },

    /// Camera pair has (numerically) zero baseline.
    #[error("degenerate baseline between views")]
    DegenerateBaseline,

    /// Epipolar geometry undefined for this pose pair.
    #[error("degenerate two-view geometry")]
    DegenerateGeometry,

    /// Triangulated point lies behind one of the cameras.
    #[error("cheirality violation: triangulated point behind a camera")]
    CheiralityViolation,

    /// Homogeneous solution too close to the plane at infinity.
    #[error("near-zero homogeneous coordinate |w| = {w:.3e}")]
    NearZeroHomogeneous { w: f64 },

    /// No neighbour keyframe offers a usable baseline for seeding.
    #[error("no valid neighbours for seeding")]
    NoValidNeighbours,

    /// Trajectory alignment needs at least two associated pose pairs.
    #[error("too few poses: got {0}, need >= 2")]
    TooFewPoses(usize),

    /// Dataset parsing or IO failure.
    #[error("dataset error: {0}")]
    Dataset(String),

    /// The bootstrap stage yielded no usable seeds.
    #[error("bootstrap failure: {0}")]
    BootstrapFailure(String),

    /// Configuration file problem.
    #[error("config error: {0}")]
    Config(String),

    /// Underlying IO failure.
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

impl SlamError {
    /// Short machine-readable code used by the CLI error JSON and the C API.
    pub fn code(&self) -> &'static str {
        match self {
            SlamError::BehindCamera { .. } => "behind_camera",
            SlamError::DimensionMismatch(_) => "dimension_mismatch",
            SlamError::IndexOutOfRange { .. } => "index_out_of_range",
            SlamError::EmptyMap => "empty_map",
            SlamError::EmptyBuffer => "empty_buffer",
            SlamError::EmptyList => "empty_list",
            SlamError::StaleRenderState { .. } => "stale_render_state",
            SlamError::DegenerateBaseline => "degenerate_baseline",
            SlamError::DegenerateGeometry => "degenerate_geometry",
            SlamError::CheiralityViolation => "cheirality_violation",
            SlamError::NearZeroHomogeneous { .. } => "near_zero_homogeneous",
            SlamError::NoValidNeighbours => "no_valid_neighbours",
            SlamError::TooFewPoses(_) => "too_few_poses",
            SlamError::Dataset(_) => "dataset_error",
            SlamError::BootstrapFailure(_) => "bootstrap_failure",
            SlamError::Config(_) => "config_error",
            SlamError::Io(_) => "io_error",
        }
    }
}

pub type Result<T> = std::result::Result<T, SlamError>;
