//! Deterministic Gaussian-splatting SLAM on the CPU.
//!
//! The crate provides a differentiable splat rasterizer with analytic SE(3)
//! pose gradients, photometric camera tracking with exposure compensation,
//! co-visibility keyframing, correspondence-driven one-shot map seeding via
//! multi-view triangulation, and regularized sliding-window refinement, plus
//! the dataset, metrics, and CLI plumbing to run the full pipeline end to end.

pub mod error;
pub mod geometry;
pub mod img;
pub mod keyframe;
pub mod matcher;
pub mod optim;
pub mod render;
pub mod seeding;
pub mod sh;
pub mod splatmap;
pub mod ssim;
pub mod tracking;

pub use error::{Result, SlamError};
