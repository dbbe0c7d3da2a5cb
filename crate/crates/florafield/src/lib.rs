//! Multi-view plant-organ reconstruction: from posed images with per-view
//! instance masks to a labeled 3D point cloud with globally consistent organ IDs.
//!
//! The pipeline runs in six stages:
//!
//! 1. **synthgen** — build an analytic plant (capsule stems, ellipsoid leaves,
//!    sphere flowers) and render ground-truth RGB / semantic / instance / depth
//!    views from a camera ring ([`scene`]).
//! 2. **corrupt** — scramble the per-view instance IDs and inject the six
//!    segmentation error patterns a real 2D detector exhibits ([`scene::corrupt`]).
//! 3. **match** — unify per-view IDs into global organ IDs by bidirectional
//!    voting across views, detecting and repairing the error patterns
//!    ([`matching`]).
//! 4. **train** — fit a joint radiance field (hash-grid position encoding,
//!    spherical-harmonic directions, multi-stream MLP) that renders color,
//!    semantic, and instance channels through volume rendering ([`field`],
//!    [`render`]).
//! 5. **extract** — marching-cubes the trained density, query the field at the
//!    vertices, and decode per-point labels ([`extract`], [`codec`]).
//! 6. **eval** — semantic precision/recall/F1/IoU, instance coverage metrics,
//!    and point-cloud completeness against the analytic ground truth
//!    ([`metrics`]), plus a per-class DBSCAN clustering baseline ([`cluster`]).
//!
//! [`pipeline`] ties the stages together behind one JSON config with
//! deterministic per-stage seeding and a manifest of every artifact produced.

pub mod camera;
pub mod cloud;
pub mod codec;
pub mod field;
pub mod geom;
pub mod matching;
pub mod rng;
pub mod scene;

pub mod cluster;
pub mod extract;
pub mod io;
pub mod mc_tables;
pub mod metrics;
pub mod pipeline;
pub mod render;

/// Library-wide error type. Stage orchestration maps these onto process exit
/// codes (config errors vs stage failures) at the CLI boundary.
#[derive(thiserror::Error, Debug)]
pub enum Error {
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
    #[error("config: {0}")]
    Config(String),
    #[error("invalid input: {0}")]
    InvalidInput(String),
    #[error("malformed file {path}: {detail}")]
    Format { path: String, detail: String },
    #[error("training diverged at iteration {iter}: {detail}")]
    Diverged { iter: usize, detail: String },
    #[error("empty extraction: {0}")]
    EmptyExtraction(String),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub fn config(msg: impl Into<String>) -> Self {
        Error::Config(msg.into())
    }

    pub fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidInput(msg.into())
    }

    pub fn format(path: impl Into<String>, detail: impl Into<String>) -> Self {
        Error::Format { path: path.into(), detail: detail.into() }
    }
}
