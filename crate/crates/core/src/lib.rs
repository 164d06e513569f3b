//! Curb extraction from fused lidar and fisheye-camera semantics.
//!
//! The pipeline projects lidar points into semantic masks to pick curb
//! candidates, groups them into curb segments with density clustering,
//! cleans each segment with a Delaunay/Voronoi medial-axis filter (or a
//! RANSAC polynomial baseline) and scores the result against ground-truth
//! curb polylines.

pub mod association;
pub mod clustering;
pub mod config;
pub mod delaunay;
pub mod error;
pub mod eval;
pub mod exec;
pub mod fisheye;
pub mod io;
pub mod frames;
pub mod pipeline;
pub mod ransac;
pub mod seeds;
pub mod spatial;
pub mod synth;

pub use error::{Error, Result};
pub use exec::Execution;

pub type Point3 = nalgebra::Point3<f64>;
pub type Vector3 = nalgebra::Vector3<f64>;
