//! Multi-piece fracture assembly.
//!
//! The pipeline takes a broken object as a set of point clouds (one per piece,
//! each in an arbitrary pose), segments the fracture surface of every piece,
//! matches fracture points across all pieces at once with primal/dual
//! descriptors and a Sinkhorn layer, and recovers a global pose per piece with
//! pairwise RANSAC followed by pose-graph averaging.
//!
//! Module map:
//! - [`tensor`]: dense tensors, reverse-mode tape, Adam, checkpoints
//! - [`geom`]: rigid transforms, Euler angles, k-NN, Chamfer distance
//! - [`synth`]: synthetic fractured objects with ground truth
//! - [`dataio`]: binary object files, manifests, PLY export, pose files
//! - [`net`]: backbone, attention layers, segmentation and descriptor heads
//! - [`matching`]: affinity, Sinkhorn, Hungarian and the training losses
//! - [`align`]: weighted Kabsch, RANSAC, global alignment, full assembly
//! - [`train`]: the staged joint training loop
//! - [`metrics`]: rotation/translation errors, part accuracy, reports

pub mod align;
pub mod config;
pub mod dataio;
pub mod error;
pub mod geom;
pub mod matching;
pub mod metrics;
pub mod net;
pub mod scalar;
pub mod selftest;
pub mod synth;
pub mod tensor;
pub mod train;

pub use error::{Error, Result};
pub use scalar::Real;

/// Double-precision aliases used throughout the pipeline.
pub type RigidTransform = geom::RigidTransform<f64>;
pub type RigidTransformF32 = geom::RigidTransform<f32>;
pub type KnnIndex = geom::KnnIndex<f64>;
pub type KnnIndexF32 = geom::KnnIndex<f32>;
pub type Point3 = nalgebra::Point3<f64>;
pub type Vector3 = nalgebra::Vector3<f64>;
pub type Matrix3 = nalgebra::Matrix3<f64>;
pub type PoseGraph = align::PoseGraph<f64>;
