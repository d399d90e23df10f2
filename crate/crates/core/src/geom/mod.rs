//! Rigid-body math and point-cloud primitives.

mod chamfer;
mod euler;
mod knn;
mod transform;

pub use chamfer::{chamfer, chamfer_with, ChamferMode};
pub use euler::{euler_from_rotation, rotation_from_euler, wrap_degrees, EulerAngles};
pub use knn::{KnnIndex, Neighbor};
pub use transform::{
    centroid, project_to_so3, random_rotation, rotation_angle, rotation_about, RigidTransform,
};
