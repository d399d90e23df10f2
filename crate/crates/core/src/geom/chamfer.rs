use nalgebra::Point3;

use super::KnnIndex;
use crate::error::{Error, Result};
use crate::scalar::Real;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum ChamferMode {
    /// Mean of unsquared nearest-neighbour distances.
    #[default]
    Unsquared,
    Squared,
}

/// `½·[mean_a min_b ‖a−b‖ + mean_b min_a ‖b−a‖]`.
pub fn chamfer<T: Real>(a: &[Point3<T>], b: &[Point3<T>]) -> Result<T> {
    chamfer_with(a, b, ChamferMode::Unsquared)
}

pub fn chamfer_with<T: Real>(a: &[Point3<T>], b: &[Point3<T>], mode: ChamferMode) -> Result<T> {
    if a.is_empty() || b.is_empty() {
        return Err(Error::Empty("chamfer"));
    }
    let one_way = |from: &[Point3<T>], to: &[Point3<T>]| -> Result<T> {
        let index = KnnIndex::new(to)?;
        let mut s = T::zero();
        for p in from {
            let d = index.nearest(p).distance;
            s += match mode {
                ChamferMode::Unsquared => d,
                ChamferMode::Squared => d * d,
            };
        }
        Ok(s / T::from_usize_lossy(from.len()))
    };
    Ok((one_way(a, b)? + one_way(b, a)?) * T::lit(0.5))
}
