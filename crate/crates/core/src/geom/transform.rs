use nalgebra::{Matrix3, Point3, Quaternion, UnitQuaternion, Vector3};
use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::scalar::Real;

/// Element of SE(3): `x ↦ R·x + t`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RigidTransform<T: Real> {
    rotation: Matrix3<T>,
    translation: Vector3<T>,
}

fn orthonormality_tol<T: Real>() -> T {
    let by_eps = T::machine_eps() * T::lit(1000.0);
    let floor = T::lit(1e-9);
    if by_eps > floor {
        by_eps
    } else {
        floor
    }
}

impl<T: Real> RigidTransform<T> {
    /// Validates `‖RᵀR − I‖_∞` and `det R > 0`.
    pub fn new(rotation: Matrix3<T>, translation: Vector3<T>) -> Result<Self> {
        let dev = (rotation.transpose() * rotation - Matrix3::identity()).abs().max();
        if !(dev < orthonormality_tol::<T>()) {
            return Err(Error::InvalidRotation(format!("‖RᵀR − I‖∞ = {dev}")));
        }
        if rotation.determinant() <= T::zero() {
            return Err(Error::InvalidRotation("det(R) <= 0".into()));
        }
        Ok(Self { rotation, translation })
    }

    /// Skips validation; the caller guarantees `rotation ∈ SO(3)`.
    pub(crate) fn from_parts_unchecked(rotation: Matrix3<T>, translation: Vector3<T>) -> Self {
        Self { rotation, translation }
    }

    pub fn identity() -> Self {
        Self { rotation: Matrix3::identity(), translation: Vector3::zeros() }
    }

    pub fn from_translation(t: Vector3<T>) -> Self {
        Self { rotation: Matrix3::identity(), translation: t }
    }

    pub fn rotation(&self) -> &Matrix3<T> {
        &self.rotation
    }

    pub fn translation(&self) -> &Vector3<T> {
        &self.translation
    }

    /// `self ∘ other`: applies `other` first.
    pub fn compose(&self, other: &Self) -> Self {
        Self {
            rotation: self.rotation * other.rotation,
            translation: self.rotation * other.translation + self.translation,
        }
    }

    pub fn inverse(&self) -> Self {
        let rt = self.rotation.transpose();
        Self { rotation: rt, translation: -(rt * self.translation) }
    }

    pub fn apply_point(&self, p: &Point3<T>) -> Point3<T> {
        Point3::from(self.rotation * p.coords + self.translation)
    }

    pub fn apply(&self, points: &[Point3<T>]) -> Vec<Point3<T>> {
        points.iter().map(|p| self.apply_point(p)).collect()
    }

    /// Unit quaternion `(w, x, y, z)` with `w ≥ 0`.
    pub fn quaternion(&self) -> [T; 4] {
        let q = UnitQuaternion::from_rotation_matrix(&nalgebra::Rotation3::from_matrix_unchecked(self.rotation));
        let q = q.quaternion();
        let s = if q.w < T::zero() { -T::one() } else { T::one() };
        [q.w * s, q.i * s, q.j * s, q.k * s]
    }

    /// Builds from a quaternion `(w, x, y, z)`; rejects norms off by more than 1e-6.
    pub fn from_quaternion(q: [T; 4], translation: Vector3<T>) -> Result<Self> {
        let quat = Quaternion::new(q[0], q[1], q[2], q[3]);
        let n = quat.norm();
        if !((n - T::one()).abs() < T::lit(1e-6)) {
            return Err(Error::InvalidRotation(format!("quaternion norm {n}")));
        }
        let r = UnitQuaternion::from_quaternion(quat).to_rotation_matrix().into_inner();
        Ok(Self { rotation: r, translation })
    }

    /// Nudges the rotation to a fixed point of the quaternion round trip, so
    /// `from_quaternion(quaternion())` reproduces it bit for bit. Poses stored
    /// on disk as quaternions go through this first.
    pub fn quaternion_exact(&self) -> Self {
        let q0 = self.quaternion();
        // Some rotations sit on a short cycle of the round trip; a nudge of a
        // few ulps moves them off it.
        for attempt in 0..64 {
            let nudge = T::lit(attempt as f64 * 1e-13);
            let q = [q0[0] + nudge, q0[1] - nudge, q0[2] + nudge, q0[3]];
            let Ok(mut cur) = Self::from_quaternion(q, self.translation) else { break };
            for _ in 0..8 {
                let Ok(next) = Self::from_quaternion(cur.quaternion(), cur.translation) else { break };
                if next.rotation == cur.rotation {
                    return cur;
                }
                cur = next;
            }
        }
        *self
    }

    pub fn cast<U: Real>(&self) -> RigidTransform<U> {
        let r = self.rotation.map(|v| U::lit(v.to_f64_lossy()));
        let t = self.translation.map(|v| U::lit(v.to_f64_lossy()));
        RigidTransform { rotation: r, translation: t }
    }
}

/// Geodesic angle (radians) of a rotation matrix.
pub fn rotation_angle<T: Real>(r: &Matrix3<T>) -> T {
    // atan2 form stays accurate for angles near 0 where acos loses half the digits.
    let v = Vector3::new(r[(2, 1)] - r[(1, 2)], r[(0, 2)] - r[(2, 0)], r[(1, 0)] - r[(0, 1)]);
    v.norm().atan2(r.trace() - T::one())
}

/// Rotation by `angle` (radians) about a unit `axis`.
pub fn rotation_about<T: Real>(axis: &Vector3<T>, angle: T) -> Matrix3<T> {
    let ax = nalgebra::Unit::new_normalize(*axis);
    UnitQuaternion::from_axis_angle(&ax, angle).to_rotation_matrix().into_inner()
}

/// Nearest rotation in Frobenius norm (SVD with reflection fix).
pub fn project_to_so3<T: Real>(m: &Matrix3<T>) -> Matrix3<T> {
    let svd = m.svd(true, true);
    let u = svd.u.expect("u requested");
    let vt = svd.v_t.expect("v_t requested");
    let d = (u * vt).determinant();
    let mut s = Matrix3::identity();
    if d < T::zero() {
        s[(2, 2)] = -T::one();
    }
    u * s * vt
}

/// Haar-uniform rotation from a normalized 4-D Gaussian.
pub fn random_rotation<R: Rng + ?Sized>(rng: &mut R) -> Matrix3<f64> {
    loop {
        let q: [f64; 4] = [
            rng.sample(StandardNormal),
            rng.sample(StandardNormal),
            rng.sample(StandardNormal),
            rng.sample(StandardNormal),
        ];
        let n = q.iter().map(|v| v * v).sum::<f64>().sqrt();
        if n > 1e-8 {
            let uq = UnitQuaternion::from_quaternion(Quaternion::new(q[0], q[1], q[2], q[3]));
            return uq.to_rotation_matrix().into_inner();
        }
    }
}

pub fn centroid<T: Real>(points: &[Point3<T>]) -> Option<Point3<T>> {
    if points.is_empty() {
        return None;
    }
    let mut s = Vector3::zeros();
    for p in points {
        s += p.coords;
    }
    Some(Point3::from(s / T::from_usize_lossy(points.len())))
}
