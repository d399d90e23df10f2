//! Intrinsic XYZ Euler angles in degrees: `R = Rx(x)·Ry(y)·Rz(z)`.

use nalgebra::Matrix3;

use crate::scalar::Real;

/// Euler angles in degrees, each in `(−180, 180]`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EulerAngles<T: Real> {
    pub x: T,
    pub y: T,
    pub z: T,
    /// `y` was within 1e-6° of ±90°; `z` was folded into `x` and set to 0.
    pub gimbal_lock: bool,
}

impl<T: Real> EulerAngles<T> {
    pub fn as_array(&self) -> [T; 3] {
        [self.x, self.y, self.z]
    }
}

/// Maps an angle in degrees to `(−180, 180]`.
pub fn wrap_degrees<T: Real>(a: T) -> T {
    let full = T::lit(360.0);
    let half = T::lit(180.0);
    let mut r = a % full;
    if r > half {
        r -= full;
    } else if r <= -half {
        r += full;
    }
    r
}

pub fn rotation_from_euler<T: Real>(x_deg: T, y_deg: T, z_deg: T) -> Matrix3<T> {
    let (sa, ca) = x_deg.to_radians_r().sin_cos();
    let (sb, cb) = y_deg.to_radians_r().sin_cos();
    let (sc, cc) = z_deg.to_radians_r().sin_cos();
    Matrix3::new(
        cb * cc,
        -cb * sc,
        sb,
        ca * sc + sa * sb * cc,
        ca * cc - sa * sb * sc,
        -sa * cb,
        sa * sc - ca * sb * cc,
        sa * cc + ca * sb * sc,
        ca * cb,
    )
}

pub fn euler_from_rotation<T: Real>(r: &Matrix3<T>) -> EulerAngles<T> {
    let cy = (r[(0, 0)] * r[(0, 0)] + r[(0, 1)] * r[(0, 1)]).sqrt();
    let y = r[(0, 2)].atan2(cy).to_degrees_r();
    let ninety = T::lit(90.0);
    if (y.abs() - ninety).abs() < T::lit(1e-6) {
        // Only x ± z is observable; report it in x.
        let x = if y > T::zero() {
            r[(1, 0)].atan2(r[(1, 1)])
        } else {
            (-r[(1, 0)]).atan2(r[(1, 1)])
        };
        return EulerAngles {
            x: wrap_degrees(x.to_degrees_r()),
            y: if y > T::zero() { ninety } else { -ninety },
            z: T::zero(),
            gimbal_lock: true,
        };
    }
    let x = (-r[(1, 2)]).atan2(r[(2, 2)]).to_degrees_r();
    let z = (-r[(0, 1)]).atan2(r[(0, 0)]).to_degrees_r();
    EulerAngles { x: wrap_degrees(x), y: wrap_degrees(y), z: wrap_degrees(z), gimbal_lock: false }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geom::random_rotation;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn identity_is_zero() {
        let e = euler_from_rotation(&Matrix3::<f64>::identity());
        assert_eq!((e.x, e.y, e.z), (0.0, 0.0, 0.0));
    }

    #[test]
    fn pure_z_rotation() {
        let e = euler_from_rotation(&rotation_from_euler(0.0f64, 0.0, 30.0));
        assert!(e.x.abs() < 1e-12 && e.y.abs() < 1e-12 && (e.z - 30.0).abs() < 1e-12);
    }

    #[test]
    fn random_round_trip() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..1000 {
            let r = random_rotation(&mut rng);
            let e = euler_from_rotation(&r);
            assert!(!e.gimbal_lock);
            let back = rotation_from_euler(e.x, e.y, e.z);
            assert!((back - r).abs().max() < 1e-7);
            for a in e.as_array() {
                assert!(a > -180.0 && a <= 180.0);
            }
        }
    }

    #[test]
    fn gimbal_lock_folds_z_into_x() {
        for (x, y, z) in [(20.0, 90.0, 15.0), (20.0, -90.0, 15.0)] {
            let r = rotation_from_euler(x, y, z);
            let e = euler_from_rotation(&r);
            assert!(e.gimbal_lock);
            assert_eq!(e.z, 0.0);
            let back = rotation_from_euler(e.x, e.y, e.z);
            assert!((back - r).abs().max() < 1e-9);
        }
        let e = euler_from_rotation(&rotation_from_euler(20.0f64, 90.0, 15.0));
        assert!((e.x - 35.0).abs() < 1e-9);
    }

    #[test]
    fn wrap_range() {
        assert_eq!(wrap_degrees(350.0), -10.0);
        assert_eq!(wrap_degrees(-180.0), 180.0);
        assert_eq!(wrap_degrees(180.0), 180.0);
        assert_eq!(wrap_degrees(-190.0), 170.0);
    }
}
