//! Independent oracles shared by the integration tests.
#![allow(dead_code)]

use jigsaw::align::{PoseEdge, PoseGraph};
use jigsaw::geom::{random_rotation, RigidTransform};
use jigsaw::{Matrix3, Point3, Vector3};
use rand::Rng;

/// Best total weight of a perfect assignment by exhaustive search.
pub fn brute_force_assignment(w: &[f64], n: usize) -> f64 {
    fn rec(w: &[f64], n: usize, row: usize, used: &mut [bool]) -> f64 {
        if row == n {
            return 0.0;
        }
        let mut best = f64::NEG_INFINITY;
        for c in 0..n {
            if !used[c] {
                used[c] = true;
                best = best.max(w[row * n + c] + rec(w, n, row + 1, used));
                used[c] = false;
            }
        }
        best
    }
    rec(w, n, 0, &mut vec![false; n])
}

pub fn weighted_sse(r: &Matrix3, t: &Vector3, src: &[Point3], dst: &[Point3], w: &[f64]) -> f64 {
    src.iter().zip(dst).zip(w).map(|((p, q), wi)| wi * (r * p.coords + t - q.coords).norm_squared()).sum()
}

fn so3_exp(v: &Vector3) -> Matrix3 {
    let angle = v.norm();
    if angle == 0.0 {
        return Matrix3::identity();
    }
    *nalgebra::Rotation3::from_axis_angle(&nalgebra::Unit::new_normalize(*v), angle).matrix()
}

/// Minimizes `Σ w ‖R p + t − q‖²` by gradient descent on SO(3) × R³ with a
/// backtracking line search, starting from the identity.
pub fn gradient_descent_fit(src: &[Point3], dst: &[Point3], w: &[f64]) -> (Matrix3, Vector3) {
    let mut r = Matrix3::identity();
    let mut t = Vector3::zeros();
    let mut f = weighted_sse(&r, &t, src, dst, w);
    let mut step = 1.0;
    for _ in 0..200_000 {
        let mut g_rot = Vector3::zeros();
        let mut g_t = Vector3::zeros();
        for ((p, q), wi) in src.iter().zip(dst).zip(w) {
            let rp = r * p.coords;
            let e = rp + t - q.coords;
            g_rot += 2.0 * wi * rp.cross(&e);
            g_t += 2.0 * wi * e;
        }
        let gn = (g_rot.norm_squared() + g_t.norm_squared()).sqrt();
        if gn < 1e-13 {
            break;
        }
        let mut accepted = false;
        while step > 1e-20 {
            let r2 = so3_exp(&(-step * g_rot)) * r;
            let t2 = t - step * g_t;
            let f2 = weighted_sse(&r2, &t2, src, dst, w);
            if f2 <= f - 1e-4 * step * gn * gn {
                r = r2;
                t = t2;
                f = f2;
                accepted = true;
                step *= 2.0;
                break;
            }
            step *= 0.5;
        }
        if !accepted {
            break;
        }
    }
    (r, t)
}

pub fn random_points<R: Rng>(rng: &mut R, n: usize, flat: f64) -> Vec<Point3> {
    (0..n)
        .map(|_| Point3::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), flat * rng.random_range(-1.0..1.0)))
        .collect()
}

pub fn random_pose<R: Rng>(rng: &mut R) -> RigidTransform<f64> {
    let t = Vector3::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0));
    RigidTransform::new(random_rotation(rng), t).unwrap()
}

/// Relative measurement `T_ij = T_j⁻¹ ∘ T_i` between absolute poses.
pub fn relative(truth: &[RigidTransform<f64>], i: usize, j: usize) -> RigidTransform<f64> {
    truth[j].inverse().compose(&truth[i])
}

/// A connected graph on `n` vertices: a random spanning tree plus `extra`
/// chords, so there are cycles whenever `extra > 0`.
pub fn random_connected_edges<R: Rng>(rng: &mut R, n: usize, extra: usize) -> Vec<(usize, usize)> {
    let mut edges = Vec::new();
    for v in 1..n {
        edges.push((rng.random_range(0..v), v));
    }
    let mut tries = 0;
    while edges.len() < n - 1 + extra && tries < 1000 {
        tries += 1;
        let (a, b) = (rng.random_range(0..n), rng.random_range(0..n));
        if a != b && !edges.iter().any(|&(x, y)| (x, y) == (a, b) || (x, y) == (b, a)) {
            edges.push((a, b));
        }
    }
    edges
}

pub fn consistent_graph(truth: &[RigidTransform<f64>], sizes: Vec<usize>, edges: &[(usize, usize)]) -> PoseGraph<f64> {
    let mut g = PoseGraph::new(sizes);
    for &(i, j) in edges {
        g.add_edge(PoseEdge { i, j, transform: relative(truth, i, j), weight: 1.0, inliers: 10 }).unwrap();
    }
    g
}

/// Geodesic angle between two rotations in degrees.
pub fn angle_deg(a: &Matrix3, b: &Matrix3) -> f64 {
    let c = ((a.transpose() * b).trace() - 1.0) / 2.0;
    c.clamp(-1.0, 1.0).acos().to_degrees()
}
