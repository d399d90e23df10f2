//! Property tests for the numeric invariants.

use jigsaw::align::weighted_kabsch;
use jigsaw::geom::{chamfer, euler_from_rotation, rotation_from_euler, wrap_degrees, RigidTransform};
use jigsaw::matching::{assignment_weight, hungarian, sinkhorn, DEFAULT_EPS, DEFAULT_ITERS};
use jigsaw::metrics::{evaluate_poses, mae_rmse, rotation_errors, translation_errors};
use jigsaw::synth::{generate_object, scatter, SynthConfig};
use jigsaw::{Matrix3, Point3, Vector3};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn square_in(max_n: usize, lo: f64) -> impl Strategy<Value = (usize, Vec<f64>)> {
    (1..=max_n).prop_flat_map(move |n| (Just(n), prop::collection::vec(lo..1.0, n * n)))
}

/// Entries within a factor of ten: 20 rounds always reach 1e-6.
fn square(max_n: usize) -> impl Strategy<Value = (usize, Vec<f64>)> {
    square_in(max_n, 0.1)
}

fn rotation() -> impl Strategy<Value = Matrix3> {
    (-180.0f64..180.0, -89.0f64..89.0, -180.0f64..180.0).prop_map(|(x, y, z)| rotation_from_euler(x, y, z))
}

fn pose() -> impl Strategy<Value = RigidTransform<f64>> {
    (rotation(), prop::array::uniform3(-2.0f64..2.0))
        .prop_map(|(r, t)| RigidTransform::new(r, Vector3::new(t[0], t[1], t[2])).unwrap())
}

fn cloud(n: std::ops::RangeInclusive<usize>) -> impl Strategy<Value = Vec<Point3>> {
    prop::collection::vec(prop::array::uniform3(-1.0f64..1.0).prop_map(|a| Point3::new(a[0], a[1], a[2])), n)
}

fn sums(x: &[f64], n: usize) -> (f64, f64) {
    let mut worst = (0.0f64, 0.0f64);
    for k in 0..n {
        let r: f64 = x[k * n..(k + 1) * n].iter().sum();
        let c: f64 = (0..n).map(|i| x[i * n + k]).sum();
        worst = (worst.0.max((r - 1.0).abs()), worst.1.max((c - 1.0).abs()));
    }
    worst
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn sinkhorn_is_doubly_stochastic_and_idempotent((n, m) in square(48)) {
        let x = sinkhorn(&m, n, DEFAULT_ITERS, DEFAULT_EPS).unwrap();
        let (r, c) = sums(&x, n);
        prop_assert!(r <= 1e-6 && c <= 1e-6, "sums off by {r:e}, {c:e}");
        let again = sinkhorn(&x, n, 1, DEFAULT_EPS).unwrap();
        let change = x.iter().zip(&again).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        prop_assert!(change < 1e-9, "extra round moved an entry by {change:e}");
    }

    #[test]
    fn sinkhorn_converges_on_ill_conditioned_input((n, m) in square_in(16, 1e-3)) {
        // Wide dynamic range slows convergence; enough rounds still get there.
        let x = sinkhorn(&m, n, 20_000, DEFAULT_EPS).unwrap();
        let (r, c) = sums(&x, n);
        prop_assert!(r <= 1e-6 && c <= 1e-6, "sums off by {r:e}, {c:e}");
    }

    #[test]
    fn hungarian_ignores_affinity_scale((n, m) in square(12), scale in 0.01f64..100.0) {
        let x1 = sinkhorn(&m, n, DEFAULT_ITERS, DEFAULT_EPS).unwrap();
        let scaled: Vec<f64> = m.iter().map(|v| v * scale).collect();
        let x2 = sinkhorn(&scaled, n, DEFAULT_ITERS, DEFAULT_EPS).unwrap();
        let p1 = hungarian(&x1, n, n).unwrap();
        let p2 = hungarian(&x2, n, n).unwrap();
        prop_assert!((assignment_weight(&x1, &p1) - assignment_weight(&x1, &p2)).abs() < 1e-9);
    }

    #[test]
    fn hungarian_returns_a_permutation((n, m) in square(20)) {
        let p = hungarian(&m, n, n).unwrap();
        let mut sorted = p.clone();
        sorted.sort_unstable();
        prop_assert_eq!(sorted, (0..n).collect::<Vec<_>>());
    }

    #[test]
    fn kabsch_rotation_is_proper(src in cloud(3..=12), dst_seed in any::<u64>()) {
        use rand::Rng;
        let mut rng = ChaCha8Rng::seed_from_u64(dst_seed);
        let dst: Vec<Point3> = src.iter().map(|_| Point3::new(rng.random(), rng.random(), rng.random())).collect();
        let w: Vec<f64> = src.iter().map(|_| rng.random_range(0.0..1.0)).collect();
        if let Ok(fit) = weighted_kabsch(&src, &dst, &w) {
            let r = fit.rotation();
            prop_assert!((r.determinant() - 1.0).abs() < 1e-9);
            prop_assert!((r.transpose() * r - Matrix3::identity()).norm() < 1e-9);
        }
    }

    #[test]
    fn transform_algebra(a in pose(), b in pose(), pts in cloud(1..=10)) {
        let id = a.compose(&a.inverse());
        prop_assert!((id.rotation() - Matrix3::identity()).norm() < 1e-12);
        prop_assert!(id.translation().norm() < 1e-12);
        let ab = a.compose(&b);
        for p in &pts {
            prop_assert!((ab.apply_point(p) - a.apply_point(&b.apply_point(p))).norm() < 1e-12);
        }
        for w in pts.windows(2) {
            let d0 = (w[0] - w[1]).norm();
            let d1 = (a.apply_point(&w[0]) - a.apply_point(&w[1])).norm();
            prop_assert!((d0 - d1).abs() < 1e-12);
        }
        let q = a.quaternion();
        let back = RigidTransform::from_quaternion(q, *a.translation()).unwrap();
        prop_assert!((back.rotation() - a.rotation()).norm() < 1e-12);
        let exact = a.quaternion_exact();
        prop_assert_eq!(exact.quaternion_exact(), exact);
    }

    #[test]
    fn euler_round_trip(r in rotation()) {
        let e = euler_from_rotation(&r);
        let back = rotation_from_euler(e.x, e.y, e.z);
        prop_assert!((back - r).norm() < 1e-9);
    }

    #[test]
    fn wrapped_angles_in_range(a in -2000.0f64..2000.0) {
        let w = wrap_degrees(a);
        prop_assert!(w > -180.0 && w <= 180.0);
        let turns = (a - w) / 360.0;
        prop_assert!((turns - turns.round()).abs() < 1e-9);
    }

    #[test]
    fn mae_never_exceeds_rmse(a in rotation(), b in rotation(), t in prop::array::uniform3(-1.0f64..1.0)) {
        let (mae, rmse) = rotation_errors(&a, &b);
        prop_assert!(mae >= 0.0 && mae <= rmse + 1e-12);
        let (mae, rmse) = translation_errors(&Vector3::new(t[0], t[1], t[2]), &Vector3::zeros());
        prop_assert!(mae <= rmse + 1e-15);
        let (m, r) = mae_rmse(&t);
        prop_assert!(m <= r + 1e-15);
    }

    #[test]
    fn chamfer_symmetric_and_nonnegative(a in cloud(1..=20), b in cloud(1..=20)) {
        let ab = chamfer(&a, &b).unwrap();
        let ba = chamfer(&b, &a).unwrap();
        prop_assert!(ab >= 0.0);
        prop_assert!((ab - ba).abs() < 1e-12);
        prop_assert!(chamfer(&a, &a).unwrap() == 0.0);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]

    #[test]
    fn metrics_are_gauge_invariant(seed in 0u64..1000, gauge_gt in pose(), gauge_pred in pose(), noise in pose()) {
        let cfg = SynthConfig { points: 300, ..SynthConfig::default() };
        let obj = generate_object(&cfg, 3, seed).unwrap();
        let obj = scatter(&obj, &mut ChaCha8Rng::seed_from_u64(seed));
        // Predicted poses: ground truth with one piece disturbed.
        let mut pred = obj.gt_pose.clone();
        pred[1] = noise.compose(&pred[1]);
        let base = evaluate_poses(0, &obj, &pred).unwrap();

        let mut moved = obj.clone();
        moved.gt_pose = obj.gt_pose.iter().map(|t| gauge_gt.compose(t)).collect();
        let moved_pred: Vec<_> = pred.iter().map(|t| gauge_pred.compose(t)).collect();
        let other = evaluate_poses(0, &moved, &moved_pred).unwrap();
        for (a, b) in [(base.mae_r, other.mae_r), (base.rmse_r, other.rmse_r), (base.mae_t, other.mae_t), (base.rmse_t, other.rmse_t)] {
            prop_assert!((a - b).abs() < 1e-9, "{a} vs {b}");
        }
        prop_assert_eq!(base.pa, other.pa);
        prop_assert!(base.pa >= 0.0 && base.pa <= 1.0);
        for (p, q) in base.pieces.iter().zip(&other.pieces) {
            prop_assert!((p.chamfer - q.chamfer).abs() < 1e-9);
        }
    }
}
