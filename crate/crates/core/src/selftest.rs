//! Fast invariant checks run by `jigsaw selftest`.

use nalgebra::{Point3, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::align::{global_align, weighted_kabsch, PoseEdge, PoseGraph};
use crate::dataio::{read_object, read_poses, write_object, write_poses};
use crate::geom::{random_rotation, rotation_from_euler, RigidTransform};
use crate::matching::{hungarian, sinkhorn, sinkhorn_var};
use crate::metrics::{rotation_errors, translation_errors};
use crate::synth::{generate_object, scatter, SynthConfig};
use crate::tensor::{Graph, Tensor, Var};

pub struct Check {
    pub name: &'static str,
    pub outcome: std::result::Result<(), String>,
}

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> std::result::Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

type Outcome = std::result::Result<(), String>;

fn sinkhorn_sums() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    for _ in 0..50 {
        let n = rng.random_range(1..=64);
        let m: Vec<f64> = (0..n * n).map(|_| rng.random_range(0.01..1.0)).collect();
        let x = sinkhorn(&m, n, 200, 1e-9).map_err(|e| e.to_string())?;
        for r in 0..n {
            let rs: f64 = x[r * n..(r + 1) * n].iter().sum();
            let cs: f64 = (0..n).map(|k| x[k * n + r]).sum();
            ensure((rs - 1.0).abs() < 1e-6 && (cs - 1.0).abs() < 1e-6, || format!("n={n}: sums {rs}, {cs}"))?;
        }
    }
    Ok(())
}

fn brute_best(w: &[f64], n: usize) -> f64 {
    fn rec(w: &[f64], n: usize, row: usize, used: &mut Vec<bool>) -> f64 {
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

fn hungarian_exact() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    for _ in 0..100 {
        let n = rng.random_range(1..=6);
        let w: Vec<f64> = (0..n * n).map(|_| rng.random::<f64>()).collect();
        let p = hungarian(&w, n, n).map_err(|e| e.to_string())?;
        let got: f64 = p.iter().enumerate().map(|(r, &c)| w[r * n + c]).sum();
        let want = brute_best(&w, n);
        ensure((got - want).abs() < 1e-12, || format!("n={n}: {got} vs {want}"))?;
    }
    Ok(())
}

fn kabsch_proper() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for _ in 0..1000 {
        let src: Vec<Point3<f64>> =
            (0..6).map(|_| Point3::new(rng.random(), rng.random(), rng.random::<f64>() * 1e-3)).collect();
        let dst: Vec<Point3<f64>> =
            (0..6).map(|_| Point3::new(rng.random(), rng.random(), rng.random())).collect();
        let t = weighted_kabsch(&src, &dst, &[1.0; 6]).map_err(|e| e.to_string())?;
        let d = t.rotation().determinant();
        ensure((d - 1.0).abs() < 1e-9, || format!("det {d}"))?;
    }
    Ok(())
}

fn global_align_cycle() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let n = 6;
    let truth: Vec<RigidTransform<f64>> = (0..n)
        .map(|_| RigidTransform::new(random_rotation(&mut rng), Vector3::new(rng.random(), rng.random(), rng.random())).unwrap())
        .collect();
    let mut g = PoseGraph::new(vec![10; n]);
    for (i, j) in [(0, 1), (1, 2), (2, 3), (3, 4), (4, 5), (5, 0), (0, 3)] {
        let tij = truth[j].inverse().compose(&truth[i]);
        g.add_edge(PoseEdge { i, j, transform: tij, weight: 1.0, inliers: 10 }).map_err(|e| e.to_string())?;
    }
    let a = global_align(&g).map_err(|e| e.to_string())?;
    let (rot, trans) = g.max_residual(&a.poses);
    ensure(rot < 1e-9 && trans < 1e-9, || format!("residuals {rot}, {trans}"))
}

fn grad_check() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let x0: Vec<f64> = (0..12).map(|_| rng.random_range(-1.0..1.0)).collect();
    let w0: Vec<f64> = (0..12).map(|_| rng.random_range(-1.0..1.0)).collect();
    let f = |g: &mut Graph, x: Var| -> crate::Result<Var> {
        let w = g.constant(Tensor::matrix(4, 3, w0.clone())?)?;
        let xt = g.transpose(x)?;
        let m = g.matmul(xt, w)?;
        let m = g.relu(m)?;
        let s = sinkhorn_var(g, m, 5)?;
        let l = g.softmax_lastdim(s)?;
        let l = g.log(l)?;
        g.sum(l)
    };
    let eval = |x: &[f64]| -> f64 {
        let mut g = Graph::new();
        let v = g.constant(Tensor::matrix(4, 3, x.to_vec()).unwrap()).unwrap();
        let y = f(&mut g, v).unwrap();
        g.value(y).item()
    };
    let mut g = Graph::new();
    let x = g.leaf(Tensor::matrix(4, 3, x0.clone()).map_err(|e| e.to_string())?, true).map_err(|e| e.to_string())?;
    let y = f(&mut g, x).map_err(|e| e.to_string())?;
    g.backward(y).map_err(|e| e.to_string())?;
    let analytic = g.grad(x).ok_or("no gradient")?;
    let h = 1e-5;
    for k in 0..x0.len() {
        let mut p = x0.clone();
        p[k] += h;
        let mut m = x0.clone();
        m[k] -= h;
        let num = (eval(&p) - eval(&m)) / (2.0 * h);
        let a = analytic.data()[k];
        let rel = (a - num).abs() / a.abs().max(num.abs()).max(1e-8);
        ensure(rel < 1e-3 || (a - num).abs() < 1e-8, || format!("entry {k}: analytic {a}, numeric {num}"))?;
    }
    Ok(())
}

fn metric_examples() -> Outcome {
    let (mae, rmse) = rotation_errors(&rotation_from_euler(10.0f64, 20.0, 30.0), &nalgebra::Matrix3::identity());
    ensure((mae - 20.0).abs() < 1e-9 && (rmse - 21.602_468_994_692_867).abs() < 1e-9, || format!("{mae}, {rmse}"))?;
    let (mae, rmse) = translation_errors(&Vector3::new(0.03f64, 0.0, 0.0), &Vector3::zeros());
    ensure((mae - 0.01).abs() < 1e-15 && (rmse - 0.017_320_508_075_688_773).abs() < 1e-15, || format!("{mae}, {rmse}"))
}

fn io_round_trip() -> Outcome {
    let cfg = SynthConfig { points: 300, ..SynthConfig::default() };
    let obj = generate_object(&cfg, 3, 6).map_err(|e| e.to_string())?;
    let obj = scatter(&obj, &mut ChaCha8Rng::seed_from_u64(6)).quantized();
    let mut buf = Vec::new();
    write_object(&mut buf, &obj).map_err(|e| e.to_string())?;
    let back = read_object(&mut buf.as_slice()).map_err(|e| e.to_string())?;
    ensure(back == obj, || "object differs after round trip".into())?;
    let mut buf = Vec::new();
    write_poses(&mut buf, &obj.gt_pose).map_err(|e| e.to_string())?;
    let poses = read_poses(buf.as_slice()).map_err(|e| e.to_string())?;
    ensure(poses == obj.gt_pose, || "poses differ after round trip".into())
}

/// Runs every check; never panics.
pub fn run() -> Vec<Check> {
    let checks: [(&'static str, fn() -> Outcome); 7] = [
        ("sinkhorn row/column sums", sinkhorn_sums),
        ("hungarian equals exhaustive search", hungarian_exact),
        ("kabsch returns proper rotations", kabsch_proper),
        ("global alignment exact on a consistent cycle", global_align_cycle),
        ("autodiff matches finite differences", grad_check),
        ("metric hand-computed values", metric_examples),
        ("object and pose files round trip", io_round_trip),
    ];
    checks
        .into_iter()
        .map(|(name, f)| {
            let outcome = std::panic::catch_unwind(f).unwrap_or_else(|_| Err("panicked".into()));
            Check { name, outcome }
        })
        .collect()
}

#[cfg(test)]
mod tests {
    #[test]
    fn all_checks_pass() {
        for c in super::run() {
            assert!(c.outcome.is_ok(), "{}: {:?}", c.name, c.outcome);
        }
    }
}
