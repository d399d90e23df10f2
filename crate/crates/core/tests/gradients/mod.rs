//! Central finite differences against the tape, for every op and each loss.
//! Each check panics on the first entry out of tolerance.
#![allow(dead_code)]

use jigsaw::align::weighted_kabsch;
use jigsaw::matching::{affinity_logits, gt_matrix, loss_mat, loss_seg, rigidity_loss, row_norms, sinkhorn_var};
use jigsaw::tensor::{Graph, OpKind, Tensor, Var};
use jigsaw::{Point3, Result};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const H: f64 = 1e-5;
const TOL: f64 = 1e-4;
const TOL_SINKHORN: f64 = 1e-3;

fn rand_tensor(rng: &mut ChaCha8Rng, shape: &[usize], lo: f64, hi: f64) -> Tensor {
    let n = shape.iter().product();
    Tensor::new(shape.to_vec(), (0..n).map(|_| rng.random_range(lo..hi)).collect()).unwrap()
}

/// Reduces `y` to a scalar with fixed pseudo-random weights so every output
/// entry carries a distinct upstream gradient.
fn reduce(g: &mut Graph, y: Var) -> Result<Var> {
    let shape = g.shape(y).to_vec();
    let n: usize = shape.iter().product();
    let w: Vec<f64> = (0..n).map(|i| 0.3 + ((i * 7919) % 13) as f64 / 10.0).collect();
    let w = g.constant(Tensor::new(shape, w)?)?;
    let m = g.mul(y, w)?;
    g.sum(m)
}

fn eval<F>(f: &F, inputs: &[Tensor]) -> f64
where
    F: Fn(&mut Graph, &[Var]) -> Result<Var>,
{
    let mut g = Graph::new();
    let vars: Vec<Var> = inputs.iter().map(|t| g.constant(t.clone()).unwrap()).collect();
    let y = f(&mut g, &vars).unwrap();
    let s = reduce(&mut g, y).unwrap();
    g.value(s).item()
}

fn check<F>(name: &str, inputs: Vec<Tensor>, tol: f64, f: F)
where
    F: Fn(&mut Graph, &[Var]) -> Result<Var>,
{
    let mut g = Graph::new();
    let vars: Vec<Var> = inputs.iter().map(|t| g.leaf(t.clone(), true).unwrap()).collect();
    let y = f(&mut g, &vars).unwrap();
    let s = reduce(&mut g, y).unwrap();
    g.backward(s).unwrap();
    for (a, v) in vars.iter().enumerate() {
        let analytic = g.grad(*v).unwrap_or_else(|| Tensor::zeros(inputs[a].shape()));
        for k in 0..inputs[a].len() {
            let mut plus = inputs.clone();
            plus[a].data_mut()[k] += H;
            let mut minus = inputs.clone();
            minus[a].data_mut()[k] -= H;
            let num = (eval(&f, &plus) - eval(&f, &minus)) / (2.0 * H);
            let an = analytic.data()[k];
            let rel = (an - num).abs() / an.abs().max(num.abs()).max(1e-6);
            assert!(rel < tol, "{name}: input {a} entry {k}: analytic {an}, numeric {num}, rel {rel:e}");
        }
    }
}

fn rng() -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(17)
}

pub fn elementwise_and_broadcast_ops() {
    let mut r = rng();
    let a = rand_tensor(&mut r, &[3, 4], -1.0, 1.0);
    let b = rand_tensor(&mut r, &[3, 4], -1.0, 1.0);
    let row = rand_tensor(&mut r, &[1, 4], -1.0, 1.0);
    let col = rand_tensor(&mut r, &[3, 1], 0.5, 2.0);
    check("add", vec![a.clone(), b.clone()], TOL, |g, v| g.add(v[0], v[1]));
    check("add row broadcast", vec![a.clone(), row.clone()], TOL, |g, v| g.add(v[0], v[1]));
    check("sub col broadcast", vec![a.clone(), col.clone()], TOL, |g, v| g.sub(v[0], v[1]));
    check("mul", vec![a.clone(), b.clone()], TOL, |g, v| g.mul(v[0], v[1]));
    check("mul row broadcast", vec![a.clone(), row.clone()], TOL, |g, v| g.mul(v[0], v[1]));
    check("div col broadcast", vec![a.clone(), col.clone()], TOL, |g, v| g.div(v[0], v[1]));
    check("scale", vec![a.clone()], TOL, |g, v| g.scale(v[0], -1.7));
    check("add_scalar", vec![a.clone()], TOL, |g, v| g.add_scalar(v[0], 0.3));
    check("sigmoid", vec![a.clone()], TOL, |g, v| g.sigmoid(v[0]));
    check("exp", vec![a.clone()], TOL, |g, v| g.exp(v[0]));
    let pos = rand_tensor(&mut r, &[3, 4], 0.2, 2.0);
    check("log", vec![pos.clone()], TOL, |g, v| g.log(v[0]));
    check("sqrt", vec![pos.clone()], TOL, |g, v| g.sqrt(v[0]));
}

pub fn piecewise_ops_away_from_kinks() {
    // Entries kept at least 0.1 away from the kink points.
    let x = Tensor::matrix(2, 4, vec![-0.9, -0.4, 0.2, 0.7, 0.35, -0.15, 0.95, -0.6]).unwrap();
    check("relu", vec![x.clone()], TOL, |g, v| g.relu(v[0]));
    check("clamp", vec![x.clone()], TOL, |g, v| g.clamp(v[0], -0.5, 0.5));
    // Distinct values per group so the max is unique.
    let grouped = Tensor::matrix(6, 2, vec![0.1, 0.9, 0.5, -0.2, -0.3, 0.4, 1.0, 0.0, 0.2, 0.6, -0.5, 0.3]).unwrap();
    check("max_groups", vec![grouped], TOL, |g, v| g.max_groups(v[0], 3));
}

pub fn reductions_and_softmax() {
    let mut r = rng();
    let a = rand_tensor(&mut r, &[4, 5], -2.0, 2.0);
    check("sum", vec![a.clone()], TOL, |g, v| g.sum(v[0]));
    check("mean", vec![a.clone()], TOL, |g, v| g.mean(v[0]));
    check("sum_lastdim", vec![a.clone()], TOL, |g, v| g.sum_lastdim(v[0]));
    check("softmax_lastdim", vec![a.clone()], TOL, |g, v| g.softmax_lastdim(v[0]));
    let grouped = rand_tensor(&mut r, &[6, 3], -2.0, 2.0);
    check("softmax_groups", vec![grouped.clone()], TOL, |g, v| g.softmax_groups(v[0], 3));
    check("sum_groups", vec![grouped.clone()], TOL, |g, v| g.sum_groups(v[0], 2));
    check("l2_normalize_rows", vec![a.clone()], TOL, |g, v| g.l2_normalize_rows(v[0], 1e-12));
    check("row_norms", vec![a.clone()], TOL, |g, v| row_norms(g, v[0]));
}

pub fn shape_ops() {
    let mut r = rng();
    let a = rand_tensor(&mut r, &[3, 4], -1.0, 1.0);
    let b = rand_tensor(&mut r, &[4, 2], -1.0, 1.0);
    let c = rand_tensor(&mut r, &[3, 2], -1.0, 1.0);
    check("matmul", vec![a.clone(), b.clone()], TOL, |g, v| g.matmul(v[0], v[1]));
    check("transpose", vec![a.clone()], TOL, |g, v| g.transpose(v[0]));
    check("gather_rows with repeats", vec![a.clone()], TOL, |g, v| g.gather_rows(v[0], &[2, 0, 2, 1, 1]));
    check("concat_cols", vec![a.clone(), c.clone()], TOL, |g, v| g.concat_cols(&[v[0], v[1]]));
    let d = rand_tensor(&mut r, &[2, 4], -1.0, 1.0);
    check("concat_rows", vec![a.clone(), d], TOL, |g, v| g.concat_rows(&[v[0], v[1]]));
    check("slice_cols", vec![a.clone()], TOL, |g, v| g.slice_cols(v[0], 1, 3));
    check("reshape", vec![a.clone()], TOL, |g, v| g.reshape(v[0], &[6, 2]));
    let gamma = rand_tensor(&mut r, &[1, 4], 0.5, 1.5);
    let beta = rand_tensor(&mut r, &[1, 4], -0.5, 0.5);
    check("layernorm", vec![a.clone(), gamma, beta], TOL, |g, v| g.layernorm(v[0], v[1], v[2]));
}

pub fn dispatch_by_kind() {
    let mut r = rng();
    let a = rand_tensor(&mut r, &[3, 3], 0.2, 1.5);
    let b = rand_tensor(&mut r, &[3, 3], -1.0, 1.0);
    let gamma = rand_tensor(&mut r, &[1, 3], 0.5, 1.5);
    let beta = rand_tensor(&mut r, &[1, 3], -0.5, 0.5);
    let cases: Vec<(OpKind, Vec<Tensor>)> = vec![
        (OpKind::Matmul, vec![a.clone(), b.clone()]),
        (OpKind::Add, vec![a.clone(), b.clone()]),
        (OpKind::Mul, vec![a.clone(), b.clone()]),
        (OpKind::Relu, vec![b.clone()]),
        (OpKind::Sigmoid, vec![b.clone()]),
        (OpKind::SoftmaxLastDim, vec![b.clone()]),
        (OpKind::Exp, vec![b.clone()]),
        (OpKind::Log, vec![a.clone()]),
        (OpKind::Sum, vec![b.clone()]),
        (OpKind::Mean, vec![b.clone()]),
        (OpKind::GatherRows, vec![b.clone()]),
        (OpKind::Concat, vec![a.clone(), b.clone()]),
        (OpKind::LayerNorm, vec![b.clone(), gamma, beta]),
        (OpKind::Scale, vec![b.clone()]),
    ];
    for (kind, inputs) in cases {
        check(&format!("{kind:?}"), inputs, TOL, move |g, v| g.apply(kind, v));
    }
}

pub fn sinkhorn_and_affinity() {
    let mut r = rng();
    let logits = rand_tensor(&mut r, &[5, 5], -2.0, 2.0);
    check("sinkhorn", vec![logits], TOL_SINKHORN, |g, v| sinkhorn_var(g, v[0], 20));
    let p = rand_tensor(&mut r, &[4, 3], -1.0, 1.0);
    let d = rand_tensor(&mut r, &[4, 3], -1.0, 1.0);
    let a = rand_tensor(&mut r, &[3, 3], -1.0, 1.0);
    check("affinity logits", vec![p, d, a], TOL, |g, v| affinity_logits(g, v[0], v[1], v[2], 0.5));
}

pub fn segmentation_loss() {
    let mut r = rng();
    let conf = rand_tensor(&mut r, &[7, 1], 0.05, 0.95);
    let labels = [true, false, false, true, true, false, true];
    check("loss_seg", vec![conf], TOL, move |g, v| loss_seg(g, v[0], &labels));
}

pub fn matching_loss_through_sinkhorn() {
    let mut r = rng();
    let logits = rand_tensor(&mut r, &[4, 4], -1.0, 1.0);
    let gt = gt_matrix(&[0, 1, 2, 3], &[(0, 2), (2, 0), (1, 3), (3, 1)]);
    let direct = rand_tensor(&mut r, &[4, 4], 0.05, 0.95);
    let gt2 = gt.clone();
    check("loss_mat", vec![direct], TOL, move |g, v| loss_mat(g, v[0], &gt2));
    check("loss_mat after sinkhorn", vec![logits], TOL_SINKHORN, move |g, v| {
        let s = sinkhorn_var(g, v[0], 20)?;
        loss_mat(g, s, &gt)
    });
}

fn two_pieces() -> (Vec<Point3>, Vec<usize>) {
    let mut r = ChaCha8Rng::seed_from_u64(5);
    let pts: Vec<Point3> =
        (0..8).map(|_| Point3::new(r.random_range(-1.0..1.0), r.random_range(-1.0..1.0), r.random_range(-1.0..1.0))).collect();
    (pts, vec![0, 0, 0, 0, 1, 1, 1, 1])
}

/// Independent rigidity evaluation with the per-pair poses frozen at `poses`.
fn rigidity_fixed(soft: &[f64], n: usize, local: &[Point3], piece: &[usize], poses: &[((usize, usize), jigsaw::RigidTransform)]) -> f64 {
    let mut total = 0.0;
    for ((a, b), fit) in poses {
        for r in (0..n).filter(|&r| piece[r] == *a) {
            let cols: Vec<usize> = (0..n).filter(|&c| piece[c] == *b).collect();
            let w: f64 = cols.iter().map(|&c| soft[r * n + c]).sum();
            let mut target = nalgebra::Vector3::zeros();
            for &c in &cols {
                target += local[c].coords * soft[r * n + c];
            }
            let target = target / w;
            total += w * (fit.apply_point(&local[r]).coords - target).norm();
        }
    }
    total
}

fn frozen_poses(soft: &[f64], n: usize, local: &[Point3], piece: &[usize]) -> Vec<((usize, usize), jigsaw::RigidTransform)> {
    let mut out = Vec::new();
    for (a, b) in [(0usize, 1usize), (1, 0)] {
        let rows: Vec<usize> = (0..n).filter(|&r| piece[r] == a).collect();
        let cols: Vec<usize> = (0..n).filter(|&c| piece[c] == b).collect();
        let w: Vec<f64> = rows.iter().map(|&r| cols.iter().map(|&c| soft[r * n + c]).sum()).collect();
        let dst: Vec<Point3> = rows
            .iter()
            .zip(&w)
            .map(|(&r, &wr)| Point3::from(cols.iter().map(|&c| local[c].coords * soft[r * n + c]).sum::<nalgebra::Vector3<f64>>() / wr))
            .collect();
        let src: Vec<Point3> = rows.iter().map(|&r| local[r]).collect();
        out.push(((a, b), weighted_kabsch(&src, &dst, &w).unwrap()));
    }
    out
}

pub fn rigidity_loss_with_detached_poses() {
    let (local, piece) = two_pieces();
    let n = local.len();
    let mut r = rng();
    let soft = rand_tensor(&mut r, &[n, n], 0.05, 1.0);
    let poses = frozen_poses(soft.data(), n, &local, &piece);

    let mut g = Graph::new();
    let x = g.leaf(soft.clone(), true).unwrap();
    let (l, stats) = rigidity_loss(&mut g, x, &local, &piece).unwrap();
    assert_eq!(stats.pairs_used, 2);
    let value = g.value(l).item();
    let oracle = rigidity_fixed(soft.data(), n, &local, &piece, &poses);
    assert!((value - oracle).abs() < 1e-12 * oracle.max(1.0), "{value} vs {oracle}");

    g.backward(l).unwrap();
    let analytic = g.grad(x).unwrap();
    for k in 0..n * n {
        let mut p = soft.data().to_vec();
        p[k] += H;
        let mut m = soft.data().to_vec();
        m[k] -= H;
        let num = (rigidity_fixed(&p, n, &local, &piece, &poses) - rigidity_fixed(&m, n, &local, &piece, &poses)) / (2.0 * H);
        let an = analytic.data()[k];
        let rel = (an - num).abs() / an.abs().max(num.abs()).max(1e-6);
        assert!(rel < TOL, "entry {k}: analytic {an}, numeric {num}");
    }
}

pub const ALL: &[(&str, fn())] = &[
    ("elementwise_and_broadcast_ops", elementwise_and_broadcast_ops),
    ("piecewise_ops_away_from_kinks", piecewise_ops_away_from_kinks),
    ("reductions_and_softmax", reductions_and_softmax),
    ("shape_ops", shape_ops),
    ("dispatch_by_kind", dispatch_by_kind),
    ("sinkhorn_and_affinity", sinkhorn_and_affinity),
    ("segmentation_loss", segmentation_loss),
    ("matching_loss_through_sinkhorn", matching_loss_through_sinkhorn),
    ("rigidity_loss_with_detached_poses", rigidity_loss_with_detached_poses),
];
