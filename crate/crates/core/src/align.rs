//! Pose recovery: weighted Kabsch, pairwise RANSAC and pose-graph averaging.
//!
//! Convention: a relative transform `T_ij` maps points of piece `i` into the
//! frame of piece `j`, and an absolute pose `T_i` maps piece `i` into the common
//! frame. A consistent graph therefore satisfies `T_i = T_j ∘ T_ij`.

use std::collections::BTreeMap;

use nalgebra::{DMatrix, Matrix3, Point3, Vector3};
use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::geom::{project_to_so3, RigidTransform};
use crate::matching::{MatchResult, PairMatches};
use crate::net::Network;
use crate::synth::PointCloudObject;
use crate::scalar::Real;

/// Rigid transform minimizing `Σ w_k ‖R src_k + t − dst_k‖²`.
pub fn weighted_kabsch<T: Real>(src: &[Point3<T>], dst: &[Point3<T>], weights: &[T]) -> Result<RigidTransform<T>> {
    let n = src.len();
    if dst.len() != n || weights.len() != n {
        return Err(Error::Shape {
            op: "weighted_kabsch",
            detail: format!("{n} sources, {} targets, {} weights", dst.len(), weights.len()),
        });
    }
    if n < 3 {
        return Err(Error::Degenerate(format!("weighted Kabsch needs 3 correspondences, got {n}")));
    }
    if weights.iter().any(|w| !(*w >= T::zero()) || !w.is_finite()) {
        return Err(Error::InvalidArgument("weights must be finite and non-negative".into()));
    }
    let total = weights.iter().fold(T::zero(), |a, &w| a + w);
    if !(total > T::zero()) {
        return Err(Error::Degenerate("total correspondence weight is zero".into()));
    }
    let mut cs = Vector3::zeros();
    let mut cd = Vector3::zeros();
    for k in 0..n {
        cs += src[k].coords * weights[k];
        cd += dst[k].coords * weights[k];
    }
    cs /= total;
    cd /= total;
    let mut h = Matrix3::zeros();
    for k in 0..n {
        h += (src[k].coords - cs) * (dst[k].coords - cd).transpose() * weights[k];
    }
    let svd = h.svd(true, true);
    let mut sv = [svd.singular_values[0], svd.singular_values[1], svd.singular_values[2]];
    sv.sort_by(|a, b| b.partial_cmp(a).unwrap_or(std::cmp::Ordering::Equal));
    if !(sv[0] > T::zero()) || sv[1] <= sv[0] * T::lit(1e-12) {
        return Err(Error::Degenerate(format!(
            "cross-covariance has rank < 2 (singular values {}, {}, {}); points are collinear or coincident",
            sv[0], sv[1], sv[2]
        )));
    }
    let u = svd.u.expect("u requested");
    let v = svd.v_t.expect("v_t requested").transpose();
    let mut s = Matrix3::identity();
    if (v * u.transpose()).determinant() < T::zero() {
        s[(2, 2)] = -T::one();
    }
    let r = v * s * u.transpose();
    let t = cd - r * cs;
    Ok(RigidTransform::from_parts_unchecked(r, t))
}

/// Weighted sum of squared residuals, the objective of [`weighted_kabsch`].
pub fn weighted_residual<T: Real>(tf: &RigidTransform<T>, src: &[Point3<T>], dst: &[Point3<T>], weights: &[T]) -> T {
    src.iter()
        .zip(dst)
        .zip(weights)
        .fold(T::zero(), |acc, ((p, q), &w)| acc + w * (tf.apply_point(p) - q).norm_squared())
}

#[derive(Clone, Debug, PartialEq)]
pub struct RansacConfig {
    pub iters: usize,
    /// Inlier residual threshold.
    pub threshold: f64,
    pub seed: u64,
}

impl Default for RansacConfig {
    fn default() -> Self {
        Self { iters: 2000, threshold: 0.02, seed: 0 }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct RansacResult<T: Real> {
    pub transform: RigidTransform<T>,
    pub inliers: Vec<bool>,
    pub n_inliers: usize,
}

fn inlier_mask<T: Real>(tf: &RigidTransform<T>, src: &[Point3<T>], dst: &[Point3<T>], thr: T) -> Vec<bool> {
    src.iter().zip(dst).map(|(p, q)| (tf.apply_point(p) - q).norm() < thr).collect()
}

/// Robust rigid fit of `src[k] → dst[k]`: best of `iters` minimal 3-point
/// hypotheses by inlier count, refit on its inliers. `None` if fewer than 3
/// correspondences or fewer than 3 inliers.
pub fn ransac_pairwise<T: Real>(src: &[Point3<T>], dst: &[Point3<T>], cfg: &RansacConfig) -> Option<RansacResult<T>> {
    let n = src.len();
    if n < 3 || dst.len() != n {
        return None;
    }
    let thr = T::lit(cfg.threshold);
    let ones = [T::one(); 3];
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut best: Option<(usize, RigidTransform<T>)> = None;
    for _ in 0..cfg.iters {
        let idx = sample(&mut rng, n, 3);
        let s = [src[idx.index(0)], src[idx.index(1)], src[idx.index(2)]];
        let d = [dst[idx.index(0)], dst[idx.index(1)], dst[idx.index(2)]];
        let Ok(tf) = weighted_kabsch(&s, &d, &ones) else { continue };
        let count = inlier_mask(&tf, src, dst, thr).iter().filter(|&&b| b).count();
        if best.as_ref().is_none_or(|(c, _)| count > *c) {
            best = Some((count, tf));
            if count == n {
                break;
            }
        }
    }
    let (count, hypothesis) = best?;
    if count < 3 {
        return None;
    }
    let mask = inlier_mask(&hypothesis, src, dst, thr);
    let (s, d): (Vec<_>, Vec<_>) = src.iter().zip(dst).zip(&mask).filter(|(_, &m)| m).map(|((p, q), _)| (*p, *q)).unzip();
    let w = vec![T::one(); s.len()];
    let transform = weighted_kabsch(&s, &d, &w).unwrap_or(hypothesis);
    let inliers = inlier_mask(&transform, src, dst, thr);
    let n_inliers = inliers.iter().filter(|&&b| b).count();
    if n_inliers < 3 {
        return Some(RansacResult { transform: hypothesis, n_inliers: count, inliers: mask });
    }
    Some(RansacResult { transform, inliers, n_inliers })
}

#[derive(Clone, Debug, PartialEq)]
pub struct PoseEdge<T: Real> {
    pub i: usize,
    pub j: usize,
    /// Maps piece `i`'s frame into piece `j`'s frame.
    pub transform: RigidTransform<T>,
    /// Scalar of the isotropic information matrix `weight · I_6`.
    pub weight: T,
    pub inliers: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct PoseGraph<T: Real> {
    /// Vertex size (point count) used to choose the anchor of each component.
    pub sizes: Vec<usize>,
    pub edges: Vec<PoseEdge<T>>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Alignment<T: Real> {
    pub poses: Vec<RigidTransform<T>>,
    /// `false` for vertices that had no usable edge.
    pub aligned: Vec<bool>,
    /// Anchor vertex of each vertex's component.
    pub anchor: Vec<usize>,
}

impl<T: Real> PoseGraph<T> {
    pub fn new(sizes: Vec<usize>) -> Self {
        Self { sizes, edges: Vec::new() }
    }

    pub fn n_vertices(&self) -> usize {
        self.sizes.len()
    }

    pub fn add_edge(&mut self, edge: PoseEdge<T>) -> Result<()> {
        let n = self.n_vertices();
        if edge.i >= n || edge.j >= n || edge.i == edge.j {
            return Err(Error::InvalidArgument(format!("edge ({}, {}) invalid for {n} vertices", edge.i, edge.j)));
        }
        if !(edge.weight > T::zero()) {
            return Err(Error::InvalidArgument(format!("edge weight {} must be positive", edge.weight)));
        }
        self.edges.push(edge);
        Ok(())
    }

    /// Connected components, each sorted ascending, ordered by smallest vertex.
    pub fn components(&self) -> Vec<Vec<usize>> {
        let n = self.n_vertices();
        let mut parent: Vec<usize> = (0..n).collect();
        fn find(p: &mut [usize], mut x: usize) -> usize {
            while p[x] != x {
                p[x] = p[p[x]];
                x = p[x];
            }
            x
        }
        for e in &self.edges {
            let (a, b) = (find(&mut parent, e.i), find(&mut parent, e.j));
            if a != b {
                parent[a.max(b)] = a.min(b);
            }
        }
        let mut groups: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
        for v in 0..n {
            let r = find(&mut parent, v);
            groups.entry(r).or_default().push(v);
        }
        groups.into_values().collect()
    }

    /// Largest vertex by size, lowest index on ties.
    fn anchor_of(&self, comp: &[usize]) -> usize {
        let mut best = comp[0];
        for &v in comp {
            if self.sizes[v] > self.sizes[best] {
                best = v;
            }
        }
        best
    }

    /// Weighted chordal cost `Σ w ‖R_i − R_j R_ij‖²_F`.
    pub fn rotation_cost(&self, rot: &[Matrix3<T>]) -> T {
        self.edges.iter().fold(T::zero(), |acc, e| {
            acc + e.weight * (rot[e.i] - rot[e.j] * e.transform.rotation()).norm_squared()
        })
    }

    /// Largest rotation (Frobenius) and translation residual over all edges.
    pub fn max_residual(&self, poses: &[RigidTransform<T>]) -> (T, T) {
        let mut rr = T::zero();
        let mut tr = T::zero();
        for e in &self.edges {
            let pred = poses[e.j].compose(&e.transform);
            let dr = (pred.rotation() - poses[e.i].rotation()).norm();
            let dt = (pred.translation() - poses[e.i].translation()).norm();
            rr = if dr > rr { dr } else { rr };
            tr = if dt > tr { dt } else { tr };
        }
        (rr, tr)
    }
}

const GN_MAX_ITERS: usize = 50;
const GN_TOL: f64 = 1e-10;

fn solve_spd<T: Real>(h: DMatrix<T>, b: DMatrix<T>) -> Result<DMatrix<T>> {
    if let Some(ch) = h.clone().cholesky() {
        return Ok(ch.solve(&b));
    }
    h.lu().solve(&b).ok_or_else(|| Error::Degenerate("singular pose-graph system".into()))
}

fn skew<T: Real>(a: usize) -> Matrix3<T> {
    let mut m = Matrix3::zeros();
    let (i, j) = match a {
        0 => (2, 1),
        1 => (0, 2),
        _ => (1, 0),
    };
    m[(i, j)] = T::one();
    m[(j, i)] = -T::one();
    m
}

fn exp_so3<T: Real>(w: &Vector3<T>) -> Matrix3<T> {
    let theta = w.norm();
    if theta == T::zero() {
        return Matrix3::identity();
    }
    crate::geom::rotation_about(&(w / theta), theta)
}

/// Chordal initialization over one component: row `k` of every rotation solves
/// a linear least-squares problem; the anchor rotation is fixed to identity.
fn chordal_rotations<T: Real>(g: &PoseGraph<T>, comp: &[usize], anchor: usize, rot: &mut [Matrix3<T>]) -> Result<()> {
    let free: Vec<usize> = comp.iter().copied().filter(|&v| v != anchor).collect();
    if free.is_empty() {
        return Ok(());
    }
    let slot: BTreeMap<usize, usize> = free.iter().enumerate().map(|(k, &v)| (v, k)).collect();
    let m = free.len();
    let mut h = DMatrix::<T>::zeros(3 * m, 3 * m);
    let mut b = DMatrix::<T>::zeros(3 * m, 3);
    // Residual per edge and row k: r_i^k − R_ijᵀ r_j^k, with r^k as column vectors.
    for e in g.edges.iter().filter(|e| slot.contains_key(&e.i) || slot.contains_key(&e.j)) {
        let a_i = Matrix3::<T>::identity();
        let a_j = -e.transform.rotation().transpose();
        let blocks = [(e.i, a_i), (e.j, a_j)];
        for (u, au) in &blocks {
            for (v, av) in &blocks {
                let hb = au.transpose() * av * e.weight;
                match (slot.get(u), slot.get(v)) {
                    (Some(&su), Some(&sv)) => {
                        let mut view = h.view_mut((3 * su, 3 * sv), (3, 3));
                        view += hb;
                    }
                    (Some(&su), None) => {
                        // v is the anchor with rows e_k: move its known term right.
                        let known = au.transpose() * av * e.weight;
                        for k in 0..3 {
                            let col = known.column(k).into_owned();
                            for r in 0..3 {
                                b[(3 * su + r, k)] -= col[r];
                            }
                        }
                    }
                    _ => {}
                }
            }
        }
    }
    let x = solve_spd(h, b)?;
    for (k, &v) in free.iter().enumerate() {
        let mut r = Matrix3::zeros();
        for row in 0..3 {
            for c in 0..3 {
                r[(row, c)] = x[(3 * k + c, row)];
            }
        }
        rot[v] = project_to_so3(&r);
    }
    Ok(())
}

/// Gauss–Newton on the chordal cost with right perturbations `R ← R exp([δ]×)`.
fn refine_rotations<T: Real>(g: &PoseGraph<T>, comp: &[usize], anchor: usize, rot: &mut [Matrix3<T>]) -> Result<usize> {
    let free: Vec<usize> = comp.iter().copied().filter(|&v| v != anchor).collect();
    if free.is_empty() {
        return Ok(0);
    }
    let slot: BTreeMap<usize, usize> = free.iter().enumerate().map(|(k, &v)| (v, k)).collect();
    let m = free.len();
    let edges: Vec<&PoseEdge<T>> = g.edges.iter().filter(|e| slot.contains_key(&e.i) || slot.contains_key(&e.j)).collect();
    let cost = |rot: &[Matrix3<T>]| {
        edges.iter().fold(T::zero(), |acc, e| acc + e.weight * (rot[e.i] - rot[e.j] * e.transform.rotation()).norm_squared())
    };
    let mut current = cost(rot);
    for iter in 0..GN_MAX_ITERS {
        let mut h = DMatrix::<T>::zeros(3 * m, 3 * m);
        let mut b = DMatrix::<T>::zeros(3 * m, 1);
        for e in &edges {
            let rij = *e.transform.rotation();
            let res = rot[e.i] - rot[e.j] * rij;
            let mut jac: Vec<(usize, [Matrix3<T>; 3])> = Vec::with_capacity(2);
            if let Some(&s) = slot.get(&e.i) {
                jac.push((s, [0, 1, 2].map(|a| rot[e.i] * skew::<T>(a))));
            }
            if let Some(&s) = slot.get(&e.j) {
                jac.push((s, [0, 1, 2].map(|a| -(rot[e.j] * skew::<T>(a) * rij))));
            }
            for (su, ju) in &jac {
                for a in 0..3 {
                    b[(3 * su + a, 0)] -= e.weight * ju[a].dot(&res);
                    for (sv, jv) in &jac {
                        for c in 0..3 {
                            h[(3 * su + a, 3 * sv + c)] += e.weight * ju[a].dot(&jv[c]);
                        }
                    }
                }
            }
        }
        let delta = solve_spd(h, b)?;
        let step_norm = delta.norm();
        let mut scale = T::one();
        let mut accepted = false;
        for _ in 0..20 {
            let mut trial = rot.to_vec();
            for (k, &v) in free.iter().enumerate() {
                let w = Vector3::new(delta[3 * k], delta[3 * k + 1], delta[3 * k + 2]) * scale;
                trial[v] = project_to_so3(&(rot[v] * exp_so3(&w)));
            }
            let c = cost(&trial);
            if c <= current {
                rot.copy_from_slice(&trial);
                current = c;
                accepted = true;
                break;
            }
            scale *= T::lit(0.5);
        }
        if !accepted || step_norm < T::lit(GN_TOL) {
            return Ok(iter + 1);
        }
    }
    Ok(GN_MAX_ITERS)
}

/// Translations given rotations: weighted least squares on `t_i − t_j − R_j t_ij`,
/// anchor fixed at zero. The system decouples per coordinate.
fn solve_translations<T: Real>(g: &PoseGraph<T>, comp: &[usize], anchor: usize, rot: &[Matrix3<T>], trans: &mut [Vector3<T>]) -> Result<()> {
    let free: Vec<usize> = comp.iter().copied().filter(|&v| v != anchor).collect();
    if free.is_empty() {
        return Ok(());
    }
    let slot: BTreeMap<usize, usize> = free.iter().enumerate().map(|(k, &v)| (v, k)).collect();
    let m = free.len();
    let mut h = DMatrix::<T>::zeros(m, m);
    let mut b = DMatrix::<T>::zeros(m, 3);
    for e in g.edges.iter().filter(|e| slot.contains_key(&e.i) || slot.contains_key(&e.j)) {
        let c = rot[e.j] * e.transform.translation();
        let w = e.weight;
        let si = slot.get(&e.i).copied();
        let sj = slot.get(&e.j).copied();
        if let Some(i) = si {
            h[(i, i)] += w;
            for k in 0..3 {
                b[(i, k)] += w * c[k];
            }
        }
        if let Some(j) = sj {
            h[(j, j)] += w;
            for k in 0..3 {
                b[(j, k)] -= w * c[k];
            }
        }
        if let (Some(i), Some(j)) = (si, sj) {
            h[(i, j)] -= w;
            h[(j, i)] -= w;
        }
    }
    let x = solve_spd(h, b)?;
    for (k, &v) in free.iter().enumerate() {
        trans[v] = Vector3::new(x[(k, 0)], x[(k, 1)], x[(k, 2)]);
    }
    Ok(())
}

/// Absolute poses from relative measurements. Each connected component is
/// solved on its own, anchored at its largest vertex (identity pose).
pub fn global_align<T: Real>(graph: &PoseGraph<T>) -> Result<Alignment<T>> {
    let n = graph.n_vertices();
    if n == 0 {
        return Err(Error::Empty("pose graph"));
    }
    let mut rot = vec![Matrix3::<T>::identity(); n];
    let mut trans = vec![Vector3::<T>::zeros(); n];
    let mut aligned = vec![n == 1; n];
    let mut anchors = vec![0; n];
    for comp in graph.components() {
        let anchor = graph.anchor_of(&comp);
        for &v in &comp {
            anchors[v] = anchor;
        }
        if comp.len() < 2 {
            continue;
        }
        for &v in &comp {
            aligned[v] = true;
        }
        chordal_rotations(graph, &comp, anchor, &mut rot)?;
        refine_rotations(graph, &comp, anchor, &mut rot)?;
        solve_translations(graph, &comp, anchor, &rot, &mut trans)?;
    }
    let poses = rot.into_iter().zip(trans).map(|(r, t)| RigidTransform::from_parts_unchecked(r, t)).collect();
    Ok(Alignment { poses, aligned, anchor: anchors })
}

#[derive(Clone, Debug, PartialEq)]
pub struct AlignConfig {
    pub ransac: RansacConfig,
    /// Use `m · I_6` instead of `m⁻¹ · I_6` as the edge information.
    pub invert_edge_weight: bool,
    /// Pairs with fewer RANSAC inliers produce no edge.
    pub min_inliers: usize,
}

impl Default for AlignConfig {
    fn default() -> Self {
        Self { ransac: RansacConfig::default(), invert_edge_weight: false, min_inliers: 10 }
    }
}

/// Builds the pose graph from hard matches: both directions of every piece
/// pair are merged into one correspondence set, fitted with RANSAC, and
/// weighted by `‖X_ij‖_F⁻² = 1/m` for `m` matches.
pub fn build_pose_graph(
    points: &[Point3<f64>],
    piece_id: &[usize],
    sizes: Vec<usize>,
    matches: &PairMatches,
    cfg: &AlignConfig,
) -> Result<PoseGraph<f64>> {
    let mut merged: BTreeMap<(usize, usize), (Vec<Point3<f64>>, Vec<Point3<f64>>)> = BTreeMap::new();
    for (&(a, b), pairs) in matches {
        let (lo, hi) = (a.min(b), a.max(b));
        let entry = merged.entry((lo, hi)).or_default();
        for &(i, j) in pairs {
            debug_assert_eq!((piece_id[i], piece_id[j]), (a, b));
            if a == lo {
                entry.0.push(points[i]);
                entry.1.push(points[j]);
            } else {
                entry.0.push(points[j]);
                entry.1.push(points[i]);
            }
        }
    }
    let jobs: Vec<((usize, usize), (Vec<Point3<f64>>, Vec<Point3<f64>>))> = merged.into_iter().collect();
    let fits: Vec<Option<PoseEdge<f64>>> = jobs
        .par_iter()
        .map(|((lo, hi), (src, dst))| {
            let (lo, hi) = (*lo, *hi);
            let rc = RansacConfig { seed: cfg.ransac.seed ^ ((lo as u64) << 32 | hi as u64), ..cfg.ransac.clone() };
            let fit = ransac_pairwise(src, dst, &rc)?;
            if fit.n_inliers < cfg.min_inliers.max(3) {
                return None;
            }
            let m = src.len() as f64;
            let weight = if cfg.invert_edge_weight { m } else { 1.0 / m };
            Some(PoseEdge { i: lo, j: hi, transform: fit.transform, weight, inliers: fit.n_inliers })
        })
        .collect();
    let mut graph = PoseGraph::new(sizes);
    for e in fits.into_iter().flatten() {
        graph.add_edge(e)?;
    }
    Ok(graph)
}

/// Poses for every piece of an object from cross-piece hard matches.
pub fn assemble_from_matches(
    points: &[Point3<f64>],
    piece_id: &[usize],
    n_pieces: usize,
    matches: &PairMatches,
    cfg: &AlignConfig,
) -> Result<Alignment<f64>> {
    let mut sizes = vec![0; n_pieces];
    for &p in piece_id {
        sizes[p] += 1;
    }
    let graph = build_pose_graph(points, piece_id, sizes, matches, cfg)?;
    let out = global_align(&graph)?;
    for (v, ok) in out.aligned.iter().enumerate() {
        if !ok {
            log::info!("piece {v} has no usable pairwise transform; left at identity");
        }
    }
    Ok(out)
}

/// Ground-truth matches grouped by ordered piece pair (oracle correspondences).
pub fn group_matches(pairs: &[(usize, usize)], piece_id: &[usize]) -> PairMatches {
    let mut out = PairMatches::new();
    for &(i, j) in pairs {
        let (a, b) = (piece_id[i], piece_id[j]);
        if a != b {
            out.entry((a, b)).or_default().push((i, j));
        }
    }
    out
}

/// Output of [`assemble`].
#[derive(Clone, Debug)]
pub struct Assembly {
    pub alignment: Alignment<f64>,
    /// Per-point fracture confidence from the network.
    pub confidence: Vec<f64>,
    /// Predicted fracture mask (confidence above 0.5).
    pub fracture: Vec<bool>,
    pub matches: Option<MatchResult>,
}

impl Assembly {
    pub fn poses(&self) -> &[RigidTransform<f64>] {
        &self.alignment.poses
    }
}

fn unaligned(n_pieces: usize, sizes: &[usize]) -> Result<Alignment<f64>> {
    global_align(&PoseGraph::new(sizes.to_vec())).map(|mut a| {
        a.aligned = vec![n_pieces == 1; n_pieces];
        a
    })
}

/// Full pipeline on one scattered object: network, fracture threshold,
/// descriptors, Sinkhorn, Hungarian, pairwise RANSAC, global alignment.
pub fn assemble(obj: &PointCloudObject, net: &Network, cfg: &AlignConfig) -> Result<Assembly> {
    let sizes = obj.piece_counts();
    let inf = net.infer(obj, None)?;
    let fracture: Vec<bool> = inf.confidence.iter().map(|&c| c > 0.5).collect();
    let alignment = match &inf.matches {
        _ if obj.n_pieces == 1 => unaligned(1, &sizes)?,
        None => {
            log::warn!("no fracture points predicted; all pieces keep the identity pose");
            unaligned(obj.n_pieces, &sizes)?
        }
        Some(m) => assemble_from_matches(&obj.points, &obj.piece_id, obj.n_pieces, &m.pair_matches(&obj.piece_id), cfg)?,
    };
    Ok(Assembly { alignment, confidence: inf.confidence, fracture, matches: inf.matches })
}

/// Alignment from the ground-truth correspondences, bypassing the network.
pub fn assemble_with_oracle(obj: &PointCloudObject, cfg: &AlignConfig) -> Result<Alignment<f64>> {
    let matches = group_matches(&obj.gt_match, &obj.piece_id);
    assemble_from_matches(&obj.points, &obj.piece_id, obj.n_pieces, &matches, cfg)
}

/// Every point moved by its piece's pose.
pub fn assembled_points(points: &[Point3<f64>], piece_id: &[usize], poses: &[RigidTransform<f64>]) -> Vec<Point3<f64>> {
    points.iter().zip(piece_id).map(|(p, &i)| poses[i].apply_point(p)).collect()
}
