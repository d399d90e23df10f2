//! Synthetic fractured objects with ground truth.
//!
//! A primitive solid is split by sequential cuts. Each cut is a plane through
//! the centroid region of the currently largest piece, bent by a smooth
//! egg-crate perturbation so fracture faces are not planar. Pieces are the
//! leaves of the resulting binary partition.
//!
//! Points are sampled "by object": the exterior surface and every cut face are
//! sampled with one common area density, so each fragment receives points in
//! proportion to its own surface area. A sample on a cut face lies on the
//! boundary of both adjacent fragments and is emitted once for each side, so
//! the two fracture faces carry mirrored samples.

use nalgebra::{Point3, Vector3};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geom::{centroid, random_rotation, KnnIndex, RigidTransform};

/// Every fragment must carry at least this many points.
pub const MIN_POINTS_PER_PIECE: usize = 30;
/// Target object diameter after normalization.
pub const OBJECT_DIAMETER: f64 = 0.8;
const MAX_ATTEMPTS: usize = 100;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ShapeFamily {
    Sphere,
    Box,
    Cylinder,
    Superellipsoid,
}

impl ShapeFamily {
    pub const ALL: [ShapeFamily; 4] =
        [ShapeFamily::Sphere, ShapeFamily::Box, ShapeFamily::Cylinder, ShapeFamily::Superellipsoid];

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "sphere" => Some(Self::Sphere),
            "box" => Some(Self::Box),
            "cylinder" => Some(Self::Cylinder),
            "superellipsoid" => Some(Self::Superellipsoid),
            _ => None,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Self::Sphere => "sphere",
            Self::Box => "box",
            Self::Cylinder => "cylinder",
            Self::Superellipsoid => "superellipsoid",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SynthConfig {
    /// `None` draws a family uniformly per object.
    pub shape: Option<ShapeFamily>,
    pub min_pieces: usize,
    pub max_pieces: usize,
    /// Points per object.
    pub points: usize,
    /// Fracture-label distance threshold.
    pub eta: f64,
    /// Cut perturbation amplitude as a fraction of the object diameter.
    pub perturbation: f64,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            shape: None,
            min_pieces: 2,
            max_pieces: 5,
            points: 1000,
            eta: 0.025,
            perturbation: 0.05,
            seed: 0,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        if self.min_pieces == 0 || self.min_pieces > self.max_pieces || self.max_pieces > 20 {
            return Err(Error::Config(format!(
                "piece range {}..{} must satisfy 1 <= min <= max <= 20",
                self.min_pieces, self.max_pieces
            )));
        }
        if self.points < MIN_POINTS_PER_PIECE * self.max_pieces {
            return Err(Error::Config(format!(
                "points = {} is below {} x max_pieces = {}",
                self.points,
                MIN_POINTS_PER_PIECE,
                MIN_POINTS_PER_PIECE * self.max_pieces
            )));
        }
        if !(self.eta > 0.0) {
            return Err(Error::Config("eta must be positive".into()));
        }
        if !(self.perturbation >= 0.0) {
            return Err(Error::Config("perturbation must be non-negative".into()));
        }
        Ok(())
    }
}

/// One fractured object.
///
/// `points` are in the object's current frame; `gt_pose[i]` maps piece `i` from
/// that frame to the assembled (canonical) frame. A freshly generated object is
/// canonical, so all poses are the identity.
#[derive(Clone, Debug, PartialEq)]
pub struct PointCloudObject {
    pub points: Vec<Point3<f64>>,
    pub piece_id: Vec<usize>,
    pub labels: Vec<bool>,
    pub gt_pose: Vec<RigidTransform<f64>>,
    /// Directed `(i, j)`: `j` is the nearest point of another piece to fracture point `i`.
    pub gt_match: Vec<(usize, usize)>,
    pub n_pieces: usize,
    pub eta: f64,
}

impl PointCloudObject {
    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn piece_counts(&self) -> Vec<usize> {
        let mut c = vec![0; self.n_pieces];
        for &p in &self.piece_id {
            c[p] += 1;
        }
        c
    }

    /// Global indices of the points of piece `i`, ascending.
    pub fn piece_indices(&self, i: usize) -> Vec<usize> {
        (0..self.len()).filter(|&k| self.piece_id[k] == i).collect()
    }

    pub fn piece_points(&self, i: usize) -> Vec<Point3<f64>> {
        self.piece_indices(i).into_iter().map(|k| self.points[k]).collect()
    }

    pub fn fracture_indices(&self) -> Vec<usize> {
        (0..self.len()).filter(|&k| self.labels[k]).collect()
    }

    /// Piece with the most points (lowest id on ties).
    pub fn largest_piece(&self) -> usize {
        let counts = self.piece_counts();
        let mut best = 0;
        for (i, &c) in counts.iter().enumerate() {
            if c > counts[best] {
                best = i;
            }
        }
        best
    }

    /// Points mapped by their piece's ground-truth pose.
    pub fn canonical_points(&self) -> Vec<Point3<f64>> {
        self.points
            .iter()
            .zip(&self.piece_id)
            .map(|(p, &i)| self.gt_pose[i].apply_point(p))
            .collect()
    }

    /// Structural checks shared by the generator and the file reader.
    pub fn validate(&self) -> Result<()> {
        let n = self.len();
        if self.piece_id.len() != n || self.labels.len() != n {
            return Err(Error::Invariant("per-point arrays differ in length".into()));
        }
        if self.gt_pose.len() != self.n_pieces {
            return Err(Error::Invariant(format!(
                "{} poses for {} pieces",
                self.gt_pose.len(),
                self.n_pieces
            )));
        }
        if let Some(&bad) = self.piece_id.iter().find(|&&p| p >= self.n_pieces) {
            return Err(Error::Invariant(format!("piece id {bad} >= n_pieces {}", self.n_pieces)));
        }
        for &(i, j) in &self.gt_match {
            if i >= n || j >= n {
                return Err(Error::Invariant(format!("match ({i}, {j}) out of range")));
            }
            if self.piece_id[i] == self.piece_id[j] {
                return Err(Error::Invariant(format!("match ({i}, {j}) within one piece")));
            }
            if !self.labels[i] || !self.labels[j] {
                return Err(Error::Invariant(format!("match ({i}, {j}) on non-fracture point")));
            }
        }
        Ok(())
    }
}

#[derive(Clone, Debug)]
enum Solid {
    Sphere { radius: f64 },
    Box { half: Vector3<f64> },
    Cylinder { radius: f64, half_height: f64 },
    Superellipsoid { axes: Vector3<f64>, e1: f64, e2: f64, mesh: TriangleMesh },
}

#[derive(Clone, Debug)]
struct TriangleMesh {
    triangles: Vec<[Point3<f64>; 3]>,
    cumulative: Vec<f64>,
}

impl TriangleMesh {
    fn area(&self) -> f64 {
        *self.cumulative.last().unwrap_or(&0.0)
    }

    fn sample<R: Rng>(&self, rng: &mut R) -> Point3<f64> {
        let t = rng.random::<f64>() * self.area();
        let k = self.cumulative.partition_point(|&c| c < t).min(self.triangles.len() - 1);
        let [a, b, c] = self.triangles[k];
        let (mut u, mut v) = (rng.random::<f64>(), rng.random::<f64>());
        if u + v > 1.0 {
            u = 1.0 - u;
            v = 1.0 - v;
        }
        a + (b - a) * u + (c - a) * v
    }
}

fn signed_pow(x: f64, e: f64) -> f64 {
    x.signum() * x.abs().powf(e)
}

impl Solid {
    fn random<R: Rng>(family: ShapeFamily, rng: &mut R) -> Self {
        let mut u = |lo: f64, hi: f64| lo + (hi - lo) * rng.random::<f64>();
        match family {
            ShapeFamily::Sphere => Solid::Sphere { radius: 1.0 },
            ShapeFamily::Box => Solid::Box { half: Vector3::new(u(0.5, 1.0), u(0.5, 1.0), u(0.5, 1.0)) },
            ShapeFamily::Cylinder => Solid::Cylinder { radius: u(0.5, 1.0), half_height: u(0.5, 1.0) },
            ShapeFamily::Superellipsoid => {
                let axes = Vector3::new(u(0.6, 1.0), u(0.6, 1.0), u(0.6, 1.0));
                let (e1, e2) = (u(0.4, 1.2), u(0.4, 1.2));
                let mesh = Self::superellipsoid_mesh(&axes, e1, e2, 48, 96);
                Solid::Superellipsoid { axes, e1, e2, mesh }
            }
        }
    }

    fn superellipsoid_mesh(axes: &Vector3<f64>, e1: f64, e2: f64, nu: usize, nv: usize) -> TriangleMesh {
        use std::f64::consts::{FRAC_PI_2, PI};
        let point = |i: usize, j: usize| {
            let eta = -FRAC_PI_2 + PI * i as f64 / nu as f64;
            let omega = -PI + 2.0 * PI * (j % nv) as f64 / nv as f64;
            let ce = signed_pow(eta.cos(), e1);
            Point3::new(
                axes.x * ce * signed_pow(omega.cos(), e2),
                axes.y * ce * signed_pow(omega.sin(), e2),
                axes.z * signed_pow(eta.sin(), e1),
            )
        };
        let mut triangles = Vec::with_capacity(2 * nu * nv);
        for i in 0..nu {
            for j in 0..nv {
                let (a, b, c, d) = (point(i, j), point(i + 1, j), point(i + 1, j + 1), point(i, j + 1));
                triangles.push([a, b, c]);
                triangles.push([a, c, d]);
            }
        }
        let mut cumulative = Vec::with_capacity(triangles.len());
        let mut acc = 0.0;
        for [a, b, c] in &triangles {
            acc += 0.5 * (b - a).cross(&(c - a)).norm();
            cumulative.push(acc);
        }
        TriangleMesh { triangles, cumulative }
    }

    fn inside(&self, p: &Point3<f64>) -> bool {
        match self {
            Solid::Sphere { radius } => p.coords.norm() <= *radius,
            Solid::Box { half } => (0..3).all(|a| p[a].abs() <= half[a]),
            Solid::Cylinder { radius, half_height } => {
                (p.x * p.x + p.y * p.y).sqrt() <= *radius && p.z.abs() <= *half_height
            }
            Solid::Superellipsoid { axes, e1, e2, .. } => {
                let xy = (p.x / axes.x).abs().powf(2.0 / e2) + (p.y / axes.y).abs().powf(2.0 / e2);
                xy.powf(e2 / e1) + (p.z / axes.z).abs().powf(2.0 / e1) <= 1.0
            }
        }
    }

    fn surface_area(&self) -> f64 {
        use std::f64::consts::PI;
        match self {
            Solid::Sphere { radius } => 4.0 * PI * radius * radius,
            Solid::Box { half } => 8.0 * (half.x * half.y + half.y * half.z + half.x * half.z),
            Solid::Cylinder { radius, half_height } => {
                2.0 * PI * radius * 2.0 * half_height + 2.0 * PI * radius * radius
            }
            Solid::Superellipsoid { mesh, .. } => mesh.area(),
        }
    }

    fn bounding_radius(&self) -> f64 {
        match self {
            Solid::Sphere { radius } => *radius,
            Solid::Box { half } => half.norm(),
            Solid::Cylinder { radius, half_height } => (radius * radius + half_height * half_height).sqrt(),
            Solid::Superellipsoid { axes, .. } => axes.norm(),
        }
    }

    fn sample_surface<R: Rng>(&self, rng: &mut R) -> Point3<f64> {
        use std::f64::consts::PI;
        match self {
            Solid::Sphere { radius } => {
                let v = Vector3::new(
                    rng.sample::<f64, _>(StandardNormal),
                    rng.sample::<f64, _>(StandardNormal),
                    rng.sample::<f64, _>(StandardNormal),
                );
                Point3::from(v.normalize() * *radius)
            }
            Solid::Box { half } => {
                let areas = [half.y * half.z, half.x * half.z, half.x * half.y];
                let total: f64 = areas.iter().sum();
                let mut t = rng.random::<f64>() * total;
                let mut axis = 2;
                for (a, &ar) in areas.iter().enumerate() {
                    if t < ar {
                        axis = a;
                        break;
                    }
                    t -= ar;
                }
                let mut p = Point3::new(
                    (2.0 * rng.random::<f64>() - 1.0) * half.x,
                    (2.0 * rng.random::<f64>() - 1.0) * half.y,
                    (2.0 * rng.random::<f64>() - 1.0) * half.z,
                );
                p[axis] = if rng.random::<bool>() { half[axis] } else { -half[axis] };
                p
            }
            Solid::Cylinder { radius, half_height } => {
                let side = 2.0 * PI * radius * 2.0 * half_height;
                let caps = 2.0 * PI * radius * radius;
                let theta = 2.0 * PI * rng.random::<f64>();
                if rng.random::<f64>() * (side + caps) < side {
                    let z = (2.0 * rng.random::<f64>() - 1.0) * half_height;
                    Point3::new(radius * theta.cos(), radius * theta.sin(), z)
                } else {
                    let r = radius * rng.random::<f64>().sqrt();
                    let z = if rng.random::<bool>() { *half_height } else { -half_height };
                    Point3::new(r * theta.cos(), r * theta.sin(), z)
                }
            }
            Solid::Superellipsoid { mesh, .. } => mesh.sample(rng),
        }
    }

    fn sample_volume<R: Rng>(&self, rng: &mut R) -> Point3<f64> {
        let r = self.bounding_radius();
        loop {
            let p = Point3::new(
                (2.0 * rng.random::<f64>() - 1.0) * r,
                (2.0 * rng.random::<f64>() - 1.0) * r,
                (2.0 * rng.random::<f64>() - 1.0) * r,
            );
            if self.inside(&p) {
                return p;
            }
        }
    }
}

/// A perturbed plane: `{x : n·(x−c) = h(e1·(x−c), e2·(x−c))}`.
#[derive(Clone, Debug)]
struct Cut {
    center: Point3<f64>,
    normal: Vector3<f64>,
    e1: Vector3<f64>,
    e2: Vector3<f64>,
    amplitude: f64,
    freq: [f64; 2],
    phase: [f64; 2],
    /// Piece split by this cut; its positive side becomes `new_piece`.
    target: usize,
    new_piece: usize,
}

impl Cut {
    fn height(&self, u: f64, v: f64) -> f64 {
        self.amplitude * (self.freq[0] * u + self.phase[0]).sin() * (self.freq[1] * v + self.phase[1]).cos()
    }

    fn slope_factor(&self, u: f64, v: f64) -> f64 {
        let a = self.freq[0] * u + self.phase[0];
        let b = self.freq[1] * v + self.phase[1];
        let hu = self.amplitude * self.freq[0] * a.cos() * b.cos();
        let hv = -self.amplitude * self.freq[1] * a.sin() * b.sin();
        (1.0 + hu * hu + hv * hv).sqrt()
    }

    fn max_slope_factor(&self) -> f64 {
        let g = self.amplitude * (self.freq[0] + self.freq[1]);
        (1.0 + g * g).sqrt()
    }

    fn signed(&self, x: &Point3<f64>) -> f64 {
        let d = x - self.center;
        self.normal.dot(&d) - self.height(self.e1.dot(&d), self.e2.dot(&d))
    }

    fn surface_point(&self, u: f64, v: f64) -> Point3<f64> {
        self.center + self.e1 * u + self.e2 * v + self.normal * self.height(u, v)
    }
}

#[derive(Clone, Copy)]
enum Side {
    Minus,
    Plus,
}

/// Leaf piece of `x` after applying `cuts` in order; `force` pins one cut's side
/// (used for samples lying exactly on that cut).
fn classify(x: &Point3<f64>, cuts: &[Cut], force: Option<(usize, Side)>) -> usize {
    let mut piece = 0;
    for (k, cut) in cuts.iter().enumerate() {
        if cut.target != piece {
            continue;
        }
        let plus = match force {
            Some((fk, side)) if fk == k => matches!(side, Side::Plus),
            _ => cut.signed(x) >= 0.0,
        };
        if plus {
            piece = cut.new_piece;
        }
    }
    piece
}

fn random_unit<R: Rng>(rng: &mut R) -> Vector3<f64> {
    loop {
        let v = Vector3::new(
            rng.sample::<f64, _>(StandardNormal),
            rng.sample::<f64, _>(StandardNormal),
            rng.sample::<f64, _>(StandardNormal),
        );
        let n = v.norm();
        if n > 1e-9 {
            return v / n;
        }
    }
}

fn orthonormal_basis(n: &Vector3<f64>) -> (Vector3<f64>, Vector3<f64>) {
    let helper = if n.x.abs() < 0.9 { Vector3::x() } else { Vector3::y() };
    let e1 = n.cross(&helper).normalize();
    let e2 = n.cross(&e1);
    (e1, e2)
}

/// Per-object RNG seed derived from the dataset seed and the object index.
pub fn object_seed(seed: u64, index: u64) -> u64 {
    let mut z = seed ^ index.wrapping_add(1).wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Generates one canonical fractured object with `n_pieces` pieces.
pub fn generate_object(cfg: &SynthConfig, n_pieces: usize, seed: u64) -> Result<PointCloudObject> {
    if n_pieces == 0 || n_pieces > 20 {
        return Err(Error::Config(format!("n_pieces = {n_pieces} outside 1..=20")));
    }
    if cfg.points < MIN_POINTS_PER_PIECE * n_pieces {
        return Err(Error::Config(format!(
            "{} points cannot hold {n_pieces} pieces of {MIN_POINTS_PER_PIECE}",
            cfg.points
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for _ in 0..MAX_ATTEMPTS {
        let family = match cfg.shape {
            Some(f) => f,
            None => ShapeFamily::ALL[rng.random_range(0..ShapeFamily::ALL.len())],
        };
        if let Some(obj) = try_generate(cfg, family, n_pieces, &mut rng)? {
            return Ok(obj);
        }
    }
    Err(Error::Synthesis(format!(
        "no valid {n_pieces}-piece split with >= {MIN_POINTS_PER_PIECE} points per piece after {MAX_ATTEMPTS} attempts"
    )))
}

fn draw_cuts<R: Rng>(
    solid: &Solid,
    n_pieces: usize,
    perturbation: f64,
    rng: &mut R,
) -> Option<Vec<Cut>> {
    let volume: Vec<Point3<f64>> = (0..4000).map(|_| solid.sample_volume(rng)).collect();
    let diameter = 2.0 * solid.bounding_radius();
    let mut cuts: Vec<Cut> = Vec::with_capacity(n_pieces.saturating_sub(1));
    for new_piece in 1..n_pieces {
        let mut counts = vec![0usize; new_piece];
        let membership: Vec<usize> = volume.iter().map(|p| classify(p, &cuts, None)).collect();
        for &m in &membership {
            counts[m] += 1;
        }
        let target = (0..new_piece).max_by_key(|&i| (counts[i], std::cmp::Reverse(i)))?;
        let members: Vec<Point3<f64>> =
            volume.iter().zip(&membership).filter(|(_, &m)| m == target).map(|(p, _)| *p).collect();
        let c = centroid(&members)?;
        let spread = (members.iter().map(|p| (p - c).norm_squared()).sum::<f64>()
            / members.len() as f64)
            .sqrt();
        let mut accepted = None;
        for _ in 0..50 {
            let normal = random_unit(rng);
            let (e1, e2) = orthonormal_basis(&normal);
            let jitter = random_unit(rng) * (0.25 * spread * rng.random::<f64>());
            let cut = Cut {
                center: c + jitter,
                normal,
                e1,
                e2,
                amplitude: perturbation * diameter,
                freq: [rng.random_range(3.0..7.0), rng.random_range(3.0..7.0)],
                phase: [
                    rng.random_range(0.0..std::f64::consts::TAU),
                    rng.random_range(0.0..std::f64::consts::TAU),
                ],
                target,
                new_piece,
            };
            let plus = members.iter().filter(|p| cut.signed(p) >= 0.0).count();
            let frac = plus as f64 / members.len() as f64;
            if (0.3..=0.7).contains(&frac) {
                accepted = Some(cut);
                break;
            }
        }
        cuts.push(accepted?);
    }
    Some(cuts)
}

/// One sample on a cut face: its position and the pieces on either side.
fn propose_cut_sample<R: Rng>(
    solid: &Solid,
    cuts: &[Cut],
    disk_radius: f64,
    max_factor: f64,
    rng: &mut R,
) -> Option<(Point3<f64>, usize, usize)> {
    let k = rng.random_range(0..cuts.len());
    let cut = &cuts[k];
    let r = disk_radius * rng.random::<f64>().sqrt();
    let theta = std::f64::consts::TAU * rng.random::<f64>();
    let (u, v) = (r * theta.cos(), r * theta.sin());
    if rng.random::<f64>() * max_factor > cut.slope_factor(u, v) {
        return None;
    }
    let x = cut.surface_point(u, v);
    if !solid.inside(&x) || classify(&x, &cuts[..k], None) != cut.target {
        return None;
    }
    let minus = classify(&x, cuts, Some((k, Side::Minus)));
    let plus = classify(&x, cuts, Some((k, Side::Plus)));
    Some((x, minus, plus))
}

fn try_generate<R: Rng>(
    cfg: &SynthConfig,
    family: ShapeFamily,
    n_pieces: usize,
    rng: &mut R,
) -> Result<Option<PointCloudObject>> {
    let solid = Solid::random(family, rng);
    let Some(cuts) = draw_cuts(&solid, n_pieces, cfg.perturbation, rng) else {
        return Ok(None);
    };

    let mut points: Vec<Point3<f64>> = Vec::with_capacity(cfg.points);
    let mut piece_id: Vec<usize> = Vec::with_capacity(cfg.points);
    let exterior_area = solid.surface_area();
    let mut n_pairs = 0;
    let mut cut_samples = Vec::new();
    if !cuts.is_empty() {
        let disk_radius = solid.bounding_radius() + 2.0 * cuts[0].amplitude;
        let max_factor = cuts.iter().map(Cut::max_slope_factor).fold(1.0, f64::max);
        let proposals = 40_000;
        let mut accepted = Vec::new();
        for _ in 0..proposals {
            if let Some(s) = propose_cut_sample(&solid, &cuts, disk_radius, max_factor, rng) {
                accepted.push(s);
            }
        }
        let proposal_area =
            cuts.len() as f64 * std::f64::consts::PI * disk_radius * disk_radius * max_factor;
        let cut_area = proposal_area * accepted.len() as f64 / proposals as f64;
        // Each cut face is shared by two fragments; a pair of mirrored samples
        // stands for one area element on each.
        n_pairs = ((cfg.points as f64 * cut_area) / (exterior_area + 2.0 * cut_area)).round() as usize;
        n_pairs = n_pairs.min(cfg.points / 2);
        if accepted.len() >= n_pairs {
            accepted.truncate(n_pairs);
        } else {
            let mut guard = 0usize;
            while accepted.len() < n_pairs {
                if let Some(s) = propose_cut_sample(&solid, &cuts, disk_radius, max_factor, rng) {
                    accepted.push(s);
                }
                guard += 1;
                if guard > 10_000_000 {
                    return Ok(None);
                }
            }
        }
        cut_samples = accepted;
    }
    let n_exterior = cfg.points - 2 * n_pairs;
    for _ in 0..n_exterior {
        let x = solid.sample_surface(rng);
        points.push(x);
        piece_id.push(classify(&x, &cuts, None));
    }
    for (x, minus, plus) in cut_samples {
        points.push(x);
        piece_id.push(minus);
        points.push(x);
        piece_id.push(plus);
    }

    let mut counts = vec![0usize; n_pieces];
    for &p in &piece_id {
        counts[p] += 1;
    }
    if counts.iter().any(|&c| c < MIN_POINTS_PER_PIECE) {
        return Ok(None);
    }

    normalize_diameter(&mut points);

    // Piece-major order, shuffled within each piece.
    let mut order: Vec<usize> = (0..points.len()).collect();
    order.shuffle(rng);
    order.sort_by_key(|&i| piece_id[i]);
    let points: Vec<Point3<f64>> = order.iter().map(|&i| points[i]).collect();
    let piece_id: Vec<usize> = order.iter().map(|&i| piece_id[i]).collect();

    let (labels, gt_match) = fracture_labels_and_matching(&points, &piece_id, n_pieces, cfg.eta)?;
    if n_pieces > 1 {
        let mut fracture_per_piece = vec![0usize; n_pieces];
        for (k, &l) in labels.iter().enumerate() {
            if l {
                fracture_per_piece[piece_id[k]] += 1;
            }
        }
        if fracture_per_piece.iter().any(|&c| c < 3) {
            return Ok(None);
        }
    }
    let obj = PointCloudObject {
        points,
        piece_id,
        labels,
        gt_pose: vec![RigidTransform::identity(); n_pieces],
        gt_match,
        n_pieces,
        eta: cfg.eta,
    };
    obj.validate()?;
    Ok(Some(obj))
}

/// Centers the cloud, scales it to [`OBJECT_DIAMETER`] (max pairwise distance)
/// and rounds coordinates to `f32` so the on-disk format is lossless.
fn normalize_diameter(points: &mut [Point3<f64>]) {
    let Some(c) = centroid(points) else { return };
    let mut diam2: f64 = 0.0;
    for i in 0..points.len() {
        for j in i + 1..points.len() {
            diam2 = diam2.max((points[i] - points[j]).norm_squared());
        }
    }
    let s = if diam2 > 0.0 { OBJECT_DIAMETER / diam2.sqrt() } else { 1.0 };
    for p in points.iter_mut() {
        *p = Point3::from((*p - c) * s).map(|v| v as f32 as f64);
    }
}

/// Fracture labels (nearest point of another piece within `eta`) and the
/// directed ground-truth matching of every fracture point to that neighbour.
pub fn fracture_labels_and_matching(
    points: &[Point3<f64>],
    piece_id: &[usize],
    n_pieces: usize,
    eta: f64,
) -> Result<(Vec<bool>, Vec<(usize, usize)>)> {
    let n = points.len();
    let mut labels = vec![false; n];
    let mut nn_other: Vec<Option<(usize, f64)>> = vec![None; n];
    if n_pieces > 1 {
        for piece in 0..n_pieces {
            let others: Vec<usize> = (0..n).filter(|&k| piece_id[k] != piece).collect();
            if others.is_empty() {
                continue;
            }
            let other_pts: Vec<Point3<f64>> = others.iter().map(|&k| points[k]).collect();
            let index = KnnIndex::new(&other_pts)?;
            for k in (0..n).filter(|&k| piece_id[k] == piece) {
                let nb = index.nearest(&points[k]);
                nn_other[k] = Some((others[nb.index], nb.distance));
            }
        }
    }
    let mut gt_match = Vec::new();
    for k in 0..n {
        if let Some((j, d)) = nn_other[k] {
            if d <= eta {
                labels[k] = true;
                gt_match.push((k, j));
            }
        }
    }
    Ok((labels, gt_match))
}

/// Rebuilds `gt_match` from the labels: for every fracture point, its nearest
/// point on a different piece (in the canonical frame).
pub fn build_gt_matching(obj: &PointCloudObject) -> Result<Vec<(usize, usize)>> {
    let canon = obj.canonical_points();
    let mut out = Vec::new();
    for piece in 0..obj.n_pieces {
        let others: Vec<usize> = (0..obj.len()).filter(|&k| obj.piece_id[k] != piece).collect();
        let fracture_here: Vec<usize> =
            (0..obj.len()).filter(|&k| obj.piece_id[k] == piece && obj.labels[k]).collect();
        if fracture_here.is_empty() {
            continue;
        }
        if others.is_empty() {
            return Err(Error::Invariant(format!("fracture point on piece {piece} with no other piece")));
        }
        let pts: Vec<Point3<f64>> = others.iter().map(|&k| canon[k]).collect();
        let index = KnnIndex::new(&pts)?;
        for k in fracture_here {
            out.push((k, others[index.nearest(&canon[k]).index]));
        }
    }
    out.sort_unstable();
    Ok(out)
}

/// Recenters every piece at the origin and applies a uniform random rotation;
/// `gt_pose` then maps each scattered piece back to the canonical frame.
pub fn scatter<R: Rng + ?Sized>(obj: &PointCloudObject, rng: &mut R) -> PointCloudObject {
    let canon = obj.canonical_points();
    let mut out = obj.clone();
    for piece in 0..obj.n_pieces {
        let idx = obj.piece_indices(piece);
        let pts: Vec<Point3<f64>> = idx.iter().map(|&k| canon[k]).collect();
        let c = centroid(&pts).unwrap_or_else(Point3::origin);
        let r = random_rotation(rng);
        for &k in &idx {
            out.points[k] = Point3::from(r * (canon[k] - c));
        }
        out.gt_pose[piece] = RigidTransform::from_parts_unchecked(r.transpose(), c.coords).quaternion_exact();
    }
    out
}

/// `count` scattered objects; object `i` uses `object_seed(cfg.seed, i)` for
/// both the piece count and its geometry.
pub fn generate_dataset(cfg: &SynthConfig, count: usize) -> Result<Vec<PointCloudObject>> {
    cfg.validate()?;
    (0..count)
        .into_par_iter()
        .map(|i| {
            let seed = object_seed(cfg.seed, i as u64);
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let n = rng.random_range(cfg.min_pieces..=cfg.max_pieces);
            let obj = generate_object(cfg, n, rng.random())?;
            Ok(scatter(&obj, &mut rng))
        })
        .collect()
}
