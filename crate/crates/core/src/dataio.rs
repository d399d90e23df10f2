//! On-disk formats: object files (`JGSO`), dataset manifests, match sidecars
//! (`JGSM`), pose text files and PLY export.
//!
//! Object file layout, all little-endian:
//!
//! ```text
//! magic "JGSO" | version u32 | n_pieces u32 | n_points u32 | eta f64
//! points:  n_points × (x f32, y f32, z f32, piece_id u16, label u8)
//! poses:   n_pieces × (qw qx qy qz f64, tx ty tz f64)
//! matches: count u32, count × (i u32, j u32)
//! ```
//!
//! Positions are `f32` on disk, so a write/read round trip is bit-exact for
//! objects whose coordinates are already `f32`-representable (see
//! [`PointCloudObject::quantized`]).

use std::fs::{self, File};
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::{Path, PathBuf};

use nalgebra::{Point3, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geom::RigidTransform;
use crate::synth::{object_seed, PointCloudObject, SynthConfig};

pub const OBJECT_MAGIC: [u8; 4] = *b"JGSO";
pub const OBJECT_VERSION: u32 = 1;
pub const MATCH_MAGIC: [u8; 4] = *b"JGSM";
pub const MATCH_VERSION: u32 = 1;
pub const MANIFEST_FILE: &str = "manifest.json";
pub const MANIFEST_VERSION: u32 = 1;

impl PointCloudObject {
    /// Copy with positions rounded to `f32`, i.e. what a file round trip yields.
    pub fn quantized(&self) -> Self {
        let mut out = self.clone();
        for p in &mut out.points {
            *p = p.map(|v| v as f32 as f64);
        }
        out
    }
}

struct Reader<R> {
    inner: R,
}

impl<R: Read> Reader<R> {
    fn bytes<const N: usize>(&mut self, section: &'static str) -> Result<[u8; N]> {
        let mut b = [0u8; N];
        self.inner.read_exact(&mut b).map_err(|e| match e.kind() {
            std::io::ErrorKind::UnexpectedEof => Error::UnexpectedEof(section),
            _ => Error::Io(e),
        })?;
        Ok(b)
    }

    fn u8(&mut self, s: &'static str) -> Result<u8> {
        Ok(self.bytes::<1>(s)?[0])
    }

    fn u16(&mut self, s: &'static str) -> Result<u16> {
        Ok(u16::from_le_bytes(self.bytes(s)?))
    }

    fn u32(&mut self, s: &'static str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.bytes(s)?))
    }

    fn f32(&mut self, s: &'static str) -> Result<f32> {
        Ok(f32::from_le_bytes(self.bytes(s)?))
    }

    fn f64(&mut self, s: &'static str) -> Result<f64> {
        Ok(f64::from_le_bytes(self.bytes(s)?))
    }
}

fn to_u32(v: usize, what: &str) -> Result<u32> {
    u32::try_from(v).map_err(|_| Error::InvalidArgument(format!("{what} = {v} does not fit in u32")))
}

pub fn write_object<W: Write>(w: &mut W, obj: &PointCloudObject) -> Result<()> {
    obj.validate()?;
    if obj.n_pieces > u16::MAX as usize + 1 {
        return Err(Error::InvalidArgument(format!("{} pieces exceed u16 ids", obj.n_pieces)));
    }
    w.write_all(&OBJECT_MAGIC)?;
    w.write_all(&OBJECT_VERSION.to_le_bytes())?;
    w.write_all(&to_u32(obj.n_pieces, "n_pieces")?.to_le_bytes())?;
    w.write_all(&to_u32(obj.len(), "n_points")?.to_le_bytes())?;
    w.write_all(&obj.eta.to_le_bytes())?;
    for k in 0..obj.len() {
        let p = obj.points[k];
        for v in [p.x, p.y, p.z] {
            w.write_all(&(v as f32).to_le_bytes())?;
        }
        w.write_all(&(obj.piece_id[k] as u16).to_le_bytes())?;
        w.write_all(&[obj.labels[k] as u8])?;
    }
    for pose in &obj.gt_pose {
        for v in pose.quaternion() {
            w.write_all(&v.to_le_bytes())?;
        }
        for v in pose.translation().iter() {
            w.write_all(&v.to_le_bytes())?;
        }
    }
    w.write_all(&to_u32(obj.gt_match.len(), "gt_match count")?.to_le_bytes())?;
    for &(i, j) in &obj.gt_match {
        w.write_all(&(i as u32).to_le_bytes())?;
        w.write_all(&(j as u32).to_le_bytes())?;
    }
    Ok(())
}

pub fn read_object<R: Read>(r: &mut R) -> Result<PointCloudObject> {
    let mut r = Reader { inner: r };
    let magic = r.bytes::<4>("header")?;
    if magic != OBJECT_MAGIC {
        return Err(Error::BadMagic { expected: OBJECT_MAGIC, found: magic });
    }
    let version = r.u32("header")?;
    if version != OBJECT_VERSION {
        return Err(Error::UnsupportedVersion(version));
    }
    let n_pieces = r.u32("header")? as usize;
    let n_points = r.u32("header")? as usize;
    let eta = r.f64("header")?;
    let mut points = Vec::with_capacity(n_points.min(1 << 24));
    let mut piece_id = Vec::with_capacity(n_points.min(1 << 24));
    let mut labels = Vec::with_capacity(n_points.min(1 << 24));
    for _ in 0..n_points {
        let x = r.f32("points")? as f64;
        let y = r.f32("points")? as f64;
        let z = r.f32("points")? as f64;
        points.push(Point3::new(x, y, z));
        piece_id.push(r.u16("points")? as usize);
        labels.push(match r.u8("points")? {
            0 => false,
            1 => true,
            other => return Err(Error::Invariant(format!("label byte {other} is not 0 or 1"))),
        });
    }
    let mut gt_pose = Vec::with_capacity(n_pieces.min(1 << 16));
    for _ in 0..n_pieces {
        let mut q = [0.0; 4];
        for v in &mut q {
            *v = r.f64("poses")?;
        }
        let norm = q.iter().map(|v| v * v).sum::<f64>().sqrt();
        if (norm - 1.0).abs() > 1e-9 {
            return Err(Error::Invariant(format!("pose quaternion norm {norm}")));
        }
        let t = Vector3::new(r.f64("poses")?, r.f64("poses")?, r.f64("poses")?);
        gt_pose.push(RigidTransform::from_quaternion(q, t)?);
    }
    let count = r.u32("matches")? as usize;
    let mut gt_match = Vec::with_capacity(count.min(1 << 24));
    for _ in 0..count {
        gt_match.push((r.u32("matches")? as usize, r.u32("matches")? as usize));
    }
    let obj = PointCloudObject { points, piece_id, labels, gt_pose, gt_match, n_pieces, eta };
    obj.validate()?;
    if obj.piece_counts().contains(&0) {
        return Err(Error::Invariant("a piece has no points".into()));
    }
    Ok(obj)
}

pub fn save_object(path: &Path, obj: &PointCloudObject) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    write_object(&mut w, obj)?;
    w.flush()?;
    Ok(())
}

pub fn load_object(path: &Path) -> Result<PointCloudObject> {
    let mut r = BufReader::new(File::open(path)?);
    read_object(&mut r)
}

/// Dataset directory index.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub version: u32,
    pub count: usize,
    pub config: SynthConfig,
    /// Per-object RNG seeds.
    pub seeds: Vec<u64>,
    pub files: Vec<String>,
}

pub fn object_file_name(index: usize) -> String {
    format!("obj_{index}.jgso")
}

/// Writes objects and a manifest into `dir` (created if missing).
pub fn write_dataset(dir: &Path, cfg: &SynthConfig, objects: &[PointCloudObject]) -> Result<Manifest> {
    fs::create_dir_all(dir)?;
    let mut files = Vec::with_capacity(objects.len());
    for (i, obj) in objects.iter().enumerate() {
        let name = object_file_name(i);
        save_object(&dir.join(&name), obj)?;
        files.push(name);
    }
    let manifest = Manifest {
        version: MANIFEST_VERSION,
        count: objects.len(),
        config: cfg.clone(),
        seeds: (0..objects.len() as u64).map(|i| object_seed(cfg.seed, i)).collect(),
        files,
    };
    fs::write(dir.join(MANIFEST_FILE), serde_json::to_string_pretty(&manifest)?)?;
    Ok(manifest)
}

pub fn read_manifest(dir: &Path) -> Result<Manifest> {
    let text = fs::read_to_string(dir.join(MANIFEST_FILE))?;
    let m: Manifest = serde_json::from_str(&text)?;
    if m.version != MANIFEST_VERSION {
        return Err(Error::UnsupportedVersion(m.version));
    }
    if m.files.len() != m.count {
        return Err(Error::Invariant(format!("manifest lists {} files for count {}", m.files.len(), m.count)));
    }
    Ok(m)
}

/// Loads every object named in the manifest, or every `*.jgso` file in
/// lexical order if there is no manifest.
pub fn read_dataset(dir: &Path) -> Result<Vec<PointCloudObject>> {
    dataset_files(dir)?.iter().map(|p| load_object(p)).collect()
}

pub fn dataset_files(dir: &Path) -> Result<Vec<PathBuf>> {
    if dir.join(MANIFEST_FILE).exists() {
        let m = read_manifest(dir)?;
        return Ok(m.files.iter().map(|f| dir.join(f)).collect());
    }
    let mut files: Vec<PathBuf> = fs::read_dir(dir)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|e| e == "jgso"))
        .collect();
    files.sort();
    Ok(files)
}

/// Distinct, reasonably saturated colours for piece ids.
pub fn piece_color(id: usize) -> [u8; 3] {
    const PALETTE: [[u8; 3]; 10] = [
        [230, 25, 75],
        [60, 180, 75],
        [0, 130, 200],
        [245, 130, 48],
        [145, 30, 180],
        [70, 240, 240],
        [240, 50, 230],
        [210, 245, 60],
        [0, 128, 128],
        [170, 110, 40],
    ];
    if id < PALETTE.len() {
        PALETTE[id]
    } else {
        let h = (id as u32).wrapping_mul(2_654_435_761);
        [(h >> 24) as u8, (h >> 16) as u8, (h >> 8) as u8]
    }
}

/// ASCII PLY of the object with `poses[i]` applied to piece `i`, coloured by piece.
pub fn write_ply<W: Write>(w: &mut W, obj: &PointCloudObject, poses: &[RigidTransform<f64>]) -> Result<()> {
    if poses.len() != obj.n_pieces {
        return Err(Error::InvalidArgument(format!("{} poses for {} pieces", poses.len(), obj.n_pieces)));
    }
    writeln!(w, "ply")?;
    writeln!(w, "format ascii 1.0")?;
    writeln!(w, "element vertex {}", obj.len())?;
    for c in ["x", "y", "z"] {
        writeln!(w, "property double {c}")?;
    }
    for c in ["red", "green", "blue"] {
        writeln!(w, "property uchar {c}")?;
    }
    writeln!(w, "property uchar label")?;
    writeln!(w, "end_header")?;
    for k in 0..obj.len() {
        let p = poses[obj.piece_id[k]].apply_point(&obj.points[k]);
        let [r, g, b] = piece_color(obj.piece_id[k]);
        writeln!(w, "{:?} {:?} {:?} {r} {g} {b} {}", p.x, p.y, p.z, obj.labels[k] as u8)?;
    }
    Ok(())
}

pub fn export_ply(obj: &PointCloudObject, poses: &[RigidTransform<f64>], path: &Path) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    write_ply(&mut w, obj, poses)?;
    w.flush()?;
    Ok(())
}

/// One line per piece: `piece_id qw qx qy qz tx ty tz`.
pub fn write_poses<W: Write>(w: &mut W, poses: &[RigidTransform<f64>]) -> Result<()> {
    for (i, p) in poses.iter().enumerate() {
        let q = p.quaternion();
        let t = p.translation();
        writeln!(w, "{i} {:?} {:?} {:?} {:?} {:?} {:?} {:?}", q[0], q[1], q[2], q[3], t.x, t.y, t.z)?;
    }
    Ok(())
}

pub fn save_poses(path: &Path, poses: &[RigidTransform<f64>]) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    write_poses(&mut w, poses)?;
    w.flush()?;
    Ok(())
}

pub fn read_poses<R: BufRead>(r: R) -> Result<Vec<RigidTransform<f64>>> {
    let mut out: Vec<(usize, RigidTransform<f64>)> = Vec::new();
    for (lineno, line) in r.lines().enumerate() {
        let line = line?;
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let fields: Vec<&str> = line.split_whitespace().collect();
        let bad = || Error::InvalidArgument(format!("pose line {}: expected `id qw qx qy qz tx ty tz`", lineno + 1));
        if fields.len() != 8 {
            return Err(bad());
        }
        let id: usize = fields[0].parse().map_err(|_| bad())?;
        let mut v = [0.0; 7];
        for (dst, s) in v.iter_mut().zip(&fields[1..]) {
            *dst = s.parse().map_err(|_| bad())?;
        }
        let pose = RigidTransform::from_quaternion([v[0], v[1], v[2], v[3]], Vector3::new(v[4], v[5], v[6]))?;
        out.push((id, pose));
    }
    out.sort_by_key(|(id, _)| *id);
    for (k, (id, _)) in out.iter().enumerate() {
        if *id != k {
            return Err(Error::Invariant(format!("pose ids are not 0..{}", out.len())));
        }
    }
    Ok(out.into_iter().map(|(_, p)| p).collect())
}

pub fn load_poses(path: &Path) -> Result<Vec<RigidTransform<f64>>> {
    read_poses(BufReader::new(File::open(path)?))
}

/// Matching dump for one object: affinity, soft and hard matchings over its
/// fracture points.
#[derive(Clone, Debug, PartialEq)]
pub struct MatchSidecar {
    /// Global point indices of the rows/columns.
    pub fracture: Vec<usize>,
    /// Row-major `n × n`.
    pub affinity: Vec<f64>,
    pub soft: Vec<f64>,
    /// `perm[r]` is the column matched to row `r`.
    pub perm: Vec<usize>,
}

pub fn write_match_sidecar<W: Write>(w: &mut W, s: &MatchSidecar) -> Result<()> {
    let n = s.fracture.len();
    if s.affinity.len() != n * n || s.soft.len() != n * n || s.perm.len() != n {
        return Err(Error::InvalidArgument("sidecar arrays disagree with n".into()));
    }
    w.write_all(&MATCH_MAGIC)?;
    w.write_all(&MATCH_VERSION.to_le_bytes())?;
    w.write_all(&to_u32(n, "n")?.to_le_bytes())?;
    for &i in &s.fracture {
        w.write_all(&to_u32(i, "index")?.to_le_bytes())?;
    }
    for v in s.affinity.iter().chain(&s.soft) {
        w.write_all(&v.to_le_bytes())?;
    }
    for &p in &s.perm {
        w.write_all(&to_u32(p, "perm")?.to_le_bytes())?;
    }
    Ok(())
}

pub fn read_match_sidecar<R: Read>(r: &mut R) -> Result<MatchSidecar> {
    let mut r = Reader { inner: r };
    let magic = r.bytes::<4>("header")?;
    if magic != MATCH_MAGIC {
        return Err(Error::BadMagic { expected: MATCH_MAGIC, found: magic });
    }
    let version = r.u32("header")?;
    if version != MATCH_VERSION {
        return Err(Error::UnsupportedVersion(version));
    }
    let n = r.u32("header")? as usize;
    let fracture = (0..n).map(|_| r.u32("indices").map(|v| v as usize)).collect::<Result<Vec<_>>>()?;
    let affinity = (0..n * n).map(|_| r.f64("affinity")).collect::<Result<Vec<_>>>()?;
    let soft = (0..n * n).map(|_| r.f64("soft matching")).collect::<Result<Vec<_>>>()?;
    let perm = (0..n).map(|_| r.u32("permutation").map(|v| v as usize)).collect::<Result<Vec<_>>>()?;
    Ok(MatchSidecar { fracture, affinity, soft, perm })
}
