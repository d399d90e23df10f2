//! Pose errors, part accuracy and evaluation reports.
//!
//! Predicted and ground-truth poses are both expressed relative to the anchor
//! (largest) piece before comparison: piece `i` is scored on `T_a⁻¹ ∘ T_i`.
//! A common rigid transform applied to all ground-truth poses, or to all
//! predicted poses, therefore leaves every metric unchanged.

use std::collections::BTreeMap;
use std::io::Write;
use std::path::Path;

use nalgebra::{Matrix3, Vector3};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::align::{assemble, assemble_with_oracle, AlignConfig};
use crate::error::{Error, Result};
use crate::geom::{chamfer, euler_from_rotation, wrap_degrees, RigidTransform};
use crate::scalar::Real;
use crate::matching::matching_accuracy;
use crate::net::Network;
use crate::synth::PointCloudObject;

/// Chamfer distance below which a piece counts as correctly placed.
pub const PA_THRESHOLD: f64 = 0.01;
pub const HIST_BINS: usize = 20;

pub fn mae_rmse<T: Real>(diffs: &[T]) -> (T, T) {
    if diffs.is_empty() {
        return (T::zero(), T::zero());
    }
    let n = T::from_usize_lossy(diffs.len());
    let mut abs = T::zero();
    let mut sq = T::zero();
    for &d in diffs {
        abs += d.abs();
        sq += d * d;
    }
    (abs / n, (sq / n).sqrt())
}

/// Per-angle differences of intrinsic XYZ Euler angles (degrees), each wrapped
/// to `(−180, 180]`.
pub fn euler_diffs<T: Real>(pred: &Matrix3<T>, gt: &Matrix3<T>) -> [T; 3] {
    let a = euler_from_rotation(pred).as_array();
    let b = euler_from_rotation(gt).as_array();
    [wrap_degrees(a[0] - b[0]), wrap_degrees(a[1] - b[1]), wrap_degrees(a[2] - b[2])]
}

/// `(MAE, RMSE)` in degrees over the three Euler angles.
pub fn rotation_errors<T: Real>(pred: &Matrix3<T>, gt: &Matrix3<T>) -> (T, T) {
    mae_rmse(&euler_diffs(pred, gt))
}

/// `(MAE, RMSE)` over the three translation components.
pub fn translation_errors<T: Real>(pred: &Vector3<T>, gt: &Vector3<T>) -> (T, T) {
    let d = pred - gt;
    mae_rmse(&[d.x, d.y, d.z])
}

/// Relative poses `T_a⁻¹ ∘ T_i` for all pieces.
pub fn relative_to_anchor<T: Real>(poses: &[RigidTransform<T>], anchor: usize) -> Vec<RigidTransform<T>> {
    let inv = poses[anchor].inverse();
    poses.iter().map(|p| inv.compose(p)).collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PieceMetrics {
    pub piece: usize,
    pub mae_r: f64,
    pub rmse_r: f64,
    pub mae_t: f64,
    pub rmse_t: f64,
    pub chamfer: f64,
    pub correct: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ObjectMetrics {
    pub object: usize,
    pub n_pieces: usize,
    pub anchor: usize,
    pub mae_r: f64,
    pub rmse_r: f64,
    pub mae_t: f64,
    pub rmse_t: f64,
    /// Fraction of all pieces placed correctly (the anchor always is).
    pub pa: f64,
    /// Same over the non-anchor pieces only; `None` for one-piece objects.
    pub pa_free: Option<f64>,
    pub pieces: Vec<PieceMetrics>,
    pub seg_f1: Option<f64>,
    pub match_accuracy: Option<f64>,
    pub self_match: Option<f64>,
}

/// Scores predicted poses (each mapping a scattered piece into a common frame)
/// against `obj.gt_pose`. Errors are averaged over all pieces of the object.
pub fn evaluate_poses(object: usize, obj: &PointCloudObject, pred: &[RigidTransform<f64>]) -> Result<ObjectMetrics> {
    if pred.len() != obj.n_pieces {
        return Err(Error::Shape { op: "evaluate", detail: format!("{} poses for {} pieces", pred.len(), obj.n_pieces) });
    }
    let anchor = obj.largest_piece();
    let rel_pred = relative_to_anchor(pred, anchor);
    let rel_gt = relative_to_anchor(&obj.gt_pose, anchor);
    let pieces = (0..obj.n_pieces)
        .map(|i| {
            let (mae_r, rmse_r) = rotation_errors(rel_pred[i].rotation(), rel_gt[i].rotation());
            let (mae_t, rmse_t) = translation_errors(rel_pred[i].translation(), rel_gt[i].translation());
            let pts = obj.piece_points(i);
            let cd = chamfer(&rel_pred[i].apply(&pts), &rel_gt[i].apply(&pts))?;
            Ok(PieceMetrics { piece: i, mae_r, rmse_r, mae_t, rmse_t, chamfer: cd, correct: cd < PA_THRESHOLD })
        })
        .collect::<Result<Vec<_>>>()?;
    let n = pieces.len() as f64;
    let mean = |f: fn(&PieceMetrics) -> f64| pieces.iter().map(f).sum::<f64>() / n;
    let free: Vec<&PieceMetrics> = pieces.iter().filter(|p| p.piece != anchor).collect();
    let pa_free = (!free.is_empty()).then(|| free.iter().filter(|p| p.correct).count() as f64 / free.len() as f64);
    Ok(ObjectMetrics {
        object,
        n_pieces: obj.n_pieces,
        anchor,
        mae_r: mean(|p| p.mae_r),
        rmse_r: mean(|p| p.rmse_r),
        mae_t: mean(|p| p.mae_t),
        rmse_t: mean(|p| p.rmse_t),
        pa: pieces.iter().filter(|p| p.correct).count() as f64 / n,
        pa_free,
        pieces,
        seg_f1: None,
        match_accuracy: None,
        self_match: None,
    })
}

/// F1 of the predicted fracture mask; `None` when both masks are empty.
pub fn f1_score(pred: &[bool], truth: &[bool]) -> Option<f64> {
    let (mut tp, mut fp, mut fneg) = (0usize, 0usize, 0usize);
    for (&p, &t) in pred.iter().zip(truth) {
        match (p, t) {
            (true, true) => tp += 1,
            (true, false) => fp += 1,
            (false, true) => fneg += 1,
            _ => {}
        }
    }
    if tp + fp + fneg == 0 {
        return None;
    }
    Some(2.0 * tp as f64 / (2 * tp + fp + fneg) as f64)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Histogram {
    pub metric: String,
    pub lo: f64,
    pub hi: f64,
    pub counts: Vec<usize>,
}

impl Histogram {
    /// `HIST_BINS` uniform bins over `[lo, hi]`; values outside are clamped
    /// into the end bins.
    pub fn new(metric: &str, values: &[f64], lo: f64, hi: f64) -> Self {
        let mut counts = vec![0; HIST_BINS];
        let width = (hi - lo) / HIST_BINS as f64;
        for &v in values {
            let b = if width > 0.0 { ((v - lo) / width).floor() } else { 0.0 };
            let b = if b.is_finite() { b.clamp(0.0, (HIST_BINS - 1) as f64) as usize } else { HIST_BINS - 1 };
            counts[b] += 1;
        }
        Self { metric: metric.to_string(), lo, hi, counts }
    }
}

/// Aggregates: unweighted means over objects.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub n_objects: usize,
    pub mae_r: f64,
    pub rmse_r: f64,
    pub mae_t: f64,
    pub rmse_t: f64,
    pub pa: f64,
    pub pa_free: Option<f64>,
    pub seg_f1: Option<f64>,
    pub match_accuracy: Option<f64>,
    pub self_match: Option<f64>,
}

fn mean_opt(values: impl Iterator<Item = Option<f64>>) -> Option<f64> {
    let v: Vec<f64> = values.flatten().collect();
    (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64)
}

impl Summary {
    pub fn of(objects: &[&ObjectMetrics]) -> Self {
        let n = objects.len();
        if n == 0 {
            return Self::default();
        }
        let mean = |f: fn(&ObjectMetrics) -> f64| objects.iter().map(|o| f(o)).sum::<f64>() / n as f64;
        Self {
            n_objects: n,
            mae_r: mean(|o| o.mae_r),
            rmse_r: mean(|o| o.rmse_r),
            mae_t: mean(|o| o.mae_t),
            rmse_t: mean(|o| o.rmse_t),
            pa: mean(|o| o.pa),
            pa_free: mean_opt(objects.iter().map(|o| o.pa_free)),
            seg_f1: mean_opt(objects.iter().map(|o| o.seg_f1)),
            match_accuracy: mean_opt(objects.iter().map(|o| o.match_accuracy)),
            self_match: mean_opt(objects.iter().map(|o| o.self_match)),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub objects: Vec<ObjectMetrics>,
    pub overall: Summary,
    pub by_pieces: BTreeMap<usize, Summary>,
    pub histograms: Vec<Histogram>,
}

impl EvalReport {
    pub fn new(objects: Vec<ObjectMetrics>) -> Self {
        let all: Vec<&ObjectMetrics> = objects.iter().collect();
        let overall = Summary::of(&all);
        let mut groups: BTreeMap<usize, Vec<&ObjectMetrics>> = BTreeMap::new();
        for o in &objects {
            groups.entry(o.n_pieces).or_default().push(o);
        }
        let by_pieces = groups.into_iter().map(|(k, v)| (k, Summary::of(&v))).collect();
        let col = |f: fn(&ObjectMetrics) -> f64| objects.iter().map(f).collect::<Vec<f64>>();
        let max_of = |v: &[f64]| v.iter().copied().fold(0.0, f64::max);
        let (mae_t, rmse_t) = (col(|o| o.mae_t), col(|o| o.rmse_t));
        let histograms = vec![
            Histogram::new("mae_r", &col(|o| o.mae_r), 0.0, 180.0),
            Histogram::new("rmse_r", &col(|o| o.rmse_r), 0.0, 180.0),
            Histogram::new("mae_t", &mae_t, 0.0, max_of(&mae_t)),
            Histogram::new("rmse_t", &rmse_t, 0.0, max_of(&rmse_t)),
            Histogram::new("pa", &col(|o| o.pa), 0.0, 1.0),
        ];
        Self { objects, overall, by_pieces, histograms }
    }

    /// Per-object rows.
    pub fn write_report<W: Write>(&self, w: &mut W) -> Result<()> {
        writeln!(w, "object,n_pieces,anchor,mae_r,rmse_r,mae_t,rmse_t,pa,pa_free,seg_f1,match_accuracy,self_match")?;
        for o in &self.objects {
            writeln!(
                w,
                "{},{},{},{},{},{},{},{},{},{},{},{}",
                o.object,
                o.n_pieces,
                o.anchor,
                o.mae_r,
                o.rmse_r,
                o.mae_t,
                o.rmse_t,
                o.pa,
                opt(o.pa_free),
                opt(o.seg_f1),
                opt(o.match_accuracy),
                opt(o.self_match)
            )?;
        }
        Ok(())
    }

    /// One `all` row, then one row per piece count.
    pub fn write_summary<W: Write>(&self, w: &mut W) -> Result<()> {
        writeln!(w, "group,n_objects,mae_r,rmse_r,mae_t,rmse_t,pa,pa_free,seg_f1,match_accuracy,self_match")?;
        let mut row = |name: String, s: &Summary| -> Result<()> {
            writeln!(
                w,
                "{},{},{},{},{},{},{},{},{},{},{}",
                name,
                s.n_objects,
                s.mae_r,
                s.rmse_r,
                s.mae_t,
                s.rmse_t,
                s.pa,
                opt(s.pa_free),
                opt(s.seg_f1),
                opt(s.match_accuracy),
                opt(s.self_match)
            )?;
            Ok(())
        };
        row("all".into(), &self.overall)?;
        for (k, s) in &self.by_pieces {
            row(format!("pieces={k}"), s)?;
        }
        Ok(())
    }

    pub fn write_histograms<W: Write>(&self, w: &mut W) -> Result<()> {
        writeln!(w, "metric,bin,lo,hi,count")?;
        for h in &self.histograms {
            let width = (h.hi - h.lo) / HIST_BINS as f64;
            for (b, c) in h.counts.iter().enumerate() {
                writeln!(w, "{},{},{},{},{}", h.metric, b, h.lo + b as f64 * width, h.lo + (b + 1) as f64 * width, c)?;
            }
        }
        Ok(())
    }

    /// Writes `report.csv`, `summary.csv` and `histograms.csv` into `dir`.
    pub fn save(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir)?;
        let file = |name: &str| -> Result<std::io::BufWriter<std::fs::File>> {
            Ok(std::io::BufWriter::new(std::fs::File::create(dir.join(name))?))
        };
        let mut f = file(REPORT_FILE)?;
        self.write_report(&mut f)?;
        f.flush()?;
        let mut f = file(SUMMARY_FILE)?;
        self.write_summary(&mut f)?;
        f.flush()?;
        let mut f = file(HISTOGRAM_FILE)?;
        self.write_histograms(&mut f)?;
        f.flush()?;
        Ok(())
    }
}

pub const REPORT_FILE: &str = "report.csv";
pub const SUMMARY_FILE: &str = "summary.csv";
pub const HISTOGRAM_FILE: &str = "histograms.csv";

fn opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

/// Evaluates many objects in parallel; `poses[k]` belongs to `objects[k]`.
pub fn evaluate_all(objects: &[PointCloudObject], poses: &[Vec<RigidTransform<f64>>]) -> Result<EvalReport> {
    if objects.len() != poses.len() {
        return Err(Error::Shape { op: "evaluate_all", detail: format!("{} objects, {} pose sets", objects.len(), poses.len()) });
    }
    let rows = objects
        .par_iter()
        .zip(poses.par_iter())
        .enumerate()
        .map(|(k, (o, p))| evaluate_poses(k, o, p))
        .collect::<Result<Vec<_>>>()?;
    Ok(EvalReport::new(rows))
}

/// Runs the full pipeline on each object and scores it, including fracture
/// F1, Hungarian matching accuracy against the ground truth and the
/// self-match fraction of the predicted matching.
pub fn evaluate_network(objects: &[PointCloudObject], net: &Network, cfg: &AlignConfig) -> Result<EvalReport> {
    let rows = objects
        .par_iter()
        .enumerate()
        .map(|(k, o)| {
            let out = assemble(o, net, cfg)?;
            let mut m = evaluate_poses(k, o, out.poses())?;
            m.seg_f1 = f1_score(&out.fracture, &o.labels);
            if let Some(mr) = &out.matches {
                m.match_accuracy = matching_accuracy(mr, &o.gt_match);
                m.self_match = Some(mr.self_match_fraction());
            }
            Ok(m)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(EvalReport::new(rows))
}

/// Scores alignment from ground-truth correspondences (network bypassed).
pub fn evaluate_oracle(objects: &[PointCloudObject], cfg: &AlignConfig) -> Result<EvalReport> {
    let poses = objects
        .par_iter()
        .map(|o| assemble_with_oracle(o, cfg).map(|a| a.poses))
        .collect::<Result<Vec<_>>>()?;
    evaluate_all(objects, &poses)
}
