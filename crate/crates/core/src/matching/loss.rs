//! Segmentation, matching and rigidity losses.

use std::collections::HashMap;

use nalgebra::Point3;

use crate::align::weighted_kabsch;
use crate::error::{Error, Result};
use crate::tensor::{CustomOp, Graph, Tensor, Var};

/// Probabilities are clamped to `[PROB_CLAMP, 1 - PROB_CLAMP]` before logs.
pub const PROB_CLAMP: f64 = 1e-7;
/// Piece pairs whose total soft-matching weight is below this are skipped.
const MIN_PAIR_WEIGHT: f64 = 1e-6;

fn bce_terms(g: &mut Graph, p: Var, target: Tensor) -> Result<Var> {
    if g.shape(p) != target.shape() {
        return Err(Error::Shape {
            op: "binary cross-entropy",
            detail: format!("prediction {:?} vs target {:?}", g.shape(p), target.shape()),
        });
    }
    let inv: Vec<f64> = target.data().iter().map(|c| 1.0 - c).collect();
    let inv = Tensor::new(target.shape().to_vec(), inv)?;
    let c = g.constant(target)?;
    let ci = g.constant(inv)?;
    let pc = g.clamp(p, PROB_CLAMP, 1.0 - PROB_CLAMP)?;
    let lp = g.log(pc)?;
    let neg = g.scale(pc, -1.0)?;
    let om = g.add_scalar(neg, 1.0)?;
    let lq = g.log(om)?;
    let a = g.mul(c, lp)?;
    let b = g.mul(ci, lq)?;
    let s = g.add(a, b)?;
    g.sum(s)
}

/// `-(1/N) Σ c log c̃ + (1-c) log(1-c̃)` for confidences of any shape with `N` entries.
pub fn loss_seg(g: &mut Graph, conf: Var, labels: &[bool]) -> Result<Var> {
    let n = g.value(conf).len();
    if labels.len() != n {
        return Err(Error::Shape { op: "loss_seg", detail: format!("{n} confidences, {} labels", labels.len()) });
    }
    let target = Tensor::new(g.shape(conf).to_vec(), labels.iter().map(|&l| l as u8 as f64).collect())?;
    let s = bce_terms(g, conf, target)?;
    g.scale(s, -1.0 / n.max(1) as f64)
}

/// Dense `n × n` ground-truth matrix over `fracture` (global indices) from directed pairs.
/// Pairs touching points outside `fracture` are ignored.
pub fn gt_matrix(fracture: &[usize], gt_match: &[(usize, usize)]) -> Vec<f64> {
    let n = fracture.len();
    let row: HashMap<usize, usize> = fracture.iter().enumerate().map(|(r, &i)| (i, r)).collect();
    let mut out = vec![0.0; n * n];
    for (i, j) in gt_match {
        if let (Some(&r), Some(&c)) = (row.get(i), row.get(j)) {
            out[r * n + c] = 1.0;
        }
    }
    out
}

/// `-(1/N̂) Σ_ij x_gt log x̃ + (1-x_gt) log(1-x̃)`, normalized by `N̂` (not `N̂²`).
pub fn loss_mat(g: &mut Graph, soft: Var, gt: &[f64]) -> Result<Var> {
    let shape = g.shape(soft).to_vec();
    if shape.len() != 2 || shape[0] != shape[1] || gt.len() != shape[0] * shape[1] {
        return Err(Error::Shape { op: "loss_mat", detail: format!("soft {shape:?}, gt has {} entries", gt.len()) });
    }
    let s = bce_terms(g, soft, Tensor::new(shape.clone(), gt.to_vec())?)?;
    g.scale(s, -1.0 / shape[0].max(1) as f64)
}

/// Per-row Euclidean norm `[r, c] → [r, 1]`, with a zero subgradient at zero rows.
struct RowNorm;

impl CustomOp for RowNorm {
    fn name(&self) -> &'static str {
        "row_norms"
    }

    fn backward(&self, inputs: &[&Tensor], output: &Tensor, grad_out: &[f64]) -> Result<Vec<Option<Vec<f64>>>> {
        let x = inputs[0];
        let c = x.cols();
        let mut g = vec![0.0; x.len()];
        for (r, row) in x.data().chunks(c).enumerate() {
            let n = output.data()[r];
            if n > 0.0 {
                for k in 0..c {
                    g[r * c + k] = grad_out[r] * row[k] / n;
                }
            }
        }
        Ok(vec![Some(g)])
    }
}

pub fn row_norms(g: &mut Graph, a: Var) -> Result<Var> {
    let t = g.value(a);
    if t.rank() != 2 {
        return Err(Error::Shape { op: "row_norms", detail: format!("{:?}", t.shape()) });
    }
    let c = t.cols();
    let out: Vec<f64> = t.data().chunks(c).map(|r| r.iter().map(|v| v * v).sum::<f64>().sqrt()).collect();
    let rows = out.len();
    let out = Tensor::matrix(rows, 1, out)?;
    g.custom(Box::new(RowNorm), &[a], out)
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct RigidityStats {
    pub pairs_used: usize,
    pub pairs_skipped_weight: usize,
    pub pairs_skipped_degenerate: usize,
}

/// Rigidity loss `Σ_{i≠j} Σ_p w_p ‖R̃ p + t̃ − p'‖` over ordered piece pairs.
///
/// `local[r]` is the position of fracture row `r` in its own piece's frame and
/// `piece[r]` its piece. For each pair the target `p'` is the `X̃_ij`-weighted
/// average of the other piece's fracture points and `w_p` the row mass of
/// `X̃_ij`. `(R̃, t̃)` is the weighted Kabsch fit, treated as a constant.
pub fn rigidity_loss(
    g: &mut Graph,
    soft: Var,
    local: &[Point3<f64>],
    piece: &[usize],
) -> Result<(Var, RigidityStats)> {
    let n = local.len();
    let shape = g.shape(soft).to_vec();
    if shape != [n, n] || piece.len() != n {
        return Err(Error::Shape {
            op: "rigidity",
            detail: format!("soft {shape:?} for {n} points and {} piece ids", piece.len()),
        });
    }
    let n_pieces = piece.iter().copied().max().map_or(0, |m| m + 1);
    let mut rows_of: Vec<Vec<usize>> = vec![Vec::new(); n_pieces];
    for (r, &p) in piece.iter().enumerate() {
        rows_of[p].push(r);
    }
    let mut stats = RigidityStats::default();
    let mut total: Option<Var> = None;
    for a in 0..n_pieces {
        if rows_of[a].is_empty() {
            continue;
        }
        let mut block_rows: Option<Var> = None;
        for b in 0..n_pieces {
            if a == b || rows_of[b].is_empty() {
                continue;
            }
            let (ra, rb) = (&rows_of[a], &rows_of[b]);
            let sv = g.value(soft);
            let weights: Vec<f64> =
                ra.iter().map(|&r| rb.iter().map(|&c| sv.at(r, c)).sum::<f64>()).collect();
            if weights.iter().sum::<f64>() <= MIN_PAIR_WEIGHT {
                stats.pairs_skipped_weight += 1;
                continue;
            }
            let rows_t = match block_rows {
                Some(v) => v,
                None => {
                    let rows = g.gather_rows(soft, ra)?;
                    let t = g.transpose(rows)?;
                    block_rows = Some(t);
                    t
                }
            };
            let bt = g.gather_rows(rows_t, rb)?;
            let block = g.transpose(bt)?;
            let w = g.sum_lastdim(block)?;
            let qb: Vec<f64> = rb.iter().flat_map(|&c| [local[c].x, local[c].y, local[c].z]).collect();
            let qb = g.constant(Tensor::matrix(rb.len(), 3, qb)?)?;
            let num = g.matmul(block, qb)?;
            // Rows with no mass in this block (hard matches elsewhere) get weight
            // zero below; dividing by one keeps their target finite.
            let wv = g.value(w);
            let fix: Vec<f64> = wv.data().iter().map(|&x| if x > 0.0 { 0.0 } else { 1.0 }).collect();
            let fix = g.constant(Tensor::matrix(ra.len(), 1, fix)?)?;
            let denom = g.add(w, fix)?;
            let target = g.div(num, denom)?;
            let tv = g.value(target);
            let dst: Vec<Point3<f64>> = (0..ra.len()).map(|k| Point3::new(tv.at(k, 0), tv.at(k, 1), tv.at(k, 2))).collect();
            let src: Vec<Point3<f64>> = ra.iter().map(|&r| local[r]).collect();
            let fit = match weighted_kabsch(&src, &dst, &weights) {
                Ok(t) => t,
                Err(e) => {
                    log::debug!("rigidity: skipping pair ({a}, {b}): {e}");
                    stats.pairs_skipped_degenerate += 1;
                    continue;
                }
            };
            let moved: Vec<f64> = src
                .iter()
                .flat_map(|p| {
                    let q = fit.apply_point(p);
                    [q.x, q.y, q.z]
                })
                .collect();
            let moved = g.constant(Tensor::matrix(ra.len(), 3, moved)?)?;
            let resid = g.sub(moved, target)?;
            let norms = row_norms(g, resid)?;
            let weighted = g.mul(norms, w)?;
            let r_ab = g.sum(weighted)?;
            total = Some(match total {
                Some(t) => g.add(t, r_ab)?,
                None => r_ab,
            });
            stats.pairs_used += 1;
        }
    }
    let total = match total {
        Some(t) => t,
        None => g.constant(Tensor::scalar(0.0))?,
    };
    Ok((total, stats))
}
