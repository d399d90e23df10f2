//! The learned front end.
//!
//! Per piece: a two-layer k-NN grouping encoder, then one vector self-attention
//! layer over the same neighborhoods. Over the whole object: multi-head
//! cross-attention with a feed-forward block. Heads: a fracture-confidence
//! head on every point and a primal/dual descriptor head on fracture points.
//!
//! Edge features are rotation-invariant scalars of each neighborhood (offset
//! length, projections on the normals and on the direction from the piece
//! centroid, distances to that centroid), so they do not depend on the random
//! pose a piece arrives in and can be compared across pieces.

use nalgebra::{Matrix3, Point3, SymmetricEigen, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geom::{centroid, KnnIndex};
use crate::matching::{affinity_logits, sinkhorn_from_log, MatchResult, DEFAULT_ITERS, DEFAULT_TAU};
use crate::synth::PointCloudObject;
use crate::tensor::{Graph, ParamId, ParamStore, Tensor, Var};

/// Epsilon added to descriptor norms before normalizing.
pub const DESCRIPTOR_EPS: f64 = 1e-12;
/// Scale applied to neighbor offsets (object diameter is 0.8, k-NN radii a few hundredths).
const OFFSET_SCALE: f64 = 10.0;
/// Scale applied to distances from the piece centroid.
const COORD_SCALE: f64 = 2.5;
/// Channels of the first grouping layer's edge input.
pub const EDGE_CHANNELS: usize = 12;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NetConfig {
    /// Feature width `D`.
    pub d_model: usize,
    /// Descriptor width `d` (each of primal and dual).
    pub d_desc: usize,
    pub heads: usize,
    pub head_dim: usize,
    /// Cross-attention feed-forward inner width.
    pub ffn_dim: usize,
    /// Neighborhood size.
    pub k: usize,
    /// Affinity temperature.
    pub tau: f64,
    pub sinkhorn_iters: usize,
}

impl Default for NetConfig {
    fn default() -> Self {
        Self {
            d_model: 32,
            d_desc: 64,
            heads: 4,
            head_dim: 8,
            ffn_dim: 64,
            k: 16,
            tau: DEFAULT_TAU,
            sinkhorn_iters: DEFAULT_ITERS,
        }
    }
}

impl NetConfig {
    pub fn validate(&self) -> Result<()> {
        if self.heads * self.head_dim != self.d_model {
            return Err(Error::Config(format!(
                "heads ({}) x head_dim ({}) must equal d_model ({})",
                self.heads, self.head_dim, self.d_model
            )));
        }
        if self.d_model < 2 || self.d_desc == 0 || self.ffn_dim == 0 || self.k == 0 {
            return Err(Error::Config("network widths and k must be positive (d_model >= 2)".into()));
        }
        if !(self.tau > 0.0) {
            return Err(Error::Config(format!("tau must be positive, got {}", self.tau)));
        }
        Ok(())
    }

    /// Scalars echoed into checkpoints for shape validation on load.
    pub fn echo(&self) -> Vec<(String, Tensor)> {
        let v = |x: f64| Tensor::scalar(x);
        vec![
            ("config.d_model".into(), v(self.d_model as f64)),
            ("config.d_desc".into(), v(self.d_desc as f64)),
            ("config.heads".into(), v(self.heads as f64)),
            ("config.head_dim".into(), v(self.head_dim as f64)),
            ("config.ffn_dim".into(), v(self.ffn_dim as f64)),
            ("config.k".into(), v(self.k as f64)),
            ("config.tau".into(), v(self.tau)),
            ("config.sinkhorn_iters".into(), v(self.sinkhorn_iters as f64)),
        ]
    }

    pub fn from_echo(entries: &[(String, Tensor)]) -> Result<Self> {
        let get = |name: &str| -> Result<f64> {
            entries
                .iter()
                .find(|(n, _)| n == name)
                .map(|(_, t)| t.item())
                .ok_or_else(|| Error::Config(format!("checkpoint lacks `{name}`")))
        };
        let cfg = Self {
            d_model: get("config.d_model")? as usize,
            d_desc: get("config.d_desc")? as usize,
            heads: get("config.heads")? as usize,
            head_dim: get("config.head_dim")? as usize,
            ffn_dim: get("config.ffn_dim")? as usize,
            k: get("config.k")? as usize,
            tau: get("config.tau")?,
            sinkhorn_iters: get("config.sinkhorn_iters")? as usize,
        };
        cfg.validate()?;
        Ok(cfg)
    }
}

/// Geometry of one piece prepared for the network (all constants).
#[derive(Clone, Debug)]
pub struct PiecePrep {
    /// Global indices of the piece's points.
    pub indices: Vec<usize>,
    /// Neighbor list, `k` local indices per point (self first).
    pub neighbors: Vec<usize>,
    /// `[n·k, EDGE_CHANNELS]`.
    pub edge_features: Tensor,
    /// `[n·k, 4]`: scaled offset `q − p` projected on the two normals and the
    /// radial direction of `p`, then its length.
    pub offsets: Tensor,
}

/// Network input for one object.
#[derive(Clone, Debug)]
pub struct ObjectPrep {
    pub n_points: usize,
    pub k: usize,
    pub pieces: Vec<PiecePrep>,
    /// Row of each global point in the piece-major concatenation.
    pub order: Vec<usize>,
}

/// Centered coordinates of `pts` in their principal-axes frame. Axis signs are
/// fixed by the sign of the third moment along each axis; the third axis
/// completes a right-handed frame.
pub fn principal_frame(pts: &[Point3<f64>]) -> Result<Vec<Vector3<f64>>> {
    let c = centroid(pts).ok_or(Error::Empty("piece"))?;
    let centered: Vec<Vector3<f64>> = pts.iter().map(|p| p - c).collect();
    let mut cov = Matrix3::zeros();
    for v in &centered {
        cov += v * v.transpose();
    }
    let eig = SymmetricEigen::new(cov);
    let mut order = [0usize, 1, 2];
    order.sort_by(|&a, &b| eig.eigenvalues[b].partial_cmp(&eig.eigenvalues[a]).unwrap_or(std::cmp::Ordering::Equal));
    let mut axes: Vec<Vector3<f64>> = order.iter().map(|&i| eig.eigenvectors.column(i).into_owned()).collect();
    for axis in axes.iter_mut().take(2) {
        let skew: f64 = centered.iter().map(|v| v.dot(axis).powi(3)).sum();
        if skew < 0.0 {
            *axis = -*axis;
        }
    }
    axes[2] = axes[0].cross(&axes[1]);
    Ok(centered.iter().map(|v| Vector3::new(v.dot(&axes[0]), v.dot(&axes[1]), v.dot(&axes[2]))).collect())
}

/// Unit normal (smallest principal direction of the neighborhood), oriented
/// away from the piece center, and the surface variation `λ_min / Σλ`.
fn local_normal(local: &[Vector3<f64>], nbrs: &[usize], at: &Vector3<f64>) -> (Vector3<f64>, f64) {
    let mut mean = Vector3::zeros();
    for &q in nbrs {
        mean += local[q];
    }
    mean /= nbrs.len() as f64;
    let mut cov = Matrix3::zeros();
    for &q in nbrs {
        let d = local[q] - mean;
        cov += d * d.transpose();
    }
    let eig = SymmetricEigen::new(cov);
    let mut imin = 0;
    for i in 1..3 {
        if eig.eigenvalues[i] < eig.eigenvalues[imin] {
            imin = i;
        }
    }
    let mut n: Vector3<f64> = eig.eigenvectors.column(imin).into_owned();
    if n.dot(at) < 0.0 {
        n = -n;
    }
    let total: f64 = eig.eigenvalues.iter().map(|v| v.max(0.0)).sum();
    let variation = if total > 0.0 { eig.eigenvalues[imin].max(0.0) / total } else { 0.0 };
    (n, variation)
}

fn prepare_piece(indices: Vec<usize>, pts: &[Point3<f64>], k: usize) -> Result<PiecePrep> {
    let n = pts.len();
    let local = principal_frame(pts)?;
    let as_points: Vec<Point3<f64>> = local.iter().map(|v| Point3::from(*v)).collect();
    let index = KnnIndex::new(&as_points)?;
    let mut neighbors = Vec::with_capacity(n * k);
    for p in &as_points {
        let found = index.query(p, k)?;
        // Fewer than k points: cycle through the nearest ones.
        for j in 0..k {
            neighbors.push(found[j % found.len()].index);
        }
    }
    let mut normals = Vec::with_capacity(n);
    let mut variation = Vec::with_capacity(n);
    for p in 0..n {
        let (nv, var) = local_normal(&local, &neighbors[p * k..(p + 1) * k], &local[p]);
        normals.push(nv);
        variation.push(var);
    }
    let radial_dir: Vec<Vector3<f64>> =
        local.iter().map(|v| if v.norm() > 0.0 { v.normalize() } else { Vector3::zeros() }).collect();
    let mut edge = Vec::with_capacity(n * k * EDGE_CHANNELS);
    let mut offs = Vec::with_capacity(n * k * 4);
    for p in 0..n {
        for &q in &neighbors[p * k..(p + 1) * k] {
            let o = (local[q] - local[p]) * OFFSET_SCALE;
            let len = o.norm();
            let (np, nq) = (normals[p], normals[q]);
            edge.extend_from_slice(&[
                len,
                o.dot(&np),
                o.dot(&nq),
                np.dot(&nq),
                np.cross(&nq).dot(&o),
                o.dot(&radial_dir[p]),
                local[p].norm() * COORD_SCALE,
                local[q].norm() * COORD_SCALE,
                radial_dir[p].dot(&np),
                radial_dir[q].dot(&nq),
                10.0 * variation[p],
                10.0 * variation[q],
            ]);
            offs.extend_from_slice(&[o.dot(&np), o.dot(&nq), o.dot(&radial_dir[p]), len]);
        }
    }
    Ok(PiecePrep {
        indices,
        neighbors,
        edge_features: Tensor::matrix(n * k, EDGE_CHANNELS, edge)?,
        offsets: Tensor::matrix(n * k, 4, offs)?,
    })
}

/// Splits an object into pieces and builds the constant network inputs.
pub fn prepare(points: &[Point3<f64>], piece_id: &[usize], n_pieces: usize, k: usize) -> Result<ObjectPrep> {
    if points.len() != piece_id.len() {
        return Err(Error::Shape { op: "prepare", detail: format!("{} points, {} ids", points.len(), piece_id.len()) });
    }
    let mut groups: Vec<Vec<usize>> = vec![Vec::new(); n_pieces];
    for (i, &p) in piece_id.iter().enumerate() {
        if p >= n_pieces {
            return Err(Error::InvalidArgument(format!("piece id {p} >= {n_pieces}")));
        }
        groups[p].push(i);
    }
    let mut order = vec![0; points.len()];
    let mut row = 0;
    let mut pieces = Vec::with_capacity(n_pieces);
    for (p, idx) in groups.into_iter().enumerate() {
        if idx.is_empty() {
            return Err(Error::InvalidArgument(format!("piece {p} is empty")));
        }
        for &i in &idx {
            order[i] = row;
            row += 1;
        }
        let pts: Vec<Point3<f64>> = idx.iter().map(|&i| points[i]).collect();
        pieces.push(prepare_piece(idx, &pts, k)?);
    }
    Ok(ObjectPrep { n_points: points.len(), k, pieces, order })
}

pub fn prepare_object(obj: &PointCloudObject, k: usize) -> Result<ObjectPrep> {
    prepare(&obj.points, &obj.piece_id, obj.n_pieces, k)
}

#[derive(Clone, Copy, Debug)]
struct Linear {
    w: ParamId,
    b: Option<ParamId>,
}

#[derive(Clone, Debug)]
struct Ids {
    g1: [Linear; 2],
    g2: [Linear; 2],
    g_out: Linear,
    wq: ParamId,
    wk: ParamId,
    wv: ParamId,
    pos: [Linear; 2],
    attn: [Linear; 2],
    mq: ParamId,
    mk: ParamId,
    mv: ParamId,
    mo: ParamId,
    ffn: [Linear; 2],
    ln_gamma: ParamId,
    ln_beta: ParamId,
    seg: [Linear; 2],
    aff: [Linear; 2],
    affinity: ParamId,
}

/// Parameters plus the configuration that shaped them.
#[derive(Clone, Debug)]
pub struct Network {
    pub cfg: NetConfig,
    pub store: ParamStore,
    ids: Ids,
}

/// Result of the per-point forward pass.
#[derive(Clone, Copy, Debug)]
pub struct Forward {
    /// `[N, D]` cross-attended features in global point order.
    pub features: Var,
    /// `[N, 1]` fracture confidence in global point order.
    pub confidence: Var,
}

/// Output of [`Network::infer`].
#[derive(Clone, Debug)]
pub struct Inference {
    pub confidence: Vec<f64>,
    /// `None` when fewer than one point is predicted as fracture.
    pub matches: Option<MatchResult>,
}

struct Builder<'a, R: Rng> {
    store: &'a mut ParamStore,
    rng: &'a mut R,
}

impl<R: Rng> Builder<'_, R> {
    fn weight(&mut self, name: &str, fan_in: usize, fan_out: usize) -> Result<ParamId> {
        let bound = (6.0 / (fan_in + fan_out) as f64).sqrt();
        let data = (0..fan_in * fan_out).map(|_| self.rng.random_range(-bound..bound)).collect();
        self.store.add(name, Tensor::matrix(fan_in, fan_out, data)?)
    }

    fn linear(&mut self, name: &str, fan_in: usize, fan_out: usize, bias: bool) -> Result<Linear> {
        let w = self.weight(&format!("{name}.w"), fan_in, fan_out)?;
        let b = if bias { Some(self.store.add(format!("{name}.b"), Tensor::zeros(&[fan_out]))?) } else { None };
        Ok(Linear { w, b })
    }
}

impl Network {
    pub fn new(cfg: NetConfig, seed: u64) -> Result<Self> {
        cfg.validate()?;
        let mut store = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut b = Builder { store: &mut store, rng: &mut rng };
        let (d, dd, f) = (cfg.d_model, cfg.d_desc, cfg.ffn_dim);
        let ids = Ids {
            g1: [b.linear("backbone.g1.0", EDGE_CHANNELS, d, true)?, b.linear("backbone.g1.1", d, d, true)?],
            g2: [b.linear("backbone.g2.0", d + 4, d, true)?, b.linear("backbone.g2.1", d, d, true)?],
            g_out: b.linear("backbone.out", d, d, true)?,
            wq: b.weight("self.wq", d, d)?,
            wk: b.weight("self.wk", d, d)?,
            wv: b.weight("self.wv", d, d)?,
            pos: [b.linear("self.pos.0", 4, d, true)?, b.linear("self.pos.1", d, d, true)?],
            attn: [b.linear("self.mlp.0", d, d, true)?, b.linear("self.mlp.1", d, d, true)?],
            mq: b.weight("cross.wq", d, d)?,
            mk: b.weight("cross.wk", d, d)?,
            mv: b.weight("cross.wv", d, d)?,
            mo: b.weight("cross.wo", d, d)?,
            ffn: [b.linear("cross.ffn.0", d, f, true)?, b.linear("cross.ffn.1", f, d, true)?],
            ln_gamma: b.store.add("cross.ln.gamma", Tensor::full(&[d], 1.0))?,
            ln_beta: b.store.add("cross.ln.beta", Tensor::zeros(&[d]))?,
            seg: [b.linear("seg.0", d, (d / 2).max(1), true)?, b.linear("seg.1", (d / 2).max(1), 1, true)?],
            aff: [b.linear("desc.0", d, d, true)?, b.linear("desc.1", d, 2 * dd, true)?],
            affinity: {
                let mut a = Tensor::eye(dd);
                for v in a.data_mut() {
                    *v += b.rng.random_range(-0.01..0.01);
                }
                b.store.add("affinity.A", a)?
            },
        };
        Ok(Self { cfg, store, ids })
    }

    /// Rebuilds a network from checkpoint entries (parameters plus config echo).
    pub fn from_checkpoint(entries: &[(String, Tensor)]) -> Result<Self> {
        let cfg = NetConfig::from_echo(entries)?;
        let mut net = Self::new(cfg, 0)?;
        for p in net.store.iter_mut() {
            let (_, t) = entries
                .iter()
                .find(|(n, _)| *n == p.name)
                .ok_or_else(|| Error::Config(format!("checkpoint lacks parameter `{}`", p.name)))?;
            if t.shape() != p.value.shape() {
                return Err(Error::Shape {
                    op: "load checkpoint",
                    detail: format!("`{}` is {:?}, expected {:?}", p.name, t.shape(), p.value.shape()),
                });
            }
            p.value = t.clone();
        }
        Ok(net)
    }

    pub fn save(&self, path: &std::path::Path) -> Result<()> {
        crate::tensor::save_checkpoint(path, &self.store, &self.cfg.echo())
    }

    pub fn load(path: &std::path::Path) -> Result<Self> {
        Self::from_checkpoint(&crate::tensor::load_checkpoint(path)?)
    }

    fn p(&self, g: &mut Graph, id: ParamId) -> Result<Var> {
        g.param(&self.store, id)
    }

    fn linear(&self, g: &mut Graph, x: Var, l: Linear) -> Result<Var> {
        let w = self.p(g, l.w)?;
        let y = g.matmul(x, w)?;
        match l.b {
            Some(b) => {
                let b = self.p(g, b)?;
                g.add(y, b)
            }
            None => Ok(y),
        }
    }

    fn mlp2(&self, g: &mut Graph, x: Var, layers: [Linear; 2], relu_out: bool) -> Result<Var> {
        let h = self.linear(g, x, layers[0])?;
        let h = g.relu(h)?;
        let y = self.linear(g, h, layers[1])?;
        if relu_out {
            g.relu(y)
        } else {
            Ok(y)
        }
    }

    /// Two stacked grouping layers: per-point features `[n, D]`.
    pub fn backbone(&self, g: &mut Graph, piece: &PiecePrep, k: usize) -> Result<Var> {
        let n = piece.indices.len();
        if n == 0 {
            return Err(Error::Empty("piece"));
        }
        let e1 = g.constant(piece.edge_features.clone())?;
        let h1 = self.mlp2(g, e1, self.ids.g1, true)?;
        let f1 = g.max_groups(h1, k)?;
        let gathered = g.gather_rows(f1, &piece.neighbors)?;
        let offs = g.constant(piece.offsets.clone())?;
        let e2 = g.concat_cols(&[offs, gathered])?;
        let h2 = self.mlp2(g, e2, self.ids.g2, true)?;
        let f2 = g.max_groups(h2, k)?;
        self.linear(g, f2, self.ids.g_out)
    }

    /// Vector self-attention over the k-NN neighborhoods of one piece, with residual.
    pub fn self_attention(&self, g: &mut Graph, f: Var, piece: &PiecePrep, k: usize) -> Result<Var> {
        let n = piece.indices.len();
        let wq = self.p(g, self.ids.wq)?;
        let wk = self.p(g, self.ids.wk)?;
        let wv = self.p(g, self.ids.wv)?;
        let q = g.matmul(f, wq)?;
        let kk = g.matmul(f, wk)?;
        let v = g.matmul(f, wv)?;
        let centers: Vec<usize> = (0..n).flat_map(|p| std::iter::repeat_n(p, k)).collect();
        let qp = g.gather_rows(q, &centers)?;
        let kq = g.gather_rows(kk, &piece.neighbors)?;
        let vq = g.gather_rows(v, &piece.neighbors)?;
        // Stored offsets are q − p; the encoding takes p − q.
        let neg = piece.offsets.data().chunks(4).flat_map(|r| [-r[0], -r[1], -r[2], r[3]]).collect();
        let rel = g.constant(Tensor::matrix(n * k, 4, neg)?)?;
        let pe = self.mlp2(g, rel, self.ids.pos, false)?;
        let diff = g.sub(qp, kq)?;
        let logits_in = g.add(diff, pe)?;
        let logits = self.mlp2(g, logits_in, self.ids.attn, false)?;
        let weights = g.softmax_groups(logits, k)?;
        let val = g.add(vq, pe)?;
        let weighted = g.mul(weights, val)?;
        let agg = g.sum_groups(weighted, k)?;
        g.add(f, agg)
    }

    /// Multi-head scaled dot-product attention over all `N` rows, then a
    /// feed-forward block and layer norm, each with a residual.
    pub fn cross_attention(&self, g: &mut Graph, x: Var) -> Result<Var> {
        let (h, dh) = (self.cfg.heads, self.cfg.head_dim);
        let wq = self.p(g, self.ids.mq)?;
        let wk = self.p(g, self.ids.mk)?;
        let wv = self.p(g, self.ids.mv)?;
        let wo = self.p(g, self.ids.mo)?;
        let q = g.matmul(x, wq)?;
        let k = g.matmul(x, wk)?;
        let v = g.matmul(x, wv)?;
        let mut heads = Vec::with_capacity(h);
        for i in 0..h {
            let (a, b) = (i * dh, (i + 1) * dh);
            let qi = g.slice_cols(q, a, b)?;
            let ki = g.slice_cols(k, a, b)?;
            let vi = g.slice_cols(v, a, b)?;
            let kt = g.transpose(ki)?;
            let s = g.matmul(qi, kt)?;
            let s = g.scale(s, 1.0 / (dh as f64).sqrt())?;
            let att = g.softmax_lastdim(s)?;
            heads.push(g.matmul(att, vi)?);
        }
        let cat = g.concat_cols(&heads)?;
        let o = g.matmul(cat, wo)?;
        let x1 = g.add(x, o)?;
        let ff = self.mlp2(g, x1, self.ids.ffn, false)?;
        let x2 = g.add(x1, ff)?;
        let gamma = self.p(g, self.ids.ln_gamma)?;
        let beta = self.p(g, self.ids.ln_beta)?;
        g.layernorm(x2, gamma, beta)
    }

    /// Two layers then a sigmoid: `[N, D] → [N, 1]`.
    pub fn seg_head(&self, g: &mut Graph, x: Var) -> Result<Var> {
        let z = self.mlp2(g, x, self.ids.seg, false)?;
        g.sigmoid(z)
    }

    /// Primal and dual descriptors `[rows, d]` each, rows L2-normalized.
    pub fn descriptor_head(&self, g: &mut Graph, x: Var, rows: &[usize]) -> Result<(Var, Var)> {
        if rows.is_empty() {
            return Err(Error::Empty("fracture point set"));
        }
        let sel = g.gather_rows(x, rows)?;
        let z = self.mlp2(g, sel, self.ids.aff, false)?;
        let dd = self.cfg.d_desc;
        let p = g.slice_cols(z, 0, dd)?;
        let d = g.slice_cols(z, dd, 2 * dd)?;
        let p = g.l2_normalize_rows(p, DESCRIPTOR_EPS)?;
        let d = g.l2_normalize_rows(d, DESCRIPTOR_EPS)?;
        Ok((p, d))
    }

    /// `log M` on the tape for the given descriptors.
    pub fn affinity_logits(&self, g: &mut Graph, primal: Var, dual: Var) -> Result<Var> {
        let a = self.p(g, self.ids.affinity)?;
        affinity_logits(g, primal, dual, a, self.cfg.tau)
    }

    pub fn forward(&self, g: &mut Graph, prep: &ObjectPrep) -> Result<Forward> {
        let k = prep.k;
        let mut per_piece = Vec::with_capacity(prep.pieces.len());
        for piece in &prep.pieces {
            let f = self.backbone(g, piece, k)?;
            per_piece.push(self.self_attention(g, f, piece, k)?);
        }
        let stacked = g.concat_rows(&per_piece)?;
        let x = g.gather_rows(stacked, &prep.order)?;
        let features = self.cross_attention(g, x)?;
        let confidence = self.seg_head(g, features)?;
        Ok(Forward { features, confidence })
    }

    /// Confidence, descriptors and matching for one object without gradients.
    /// `mask` overrides the predicted fracture set when given.
    pub fn infer(&self, obj: &PointCloudObject, mask: Option<&[bool]>) -> Result<Inference> {
        let prep = prepare_object(obj, self.cfg.k)?;
        let mut g = Graph::new();
        let fw = self.forward(&mut g, &prep)?;
        let confidence = g.value(fw.confidence).data().to_vec();
        let rows: Vec<usize> = match mask {
            Some(m) => (0..obj.len()).filter(|&i| m[i]).collect(),
            None => (0..obj.len()).filter(|&i| confidence[i] > 0.5).collect(),
        };
        if rows.is_empty() {
            return Ok(Inference { confidence, matches: None });
        }
        let (p, d) = self.descriptor_head(&mut g, fw.features, &rows)?;
        let logits = self.affinity_logits(&mut g, p, d)?;
        let log_affinity = g.value(logits).data().to_vec();
        let soft = sinkhorn_from_log(&log_affinity, rows.len(), self.cfg.sinkhorn_iters)?;
        let matches = MatchResult::new(rows, log_affinity, soft)?;
        Ok(Inference { confidence, matches: Some(matches) })
    }
}
