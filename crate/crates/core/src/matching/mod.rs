//! Fracture-point matching: affinity, Sinkhorn, Hungarian and training losses.
//!
//! Rows of every matrix here are primal descriptors and columns dual
//! descriptors of the same list of fracture points, across all pieces of one
//! object. Nothing is masked: a point may in principle match itself or a point
//! of its own piece; such matches are dropped only when pairwise transforms are
//! estimated.

mod hungarian;
mod loss;
mod sinkhorn;

use std::collections::{BTreeMap, HashMap};

pub use hungarian::{assignment_weight, hungarian};
pub use loss::{gt_matrix, loss_mat, loss_seg, rigidity_loss, row_norms, RigidityStats, PROB_CLAMP};
pub use sinkhorn::{
    sinkhorn, sinkhorn_from_log, sinkhorn_log_in_place, sinkhorn_var, DEFAULT_EPS, DEFAULT_ITERS,
};

use crate::error::{Error, Result};
use crate::scalar::Real;
use crate::tensor::{Graph, Var};

pub const DEFAULT_TAU: f64 = 0.05;

/// Log-affinity `F̂p · A · F̂dᵀ / τ` on the tape.
pub fn affinity_logits(g: &mut Graph, primal: Var, dual: Var, a: Var, tau: f64) -> Result<Var> {
    if !(tau > 0.0) {
        return Err(Error::InvalidArgument(format!("temperature must be positive, got {tau}")));
    }
    let pa = g.matmul(primal, a)?;
    let dt = g.transpose(dual)?;
    let s = g.matmul(pa, dt)?;
    g.scale(s, 1.0 / tau)
}

/// Affinity matrix `exp(F̂p · A · F̂dᵀ / τ)` for row-major `n × d` descriptors
/// and a `d × d` weight.
pub fn affinity<T: Real>(primal: &[T], dual: &[T], a: &[T], d: usize, tau: T) -> Result<Vec<T>> {
    if !(tau > T::zero()) {
        return Err(Error::InvalidArgument(format!("temperature must be positive, got {tau}")));
    }
    if d == 0 || primal.len() % d != 0 || dual.len() != primal.len() || a.len() != d * d {
        return Err(Error::Shape {
            op: "affinity",
            detail: format!("primal {} / dual {} / A {} for d = {d}", primal.len(), dual.len(), a.len()),
        });
    }
    let n = primal.len() / d;
    let mut out = vec![T::zero(); n * n];
    let mut pa = vec![T::zero(); d];
    for i in 0..n {
        for (k, slot) in pa.iter_mut().enumerate() {
            *slot = (0..d).fold(T::zero(), |acc, l| acc + primal[i * d + l] * a[l * d + k]);
        }
        for j in 0..n {
            let dot = (0..d).fold(T::zero(), |acc, k| acc + pa[k] * dual[j * d + k]);
            out[i * n + j] = (dot / tau).exp();
        }
    }
    Ok(out)
}

/// Soft and hard matching over the fracture points of one object.
#[derive(Clone, Debug, PartialEq)]
pub struct MatchResult {
    /// Global point index of each row/column.
    pub fracture: Vec<usize>,
    /// `log M`, row-major `n × n`.
    pub log_affinity: Vec<f64>,
    /// `X̃`, row-major `n × n`.
    pub soft: Vec<f64>,
    /// `X` as a permutation: row `r` is matched to column `perm[r]`.
    pub perm: Vec<usize>,
}

/// Correspondences between two pieces: `(point on a, point on b)` in global indices.
pub type PairMatches = BTreeMap<(usize, usize), Vec<(usize, usize)>>;

impl MatchResult {
    /// Runs the Hungarian step on `soft`.
    pub fn new(fracture: Vec<usize>, log_affinity: Vec<f64>, soft: Vec<f64>) -> Result<Self> {
        let n = fracture.len();
        let perm = hungarian(&soft, n, n)?;
        Ok(Self { fracture, log_affinity, soft, perm })
    }

    pub fn len(&self) -> usize {
        self.fracture.len()
    }

    pub fn is_empty(&self) -> bool {
        self.fracture.is_empty()
    }

    pub fn affinity(&self) -> Vec<f64> {
        self.log_affinity.iter().map(|v| v.exp()).collect()
    }

    /// Hard matches as global index pairs (primal row, dual column).
    pub fn pairs(&self) -> Vec<(usize, usize)> {
        self.perm.iter().enumerate().map(|(r, &c)| (self.fracture[r], self.fracture[c])).collect()
    }

    /// Fraction of rows assigned to their own column.
    pub fn self_match_fraction(&self) -> f64 {
        if self.is_empty() {
            return 0.0;
        }
        self.perm.iter().enumerate().filter(|(r, &c)| *r == c).count() as f64 / self.len() as f64
    }

    /// Hard matches grouped by ordered piece pair, same-piece matches dropped.
    pub fn pair_matches(&self, piece_id: &[usize]) -> PairMatches {
        let mut out = PairMatches::new();
        for (i, j) in self.pairs() {
            let (a, b) = (piece_id[i], piece_id[j]);
            if a != b {
                out.entry((a, b)).or_default().push((i, j));
            }
        }
        out
    }
}

/// Fraction of ground-truth rows whose hard match equals the ground-truth partner.
/// Rows without a ground-truth entry are ignored; `None` if no row has one.
pub fn matching_accuracy(result: &MatchResult, gt_match: &[(usize, usize)]) -> Option<f64> {
    let gt: HashMap<usize, usize> = gt_match.iter().copied().collect();
    let mut total = 0usize;
    let mut hit = 0usize;
    for (i, j) in result.pairs() {
        if let Some(&want) = gt.get(&i) {
            total += 1;
            if want == j {
                hit += 1;
            }
        }
    }
    (total > 0).then(|| hit as f64 / total as f64)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn unit_cosine_gives_e() {
        let f = [1.0, 0.0, 0.0, 1.0];
        let a = [1.0, 0.0, 0.0, 1.0];
        let m = affinity(&f, &f, &a, 2, 1.0).unwrap();
        assert!((m[0] - std::f64::consts::E).abs() < 1e-15);
        assert!((m[3] - std::f64::consts::E).abs() < 1e-15);
        assert_eq!(m[1], 1.0);
        assert_eq!(m[2], 1.0);
    }

    #[test]
    fn rejects_bad_temperature() {
        assert!(affinity(&[1.0], &[1.0], &[1.0], 1, 0.0).is_err());
    }

    #[test]
    fn appendix_scale_shape() {
        let n = 58;
        let d = 8;
        let f: Vec<f64> = (0..n * d).map(|k| ((k * 7 % 13) as f64 - 6.0) / 20.0).collect();
        let a: Vec<f64> = (0..d * d).map(|k| if k % (d + 1) == 0 { 1.0 } else { 0.0 }).collect();
        let m = affinity(&f, &f, &a, d, DEFAULT_TAU).unwrap();
        assert_eq!(m.len(), n * n);
        assert!(m.iter().all(|v| *v > 0.0));
    }

    #[test]
    fn pair_grouping_drops_same_piece() {
        let r = MatchResult {
            fracture: vec![0, 1, 2, 3],
            log_affinity: vec![0.0; 16],
            soft: vec![0.25; 16],
            perm: vec![2, 0, 1, 3],
        };
        let piece = [0, 0, 1, 1];
        let pm = r.pair_matches(&piece);
        assert_eq!(pm[&(0, 1)], vec![(0, 2)]);
        assert_eq!(pm[&(1, 0)], vec![(2, 1)]);
        assert!(!pm.contains_key(&(0, 0)) && !pm.contains_key(&(1, 1)));
        assert!((r.self_match_fraction() - 0.25).abs() < 1e-15);
        assert_eq!(matching_accuracy(&r, &[(0, 2), (2, 0)]), Some(0.5));
    }
}
