use nalgebra::Point3;

use crate::error::{Error, Result};
use crate::scalar::Real;

const LEAF_SIZE: usize = 8;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Neighbor<T> {
    pub index: usize,
    pub distance: T,
}

#[derive(Clone, Debug)]
enum Node<T> {
    Leaf { start: usize, end: usize },
    Split { axis: usize, value: T, left: usize, right: usize },
}

/// Exact Euclidean k-NN over a fixed reference set (k-d tree).
///
/// Results are sorted by ascending distance, ties broken by lower index.
#[derive(Clone, Debug)]
pub struct KnnIndex<T: Real> {
    points: Vec<Point3<T>>,
    order: Vec<usize>,
    nodes: Vec<Node<T>>,
}

impl<T: Real> KnnIndex<T> {
    pub fn new(points: &[Point3<T>]) -> Result<Self> {
        if points.is_empty() {
            return Err(Error::Empty("knn reference set"));
        }
        let mut idx = Self { points: points.to_vec(), order: (0..points.len()).collect(), nodes: Vec::new() };
        idx.build(0, points.len());
        Ok(idx)
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn points(&self) -> &[Point3<T>] {
        &self.points
    }

    fn build(&mut self, start: usize, end: usize) -> usize {
        let id = self.nodes.len();
        if end - start <= LEAF_SIZE {
            self.nodes.push(Node::Leaf { start, end });
            return id;
        }
        let mut lo = [T::infinity(); 3];
        let mut hi = [-T::infinity(); 3];
        for &i in &self.order[start..end] {
            for a in 0..3 {
                let v = self.points[i][a];
                lo[a] = lo[a].min(v);
                hi[a] = hi[a].max(v);
            }
        }
        let axis = (0..3)
            .max_by(|&a, &b| (hi[a] - lo[a]).partial_cmp(&(hi[b] - lo[b])).unwrap())
            .unwrap();
        let mid = (start + end) / 2;
        let pts = &self.points;
        self.order[start..end].select_nth_unstable_by(mid - start, |&a, &b| {
            pts[a][axis].partial_cmp(&pts[b][axis]).unwrap()
        });
        let value = self.points[self.order[mid]][axis];
        self.nodes.push(Node::Leaf { start: 0, end: 0 });
        let left = self.build(start, mid);
        let right = self.build(mid, end);
        self.nodes[id] = Node::Split { axis, value, left, right };
        id
    }

    /// The `min(k, n)` nearest reference points to `query`.
    pub fn query(&self, query: &Point3<T>, k: usize) -> Result<Vec<Neighbor<T>>> {
        if k == 0 {
            return Err(Error::InvalidArgument("knn: k must be >= 1".into()));
        }
        let k = k.min(self.points.len());
        let mut best: Vec<(T, usize)> = Vec::with_capacity(k + 1);
        self.search(0, query, k, &mut best);
        Ok(best.into_iter().map(|(d2, index)| Neighbor { index, distance: d2.sqrt() }).collect())
    }

    pub fn nearest(&self, query: &Point3<T>) -> Neighbor<T> {
        self.query(query, 1).expect("k = 1 on non-empty index")[0]
    }

    fn search(&self, node: usize, q: &Point3<T>, k: usize, best: &mut Vec<(T, usize)>) {
        match self.nodes[node] {
            Node::Leaf { start, end } => {
                for &i in &self.order[start..end] {
                    let d2 = (self.points[i] - q).norm_squared();
                    let full = best.len() == k;
                    if full {
                        let (wd, wi) = best[k - 1];
                        if d2 > wd || (d2 == wd && i > wi) {
                            continue;
                        }
                    }
                    let pos = best
                        .iter()
                        .position(|&(bd, bi)| d2 < bd || (d2 == bd && i < bi))
                        .unwrap_or(best.len());
                    best.insert(pos, (d2, i));
                    if best.len() > k {
                        best.pop();
                    }
                }
            }
            Node::Split { axis, value, left, right } => {
                let diff = q[axis] - value;
                let (near, far) = if diff < T::zero() { (left, right) } else { (right, left) };
                self.search(near, q, k, best);
                if best.len() < k || diff * diff <= best[k - 1].0 {
                    self.search(far, q, k, best);
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn brute(points: &[Point3<f64>], q: &Point3<f64>, k: usize) -> Vec<usize> {
        let mut all: Vec<(f64, usize)> =
            points.iter().enumerate().map(|(i, p)| ((p - q).norm_squared(), i)).collect();
        all.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap().then(a.1.cmp(&b.1)));
        all.into_iter().take(k).map(|(_, i)| i).collect()
    }

    fn cloud(rng: &mut ChaCha8Rng, n: usize) -> Vec<Point3<f64>> {
        (0..n).map(|_| Point3::new(rng.random(), rng.random(), rng.random())).collect()
    }

    #[test]
    fn matches_brute_force() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let pts = cloud(&mut rng, 1000);
        let index = KnnIndex::new(&pts).unwrap();
        for _ in 0..200 {
            let q = Point3::new(rng.random(), rng.random(), rng.random());
            let got: Vec<usize> = index.query(&q, 16).unwrap().iter().map(|n| n.index).collect();
            assert_eq!(got, brute(&pts, &q, 16));
        }
    }

    #[test]
    fn self_query_first_and_k_clamped() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let pts = cloud(&mut rng, 5);
        let index = KnnIndex::new(&pts).unwrap();
        let r = index.query(&pts[3], 10).unwrap();
        assert_eq!(r.len(), 5);
        assert_eq!(r[0].index, 3);
        assert_eq!(r[0].distance, 0.0);
    }

    #[test]
    fn ties_prefer_lower_index() {
        let pts = vec![Point3::new(1.0, 0.0, 0.0); 20];
        let index = KnnIndex::new(&pts).unwrap();
        let r: Vec<usize> = index.query(&Point3::origin(), 4).unwrap().iter().map(|n| n.index).collect();
        assert_eq!(r, vec![0, 1, 2, 3]);
    }

    #[test]
    fn empty_reference_rejected() {
        assert!(matches!(KnnIndex::<f64>::new(&[]), Err(Error::Empty(_))));
    }
}
