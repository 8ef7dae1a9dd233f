use nalgebra::Vector3;

use crate::error::{Error, Result};

const LEAF_SIZE: usize = 8;

#[derive(Debug, Clone)]
enum Node {
    Leaf {
        start: u32,
        end: u32,
    },
    Split {
        axis: u8,
        value: f64,
        left: u32,
        right: u32,
    },
}

/// Static KD-tree over a fixed point set.
///
/// Neighbour lists are sorted by non-decreasing distance with ties broken by the
/// lower point index, so results are identical to a stable brute-force sort.
#[derive(Debug, Clone)]
pub struct KdIndex {
    points: Vec<Vector3<f64>>,
    order: Vec<u32>,
    nodes: Vec<Node>,
}

impl KdIndex {
    pub fn new(points: Vec<Vector3<f64>>) -> Self {
        let mut order: Vec<u32> = (0..points.len() as u32).collect();
        let mut nodes = Vec::with_capacity(2 * points.len() / LEAF_SIZE + 1);
        if !points.is_empty() {
            build(&points, &mut order, 0, &mut nodes);
        }
        Self { points, order, nodes }
    }

    pub fn from_f32(points: &[Vector3<f32>]) -> Self {
        Self::new(points.iter().map(|p| p.cast()).collect())
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn points(&self) -> &[Vector3<f64>] {
        &self.points
    }

    /// The `k` nearest indexed points as `(index, euclidean distance)`.
    pub fn knn(&self, query: &Vector3<f64>, k: usize) -> Result<Vec<(usize, f64)>> {
        if k > self.points.len() {
            return Err(Error::KTooLarge {
                k,
                available: self.points.len(),
            });
        }
        if k == 0 {
            return Ok(Vec::new());
        }
        let mut best: Vec<(f64, u32)> = Vec::with_capacity(k + 1);
        self.search(0, query, k, &mut best);
        Ok(best.into_iter().map(|(d2, i)| (i as usize, d2.sqrt())).collect())
    }

    /// Closest indexed point; panics on an empty index.
    pub fn nearest(&self, query: &Vector3<f64>) -> (usize, f64) {
        assert!(!self.points.is_empty(), "nearest() on an empty index");
        let mut best: Vec<(f64, u32)> = Vec::with_capacity(2);
        self.search(0, query, 1, &mut best);
        (best[0].1 as usize, best[0].0.sqrt())
    }

    fn search(&self, node: usize, q: &Vector3<f64>, k: usize, best: &mut Vec<(f64, u32)>) {
        match self.nodes[node] {
            Node::Leaf { start, end } => {
                for &i in &self.order[start as usize..end as usize] {
                    let d2 = (self.points[i as usize] - q).norm_squared();
                    insert(best, k, (d2, i));
                }
            }
            Node::Split {
                axis,
                value,
                left,
                right,
            } => {
                let diff = q[axis as usize] - value;
                let (near, far) = if diff <= 0.0 { (left, right) } else { (right, left) };
                self.search(near as usize, q, k, best);
                // equal-distance candidates on the far side can still win the index tie-break
                if best.len() < k || diff * diff <= best[best.len() - 1].0 {
                    self.search(far as usize, q, k, best);
                }
            }
        }
    }
}

fn insert(best: &mut Vec<(f64, u32)>, k: usize, cand: (f64, u32)) {
    let less = |a: &(f64, u32), b: &(f64, u32)| a.0 < b.0 || (a.0 == b.0 && a.1 < b.1);
    if best.len() == k && !less(&cand, &best[k - 1]) {
        return;
    }
    let pos = best.partition_point(|b| less(b, &cand));
    best.insert(pos, cand);
    if best.len() > k {
        best.pop();
    }
}

fn build(points: &[Vector3<f64>], order: &mut [u32], offset: usize, nodes: &mut Vec<Node>) -> u32 {
    let id = nodes.len() as u32;
    if order.len() <= LEAF_SIZE {
        nodes.push(Node::Leaf {
            start: offset as u32,
            end: (offset + order.len()) as u32,
        });
        return id;
    }
    let (mut lo, mut hi) = (Vector3::repeat(f64::INFINITY), Vector3::repeat(f64::NEG_INFINITY));
    for &i in order.iter() {
        lo = lo.inf(&points[i as usize]);
        hi = hi.sup(&points[i as usize]);
    }
    let axis = (hi - lo).imax();
    let mid = order.len() / 2;
    order.select_nth_unstable_by(mid, |&a, &b| {
        points[a as usize][axis].total_cmp(&points[b as usize][axis])
    });
    let value = points[order[mid] as usize][axis];
    nodes.push(Node::Leaf { start: 0, end: 0 });
    let (l, r) = order.split_at_mut(mid);
    let left = build(points, l, offset, nodes);
    let right = build(points, r, offset + mid, nodes);
    nodes[id as usize] = Node::Split {
        axis: axis as u8,
        value,
        left,
        right,
    };
    id
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn brute(points: &[Vector3<f64>], q: &Vector3<f64>, k: usize) -> Vec<(usize, f64)> {
        let mut all: Vec<(usize, f64)> = points.iter().enumerate().map(|(i, p)| (i, (p - q).norm())).collect();
        all.sort_by(|a, b| a.1.total_cmp(&b.1).then(a.0.cmp(&b.0)));
        all.truncate(k);
        all
    }

    fn random_points(n: usize, seed: u64) -> Vec<Vector3<f64>> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n)
            .map(|_| Vector3::new(rng.gen(), rng.gen(), rng.gen()))
            .collect()
    }

    #[test]
    fn two_point_query() {
        let idx = KdIndex::new(vec![Vector3::zeros(), Vector3::x()]);
        let r = idx.knn(&Vector3::new(0.1, 0.0, 0.0), 1).unwrap();
        assert_eq!(r[0].0, 0);
        assert!((r[0].1 - 0.1).abs() < 1e-15);
    }

    #[test]
    fn exact_hit_comes_first() {
        let pts = random_points(100, 1);
        let idx = KdIndex::new(pts.clone());
        let r = idx.knn(&pts[37], 3).unwrap();
        assert_eq!(r[0], (37, 0.0));
    }

    #[test]
    fn matches_brute_force_knn() {
        let pts = random_points(256, 2);
        let idx = KdIndex::new(pts.clone());
        for q in random_points(50, 3) {
            let got = idx.knn(&q, 8).unwrap();
            let want = brute(&pts, &q, 8);
            assert_eq!(got.iter().map(|x| x.0).collect::<Vec<_>>(), want.iter().map(|x| x.0).collect::<Vec<_>>());
            for (g, w) in got.iter().zip(&want) {
                assert_eq!(g.1, w.1);
            }
        }
    }

    #[test]
    fn nearest_agrees_with_exhaustive_minimum() {
        let pts = random_points(500, 4);
        let idx = KdIndex::new(pts.clone());
        for q in random_points(1000, 5) {
            assert_eq!(idx.nearest(&q).0, brute(&pts, &q, 1)[0].0);
        }
    }

    #[test]
    fn ties_prefer_lower_index() {
        let pts = vec![Vector3::x(), -Vector3::x(), Vector3::y(), Vector3::x()];
        let idx = KdIndex::new(pts);
        let r = idx.knn(&Vector3::zeros(), 4).unwrap();
        assert_eq!(r.iter().map(|x| x.0).collect::<Vec<_>>(), vec![0, 1, 2, 3]);
        let dup = KdIndex::new(vec![Vector3::zeros(); 20]);
        let r = dup.knn(&Vector3::zeros(), 5).unwrap();
        assert_eq!(r.iter().map(|x| x.0).collect::<Vec<_>>(), vec![0, 1, 2, 3, 4]);
    }

    #[test]
    fn k_too_large() {
        let idx = KdIndex::new(random_points(3, 0));
        assert!(matches!(idx.knn(&Vector3::zeros(), 4), Err(Error::KTooLarge { .. })));
    }
}
