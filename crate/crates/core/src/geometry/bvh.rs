//! Bounding-volume hierarchy over triangles for exact closest-point and line queries.

use nalgebra::Vector3;

use super::TriangleMesh;
use crate::error::{Error, Result};

type V3 = Vector3<f64>;

const LEAF: usize = 4;

#[derive(Debug, Clone)]
struct Node {
    lo: V3,
    hi: V3,
    start: u32,
    end: u32,
    /// Index of the right child; the left child follows the node directly.
    right: u32,
}

/// Closest surface point to a query.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Closest {
    pub face: usize,
    pub point: V3,
    pub distance: f64,
}

#[derive(Debug, Clone)]
pub struct TriangleBvh {
    tris: Vec<[V3; 3]>,
    order: Vec<u32>,
    nodes: Vec<Node>,
}

impl TriangleBvh {
    pub fn new(mesh: &TriangleMesh) -> Result<Self> {
        if mesh.faces.is_empty() {
            return Err(Error::EmptyMesh);
        }
        let tris: Vec<[V3; 3]> = (0..mesh.faces.len()).map(|f| mesh.face_corners(f)).collect();
        let centroids: Vec<V3> = tris.iter().map(|t| (t[0] + t[1] + t[2]) / 3.0).collect();
        let mut bvh = Self {
            order: (0..tris.len() as u32).collect(),
            tris,
            nodes: Vec::new(),
        };
        bvh.build(&centroids, 0, centroids.len());
        Ok(bvh)
    }

    pub fn face_count(&self) -> usize {
        self.tris.len()
    }

    fn build(&mut self, centroids: &[V3], start: usize, end: usize) -> u32 {
        let (mut lo, mut hi) = (V3::repeat(f64::INFINITY), V3::repeat(f64::NEG_INFINITY));
        for &f in &self.order[start..end] {
            for p in &self.tris[f as usize] {
                lo = lo.inf(p);
                hi = hi.sup(p);
            }
        }
        let id = self.nodes.len() as u32;
        self.nodes.push(Node {
            lo,
            hi,
            start: start as u32,
            end: end as u32,
            right: 0,
        });
        if end - start > LEAF {
            let (mut clo, mut chi) = (V3::repeat(f64::INFINITY), V3::repeat(f64::NEG_INFINITY));
            for &f in &self.order[start..end] {
                clo = clo.inf(&centroids[f as usize]);
                chi = chi.sup(&centroids[f as usize]);
            }
            let axis = (chi - clo).imax();
            let mid = (start + end) / 2;
            self.order[start..end].select_nth_unstable_by(mid - start, |&a, &b| {
                centroids[a as usize][axis].total_cmp(&centroids[b as usize][axis]).then(a.cmp(&b))
            });
            self.build(centroids, start, mid);
            let right = self.build(centroids, mid, end);
            self.nodes[id as usize].right = right;
        }
        id
    }

    fn box_distance2(&self, node: usize, q: &V3) -> f64 {
        let n = &self.nodes[node];
        ((n.lo - q).sup(&V3::zeros()) + (q - n.hi).sup(&V3::zeros())).norm_squared()
    }

    /// Exact closest point on the surface; ties go to the lower face index.
    pub fn closest(&self, q: &V3) -> Closest {
        let mut best = (f64::INFINITY, usize::MAX, V3::zeros());
        let mut stack = vec![(0usize, self.box_distance2(0, q))];
        while let Some((id, d2)) = stack.pop() {
            if d2 > best.0 {
                continue;
            }
            let n = &self.nodes[id];
            if n.end - n.start <= LEAF as u32 {
                for &f in &self.order[n.start as usize..n.end as usize] {
                    let p = closest_on_triangle(q, &self.tris[f as usize]);
                    let d2 = (p - q).norm_squared();
                    let f = f as usize;
                    if d2 < best.0 || (d2 == best.0 && f < best.1) {
                        best = (d2, f, p);
                    }
                }
                continue;
            }
            let (l, r) = (id + 1, n.right as usize);
            let (dl, dr) = (self.box_distance2(l, q), self.box_distance2(r, q));
            if dl <= dr {
                stack.push((r, dr));
                stack.push((l, dl));
            } else {
                stack.push((l, dl));
                stack.push((r, dr));
            }
        }
        Closest {
            face: best.1,
            point: best.2,
            distance: best.0.sqrt(),
        }
    }

    /// Heights at which the vertical line through `(x, y)` crosses the surface, ascending.
    pub fn vertical_crossings(&self, x: f64, y: f64) -> Vec<f64> {
        let mut hits = Vec::new();
        let mut stack = vec![0usize];
        while let Some(id) = stack.pop() {
            let n = &self.nodes[id];
            if x < n.lo.x || x > n.hi.x || y < n.lo.y || y > n.hi.y {
                continue;
            }
            if n.end - n.start <= LEAF as u32 {
                for &f in &self.order[n.start as usize..n.end as usize] {
                    if let Some(z) = vertical_hit(x, y, &self.tris[f as usize]) {
                        hits.push(z);
                    }
                }
                continue;
            }
            stack.push(n.right as usize);
            stack.push(id + 1);
        }
        hits.sort_by(f64::total_cmp);
        hits
    }
}

/// Closest point on a triangle by Voronoi-region classification.
pub fn closest_on_triangle(p: &V3, t: &[V3; 3]) -> V3 {
    let [a, b, c] = *t;
    let (ab, ac, ap) = (b - a, c - a, p - a);
    let (d1, d2) = (ab.dot(&ap), ac.dot(&ap));
    if d1 <= 0.0 && d2 <= 0.0 {
        return a;
    }
    let bp = p - b;
    let (d3, d4) = (ab.dot(&bp), ac.dot(&bp));
    if d3 >= 0.0 && d4 <= d3 {
        return b;
    }
    let vc = d1 * d4 - d3 * d2;
    if vc <= 0.0 && d1 >= 0.0 && d3 <= 0.0 {
        return a + ab * (d1 / (d1 - d3));
    }
    let cp = p - c;
    let (d5, d6) = (ab.dot(&cp), ac.dot(&cp));
    if d6 >= 0.0 && d5 <= d6 {
        return c;
    }
    let vb = d5 * d2 - d1 * d6;
    if vb <= 0.0 && d2 >= 0.0 && d6 <= 0.0 {
        return a + ac * (d2 / (d2 - d6));
    }
    let va = d3 * d6 - d5 * d4;
    if va <= 0.0 && (d4 - d3) >= 0.0 && (d5 - d6) >= 0.0 {
        return b + (c - b) * ((d4 - d3) / ((d4 - d3) + (d5 - d6)));
    }
    let denom = va + vb + vc;
    if denom.abs() < f64::MIN_POSITIVE {
        // degenerate triangle: nearest of its edges
        return [(a, b), (b, c), (c, a)]
            .iter()
            .map(|&(u, v)| {
                let e = v - u;
                let s = if e.norm_squared() > 0.0 { ((p - u).dot(&e) / e.norm_squared()).clamp(0.0, 1.0) } else { 0.0 };
                u + e * s
            })
            .min_by(|x, y| (x - p).norm_squared().total_cmp(&(y - p).norm_squared()))
            .expect("three edges");
    }
    a + ab * (vb / denom) + ac * (vc / denom)
}

/// Half-open edge rule so a line through a shared edge or vertex is counted once.
fn vertical_hit(x: f64, y: f64, t: &[V3; 3]) -> Option<f64> {
    let edge = |a: &V3, b: &V3| (b.x - a.x) * (y - a.y) - (b.y - a.y) * (x - a.x);
    let (w0, w1, w2) = (edge(&t[1], &t[2]), edge(&t[2], &t[0]), edge(&t[0], &t[1]));
    let area = w0 + w1 + w2;
    if area == 0.0 {
        return None;
    }
    let s = area.signum();
    let inside = |w: f64, a: &V3, b: &V3| {
        let w = w * s;
        // top-left style tie-break on the (x, y) projection
        w > 0.0 || (w == 0.0 && ((b.y - a.y) * s > 0.0 || ((b.y - a.y) == 0.0 && (b.x - a.x) * s < 0.0)))
    };
    if inside(w0, &t[1], &t[2]) && inside(w1, &t[2], &t[0]) && inside(w2, &t[0], &t[1]) {
        Some((w0 * t[0].z + w1 * t[1].z + w2 * t[2].z) / area)
    } else {
        None
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::shapes::{cuboid, icosphere};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn brute(mesh: &TriangleMesh, q: &V3) -> f64 {
        (0..mesh.faces.len())
            .map(|f| (closest_on_triangle(q, &mesh.face_corners(f)) - q).norm())
            .fold(f64::INFINITY, f64::min)
    }

    #[test]
    fn closest_matches_brute_force() {
        let mesh = icosphere(0.7, 2);
        let bvh = TriangleBvh::new(&mesh).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..300 {
            let q = V3::new(rng.gen_range(-1.5..1.5), rng.gen_range(-1.5..1.5), rng.gen_range(-1.5..1.5));
            let c = bvh.closest(&q);
            assert!((c.distance - brute(&mesh, &q)).abs() < 1e-12);
            assert!(((c.point - q).norm() - c.distance).abs() < 1e-12);
        }
    }

    #[test]
    fn closest_point_regions() {
        let t = [V3::zeros(), V3::x(), V3::y()];
        assert!((closest_on_triangle(&V3::new(0.2, 0.2, 1.0), &t) - V3::new(0.2, 0.2, 0.0)).norm() < 1e-15);
        assert_eq!(closest_on_triangle(&V3::new(-1.0, -1.0, 0.0), &t), V3::zeros());
        assert_eq!(closest_on_triangle(&V3::new(0.5, -2.0, 0.0), &t), V3::new(0.5, 0.0, 0.0));
        let p = closest_on_triangle(&V3::new(1.0, 1.0, 0.0), &t);
        assert!((p - V3::new(0.5, 0.5, 0.0)).norm() < 1e-15);
    }

    #[test]
    fn vertical_crossings_of_closed_meshes_are_even() {
        let cube = cuboid(V3::zeros(), V3::repeat(1.0), 4);
        let bvh = TriangleBvh::new(&cube).unwrap();
        // the line passes exactly through shared edges and vertices of the grid
        assert_eq!(bvh.vertical_crossings(0.25, 0.5), vec![0.0, 1.0]);
        assert_eq!(bvh.vertical_crossings(0.3, 0.7), vec![0.0, 1.0]);
        assert!(bvh.vertical_crossings(1.5, 0.5).is_empty());
        let sphere = TriangleBvh::new(&icosphere(1.0, 3)).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for _ in 0..200 {
            let hits = sphere.vertical_crossings(rng.gen_range(-1.1..1.1), rng.gen_range(-1.1..1.1));
            assert_eq!(hits.len() % 2, 0);
        }
    }
}
