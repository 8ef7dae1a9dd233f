use std::collections::HashMap;

use nalgebra::Vector3;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::cloud::{bounds_of, OrientedPointCloud};
use crate::error::{Error, Result};

/// Indexed triangle mesh with optional per-vertex colors and per-face part labels.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct TriangleMesh {
    pub vertices: Vec<Vector3<f32>>,
    pub faces: Vec<[u32; 3]>,
    pub vertex_colors: Option<Vec<[f32; 3]>>,
    pub face_labels: Option<Vec<u8>>,
}

impl TriangleMesh {
    /// Builds a mesh after checking index bounds and rejecting degenerate index triples.
    pub fn new(vertices: Vec<Vector3<f32>>, faces: Vec<[u32; 3]>) -> Result<Self> {
        let mesh = Self {
            vertices,
            faces,
            vertex_colors: None,
            face_labels: None,
        };
        mesh.validate()?;
        Ok(mesh)
    }

    pub fn with_vertex_colors(mut self, colors: Vec<[f32; 3]>) -> Result<Self> {
        if colors.len() != self.vertices.len() {
            return Err(Error::DimensionMismatch(format!(
                "{} vertex colors for {} vertices",
                colors.len(),
                self.vertices.len()
            )));
        }
        self.vertex_colors = Some(colors);
        Ok(self)
    }

    pub fn with_face_labels(mut self, labels: Vec<u8>) -> Result<Self> {
        if labels.len() != self.faces.len() {
            return Err(Error::DimensionMismatch(format!(
                "{} face labels for {} faces",
                labels.len(),
                self.faces.len()
            )));
        }
        self.face_labels = Some(labels);
        Ok(self)
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.vertices.len();
        for (fi, f) in self.faces.iter().enumerate() {
            if f.iter().any(|&i| i as usize >= n) {
                return Err(Error::DimensionMismatch(format!(
                    "face {fi} references a vertex outside 0..{n}"
                )));
            }
            if f[0] == f[1] || f[1] == f[2] || f[0] == f[2] {
                return Err(Error::DimensionMismatch(format!("face {fi} is degenerate: {f:?}")));
            }
        }
        if let Some(c) = &self.vertex_colors {
            if c.len() != n {
                return Err(Error::DimensionMismatch("vertex color count".into()));
            }
        }
        if let Some(l) = &self.face_labels {
            if l.len() != self.faces.len() {
                return Err(Error::DimensionMismatch("face label count".into()));
            }
        }
        Ok(())
    }

    pub fn vertex(&self, i: u32) -> Vector3<f64> {
        self.vertices[i as usize].cast()
    }

    pub fn face_corners(&self, f: usize) -> [Vector3<f64>; 3] {
        let [a, b, c] = self.faces[f];
        [self.vertex(a), self.vertex(b), self.vertex(c)]
    }

    /// Un-normalized `(b - a) x (c - a)`; its length is twice the face area.
    pub fn face_cross(&self, f: usize) -> Vector3<f64> {
        let [a, b, c] = self.face_corners(f);
        (b - a).cross(&(c - a))
    }

    pub fn face_area(&self, f: usize) -> f64 {
        0.5 * self.face_cross(f).norm()
    }

    pub fn face_normal(&self, f: usize) -> Vector3<f64> {
        let c = self.face_cross(f);
        let n = c.norm();
        if n > 0.0 {
            c / n
        } else {
            Vector3::z()
        }
    }

    pub fn surface_area(&self) -> f64 {
        (0..self.faces.len()).map(|f| self.face_area(f)).sum()
    }

    /// Area-weighted vertex normals.
    pub fn vertex_normals(&self) -> Vec<Vector3<f64>> {
        let mut acc = vec![Vector3::zeros(); self.vertices.len()];
        for (fi, f) in self.faces.iter().enumerate() {
            let c = self.face_cross(fi);
            for &v in f {
                acc[v as usize] += c;
            }
        }
        acc.into_iter()
            .map(|n| {
                let l = n.norm();
                if l > 0.0 {
                    n / l
                } else {
                    Vector3::z()
                }
            })
            .collect()
    }

    pub fn bounds(&self) -> Option<(Vector3<f64>, Vector3<f64>)> {
        bounds_of(self.vertices.iter().map(|v| v.cast()))
    }

    /// Every undirected edge is shared by exactly two faces.
    pub fn is_watertight(&self) -> bool {
        if self.faces.is_empty() {
            return false;
        }
        edge_face_counts(&self.faces).values().all(|&c| c == 2)
    }

    /// Number of edges that are not shared by exactly two faces.
    pub fn non_manifold_edges(&self) -> usize {
        edge_face_counts(&self.faces).values().filter(|&&c| c != 2).count()
    }

    /// Same mesh with every face's winding reversed.
    pub fn flipped(&self) -> Self {
        let mut m = self.clone();
        for f in &mut m.faces {
            f.swap(1, 2);
        }
        m
    }

    /// Signed volume (positive for outward-oriented closed meshes).
    pub fn signed_volume(&self) -> f64 {
        (0..self.faces.len())
            .map(|f| {
                let [a, b, c] = self.face_corners(f);
                a.dot(&b.cross(&c)) / 6.0
            })
            .sum()
    }
}

fn edge_face_counts(faces: &[[u32; 3]]) -> HashMap<(u32, u32), u32> {
    let mut counts = HashMap::with_capacity(faces.len() * 3 / 2);
    for f in faces {
        for k in 0..3 {
            let (a, b) = (f[k], f[(k + 1) % 3]);
            *counts.entry((a.min(b), a.max(b))).or_insert(0) += 1;
        }
    }
    counts
}

/// One area-uniform draw: the face it landed on and its barycentric coordinates.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SurfaceSample {
    pub face: usize,
    pub bary: [f64; 3],
}

/// Precomputed area CDF for repeated area-weighted sampling of one mesh.
#[derive(Debug, Clone)]
pub struct MeshSampler {
    cdf: Vec<f64>,
}

impl MeshSampler {
    pub fn new(mesh: &TriangleMesh) -> Result<Self> {
        if mesh.faces.is_empty() {
            return Err(Error::EmptyMesh);
        }
        let mut total = 0.0;
        let cdf: Vec<f64> = (0..mesh.faces.len())
            .map(|f| {
                total += mesh.face_area(f);
                total
            })
            .collect();
        if total <= 0.0 {
            return Err(Error::EmptyMesh);
        }
        Ok(Self { cdf })
    }

    pub fn draw<R: Rng>(&self, rng: &mut R) -> SurfaceSample {
        let total = *self.cdf.last().expect("non-empty cdf");
        let t = rng.gen::<f64>() * total;
        let face = self.cdf.partition_point(|&c| c <= t).min(self.cdf.len() - 1);
        let (r1, r2): (f64, f64) = (rng.gen(), rng.gen());
        let s = r1.sqrt();
        SurfaceSample {
            face,
            bary: [1.0 - s, s * (1.0 - r2), s * r2],
        }
    }

    pub fn draw_many(&self, n: usize, seed: u64) -> Vec<SurfaceSample> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n).map(|_| self.draw(&mut rng)).collect()
    }

    /// Samples `n` points with flat face normals and interpolated colors.
    pub fn sample(&self, mesh: &TriangleMesh, n: usize, seed: u64) -> Result<OrientedPointCloud> {
        let draws = self.draw_many(n, seed);
        cloud_from_samples(mesh, &draws)
    }
}

/// Evaluates surface samples into an oriented cloud (face normals, barycentric colors).
pub fn cloud_from_samples(mesh: &TriangleMesh, draws: &[SurfaceSample]) -> Result<OrientedPointCloud> {
    let mut positions = Vec::with_capacity(draws.len());
    let mut normals = Vec::with_capacity(draws.len());
    for s in draws {
        let [a, b, c] = mesh.face_corners(s.face);
        positions.push((a * s.bary[0] + b * s.bary[1] + c * s.bary[2]).cast::<f32>());
        normals.push(mesh.face_normal(s.face).cast::<f32>());
    }
    let mut cloud = OrientedPointCloud::new(positions, normals)?;
    if let Some(vc) = &mesh.vertex_colors {
        let colors = draws
            .iter()
            .map(|s| {
                let f = mesh.faces[s.face];
                let mut out = [0f32; 3];
                for (k, o) in out.iter_mut().enumerate() {
                    let v: f64 = (0..3).map(|j| s.bary[j] * vc[f[j] as usize][k] as f64).sum();
                    *o = v as f32;
                }
                out
            })
            .collect();
        cloud = cloud.with_colors(colors)?;
    }
    if let Some(fl) = &mesh.face_labels {
        cloud = cloud.with_labels(draws.iter().map(|s| fl[s.face]).collect())?;
    }
    Ok(cloud)
}

/// Draws `n` area-uniform surface points; deterministic in `seed`.
pub fn sample_surface(mesh: &TriangleMesh, n: usize, seed: u64) -> Result<OrientedPointCloud> {
    if n == 0 {
        return Err(Error::DimensionMismatch("sample count must be at least 1".into()));
    }
    MeshSampler::new(mesh)?.sample(mesh, n, seed)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::shapes;

    fn unit_quad() -> TriangleMesh {
        TriangleMesh::new(
            vec![
                Vector3::new(0.0, 0.0, 0.0),
                Vector3::new(1.0, 0.0, 0.0),
                Vector3::new(1.0, 1.0, 0.0),
                Vector3::new(0.0, 1.0, 0.0),
            ],
            vec![[0, 1, 2], [0, 2, 3]],
        )
        .unwrap()
    }

    #[test]
    fn quad_samples_lie_in_plane_with_up_normals() {
        let cloud = sample_surface(&unit_quad(), 4, 7).unwrap();
        assert_eq!(cloud.len(), 4);
        for (p, n) in cloud.positions().iter().zip(cloud.normals()) {
            assert_eq!(p.z, 0.0);
            assert_eq!(*n, Vector3::new(0.0, 0.0, 1.0));
        }
    }

    #[test]
    fn sampling_is_deterministic_per_seed() {
        let m = unit_quad();
        assert_eq!(sample_surface(&m, 64, 7).unwrap(), sample_surface(&m, 64, 7).unwrap());
        assert_ne!(sample_surface(&m, 64, 7).unwrap(), sample_surface(&m, 64, 8).unwrap());
    }

    #[test]
    fn sphere_hemisphere_counts_are_balanced() {
        let sphere = shapes::icosphere(1.0, 4);
        let cloud = sample_surface(&sphere, 10_000, 3).unwrap();
        let frac = cloud.positions().iter().filter(|p| p.x > 0.0).count() as f64 / 1e4;
        assert!((0.48..=0.52).contains(&frac), "fraction {frac}");
    }

    #[test]
    fn empty_mesh_is_an_error() {
        let m = TriangleMesh::default();
        assert!(matches!(sample_surface(&m, 3, 0), Err(Error::EmptyMesh)));
    }

    #[test]
    fn colors_are_interpolated() {
        let m = unit_quad()
            .with_vertex_colors(vec![[0.0, 0.0, 0.0], [1.0, 0.0, 0.0], [1.0, 1.0, 0.0], [0.0, 1.0, 0.0]])
            .unwrap();
        let cloud = sample_surface(&m, 50, 1).unwrap();
        for (p, c) in cloud.positions().iter().zip(cloud.colors().unwrap()) {
            // color channels equal the coordinates for this layout
            assert!((p.x - c[0]).abs() < 1e-5 && (p.y - c[1]).abs() < 1e-5);
        }
    }

    #[test]
    fn watertight_and_degenerate_checks() {
        assert!(shapes::icosphere(1.0, 2).is_watertight());
        assert!(!unit_quad().is_watertight());
        assert!(TriangleMesh::new(vec![Vector3::zeros(); 3], vec![[0, 0, 1]]).is_err());
        assert!(TriangleMesh::new(vec![Vector3::zeros(); 3], vec![[0, 1, 3]]).is_err());
    }
}
