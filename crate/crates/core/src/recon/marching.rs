use std::collections::HashMap;

use nalgebra::Vector3;

use super::grid::ScalarGrid;
use super::tables::{EDGE_TABLE, TRI_TABLE};
use crate::error::{Error, Result};
use crate::geometry::TriangleMesh;

const CORNERS: [[usize; 3]; 8] = [
    [0, 0, 0],
    [1, 0, 0],
    [1, 1, 0],
    [0, 1, 0],
    [0, 0, 1],
    [1, 0, 1],
    [1, 1, 1],
    [0, 1, 1],
];

const EDGES: [(usize, usize); 12] = [
    (0, 1),
    (1, 2),
    (2, 3),
    (3, 0),
    (4, 5),
    (5, 6),
    (6, 7),
    (7, 4),
    (0, 4),
    (1, 5),
    (2, 6),
    (3, 7),
];

/// Extracts the `iso` level set over the non-periodic lattice of nodes.
///
/// Nodes with `value < iso` are inside; triangle normals point toward increasing
/// values. Vertices are shared between cells through an edge-keyed cache.
pub fn marching_cubes(chi: &ScalarGrid, iso: f64) -> Result<TriangleMesh> {
    let (lo, hi) = chi.min_max();
    if !(iso > lo && iso < hi) {
        return Err(Error::EmptySurface { iso, min: lo, max: hi });
    }
    let frame = chi.frame;
    let r = frame.resolution;
    let mut cache: HashMap<(usize, u8), u32> = HashMap::new();
    let mut vertices: Vec<Vector3<f32>> = Vec::new();
    let mut faces: Vec<[u32; 3]> = Vec::new();
    for k in 0..r - 1 {
        for j in 0..r - 1 {
            for i in 0..r - 1 {
                let mut vals = [0.0; 8];
                let mut case = 0usize;
                for (c, off) in CORNERS.iter().enumerate() {
                    vals[c] = chi.get(i + off[0], j + off[1], k + off[2]);
                    if vals[c] < iso {
                        case |= 1 << c;
                    }
                }
                let mask = EDGE_TABLE[case];
                if mask == 0 {
                    continue;
                }
                let mut ids = [u32::MAX; 12];
                for (e, &(a, b)) in EDGES.iter().enumerate() {
                    if mask & (1 << e) == 0 {
                        continue;
                    }
                    let (ca, cb) = (CORNERS[a], CORNERS[b]);
                    let low = [i + ca[0].min(cb[0]), j + ca[1].min(cb[1]), k + ca[2].min(cb[2])];
                    let axis = (0..3).find(|&d| ca[d] != cb[d]).unwrap() as u8;
                    let key = (frame.index(low[0], low[1], low[2]), axis);
                    ids[e] = *cache.entry(key).or_insert_with(|| {
                        let (va, vb) = (vals[a], vals[b]);
                        let t = if va == vb { 0.5 } else { (iso - va) / (vb - va) };
                        let pa = frame.node(i + ca[0], j + ca[1], k + ca[2]);
                        let pb = frame.node(i + cb[0], j + cb[1], k + cb[2]);
                        vertices.push((pa + (pb - pa) * t).cast::<f32>());
                        (vertices.len() - 1) as u32
                    });
                }
                for tri in TRI_TABLE[case].chunks(3).take_while(|t| t[0] >= 0) {
                    // table winding faces the inside; reverse it
                    faces.push([ids[tri[0] as usize], ids[tri[2] as usize], ids[tri[1] as usize]]);
                }
            }
        }
    }
    if faces.is_empty() {
        return Err(Error::EmptySurface { iso, min: lo, max: hi });
    }
    TriangleMesh::new(vertices, faces)
}
