//! Closed reference shapes used by tests, examples and the synthetic generator.

use std::collections::HashMap;

use nalgebra::Vector3;

use super::mesh::TriangleMesh;

/// Subdivided icosahedron projected onto a sphere of the given radius.
pub fn icosphere(radius: f64, subdivisions: u32) -> TriangleMesh {
    let t = (1.0 + 5f64.sqrt()) / 2.0;
    let mut verts: Vec<Vector3<f64>> = [
        [-1.0, t, 0.0],
        [1.0, t, 0.0],
        [-1.0, -t, 0.0],
        [1.0, -t, 0.0],
        [0.0, -1.0, t],
        [0.0, 1.0, t],
        [0.0, -1.0, -t],
        [0.0, 1.0, -t],
        [t, 0.0, -1.0],
        [t, 0.0, 1.0],
        [-t, 0.0, -1.0],
        [-t, 0.0, 1.0],
    ]
    .iter()
    .map(|v| Vector3::from(*v).normalize())
    .collect();
    let mut faces: Vec<[u32; 3]> = vec![
        [0, 11, 5],
        [0, 5, 1],
        [0, 1, 7],
        [0, 7, 10],
        [0, 10, 11],
        [1, 5, 9],
        [5, 11, 4],
        [11, 10, 2],
        [10, 7, 6],
        [7, 1, 8],
        [3, 9, 4],
        [3, 4, 2],
        [3, 2, 6],
        [3, 6, 8],
        [3, 8, 9],
        [4, 9, 5],
        [2, 4, 11],
        [6, 2, 10],
        [8, 6, 7],
        [9, 8, 1],
    ];
    for _ in 0..subdivisions {
        let mut midpoints: HashMap<(u32, u32), u32> = HashMap::new();
        let mut mid = |a: u32, b: u32, verts: &mut Vec<Vector3<f64>>| -> u32 {
            let key = (a.min(b), a.max(b));
            *midpoints.entry(key).or_insert_with(|| {
                verts.push(((verts[a as usize] + verts[b as usize]) * 0.5).normalize());
                (verts.len() - 1) as u32
            })
        };
        let mut next = Vec::with_capacity(faces.len() * 4);
        for [a, b, c] in faces {
            let ab = mid(a, b, &mut verts);
            let bc = mid(b, c, &mut verts);
            let ca = mid(c, a, &mut verts);
            next.extend_from_slice(&[[a, ab, ca], [b, bc, ab], [c, ca, bc], [ab, bc, ca]]);
        }
        faces = next;
    }
    TriangleMesh {
        vertices: verts.iter().map(|v| (v * radius).cast()).collect(),
        faces,
        vertex_colors: None,
        face_labels: None,
    }
}

/// Axis-aligned box `[min, max]` split into `subdiv x subdiv` quads per side, outward winding.
pub fn cuboid(min: Vector3<f64>, max: Vector3<f64>, subdiv: usize) -> TriangleMesh {
    let s = subdiv.max(1);
    let mut index: HashMap<[usize; 3], u32> = HashMap::new();
    let mut vertices = Vec::new();
    let mut faces = Vec::new();
    let mut vid = |g: [usize; 3], vertices: &mut Vec<Vector3<f32>>| -> u32 {
        *index.entry(g).or_insert_with(|| {
            let p = Vector3::new(
                min.x + (max.x - min.x) * g[0] as f64 / s as f64,
                min.y + (max.y - min.y) * g[1] as f64 / s as f64,
                min.z + (max.z - min.z) * g[2] as f64 / s as f64,
            );
            vertices.push(p.cast());
            (vertices.len() - 1) as u32
        })
    };
    // (fixed axis, fixed value, u axis, v axis) chosen so u x v points outward
    let sides = [
        (0, 0, 2, 1),
        (0, s, 1, 2),
        (1, 0, 0, 2),
        (1, s, 2, 0),
        (2, 0, 1, 0),
        (2, s, 0, 1),
    ];
    for (axis, value, ua, va) in sides {
        for i in 0..s {
            for j in 0..s {
                let corner = |di: usize, dj: usize| {
                    let mut g = [0usize; 3];
                    g[axis] = value;
                    g[ua] = i + di;
                    g[va] = j + dj;
                    g
                };
                let a = vid(corner(0, 0), &mut vertices);
                let b = vid(corner(1, 0), &mut vertices);
                let c = vid(corner(1, 1), &mut vertices);
                let d = vid(corner(0, 1), &mut vertices);
                faces.push([a, b, c]);
                faces.push([a, c, d]);
            }
        }
    }
    TriangleMesh {
        vertices,
        faces,
        vertex_colors: None,
        face_labels: None,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn shapes_are_closed_and_outward() {
        let s = icosphere(2.0, 3);
        assert!(s.is_watertight());
        assert!(s.signed_volume() > 0.0);
        let c = cuboid(Vector3::zeros(), Vector3::new(1.0, 2.0, 3.0), 3);
        assert!(c.is_watertight());
        assert!((c.signed_volume() - 6.0).abs() < 1e-9);
        assert!((c.surface_area() - 22.0).abs() < 1e-9);
    }
}
