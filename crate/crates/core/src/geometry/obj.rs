//! Wavefront OBJ with `v`, `vn` and `f` records only.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use nalgebra::Vector3;

use super::mesh::TriangleMesh;
use crate::error::{Error, Result};

/// Serializes vertices, area-weighted vertex normals and triangles. Colors and labels are dropped.
pub fn obj_string(mesh: &TriangleMesh) -> String {
    let mut s = String::with_capacity(mesh.vertices.len() * 64 + mesh.faces.len() * 24);
    for v in &mesh.vertices {
        let _ = writeln!(s, "v {} {} {}", v.x, v.y, v.z);
    }
    for n in mesh.vertex_normals() {
        let _ = writeln!(s, "vn {} {} {}", n.x as f32, n.y as f32, n.z as f32);
    }
    for f in &mesh.faces {
        let (a, b, c) = (f[0] + 1, f[1] + 1, f[2] + 1);
        let _ = writeln!(s, "f {a}//{a} {b}//{b} {c}//{c}");
    }
    s
}

pub fn write_obj(mesh: &TriangleMesh, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, obj_string(mesh)).map_err(|e| Error::file(path, e))
}

pub fn parse_obj(text: &str) -> Result<TriangleMesh> {
    let mut vertices = Vec::new();
    let mut faces = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let loc = || format!("line {}", i + 1);
        let mut tok = line.split_whitespace();
        match tok.next() {
            Some("v") => {
                let c: Vec<f32> = tok
                    .take(3)
                    .map(|t| t.parse::<f32>().map_err(|_| Error::parse(loc(), "invalid vertex coordinate")))
                    .collect::<Result<_>>()?;
                if c.len() != 3 {
                    return Err(Error::parse(loc(), "vertex needs three coordinates"));
                }
                vertices.push(Vector3::new(c[0], c[1], c[2]));
            }
            Some("f") => {
                let idx: Vec<u32> = tok
                    .map(|t| {
                        let first = t.split('/').next().unwrap_or("");
                        let v: i64 = first.parse().map_err(|_| Error::parse(loc(), "invalid face index"))?;
                        let v = if v < 0 { vertices.len() as i64 + v } else { v - 1 };
                        u32::try_from(v).map_err(|_| Error::parse(loc(), "face index out of range"))
                    })
                    .collect::<Result<_>>()?;
                if idx.len() < 3 {
                    return Err(Error::parse(loc(), "face with fewer than 3 vertices"));
                }
                for k in 1..idx.len() - 1 {
                    faces.push([idx[0], idx[k], idx[k + 1]]);
                }
            }
            _ => {}
        }
    }
    TriangleMesh::new(vertices, faces)
}

pub fn read_obj(path: impl AsRef<Path>) -> Result<TriangleMesh> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::file(path, e))?;
    parse_obj(&text)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::shapes;

    #[test]
    fn obj_round_trip_keeps_geometry_and_drops_labels() {
        let mesh = shapes::icosphere(1.0, 1);
        let labeled = mesh.clone().with_face_labels(vec![2; mesh.faces.len()]).unwrap();
        let text = obj_string(&labeled);
        assert!(text.lines().any(|l| l.starts_with("vn ")));
        let back = parse_obj(&text).unwrap();
        assert_eq!(back.vertices, mesh.vertices);
        assert_eq!(back.faces, mesh.faces);
        assert!(back.face_labels.is_none());
    }

    #[test]
    fn bad_face_index_is_a_parse_error() {
        assert!(matches!(parse_obj("v 0 0 0\nf 1 x 2\n"), Err(Error::Parse { .. })));
    }
}
