//! Oriented point clouds, triangle meshes, surface sampling, nearest-neighbour
//! search and PLY/OBJ I/O.

mod cloud;
mod kdtree;
mod mesh;
pub mod bvh;
pub mod obj;
pub mod ply;
pub mod shapes;

pub use cloud::{OrientedPointCloud, NORMAL_TOLERANCE};
pub use bvh::{Closest, TriangleBvh};
pub use kdtree::KdIndex;
pub use mesh::{cloud_from_samples, sample_surface, MeshSampler, SurfaceSample, TriangleMesh};
pub use obj::{read_obj, write_obj};
pub use ply::{read_cloud, read_mesh, read_ply, write_cloud_ply, write_mesh_ply, PlyContent, PlyFormat};

pub(crate) use cloud::normalize_f64;
