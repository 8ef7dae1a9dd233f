//! Meshes oriented point samples of a sphere and a box with the spectral Poisson solver.
//!
//! Usage: `cargo run --release --example reconstruct_shapes [resolution] [out_dir]`

use std::time::Instant;

use nalgebra::Vector3;
use point_avatar::geometry::shapes::{cuboid, icosphere};
use point_avatar::geometry::{sample_surface, write_obj, TriangleMesh};
use point_avatar::recon::{reconstruct, ReconConfig};

fn run(name: &str, shape: &TriangleMesh, cfg: &ReconConfig, out: Option<&String>) -> point_avatar::Result<TriangleMesh> {
    let cloud = sample_surface(shape, 10_000, 3)?;
    let start = Instant::now();
    let mesh = reconstruct(&cloud, cfg)?;
    println!(
        "{name}: {} faces in {:.2}s, watertight {}",
        mesh.faces.len(),
        start.elapsed().as_secs_f64(),
        mesh.is_watertight()
    );
    if let Some(dir) = out {
        write_obj(&mesh, format!("{dir}/{name}.obj"))?;
    }
    Ok(mesh)
}

fn main() -> point_avatar::Result<()> {
    let args: Vec<String> = std::env::args().collect();
    let cfg = ReconConfig {
        resolution: args.get(1).and_then(|s| s.parse().ok()).unwrap_or(128),
        ..ReconConfig::default()
    };
    let out = args.get(2);
    if let Some(dir) = out {
        std::fs::create_dir_all(dir).map_err(|e| point_avatar::Error::file(dir, e))?;
    }
    let sphere = run("sphere", &icosphere(1.0, 5), &cfg, out)?;
    let radial: f64 =
        sphere.vertices.iter().map(|v| (v.cast::<f64>().norm() - 1.0).abs()).sum::<f64>() / sphere.vertices.len() as f64;
    println!("  mean radial error {:.3}%", radial * 100.0);
    let b = run("box", &cuboid(Vector3::new(-0.5, -0.3, -0.2), Vector3::new(0.5, 0.3, 0.2), 8), &cfg, out)?;
    let (lo, hi) = b.vertices.iter().fold(
        (Vector3::repeat(f32::MAX), Vector3::repeat(f32::MIN)),
        |(lo, hi), v| (lo.inf(v), hi.sup(v)),
    );
    println!("  extent {:.3} x {:.3} x {:.3} (true 1.0 x 0.6 x 0.4)", hi.x - lo.x, hi.y - lo.y, hi.z - lo.z);
    Ok(())
}
