//! Builds a synthetic subject and checks its scans against the ground-truth skinning.
//!
//! Usage: `cargo run --release --example generate_subject [seed] [poses] [out_dir]`

use point_avatar::geometry::{write_mesh_ply, PlyFormat};
use point_avatar::pipeline::generate_subject;
use point_avatar::semantic::PartLabel;

fn main() -> point_avatar::Result<()> {
    let args: Vec<String> = std::env::args().collect();
    let seed = args.get(1).and_then(|s| s.parse().ok()).unwrap_or(1);
    let poses = args.get(2).and_then(|s| s.parse().ok()).unwrap_or(10);
    let subject = generate_subject(seed, poses)?;
    let mesh = &subject.template.mesh;
    println!(
        "template: {} vertices, {} faces, watertight {}",
        mesh.vertices.len(),
        mesh.faces.len(),
        mesh.is_watertight()
    );
    println!(
        "poses: {} training, {} held out",
        subject.training_poses().len(),
        subject.held_out_poses().len()
    );
    if let Some(labels) = &mesh.face_labels {
        for part in PartLabel::ALL {
            let count = labels.iter().filter(|&&l| l == part as u8).count();
            println!("  {:<10} {count} faces", part.name());
        }
    }
    for i in 1..subject.pose_count() {
        let body = subject.posed_body(i)?;
        let bump = subject.bump(i).iter().fold(0.0f64, |m, d| m.max(d.abs()));
        let moved = body
            .vertices
            .iter()
            .zip(&mesh.vertices)
            .map(|(a, b)| (a - b).norm())
            .fold(0.0f32, f32::max);
        println!("pose {i:2}: max vertex travel {moved:.3} m, max bump {:.2} mm", bump * 1e3);
    }
    if let Some(dir) = args.get(3) {
        std::fs::create_dir_all(dir).map_err(|e| point_avatar::Error::file(dir, e))?;
        write_mesh_ply(mesh, format!("{dir}/template.ply"), PlyFormat::BinaryLittleEndian)?;
        for (i, scan) in subject.scans.iter().enumerate() {
            write_mesh_ply(scan, format!("{dir}/scan_{i:03}.ply"), PlyFormat::BinaryLittleEndian)?;
        }
        subject.save(format!("{dir}/subject.spck"))?;
        println!("wrote {dir}");
    }
    Ok(())
}
