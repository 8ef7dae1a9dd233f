//! Reposes an avatar into poses it was not trained on, meshes and colors the result
//! and compares it with the ground-truth scans.
//!
//! Usage: `cargo run --release --example repose_avatar [avatar.spav] [out_dir]`
//!
//! Without a bundle, a small avatar is trained first (about a minute).

use point_avatar::appearance::{IdwMode, DEFAULT_K};
use point_avatar::geometry::{write_cloud_ply, write_mesh_ply, write_obj, PlyFormat};
use point_avatar::pipeline::{evaluate_pose, generate_subject, run_pipeline, Avatar, EvalConfig, TrainConfig};

fn main() -> point_avatar::Result<()> {
    let args: Vec<String> = std::env::args().collect();
    let subject = generate_subject(1, 40)?;
    let cfg = TrainConfig { seed: 1, ..TrainConfig::desk() };
    let avatar = match args.get(1) {
        Some(path) => Avatar::load(path)?,
        None => {
            let quick = TrainConfig {
                epochs: 3,
                samples: 2048,
                ..cfg.clone()
            };
            run_pipeline(&subject, &quick)?.avatar
        }
    };
    let out = args.get(2);
    if let Some(dir) = out {
        std::fs::create_dir_all(dir).map_err(|e| point_avatar::Error::file(dir, e))?;
    }
    for i in subject.held_out_poses() {
        let (mesh, report) = evaluate_pose(&avatar, &subject, i, &cfg, &EvalConfig::default())?;
        println!(
            "pose {i}: CD {:.3} mm, CD-MAX {:.1} mm, NC {:.4}, IoU {}, watertight {}",
            report.all.cd,
            report.all.cd_max,
            report.all.nc,
            report.iou.map_or("-".into(), |v| format!("{v:.3}")),
            mesh.is_watertight()
        );
        if let Some(dir) = out {
            let posed = avatar.repose(&subject.poses[i])?;
            write_cloud_ply(&posed.cloud, format!("{dir}/posed_{i:03}.ply"), PlyFormat::BinaryLittleEndian)?;
            write_obj(&mesh, format!("{dir}/mesh_{i:03}.obj"))?;
            if avatar.has_appearance() {
                let colored = avatar.color_mesh(&mesh, &posed.cloud, DEFAULT_K, IdwMode::Inverse)?;
                write_mesh_ply(&colored, format!("{dir}/colored_{i:03}.ply"), PlyFormat::BinaryLittleEndian)?;
            }
        }
    }
    Ok(())
}
