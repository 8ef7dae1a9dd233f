//! Samples labeled points on the template, aligns them to the template scan and
//! reports the label census and alignment progress.
//!
//! Usage: `cargo run --release --example semantic_transfer [points] [out.ply]`

use point_avatar::geometry::{write_cloud_ply, PlyFormat};
use point_avatar::pipeline::{generate_subject, transfer, TrainConfig};
use point_avatar::semantic::PartLabel;

fn main() -> point_avatar::Result<()> {
    let args: Vec<String> = std::env::args().collect();
    let subject = generate_subject(1, 4)?;
    let cfg = TrainConfig {
        semantic_points: args.get(1).and_then(|s| s.parse().ok()).unwrap_or(4096),
        seed: 1,
        ..TrainConfig::desk()
    };
    let (points, report) = transfer(&subject, &cfg)?;
    println!(
        "alignment chamfer {:.3e} -> {:.3e} over {} iterations",
        report.initial_chamfer,
        report.final_chamfer,
        report.losses.len()
    );
    let census = points.census();
    for part in PartLabel::ALL {
        println!("  {:<10} {}", part.name(), census[part as usize]);
    }
    if let Some(path) = args.get(2) {
        write_cloud_ply(&points.template_cloud()?, path, PlyFormat::Ascii)?;
        println!("wrote {path}");
    }
    Ok(())
}
