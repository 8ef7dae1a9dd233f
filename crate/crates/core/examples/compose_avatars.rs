//! Trains two small avatars on different synthetic subjects and swaps parts between
//! them, once by exchanging points and once by exchanging textures.
//!
//! Usage: `cargo run --release --example compose_avatars [out_dir]`

use point_avatar::geometry::write_obj;
use point_avatar::pipeline::{generate_subject, run_pipeline, Avatar, ComposeConfig, ComposeMode, TrainConfig};
use point_avatar::recon::{reconstruct, ReconConfig};
use point_avatar::semantic::PartLabel;

fn quick_avatar(seed: u64) -> point_avatar::Result<Avatar> {
    let subject = generate_subject(seed, 8)?;
    let cfg = TrainConfig {
        seed,
        epochs: 3,
        samples: 2048,
        ..TrainConfig::desk()
    };
    Ok(run_pipeline(&subject, &cfg)?.avatar)
}

fn main() -> point_avatar::Result<()> {
    let out = std::env::args().nth(1);
    let host = quick_avatar(1)?;
    let donor = quick_avatar(2)?;
    let parts = [PartLabel::Head, PartLabel::LeftArm, PartLabel::RightArm];
    let pose = generate_subject(3, 2)?.poses[1].clone();
    for mode in [ComposeMode::Points, ComposeMode::Texture] {
        let composite = host.compose(&donor, &parts, mode, &ComposeConfig::default())?;
        println!(
            "{mode:?}: {} points, {} models, {} decoders",
            composite.points.len(),
            composite.models.len(),
            composite.appearances.len()
        );
        let census = composite.points.census();
        for part in PartLabel::ALL {
            let from_donor = (0..composite.points.len())
                .filter(|&i| composite.points.labels[i] == part && composite.points.decoder_id[i] as usize >= host.appearances.len())
                .count();
            println!("  {:<10} {:5} points, {from_donor:5} with donor texture", part.name(), census[part as usize]);
        }
        let posed = composite.repose(&pose)?;
        let mesh = reconstruct(&posed.cloud, &ReconConfig::default())?;
        println!("  reposed mesh: {} faces, watertight {}", mesh.faces.len(), mesh.is_watertight());
        if let Some(dir) = &out {
            std::fs::create_dir_all(dir).map_err(|e| point_avatar::Error::file(dir, e))?;
            write_obj(&mesh, format!("{dir}/composite_{mode:?}.obj").to_lowercase())?;
            composite.save(format!("{dir}/composite_{mode:?}.spav").to_lowercase())?;
        }
    }
    Ok(())
}
