//! Runs geometry training, label transfer and appearance training on a synthetic
//! subject, then meshes training and held-out poses and compares them with the scans.
//!
//! Usage: `cargo run --release --example avatar_pipeline [epochs] [out.spav]`

use std::time::Instant;

use point_avatar::pipeline::{compare_held_out, generate_subject, run_pipeline, EvalConfig, TrainConfig};

fn main() -> point_avatar::Result<()> {
    let args: Vec<String> = std::env::args().collect();
    let epochs = args.get(1).and_then(|s| s.parse().ok()).unwrap_or(10);
    let clock = Instant::now();
    let subject = generate_subject(1, 40)?;
    let generate = clock.elapsed().as_secs_f64();
    let cfg = TrainConfig { epochs, seed: 1, ..TrainConfig::desk() };
    let out = run_pipeline(&subject, &cfg)?;
    let t = &out.times;
    println!(
        "generate {generate:.1}s  geometry {:.1}s  transfer {:.1}s  appearance {:.1}s",
        t.geometry, t.transfer, t.appearance
    );
    println!(
        "alignment chamfer {:.3e} -> {:.3e}; color loss {:.3e} -> {:.3e}",
        out.align.initial_chamfer, out.align.final_chamfer, out.features.initial_loss, out.features.epoch_loss.last().copied().unwrap_or(f64::NAN)
    );
    let eval_start = Instant::now();
    let (train, held) = compare_held_out(&out.avatar, &subject, &cfg, &EvalConfig::default())?;
    println!("evaluation {:.1}s", eval_start.elapsed().as_secs_f64());
    for (name, r) in [("training", &train), ("held-out", &held)] {
        println!(
            "{name}: CD {:.3} mm  CD-MAX {:.2} mm  NC {:.4}  IoU {}",
            r.all.cd,
            r.all.cd_max,
            r.all.nc,
            r.iou.map_or("-".into(), |v| format!("{v:.4}"))
        );
    }
    println!("held-out / training CD {:.3}", held.all.cd / train.all.cd);
    println!("total {:.1}s", clock.elapsed().as_secs_f64());
    if let Some(path) = args.get(2) {
        out.avatar.save(path)?;
    }
    Ok(())
}
