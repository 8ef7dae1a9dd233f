//! Trains the deformation model on a synthetic subject and reports point-level
//! quality on training and held-out poses.
//!
//! Usage: `cargo run --release --example train_geometry [epochs] [out.spck]`

use point_avatar::nn::Checkpoint;
use point_avatar::pipeline::{generate_subject, point_metrics, train_geometry_with, TrainConfig};

fn main() -> point_avatar::Result<()> {
    let args: Vec<String> = std::env::args().collect();
    let epochs = args.get(1).and_then(|s| s.parse().ok()).unwrap_or(10);
    let subject = generate_subject(1, 40)?;
    let cfg = TrainConfig { epochs, seed: 1, ..TrainConfig::desk() };
    let (model, _) = train_geometry_with(&subject, &cfg, |r, _| {
        println!("epoch {:3} total {:.4e} chamfer {:.3e} {:.1}s", r.epoch, r.total, r.raw_chamfer, r.seconds);
        Ok(())
    })?;
    let mean = |range: std::ops::Range<usize>| -> point_avatar::Result<(f64, f64)> {
        let n = range.len() as f64;
        let mut acc = (0.0, 0.0);
        for i in range {
            let m = point_metrics(&model, &subject, i, 4096, 7)?;
            acc.0 += m.chamfer / n;
            acc.1 += m.normal_consistency / n;
        }
        Ok(acc)
    };
    let (tc, tn) = mean(subject.training_poses())?;
    let (hc, hn) = mean(subject.held_out_poses())?;
    println!("training: chamfer {tc:.4e} nc {tn:.4}");
    println!("held-out: chamfer {hc:.4e} nc {hn:.4} (ratio {:.3})", hc / tc);
    if let Some(path) = args.get(2) {
        let mut ck = Checkpoint::new();
        model.write_checkpoint(&mut ck, "model")?;
        ck.save(path)?;
    }
    Ok(())
}
