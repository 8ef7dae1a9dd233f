//! Compares the auction matcher with an exact assignment and shows the cost of the
//! coarser stopping rule used during training.
//!
//! Usage: `cargo run --release --example emd_matching [n]`

use std::time::Instant;

use nalgebra::Vector3;
use point_avatar::geometry::shapes::icosphere;
use point_avatar::geometry::sample_surface;
use point_avatar::losses::{chamfer, emd_match, emd_match_with, AuctionConfig};

fn main() -> point_avatar::Result<()> {
    let n: usize = std::env::args().nth(1).and_then(|s| s.parse().ok()).unwrap_or(2048);
    let sphere = icosphere(0.5, 4);
    let a = sample_surface(&sphere, n, 1)?.positions_f64();
    for shift in [0.0, 0.02, 0.2] {
        let b: Vec<Vector3<f64>> = sample_surface(&sphere, n, 2)?
            .positions_f64()
            .into_iter()
            .map(|p| p + Vector3::new(shift, 0.0, 0.0))
            .collect();
        let t = Instant::now();
        let fine = emd_match(&a, &b)?;
        let fine_s = t.elapsed().as_secs_f64();
        let t = Instant::now();
        let coarse = emd_match_with(&a, &b, &AuctionConfig::indexed())?;
        let coarse_s = t.elapsed().as_secs_f64();
        println!(
            "shift {shift:.2} m: chamfer {:.3e}, matched distance {:.5} ({fine_s:.2}s), training rule {:.5} ({coarse_s:.2}s), ratio {:.5}",
            chamfer(&a, &b)?.value,
            fine.cost,
            coarse.cost,
            coarse.cost / fine.cost
        );
    }
    Ok(())
}
