//! Oriented points to watertight mesh: normal splatting, spectral Poisson solve,
//! iso-level selection and marching cubes.

mod grid;
mod marching;
mod spectral;
mod tables;

use std::time::Instant;

use serde::{Deserialize, Serialize};

pub use grid::{GridFrame, ScalarGrid, VectorGrid};
pub use marching::marching_cubes;
pub use spectral::{grid_totals, poisson_solve, rasterize_normals, select_isolevel};

use crate::error::{Error, Result};
use crate::geometry::{OrientedPointCloud, TriangleMesh};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ReconConfig {
    pub resolution: usize,
    /// Gaussian smoothing std in cells.
    pub sigma: f64,
    /// Cube side relative to the largest extent of the cloud.
    pub padding: f64,
}

impl Default for ReconConfig {
    fn default() -> Self {
        Self {
            resolution: 128,
            sigma: 2.0,
            padding: 1.2,
        }
    }
}

/// Indicator grid for a cloud, with smoothing and solve fused in one spectral pass.
pub fn indicator(cloud: &OrientedPointCloud, cfg: &ReconConfig) -> Result<ScalarGrid> {
    let (lo, hi) = cloud.bounds().ok_or(Error::EmptyCloud)?;
    let frame = GridFrame::enclosing(lo, hi, cfg.resolution, cfg.padding)?;
    let raw = spectral::splat(cloud, &frame)?;
    Ok(spectral::solve_smoothed(&raw, Some(cfg.sigma)))
}

/// Full meshing pipeline.
pub fn reconstruct(cloud: &OrientedPointCloud, cfg: &ReconConfig) -> Result<TriangleMesh> {
    let start = Instant::now();
    let chi = indicator(cloud, cfg)?;
    let iso = select_isolevel(&chi, cloud)?;
    let mesh = marching_cubes(&chi, iso)?;
    log::info!(
        "reconstructed {} points into {} faces at R={} in {:.3}s",
        cloud.len(),
        mesh.faces.len(),
        cfg.resolution,
        start.elapsed().as_secs_f64()
    );
    Ok(mesh)
}
