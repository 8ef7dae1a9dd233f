use std::f64::consts::PI;
use std::sync::Arc;

use nalgebra::Vector3;
use rustfft::num_complex::Complex64;
use rustfft::{Fft, FftPlanner};

use super::grid::{GridFrame, ScalarGrid, VectorGrid};
use crate::error::{Error, Result};
use crate::geometry::OrientedPointCloud;

/// Separable 3-D FFT over a cubic periodic lattice.
struct Fft3 {
    r: usize,
    forward: Arc<dyn Fft<f64>>,
    inverse: Arc<dyn Fft<f64>>,
}

impl Fft3 {
    fn new(r: usize) -> Self {
        let mut planner = FftPlanner::new();
        Self {
            r,
            forward: planner.plan_fft_forward(r),
            inverse: planner.plan_fft_inverse(r),
        }
    }

    fn run(&self, data: &mut [Complex64], inverse: bool) {
        let r = self.r;
        let fft = if inverse { &self.inverse } else { &self.forward };
        let mut scratch = vec![Complex64::default(); fft.get_inplace_scratch_len()];
        // x lines are contiguous
        fft.process_with_scratch(data, &mut scratch);
        // y and z lines via gathered planes
        let mut plane = vec![Complex64::default(); r * r];
        for k in 0..r {
            for j in 0..r {
                for i in 0..r {
                    plane[i * r + j] = data[i + r * (j + r * k)];
                }
            }
            fft.process_with_scratch(&mut plane, &mut scratch);
            for j in 0..r {
                for i in 0..r {
                    data[i + r * (j + r * k)] = plane[i * r + j];
                }
            }
        }
        for j in 0..r {
            for k in 0..r {
                for i in 0..r {
                    plane[i * r + k] = data[i + r * (j + r * k)];
                }
            }
            fft.process_with_scratch(&mut plane, &mut scratch);
            for k in 0..r {
                for i in 0..r {
                    data[i + r * (j + r * k)] = plane[i * r + k];
                }
            }
        }
        if inverse {
            let s = 1.0 / (r * r * r) as f64;
            data.iter_mut().for_each(|v| *v *= s);
        }
    }
}

/// Signed integer frequency of FFT bin `k`.
fn signed_freq(k: usize, r: usize) -> f64 {
    if k <= r / 2 {
        k as f64
    } else {
        k as f64 - r as f64
    }
}

/// Per-axis Gaussian transfer factors for a std of `sigma` cells.
fn gaussian_factors(r: usize, sigma: f64) -> Vec<f64> {
    (0..r)
        .map(|k| {
            let w = 2.0 * PI * signed_freq(k, r) / r as f64;
            (-0.5 * sigma * sigma * w * w).exp()
        })
        .collect()
}

fn to_complex(v: &[f64]) -> Vec<Complex64> {
    v.iter().map(|&x| Complex64::new(x, 0.0)).collect()
}

/// Trilinear splat of the normals (no smoothing).
pub(super) fn splat(cloud: &OrientedPointCloud, frame: &GridFrame) -> Result<VectorGrid> {
    if cloud.is_empty() {
        return Err(Error::EmptyCloud);
    }
    let mut g = VectorGrid::zeros(*frame);
    for (p, n) in cloud.positions_f64().iter().zip(cloud.normals_f64()) {
        for (idx, w) in frame.stencil(p) {
            for c in 0..3 {
                g.values[c][idx] += w * n[c];
            }
        }
    }
    Ok(g)
}

/// Splats normals onto the lattice and smooths each component with a Gaussian of
/// `sigma` cells applied as a spectral multiplier.
pub fn rasterize_normals(cloud: &OrientedPointCloud, frame: &GridFrame, sigma: f64) -> Result<VectorGrid> {
    let raw = splat(cloud, frame)?;
    let r = frame.resolution;
    let fft = Fft3::new(r);
    let gauss = gaussian_factors(r, sigma);
    let mut out = VectorGrid::zeros(*frame);
    for c in 0..3 {
        let mut data = to_complex(&raw.values[c]);
        fft.run(&mut data, false);
        multiply_separable(&mut data, r, |i, j, k| Complex64::new(gauss[i] * gauss[j] * gauss[k], 0.0));
        fft.run(&mut data, true);
        out.values[c] = data.iter().map(|v| v.re).collect();
    }
    Ok(out)
}

fn multiply_separable(data: &mut [Complex64], r: usize, f: impl Fn(usize, usize, usize) -> Complex64) {
    for k in 0..r {
        for j in 0..r {
            for i in 0..r {
                data[i + r * (j + r * k)] *= f(i, j, k);
            }
        }
    }
}

/// Zero-mean periodic solution of `laplacian(chi) = div(v)`.
pub fn poisson_solve(v: &VectorGrid) -> ScalarGrid {
    solve_smoothed(v, None)
}

/// Spectral solve with an optional Gaussian pre-smoothing of `v` fused in.
pub(super) fn solve_smoothed(v: &VectorGrid, sigma: Option<f64>) -> ScalarGrid {
    let frame = v.frame;
    let r = frame.resolution;
    let fft = Fft3::new(r);
    let gauss = sigma.map(|s| gaussian_factors(r, s));
    let omega: Vec<f64> = (0..r).map(|k| 2.0 * PI * signed_freq(k, r) / frame.period()).collect();
    // derivative symbol with the Nyquist mode removed
    let deriv: Vec<f64> = (0..r).map(|k| if 2 * k == r { 0.0 } else { omega[k] }).collect();
    let mut rhs = vec![Complex64::default(); frame.len()];
    for c in 0..3 {
        let mut data = to_complex(&v.values[c]);
        fft.run(&mut data, false);
        for k in 0..r {
            for j in 0..r {
                for i in 0..r {
                    let idx = i + r * (j + r * k);
                    let d = [deriv[i], deriv[j], deriv[k]][c];
                    let g = gauss.as_ref().map_or(1.0, |g| g[i] * g[j] * g[k]);
                    rhs[idx] += Complex64::new(0.0, d * g) * data[idx];
                }
            }
        }
    }
    for k in 0..r {
        for j in 0..r {
            for i in 0..r {
                let idx = i + r * (j + r * k);
                let w2 = omega[i] * omega[i] + omega[j] * omega[j] + omega[k] * omega[k];
                rhs[idx] = if w2 == 0.0 { Complex64::default() } else { -rhs[idx] / w2 };
            }
        }
    }
    fft.run(&mut rhs, true);
    ScalarGrid {
        frame,
        values: rhs.iter().map(|v| v.re).collect(),
    }
}

/// Mean of the interpolated indicator over the input points.
pub fn select_isolevel(chi: &ScalarGrid, cloud: &OrientedPointCloud) -> Result<f64> {
    if cloud.is_empty() {
        return Err(Error::EmptyCloud);
    }
    let pts = cloud.positions_f64();
    Ok(pts.iter().map(|p| chi.sample(p)).sum::<f64>() / pts.len() as f64)
}

/// Total of each component over all nodes.
pub fn grid_totals(v: &VectorGrid) -> Vector3<f64> {
    Vector3::new(
        v.values[0].iter().sum(),
        v.values[1].iter().sum(),
        v.values[2].iter().sum(),
    )
}
