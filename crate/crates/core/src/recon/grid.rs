use nalgebra::Vector3;

use crate::error::{Error, Result};

/// Cubic lattice of `resolution^3` nodes at `origin + cell * (i, j, k)`.
///
/// The spectral operators treat it as periodic with period `resolution * cell`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GridFrame {
    pub resolution: usize,
    pub origin: Vector3<f64>,
    pub cell: f64,
}

impl GridFrame {
    pub fn new(resolution: usize, origin: Vector3<f64>, cell: f64) -> Result<Self> {
        if !resolution.is_power_of_two() || !(32..=512).contains(&resolution) {
            return Err(Error::Config(format!("grid resolution {resolution} must be a power of two in 32..=512")));
        }
        if !(cell.is_finite() && cell > 0.0) || !origin.iter().all(|v| v.is_finite()) {
            return Err(Error::Config(format!("invalid grid cell {cell} / origin {origin:?}")));
        }
        Ok(Self { resolution, origin, cell })
    }

    /// Cube centred on the box `lo..hi` whose side is the largest extent times `padding`.
    pub fn enclosing(lo: Vector3<f64>, hi: Vector3<f64>, resolution: usize, padding: f64) -> Result<Self> {
        if padding <= 1.0 {
            return Err(Error::Config(format!("padding {padding} must exceed 1")));
        }
        let extent = (hi - lo).max();
        let side = if extent > 0.0 { extent * padding } else { 1.0 };
        let center = (lo + hi) * 0.5;
        let cell = side / resolution as f64;
        Self::new(resolution, center - Vector3::repeat(side * 0.5), cell)
    }

    pub fn len(&self) -> usize {
        self.resolution.pow(3)
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    /// Side length of the periodic domain.
    pub fn period(&self) -> f64 {
        self.resolution as f64 * self.cell
    }

    pub fn index(&self, i: usize, j: usize, k: usize) -> usize {
        i + self.resolution * (j + self.resolution * k)
    }

    pub fn node(&self, i: usize, j: usize, k: usize) -> Vector3<f64> {
        self.origin + Vector3::new(i as f64, j as f64, k as f64) * self.cell
    }

    /// Continuous lattice coordinates of a world point.
    pub fn to_lattice(&self, p: &Vector3<f64>) -> Vector3<f64> {
        (p - self.origin) / self.cell
    }

    /// The eight surrounding nodes (wrapped) and their trilinear weights.
    pub(crate) fn stencil(&self, p: &Vector3<f64>) -> [(usize, f64); 8] {
        let u = self.to_lattice(p);
        let r = self.resolution as i64;
        let base = u.map(f64::floor);
        let f = u - base;
        let wrap = |v: f64, d: i64| ((v as i64 + d).rem_euclid(r)) as usize;
        let mut out = [(0, 0.0); 8];
        for (c, slot) in out.iter_mut().enumerate() {
            let (dx, dy, dz) = ((c & 1) as i64, ((c >> 1) & 1) as i64, ((c >> 2) & 1) as i64);
            let w = (if dx == 1 { f.x } else { 1.0 - f.x })
                * (if dy == 1 { f.y } else { 1.0 - f.y })
                * (if dz == 1 { f.z } else { 1.0 - f.z });
            *slot = (self.index(wrap(base.x, dx), wrap(base.y, dy), wrap(base.z, dz)), w);
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScalarGrid {
    pub frame: GridFrame,
    pub values: Vec<f64>,
}

impl ScalarGrid {
    pub fn zeros(frame: GridFrame) -> Self {
        Self {
            values: vec![0.0; frame.len()],
            frame,
        }
    }

    pub fn from_fn(frame: GridFrame, f: impl Fn(Vector3<f64>) -> f64) -> Self {
        let r = frame.resolution;
        let mut values = Vec::with_capacity(frame.len());
        for k in 0..r {
            for j in 0..r {
                for i in 0..r {
                    values.push(f(frame.node(i, j, k)));
                }
            }
        }
        Self { frame, values }
    }

    pub fn get(&self, i: usize, j: usize, k: usize) -> f64 {
        self.values[self.frame.index(i, j, k)]
    }

    /// Periodic trilinear interpolation.
    pub fn sample(&self, p: &Vector3<f64>) -> f64 {
        self.frame.stencil(p).iter().map(|&(i, w)| w * self.values[i]).sum()
    }

    pub fn min_max(&self) -> (f64, f64) {
        self.values
            .iter()
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| (lo.min(v), hi.max(v)))
    }

    pub fn mean(&self) -> f64 {
        self.values.iter().sum::<f64>() / self.values.len() as f64
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct VectorGrid {
    pub frame: GridFrame,
    pub values: [Vec<f64>; 3],
}

impl VectorGrid {
    pub fn zeros(frame: GridFrame) -> Self {
        let z = vec![0.0; frame.len()];
        Self {
            values: [z.clone(), z.clone(), z],
            frame,
        }
    }

    pub fn from_fn(frame: GridFrame, f: impl Fn(Vector3<f64>) -> Vector3<f64>) -> Self {
        let mut g = Self::zeros(frame);
        let r = frame.resolution;
        for k in 0..r {
            for j in 0..r {
                for i in 0..r {
                    let v = f(frame.node(i, j, k));
                    let idx = frame.index(i, j, k);
                    for c in 0..3 {
                        g.values[c][idx] = v[c];
                    }
                }
            }
        }
        g
    }

    pub fn get(&self, i: usize, j: usize, k: usize) -> Vector3<f64> {
        let idx = self.frame.index(i, j, k);
        Vector3::new(self.values[0][idx], self.values[1][idx], self.values[2][idx])
    }

    pub fn scaled(&self, s: f64) -> Self {
        Self {
            frame: self.frame,
            values: self.values.clone().map(|c| c.into_iter().map(|v| v * s).collect()),
        }
    }
}
