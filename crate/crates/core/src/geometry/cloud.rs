use nalgebra::Vector3;

use crate::error::{Error, Result};

/// Allowed deviation of a stored normal from unit length.
pub const NORMAL_TOLERANCE: f64 = 1e-6;

/// Oriented point set: positions with unit normals, optionally colored and labeled.
///
/// Coordinates are stored as `f32`; use [`OrientedPointCloud::positions_f64`] and
/// friends when doing loss or gradient math.
#[derive(Debug, Clone, PartialEq)]
pub struct OrientedPointCloud {
    positions: Vec<Vector3<f32>>,
    normals: Vec<Vector3<f32>>,
    colors: Option<Vec<[f32; 3]>>,
    labels: Option<Vec<u8>>,
}

impl OrientedPointCloud {
    /// Builds a cloud, normalizing every normal. Zero or non-finite normals are rejected.
    pub fn new(positions: Vec<Vector3<f32>>, normals: Vec<Vector3<f32>>) -> Result<Self> {
        if positions.len() != normals.len() {
            return Err(Error::DimensionMismatch(format!(
                "{} positions but {} normals",
                positions.len(),
                normals.len()
            )));
        }
        let normals = normals
            .into_iter()
            .enumerate()
            .map(|(i, n)| {
                normalize_f32(&n).ok_or_else(|| Error::NonFinite(format!("normal {i} is degenerate")))
            })
            .collect::<Result<Vec<_>>>()?;
        if let Some(i) = positions.iter().position(|p| !p.iter().all(|c| c.is_finite())) {
            return Err(Error::NonFinite(format!("position {i}")));
        }
        Ok(Self {
            positions,
            normals,
            colors: None,
            labels: None,
        })
    }

    /// Builds a cloud from `f64` data (rounded to `f32` storage).
    pub fn from_f64(positions: &[Vector3<f64>], normals: &[Vector3<f64>]) -> Result<Self> {
        Self::new(
            positions.iter().map(|p| p.cast::<f32>()).collect(),
            normals.iter().map(|n| normalize_f64(n).cast::<f32>()).collect(),
        )
    }

    pub fn with_colors(mut self, colors: Vec<[f32; 3]>) -> Result<Self> {
        if colors.len() != self.positions.len() {
            return Err(Error::DimensionMismatch(format!(
                "{} colors for {} points",
                colors.len(),
                self.positions.len()
            )));
        }
        self.colors = Some(colors);
        Ok(self)
    }

    pub fn with_labels(mut self, labels: Vec<u8>) -> Result<Self> {
        if labels.len() != self.positions.len() {
            return Err(Error::DimensionMismatch(format!(
                "{} labels for {} points",
                labels.len(),
                self.positions.len()
            )));
        }
        self.labels = Some(labels);
        Ok(self)
    }

    pub fn len(&self) -> usize {
        self.positions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.positions.is_empty()
    }

    pub fn positions(&self) -> &[Vector3<f32>] {
        &self.positions
    }

    pub fn normals(&self) -> &[Vector3<f32>] {
        &self.normals
    }

    pub fn colors(&self) -> Option<&[[f32; 3]]> {
        self.colors.as_deref()
    }

    pub fn labels(&self) -> Option<&[u8]> {
        self.labels.as_deref()
    }

    pub fn positions_f64(&self) -> Vec<Vector3<f64>> {
        self.positions.iter().map(|p| p.cast()).collect()
    }

    pub fn normals_f64(&self) -> Vec<Vector3<f64>> {
        self.normals.iter().map(|n| n.cast()).collect()
    }

    /// Axis-aligned bounds `(min, max)`; `None` for an empty cloud.
    pub fn bounds(&self) -> Option<(Vector3<f64>, Vector3<f64>)> {
        bounds_of(self.positions.iter().map(|p| p.cast()))
    }

    /// Keeps the points for which `keep` returns true, carrying attributes along.
    pub fn filter(&self, mut keep: impl FnMut(usize) -> bool) -> Self {
        let idx: Vec<usize> = (0..self.len()).filter(|&i| keep(i)).collect();
        Self {
            positions: idx.iter().map(|&i| self.positions[i]).collect(),
            normals: idx.iter().map(|&i| self.normals[i]).collect(),
            colors: self.colors.as_ref().map(|c| idx.iter().map(|&i| c[i]).collect()),
            labels: self.labels.as_ref().map(|l| idx.iter().map(|&i| l[i]).collect()),
        }
    }

    /// Same cloud with every position shifted by `t`.
    pub fn translated(&self, t: Vector3<f64>) -> Self {
        let mut out = self.clone();
        for p in &mut out.positions {
            *p = (p.cast::<f64>() + t).cast();
        }
        out
    }
}

pub(crate) fn bounds_of(
    mut points: impl Iterator<Item = Vector3<f64>>,
) -> Option<(Vector3<f64>, Vector3<f64>)> {
    let first = points.next()?;
    Some(points.fold((first, first), |(lo, hi), p| (lo.inf(&p), hi.sup(&p))))
}

pub(crate) fn normalize_f64(v: &Vector3<f64>) -> Vector3<f64> {
    let n = v.norm();
    if n > 0.0 && n.is_finite() {
        v / n
    } else {
        *v
    }
}

fn normalize_f32(v: &Vector3<f32>) -> Option<Vector3<f32>> {
    let d = v.cast::<f64>();
    let n = d.norm();
    if n > 0.0 && n.is_finite() {
        Some((d / n).cast())
    } else {
        None
    }
}
