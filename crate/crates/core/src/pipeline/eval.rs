//! Mesh-to-mesh evaluation: Chamfer distance, its maximum, normal consistency
//! and volumetric IoU, over the whole body and over hand regions.

use nalgebra::Vector3;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{MeshSampler, TriangleBvh, TriangleMesh};
use crate::semantic::PartLabel;

/// Scene units are meters; reported distances are millimeters.
pub const MM_PER_UNIT: f64 = 1000.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EvalConfig {
    /// Surface samples drawn from each mesh.
    pub samples: usize,
    /// Voxels along each axis of the IoU grid.
    pub iou_resolution: usize,
    pub seed: u64,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            samples: 20_000,
            iou_resolution: 128,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RegionMetrics {
    /// Symmetric mean point-to-surface distance, mm.
    pub cd: f64,
    /// Largest point-to-surface distance in either direction, mm.
    pub cd_max: f64,
    /// Mean cosine between sample normals and the normals of their closest faces.
    pub nc: f64,
    /// Samples from the predicted and the reference mesh that fell in the region.
    pub samples: [usize; 2],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub all: RegionMetrics,
    /// Absent when the reference carries no labels or no sample lands on a hand.
    pub hands: Option<RegionMetrics>,
    /// Absent when either mesh is open.
    pub iou: Option<f64>,
}

impl EvalReport {
    pub const CSV_HEADER: &'static str = "cd_mm,cd_max_mm,nc,iou,hands_cd_mm,hands_cd_max_mm,hands_nc";

    pub fn csv_row(&self) -> String {
        let opt = |v: Option<f64>| v.map_or(String::new(), |v| format!("{v:.6}"));
        format!(
            "{:.6},{:.6},{:.6},{},{},{},{}",
            self.all.cd,
            self.all.cd_max,
            self.all.nc,
            opt(self.iou),
            opt(self.hands.map(|h| h.cd)),
            opt(self.hands.map(|h| h.cd_max)),
            opt(self.hands.map(|h| h.nc)),
        )
    }

    /// Range checks every report must satisfy.
    pub fn check(&self) -> Result<()> {
        for r in std::iter::once(&self.all).chain(self.hands.as_ref()) {
            let ok = r.cd.is_finite() && r.cd >= 0.0 && r.cd_max >= r.cd && (-1.0..=1.0).contains(&r.nc);
            if !ok {
                return Err(Error::NonFinite(format!("report out of range: {r:?}")));
            }
        }
        match self.iou {
            Some(v) if !(0.0..=1.0).contains(&v) => Err(Error::NonFinite(format!("iou {v}"))),
            _ => Ok(()),
        }
    }
}

#[derive(Default)]
struct Accum {
    sum: [f64; 2],
    count: [usize; 2],
    max: f64,
    cos: f64,
}

impl Accum {
    fn add(&mut self, side: usize, d: f64, cos: f64) {
        self.sum[side] += d;
        self.count[side] += 1;
        self.max = self.max.max(d);
        self.cos += cos;
    }

    fn finish(&self) -> Option<RegionMetrics> {
        if self.count.contains(&0) {
            return None;
        }
        let mean = |s: usize| self.sum[s] / self.count[s] as f64;
        Some(RegionMetrics {
            cd: 0.5 * (mean(0) + mean(1)) * MM_PER_UNIT,
            cd_max: self.max * MM_PER_UNIT,
            nc: (self.cos / (self.count[0] + self.count[1]) as f64).clamp(-1.0, 1.0),
            samples: self.count,
        })
    }
}

/// Compares a predicted mesh with a reference.
///
/// Predicted samples take the label of the closest reference face, so the hand
/// split uses only the reference labels.
pub fn evaluate(pred: &TriangleMesh, gt: &TriangleMesh, hand_labels: &[PartLabel], cfg: &EvalConfig) -> Result<EvalReport> {
    if cfg.samples == 0 {
        return Err(Error::Config("samples must be positive".into()));
    }
    let pred_bvh = TriangleBvh::new(pred)?;
    let gt_bvh = TriangleBvh::new(gt)?;
    let is_hand = |face: usize| {
        gt.face_labels
            .as_ref()
            .is_some_and(|l| hand_labels.iter().any(|h| *h as u8 == l[face]))
    };
    let mut all = Accum::default();
    let mut hands = Accum::default();
    // side 0: predicted samples against the reference, side 1: the converse
    for (side, (from, onto, bvh)) in [(pred, gt, &gt_bvh), (gt, pred, &pred_bvh)].into_iter().enumerate() {
        let sampler = MeshSampler::new(from)?;
        for s in sampler.draw_many(cfg.samples, cfg.seed ^ side as u64) {
            let corners = from.face_corners(s.face);
            let p: Vector3<f64> = corners.iter().zip(s.bary).map(|(c, b)| c * b).sum();
            let hit = bvh.closest(&p);
            let cos = from.face_normal(s.face).dot(&onto.face_normal(hit.face));
            all.add(side, hit.distance, cos);
            let gt_face = if side == 0 { hit.face } else { s.face };
            if is_hand(gt_face) {
                hands.add(side, hit.distance, cos);
            }
        }
    }
    let iou = match volumetric_iou(pred, gt, cfg.iou_resolution) {
        Ok(v) => Some(v),
        Err(Error::OpenMesh) => None,
        Err(e) => return Err(e),
    };
    let report = EvalReport {
        all: all.finish().ok_or(Error::EmptyMesh)?,
        hands: hands.finish(),
        iou,
    };
    report.check()?;
    Ok(report)
}

/// Intersection over union of the enclosed volumes, voxelized on a shared grid by
/// crossing parity along vertical lines through voxel centers.
pub fn volumetric_iou(a: &TriangleMesh, b: &TriangleMesh, resolution: usize) -> Result<f64> {
    for m in [a, b] {
        if !m.is_watertight() {
            log::debug!("iou skipped: {} open edges", m.non_manifold_edges());
            return Err(Error::OpenMesh);
        }
    }
    if resolution == 0 {
        return Err(Error::Config("iou resolution must be positive".into()));
    }
    let (alo, ahi) = a.bounds().ok_or(Error::EmptyMesh)?;
    let (blo, bhi) = b.bounds().ok_or(Error::EmptyMesh)?;
    let (lo, hi) = (alo.inf(&blo), ahi.sup(&bhi));
    let cell = (hi - lo).map(|e| e.max(1e-12) / resolution as f64);
    let ga = occupancy(a, lo, cell, resolution)?;
    let gb = occupancy(b, lo, cell, resolution)?;
    let (mut inter, mut union) = (0usize, 0usize);
    for (x, y) in ga.iter().zip(&gb) {
        inter += (*x && *y) as usize;
        union += (*x || *y) as usize;
    }
    Ok(if union == 0 { 0.0 } else { inter as f64 / union as f64 })
}

fn occupancy(mesh: &TriangleMesh, lo: Vector3<f64>, cell: Vector3<f64>, r: usize) -> Result<Vec<bool>> {
    let bvh = TriangleBvh::new(mesh)?;
    let mut inside = vec![false; r * r * r];
    for j in 0..r {
        for i in 0..r {
            let x = lo.x + (i as f64 + 0.5) * cell.x;
            let y = lo.y + (j as f64 + 0.5) * cell.y;
            let hits = bvh.vertical_crossings(x, y);
            let mut h = 0;
            for k in 0..r {
                let z = lo.z + (k as f64 + 0.5) * cell.z;
                while h < hits.len() && hits[h] < z {
                    h += 1;
                }
                inside[i + r * (j + r * k)] = h % 2 == 1;
            }
        }
    }
    Ok(inside)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::bvh::closest_on_triangle;
    use crate::geometry::shapes::{cuboid, icosphere};

    #[test]
    fn identical_meshes() {
        let m = icosphere(0.5, 3);
        let r = evaluate(&m, &m, &[], &EvalConfig::default()).unwrap();
        assert!(r.all.cd < 1e-9 && r.all.cd_max < 1e-9, "{r:?}");
        assert!((r.all.nc - 1.0).abs() < 1e-9);
        assert_eq!(r.iou, Some(1.0));
        assert!(r.hands.is_none());
    }

    #[test]
    fn offset_cubes_iou_closed_form() {
        let a = cuboid(Vector3::zeros(), Vector3::repeat(1.0), 2);
        let b = cuboid(Vector3::new(0.5, 0.0, 0.0), Vector3::new(1.5, 1.0, 1.0), 2);
        let iou = volumetric_iou(&a, &b, 128).unwrap();
        assert!((iou - 1.0 / 3.0).abs() < 0.01, "{iou}");
    }

    #[test]
    fn open_mesh_has_no_iou() {
        let mut m = icosphere(0.5, 2);
        m.faces.pop();
        let r = evaluate(&m, &icosphere(0.5, 2), &[], &EvalConfig::default()).unwrap();
        assert!(r.iou.is_none());
    }

    #[test]
    fn chamfer_matches_brute_force_and_hands_split() {
        let gt = icosphere(1.0, 3);
        let labels: Vec<u8> = (0..gt.faces.len())
            .map(|f| if gt.face_corners(f)[0].x > 0.6 { PartLabel::LeftHand as u8 } else { 0 })
            .collect();
        let gt = gt.with_face_labels(labels).unwrap();
        let mut pred = icosphere(1.05, 2);
        for v in &mut pred.vertices {
            v.y *= 0.9;
        }
        let cfg = EvalConfig { samples: 4000, ..EvalConfig::default() };
        let r = evaluate(&pred, &gt, &[PartLabel::LeftHand, PartLabel::RightHand], &cfg).unwrap();
        let brute = |from: &TriangleMesh, onto: &TriangleMesh, seed: u64| {
            let cloud = MeshSampler::new(from).unwrap().draw_many(cfg.samples, seed);
            cloud
                .iter()
                .map(|s| {
                    let c = from.face_corners(s.face);
                    let p: Vector3<f64> = c.iter().zip(s.bary).map(|(c, b)| c * b).sum();
                    (0..onto.faces.len())
                        .map(|f| (closest_on_triangle(&p, &onto.face_corners(f)) - p).norm())
                        .fold(f64::INFINITY, f64::min)
                })
                .sum::<f64>()
                / cfg.samples as f64
        };
        let oracle = 0.5 * (brute(&pred, &gt, 1) + brute(&gt, &pred, 7)) * MM_PER_UNIT;
        assert!((r.all.cd - oracle).abs() < 0.02 * oracle, "{} vs {oracle}", r.all.cd);
        let h = r.hands.unwrap();
        assert!(h.samples[0] > 0 && h.samples[1] > 0 && h.samples[1] < cfg.samples / 4);
        assert!(r.all.cd_max >= r.all.cd && r.all.nc > 0.9);
        r.check().unwrap();
        let csv = r.csv_row();
        assert_eq!(csv.split(',').count(), EvalReport::CSV_HEADER.split(',').count());
    }
}
