//! Part labels carried by points pinned to template faces.
//!
//! Each semantic point lives on one face of a labeled template mesh, addressed by
//! barycentric coordinates and a signed offset along the face normal. Alignment
//! moves points only within that local frame, so the face and label never change.

use std::fmt;
use std::fs;
use std::path::Path;
use std::str::FromStr;

use nalgebra::Vector3;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::deformation::{DeformOptions, DeformationModel};
use crate::error::{Error, Result};
use crate::geometry::ply::{PlyDocument, PlyElement, ScalarType};
use crate::geometry::{MeshSampler, OrientedPointCloud, PlyFormat, TriangleMesh};
use crate::losses::{chamfer, emd_loss, emd_match_with, AuctionConfig};
use crate::nn::AdamState;
use crate::skeleton::{PoseParams, SkinningWeights};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
#[repr(u8)]
pub enum PartLabel {
    Head = 0,
    Body = 1,
    LeftArm = 2,
    RightArm = 3,
    LeftHand = 4,
    RightHand = 5,
    LeftLeg = 6,
    RightLeg = 7,
}

impl PartLabel {
    pub const ALL: [PartLabel; 8] = [
        PartLabel::Head,
        PartLabel::Body,
        PartLabel::LeftArm,
        PartLabel::RightArm,
        PartLabel::LeftHand,
        PartLabel::RightHand,
        PartLabel::LeftLeg,
        PartLabel::RightLeg,
    ];

    pub fn from_u8(v: u8) -> Result<Self> {
        Self::ALL.get(v as usize).copied().ok_or(Error::InvalidLabel(v as u32))
    }

    pub fn name(self) -> &'static str {
        match self {
            PartLabel::Head => "head",
            PartLabel::Body => "body",
            PartLabel::LeftArm => "left_arm",
            PartLabel::RightArm => "right_arm",
            PartLabel::LeftHand => "left_hand",
            PartLabel::RightHand => "right_hand",
            PartLabel::LeftLeg => "left_leg",
            PartLabel::RightLeg => "right_leg",
        }
    }

    pub fn is_hand(self) -> bool {
        matches!(self, PartLabel::LeftHand | PartLabel::RightHand)
    }
}

impl fmt::Display for PartLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for PartLabel {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|l| l.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown part label '{s}'")))
    }
}

/// Template mesh with per-face parts and per-vertex reference skinning weights.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledTemplateMesh {
    pub mesh: TriangleMesh,
    pub face_labels: Vec<PartLabel>,
    pub vertex_weights: SkinningWeights,
}

impl LabeledTemplateMesh {
    pub fn face_count(&self, label: PartLabel) -> usize {
        self.face_labels.iter().filter(|&&l| l == label).count()
    }

    /// Surface area per part, indexed by label value.
    pub fn part_areas(&self) -> [f64; 8] {
        let mut out = [0.0; 8];
        for (f, l) in self.face_labels.iter().enumerate() {
            out[*l as usize] += self.mesh.face_area(f);
        }
        out
    }
}

/// Majority vote of the three vertex labels; three-way ties take the lowest label.
pub fn label_faces(
    mesh: &TriangleMesh,
    vertex_labels: &[Option<PartLabel>],
    vertex_weights: SkinningWeights,
) -> Result<LabeledTemplateMesh> {
    if let Some(i) = (0..mesh.vertices.len()).find(|&i| vertex_labels.get(i).copied().flatten().is_none()) {
        return Err(Error::UnlabeledVertex(i));
    }
    if vertex_weights.len() != mesh.vertices.len() {
        return Err(Error::DimensionMismatch(format!(
            "{} weight rows for {} vertices",
            vertex_weights.len(),
            mesh.vertices.len()
        )));
    }
    let face_labels: Vec<PartLabel> = mesh
        .faces
        .iter()
        .map(|f| {
            let l = f.map(|v| vertex_labels[v as usize].unwrap());
            if l[0] == l[1] || l[0] == l[2] {
                l[0]
            } else if l[1] == l[2] {
                l[1]
            } else {
                *l.iter().min().unwrap()
            }
        })
        .collect();
    let mesh = mesh
        .clone()
        .with_face_labels(face_labels.iter().map(|&l| l as u8).collect())?;
    Ok(LabeledTemplateMesh {
        mesh,
        face_labels,
        vertex_weights,
    })
}

/// Text file with one integer label (0-7) per line in vertex order.
pub fn read_vertex_labels(path: impl AsRef<Path>) -> Result<Vec<Option<PartLabel>>> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::file(path, e))?;
    parse_vertex_labels(&text)
}

pub fn parse_vertex_labels(text: &str) -> Result<Vec<Option<PartLabel>>> {
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| {
            let v: u32 = l
                .trim()
                .parse()
                .map_err(|_| Error::parse(format!("line {}", i + 1), format!("'{}' is not a label", l.trim())))?;
            u8::try_from(v)
                .map_err(|_| Error::InvalidLabel(v))
                .and_then(PartLabel::from_u8)
                .map(Some)
        })
        .collect()
}

pub fn write_vertex_labels(labels: &[PartLabel], path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let text: String = labels.iter().map(|&l| format!("{}\n", l as u8)).collect();
    fs::write(path, text).map_err(|e| Error::file(path, e))
}

/// Points attached to template faces, with optional appearance features and
/// routing ids used by composed avatars.
#[derive(Debug, Clone, PartialEq)]
pub struct SemanticPointSet {
    pub face_index: Vec<u32>,
    pub bary: Vec<[f64; 3]>,
    pub normal_offset: Vec<f64>,
    pub labels: Vec<PartLabel>,
    /// Template-space positions and normals evaluated from the attachments.
    pub positions: Vec<Vector3<f64>>,
    pub normals: Vec<Vector3<f64>>,
    /// Row-major `len x feature_dim`; empty until appearance training.
    pub features: Vec<f64>,
    pub feature_dim: usize,
    /// Geometry model that deforms each point.
    pub model_id: Vec<u16>,
    /// Decoder that turns each point's feature into a color.
    pub decoder_id: Vec<u16>,
}

/// Barycentric point plus normal offset on face `f`, and the face normal.
pub fn evaluate_attachment(mesh: &TriangleMesh, f: usize, bary: &[f64; 3], offset: f64) -> (Vector3<f64>, Vector3<f64>) {
    let [a, b, c] = mesh.face_corners(f);
    let n = mesh.face_normal(f);
    (a * bary[0] + b * bary[1] + c * bary[2] + n * offset, n)
}

impl SemanticPointSet {
    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn has_features(&self) -> bool {
        self.feature_dim > 0 && self.features.len() == self.len() * self.feature_dim
    }

    pub fn feature(&self, i: usize) -> &[f64] {
        &self.features[i * self.feature_dim..(i + 1) * self.feature_dim]
    }

    /// Number of points per label, indexed by label value.
    pub fn census(&self) -> [usize; 8] {
        let mut c = [0; 8];
        for l in &self.labels {
            c[*l as usize] += 1;
        }
        c
    }

    /// Re-evaluates cached positions from the attachments on `template`.
    pub fn refresh(&mut self, template: &TriangleMesh) {
        for i in 0..self.len() {
            let (p, n) = evaluate_attachment(template, self.face_index[i] as usize, &self.bary[i], self.normal_offset[i]);
            self.positions[i] = p;
            self.normals[i] = n;
        }
    }

    pub fn check(&self) -> Result<()> {
        let n = self.len();
        let lens = [
            self.face_index.len(),
            self.bary.len(),
            self.normal_offset.len(),
            self.positions.len(),
            self.normals.len(),
            self.model_id.len(),
            self.decoder_id.len(),
        ];
        if lens.iter().any(|&l| l != n) || (self.feature_dim > 0 && self.features.len() != n * self.feature_dim) {
            return Err(Error::DimensionMismatch(format!("semantic point arrays disagree: {lens:?} vs {n}")));
        }
        for (i, b) in self.bary.iter().enumerate() {
            if b.iter().any(|&v| v < -1e-12) || (b.iter().sum::<f64>() - 1.0).abs() > 1e-6 {
                return Err(Error::DimensionMismatch(format!("point {i} has barycentric {b:?}")));
            }
        }
        Ok(())
    }

    pub fn select(&self, rows: &[usize]) -> Self {
        let fd = self.feature_dim;
        Self {
            face_index: rows.iter().map(|&i| self.face_index[i]).collect(),
            bary: rows.iter().map(|&i| self.bary[i]).collect(),
            normal_offset: rows.iter().map(|&i| self.normal_offset[i]).collect(),
            labels: rows.iter().map(|&i| self.labels[i]).collect(),
            positions: rows.iter().map(|&i| self.positions[i]).collect(),
            normals: rows.iter().map(|&i| self.normals[i]).collect(),
            features: if fd > 0 {
                rows.iter().flat_map(|&i| self.feature(i).to_vec()).collect()
            } else {
                Vec::new()
            },
            feature_dim: fd,
            model_id: rows.iter().map(|&i| self.model_id[i]).collect(),
            decoder_id: rows.iter().map(|&i| self.decoder_id[i]).collect(),
        }
    }

    /// Concatenation; both sets must agree on the feature dimension.
    pub fn concat(&self, other: &Self) -> Result<Self> {
        if self.feature_dim != other.feature_dim {
            return Err(Error::DimensionMismatch(format!(
                "feature dims {} and {}",
                self.feature_dim, other.feature_dim
            )));
        }
        let mut out = self.clone();
        out.face_index.extend_from_slice(&other.face_index);
        out.bary.extend_from_slice(&other.bary);
        out.normal_offset.extend_from_slice(&other.normal_offset);
        out.labels.extend_from_slice(&other.labels);
        out.positions.extend_from_slice(&other.positions);
        out.normals.extend_from_slice(&other.normals);
        out.features.extend_from_slice(&other.features);
        out.model_id.extend_from_slice(&other.model_id);
        out.decoder_id.extend_from_slice(&other.decoder_id);
        Ok(out)
    }

    /// Template-space cloud with labels.
    pub fn template_cloud(&self) -> Result<OrientedPointCloud> {
        OrientedPointCloud::from_f64(&self.positions, &self.normals)?.with_labels(self.labels.iter().map(|&l| l as u8).collect())
    }
}

/// Area-weighted attachment of `n` points; offsets start at zero.
pub fn sample_semantic(template: &LabeledTemplateMesh, n: usize, seed: u64) -> Result<SemanticPointSet> {
    if n == 0 {
        return Err(Error::DimensionMismatch("sample count must be at least 1".into()));
    }
    let draws = MeshSampler::new(&template.mesh)?.draw_many(n, seed);
    let mut set = SemanticPointSet {
        face_index: draws.iter().map(|d| d.face as u32).collect(),
        bary: draws.iter().map(|d| d.bary).collect(),
        normal_offset: vec![0.0; n],
        labels: draws.iter().map(|d| template.face_labels[d.face]).collect(),
        positions: vec![Vector3::zeros(); n],
        normals: vec![Vector3::zeros(); n],
        features: Vec::new(),
        feature_dim: 0,
        model_id: vec![0; n],
        decoder_id: vec![0; n],
    };
    set.refresh(&template.mesh);
    Ok(set)
}

/// Euclidean projection onto the probability simplex.
pub fn project_simplex(v: [f64; 3]) -> [f64; 3] {
    let mut u = v;
    u.sort_by(|a, b| b.total_cmp(a));
    let mut css = 0.0;
    let mut theta = 0.0;
    for (k, &uk) in u.iter().enumerate() {
        css += uk;
        let t = (css - 1.0) / (k + 1) as f64;
        if uk - t > 0.0 {
            theta = t;
        }
    }
    let mut out = v.map(|x| (x - theta).max(0.0));
    let s: f64 = out.iter().sum();
    out.iter_mut().for_each(|x| *x /= s);
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AlignConfig {
    pub iters: usize,
    /// Adam step for barycentric coordinates.
    pub lr: f64,
    /// Adam step for the normal offset (scene units).
    pub offset_lr: f64,
    pub max_offset: f64,
    /// Both step sizes decay geometrically to this fraction by the last iteration.
    pub final_lr_ratio: f64,
    pub chamfer_weight: f64,
    pub emd_weight: f64,
    pub auction: AuctionConfig,
    /// Final Chamfer above which a warning is logged.
    pub warn_chamfer: f64,
    pub seed: u64,
}

impl Default for AlignConfig {
    fn default() -> Self {
        Self {
            iters: 150,
            lr: 0.05,
            offset_lr: 5e-4,
            max_offset: 0.05,
            final_lr_ratio: 0.01,
            chamfer_weight: 5000.0,
            emd_weight: 5000.0,
            auction: AuctionConfig::indexed(),
            warn_chamfer: 1e-4,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AlignReport {
    /// Weighted loss at every iteration.
    pub losses: Vec<f64>,
    /// Running minimum of `losses`.
    pub best: Vec<f64>,
    pub initial_chamfer: f64,
    pub final_chamfer: f64,
    pub converged: bool,
}

/// Fits the attachments of `points` to a template scan with Chamfer + EMD.
///
/// Only barycentric coordinates (re-projected to the simplex) and bounded normal
/// offsets change; the best iterate is returned.
pub fn align_to_template_scan(
    points: &SemanticPointSet,
    template: &TriangleMesh,
    scan: &OrientedPointCloud,
    cfg: &AlignConfig,
) -> Result<(SemanticPointSet, AlignReport)> {
    points.check()?;
    if scan.is_empty() {
        return Err(Error::EmptyCloud);
    }
    let n = points.len();
    let mut order: Vec<usize> = (0..scan.len()).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(cfg.seed));
    let scan_pts = scan.positions_f64();
    let target: Vec<Vector3<f64>> = (0..n).map(|i| scan_pts[order[i % order.len()]]).collect();

    let corners: Vec<[Vector3<f64>; 3]> = points.face_index.iter().map(|&f| template.face_corners(f as usize)).collect();
    let fnormals: Vec<Vector3<f64>> = points.face_index.iter().map(|&f| template.face_normal(f as usize)).collect();
    let mut bary: Vec<f64> = points.bary.iter().flatten().copied().collect();
    let mut offset = points.normal_offset.clone();
    let eval = |bary: &[f64], offset: &[f64]| -> Vec<Vector3<f64>> {
        (0..n)
            .map(|i| {
                let c = &corners[i];
                c[0] * bary[3 * i] + c[1] * bary[3 * i + 1] + c[2] * bary[3 * i + 2] + fnormals[i] * offset[i]
            })
            .collect()
    };

    let mut opt_b = AdamState::new(cfg.lr);
    let mut opt_o = AdamState::new(cfg.offset_lr);
    let mut losses = Vec::with_capacity(cfg.iters);
    let mut best = Vec::with_capacity(cfg.iters);
    let mut best_state = (bary.clone(), offset.clone(), f64::INFINITY);
    let initial_chamfer = chamfer(&eval(&bary, &offset), &target)?.value;
    for it in 0..=cfg.iters {
        let x = eval(&bary, &offset);
        let ch = chamfer(&x, &target)?;
        let m = emd_match_with(&x, &target, &cfg.auction)?;
        let em = emd_loss(&m, &x, &target)?;
        let loss = cfg.chamfer_weight * ch.value + cfg.emd_weight * em.value;
        if loss < best_state.2 {
            best_state = (bary.clone(), offset.clone(), loss);
        }
        if it == cfg.iters {
            break;
        }
        let decay = cfg.final_lr_ratio.powf(it as f64 / cfg.iters.max(1) as f64);
        opt_b.lr = cfg.lr * decay;
        opt_o.lr = cfg.offset_lr * decay;
        losses.push(loss);
        best.push(best_state.2);
        let gx: Vec<Vector3<f64>> = ch
            .grad
            .iter()
            .zip(&em.grad)
            .map(|(a, b)| a * cfg.chamfer_weight + b * cfg.emd_weight)
            .collect();
        let gb: Vec<f64> = (0..n)
            .flat_map(|i| {
                let c = &corners[i];
                let g = [gx[i].dot(&c[0]), gx[i].dot(&c[1]), gx[i].dot(&c[2])];
                // tangent to the simplex, so Adam's per-coordinate scaling cannot
                // push all three weights the same way
                let m = (g[0] + g[1] + g[2]) / 3.0;
                g.map(|v| v - m)
            })
            .collect();
        let go: Vec<f64> = (0..n).map(|i| gx[i].dot(&fnormals[i])).collect();
        opt_b.step_slices(&mut [&mut bary], &[&gb])?;
        opt_o.step_slices(&mut [&mut offset], &[&go])?;
        for i in 0..n {
            let p = project_simplex([bary[3 * i], bary[3 * i + 1], bary[3 * i + 2]]);
            bary[3 * i..3 * i + 3].copy_from_slice(&p);
            offset[i] = offset[i].clamp(-cfg.max_offset, cfg.max_offset);
        }
    }
    let (bary, offset, _) = best_state;
    let mut out = points.clone();
    out.bary = bary.chunks_exact(3).map(|c| [c[0], c[1], c[2]]).collect();
    out.normal_offset = offset;
    out.refresh(template);
    let final_chamfer = chamfer(&out.positions, &target)?.value;
    let converged = final_chamfer <= cfg.warn_chamfer;
    if !converged {
        log::warn!("alignment did not converge: chamfer {final_chamfer:.3e} > {:.1e}", cfg.warn_chamfer);
    }
    Ok((
        out,
        AlignReport {
            losses,
            best,
            initial_chamfer,
            final_chamfer,
            converged,
        },
    ))
}

/// Poses semantic points with one geometry model; labels ride along unchanged.
pub fn repose_semantic(points: &SemanticPointSet, model: &DeformationModel, pose: &PoseParams) -> Result<OrientedPointCloud> {
    let batch = model.deform_with(&points.positions, &points.normals, pose, DeformOptions::default())?;
    batch
        .posed_cloud()?
        .with_labels(points.labels.iter().map(|&l| l as u8).collect())
}

fn feature_name(k: usize) -> String {
    format!("f{k}")
}

/// PLY with positions, normals, attachments, labels, routing ids and features.
pub fn semantic_document(points: &SemanticPointSet, format: PlyFormat) -> PlyDocument {
    let n = points.len();
    let col = |f: &dyn Fn(usize) -> f64| (0..n).map(f).collect::<Vec<f64>>();
    let mut v = PlyElement::new("vertex", n);
    for (c, name) in ["x", "y", "z"].iter().enumerate() {
        v = v.scalar(name, ScalarType::F32, col(&|i| points.positions[i][c]));
    }
    for (c, name) in ["nx", "ny", "nz"].iter().enumerate() {
        v = v.scalar(name, ScalarType::F32, col(&|i| points.normals[i][c]));
    }
    v = v.scalar("face_index", ScalarType::U32, col(&|i| points.face_index[i] as f64));
    for (c, name) in ["b0", "b1", "b2"].iter().enumerate() {
        v = v.scalar(name, ScalarType::F32, col(&|i| points.bary[i][c]));
    }
    v = v
        .scalar("noff", ScalarType::F32, col(&|i| points.normal_offset[i]))
        .scalar("label", ScalarType::U8, col(&|i| points.labels[i] as u8 as f64))
        .scalar("model", ScalarType::U16, col(&|i| points.model_id[i] as f64))
        .scalar("decoder", ScalarType::U16, col(&|i| points.decoder_id[i] as f64));
    if points.has_features() {
        for k in 0..points.feature_dim {
            v = v.scalar(&feature_name(k), ScalarType::F32, col(&|i| points.feature(i)[k]));
        }
    }
    PlyDocument {
        format,
        comments: vec!["semantic point set".into()],
        elements: vec![v],
    }
}

pub fn write_semantic_ply(points: &SemanticPointSet, path: impl AsRef<Path>, format: PlyFormat) -> Result<()> {
    semantic_document(points, format).write(path)
}

pub fn read_semantic_ply(path: impl AsRef<Path>) -> Result<SemanticPointSet> {
    let doc = PlyDocument::read(path)?;
    let v = doc
        .element("vertex")
        .ok_or_else(|| Error::parse("header", "no vertex element"))?;
    let get = |name: &str| {
        v.get_scalar(name)
            .ok_or_else(|| Error::parse("header", format!("missing property '{name}'")))
    };
    let n = v.count;
    let (x, y, z) = (get("x")?, get("y")?, get("z")?);
    let (nx, ny, nz) = (get("nx")?, get("ny")?, get("nz")?);
    let (b0, b1, b2, noff) = (get("b0")?, get("b1")?, get("b2")?, get("noff")?);
    let face = get("face_index")?;
    let label = get("label")?;
    let opt_ids = |name: &str| v.get_scalar(name).map_or(vec![0; n], |c| c.iter().map(|&m| m as u16).collect());
    let mut feature_dim = 0;
    while v.get_scalar(&feature_name(feature_dim)).is_some() {
        feature_dim += 1;
    }
    let mut features = Vec::with_capacity(n * feature_dim);
    let cols: Vec<&[f64]> = (0..feature_dim).map(|k| v.get_scalar(&feature_name(k)).unwrap()).collect();
    for i in 0..n {
        features.extend(cols.iter().map(|c| c[i]));
    }
    let set = SemanticPointSet {
        face_index: face.iter().map(|&f| f as u32).collect(),
        bary: (0..n).map(|i| [b0[i], b1[i], b2[i]]).collect(),
        normal_offset: noff.to_vec(),
        labels: label
            .iter()
            .map(|&l| PartLabel::from_u8(l as u8))
            .collect::<Result<_>>()?,
        positions: (0..n).map(|i| Vector3::new(x[i], y[i], z[i])).collect(),
        normals: (0..n).map(|i| Vector3::new(nx[i], ny[i], nz[i])).collect(),
        features,
        feature_dim,
        model_id: opt_ids("model"),
        decoder_id: opt_ids("decoder"),
    };
    Ok(set)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::shapes::cuboid;
    use crate::geometry::sample_surface;
    use rand::Rng;

    fn labeled_cube() -> LabeledTemplateMesh {
        let mesh = cuboid(Vector3::zeros(), Vector3::repeat(1.0), 4);
        let labels: Vec<Option<PartLabel>> = mesh
            .vertices
            .iter()
            .map(|v| Some(if v.x < 0.5 { PartLabel::LeftArm } else { PartLabel::RightArm }))
            .collect();
        let w = SkinningWeights::one_hot(mesh.vertices.len(), 2, 0);
        label_faces(&mesh, &labels, w).unwrap()
    }

    #[test]
    fn label_votes() {
        let mesh = TriangleMesh::new(
            vec![Vector3::zeros(), Vector3::x(), Vector3::y(), Vector3::z()],
            vec![[0, 1, 2], [0, 1, 3]],
        )
        .unwrap();
        let w = SkinningWeights::one_hot(4, 1, 0);
        let all_head = vec![Some(PartLabel::Head); 4];
        let t = label_faces(&mesh, &all_head, w.clone()).unwrap();
        assert!(t.face_labels.iter().all(|&l| l == PartLabel::Head));
        let l = vec![
            Some(PartLabel::LeftArm),
            Some(PartLabel::LeftArm),
            Some(PartLabel::LeftHand),
            Some(PartLabel::Body),
        ];
        let t = label_faces(&mesh, &l, w.clone()).unwrap();
        assert_eq!(t.face_labels, vec![PartLabel::LeftArm, PartLabel::LeftArm]);
        let l = vec![Some(PartLabel::RightLeg), Some(PartLabel::LeftHand), Some(PartLabel::Head), None];
        assert!(matches!(label_faces(&mesh, &l, w.clone()), Err(Error::UnlabeledVertex(3))));
        let l = vec![Some(PartLabel::RightLeg), Some(PartLabel::LeftHand), Some(PartLabel::Head), Some(PartLabel::Head)];
        assert_eq!(label_faces(&mesh, &l, w).unwrap().face_labels[0], PartLabel::Head);
    }

    #[test]
    fn label_file_parsing() {
        let l = parse_vertex_labels("0\n7\n\n3\n").unwrap();
        assert_eq!(l, vec![Some(PartLabel::Head), Some(PartLabel::RightLeg), Some(PartLabel::RightArm)]);
        assert!(matches!(parse_vertex_labels("8\n"), Err(Error::InvalidLabel(8))));
        assert!(parse_vertex_labels("x\n").is_err());
        assert_eq!("left_hand".parse::<PartLabel>().unwrap(), PartLabel::LeftHand);
    }

    #[test]
    fn sampling_is_deterministic_and_consistent() {
        let t = labeled_cube();
        let a = sample_semantic(&t, 500, 3).unwrap();
        assert_eq!(a, sample_semantic(&t, 500, 3).unwrap());
        a.check().unwrap();
        let mut b = a.clone();
        b.refresh(&t.mesh);
        assert_eq!(a.positions, b.positions);
        let cloud = sample_surface(&t.mesh, 500, 3).unwrap();
        for (p, q) in a.positions.iter().zip(cloud.positions_f64()) {
            assert!((p - q).norm() < 1e-6);
        }
        for i in 0..a.len() {
            assert_eq!(a.labels[i], t.face_labels[a.face_index[i] as usize]);
        }
    }

    #[test]
    fn simplex_projection() {
        assert_eq!(project_simplex([0.2, 0.3, 0.5]), [0.2, 0.3, 0.5]);
        let p = project_simplex([1.5, -0.2, 0.1]);
        assert!(p.iter().all(|&v| v >= 0.0) && (p.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        assert_eq!(project_simplex([2.0, 0.0, 0.0]), [1.0, 0.0, 0.0]);
    }

    #[test]
    fn alignment_recovers_perturbed_attachments() {
        let t = labeled_cube();
        let pts = sample_semantic(&t, 400, 1).unwrap();
        let scan = pts.template_cloud().unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mut moved = pts.clone();
        for i in 0..moved.len() {
            let r: [f64; 3] = [rng.gen(), rng.gen(), rng.gen()];
            let s: f64 = r.iter().sum();
            moved.bary[i] = std::array::from_fn(|c| 0.5 * moved.bary[i][c] + 0.5 * r[c] / s);
            moved.normal_offset[i] = rng.gen_range(-0.02..0.02);
        }
        moved.refresh(&t.mesh);
        let cfg = AlignConfig {
            auction: AuctionConfig::default(),
            ..AlignConfig::default()
        };
        let (out, rep) = align_to_template_scan(&moved, &t.mesh, &scan, &cfg).unwrap();
        assert_eq!(out.labels, pts.labels);
        assert_eq!(out.face_index, pts.face_index);
        out.check().unwrap();
        assert!(rep.best.windows(2).all(|w| w[1] <= w[0]));
        assert!(rep.initial_chamfer > 1e-3);
        assert!(rep.final_chamfer < 1e-4, "{} -> {}", rep.initial_chamfer, rep.final_chamfer);
        assert!(rep.converged);
        assert!(out.normal_offset.iter().all(|o| o.abs() <= cfg.max_offset));
    }

    #[test]
    fn ply_round_trip() {
        let t = labeled_cube();
        let mut pts = sample_semantic(&t, 20, 2).unwrap();
        pts.feature_dim = 2;
        pts.features = (0..40).map(|i| i as f64 * 0.25).collect();
        pts.model_id[3] = 1;
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("s.ply");
        write_semantic_ply(&pts, &path, PlyFormat::BinaryLittleEndian).unwrap();
        let back = read_semantic_ply(&path).unwrap();
        assert_eq!(back.labels, pts.labels);
        assert_eq!(back.face_index, pts.face_index);
        assert_eq!(back.model_id, pts.model_id);
        assert_eq!(back.features, pts.features);
        for (a, b) in back.bary.iter().zip(&pts.bary) {
            assert!((a[0] - b[0]).abs() < 1e-6);
        }
    }
}
