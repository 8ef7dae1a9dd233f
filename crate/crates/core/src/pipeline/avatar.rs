//! A trained avatar: template meshes, geometry models, decoders and semantic points,
//! stored together in one SPAV file.

use std::path::Path;

use nalgebra::Vector3;

use super::compose::{compose, ComposeConfig, ComposeMode};
use crate::appearance::{idw_weights, AppearanceModel, IdwMode};
use crate::deformation::{DeformOptions, DeformationModel};
use crate::error::{Error, Result};
use crate::geometry::{KdIndex, OrientedPointCloud, TriangleMesh};
use crate::nn::Checkpoint;
use crate::semantic::{PartLabel, SemanticPointSet};
use crate::skeleton::PoseParams;

/// Points route to `models[model_id]` (attached to `templates[model_id]`) for geometry
/// and to `appearances[decoder_id]` for color.
#[derive(Debug, Clone, PartialEq)]
pub struct Avatar {
    pub templates: Vec<TriangleMesh>,
    pub models: Vec<DeformationModel>,
    pub appearances: Vec<AppearanceModel>,
    pub points: SemanticPointSet,
}

/// A posed avatar: oriented points with labels, plus colors when features are trained.
#[derive(Debug, Clone)]
pub struct PosedAvatar {
    pub cloud: OrientedPointCloud,
    pub colors: Option<Vec<[f64; 3]>>,
}

impl Avatar {
    pub fn new(
        template: TriangleMesh,
        model: DeformationModel,
        appearance: Option<AppearanceModel>,
        mut points: SemanticPointSet,
    ) -> Result<Self> {
        points.model_id = vec![0; points.len()];
        points.decoder_id = vec![0; points.len()];
        let avatar = Self {
            templates: vec![template],
            models: vec![model],
            appearances: appearance.into_iter().collect(),
            points,
        };
        avatar.check()?;
        Ok(avatar)
    }

    pub fn check(&self) -> Result<()> {
        self.points.check()?;
        if self.templates.len() != self.models.len() {
            return Err(Error::DimensionMismatch(format!(
                "{} templates for {} models",
                self.templates.len(),
                self.models.len()
            )));
        }
        for (i, (&m, &d)) in self.points.model_id.iter().zip(&self.points.decoder_id).enumerate() {
            let face_ok = (m as usize) < self.templates.len()
                && (self.points.face_index[i] as usize) < self.templates[m as usize].faces.len();
            if !face_ok {
                return Err(Error::DimensionMismatch(format!("point {i} routes to missing model {m}")));
            }
            if self.points.has_features() && d as usize >= self.appearances.len() && !self.appearances.is_empty() {
                return Err(Error::DimensionMismatch(format!("point {i} routes to missing decoder {d}")));
            }
        }
        if let Some(a) = self.appearances.iter().find(|a| self.points.has_features() && a.feature_dim() != self.points.feature_dim) {
            return Err(Error::DimensionMismatch(format!(
                "decoder expects {} features, points carry {}",
                a.feature_dim(),
                self.points.feature_dim
            )));
        }
        Ok(())
    }

    pub fn has_appearance(&self) -> bool {
        self.points.has_features() && !self.appearances.is_empty()
    }

    fn rows_by<F: Fn(usize) -> bool>(&self, pick: F) -> Vec<usize> {
        (0..self.points.len()).filter(|&i| pick(i)).collect()
    }

    /// Deforms every point with its own geometry model.
    pub fn repose(&self, pose: &PoseParams) -> Result<PosedAvatar> {
        let n = self.points.len();
        let mut pos = vec![Vector3::zeros(); n];
        let mut nrm = vec![Vector3::zeros(); n];
        for (m, model) in self.models.iter().enumerate() {
            let rows = self.rows_by(|i| self.points.model_id[i] as usize == m);
            if rows.is_empty() {
                continue;
            }
            let p: Vec<_> = rows.iter().map(|&i| self.points.positions[i]).collect();
            let q: Vec<_> = rows.iter().map(|&i| self.points.normals[i]).collect();
            let out = model.deform_with(&p, &q, pose, DeformOptions::default())?;
            for (k, &i) in rows.iter().enumerate() {
                pos[i] = out.x_d[k];
                nrm[i] = out.n_d[k];
            }
        }
        let labels = self.points.labels.iter().map(|&l| l as u8).collect();
        let mut cloud = OrientedPointCloud::from_f64(&pos, &nrm)?.with_labels(labels)?;
        let colors = if self.has_appearance() {
            let c = self.point_colors()?;
            cloud = cloud.with_colors(c.iter().map(|c| c.map(|v| v as f32)).collect())?;
            Some(c)
        } else {
            None
        };
        Ok(PosedAvatar { cloud, colors })
    }

    /// Decoded color of every point's own feature, clamped to the unit cube.
    pub fn point_colors(&self) -> Result<Vec<[f64; 3]>> {
        if !self.has_appearance() {
            return Err(Error::MissingColors);
        }
        let mut out = vec![[0.0; 3]; self.points.len()];
        for (d, app) in self.appearances.iter().enumerate() {
            let rows = self.rows_by(|i| self.points.decoder_id[i] as usize == d);
            if rows.is_empty() {
                continue;
            }
            let feats: Vec<f64> = rows.iter().flat_map(|&i| self.points.feature(i).to_vec()).collect();
            for (&i, c) in rows.iter().zip(app.decode_features(&feats)?) {
                out[i] = c.map(|v| v.clamp(0.0, 1.0));
            }
        }
        Ok(out)
    }

    /// Vertex colors from the features of nearby posed points.
    ///
    /// Neighbor features are averaged per decoder, decoded, and the decoded colors
    /// blended by each decoder's share of the inverse-distance weight.
    pub fn color_mesh(&self, mesh: &TriangleMesh, posed: &OrientedPointCloud, k: usize, mode: IdwMode) -> Result<TriangleMesh> {
        if !self.has_appearance() {
            return Err(Error::MissingColors);
        }
        let index = KdIndex::new(posed.positions_f64());
        let dim = self.points.feature_dim;
        let decoders = self.appearances.len();
        // per decoder: (vertex, weight share, mixed feature)
        let mut groups: Vec<(Vec<usize>, Vec<f64>, Vec<f64>)> = vec![Default::default(); decoders];
        for (v, p) in mesh.vertices.iter().enumerate() {
            let mut acc = vec![(0.0, vec![0.0; dim]); decoders];
            for (j, w) in idw_weights(&index, &p.cast(), k.min(index.len()), mode)? {
                let d = self.points.decoder_id[j] as usize;
                acc[d].0 += w;
                for (o, f) in acc[d].1.iter_mut().zip(self.points.feature(j)) {
                    *o += w * f;
                }
            }
            for (d, (w, f)) in acc.into_iter().enumerate() {
                if w > 0.0 {
                    groups[d].0.push(v);
                    groups[d].1.push(w);
                    groups[d].2.extend(f.iter().map(|x| x / w));
                }
            }
        }
        let mut colors = vec![[0.0f64; 3]; mesh.vertices.len()];
        for (d, (verts, shares, feats)) in groups.into_iter().enumerate() {
            if verts.is_empty() {
                continue;
            }
            for ((v, s), c) in verts.iter().zip(&shares).zip(self.appearances[d].decode_features(&feats)?) {
                for ch in 0..3 {
                    colors[*v][ch] += s * c[ch];
                }
            }
        }
        let colors = colors.into_iter().map(|c| c.map(|v| v.clamp(0.0, 1.0) as f32)).collect();
        mesh.clone().with_vertex_colors(colors)
    }

    /// New avatar with `parts` taken from `donor`; the donor's tables are appended.
    pub fn compose(&self, donor: &Avatar, parts: &[PartLabel], mode: ComposeMode, cfg: &ComposeConfig) -> Result<Avatar> {
        let (mo, dof) = (self.models.len() as u16, self.appearances.len() as u16);
        let mut shifted = donor.points.clone();
        shifted.model_id.iter_mut().for_each(|m| *m += mo);
        shifted.decoder_id.iter_mut().for_each(|d| *d += dof);
        let points = compose(&self.points, &shifted, parts, mode, cfg)?;
        let mut out = Avatar {
            templates: self.templates.iter().chain(&donor.templates).cloned().collect(),
            models: self.models.iter().chain(&donor.models).cloned().collect(),
            appearances: self.appearances.iter().chain(&donor.appearances).cloned().collect(),
            points,
        };
        out.prune();
        out.check()?;
        Ok(out)
    }

    /// Drops models and decoders no point routes to, renumbering the ids.
    pub fn prune(&mut self) {
        fn remap(ids: &mut [u16], len: usize) -> Vec<usize> {
            let mut used: Vec<usize> = ids.iter().map(|&i| i as usize).collect();
            used.sort_unstable();
            used.dedup();
            let mut table = vec![u16::MAX; len];
            for (new, &old) in used.iter().enumerate() {
                table[old] = new as u16;
            }
            ids.iter_mut().for_each(|i| *i = table[*i as usize]);
            used
        }
        if !self.points.is_empty() {
            let used = remap(&mut self.points.model_id, self.models.len());
            self.models = used.iter().map(|&i| self.models[i].clone()).collect();
            self.templates = used.iter().map(|&i| self.templates[i].clone()).collect();
            if !self.appearances.is_empty() {
                let used = remap(&mut self.points.decoder_id, self.appearances.len());
                self.appearances = used.iter().map(|&i| self.appearances[i].clone()).collect();
            }
        }
    }

    pub fn write_checkpoint(&self, ck: &mut Checkpoint) -> Result<()> {
        ck.put_json("avatar.counts", &[self.models.len(), self.appearances.len()])?;
        for (i, (t, m)) in self.templates.iter().zip(&self.models).enumerate() {
            put_mesh(ck, &format!("avatar.template.{i}"), t)?;
            m.write_checkpoint(ck, &format!("avatar.model.{i}"))?;
        }
        for (i, a) in self.appearances.iter().enumerate() {
            a.write_checkpoint(ck, &format!("avatar.appearance.{i}"))?;
        }
        put_points(ck, "avatar.points", &self.points)
    }

    pub fn read_checkpoint(ck: &Checkpoint) -> Result<Self> {
        let [models, appearances]: [usize; 2] = ck.get_json("avatar.counts")?;
        let mut out = Avatar {
            templates: Vec::with_capacity(models),
            models: Vec::with_capacity(models),
            appearances: Vec::with_capacity(appearances),
            points: get_points(ck, "avatar.points")?,
        };
        for i in 0..models {
            out.templates.push(get_mesh(ck, &format!("avatar.template.{i}"))?);
            out.models.push(DeformationModel::read_checkpoint(ck, &format!("avatar.model.{i}"))?);
        }
        for i in 0..appearances {
            out.appearances.push(AppearanceModel::read_checkpoint(ck, &format!("avatar.appearance.{i}"))?);
        }
        out.check()?;
        Ok(out)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut ck = Checkpoint::new();
        self.write_checkpoint(&mut ck)?;
        ck.save(path)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::read_checkpoint(&Checkpoint::load(path)?)
    }
}

/// Stores vertices, faces and, when present, colors and face labels under `prefix`.
pub fn put_mesh(ck: &mut Checkpoint, prefix: &str, mesh: &TriangleMesh) -> Result<()> {
    let v: Vec<f32> = mesh.vertices.iter().flat_map(|v| [v.x, v.y, v.z]).collect();
    let f: Vec<u32> = mesh.faces.iter().flatten().copied().collect();
    ck.put_f32(&format!("{prefix}.vertices"), &[mesh.vertices.len(), 3], &v);
    ck.put_u32(&format!("{prefix}.faces"), &[mesh.faces.len(), 3], &f);
    if let Some(c) = &mesh.vertex_colors {
        ck.put_f32(&format!("{prefix}.colors"), &[c.len(), 3], &c.concat());
    }
    if let Some(l) = &mesh.face_labels {
        ck.put_u8(&format!("{prefix}.labels"), l);
    }
    Ok(())
}

pub fn get_mesh(ck: &Checkpoint, prefix: &str) -> Result<TriangleMesh> {
    let (_, v) = ck.get_f32(&format!("{prefix}.vertices"))?;
    let (_, f) = ck.get_u32(&format!("{prefix}.faces"))?;
    let mut mesh = TriangleMesh::new(
        v.chunks_exact(3).map(|c| Vector3::new(c[0], c[1], c[2])).collect(),
        f.chunks_exact(3).map(|c| [c[0], c[1], c[2]]).collect(),
    )?;
    let colors = format!("{prefix}.colors");
    if ck.contains(&colors) {
        let (_, c) = ck.get_f32(&colors)?;
        mesh = mesh.with_vertex_colors(c.chunks_exact(3).map(|c| [c[0], c[1], c[2]]).collect())?;
    }
    let labels = format!("{prefix}.labels");
    if ck.contains(&labels) {
        mesh = mesh.with_face_labels(ck.get_u8(&labels)?.to_vec())?;
    }
    Ok(mesh)
}

/// Stores a semantic point set; positions are kept so a reload is bit-exact.
pub fn put_points(ck: &mut Checkpoint, prefix: &str, p: &SemanticPointSet) -> Result<()> {
    let n = p.len();
    let v3 = |v: &[Vector3<f64>]| v.iter().flat_map(|v| [v.x, v.y, v.z]).collect::<Vec<f64>>();
    ck.put_u32(&format!("{prefix}.face_index"), &[n], &p.face_index);
    ck.put_f64(&format!("{prefix}.bary"), &[n, 3], &p.bary.concat());
    ck.put_f64(&format!("{prefix}.normal_offset"), &[n], &p.normal_offset);
    ck.put_u8(&format!("{prefix}.labels"), &p.labels.iter().map(|&l| l as u8).collect::<Vec<_>>());
    ck.put_f64(&format!("{prefix}.positions"), &[n, 3], &v3(&p.positions));
    ck.put_f64(&format!("{prefix}.normals"), &[n, 3], &v3(&p.normals));
    ck.put_f64(&format!("{prefix}.features"), &[n, p.feature_dim], &p.features);
    let ids = |v: &[u16]| v.iter().map(|&x| x as u32).collect::<Vec<u32>>();
    ck.put_u32(&format!("{prefix}.model_id"), &[n], &ids(&p.model_id));
    ck.put_u32(&format!("{prefix}.decoder_id"), &[n], &ids(&p.decoder_id));
    Ok(())
}

pub fn get_points(ck: &Checkpoint, prefix: &str) -> Result<SemanticPointSet> {
    let key = |s: &str| format!("{prefix}.{s}");
    let v3 = |d: Vec<f64>| d.chunks_exact(3).map(|c| Vector3::new(c[0], c[1], c[2])).collect::<Vec<_>>();
    let ids = |d: Vec<u32>| -> Result<Vec<u16>> {
        d.into_iter()
            .map(|x| u16::try_from(x).map_err(|_| Error::Checkpoint(format!("routing id {x} out of range"))))
            .collect()
    };
    let (fshape, features) = ck.get_f64(&key("features"))?;
    let points = SemanticPointSet {
        face_index: ck.get_u32(&key("face_index"))?.1,
        bary: ck.get_f64(&key("bary"))?.1.chunks_exact(3).map(|c| [c[0], c[1], c[2]]).collect(),
        normal_offset: ck.get_f64(&key("normal_offset"))?.1,
        labels: ck
            .get_u8(&key("labels"))?
            .iter()
            .map(|&l| PartLabel::from_u8(l))
            .collect::<Result<_>>()?,
        positions: v3(ck.get_f64(&key("positions"))?.1),
        normals: v3(ck.get_f64(&key("normals"))?.1),
        features,
        feature_dim: fshape.get(1).copied().unwrap_or(0),
        model_id: ids(ck.get_u32(&key("model_id"))?.1)?,
        decoder_id: ids(ck.get_u32(&key("decoder_id"))?.1)?,
    };
    points.check()?;
    Ok(points)
}

#[cfg(test)]
mod tests {
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    use super::*;
    use crate::deformation::DeformationConfig;
    use crate::geometry::shapes::icosphere;
    use crate::nn::{AutoencoderSpec, ColorAutoencoder};
    use crate::pipeline::synthetic::random_pose;
    use crate::semantic::{label_faces, sample_semantic};
    use crate::skeleton::{Skeleton, SkinningWeights, DEFAULT_EXPRESSION_DIM};

    fn avatar(radius: f64, seed: u64) -> Avatar {
        let mesh = icosphere(radius, 2);
        let labels: Vec<Option<PartLabel>> = mesh
            .vertices
            .iter()
            .map(|v| Some(PartLabel::ALL[(v.x > 0.0) as usize + 2 * (v.y > 0.0) as usize + 4 * (v.z > 0.0) as usize]))
            .collect();
        let w = SkinningWeights::one_hot(mesh.vertices.len(), 1, 0);
        let template = label_faces(&mesh, &labels, w).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let skel = Skeleton::generic_body();
        let rest = crate::skeleton::PoseParams::zeros(skel.bone_count(), DEFAULT_EXPRESSION_DIM);
        let model = DeformationModel::new(DeformationConfig::desk(), skel, rest, DEFAULT_EXPRESSION_DIM, &mut rng).unwrap();
        let spec = AutoencoderSpec::desk();
        let appearance = AppearanceModel {
            autoencoder: ColorAutoencoder::new(spec.clone(), &mut rng).unwrap(),
        };
        let mut points = sample_semantic(&template, 500, seed).unwrap();
        points.feature_dim = spec.feature_dim;
        points.features = (0..points.len() * spec.feature_dim).map(|i| (i as f64 * 0.37 + seed as f64).sin()).collect();
        Avatar::new(template.mesh, model, Some(appearance), points).unwrap()
    }

    #[test]
    fn checkpoint_round_trip_is_exact() {
        let a = avatar(1.0, 1);
        let mut ck = Checkpoint::new();
        a.write_checkpoint(&mut ck).unwrap();
        let bytes = ck.to_bytes();
        let b = Avatar::read_checkpoint(&Checkpoint::from_bytes(&bytes).unwrap()).unwrap();
        assert_eq!(a, b);
        let mut again = Checkpoint::new();
        b.write_checkpoint(&mut again).unwrap();
        assert_eq!(again.to_bytes(), bytes);
    }

    #[test]
    fn composite_routes_each_point_to_its_own_model() {
        let (host, donor) = (avatar(1.0, 1), avatar(1.2, 2));
        let parts = [PartLabel::Head, PartLabel::Body];
        let c = host.compose(&donor, &parts, ComposeMode::Points, &ComposeConfig::default()).unwrap();
        assert_eq!((c.models.len(), c.appearances.len()), (2, 2));
        let pose = random_pose(&host.models[0].skeleton, DEFAULT_EXPRESSION_DIM, &mut ChaCha8Rng::seed_from_u64(3));
        let (ph, pd, pc) = (host.repose(&pose).unwrap(), donor.repose(&pose).unwrap(), c.repose(&pose).unwrap());
        let kept: Vec<usize> = (0..host.points.len()).filter(|&i| !parts.contains(&host.points.labels[i])).collect();
        let taken: Vec<usize> = (0..donor.points.len()).filter(|&i| parts.contains(&donor.points.labels[i])).collect();
        let expected: Vec<_> = kept
            .iter()
            .map(|&i| ph.cloud.positions()[i])
            .chain(taken.iter().map(|&i| pd.cloud.positions()[i]))
            .collect();
        assert_eq!(pc.cloud.positions(), &expected[..]);
        let (ch, cd, cc) = (host.point_colors().unwrap(), donor.point_colors().unwrap(), c.point_colors().unwrap());
        let colors: Vec<_> = kept.iter().map(|&i| ch[i]).chain(taken.iter().map(|&i| cd[i])).collect();
        assert_eq!(cc, colors);
    }

    #[test]
    fn unused_tables_are_pruned() {
        let (host, donor) = (avatar(1.0, 1), avatar(1.2, 2));
        let same = host.compose(&donor, &[], ComposeMode::Points, &ComposeConfig::default()).unwrap();
        assert_eq!(same, host);
        let tex = host
            .compose(&donor, &[PartLabel::LeftArm], ComposeMode::Texture, &ComposeConfig::default())
            .unwrap();
        // texture mode keeps host geometry, so only the donor decoder is added
        assert_eq!((tex.models.len(), tex.appearances.len()), (1, 2));
        assert_eq!(tex.points.labels, host.points.labels);
        assert_eq!(tex.points.positions, host.points.positions);
    }
}
