//! Synthetic articulated subject with exact ground truth.
//!
//! The body is a smooth union of capsules around the bones of the generic
//! skeleton, meshed once in the rest pose. Skinning weights are a softmin over
//! capsule distances, labels come from the closest capsule, and each posed scan is
//! the skinned template plus a pose-dependent bump along the posed normals.

use std::path::Path;

use nalgebra::Vector3;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::TriangleMesh;
use crate::nn::Checkpoint;
use crate::recon::{marching_cubes, GridFrame, ScalarGrid};
use crate::semantic::{LabeledTemplateMesh, PartLabel};
use crate::skeleton::{forward_kinematics, skin_points, PoseParams, Skeleton, SkinningWeights, DEFAULT_EXPRESSION_DIM};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SubjectConfig {
    /// Marching-cubes resolution of the rest-pose body.
    pub resolution: usize,
    /// Peak clothing bump along the normal (metres).
    pub bump_amplitude: f64,
    /// Blend radius of the smooth capsule union.
    pub union_smoothing: f64,
    /// Softmin temperature turning capsule distances into skinning weights.
    pub weight_temperature: f64,
    /// Trailing poses reserved for evaluation.
    pub held_out: usize,
}

impl Default for SubjectConfig {
    fn default() -> Self {
        Self {
            resolution: 128,
            bump_amplitude: 0.004,
            union_smoothing: 0.01,
            weight_temperature: 0.02,
            held_out: 8,
        }
    }
}

/// One body segment: a capsule skinned to `bone` and labeled `label`.
#[derive(Debug, Clone, PartialEq)]
pub struct Capsule {
    pub start: Vector3<f64>,
    pub end: Vector3<f64>,
    pub radius: f64,
    pub bone: usize,
    pub label: PartLabel,
}

impl Capsule {
    /// Segment parameter of the closest point, in `[0, 1]`.
    pub fn param(&self, p: &Vector3<f64>) -> f64 {
        let d = self.end - self.start;
        let l2 = d.norm_squared();
        if l2 == 0.0 {
            0.0
        } else {
            ((p - self.start).dot(&d) / l2).clamp(0.0, 1.0)
        }
    }

    pub fn distance(&self, p: &Vector3<f64>) -> f64 {
        let t = self.param(p);
        (p - (self.start + (self.end - self.start) * t)).norm() - self.radius
    }
}

/// Capsule layout on the generic skeleton; `scale` thickens or thins every limb.
pub fn body_capsules(skel: &Skeleton, scale: f64) -> Result<Vec<Capsule>> {
    let joints = skel.rest_joints();
    let bone = |name: &str| {
        skel.index_of(name)
            .ok_or_else(|| Error::InvalidSkeleton(format!("generic body needs bone '{name}'")))
    };
    let j = |name: &str| -> Result<Vector3<f64>> { Ok(joints[bone(name)?]) };
    let up = Vector3::y();
    let mut caps = vec![
        Capsule {
            start: j("root")? - up * 0.02,
            end: j("spine")?,
            radius: 0.12,
            bone: bone("root")?,
            label: PartLabel::Body,
        },
        Capsule {
            start: j("spine")?,
            end: j("spine")? + up * 0.22,
            radius: 0.13,
            bone: bone("spine")?,
            label: PartLabel::Body,
        },
        Capsule {
            start: j("spine")? + up * 0.22,
            end: j("head")?,
            radius: 0.05,
            bone: bone("spine")?,
            label: PartLabel::Body,
        },
        Capsule {
            start: j("head")? + up * 0.08,
            end: j("head")? + up * 0.14,
            radius: 0.09,
            bone: bone("head")?,
            label: PartLabel::Head,
        },
    ];
    for (side, sign) in [("left", 1.0), ("right", -1.0)] {
        let (arm, hand, leg) = if sign > 0.0 {
            (PartLabel::LeftArm, PartLabel::LeftHand, PartLabel::LeftLeg)
        } else {
            (PartLabel::RightArm, PartLabel::RightHand, PartLabel::RightLeg)
        };
        let n = |s: &str| format!("{side}_{s}");
        let hand_dir = Vector3::x() * sign;
        let limbs: [(Vector3<f64>, Vector3<f64>, f64, &str, PartLabel); 7] = [
            (j(&n("shoulder"))?, j(&n("upper_arm"))?, 0.055, "shoulder", arm),
            (j(&n("upper_arm"))?, j(&n("forearm"))?, 0.048, "upper_arm", arm),
            (j(&n("forearm"))?, j(&n("hand"))?, 0.04, "forearm", arm),
            (j(&n("hand"))? + hand_dir * 0.02, j(&n("hand"))? + hand_dir * 0.1, 0.035, "hand", hand),
            (j(&n("thigh"))?, j(&n("shin"))?, 0.075, "thigh", leg),
            (j(&n("shin"))?, j(&n("foot"))?, 0.055, "shin", leg),
            (j(&n("foot"))?, j(&n("foot"))? + Vector3::new(0.0, -0.04, 0.13), 0.04, "foot", leg),
        ];
        for (start, end, radius, b, label) in limbs {
            caps.push(Capsule {
                start,
                end,
                radius,
                bone: bone(&n(b))?,
                label,
            });
        }
    }
    for c in &mut caps {
        c.radius *= scale;
    }
    Ok(caps)
}

/// Smooth-minimum signed distance of the capsule union.
pub fn body_sdf(caps: &[Capsule], p: &Vector3<f64>, k: f64) -> f64 {
    let d: Vec<f64> = caps.iter().map(|c| c.distance(p)).collect();
    let m = d.iter().copied().fold(f64::INFINITY, f64::min);
    m - k * d.iter().map(|&x| (-(x - m) / k).exp()).sum::<f64>().ln()
}

/// Per-bone softmin weights of a point.
pub fn capsule_weights(caps: &[Capsule], bones: usize, p: &Vector3<f64>, temperature: f64) -> Vec<f64> {
    let d: Vec<f64> = caps.iter().map(|c| c.distance(p)).collect();
    let m = d.iter().copied().fold(f64::INFINITY, f64::min);
    let mut w = vec![0.0; bones];
    for (c, &x) in caps.iter().zip(&d) {
        w[c.bone] += (-(x - m) / temperature).exp();
    }
    let s: f64 = w.iter().sum();
    w.iter_mut().for_each(|v| *v /= s);
    w
}

fn palette(label: PartLabel) -> [f64; 3] {
    match label {
        PartLabel::Head => [0.85, 0.65, 0.5],
        PartLabel::Body => [0.2, 0.45, 0.75],
        PartLabel::LeftArm | PartLabel::RightArm => [0.8, 0.3, 0.25],
        PartLabel::LeftHand | PartLabel::RightHand => [0.9, 0.75, 0.6],
        PartLabel::LeftLeg | PartLabel::RightLeg => [0.3, 0.3, 0.35],
    }
}

/// Per-axis Euler ranges for a bone of the generic body, mirrored for the right side.
fn joint_limits(name: &str) -> [[f64; 2]; 3] {
    let (base, right) = match name.split_once('_') {
        Some(("left", rest)) => (rest, false),
        Some(("right", rest)) => (rest, true),
        _ => (name, false),
    };
    let l = match base {
        "root" => [[0.0, 0.0], [-0.2, 0.2], [0.0, 0.0]],
        "spine" => [[-0.2, 0.2], [-0.2, 0.2], [-0.15, 0.15]],
        "head" => [[-0.3, 0.3], [-0.4, 0.4], [-0.2, 0.2]],
        "shoulder" => [[-0.1, 0.1], [-0.15, 0.15], [-0.1, 0.15]],
        "upper_arm" => [[-0.5, 0.5], [-0.5, 0.5], [-0.6, 0.9]],
        "forearm" => [[-0.2, 0.2], [-1.0, 0.1], [-0.2, 0.2]],
        "hand" => [[-0.4, 0.4], [-0.3, 0.3], [-0.4, 0.4]],
        "thigh" => [[-0.6, 0.4], [-0.2, 0.2], [-0.1, 0.3]],
        "shin" => [[0.0, 1.0], [-0.1, 0.1], [-0.05, 0.05]],
        "foot" => [[-0.3, 0.3], [-0.2, 0.2], [-0.1, 0.1]],
        _ => [[-0.2, 0.2]; 3],
    };
    if right {
        // mirroring across x = 0 flips rotations about y and z
        [l[0], [-l[1][1], -l[1][0]], [-l[2][1], -l[2][0]]]
    } else {
        l
    }
}

/// Draws a pose uniformly inside the joint limits.
pub fn random_pose<R: Rng>(skel: &Skeleton, expression_dim: usize, rng: &mut R) -> PoseParams {
    let body_pose = skel
        .bones()
        .iter()
        .map(|b| {
            let lim = joint_limits(&b.name);
            std::array::from_fn(|a| {
                let [lo, hi] = lim[a];
                if hi > lo {
                    rng.gen_range(lo..hi)
                } else {
                    lo
                }
            })
        })
        .collect();
    PoseParams {
        body_pose,
        expression: vec![0.0; expression_dim],
    }
}

/// Deterministic articulated subject with scans in every pose.
#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticSubject {
    pub seed: u64,
    pub config: SubjectConfig,
    pub skeleton: Skeleton,
    /// Rest-pose body with labels, colors and ground-truth weights.
    pub template: LabeledTemplateMesh,
    pub poses: Vec<PoseParams>,
    /// Posed scans, sharing the template's faces, colors and labels.
    pub scans: Vec<TriangleMesh>,
}

/// Builds a subject from `seed`; pose 0 is the rest pose and its scan is the template scan.
///
/// One pose in five (at most eight) is held out for evaluation.
pub fn generate_subject(seed: u64, pose_count: usize) -> Result<SyntheticSubject> {
    let cfg = SubjectConfig {
        held_out: (pose_count / 5).min(8),
        ..SubjectConfig::default()
    };
    generate_subject_with(seed, pose_count, &cfg)
}

pub fn generate_subject_with(seed: u64, pose_count: usize, cfg: &SubjectConfig) -> Result<SyntheticSubject> {
    if pose_count < 2 {
        return Err(Error::Config(format!("a subject needs at least 2 poses, got {pose_count}")));
    }
    if cfg.held_out >= pose_count {
        return Err(Error::Config(format!(
            "{} held-out poses leave no training poses out of {pose_count}",
            cfg.held_out
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let skeleton = Skeleton::generic_body();
    let thickness = rng.gen_range(0.9..1.1);
    let tint: [f64; 3] = std::array::from_fn(|_| rng.gen_range(-0.1..0.1));
    let caps = body_capsules(&skeleton, thickness)?;
    let template = build_template(&skeleton, &caps, cfg, tint)?;
    let mut poses = vec![PoseParams::zeros(skeleton.bone_count(), DEFAULT_EXPRESSION_DIM)];
    for _ in 1..pose_count {
        poses.push(random_pose(&skeleton, DEFAULT_EXPRESSION_DIM, &mut rng));
    }
    let mut subject = SyntheticSubject {
        seed,
        config: cfg.clone(),
        skeleton,
        template,
        poses,
        scans: Vec::new(),
    };
    subject.scans = (0..pose_count).map(|i| subject.scan_for(i)).collect::<Result<_>>()?;
    log::info!(
        "subject {seed}: {} vertices, {} faces, {pose_count} poses",
        subject.template.mesh.vertices.len(),
        subject.template.mesh.faces.len()
    );
    Ok(subject)
}

fn build_template(skel: &Skeleton, caps: &[Capsule], cfg: &SubjectConfig, tint: [f64; 3]) -> Result<LabeledTemplateMesh> {
    let mut lo = Vector3::repeat(f64::INFINITY);
    let mut hi = Vector3::repeat(f64::NEG_INFINITY);
    for c in caps {
        for p in [c.start, c.end] {
            lo = lo.inf(&(p - Vector3::repeat(c.radius)));
            hi = hi.sup(&(p + Vector3::repeat(c.radius)));
        }
    }
    let frame = GridFrame::enclosing(lo, hi, cfg.resolution, 1.1)?;
    let sdf = ScalarGrid::from_fn(frame, |p| body_sdf(caps, &p, cfg.union_smoothing));
    let mesh = marching_cubes(&sdf, 0.0)?;
    let nb = skel.bone_count();
    let mut weights = Vec::with_capacity(mesh.vertices.len() * nb);
    let mut labels = Vec::with_capacity(mesh.vertices.len());
    let mut colors = Vec::with_capacity(mesh.vertices.len());
    for v in &mesh.vertices {
        let p = v.cast::<f64>();
        weights.extend(capsule_weights(caps, nb, &p, cfg.weight_temperature));
        let cap = caps
            .iter()
            .min_by(|a, b| a.distance(&p).total_cmp(&b.distance(&p)))
            .expect("capsules");
        labels.push(Some(cap.label));
        // two tones per part: proximal and distal halves of each capsule
        let base = palette(cap.label);
        let shade = if cap.param(&p) < 0.5 { 1.0 } else { 0.6 };
        colors.push(std::array::from_fn(|k| ((base[k] + tint[k]) * shade).clamp(0.0, 1.0) as f32));
    }
    let vw = SkinningWeights::new(nb, weights)?;
    let mesh = mesh.with_vertex_colors(colors)?;
    crate::semantic::label_faces(&mesh, &labels, vw)
}

impl SyntheticSubject {
    pub fn pose_count(&self) -> usize {
        self.poses.len()
    }

    pub fn training_poses(&self) -> std::ops::Range<usize> {
        0..self.poses.len() - self.config.held_out
    }

    pub fn held_out_poses(&self) -> std::ops::Range<usize> {
        self.poses.len() - self.config.held_out..self.poses.len()
    }

    pub fn rest_pose(&self) -> &PoseParams {
        &self.poses[0]
    }

    pub fn template_scan(&self) -> &TriangleMesh {
        &self.scans[0]
    }

    /// Template skinned into pose `i` with the ground-truth weights, before bumps.
    pub fn posed_body(&self, i: usize) -> Result<TriangleMesh> {
        let pose = self
            .poses
            .get(i)
            .ok_or_else(|| Error::Config(format!("pose {i} out of range")))?;
        let m = &self.template.mesh;
        let bt = forward_kinematics(&self.skeleton, pose, self.rest_pose())?;
        let pos: Vec<Vector3<f64>> = m.vertices.iter().map(|v| v.cast()).collect();
        let nrm = m.vertex_normals();
        let (p, _) = skin_points(&pos, &nrm, &self.template.vertex_weights, &bt.relative())?;
        let mut out = m.clone();
        out.vertices = p.iter().map(|v| v.cast()).collect();
        Ok(out)
    }

    /// Pose-dependent normal displacement of every template vertex.
    pub fn bump(&self, i: usize) -> Vec<f64> {
        let pose = &self.poses[i];
        let w = &self.template.vertex_weights;
        let amp = self.config.bump_amplitude;
        self.template
            .mesh
            .vertices
            .iter()
            .enumerate()
            .map(|(v, x)| {
                let bend: f64 = w
                    .row(v)
                    .iter()
                    .zip(&pose.body_pose)
                    .map(|(wb, a)| wb * (a[0].abs() + a[1].abs() + a[2].abs()))
                    .sum();
                let x = x.cast::<f64>();
                amp * (25.0 * (x.x + x.y + x.z) + 3.0 * bend).sin() * (0.5 + bend.min(1.0) * 0.5)
            })
            .collect()
    }

    fn scan_for(&self, i: usize) -> Result<TriangleMesh> {
        let mut body = self.posed_body(i)?;
        let normals = body.vertex_normals();
        for ((v, n), d) in body.vertices.iter_mut().zip(&normals).zip(self.bump(i)) {
            *v = (v.cast::<f64>() + n * d).cast();
        }
        Ok(body)
    }

    pub fn write_checkpoint(&self, ck: &mut Checkpoint) -> Result<()> {
        let m = &self.template.mesh;
        ck.put_json("subject.seed", &self.seed)?;
        ck.put_json("subject.config", &self.config)?;
        ck.put_json("subject.skeleton", &self.skeleton)?;
        ck.put_json("subject.poses", &self.poses)?;
        let flat = |vs: &[Vector3<f32>]| vs.iter().flat_map(|v| [v.x, v.y, v.z]).collect::<Vec<f32>>();
        ck.put_f32("subject.template.vertices", &[m.vertices.len(), 3], &flat(&m.vertices));
        let faces: Vec<u32> = m.faces.iter().flatten().copied().collect();
        ck.put_u32("subject.template.faces", &[m.faces.len(), 3], &faces);
        let colors: Vec<f32> = m.vertex_colors.as_ref().map_or(Vec::new(), |c| c.iter().flatten().copied().collect());
        ck.put_f32("subject.template.colors", &[colors.len() / 3, 3], &colors);
        let labels: Vec<u8> = self.template.face_labels.iter().map(|&l| l as u8).collect();
        ck.put_u8("subject.template.labels", &labels);
        let w = &self.template.vertex_weights;
        ck.put_f64("subject.template.weights", &[w.len(), w.bones()], w.as_slice());
        for (i, s) in self.scans.iter().enumerate() {
            ck.put_f32(&format!("subject.scan.{i}"), &[s.vertices.len(), 3], &flat(&s.vertices));
        }
        Ok(())
    }

    pub fn read_checkpoint(ck: &Checkpoint) -> Result<Self> {
        let unflat = |v: Vec<f32>| v.chunks_exact(3).map(|c| Vector3::new(c[0], c[1], c[2])).collect::<Vec<_>>();
        let (_, faces) = ck.get_u32("subject.template.faces")?;
        let faces: Vec<[u32; 3]> = faces.chunks_exact(3).map(|c| [c[0], c[1], c[2]]).collect();
        let (_, verts) = ck.get_f32("subject.template.vertices")?;
        let (_, colors) = ck.get_f32("subject.template.colors")?;
        let labels = ck
            .get_u8("subject.template.labels")?
            .iter()
            .map(|&l| PartLabel::from_u8(l))
            .collect::<Result<Vec<_>>>()?;
        let (wshape, w) = ck.get_f64("subject.template.weights")?;
        let mut mesh = TriangleMesh::new(unflat(verts), faces)?
            .with_face_labels(labels.iter().map(|&l| l as u8).collect())?;
        if !colors.is_empty() {
            mesh = mesh.with_vertex_colors(colors.chunks_exact(3).map(|c| [c[0], c[1], c[2]]).collect())?;
        }
        let poses: Vec<PoseParams> = ck.get_json("subject.poses")?;
        let scans = (0..poses.len())
            .map(|i| {
                let (_, v) = ck.get_f32(&format!("subject.scan.{i}"))?;
                let mut s = mesh.clone();
                s.vertices = unflat(v);
                if s.vertices.len() != mesh.vertices.len() {
                    return Err(Error::Checkpoint(format!("scan {i} has the wrong vertex count")));
                }
                Ok(s)
            })
            .collect::<Result<_>>()?;
        Ok(Self {
            seed: ck.get_json("subject.seed")?,
            config: ck.get_json("subject.config")?,
            skeleton: ck.get_json("subject.skeleton")?,
            template: LabeledTemplateMesh {
                mesh,
                face_labels: labels,
                vertex_weights: SkinningWeights::new(*wshape.get(1).unwrap_or(&0), w)?,
            },
            poses,
            scans,
        })
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

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn capsule_distance_and_weights() {
        let c = Capsule {
            start: Vector3::zeros(),
            end: Vector3::x(),
            radius: 0.1,
            bone: 1,
            label: PartLabel::Body,
        };
        assert!((c.distance(&Vector3::new(0.5, 0.3, 0.0)) - 0.2).abs() < 1e-12);
        assert!((c.distance(&Vector3::new(-0.3, 0.0, 0.0)) - 0.2).abs() < 1e-12);
        let caps = body_capsules(&Skeleton::generic_body(), 1.0).unwrap();
        let w = capsule_weights(&caps, 17, &Vector3::new(0.6, 1.41, 0.0), 0.02);
        assert!((w.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        assert!(body_sdf(&caps, &Vector3::new(0.0, 1.0, 0.0), 0.01) < 0.0);
        assert!(body_sdf(&caps, &Vector3::new(0.0, 3.0, 0.0), 0.01) > 0.0);
    }

    #[test]
    fn subject_is_deterministic_and_round_trips() {
        let a = generate_subject(1, 3).unwrap();
        let b = generate_subject(1, 3).unwrap();
        let bytes = |s: &SyntheticSubject| {
            let mut ck = Checkpoint::new();
            s.write_checkpoint(&mut ck).unwrap();
            ck.to_bytes()
        };
        assert_eq!(bytes(&a), bytes(&b));
        assert_ne!(bytes(&a), bytes(&generate_subject(2, 3).unwrap()));
        let back = SyntheticSubject::read_checkpoint(&Checkpoint::from_bytes(&bytes(&a)).unwrap()).unwrap();
        assert_eq!(back, a);

        let m = &a.template.mesh;
        assert!(m.is_watertight());
        assert!(m.signed_volume() > 0.0);
        let rest = a.posed_body(0).unwrap();
        for (p, q) in rest.vertices.iter().zip(&m.vertices) {
            assert!((p - q).norm() < 1e-6);
        }
        assert!(a.template.part_areas().iter().all(|&x| x > 0.0));
        a.template.vertex_weights.validate().unwrap();
        assert_eq!(a.scans[0], a.template_scan().clone());
        let amp = a.config.bump_amplitude;
        assert!(a.bump(1).iter().all(|d| d.abs() <= amp));
    }

    #[test]
    fn limits_mirror() {
        let l = joint_limits("left_upper_arm");
        let r = joint_limits("right_upper_arm");
        assert_eq!(l[0], r[0]);
        assert_eq!(r[2], [-l[2][1], -l[2][0]]);
    }
}
