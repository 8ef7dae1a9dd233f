//! Kinematic tree, Euler-angle poses, bone transforms and linear blend skinning.
//!
//! Rotations use the intrinsic X-then-Y-then-Z convention, `R = Rz(g) * Ry(b) * Rx(a)`
//! for angles `(a, b, g)`. Bone `i` is posed as
//! `B_i = B_parent * T(offset_i) * R(theta_i)`, and a canonical point skinned to bone
//! `i` moves by `B_i * inverse(B_i^c)` where `B_i^c` is the same chain evaluated at the
//! template pose. Normals are blended with the linear part only and renormalized.

use std::fs;
use std::path::Path;

use nalgebra::{Matrix3, Matrix4, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{normalize_f64, OrientedPointCloud};

/// Weight rows must sum to one within this tolerance.
pub const WEIGHT_SUM_TOLERANCE: f64 = 1e-5;

/// Default dimension of the expression vector.
pub const DEFAULT_EXPRESSION_DIM: usize = 10;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Bone {
    pub name: String,
    pub parent: Option<usize>,
    /// Translation from the parent joint to this joint, in meters.
    pub offset: [f64; 3],
}

/// A validated kinematic tree with exactly one root.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "SkeletonFile", into = "SkeletonFile")]
pub struct Skeleton {
    bones: Vec<Bone>,
    /// Parents-before-children evaluation order.
    order: Vec<usize>,
}

#[derive(Serialize, Deserialize)]
struct SkeletonFile {
    bones: Vec<Bone>,
}

impl TryFrom<SkeletonFile> for Skeleton {
    type Error = Error;
    fn try_from(f: SkeletonFile) -> Result<Self> {
        Skeleton::new(f.bones)
    }
}

impl From<Skeleton> for SkeletonFile {
    fn from(s: Skeleton) -> Self {
        SkeletonFile { bones: s.bones }
    }
}

impl Skeleton {
    pub fn new(bones: Vec<Bone>) -> Result<Self> {
        let n = bones.len();
        if n == 0 {
            return Err(Error::InvalidSkeleton("no bones".into()));
        }
        let roots = bones.iter().filter(|b| b.parent.is_none()).count();
        if roots != 1 {
            return Err(Error::InvalidSkeleton(format!("expected exactly one root, found {roots}")));
        }
        if let Some((i, _)) = bones.iter().enumerate().find(|(i, b)| b.parent.is_some_and(|p| p >= n || p == *i)) {
            return Err(Error::InvalidSkeleton(format!("bone {i} has an invalid parent")));
        }
        // depth-first from the root; anything unreached sits on a cycle
        let mut children = vec![Vec::new(); n];
        let mut root = 0;
        for (i, b) in bones.iter().enumerate() {
            match b.parent {
                Some(p) => children[p].push(i),
                None => root = i,
            }
        }
        let mut order = Vec::with_capacity(n);
        let mut stack = vec![root];
        while let Some(b) = stack.pop() {
            order.push(b);
            stack.extend(children[b].iter().rev());
        }
        if order.len() != n {
            return Err(Error::InvalidSkeleton("parent links contain a cycle".into()));
        }
        Ok(Self { bones, order })
    }

    pub fn bone_count(&self) -> usize {
        self.bones.len()
    }

    pub fn bones(&self) -> &[Bone] {
        &self.bones
    }

    pub fn parent(&self, bone: usize) -> Option<usize> {
        self.bones[bone].parent
    }

    pub fn root(&self) -> usize {
        self.order[0]
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.bones.iter().position(|b| b.name == name)
    }

    /// Joint positions at the all-zero pose.
    pub fn rest_joints(&self) -> Vec<Vector3<f64>> {
        let mut joints = vec![Vector3::zeros(); self.bones.len()];
        for &b in &self.order {
            let base = self.bones[b].parent.map_or(Vector3::zeros(), |p| joints[p]);
            joints[b] = base + Vector3::from(self.bones[b].offset);
        }
        joints
    }

    /// Generic 17-bone humanoid in a T-pose (meters, +y up, +x to the subject's left).
    pub fn generic_body() -> Self {
        let spec: [(&str, Option<usize>, [f64; 3]); 17] = [
            ("root", None, [0.0, 0.95, 0.0]),
            ("spine", Some(0), [0.0, 0.22, 0.0]),
            ("head", Some(1), [0.0, 0.32, 0.0]),
            ("left_shoulder", Some(1), [0.06, 0.24, 0.0]),
            ("left_upper_arm", Some(3), [0.15, 0.0, 0.0]),
            ("left_forearm", Some(4), [0.28, 0.0, 0.0]),
            ("left_hand", Some(5), [0.25, 0.0, 0.0]),
            ("right_shoulder", Some(1), [-0.06, 0.24, 0.0]),
            ("right_upper_arm", Some(7), [-0.15, 0.0, 0.0]),
            ("right_forearm", Some(8), [-0.28, 0.0, 0.0]),
            ("right_hand", Some(9), [-0.25, 0.0, 0.0]),
            ("left_thigh", Some(0), [0.1, -0.05, 0.0]),
            ("left_shin", Some(11), [0.01, -0.42, 0.0]),
            ("left_foot", Some(12), [0.0, -0.4, 0.0]),
            ("right_thigh", Some(0), [-0.1, -0.05, 0.0]),
            ("right_shin", Some(14), [-0.01, -0.42, 0.0]),
            ("right_foot", Some(15), [0.0, -0.4, 0.0]),
        ];
        Self::new(
            spec.iter()
                .map(|(name, parent, offset)| Bone {
                    name: name.to_string(),
                    parent: *parent,
                    offset: *offset,
                })
                .collect(),
        )
        .expect("generic body skeleton is valid")
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::file(path, e))?;
        Ok(serde_json::from_str(&text)?)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        fs::write(path, serde_json::to_string_pretty(self)?).map_err(|e| Error::file(path, e))
    }
}

/// Per-bone Euler angles plus an expression code.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PoseParams {
    pub body_pose: Vec<[f64; 3]>,
    #[serde(default)]
    pub expression: Vec<f64>,
}

impl PoseParams {
    /// All-zero pose (the rest pose of the skeleton).
    pub fn zeros(bones: usize, expression_dim: usize) -> Self {
        Self {
            body_pose: vec![[0.0; 3]; bones],
            expression: vec![0.0; expression_dim],
        }
    }

    pub fn check(&self, skel: &Skeleton) -> Result<()> {
        if self.body_pose.len() != skel.bone_count() {
            return Err(Error::DimensionMismatch(format!(
                "pose has {} bone rotations, skeleton has {} bones",
                self.body_pose.len(),
                skel.bone_count()
            )));
        }
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::file(path, e))?;
        Ok(serde_json::from_str(&text)?)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        fs::write(path, serde_json::to_string(self)?).map_err(|e| Error::file(path, e))
    }
}

/// `R = Rz(angles[2]) * Ry(angles[1]) * Rx(angles[0])`.
pub fn euler_to_rotation(angles: &Vector3<f64>) -> Matrix3<f64> {
    rot_z(angles[2]) * rot_y(angles[1]) * rot_x(angles[0])
}

/// Partial derivatives of [`euler_to_rotation`] with respect to each angle.
pub fn euler_rotation_derivatives(angles: &Vector3<f64>) -> [Matrix3<f64>; 3] {
    let (rx, ry, rz) = (rot_x(angles[0]), rot_y(angles[1]), rot_z(angles[2]));
    let (dx, dy, dz) = (drot_x(angles[0]), drot_y(angles[1]), drot_z(angles[2]));
    [rz * ry * dx, rz * dy * rx, dz * ry * rx]
}

fn rot_x(a: f64) -> Matrix3<f64> {
    let (s, c) = a.sin_cos();
    Matrix3::new(1.0, 0.0, 0.0, 0.0, c, -s, 0.0, s, c)
}

fn rot_y(a: f64) -> Matrix3<f64> {
    let (s, c) = a.sin_cos();
    Matrix3::new(c, 0.0, s, 0.0, 1.0, 0.0, -s, 0.0, c)
}

fn rot_z(a: f64) -> Matrix3<f64> {
    let (s, c) = a.sin_cos();
    Matrix3::new(c, -s, 0.0, s, c, 0.0, 0.0, 0.0, 1.0)
}

fn drot_x(a: f64) -> Matrix3<f64> {
    let (s, c) = a.sin_cos();
    Matrix3::new(0.0, 0.0, 0.0, 0.0, -s, -c, 0.0, c, -s)
}

fn drot_y(a: f64) -> Matrix3<f64> {
    let (s, c) = a.sin_cos();
    Matrix3::new(-s, 0.0, c, 0.0, 0.0, 0.0, -c, 0.0, -s)
}

fn drot_z(a: f64) -> Matrix3<f64> {
    let (s, c) = a.sin_cos();
    Matrix3::new(-s, -c, 0.0, c, -s, 0.0, 0.0, 0.0, 0.0)
}

/// Posed (`B_i`) and template-pose (`B_i^c`) world transforms of every bone.
#[derive(Debug, Clone, PartialEq)]
pub struct BoneTransforms {
    pub posed: Vec<Matrix4<f64>>,
    pub template: Vec<Matrix4<f64>>,
}

impl BoneTransforms {
    /// `B_i * inverse(B_i^c)` for every bone.
    pub fn relative(&self) -> Vec<Matrix4<f64>> {
        self.posed
            .iter()
            .zip(&self.template)
            .map(|(b, bc)| b * rigid_inverse(bc))
            .collect()
    }
}

/// Inverse of a rigid transform (rotation transposed, translation rotated back).
pub fn rigid_inverse(m: &Matrix4<f64>) -> Matrix4<f64> {
    let r = m.fixed_view::<3, 3>(0, 0).transpose();
    let t = -(r * m.fixed_view::<3, 1>(0, 3));
    let mut out = Matrix4::identity();
    out.fixed_view_mut::<3, 3>(0, 0).copy_from(&r);
    out.fixed_view_mut::<3, 1>(0, 3).copy_from(&t);
    out
}

fn chain(skel: &Skeleton, pose: &PoseParams) -> Vec<Matrix4<f64>> {
    let mut world = vec![Matrix4::identity(); skel.bone_count()];
    for &b in &skel.order {
        let bone = &skel.bones[b];
        let mut local = Matrix4::identity();
        local
            .fixed_view_mut::<3, 3>(0, 0)
            .copy_from(&euler_to_rotation(&Vector3::from(pose.body_pose[b])));
        local
            .fixed_view_mut::<3, 1>(0, 3)
            .copy_from(&Vector3::from(bone.offset));
        world[b] = match bone.parent {
            Some(p) => world[p] * local,
            None => local,
        };
    }
    world
}

pub fn forward_kinematics(skel: &Skeleton, pose: &PoseParams, template_pose: &PoseParams) -> Result<BoneTransforms> {
    pose.check(skel)?;
    template_pose.check(skel)?;
    Ok(BoneTransforms {
        posed: chain(skel, pose),
        template: chain(skel, template_pose),
    })
}

/// Row-major `points x bones` convex weights.
#[derive(Debug, Clone, PartialEq)]
pub struct SkinningWeights {
    bones: usize,
    data: Vec<f64>,
}

impl SkinningWeights {
    /// Validates non-negativity and unit row sums.
    pub fn new(bones: usize, data: Vec<f64>) -> Result<Self> {
        let w = Self::new_unchecked(bones, data)?;
        w.validate()?;
        Ok(w)
    }

    /// Checks only the shape; use for intermediate (e.g. perturbed) weights.
    pub fn new_unchecked(bones: usize, data: Vec<f64>) -> Result<Self> {
        if bones == 0 || !data.len().is_multiple_of(bones) {
            return Err(Error::DimensionMismatch(format!(
                "{} weight entries is not a multiple of {bones} bones",
                data.len()
            )));
        }
        Ok(Self { bones, data })
    }

    pub fn one_hot(points: usize, bones: usize, bone: usize) -> Self {
        let mut data = vec![0.0; points * bones];
        for i in 0..points {
            data[i * bones + bone] = 1.0;
        }
        Self { bones, data }
    }

    pub fn validate(&self) -> Result<()> {
        for (r, row) in self.data.chunks(self.bones).enumerate() {
            if let Some(w) = row.iter().find(|w| !(**w >= 0.0)) {
                return Err(Error::InvalidWeights {
                    row: r,
                    reason: format!("entry {w} is negative or not finite"),
                });
            }
            let s: f64 = row.iter().sum();
            if (s - 1.0).abs() > WEIGHT_SUM_TOLERANCE {
                return Err(Error::InvalidWeights {
                    row: r,
                    reason: format!("row sums to {s}"),
                });
            }
        }
        Ok(())
    }

    pub fn bones(&self) -> usize {
        self.bones
    }

    pub fn len(&self) -> usize {
        self.data.len() / self.bones
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.bones..(i + 1) * self.bones]
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn argmax(&self, i: usize) -> usize {
        self.row(i)
            .iter()
            .enumerate()
            .fold((0, f64::NEG_INFINITY), |best, (b, &w)| if w > best.1 { (b, w) } else { best })
            .0
    }

    pub fn select(&self, rows: &[usize]) -> Self {
        let mut data = Vec::with_capacity(rows.len() * self.bones);
        for &r in rows {
            data.extend_from_slice(self.row(r));
        }
        Self { bones: self.bones, data }
    }
}

/// Blends `relative` transforms per point: positions use the full affine map,
/// normals the linear part followed by renormalization.
pub fn skin_points(
    positions: &[Vector3<f64>],
    normals: &[Vector3<f64>],
    weights: &SkinningWeights,
    relative: &[Matrix4<f64>],
) -> Result<(Vec<Vector3<f64>>, Vec<Vector3<f64>>)> {
    if positions.len() != weights.len() || normals.len() != positions.len() {
        return Err(Error::DimensionMismatch(format!(
            "{} positions, {} normals, {} weight rows",
            positions.len(),
            normals.len(),
            weights.len()
        )));
    }
    if relative.len() != weights.bones() {
        return Err(Error::DimensionMismatch(format!(
            "{} transforms for {} bones",
            relative.len(),
            weights.bones()
        )));
    }
    let mut out_p = Vec::with_capacity(positions.len());
    let mut out_n = Vec::with_capacity(positions.len());
    for (i, (p, n)) in positions.iter().zip(normals).enumerate() {
        let blend = blend_transform(weights.row(i), relative);
        out_p.push(blend.fixed_view::<3, 3>(0, 0) * p + blend.fixed_view::<3, 1>(0, 3));
        out_n.push(normalize_f64(&(blend.fixed_view::<3, 3>(0, 0) * n)));
    }
    Ok((out_p, out_n))
}

/// `sum_i w_i * M_i`; exact when a single weight is 1.
pub fn blend_transform(row: &[f64], relative: &[Matrix4<f64>]) -> Matrix4<f64> {
    let mut m = Matrix4::zeros();
    for (w, t) in row.iter().zip(relative) {
        if *w != 0.0 {
            m += t * *w;
        }
    }
    m
}

/// Directional derivative of skinned positions for perturbations of the
/// input positions (`dp`) and the weights (`dw`, row-major like the weights).
pub fn skin_positions_jvp(
    positions: &[Vector3<f64>],
    weights: &SkinningWeights,
    relative: &[Matrix4<f64>],
    dp: &[Vector3<f64>],
    dw: &[f64],
) -> Vec<Vector3<f64>> {
    let nb = weights.bones();
    positions
        .iter()
        .enumerate()
        .map(|(i, p)| {
            let blend = blend_transform(weights.row(i), relative);
            let dblend = blend_transform(&dw[i * nb..(i + 1) * nb], relative);
            blend.fixed_view::<3, 3>(0, 0) * dp[i]
                + dblend.fixed_view::<3, 3>(0, 0) * p
                + dblend.fixed_view::<3, 1>(0, 3)
        })
        .collect()
}

/// Linear blend skinning of an oriented cloud with precomputed bone transforms.
pub fn lbs_apply(points: &OrientedPointCloud, weights: &SkinningWeights, bt: &BoneTransforms) -> Result<OrientedPointCloud> {
    weights.validate()?;
    let (p, n) = skin_points(&points.positions_f64(), &points.normals_f64(), weights, &bt.relative())?;
    let mut out = OrientedPointCloud::from_f64(&p, &n)?;
    if let Some(c) = points.colors() {
        out = out.with_colors(c.to_vec())?;
    }
    if let Some(l) = points.labels() {
        out = out.with_labels(l.to_vec())?;
    }
    Ok(out)
}

/// Poses canonical points: forward kinematics at both poses followed by skinning.
pub fn canonical_to_pose(
    points: &OrientedPointCloud,
    weights: &SkinningWeights,
    skel: &Skeleton,
    pose: &PoseParams,
    template_pose: &PoseParams,
) -> Result<OrientedPointCloud> {
    let bt = forward_kinematics(skel, pose, template_pose)?;
    lbs_apply(points, weights, &bt)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use std::f64::consts::{FRAC_PI_2, FRAC_PI_4};

    fn chain_skeleton(n: usize, offset: [f64; 3]) -> Skeleton {
        Skeleton::new(
            (0..n)
                .map(|i| Bone {
                    name: format!("b{i}"),
                    parent: i.checked_sub(1),
                    offset,
                })
                .collect(),
        )
        .unwrap()
    }

    fn random_angles(rng: &mut ChaCha8Rng) -> Vector3<f64> {
        Vector3::new(rng.gen_range(-3.0..3.0), rng.gen_range(-3.0..3.0), rng.gen_range(-3.0..3.0))
    }

    #[test]
    fn euler_basics() {
        assert_eq!(euler_to_rotation(&Vector3::zeros()), Matrix3::identity());
        let r = euler_to_rotation(&Vector3::new(FRAC_PI_2, 0.0, 0.0));
        assert!((r * Vector3::y() - Vector3::z()).norm() < 1e-15);
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..100 {
            let r = euler_to_rotation(&random_angles(&mut rng));
            assert!((r * r.transpose() - Matrix3::identity()).abs().max() < 1e-10);
            assert!((r.determinant() - 1.0).abs() < 1e-10);
        }
    }

    #[test]
    fn euler_derivatives_match_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let a = random_angles(&mut rng);
        let d = euler_rotation_derivatives(&a);
        let h = 1e-6;
        for k in 0..3 {
            let mut ap = a;
            let mut am = a;
            ap[k] += h;
            am[k] -= h;
            let fd = (euler_to_rotation(&ap) - euler_to_rotation(&am)) / (2.0 * h);
            assert!((fd - d[k]).abs().max() < 1e-8);
        }
    }

    #[test]
    fn skeleton_validation() {
        assert!(Skeleton::new(vec![]).is_err());
        let two_roots = vec![
            Bone { name: "a".into(), parent: None, offset: [0.0; 3] },
            Bone { name: "b".into(), parent: None, offset: [0.0; 3] },
        ];
        assert!(Skeleton::new(two_roots).is_err());
        let cycle = vec![
            Bone { name: "r".into(), parent: None, offset: [0.0; 3] },
            Bone { name: "a".into(), parent: Some(2), offset: [0.0; 3] },
            Bone { name: "b".into(), parent: Some(1), offset: [0.0; 3] },
        ];
        assert!(Skeleton::new(cycle).is_err());
        assert_eq!(Skeleton::generic_body().bone_count(), 17);
    }

    #[test]
    fn skeleton_json_round_trip() {
        let s = Skeleton::generic_body();
        let text = serde_json::to_string(&s).unwrap();
        assert!(text.starts_with("{\"bones\":[{\"name\":\"root\",\"parent\":null,\"offset\":["));
        let back: Skeleton = serde_json::from_str(&text).unwrap();
        assert_eq!(back, s);
        assert!(serde_json::from_str::<Skeleton>(r#"{"bones":[]}"#).is_err());
    }

    #[test]
    fn zero_pose_zero_offsets_is_identity() {
        let skel = chain_skeleton(4, [0.0; 3]);
        let zero = PoseParams::zeros(4, 0);
        let bt = forward_kinematics(&skel, &zero, &zero).unwrap();
        assert!(bt.posed.iter().all(|b| *b == Matrix4::identity()));
    }

    #[test]
    fn chain_composition_accumulates_offsets() {
        let skel = chain_skeleton(2, [0.0, 1.0, 0.0]);
        let zero = PoseParams::zeros(2, 0);
        let bt = forward_kinematics(&skel, &zero, &zero).unwrap();
        assert_eq!(bt.posed[1].fixed_view::<3, 1>(0, 3).into_owned(), Vector3::new(0.0, 2.0, 0.0));
    }

    #[test]
    fn dimension_mismatch_is_reported() {
        let skel = chain_skeleton(3, [0.0; 3]);
        let bad = PoseParams::zeros(2, 0);
        assert!(matches!(
            forward_kinematics(&skel, &bad, &PoseParams::zeros(3, 0)),
            Err(Error::DimensionMismatch(_))
        ));
    }

    #[test]
    fn three_bone_chain_matches_naive_products() {
        let skel = chain_skeleton(3, [0.1, 0.3, -0.2]);
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let pose = PoseParams {
            body_pose: (0..3).map(|_| random_angles(&mut rng).into()).collect(),
            expression: vec![],
        };
        let bt = forward_kinematics(&skel, &pose, &PoseParams::zeros(3, 0)).unwrap();
        // independent recomputation: explicit homogeneous matrices multiplied left to right
        let local = |i: usize| {
            let a = pose.body_pose[i];
            let (ca, sa) = (a[0].cos(), a[0].sin());
            let (cb, sb) = (a[1].cos(), a[1].sin());
            let (cg, sg) = (a[2].cos(), a[2].sin());
            let rx = Matrix4::new(1., 0., 0., 0., 0., ca, -sa, 0., 0., sa, ca, 0., 0., 0., 0., 1.);
            let ry = Matrix4::new(cb, 0., sb, 0., 0., 1., 0., 0., -sb, 0., cb, 0., 0., 0., 0., 1.);
            let rz = Matrix4::new(cg, -sg, 0., 0., sg, cg, 0., 0., 0., 0., 1., 0., 0., 0., 0., 1.);
            Matrix4::new_translation(&Vector3::new(0.1, 0.3, -0.2)) * rz * ry * rx
        };
        let expected = [local(0), local(0) * local(1), local(0) * local(1) * local(2)];
        for (b, e) in bt.posed.iter().zip(&expected) {
            assert!((b - e).abs().max() < 1e-12);
        }
        for b in &bt.posed {
            let r = b.fixed_view::<3, 3>(0, 0);
            assert!((r * r.transpose() - Matrix3::identity()).abs().max() < 1e-10);
            assert!((r.determinant() - 1.0).abs() < 1e-10);
        }
    }

    fn random_cloud(n: usize, rng: &mut ChaCha8Rng) -> OrientedPointCloud {
        let p = (0..n).map(|_| Vector3::new(rng.gen(), rng.gen(), rng.gen())).collect::<Vec<Vector3<f64>>>();
        let nn = (0..n)
            .map(|_| Vector3::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0), 1.0))
            .collect::<Vec<Vector3<f64>>>();
        OrientedPointCloud::from_f64(&p, &nn).unwrap()
    }

    fn random_weights(n: usize, bones: usize, rng: &mut ChaCha8Rng) -> SkinningWeights {
        let mut data = Vec::with_capacity(n * bones);
        for _ in 0..n {
            let row: Vec<f64> = (0..bones).map(|_| rng.gen::<f64>() + 1e-3).collect();
            let s: f64 = row.iter().sum();
            data.extend(row.iter().map(|w| w / s));
        }
        SkinningWeights::new(bones, data).unwrap()
    }

    #[test]
    fn template_pose_gives_identity() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let skel = Skeleton::generic_body();
        let mut pose = PoseParams::zeros(17, 10);
        for a in pose.body_pose.iter_mut() {
            *a = random_angles(&mut rng).into();
        }
        let cloud = random_cloud(50, &mut rng);
        let w = random_weights(50, 17, &mut rng);
        let out = canonical_to_pose(&cloud, &w, &skel, &pose, &pose).unwrap();
        for (a, b) in out.positions().iter().zip(cloud.positions()) {
            assert!((a - b).cast::<f64>().norm() < 1e-9);
        }
    }

    #[test]
    fn one_hot_translation_shifts_points() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let cloud = random_cloud(20, &mut rng);
        let t = Vector3::new(0.5, -0.25, 1.0);
        let bt = BoneTransforms {
            posed: vec![Matrix4::new_translation(&t), Matrix4::identity()],
            template: vec![Matrix4::identity(); 2],
        };
        let out = lbs_apply(&cloud, &SkinningWeights::one_hot(20, 2, 0), &bt).unwrap();
        for i in 0..20 {
            assert!((out.positions()[i].cast::<f64>() - cloud.positions()[i].cast::<f64>() - t).norm() < 1e-6);
            assert_eq!(out.normals()[i], cloud.normals()[i]);
        }
    }

    #[test]
    fn half_blend_of_translations() {
        let (t1, t2) = (Vector3::new(1.0, 0.0, 0.0), Vector3::new(0.0, 2.0, 0.0));
        let bt = BoneTransforms {
            posed: vec![Matrix4::new_translation(&t1), Matrix4::new_translation(&t2)],
            template: vec![Matrix4::identity(); 2],
        };
        let p = vec![Vector3::new(0.25, 0.5, 0.75)];
        let (out, _) = skin_points(&p, &[Vector3::z()], &SkinningWeights::new(2, vec![0.5, 0.5]).unwrap(), &bt.relative()).unwrap();
        assert!((out[0] - (p[0] + (t1 + t2) / 2.0)).norm() < 1e-15);
    }

    #[test]
    fn rigid_root_rotation_matches_rotating_the_cloud() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let skel = chain_skeleton(1, [0.0; 3]);
        let cloud = random_cloud(30, &mut rng);
        let pose = PoseParams {
            body_pose: vec![[FRAC_PI_4, 0.0, 0.0]],
            expression: vec![],
        };
        let out = canonical_to_pose(&cloud, &SkinningWeights::one_hot(30, 1, 0), &skel, &pose, &PoseParams::zeros(1, 0)).unwrap();
        let r = euler_to_rotation(&Vector3::new(FRAC_PI_4, 0.0, 0.0));
        for i in 0..30 {
            assert!((out.positions()[i].cast::<f64>() - r * cloud.positions()[i].cast::<f64>()).norm() < 1e-6);
            assert!((out.normals()[i].cast::<f64>() - r * cloud.normals()[i].cast::<f64>()).norm() < 1e-6);
        }
    }

    #[test]
    fn invalid_weights_are_rejected() {
        let cloud = random_cloud(1, &mut ChaCha8Rng::seed_from_u64(0));
        let bt = BoneTransforms {
            posed: vec![Matrix4::identity(); 2],
            template: vec![Matrix4::identity(); 2],
        };
        let w = SkinningWeights::new_unchecked(2, vec![0.7, 0.7]).unwrap();
        assert!(matches!(lbs_apply(&cloud, &w, &bt), Err(Error::InvalidWeights { row: 0, .. })));
        let w = SkinningWeights::new_unchecked(2, vec![1.5, -0.5]).unwrap();
        assert!(matches!(lbs_apply(&cloud, &w, &bt), Err(Error::InvalidWeights { .. })));
    }

    #[test]
    fn positions_jvp_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let skel = Skeleton::generic_body();
        let mut pose = PoseParams::zeros(17, 0);
        for a in pose.body_pose.iter_mut() {
            *a = (random_angles(&mut rng) * 0.3).into();
        }
        let rel = forward_kinematics(&skel, &pose, &PoseParams::zeros(17, 0)).unwrap().relative();
        let n = 8;
        let p: Vec<Vector3<f64>> = (0..n).map(|_| Vector3::new(rng.gen(), rng.gen(), rng.gen())).collect();
        let nrm = vec![Vector3::z(); n];
        let w = random_weights(n, 17, &mut rng);
        let dp: Vec<Vector3<f64>> = (0..n).map(|_| Vector3::new(rng.gen(), rng.gen(), rng.gen())).collect();
        let dw: Vec<f64> = (0..n * 17).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let jvp = skin_positions_jvp(&p, &w, &rel, &dp, &dw);
        let h = 1e-5;
        let shifted = |s: f64| {
            let pp: Vec<_> = p.iter().zip(&dp).map(|(a, d)| a + d * s).collect();
            let ww: Vec<f64> = w.as_slice().iter().zip(&dw).map(|(a, d)| a + d * s).collect();
            skin_points(&pp, &nrm, &SkinningWeights::new_unchecked(17, ww).unwrap(), &rel).unwrap().0
        };
        let (plus, minus) = (shifted(h), shifted(-h));
        let fd: Vec<Vector3<f64>> = plus.iter().zip(&minus).map(|(a, b)| (a - b) / (2.0 * h)).collect();
        let num: f64 = fd.iter().zip(&jvp).map(|(a, b)| (a - b).norm_squared()).sum::<f64>().sqrt();
        let den: f64 = jvp.iter().map(|v| v.norm_squared()).sum::<f64>().sqrt();
        assert!(num / den < 1e-4, "relative error {}", num / den);
    }
}
