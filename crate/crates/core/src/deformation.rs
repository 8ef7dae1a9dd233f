//! Template -> canonical -> pose map for oriented points.
//!
//! DeltaNet predicts a per-point offset and Euler rotation from the encoded
//! template position and a pose code; LBSNet predicts skinning-weight logits that
//! pass through a scaled softmax before blending bone transforms.

use std::rc::Rc;

use nalgebra::{Matrix4, Vector3};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::OrientedPointCloud;
use crate::nn::{Checkpoint, Graph, Mlp, MlpSpec, Tensor, Var};
use crate::skeleton::{euler_to_rotation, forward_kinematics, PoseParams, Skeleton, SkinningWeights};

/// Which position LBSNet is queried at.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LbsInput {
    /// The sampled template position `x`.
    Template,
    /// The offset position `x + delta`.
    Canonical,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DeformationConfig {
    pub pe_levels: usize,
    pub pose_code_dim: usize,
    pub encoder_depth: usize,
    pub encoder_width: usize,
    pub delta_depth: usize,
    pub delta_width: usize,
    pub delta_skip: Option<usize>,
    pub lbs_depth: usize,
    pub lbs_width: usize,
    pub softmax_scale: f64,
    pub lbs_input: LbsInput,
    /// Multiplier applied to the last DeltaNet layer at initialization.
    pub delta_init_scale: f64,
    /// Multiplier applied to the last LBSNet layer at initialization, so the scaled
    /// softmax starts unsaturated.
    #[serde(default = "default_lbs_init_scale")]
    pub lbs_init_scale: f64,
}

fn default_lbs_init_scale() -> f64 {
    0.05
}

impl DeformationConfig {
    pub fn paper() -> Self {
        Self {
            pe_levels: 4,
            pose_code_dim: 16,
            encoder_depth: 2,
            encoder_width: 64,
            delta_depth: 8,
            delta_width: 512,
            delta_skip: Some(4),
            lbs_depth: 5,
            lbs_width: 128,
            softmax_scale: 20.0,
            lbs_input: LbsInput::Template,
            delta_init_scale: 1e-4,
            lbs_init_scale: default_lbs_init_scale(),
        }
    }

    /// Same topology with narrower hidden layers for single-core runs.
    pub fn desk() -> Self {
        Self {
            delta_width: 64,
            lbs_width: 64,
            encoder_width: 32,
            ..Self::paper()
        }
    }

    pub fn encoded_dim(&self) -> usize {
        3 + 6 * self.pe_levels
    }
}

impl Default for DeformationConfig {
    fn default() -> Self {
        Self::desk()
    }
}

/// DeltaNet, LBSNet and the pose encoder bound to a skeleton and template pose.
#[derive(Debug, Clone, PartialEq)]
pub struct DeformationModel {
    pub config: DeformationConfig,
    pub skeleton: Skeleton,
    pub template_pose: PoseParams,
    pub expression_dim: usize,
    pub pose_encoder: Mlp,
    pub deltanet: Mlp,
    pub lbsnet: Mlp,
}

/// Per-point results of [`DeformationModel::deform`].
#[derive(Debug, Clone, PartialEq)]
pub struct DeformedBatch {
    pub x_c: Vec<Vector3<f64>>,
    pub n_c: Vec<Vector3<f64>>,
    pub x_d: Vec<Vector3<f64>>,
    pub n_d: Vec<Vector3<f64>>,
    pub weights: SkinningWeights,
    pub delta: Vec<Vector3<f64>>,
    pub theta: Vec<Vector3<f64>>,
}

impl DeformedBatch {
    pub fn len(&self) -> usize {
        self.x_d.len()
    }

    pub fn is_empty(&self) -> bool {
        self.x_d.is_empty()
    }

    pub fn posed_cloud(&self) -> Result<OrientedPointCloud> {
        OrientedPointCloud::from_f64(&self.x_d, &self.n_d)
    }

    pub fn canonical_cloud(&self) -> Result<OrientedPointCloud> {
        OrientedPointCloud::from_f64(&self.x_c, &self.n_c)
    }
}

/// Graph handles for the model parameters.
#[derive(Debug, Clone)]
pub struct BoundModel {
    pub pose_encoder: Vec<Var>,
    pub deltanet: Vec<Var>,
    pub lbsnet: Vec<Var>,
}

/// Graph handles for one deformed batch.
#[derive(Debug, Clone, Copy)]
pub struct DeformVars {
    pub delta: Var,
    pub theta: Var,
    pub x_c: Var,
    pub n_c: Var,
    pub weights: Var,
    pub x_d: Var,
    pub n_d: Var,
}

/// Overrides used by oracles and ablations.
#[derive(Debug, Clone, Copy, Default)]
pub struct DeformOptions<'a> {
    /// Skip DeltaNet (offset and rotation are zero).
    pub zero_delta: bool,
    /// Use these weights instead of LBSNet.
    pub weights: Option<&'a SkinningWeights>,
}

impl DeformationModel {
    pub fn new<R: Rng>(
        config: DeformationConfig,
        skeleton: Skeleton,
        template_pose: PoseParams,
        expression_dim: usize,
        rng: &mut R,
    ) -> Result<Self> {
        template_pose.check(&skeleton)?;
        let pose_in = 3 * (skeleton.bone_count() - 1) + expression_dim;
        let pose_encoder = Mlp::new(
            MlpSpec::new(pose_in, config.pose_code_dim, config.encoder_depth, config.encoder_width),
            rng,
        )?;
        let mut delta_spec = MlpSpec::new(
            config.encoded_dim() + config.pose_code_dim,
            6,
            config.delta_depth,
            config.delta_width,
        );
        if let Some(s) = config.delta_skip {
            delta_spec = delta_spec.with_skip(s);
        }
        let mut deltanet = Mlp::new(delta_spec, rng)?;
        deltanet.scale_last_layer(config.delta_init_scale);
        let mut lbsnet = Mlp::new(
            MlpSpec::new(config.encoded_dim(), skeleton.bone_count(), config.lbs_depth, config.lbs_width),
            rng,
        )?;
        lbsnet.scale_last_layer(config.lbs_init_scale);
        Ok(Self {
            config,
            skeleton,
            template_pose,
            expression_dim,
            pose_encoder,
            deltanet,
            lbsnet,
        })
    }

    pub fn bone_count(&self) -> usize {
        self.skeleton.bone_count()
    }

    /// Non-root Euler angles followed by the expression code, as a `1 x d` row.
    pub fn pose_features(&self, pose: &PoseParams) -> Result<Tensor> {
        pose.check(&self.skeleton)?;
        if pose.expression.len() != self.expression_dim {
            return Err(Error::DimensionMismatch(format!(
                "expression has {} entries, model expects {}",
                pose.expression.len(),
                self.expression_dim
            )));
        }
        let root = self.skeleton.root();
        let mut row = Vec::with_capacity(self.pose_encoder.spec.in_dim);
        for (b, angles) in pose.body_pose.iter().enumerate() {
            if b != root {
                row.extend_from_slice(angles);
            }
        }
        row.extend_from_slice(&pose.expression);
        Tensor::new(vec![1, row.len()], row)
    }

    pub fn bind(&self, g: &mut Graph, trainable: bool) -> BoundModel {
        BoundModel {
            pose_encoder: self.pose_encoder.bind(g, trainable),
            deltanet: self.deltanet.bind(g, trainable),
            lbsnet: self.lbsnet.bind(g, trainable),
        }
    }

    /// Skinning-weight rows for `positions` as a graph node.
    pub fn lbs_graph(&self, g: &mut Graph, bound: &BoundModel, positions: Var) -> Result<Var> {
        let enc = g.encode(positions, self.config.pe_levels);
        let logits = self.lbsnet.forward_graph(g, &bound.lbsnet, enc)?;
        Ok(g.scaled_softmax(logits, self.config.softmax_scale))
    }

    /// Records the full forward map of `x`, `n` (both `n x 3`) on `g`.
    pub fn deform_graph(
        &self,
        g: &mut Graph,
        bound: &BoundModel,
        x: Var,
        n: Var,
        pose: &PoseParams,
        opts: DeformOptions,
    ) -> Result<DeformVars> {
        let count = g.value(x).rows();
        let enc = g.encode(x, self.config.pe_levels);
        let (delta, theta, x_c, n_c) = if opts.zero_delta {
            let zero = g.input(Tensor::zeros(&[count, 3]));
            (zero, zero, x, n)
        } else {
            let pose_row = g.input(self.pose_features(pose)?);
            let code = self.pose_encoder.forward_graph(g, &bound.pose_encoder, pose_row)?;
            let code = g.broadcast_rows(code, count)?;
            let inp = g.concat(&[enc, code])?;
            let out = self.deltanet.forward_graph(g, &bound.deltanet, inp)?;
            let delta = g.columns(out, 0, 3)?;
            let theta = g.columns(out, 3, 6)?;
            let x_c = g.add(x, delta)?;
            let n_c = g.rotate_euler(theta, n)?;
            (delta, theta, x_c, n_c)
        };
        let weights = match opts.weights {
            Some(w) => {
                if w.len() != count || w.bones() != self.bone_count() {
                    return Err(Error::DimensionMismatch(format!(
                        "override weights {}x{} for {count} points and {} bones",
                        w.len(),
                        w.bones(),
                        self.bone_count()
                    )));
                }
                g.input(Tensor::new(vec![count, w.bones()], w.as_slice().to_vec())?)
            }
            None => match self.config.lbs_input {
                LbsInput::Template => {
                    let logits = self.lbsnet.forward_graph(g, &bound.lbsnet, enc)?;
                    g.scaled_softmax(logits, self.config.softmax_scale)
                }
                LbsInput::Canonical => self.lbs_graph(g, bound, x_c)?,
            },
        };
        let transforms: Rc<Vec<Matrix4<f64>>> =
            Rc::new(forward_kinematics(&self.skeleton, pose, &self.template_pose)?.relative());
        let x_d = g.skin(weights, x_c, transforms.clone(), true)?;
        let n_blend = g.skin(weights, n_c, transforms, false)?;
        let n_d = g.normalize_rows(n_blend);
        Ok(DeformVars {
            delta,
            theta,
            x_c,
            n_c,
            weights,
            x_d,
            n_d,
        })
    }

    /// Offsets and Euler rotations predicted for template points under `pose`.
    pub fn delta_forward(
        &self,
        points: &[Vector3<f64>],
        pose: &PoseParams,
    ) -> Result<(Vec<Vector3<f64>>, Vec<Vector3<f64>>)> {
        let mut g = Graph::new();
        let bound = self.bind(&mut g, false);
        let x = g.input(Tensor::from_vectors(points));
        let enc = g.encode(x, self.config.pe_levels);
        let pose_row = g.input(self.pose_features(pose)?);
        let code = self.pose_encoder.forward_graph(&mut g, &bound.pose_encoder, pose_row)?;
        let code = g.broadcast_rows(code, points.len())?;
        let inp = g.concat(&[enc, code])?;
        let out = self.deltanet.forward_graph(&mut g, &bound.deltanet, inp)?;
        let out = g.value(out);
        if !out.is_finite() {
            return Err(Error::NonFinite("DeltaNet output".into()));
        }
        let rows = out.data().chunks_exact(6);
        Ok(rows
            .map(|r| (Vector3::new(r[0], r[1], r[2]), Vector3::new(r[3], r[4], r[5])))
            .unzip())
    }

    pub fn lbs_weights(&self, points: &[Vector3<f64>]) -> Result<SkinningWeights> {
        let mut g = Graph::new();
        let bound = self.bind(&mut g, false);
        let x = g.input(Tensor::from_vectors(points));
        let w = self.lbs_graph(&mut g, &bound, x)?;
        SkinningWeights::new_unchecked(self.bone_count(), g.value(w).data().to_vec())
    }

    pub fn deform(&self, points: &OrientedPointCloud, pose: &PoseParams) -> Result<DeformedBatch> {
        self.deform_with(&points.positions_f64(), &points.normals_f64(), pose, DeformOptions::default())
    }

    pub fn deform_with(
        &self,
        positions: &[Vector3<f64>],
        normals: &[Vector3<f64>],
        pose: &PoseParams,
        opts: DeformOptions,
    ) -> Result<DeformedBatch> {
        if positions.len() != normals.len() {
            return Err(Error::DimensionMismatch(format!(
                "{} positions, {} normals",
                positions.len(),
                normals.len()
            )));
        }
        let mut g = Graph::new();
        let bound = self.bind(&mut g, false);
        let x = g.input(Tensor::from_vectors(positions));
        let n = g.input(Tensor::from_vectors(normals));
        let v = self.deform_graph(&mut g, &bound, x, n, pose, opts)?;
        let x_d = g.value(v.x_d);
        if !x_d.is_finite() {
            return Err(Error::NonFinite("deformed positions".into()));
        }
        Ok(DeformedBatch {
            x_c: g.value(v.x_c).to_vectors(),
            n_c: g.value(v.n_c).to_vectors(),
            x_d: x_d.to_vectors(),
            n_d: g.value(v.n_d).to_vectors(),
            weights: SkinningWeights::new_unchecked(self.bone_count(), g.value(v.weights).data().to_vec())?,
            delta: g.value(v.delta).to_vectors(),
            theta: g.value(v.theta).to_vectors(),
        })
    }

    /// All trainable tensors in the order `[pose_encoder, deltanet, lbsnet]`.
    pub fn parameters(&self) -> Vec<&Tensor> {
        self.pose_encoder
            .params
            .iter()
            .chain(&self.deltanet.params)
            .chain(&self.lbsnet.params)
            .collect()
    }

    pub fn write_checkpoint(&self, ck: &mut Checkpoint, prefix: &str) -> Result<()> {
        ck.put_json(&format!("{prefix}.config"), &self.config)?;
        ck.put_json(&format!("{prefix}.skeleton"), &self.skeleton)?;
        ck.put_json(&format!("{prefix}.template_pose"), &self.template_pose)?;
        ck.put_u32(&format!("{prefix}.expression_dim"), &[1], &[self.expression_dim as u32]);
        ck.put_mlp(&format!("{prefix}.pose_encoder"), &self.pose_encoder)?;
        ck.put_mlp(&format!("{prefix}.deltanet"), &self.deltanet)?;
        ck.put_mlp(&format!("{prefix}.lbsnet"), &self.lbsnet)
    }

    pub fn read_checkpoint(ck: &Checkpoint, prefix: &str) -> Result<Self> {
        let model = Self {
            config: ck.get_json(&format!("{prefix}.config"))?,
            skeleton: ck.get_json(&format!("{prefix}.skeleton"))?,
            template_pose: ck.get_json(&format!("{prefix}.template_pose"))?,
            expression_dim: ck.get_u32(&format!("{prefix}.expression_dim"))?.1[0] as usize,
            pose_encoder: ck.get_mlp(&format!("{prefix}.pose_encoder"))?,
            deltanet: ck.get_mlp(&format!("{prefix}.deltanet"))?,
            lbsnet: ck.get_mlp(&format!("{prefix}.lbsnet"))?,
        };
        if model.lbsnet.spec.out_dim != model.bone_count() || model.deltanet.spec.out_dim != 6 {
            return Err(Error::Checkpoint("network heads do not match the skeleton".into()));
        }
        Ok(model)
    }
}

/// `x + delta` and `R(theta) n` per point.
pub fn apply_delta(
    points: &OrientedPointCloud,
    delta: &[Vector3<f64>],
    theta: &[Vector3<f64>],
) -> Result<OrientedPointCloud> {
    if delta.len() != points.len() || theta.len() != points.len() {
        return Err(Error::DimensionMismatch(format!(
            "{} points, {} offsets, {} rotations",
            points.len(),
            delta.len(),
            theta.len()
        )));
    }
    let x: Vec<Vector3<f64>> = points.positions_f64().iter().zip(delta).map(|(p, d)| p + d).collect();
    let n: Vec<Vector3<f64>> = points
        .normals_f64()
        .iter()
        .zip(theta)
        .map(|(n, t)| euler_to_rotation(t) * n)
        .collect();
    let mut out = OrientedPointCloud::from_f64(&x, &n)?;
    if let Some(c) = points.colors() {
        out = out.with_colors(c.to_vec())?;
    }
    if let Some(l) = points.labels() {
        out = out.with_labels(l.to_vec())?;
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::skeleton::{skin_points, DEFAULT_EXPRESSION_DIM};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use std::f64::consts::PI;

    fn small_config() -> DeformationConfig {
        DeformationConfig {
            encoder_width: 8,
            delta_width: 8,
            delta_depth: 3,
            delta_skip: Some(2),
            lbs_width: 8,
            lbs_depth: 2,
            ..DeformationConfig::desk()
        }
    }

    fn model(seed: u64, config: DeformationConfig) -> DeformationModel {
        let skel = Skeleton::generic_body();
        let tp = PoseParams::zeros(skel.bone_count(), DEFAULT_EXPRESSION_DIM);
        DeformationModel::new(config, skel, tp, DEFAULT_EXPRESSION_DIM, &mut ChaCha8Rng::seed_from_u64(seed)).unwrap()
    }

    fn random_pose(rng: &mut ChaCha8Rng, bones: usize) -> PoseParams {
        PoseParams {
            body_pose: (0..bones)
                .map(|_| [rng.gen_range(-0.5..0.5), rng.gen_range(-0.5..0.5), rng.gen_range(-0.5..0.5)])
                .collect(),
            expression: (0..DEFAULT_EXPRESSION_DIM).map(|_| rng.gen_range(-1.0..1.0)).collect(),
        }
    }

    fn random_points(rng: &mut ChaCha8Rng, n: usize) -> (Vec<Vector3<f64>>, Vec<Vector3<f64>>) {
        let x = (0..n)
            .map(|_| Vector3::new(rng.gen_range(-0.5..0.5), rng.gen_range(0.0..1.8), rng.gen_range(-0.2..0.2)))
            .collect();
        let nn = (0..n)
            .map(|_| Vector3::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)).normalize())
            .collect();
        (x, nn)
    }

    #[test]
    fn fresh_model_has_tiny_offsets_and_live_conditioning() {
        let m = model(1, DeformationConfig::desk());
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let (x, _) = random_points(&mut rng, 64);
        let p1 = random_pose(&mut rng, m.bone_count());
        let p2 = random_pose(&mut rng, m.bone_count());
        let (d1, t1) = m.delta_forward(&x, &p1).unwrap();
        assert!(d1.iter().chain(&t1).all(|d| d.norm() < 1e-3));
        let (d2, _) = m.delta_forward(&x, &p2).unwrap();
        assert!(d1.iter().zip(&d2).any(|(a, b)| a != b));
    }

    #[test]
    fn weights_are_convex_and_deterministic() {
        let m = model(3, DeformationConfig::desk());
        let q = vec![Vector3::new(0.1, 1.0, 0.0), Vector3::new(0.1, 1.0, 0.0), Vector3::new(-0.3, 0.2, 0.1)];
        let w = m.lbs_weights(&q).unwrap();
        for i in 0..q.len() {
            assert!((w.row(i).iter().sum::<f64>() - 1.0).abs() < 1e-9);
            assert!(w.row(i).iter().all(|&v| v >= 0.0));
        }
        assert_eq!(w.row(0), w.row(1));
    }

    #[test]
    fn apply_delta_closed_forms() {
        let cloud = OrientedPointCloud::from_f64(
            &[Vector3::new(0.0, 0.0, 0.0), Vector3::new(1.0, 2.0, 3.0)],
            &[Vector3::new(0.0, 0.6, 0.8), Vector3::new(0.0, 1.0, 0.0)],
        )
        .unwrap();
        let zero = vec![Vector3::zeros(); 2];
        assert_eq!(apply_delta(&cloud, &zero, &zero).unwrap(), cloud);
        let up = vec![Vector3::new(0.0, 0.0, 0.1); 2];
        let moved = apply_delta(&cloud, &up, &zero).unwrap();
        for (a, b) in moved.positions_f64().iter().zip(cloud.positions_f64()) {
            assert!((a - b - up[0]).norm() < 1e-6);
        }
        let flip = vec![Vector3::new(PI, 0.0, 0.0); 2];
        let rotated = apply_delta(&cloud, &zero, &flip).unwrap();
        for (a, b) in rotated.normals_f64().iter().zip(cloud.normals_f64()) {
            assert!((a - Vector3::new(b.x, -b.y, -b.z)).norm() < 1e-6);
        }
    }

    #[test]
    fn template_pose_with_zero_delta_is_identity() {
        let m = model(4, small_config());
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let (x, n) = random_points(&mut rng, 32);
        let b = m
            .deform_with(&x, &n, &m.template_pose.clone(), DeformOptions { zero_delta: true, weights: None })
            .unwrap();
        for i in 0..x.len() {
            assert!((b.x_d[i] - x[i]).norm() < 1e-12);
            assert!((b.n_d[i] - n[i]).norm() < 1e-12);
        }
    }

    #[test]
    fn injected_weights_reduce_to_plain_lbs() {
        let m = model(6, small_config());
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let (x, n) = random_points(&mut rng, 20);
        let nb = m.bone_count();
        let raw: Vec<f64> = (0..20 * nb).map(|_| rng.gen_range(0.0..1.0)).collect();
        let data: Vec<f64> = raw
            .chunks(nb)
            .flat_map(|r| {
                let s: f64 = r.iter().sum();
                r.iter().map(move |v| v / s)
            })
            .collect();
        let w = SkinningWeights::new(nb, data).unwrap();
        let pose = random_pose(&mut rng, nb);
        let b = m
            .deform_with(&x, &n, &pose, DeformOptions { zero_delta: true, weights: Some(&w) })
            .unwrap();
        let rel = forward_kinematics(&m.skeleton, &pose, &m.template_pose).unwrap().relative();
        let (px, pn) = skin_points(&x, &n, &w, &rel).unwrap();
        for i in 0..20 {
            assert!((b.x_d[i] - px[i]).norm() < 1e-9);
            assert!((b.n_d[i] - pn[i]).norm() < 1e-9);
            assert!((b.n_d[i].norm() - 1.0).abs() < 1e-6);
        }
    }

    fn loss_of(m: &DeformationModel, x: &[Vector3<f64>], n: &[Vector3<f64>], pose: &PoseParams, probe: &Tensor) -> (f64, Vec<Tensor>) {
        let mut g = Graph::new();
        let bound = m.bind(&mut g, true);
        let xv = g.input(Tensor::from_vectors(x));
        let nv = g.input(Tensor::from_vectors(n));
        let v = m.deform_graph(&mut g, &bound, xv, nv, pose, DeformOptions::default()).unwrap();
        let out = g.concat(&[v.x_d, v.n_d, v.delta]).unwrap();
        let pv = g.input(probe.clone());
        let prod = g.mul(out, pv).unwrap();
        let loss = g.sum(prod);
        let grads = g.backward(loss).unwrap();
        let all: Vec<Tensor> = bound
            .pose_encoder
            .iter()
            .chain(&bound.deltanet)
            .chain(&bound.lbsnet)
            .map(|&p| grads.tensor(p))
            .collect();
        (g.value(loss).item(), all)
    }

    #[test]
    fn end_to_end_gradients_match_finite_differences() {
        for lbs_input in [LbsInput::Template, LbsInput::Canonical] {
            let mut m = model(8, DeformationConfig { lbs_input, delta_init_scale: 1.0, ..small_config() });
            let mut rng = ChaCha8Rng::seed_from_u64(9);
            let (x, n) = random_points(&mut rng, 6);
            let pose = random_pose(&mut rng, m.bone_count());
            let probe = Tensor::new(vec![6, 9], (0..54).map(|_| rng.gen_range(-1.0..1.0)).collect()).unwrap();
            let (_, grads) = loss_of(&m, &x, &n, &pose, &probe);
            let h = 1e-6;
            let mut num = 0.0;
            let mut den = 0.0;
            let sizes: Vec<usize> = m.parameters().iter().map(|t| t.numel()).collect();
            for (k, size) in sizes.into_iter().enumerate() {
                for j in (0..size).step_by(3) {
                    let orig = param_mut(&mut m, k)[j];
                    param_mut(&mut m, k)[j] = orig + h;
                    let fp = loss_of(&m, &x, &n, &pose, &probe).0;
                    param_mut(&mut m, k)[j] = orig - h;
                    let fm = loss_of(&m, &x, &n, &pose, &probe).0;
                    param_mut(&mut m, k)[j] = orig;
                    let fd = (fp - fm) / (2.0 * h);
                    num += (fd - grads[k].data()[j]).powi(2);
                    den += fd * fd;
                }
            }
            assert!((num / den).sqrt() < 1e-4, "{lbs_input:?}: {}", (num / den).sqrt());
        }
    }

    fn param_mut(m: &mut DeformationModel, k: usize) -> &mut [f64] {
        let a = m.pose_encoder.params.len();
        let b = m.deltanet.params.len();
        if k < a {
            m.pose_encoder.params[k].data_mut()
        } else if k < a + b {
            m.deltanet.params[k - a].data_mut()
        } else {
            m.lbsnet.params[k - a - b].data_mut()
        }
    }

    #[test]
    fn checkpoint_round_trip() {
        let m = model(10, small_config());
        let mut ck = Checkpoint::new();
        m.write_checkpoint(&mut ck, "geom").unwrap();
        let back = DeformationModel::read_checkpoint(&Checkpoint::from_bytes(&ck.to_bytes()).unwrap(), "geom").unwrap();
        assert_eq!(back, m);
    }

    #[test]
    fn rejects_wrong_pose() {
        let m = model(11, small_config());
        let bad = PoseParams::zeros(3, DEFAULT_EXPRESSION_DIM);
        assert!(matches!(m.delta_forward(&[Vector3::zeros()], &bad), Err(Error::DimensionMismatch(_))));
    }
}
