//! Training configuration and the geometry training loop.

use std::fmt::Write as _;
use std::path::Path;
use std::time::Instant;

use nalgebra::Vector3;
use rand::seq::index::sample;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::synthetic::SyntheticSubject;
use crate::appearance::{IdwMode, DEFAULT_K};
use crate::deformation::{DeformOptions, DeformationConfig, DeformationModel};
use crate::error::{Error, Result};
use crate::geometry::{cloud_from_samples, KdIndex, MeshSampler, OrientedPointCloud, TriangleBvh};
use crate::losses::{chamfer, emd_loss, emd_match_with, normal_loss, reg_loss, AuctionConfig, LossKind, LossWeights};
use crate::nn::{AdamState, AutoencoderSpec, Graph, Tensor};
use crate::recon::ReconConfig;
use crate::semantic::AlignConfig;

/// Every knob of the pipeline; serialized as the JSON config of the CLI.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    /// Points drawn from the template scan and from the posed scan per iteration.
    pub samples: usize,
    /// Geometry epochs; one epoch visits every training pose once.
    pub epochs: usize,
    /// Leading epochs that train LBSNet alone with DeltaNet switched off.
    pub warmup_epochs: usize,
    /// Regularizer-only LBSNet steps on registered vertices before the main loop.
    pub lbs_warm_start_steps: usize,
    pub lbs_warm_start_lr: f64,
    pub appearance_epochs: usize,
    pub autoencoder_epochs: usize,
    /// DeltaNet and pose encoder.
    pub lr_delta: f64,
    pub lr_lbs: f64,
    pub lr_feature: f64,
    pub lr_autoencoder: f64,
    /// Registered template vertices drawn per iteration for the weight regularizer.
    pub reg_vertices: usize,
    pub weights: LossWeights,
    pub auction: AuctionConfig,
    pub deformation: DeformationConfig,
    pub autoencoder: AutoencoderSpec,
    /// Neighbors in feature aggregation.
    pub k: usize,
    pub idw: IdwMode,
    /// Scan points per pose and step in feature training.
    pub color_samples: usize,
    /// Semantic points sampled from the labeled template.
    pub semantic_points: usize,
    pub align: AlignConfig,
    pub recon: ReconConfig,
    /// Write a checkpoint every this many epochs; 0 disables.
    pub checkpoint_every: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self::desk()
    }
}

impl TrainConfig {
    /// Single-core defaults.
    pub fn desk() -> Self {
        Self {
            samples: 4096,
            epochs: 100,
            warmup_epochs: 0,
            lbs_warm_start_steps: 1500,
            lbs_warm_start_lr: 1e-3,
            appearance_epochs: 20,
            autoencoder_epochs: 400,
            lr_delta: 5e-4,
            lr_lbs: 1e-4,
            lr_feature: 1e-3,
            lr_autoencoder: 1e-3,
            reg_vertices: 1024,
            weights: LossWeights::default(),
            auction: AuctionConfig::indexed(),
            deformation: DeformationConfig::desk(),
            autoencoder: AutoencoderSpec::desk(),
            k: DEFAULT_K,
            idw: IdwMode::Inverse,
            color_samples: 2048,
            semantic_points: 4096,
            align: AlignConfig::default(),
            recon: ReconConfig::default(),
            checkpoint_every: 0,
            seed: 0,
        }
    }

    /// Sample counts and network sizes of the published setup.
    pub fn paper() -> Self {
        Self {
            samples: 51_200,
            semantic_points: 51_200,
            deformation: DeformationConfig::paper(),
            autoencoder: AutoencoderSpec::paper(),
            recon: ReconConfig {
                resolution: 512,
                ..ReconConfig::default()
            },
            ..Self::desk()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let counts = [
            ("samples", self.samples),
            ("reg_vertices", self.reg_vertices),
            ("k", self.k),
            ("color_samples", self.color_samples),
            ("semantic_points", self.semantic_points),
        ];
        if let Some((name, _)) = counts.iter().find(|(_, v)| *v == 0) {
            return Err(Error::Config(format!("{name} must be positive")));
        }
        let rates = [self.lr_delta, self.lr_lbs, self.lr_feature, self.lr_autoencoder, self.lbs_warm_start_lr];
        if rates.iter().any(|r| !(r.is_finite() && *r > 0.0)) {
            return Err(Error::Config(format!("learning rates must be positive: {rates:?}")));
        }
        self.weights.validate()
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::file(path, e))?;
        let cfg: Self = serde_json::from_str(&text)?;
        cfg.validate()?;
        Ok(cfg)
    }
}

/// Weighted loss terms averaged over the iterations of one epoch.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub chamfer: f64,
    pub emd: f64,
    pub normal: f64,
    pub reg: f64,
    pub total: f64,
    /// Unweighted Chamfer of the epoch and its running minimum.
    pub raw_chamfer: f64,
    pub best_chamfer: f64,
    pub seconds: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainLog {
    pub epochs: Vec<EpochRecord>,
}

impl TrainLog {
    pub const CSV_HEADER: &'static str = "epoch,chamfer,emd,normal,reg,total,raw_chamfer,best_chamfer,seconds";

    pub fn to_csv(&self) -> String {
        let mut s = String::from(Self::CSV_HEADER);
        s.push('\n');
        for r in &self.epochs {
            let _ = writeln!(
                s,
                "{},{:.6e},{:.6e},{:.6e},{:.6e},{:.6e},{:.6e},{:.6e},{:.3}",
                r.epoch, r.chamfer, r.emd, r.normal, r.reg, r.total, r.raw_chamfer, r.best_chamfer, r.seconds
            );
        }
        s
    }
}

/// Weighted term values and parameter gradients of one iteration.
#[derive(Debug, Clone)]
pub struct StepOutcome {
    pub values: EpochRecord,
    pub delta_grads: Vec<Tensor>,
    pub lbs_grads: Vec<Tensor>,
}

/// Registered template vertices and their reference weights.
#[derive(Debug, Clone)]
pub struct Registration {
    pub positions: Vec<Vector3<f64>>,
    pub weights: crate::skeleton::SkinningWeights,
}

/// Loss of one iteration with gradients for `[pose_encoder, deltanet]` and `lbsnet`.
#[allow(clippy::too_many_arguments)]
pub fn geometry_step(
    model: &DeformationModel,
    template: &OrientedPointCloud,
    posed: &OrientedPointCloud,
    pose: &crate::skeleton::PoseParams,
    registration: Option<&Registration>,
    weights: &LossWeights,
    auction: &AuctionConfig,
    warmup: bool,
) -> Result<StepOutcome> {
    let mut g = Graph::new();
    let bound = model.bind(&mut g, true);
    let x = g.input(Tensor::from_vectors(&template.positions_f64()));
    let n = g.input(Tensor::from_vectors(&template.normals_f64()));
    let opts = DeformOptions {
        zero_delta: warmup,
        weights: None,
    };
    let v = model.deform_graph(&mut g, &bound, x, n, pose, opts)?;
    let x_d = g.value(v.x_d).to_vectors();
    let n_d = g.value(v.n_d).to_vectors();
    let x_p = posed.positions_f64();
    let n_p = posed.normals_f64();

    let (wc, we, wn, wr) = (
        weights.effective(LossKind::Chamfer),
        weights.effective(LossKind::Emd),
        weights.effective(LossKind::Normal),
        weights.effective(LossKind::Reg),
    );
    let ch = chamfer(&x_d, &x_p)?;
    let mut grad_x: Vec<Vector3<f64>> = ch.grad.iter().map(|g| g * wc).collect();
    let mut grad_n = vec![Vector3::zeros(); n_d.len()];
    let (mut emd_v, mut normal_v, mut reg_v) = (0.0, 0.0, 0.0);
    if we > 0.0 || wn > 0.0 {
        let m = emd_match_with(&x_d, &x_p, auction)?;
        if we > 0.0 {
            let e = emd_loss(&m, &x_d, &x_p)?;
            emd_v = e.value;
            grad_x.iter_mut().zip(&e.grad).for_each(|(a, b)| *a += b * we);
        }
        if wn > 0.0 {
            let nl = normal_loss(&n_d, &m, &n_p)?;
            normal_v = nl.value;
            grad_n.iter_mut().zip(&nl.grad).for_each(|(a, b)| *a += b * wn);
        }
    }
    let flat = |v: &[Vector3<f64>]| v.iter().flat_map(|g| [g.x, g.y, g.z]).collect::<Vec<f64>>();
    let mut inputs = vec![(v.x_d, flat(&grad_x)), (v.n_d, flat(&grad_n))];
    if wr > 0.0 {
        let reg = registration.ok_or(Error::MissingRegistration)?;
        let rx = g.input(Tensor::from_vectors(&reg.positions));
        let rw = model.lbs_graph(&mut g, &bound, rx)?;
        let delta = g.value(v.delta).to_vectors();
        let r = reg_loss(g.value(rw).data(), &reg.weights, &delta)?;
        reg_v = r.value;
        inputs.push((rw, r.grad_weights.iter().map(|x| x * wr).collect()));
        if !warmup {
            inputs.push((v.delta, flat(&r.grad_delta.iter().map(|g| g * wr).collect::<Vec<_>>())));
        }
    }
    let total = wc * ch.value + we * emd_v + wn * normal_v + wr * reg_v;
    if !total.is_finite() {
        return Err(Error::NonFinite(format!(
            "loss terms chamfer={} emd={emd_v} normal={normal_v} reg={reg_v}",
            ch.value
        )));
    }
    let loss = g.linearized(total, inputs)?;
    let grads = g.backward(loss)?;
    let delta_grads: Vec<Tensor> = bound
        .pose_encoder
        .iter()
        .chain(&bound.deltanet)
        .map(|&p| grads.tensor(p))
        .collect();
    let lbs_grads: Vec<Tensor> = bound.lbsnet.iter().map(|&p| grads.tensor(p)).collect();
    if delta_grads.iter().chain(&lbs_grads).any(|t| !t.is_finite()) {
        return Err(Error::NonFinite("parameter gradients".into()));
    }
    Ok(StepOutcome {
        values: EpochRecord {
            epoch: 0,
            chamfer: wc * ch.value,
            emd: we * emd_v,
            normal: wn * normal_v,
            reg: wr * reg_v,
            total,
            raw_chamfer: ch.value,
            best_chamfer: ch.value,
            seconds: 0.0,
        },
        delta_grads,
        lbs_grads,
    })
}

/// Adam state for both parameter groups of a deformation model.
#[derive(Debug, Clone)]
pub struct GeometryOptimizer {
    pub delta: AdamState,
    pub lbs: AdamState,
}

impl GeometryOptimizer {
    pub fn new(cfg: &TrainConfig) -> Self {
        Self {
            delta: AdamState::new(cfg.lr_delta),
            lbs: AdamState::new(cfg.lr_lbs),
        }
    }

    pub fn apply(&mut self, model: &mut DeformationModel, step: &StepOutcome, warmup: bool) -> Result<()> {
        if !warmup {
            let mut params: Vec<&mut [f64]> = model
                .pose_encoder
                .params
                .iter_mut()
                .chain(model.deltanet.params.iter_mut())
                .map(Tensor::data_mut)
                .collect();
            let grads: Vec<&[f64]> = step.delta_grads.iter().map(Tensor::data).collect();
            self.delta.step_slices(&mut params, &grads)?;
        }
        self.lbs.step(&mut model.lbsnet.params, &step.lbs_grads)
    }
}

/// Fits LBSNet alone to the reference weights of registered vertices.
///
/// Returns the weight-regularizer value of the final batch.
pub fn lbs_warm_start(
    model: &mut DeformationModel,
    registration: &Registration,
    steps: usize,
    lr: f64,
    batch: usize,
    seed: u64,
) -> Result<f64> {
    let n = registration.positions.len();
    if n == 0 {
        return Err(Error::MissingRegistration);
    }
    let mut adam = AdamState::new(lr);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut last = f64::NAN;
    for _ in 0..steps {
        let rows = sample(&mut rng, n, batch.min(n)).into_vec();
        let positions: Vec<Vector3<f64>> = rows.iter().map(|&i| registration.positions[i]).collect();
        let reference = registration.weights.select(&rows);
        let mut g = Graph::new();
        let bound = model.bind(&mut g, true);
        let x = g.input(Tensor::from_vectors(&positions));
        let w = model.lbs_graph(&mut g, &bound, x)?;
        let r = reg_loss(g.value(w).data(), &reference, &[])?;
        if !r.value.is_finite() {
            return Err(Error::NonFinite("skinning warm start".into()));
        }
        last = r.value;
        let loss = g.linearized(r.value, vec![(w, r.grad_weights)])?;
        let grads = g.backward(loss)?;
        let lbs_grads: Vec<Tensor> = bound.lbsnet.iter().map(|&p| grads.tensor(p)).collect();
        adam.step(&mut model.lbsnet.params, &lbs_grads)?;
    }
    Ok(last)
}

/// Fresh model for `subject` with the configured architecture.
pub fn init_model(subject: &SyntheticSubject, cfg: &TrainConfig) -> Result<DeformationModel> {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    DeformationModel::new(
        cfg.deformation.clone(),
        subject.skeleton.clone(),
        subject.rest_pose().clone(),
        subject.rest_pose().expression.len(),
        &mut rng,
    )
}

/// Trains DeltaNet and LBSNet on the training poses of `subject`.
///
/// `on_epoch` sees the model after every epoch and may write checkpoints.
pub fn train_geometry_with(
    subject: &SyntheticSubject,
    cfg: &TrainConfig,
    mut on_epoch: impl FnMut(&EpochRecord, &DeformationModel) -> Result<()>,
) -> Result<(DeformationModel, TrainLog)> {
    cfg.validate()?;
    let poses: Vec<usize> = subject.training_poses().collect();
    if poses.len() < 2 {
        return Err(Error::EmptyTrainingSet);
    }
    let mut model = init_model(subject, cfg)?;
    let reg_mesh = &subject.template.mesh;
    if cfg.lbs_warm_start_steps > 0 && cfg.weights.effective(LossKind::Reg) > 0.0 {
        let full = Registration {
            positions: reg_mesh.vertices.iter().map(|v| v.cast()).collect(),
            weights: subject.template.vertex_weights.clone(),
        };
        let v = lbs_warm_start(
            &mut model,
            &full,
            cfg.lbs_warm_start_steps,
            cfg.lbs_warm_start_lr,
            cfg.reg_vertices,
            cfg.seed ^ 0x5eed_0002,
        )?;
        log::info!("skinning warm start: regularizer {v:.3e}");
    }
    let mut opt = GeometryOptimizer::new(cfg);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x5eed_0001);
    let template_sampler = MeshSampler::new(subject.template_scan())?;
    let scan_samplers = poses
        .iter()
        .map(|&p| MeshSampler::new(&subject.scans[p]))
        .collect::<Result<Vec<_>>>()?;
    let mut log = TrainLog::default();
    let mut best = f64::INFINITY;
    let start = Instant::now();
    for epoch in 0..cfg.epochs {
        let warmup = epoch < cfg.warmup_epochs;
        let mut order: Vec<usize> = (0..poses.len()).collect();
        order.shuffle(&mut rng);
        let mut acc = [0.0; 6];
        for &k in &order {
            let pose_idx = poses[k];
            let template = cloud_from_samples(subject.template_scan(), &template_sampler.draw_many(cfg.samples, rng.gen()))?;
            let posed = cloud_from_samples(&subject.scans[pose_idx], &scan_samplers[k].draw_many(cfg.samples, rng.gen()))?;
            let nv = reg_mesh.vertices.len();
            let rows = sample(&mut rng, nv, cfg.reg_vertices.min(nv)).into_vec();
            let registration = Registration {
                positions: rows.iter().map(|&i| reg_mesh.vertices[i].cast()).collect(),
                weights: subject.template.vertex_weights.select(&rows),
            };
            let step = geometry_step(
                &model,
                &template,
                &posed,
                &subject.poses[pose_idx],
                Some(&registration),
                &cfg.weights,
                &cfg.auction,
                warmup,
            )
            .map_err(|e| match e {
                Error::NonFinite(what) => Error::NonFinite(format!("epoch {epoch}, pose {pose_idx}: {what}")),
                other => other,
            })?;
            opt.apply(&mut model, &step, warmup)?;
            let v = step.values;
            for (a, b) in acc.iter_mut().zip([v.chamfer, v.emd, v.normal, v.reg, v.total, v.raw_chamfer]) {
                *a += b / order.len() as f64;
            }
        }
        best = best.min(acc[5]);
        let rec = EpochRecord {
            epoch,
            chamfer: acc[0],
            emd: acc[1],
            normal: acc[2],
            reg: acc[3],
            total: acc[4],
            raw_chamfer: acc[5],
            best_chamfer: best,
            seconds: start.elapsed().as_secs_f64(),
        };
        log::info!(
            "epoch {epoch}{}: total {:.4e} chamfer {:.3e} ({:.1}s)",
            if warmup { " (warm-up)" } else { "" },
            rec.total,
            rec.raw_chamfer,
            rec.seconds
        );
        on_epoch(&rec, &model)?;
        log.epochs.push(rec);
    }
    Ok((model, log))
}

pub fn train_geometry(subject: &SyntheticSubject, cfg: &TrainConfig) -> Result<(DeformationModel, TrainLog)> {
    train_geometry_with(subject, cfg, |_, _| Ok(()))
}

/// Point-level quality of a model on one pose.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PointMetrics {
    /// Mean of the exact distance from deformed points to the scan surface and the
    /// distance from scan samples to the nearest deformed point.
    pub chamfer: f64,
    /// Mean cosine between deformed normals and the normal of the closest scan face.
    pub normal_consistency: f64,
    /// Variance of nearest-neighbor spacing within the deformed set, over the squared mean.
    pub uniformity: f64,
}

/// Deforms template-scan samples into pose `pose_idx` and compares them with the scan.
pub fn point_metrics(model: &DeformationModel, subject: &SyntheticSubject, pose_idx: usize, n: usize, seed: u64) -> Result<PointMetrics> {
    let template = MeshSampler::new(subject.template_scan())?.sample(subject.template_scan(), n, seed)?;
    let scan = &subject.scans[pose_idx];
    let target = MeshSampler::new(scan)?.sample(scan, n, seed ^ 0xa5a5)?;
    let out = model.deform(&template, &subject.poses[pose_idx])?;
    let bvh = TriangleBvh::new(scan)?;
    let pi = KdIndex::new(out.x_d.clone());
    let mut cd = 0.0;
    let mut nc = 0.0;
    for (p, nrm) in out.x_d.iter().zip(&out.n_d) {
        let c = bvh.closest(p);
        cd += c.distance / (2.0 * n as f64);
        nc += nrm.dot(&scan.face_normal(c.face)) / n as f64;
    }
    for q in target.positions_f64() {
        cd += pi.nearest(&q).1 / (2.0 * n as f64);
    }
    let spacing: Vec<f64> = out
        .x_d
        .iter()
        .map(|p| pi.knn(p, 2).map(|r| r[1].1))
        .collect::<Result<_>>()?;
    let mean = spacing.iter().sum::<f64>() / n as f64;
    let var = spacing.iter().map(|s| (s - mean).powi(2)).sum::<f64>() / n as f64;
    Ok(PointMetrics {
        chamfer: cd,
        normal_consistency: nc,
        uniformity: var / (mean * mean),
    })
}
