//! The stages after geometry training, and a driver that runs them all.

use std::time::Instant;

use serde::{Deserialize, Serialize};

use super::avatar::Avatar;
use super::eval::{evaluate, EvalConfig, EvalReport};
use super::synthetic::SyntheticSubject;
use super::train::{train_geometry, TrainConfig, TrainLog};
use crate::appearance::{pretrain_autoencoder, train_features, ColorFrame, FeatureConfig, FeatureReport, PretrainConfig};
use crate::deformation::DeformationModel;
use crate::error::{Error, Result};
use crate::geometry::{sample_surface, TriangleMesh};
use crate::recon::reconstruct;
use crate::semantic::{align_to_template_scan, repose_semantic, sample_semantic, AlignReport, PartLabel, SemanticPointSet};

pub const HANDS: [PartLabel; 2] = [PartLabel::LeftHand, PartLabel::RightHand];

/// Samples semantic points on the labeled template and aligns them to the template scan.
pub fn transfer(subject: &SyntheticSubject, cfg: &TrainConfig) -> Result<(SemanticPointSet, AlignReport)> {
    let points = sample_semantic(&subject.template, cfg.semantic_points, cfg.seed)?;
    let target = sample_surface(subject.template_scan(), cfg.semantic_points, cfg.seed ^ 0x7a11)?;
    let align = crate::semantic::AlignConfig {
        seed: cfg.seed,
        ..cfg.align.clone()
    };
    let (points, report) = align_to_template_scan(&points, &subject.template.mesh, &target, &align)?;
    log::info!(
        "transfer: chamfer {:.3e} -> {:.3e}",
        report.initial_chamfer,
        report.final_chamfer
    );
    Ok((points, report))
}

/// Pretrains the color autoencoder on template-scan colors, then optimizes point
/// features against the colored training scans with the geometry frozen.
pub fn train_appearance(
    subject: &SyntheticSubject,
    model: &DeformationModel,
    points: &SemanticPointSet,
    cfg: &TrainConfig,
) -> Result<(crate::appearance::AppearanceModel, SemanticPointSet, FeatureReport)> {
    let scan_colors = subject.template_scan().vertex_colors.as_ref().ok_or(Error::MissingColors)?;
    let colors: Vec<[f64; 3]> = scan_colors.iter().map(|c| c.map(f64::from)).collect();
    let pre = PretrainConfig {
        spec: cfg.autoencoder.clone(),
        epochs: cfg.autoencoder_epochs,
        lr: cfg.lr_autoencoder,
        seed: cfg.seed,
        ..PretrainConfig::default()
    };
    let (appearance, history) = pretrain_autoencoder(&colors, &pre)?;
    log::info!("autoencoder: reconstruction loss {:.3e}", history.last().copied().unwrap_or(f64::NAN));
    let frames = subject
        .training_poses()
        .map(|i| {
            let posed = repose_semantic(points, model, &subject.poses[i])?;
            let scan = sample_surface(&subject.scans[i], cfg.color_samples * 4, cfg.seed ^ (i as u64) << 8)?;
            Ok(ColorFrame {
                semantic_positions: posed.positions_f64(),
                scan,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let fc = FeatureConfig {
        epochs: cfg.appearance_epochs,
        lr: cfg.lr_feature,
        k: cfg.k,
        samples_per_frame: cfg.color_samples,
        idw: cfg.idw,
        seed: cfg.seed,
    };
    let (bank, report) = train_features(&appearance, &frames, &fc)?;
    let mut points = points.clone();
    points.feature_dim = bank.dim;
    points.features = bank.values;
    Ok((appearance, points, report))
}

/// Reposes the avatar into pose `i`, meshes it and compares with the scan of that pose.
pub fn evaluate_pose(
    avatar: &Avatar,
    subject: &SyntheticSubject,
    i: usize,
    cfg: &TrainConfig,
    eval: &EvalConfig,
) -> Result<(TriangleMesh, EvalReport)> {
    let posed = avatar.repose(&subject.poses[i])?;
    let mesh = reconstruct(&posed.cloud, &cfg.recon)?;
    let report = evaluate(&mesh, &subject.scans[i], &HANDS, eval)?;
    Ok((mesh, report))
}

/// Mean of the whole-body metrics over several reports; IoU averages the present values.
pub fn mean_report(reports: &[EvalReport]) -> Option<EvalReport> {
    let n = reports.len() as f64;
    let first = reports.first()?;
    let mut all = first.all;
    all.cd = reports.iter().map(|r| r.all.cd).sum::<f64>() / n;
    all.cd_max = reports.iter().map(|r| r.all.cd_max).fold(0.0, f64::max);
    all.nc = reports.iter().map(|r| r.all.nc).sum::<f64>() / n;
    all.samples = [0, 1].map(|s| reports.iter().map(|r| r.all.samples[s]).sum());
    let ious: Vec<f64> = reports.iter().filter_map(|r| r.iou).collect();
    let hands: Vec<_> = reports.iter().filter_map(|r| r.hands).collect();
    let hands = (!hands.is_empty()).then(|| {
        let m = hands.len() as f64;
        let mut h = hands[0];
        h.cd = hands.iter().map(|r| r.cd).sum::<f64>() / m;
        h.cd_max = hands.iter().map(|r| r.cd_max).fold(0.0, f64::max);
        h.nc = hands.iter().map(|r| r.nc).sum::<f64>() / m;
        h.samples = [0, 1].map(|s| hands.iter().map(|r| r.samples[s]).sum());
        h
    });
    Some(EvalReport {
        all,
        hands,
        iou: (!ious.is_empty()).then(|| ious.iter().sum::<f64>() / ious.len() as f64),
    })
}

/// Mean reports over every held-out pose and over as many training poses, spread
/// evenly through the training range.
pub fn compare_held_out(
    avatar: &Avatar,
    subject: &SyntheticSubject,
    cfg: &TrainConfig,
    eval: &EvalConfig,
) -> Result<(EvalReport, EvalReport)> {
    let held: Vec<usize> = subject.held_out_poses().collect();
    let train = subject.training_poses();
    let m = held.len().clamp(1, train.len());
    let picks: Vec<usize> = (0..m).map(|k| train.start + (2 * k + 1) * train.len() / (2 * m)).collect();
    let run = |poses: &[usize]| -> Result<EvalReport> {
        let reports = poses
            .iter()
            .map(|&i| evaluate_pose(avatar, subject, i, cfg, eval).map(|r| r.1))
            .collect::<Result<Vec<_>>>()?;
        mean_report(&reports).ok_or(Error::EmptyTrainingSet)
    };
    Ok((run(&picks)?, run(&held)?))
}

/// Wall time of each stage, seconds.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct StageTimes {
    pub geometry: f64,
    pub transfer: f64,
    pub appearance: f64,
}

#[derive(Debug, Clone)]
pub struct PipelineOutput {
    pub avatar: Avatar,
    pub train_log: TrainLog,
    pub align: AlignReport,
    pub features: FeatureReport,
    pub times: StageTimes,
}

/// Geometry training, label transfer and appearance training on one subject.
pub fn run_pipeline(subject: &SyntheticSubject, cfg: &TrainConfig) -> Result<PipelineOutput> {
    let clock = Instant::now();
    let (model, train_log) = train_geometry(subject, cfg)?;
    let geometry = clock.elapsed().as_secs_f64();
    let (points, align) = transfer(subject, cfg)?;
    let transfer_s = clock.elapsed().as_secs_f64() - geometry;
    let (appearance, points, features) = train_appearance(subject, &model, &points, cfg)?;
    let appearance_s = clock.elapsed().as_secs_f64() - geometry - transfer_s;
    let avatar = Avatar::new(subject.template.mesh.clone(), model, Some(appearance), points)?;
    Ok(PipelineOutput {
        avatar,
        train_log,
        align,
        features,
        times: StageTimes {
            geometry,
            transfer: transfer_s,
            appearance: appearance_s,
        },
    })
}
